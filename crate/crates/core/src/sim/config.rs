//! Scenario files.
//!
//! A scenario is a TOML document with `[scenario]`, optional `[negotiation]`
//! and `[estimator]` tables, and one `[[agent]]` table per room. Unknown keys
//! are rejected; range errors are reported with the offending line.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{de, Deserialize, Deserializer};

use crate::agent::{Agent, AttackSpec};
use crate::coordinator::{self, NegotiationConfig};
use crate::error::{Error, Result};
use crate::linalg;
use crate::lti::{self, RoomParams};
use crate::qp::MpcWeights;
use crate::secure::SecureConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Truthful agents; attacks in the file are ignored.
    Nominal,
    /// Attacks active, plain negotiation.
    Attacked,
    /// Attacks active, supervised negotiation.
    Secured,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Nominal, Mode::Attacked, Mode::Secured];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Nominal => "nominal",
            Mode::Attacked => "attacked",
            Mode::Secured => "secured",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown mode {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NominalSource {
    /// Slopes computed from the agents' models.
    Model,
    /// Slopes identified at the first step and trusted from then on.
    Calibration,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    #[serde(deserialize_with = "positive")]
    pub ts_hours: f64,
    #[serde(deserialize_with = "at_least_one")]
    pub horizon: usize,
    /// Total power shared by all rooms at every step, in watts.
    #[serde(deserialize_with = "positive")]
    pub u_max: f64,
    #[serde(deserialize_with = "at_least_one")]
    pub steps: usize,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NegotiationSection {
    /// Fixed step size; derived from the sensitivities when absent.
    #[serde(default, deserialize_with = "optional_positive")]
    pub rho: Option<f64>,
    #[serde(default = "default_rho_factor", deserialize_with = "positive")]
    pub rho_factor: f64,
    #[serde(default = "default_eps", deserialize_with = "positive")]
    pub eps: f64,
    #[serde(default = "default_max_iters", deserialize_with = "at_least_one")]
    pub max_iters: usize,
}

impl Default for NegotiationSection {
    fn default() -> Self {
        Self {
            rho: None,
            rho_factor: default_rho_factor(),
            eps: default_eps(),
            max_iters: default_max_iters(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorSection {
    #[serde(default = "default_phi", deserialize_with = "unit_interval")]
    pub phi: f64,
    #[serde(default = "default_delta", deserialize_with = "positive")]
    pub delta: f64,
    #[serde(default = "default_eps_est", deserialize_with = "positive")]
    pub eps_est: f64,
    #[serde(default)]
    pub min_probes: Option<usize>,
    #[serde(default = "default_probe_cap", deserialize_with = "at_least_one")]
    pub probe_cap: usize,
    #[serde(default = "default_eps_p", deserialize_with = "positive")]
    pub eps_p: f64,
    /// Probe interval; defaults to `[0, u_max]`.
    #[serde(default)]
    pub probe_low: Option<f64>,
    #[serde(default)]
    pub probe_high: Option<f64>,
    #[serde(default = "default_nominal_source")]
    pub nominal_source: NominalSource,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        Self {
            phi: default_phi(),
            delta: default_delta(),
            eps_est: default_eps_est(),
            min_probes: None,
            probe_cap: default_probe_cap(),
            eps_p: default_eps_p(),
            probe_low: None,
            probe_high: None,
            nominal_source: default_nominal_source(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    /// `T = gain · I`.
    #[serde(default)]
    pub gain: Option<f64>,
    /// Full `T`, row by row.
    #[serde(default)]
    pub matrix: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub start_step: usize,
    #[serde(default)]
    pub end_step: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub name: String,
    pub room: RoomParams,
    /// Diagonal of the state weight, `[air, wall]`.
    #[serde(default = "default_q")]
    pub q: [f64; 2],
    #[serde(default = "default_r")]
    pub r: f64,
    /// Air temperature set point.
    #[serde(default = "default_reference")]
    pub reference: f64,
    #[serde(default = "default_x0")]
    pub x0: [f64; 2],
    #[serde(default)]
    pub attack: Option<AttackConfig>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub negotiation: NegotiationSection,
    #[serde(default)]
    pub estimator: EstimatorSection,
    #[serde(rename = "agent")]
    pub agents: Vec<AgentConfig>,
}

fn default_mode() -> Mode {
    Mode::Nominal
}
fn default_rho_factor() -> f64 {
    0.9
}
fn default_eps() -> f64 {
    1e-6
}
fn default_max_iters() -> usize {
    200_000
}
fn default_phi() -> f64 {
    0.995
}
fn default_delta() -> f64 {
    1e12
}
fn default_eps_est() -> f64 {
    1e-9
}
fn default_probe_cap() -> usize {
    50
}
fn default_eps_p() -> f64 {
    1e-4
}
fn default_nominal_source() -> NominalSource {
    NominalSource::Calibration
}
fn default_q() -> [f64; 2] {
    [10.0, 0.0]
}
fn default_r() -> f64 {
    1e-6
}
fn default_reference() -> f64 {
    20.0
}
fn default_x0() -> [f64; 2] {
    [15.0, 15.0]
}

fn positive<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    let v = f64::deserialize(d)?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(de::Error::custom(format!(
            "must be positive and finite, got {v}"
        )))
    }
}

fn optional_positive<'de, D: Deserializer<'de>>(
    d: D,
) -> std::result::Result<Option<f64>, D::Error> {
    positive(d).map(Some)
}

fn unit_interval<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    let v = f64::deserialize(d)?;
    if v > 0.0 && v <= 1.0 {
        Ok(v)
    } else {
        Err(de::Error::custom(format!("must lie in (0, 1], got {v}")))
    }
}

fn at_least_one<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<usize, D::Error> {
    let v = usize::deserialize(d)?;
    if v >= 1 {
        Ok(v)
    } else {
        Err(de::Error::custom("must be at least 1"))
    }
}

/// Read, parse and validate a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_scenario(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_scenario(text: &str) -> Result<ScenarioConfig> {
    let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.agents.is_empty() {
            return Err(Error::Config("at least one [[agent]] is required".into()));
        }
        for (i, a) in self.agents.iter().enumerate() {
            let ctx =
                |msg: String| Error::Config(format!("[[agent]] #{} ({:?}): {msg}", i + 1, a.name));
            if self.agents[..i].iter().any(|b| b.name == a.name) {
                return Err(ctx("duplicate name".into()));
            }
            a.room.validate().map_err(|e| ctx(e.to_string()))?;
            if a.q.iter().any(|q| !(q.is_finite() && *q >= 0.0)) {
                return Err(ctx(format!("q must be non-negative, got {:?}", a.q)));
            }
            if !(a.r > 0.0 && a.r.is_finite()) {
                return Err(ctx(format!("r must be positive, got {}", a.r)));
            }
            if !a.reference.is_finite() || a.x0.iter().any(|x| !x.is_finite()) {
                return Err(ctx("reference and x0 must be finite".into()));
            }
            if let Some(att) = &a.attack {
                self.attack_spec(att)
                    .map_err(|e| ctx(format!("attack: {e}")))?;
            }
        }
        let (lo, hi) = self.probe_interval();
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Config(format!(
                "estimator: probe interval [{lo}, {hi}] must be non-empty"
            )));
        }
        self.secure_config()
            .validate()
            .map_err(|e| Error::Config(format!("estimator: {e}")))?;
        Ok(())
    }

    pub fn agent_count(&self) -> usize {
        self.agents.len()
    }

    pub fn names(&self) -> Vec<String> {
        self.agents.iter().map(|a| a.name.clone()).collect()
    }

    /// Coupling dimension: one scalar input per room over the horizon.
    pub fn coupling_len(&self) -> usize {
        self.scenario.horizon
    }

    pub fn u_max_seq(&self) -> DVector<f64> {
        DVector::from_element(self.coupling_len(), self.scenario.u_max)
    }

    /// Stacked air/wall reference for one agent.
    pub fn reference_state(&self, agent: usize) -> DVector<f64> {
        DVector::from_element(2, self.agents[agent].reference)
    }

    pub fn attack_spec(&self, att: &AttackConfig) -> Result<AttackSpec> {
        let c = self.coupling_len();
        match (att.gain, &att.matrix) {
            (Some(g), None) => AttackSpec::scaled(c, g, att.start_step, att.end_step),
            (None, Some(rows)) => {
                if rows.len() != c || rows.iter().any(|r| r.len() != c) {
                    return Err(Error::invalid(format!("matrix must be {c}x{c}")));
                }
                let t = DMatrix::from_fn(c, c, |i, j| rows[i][j]);
                AttackSpec::new(t, att.start_step, att.end_step)
            }
            _ => Err(Error::invalid("give exactly one of `gain` and `matrix`")),
        }
    }

    /// Build the agents at their initial states, with attacks attached only
    /// when `with_attacks` is set.
    pub fn build_agents(&self, with_attacks: bool) -> Result<Vec<Agent>> {
        let np = self.scenario.horizon;
        self.agents
            .iter()
            .map(|a| {
                let sys = lti::zoh_discretize(&lti::build_3r2c(&a.room)?, self.scenario.ts_hours)?;
                let weights = MpcWeights::new(
                    DMatrix::from_diagonal(&DVector::from_column_slice(&a.q)),
                    DMatrix::from_element(1, 1, a.r),
                    np,
                )?;
                let reference = linalg::repeat_vector(&DVector::from_element(2, a.reference), np);
                let agent = Agent::new(
                    sys,
                    weights,
                    DMatrix::identity(1, 1),
                    DVector::from_column_slice(&a.x0),
                    reference,
                )?;
                match (&a.attack, with_attacks) {
                    (Some(att), true) => agent.with_attack(self.attack_spec(att)?),
                    _ => Ok(agent),
                }
            })
            .collect()
    }

    /// Negotiation settings; the step size is derived from the truthful
    /// sensitivities of `agents` at step `k` unless fixed in the file.
    pub fn negotiation_config(&self, agents: &[Agent], k: usize) -> Result<NegotiationConfig> {
        let n = &self.negotiation;
        let rho = match n.rho {
            Some(rho) => rho,
            None => {
                let ps = agents
                    .iter()
                    .map(|a| a.sensitivity(k).map(|s| s.p))
                    .collect::<Result<Vec<_>>>()?;
                coordinator::auto_step_size(&ps, n.rho_factor)?
            }
        };
        NegotiationConfig::new(rho, n.eps, n.max_iters, self.u_max_seq())
    }

    pub fn probe_interval(&self) -> (f64, f64) {
        let e = &self.estimator;
        (
            e.probe_low.unwrap_or(0.0),
            e.probe_high.unwrap_or(self.scenario.u_max),
        )
    }

    pub fn secure_config(&self) -> SecureConfig {
        let e = &self.estimator;
        SecureConfig {
            phi: e.phi,
            delta: e.delta,
            eps_est: e.eps_est,
            min_probes: e.min_probes,
            probe_cap: e.probe_cap,
            eps_p: e.eps_p,
            probe_bounds: vec![self.probe_interval(); self.coupling_len()],
        }
    }
}
