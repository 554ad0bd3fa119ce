//! Closed-loop receding-horizon simulation of the multi-room building, cost
//! accounting, and the attack-gain sweep.

pub mod config;
pub mod output;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agent::{Agent, AttackSpec};
use crate::coordinator::{self, CentralizedSolution, NegotiationResult, Responder};
use crate::error::{Error, Result};
use crate::secure::{self, DetectionResult, NominalRecord};

pub use config::{load_scenario, parse_scenario, Mode, NominalSource, ScenarioConfig};
pub use output::{format_float, write_outputs, write_sweep};

/// What happened at one control step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    /// Applied inputs `u_i(k)`.
    pub inputs: Vec<DVector<f64>>,
    /// States after applying the inputs, `x_i(k+1)`.
    pub states: Vec<DVector<f64>>,
    /// `y_i(k+1)`.
    pub outputs: Vec<DVector<f64>>,
    /// Allocations the agents acted on.
    pub theta: Vec<DVector<f64>>,
    /// Prices returned by the negotiation.
    pub lambda: Vec<DVector<f64>>,
    /// Present in secured runs only.
    pub detections: Option<Vec<DetectionResult>>,
    pub iterations: usize,
    pub converged: bool,
    pub diverged: bool,
    pub stage_costs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub mode: Mode,
    pub names: Vec<String>,
    pub rho: f64,
    pub initial_states: Vec<DVector<f64>>,
    pub steps: Vec<StepRecord>,
}

impl SimTrace {
    pub fn any_diverged(&self) -> bool {
        self.steps.iter().any(|s| s.diverged)
    }

    /// Air temperature of agent `agent` after each step.
    pub fn output_series(&self, agent: usize) -> Vec<f64> {
        self.steps.iter().map(|s| s.outputs[agent][0]).collect()
    }
}

/// Accumulated realized costs.
#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub names: Vec<String>,
    pub per_agent: Vec<f64>,
    pub global: f64,
}

/// `‖w − x‖²_Q + ‖u‖²_R` with diagonal `Q` and scalar `R`.
pub fn stage_cost(
    q: &[f64; 2],
    r: f64,
    w: &DVector<f64>,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> f64 {
    let e = w - x;
    q[0] * e[0] * e[0] + q[1] * e[1] * e[1] + r * u.norm_squared()
}

/// One probe generator per agent: a common seed, the agent index as stream.
pub fn probe_rngs(seed: u64, agents: usize) -> Vec<ChaCha8Rng> {
    (0..agents)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            rng
        })
        .collect()
}

fn live_negotiation(
    agents: &[Agent],
    k: usize,
    cfg: &coordinator::NegotiationConfig,
) -> Result<NegotiationResult> {
    let responders: Vec<_> = agents
        .iter()
        .map(|a| move |t: &DVector<f64>| a.respond(k, t))
        .collect();
    let refs: Vec<&dyn Responder> = responders.iter().map(|r| r as &dyn Responder).collect();
    coordinator::negotiate(
        &refs,
        &coordinator::equal_split(&cfg.u_max_seq, agents.len()),
        cfg,
    )
}

/// Run the closed loop for `cfg.scenario.steps` steps in `cfg.scenario.mode`.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<SimTrace> {
    let mode = cfg.scenario.mode;
    let m = cfg.agent_count();
    let mut agents = cfg.build_agents(mode != Mode::Nominal)?;
    for a in &mut agents {
        a.condense(0)?;
    }
    let negotiation = cfg.negotiation_config(&agents, 0)?;
    let secure_cfg = cfg.secure_config();
    let mut rngs = probe_rngs(cfg.scenario.seed, m);
    let mut nominal = match (mode, cfg.estimator.nominal_source) {
        (Mode::Secured, NominalSource::Model) => Some(NominalRecord::from_model(&agents, 0)?),
        _ => None,
    };
    if mode == Mode::Secured && nominal.is_none() {
        for (a, c) in agents.iter().zip(&cfg.agents) {
            if a.attack().is_some_and(|t| t.is_active(0)) {
                warn!("agent {:?} is already attacking during calibration", c.name);
            }
        }
    }

    let initial_states = agents.iter().map(|a| a.state().clone()).collect();
    let mut fallback = coordinator::equal_split(&negotiation.u_max_seq, m);
    let mut steps = Vec::with_capacity(cfg.scenario.steps);

    for k in 0..cfg.scenario.steps {
        if k > 0 {
            for a in &mut agents {
                a.condense(k)?;
            }
        }
        let (result, detections) = if mode == Mode::Secured {
            let ids = agents
                .iter()
                .zip(rngs.iter_mut())
                .map(|(a, rng)| secure::identify(a, k, &secure_cfg, rng))
                .collect::<Result<Vec<_>>>()?;
            let record = match nominal.take() {
                Some(r) => r,
                None => NominalRecord::new(ids.iter().map(|id| id.p_hat.clone()).collect())?,
            };
            let dets = ids
                .iter()
                .enumerate()
                .map(|(i, id)| {
                    secure::detect(&id.p_hat, record.p_bar(i), secure_cfg.eps_p, id.converged)
                })
                .collect::<Result<Vec<_>>>()?;
            let out = secure::secure_negotiate(&agents, k, &record, &negotiation, ids, dets)?;
            nominal = Some(record);
            (out.negotiation, Some(out.detections))
        } else {
            (live_negotiation(&agents, k, &negotiation)?, None)
        };

        let theta = if result.diverged {
            warn!("negotiation diverged at step {k}; reusing the previous allocation");
            fallback.clone()
        } else {
            if !result.converged {
                warn!("negotiation hit the iteration cap at step {k}");
            }
            result.theta.clone()
        };

        let mut inputs = Vec::with_capacity(m);
        let mut states = Vec::with_capacity(m);
        let mut outputs = Vec::with_capacity(m);
        let mut stage_costs = Vec::with_capacity(m);
        for (i, a) in agents.iter_mut().enumerate() {
            let sol = a.solve(k, &theta[i])?;
            let u = a.commit_input(&sol.u)?;
            let x = a.state().clone();
            let ac = &cfg.agents[i];
            stage_costs.push(stage_cost(&ac.q, ac.r, &cfg.reference_state(i), &x, &u));
            outputs.push(a.system().output(&x));
            states.push(x);
            inputs.push(u);
        }
        fallback = theta.clone();
        steps.push(StepRecord {
            k,
            inputs,
            states,
            outputs,
            theta,
            lambda: result.lambda,
            detections,
            iterations: result.iterations,
            converged: result.converged,
            diverged: result.diverged,
            stage_costs,
        });
    }

    Ok(SimTrace {
        mode,
        names: cfg.names(),
        rho: negotiation.rho,
        initial_states,
        steps,
    })
}

/// `run_scenario` with the mode replaced.
pub fn run_in_mode(cfg: &ScenarioConfig, mode: Mode) -> Result<SimTrace> {
    let mut cfg = cfg.clone();
    cfg.scenario.mode = mode;
    run_scenario(&cfg)
}

/// `J_i = Σ_k ‖w_i − x_i(k+1)‖²_Q + ‖u_i(k)‖²_R` over the realized run.
pub fn accumulate_costs(trace: &SimTrace, cfg: &ScenarioConfig) -> Result<CostReport> {
    let m = cfg.agent_count();
    if trace.names.len() != m {
        return Err(Error::shape(format!(
            "trace has {} agents, config {m}",
            trace.names.len()
        )));
    }
    let mut per_agent = vec![0.0; m];
    for step in &trace.steps {
        for (i, j) in per_agent.iter_mut().enumerate() {
            let ac = &cfg.agents[i];
            *j += stage_cost(
                &ac.q,
                ac.r,
                &cfg.reference_state(i),
                &step.states[i],
                &step.inputs[i],
            );
        }
    }
    let global = per_agent.iter().sum();
    Ok(CostReport {
        names: trace.names.clone(),
        per_agent,
        global,
    })
}

/// Evenly spaced gains from `min` to `max` inclusive.
pub fn tau_grid(min: f64, max: f64, steps: usize) -> Result<Vec<f64>> {
    if !(min > 0.0 && max >= min && max.is_finite()) || steps == 0 {
        return Err(Error::invalid(format!(
            "need 0 < tau-min <= tau-max and at least one point, got [{min}, {max}] x {steps}"
        )));
    }
    if steps == 1 {
        return Ok(vec![min]);
    }
    let h = (max - min) / (steps - 1) as f64;
    Ok((0..steps)
        .map(|i| {
            if i + 1 == steps {
                max
            } else {
                min + h * i as f64
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub tau: f64,
    /// Horizon costs of every agent at the negotiated allocation.
    pub costs: Vec<f64>,
    pub global: f64,
    pub converged: bool,
    pub diverged: bool,
    pub iterations: usize,
    /// Predicted from the linearized iteration.
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub names: Vec<String>,
    pub attacker: usize,
    pub rho: f64,
    pub points: Vec<SweepPoint>,
}

/// Single negotiations at the initial state with the first agent reporting
/// `τ·λ`. The step size is fixed from the truthful sensitivities.
pub fn tau_sweep(cfg: &ScenarioConfig, taus: &[f64]) -> Result<SweepReport> {
    const K: usize = 0;
    const ATTACKER: usize = 0;
    if let Some(t) = taus.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
        return Err(Error::invalid(format!(
            "sweep gains must be positive, got {t}"
        )));
    }
    let mut agents = cfg.build_agents(false)?;
    for a in &mut agents {
        a.condense(K)?;
    }
    let negotiation = cfg.negotiation_config(&agents, K)?;
    let ps: Vec<DMatrix<f64>> = agents
        .iter()
        .map(|a| a.sensitivity(K).map(|s| s.p))
        .collect::<Result<_>>()?;
    let c = cfg.coupling_len();

    let mut points = Vec::with_capacity(taus.len());
    for &tau in taus {
        agents[ATTACKER].set_attack(Some(AttackSpec::scaled(c, tau, K, None)?))?;
        let result = live_negotiation(&agents, K, &negotiation)?;
        let mut effective = ps.clone();
        effective[ATTACKER] *= tau;
        let radius = coordinator::iteration_spectral_radius(&effective, negotiation.rho);
        let costs = agents
            .iter()
            .zip(&result.theta)
            .map(|(a, t)| {
                if !crate::linalg::vec_finite(t) {
                    return Ok(f64::NAN);
                }
                let sol = a.solve(K, t)?;
                Ok(a.local_qp(K)?.horizon_cost(&sol.u))
            })
            .collect::<Result<Vec<f64>>>()?;
        points.push(SweepPoint {
            tau,
            global: costs.iter().sum(),
            costs,
            converged: result.converged,
            diverged: result.diverged,
            iterations: result.iterations,
            radius,
        });
    }
    Ok(SweepReport {
        names: cfg.names(),
        attacker: ATTACKER,
        rho: negotiation.rho,
        points,
    })
}

/// Centralized optimum of every step along the closed loop driven by it,
/// with truthful agents.
pub fn oracle_run(cfg: &ScenarioConfig) -> Result<Vec<CentralizedSolution>> {
    let mut agents = cfg.build_agents(false)?;
    let u_max = cfg.u_max_seq();
    let mut out = Vec::with_capacity(cfg.scenario.steps);
    for k in 0..cfg.scenario.steps {
        let qps = agents
            .iter_mut()
            .map(|a| a.condense(k).cloned())
            .collect::<Result<Vec<_>>>()?;
        let sol = coordinator::centralized_oracle(&qps, &u_max)?;
        for (a, t) in agents.iter_mut().zip(&sol.theta) {
            let u = a.solve(k, t)?.u;
            a.commit_input(&u)?;
        }
        out.push(sol);
    }
    Ok(out)
}
