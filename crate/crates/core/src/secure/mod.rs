//! Supervisor layer around the negotiation: identify each agent's reported
//! allocation-to-price map from random probes, flag agents whose slope has
//! moved away from its nominal value, and answer for flagged agents with a
//! reconstruction of their truthful prices.

pub mod rls;

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::RngExt;
use rand_chacha::ChaCha8Rng;

use crate::agent::Agent;
use crate::coordinator::{self, NegotiationConfig, NegotiationResult, Responder};
use crate::error::{Error, Result};
use crate::linalg;

pub use rls::{estimation_converged, rls_init, rls_update, EstimatorState};

/// Largest condition number of an estimated slope that still allows
/// inverting the attack map.
pub const MAX_SLOPE_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectionReason {
    Clean,
    ThresholdExceeded,
    EstimationNonconvergence,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionResult {
    /// `‖P̂ − P̄‖_F`.
    pub deviation: f64,
    pub flagged: bool,
    pub reason: DetectionReason,
}

pub fn detect(
    p_hat: &DMatrix<f64>,
    p_bar: &DMatrix<f64>,
    eps_p: f64,
    converged: bool,
) -> Result<DetectionResult> {
    if p_hat.shape() != p_bar.shape() {
        return Err(Error::shape(format!(
            "estimated {:?} vs nominal {:?}",
            p_hat.shape(),
            p_bar.shape()
        )));
    }
    let deviation = (p_hat - p_bar).norm();
    let (flagged, reason) = if !converged {
        (true, DetectionReason::EstimationNonconvergence)
    } else if !(deviation <= eps_p) {
        (true, DetectionReason::ThresholdExceeded)
    } else {
        (false, DetectionReason::Clean)
    };
    Ok(DetectionResult {
        deviation,
        flagged,
        reason,
    })
}

/// `T̂⁻¹ = P̄ P̂⁻¹`.
pub fn estimate_t_inverse(p_bar: &DMatrix<f64>, p_hat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if p_hat.shape() != p_bar.shape() || !p_hat.is_square() {
        return Err(Error::shape(
            "slope matrices must be square and of equal size",
        ));
    }
    let cond = linalg::condition_number(p_hat);
    if !(cond < MAX_SLOPE_CONDITION) {
        return Err(Error::MitigationUnavailable {
            agent: usize::MAX,
            reason: format!("estimated slope is near singular (condition number {cond:e})"),
        });
    }
    let inv = p_hat
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::MitigationUnavailable {
            agent: usize::MAX,
            reason: "estimated slope is singular".into(),
        })?;
    Ok(p_bar * inv)
}

/// `λ_rec = −P̄ θ − T̂⁻¹ ŝ`; never consults the agent's live answers.
pub fn reconstruct_lambda(
    p_bar: &DMatrix<f64>,
    t_inv: &DMatrix<f64>,
    s_hat: &DVector<f64>,
    allocation: &DVector<f64>,
) -> DVector<f64> {
    -(p_bar * allocation) - t_inv * s_hat
}

/// Uniform random allocation, one independent draw per component.
pub fn probe_allocation(rng: &mut ChaCha8Rng, bounds: &[(f64, f64)]) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(bounds.len());
    for (k, &(lo, hi)) in bounds.iter().enumerate() {
        if !(lo.is_finite() && hi.is_finite()) || hi < lo {
            return Err(Error::invalid(format!("bad probe interval [{lo}, {hi}]")));
        }
        if hi == lo {
            warn!("degenerate probe interval [{lo}, {hi}] on component {k}");
            out[k] = lo;
        } else {
            out[k] = rng.random_range(lo..hi);
        }
    }
    Ok(out)
}

/// Nominal slopes `P̄_i` trusted as attack-free.
#[derive(Debug, Clone, PartialEq)]
pub struct NominalRecord {
    p_bar: Vec<DMatrix<f64>>,
}

impl NominalRecord {
    pub fn new(p_bar: Vec<DMatrix<f64>>) -> Result<Self> {
        for (i, p) in p_bar.iter().enumerate() {
            if !linalg::is_symmetric(p, 1e-9) || p.clone().cholesky().is_none() {
                return Err(Error::invalid(format!(
                    "nominal slope of agent {i} must be symmetric positive definite"
                )));
            }
        }
        Ok(Self {
            p_bar: p_bar.iter().map(linalg::symmetrize).collect(),
        })
    }

    /// Slopes computed from the agents' known models at step `k`.
    pub fn from_model(agents: &[Agent], k: usize) -> Result<Self> {
        Self::new(
            agents
                .iter()
                .map(|a| a.sensitivity(k).map(|s| s.p))
                .collect::<Result<_>>()?,
        )
    }

    pub fn p_bar(&self, agent: usize) -> &DMatrix<f64> {
        &self.p_bar[agent]
    }

    pub fn len(&self) -> usize {
        self.p_bar.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_bar.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecureConfig {
    pub phi: f64,
    pub delta: f64,
    pub eps_est: f64,
    pub min_probes: Option<usize>,
    pub probe_cap: usize,
    pub eps_p: f64,
    /// Per-component probe interval; the same for every agent.
    pub probe_bounds: Vec<(f64, f64)>,
}

impl SecureConfig {
    /// Defaults with probes drawn from `[0, ‖u_max‖∞]`.
    pub fn with_defaults(u_max_seq: &DVector<f64>) -> Self {
        let hi = u_max_seq.amax();
        Self {
            phi: 0.995,
            delta: 1e12,
            eps_est: 1e-9,
            min_probes: None,
            probe_cap: 50,
            eps_p: 1e-4,
            probe_bounds: vec![(0.0, hi); u_max_seq.len()],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_est > 0.0) || !(self.eps_p > 0.0) {
            return Err(Error::invalid("estimator tolerances must be positive"));
        }
        if self.probe_cap == 0 {
            return Err(Error::invalid("probe cap must be at least 1"));
        }
        // Let rls_init check phi and delta.
        rls_init(1, self.delta, self.phi).map(|_| ())
    }
}

/// Identification of one agent's reported map within a time step.
#[derive(Debug, Clone, PartialEq)]
pub struct Identification {
    pub p_hat: DMatrix<f64>,
    pub s_hat: DVector<f64>,
    pub probes: usize,
    pub converged: bool,
}

/// Probe one agent until the packed estimate stops moving or the cap is hit.
pub fn identify(
    agent: &Agent,
    k: usize,
    cfg: &SecureConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Identification> {
    let c = agent.coupling_len();
    if cfg.probe_bounds.len() != c {
        return Err(Error::shape(format!(
            "{} probe intervals for coupling dimension {c}",
            cfg.probe_bounds.len()
        )));
    }
    let min_probes = cfg.min_probes.unwrap_or_else(|| rls::default_min_probes(c));
    let mut est = rls_init(c, cfg.delta, cfg.phi)?;
    let mut converged = false;
    for h in 1..=cfg.probe_cap {
        let probe = probe_allocation(rng, &cfg.probe_bounds)?;
        let observed = agent.respond(k, &probe)?;
        let prev = est.eta().clone();
        est = rls_update(&est, &probe, &observed)?;
        if estimation_converged(est.eta(), &prev, cfg.eps_est, h, min_probes) {
            converged = true;
            break;
        }
    }
    Ok(Identification {
        p_hat: est.p_hat(),
        s_hat: est.s_hat(),
        probes: est.steps(),
        converged,
    })
}

/// How the coordinator treats an agent during the negotiation phase.
#[derive(Debug, Clone, PartialEq)]
pub enum Treatment {
    /// Live reported prices.
    Live,
    /// Prices rebuilt from the nominal slope and the estimated offset.
    Reconstructed {
        t_inv: DMatrix<f64>,
        s_hat: DVector<f64>,
    },
    /// Allocation pinned to the equal share; excluded from negotiation.
    Frozen,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecureOutcome {
    pub identifications: Vec<Identification>,
    pub detections: Vec<DetectionResult>,
    pub treatments: Vec<Treatment>,
    pub negotiation: NegotiationResult,
}

/// Phase 1 (detection) and phase 2 (negotiation) for one time step.
///
/// `rngs` holds one probe generator per agent. Probe allocations are only
/// questions to the agents; nothing here touches plant state.
pub fn secure_step(
    agents: &[Agent],
    k: usize,
    nominal: &NominalRecord,
    negotiation: &NegotiationConfig,
    cfg: &SecureConfig,
    rngs: &mut [ChaCha8Rng],
) -> Result<SecureOutcome> {
    let m = agents.len();
    if nominal.len() != m || rngs.len() != m {
        return Err(Error::shape(
            "need one nominal slope and one probe generator per agent",
        ));
    }
    let identifications = agents
        .iter()
        .zip(rngs.iter_mut())
        .map(|(a, rng)| identify(a, k, cfg, rng))
        .collect::<Result<Vec<_>>>()?;
    let detections = identifications
        .iter()
        .enumerate()
        .map(|(i, id)| detect(&id.p_hat, nominal.p_bar(i), cfg.eps_p, id.converged))
        .collect::<Result<Vec<_>>>()?;
    secure_negotiate(agents, k, nominal, negotiation, identifications, detections)
}

/// Phase 2 given the outcome of phase 1.
pub fn secure_negotiate(
    agents: &[Agent],
    k: usize,
    nominal: &NominalRecord,
    negotiation: &NegotiationConfig,
    identifications: Vec<Identification>,
    detections: Vec<DetectionResult>,
) -> Result<SecureOutcome> {
    let m = agents.len();
    let treatments: Vec<Treatment> = detections
        .iter()
        .zip(&identifications)
        .enumerate()
        .map(|(i, (d, id))| {
            if !d.flagged {
                return Treatment::Live;
            }
            match estimate_t_inverse(nominal.p_bar(i), &id.p_hat) {
                Ok(t_inv) => Treatment::Reconstructed { t_inv, s_hat: id.s_hat.clone() },
                Err(_) => {
                    warn!("agent {i} flagged at step {k} but its map cannot be inverted; freezing its allocation");
                    Treatment::Frozen
                }
            }
        })
        .collect();

    let share = &negotiation.u_max_seq / m as f64;
    let active: Vec<usize> = (0..m)
        .filter(|&i| treatments[i] != Treatment::Frozen)
        .collect();
    let frozen = m - active.len();

    let negotiation_result = {
        let responders: Vec<Box<dyn Responder + '_>> = active
            .iter()
            .map(|&i| -> Box<dyn Responder + '_> {
                let agent = &agents[i];
                match &treatments[i] {
                    Treatment::Reconstructed { t_inv, s_hat } => {
                        let p_bar = nominal.p_bar(i);
                        Box::new(move |t: &DVector<f64>| {
                            Ok(reconstruct_lambda(p_bar, t_inv, s_hat, t))
                        })
                    }
                    _ => Box::new(move |t: &DVector<f64>| agent.respond(k, t)),
                }
            })
            .collect();

        if active.is_empty() {
            NegotiationResult {
                theta: vec![share.clone(); m],
                lambda: vec![DVector::zeros(share.len()); m],
                iterations: 0,
                converged: true,
                diverged: false,
                residuals: Vec::new(),
            }
        } else {
            let remaining = &negotiation.u_max_seq - &share * frozen as f64;
            let sub_cfg = NegotiationConfig {
                u_max_seq: remaining.clone(),
                ..negotiation.clone()
            };
            let refs: Vec<&dyn Responder> = responders.iter().map(|b| b.as_ref()).collect();
            let sub = coordinator::negotiate(
                &refs,
                &coordinator::equal_split(&remaining, active.len()),
                &sub_cfg,
            )?;
            let mut theta = vec![share.clone(); m];
            let mut lambda = vec![DVector::from_element(share.len(), f64::NAN); m];
            for (slot, &i) in active.iter().enumerate() {
                theta[i] = sub.theta[slot].clone();
                lambda[i] = sub.lambda[slot].clone();
            }
            NegotiationResult {
                theta,
                lambda,
                ..sub
            }
        }
    };

    Ok(SecureOutcome {
        identifications,
        detections,
        treatments,
        negotiation: negotiation_result,
    })
}
