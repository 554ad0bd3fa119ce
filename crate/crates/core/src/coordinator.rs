//! Projected-subgradient negotiation of a shared resource.
//!
//! The coordinator owns the allocations `θ_i` and repeatedly moves each one
//! along its agent's deviation from the mean dual price,
//! `θ_i ← θ_i + ρ (λ_i − λ̄)`, which keeps `Σ θ_i` fixed. A fixed point is
//! reached when every agent reports the same price.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::qp::{self, LocalQp};

/// Iterates whose norm exceeds this multiple of `‖u_max‖` are treated as
/// divergent.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

/// Something that maps an allocation to reported dual prices.
pub trait Responder {
    fn respond(&self, allocation: &DVector<f64>) -> Result<DVector<f64>>;
}

impl<F> Responder for F
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    fn respond(&self, allocation: &DVector<f64>) -> Result<DVector<f64>> {
        self(allocation)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NegotiationConfig {
    pub rho: f64,
    pub eps: f64,
    pub max_iters: usize,
    pub u_max_seq: DVector<f64>,
}

impl NegotiationConfig {
    pub fn new(rho: f64, eps: f64, max_iters: usize, u_max_seq: DVector<f64>) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::invalid(format!(
                "step size must be positive, got {rho}"
            )));
        }
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::invalid(format!(
                "tolerance must be positive, got {eps}"
            )));
        }
        if max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        if u_max_seq.is_empty() || !linalg::vec_finite(&u_max_seq) {
            return Err(Error::invalid(
                "resource sequence must be non-empty and finite",
            ));
        }
        Ok(Self {
            rho,
            eps,
            max_iters,
            u_max_seq,
        })
    }

    pub fn coupling_len(&self) -> usize {
        self.u_max_seq.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationState {
    pub theta: Vec<DVector<f64>>,
    pub lambda: Vec<DVector<f64>>,
    pub iteration: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NegotiationResult {
    pub theta: Vec<DVector<f64>>,
    /// Prices reported at the final allocation.
    pub lambda: Vec<DVector<f64>>,
    pub iterations: usize,
    pub converged: bool,
    pub diverged: bool,
    /// `‖θ^(p) − θ^(p−1)‖` for every completed update.
    pub residuals: Vec<f64>,
}

/// Equal split of the resource sequence over `m` agents.
pub fn equal_split(u_max_seq: &DVector<f64>, m: usize) -> Vec<DVector<f64>> {
    vec![u_max_seq / m as f64; m]
}

fn mean(vs: &[DVector<f64>]) -> DVector<f64> {
    let mut acc = DVector::zeros(vs[0].len());
    for v in vs {
        acc += v;
    }
    acc / vs.len() as f64
}

fn stacked_norm(vs: &[DVector<f64>]) -> f64 {
    vs.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt()
}

/// Euclidean projection onto `{θ : Σ θ_i = u_max}`.
pub fn project_feasible(theta: &[DVector<f64>], u_max_seq: &DVector<f64>) -> Vec<DVector<f64>> {
    if theta.is_empty() {
        return Vec::new();
    }
    let m = theta.len() as f64;
    let mut excess = -u_max_seq.clone();
    for t in theta {
        excess += t;
    }
    let shift = excess / m;
    theta.iter().map(|t| t - &shift).collect()
}

/// One projected-subgradient step: `θ_i ← θ_i + ρ (λ_i − λ̄)`.
pub fn update_allocations(state: &AllocationState, rho: f64) -> Result<AllocationState> {
    if state.theta.len() != state.lambda.len() || state.theta.is_empty() {
        return Err(Error::shape("need one price vector per allocation"));
    }
    if state.lambda.iter().any(|l| !linalg::vec_finite(l)) {
        return Err(Error::Diverged {
            iteration: state.iteration,
        });
    }
    let avg = mean(&state.lambda);
    let theta = state
        .theta
        .iter()
        .zip(&state.lambda)
        .map(|(t, l)| t + (l - &avg) * rho)
        .collect();
    Ok(AllocationState {
        theta,
        lambda: state.lambda.clone(),
        iteration: state.iteration + 1,
    })
}

fn query_all<R: Responder + ?Sized>(
    responders: &[&R],
    theta: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>> {
    responders
        .iter()
        .zip(theta)
        .map(|(r, t)| r.respond(t))
        .collect()
}

/// Run the negotiation from `theta0` until `‖θ^(p) − θ^(p−1)‖ ≤ eps`, the
/// iteration cap, or divergence. An infeasible start is projected first.
pub fn negotiate<R: Responder + ?Sized>(
    responders: &[&R],
    theta0: &[DVector<f64>],
    cfg: &NegotiationConfig,
) -> Result<NegotiationResult> {
    let m = responders.len();
    if m == 0 || theta0.len() != m {
        return Err(Error::shape(format!(
            "{m} responders but {} initial allocations",
            theta0.len()
        )));
    }
    let c = cfg.coupling_len();
    if theta0.iter().any(|t| t.len() != c) {
        return Err(Error::shape(format!(
            "initial allocations must have length {c}"
        )));
    }
    let bound = DIVERGENCE_FACTOR * cfg.u_max_seq.norm().max(1.0);

    let mut state = AllocationState {
        theta: project_feasible(theta0, &cfg.u_max_seq),
        lambda: Vec::new(),
        iteration: 0,
    };
    let mut residuals = Vec::new();
    let mut converged = false;
    let mut diverged = false;

    while state.iteration < cfg.max_iters {
        state.lambda = query_all(responders, &state.theta)?;
        let next = match update_allocations(&state, cfg.rho) {
            Ok(next) => next,
            Err(Error::Diverged { .. }) => {
                diverged = true;
                break;
            }
            Err(e) => return Err(e),
        };
        let residual = stacked_norm(
            &next
                .theta
                .iter()
                .zip(&state.theta)
                .map(|(a, b)| a - b)
                .collect::<Vec<_>>(),
        );
        residuals.push(residual);
        state = next;
        if !residual.is_finite() || stacked_norm(&state.theta) > bound {
            diverged = true;
            break;
        }
        if residual <= cfg.eps {
            converged = true;
            break;
        }
    }

    let lambda = if diverged {
        state.lambda
    } else {
        query_all(responders, &state.theta)?
    };
    Ok(NegotiationResult {
        theta: state.theta,
        lambda,
        iterations: state.iteration,
        converged,
        diverged,
        residuals,
    })
}

/// Jointly optimal allocation of the coupled problem.
#[derive(Debug, Clone, PartialEq)]
pub struct CentralizedSolution {
    pub theta: Vec<DVector<f64>>,
    /// Shared dual price.
    pub lambda: DVector<f64>,
    /// Per-agent `½ Uᵀ H U + fᵀ U` at the optimum.
    pub costs: Vec<f64>,
    /// Sum of `costs`.
    pub cost: f64,
}

/// Closed-form optimum: `λ* = −(Σ P_i⁻¹)⁻¹ (u_max + Σ Θ_i H_i⁻¹ f_i)` and
/// `θ_i* = −P_i⁻¹ (λ* + s_i)`.
pub fn centralized_oracle(
    qps: &[LocalQp],
    u_max_seq: &DVector<f64>,
) -> Result<CentralizedSolution> {
    if qps.is_empty() {
        return Err(Error::shape("no subproblems"));
    }
    let c = u_max_seq.len();
    let mut agg = DMatrix::zeros(c, c);
    let mut rhs = u_max_seq.clone();
    let mut inverses = Vec::with_capacity(qps.len());
    for q in qps {
        if q.coupling_len() != c {
            return Err(Error::shape("coupling dimensions differ"));
        }
        let sens = qp::sensitivity(q)?;
        let p_inv = linalg::spd_inverse(&sens.p, "P")?;
        rhs += &p_inv * &sens.s;
        agg += &p_inv;
        inverses.push((p_inv, sens.s));
    }
    let agg_inv = linalg::spd_inverse(&linalg::symmetrize(&agg), "Σ P_i⁻¹")?;
    let lambda = -(&agg_inv * rhs);

    let mut theta: Vec<DVector<f64>> = inverses
        .iter()
        .map(|(p_inv, s)| -(p_inv * (&lambda + s)))
        .collect();
    // Put the rounding residue of the sum back on the equality.
    theta = project_feasible(&theta, u_max_seq);

    let mut costs = Vec::with_capacity(qps.len());
    for (q, t) in qps.iter().zip(&theta) {
        costs.push(qp::solve_local(q, t)?.cost);
    }
    let cost = costs.iter().sum();
    Ok(CentralizedSolution {
        theta,
        lambda,
        costs,
        cost,
    })
}

/// Modulus of the dominant eigenvalue of the linearized negotiation map
/// `δθ ↦ (I − ρ (I − Avg) blockdiag(P_i)) δθ`, restricted to the subspace
/// `Σ δθ_i = 0` that the iteration evolves in. Values below one predict
/// convergence.
pub fn iteration_spectral_radius(effective_p: &[DMatrix<f64>], rho: f64) -> f64 {
    let m = effective_p.len();
    if m < 2 {
        return 0.0;
    }
    let c = effective_p[0].nrows();
    let basis = linalg::zero_sum_basis(m, c);
    // On the subspace (I − Avg) acts as the identity, so Zᵀ G Z = I − ρ Zᵀ D Z.
    let d = linalg::block_diag(effective_p);
    let dim = basis.ncols();
    let reduced = DMatrix::<f64>::identity(dim, dim) - basis.transpose() * d * &basis * rho;
    linalg::spectral_radius(&reduced)
}

/// `ρ = factor / max_i λ_max(P_i)`.
pub fn auto_step_size(ps: &[DMatrix<f64>], factor: f64) -> Result<f64> {
    let lmax = ps
        .iter()
        .map(linalg::sym_max_eigenvalue)
        .fold(0.0, f64::max);
    if !(lmax > 0.0 && lmax.is_finite()) {
        return Err(Error::invalid(
            "cannot derive a step size from non-positive sensitivities",
        ));
    }
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::invalid(format!(
            "step-size factor must be positive, got {factor}"
        )));
    }
    Ok(factor / lmax)
}
