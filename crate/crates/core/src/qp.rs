//! Condensed MPC subproblems with an equality-constrained resource
//! allocation, and the affine map from allocation to dual price.
//!
//! Each agent solves
//!
//! ```text
//! minimize   ½ Uᵀ H U + fᵀ U
//! subject to Θ U = θ        (multiplier λ)
//! ```
//!
//! whose multiplier is affine in the allocation, `λ = −P θ − s` with
//! `P = (Θ H⁻¹ Θᵀ)⁻¹` and `s = P Θ H⁻¹ f`.

use nalgebra::{DMatrix, DVector, Dyn, LU};

use crate::error::{Error, Result};
use crate::linalg;
use crate::lti::DiscreteLti;

/// Relative singular-value floor below which Θ is treated as rank deficient.
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct MpcWeights {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    horizon: usize,
}

impl MpcWeights {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>, horizon: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::invalid("prediction horizon must be at least 1"));
        }
        if !linalg::is_symmetric(&q, 1e-12) || !linalg::is_symmetric(&r, 1e-12) {
            return Err(Error::invalid("weights Q and R must be symmetric"));
        }
        let q_min = linalg::symmetrize(&q).symmetric_eigenvalues().min();
        if q_min < -1e-12 * q.amax().max(1.0) {
            return Err(Error::invalid(
                "state weight Q must be positive semidefinite",
            ));
        }
        if r.clone().cholesky().is_none() {
            return Err(Error::invalid("input weight R must be positive definite"));
        }
        Ok(Self { q, r, horizon })
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }
}

/// Stacked predictions `X = M x(k) + D U`, with `X = [x(k+1); …; x(k+Np)]`.
pub fn prediction_matrices(sys: &DiscreteLti, horizon: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = sys.states();
    let m = sys.inputs();
    // powers[r] = A^r
    let mut powers = Vec::with_capacity(horizon + 1);
    powers.push(DMatrix::<f64>::identity(n, n));
    for r in 1..=horizon {
        let next = sys.a() * &powers[r - 1];
        powers.push(next);
    }
    let mut free = DMatrix::zeros(horizon * n, n);
    let mut forced = DMatrix::zeros(horizon * n, horizon * m);
    for r in 0..horizon {
        free.view_mut((r * n, 0), (n, n)).copy_from(&powers[r + 1]);
        for j in 0..=r {
            let blk = &powers[r - j] * sys.b();
            forced.view_mut((r * n, j * m), (n, m)).copy_from(&blk);
        }
    }
    (free, forced)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalQp {
    h: DMatrix<f64>,
    f: DVector<f64>,
    theta: DMatrix<f64>,
    /// `(M x − W)ᵀ Q̄ (M x − W)`: the part of the horizon cost that does not
    /// depend on `U`.
    offset: f64,
}

impl LocalQp {
    pub fn new(h: DMatrix<f64>, f: DVector<f64>, theta: DMatrix<f64>) -> Result<Self> {
        Self::with_offset(h, f, theta, 0.0)
    }

    pub fn with_offset(
        h: DMatrix<f64>,
        f: DVector<f64>,
        theta: DMatrix<f64>,
        offset: f64,
    ) -> Result<Self> {
        let cu = h.nrows();
        if !h.is_square() || cu == 0 {
            return Err(Error::shape(format!(
                "H must be square, got {:?}",
                h.shape()
            )));
        }
        if f.len() != cu || theta.ncols() != cu || theta.nrows() == 0 {
            return Err(Error::shape(format!(
                "f ({}) and Θ ({:?}) must match H ({cu}x{cu})",
                f.len(),
                theta.shape()
            )));
        }
        if !(linalg::all_finite(&h)
            && linalg::vec_finite(&f)
            && linalg::all_finite(&theta)
            && offset.is_finite())
        {
            return Err(Error::NonFinite("local QP data".into()));
        }
        if !linalg::is_symmetric(&h, 1e-10) {
            return Err(Error::invalid("H must be symmetric"));
        }
        if h.clone().cholesky().is_none() {
            return Err(Error::Singular("H is not positive definite".into()));
        }
        Ok(Self {
            h: linalg::symmetrize(&h),
            f,
            theta,
            offset,
        })
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn f(&self) -> &DVector<f64> {
        &self.f
    }

    pub fn theta(&self) -> &DMatrix<f64> {
        &self.theta
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// Number of decision variables `Np·m`.
    pub fn decision_len(&self) -> usize {
        self.h.nrows()
    }

    /// Number of coupled resource entries `c`.
    pub fn coupling_len(&self) -> usize {
        self.theta.nrows()
    }

    /// Horizon cost `Σ ‖v‖²_Q + ‖u‖²_R` for a given input sequence.
    pub fn horizon_cost(&self, u: &DVector<f64>) -> f64 {
        2.0 * self.objective(u) + self.offset
    }

    /// `½ Uᵀ H U + fᵀ U`.
    pub fn objective(&self, u: &DVector<f64>) -> f64 {
        0.5 * u.dot(&(&self.h * u)) + self.f.dot(u)
    }

    fn check_rank(&self) -> Result<()> {
        let sv = self.theta.clone().svd(false, false).singular_values;
        let max = sv.max();
        if sv.len() < self.coupling_len() || max == 0.0 || sv.min() <= RANK_TOL * max {
            return Err(Error::Singular("coupling map Θ is rank deficient".into()));
        }
        Ok(())
    }

    /// Factor the bordered KKT matrix once so repeated allocation queries
    /// only cost a back-substitution.
    pub fn factor(&self) -> Result<KktFactor> {
        if self.coupling_len() > self.decision_len() {
            return Err(Error::Singular(
                "more coupling rows than decision variables".into(),
            ));
        }
        self.check_rank()?;
        let cu = self.decision_len();
        let c = self.coupling_len();
        let mut kkt = DMatrix::zeros(cu + c, cu + c);
        kkt.view_mut((0, 0), (cu, cu)).copy_from(&self.h);
        kkt.view_mut((0, cu), (cu, c))
            .copy_from(&self.theta.transpose());
        kkt.view_mut((cu, 0), (c, cu)).copy_from(&self.theta);
        let lu = kkt.lu();
        if !lu.is_invertible() {
            return Err(Error::Singular("KKT matrix".into()));
        }
        Ok(KktFactor {
            lu,
            qp: self.clone(),
        })
    }
}

/// Factored KKT system of one [`LocalQp`].
#[derive(Debug, Clone)]
pub struct KktFactor {
    lu: LU<f64, Dyn, Dyn>,
    qp: LocalQp,
}

impl KktFactor {
    pub fn qp(&self) -> &LocalQp {
        &self.qp
    }

    pub fn solve(&self, allocation: &DVector<f64>) -> Result<LocalSolution> {
        let cu = self.qp.decision_len();
        let c = self.qp.coupling_len();
        if allocation.len() != c {
            return Err(Error::shape(format!(
                "allocation has length {}, expected {c}",
                allocation.len()
            )));
        }
        if !linalg::vec_finite(allocation) {
            return Err(Error::NonFinite("allocation".into()));
        }
        let mut rhs = DVector::zeros(cu + c);
        rhs.rows_mut(0, cu).copy_from(&(-&self.qp.f));
        rhs.rows_mut(cu, c).copy_from(allocation);
        let sol = self
            .lu
            .solve(&rhs)
            .ok_or_else(|| Error::Singular("KKT matrix".into()))?;
        let u = sol.rows(0, cu).into_owned();
        let lambda = sol.rows(cu, c).into_owned();
        let cost = self.qp.objective(&u);
        Ok(LocalSolution { u, lambda, cost })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalSolution {
    pub u: DVector<f64>,
    /// Multiplier of `Θ U = θ`; its negative is the gradient of the optimal
    /// value with respect to the allocation.
    pub lambda: DVector<f64>,
    /// `½ Uᵀ H U + fᵀ U` at the optimum.
    pub cost: f64,
}

/// Affine dual map `λ = −P θ − s`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sensitivity {
    pub p: DMatrix<f64>,
    pub s: DVector<f64>,
}

impl Sensitivity {
    pub fn dual(&self, allocation: &DVector<f64>) -> DVector<f64> {
        -(&self.p * allocation) - &self.s
    }
}

/// Build the condensed QP of one agent for the current state `x` and
/// stacked reference `w` (length `Np·n`).
pub fn condense(
    sys: &DiscreteLti,
    weights: &MpcWeights,
    gamma: &DMatrix<f64>,
    x: &DVector<f64>,
    w: &DVector<f64>,
) -> Result<LocalQp> {
    let n = sys.states();
    let m = sys.inputs();
    let np = weights.horizon();
    if weights.q().shape() != (n, n) || weights.r().shape() != (m, m) {
        return Err(Error::shape("weight dimensions do not match the model"));
    }
    if gamma.ncols() != m || gamma.nrows() == 0 {
        return Err(Error::shape(format!(
            "Γ must have {m} columns, got {:?}",
            gamma.shape()
        )));
    }
    if x.len() != n {
        return Err(Error::shape(format!(
            "state has length {}, expected {n}",
            x.len()
        )));
    }
    if w.len() != np * n {
        return Err(Error::shape(format!(
            "reference has length {}, expected {}",
            w.len(),
            np * n
        )));
    }
    let (free, forced) = prediction_matrices(sys, np);
    let q_bar = linalg::repeat_block_diag(weights.q(), np);
    let r_bar = linalg::repeat_block_diag(weights.r(), np);
    let dq = forced.transpose() * &q_bar;
    let h = &dq * &forced + r_bar;
    let err = &free * x - w;
    let f = &dq * &err;
    let offset = err.dot(&(&q_bar * &err));
    let theta = linalg::repeat_block_diag(gamma, np);
    LocalQp::with_offset(linalg::symmetrize(&h), f, theta, offset)
}

pub fn solve_local(qp: &LocalQp, allocation: &DVector<f64>) -> Result<LocalSolution> {
    qp.factor()?.solve(allocation)
}

/// `P = (Θ H⁻¹ Θᵀ)⁻¹`, `s = P Θ H⁻¹ f`.
pub fn sensitivity(qp: &LocalQp) -> Result<Sensitivity> {
    qp.check_rank()?;
    let h_inv = linalg::spd_inverse(qp.h(), "H")?;
    let th_inv = qp.theta() * &h_inv;
    let schur = &th_inv * qp.theta().transpose();
    let p = linalg::spd_inverse(&linalg::symmetrize(&schur), "Θ H⁻¹ Θᵀ")?;
    let s = &p * (&th_inv * qp.f());
    Ok(Sensitivity { p, s })
}
