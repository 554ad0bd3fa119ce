//! Recursive least squares with exponential forgetting for the affine dual
//! map `λ = −P θ − s` with symmetric `P`.
//!
//! The parameter vector packs the upper triangle of `P` row by row followed
//! by `s`. The recursion is carried in square-root information form: an
//! upper-triangular `R` with `RᵀR = cov⁻¹` and `R η = z`. Each scalar
//! observation scales `(R, z)` by `√φ` and is folded in with Givens
//! rotations, which gives the same estimates as the covariance recursion
//! started from `cov = δ I` while staying accurate for very large `δ`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Number of packed parameters for coupling dimension `c`.
pub fn parameter_len(c: usize) -> usize {
    c * (c + 1) / 2 + c
}

/// Index of `P[(i, j)]` (`i ≤ j`) in the packed vector.
fn packed_index(c: usize, i: usize, j: usize) -> usize {
    debug_assert!(i <= j && j < c);
    i * c - i * (i.saturating_sub(1)) / 2 + (j - i)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    c: usize,
    eta: DVector<f64>,
    sqrt_info: DMatrix<f64>,
    z: DVector<f64>,
    phi: f64,
    steps: usize,
}

/// Fresh estimator: `η = 0`, `cov = δ I`.
pub fn rls_init(c: usize, delta: f64, phi: f64) -> Result<EstimatorState> {
    if c == 0 {
        return Err(Error::invalid("coupling dimension must be positive"));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::invalid(format!(
            "initial covariance scale must be positive, got {delta}"
        )));
    }
    if !(phi > 0.0 && phi <= 1.0) {
        return Err(Error::invalid(format!(
            "forgetting factor must lie in (0, 1], got {phi}"
        )));
    }
    let n = parameter_len(c);
    Ok(EstimatorState {
        c,
        eta: DVector::zeros(n),
        sqrt_info: DMatrix::identity(n, n) / delta.sqrt(),
        z: DVector::zeros(n),
        phi,
        steps: 0,
    })
}

impl EstimatorState {
    pub fn coupling_len(&self) -> usize {
        self.c
    }

    pub fn eta(&self) -> &DVector<f64> {
        &self.eta
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    /// Number of probes processed.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Parameter covariance `(RᵀR)⁻¹`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let n = self.eta.len();
        let r_inv = self
            .sqrt_info
            .clone()
            .solve_upper_triangular(&DMatrix::identity(n, n))
            .expect("information factor has a positive diagonal");
        linalg::symmetrize(&(&r_inv * r_inv.transpose()))
    }

    /// Current estimate of the symmetric slope matrix.
    pub fn p_hat(&self) -> DMatrix<f64> {
        let c = self.c;
        let mut p = DMatrix::zeros(c, c);
        for i in 0..c {
            for j in i..c {
                let v = self.eta[packed_index(c, i, j)];
                p[(i, j)] = v;
                p[(j, i)] = v;
            }
        }
        p
    }

    /// Current estimate of the offset.
    pub fn s_hat(&self) -> DVector<f64> {
        let off = self.c * (self.c + 1) / 2;
        self.eta.rows(off, self.c).into_owned()
    }

    /// Regressor of observation row `row`: `λ_row = gᵀ η`.
    fn regressor(&self, allocation: &DVector<f64>, row: usize) -> DVector<f64> {
        let c = self.c;
        let mut g = DVector::zeros(self.eta.len());
        for j in 0..c {
            let (lo, hi) = if row <= j { (row, j) } else { (j, row) };
            g[packed_index(c, lo, hi)] = -allocation[j];
        }
        g[c * (c + 1) / 2 + row] = -1.0;
        g
    }

    fn absorb(&mut self, mut g: DVector<f64>, mut y: f64) {
        let n = g.len();
        let scale = self.phi.sqrt();
        self.sqrt_info *= scale;
        self.z *= scale;
        for i in 0..n {
            let a = self.sqrt_info[(i, i)];
            let b = g[i];
            if b == 0.0 {
                continue;
            }
            let r = a.hypot(b);
            let (cs, sn) = (a / r, b / r);
            for j in i..n {
                let rij = self.sqrt_info[(i, j)];
                let gj = g[j];
                self.sqrt_info[(i, j)] = cs * rij + sn * gj;
                g[j] = -sn * rij + cs * gj;
            }
            let zi = self.z[i];
            self.z[i] = cs * zi + sn * y;
            y = -sn * zi + cs * y;
        }
    }

    fn refresh_estimate(&mut self) {
        self.eta = self
            .sqrt_info
            .clone()
            .solve_upper_triangular(&self.z)
            .expect("information factor has a positive diagonal");
    }
}

/// Fold one probe `(θ, λ)` into the estimate, one scalar row at a time.
pub fn rls_update(
    est: &EstimatorState,
    allocation: &DVector<f64>,
    observed: &DVector<f64>,
) -> Result<EstimatorState> {
    let c = est.c;
    if allocation.len() != c || observed.len() != c {
        return Err(Error::shape(format!(
            "probe and observation must have length {c}"
        )));
    }
    if !linalg::vec_finite(allocation) || !linalg::vec_finite(observed) {
        return Err(Error::NonFinite("probe observation".into()));
    }
    let mut next = est.clone();
    for row in 0..c {
        let g = next.regressor(allocation, row);
        next.absorb(g, observed[row]);
    }
    next.refresh_estimate();
    next.steps += 1;
    Ok(next)
}

/// `h ≥ min_probes` and `‖η_h − η_{h−1}‖ ≤ eps`.
pub fn estimation_converged(
    eta_h: &DVector<f64>,
    eta_prev: &DVector<f64>,
    eps: f64,
    h: usize,
    min_probes: usize,
) -> bool {
    h >= min_probes && (eta_h - eta_prev).norm() <= eps
}

/// Default minimum probe count: enough scalar rows to determine every
/// parameter, plus two.
pub fn default_min_probes(c: usize) -> usize {
    parameter_len(c).div_ceil(c) + 2
}
