//! Small dense helpers shared by the modelling and estimation code.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Matrix exponential by scaling and squaring with a truncated Taylor series.
///
/// The argument is scaled so that its 1-norm is at most 1/2, where the
/// series converges to machine precision in fewer than 30 terms.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    assert!(a.is_square(), "expm needs a square matrix");
    let n = a.nrows();
    let norm = one_norm(a);
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a / 2f64.powi(squarings);

    let mut sum = DMatrix::<f64>::identity(n, n);
    let mut term = DMatrix::<f64>::identity(n, n);
    for k in 1..=40 {
        term = &term * &scaled / k as f64;
        sum += &term;
        if one_norm(&term) <= f64::EPSILON * one_norm(&sum) {
            break;
        }
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// Maximum absolute column sum.
pub fn one_norm(a: &DMatrix<f64>) -> f64 {
    a.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn is_symmetric(a: &DMatrix<f64>, tol: f64) -> bool {
    if !a.is_square() {
        return false;
    }
    let scale = a.amax().max(1.0);
    (a - a.transpose()).amax() <= tol * scale
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

pub fn all_finite(a: &DMatrix<f64>) -> bool {
    a.iter().all(|v| v.is_finite())
}

pub fn vec_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// 2-norm condition number from the singular values; infinite when singular.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Block-diagonal matrix with `block` repeated `times` times.
pub fn repeat_block_diag(block: &DMatrix<f64>, times: usize) -> DMatrix<f64> {
    let (r, c) = block.shape();
    let mut out = DMatrix::zeros(r * times, c * times);
    for k in 0..times {
        out.view_mut((k * r, k * c), (r, c)).copy_from(block);
    }
    out
}

pub fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r0, mut c0) = (0, 0);
    for b in blocks {
        out.view_mut((r0, c0), b.shape()).copy_from(b);
        r0 += b.nrows();
        c0 += b.ncols();
    }
    out
}

pub fn repeat_vector(v: &DVector<f64>, times: usize) -> DVector<f64> {
    DVector::from_iterator(v.len() * times, (0..times).flat_map(|_| v.iter().copied()))
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub fn spd_inverse(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Singular(format!("{what} is not positive definite")))?;
    Ok(symmetrize(&chol.inverse()))
}

/// Largest eigenvalue of a symmetric matrix.
pub fn sym_max_eigenvalue(a: &DMatrix<f64>) -> f64 {
    symmetrize(a).symmetric_eigenvalues().max()
}

/// Orthonormal basis (columns) of the subspace of stacked vectors whose
/// `m` blocks of size `c` sum to zero.
/// Largest eigenvalue modulus. Symmetric input goes through the symmetric
/// eigensolver; otherwise a Schur decomposition with an iteration cap, and
/// Gelfand's formula `lim ‖Aᵏ‖^{1/k}` if that does not converge.
pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    if !all_finite(a) {
        return f64::NAN;
    }
    if is_symmetric(a, 1e-12 * a.amax().max(f64::MIN_POSITIVE)) {
        return symmetrize(a).symmetric_eigenvalues().amax();
    }
    if let Some(schur) = a.clone().try_schur(f64::EPSILON, 10_000) {
        return schur
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
    }
    gelfand_radius(a)
}

fn gelfand_radius(a: &DMatrix<f64>) -> f64 {
    const SQUARINGS: i32 = 60;
    // Track A^(2^j) as exp(log_scale) · power with ‖power‖ = 1.
    let mut power = a.clone();
    let mut log_scale = 0.0;
    for _ in 0..SQUARINGS {
        let n = power.norm();
        if n == 0.0 {
            return 0.0;
        }
        power /= n;
        log_scale = 2.0 * (log_scale + n.ln());
        power = &power * &power;
    }
    let n = power.norm();
    if n == 0.0 {
        return 0.0;
    }
    ((log_scale + n.ln()) / 2f64.powi(SQUARINGS)).exp()
}

pub fn zero_sum_basis(m: usize, c: usize) -> DMatrix<f64> {
    // Helmert contrasts, Kronecker'd with I_c.
    let mut basis = DMatrix::zeros(m * c, (m.saturating_sub(1)) * c);
    for j in 1..m {
        let norm = ((j * (j + 1)) as f64).sqrt();
        for i in 0..=j {
            let w = if i < j {
                1.0 / norm
            } else {
                -(j as f64) / norm
            };
            for r in 0..c {
                basis[(i * c + r, (j - 1) * c + r)] = w;
            }
        }
    }
    basis
}
