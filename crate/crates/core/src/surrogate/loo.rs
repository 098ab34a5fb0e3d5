use super::kernel::{packed_correlation, KernelSpec, LowerTri};
use super::TrainingData;

/// Objective value returned when the correlation matrix cannot be factorized.
pub const SINGULAR_PENALTY: f64 = 1e300;

/// Squared pivots below this are treated as numerically singular.
pub(crate) const PIVOT_FLOOR: f64 = 1e-10;

/// Leave-one-out cross-validation error of the correlation model at `kernel`.
///
/// Computes `Σ_i ((R⁻¹b)_i / (R⁻¹)_ii)²`, the sum of squared leave-one-out
/// residuals of the zero-mean interpolant of the raw outputs.
pub fn loo_cv_objective(kernel: &KernelSpec, data: &TrainingData) -> f64 {
    let n = data.len();
    let packed = packed_correlation(kernel, data.inputs(), data.dim(), 0.0);
    let chol = match LowerTri::cholesky(packed, n) {
        Ok(c) => c,
        Err(_) => return SINGULAR_PENALTY,
    };
    if (0..n).any(|i| chol.diag(i).powi(2) < PIVOT_FLOOR) {
        return SINGULAR_PENALTY;
    }
    let mut alpha = data.outputs().to_vec();
    chol.forward(&mut alpha);
    chol.backward_transpose(&mut alpha);

    // (R⁻¹)_ii is the squared norm of column i of L⁻¹
    let inv = chol.inverse();
    let mut diag = vec![0.0; n];
    for k in 0..n {
        for (i, v) in inv.row(k).iter().enumerate() {
            diag[i] += v * v;
        }
    }
    let total: f64 = alpha.iter().zip(&diag).map(|(a, d)| (a / d).powi(2)).sum();
    if total.is_finite() {
        total
    } else {
        SINGULAR_PENALTY
    }
}
