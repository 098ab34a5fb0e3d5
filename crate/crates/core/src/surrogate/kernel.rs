use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Gaussian,
    Exponential,
}

impl std::str::FromStr for KernelKind {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Self::Gaussian),
            "exponential" => Ok(Self::Exponential),
            other => Err(invalid(format!("unknown kernel '{other}'"))),
        }
    }
}

/// Stationary autocorrelation with one length scale per input coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub theta: Vec<f64>,
}

impl KernelSpec {
    pub fn new(kind: KernelKind, theta: Vec<f64>) -> Result<Self> {
        if theta.is_empty() || theta.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(invalid(format!("length scales must be positive: {theta:?}")));
        }
        Ok(Self { kind, theta })
    }

    /// Correlation between two points.
    #[inline]
    pub fn correlation(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut s = 0.0;
        match self.kind {
            KernelKind::Gaussian => {
                for ((a, b), t) in x.iter().zip(y).zip(&self.theta) {
                    let d = (a - b) / t;
                    s += d * d;
                }
            }
            KernelKind::Exponential => {
                for ((a, b), t) in x.iter().zip(y).zip(&self.theta) {
                    s += (a - b).abs() / t;
                }
            }
        }
        (-s).exp()
    }
}

/// Autocorrelation for a vector of coordinate differences.
pub fn autocorrelation(dx: &[f64], kernel: &KernelSpec) -> f64 {
    let zero = vec![0.0; dx.len()];
    kernel.correlation(dx, &zero)
}

/// Packed row-major lower-triangular matrix.
#[derive(Debug, Clone)]
pub(crate) struct LowerTri {
    n: usize,
    data: Vec<f64>,
}

impl LowerTri {
    #[inline]
    fn offset(i: usize) -> usize {
        i * (i + 1) / 2
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[Self::offset(i)..Self::offset(i) + i + 1]
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.data[Self::offset(i) + i]
    }

    /// Identity factor.
    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * (n + 1) / 2];
        for i in 0..n {
            data[Self::offset(i) + i] = 1.0;
        }
        Self { n, data }
    }

    /// Lower triangle of `f(i, j)` for `j ≤ i`.
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            data.extend((0..=i).map(|j| f(i, j)));
        }
        Self { n, data }
    }

    /// Cholesky factor of the packed lower triangle of a symmetric matrix.
    /// Returns the failing pivot on breakdown.
    pub fn cholesky(mut a: Vec<f64>, n: usize) -> std::result::Result<Self, usize> {
        debug_assert_eq!(a.len(), n * (n + 1) / 2);
        for i in 0..n {
            let oi = Self::offset(i);
            for j in 0..=i {
                let oj = Self::offset(j);
                let mut s = a[oi + j];
                let (ri, rj) = (&a[oi..oi + j], &a[oj..oj + j]);
                for k in 0..j {
                    s -= ri[k] * rj[k];
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(i);
                    }
                    a[oi + i] = s.sqrt();
                } else {
                    a[oi + j] = s / a[oj + j];
                }
            }
        }
        Ok(Self { n, data: a })
    }

    /// Solves `L y = b` in place.
    pub fn forward(&self, b: &mut [f64]) {
        for i in 0..self.n {
            let row = self.row(i);
            let mut s = b[i];
            for k in 0..i {
                s -= row[k] * b[k];
            }
            b[i] = s / row[i];
        }
    }

    /// Solves `L^T y = b` in place.
    pub fn backward_transpose(&self, b: &mut [f64]) {
        for i in (0..self.n).rev() {
            let row = self.row(i);
            b[i] /= row[i];
            let v = b[i];
            for k in 0..i {
                b[k] -= row[k] * v;
            }
        }
    }

    /// Explicit inverse of the factor, packed the same way.
    pub fn inverse(&self) -> Self {
        let n = self.n;
        let mut inv = vec![0.0; n * (n + 1) / 2];
        for i in 0..n {
            let oi = Self::offset(i);
            let row = self.row(i);
            inv[oi + i] = 1.0 / row[i];
            for j in 0..i {
                let mut s = 0.0;
                for k in j..i {
                    s += row[k] * inv[Self::offset(k) + j];
                }
                inv[oi + j] = -s / row[i];
            }
        }
        Self { n, data: inv }
    }
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let z = s - a;
    (s, (a - (s - z)) + (b - z))
}

#[inline]
fn split(a: f64) -> (f64, f64) {
    let c = 134_217_729.0 * a; // 2^27 + 1
    let hi = c - (c - a);
    (hi, a - hi)
}

#[inline]
fn two_product(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    let (ah, al) = split(a);
    let (bh, bl) = split(b);
    (p, al * bl - (((p - ah * bh) - al * bh) - ah * bl))
}

/// Dot product evaluated as if in twice the working precision.
pub(crate) fn dot2(x: &[f64], y: &[f64]) -> f64 {
    let (mut s, mut c) = (0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (p, pe) = two_product(*a, *b);
        let (t, se) = two_sum(s, p);
        s = t;
        c += pe + se;
    }
    s + c
}

/// Solves `R x = b` given `R` as a packed lower triangle and its Cholesky
/// factor. Residuals are formed in extended precision, so the refined `x`
/// satisfies the system to near working precision even when `R` is badly
/// conditioned.
pub(crate) fn refined_solve(packed: &[f64], chol: &LowerTri, b: &[f64]) -> Vec<f64> {
    let n = chol.n;
    let mut x = b.to_vec();
    chol.forward(&mut x);
    chol.backward_transpose(&mut x);
    let mut row = vec![0.0; n + 1];
    let mut xb = vec![0.0; n + 1];
    let mut delta = vec![0.0; n];
    for _ in 0..4 {
        xb[..n].copy_from_slice(&x);
        for i in 0..n {
            for (j, v) in row[..n].iter_mut().enumerate() {
                let (a, c) = if j <= i { (i, j) } else { (j, i) };
                *v = packed[LowerTri::offset(a) + c];
            }
            row[n] = -1.0;
            xb[n] = b[i];
            delta[i] = -dot2(&row, &xb);
        }
        chol.forward(&mut delta);
        chol.backward_transpose(&mut delta);
        let step = delta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let size = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (xi, d) in x.iter_mut().zip(&delta) {
            *xi += d;
        }
        if step <= f64::EPSILON * size {
            break;
        }
    }
    x
}

/// Packed lower triangle of the correlation matrix of `points` (row-major,
/// `count × dim`), with `nugget` added to the diagonal.
pub(crate) fn packed_correlation(kernel: &KernelSpec, points: &[f64], dim: usize, nugget: f64) -> Vec<f64> {
    let count = points.len() / dim;
    let mut out = Vec::with_capacity(count * (count + 1) / 2);
    for i in 0..count {
        let xi = &points[i * dim..(i + 1) * dim];
        for j in 0..i {
            out.push(kernel.correlation(xi, &points[j * dim..(j + 1) * dim]));
        }
        out.push(1.0 + nugget);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn autocorrelation_examples() {
        let g = KernelSpec::new(KernelKind::Gaussian, vec![1.0, 1.0]).unwrap();
        assert_eq!(autocorrelation(&[0.0, 0.0], &g), 1.0);
        assert_relative_eq!(autocorrelation(&[1.0, 0.0], &g), (-1.0f64).exp(), epsilon = 1e-15);
        let e = KernelSpec::new(KernelKind::Exponential, vec![2.0]).unwrap();
        assert_relative_eq!(autocorrelation(&[1.0], &e), (-0.5f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(autocorrelation(&[-1.0], &e), (-0.5f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn rejects_nonpositive_theta() {
        assert!(KernelSpec::new(KernelKind::Gaussian, vec![1.0, 0.0]).is_err());
        assert!(KernelSpec::new(KernelKind::Gaussian, vec![]).is_err());
    }

    #[test]
    fn cholesky_solves_and_inverts() {
        // 3x3 SPD
        let a = [4.0, 2.0, 3.0, 0.4, 0.5, 2.0];
        let l = LowerTri::cholesky(a.to_vec(), 3).unwrap();
        let full = |i: usize, j: usize| {
            let (i, j) = if i >= j { (i, j) } else { (j, i) };
            a[i * (i + 1) / 2 + j]
        };
        let b = [1.0, -2.0, 0.5];
        let mut x = b;
        l.forward(&mut x);
        l.backward_transpose(&mut x);
        for i in 0..3 {
            let ax: f64 = (0..3).map(|j| full(i, j) * x[j]).sum();
            assert_relative_eq!(ax, b[i], epsilon = 1e-12);
        }
        let inv = l.inverse();
        for i in 0..3 {
            for j in 0..3 {
                let prod: f64 = (0..3)
                    .map(|k| {
                        let a = if k <= i { l.row(i)[k] } else { 0.0 };
                        let b = if j <= k { inv.row(k)[j] } else { 0.0 };
                        a * b
                    })
                    .sum();
                assert_relative_eq!(prod, if i == j { 1.0 } else { 0.0 }, epsilon = 1e-12);
            }
        }
        assert!(LowerTri::cholesky(vec![1.0, 2.0, 1.0], 2).is_err());
    }

    #[test]
    fn compensated_dot_recovers_cancellation() {
        let x = [1e16, 1.0, -1e16];
        let y = [1.0, 1.0, 1.0];
        assert_eq!(dot2(&x, &y), 1.0);
        assert_eq!(dot2(&[0.1, 0.2], &[3.0, -1.5]), 0.1 * 3.0 - 0.2 * 1.5);
    }

    #[test]
    fn refinement_handles_ill_conditioning() {
        // Gaussian kernel on close points: condition number around 1e13
        let pts: Vec<f64> = (0..12).map(|i| i as f64 * 0.1).collect();
        let k = KernelSpec::new(KernelKind::Gaussian, vec![0.6]).unwrap();
        let packed = packed_correlation(&k, &pts, 1, 0.0);
        let chol = LowerTri::cholesky(packed.clone(), 12).unwrap();
        let b: Vec<f64> = pts.iter().map(|x| (3.0 * x).sin()).collect();
        let x = refined_solve(&packed, &chol, &b);
        for i in 0..12 {
            let row: Vec<f64> = (0..12).map(|j| k.correlation(&pts[i..i + 1], &pts[j..j + 1])).collect();
            // best attainable with x rounded to working precision
            let scale: f64 = row.iter().zip(&x).map(|(a, v)| (a * v).abs()).sum::<f64>() + b[i].abs();
            let res = (dot2(&row, &x) - b[i]).abs();
            assert!(res <= 4.0 * f64::EPSILON * scale, "row {i}: residual {res}, scale {scale}");
        }
    }
}
