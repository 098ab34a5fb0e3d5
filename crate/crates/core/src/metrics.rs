//! Ensemble error metrics (in percent), Pearson correlation and the
//! evaluation-cost model.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Estimates from independent trials against a reference value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialEnsemble {
    pub estimates: Vec<f64>,
    pub benchmark: f64,
}

impl TrialEnsemble {
    pub fn new(estimates: Vec<f64>, benchmark: f64) -> Result<Self> {
        if estimates.is_empty() {
            return Err(invalid("ensemble needs at least one estimate"));
        }
        Ok(Self { estimates, benchmark })
    }

    pub fn mean(&self) -> f64 {
        self.estimates.iter().sum::<f64>() / self.estimates.len() as f64
    }

    fn check(&self) -> Result<()> {
        if self.estimates.is_empty() {
            return Err(invalid("ensemble needs at least one estimate"));
        }
        if self.benchmark == 0.0 || !self.benchmark.is_finite() {
            return Err(Error::UndefinedMetric(format!("relative error against benchmark {}", self.benchmark)));
        }
        Ok(())
    }
}

/// Mean relative difference, `100·mean|Y_k − b|/|b|`.
pub fn mrd(e: &TrialEnsemble) -> Result<f64> {
    e.check()?;
    let k = e.estimates.len() as f64;
    Ok(100.0 * e.estimates.iter().map(|y| (y - e.benchmark).abs()).sum::<f64>() / k / e.benchmark.abs())
}

/// Normalized root-mean-square deviation, `100·√(mean (Y_k − b)²)/|b|`.
pub fn nrmsd(e: &TrialEnsemble) -> Result<f64> {
    e.check()?;
    let k = e.estimates.len() as f64;
    let ms = e.estimates.iter().map(|y| (y - e.benchmark).powi(2)).sum::<f64>() / k;
    Ok(100.0 * ms.sqrt() / e.benchmark.abs())
}

/// Sample Pearson correlation coefficient.
pub fn pcc(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(invalid(format!("need two equal sequences of length ≥ 2, got {} and {}", a.len(), b.len())));
    }
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedMetric("correlation of a constant sequence".into()));
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Where the surrogate training outputs come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetOption {
    Hf,
    Lf,
}

fn check_nonnegative(values: &[(&str, f64)]) -> Result<()> {
    for (name, v) in values {
        if !(*v >= 0.0 && v.is_finite()) {
            return Err(invalid(format!("{name} must be finite and nonnegative, got {v}")));
        }
    }
    Ok(())
}

/// Total cost of `L′` training and `M` estimation evaluations:
/// `(L′+M)c_H` when training uses the high-fidelity model, `L′c_L + Mc_H`
/// otherwise.
pub fn budget(l_prime: f64, m: f64, c_h: f64, c_l: f64, option: BudgetOption) -> Result<f64> {
    check_nonnegative(&[("L′", l_prime), ("M", m), ("c_H", c_h), ("c_L", c_l)])?;
    Ok(match option {
        BudgetOption::Hf => (l_prime + m) * c_h,
        BudgetOption::Lf => l_prime * c_l + m * c_h,
    })
}

/// Largest low-fidelity cost per evaluation that keeps the total within
/// `c_T`: `(c_T − Mc_H)/L′`.
pub fn max_lf_cost(c_t: f64, m: f64, c_h: f64, l_prime: f64) -> Result<f64> {
    check_nonnegative(&[("c_T", c_t), ("M", m), ("c_H", c_h), ("L′", l_prime)])?;
    if l_prime == 0.0 {
        return Err(invalid("L′ must be positive for a cost bound"));
    }
    Ok((c_t - m * c_h) / l_prime)
}
