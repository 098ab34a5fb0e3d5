//! Value-at-Risk and Conditional Value-at-Risk from weighted samples, the
//! confidence-interval risk region, and the multifidelity importance
//! sampling estimator built on it.

use std::time::Instant;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::ContinuousCDF;

use crate::error::{invalid, Error, Result};
use crate::inputs::{std_normal, SampleSet};
use crate::models::Model;
use crate::surrogate::FittedSurrogate;

/// Slack when comparing cumulative probability against `1 − β`, so that
/// e.g. ten weights of 0.1 reach 0.2 after exactly two terms.
pub const MASS_TOLERANCE: f64 = 1e-12;

/// Output realizations with probability weights. The weights need not sum
/// to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedOutputs {
    values: Vec<f64>,
    probabilities: Vec<f64>,
    /// Sample indices the values came from.
    indices: Option<Vec<usize>>,
}

impl WeightedOutputs {
    pub fn new(values: Vec<f64>, probabilities: Vec<f64>) -> Result<Self> {
        if values.len() != probabilities.len() {
            return Err(invalid(format!("{} values but {} probabilities", values.len(), probabilities.len())));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("output {i} is not finite: {}", values[i])));
        }
        if let Some(i) = probabilities.iter().position(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(invalid(format!("probability {i} is not a nonnegative number: {}", probabilities[i])));
        }
        Ok(Self { values, probabilities, indices: None })
    }

    /// Equal weights `1/L`.
    pub fn uniform(values: Vec<f64>) -> Result<Self> {
        let p = 1.0 / values.len() as f64;
        let n = values.len();
        Self::new(values, vec![p; n])
    }

    pub fn with_indices(mut self, indices: Vec<usize>) -> Result<Self> {
        if indices.len() != self.values.len() {
            return Err(invalid("index count does not match value count"));
        }
        self.indices = Some(indices);
        Ok(self)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn indices(&self) -> Option<&[usize]> {
        self.indices.as_deref()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.probabilities.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarCvar {
    pub var: f64,
    pub cvar: f64,
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(invalid(format!("risk level β must lie in (0, 1), got {beta}")));
    }
    Ok(())
}

/// Positions sorted by value descending, ties by position.
fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

/// Position in `order` of the first sample whose cumulative probability
/// exceeds `1 − β`. Falls back to the last sample when the total mass
/// equals `1 − β` up to rounding.
fn tail_cut(order: &[usize], probabilities: &[f64], beta: f64) -> Result<usize> {
    let target = 1.0 - beta;
    let mut cum = 0.0;
    for (k, &i) in order.iter().enumerate() {
        cum += probabilities[i];
        if cum > target + MASS_TOLERANCE {
            return Ok(k);
        }
    }
    if cum >= target - MASS_TOLERANCE && !order.is_empty() {
        return Ok(order.len() - 1);
    }
    Err(Error::InsufficientMass { total: cum, required: target })
}

/// VaR is the largest value whose upper tail carries more than `1 − β` of
/// the mass; CVaR adds the weighted mean excess over VaR scaled by
/// `1/(1 − β)`.
pub fn empirical_var_cvar(outputs: &WeightedOutputs, beta: f64) -> Result<VarCvar> {
    check_beta(beta)?;
    if outputs.is_empty() {
        return Err(invalid("no outputs"));
    }
    let order = descending_order(&outputs.values);
    let k = tail_cut(&order, &outputs.probabilities, beta)?;
    let var = outputs.values[order[k]];
    let excess: f64 = order[..k].iter().map(|&i| outputs.probabilities[i] * (outputs.values[i] - var)).sum();
    Ok(VarCvar { var, cvar: var + excess / (1.0 - beta) })
}

/// Standard-normal quantile `Q_{1−α/2}`; zero at `α = 1`.
pub fn normal_quantile(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(invalid(format!("confidence level α must lie in (0, 1], got {alpha}")));
    }
    if alpha == 1.0 {
        return Ok(0.0);
    }
    Ok(std_normal().inverse_cdf(1.0 - alpha / 2.0))
}

/// Half-width `Q_{1−α/2}·σ̄(x)` of the predictor's confidence interval.
pub fn ci_half_width(surrogate: &FittedSurrogate, x: &[f64], alpha: f64) -> Result<f64> {
    Ok(normal_quantile(alpha)? * surrogate.predict(x).variance.sqrt())
}

/// Discrete risk region over a sample set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskRegion {
    /// Ascending sample indices.
    pub members: Vec<usize>,
    /// Probability of the region under the sampling measure.
    pub mass: f64,
    pub sample_count: usize,
    /// `VaR_β` of the lower confidence bound `ȳ − ε`.
    pub threshold: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl RiskRegion {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Region `{l : ȳ_l + ε_l ≥ VaR_β[ȳ − ε]}` from per-sample predictor means
/// and half-widths.
pub fn region_from_bounds(
    means: &[f64],
    half_widths: &[f64],
    probabilities: &[f64],
    beta: f64,
    alpha: f64,
) -> Result<RiskRegion> {
    check_beta(beta)?;
    let n = means.len();
    if n == 0 || half_widths.len() != n || probabilities.len() != n {
        return Err(invalid("means, half-widths and probabilities must be nonempty and equally long"));
    }
    if half_widths.iter().all(|e| !e.is_finite()) {
        return Err(Error::Numerical("all confidence half-widths are non-finite".into()));
    }
    let lower: Vec<f64> = means.iter().zip(half_widths).map(|(m, e)| m - e).collect();
    if let Some(i) = lower.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("lower bound at sample {i} is not finite")));
    }
    let order = descending_order(&lower);
    let threshold = lower[order[tail_cut(&order, probabilities, beta)?]];
    let members: Vec<usize> = (0..n).filter(|&l| means[l] + half_widths[l] >= threshold).collect();
    let uniform = probabilities.iter().all(|p| *p == probabilities[0]);
    let mass = if uniform && (probabilities[0] * n as f64 - 1.0).abs() < 1e-12 {
        members.len() as f64 / n as f64
    } else {
        members.iter().map(|&l| probabilities[l]).sum()
    };
    Ok(RiskRegion { members, mass, sample_count: n, threshold, alpha, beta })
}

/// Confidence-interval risk region of `surrogate` over `samples`.
pub fn epsilon_risk_region(
    surrogate: &FittedSurrogate,
    samples: &SampleSet,
    beta: f64,
    alpha: f64,
) -> Result<RiskRegion> {
    if samples.is_empty() {
        return Err(invalid("no candidate samples"));
    }
    let q = normal_quantile(alpha)?;
    let preds = surrogate.predict_many(samples.flat_points());
    let means: Vec<f64> = preds.iter().map(|p| p.mean).collect();
    let eps: Vec<f64> = preds.iter().map(|p| q * p.variance.sqrt()).collect();
    region_from_bounds(&means, &eps, samples.probabilities(), beta, alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Mcs,
    SurrogateMcs,
    Is,
    MfisHf,
    MfisLf,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Mcs => "mcs",
            Self::SurrogateMcs => "surrogate_mcs",
            Self::Is => "is",
            Self::MfisHf => "mfis_hf",
            Self::MfisLf => "mfis_lf",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "mcs" => Self::Mcs,
            "surrogate_mcs" => Self::SurrogateMcs,
            "is" => Self::Is,
            "mfis_hf" => Self::MfisHf,
            "mfis_lf" => Self::MfisLf,
            other => return Err(invalid(format!("unknown method '{other}'"))),
        })
    }
}

/// Evaluations per fidelity: the high-fidelity model, a separate
/// low-fidelity model, and surrogate predictions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationCounts {
    pub hf: u64,
    pub lf_model: u64,
    pub surrogate: u64,
}

impl std::ops::Add for EvaluationCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self { hf: self.hf + o.hf, lf_model: self.lf_model + o.lf_model, surrogate: self.surrogate + o.surrogate }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub method: Method,
    pub var_estimate: f64,
    pub cvar_estimate: f64,
    pub beta: f64,
    pub alpha: Option<f64>,
    pub counts: EvaluationCounts,
    pub seed: u64,
    pub region_size: Option<usize>,
    pub region_mass: Option<f64>,
    /// Elapsed seconds; left out of serialized reports so that they are
    /// reproducible byte for byte.
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl RiskReport {
    fn new(method: Method, est: VarCvar, beta: f64, counts: EvaluationCounts, seed: u64, started: Instant) -> Self {
        Self {
            method,
            var_estimate: est.var,
            cvar_estimate: est.cvar,
            beta,
            alpha: None,
            counts,
            seed,
            region_size: None,
            region_mass: None,
            wall_clock_secs: started.elapsed().as_secs_f64(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Evaluates `model` at every row of `samples`, in sample order.
pub fn evaluate_all(model: &dyn Model, samples: &SampleSet) -> Result<Vec<f64>> {
    samples.flat_points().par_chunks(samples.dim()).map(|x| model.evaluate(x)).collect()
}

/// Standard Monte Carlo: the model at every sample, then
/// [`empirical_var_cvar`].
pub fn mcs_estimate(model: &dyn Model, samples: &SampleSet, beta: f64, seed: u64) -> Result<RiskReport> {
    let started = Instant::now();
    let values = evaluate_all(model, samples)?;
    let outputs = WeightedOutputs::new(values, samples.probabilities().to_vec())?;
    let est = empirical_var_cvar(&outputs, beta)?;
    let counts = EvaluationCounts { hf: samples.len() as u64, ..Default::default() };
    Ok(RiskReport::new(Method::Mcs, est, beta, counts, seed, started))
}

/// Monte Carlo on the surrogate's predictor mean.
pub fn surrogate_mcs_estimate(surrogate: &FittedSurrogate, samples: &SampleSet, beta: f64) -> Result<RiskReport> {
    let started = Instant::now();
    if samples.is_empty() {
        return Err(invalid("no samples"));
    }
    let values: Vec<f64> = surrogate.predict_many(samples.flat_points()).iter().map(|p| p.mean).collect();
    let outputs = WeightedOutputs::new(values, samples.probabilities().to_vec())?;
    let est = empirical_var_cvar(&outputs, beta)?;
    let counts = EvaluationCounts { surrogate: samples.len() as u64, ..Default::default() };
    Ok(RiskReport::new(Method::SurrogateMcs, est, beta, counts, seed_of(samples), started))
}

fn seed_of(samples: &SampleSet) -> u64 {
    samples.provenance().seed
}

/// Importance sampling from draws of a biasing density: `values` at the
/// draws and the likelihood ratios `f/q` there.
pub fn is_estimate(values: Vec<f64>, likelihood_ratios: &[f64], beta: f64, seed: u64) -> Result<RiskReport> {
    let started = Instant::now();
    let m = values.len();
    if m == 0 {
        return Err(invalid("no importance samples"));
    }
    let p = likelihood_ratios.iter().map(|w| w / m as f64).collect();
    let est = empirical_var_cvar(&WeightedOutputs::new(values, p)?, beta)?;
    let counts = EvaluationCounts { hf: m as u64, ..Default::default() };
    Ok(RiskReport::new(Method::Is, est, beta, counts, seed, started))
}

/// Multifidelity importance sampling over a risk region.
///
/// Draws `m` region members uniformly without replacement, evaluates the
/// high-fidelity model there, and weights each output by `P̂/m`.
pub fn mfis_estimate(
    region: &RiskRegion,
    samples: &SampleSet,
    hf_model: &dyn Model,
    m: usize,
    beta: f64,
    seed: u64,
) -> Result<RiskReport> {
    let started = Instant::now();
    check_beta(beta)?;
    if region.sample_count != samples.len() {
        return Err(invalid(format!("region was built on {} samples, got {}", region.sample_count, samples.len())));
    }
    if m == 0 || m > region.len() {
        return Err(invalid(format!("need 1 ≤ M ≤ |region| = {}, got M = {m}", region.len())));
    }
    if region.mass < (1.0 - beta) - MASS_TOLERANCE {
        return Err(Error::InsufficientMass { total: region.mass, required: 1.0 - beta });
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> =
        index::sample(&mut rng, region.len(), m).into_iter().map(|k| region.members[k]).collect();
    picked.sort_unstable();
    let values: Vec<f64> = picked.par_iter().map(|&l| hf_model.evaluate(samples.point(l))).collect::<Result<_>>()?;
    let p = if samples.is_uniform() {
        region.len() as f64 / (samples.len() as f64 * m as f64)
    } else {
        region.mass / m as f64
    };
    let outputs = WeightedOutputs::new(values, vec![p; m])?.with_indices(picked)?;
    let est = empirical_var_cvar(&outputs, beta)?;
    let counts = EvaluationCounts { hf: m as u64, ..Default::default() };
    let mut report = RiskReport::new(Method::MfisHf, est, beta, counts, seed, started);
    report.alpha = Some(region.alpha);
    report.region_size = Some(region.len());
    report.region_mass = Some(region.mass);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{build_basis, build_index_set};
    use crate::inputs::{sample, InputModel, SampleProvenance, Scheme};
    use crate::models::rastrigin;
    use crate::surrogate::{fit, FitOptions, Mode, TrainingData};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;

    fn uniform(values: Vec<f64>) -> WeightedOutputs {
        WeightedOutputs::uniform(values).unwrap()
    }

    /// Mass-filling tail mean: walks the sorted tail taking whole weights
    /// until `1 − β` is reached, with the last weight taken partially.
    fn tail_mean(values: &[f64], p: &[f64], beta: f64) -> f64 {
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
        let mut left = 1.0 - beta;
        let mut acc = 0.0;
        for i in order {
            let take = p[i].min(left);
            acc += take * values[i];
            left -= take;
            if left <= 0.0 {
                break;
            }
        }
        acc / (1.0 - beta)
    }

    #[test]
    fn small_examples() {
        let r = empirical_var_cvar(&uniform((1..=10).map(f64::from).collect()), 0.8).unwrap();
        assert_eq!(r.var, 8.0);
        assert_relative_eq!(r.cvar, 9.5, epsilon = 1e-12);
        let r = empirical_var_cvar(&uniform(vec![3.25; 17]), 0.9).unwrap();
        assert_eq!((r.var, r.cvar), (3.25, 3.25));
        let r = empirical_var_cvar(&uniform((1..=100).map(f64::from).collect()), 0.99).unwrap();
        assert_eq!(r.var, 99.0);
        assert_relative_eq!(r.cvar, 100.0, epsilon = 1e-10);
    }

    #[test]
    fn argument_errors() {
        assert!(empirical_var_cvar(&uniform(vec![]), 0.5).is_err());
        assert!(empirical_var_cvar(&uniform(vec![1.0]), 1.0).is_err());
        let w = WeightedOutputs::new(vec![1.0, 2.0], vec![0.001, 0.001]).unwrap();
        assert!(matches!(empirical_var_cvar(&w, 0.9), Err(Error::InsufficientMass { .. })));
        assert!(WeightedOutputs::new(vec![1.0], vec![-0.1]).is_err());
    }

    #[test]
    fn matches_tail_mean_on_random_instances() {
        let mut rng = ChaCha12Rng::seed_from_u64(77);
        for _ in 0..200 {
            let n = rng.random_range(1..400);
            let values: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let total: f64 = raw.iter().sum();
            let p: Vec<f64> = raw.iter().map(|w| w / total).collect();
            let beta = rng.random_range(0.05..0.995);
            let w = WeightedOutputs::new(values.clone(), p.clone()).unwrap();
            let r = empirical_var_cvar(&w, beta).unwrap();
            assert!((r.cvar - tail_mean(&values, &p, beta)).abs() <= 1e-10 * r.cvar.abs().max(1.0));
        }
    }

    #[test]
    fn tail_identity_for_equal_weights() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for &(n, beta) in &[(100usize, 0.9), (1000, 0.99), (500, 0.8)] {
            let values: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..10.0)).collect();
            let r = empirical_var_cvar(&uniform(values.clone()), beta).unwrap();
            let above: Vec<f64> = values.iter().cloned().filter(|v| *v > r.var).collect();
            let mean = above.iter().sum::<f64>() / above.len() as f64;
            assert_relative_eq!(r.cvar, mean, max_relative = 1e-10);
        }
    }

    proptest! {
        #[test]
        fn prop_equivariance(values in prop::collection::vec(-100.0f64..100.0, 1..200), c in -50.0f64..50.0, a in 0.01f64..20.0) {
            let base = empirical_var_cvar(&uniform(values.clone()), 0.9).unwrap();
            let shifted = empirical_var_cvar(&uniform(values.iter().map(|v| v + c).collect()), 0.9).unwrap();
            let scaled = empirical_var_cvar(&uniform(values.iter().map(|v| v * a).collect()), 0.9).unwrap();
            prop_assert!((shifted.cvar - (base.cvar + c)).abs() <= 1e-9 * (1.0 + base.cvar.abs() + c.abs()));
            prop_assert!((scaled.cvar - a * base.cvar).abs() <= 1e-9 * (1.0 + (a * base.cvar).abs()));
        }

        #[test]
        fn prop_monotone_in_beta(values in prop::collection::vec(-100.0f64..100.0, 1..300)) {
            let w = uniform(values);
            let mut last = f64::NEG_INFINITY;
            for beta in [0.5, 0.8, 0.9, 0.95, 0.99] {
                let r = empirical_var_cvar(&w, beta).unwrap();
                prop_assert!(r.cvar >= last - 1e-12);
                prop_assert!(r.cvar >= r.var);
                last = r.cvar;
            }
        }
    }

    #[test]
    fn half_width_quantiles() {
        assert_eq!(normal_quantile(1.0).unwrap(), 0.0);
        assert_relative_eq!(normal_quantile(0.05).unwrap(), 1.959963984540054, epsilon = 1e-9);
        assert_relative_eq!(2.0 * normal_quantile(0.05).unwrap(), 3.919927969, epsilon = 1e-8);
        assert!(normal_quantile(0.0).is_err());
    }

    #[test]
    fn region_hand_example() {
        let means: Vec<f64> = (1..=10).rev().map(f64::from).collect();
        let region = region_from_bounds(&means, &[0.5; 10], &[0.1; 10], 0.8, 0.05).unwrap();
        assert!(region.members.contains(&0) && region.members.contains(&1));
        // sorted lower bounds 9.5, 8.5, 7.5, ...; mass first exceeds 0.2 at 7.5
        assert_eq!(region.threshold, 7.5);
        assert_eq!(region.members, vec![0, 1, 2, 3]);
        assert_relative_eq!(region.mass, 0.4);
    }

    #[test]
    fn region_collapses_without_half_widths() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let means: Vec<f64> = (0..200).map(|_| rng.random_range(0.0..1.0)).collect();
        let region = region_from_bounds(&means, &[0.0; 200], &[1.0 / 200.0; 200], 0.9, 0.05).unwrap();
        let var = empirical_var_cvar(&uniform(means.clone()), 0.9).unwrap().var;
        let expected: Vec<usize> = (0..200).filter(|&l| means[l] >= var).collect();
        assert_eq!(region.members, expected);
        assert!(region.mass >= 0.1 - 1.0 / 200.0);
    }

    fn fitted_rastrigin(n_train: usize, seed: u64) -> (InputModel, FittedSurrogate) {
        let model = InputModel::bivariate_gaussian(2.0, 0.9).unwrap();
        let basis = build_basis(&build_index_set(2, 1, 3).unwrap(), &model, 1 << 16, 0).unwrap();
        let xs = sample(&model, Scheme::Mc, n_train, seed).unwrap();
        let data = TrainingData::from_samples(&xs, xs.points().map(rastrigin).collect()).unwrap();
        (model, fit(&data, &basis, &FitOptions { seed, ..Default::default() }).unwrap())
    }

    #[test]
    fn region_widens_as_alpha_shrinks() {
        let (model, s) = fitted_rastrigin(40, 3);
        let cands = sample(&model, Scheme::Mc, 100, 4).unwrap();
        let wide = epsilon_risk_region(&s, &cands, 0.9, 0.05).unwrap();
        let narrow = epsilon_risk_region(&s, &cands, 0.9, 0.5).unwrap();
        assert!(narrow.members.iter().all(|l| wide.members.contains(l)));
        assert!(wide.mass >= 0.1 - 0.01);
    }

    #[test]
    fn mfis_with_exact_surrogate_equals_monte_carlo() {
        let model = InputModel::bivariate_gaussian(2.0, 0.5).unwrap();
        let basis = build_basis(&build_index_set(2, 2, 2).unwrap(), &model, 1 << 16, 0).unwrap();
        let truth = |x: &[f64]| 1.0 + x[0] - 0.5 * x[0] * x[1] + x[1] * x[1];
        let xs = sample(&model, Scheme::Mc, 30, 1).unwrap();
        let data = TrainingData::from_samples(&xs, xs.points().map(truth).collect()).unwrap();
        let s = fit(&data, &basis, &FitOptions { mode: Mode::DdGpceOnly, ..Default::default() }).unwrap();
        let cands = sample(&model, Scheme::Mc, 2000, 2).unwrap();
        let exact = mcs_estimate(&truth, &cands, 0.95, 0).unwrap();
        let region = epsilon_risk_region(&s, &cands, 0.95, 0.05).unwrap();
        let r = mfis_estimate(&region, &cands, &truth, region.len(), 0.95, 9).unwrap();
        assert_eq!(r.cvar_estimate, exact.cvar_estimate);
        assert_eq!(r.var_estimate, exact.var_estimate);
        assert_eq!(r.counts.hf, region.len() as u64);

        let sm = surrogate_mcs_estimate(&s, &cands, 0.95).unwrap();
        assert!((sm.cvar_estimate - exact.cvar_estimate).abs() <= 1e-6);
        assert_eq!(sm.counts, EvaluationCounts { surrogate: 2000, ..Default::default() });
    }

    #[test]
    fn mfis_constant_model_and_errors() {
        let (model, s) = fitted_rastrigin(40, 7);
        let cands = sample(&model, Scheme::Mc, 500, 8).unwrap();
        let region = epsilon_risk_region(&s, &cands, 0.9, 0.05).unwrap();
        let c = |_: &[f64]| 4.5;
        for m in [1, region.len() / 2, region.len()] {
            let r = mfis_estimate(&region, &cands, &c, m.max(1), 0.9, 1).unwrap_or_else(|e| panic!("M={m}: {e}"));
            assert_eq!(r.cvar_estimate, 4.5);
        }
        assert!(mfis_estimate(&region, &cands, &c, region.len() + 1, 0.9, 1).is_err());
        assert!(mfis_estimate(&region, &cands, &c, 0, 0.9, 1).is_err());
        let mut small = region.clone();
        small.mass = 0.01;
        assert!(matches!(mfis_estimate(&small, &cands, &c, 1, 0.9, 1), Err(Error::InsufficientMass { .. })));
    }

    #[test]
    fn mfis_is_unbiased_on_a_discrete_instance() {
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let n = 200;
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..100.0)).collect();
        let points: Vec<f64> = (0..n).map(|l| l as f64).collect();
        let cands =
            SampleSet::from_points(1, points, SampleProvenance { scheme: Scheme::Mc, seed: 0, skip: 0 }).unwrap();
        let lookup = |x: &[f64]| values[x[0] as usize];
        let beta = 0.9;
        let exact = empirical_var_cvar(&uniform(values.clone()), beta).unwrap().cvar;
        // region of the exact model: ε ≡ 0, predictor = truth
        let region = region_from_bounds(&values, &vec![0.0; n], cands.probabilities(), beta, 0.05).unwrap();
        let m = region.len() / 2;
        let est: Vec<f64> = (0..500)
            .map(|seed| mfis_estimate(&region, &cands, &lookup, m, beta, seed).unwrap().cvar_estimate)
            .collect();
        let mean = est.iter().sum::<f64>() / est.len() as f64;
        let sd = (est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (est.len() - 1) as f64).sqrt();
        let se = sd / (est.len() as f64).sqrt();
        let slack = 2.0 * se;
        assert!((mean - exact).abs() <= slack.max(1e-12), "mean {mean}, exact {exact}, se {se}");
    }

    #[test]
    fn report_json_is_deterministic() {
        let truth = |x: &[f64]| x[0];
        let model = InputModel::bivariate_gaussian(1.0, 0.0).unwrap();
        let cands = sample(&model, Scheme::Mc, 1000, 2).unwrap();
        let a = mcs_estimate(&truth, &cands, 0.9, 2).unwrap().to_json().unwrap();
        let b = mcs_estimate(&truth, &cands, 0.9, 2).unwrap().to_json().unwrap();
        assert_eq!(a, b);
        assert!(!a.contains("wall_clock"));
    }
}
