//! Config-driven experiments: seeded trials of one estimation method,
//! a standard Monte Carlo benchmark, and the summary table.

use std::io::Write;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{build_basis, build_index_set, reduced_cardinality, OrthonormalBasis};
use crate::error::{Error, Result};
use crate::inputs::{sample, InputModel, SampleSet, Scheme};
use crate::metrics::{mrd, nrmsd, TrialEnsemble};
use crate::models::{Model, ModelHandle, ModelSpec};
use crate::risk::{
    epsilon_risk_region, evaluate_all, mcs_estimate, mfis_estimate, surrogate_mcs_estimate, EvaluationCounts, Method,
    RiskReport,
};
use crate::surrogate::{fit, FitOptions, FittedSurrogate, KernelKind, Mode, TrainingData, DEFAULT_RESTARTS};

fn one() -> usize {
    1
}

fn default_interaction() -> usize {
    1
}

fn default_degree() -> usize {
    3
}

fn default_training() -> usize {
    300
}

fn default_quadrature() -> usize {
    1 << 20
}

fn default_restarts() -> usize {
    DEFAULT_RESTARTS
}

fn default_alpha() -> f64 {
    0.05
}

fn default_samples() -> usize {
    10_000
}

fn default_benchmark_trials() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateConfig {
    /// Largest number of interacting inputs per basis function (S).
    #[serde(default = "default_interaction")]
    pub interaction: usize,
    /// Total polynomial degree (m).
    #[serde(default = "default_degree")]
    pub degree: usize,
    #[serde(default = "default_kernel")]
    pub kernel: KernelKind,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    /// Training sample count (L′) for surrogate Monte Carlo.
    #[serde(default = "default_training")]
    pub training_size: usize,
    /// Quasi-MC points for the moment matrix.
    #[serde(default = "default_quadrature")]
    pub quadrature: usize,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    /// Fixed length scales; skips the leave-one-out search.
    #[serde(default)]
    pub theta: Option<Vec<f64>>,
}

fn default_kernel() -> KernelKind {
    KernelKind::Gaussian
}

fn default_mode() -> Mode {
    Mode::Kriging
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self {
            interaction: default_interaction(),
            degree: default_degree(),
            kernel: default_kernel(),
            mode: default_mode(),
            training_size: default_training(),
            quadrature: default_quadrature(),
            restarts: default_restarts(),
            theta: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RiskConfig {
    pub beta: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Candidate sample count (L).
    #[serde(default = "default_samples")]
    pub samples: usize,
}

/// Budget split for the multifidelity estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MfisConfig {
    /// Evaluations used to train the surrogate (L′), high- or low-fidelity.
    pub training_size: usize,
    /// High-fidelity evaluations in the estimator (M).
    pub estimate_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    #[serde(default = "default_benchmark_trials")]
    pub trials: usize,
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Known reference value; skips the benchmark runs.
    #[serde(default)]
    pub value: Option<f64>,
    #[serde(default = "yes")]
    pub enabled: bool,
}

fn yes() -> bool {
    true
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self { trials: default_benchmark_trials(), samples: default_samples(), value: None, enabled: true }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub trials: usize,
    pub method: Method,
    pub input: InputModel,
    pub model: ModelSpec,
    #[serde(default)]
    pub low_fidelity: Option<ModelSpec>,
    #[serde(default)]
    pub surrogate: SurrogateConfig,
    pub risk: RiskConfig,
    #[serde(default)]
    pub mfis: Option<MfisConfig>,
    #[serde(default)]
    pub benchmark: BenchmarkConfig,
}

const PRESET_EXAMPLE1: &str = r#"
seed = 2024
trials = 10
method = "surrogate_mcs"

[input]
correlation = [[1.0, RHO], [RHO, 1.0]]
marginals = [
    { kind = "gaussian", mean = 0.0, std = 2.0 },
    { kind = "gaussian", mean = 0.0, std = 2.0 },
]

[model]
kind = "builtin"
name = "rastrigin"

[low_fidelity]
kind = "builtin"
name = "rastrigin_lf1"

[surrogate]
interaction = 1
degree = 3
kernel = "gaussian"
mode = "kriging"
training_size = 300

[risk]
beta = 0.99
alpha = 0.05
samples = 10000

[mfis]
training_size = 150
estimate_size = 150

[benchmark]
trials = 10
samples = 10000
"#;

const PRESET_EXAMPLE2: &str = r#"
name = "example2"
seed = 2024
trials = 10
method = "mfis_hf"

[input]
correlation = [[1.0, 0.9], [0.9, 1.0]]
marginals = [
    { kind = "gaussian", mean = 0.0, std = 2.0 },
    { kind = "gaussian", mean = 0.0, std = 2.0 },
]

[model]
kind = "builtin"
name = "cross_in_tray"

[surrogate]
interaction = 1
degree = 4
kernel = "exponential"
mode = "kriging"
training_size = 400

[risk]
beta = 0.99
alpha = 0.05
samples = 10000

[mfis]
training_size = 200
estimate_size = 200

[benchmark]
trials = 10
samples = 10000
"#;

pub const PRESETS: [&str; 3] = ["example1-corr09", "example1-corr0", "example2"];

/// TOML text of a built-in preset.
pub fn preset_toml(name: &str) -> Result<String> {
    let text = match name {
        "example1-corr09" => format!("name = \"{name}\"\n{}", PRESET_EXAMPLE1.replace("RHO", "0.9")),
        "example1-corr0" => format!("name = \"{name}\"\n{}", PRESET_EXAMPLE1.replace("RHO", "0.0")),
        "example2" => PRESET_EXAMPLE2.to_string(),
        other => return Err(Error::Config(format!("unknown preset '{other}'; available: {}", PRESETS.join(", ")))),
    };
    Ok(text)
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn preset(name: &str) -> Result<Self> {
        Self::from_toml(&preset_toml(name)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| "experiment".into())
    }

    /// Checks method-specific completeness and value ranges, reporting
    /// every problem as `field: message`.
    pub fn validate(&self) -> Result<()> {
        let mut issues = Vec::new();
        let n = self.input.dimension();
        let r = &self.risk;
        if !(r.beta > 0.0 && r.beta < 1.0) {
            issues.push(format!("risk.beta: must lie in (0, 1), got {}", r.beta));
        }
        if !(r.alpha > 0.0 && r.alpha < 1.0) {
            issues.push(format!("risk.alpha: must lie in (0, 1), got {}", r.alpha));
        }
        if r.samples == 0 {
            issues.push("risk.samples: must be at least 1".into());
        }
        if self.trials == 0 {
            issues.push("trials: must be at least 1".into());
        }
        for (field, spec) in [("model", Some(&self.model)), ("low_fidelity", self.low_fidelity.as_ref())] {
            if let Some(ModelSpec::Builtin { name, .. }) = spec {
                if name.dim() != n {
                    issues.push(format!(
                        "{field}.name: {name:?} takes {} inputs but the input model has {n}",
                        name.dim()
                    ));
                }
            }
        }
        let s = &self.surrogate;
        let needs_surrogate = matches!(self.method, Method::SurrogateMcs | Method::MfisHf | Method::MfisLf);
        if needs_surrogate {
            if s.interaction > n || s.interaction > s.degree {
                issues.push(format!(
                    "surrogate.interaction: need S ≤ N = {n} and S ≤ m = {}, got S = {}",
                    s.degree, s.interaction
                ));
            } else {
                let basis_len = reduced_cardinality(n, s.interaction, s.degree);
                let training = match (&self.method, &self.mfis) {
                    (Method::SurrogateMcs, _) => Some(("surrogate.training_size", s.training_size)),
                    (_, Some(m)) => Some(("mfis.training_size", m.training_size)),
                    _ => None,
                };
                if let Some((field, count)) = training {
                    if (count as u128) < basis_len {
                        issues.push(format!(
                            "{field}: {count} training samples is fewer than the {basis_len} basis functions \
                             (N = {n}, S = {}, m = {}); the training set must be at least as large as the basis",
                            s.interaction, s.degree
                        ));
                    }
                }
            }
            if (s.quadrature as u128) < reduced_cardinality(n, s.interaction.min(n), s.degree) {
                issues.push("surrogate.quadrature: must be at least the basis size".into());
            }
            if s.restarts == 0 && s.theta.is_none() {
                issues.push("surrogate.restarts: must be at least 1".into());
            }
        }
        match self.method {
            Method::Is => issues.push(
                "method: 'is' needs an explicit biasing density and is only available through the library".into(),
            ),
            Method::MfisHf | Method::MfisLf => match &self.mfis {
                None => issues.push("mfis: section required for multifidelity methods".into()),
                Some(m) => {
                    if m.training_size == 0 {
                        issues.push("mfis.training_size: must be at least 1".into());
                    }
                    if m.estimate_size == 0 {
                        issues.push("mfis.estimate_size: must be at least 1".into());
                    }
                    if m.estimate_size > r.samples {
                        issues.push("mfis.estimate_size: cannot exceed risk.samples".into());
                    }
                }
            },
            _ => {}
        }
        if self.method == Method::MfisLf && self.low_fidelity.is_none() {
            issues.push("low_fidelity: required by method mfis_lf".into());
        }
        let b = &self.benchmark;
        if b.enabled && b.value.is_none() && (b.trials == 0 || b.samples == 0) {
            issues.push("benchmark: trials and samples must be at least 1".into());
        }
        if let Some(v) = b.value {
            if !v.is_finite() {
                issues.push("benchmark.value: must be finite".into());
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(issues.join("\n")))
        }
    }

    fn options(&self, seed: u64) -> FitOptions {
        FitOptions {
            kernel: self.surrogate.kernel,
            mode: self.surrogate.mode,
            theta: self.surrogate.theta.clone(),
            bounds: None,
            restarts: self.surrogate.restarts,
            seed,
        }
    }
}

/// Independent seed for purpose `tag`, index `k`, derived from `base`.
pub fn derive_seed(base: u64, tag: u64, k: u64) -> u64 {
    let mut rng = ChaCha12Rng::seed_from_u64(base);
    rng.set_stream(tag);
    rng.set_word_pos(2 * k as u128);
    rng.next_u64()
}

const TAG_TRIAL: u64 = 1;
const TAG_TRAIN: u64 = 2;
const TAG_CANDIDATES: u64 = 3;
const TAG_DRAW: u64 = 4;
const TAG_OPTIMIZER: u64 = 5;
const TAG_BENCHMARK: u64 = 6;

/// Ingredients shared by all trials of one experiment.
pub struct Experiment {
    pub config: ExperimentConfig,
    hf: ModelHandle,
    lf: Option<ModelHandle>,
    basis: Option<OrthonormalBasis>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialTiming {
    pub seed: u64,
    pub wall_clock_secs: f64,
}

/// Deterministic experiment result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub label: String,
    pub method: Method,
    pub seed: u64,
    pub beta: f64,
    pub alpha: f64,
    pub trials: Vec<RiskReport>,
    pub mean_cvar: f64,
    pub benchmark: Option<f64>,
    pub mrd_percent: Option<f64>,
    pub nrmsd_percent: Option<f64>,
    /// Evaluations per trial.
    pub counts: EvaluationCounts,
}

pub const TABLE_HEADER: [&str; 8] = [
    "label",
    "method",
    "cvar_estimate",
    "mrd_percent",
    "nrmsd_percent",
    "hf_evaluations",
    "lf_model_evaluations",
    "lf_surrogate_evaluations",
];

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One CSV table (header plus a row for this experiment).
    pub fn write_table<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(TABLE_HEADER)?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
        out.write_record([
            self.label.clone(),
            self.method.to_string(),
            format!("{:.4}", self.mean_cvar),
            opt(self.mrd_percent),
            opt(self.nrmsd_percent),
            self.counts.hf.to_string(),
            self.counts.lf_model.to_string(),
            self.counts.surrogate.to_string(),
        ])?;
        out.flush()?;
        Ok(())
    }

    pub fn timings(&self) -> Vec<TrialTiming> {
        self.trials.iter().map(|t| TrialTiming { seed: t.seed, wall_clock_secs: t.wall_clock_secs }).collect()
    }
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let hf = ModelHandle::new(config.model.clone())?;
        let lf = config.low_fidelity.clone().map(ModelHandle::new).transpose()?;
        let basis = match config.method {
            Method::SurrogateMcs | Method::MfisHf | Method::MfisLf => Some(Self::make_basis(&config)?),
            _ => None,
        };
        Ok(Self { config, hf, lf, basis })
    }

    fn make_basis(config: &ExperimentConfig) -> Result<OrthonormalBasis> {
        let s = &config.surrogate;
        let set = build_index_set(config.input.dimension(), s.interaction, s.degree)?;
        build_basis(&set, &config.input, s.quadrature, 0)
    }

    pub fn basis(&self) -> Option<&OrthonormalBasis> {
        self.basis.as_ref()
    }

    pub fn hf_model(&self) -> &ModelHandle {
        &self.hf
    }

    pub fn trial_seed(&self, k: usize) -> u64 {
        derive_seed(self.config.seed, TAG_TRIAL, k as u64)
    }

    /// Fits the surrogate on `count` fresh samples of `model`.
    pub fn fit_surrogate(
        &self,
        model: &dyn Model,
        count: usize,
        trial_seed: u64,
    ) -> Result<(FittedSurrogate, SampleSet)> {
        let basis = match &self.basis {
            Some(b) => b.clone(),
            None => Self::make_basis(&self.config)?,
        };
        let xs = sample(&self.config.input, Scheme::Mc, count, derive_seed(trial_seed, TAG_TRAIN, 0))?;
        let ys = evaluate_all(model, &xs)?;
        let data = TrainingData::from_samples(&xs, ys)?;
        let options = self.config.options(derive_seed(trial_seed, TAG_OPTIMIZER, 0));
        Ok((fit(&data, &basis, &options)?, xs))
    }

    /// One trial of the configured method.
    pub fn run_trial(&self, k: usize) -> Result<RiskReport> {
        self.run_method(self.config.method, k)
    }

    /// One trial of `method` with the settings of this experiment.
    pub fn run_method(&self, method: Method, k: usize) -> Result<RiskReport> {
        let started = Instant::now();
        let seed = self.trial_seed(k);
        let cfg = &self.config;
        let beta = cfg.risk.beta;
        let candidates = || sample(&cfg.input, Scheme::Mc, cfg.risk.samples, derive_seed(seed, TAG_CANDIDATES, 0));
        let mut report = match method {
            Method::Mcs => mcs_estimate(&self.hf, &candidates()?, beta, seed)?,
            Method::SurrogateMcs => {
                let (s, _) = self.fit_surrogate(&self.hf, cfg.surrogate.training_size, seed)?;
                let mut r = surrogate_mcs_estimate(&s, &candidates()?, beta)?;
                r.counts.hf += cfg.surrogate.training_size as u64;
                r
            }
            Method::MfisHf | Method::MfisLf => {
                let split = cfg.mfis.as_ref().ok_or_else(|| Error::Config("mfis: section required".into()))?;
                let (trainer, lf_count): (&dyn Model, u64) = match method {
                    Method::MfisHf => (&self.hf, 0),
                    _ => (
                        self.lf.as_ref().ok_or_else(|| Error::Config("low_fidelity: required".into()))?,
                        split.training_size as u64,
                    ),
                };
                let (s, _) = self.fit_surrogate(trainer, split.training_size, seed)?;
                let cands = candidates()?;
                let region = epsilon_risk_region(&s, &cands, beta, cfg.risk.alpha)?;
                let m = split.estimate_size.min(region.len());
                if m < split.estimate_size {
                    log::warn!(
                        "risk region has {} members, fewer than the {} requested high-fidelity samples",
                        region.len(),
                        split.estimate_size
                    );
                }
                let mut r = mfis_estimate(&region, &cands, &self.hf, m, beta, derive_seed(seed, TAG_DRAW, 0))?;
                r.method = method;
                r.counts.surrogate = cands.len() as u64;
                if method == Method::MfisHf {
                    r.counts.hf += split.training_size as u64;
                }
                r.counts.lf_model = lf_count;
                r
            }
            Method::Is => {
                return Err(Error::Config("method 'is' is not runnable from an experiment config".into()));
            }
        };
        report.seed = seed;
        report.wall_clock_secs = started.elapsed().as_secs_f64();
        Ok(report)
    }

    /// Mean CVaR of `benchmark.trials` standard Monte Carlo runs, or the
    /// configured value.
    pub fn benchmark(&self) -> Result<Option<f64>> {
        let b = &self.config.benchmark;
        if let Some(v) = b.value {
            return Ok(Some(v));
        }
        if !b.enabled {
            return Ok(None);
        }
        let estimates: Vec<f64> = (0..b.trials)
            .into_par_iter()
            .map(|k| {
                let seed = derive_seed(self.config.seed, TAG_BENCHMARK, k as u64);
                let xs = sample(&self.config.input, Scheme::Mc, b.samples, seed)?;
                Ok(mcs_estimate(&self.hf, &xs, self.config.risk.beta, seed)?.cvar_estimate)
            })
            .collect::<Result<_>>()?;
        Ok(Some(estimates.iter().sum::<f64>() / estimates.len() as f64))
    }

    /// All trials of `method`, run concurrently.
    pub fn run_trials(&self, method: Method) -> Result<Vec<RiskReport>> {
        (0..self.config.trials).into_par_iter().map(|k| self.run_method(method, k)).collect()
    }

    pub fn summarize(
        &self,
        method: Method,
        trials: Vec<RiskReport>,
        benchmark: Option<f64>,
    ) -> Result<ExperimentReport> {
        let estimates: Vec<f64> = trials.iter().map(|t| t.cvar_estimate).collect();
        let mean_cvar = estimates.iter().sum::<f64>() / estimates.len() as f64;
        let (mrd_percent, nrmsd_percent) = match benchmark {
            Some(b) => {
                let e = TrialEnsemble::new(estimates, b)?;
                (Some(mrd(&e)?), Some(nrmsd(&e)?))
            }
            None => (None, None),
        };
        Ok(ExperimentReport {
            label: self.config.label(),
            method,
            seed: self.config.seed,
            beta: self.config.risk.beta,
            alpha: self.config.risk.alpha,
            counts: trials.first().map(|t| t.counts).unwrap_or_default(),
            trials,
            mean_cvar,
            benchmark,
            mrd_percent,
            nrmsd_percent,
        })
    }

    /// Trials of the configured method, benchmark, and summary.
    pub fn run(&self) -> Result<ExperimentReport> {
        let trials = self.run_trials(self.config.method)?;
        let benchmark = self.benchmark()?;
        self.summarize(self.config.method, trials, benchmark)
    }
}
