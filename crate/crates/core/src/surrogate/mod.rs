//! DD-GPCE trend plus zero-mean Gaussian-process residual.
//!
//! The trend is `ĉᵀΨ(x)` on an [`OrthonormalBasis`]; the residual has
//! covariance `σ̂² R(θ)`. In [`Mode::DdGpceOnly`] the residual correlation is
//! the identity, so the trend is an ordinary least-squares fit and
//! predictions carry no variance.

mod kernel;
mod loo;
mod optimize;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::basis::{BasisScratch, OrthonormalBasis};
use crate::error::{invalid, Error, Result};
use crate::inputs::SampleSet;

pub(crate) use kernel::LowerTri;
pub use kernel::{autocorrelation, KernelKind, KernelSpec};
pub use loo::{loo_cv_objective, SINGULAR_PENALTY};
pub use optimize::{default_bounds, optimize_theta, ThetaOptimum, DEFAULT_RESTARTS};

/// Relative diagonal boost tried once when `R` fails to factorize.
pub const NUGGET: f64 = 1e-10;

/// Smallest accepted ratio of the extreme diagonal entries of the trend QR
/// factor.
const RANK_TOLERANCE: f64 = 1e-9;

/// Training inputs (row-major `len × dim`) and outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingData {
    dim: usize,
    inputs: Vec<f64>,
    outputs: Vec<f64>,
}

impl TrainingData {
    pub fn new(dim: usize, inputs: Vec<f64>, outputs: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("training inputs need at least one coordinate"));
        }
        if inputs.len() != dim * outputs.len() {
            return Err(invalid(format!(
                "{} input values do not form {} rows of dimension {dim}",
                inputs.len(),
                outputs.len()
            )));
        }
        if outputs.is_empty() {
            return Err(invalid("training data is empty"));
        }
        if let Some(i) = inputs.iter().chain(&outputs).position(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite training value at flat position {i}")));
        }
        Ok(Self { dim, inputs, outputs })
    }

    pub fn from_samples(samples: &SampleSet, outputs: Vec<f64>) -> Result<Self> {
        Self::new(samples.dim(), samples.flat_points().to_vec(), outputs)
    }

    pub fn len(&self) -> usize {
        self.outputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }

    pub fn point(&self, l: usize) -> &[f64] {
        &self.inputs[l * self.dim..(l + 1) * self.dim]
    }

    /// Hex SHA-256 of the dimension, inputs and outputs in little-endian bytes.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.dim as u64).to_le_bytes());
        h.update((self.len() as u64).to_le_bytes());
        for v in self.inputs.iter().chain(&self.outputs) {
            h.update(v.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// First pair of identical input rows, as `(smaller, larger)` indices.
    pub fn find_duplicate(&self) -> Option<(usize, usize)> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        let key = |l: usize| self.point(l);
        order.sort_by(|&a, &b| {
            key(a)
                .iter()
                .zip(key(b))
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        order.windows(2).filter(|w| key(w[0]) == key(w[1])).map(|w| (w[0].min(w[1]), w[0].max(w[1]))).min()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    DdGpceOnly,
    #[serde(alias = "dd_gpce_kriging")]
    Kriging,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dd_gpce_only" | "dd-gpce" => Ok(Self::DdGpceOnly),
            "kriging" | "dd_gpce_kriging" | "dd-gpce-kriging" => Ok(Self::Kriging),
            other => Err(invalid(format!("unknown surrogate mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::DdGpceOnly => "dd_gpce_only",
            Self::Kriging => "dd_gpce_kriging",
        })
    }
}

/// Fitting controls. `theta` skips the length-scale search when set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub kernel: KernelKind,
    pub mode: Mode,
    pub theta: Option<Vec<f64>>,
    pub bounds: Option<Vec<(f64, f64)>>,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            kernel: KernelKind::Gaussian,
            mode: Mode::Kriging,
            theta: None,
            bounds: None,
            restarts: DEFAULT_RESTARTS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitProvenance {
    pub bounds: Option<Vec<(f64, f64)>>,
    pub restarts: usize,
    pub seed: u64,
    pub loo_objective: Option<f64>,
    pub optimizer_evaluations: usize,
    /// Diagonal boost applied to `R`, if any.
    pub nugget: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
    /// True when a slightly negative variance was rounded up to zero.
    pub clamped: bool,
}

/// Cached factorizations. `chol` factors `R`; `trend` is the transposed
/// triangular factor of the QR decomposition of `L⁻¹A`, so that
/// `AᵀR⁻¹A = trend·trendᵀ`.
#[derive(Debug, Clone)]
struct Factors {
    chol: LowerTri,
    a_tilde: Vec<f64>,
    trend: LowerTri,
    alpha: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FittedSurrogate {
    mode: Mode,
    kernel: Option<KernelSpec>,
    basis: OrthonormalBasis,
    data: TrainingData,
    coefficients: Vec<f64>,
    process_variance: f64,
    provenance: FitProvenance,
    factors: Factors,
}

impl FittedSurrogate {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Correlation kernel at the selected length scales (kriging mode only).
    pub fn kernel(&self) -> Option<&KernelSpec> {
        self.kernel.as_ref()
    }

    pub fn basis(&self) -> &OrthonormalBasis {
        &self.basis
    }

    pub fn training_data(&self) -> &TrainingData {
        &self.data
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn process_variance(&self) -> f64 {
        self.process_variance
    }

    pub fn provenance(&self) -> &FitProvenance {
        &self.provenance
    }

    /// Predictor mean and variance at `x`.
    pub fn predict(&self, x: &[f64]) -> Prediction {
        self.predict_with(x, &mut PredictScratch::default())
    }

    /// Predictions at every row of a row-major point array.
    pub fn predict_many(&self, points: &[f64]) -> Vec<Prediction> {
        let n = self.basis.dim();
        points
            .par_chunks(n * 256)
            .flat_map_iter(|block| {
                let mut scratch = PredictScratch::default();
                block.chunks(n).map(|x| self.predict_with(x, &mut scratch)).collect::<Vec<_>>()
            })
            .collect()
    }

    fn predict_with(&self, x: &[f64], s: &mut PredictScratch) -> Prediction {
        let l = self.basis.len();
        s.psi.resize(l, 0.0);
        self.basis.eval_into(x, &mut s.basis, &mut s.psi);
        let trend: f64 = s.psi.iter().zip(&self.coefficients).map(|(p, c)| p * c).sum();
        let kernel = match (&self.mode, &self.kernel) {
            (Mode::Kriging, Some(k)) => k,
            _ => return Prediction { mean: trend, variance: 0.0, clamped: false },
        };
        let f = &self.factors;
        let n = self.data.len();
        s.r.clear();
        s.r.extend((0..n).map(|i| kernel.correlation(x, self.data.point(i))));
        let mean = trend + kernel::dot2(&s.r, &f.alpha);

        // v = L⁻¹r, u = Ãᵀv − Ψ, w = T⁻¹u
        f.chol.forward(&mut s.r);
        let vv: f64 = s.r.iter().map(|v| v * v).sum();
        s.u.clear();
        s.u.extend(s.psi.iter().map(|p| -p));
        for (i, v) in s.r.iter().enumerate() {
            let row = &f.a_tilde[i * l..(i + 1) * l];
            for (u, a) in s.u.iter_mut().zip(row) {
                *u += v * a;
            }
        }
        f.trend.forward(&mut s.u);
        let ww: f64 = s.u.iter().map(|v| v * v).sum();
        let raw = self.process_variance * (1.0 - vv + ww);
        if raw < 0.0 {
            Prediction { mean, variance: 0.0, clamped: true }
        } else {
            Prediction { mean, variance: raw, clamped: false }
        }
    }

    /// Unclamped variance, for diagnostics.
    pub fn raw_variance(&self, x: &[f64]) -> f64 {
        let p = self.predict(x);
        if !p.clamped {
            return p.variance;
        }
        let kernel = self.kernel.as_ref().expect("clamping only happens in kriging mode");
        let f = &self.factors;
        let mut r: Vec<f64> = (0..self.data.len()).map(|i| kernel.correlation(x, self.data.point(i))).collect();
        f.chol.forward(&mut r);
        let l = self.basis.len();
        let mut u: Vec<f64> = self.basis.eval(x).iter().map(|p| -p).collect();
        for (i, v) in r.iter().enumerate() {
            for (j, uj) in u.iter_mut().enumerate() {
                *uj += v * f.a_tilde[i * l + j];
            }
        }
        f.trend.forward(&mut u);
        self.process_variance * (1.0 - r.iter().map(|v| v * v).sum::<f64>() + u.iter().map(|v| v * v).sum::<f64>())
    }
}

#[derive(Debug, Default)]
struct PredictScratch {
    basis: BasisScratch,
    psi: Vec<f64>,
    r: Vec<f64>,
    u: Vec<f64>,
}

/// Fits the surrogate to `data` on `basis`.
pub fn fit(data: &TrainingData, basis: &OrthonormalBasis, options: &FitOptions) -> Result<FittedSurrogate> {
    if data.dim() != basis.dim() {
        return Err(invalid(format!("training inputs have dimension {}, basis expects {}", data.dim(), basis.dim())));
    }
    if data.len() < basis.len() {
        return Err(Error::Conditioning(format!(
            "{} training samples cannot determine {} basis coefficients; add samples or reduce the basis",
            data.len(),
            basis.len()
        )));
    }
    let mut provenance = FitProvenance {
        bounds: None,
        restarts: options.restarts,
        seed: options.seed,
        loo_objective: None,
        optimizer_evaluations: 0,
        nugget: None,
        warnings: Vec::new(),
    };
    let kernel = match options.mode {
        Mode::DdGpceOnly => None,
        Mode::Kriging => {
            if let Some((first, second)) = data.find_duplicate() {
                return Err(Error::DegenerateTrainingData { first, second });
            }
            let theta = match &options.theta {
                Some(theta) => theta.clone(),
                None => {
                    let bounds = match &options.bounds {
                        Some(b) => b.clone(),
                        None => default_bounds(data),
                    };
                    let found = optimize_theta(data, options.kernel, &bounds, options.restarts, options.seed);
                    let theta = match found {
                        Ok(opt) => {
                            provenance.loo_objective = Some(opt.objective);
                            provenance.optimizer_evaluations = opt.evaluations;
                            provenance.warnings.extend(opt.warning);
                            opt.theta
                        }
                        Err(Error::Optimization(msg)) => {
                            log::warn!("length-scale search failed, using lower bounds: {msg}");
                            provenance.warnings.push(format!("length-scale search failed ({msg}); using lower bounds"));
                            bounds.iter().map(|b| b.0).collect()
                        }
                        Err(e) => return Err(e),
                    };
                    provenance.bounds = Some(bounds);
                    theta
                }
            };
            Some(KernelSpec::new(options.kernel, theta)?)
        }
    };
    assemble(data.clone(), basis.clone(), options.mode, kernel, provenance, None)
}

/// Factorizes and solves for the coefficients. `nugget` forces a diagonal
/// boost; otherwise one is applied only if plain factorization fails.
fn assemble(
    data: TrainingData,
    basis: OrthonormalBasis,
    mode: Mode,
    kernel: Option<KernelSpec>,
    mut provenance: FitProvenance,
    nugget: Option<f64>,
) -> Result<FittedSurrogate> {
    let n = data.len();
    let l = basis.len();
    let mut packed = None;
    let chol = match &kernel {
        None => LowerTri::identity(n),
        Some(k) => {
            let first = nugget.unwrap_or(0.0);
            let r = kernel::packed_correlation(k, data.inputs(), data.dim(), first);
            match LowerTri::cholesky(r.clone(), n) {
                Ok(c) => {
                    provenance.nugget = nugget;
                    packed = Some(r);
                    c
                }
                Err(pivot) if nugget.is_none() => {
                    log::warn!("correlation matrix not positive definite at pivot {pivot}; adding nugget {NUGGET}");
                    let r = kernel::packed_correlation(k, data.inputs(), data.dim(), NUGGET);
                    let c = LowerTri::cholesky(r.clone(), n).map_err(|pivot| Error::NotPositiveDefinite {
                        pivot,
                        context: format!("correlation matrix with nugget {NUGGET}"),
                    })?;
                    provenance.nugget = Some(NUGGET);
                    provenance.warnings.push(format!("nugget {NUGGET} added to the correlation matrix"));
                    packed = Some(r);
                    c
                }
                Err(pivot) => return Err(Error::NotPositiveDefinite { pivot, context: "correlation matrix".into() }),
            }
        }
    };

    // Ã = L⁻¹A column by column, b̃ = L⁻¹b
    let points: Vec<&[f64]> = (0..n).map(|i| data.point(i)).collect();
    let design = crate::basis::design_matrix(&basis, &points);
    let mut a = design.clone();
    if kernel.is_some() {
        let mut col = vec![0.0; n];
        for j in 0..l {
            col.copy_from_slice(a.column(j).as_slice());
            chol.forward(&mut col);
            a.column_mut(j).copy_from_slice(&col);
        }
    }
    let mut b_tilde = data.outputs().to_vec();
    chol.forward(&mut b_tilde);

    let qr = a.clone().qr();
    let r = qr.r();
    let diag: Vec<f64> = (0..l).map(|i| r[(i, i)].abs()).collect();
    let dmax = diag.iter().cloned().fold(0.0, f64::max);
    let dmin = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(dmin > RANK_TOLERANCE * dmax) {
        return Err(Error::Conditioning(format!(
            "trend system is rank deficient (diagonal ratio {:.3e}); add samples or reduce the basis",
            dmin / dmax
        )));
    }
    let trend = LowerTri::from_fn(l, |i, j| r[(j, i)]);
    let qtb = qr.q().tr_mul(&DMatrix::from_column_slice(n, 1, &b_tilde));
    let mut coefficients: Vec<f64> = qtb.column(0).iter().cloned().collect();
    trend.backward_transpose(&mut coefficients);

    // e = b − Aĉ summed in the same order as the predictor trend, so the
    // predictor reproduces b at the training inputs
    let resid: Vec<f64> = (0..n)
        .map(|i| {
            let t: f64 = design.row(i).iter().zip(&coefficients).map(|(p, c)| p * c).sum();
            data.outputs()[i] - t
        })
        .collect();
    let mut whitened = resid.clone();
    chol.forward(&mut whitened);
    let process_variance = whitened.iter().map(|e| e * e).sum::<f64>() / n as f64;
    let alpha = match &packed {
        Some(p) => kernel::refined_solve(p, &chol, &resid),
        None => resid,
    };

    let mut a_tilde = vec![0.0; n * l];
    for i in 0..n {
        for j in 0..l {
            a_tilde[i * l + j] = a[(i, j)];
        }
    }
    Ok(FittedSurrogate {
        mode,
        kernel,
        basis,
        data,
        coefficients,
        process_variance,
        provenance,
        factors: Factors { chol, a_tilde, trend, alpha },
    })
}

const ARTIFACT_KIND: &str = "mfcvar-surrogate";

#[derive(Serialize, Deserialize)]
struct SurrogatePayload {
    mode: Mode,
    kernel: Option<KernelSpec>,
    basis: OrthonormalBasis,
    training_data: TrainingData,
    training_digest: String,
    coefficients: Vec<f64>,
    process_variance: f64,
    provenance: FitProvenance,
}

impl FittedSurrogate {
    /// Versioned JSON artifact.
    pub fn to_artifact(&self) -> Result<String> {
        crate::artifact::to_json(
            ARTIFACT_KIND,
            &SurrogatePayload {
                mode: self.mode,
                kernel: self.kernel.clone(),
                basis: self.basis.clone(),
                training_data: self.data.clone(),
                training_digest: self.data.digest(),
                coefficients: self.coefficients.clone(),
                process_variance: self.process_variance,
                provenance: self.provenance.clone(),
            },
        )
    }

    /// Restores a surrogate saved by [`FittedSurrogate::to_artifact`],
    /// refactorizing at the stored length scales.
    pub fn from_artifact(text: &str) -> Result<Self> {
        let p: SurrogatePayload = crate::artifact::from_json(ARTIFACT_KIND, text)?;
        let digest = p.training_data.digest();
        if digest != p.training_digest {
            return Err(Error::IncompatibleArtifact(format!(
                "training data digest {digest} does not match recorded {}",
                p.training_digest
            )));
        }
        let nugget = p.provenance.nugget;
        let fitted = assemble(p.training_data, p.basis, p.mode, p.kernel, p.provenance, nugget)?;
        let drift = fitted
            .coefficients
            .iter()
            .zip(&p.coefficients)
            .map(|(a, b)| (a - b).abs() / (1.0 + b.abs()))
            .fold(0.0, f64::max);
        if p.coefficients.len() != fitted.coefficients.len() || drift > 1e-8 {
            return Err(Error::IncompatibleArtifact(format!("stored coefficients differ from refit by {drift:.3e}")));
        }
        Ok(fitted)
    }
}
