//! Joint input distributions and samplers.
//!
//! Dependence is carried by a Gaussian correlation matrix acting on the
//! standard-normal images of the marginals. For Gaussian marginals this is
//! exactly the multivariate normal law; for lognormal marginals the
//! correlation lives in the underlying Gaussian space.

mod lhs;
pub mod sobol;

use std::fmt;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
pub use lhs::lhs_unit;
pub use sobol::Sobol;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Block size for parallel generation. Each block owns a derived RNG stream,
/// so output does not depend on the number of worker threads.
const SAMPLE_BLOCK: usize = 2048;

/// Marginal distribution of one input coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Marginal {
    Gaussian {
        mean: f64,
        std: f64,
    },
    Uniform {
        lower: f64,
        upper: f64,
    },
    /// Lognormal given by its own mean and coefficient of variation in percent.
    Lognormal {
        mean: f64,
        cov_percent: f64,
    },
}

impl Marginal {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Marginal::Gaussian { mean, std } => mean.is_finite() && std.is_finite() && std > 0.0,
            Marginal::Uniform { lower, upper } => lower.is_finite() && upper.is_finite() && lower < upper,
            Marginal::Lognormal { mean, cov_percent } => {
                mean.is_finite() && mean > 0.0 && cov_percent.is_finite() && cov_percent > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidModel(format!("bad marginal parameters: {self:?}")))
        }
    }

    /// (mu, sigma) of the underlying normal for a lognormal marginal.
    fn log_params(mean: f64, cov_percent: f64) -> (f64, f64) {
        let cov = cov_percent / 100.0;
        let var = (1.0 + cov * cov).ln();
        (mean.ln() - 0.5 * var, var.sqrt())
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Marginal::Gaussian { mean, .. } => mean,
            Marginal::Uniform { lower, upper } => 0.5 * (lower + upper),
            Marginal::Lognormal { mean, .. } => mean,
        }
    }

    pub fn std(&self) -> f64 {
        match *self {
            Marginal::Gaussian { std, .. } => std,
            Marginal::Uniform { lower, upper } => (upper - lower) / 12f64.sqrt(),
            Marginal::Lognormal { mean, cov_percent } => mean * cov_percent / 100.0,
        }
    }

    /// Maps a standard-normal value to this marginal.
    fn from_standard(&self, z: f64) -> f64 {
        match *self {
            Marginal::Gaussian { mean, std } => mean + std * z,
            Marginal::Uniform { lower, upper } => lower + (upper - lower) * std_normal().cdf(z),
            Marginal::Lognormal { mean, cov_percent } => {
                let (mu, sigma) = Self::log_params(mean, cov_percent);
                (mu + sigma * z).exp()
            }
        }
    }

    /// Inverse of [`Marginal::from_standard`]; `None` outside the support.
    fn to_standard(&self, x: f64) -> Option<f64> {
        match *self {
            Marginal::Gaussian { mean, std } => Some((x - mean) / std),
            Marginal::Uniform { lower, upper } => {
                let u = (x - lower) / (upper - lower);
                (u > 0.0 && u < 1.0).then(|| std_normal().inverse_cdf(u))
            }
            Marginal::Lognormal { mean, cov_percent } => {
                if x <= 0.0 {
                    return None;
                }
                let (mu, sigma) = Self::log_params(mean, cov_percent);
                Some((x.ln() - mu) / sigma)
            }
        }
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        match *self {
            Marginal::Gaussian { mean, std } => {
                let z = (x - mean) / std;
                -LN_SQRT_2PI - std.ln() - 0.5 * z * z
            }
            Marginal::Uniform { lower, upper } => {
                if x >= lower && x <= upper {
                    -(upper - lower).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            Marginal::Lognormal { mean, cov_percent } => {
                if x <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                let (mu, sigma) = Self::log_params(mean, cov_percent);
                let z = (x.ln() - mu) / sigma;
                -LN_SQRT_2PI - (x * sigma).ln() - 0.5 * z * z
            }
        }
    }

    /// log f(x) - log phi(z) for the standard-normal image z of x.
    fn log_jacobian(&self, x: f64, z: f64) -> f64 {
        match *self {
            Marginal::Gaussian { std, .. } => -std.ln(),
            Marginal::Uniform { lower, upper } => -(upper - lower).ln() + LN_SQRT_2PI + 0.5 * z * z,
            Marginal::Lognormal { mean, cov_percent } => {
                let (_, sigma) = Self::log_params(mean, cov_percent);
                -(x * sigma).ln()
            }
        }
    }
}

pub(crate) fn std_normal() -> Normal {
    Normal::standard()
}

/// A group of mutually dependent coordinates with the Cholesky factor of
/// their correlation sub-matrix.
#[derive(Debug, Clone)]
struct DependentGroup {
    indices: Vec<usize>,
    chol: DMatrix<f64>,
    log_det: f64,
}

#[derive(Serialize, Deserialize)]
struct InputModelRepr {
    marginals: Vec<Marginal>,
    correlation: Vec<Vec<f64>>,
}

/// Joint distribution of the N-dimensional input vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "InputModelRepr", into = "InputModelRepr")]
pub struct InputModel {
    marginals: Vec<Marginal>,
    correlation: DMatrix<f64>,
    chol: DMatrix<f64>,
    groups: Vec<DependentGroup>,
}

impl TryFrom<InputModelRepr> for InputModel {
    type Error = Error;

    fn try_from(repr: InputModelRepr) -> Result<Self> {
        let n = repr.marginals.len();
        if repr.correlation.len() != n || repr.correlation.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidModel(format!("correlation matrix must be {n}x{n}")));
        }
        let corr = DMatrix::from_fn(n, n, |i, j| repr.correlation[i][j]);
        InputModel::new(repr.marginals, corr)
    }
}

impl From<InputModel> for InputModelRepr {
    fn from(model: InputModel) -> Self {
        let n = model.dimension();
        InputModelRepr {
            correlation: (0..n).map(|i| (0..n).map(|j| model.correlation[(i, j)]).collect()).collect(),
            marginals: model.marginals,
        }
    }
}

impl InputModel {
    pub fn new(marginals: Vec<Marginal>, correlation: DMatrix<f64>) -> Result<Self> {
        let n = marginals.len();
        if n == 0 {
            return Err(Error::InvalidModel("dimension must be positive".into()));
        }
        for m in &marginals {
            m.validate()?;
        }
        if correlation.nrows() != n || correlation.ncols() != n {
            return Err(Error::InvalidModel(format!("correlation matrix must be {n}x{n}")));
        }
        for i in 0..n {
            if (correlation[(i, i)] - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidModel(format!(
                    "correlation diagonal entry {i} is {}, expected 1",
                    correlation[(i, i)]
                )));
            }
            for j in 0..i {
                let (a, b) = (correlation[(i, j)], correlation[(j, i)]);
                if !a.is_finite() || (a - b).abs() > 1e-12 {
                    return Err(Error::InvalidModel(format!("correlation matrix is not symmetric at ({i}, {j})")));
                }
                if a.abs() >= 1.0 {
                    return Err(Error::InvalidModel(format!("degenerate correlation {a} between inputs {j} and {i}")));
                }
            }
        }
        let chol = cholesky_lower(&correlation).map_err(|pivot| {
            Error::InvalidModel(format!("correlation matrix is not positive definite (pivot {pivot})"))
        })?;
        let groups = dependent_groups(&correlation)
            .into_iter()
            .map(|indices| {
                let sub = DMatrix::from_fn(indices.len(), indices.len(), |a, b| correlation[(indices[a], indices[b])]);
                let chol = cholesky_lower(&sub).expect("principal sub-matrix of a PD matrix");
                let log_det = 2.0 * chol.diagonal().iter().map(|d| d.ln()).sum::<f64>();
                DependentGroup { indices, chol, log_det }
            })
            .collect();
        Ok(Self { marginals, correlation, chol, groups })
    }

    pub fn independent(marginals: Vec<Marginal>) -> Result<Self> {
        let n = marginals.len();
        Self::new(marginals, DMatrix::identity(n, n))
    }

    /// Zero-mean bivariate Gaussian with common standard deviation.
    pub fn bivariate_gaussian(std: f64, rho: f64) -> Result<Self> {
        let corr = DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]);
        Self::new(vec![Marginal::Gaussian { mean: 0.0, std }; 2], corr)
    }

    pub fn dimension(&self) -> usize {
        self.marginals.len()
    }

    pub fn marginals(&self) -> &[Marginal] {
        &self.marginals
    }

    pub fn correlation(&self) -> &DMatrix<f64> {
        &self.correlation
    }

    /// Maps iid standard normals to a point of the joint law (in place).
    fn color(&self, xi: &mut [f64], scratch: &mut [f64]) {
        let n = self.dimension();
        for i in 0..n {
            let mut acc = 0.0;
            for k in 0..=i {
                acc += self.chol[(i, k)] * xi[k];
            }
            scratch[i] = acc;
        }
        for i in 0..n {
            xi[i] = self.marginals[i].from_standard(scratch[i]);
        }
    }

    /// Natural log of the joint density at `x`; `-inf` outside the support.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.dimension(), "point dimension mismatch");
        let mut total = 0.0;
        for group in &self.groups {
            if group.indices.len() == 1 {
                let i = group.indices[0];
                total += self.marginals[i].log_pdf(x[i]);
                continue;
            }
            let k = group.indices.len();
            let mut z = DVector::zeros(k);
            for (a, &i) in group.indices.iter().enumerate() {
                match self.marginals[i].to_standard(x[i]) {
                    Some(v) if v.is_finite() => z[a] = v,
                    _ => return f64::NEG_INFINITY,
                }
                total += self.marginals[i].log_jacobian(x[i], z[a]);
            }
            let w = group.chol.solve_lower_triangular(&z).expect("cholesky factor has positive diagonal");
            total += -(k as f64) * LN_SQRT_2PI - 0.5 * group.log_det - 0.5 * w.norm_squared();
        }
        total
    }
}

/// Connected components of the nonzero off-diagonal pattern.
fn dependent_groups(corr: &DMatrix<f64>) -> Vec<Vec<usize>> {
    let n = corr.nrows();
    let mut label = vec![usize::MAX; n];
    let mut groups = Vec::new();
    for start in 0..n {
        if label[start] != usize::MAX {
            continue;
        }
        let id = groups.len();
        let mut members = vec![start];
        label[start] = id;
        let mut cursor = 0;
        while cursor < members.len() {
            let i = members[cursor];
            cursor += 1;
            for j in 0..n {
                if label[j] == usize::MAX && corr[(i, j)] != 0.0 {
                    label[j] = id;
                    members.push(j);
                }
            }
        }
        members.sort_unstable();
        groups.push(members);
    }
    groups
}

/// Lower Cholesky factor, or the failing pivot index.
pub(crate) fn cholesky_lower(a: &DMatrix<f64>) -> std::result::Result<DMatrix<f64>, usize> {
    let n = a.nrows();
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(j);
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Sampling scheme for input realizations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Mc,
    Sobol,
    Lhs,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Mc => "mc",
            Scheme::Sobol => "sobol",
            Scheme::Lhs => "lhs",
        })
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mc" => Ok(Scheme::Mc),
            "sobol" => Ok(Scheme::Sobol),
            "lhs" => Ok(Scheme::Lhs),
            other => Err(crate::error::invalid(format!("unknown sampling scheme '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleProvenance {
    pub scheme: Scheme,
    pub seed: u64,
    /// Sobol points skipped after the all-zeros point.
    pub skip: u64,
}

/// L realizations of the input vector with their probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    dim: usize,
    points: Vec<f64>,
    probabilities: Vec<f64>,
    provenance: SampleProvenance,
}

impl SampleSet {
    /// Wraps externally supplied points as an equally weighted sample.
    pub fn from_points(dim: usize, points: Vec<f64>, provenance: SampleProvenance) -> Result<Self> {
        if dim == 0 || points.is_empty() || points.len() % dim != 0 {
            return Err(crate::error::invalid("points must form a non-empty L x N matrix"));
        }
        let len = points.len() / dim;
        Ok(Self { dim, points, probabilities: vec![1.0 / len as f64; len], provenance })
    }

    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, l: usize) -> &[f64] {
        &self.points[l * self.dim..(l + 1) * self.dim]
    }

    pub fn points(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.points.chunks_exact(self.dim)
    }

    pub fn flat_points(&self) -> &[f64] {
        &self.points
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn provenance(&self) -> SampleProvenance {
        self.provenance
    }

    /// True when every point carries the same probability 1/L.
    pub fn is_uniform(&self) -> bool {
        let p = 1.0 / self.len() as f64;
        self.probabilities.iter().all(|&q| q == p)
    }

    /// Column `j` as a vector.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.points().map(|p| p[j]).collect()
    }

    /// Sub-sample with the given rows, re-weighted as an empirical measure.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        let points = rows.iter().flat_map(|&l| self.point(l).iter().copied()).collect();
        Self::from_points(self.dim, points, self.provenance)
    }

    /// Writes `x1,...,xN,p` CSV.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = (1..=self.dim).map(|i| format!("x{i}")).collect();
        header.push("p".into());
        w.write_record(&header)?;
        for (point, p) in self.points().zip(&self.probabilities) {
            let mut row: Vec<String> = point.iter().map(|v| format!("{v:e}")).collect();
            row.push(format!("{p:e}"));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Derived RNG for block `block` of a seeded stream.
pub(crate) fn block_rng(seed: u64, block: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(block);
    rng
}

/// Draws `count` realizations of `model`.
pub fn sample(model: &InputModel, scheme: Scheme, count: usize, seed: u64) -> Result<SampleSet> {
    sample_with_skip(model, scheme, count, seed, 0)
}

/// As [`sample`]; for Sobol, additionally skips `skip` points after the
/// all-zeros point so that disjoint quasi-random streams can be drawn.
pub fn sample_with_skip(model: &InputModel, scheme: Scheme, count: usize, seed: u64, skip: u64) -> Result<SampleSet> {
    if count == 0 {
        return Err(crate::error::invalid("sample count must be at least 1"));
    }
    let n = model.dimension();
    let mut points = vec![0.0; count * n];
    match scheme {
        Scheme::Mc => {
            points.par_chunks_mut(SAMPLE_BLOCK * n).enumerate().for_each(|(block, chunk)| {
                let mut rng = block_rng(seed, block as u64);
                let mut scratch = vec![0.0; n];
                for row in chunk.chunks_exact_mut(n) {
                    for v in row.iter_mut() {
                        *v = StandardNormal.sample(&mut rng);
                    }
                    model.color(row, &mut scratch);
                }
            });
        }
        Scheme::Sobol => {
            let sobol = Sobol::new(n)?;
            points.par_chunks_mut(SAMPLE_BLOCK * n).enumerate().try_for_each(|(block, chunk)| -> Result<()> {
                let start = 1 + skip + (block * SAMPLE_BLOCK) as u64;
                sobol.fill(start, chunk.len() / n, chunk)?;
                uniforms_to_model(model, chunk);
                Ok(())
            })?;
        }
        Scheme::Lhs => {
            let unit = lhs_unit(count, n, seed);
            points.copy_from_slice(&unit);
            uniforms_to_model(model, &mut points);
        }
    }
    Ok(SampleSet {
        dim: n,
        points,
        probabilities: vec![1.0 / count as f64; count],
        provenance: SampleProvenance { scheme, seed, skip },
    })
}

fn uniforms_to_model(model: &InputModel, flat: &mut [f64]) {
    let n = model.dimension();
    let normal = std_normal();
    let mut scratch = vec![0.0; n];
    for row in flat.chunks_exact_mut(n) {
        for u in row.iter_mut() {
            *u = normal.inverse_cdf(*u);
        }
        model.color(row, &mut scratch);
    }
}

/// Natural log of the joint density (free-function form).
pub fn log_density(model: &InputModel, x: &[f64]) -> f64 {
    model.log_density(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ex1() -> InputModel {
        InputModel::bivariate_gaussian(2.0, 0.9).unwrap()
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for (x, y) in a.iter().zip(b) {
            sab += (x - ma) * (y - mb);
            saa += (x - ma).powi(2);
            sbb += (y - mb).powi(2);
        }
        sab / (saa * sbb).sqrt()
    }

    #[test]
    fn sobol_uniform_first_points() {
        let model = InputModel::independent(vec![Marginal::Uniform { lower: 0.0, upper: 1.0 }]).unwrap();
        let s = sample(&model, Scheme::Sobol, 3, 0).unwrap();
        let col = s.column(0);
        for (got, want) in col.iter().zip([0.5, 0.75, 0.25]) {
            assert_relative_eq!(*got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn mc_correlation_matches_target() {
        let s = sample(&ex1(), Scheme::Mc, 100_000, 7).unwrap();
        let r = pearson(&s.column(0), &s.column(1));
        assert!((r - 0.9).abs() < 0.01, "empirical correlation {r}");
    }

    #[test]
    fn single_sample_has_unit_probability() {
        let s = sample(&ex1(), Scheme::Mc, 1, 3).unwrap();
        assert_eq!(s.probabilities(), &[1.0]);
    }

    #[test]
    fn coloring_reproduces_covariance() {
        let l = 1_000_000;
        let s = sample(&ex1(), Scheme::Mc, l, 11).unwrap();
        let target = [[4.0, 3.6], [3.6, 4.0]];
        let cols = [s.column(0), s.column(1)];
        for i in 0..2 {
            for j in 0..2 {
                let prod: Vec<f64> = cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).collect();
                let mean = prod.iter().sum::<f64>() / l as f64;
                let var = prod.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / l as f64;
                let se = (var / l as f64).sqrt();
                assert!((mean - target[i][j]).abs() < 3.0 * se, "cov[{i}][{j}] = {mean}, se {se}");
            }
        }
    }

    #[test]
    fn sobol_marginals_pass_ks() {
        let model = InputModel::new(
            vec![
                Marginal::Gaussian { mean: 1.0, std: 2.0 },
                Marginal::Uniform { lower: -1.0, upper: 3.0 },
                Marginal::Lognormal { mean: 5.0, cov_percent: 20.0 },
            ],
            DMatrix::identity(3, 3),
        )
        .unwrap();
        let s = sample(&model, Scheme::Sobol, 100_000, 0).unwrap();
        let normal = std_normal();
        let cdfs: [Box<dyn Fn(f64) -> f64>; 3] = [
            Box::new(move |x| normal.cdf((x - 1.0) / 2.0)),
            Box::new(|x| ((x + 1.0) / 4.0).clamp(0.0, 1.0)),
            Box::new(move |x: f64| {
                let (mu, sigma) = Marginal::log_params(5.0, 20.0);
                normal.cdf((x.ln() - mu) / sigma)
            }),
        ];
        for (j, cdf) in cdfs.iter().enumerate() {
            let mut col = s.column(j);
            col.sort_by(f64::total_cmp);
            let n = col.len() as f64;
            let ks = col
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    let f = cdf(x);
                    (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
                })
                .fold(0.0, f64::max);
            assert!(ks < 0.01, "KS statistic {ks} for marginal {j}");
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        for scheme in [Scheme::Mc, Scheme::Sobol, Scheme::Lhs] {
            let a = sample(&ex1(), scheme, 5000, 42).unwrap();
            let b = sample(&ex1(), scheme, 5000, 42).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn mc_output_independent_of_thread_count() {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let a = pool.install(|| sample(&ex1(), Scheme::Mc, 10_000, 5).unwrap());
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| sample(&ex1(), Scheme::Mc, 10_000, 5).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn log_density_examples() {
        let std_normal_model = InputModel::independent(vec![Marginal::Gaussian { mean: 0.0, std: 1.0 }]).unwrap();
        assert_relative_eq!(
            std_normal_model.log_density(&[0.0]),
            (1.0 / (2.0 * std::f64::consts::PI).sqrt()).ln(),
            epsilon = 1e-14
        );

        let unit = InputModel::independent(vec![Marginal::Uniform { lower: 0.0, upper: 1.0 }]).unwrap();
        assert_eq!(unit.log_density(&[0.5]), 0.0);
        assert_eq!(unit.log_density(&[1.5]), f64::NEG_INFINITY);

        let expected = -(2.0 * std::f64::consts::PI * 4.0 * (1.0f64 - 0.81).sqrt()).ln();
        assert_relative_eq!(ex1().log_density(&[0.0, 0.0]), expected, epsilon = 1e-12);
    }

    #[test]
    fn bivariate_density_off_origin_matches_closed_form() {
        let (x, y, s, r) = (1.3, -0.4, 2.0, 0.9);
        let q = (x * x - 2.0 * r * x * y + y * y) / (s * s * (1.0 - r * r));
        let expected = -(2.0 * std::f64::consts::PI * s * s * (1.0f64 - r * r).sqrt()).ln() - 0.5 * q;
        assert_relative_eq!(ex1().log_density(&[x, y]), expected, epsilon = 1e-12);
    }

    #[test]
    fn correlated_lognormal_density_matches_change_of_variables() {
        let corr = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let m = Marginal::Lognormal { mean: 10.0, cov_percent: 10.0 };
        let model = InputModel::new(vec![m, m], corr).unwrap();
        let gauss = InputModel::new(
            {
                let (mu, sigma) = Marginal::log_params(10.0, 10.0);
                vec![Marginal::Gaussian { mean: mu, std: sigma }; 2]
            },
            DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]),
        )
        .unwrap();
        let x = [9.5f64, 11.2];
        let expected = gauss.log_density(&[x[0].ln(), x[1].ln()]) - x[0].ln() - x[1].ln();
        assert_relative_eq!(model.log_density(&x), expected, epsilon = 1e-12);
    }

    #[test]
    fn lognormal_moments_match_parameters() {
        let model = InputModel::independent(vec![Marginal::Lognormal { mean: 3.0, cov_percent: 15.0 }]).unwrap();
        let s = sample(&model, Scheme::Sobol, 200_000, 0).unwrap();
        let col = s.column(0);
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64).sqrt();
        assert!((mean - 3.0).abs() < 1e-3);
        assert!((sd / mean - 0.15).abs() < 1e-3);
    }

    #[test]
    fn rejects_invalid_models() {
        assert!(InputModel::bivariate_gaussian(2.0, 1.0).is_err());
        assert!(InputModel::bivariate_gaussian(-1.0, 0.0).is_err());
        assert!(InputModel::independent(vec![Marginal::Uniform { lower: 1.0, upper: 1.0 }]).is_err());
        assert!(InputModel::independent(vec![Marginal::Lognormal { mean: -1.0, cov_percent: 5.0 }]).is_err());
        let not_pd = DMatrix::from_row_slice(3, 3, &[1.0, 0.9, -0.9, 0.9, 1.0, 0.9, -0.9, 0.9, 1.0]);
        assert!(InputModel::new(vec![Marginal::Gaussian { mean: 0.0, std: 1.0 }; 3], not_pd).is_err());
    }

    #[test]
    fn serde_round_trip() {
        let json = serde_json::to_string(&ex1()).unwrap();
        let back: InputModel = serde_json::from_str(&json).unwrap();
        assert_eq!(back.correlation(), ex1().correlation());
        assert_eq!(back.marginals(), ex1().marginals());
    }

    #[test]
    fn csv_export_has_header() {
        let s = sample(&ex1(), Scheme::Mc, 2, 1).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x1,x2,p\n"));
        assert_eq!(text.lines().count(), 3);
    }
}
