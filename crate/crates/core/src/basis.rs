//! Measure-consistent orthonormal polynomial bases.
//!
//! A basis is built in three steps: enumerate the reduced multi-index set,
//! estimate the monomial moment matrix `G = E[M(X) M(X)^T]` by quasi-Monte
//! Carlo, then whiten with the inverse lower Cholesky factor of `G`. The
//! resulting polynomials `Psi(x) = W M(x)` are orthonormal under the input
//! law, whatever its dependence structure.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::inputs::{cholesky_lower, sample_with_skip, InputModel, Scheme};

/// Quasi-MC points per accumulation block.
const MOMENT_BLOCK: usize = 1 << 16;

/// Default quadrature size for moment matrices.
pub const DEFAULT_QUADRATURE: usize = 1_000_000;

/// Ordered reduced multi-index set.
///
/// Indices are graded by total degree; within a degree they are ordered
/// lexicographically with higher powers of earlier coordinates first. The
/// zero index always comes first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiIndexSet {
    dim: usize,
    interaction: usize,
    degree: usize,
    indices: Vec<Vec<u32>>,
}

impl MultiIndexSet {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn interaction(&self) -> usize {
        self.interaction
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[Vec<u32>] {
        &self.indices
    }

    /// Number of indices of total degree at most `degree`.
    pub fn graded_prefix_len(&self, degree: usize) -> usize {
        self.indices.iter().take_while(|j| j.iter().sum::<u32>() as usize <= degree).count()
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Cardinality `1 + sum_{s=1..S} C(N,s) C(m,s)` of the reduced set.
pub fn reduced_cardinality(dim: usize, interaction: usize, degree: usize) -> u128 {
    1 + (1..=interaction).map(|s| binomial(dim, s) * binomial(degree, s)).sum::<u128>()
}

/// Builds the reduced multi-index set for dimension `dim`, interaction
/// order `interaction` and total degree `degree`.
pub fn build_index_set(dim: usize, interaction: usize, degree: usize) -> Result<MultiIndexSet> {
    if dim == 0 {
        return Err(invalid("dimension must be positive"));
    }
    if interaction > dim {
        return Err(invalid(format!("interaction order {interaction} exceeds dimension {dim}")));
    }
    if degree < interaction {
        return Err(invalid(format!("degree {degree} is below interaction order {interaction}")));
    }
    let mut indices = Vec::new();
    let mut current = vec![0u32; dim];
    for total in 0..=degree as u32 {
        compositions(&mut current, 0, total, 0, interaction, &mut indices);
    }
    Ok(MultiIndexSet { dim, interaction, degree, indices })
}

// Appends every composition of `remaining` into current[pos..] with at most
// `max_support` nonzero parts overall, in descending lexicographic order.
fn compositions(
    current: &mut [u32],
    pos: usize,
    remaining: u32,
    support: usize,
    max_support: usize,
    out: &mut Vec<Vec<u32>>,
) {
    if pos == current.len() {
        if remaining == 0 {
            out.push(current.to_vec());
        }
        return;
    }
    if remaining == 0 {
        current[pos..].iter_mut().for_each(|v| *v = 0);
        out.push(current.to_vec());
        return;
    }
    for value in (0..=remaining).rev() {
        let used = support + usize::from(value > 0);
        if used > max_support {
            continue;
        }
        current[pos] = value;
        compositions(current, pos + 1, remaining - value, used, max_support, out);
    }
    current[pos] = 0;
}

/// Evaluates the monomials `x^j` for every index in `set`.
pub fn monomial_vector(x: &[f64], set: &MultiIndexSet) -> Vec<f64> {
    let mut out = vec![0.0; set.len()];
    let mut powers = Vec::new();
    monomials_into(x, set, &mut powers, &mut out);
    out
}

fn monomials_into(x: &[f64], set: &MultiIndexSet, powers: &mut Vec<f64>, out: &mut [f64]) {
    let stride = set.degree + 1;
    powers.clear();
    powers.resize(set.dim * stride, 1.0);
    for (i, &xi) in x.iter().enumerate() {
        for p in 1..stride {
            powers[i * stride + p] = powers[i * stride + p - 1] * xi;
        }
    }
    for (slot, j) in out.iter_mut().zip(&set.indices) {
        let mut v = 1.0;
        for (i, &e) in j.iter().enumerate() {
            if e > 0 {
                v *= powers[i * stride + e as usize];
            }
        }
        *slot = v;
    }
}

/// Per-coordinate affine map `(x - shift) / scale` applied before the
/// monomials are formed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardization {
    pub fn identity(dim: usize) -> Self {
        Self { shift: vec![0.0; dim], scale: vec![1.0; dim] }
    }

    /// Centers by the marginal mean and scales by the marginal standard deviation.
    pub fn from_model(model: &InputModel) -> Self {
        Self {
            shift: model.marginals().iter().map(|m| m.mean()).collect(),
            scale: model.marginals().iter().map(|m| m.std()).collect(),
        }
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (((o, &v), &s), &c) in out.iter_mut().zip(x).zip(&self.scale).zip(&self.shift) {
            *o = (v - c) / s;
        }
    }
}

/// Monte Carlo estimate of `E[M(T(X)) M(T(X))^T]` for the standardization `T`,
/// using `q` Sobol points starting after `skip` points.
pub fn moment_matrix_standardized(
    set: &MultiIndexSet,
    model: &InputModel,
    standardization: &Standardization,
    q: usize,
    skip: u64,
) -> Result<DMatrix<f64>> {
    if set.dim() != model.dimension() {
        return Err(invalid("index set and input model dimensions differ"));
    }
    if q < set.len() {
        return Err(invalid(format!("quadrature size {q} is below basis size {}", set.len())));
    }
    let l = set.len();
    let n = set.dim();
    let blocks = q.div_ceil(MOMENT_BLOCK);
    let partials: Vec<Vec<f64>> = (0..blocks)
        .into_par_iter()
        .map(|b| -> Result<Vec<f64>> {
            let count = MOMENT_BLOCK.min(q - b * MOMENT_BLOCK);
            let pts = sample_with_skip(model, Scheme::Sobol, count, 0, skip + (b * MOMENT_BLOCK) as u64)?;
            let mut acc = vec![0.0; l * (l + 1) / 2];
            let mut z = vec![0.0; n];
            let mut m = vec![0.0; l];
            let mut powers = Vec::new();
            for x in pts.points() {
                standardization.apply(x, &mut z);
                monomials_into(&z, set, &mut powers, &mut m);
                let mut k = 0;
                for i in 0..l {
                    let mi = m[i];
                    for &mj in &m[..=i] {
                        acc[k] += mi * mj;
                        k += 1;
                    }
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    // ordered reduction keeps the result independent of scheduling
    let mut total = vec![0.0; l * (l + 1) / 2];
    for p in &partials {
        for (t, v) in total.iter_mut().zip(p) {
            *t += v;
        }
    }
    let mut g = DMatrix::zeros(l, l);
    let mut k = 0;
    for i in 0..l {
        for j in 0..=i {
            let v = total[k] / q as f64;
            g[(i, j)] = v;
            g[(j, i)] = v;
            k += 1;
        }
    }
    Ok(g)
}

/// Raw monomial moment matrix estimated with `q` quasi-MC points. `seed`
/// selects the Sobol stream offset (number of points skipped).
pub fn moment_matrix(set: &MultiIndexSet, model: &InputModel, q: usize, seed: u64) -> Result<DMatrix<f64>> {
    moment_matrix_standardized(set, model, &Standardization::identity(set.dim()), q, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisProvenance {
    /// Quadrature points used for `G`, or 0 when `G` was supplied directly.
    pub quadrature: usize,
    pub seed: u64,
    /// Diagonal jitter added after a failed first factorization.
    pub jitter: Option<f64>,
}

/// Orthonormal polynomial basis `Psi(x) = W M(T(x))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrthonormalBasis {
    index_set: MultiIndexSet,
    whitening: DMatrix<f64>,
    standardization: Standardization,
    provenance: BasisProvenance,
}

impl OrthonormalBasis {
    pub fn index_set(&self) -> &MultiIndexSet {
        &self.index_set
    }

    /// Lower-triangular whitening matrix acting on standardized monomials.
    pub fn whitening(&self) -> &DMatrix<f64> {
        &self.whitening
    }

    pub fn standardization(&self) -> &Standardization {
        &self.standardization
    }

    pub fn provenance(&self) -> &BasisProvenance {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.index_set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index_set.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.index_set.dim()
    }

    /// Evaluates `Psi(x)`.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.eval_into(x, &mut BasisScratch::default(), &mut out);
        out
    }

    pub(crate) fn eval_into(&self, x: &[f64], scratch: &mut BasisScratch, out: &mut [f64]) {
        let l = self.len();
        scratch.z.resize(self.dim(), 0.0);
        scratch.m.resize(l, 0.0);
        self.standardization.apply(x, &mut scratch.z);
        monomials_into(&scratch.z, &self.index_set, &mut scratch.powers, &mut scratch.m);
        for i in 0..l {
            let mut acc = 0.0;
            for k in 0..=i {
                acc += self.whitening[(i, k)] * scratch.m[k];
            }
            out[i] = acc;
        }
    }

    /// Basis restricted to the first `len` indices. Triangular whitening
    /// makes this the basis of the corresponding leading sub-problem.
    pub fn truncate(&self, len: usize) -> Self {
        let len = len.min(self.len());
        let mut set = self.index_set.clone();
        set.indices.truncate(len);
        set.degree = set.indices.iter().map(|j| j.iter().sum::<u32>() as usize).max().unwrap_or(0);
        Self {
            index_set: set,
            whitening: self.whitening.view((0, 0), (len, len)).into_owned(),
            standardization: self.standardization.clone(),
            provenance: self.provenance.clone(),
        }
    }
}

const ARTIFACT_KIND: &str = "mfcvar-basis";

impl OrthonormalBasis {
    /// Versioned JSON artifact.
    pub fn to_artifact(&self) -> Result<String> {
        crate::artifact::to_json(ARTIFACT_KIND, self)
    }

    pub fn from_artifact(text: &str) -> Result<Self> {
        let basis: Self = crate::artifact::from_json(ARTIFACT_KIND, text)?;
        let l = basis.index_set.len();
        if basis.whitening.shape() != (l, l) {
            return Err(crate::Error::IncompatibleArtifact(format!(
                "whitening matrix is {:?} for {l} basis functions",
                basis.whitening.shape()
            )));
        }
        Ok(basis)
    }
}

#[derive(Debug, Default)]
pub(crate) struct BasisScratch {
    z: Vec<f64>,
    m: Vec<f64>,
    powers: Vec<f64>,
}

/// Evaluates `Psi(x)` (free-function form).
pub fn basis_eval(basis: &OrthonormalBasis, x: &[f64]) -> Vec<f64> {
    basis.eval(x)
}

fn inverse_lower(l: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut inv = DMatrix::zeros(n, n);
    for j in 0..n {
        inv[(j, j)] = 1.0 / l[(j, j)];
        for i in (j + 1)..n {
            let mut s = 0.0;
            for k in j..i {
                s += l[(i, k)] * inv[(k, j)];
            }
            inv[(i, j)] = -s / l[(i, i)];
        }
    }
    inv
}

fn whiten_with(
    set: &MultiIndexSet,
    g: &DMatrix<f64>,
    standardization: Standardization,
    mut provenance: BasisProvenance,
) -> Result<OrthonormalBasis> {
    let l = set.len();
    if g.nrows() != l || g.ncols() != l {
        return Err(invalid(format!("moment matrix is {}x{}, expected {l}x{l}", g.nrows(), g.ncols())));
    }
    let chol = match cholesky_lower(g) {
        Ok(c) => c,
        Err(_) => {
            let jitter = 1e-12 * g.trace() / l as f64;
            let mut boosted = g.clone();
            for i in 0..l {
                boosted[(i, i)] += jitter;
            }
            provenance.jitter = Some(jitter);
            cholesky_lower(&boosted).map_err(|pivot| Error::NotPositiveDefinite {
                pivot,
                context: "monomial moment matrix; increase the quadrature size or lower the degree".into(),
            })?
        }
    };
    Ok(OrthonormalBasis { index_set: set.clone(), whitening: inverse_lower(&chol), standardization, provenance })
}

/// Whitens a moment matrix of raw monomials: `W = chol(G)^{-1}`.
pub fn whiten(set: &MultiIndexSet, g: &DMatrix<f64>) -> Result<OrthonormalBasis> {
    whiten_with(set, g, Standardization::identity(set.dim()), BasisProvenance { quadrature: 0, seed: 0, jitter: None })
}

/// Full construction: standardized quasi-MC moment matrix, then whitening.
pub fn build_basis(set: &MultiIndexSet, model: &InputModel, q: usize, seed: u64) -> Result<OrthonormalBasis> {
    let standardization = Standardization::from_model(model);
    let g = moment_matrix_standardized(set, model, &standardization, q, seed)?;
    whiten_with(set, &g, standardization, BasisProvenance { quadrature: q, seed, jitter: None })
}

/// Empirical `E[Psi Psi^T]` over `q` Sobol points offset by `skip`.
pub fn empirical_gram(basis: &OrthonormalBasis, model: &InputModel, q: usize, skip: u64) -> Result<DMatrix<f64>> {
    let m = moment_matrix_standardized(basis.index_set(), model, basis.standardization(), q, skip)?;
    Ok(basis.whitening() * m * basis.whitening().transpose())
}

/// `Psi(x)` for many points at once as a `points × L` matrix.
pub(crate) fn design_matrix(basis: &OrthonormalBasis, points: &[&[f64]]) -> DMatrix<f64> {
    let l = basis.len();
    let mut a = DMatrix::zeros(points.len(), l);
    let mut scratch = BasisScratch::default();
    let mut row = vec![0.0; l];
    for (r, x) in points.iter().enumerate() {
        basis.eval_into(x, &mut scratch, &mut row);
        for (c, v) in row.iter().enumerate() {
            a[(r, c)] = *v;
        }
    }
    a
}

#[cfg(test)]
pub(crate) fn dvector(v: &[f64]) -> nalgebra::DVector<f64> {
    nalgebra::DVector::from_column_slice(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inputs::Marginal;
    use approx::assert_relative_eq;

    fn idx(set: &MultiIndexSet) -> Vec<Vec<u32>> {
        set.indices().to_vec()
    }

    #[test]
    fn univariate_index_set_enumeration() {
        let set = build_index_set(2, 1, 3).unwrap();
        assert_eq!(idx(&set), vec![vec![0, 0], vec![1, 0], vec![0, 1], vec![2, 0], vec![0, 2], vec![3, 0], vec![0, 3]]);
        assert_eq!(reduced_cardinality(2, 1, 3), 7);
    }

    #[test]
    fn full_interaction_matches_total_degree_set() {
        let set = build_index_set(2, 2, 3).unwrap();
        assert_eq!(set.len(), 10);
        assert_eq!(set.indices()[4], vec![1, 1]);
    }

    #[test]
    fn constant_only_set() {
        let set = build_index_set(5, 0, 4).unwrap();
        assert_eq!(idx(&set), vec![vec![0; 5]]);
    }

    #[test]
    fn cardinality_formula_holds() {
        for n in 1..=6 {
            for s in 0..=n {
                for m in s..=5 {
                    let set = build_index_set(n, s, m).unwrap();
                    assert_eq!(set.len() as u128, reduced_cardinality(n, s, m), "{n} {s} {m}");
                    assert!(set.indices()[0].iter().all(|&e| e == 0));
                    for j in set.indices() {
                        assert!(j.iter().filter(|&&e| e > 0).count() <= s);
                        assert!(j.iter().sum::<u32>() as usize <= m);
                    }
                    if s == n {
                        assert_eq!(set.len() as u128, binomial(n + m, m));
                    }
                }
            }
        }
    }

    #[test]
    fn rejects_bad_orders() {
        assert!(build_index_set(2, 3, 4).is_err());
        assert!(build_index_set(3, 2, 1).is_err());
    }

    #[test]
    fn monomial_examples() {
        let set = build_index_set(2, 1, 3).unwrap();
        assert_eq!(monomial_vector(&[0.0, 0.0], &set), vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(monomial_vector(&[2.0, 3.0], &set), vec![1.0, 2.0, 3.0, 4.0, 9.0, 8.0, 27.0]);
        let one = build_index_set(1, 1, 2).unwrap();
        assert_eq!(monomial_vector(&[2.0], &one), vec![1.0, 2.0, 4.0]);
    }

    #[test]
    fn gaussian_moment_matrix() {
        let model = InputModel::independent(vec![Marginal::Gaussian { mean: 0.0, std: 1.0 }]).unwrap();
        let set = build_index_set(1, 1, 2).unwrap();
        let g = moment_matrix(&set, &model, 1_000_000, 0).unwrap();
        let expected = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 3.0]);
        assert_eq!(g[(0, 0)], 1.0);
        assert!((g - expected).amax() < 5e-3);
    }

    #[test]
    fn correlated_cross_moment() {
        let model = InputModel::bivariate_gaussian(2.0, 0.9).unwrap();
        let set = build_index_set(2, 2, 2).unwrap();
        let g = moment_matrix(&set, &model, 1 << 18, 0).unwrap();
        // rows 1 and 2 are x1 and x2
        assert!((g[(1, 2)] - 3.6).abs() < 2e-2, "{}", g[(1, 2)]);
        assert_eq!(g[(0, 0)], 1.0);
    }

    #[test]
    fn whitening_identity() {
        let set = build_index_set(2, 1, 1).unwrap();
        let basis = whiten(&set, &DMatrix::identity(3, 3)).unwrap();
        assert_eq!(basis.whitening(), &DMatrix::<f64>::identity(3, 3));
    }

    #[test]
    fn whitening_gives_hermite() {
        let set = build_index_set(1, 1, 2).unwrap();
        let g = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 3.0]);
        let basis = whiten(&set, &g).unwrap();
        let psi = basis.eval(&[1.0]);
        assert_relative_eq!(psi[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(psi[1], 1.0, epsilon = 1e-14);
        assert!(psi[2].abs() < 1e-14);
        let x = 1.7;
        assert_relative_eq!(basis.eval(&[x])[2], (x * x - 1.0) / 2f64.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn whitening_reports_pivot() {
        let set = build_index_set(1, 1, 2).unwrap();
        let g = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0]);
        match whiten(&set, &g) {
            Err(Error::NotPositiveDefinite { pivot, .. }) => assert_eq!(pivot, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn first_basis_function_is_constant() {
        let model = InputModel::bivariate_gaussian(2.0, 0.9).unwrap();
        let set = build_index_set(2, 1, 4).unwrap();
        let basis = build_basis(&set, &model, 1 << 16, 0).unwrap();
        for x in [[0.0, 0.0], [3.0, -1.0], [-7.5, 2.25]] {
            assert!((basis.eval(&x)[0] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn whitening_inverts_moment_matrix() {
        let model = InputModel::new(
            vec![
                Marginal::Gaussian { mean: 1.0, std: 2.0 },
                Marginal::Lognormal { mean: 4.0, cov_percent: 20.0 },
                Marginal::Uniform { lower: -1.0, upper: 2.0 },
            ],
            DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.0, 0.5, 1.0, 0.0, 0.0, 0.0, 1.0]),
        )
        .unwrap();
        let set = build_index_set(3, 2, 3).unwrap();
        let std = Standardization::from_model(&model);
        let g = moment_matrix_standardized(&set, &model, &std, 1 << 16, 0).unwrap();
        let basis = build_basis(&set, &model, 1 << 16, 0).unwrap();
        let w = basis.whitening();
        for i in 0..w.nrows() {
            assert!(w[(i, i)] > 0.0);
            for j in (i + 1)..w.ncols() {
                assert_eq!(w[(i, j)], 0.0);
            }
        }
        let resid = w * &g * w.transpose() - DMatrix::identity(set.len(), set.len());
        assert!(resid.amax() < 1e-10, "{}", resid.amax());
    }

    #[test]
    fn orthonormal_on_independent_stream() {
        let model = InputModel::bivariate_gaussian(2.0, 0.9).unwrap();
        let set = build_index_set(2, 1, 3).unwrap();
        let basis = build_basis(&set, &model, 1_000_000, 0).unwrap();
        let gram = empirical_gram(&basis, &model, 1_000_000, 1_000_000).unwrap();
        let err = (gram - DMatrix::identity(set.len(), set.len())).amax();
        assert!(err < 5e-3, "max deviation {err}");
    }

    #[test]
    fn nesting_of_leading_subsets() {
        let model = InputModel::bivariate_gaussian(2.0, 0.9).unwrap();
        let set4 = build_index_set(2, 1, 4).unwrap();
        let set3 = build_index_set(2, 1, 3).unwrap();
        let full = build_basis(&set4, &model, 1 << 16, 0).unwrap();
        let lower = build_basis(&set3, &model, 1 << 16, 0).unwrap();
        let truncated = full.truncate(set4.graded_prefix_len(3));
        assert_eq!(truncated.index_set(), &set3);
        for x in [[0.3, -0.2], [2.0, 1.5], [-3.0, -2.5]] {
            let a = truncated.eval(&x);
            let b = lower.eval(&x);
            for (u, v) in a.iter().zip(&b) {
                assert!((u - v).abs() < 1e-9 * (1.0 + v.abs()), "{u} vs {v}");
            }
        }
    }

    fn gaussian_moment(k: u32) -> f64 {
        if k % 2 == 1 {
            0.0
        } else {
            (1..k).step_by(2).map(|v| v as f64).product()
        }
    }

    #[test]
    fn independent_gaussian_gives_tensor_hermite() {
        use rand::{Rng, SeedableRng};
        let set = build_index_set(2, 2, 3).unwrap();
        let l = set.len();
        let g = DMatrix::from_fn(l, l, |a, b| {
            let (ja, jb) = (&set.indices()[a], &set.indices()[b]);
            gaussian_moment(ja[0] + jb[0]) * gaussian_moment(ja[1] + jb[1])
        });
        let basis = whiten(&set, &g).unwrap();
        let hermite = |k: u32, x: f64| -> f64 {
            let (mut h0, mut h1) = (1.0, x);
            if k == 0 {
                return 1.0;
            }
            for n in 1..k {
                let h2 = x * h1 - n as f64 * h0;
                h0 = h1;
                h1 = h2;
            }
            h1
        };
        let fact = |k: u32| (1..=k).map(|v| v as f64).product::<f64>();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            let psi = basis.eval(&x);
            for (i, j) in set.indices().iter().enumerate() {
                let expected = hermite(j[0], x[0]) * hermite(j[1], x[1]) / (fact(j[0]) * fact(j[1])).sqrt();
                assert!((psi[i] - expected).abs() < 1e-8, "{j:?}: {} vs {expected}", psi[i]);
            }
        }
    }

    #[test]
    fn rejects_too_small_quadrature() {
        let model = InputModel::bivariate_gaussian(1.0, 0.0).unwrap();
        let set = build_index_set(2, 2, 3).unwrap();
        assert!(moment_matrix(&set, &model, 5, 0).is_err());
    }
}
