//! Scalar polynomial chaos expansions: total-degree truncation, orthonormal
//! tensor-product bases, least-squares and sparse (hybrid LAR) fitting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lars::{lars_order, DataProblem};
use crate::numerics::{solve_ols_with_leverage, Matrix, PolyFamily};
use crate::randvars::{RandomVector, SampleSet};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex(pub Vec<u32>);

impl MultiIndex {
    pub fn zero(dim: usize) -> Self {
        MultiIndex(vec![0; dim])
    }

    pub fn total_degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn is_constant(&self) -> bool {
        self.0.iter().all(|&a| a == 0)
    }
}

/// All multi-indices of `dim` variables with total degree at most `degree`,
/// in lexicographic order.
pub fn total_degree_indices(dim: usize, degree: u32) -> Vec<MultiIndex> {
    fn fill(prefix: &mut Vec<u32>, dim: usize, budget: u32, out: &mut Vec<MultiIndex>) {
        if prefix.len() == dim {
            out.push(MultiIndex(prefix.clone()));
            return;
        }
        for a in 0..=budget {
            prefix.push(a);
            fill(prefix, dim, budget - a, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if dim > 0 {
        fill(&mut Vec::with_capacity(dim), dim, degree, &mut out);
    }
    out
}

/// Orthonormal polynomial basis indexed by a set of multi-indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PceBasis {
    rv: RandomVector,
    families: Vec<PolyFamily>,
    indices: Vec<MultiIndex>,
}

impl PceBasis {
    pub fn new(rv: RandomVector, indices: Vec<MultiIndex>) -> Result<Self> {
        let families = rv.marginals().iter().map(|m| m.family()).collect::<Result<Vec<_>>>()?;
        if indices.is_empty() {
            return Err(Error::invalid("a basis needs at least one multi-index"));
        }
        if let Some(bad) = indices.iter().find(|a| a.0.len() != rv.dim()) {
            return Err(Error::dims(format!(
                "multi-index {:?} does not match input dimension {}",
                bad.0,
                rv.dim()
            )));
        }
        let mut sorted = indices.clone();
        sorted.sort();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("duplicate multi-index in basis"));
        }
        Ok(PceBasis { rv, families, indices })
    }

    pub fn total_degree(rv: RandomVector, degree: u32) -> Result<Self> {
        let indices = total_degree_indices(rv.dim(), degree);
        PceBasis::new(rv, indices)
    }

    pub fn random_vector(&self) -> &RandomVector {
        &self.rv
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn max_degree(&self) -> u32 {
        self.indices.iter().map(|a| a.total_degree()).max().unwrap_or(0)
    }

    fn subset(&self, keep: &[usize]) -> PceBasis {
        PceBasis {
            rv: self.rv.clone(),
            families: self.families.clone(),
            indices: keep.iter().map(|&j| self.indices[j].clone()).collect(),
        }
    }

    /// Evaluate every basis polynomial at a point of the standard space.
    pub fn eval_standard(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.rv.dim() {
            return Err(Error::dims(format!("point has {} components, basis expects {}", u.len(), self.rv.dim())));
        }
        let mut univariate = Vec::with_capacity(u.len());
        let mut buf = Vec::new();
        for (i, (&ui, fam)) in u.iter().zip(&self.families).enumerate() {
            let deg = self.indices.iter().map(|a| a.0[i]).max().unwrap_or(0) as usize;
            fam.eval_all(deg, ui, &mut buf);
            univariate.push(buf.clone());
        }
        Ok(self
            .indices
            .iter()
            .map(|a| a.0.iter().enumerate().map(|(i, &d)| univariate[i][d as usize]).product())
            .collect())
    }

    /// Evaluate every basis polynomial at a physical input point.
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.eval_standard(&self.rv.to_standard(x)?)
    }

    /// `Psi[i][j] = psi_j(u_i)` for points already in standard space.
    pub fn information_matrix_standard(&self, points: &[Vec<f64>]) -> Result<Matrix> {
        let mut m = Matrix::zeros(points.len(), self.len());
        for (i, u) in points.iter().enumerate() {
            for (j, v) in self.eval_standard(u)?.into_iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        Ok(m)
    }

    pub fn information_matrix(&self, samples: &SampleSet) -> Result<Matrix> {
        self.information_matrix_standard(&samples.to_standard(&self.rv)?)
    }
}

/// Fitted expansion with its training and leave-one-out errors, both
/// relative to the empirical variance of the targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PceModel {
    pub basis: PceBasis,
    pub coefficients: Vec<f64>,
    pub training_error: f64,
    pub loo_error: f64,
}

impl PceModel {
    /// Model `c * 1` on a constant-only basis.
    pub fn constant(rv: RandomVector, value: f64) -> Result<Self> {
        let dim = rv.dim();
        let basis = PceBasis::new(rv, vec![MultiIndex::zero(dim)])?;
        Ok(PceModel { basis, coefficients: vec![value], training_error: 0.0, loo_error: 0.0 })
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        let psi = self.basis.eval(x)?;
        Ok(dot(&psi, &self.coefficients))
    }

    pub fn predict_standard(&self, u: &[f64]) -> Result<f64> {
        let psi = self.basis.eval_standard(u)?;
        Ok(dot(&psi, &self.coefficients))
    }

    /// Mean of the expansion (coefficient of the constant term).
    pub fn mean(&self) -> f64 {
        self.basis
            .indices()
            .iter()
            .zip(&self.coefficients)
            .filter(|(a, _)| a.is_constant())
            .map(|(_, c)| *c)
            .sum()
    }

    /// Variance of the expansion (sum of squared non-constant coefficients).
    pub fn variance(&self) -> f64 {
        self.basis
            .indices()
            .iter()
            .zip(&self.coefficients)
            .filter(|(a, _)| !a.is_constant())
            .map(|(_, c)| c * c)
            .sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: PceModel = serde_json::from_str(text)?;
        let basis = PceBasis::new(model.basis.rv.clone(), model.basis.indices.clone())?;
        if model.coefficients.len() != basis.len() {
            return Err(Error::dims("coefficient count does not match the basis"));
        }
        Ok(PceModel { basis, ..model })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn empirical_variance(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let m = y.iter().sum::<f64>() / n;
    y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n
}

/// Relative training and leave-one-out errors of a least-squares fit on
/// the columns `cols` of `psi`.
struct SubsetFit {
    coefficients: Vec<f64>,
    training_error: f64,
    loo_error: f64,
    rank_deficient: bool,
}

fn fit_subset(psi: &Matrix, y: &[f64], cols: &[usize]) -> Result<SubsetFit> {
    let n = psi.nrows();
    let design = psi.select_columns(cols);
    let fit = solve_ols_with_leverage(&design, y)?;
    let var = empirical_variance(y);
    let norm = if var > 0.0 { var } else { 1.0 };
    let mut loo = 0.0;
    for ((yi, fi), hi) in y.iter().zip(&fit.fitted).zip(&fit.leverages) {
        let r = yi - fi;
        let denom = 1.0 - hi;
        if denom <= 1e-10 {
            // an interpolating point: its LOO residual is unconstrained
            if r.abs() > 0.0 || var > 0.0 {
                loo = f64::INFINITY;
                break;
            }
            continue;
        }
        loo += (r / denom).powi(2);
    }
    let rss = fit.solution.residual_sum_squares;
    Ok(SubsetFit {
        rank_deficient: fit.solution.is_rank_deficient(),
        coefficients: fit.solution.coefficients,
        training_error: rss / n as f64 / norm,
        loo_error: loo / n as f64 / norm,
    })
}

fn check_samples(samples: &SampleSet, y: &[f64], rv: &RandomVector) -> Result<()> {
    if samples.len() != y.len() {
        return Err(Error::dims(format!("{} samples but {} responses", samples.len(), y.len())));
    }
    if samples.is_empty() {
        return Err(Error::invalid("no samples"));
    }
    if samples.dim() != rv.dim() {
        return Err(Error::dims("sample dimension does not match the basis"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("PCE responses"));
    }
    Ok(())
}

/// Ordinary least-squares coefficients on the full basis.
pub fn fit_ols(basis: &PceBasis, samples: &SampleSet, y: &[f64]) -> Result<PceModel> {
    check_samples(samples, y, &basis.rv)?;
    if samples.len() < basis.len() {
        return Err(Error::Underdetermined { rows: samples.len(), cols: basis.len() });
    }
    let psi = basis.information_matrix(samples)?;
    fit_ols_matrix(basis, &psi, y)
}

fn fit_ols_matrix(basis: &PceBasis, psi: &Matrix, y: &[f64]) -> Result<PceModel> {
    let cols: Vec<usize> = (0..basis.len()).collect();
    let fit = fit_subset(psi, y, &cols)?;
    if fit.rank_deficient {
        log::warn!("rank-deficient PCE information matrix; using the minimum-norm solution");
    }
    Ok(PceModel {
        basis: basis.clone(),
        coefficients: fit.coefficients,
        training_error: fit.training_error,
        loo_error: fit.loo_error,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SparseConfig {
    /// Upper bound on the number of non-constant terms along the path.
    pub max_terms: Option<usize>,
    /// Stop the path once the LOO error has not improved for this fraction of
    /// the maximal path length (at least `min_patience` steps). `None`
    /// evaluates the whole path.
    pub early_stop_fraction: Option<f64>,
    pub min_patience: usize,
}

impl Default for SparseConfig {
    fn default() -> Self {
        SparseConfig { max_terms: None, early_stop_fraction: Some(0.1), min_patience: 5 }
    }
}

/// Sparse expansion from a candidate basis: LAR ranks the candidates, every
/// prefix of the ranking is refitted by least squares together with the
/// constant, and the prefix with the smallest LOO error is kept.
pub fn fit_sparse(candidates: &PceBasis, samples: &SampleSet, y: &[f64], config: &SparseConfig) -> Result<PceModel> {
    check_samples(samples, y, &candidates.rv)?;
    let psi = candidates.information_matrix(samples)?;
    fit_sparse_matrix(candidates, &psi, y, config)
}

/// As [`fit_sparse`], with the candidate information matrix precomputed.
pub fn fit_sparse_matrix(candidates: &PceBasis, psi: &Matrix, y: &[f64], config: &SparseConfig) -> Result<PceModel> {
    let n = y.len();
    if psi.nrows() != n || psi.ncols() != candidates.len() {
        return Err(Error::dims("information matrix does not match samples and basis"));
    }
    let ymean = y.iter().sum::<f64>() / n as f64;
    let var = empirical_variance(y);
    let constant = candidates.indices.iter().position(|a| a.is_constant());

    if var <= 1e-30 * ymean.powi(2).max(1e-300) || n == 1 {
        return PceModel::constant(candidates.rv.clone(), ymean);
    }

    let n_terms_cap = (n - 1).min(candidates.len()) - constant.map_or(0, |_| 1).min(candidates.len() - 1);
    let max_steps = config.max_terms.map_or(n_terms_cap, |m| m.min(n_terms_cap));
    let problem = DataProblem::new(psi, y);
    let order: Vec<usize> = lars_order(&problem, max_steps + 1)
        .into_iter()
        .filter(|&j| Some(j) != constant)
        .take(max_steps)
        .collect();

    let patience = config
        .early_stop_fraction
        .map(|f| ((f * max_steps as f64).ceil() as usize).max(config.min_patience));
    let mut cols: Vec<usize> = constant.into_iter().collect();
    let mut best: Option<(Vec<usize>, SubsetFit)> = None;
    let mut since_best = 0;
    let consider = |cols: &[usize], best: &mut Option<(Vec<usize>, SubsetFit)>| -> Result<bool> {
        if cols.is_empty() {
            return Ok(false);
        }
        let fit = fit_subset(psi, y, cols)?;
        let improved = best.as_ref().is_none_or(|(_, b)| fit.loo_error < b.loo_error);
        if improved {
            *best = Some((cols.to_vec(), fit));
        }
        Ok(improved)
    };
    consider(&cols, &mut best)?;
    for &j in &order {
        cols.push(j);
        if consider(&cols, &mut best)? {
            since_best = 0;
            if best.as_ref().is_some_and(|(_, b)| b.loo_error <= 1e-28) {
                break;
            }
        } else {
            since_best += 1;
            if patience.is_some_and(|p| since_best >= p) {
                break;
            }
        }
    }

    // a full least-squares fit wins if it validates better
    if n > candidates.len() {
        let all: Vec<usize> = (0..candidates.len()).collect();
        let full = fit_subset(psi, y, &all)?;
        if best.as_ref().is_none_or(|(_, b)| full.loo_error + 1e-12 < b.loo_error) {
            best = Some((all, full));
        }
    }

    let (mut cols, fit) = best.ok_or_else(|| Error::invalid("empty sparse path"))?;
    // report the expansion in candidate order
    let mut pairs: Vec<(usize, f64)> = cols.drain(..).zip(fit.coefficients).collect();
    pairs.sort_by_key(|(j, _)| *j);
    let keep: Vec<usize> = pairs.iter().map(|(j, _)| *j).collect();
    Ok(PceModel {
        basis: candidates.subset(&keep),
        coefficients: pairs.into_iter().map(|(_, c)| c).collect(),
        training_error: fit.training_error,
        loo_error: fit.loo_error,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptiveConfig {
    pub min_degree: u32,
    pub max_degree: u32,
    /// Stop increasing the degree after this many consecutive degrees
    /// without LOO improvement; `None` sweeps the full range.
    pub degree_patience: Option<u32>,
    pub sparse: SparseConfig,
}

impl Default for AdaptiveConfig {
    fn default() -> Self {
        AdaptiveConfig { min_degree: 1, max_degree: 3, degree_patience: Some(2), sparse: SparseConfig::default() }
    }
}

/// Degree-adaptive sparse PCE: total-degree candidates for each degree in
/// `min_degree..=max_degree`, keeping the lowest LOO error.
pub fn fit_adaptive(rv: &RandomVector, samples: &SampleSet, y: &[f64], config: &AdaptiveConfig) -> Result<PceModel> {
    check_samples(samples, y, rv)?;
    if config.min_degree > config.max_degree {
        return Err(Error::invalid("min_degree exceeds max_degree"));
    }
    let standard = samples.to_standard(rv)?;
    let full = PceBasis::total_degree(rv.clone(), config.max_degree)?;
    let psi_full = full.information_matrix_standard(&standard)?;
    fit_adaptive_matrix(&full, &psi_full, y, config)
}

/// As [`fit_adaptive`], reusing the information matrix of the largest
/// total-degree basis.
pub fn fit_adaptive_matrix(full: &PceBasis, psi_full: &Matrix, y: &[f64], config: &AdaptiveConfig) -> Result<PceModel> {
    let mut best: Option<PceModel> = None;
    let mut stale = 0;
    for degree in config.min_degree..=config.max_degree {
        let cols: Vec<usize> = (0..full.len()).filter(|&j| full.indices[j].total_degree() <= degree).collect();
        let basis = full.subset(&cols);
        let psi = psi_full.select_columns(&cols);
        let model = fit_sparse_matrix(&basis, &psi, y, &config.sparse)?;
        if best.as_ref().is_none_or(|b| model.loo_error < b.loo_error) {
            let exact = model.loo_error <= 1e-28;
            best = Some(model);
            stale = 0;
            if exact {
                break;
            }
        } else {
            stale += 1;
            if config.degree_patience.is_some_and(|p| stale >= p) {
                break;
            }
        }
    }
    best.ok_or_else(|| Error::invalid("empty degree range"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::randvars::{sample, Marginal};

    fn uniform_rv(dim: usize) -> RandomVector {
        RandomVector::new(vec![Marginal::uniform(-1.0, 1.0).unwrap(); dim]).unwrap()
    }

    #[test]
    fn index_counts() {
        assert_eq!(
            total_degree_indices(1, 3),
            (0..=3).map(|d| MultiIndex(vec![d])).collect::<Vec<_>>()
        );
        assert_eq!(total_degree_indices(2, 2).len(), 6);
        assert_eq!(total_degree_indices(5, 3).len(), 56);
        let idx = total_degree_indices(3, 4);
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        assert!(idx.iter().all(|a| a.total_degree() <= 4));
        assert!(idx[0].is_constant());
    }

    #[test]
    fn basis_values() {
        let rv = RandomVector::new(vec![
            Marginal::uniform(-1.0, 1.0).unwrap(),
            Marginal::normal(0.0, 1.0).unwrap(),
        ])
        .unwrap();
        let basis = PceBasis::new(
            rv,
            vec![MultiIndex(vec![0, 0]), MultiIndex(vec![1, 0]), MultiIndex(vec![0, 2])],
        )
        .unwrap();
        let v = basis.eval_standard(&[1.0, 0.0]).unwrap();
        assert_eq!(v[0], 1.0);
        assert!((v[1] - 3f64.sqrt()).abs() < 1e-15);
        assert!((v[2] + 1.0 / 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn basis_rejects_bad_inputs() {
        let rv = RandomVector::new(vec![Marginal::discrete_uniform(1, 4).unwrap()]).unwrap();
        assert!(matches!(PceBasis::total_degree(rv, 2), Err(Error::UnsupportedMarginal(_))));
        assert!(PceBasis::new(uniform_rv(1), vec![MultiIndex(vec![1]), MultiIndex(vec![1])]).is_err());
        assert!(PceBasis::new(uniform_rv(2), vec![MultiIndex(vec![1])]).is_err());
    }

    #[test]
    fn information_matrix_shapes() {
        let b0 = PceBasis::total_degree(uniform_rv(2), 0).unwrap();
        let s = sample(&uniform_rv(2), 7, 1).unwrap();
        let m = b0.information_matrix(&s).unwrap();
        assert_eq!(m.shape(), (7, 1));
        assert!(m.iter().all(|v| *v == 1.0));

        let b = PceBasis::total_degree(uniform_rv(1), 4).unwrap();
        let s = sample(&uniform_rv(1), 5, 2).unwrap();
        let m = b.information_matrix(&s).unwrap();
        assert!(m.determinant().abs() > 1e-6);
    }

    #[test]
    fn information_matrix_orthonormal_in_the_limit() {
        let rv = RandomVector::new(vec![
            Marginal::uniform(0.0, 3.0).unwrap(),
            Marginal::normal(1.0, 2.0).unwrap(),
        ])
        .unwrap();
        let b = PceBasis::total_degree(rv.clone(), 2).unwrap();
        let n = 40_000;
        let psi = b.information_matrix(&sample(&rv, n, 3).unwrap()).unwrap();
        let g = psi.tr_mul(&psi) / n as f64;
        // entries have variance O(1/n); degree-2 Hermite products have larger kurtosis
        let tol = 3.0 / (n as f64).sqrt() * 4.0;
        assert!((g - Matrix::identity(b.len(), b.len())).amax() < tol);
    }

    #[test]
    fn ols_constant_function() {
        let rv = uniform_rv(2);
        let b = PceBasis::total_degree(rv.clone(), 3).unwrap();
        let s = sample(&rv, 30, 4).unwrap();
        let m = fit_ols(&b, &s, &vec![7.0; 30]).unwrap();
        assert!((m.coefficients[0] - 7.0).abs() < 1e-10);
        assert!(m.coefficients[1..].iter().all(|c| c.abs() < 1e-10));
    }

    #[test]
    fn ols_linear_function() {
        let rv = uniform_rv(1);
        let b = PceBasis::total_degree(rv.clone(), 2).unwrap();
        let s = sample(&rv, 20, 5).unwrap();
        let y: Vec<f64> = s.points.iter().map(|p| 2.0 + 3.0 * p[0]).collect();
        let m = fit_ols(&b, &s, &y).unwrap();
        assert!((m.coefficients[0] - 2.0).abs() < 1e-12);
        assert!((m.coefficients[1] - 3f64.sqrt()).abs() < 1e-12);
        assert!(m.coefficients[2].abs() < 1e-12);
        assert!((m.predict(&[0.5]).unwrap() - 3.5).abs() < 1e-10);
        assert!(m.loo_error < 1e-20);
    }

    #[test]
    fn ols_recovers_single_basis_member() {
        let rv = RandomVector::new(vec![
            Marginal::uniform(-1.0, 1.0).unwrap(),
            Marginal::normal(0.0, 1.0).unwrap(),
        ])
        .unwrap();
        let b = PceBasis::total_degree(rv.clone(), 3).unwrap();
        let s = sample(&rv, 40, 6).unwrap();
        let target = 7;
        let psi = b.information_matrix(&s).unwrap();
        let y: Vec<f64> = (0..40).map(|i| psi[(i, target)]).collect();
        let m = fit_ols(&b, &s, &y).unwrap();
        for (j, c) in m.coefficients.iter().enumerate() {
            let e = if j == target { 1.0 } else { 0.0 };
            assert!((c - e).abs() < 1e-10);
        }
    }

    #[test]
    fn ols_refuses_underdetermined() {
        let rv = uniform_rv(2);
        let b = PceBasis::total_degree(rv.clone(), 3).unwrap();
        let s = sample(&rv, 5, 7).unwrap();
        assert!(matches!(fit_ols(&b, &s, &[0.0; 5]), Err(Error::Underdetermined { .. })));
    }

    #[test]
    fn sparse_linear_from_degree_ten() {
        let rv = uniform_rv(1);
        let b = PceBasis::total_degree(rv.clone(), 10).unwrap();
        let s = sample(&rv, 30, 8).unwrap();
        let y: Vec<f64> = s.points.iter().map(|p| 2.0 + 3.0 * p[0]).collect();
        let m = fit_sparse(&b, &s, &y, &SparseConfig::default()).unwrap();
        assert_eq!(m.basis.indices(), &[MultiIndex(vec![0]), MultiIndex(vec![1])]);
        assert!((m.predict(&[0.5]).unwrap() - 3.5).abs() < 1e-10);
    }

    #[test]
    fn sparse_zero_targets() {
        let rv = uniform_rv(2);
        let b = PceBasis::total_degree(rv.clone(), 3).unwrap();
        let s = sample(&rv, 12, 9).unwrap();
        let m = fit_sparse(&b, &s, &[0.0; 12], &SparseConfig::default()).unwrap();
        assert_eq!(m.coefficients, vec![0.0]);
        assert_eq!(m.loo_error, 0.0);
    }

    #[test]
    fn sparse_quadratic_in_five_dimensions() {
        let rv = uniform_rv(5);
        let b = PceBasis::total_degree(rv.clone(), 2).unwrap();
        let s = sample(&rv, 50, 10).unwrap();
        let truth = [
            (MultiIndex(vec![0, 1, 0, 0, 0]), 1.5),
            (MultiIndex(vec![0, 0, 1, 0, 1]), -0.7),
            (MultiIndex(vec![2, 0, 0, 0, 0]), 0.4),
        ];
        let psi = b.information_matrix(&s).unwrap();
        let pos: Vec<usize> = truth.iter().map(|(a, _)| b.indices().iter().position(|x| x == a).unwrap()).collect();
        let y: Vec<f64> = (0..50).map(|i| pos.iter().zip(&truth).map(|(&j, (_, c))| c * psi[(i, j)]).sum()).collect();
        let m = fit_sparse(&b, &s, &y, &SparseConfig::default()).unwrap();
        for (a, c) in &truth {
            let k = m.basis.indices().iter().position(|x| x == a).expect("true term selected");
            assert!((m.coefficients[k] - c).abs() < 1e-8);
        }
        for (a, c) in m.basis.indices().iter().zip(&m.coefficients) {
            if !truth.iter().any(|(t, _)| t == a) {
                assert!(c.abs() < 1e-8);
            }
        }
    }

    #[test]
    fn sparse_never_worse_than_full_ols() {
        let rv = uniform_rv(2);
        let b = PceBasis::total_degree(rv.clone(), 4).unwrap();
        let s = sample(&rv, 60, 11).unwrap();
        let y: Vec<f64> = s.points.iter().map(|p| (2.0 * p[0]).sin() * p[1].exp()).collect();
        let sparse = fit_sparse(&b, &s, &y, &SparseConfig { early_stop_fraction: None, ..Default::default() }).unwrap();
        let full = fit_ols(&b, &s, &y).unwrap();
        assert!(sparse.loo_error <= full.loo_error + 1e-12);
        assert!(sparse.basis.indices().iter().all(|a| b.indices().contains(a)));
    }

    #[test]
    fn prediction_is_linear_in_coefficients() {
        let rv = uniform_rv(2);
        let b = PceBasis::total_degree(rv.clone(), 2).unwrap();
        let c1: Vec<f64> = (0..6).map(|i| i as f64 * 0.3 - 1.0).collect();
        let c2: Vec<f64> = (0..6).map(|i| (i as f64).cos()).collect();
        let mk = |c: Vec<f64>| PceModel { basis: b.clone(), coefficients: c, training_error: 0.0, loo_error: 0.0 };
        let sum: Vec<f64> = c1.iter().zip(&c2).map(|(a, b)| a + b).collect();
        let x = [0.3, -0.8];
        let lhs = mk(sum).predict(&x).unwrap();
        let rhs = mk(c1).predict(&x).unwrap() + mk(c2).predict(&x).unwrap();
        assert!((lhs - rhs).abs() < 1e-14);
    }

    #[test]
    fn prediction_reproduces_training_residuals() {
        let rv = uniform_rv(2);
        let b = PceBasis::total_degree(rv.clone(), 2).unwrap();
        let s = sample(&rv, 25, 12).unwrap();
        let y: Vec<f64> = s.points.iter().map(|p| (p[0] * 3.0).cos() + p[1]).collect();
        let m = fit_ols(&b, &s, &y).unwrap();
        let rss: f64 = s.points.iter().zip(&y).map(|(p, y)| (y - m.predict(p).unwrap()).powi(2)).sum();
        let var = empirical_variance(&y);
        assert!((rss / 25.0 / var - m.training_error).abs() < 1e-12);
    }

    #[test]
    fn adaptive_picks_sufficient_degree() {
        let rv = uniform_rv(2);
        let s = sample(&rv, 60, 13).unwrap();
        let y: Vec<f64> = s.points.iter().map(|p| p[0].powi(3) - p[1] * p[0]).collect();
        let m = fit_adaptive(&rv, &s, &y, &AdaptiveConfig { max_degree: 6, ..Default::default() }).unwrap();
        assert!(m.loo_error < 1e-20);
        assert_eq!(m.basis.max_degree(), 3);
    }

    #[test]
    fn json_roundtrip() {
        let rv = uniform_rv(2);
        let b = PceBasis::total_degree(rv.clone(), 2).unwrap();
        let s = sample(&rv, 20, 14).unwrap();
        let y: Vec<f64> = s.points.iter().map(|p| p[0] - p[1]).collect();
        let m = fit_ols(&b, &s, &y).unwrap();
        let back = PceModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
