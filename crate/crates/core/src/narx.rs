//! Polynomial NARX models: lag vectors, regressor bases, least-squares and
//! sparse training, one-step-ahead prediction and free-run forecasting.

use std::cell::RefCell;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lars::{lars_order, LarsProblem};
use crate::numerics::{solve_ols, LeastSquaresSolution, Matrix};
use crate::pce::{total_degree_indices, MultiIndex};

/// Autoregressive order `n_y` and one exogenous order per input signal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LagConfig {
    pub n_y: usize,
    pub n_x: Vec<usize>,
}

impl LagConfig {
    pub fn new(n_y: usize, n_x: Vec<usize>) -> Result<Self> {
        LagConfig { n_y, n_x }.validated()
    }

    pub fn validated(self) -> Result<Self> {
        if self.n_y == 0 {
            return Err(Error::invalid("autoregressive order n_y must be at least 1"));
        }
        Ok(self)
    }

    pub fn n_inputs(&self) -> usize {
        self.n_x.len()
    }

    /// `n_y + sum(n_x_i + 1)`: the current input value is a lag too.
    pub fn n_lags(&self) -> usize {
        self.n_y + self.n_x.iter().map(|n| n + 1).sum::<usize>()
    }

    /// Index of the first sample whose lag vector is fully defined.
    pub fn burn_in(&self) -> usize {
        self.n_x.iter().copied().fold(self.n_y, usize::max)
    }

    fn fill_lags(&self, inputs: &[&[f64]], y: &[f64], k: usize, out: &mut [f64]) {
        let mut p = 0;
        for j in 1..=self.n_y {
            out[p] = y[k - j];
            p += 1;
        }
        for (x, &nx) in inputs.iter().zip(&self.n_x) {
            for j in 0..=nx {
                out[p] = x[k - j];
                p += 1;
            }
        }
    }

    fn check_signals(&self, inputs: &[&[f64]], len: usize) -> Result<()> {
        if inputs.len() != self.n_inputs() {
            return Err(Error::dims(format!("{} input signals for {} exogenous orders", inputs.len(), self.n_inputs())));
        }
        if inputs.iter().any(|x| x.len() != len) {
            return Err(Error::dims("input signals and response differ in length"));
        }
        Ok(())
    }
}

/// `(y[k-1] .. y[k-n_y], x_1[k] .. x_1[k-n_x1], x_2[k] ..)`.
pub fn build_lag_vector(cfg: &LagConfig, inputs: &[&[f64]], y: &[f64], k: usize) -> Result<Vec<f64>> {
    cfg.check_signals(inputs, y.len())?;
    if k < cfg.burn_in() {
        return Err(Error::invalid(format!("step {k} precedes the first full lag vector at {}", cfg.burn_in())));
    }
    if k >= y.len() {
        return Err(Error::invalid(format!("step {k} beyond a {}-sample trace", y.len())));
    }
    let mut out = vec![0.0; cfg.n_lags()];
    cfg.fill_lags(inputs, y, k, &mut out);
    Ok(out)
}

/// Monomials in the lag variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressorBasis {
    pub n_lags: usize,
    pub terms: Vec<MultiIndex>,
}

impl RegressorBasis {
    /// All monomials of total degree at most `degree`, constant first.
    pub fn total_degree(n_lags: usize, degree: u32) -> Self {
        RegressorBasis { n_lags, terms: total_degree_indices(n_lags, degree) }
    }

    pub fn new(n_lags: usize, terms: Vec<MultiIndex>) -> Result<Self> {
        if terms.iter().any(|t| t.0.len() != n_lags) {
            return Err(Error::dims("regressor exponent length differs from the lag count"));
        }
        let mut sorted = terms.clone();
        sorted.sort();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("duplicate regressor"));
        }
        Ok(RegressorBasis { n_lags, terms })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn max_degree(&self) -> u32 {
        self.terms.iter().map(|t| t.total_degree()).max().unwrap_or(0)
    }

    pub fn subset(&self, keep: &[usize]) -> RegressorBasis {
        RegressorBasis { n_lags: self.n_lags, terms: keep.iter().map(|&j| self.terms[j].clone()).collect() }
    }

    pub fn position(&self, term: &MultiIndex) -> Option<usize> {
        self.terms.iter().position(|t| t == term)
    }

    fn compiled(&self) -> CompiledTerms {
        CompiledTerms::new(self)
    }

    /// Regressor values for one lag vector.
    pub fn eval(&self, lags: &[f64]) -> Vec<f64> {
        let c = self.compiled();
        let mut out = vec![0.0; self.len()];
        let mut pw = Vec::new();
        c.eval(lags, &mut pw, &mut out);
        out
    }
}

/// Sparse exponent lists for fast evaluation of arbitrary term sets.
struct CompiledTerms {
    factors: Vec<Vec<(usize, u32)>>,
    max_degree: usize,
    n_lags: usize,
}

impl CompiledTerms {
    fn new(basis: &RegressorBasis) -> Self {
        let factors = basis
            .terms
            .iter()
            .map(|t| t.0.iter().enumerate().filter(|(_, &a)| a > 0).map(|(v, &a)| (v, a)).collect())
            .collect();
        CompiledTerms { factors, max_degree: basis.max_degree() as usize, n_lags: basis.n_lags }
    }

    fn eval(&self, lags: &[f64], powers: &mut Vec<f64>, out: &mut [f64]) {
        let stride = self.max_degree + 1;
        powers.resize(self.n_lags * stride, 0.0);
        for (v, &l) in lags.iter().enumerate() {
            let row = &mut powers[v * stride..(v + 1) * stride];
            row[0] = 1.0;
            for d in 1..stride {
                row[d] = row[d - 1] * l;
            }
        }
        for (o, f) in out.iter_mut().zip(&self.factors) {
            *o = f.iter().map(|&(v, a)| powers[v * stride + a as usize]).product();
        }
    }
}

/// Evaluation plan for a downward-closed term set: every non-constant term
/// is its parent (one degree lower) times one lag variable.
struct MonomialPlan {
    parents: Vec<Option<(usize, usize)>>,
}

impl MonomialPlan {
    fn new(basis: &RegressorBasis) -> Option<Self> {
        let index: HashMap<&MultiIndex, usize> = basis.terms.iter().enumerate().map(|(j, t)| (t, j)).collect();
        let mut parents = Vec::with_capacity(basis.len());
        for t in &basis.terms {
            match t.0.iter().rposition(|&a| a > 0) {
                None => parents.push(None),
                Some(v) => {
                    let mut p = t.clone();
                    p.0[v] -= 1;
                    let pj = *index.get(&p)?;
                    parents.push(Some((pj, v)));
                }
            }
        }
        // parents must be evaluated first
        if parents.iter().enumerate().any(|(j, p)| p.is_some_and(|(pj, _)| pj >= j)) {
            return None;
        }
        Some(MonomialPlan { parents })
    }

    /// Term-major block `out[j * b + r]` for the rows `lag_cols[v][r0..r0+b]`.
    fn eval_block(&self, lag_cols: &[Vec<f64>], r0: usize, b: usize, out: &mut [f64]) {
        for (j, p) in self.parents.iter().enumerate() {
            let (head, tail) = out.split_at_mut(j * b);
            let dst = &mut tail[..b];
            match *p {
                None => dst.fill(1.0),
                Some((pj, v)) => {
                    let src = &head[pj * b..pj * b + b];
                    let lag = &lag_cols[v][r0..r0 + b];
                    for ((d, s), l) in dst.iter_mut().zip(src).zip(lag) {
                        *d = s * l;
                    }
                }
            }
        }
    }
}

/// Lag matrix and targets stacked over several traces.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignBundle {
    /// `rows x n_lags`
    pub lags: Matrix,
    pub targets: Vec<f64>,
    /// First row of each trace, plus the total row count at the end.
    pub trace_offsets: Vec<usize>,
}

impl DesignBundle {
    pub fn n_rows(&self) -> usize {
        self.targets.len()
    }

    /// Regressor matrix `Psi_ED` for `basis`.
    pub fn regressors(&self, basis: &RegressorBasis) -> Matrix {
        let c = basis.compiled();
        let mut m = Matrix::zeros(self.n_rows(), basis.len());
        let mut pw = Vec::new();
        let mut row = vec![0.0; basis.len()];
        let mut lags = vec![0.0; self.lags.ncols()];
        for r in 0..self.n_rows() {
            for (v, l) in lags.iter_mut().enumerate() {
                *l = self.lags[(r, v)];
            }
            c.eval(&lags, &mut pw, &mut row);
            for (j, val) in row.iter().enumerate() {
                m[(r, j)] = *val;
            }
        }
        m
    }
}

/// One training trace: exogenous signals and response on a shared grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NarxTrace {
    pub inputs: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

impl NarxTrace {
    pub fn new(inputs: Vec<Vec<f64>>, output: Vec<f64>) -> Result<Self> {
        if inputs.iter().any(|x| x.len() != output.len()) {
            return Err(Error::dims("input signals and response differ in length"));
        }
        if inputs.iter().flatten().chain(&output).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("NARX trace"));
        }
        Ok(NarxTrace { inputs, output })
    }

    pub fn input_refs(&self) -> Vec<&[f64]> {
        self.inputs.iter().map(Vec::as_slice).collect()
    }

    pub fn len(&self) -> usize {
        self.output.len()
    }

    pub fn is_empty(&self) -> bool {
        self.output.is_empty()
    }
}

/// Stacks the lag vectors of every trace; row `k` of a trace targets
/// `y[burn_in + k]` with lags from strictly earlier responses.
pub fn assemble_design(cfg: &LagConfig, traces: &[NarxTrace]) -> Result<DesignBundle> {
    let t0 = cfg.burn_in();
    let mut offsets = vec![0];
    for (i, tr) in traces.iter().enumerate() {
        cfg.check_signals(&tr.input_refs(), tr.len())?;
        if tr.len() <= t0 {
            return Err(Error::invalid(format!("trace {i} has {} samples, at most the burn-in {t0}", tr.len())));
        }
        offsets.push(offsets[i] + tr.len() - t0);
    }
    let rows = *offsets.last().unwrap_or(&0);
    let n = cfg.n_lags();
    let mut lags = Matrix::zeros(rows, n);
    let mut targets = Vec::with_capacity(rows);
    let mut buf = vec![0.0; n];
    for (i, tr) in traces.iter().enumerate() {
        let inputs = tr.input_refs();
        for k in t0..tr.len() {
            cfg.fill_lags(&inputs, &tr.output, k, &mut buf);
            let r = offsets[i] + k - t0;
            for (v, b) in buf.iter().enumerate() {
                lags[(r, v)] = *b;
            }
            targets.push(tr.output[k]);
        }
    }
    Ok(DesignBundle { lags, targets, trace_offsets: offsets })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ForecastInit {
    #[default]
    Zeros,
    TruePrefix,
}

const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NarxModel {
    pub lags: LagConfig,
    pub basis: RegressorBasis,
    pub coefficients: Vec<f64>,
    pub residual_variance: f64,
    /// Range (max - min) of the training responses, for the divergence guard.
    pub training_range: f64,
}

impl NarxModel {
    pub fn new(lags: LagConfig, basis: RegressorBasis, coefficients: Vec<f64>, training_range: f64) -> Result<Self> {
        if basis.n_lags != lags.n_lags() {
            return Err(Error::dims("basis and lag configuration disagree on the lag count"));
        }
        if coefficients.len() != basis.len() {
            return Err(Error::dims("coefficient count differs from the basis size"));
        }
        Ok(NarxModel { lags, basis, coefficients, residual_variance: 0.0, training_range })
    }

    /// One-step-ahead predictions with the true responses as lags, for rows
    /// `burn_in..len` of the trace.
    pub fn predict_osa(&self, trace: &NarxTrace) -> Result<Vec<f64>> {
        let design = assemble_design(&self.lags, std::slice::from_ref(trace))?;
        let psi = design.regressors(&self.basis);
        Ok((&psi * nalgebra::DVector::from_column_slice(&self.coefficients)).as_slice().to_vec())
    }

    fn guard_limit(&self) -> f64 {
        DIVERGENCE_FACTOR * self.training_range.max(f64::MIN_POSITIVE)
    }

    /// Free-run forecast: predictions are fed back as autoregressive lags.
    /// The first `burn_in` samples are zeros or copied from `prefix`.
    pub fn forecast(&self, inputs: &[&[f64]], init: ForecastInit, prefix: Option<&[f64]>) -> Result<Vec<f64>> {
        let len = inputs.first().map_or(0, |x| x.len());
        self.lags.check_signals(inputs, len)?;
        let t0 = self.lags.burn_in();
        if len <= t0 {
            return Err(Error::invalid("forecast horizon shorter than the burn-in"));
        }
        let mut y = vec![0.0; len];
        if init == ForecastInit::TruePrefix {
            let p = prefix.ok_or_else(|| Error::invalid("true-prefix initialisation needs the response prefix"))?;
            if p.len() < t0 {
                return Err(Error::dims(format!("prefix has {} samples, burn-in is {t0}", p.len())));
            }
            y[..t0].copy_from_slice(&p[..t0]);
        }
        let compiled = self.basis.compiled();
        let mut lags = vec![0.0; self.lags.n_lags()];
        let mut regs = vec![0.0; self.basis.len()];
        let mut pw = Vec::new();
        let limit = self.guard_limit();
        for k in t0..len {
            self.lags.fill_lags(inputs, &y, k, &mut lags);
            compiled.eval(&lags, &mut pw, &mut regs);
            let v: f64 = regs.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum();
            if !(v.abs() <= limit) {
                return Err(Error::Diverged { step: k, value: v.abs() });
            }
            y[k] = v;
        }
        Ok(y)
    }

    pub fn forecast_trace(&self, trace: &NarxTrace, init: ForecastInit) -> Result<Vec<f64>> {
        self.forecast(&trace.input_refs(), init, Some(&trace.output))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: NarxModel = serde_json::from_str(text)?;
        let lags = m.lags.clone().validated()?;
        let basis = RegressorBasis::new(m.basis.n_lags, m.basis.terms.clone())?;
        let mut out = NarxModel::new(lags, basis, m.coefficients, m.training_range)?;
        out.residual_variance = m.residual_variance;
        Ok(out)
    }
}

/// Relative L2 error `||y_hat - y|| / ||y||` over samples `from..`.
pub fn relative_error(pred: &[f64], truth: &[f64], from: usize) -> f64 {
    let num: f64 = pred[from..].iter().zip(&truth[from..]).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = truth[from..].iter().map(|b| b * b).sum();
    if den > 0.0 {
        (num / den).sqrt()
    } else if num == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SparseNarxConfig {
    /// Longest LAR path explored.
    pub max_terms: usize,
    /// Smallest path length scored.
    pub min_terms: usize,
    /// Ratio between consecutive scored path lengths.
    pub growth: f64,
}

impl Default for SparseNarxConfig {
    fn default() -> Self {
        SparseNarxConfig { max_terms: 150, min_terms: 3, growth: 1.25 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum NarxSolver {
    Ols,
    Sparse(SparseNarxConfig),
}

/// Training result with per-term selection flags for diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct NarxFit {
    pub model: NarxModel,
    pub rank_deficient: bool,
}

/// Refuse to materialise regressor matrices beyond this many entries.
const MAX_DENSE_ENTRIES: usize = 60_000_000;

fn training_range(traces: &[NarxTrace]) -> f64 {
    let (lo, hi) = traces
        .iter()
        .flat_map(|t| t.output.iter())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi >= lo {
        hi - lo
    } else {
        0.0
    }
}

fn finish_fit(
    cfg: &LagConfig,
    basis: RegressorBasis,
    sol: LeastSquaresSolution,
    rows: usize,
    traces: &[NarxTrace],
) -> Result<NarxFit> {
    let rank_deficient = sol.is_rank_deficient();
    if rank_deficient {
        log::warn!("rank-deficient NARX regressor matrix (rank {} of {}); minimum-norm solution", sol.rank, basis.len());
    }
    let dof = rows.saturating_sub(sol.rank);
    let mut model = NarxModel::new(cfg.clone(), basis, sol.coefficients, training_range(traces))?;
    model.residual_variance = if dof > 0 { sol.residual_sum_squares / dof as f64 } else { 0.0 };
    Ok(NarxFit { model, rank_deficient })
}

/// Least squares on a fixed basis.
pub fn fit_narx_basis(cfg: &LagConfig, basis: &RegressorBasis, traces: &[NarxTrace]) -> Result<NarxFit> {
    let design = assemble_design(cfg, traces)?;
    fit_on_design(cfg, basis, &design, traces)
}

fn fit_on_design(cfg: &LagConfig, basis: &RegressorBasis, design: &DesignBundle, traces: &[NarxTrace]) -> Result<NarxFit> {
    if basis.n_lags != cfg.n_lags() {
        return Err(Error::dims("basis and lag configuration disagree on the lag count"));
    }
    if design.n_rows().saturating_mul(basis.len()) > MAX_DENSE_ENTRIES {
        return Err(Error::invalid(format!(
            "{} x {} regressor matrix is too large for a dense fit; use the sparse solver",
            design.n_rows(),
            basis.len()
        )));
    }
    let psi = design.regressors(basis);
    let sol = solve_ols(&psi, &design.targets)?;
    finish_fit(cfg, basis.clone(), sol, design.n_rows(), traces)
}

/// Trains a NARX model with a total-degree polynomial basis.
pub fn fit_narx(cfg: &LagConfig, degree: u32, traces: &[NarxTrace], solver: &NarxSolver) -> Result<NarxFit> {
    let basis = RegressorBasis::total_degree(cfg.n_lags(), degree);
    match solver {
        NarxSolver::Ols => fit_narx_basis(cfg, &basis, traces),
        NarxSolver::Sparse(sc) => fit_narx_sparse(cfg, &basis, traces, sc).map(|s| s.fit),
    }
}

/// Sparse fit with the LAR ranking and the scores of the candidate path
/// lengths that were evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseNarxFit {
    pub fit: NarxFit,
    /// Candidate indices in order of entry.
    pub ranking: Vec<usize>,
    /// `(path length, mean forecast error on the training traces)`.
    pub scores: Vec<(usize, f64)>,
}

/// Ranks the candidates by LAR, refits prefixes of the ranking by least
/// squares (always with the constant) and keeps the prefix whose free-run
/// forecasts of the training traces have the lowest mean relative error.
pub fn fit_narx_sparse(
    cfg: &LagConfig,
    candidates: &RegressorBasis,
    traces: &[NarxTrace],
    config: &SparseNarxConfig,
) -> Result<SparseNarxFit> {
    fit_narx_sparse_scored(cfg, candidates, traces, traces, config)
}

/// As [`fit_narx_sparse`], but the path lengths are scored by forecasting
/// `scoring` instead of the training traces.
pub fn fit_narx_sparse_scored(
    cfg: &LagConfig,
    candidates: &RegressorBasis,
    traces: &[NarxTrace],
    scoring: &[NarxTrace],
    config: &SparseNarxConfig,
) -> Result<SparseNarxFit> {
    if scoring.is_empty() {
        return Err(Error::invalid("no scoring traces"));
    }
    if candidates.n_lags != cfg.n_lags() {
        return Err(Error::dims("basis and lag configuration disagree on the lag count"));
    }
    let design = assemble_design(cfg, traces)?;
    let constant = candidates.terms.iter().position(|t| t.is_constant());
    let max_steps = config.max_terms.min(design.n_rows().saturating_sub(2)).min(candidates.len());
    let ranking: Vec<usize> = {
        let problem = MonomialProblem::new(&design, candidates);
        lars_order(&problem, max_steps).into_iter().filter(|&j| Some(j) != constant).collect()
    };

    let mut sizes = Vec::new();
    let mut s = config.min_terms.max(1) as f64;
    while (s.round() as usize) < ranking.len() {
        let k = s.round() as usize;
        if sizes.last() != Some(&k) {
            sizes.push(k);
        }
        s *= config.growth.max(1.01);
    }
    sizes.push(ranking.len());

    let t0 = cfg.burn_in();
    let mut best: Option<(f64, NarxFit)> = None;
    let mut scores = Vec::new();
    for &k in &sizes {
        let mut cols: Vec<usize> = constant.into_iter().collect();
        cols.extend_from_slice(&ranking[..k]);
        let basis = candidates.subset(&cols);
        let fit = fit_on_design(cfg, &basis, &design, traces)?;
        let mut total = 0.0;
        for tr in scoring {
            let err = match fit.model.forecast_trace(tr, ForecastInit::TruePrefix) {
                Ok(pred) => relative_error(&pred, &tr.output, t0),
                Err(Error::Diverged { .. }) => f64::INFINITY,
                Err(e) => return Err(e),
            };
            total += err;
            if !total.is_finite() {
                break;
            }
        }
        let score = total / scoring.len() as f64;
        log::debug!("sparse NARX: {k} terms, mean training forecast error {score:.4e}");
        scores.push((k, score));
        if best.as_ref().is_none_or(|(b, _)| score < *b) {
            best = Some((score, fit));
        }
    }
    let (_, fit) = best.ok_or_else(|| Error::invalid("empty sparse NARX path"))?;
    Ok(SparseNarxFit { fit, ranking, scores })
}

const BLOCK_ROWS: usize = 64;

/// Standardised regression problem whose regressor columns are generated
/// block-wise from the lag matrix instead of being stored.
struct MonomialProblem<'a> {
    lag_cols: Vec<Vec<f64>>,
    basis: &'a RegressorBasis,
    plan: Option<MonomialPlan>,
    compiled: CompiledTerms,
    y_centred: Vec<f64>,
    mean: Vec<f64>,
    inv_norm: Vec<f64>,
    usable: Vec<bool>,
    cache: RefCell<HashMap<usize, Vec<f64>>>,
}

impl<'a> MonomialProblem<'a> {
    fn new(design: &DesignBundle, basis: &'a RegressorBasis) -> Self {
        let n = design.n_rows();
        let lag_cols: Vec<Vec<f64>> = (0..design.lags.ncols()).map(|v| design.lags.column(v).iter().copied().collect()).collect();
        let ym = design.targets.iter().sum::<f64>() / n as f64;
        let y_centred = design.targets.iter().map(|v| v - ym).collect();
        let mut me = MonomialProblem {
            lag_cols,
            basis,
            plan: MonomialPlan::new(basis),
            compiled: basis.compiled(),
            y_centred,
            mean: vec![0.0; basis.len()],
            inv_norm: vec![0.0; basis.len()],
            usable: vec![true; basis.len()],
            cache: RefCell::new(HashMap::new()),
        };
        let ones = vec![1.0; n];
        let sums = me.weighted_sums(&ones);
        me.mean = sums.iter().map(|s| s / n as f64).collect();
        let centred = me.centred_sums_sq();
        let raw = me.sums_sq();
        for j in 0..basis.len() {
            if centred[j] <= 1e-20 * raw[j] || centred[j] <= 0.0 {
                me.usable[j] = false;
            } else {
                me.inv_norm[j] = 1.0 / centred[j].sqrt();
            }
        }
        me
    }

    fn n_rows(&self) -> usize {
        self.y_centred.len()
    }

    /// Raw column `j`.
    fn raw_column(&self, j: usize) -> Vec<f64> {
        let n = self.n_rows();
        let mut lags = vec![0.0; self.lag_cols.len()];
        let single = RegressorBasis { n_lags: self.basis.n_lags, terms: vec![self.basis.terms[j].clone()] };
        let c = single.compiled();
        let mut pw = Vec::new();
        let mut out = [0.0];
        (0..n)
            .map(|r| {
                for (v, l) in lags.iter_mut().enumerate() {
                    *l = self.lag_cols[v][r];
                }
                c.eval(&lags, &mut pw, &mut out);
                out[0]
            })
            .collect()
    }

    fn standardised_column(&self, j: usize) -> Vec<f64> {
        if let Some(c) = self.cache.borrow().get(&j) {
            return c.clone();
        }
        let col: Vec<f64> = self.raw_column(j).into_iter().map(|v| (v - self.mean[j]) * self.inv_norm[j]).collect();
        self.cache.borrow_mut().insert(j, col.clone());
        col
    }

    /// `sum_r w_r psi_j(r)` for every column, block by block.
    fn weighted_sums(&self, w: &[f64]) -> Vec<f64> {
        let p = self.basis.len();
        let mut acc = vec![0.0; p];
        self.for_each_block(|r0, b, block| {
            let wb = &w[r0..r0 + b];
            for (j, a) in acc.iter_mut().enumerate() {
                *a += block[j * b..(j + 1) * b].iter().zip(wb).map(|(c, wr)| c * wr).sum::<f64>();
            }
        });
        acc
    }

    fn sums_sq(&self) -> Vec<f64> {
        self.sums_sq_shifted(&vec![0.0; self.basis.len()])
    }

    fn centred_sums_sq(&self) -> Vec<f64> {
        self.sums_sq_shifted(&self.mean)
    }

    fn sums_sq_shifted(&self, shift: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; self.basis.len()];
        self.for_each_block(|_, b, block| {
            for (j, a) in acc.iter_mut().enumerate() {
                *a += block[j * b..(j + 1) * b].iter().map(|c| (c - shift[j]).powi(2)).sum::<f64>();
            }
        });
        acc
    }

    fn for_each_block(&self, mut f: impl FnMut(usize, usize, &[f64])) {
        let n = self.n_rows();
        let p = self.basis.len();
        let mut block = vec![0.0; p * BLOCK_ROWS];
        let mut lags = vec![0.0; self.lag_cols.len()];
        let mut pw = Vec::new();
        let mut row = vec![0.0; p];
        let mut r0 = 0;
        while r0 < n {
            let b = BLOCK_ROWS.min(n - r0);
            let buf = &mut block[..p * b];
            match &self.plan {
                Some(plan) => plan.eval_block(&self.lag_cols, r0, b, buf),
                None => {
                    for r in 0..b {
                        for (v, l) in lags.iter_mut().enumerate() {
                            *l = self.lag_cols[v][r0 + r];
                        }
                        self.compiled.eval(&lags, &mut pw, &mut row);
                        for j in 0..p {
                            buf[j * b + r] = row[j];
                        }
                    }
                }
            }
            f(r0, b, buf);
            r0 += b;
        }
    }
}

impl LarsProblem for MonomialProblem<'_> {
    fn n_features(&self) -> usize {
        self.basis.len()
    }

    fn correlations(&self) -> Vec<f64> {
        let s = self.weighted_sums(&self.y_centred);
        s.iter().zip(&self.inv_norm).map(|(a, b)| a * b).collect()
    }

    fn usable(&self, j: usize) -> bool {
        self.usable[j]
    }

    fn gram(&self, i: usize, j: usize) -> f64 {
        let a = self.standardised_column(i);
        let b = self.standardised_column(j);
        a.iter().zip(&b).map(|(x, y)| x * y).sum()
    }

    fn direction_correlations(&self, active: &[usize], w: &[f64]) -> Vec<f64> {
        let mut u = vec![0.0; self.n_rows()];
        for (&j, &wj) in active.iter().zip(w) {
            for (ui, c) in u.iter_mut().zip(self.standardised_column(j)) {
                *ui += wj * c;
            }
        }
        // u sums to zero, so the column means drop out
        let s = self.weighted_sums(&u);
        s.iter().zip(&self.inv_norm).map(|(a, b)| a * b).collect()
    }
}
