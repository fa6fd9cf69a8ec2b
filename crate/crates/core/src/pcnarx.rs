//! PC-NARX: per-trace NARX coefficients on a common regressor basis,
//! surrogated over the structural parameters by sparse PCE.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::narx::{
    assemble_design, fit_narx_basis, fit_narx_sparse, relative_error, ForecastInit, LagConfig, NarxModel, NarxTrace, RegressorBasis,
    SparseNarxConfig,
};
use crate::numerics::{solve_ols, Matrix};
use nalgebra::DVector;
use crate::pce::{fit_adaptive_matrix, AdaptiveConfig, PceBasis, PceModel};
use crate::randvars::{RandomVector, SampleSet};

/// Training triples `(x_i, xi_i, y_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PcNarxDesign {
    pub traces: Vec<NarxTrace>,
    pub structural: SampleSet,
    pub rv: RandomVector,
}

impl PcNarxDesign {
    pub fn new(traces: Vec<NarxTrace>, structural: SampleSet, rv: RandomVector) -> Result<Self> {
        if traces.is_empty() {
            return Err(Error::invalid("empty PC-NARX design"));
        }
        if traces.len() != structural.len() {
            return Err(Error::dims(format!(
                "{} traces for {} structural samples",
                traces.len(),
                structural.len()
            )));
        }
        if structural.dim() != rv.dim() {
            return Err(Error::dims("structural samples and random vector differ in dimension"));
        }
        Ok(PcNarxDesign { traces, structural, rv })
    }

    pub fn len(&self) -> usize {
        self.traces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.traces.is_empty()
    }
}

/// Candidate statistics from the per-trace sparse fits.
#[derive(Debug, Clone, PartialEq)]
pub struct CommonBasis {
    pub basis: RegressorBasis,
    /// Number of traces that selected each retained term.
    pub frequency: Vec<usize>,
}

/// Terms and absolute coefficients selected by a sparse NARX fit of each
/// trace on its own, as indices into `candidates`.
pub fn per_trace_selections(
    cfg: &LagConfig,
    candidates: &RegressorBasis,
    traces: &[NarxTrace],
    sparse: &SparseNarxConfig,
) -> Result<Vec<Vec<(usize, f64)>>> {
    traces
        .par_iter()
        .map(|tr| {
            let fit = fit_narx_sparse(cfg, candidates, std::slice::from_ref(tr), sparse)?;
            let m = &fit.fit.model;
            Ok(m.basis
                .terms
                .iter()
                .zip(&m.coefficients)
                .map(|(t, c)| (candidates.position(t).expect("selected from the candidates"), c.abs()))
                .collect())
        })
        .collect()
}

/// Union of per-trace selections ranked by selection frequency and then
/// mean absolute coefficient, truncated to `cap` terms. The constant is
/// always kept.
pub fn rank_union<'a>(
    candidates: &RegressorBasis,
    selections: impl IntoIterator<Item = &'a Vec<(usize, f64)>>,
    cap: usize,
) -> CommonBasis {
    let p = candidates.len();
    let mut freq = vec![0usize; p];
    let mut abs_sum = vec![0.0; p];
    for sel in selections {
        for &(j, a) in sel {
            freq[j] += 1;
            abs_sum[j] += a;
        }
    }
    let constant = candidates.terms.iter().position(|t| t.is_constant());
    let mut ranked: Vec<usize> = (0..p).filter(|&j| freq[j] > 0 && Some(j) != constant).collect();
    ranked.sort_by(|&a, &b| {
        freq[b].cmp(&freq[a]).then_with(|| {
            let ma = abs_sum[a] / freq[a] as f64;
            let mb = abs_sum[b] / freq[b] as f64;
            mb.partial_cmp(&ma).unwrap_or(Ordering::Equal)
        })
    });
    let mut keep: Vec<usize> = constant.into_iter().collect();
    keep.extend(ranked.into_iter().take(cap.max(1).saturating_sub(keep.len())));
    keep.sort_unstable();
    CommonBasis { frequency: keep.iter().map(|&j| freq[j]).collect(), basis: candidates.subset(&keep) }
}

fn half_rows(cfg: &LagConfig, traces: &[NarxTrace]) -> usize {
    let t0 = cfg.burn_in();
    traces.iter().map(|t| t.len().saturating_sub(t0)).min().unwrap_or(0) / 2
}

/// [`rank_union`] of the per-trace selections, capped at `cap` (default:
/// half the shortest trace's row count).
pub fn select_common_basis(
    cfg: &LagConfig,
    candidates: &RegressorBasis,
    traces: &[NarxTrace],
    sparse: &SparseNarxConfig,
    cap: Option<usize>,
) -> Result<CommonBasis> {
    let selections = per_trace_selections(cfg, candidates, traces, sparse)?;
    Ok(rank_union(candidates, &selections, cap.unwrap_or_else(|| half_rows(cfg, traces))))
}

/// `N x n_basis` per-trace least-squares coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct PerTraceCoefficients {
    pub coefficients: Matrix,
    pub rank_deficient: Vec<bool>,
}

/// Per-trace least squares on `basis`. With an `anchor` coefficient
/// vector each trace solves for the minimum-norm correction to it, so
/// directions a trace does not excite keep the anchor's values.
pub fn fit_per_trace(
    design: &PcNarxDesign,
    cfg: &LagConfig,
    basis: &RegressorBasis,
    anchor: Option<&[f64]>,
) -> Result<PerTraceCoefficients> {
    if anchor.is_some_and(|a| a.len() != basis.len()) {
        return Err(Error::dims("anchor length differs from the basis size"));
    }
    let fits: Vec<(Vec<f64>, bool)> = design
        .traces
        .par_iter()
        .map(|tr| {
            let d = assemble_design(cfg, std::slice::from_ref(tr))?;
            let psi = d.regressors(basis);
            let target: Vec<f64> = match anchor {
                None => d.targets.clone(),
                Some(a) => {
                    let fit = &psi * DVector::from_column_slice(a);
                    d.targets.iter().zip(fit.iter()).map(|(y, f)| y - f).collect()
                }
            };
            let sol = solve_ols(&psi, &target)?;
            let c = match anchor {
                None => sol.coefficients.clone(),
                Some(a) => a.iter().zip(&sol.coefficients).map(|(x, y)| x + y).collect(),
            };
            Ok((c, sol.is_rank_deficient()))
        })
        .collect::<Result<_>>()?;
    let mut coefficients = Matrix::zeros(fits.len(), basis.len());
    let mut rank_deficient = Vec::with_capacity(fits.len());
    for (i, (c, flag)) in fits.iter().enumerate() {
        for (j, v) in c.iter().enumerate() {
            coefficients[(i, j)] = *v;
        }
        rank_deficient.push(*flag);
    }
    Ok(PerTraceCoefficients { coefficients, rank_deficient })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcNarxModel {
    pub lags: LagConfig,
    pub basis: RegressorBasis,
    pub coefficient_models: Vec<PceModel>,
    pub training_range: f64,
}

impl PcNarxModel {
    pub fn coefficients_at(&self, xi: &[f64]) -> Result<Vec<f64>> {
        self.coefficient_models.iter().map(|m| m.predict(xi)).collect()
    }

    /// NARX model with the surrogated coefficients at `xi`.
    pub fn narx_at(&self, xi: &[f64]) -> Result<NarxModel> {
        NarxModel::new(self.lags.clone(), self.basis.clone(), self.coefficients_at(xi)?, self.training_range)
    }
}

/// One adaptive sparse PCE per coefficient. With `exclude_rank_deficient`
/// the flagged traces are left out; otherwise their minimum-norm
/// coefficients are used.
pub fn fit_coefficient_pce(
    design: &PcNarxDesign,
    cfg: &LagConfig,
    basis: &RegressorBasis,
    per_trace: &PerTraceCoefficients,
    pce: &AdaptiveConfig,
    exclude_rank_deficient: bool,
) -> Result<PcNarxModel> {
    if per_trace.coefficients.nrows() != design.len() || per_trace.coefficients.ncols() != basis.len() {
        return Err(Error::dims("coefficient table does not match the design and basis"));
    }
    let flagged = per_trace.rank_deficient.iter().filter(|f| **f).count();
    let rows: Vec<usize> =
        (0..design.len()).filter(|&i| !(exclude_rank_deficient && per_trace.rank_deficient[i])).collect();
    if flagged > 0 {
        if exclude_rank_deficient {
            log::warn!("{flagged} rank-deficient traces excluded from the coefficient surrogates");
        } else {
            log::warn!("{flagged} rank-deficient per-trace fits kept with minimum-norm coefficients");
        }
    }
    if rows.is_empty() {
        return Err(Error::invalid("every per-trace NARX fit is rank-deficient"));
    }
    let standard: Vec<Vec<f64>> =
        rows.iter().map(|&i| design.rv.to_standard(&design.structural.points[i])).collect::<Result<_>>()?;
    let full = PceBasis::total_degree(design.rv.clone(), pce.max_degree)?;
    let psi = full.information_matrix_standard(&standard)?;
    let coefficient_models = (0..basis.len())
        .into_par_iter()
        .map(|k| {
            let y: Vec<f64> = rows.iter().map(|&i| per_trace.coefficients[(i, k)]).collect();
            fit_adaptive_matrix(&full, &psi, &y, pce)
        })
        .collect::<Result<_>>()?;
    let range = design
        .traces
        .iter()
        .flat_map(|t| t.output.iter())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    Ok(PcNarxModel {
        lags: cfg.clone(),
        basis: basis.clone(),
        coefficient_models,
        training_range: (range.1 - range.0).max(0.0),
    })
}

/// How many union terms form the common basis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisCap {
    /// Half the shortest trace's row count.
    HalfRows,
    Fixed(usize),
    /// Every `every`-th trace is held out; the cap with the lowest median
    /// held-out forecast error is kept, searched over a geometric grid
    /// bounded by half the row count.
    Holdout { every: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PcNarxConfig {
    pub degree: u32,
    pub sparse: SparseNarxConfig,
    pub basis_cap: BasisCap,
    pub pce: AdaptiveConfig,
    pub exclude_rank_deficient: bool,
    /// Anchor the per-trace fits at the pooled least-squares solution.
    pub anchor_pooled: bool,
}

impl Default for PcNarxConfig {
    fn default() -> Self {
        PcNarxConfig {
            degree: 3,
            sparse: SparseNarxConfig::default(),
            basis_cap: BasisCap::Holdout { every: 5 },
            pce: AdaptiveConfig { max_degree: 10, ..AdaptiveConfig::default() },
            exclude_rank_deficient: false,
            anchor_pooled: true,
        }
    }
}

/// Per-trace fits and coefficient PCEs on a fixed common basis.
pub fn fit_pcnarx_basis(
    design: &PcNarxDesign,
    cfg: &LagConfig,
    basis: &RegressorBasis,
    config: &PcNarxConfig,
) -> Result<PcNarxModel> {
    let anchor = if config.anchor_pooled {
        Some(fit_narx_basis(cfg, basis, &design.traces)?.model.coefficients)
    } else {
        None
    };
    let per_trace = fit_per_trace(design, cfg, basis, anchor.as_deref())?;
    fit_coefficient_pce(design, cfg, basis, &per_trace, &config.pce, config.exclude_rank_deficient)
}

fn subset_design(design: &PcNarxDesign, rows: &[usize]) -> Result<PcNarxDesign> {
    PcNarxDesign::new(
        rows.iter().map(|&i| design.traces[i].clone()).collect(),
        SampleSet { points: rows.iter().map(|&i| design.structural.points[i].clone()).collect(), seed: design.structural.seed },
        design.rv.clone(),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Full PC-NARX training: common basis, per-trace fits, coefficient PCEs.
pub fn fit_pcnarx(design: &PcNarxDesign, cfg: &LagConfig, config: &PcNarxConfig) -> Result<PcNarxModel> {
    // validates trace lengths up front
    assemble_design(cfg, &design.traces)?;
    let candidates = RegressorBasis::total_degree(cfg.n_lags(), config.degree);
    let selections = per_trace_selections(cfg, &candidates, &design.traces, &config.sparse)?;
    let max_cap = half_rows(cfg, &design.traces);
    let cap = match config.basis_cap {
        BasisCap::HalfRows => max_cap,
        BasisCap::Fixed(c) => c,
        BasisCap::Holdout { every } => holdout_cap(design, cfg, config, &candidates, &selections, every, max_cap)?,
    };
    let common = rank_union(&candidates, &selections, cap);
    log::info!("common NARX basis: {} of {} candidates", common.basis.len(), candidates.len());
    fit_pcnarx_basis(design, cfg, &common.basis, config)
}

fn holdout_cap(
    design: &PcNarxDesign,
    cfg: &LagConfig,
    config: &PcNarxConfig,
    candidates: &RegressorBasis,
    selections: &[Vec<(usize, f64)>],
    every: usize,
    max_cap: usize,
) -> Result<usize> {
    let every = every.max(2);
    let (held, kept): (Vec<usize>, Vec<usize>) = (0..design.len()).partition(|i| i % every == every - 1);
    if held.is_empty() || kept.len() < 2 {
        return Ok(max_cap);
    }
    let train = subset_design(design, &kept)?;
    let t0 = cfg.burn_in();
    let mut caps = Vec::new();
    let mut c = 5.0f64;
    while (c.round() as usize) < max_cap {
        caps.push(c.round() as usize);
        c *= 1.4;
    }
    caps.push(max_cap);

    let mut best = (f64::INFINITY, max_cap);
    let mut stale = 0;
    for cap in caps {
        let common = rank_union(candidates, kept.iter().map(|&i| &selections[i]), cap);
        let score = match fit_pcnarx_basis(&train, cfg, &common.basis, config) {
            Ok(model) => median(
                held.iter()
                    .map(|&i| {
                        let tr = &design.traces[i];
                        forecast_pcnarx(&model, &tr.input_refs(), &design.structural.points[i], ForecastInit::TruePrefix, Some(&tr.output))
                            .map_or(f64::INFINITY, |f| relative_error(&f, &tr.output, t0))
                    })
                    .collect(),
            ),
            Err(e) => {
                log::debug!("common basis cap {cap}: {e}");
                f64::INFINITY
            }
        };
        log::debug!("common basis cap {cap}: median held-out error {score:.4e}");
        if score < best.0 {
            best = (score, cap);
            stale = 0;
        } else {
            stale += 1;
            if stale >= 3 {
                break;
            }
        }
    }
    Ok(best.1)
}

pub fn forecast_pcnarx(
    model: &PcNarxModel,
    inputs: &[&[f64]],
    xi: &[f64],
    init: ForecastInit,
    prefix: Option<&[f64]>,
) -> Result<Vec<f64>> {
    model.narx_at(xi)?.forecast(inputs, init, prefix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::narx::{fit_narx, NarxSolver};
    use crate::pce::MultiIndex;
    use crate::randvars::{sample, Marginal};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn ar_trace(theta: f64, seed: u64) -> NarxTrace {
        let x = noise(200, seed);
        let mut y = vec![0.0; 200];
        for k in 1..200 {
            y[k] = theta * y[k - 1] + x[k];
        }
        NarxTrace::new(vec![x], y).unwrap()
    }

    fn linear_design(n: usize) -> (PcNarxDesign, LagConfig, RegressorBasis) {
        let rv = RandomVector::new(vec![Marginal::uniform(0.2, 0.7).unwrap()]).unwrap();
        let xi = sample(&rv, n, 3).unwrap();
        let traces = (0..n).map(|i| ar_trace(xi.points[i][0], 100 + i as u64)).collect();
        let cfg = LagConfig::new(1, vec![0]).unwrap();
        let basis = RegressorBasis::total_degree(2, 1);
        (PcNarxDesign::new(traces, xi, rv).unwrap(), cfg, basis)
    }

    #[test]
    fn per_trace_recovers_theta() {
        let (d, cfg, basis) = linear_design(12);
        let pt = fit_per_trace(&d, &cfg, &basis, None).unwrap();
        assert_eq!(pt.coefficients.nrows(), 12);
        let j = basis.position(&MultiIndex(vec![1, 0])).unwrap();
        for i in 0..12 {
            assert!((pt.coefficients[(i, j)] - d.structural.points[i][0]).abs() < 1e-8);
        }
        assert!(pt.rank_deficient.iter().all(|f| !f));
    }

    #[test]
    fn identical_traces_identical_rows() {
        let rv = RandomVector::new(vec![Marginal::uniform(0.0, 1.0).unwrap()]).unwrap();
        let tr = ar_trace(0.4, 9);
        let d = PcNarxDesign::new(vec![tr; 4], sample(&rv, 4, 1).unwrap(), rv).unwrap();
        let cfg = LagConfig::new(1, vec![0]).unwrap();
        let pt = fit_per_trace(&d, &cfg, &RegressorBasis::total_degree(2, 2), None).unwrap();
        for i in 1..4 {
            assert_eq!(pt.coefficients.row(i), pt.coefficients.row(0));
        }
    }

    #[test]
    fn linear_coefficient_dependence_is_exact() {
        let (d, cfg, basis) = linear_design(20);
        let pt = fit_per_trace(&d, &cfg, &basis, None).unwrap();
        let m = fit_coefficient_pce(&d, &cfg, &basis, &pt, &AdaptiveConfig { max_degree: 4, ..Default::default() }, true)
            .unwrap();
        assert_eq!(m.coefficient_models.len(), basis.len());
        let j = basis.position(&MultiIndex(vec![1, 0])).unwrap();
        assert!(m.coefficient_models[j].loo_error < 1e-10);
        assert!(m.coefficient_models[j].basis.max_degree() <= 1);
        let x_lag = basis.position(&MultiIndex(vec![0, 1])).unwrap();
        assert!(m.coefficient_models[x_lag].basis.max_degree() == 0);

        // forecast at a training point matches the per-trace model
        let xi = &d.structural.points[5];
        let tr = &d.traces[5];
        let f = forecast_pcnarx(&m, &tr.input_refs(), xi, ForecastInit::TruePrefix, Some(&tr.output)).unwrap();
        let single = fit_narx_basis(&cfg, &basis, std::slice::from_ref(tr)).unwrap().model;
        let g = single.forecast_trace(tr, ForecastInit::TruePrefix).unwrap();
        assert!(f.iter().zip(&g).all(|(a, b)| (a - b).abs() < 1e-6));
    }

    #[test]
    fn zero_variance_structure_collapses_to_narx() {
        let rv = RandomVector::new(vec![Marginal::uniform(0.0, 1.0).unwrap()]).unwrap();
        let n = 10;
        let traces: Vec<_> = (0..n).map(|i| ar_trace(0.45, 50 + i as u64)).collect();
        let xi = SampleSet { points: vec![vec![0.3]; n], seed: 0 };
        let d = PcNarxDesign::new(traces.clone(), xi, rv).unwrap();
        let cfg = LagConfig::new(1, vec![0]).unwrap();
        let basis = RegressorBasis::total_degree(2, 2);
        let pt = fit_per_trace(&d, &cfg, &basis, None).unwrap();
        let m = fit_coefficient_pce(&d, &cfg, &basis, &pt, &AdaptiveConfig::default(), true).unwrap();
        let classical = fit_narx(&cfg, 2, &traces, &NarxSolver::Ols).unwrap().model;
        let c = m.coefficients_at(&[0.3]).unwrap();
        for (a, b) in c.iter().zip(&classical.coefficients) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
        // constant coefficient family: same forecast for any xi
        let x = noise(100, 1);
        let f1 = forecast_pcnarx(&m, &[&x], &[0.1], ForecastInit::Zeros, None).unwrap();
        let f2 = forecast_pcnarx(&m, &[&x], &[0.9], ForecastInit::Zeros, None).unwrap();
        assert_eq!(f1, f2);
    }

    #[test]
    fn common_basis_contains_generator_terms() {
        let (d, cfg, _) = linear_design(6);
        let candidates = RegressorBasis::total_degree(2, 3);
        let cb = select_common_basis(&cfg, &candidates, &d.traces, &SparseNarxConfig::default(), None).unwrap();
        for t in [vec![0, 0], vec![1, 0], vec![0, 1]] {
            assert!(cb.basis.position(&MultiIndex(t)).is_some());
        }
        let capped = select_common_basis(&cfg, &candidates, &d.traces, &SparseNarxConfig::default(), Some(2)).unwrap();
        assert_eq!(capped.basis.len(), 2);
        assert!(capped.basis.terms[0].is_constant());
    }

    #[test]
    fn design_shape_checks() {
        let rv = RandomVector::new(vec![Marginal::uniform(0.0, 1.0).unwrap()]).unwrap();
        let s = sample(&rv, 3, 1).unwrap();
        assert!(PcNarxDesign::new(vec![ar_trace(0.1, 1)], s, rv).is_err());
    }
}
