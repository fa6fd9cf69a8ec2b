//! Stochastic time warping: per-trace linear or affine time rescaling that
//! phase-aligns oscillatory trajectories with a reference before PCA-PCE.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::csvio::{fmt_f64, write_csv};
use crate::dynmodels::{TimeGrid, Trajectory};
use crate::error::{Error, Result};
use crate::numerics::{interp_linear, trapezoid, Extrapolation};
use crate::pce::{fit_adaptive, AdaptiveConfig, PceModel};
use crate::randvars::{RandomVector, SampleSet};
use crate::trajpce::{fit_pca_pce, PcaPceConfig, PcaPceSurrogate, TrajectoryEnsemble};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WarpFamily {
    /// `tau = k t`
    Linear,
    /// `tau = k t + phi`
    Affine,
}

impl WarpFamily {
    pub fn n_coefficients(self) -> usize {
        match self {
            WarpFamily::Linear => 1,
            WarpFamily::Affine => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarpFunction {
    pub family: WarpFamily,
    pub beta: Vec<f64>,
}

impl WarpFunction {
    pub fn identity(family: WarpFamily) -> Self {
        let beta = match family {
            WarpFamily::Linear => vec![1.0],
            WarpFamily::Affine => vec![1.0, 0.0],
        };
        WarpFunction { family, beta }
    }

    pub fn new(family: WarpFamily, beta: Vec<f64>) -> Result<Self> {
        if beta.len() != family.n_coefficients() {
            return Err(Error::dims(format!("{family:?} warp takes {} coefficients", family.n_coefficients())));
        }
        if !(beta[0] > 0.0) || beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::invalid(format!("warp rate must be positive and finite, got {:?}", beta)));
        }
        Ok(WarpFunction { family, beta })
    }

    pub fn rate(&self) -> f64 {
        self.beta[0]
    }

    pub fn shift(&self) -> f64 {
        self.beta.get(1).copied().unwrap_or(0.0)
    }

    pub fn apply(&self, t: f64) -> f64 {
        self.rate() * t + self.shift()
    }

    pub fn inverse(&self, tau: f64) -> f64 {
        (tau - self.shift()) / self.rate()
    }
}

/// Normalised cross-correlation `|int y1 y2| / (||y1|| ||y2||)` by the
/// trapezoidal rule.
pub fn warp_distance(y1: &Trajectory, y2: &Trajectory) -> Result<f64> {
    if !y1.grid.same_as(&y2.grid) {
        return Err(Error::dims("warp distance needs trajectories on a common grid"));
    }
    correlation(&y1.values, &y2.values, y1.grid.dt)
}

fn correlation(a: &[f64], b: &[f64], dt: f64) -> Result<f64> {
    let prod: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let aa: Vec<f64> = a.iter().map(|x| x * x).collect();
    let bb: Vec<f64> = b.iter().map(|x| x * x).collect();
    let (na, nb) = (trapezoid(&aa, dt), trapezoid(&bb, dt));
    if na == 0.0 && nb == 0.0 {
        return Err(Error::UndefinedQuantity("distance between two zero trajectories".into()));
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok((trapezoid(&prod, dt).abs() / (na * nb).sqrt()).min(1.0))
}

/// Linear interpolation on a uniform grid starting at 0, held constant
/// beyond either end.
fn sample_uniform(values: &[f64], dt: f64, t: f64) -> f64 {
    let n = values.len();
    let s = t / dt;
    if !(s > 0.0) {
        return values[0];
    }
    let i = s.floor() as usize;
    if i + 1 >= n {
        return values[n - 1];
    }
    let w = s - i as f64;
    values[i] + w * (values[i + 1] - values[i])
}

/// Correlation between `y` seen in warped time and `y_ref`, over the part of
/// the reference grid covered by the warped image of `y`.
fn warped_correlation(y: &Trajectory, y_ref: &Trajectory, warp: &WarpFunction) -> f64 {
    let dt = y_ref.grid.dt;
    let lo = warp.apply(0.0).max(0.0);
    let hi = warp.apply(y.grid.horizon()).min(y_ref.grid.horizon());
    if hi - lo < 2.0 * dt {
        return 0.0;
    }
    let i0 = (lo / dt - 1e-9).ceil() as usize;
    let i1 = ((hi / dt + 1e-9).floor() as usize).min(y_ref.len() - 1);
    if i1 <= i0 {
        return 0.0;
    }
    let warped: Vec<f64> =
        (i0..=i1).map(|i| sample_uniform(&y.values, y.grid.dt, warp.inverse(y_ref.grid.t(i)))).collect();
    correlation(&warped, &y_ref.values[i0..=i1], dt).unwrap_or(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WarpSearch {
    pub rate_min: f64,
    pub rate_max: f64,
    pub grid_points: usize,
    /// Grid points for the shift of affine warps.
    pub shift_points: usize,
    /// Half-width of the shift range; `None` uses half a period of the
    /// reference's dominant frequency.
    pub shift_half_range: Option<f64>,
    pub tolerance: f64,
}

impl Default for WarpSearch {
    fn default() -> Self {
        WarpSearch {
            rate_min: 0.5,
            rate_max: 2.0,
            grid_points: 200,
            shift_points: 41,
            shift_half_range: None,
            tolerance: 1e-4,
        }
    }
}

impl WarpSearch {
    fn validated(&self) -> Result<Self> {
        if !(self.rate_min > 0.0 && self.rate_max > self.rate_min) {
            return Err(Error::invalid("warp rate range must satisfy 0 < rate_min < rate_max"));
        }
        if self.grid_points < 3 || self.shift_points < 3 {
            return Err(Error::invalid("warp search needs at least three grid points per coefficient"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::invalid("warp tolerance must be positive"));
        }
        Ok(*self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarpFit {
    pub warp: WarpFunction,
    pub distance: f64,
    /// The search did not beat the identity warp, which is returned instead.
    pub identity_fallback: bool,
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Maximiser of `f` on `[a, b]` by golden-section search.
fn golden_max(mut a: f64, mut b: f64, tol: f64, f: impl Fn(f64) -> f64) -> (f64, f64) {
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// Angular frequency of the largest non-constant DFT bin.
fn dominant_frequency(y: &Trajectory) -> f64 {
    let n = y.len();
    let mean = y.values.iter().sum::<f64>() / n as f64;
    let mut best = (0.0, 1);
    for k in 1..=n / 2 {
        let (mut re, mut im) = (0.0, 0.0);
        for (j, v) in y.values.iter().enumerate() {
            let a = 2.0 * std::f64::consts::PI * (k * j) as f64 / n as f64;
            re += (v - mean) * a.cos();
            im -= (v - mean) * a.sin();
        }
        let p = re * re + im * im;
        if p > best.0 {
            best = (p, k);
        }
    }
    2.0 * std::f64::consts::PI * best.1 as f64 / (n as f64 * y.grid.dt)
}

/// Warp of `y` that maximises its correlation with `y_ref`: a grid search
/// over the admissible coefficients followed by golden-section refinement.
pub fn fit_warp(y: &Trajectory, y_ref: &Trajectory, family: WarpFamily, search: &WarpSearch) -> Result<WarpFit> {
    let search = search.validated()?;
    if (y_ref.grid.dt - y.grid.dt).abs() > 1e-12 * y.grid.dt {
        return Err(Error::dims("trace and reference must share the time step"));
    }
    let identity = WarpFunction::identity(family);
    let d_identity = warped_correlation(y, y_ref, &identity);
    let rates = linspace(search.rate_min, search.rate_max, search.grid_points);
    let step = rates[1] - rates[0];

    let (warp, distance) = match family {
        WarpFamily::Linear => {
            let eval = |k: f64| warped_correlation(y, y_ref, &WarpFunction { family, beta: vec![k] });
            let (i, _) = rates
                .iter()
                .map(|&k| eval(k))
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, d)| if d > best.1 { (i, d) } else { best });
            let a = (rates[i] - step).max(search.rate_min);
            let b = (rates[i] + step).min(search.rate_max);
            let (k, d) = golden_max(a, b, search.tolerance, eval);
            (WarpFunction { family, beta: vec![k] }, d)
        }
        WarpFamily::Affine => {
            let half = search.shift_half_range.unwrap_or_else(|| std::f64::consts::PI / dominant_frequency(y_ref));
            let shifts = linspace(-half, half, search.shift_points);
            let sstep = shifts[1] - shifts[0];
            let eval = |k: f64, p: f64| warped_correlation(y, y_ref, &WarpFunction { family, beta: vec![k, p] });
            let mut best = (rates[0], shifts[0], f64::NEG_INFINITY);
            for &k in &rates {
                for &p in &shifts {
                    let d = eval(k, p);
                    if d > best.2 {
                        best = (k, p, d);
                    }
                }
            }
            let (mut k, mut p, mut d) = best;
            // alternate one-dimensional refinements inside the best cell
            let (ka, kb) = ((k - step).max(search.rate_min), (k + step).min(search.rate_max));
            let (pa, pb) = (p - sstep, p + sstep);
            for _ in 0..4 {
                let (k1, d1) = golden_max(ka, kb, search.tolerance, |kk| eval(kk, p));
                if d1 >= d {
                    k = k1;
                    d = d1;
                }
                let (p1, d2) = golden_max(pa, pb, search.tolerance, |pp| eval(k, pp));
                if d2 >= d {
                    p = p1;
                    d = d2;
                }
            }
            (WarpFunction { family, beta: vec![k, p] }, d)
        }
    };

    if !(distance > d_identity) {
        log::warn!("warp search found no improvement over the identity (distance {d_identity:.6})");
        return Ok(WarpFit { warp: identity, distance: d_identity, identity_fallback: true });
    }
    Ok(WarpFit { warp, distance, identity_fallback: false })
}

/// Traces re-expressed in warped time on a shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpedEnsemble {
    /// Warped time of the first grid point.
    pub tau_start: f64,
    pub ensemble: TrajectoryEnsemble,
    pub fits: Vec<WarpFit>,
    pub reference: Trajectory,
}

impl WarpedEnsemble {
    pub fn tau(&self) -> Vec<f64> {
        let g = self.ensemble.grid();
        (0..g.steps).map(|i| self.tau_start + g.t(i)).collect()
    }

    pub fn warps(&self) -> Vec<WarpFunction> {
        self.fits.iter().map(|f| f.warp.clone()).collect()
    }

    /// `trace_id,beta_1..beta_nb`
    pub fn write_beta_csv(&self, path: &Path) -> Result<()> {
        write_beta_csv(path, &self.warps())
    }
}

pub fn write_beta_csv(path: &Path, warps: &[WarpFunction]) -> Result<()> {
    let nb = warps.first().map_or(1, |w| w.beta.len());
    let mut header = vec!["trace_id".to_string()];
    header.extend((1..=nb).map(|j| format!("beta_{j}")));
    let header_ref: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(
        path,
        &header_ref,
        warps.iter().enumerate().map(|(i, w)| {
            let mut row = vec![i.to_string()];
            row.extend(w.beta.iter().map(|b| fmt_f64(*b)));
            row
        }),
    )
}

/// Fits a warp per trace against `reference` and resamples all warped traces
/// on `Q` points spanning the intersection of their warped time ranges.
pub fn build_warped_ensemble(
    ens: &TrajectoryEnsemble,
    reference: &Trajectory,
    family: WarpFamily,
    search: &WarpSearch,
) -> Result<WarpedEnsemble> {
    if ens.len() < 2 {
        return Err(Error::invalid("warping needs at least two trajectories"));
    }
    let fits: Vec<WarpFit> = (0..ens.len())
        .into_par_iter()
        .map(|i| fit_warp(&ens.trajectory(i), reference, family, search))
        .collect::<Result<_>>()?;
    let horizon = ens.grid().horizon();
    let lo = fits.iter().map(|f| f.warp.apply(0.0)).fold(f64::NEG_INFINITY, f64::max);
    let hi = fits.iter().map(|f| f.warp.apply(horizon)).fold(f64::INFINITY, f64::min);
    if !(hi > lo) {
        return Err(Error::invalid(format!("warped traces have no common time range ({lo} .. {hi})")));
    }
    let q = ens.grid().steps;
    let grid = TimeGrid::new((hi - lo) / (q - 1) as f64, q)?;
    let times = ens.grid().times();
    let rows = fits
        .par_iter()
        .enumerate()
        .map(|(i, f)| {
            let query: Vec<f64> = (0..q).map(|j| f.warp.inverse(lo + grid.t(j))).collect();
            interp_linear(&times, ens.row(i), &query, Extrapolation::Clamp)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WarpedEnsemble {
        tau_start: lo,
        ensemble: TrajectoryEnsemble::new(grid, rows)?,
        fits,
        reference: reference.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WarpSurrogateConfig {
    pub family: WarpFamily,
    pub search: WarpSearch,
    pub warp_pce: AdaptiveConfig,
    pub pca_pce: PcaPceConfig,
}

impl Default for WarpSurrogateConfig {
    fn default() -> Self {
        WarpSurrogateConfig {
            family: WarpFamily::Linear,
            search: WarpSearch::default(),
            warp_pce: AdaptiveConfig::default(),
            pca_pce: PcaPceConfig::default(),
        }
    }
}

/// PCE of the warp coefficients plus a PCA-PCE surrogate in warped time.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpSurrogate {
    pub family: WarpFamily,
    pub beta_models: Vec<PceModel>,
    pub tau_start: f64,
    pub warped: PcaPceSurrogate,
    pub physical_grid: TimeGrid,
    pub rate_min: f64,
}

/// Full time-warping pipeline. `physical_grid` is the grid on which
/// predictions are returned; it may be shorter than the training traces so
/// that every predicted warp stays inside the common warped range.
pub fn fit_warp_surrogate(
    ens: &TrajectoryEnsemble,
    rv: &RandomVector,
    inputs: &SampleSet,
    reference: &Trajectory,
    physical_grid: TimeGrid,
    config: &WarpSurrogateConfig,
) -> Result<(WarpSurrogate, WarpedEnsemble)> {
    if ens.len() != inputs.len() {
        return Err(Error::dims(format!("{} trajectories but {} input samples", ens.len(), inputs.len())));
    }
    let warped = build_warped_ensemble(ens, reference, config.family, &config.search)?;
    let n_fallback = warped.fits.iter().filter(|f| f.identity_fallback).count();
    if n_fallback > 0 {
        log::warn!("{n_fallback} of {} traces kept the identity warp", ens.len());
    }
    let beta_models = (0..config.family.n_coefficients())
        .map(|j| {
            let b: Vec<f64> = warped.fits.iter().map(|f| f.warp.beta[j]).collect();
            fit_adaptive(rv, inputs, &b, &config.warp_pce)
        })
        .collect::<Result<Vec<_>>>()?;
    let pca = fit_pca_pce(&warped.ensemble, rv, inputs, &config.pca_pce)?;
    let surrogate = WarpSurrogate {
        family: config.family,
        beta_models,
        tau_start: warped.tau_start,
        warped: pca,
        physical_grid,
        rate_min: config.search.rate_min,
    };
    Ok((surrogate, warped))
}

impl WarpSurrogate {
    /// Warp predicted for input `x`; a non-positive rate is clamped to the
    /// lower end of the search range.
    pub fn predict_warp(&self, x: &[f64]) -> Result<WarpFunction> {
        let mut beta = self.beta_models.iter().map(|m| m.predict(x)).collect::<Result<Vec<_>>>()?;
        if !(beta[0] > 0.0) {
            log::warn!("predicted warp rate {} is not positive; clamped to {}", beta[0], self.rate_min);
            beta[0] = self.rate_min;
        }
        WarpFunction::new(self.family, beta)
    }

    pub fn predict_physical(&self, x: &[f64]) -> Result<Trajectory> {
        let warp = self.predict_warp(x)?;
        let curve = self.warped.predict_values(x)?;
        let g = self.warped.grid;
        let tau: Vec<f64> = (0..g.steps).map(|i| self.tau_start + g.t(i)).collect();
        let query: Vec<f64> = self.physical_grid.times().into_iter().map(|t| warp.apply(t)).collect();
        Trajectory::new(self.physical_grid, interp_linear(&tau, &curve, &query, Extrapolation::Clamp)?)
    }

    /// Writes `warp.json`, one `beta_<j>.json` per warp coefficient model and
    /// the warped-time PCA-PCE surrogate under `warped/`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let meta = WarpMeta {
            family: self.family,
            tau_start: self.tau_start,
            physical_grid: self.physical_grid,
            rate_min: self.rate_min,
        };
        std::fs::write(dir.join("warp.json"), serde_json::to_string_pretty(&meta)?)?;
        for (j, m) in self.beta_models.iter().enumerate() {
            std::fs::write(dir.join(format!("beta_{}.json", j + 1)), m.to_json()?)?;
        }
        self.warped.save(&dir.join("warped"))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: WarpMeta = serde_json::from_str(&std::fs::read_to_string(dir.join("warp.json"))?)?;
        let beta_models = (0..meta.family.n_coefficients())
            .map(|j| PceModel::from_json(&std::fs::read_to_string(dir.join(format!("beta_{}.json", j + 1)))?))
            .collect::<Result<Vec<_>>>()?;
        Ok(WarpSurrogate {
            family: meta.family,
            beta_models,
            tau_start: meta.tau_start,
            warped: PcaPceSurrogate::load(&dir.join("warped"))?,
            physical_grid: meta.physical_grid,
            rate_min: meta.rate_min,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WarpMeta {
    family: WarpFamily,
    tau_start: f64,
    physical_grid: TimeGrid,
    rate_min: f64,
}
