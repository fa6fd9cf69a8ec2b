//! Trajectory surrogates: time-frozen PCE and PCA-compressed PCE.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::csvio::{fmt_f64, write_csv, Table};
use crate::dynmodels::{TimeGrid, Trajectory};
use crate::error::{Error, Result};
use crate::numerics::{eig_symmetric, Matrix};
use crate::pce::{fit_adaptive_matrix, AdaptiveConfig, PceBasis, PceModel};
use crate::randvars::{RandomVector, SampleSet};

/// `N` trajectories on a shared grid, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryEnsemble {
    grid: TimeGrid,
    rows: Vec<Vec<f64>>,
}

impl TrajectoryEnsemble {
    pub fn new(grid: TimeGrid, rows: Vec<Vec<f64>>) -> Result<Self> {
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != grid.steps) {
            return Err(Error::dims(format!("trace {i} has {} values for a {}-point grid", r.len(), grid.steps)));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("trajectory ensemble"));
        }
        Ok(TrajectoryEnsemble { grid, rows })
    }

    pub fn from_trajectories(trajs: &[Trajectory]) -> Result<Self> {
        let grid = trajs.first().ok_or_else(|| Error::invalid("empty ensemble"))?.grid;
        if trajs.iter().any(|t| !t.grid.same_as(&grid)) {
            return Err(Error::dims("trajectories are on different grids"));
        }
        TrajectoryEnsemble::new(grid, trajs.iter().map(|t| t.values.clone()).collect())
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn trajectory(&self, i: usize) -> Trajectory {
        Trajectory { grid: self.grid, values: self.rows[i].clone() }
    }

    /// Values of all traces at time index `k`.
    pub fn column(&self, k: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[k]).collect()
    }
}

/// Mean curve and leading covariance eigenmodes of an ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaReduction {
    pub mean: Vec<f64>,
    /// `Q x m`, orthonormal columns.
    pub modes: Matrix,
    pub eigenvalues: Vec<f64>,
    /// Trace of the empirical covariance.
    pub total_variance: f64,
}

pub const DEFAULT_EPSILON: f64 = 0.01;

impl PcaReduction {
    pub fn n_modes(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn n_steps(&self) -> usize {
        self.mean.len()
    }

    pub fn explained_fraction(&self) -> f64 {
        if self.total_variance > 0.0 {
            self.eigenvalues.iter().sum::<f64>() / self.total_variance
        } else {
            1.0
        }
    }

    /// Scores `phi_j^T (y - mean)`.
    pub fn project(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.n_steps() {
            return Err(Error::dims(format!("{} values for a {}-point reduction", y.len(), self.n_steps())));
        }
        Ok((0..self.n_modes())
            .map(|j| {
                self.modes.column(j).iter().zip(y.iter().zip(&self.mean)).map(|(p, (a, m))| p * (a - m)).sum()
            })
            .collect())
    }

    /// `mean + sum_j z_j phi_j`.
    pub fn reconstruct(&self, scores: &[f64]) -> Result<Vec<f64>> {
        if scores.len() != self.n_modes() {
            return Err(Error::dims(format!("{} scores for {} modes", scores.len(), self.n_modes())));
        }
        let mut out = self.mean.clone();
        for (j, &z) in scores.iter().enumerate() {
            for (o, p) in out.iter_mut().zip(self.modes.column(j).iter()) {
                *o += z * p;
            }
        }
        Ok(out)
    }
}

/// PCA of the ensemble with the `1/(N-1)` covariance, keeping the fewest
/// modes whose eigenvalues add up to at least `(1 - epsilon)` of the trace.
pub fn fit_pca(ens: &TrajectoryEnsemble, epsilon: f64) -> Result<PcaReduction> {
    let n = ens.len();
    if n < 2 {
        return Err(Error::invalid("PCA needs at least two trajectories"));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::invalid(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    let q = ens.grid.steps;
    let mut mean = vec![0.0; q];
    for r in ens.rows() {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centred = Matrix::from_fn(n, q, |i, k| ens.rows[i][k] - mean[k]);
    let scale = (n - 1) as f64;
    let total_variance = centred.iter().map(|v| v * v).sum::<f64>() / scale;

    let mean_scale = mean.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    if total_variance <= (1e-28 * mean_scale * mean_scale) * q as f64 {
        return Ok(PcaReduction { mean, modes: Matrix::zeros(q, 0), eigenvalues: vec![], total_variance: 0.0 });
    }

    let (values, vectors) = if n < q {
        let gram = (&centred * centred.transpose()) / scale;
        let (vals, u) = eig_symmetric(&gram)?;
        // phi = Y0^T u / sqrt((N-1) lambda)
        let keep = vals.iter().take_while(|&&l| l > 1e-13 * vals[0]).count();
        let mut modes = Matrix::zeros(q, keep);
        for j in 0..keep {
            let col = centred.tr_mul(&u.column(j).into_owned()) / (scale * vals[j]).sqrt();
            modes.set_column(j, &col);
        }
        (vals[..keep].to_vec(), modes)
    } else {
        let cov = centred.tr_mul(&centred) / scale;
        eig_symmetric(&cov)?
    };

    let target = (1.0 - epsilon) * total_variance;
    let mut acc = 0.0;
    let mut m = 0;
    for &l in &values {
        if acc >= target {
            break;
        }
        acc += l.max(0.0);
        m += 1;
    }
    let mut modes = vectors.columns(0, m).into_owned();
    for j in 0..m {
        let mut col = modes.column_mut(j);
        let norm = col.norm();
        col /= norm;
        let (mut best, mut sign) = (0.0, 1.0);
        for v in col.iter() {
            if v.abs() > best * (1.0 + 1e-12) {
                best = v.abs();
                sign = v.signum();
            }
        }
        col *= sign;
    }
    Ok(PcaReduction { mean, modes, eigenvalues: values[..m].iter().map(|l| l.max(0.0)).collect(), total_variance })
}

pub fn project_scores(red: &PcaReduction, y: &Trajectory) -> Result<Vec<f64>> {
    red.project(&y.values)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PcaPceConfig {
    pub epsilon: f64,
    pub pce: AdaptiveConfig,
}

impl Default for PcaPceConfig {
    fn default() -> Self {
        PcaPceConfig { epsilon: DEFAULT_EPSILON, pce: AdaptiveConfig::default() }
    }
}

/// Mean curve plus one PCE per retained principal-component score.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaPceSurrogate {
    pub grid: TimeGrid,
    pub reduction: PcaReduction,
    pub score_models: Vec<PceModel>,
}

fn check_aligned(ens: &TrajectoryEnsemble, inputs: &SampleSet, rv: &RandomVector) -> Result<()> {
    if ens.len() != inputs.len() {
        return Err(Error::dims(format!("{} trajectories but {} input samples", ens.len(), inputs.len())));
    }
    if inputs.dim() != rv.dim() {
        return Err(Error::dims("input samples do not match the random vector"));
    }
    Ok(())
}

/// Candidate information matrix shared by several adaptive fits.
fn shared_information(rv: &RandomVector, inputs: &SampleSet, config: &AdaptiveConfig) -> Result<(PceBasis, Matrix)> {
    let full = PceBasis::total_degree(rv.clone(), config.max_degree)?;
    let psi = full.information_matrix(inputs)?;
    Ok((full, psi))
}

pub fn fit_pca_pce(
    ens: &TrajectoryEnsemble,
    rv: &RandomVector,
    inputs: &SampleSet,
    config: &PcaPceConfig,
) -> Result<PcaPceSurrogate> {
    check_aligned(ens, inputs, rv)?;
    let reduction = fit_pca(ens, config.epsilon)?;
    let scores: Vec<Vec<f64>> = ens.rows().iter().map(|r| reduction.project(r)).collect::<Result<_>>()?;
    let (full, psi) = shared_information(rv, inputs, &config.pce)?;
    let score_models = (0..reduction.n_modes())
        .into_par_iter()
        .map(|j| {
            let z: Vec<f64> = scores.iter().map(|s| s[j]).collect();
            fit_adaptive_matrix(&full, &psi, &z, &config.pce)
        })
        .collect::<Result<Vec<_>>>()?;
    log::debug!("PCA-PCE: {} modes explain {:.4} of the variance", reduction.n_modes(), reduction.explained_fraction());
    Ok(PcaPceSurrogate { grid: ens.grid, reduction, score_models })
}

impl PcaPceSurrogate {
    pub fn predict_scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.score_models.iter().map(|m| m.predict(x)).collect()
    }

    pub fn predict_values(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.reduction.reconstruct(&self.predict_scores(x)?)
    }

    pub fn predict_curve(&self, x: &[f64]) -> Result<Trajectory> {
        Trajectory::new(self.grid, self.predict_values(x)?)
    }

    /// Writes `reduction.csv` (`t,mean,mode_1..`), `eigenvalues.csv`,
    /// `meta.json` and one `score_<j>.json` per score model into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let m = self.reduction.n_modes();
        let mut header = vec!["t".to_string(), "mean".to_string()];
        header.extend((1..=m).map(|j| format!("mode_{j}")));
        let header_ref: Vec<&str> = header.iter().map(String::as_str).collect();
        write_csv(
            dir.join("reduction.csv"),
            &header_ref,
            (0..self.grid.steps).map(|k| {
                let mut row = vec![fmt_f64(self.grid.t(k)), fmt_f64(self.reduction.mean[k])];
                row.extend((0..m).map(|j| fmt_f64(self.reduction.modes[(k, j)])));
                row
            }),
        )?;
        write_csv(
            dir.join("eigenvalues.csv"),
            &["index", "eigenvalue"],
            self.reduction.eigenvalues.iter().enumerate().map(|(j, l)| vec![(j + 1).to_string(), fmt_f64(*l)]),
        )?;
        let meta = SurrogateMeta { grid: self.grid, total_variance: self.reduction.total_variance, n_modes: m };
        fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
        for (j, model) in self.score_models.iter().enumerate() {
            fs::write(dir.join(format!("score_{}.json", j + 1)), model.to_json()?)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: SurrogateMeta = serde_json::from_str(&fs::read_to_string(dir.join("meta.json"))?)?;
        let table = Table::read(dir.join("reduction.csv"))?;
        let mean = table.column("mean")?;
        if mean.len() != meta.grid.steps {
            return Err(Error::dims("reduction table length does not match the grid"));
        }
        let mut modes = Matrix::zeros(meta.grid.steps, meta.n_modes);
        for j in 0..meta.n_modes {
            let col = table.column(&format!("mode_{}", j + 1))?;
            for (k, v) in col.into_iter().enumerate() {
                modes[(k, j)] = v;
            }
        }
        let eigenvalues = Table::read(dir.join("eigenvalues.csv"))?.column("eigenvalue")?;
        if eigenvalues.len() != meta.n_modes {
            return Err(Error::dims("eigenvalue count does not match the mode count"));
        }
        let score_models = (0..meta.n_modes)
            .map(|j| PceModel::from_json(&fs::read_to_string(dir.join(format!("score_{}.json", j + 1)))?))
            .collect::<Result<Vec<_>>>()?;
        Ok(PcaPceSurrogate {
            grid: meta.grid,
            reduction: PcaReduction { mean, modes, eigenvalues, total_variance: meta.total_variance },
            score_models,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SurrogateMeta {
    grid: TimeGrid,
    total_variance: f64,
    n_modes: usize,
}

/// Independent PCE per time instant.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeFrozenSurrogate {
    pub grid: TimeGrid,
    pub models: Vec<PceModel>,
}

/// One degree-adaptive sparse PCE per time index. All instants share the
/// same candidate basis; selection is repeated per instant.
pub fn fit_time_frozen(
    ens: &TrajectoryEnsemble,
    rv: &RandomVector,
    inputs: &SampleSet,
    config: &AdaptiveConfig,
) -> Result<TimeFrozenSurrogate> {
    check_aligned(ens, inputs, rv)?;
    let (full, psi) = shared_information(rv, inputs, config)?;
    let models = (0..ens.grid.steps)
        .into_par_iter()
        .map(|k| fit_adaptive_matrix(&full, &psi, &ens.column(k), config))
        .collect::<Result<Vec<_>>>()?;
    Ok(TimeFrozenSurrogate { grid: ens.grid, models })
}

impl TimeFrozenSurrogate {
    pub fn predict_curve(&self, x: &[f64]) -> Result<Trajectory> {
        let values = self.models.iter().map(|m| m.predict(x)).collect::<Result<Vec<_>>>()?;
        Trajectory::new(self.grid, values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::randvars::{sample, Marginal};

    fn grid(q: usize) -> TimeGrid {
        TimeGrid::new(0.05, q).unwrap()
    }

    #[test]
    fn two_point_hand_example() {
        let ens = TrajectoryEnsemble::new(grid(2), vec![vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        let red = fit_pca(&ens, 0.01).unwrap();
        assert_eq!(red.mean, vec![0.0, 0.0]);
        assert_eq!(red.n_modes(), 1);
        assert!((red.eigenvalues[0] - 2.0).abs() < 1e-14);
        assert!((red.modes[(0, 0)] - 1.0).abs() < 1e-14 && red.modes[(1, 0)].abs() < 1e-14);
        assert!((red.project(&[1.0, 0.0]).unwrap()[0] - 1.0).abs() < 1e-14);
        assert!((red.project(&[-1.0, 0.0]).unwrap()[0] + 1.0).abs() < 1e-14);
    }

    #[test]
    fn identical_traces_give_mean_only() {
        let ens = TrajectoryEnsemble::new(grid(4), vec![vec![1.0, 2.0, 3.0, 4.0]; 3]).unwrap();
        let red = fit_pca(&ens, 0.01).unwrap();
        assert_eq!(red.n_modes(), 0);
        assert_eq!(red.reconstruct(&[]).unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn rejects_bad_arguments() {
        let one = TrajectoryEnsemble::new(grid(3), vec![vec![0.0; 3]]).unwrap();
        assert!(fit_pca(&one, 0.01).is_err());
        let two = TrajectoryEnsemble::new(grid(3), vec![vec![0.0; 3], vec![1.0; 3]]).unwrap();
        assert!(fit_pca(&two, 0.0).is_err());
        assert!(fit_pca(&two, 1.0).is_err());
        assert!(TrajectoryEnsemble::new(grid(3), vec![vec![0.0; 2]]).is_err());
    }

    #[test]
    fn gram_and_covariance_routes_agree() {
        // N < Q uses the Gram route, N >= Q the covariance route
        let q = 6;
        let rows: Vec<Vec<f64>> =
            (0..8).map(|i| (0..q).map(|k| ((i * 7 + k * 3) as f64).sin() + 0.1 * k as f64).collect()).collect();
        let small = TrajectoryEnsemble::new(grid(q), rows[..4].to_vec()).unwrap();
        let red_gram = fit_pca(&small, 1e-9).unwrap();
        let padded: Vec<Vec<f64>> = rows[..4].iter().cloned().cycle().take(8).collect();
        // duplicating every trace scales the covariance by 2(N-1)/(2N-1)
        let big = TrajectoryEnsemble::new(grid(q), padded).unwrap();
        let red_cov = fit_pca(&big, 1e-9).unwrap();
        assert_eq!(red_gram.n_modes(), red_cov.n_modes());
        let ratio = 7.0 / 6.0;
        for j in 0..red_gram.n_modes() {
            assert!((red_gram.eigenvalues[j] - ratio * red_cov.eigenvalues[j]).abs() < 1e-10);
            let d = (red_gram.modes.column(j) - red_cov.modes.column(j)).amax();
            assert!(d < 1e-8, "mode {j} differs by {d}");
        }
    }

    #[test]
    fn sign_convention() {
        let ens = TrajectoryEnsemble::new(grid(3), vec![vec![0.0, -2.0, 1.0], vec![0.0, 2.0, -1.0]]).unwrap();
        let red = fit_pca(&ens, 0.01).unwrap();
        assert!(red.modes[(1, 0)] > 0.0);
    }

    #[test]
    fn rank_one_sine_family() {
        let rv = RandomVector::new(vec![Marginal::uniform(-1.0, 1.0).unwrap()]).unwrap();
        let inputs = sample(&rv, 20, 3).unwrap();
        let g = grid(200);
        let rows: Vec<Vec<f64>> =
            inputs.points.iter().map(|p| (0..g.steps).map(|k| p[0] * g.t(k).sin()).collect()).collect();
        let ens = TrajectoryEnsemble::new(g, rows).unwrap();
        let cfg = PcaPceConfig { pce: AdaptiveConfig { max_degree: 3, ..Default::default() }, ..Default::default() };
        let s = fit_pca_pce(&ens, &rv, &inputs, &cfg).unwrap();
        assert_eq!(s.reduction.n_modes(), 1);
        let y = s.predict_curve(&[0.3]).unwrap();
        for k in 0..g.steps {
            assert!((y.values[k] - 0.3 * g.t(k).sin()).abs() < 1e-6);
        }
        // score PCE linear in x
        assert!(s.score_models[0].basis.max_degree() <= 1);
    }

    #[test]
    fn constant_ensemble_surrogate() {
        let rv = RandomVector::new(vec![Marginal::uniform(0.0, 1.0).unwrap()]).unwrap();
        let inputs = sample(&rv, 5, 4).unwrap();
        let ens = TrajectoryEnsemble::new(grid(3), vec![vec![1.0, -1.0, 0.5]; 5]).unwrap();
        let s = fit_pca_pce(&ens, &rv, &inputs, &PcaPceConfig::default()).unwrap();
        assert!(s.score_models.is_empty());
        assert_eq!(s.predict_values(&[0.7]).unwrap(), vec![1.0, -1.0, 0.5]);
    }

    #[test]
    fn time_frozen_linear_map() {
        let rv = RandomVector::new(vec![Marginal::normal(1.0, 0.5).unwrap()]).unwrap();
        let inputs = sample(&rv, 12, 5).unwrap();
        let g = grid(30);
        let rows: Vec<Vec<f64>> = inputs.points.iter().map(|p| (0..g.steps).map(|k| p[0] * g.t(k)).collect()).collect();
        let ens = TrajectoryEnsemble::new(g, rows).unwrap();
        let s = fit_time_frozen(&ens, &rv, &inputs, &AdaptiveConfig::default()).unwrap();
        let y = s.predict_curve(&[1.7]).unwrap();
        for k in 0..g.steps {
            assert!((y.values[k] - 1.7 * g.t(k)).abs() < 1e-10);
        }
    }

    #[test]
    fn save_and_load() {
        let rv = RandomVector::new(vec![Marginal::uniform(-1.0, 1.0).unwrap(); 2]).unwrap();
        let inputs = sample(&rv, 15, 6).unwrap();
        let g = grid(40);
        let rows: Vec<Vec<f64>> = inputs
            .points
            .iter()
            .map(|p| (0..g.steps).map(|k| p[0] * g.t(k).cos() + p[1] * p[1] * g.t(k)).collect())
            .collect();
        let ens = TrajectoryEnsemble::new(g, rows).unwrap();
        let s = fit_pca_pce(&ens, &rv, &inputs, &PcaPceConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        s.save(dir.path()).unwrap();
        let back = PcaPceSurrogate::load(dir.path()).unwrap();
        assert_eq!(back, s);
    }
}
