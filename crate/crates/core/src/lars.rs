//! Least-angle regression, used to rank candidate regressors.
//!
//! Only the order in which regressors enter the active set is of interest
//! here; coefficients along the path are recomputed by least squares by the
//! callers. The solver works on centred and unit-normalised features and can
//! run either on the feature matrix itself or on a precomputed Gram matrix.

use nalgebra::{DMatrix, DVector};

use crate::numerics::Matrix;

/// Features below this norm (after centring) are never selected.
const MIN_FEATURE_NORM: f64 = 1e-12;
/// Squared residual norm of a new feature against the active span under which
/// it is considered collinear and skipped.
const COLLINEAR_TOL: f64 = 1e-10;
const TIE_TOL: f64 = 1e-12;

/// Operations LAR needs from the standardised regression problem.
pub trait LarsProblem {
    fn n_features(&self) -> usize;
    /// Initial correlations `x_j^T y` of the standardised features.
    fn correlations(&self) -> Vec<f64>;
    /// Whether feature `j` is eligible (non-degenerate).
    fn usable(&self, j: usize) -> bool;
    /// `x_i^T x_j`.
    fn gram(&self, i: usize, j: usize) -> f64;
    /// `X^T (X_A w)` for the active set `A`.
    fn direction_correlations(&self, active: &[usize], w: &[f64]) -> Vec<f64>;
}

/// Dense standardised features held in memory.
pub struct DataProblem {
    x: Matrix,
    y: DVector<f64>,
    usable: Vec<bool>,
}

impl DataProblem {
    /// Centres and normalises the columns of `design` and centres `targets`.
    /// Columns with (near) zero spread, such as the constant, are unusable.
    pub fn new(design: &Matrix, targets: &[f64]) -> Self {
        let (n, p) = design.shape();
        let mut x = design.clone();
        let mut usable = vec![true; p];
        for j in 0..p {
            let mut col = x.column_mut(j);
            let m = col.mean();
            col.add_scalar_mut(-m);
            let norm = col.norm();
            let scale = design.column(j).amax().max(1.0);
            if norm <= MIN_FEATURE_NORM * scale * (n as f64).sqrt() {
                usable[j] = false;
                col.fill(0.0);
            } else {
                col /= norm;
            }
        }
        let ym = targets.iter().sum::<f64>() / n as f64;
        let y = DVector::from_iterator(n, targets.iter().map(|v| v - ym));
        DataProblem { x, y, usable }
    }
}

impl LarsProblem for DataProblem {
    fn n_features(&self) -> usize {
        self.x.ncols()
    }

    fn correlations(&self) -> Vec<f64> {
        self.x.tr_mul(&self.y).as_slice().to_vec()
    }

    fn usable(&self, j: usize) -> bool {
        self.usable[j]
    }

    fn gram(&self, i: usize, j: usize) -> f64 {
        self.x.column(i).dot(&self.x.column(j))
    }

    fn direction_correlations(&self, active: &[usize], w: &[f64]) -> Vec<f64> {
        let mut u = DVector::zeros(self.x.nrows());
        for (&j, &wj) in active.iter().zip(w) {
            u.axpy(wj, &self.x.column(j), 1.0);
        }
        self.x.tr_mul(&u).as_slice().to_vec()
    }
}

/// Standardised problem given through its Gram matrix `X^T X` and `X^T y`.
pub struct GramProblem {
    gram: DMatrix<f64>,
    xty: Vec<f64>,
    usable: Vec<bool>,
}

impl GramProblem {
    pub fn new(gram: DMatrix<f64>, xty: Vec<f64>, usable: Vec<bool>) -> Self {
        GramProblem { gram, xty, usable }
    }
}

impl LarsProblem for GramProblem {
    fn n_features(&self) -> usize {
        self.xty.len()
    }

    fn correlations(&self) -> Vec<f64> {
        self.xty.clone()
    }

    fn usable(&self, j: usize) -> bool {
        self.usable[j]
    }

    fn gram(&self, i: usize, j: usize) -> f64 {
        self.gram[(i, j)]
    }

    fn direction_correlations(&self, active: &[usize], w: &[f64]) -> Vec<f64> {
        let p = self.xty.len();
        let mut a = vec![0.0; p];
        for (&j, &wj) in active.iter().zip(w) {
            let col = self.gram.column(j);
            for (ai, gi) in a.iter_mut().zip(col.iter()) {
                *ai += wj * gi;
            }
        }
        a
    }
}

/// Order in which features enter the LAR active set, at most `max_steps`
/// of them. Ties in absolute correlation go to the lowest index.
pub fn lars_order<P: LarsProblem>(problem: &P, max_steps: usize) -> Vec<usize> {
    let p = problem.n_features();
    let mut c = problem.correlations();
    let c0 = c
        .iter()
        .enumerate()
        .filter(|(j, _)| problem.usable(*j))
        .fold(0.0f64, |m, (_, v)| m.max(v.abs()));
    let mut active: Vec<usize> = Vec::new();
    let mut signs: Vec<f64> = Vec::new();
    let mut excluded = vec![false; p];
    for (j, e) in excluded.iter_mut().enumerate() {
        *e = !problem.usable(j);
    }
    // lower-triangular Cholesky factor of the active Gram matrix, row-major
    let mut chol: Vec<Vec<f64>> = Vec::new();
    if c0 == 0.0 {
        return active;
    }

    while active.len() < max_steps {
        let candidates: Vec<usize> = (0..p).filter(|&j| !excluded[j] && !active.contains(&j)).collect();
        let cmax = candidates.iter().fold(0.0f64, |m, &j| m.max(c[j].abs()));
        if cmax <= 1e-10 * c0 {
            break;
        }
        let Some(next) = candidates.iter().copied().find(|&j| c[j].abs() >= cmax * (1.0 - TIE_TOL)) else {
            break;
        };

        // Cholesky update with the new column
        let g_new: Vec<f64> = active.iter().map(|&k| problem.gram(k, next)).collect();
        let mut row = vec![0.0; active.len()];
        for i in 0..active.len() {
            let s: f64 = (0..i).map(|k| chol[i][k] * row[k]).sum();
            row[i] = (g_new[i] - s) / chol[i][i];
        }
        let d2 = problem.gram(next, next) - row.iter().map(|v| v * v).sum::<f64>();
        if d2 <= COLLINEAR_TOL {
            excluded[next] = true;
            continue;
        }
        row.push(d2.sqrt());
        chol.push(row);
        active.push(next);
        signs.push(c[next].signum());

        let ccur = c[next].abs();
        // solve G_A w0 = s
        let k = active.len();
        let mut z = vec![0.0; k];
        for i in 0..k {
            let s: f64 = (0..i).map(|j| chol[i][j] * z[j]).sum();
            z[i] = (signs[i] - s) / chol[i][i];
        }
        let mut w0 = vec![0.0; k];
        for i in (0..k).rev() {
            let s: f64 = ((i + 1)..k).map(|j| chol[j][i] * w0[j]).sum();
            w0[i] = (z[i] - s) / chol[i][i];
        }
        let norm = signs.iter().zip(&w0).map(|(s, w)| s * w).sum::<f64>();
        if !(norm > 0.0) {
            break;
        }
        let aa = 1.0 / norm.sqrt();
        let w: Vec<f64> = w0.iter().map(|v| v * aa).collect();
        let a = problem.direction_correlations(&active, &w);

        let mut gamma = ccur / aa;
        for &j in candidates.iter().filter(|&&j| j != next) {
            for step in [(ccur - c[j]) / (aa - a[j]), (ccur + c[j]) / (aa + a[j])] {
                if step > 1e-15 && step < gamma {
                    gamma = step;
                }
            }
        }
        for j in 0..p {
            c[j] -= gamma * a[j];
        }
    }
    active
}
