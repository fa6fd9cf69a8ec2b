//! Dense linear-algebra, quadrature and interpolation kernels shared by the
//! surrogate modules.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;

/// Singular values below this fraction of the largest one are treated as zero.
pub const RANK_TOLERANCE: f64 = 1e-12;

/// Relative asymmetry accepted by [`eig_symmetric`].
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquaresSolution {
    pub coefficients: Vec<f64>,
    pub residual_sum_squares: f64,
    pub rank: usize,
}

impl LeastSquaresSolution {
    pub fn is_rank_deficient(&self) -> bool {
        self.rank < self.coefficients.len()
    }
}

/// Least-squares solution together with the diagonal of the hat matrix.
#[derive(Debug, Clone)]
pub struct LeverageFit {
    pub solution: LeastSquaresSolution,
    pub fitted: Vec<f64>,
    pub leverages: Vec<f64>,
}

fn check_finite(m: &Matrix, what: &'static str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

/// Minimum-norm least-squares solution of `design * c ~= targets`.
///
/// The design is reduced by a Householder QR and the triangular factor is
/// then decomposed by SVD, so rank deficiency is detected at
/// [`RANK_TOLERANCE`] without ever forming the normal equations.
pub fn solve_ols(design: &Matrix, targets: &[f64]) -> Result<LeastSquaresSolution> {
    solve_ols_with_leverage(design, targets).map(|fit| fit.solution)
}

pub fn solve_ols_with_leverage(design: &Matrix, targets: &[f64]) -> Result<LeverageFit> {
    let (rows, cols) = design.shape();
    if rows == 0 || cols == 0 {
        return Err(Error::dims("design matrix must have at least one row and one column"));
    }
    if targets.len() != rows {
        return Err(Error::dims(format!(
            "design has {rows} rows but {} targets were given",
            targets.len()
        )));
    }
    check_finite(design, "design matrix")?;
    if targets.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("targets"));
    }
    let b = DVector::from_column_slice(targets);

    // `basis` spans the range of the design (rows x r, orthonormal columns),
    // `coef_map` maps basis coordinates back to coefficients (cols x r).
    let (basis, coef_map, rank) = if rows >= cols {
        let qr = design.clone().qr();
        let q = qr.q();
        let r = qr.r();
        let svd = r.svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let keep = rank_indices(svd.singular_values.as_slice());
        let mut basis = Matrix::zeros(rows, keep.len());
        let mut coef_map = Matrix::zeros(cols, keep.len());
        for (jj, &j) in keep.iter().enumerate() {
            let uq = &q * u.column(j);
            basis.set_column(jj, &uq);
            let s = svd.singular_values[j];
            coef_map.set_column(jj, &(v_t.row(j).transpose() / s));
        }
        (basis, coef_map, keep.len())
    } else {
        let svd = design.clone().svd(true, true);
        let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
        let keep = rank_indices(svd.singular_values.as_slice());
        let mut basis = Matrix::zeros(rows, keep.len());
        let mut coef_map = Matrix::zeros(cols, keep.len());
        for (jj, &j) in keep.iter().enumerate() {
            basis.set_column(jj, &u.column(j));
            let s = svd.singular_values[j];
            coef_map.set_column(jj, &(v_t.row(j).transpose() / s));
        }
        (basis, coef_map, keep.len())
    };

    let proj = basis.tr_mul(&b);
    let coefficients = &coef_map * &proj;
    let fitted = &basis * &proj;
    let residual_sum_squares = (&b - &fitted).norm_squared();
    let leverages = basis.row_iter().map(|r| r.norm_squared()).collect();

    Ok(LeverageFit {
        solution: LeastSquaresSolution {
            coefficients: coefficients.as_slice().to_vec(),
            residual_sum_squares,
            rank,
        },
        fitted: fitted.as_slice().to_vec(),
        leverages,
    })
}

fn rank_indices(singular_values: &[f64]) -> Vec<usize> {
    let smax = singular_values.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return Vec::new();
    }
    (0..singular_values.len())
        .filter(|&j| singular_values[j] > RANK_TOLERANCE * smax)
        .collect()
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues in descending
/// order and eigenvectors as the matching columns.
pub fn eig_symmetric(m: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let (rows, cols) = m.shape();
    if rows != cols {
        return Err(Error::NotSquare { rows, cols });
    }
    check_finite(m, "symmetric matrix")?;
    let scale = m.amax();
    if scale > 0.0 {
        let mut worst = 0.0f64;
        for i in 0..rows {
            for j in (i + 1)..cols {
                worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
            }
        }
        let rel = worst / scale;
        if rel > SYMMETRY_TOLERANCE {
            return Err(Error::NotSymmetric(rel));
        }
    }
    let eig = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..rows).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = Matrix::zeros(rows, rows);
    for (k, &i) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(i);
        vectors.set_column(k, &(col / col.norm()));
    }
    Ok((values, vectors))
}

/// Orthogonal polynomial family together with its probability weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolyFamily {
    /// Legendre polynomials, orthonormal against U(-1, 1).
    Legendre,
    /// Probabilists' Hermite polynomials, orthonormal against N(0, 1).
    Hermite,
}

impl PolyFamily {
    /// Three-term recurrence `x p_k = b_{k+1} p_{k+1} + b_k p_{k-1}` for the
    /// orthonormal family (both weights are symmetric, so no diagonal term).
    fn offdiag(self, k: usize) -> f64 {
        let k = k as f64;
        match self {
            PolyFamily::Legendre => k / (4.0 * k * k - 1.0).sqrt(),
            PolyFamily::Hermite => k.sqrt(),
        }
    }

    /// Values of the orthonormal polynomials of degree 0..=max_degree at `x`.
    pub fn eval_all(self, max_degree: usize, x: f64, out: &mut Vec<f64>) {
        out.clear();
        out.push(1.0);
        if max_degree == 0 {
            return;
        }
        let b1 = self.offdiag(1);
        out.push(x / b1);
        for k in 1..max_degree {
            let bk = self.offdiag(k);
            let bk1 = self.offdiag(k + 1);
            let next = (x * out[k] - bk * out[k - 1]) / bk1;
            out.push(next);
        }
    }

    pub fn eval(self, degree: usize, x: f64) -> f64 {
        let mut buf = Vec::with_capacity(degree + 1);
        self.eval_all(degree, x, &mut buf);
        buf[degree]
    }
}

/// Gauss rule with `order` nodes for the family's probability measure.
///
/// Nodes come from the Jacobi matrix eigenvalues, are polished by Newton
/// iterations on the recurrence, and weights use the Christoffel formula.
pub fn gauss_quadrature_nodes(family: PolyFamily, order: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if order == 0 {
        return Err(Error::invalid("quadrature order must be at least 1"));
    }
    let mut jacobi = Matrix::zeros(order, order);
    for k in 1..order {
        let b = family.offdiag(k);
        jacobi[(k - 1, k)] = b;
        jacobi[(k, k - 1)] = b;
    }
    let mut nodes: Vec<f64> = jacobi.symmetric_eigen().eigenvalues.iter().cloned().collect();
    nodes.sort_by(f64::total_cmp);

    let mut buf = Vec::with_capacity(order + 1);
    for x in nodes.iter_mut() {
        for _ in 0..3 {
            family.eval_all(order, *x, &mut buf);
            // p_n' = sqrt-free form from the recurrence derivative
            let dp = derivative_of_top(family, order, *x);
            if dp == 0.0 {
                break;
            }
            let step = buf[order] / dp;
            *x -= step;
            if step.abs() < 1e-16 * (1.0 + x.abs()) {
                break;
            }
        }
    }
    // both weights are even, so enforce an exactly symmetric rule
    let n = nodes.len();
    for i in 0..n / 2 {
        let x = 0.5 * (nodes[n - 1 - i] - nodes[i]);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    let weights = nodes
        .iter()
        .map(|&x| {
            family.eval_all(order - 1, x, &mut buf);
            1.0 / buf.iter().map(|p| p * p).sum::<f64>()
        })
        .collect();
    Ok((nodes, weights))
}

fn derivative_of_top(family: PolyFamily, n: usize, x: f64) -> f64 {
    // Differentiate the recurrence alongside the values.
    let mut p_prev = 1.0;
    let mut d_prev = 0.0;
    let b1 = family.offdiag(1);
    let mut p = x / b1;
    let mut d = 1.0 / b1;
    for k in 1..n {
        let bk = family.offdiag(k);
        let bk1 = family.offdiag(k + 1);
        let p_next = (x * p - bk * p_prev) / bk1;
        let d_next = (p + x * d - bk * d_prev) / bk1;
        p_prev = p;
        d_prev = d;
        p = p_next;
        d = d_next;
    }
    d
}

/// How [`interp_linear`] treats queries outside the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Extrapolation {
    #[default]
    Refuse,
    Clamp,
}

/// Piecewise-linear interpolation of `(grid_x, grid_y)` at `query`.
pub fn interp_linear(
    grid_x: &[f64],
    grid_y: &[f64],
    query: &[f64],
    mode: Extrapolation,
) -> Result<Vec<f64>> {
    if grid_x.len() != grid_y.len() {
        return Err(Error::dims(format!(
            "grid has {} abscissae but {} values",
            grid_x.len(),
            grid_y.len()
        )));
    }
    if grid_x.is_empty() {
        return Err(Error::invalid("empty interpolation grid"));
    }
    if grid_x.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("interpolation abscissae must be strictly increasing"));
    }
    let lo = grid_x[0];
    let hi = grid_x[grid_x.len() - 1];
    query
        .iter()
        .map(|&q| {
            if !(q >= lo && q <= hi) {
                match mode {
                    Extrapolation::Refuse => return Err(Error::OutOfRange { value: q, lo, hi }),
                    Extrapolation::Clamp => {
                        return Ok(if q < lo { grid_y[0] } else { grid_y[grid_y.len() - 1] })
                    }
                }
            }
            Ok(interp_at(grid_x, grid_y, q))
        })
        .collect()
}

fn interp_at(xs: &[f64], ys: &[f64], q: f64) -> f64 {
    let n = xs.len();
    if n == 1 {
        return ys[0];
    }
    // index of the first abscissa strictly greater than q
    let upper = xs.partition_point(|&x| x <= q);
    if upper == 0 {
        return ys[0];
    }
    if upper >= n {
        return ys[n - 1];
    }
    let (x0, x1) = (xs[upper - 1], xs[upper]);
    let w = (q - x0) / (x1 - x0);
    ys[upper - 1] + w * (ys[upper] - ys[upper - 1])
}

/// Trapezoidal integral of samples on a uniform grid with spacing `dt`.
pub fn trapezoid(values: &[f64], dt: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => dt * (values[1..n - 1].iter().sum::<f64>() + 0.5 * (values[0] + values[n - 1])),
    }
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Unbiased sample variance.
pub fn variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64
}
