//! Validation metrics over ensembles of traces.

use serde::{Deserialize, Serialize};

/// Instants whose validation variance is below this fraction of the largest
/// one are reported as plain mean squared error.
const ZERO_VARIANCE: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointInTimeError {
    pub epsilon: Vec<f64>,
    /// `true` where `epsilon` holds the absolute mean squared error because
    /// the validation traces do not vary.
    pub mse_fallback: Vec<bool>,
}

impl PointInTimeError {
    pub fn mean_over(&self, from: usize) -> f64 {
        let tail = &self.epsilon[from.min(self.epsilon.len())..];
        tail.iter().sum::<f64>() / tail.len().max(1) as f64
    }

    pub fn fallback_count(&self) -> usize {
        self.mse_fallback.iter().filter(|f| **f).count()
    }
}

fn check_aligned(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<usize, String> {
    if a.len() != b.len() || a.is_empty() {
        return Err(format!("{} validation traces but {} predictions", a.len(), b.len()));
    }
    let q = a[0].len();
    if a.iter().chain(b).any(|r| r.len() != q) {
        return Err("traces have different lengths".into());
    }
    Ok(q)
}

/// `eps(t) = sum_i (y_i(t) - yhat_i(t))^2 / sum_i (y_i(t) - ybar(t))^2`.
pub fn point_in_time_error(validation: &[Vec<f64>], predicted: &[Vec<f64>]) -> Result<PointInTimeError, String> {
    let q = check_aligned(validation, predicted)?;
    let n = validation.len() as f64;
    let mut num = vec![0.0; q];
    let mut den = vec![0.0; q];
    for k in 0..q {
        let mean = validation.iter().map(|r| r[k]).sum::<f64>() / n;
        for (y, p) in validation.iter().zip(predicted) {
            num[k] += (y[k] - p[k]).powi(2);
            den[k] += (y[k] - mean).powi(2);
        }
    }
    let peak = den.iter().cloned().fold(0.0, f64::max);
    let mut epsilon = Vec::with_capacity(q);
    let mut mse_fallback = Vec::with_capacity(q);
    for k in 0..q {
        let flat = den[k] <= ZERO_VARIANCE * peak || den[k] == 0.0;
        epsilon.push(if flat { num[k] / n } else { num[k] / den[k] });
        mse_fallback.push(flat);
    }
    Ok(PointInTimeError { epsilon, mse_fallback })
}

/// Running pointwise mean and variance (Welford), fed one trace at a time
/// so that large ensembles need not be stored.
#[derive(Debug, Clone)]
pub struct StatsAccumulator {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl StatsAccumulator {
    pub fn new(steps: usize) -> Self {
        StatsAccumulator { n: 0, mean: vec![0.0; steps], m2: vec![0.0; steps] }
    }

    pub fn push(&mut self, y: &[f64]) {
        assert_eq!(y.len(), self.mean.len(), "trace length");
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(y) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Mean and `(N-1)`-normalised standard deviation curves.
    pub fn finish(&self) -> Result<(Vec<f64>, Vec<f64>), String> {
        if self.n < 2 {
            return Err(format!("statistics need at least 2 traces, got {}", self.n));
        }
        let d = (self.n - 1) as f64;
        Ok((self.mean.clone(), self.m2.iter().map(|s| (s / d).max(0.0).sqrt()).collect()))
    }
}

pub fn ensemble_statistics(ens: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<f64>), String> {
    let q = ens.first().map_or(0, Vec::len);
    let mut acc = StatsAccumulator::new(q);
    for r in ens {
        if r.len() != q {
            return Err("traces have different lengths".into());
        }
        acc.push(r);
    }
    acc.finish()
}

/// `||a - b|| / ||b||`.
pub fn relative_l2(a: &[f64], b: &[f64]) -> f64 {
    uqdyn::narx::relative_error(a, b, 0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Winner {
    A,
    B,
    Tie,
}

impl Winner {
    pub fn label(self) -> &'static str {
        match self {
            Winner::A => "a",
            Winner::B => "b",
            Winner::Tie => "tie",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub winners: Vec<Winner>,
    pub n_traces: usize,
    pub wins_a: usize,
    pub wins_b: usize,
    pub ties: usize,
    /// Fraction of traces won by A, counting ties as half a win.
    pub win_fraction_a: f64,
    /// Fraction of traces where A is strictly better.
    pub strict_fraction_a: f64,
    pub median_a: f64,
    pub median_b: f64,
    /// `median_a / median_b`; 1 when both medians vanish.
    pub median_ratio: f64,
    /// Mean of `err_a - err_b` over traces where both are finite.
    pub mean_difference: f64,
    pub finite_pairs: usize,
}

/// Per-trace winner between two error vectors on the same validation set.
/// Equal errors (including two diverged traces) are ties.
pub fn compare_surrogates(err_a: &[f64], err_b: &[f64]) -> Result<Comparison, String> {
    if err_a.len() != err_b.len() || err_a.is_empty() {
        return Err(format!("{} and {} trace errors", err_a.len(), err_b.len()));
    }
    if err_a.iter().chain(err_b).any(|e| e.is_nan() || *e < 0.0) {
        return Err("trace errors must be non-negative".into());
    }
    let winners: Vec<Winner> = err_a
        .iter()
        .zip(err_b)
        .map(|(a, b)| match a.partial_cmp(b) {
            Some(std::cmp::Ordering::Less) => Winner::A,
            Some(std::cmp::Ordering::Greater) => Winner::B,
            _ => Winner::Tie,
        })
        .collect();
    let count = |w: Winner| winners.iter().filter(|x| **x == w).count();
    let (wins_a, wins_b, ties) = (count(Winner::A), count(Winner::B), count(Winner::Tie));
    let n = err_a.len();
    let finite: Vec<f64> = err_a.iter().zip(err_b).filter(|(a, b)| a.is_finite() && b.is_finite()).map(|(a, b)| a - b).collect();
    let (median_a, median_b) = (median(err_a), median(err_b));
    let median_ratio = if median_a == median_b { 1.0 } else { median_a / median_b };
    Ok(Comparison {
        n_traces: n,
        wins_a,
        wins_b,
        ties,
        win_fraction_a: (wins_a as f64 + 0.5 * ties as f64) / n as f64,
        strict_fraction_a: wins_a as f64 / n as f64,
        median_a,
        median_b,
        median_ratio,
        mean_difference: if finite.is_empty() { 0.0 } else { finite.iter().sum::<f64>() / finite.len() as f64 },
        finite_pairs: finite.len(),
        winners,
    })
}

/// Median with the mean of the two middle values for even lengths; NaN for
/// an empty slice.
pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else if s[m - 1] == s[m] {
        s[m]
    } else {
        0.5 * (s[m - 1] + s[m])
    }
}

/// Fraction of values strictly above `threshold`.
pub fn exceedance(v: &[f64], threshold: f64) -> f64 {
    v.iter().filter(|e| **e > threshold).count() as f64 / v.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ens() -> Vec<Vec<f64>> {
        vec![vec![1.0, 0.0, 2.0], vec![-1.0, 0.0, 4.0], vec![3.0, 0.0, -3.0], vec![0.5, 0.0, 1.0]]
    }

    #[test]
    fn perfect_predictions_have_zero_error() {
        let e = point_in_time_error(&ens(), &ens()).unwrap();
        assert!(e.epsilon.iter().all(|v| *v == 0.0));
        assert_eq!(e.mse_fallback, vec![false, true, false]);
    }

    #[test]
    fn mean_predictions_give_one() {
        let v = ens();
        let n = v.len() as f64;
        let mean: Vec<f64> = (0..3).map(|k| v.iter().map(|r| r[k]).sum::<f64>() / n).collect();
        let pred = vec![mean; v.len()];
        let e = point_in_time_error(&v, &pred).unwrap();
        for k in [0, 2] {
            assert!((e.epsilon[k] - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_variance_instants_report_mse() {
        let v = ens();
        let mut p = ens();
        p[0][1] = 2.0;
        let e = point_in_time_error(&v, &p).unwrap();
        assert!(e.mse_fallback[1]);
        assert!((e.epsilon[1] - 1.0).abs() < 1e-15);
        assert_eq!(e.fallback_count(), 1);
        assert!(point_in_time_error(&v, &p[..2]).is_err());
    }

    #[test]
    fn statistics_examples() {
        let (m, s) = ensemble_statistics(&[vec![2.5; 4], vec![2.5; 4], vec![2.5; 4]]).unwrap();
        assert_eq!(m, vec![2.5; 4]);
        assert_eq!(s, vec![0.0; 4]);
        let (m, s) = ensemble_statistics(&[vec![1.0], vec![-1.0]]).unwrap();
        assert_eq!(m, vec![0.0]);
        assert!((s[0] - 2f64.sqrt()).abs() < 1e-15);
        assert!(ensemble_statistics(&[vec![1.0]]).is_err());
    }

    #[test]
    fn welford_matches_two_pass() {
        let rows: Vec<Vec<f64>> = (0..50).map(|i| vec![(i as f64 * 0.37).sin() * 1e3 + 1e6, i as f64]).collect();
        let (m, s) = ensemble_statistics(&rows).unwrap();
        for k in 0..2 {
            let mean = rows.iter().map(|r| r[k]).sum::<f64>() / 50.0;
            let var = rows.iter().map(|r| (r[k] - mean).powi(2)).sum::<f64>() / 49.0;
            assert!((m[k] - mean).abs() <= 1e-9 * mean.abs().max(1.0));
            assert!((s[k] - var.sqrt()).abs() <= 1e-9 * var.sqrt());
        }
    }

    #[test]
    fn comparison_conventions() {
        let a = [0.1, 0.2, 0.3];
        let c = compare_surrogates(&a, &a).unwrap();
        assert_eq!(c.ties, 3);
        assert_eq!(c.win_fraction_a, 0.5);
        assert_eq!(c.mean_difference, 0.0);
        assert_eq!(c.median_ratio, 1.0);
        let c = compare_surrogates(&[0.0; 3], &a).unwrap();
        assert_eq!(c.wins_a, 3);
        assert_eq!(c.win_fraction_a, 1.0);
        assert_eq!(c.strict_fraction_a, 1.0);
        let c = compare_surrogates(&[f64::INFINITY, 0.1], &[f64::INFINITY, f64::INFINITY]).unwrap();
        assert_eq!(c.winners, vec![Winner::Tie, Winner::A]);
        assert_eq!(c.finite_pairs, 0);
        assert!(compare_surrogates(&[0.1], &[0.1, 0.2]).is_err());
        assert!(compare_surrogates(&[f64::NAN], &[0.1]).is_err());
    }

    #[test]
    fn median_and_exceedance() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median(&[1.0, f64::INFINITY, f64::INFINITY, 0.5]), f64::INFINITY);
        assert_eq!(exceedance(&[0.1, 0.6, f64::INFINITY], 0.5), 2.0 / 3.0);
    }
}
