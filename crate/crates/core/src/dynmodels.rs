//! Reference computational models: fixed-step RK4, the Bouc-Wen hysteretic
//! oscillator, the two-mass oscillator with a cubic coupling spring, and the
//! random sinusoidal-superposition excitation.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{interp_linear, Extrapolation};
use crate::randvars::stream_rng;

/// Uniform time axis `{0, dt, 2 dt, ..., (steps - 1) dt}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub dt: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(dt: f64, steps: usize) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::invalid(format!("time step must be positive, got {dt}")));
        }
        if steps < 2 {
            return Err(Error::invalid("a time grid needs at least two points"));
        }
        Ok(TimeGrid { dt, steps })
    }

    /// Grid covering `[0, horizon]` with spacing `dt`.
    pub fn with_horizon(horizon: f64, dt: f64) -> Result<Self> {
        let steps = (horizon / dt).round() as usize + 1;
        TimeGrid::new(dt, steps)
    }

    pub fn t(&self, i: usize) -> f64 {
        i as f64 * self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.t(self.steps - 1)
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.steps).map(|i| self.t(i)).collect()
    }

    pub fn same_as(&self, other: &TimeGrid) -> bool {
        self.steps == other.steps && (self.dt - other.dt).abs() <= 1e-12 * self.dt
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
}

impl Trajectory {
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.steps {
            return Err(Error::dims(format!(
                "trajectory has {} values for a {}-point grid",
                values.len(),
                grid.steps
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("trajectory"));
        }
        Ok(Trajectory { grid, values })
    }

    pub fn zeros(grid: TimeGrid) -> Self {
        Trajectory { grid, values: vec![0.0; grid.steps] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Keep every `factor`-th sample.
    pub fn decimate(&self, factor: usize) -> Result<Trajectory> {
        if factor == 0 {
            return Err(Error::invalid("decimation factor must be positive"));
        }
        let values: Vec<f64> = self.values.iter().step_by(factor).cloned().collect();
        let grid = TimeGrid::new(self.grid.dt * factor as f64, values.len())?;
        Ok(Trajectory { grid, values })
    }

    /// Restrict to the first `steps` samples.
    pub fn truncate(&self, steps: usize) -> Result<Trajectory> {
        if steps > self.len() {
            return Err(Error::dims("cannot truncate a trajectory to a longer length"));
        }
        Trajectory::new(TimeGrid::new(self.grid.dt, steps)?, self.values[..steps].to_vec())
    }
}

/// Time-dependent scalar forcing evaluated at arbitrary times.
pub trait Forcing: Sync {
    fn at(&self, t: f64) -> f64;
}

impl Forcing for Trajectory {
    /// Linear interpolation between grid samples, held constant beyond the horizon.
    fn at(&self, t: f64) -> f64 {
        let i = (t / self.grid.dt).floor();
        if i < 0.0 {
            return self.values[0];
        }
        let i = i as usize;
        if i + 1 >= self.values.len() {
            return self.values[self.values.len() - 1];
        }
        let w = t / self.grid.dt - i as f64;
        self.values[i] + w * (self.values[i + 1] - self.values[i])
    }
}

pub struct ZeroForcing;

impl Forcing for ZeroForcing {
    fn at(&self, _t: f64) -> f64 {
        0.0
    }
}

/// `A sin(omega t)`.
#[derive(Debug, Clone, Copy)]
pub struct HarmonicForcing {
    pub amplitude: f64,
    pub omega: f64,
}

impl Forcing for HarmonicForcing {
    fn at(&self, t: f64) -> f64 {
        self.amplitude * (self.omega * t).sin()
    }
}

/// Classical fixed-step RK4. The state is recorded on every grid point, with
/// `substeps` internal steps per grid interval.
pub fn rk4_integrate<const N: usize, F>(
    mut rhs: F,
    init: [f64; N],
    grid: TimeGrid,
    substeps: usize,
) -> Result<Vec<[f64; N]>>
where
    F: FnMut(f64, &[f64; N]) -> [f64; N],
{
    if substeps == 0 {
        return Err(Error::invalid("substeps must be at least 1"));
    }
    if init.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("initial state"));
    }
    let h = grid.dt / substeps as f64;
    let mut states = Vec::with_capacity(grid.steps);
    let mut y = init;
    states.push(y);
    for i in 1..grid.steps {
        let t_start = grid.t(i - 1);
        for s in 0..substeps {
            let t = t_start + s as f64 * h;
            let k1 = rhs(t, &y);
            let k2 = rhs(t + 0.5 * h, &axpy(&y, 0.5 * h, &k1));
            let k3 = rhs(t + 0.5 * h, &axpy(&y, 0.5 * h, &k2));
            let k4 = rhs(t + h, &axpy(&y, h, &k3));
            for j in 0..N {
                y[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
            }
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { time: grid.t(i) });
        }
        states.push(y);
    }
    Ok(states)
}

#[inline]
fn axpy<const N: usize>(y: &[f64; N], a: f64, k: &[f64; N]) -> [f64; N] {
    let mut out = *y;
    for j in 0..N {
        out[j] += a * k[j];
    }
    out
}

/// Parameters of the hysteretic Bouc-Wen oscillator under `A sin(omega_x t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoucWenParams {
    pub zeta: f64,
    pub omega: f64,
    pub alpha: f64,
    pub amplitude: f64,
    pub omega_x: f64,
    pub rho: f64,
    pub gamma: f64,
    pub n_exp: f64,
    pub beta_hyst: f64,
}

impl BoucWenParams {
    pub const DEFAULT_BETA: f64 = 50.0;

    /// Parameters from the uncertain vector `(zeta, omega, alpha, A, omega_x)`
    /// with the remaining constants fixed.
    pub fn from_inputs(x: &[f64], beta_hyst: f64) -> Result<Self> {
        if x.len() != 5 {
            return Err(Error::dims(format!("Bouc-Wen expects 5 inputs, got {}", x.len())));
        }
        BoucWenParams {
            zeta: x[0],
            omega: x[1],
            alpha: x[2],
            amplitude: x[3],
            omega_x: x[4],
            rho: 0.0,
            gamma: 1.0,
            n_exp: 1.0,
            beta_hyst,
        }
        .validated()
    }

    pub fn validated(self) -> Result<Self> {
        if !(self.zeta > 0.0 && self.omega > 0.0) {
            return Err(Error::invalid(format!(
                "Bouc-Wen needs zeta > 0 and omega > 0, got {} and {}",
                self.zeta, self.omega
            )));
        }
        Ok(self)
    }

    fn rhs(&self, t: f64, s: &[f64; 3]) -> [f64; 3] {
        let [y, v, z] = *s;
        let x = self.amplitude * (self.omega_x * t).sin();
        let w2 = self.omega * self.omega;
        let acc = -x - 2.0 * self.zeta * self.omega * v - w2 * (self.rho * y + (1.0 - self.rho) * z);
        let az = z.abs();
        let zn = if self.n_exp == 1.0 { az } else { az.powf(self.n_exp) };
        let zn1z = if self.n_exp == 1.0 { z } else { az.powf(self.n_exp - 1.0) * z };
        let dz = self.gamma * v - self.alpha * v.abs() * zn1z - self.beta_hyst * v * zn;
        [v, acc, dz]
    }
}

/// Displacement history of the Bouc-Wen oscillator; `init = (y, y', z)`.
pub fn simulate_bouc_wen(
    p: &BoucWenParams,
    grid: TimeGrid,
    init: [f64; 3],
    substeps: usize,
) -> Result<Trajectory> {
    let states = rk4_integrate(|t, s| p.rhs(t, s), init, grid, substeps)?;
    Ok(Trajectory { grid, values: states.iter().map(|s| s[0]).collect() })
}

/// Parameters of the two-mass oscillator; the lower mass `m_u` is tied to
/// the ground motion through `k_u`, the upper mass `m_s` hangs on the cubic
/// spring `k_s` and the damper `c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoupledOscParams {
    pub k_u: f64,
    pub k_s: f64,
    pub m_u: f64,
    pub m_s: f64,
    pub c: f64,
}

impl CoupledOscParams {
    /// Nominal strongly damped configuration.
    pub const STRONG_DAMPING: CoupledOscParams =
        CoupledOscParams { k_u: 5000.0, k_s: 1000.0, m_u: 50.0, m_s: 10.0, c: 600.0 };
    /// Nominal weakly damped configuration.
    pub const WEAK_DAMPING: CoupledOscParams =
        CoupledOscParams { k_u: 5000.0, k_s: 1000.0, m_u: 50.0, m_s: 10.0, c: 50.0 };

    /// Parameters from the vector `(k_u, k_s, m_u, m_s, c)`.
    pub fn from_inputs(x: &[f64]) -> Result<Self> {
        if x.len() != 5 {
            return Err(Error::dims(format!("coupled oscillator expects 5 inputs, got {}", x.len())));
        }
        CoupledOscParams { k_u: x[0], k_s: x[1], m_u: x[2], m_s: x[3], c: x[4] }.validated()
    }

    pub fn validated(self) -> Result<Self> {
        if [self.k_u, self.k_s, self.m_u, self.m_s, self.c].iter().all(|v| *v > 0.0) {
            Ok(self)
        } else {
            Err(Error::invalid(format!("coupled oscillator parameters must be positive: {self:?}")))
        }
    }

    fn rhs(&self, x: f64, s: &[f64; 4]) -> [f64; 4] {
        let [y1, v1, y2, v2] = *s;
        let d = y2 - y1;
        let spring = self.k_s * d * d * d;
        let damper = self.c * (v2 - v1);
        [
            v1,
            (spring + damper + self.k_u * (x - y1)) / self.m_u,
            v2,
            -(spring + damper) / self.m_s,
        ]
    }

    /// Mechanical energy with the ground at rest.
    pub fn energy(&self, s: &[f64; 4]) -> f64 {
        let [y1, v1, y2, v2] = *s;
        let d = y2 - y1;
        0.5 * self.m_u * v1 * v1
            + 0.5 * self.m_s * v2 * v2
            + 0.5 * self.k_u * y1 * y1
            + 0.25 * self.k_s * d.powi(4)
    }
}

/// Full state history `(y1, y1', y2, y2')` of the two-mass oscillator.
pub fn simulate_coupled_states(
    p: &CoupledOscParams,
    x: &dyn Forcing,
    grid: TimeGrid,
    init: [f64; 4],
    substeps: usize,
) -> Result<Vec<[f64; 4]>> {
    rk4_integrate(|t, s| p.rhs(x.at(t), s), init, grid, substeps)
}

/// Displacements `(y1, y2)` of the lower and upper mass.
pub fn simulate_coupled(
    p: &CoupledOscParams,
    x: &dyn Forcing,
    grid: TimeGrid,
    init: [f64; 4],
    substeps: usize,
) -> Result<(Trajectory, Trajectory)> {
    let states = simulate_coupled_states(p, x, grid, init, substeps)?;
    let y1 = states.iter().map(|s| s[0]).collect();
    let y2 = states.iter().map(|s| s[2]).collect();
    Ok((Trajectory { grid, values: y1 }, Trajectory { grid, values: y2 }))
}

/// Average of sinusoids, `x(t) = (1/N) sum_i A_i sin(2 pi B_i t + C_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SinSuperposition {
    pub amps: Vec<f64>,
    pub freqs: Vec<f64>,
    pub phases: Vec<f64>,
}

pub const MAX_SIN_TERMS: usize = 10;

impl SinSuperposition {
    pub fn new(amps: Vec<f64>, freqs: Vec<f64>, phases: Vec<f64>) -> Result<Self> {
        let n = amps.len();
        if n == 0 || n > MAX_SIN_TERMS || freqs.len() != n || phases.len() != n {
            return Err(Error::invalid(format!(
                "superposition needs 1..={MAX_SIN_TERMS} terms with matching lengths"
            )));
        }
        let unit = |v: &f64| (-1.0..=1.0).contains(v);
        if !amps.iter().all(unit) || !freqs.iter().all(unit) || !phases.iter().all(|p| (-PI..=PI).contains(p)) {
            return Err(Error::invalid("superposition terms outside their admissible ranges"));
        }
        Ok(SinSuperposition { amps, freqs, phases })
    }

    pub fn n_terms(&self) -> usize {
        self.amps.len()
    }

    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let n = rng.random_range(1..=MAX_SIN_TERMS);
        let mut amps = Vec::with_capacity(n);
        let mut freqs = Vec::with_capacity(n);
        let mut phases = Vec::with_capacity(n);
        for _ in 0..n {
            amps.push(rng.random_range(-1.0..1.0));
            freqs.push(rng.random_range(-1.0..1.0));
            phases.push(rng.random_range(-PI..PI));
        }
        SinSuperposition { amps, freqs, phases }
    }

    pub fn eval(&self, grid: TimeGrid) -> Trajectory {
        Trajectory { grid, values: (0..grid.steps).map(|i| self.at(grid.t(i))).collect() }
    }
}

impl Forcing for SinSuperposition {
    fn at(&self, t: f64) -> f64 {
        let s: f64 = self
            .amps
            .iter()
            .zip(&self.freqs)
            .zip(&self.phases)
            .map(|((a, b), c)| a * (2.0 * PI * b * t + c).sin())
            .sum();
        s / self.amps.len() as f64
    }
}

/// Excitation number `index` of the stream rooted at `seed`.
pub fn sample_excitation(seed: u64, index: u64) -> SinSuperposition {
    SinSuperposition::sample(&mut stream_rng(seed, index))
}

/// Resample a trajectory at arbitrary times by linear interpolation.
pub fn resample(y: &Trajectory, times: &[f64], mode: Extrapolation) -> Result<Vec<f64>> {
    interp_linear(&y.grid.times(), &y.values, times, mode)
}
