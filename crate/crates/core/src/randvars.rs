//! Independent-marginal random vectors, seeded sampling and the
//! isoprobabilistic maps onto the standard variables of the polynomial bases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::PolyFamily;

const SQRT_3: f64 = 1.732_050_807_568_877_2;

/// One input marginal, as written in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Marginal {
    Uniform { lower: f64, upper: f64 },
    /// Uniform distribution given by its first two moments.
    UniformMeanStd { mean: f64, std: f64 },
    Normal { mean: f64, std: f64 },
    /// Normal distribution given by mean and coefficient of variation.
    NormalCov { mean: f64, cov: f64 },
    /// Integers `lower..=upper` with equal probability.
    DiscreteUniform { lower: i64, upper: i64 },
}

impl Marginal {
    pub fn uniform(lower: f64, upper: f64) -> Result<Self> {
        Marginal::Uniform { lower, upper }.validated()
    }

    pub fn uniform_mean_std(mean: f64, std: f64) -> Result<Self> {
        Marginal::UniformMeanStd { mean, std }.validated()
    }

    pub fn normal(mean: f64, std: f64) -> Result<Self> {
        Marginal::Normal { mean, std }.validated()
    }

    pub fn normal_cov(mean: f64, cov: f64) -> Result<Self> {
        Marginal::NormalCov { mean, cov }.validated()
    }

    pub fn discrete_uniform(lower: i64, upper: i64) -> Result<Self> {
        Marginal::DiscreteUniform { lower, upper }.validated()
    }

    pub fn validated(self) -> Result<Self> {
        let ok = match self {
            Marginal::Uniform { lower, upper } => lower.is_finite() && upper.is_finite() && lower < upper,
            Marginal::UniformMeanStd { mean, std } | Marginal::Normal { mean, std } => {
                mean.is_finite() && std.is_finite() && std > 0.0
            }
            Marginal::NormalCov { mean, cov } => mean.is_finite() && cov.is_finite() && (cov * mean).abs() > 0.0,
            Marginal::DiscreteUniform { lower, upper } => lower <= upper,
        };
        if ok {
            Ok(self)
        } else {
            Err(Error::invalid(format!("invalid marginal {self:?}")))
        }
    }

    /// Canonical form: uniform by bounds, normal by mean and std.
    pub fn canonical(self) -> Self {
        match self {
            Marginal::UniformMeanStd { mean, std } => Marginal::Uniform {
                lower: mean - SQRT_3 * std,
                upper: mean + SQRT_3 * std,
            },
            Marginal::NormalCov { mean, cov } => Marginal::Normal { mean, std: (cov * mean).abs() },
            m => m,
        }
    }

    /// Closed support `[lo, hi]` (infinite for normal marginals).
    pub fn support(self) -> (f64, f64) {
        match self.canonical() {
            Marginal::Uniform { lower, upper } => (lower, upper),
            Marginal::DiscreteUniform { lower, upper } => (lower as f64, upper as f64),
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    pub fn mean(self) -> f64 {
        match self.canonical() {
            Marginal::Uniform { lower, upper } => 0.5 * (lower + upper),
            Marginal::Normal { mean, .. } => mean,
            Marginal::DiscreteUniform { lower, upper } => 0.5 * (lower + upper) as f64,
            _ => unreachable!(),
        }
    }

    pub fn std(self) -> f64 {
        match self.canonical() {
            Marginal::Uniform { lower, upper } => (upper - lower) / (2.0 * SQRT_3),
            Marginal::Normal { std, .. } => std,
            Marginal::DiscreteUniform { lower, upper } => {
                let n = (upper - lower + 1) as f64;
                ((n * n - 1.0) / 12.0).sqrt()
            }
            _ => unreachable!(),
        }
    }

    /// Polynomial family orthonormal with respect to this marginal, if any.
    pub fn family(self) -> Result<PolyFamily> {
        match self.canonical() {
            Marginal::Uniform { .. } => Ok(PolyFamily::Legendre),
            Marginal::Normal { .. } => Ok(PolyFamily::Hermite),
            m => Err(Error::UnsupportedMarginal(format!("{m:?}"))),
        }
    }

    pub fn contains(self, x: f64) -> bool {
        let (lo, hi) = self.support();
        match self.canonical() {
            Marginal::DiscreteUniform { .. } => x >= lo && x <= hi && x.fract() == 0.0,
            _ => x.is_finite() && x >= lo && x <= hi,
        }
    }

    pub fn draw<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self.canonical() {
            Marginal::Uniform { lower, upper } => rng.random_range(lower..upper),
            Marginal::Normal { mean, std } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + std * z
            }
            Marginal::DiscreteUniform { lower, upper } => rng.random_range(lower..=upper) as f64,
            _ => unreachable!(),
        }
    }

    /// Map a physical value onto the standard variable of the basis.
    pub fn to_standard(self, x: f64) -> Result<f64> {
        if !self.contains(x) {
            let (lo, hi) = self.support();
            return Err(Error::OutOfRange { value: x, lo, hi });
        }
        match self.canonical() {
            Marginal::Uniform { lower, upper } => Ok(2.0 * (x - lower) / (upper - lower) - 1.0),
            Marginal::Normal { mean, std } => Ok((x - mean) / std),
            m => Err(Error::UnsupportedMarginal(format!("{m:?}"))),
        }
    }

    pub fn from_standard(self, u: f64) -> Result<f64> {
        match self.canonical() {
            Marginal::Uniform { lower, upper } => {
                if !(-1.0..=1.0).contains(&u) {
                    return Err(Error::OutOfRange { value: u, lo: -1.0, hi: 1.0 });
                }
                Ok(lower + 0.5 * (u + 1.0) * (upper - lower))
            }
            Marginal::Normal { mean, std } => Ok(mean + std * u),
            m => Err(Error::UnsupportedMarginal(format!("{m:?}"))),
        }
    }
}

/// Vector of mutually independent marginals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RandomVector {
    marginals: Vec<Marginal>,
}

impl RandomVector {
    pub fn new(marginals: Vec<Marginal>) -> Result<Self> {
        if marginals.is_empty() {
            return Err(Error::invalid("random vector needs at least one marginal"));
        }
        let marginals = marginals.into_iter().map(Marginal::validated).collect::<Result<_>>()?;
        Ok(RandomVector { marginals })
    }

    pub fn dim(&self) -> usize {
        self.marginals.len()
    }

    pub fn marginals(&self) -> &[Marginal] {
        &self.marginals
    }

    pub fn mean(&self) -> Vec<f64> {
        self.marginals.iter().map(|m| m.mean()).collect()
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.marginals.iter().map(|m| m.draw(rng)).collect()
    }

    pub fn to_standard(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        self.marginals.iter().zip(x).map(|(m, &v)| m.to_standard(v)).collect()
    }

    pub fn from_standard(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(u)?;
        self.marginals.iter().zip(u).map(|(m, &v)| m.from_standard(v)).collect()
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::dims(format!(
                "point has {} components, random vector has {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }
}

/// Draws of a random vector, one row per realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub points: Vec<Vec<f64>>,
    pub seed: u64,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, |p| p.len())
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.points.iter().map(|p| p[j]).collect()
    }

    pub fn to_standard(&self, rv: &RandomVector) -> Result<Vec<Vec<f64>>> {
        self.points.iter().map(|p| rv.to_standard(p)).collect()
    }
}

/// SplitMix64 finalizer; derives independent per-item seeds from a root seed.
pub fn derive_seed(root: u64, index: u64) -> u64 {
    let mut z = root ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for draw `index` of the stream rooted at `seed`.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, index))
}

/// Plain Monte Carlo sample; draw `i` only depends on `(seed, i)`.
pub fn sample(rv: &RandomVector, n: usize, seed: u64) -> Result<SampleSet> {
    if n == 0 {
        return Err(Error::invalid("sample size must be at least 1"));
    }
    let points = (0..n as u64).map(|i| rv.draw(&mut stream_rng(seed, i))).collect();
    Ok(SampleSet { points, seed })
}
