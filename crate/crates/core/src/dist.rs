//! The i.i.d. parameter process: independent scalar coordinates with
//! seeded sampling and closed-form mixed moments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Highest total degree `|alpha|` that [`DistributionSpec::moment`] serves.
pub const MAX_MOMENT_DEGREE: u32 = 4;

/// Identifier of the generator behind [`SampleStream`]: ChaCha20 keyed by
/// the 64-bit seed (expanded with `seed_from_u64`), one ChaCha stream per
/// path or sample index.
pub const RNG_ALGORITHM: &str = "chacha20/seed_from_u64/stream=index";

const PROB_SUM_TOL: f64 = 1e-12;

/// Caller-owned random stream.
#[derive(Debug, Clone)]
pub struct SampleStream(ChaCha20Rng);

impl SampleStream {
    pub fn new(seed: u64) -> Self {
        SampleStream(ChaCha20Rng::seed_from_u64(seed))
    }

    /// Independent substream `index` of `seed`. Substreams of one seed never
    /// overlap, and the mapping does not depend on how work is partitioned.
    pub fn substream(seed: u64, index: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(index);
        SampleStream(rng)
    }

    pub(crate) fn rng(&mut self) -> &mut ChaCha20Rng {
        &mut self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScalarDistribution {
    Normal { mean: f64, stddev: f64 },
    Uniform { lo: f64, hi: f64 },
    /// Exponential with the given rate; the mean is `1 / rate`.
    Exponential { rate: f64 },
    Discrete { values: Vec<f64>, probs: Vec<f64> },
    Constant { value: f64 },
}

impl ScalarDistribution {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidDistribution(msg));
        match self {
            ScalarDistribution::Normal { mean, stddev } => {
                if !mean.is_finite() || !(stddev.is_finite() && *stddev > 0.0) {
                    return bad(format!("normal needs finite mean and stddev > 0, got ({mean}, {stddev})"));
                }
            }
            ScalarDistribution::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return bad(format!("uniform needs finite lo < hi, got ({lo}, {hi})"));
                }
            }
            ScalarDistribution::Exponential { rate } => {
                if !(rate.is_finite() && *rate > 0.0) {
                    return bad(format!("exponential needs rate > 0, got {rate}"));
                }
            }
            ScalarDistribution::Discrete { values, probs } => {
                if values.is_empty() || values.len() != probs.len() {
                    return bad(format!(
                        "discrete needs equally long, nonempty values/probs (got {} and {})",
                        values.len(),
                        probs.len()
                    ));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return bad("discrete values must be finite".into());
                }
                if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                    return bad("discrete probabilities must be nonnegative".into());
                }
                let total: f64 = probs.iter().sum();
                if (total - 1.0).abs() > PROB_SUM_TOL {
                    return bad(format!("discrete probabilities sum to {total}, not 1"));
                }
            }
            ScalarDistribution::Constant { value } => {
                if !value.is_finite() {
                    return bad("constant value must be finite".into());
                }
            }
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut SampleStream) -> f64 {
        let rng = rng.rng();
        match self {
            ScalarDistribution::Normal { mean, stddev } => {
                Normal::new(*mean, *stddev).expect("validated").sample(rng)
            }
            ScalarDistribution::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            ScalarDistribution::Exponential { rate } => Exp::new(*rate).expect("validated").sample(rng),
            ScalarDistribution::Discrete { values, probs } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (v, p) in values.iter().zip(probs) {
                    acc += p;
                    if u < acc {
                        return *v;
                    }
                }
                // u landed in the rounding slack above the last cumulative sum
                *values
                    .iter()
                    .zip(probs)
                    .rev()
                    .find(|(_, p)| **p > 0.0)
                    .map(|(v, _)| v)
                    .unwrap_or(&values[values.len() - 1])
            }
            ScalarDistribution::Constant { value } => *value,
        }
    }

    /// Raw moment `E[x^p]` in closed form.
    pub fn raw_moment(&self, p: u32) -> f64 {
        if p == 0 {
            return 1.0;
        }
        match self {
            ScalarDistribution::Normal { mean, stddev } => {
                // E[(mu + sigma Z)^p] = sum_k C(p,k) mu^(p-k) sigma^k E[Z^k]
                let mut total = 0.0;
                for k in (0..=p).step_by(2) {
                    total += binomial(p, k)
                        * mean.powi((p - k) as i32)
                        * stddev.powi(k as i32)
                        * double_factorial_odd(k);
                }
                total
            }
            ScalarDistribution::Uniform { lo, hi } => {
                let q = (p + 1) as i32;
                (hi.powi(q) - lo.powi(q)) / ((p + 1) as f64 * (hi - lo))
            }
            ScalarDistribution::Exponential { rate } => factorial(p) / rate.powi(p as i32),
            ScalarDistribution::Discrete { values, probs } => values
                .iter()
                .zip(probs)
                .map(|(v, w)| w * v.powi(p as i32))
                .sum(),
            ScalarDistribution::Constant { value } => value.powi(p as i32),
        }
    }

    pub fn mean(&self) -> f64 {
        self.raw_moment(1)
    }

    pub fn variance(&self) -> f64 {
        match self {
            ScalarDistribution::Normal { stddev, .. } => stddev * stddev,
            ScalarDistribution::Uniform { lo, hi } => (hi - lo).powi(2) / 12.0,
            ScalarDistribution::Exponential { rate } => 1.0 / (rate * rate),
            ScalarDistribution::Constant { .. } => 0.0,
            ScalarDistribution::Discrete { .. } => self.raw_moment(2) - self.mean().powi(2),
        }
    }

    /// Smallest value in the support, `-inf` when unbounded below.
    pub fn support_min(&self) -> f64 {
        match self {
            ScalarDistribution::Normal { .. } => f64::NEG_INFINITY,
            ScalarDistribution::Uniform { lo, .. } => *lo,
            ScalarDistribution::Exponential { .. } => 0.0,
            ScalarDistribution::Discrete { values, probs } => values
                .iter()
                .zip(probs)
                .filter(|(_, p)| **p > 0.0)
                .map(|(v, _)| *v)
                .fold(f64::INFINITY, f64::min),
            ScalarDistribution::Constant { value } => *value,
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            ScalarDistribution::Normal { .. } => "normal",
            ScalarDistribution::Uniform { .. } => "uniform",
            ScalarDistribution::Exponential { .. } => "exponential",
            ScalarDistribution::Discrete { .. } => "discrete",
            ScalarDistribution::Constant { .. } => "constant",
        }
    }
}

fn factorial(p: u32) -> f64 {
    (1..=p).map(f64::from).product()
}

fn binomial(p: u32, k: u32) -> f64 {
    factorial(p) / (factorial(k) * factorial(p - k))
}

/// `E[Z^k]` for standard normal `Z` and even `k`: `(k-1)!!`.
fn double_factorial_odd(k: u32) -> f64 {
    (1..k).step_by(2).map(f64::from).product()
}

/// Product of independent scalar coordinates, `xi in R^Z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DistributionSpecRepr")]
pub struct DistributionSpec {
    coords: Vec<ScalarDistribution>,
}

#[derive(Deserialize)]
struct DistributionSpecRepr {
    coords: Vec<ScalarDistribution>,
}

impl TryFrom<DistributionSpecRepr> for DistributionSpec {
    type Error = Error;

    fn try_from(r: DistributionSpecRepr) -> Result<Self> {
        DistributionSpec::new(r.coords)
    }
}

impl DistributionSpec {
    pub fn new(coords: Vec<ScalarDistribution>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::InvalidDistribution("at least one coordinate is required".into()));
        }
        for c in &coords {
            c.validate()?;
        }
        Ok(DistributionSpec { coords })
    }

    pub fn coords(&self) -> &[ScalarDistribution] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn sample(&self, rng: &mut SampleStream) -> Vec<f64> {
        self.coords.iter().map(|c| c.sample(rng)).collect()
    }

    /// `E[xi^alpha] = prod_i E[xi_i^alpha_i]`.
    pub fn moment(&self, alpha: &[u32]) -> Result<f64> {
        if alpha.len() != self.coords.len() {
            return Err(Error::dims("moment multi-index", self.coords.len(), alpha.len()));
        }
        let degree: u32 = alpha.iter().sum();
        if degree > MAX_MOMENT_DEGREE {
            return Err(Error::UnsupportedMoment {
                degree,
                max: MAX_MOMENT_DEGREE,
            });
        }
        Ok(self
            .coords
            .iter()
            .zip(alpha)
            .map(|(c, &p)| c.raw_moment(p))
            .product())
    }
}
