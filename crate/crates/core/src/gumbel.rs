//! Gumbel-Max sampling, the Gumbel-Softmax relaxation and temperature annealing.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unnormalized log-probabilities of a categorical distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassLogits {
    log_pi: Vec<f64>,
}

impl ClassLogits {
    /// `-inf` entries are allowed (zero-probability classes) as long as one entry is finite.
    pub fn new(log_pi: Vec<f64>) -> Result<Self> {
        if log_pi.len() < 2 {
            return Err(Error::InvalidArgument("need at least 2 classes".into()));
        }
        if log_pi.iter().any(|v| v.is_nan() || *v == f64::INFINITY)
            || !log_pi.iter().any(|v| v.is_finite())
        {
            return Err(Error::InvalidArgument("logits must be finite or -inf".into()));
        }
        Ok(Self { log_pi })
    }

    pub fn from_probs(probs: &[f64]) -> Result<Self> {
        Self::new(probs.iter().map(|p| p.ln()).collect())
    }

    pub fn uniform(k: usize) -> Result<Self> {
        Self::new(vec![0.0; k])
    }

    pub fn k(&self) -> usize {
        self.log_pi.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.log_pi
    }

    /// Normalized class probabilities.
    pub fn probs(&self) -> Vec<f64> {
        softmax(&self.log_pi, 1.0)
    }
}

/// A point on the simplex drawn from the Gumbel-Softmax distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct GsSample {
    pub y: Vec<f64>,
    pub tau: f64,
}

impl GsSample {
    pub fn argmax(&self) -> usize {
        argmax(&self.y)
    }

    pub fn max(&self) -> f64 {
        self.y.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Largest `f64` below 1.
const ONE_BELOW: f64 = 1.0 - f64::EPSILON / 2.0;

/// Uniform draw on the open interval (0, 1): `(n + 0.5) / 2^53` for a 53-bit integer `n`.
///
/// For `n = 2^53 - 1` the quotient rounds to 1.0, so it is pulled back to the
/// largest double below 1.
#[inline]
pub fn open_uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let n = rng.next_u64() >> 11;
    ((n as f64 + 0.5) / (1u64 << 53) as f64).min(ONE_BELOW)
}

/// Standard Gumbel transform of a uniform variate.
#[inline]
pub fn gumbel_from_uniform(u: f64) -> f64 {
    -(-u.ln()).ln()
}

pub fn gumbel_noise<R: Rng + ?Sized>(rng: &mut R, k: usize) -> Vec<f64> {
    (0..k).map(|_| gumbel_from_uniform(open_uniform(rng))).collect()
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Temperature-scaled softmax with max subtraction.
pub fn softmax(v: &[f64], tau: f64) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| ((x - m) / tau).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// One-hot categorical sample via the Gumbel-Max trick.
pub fn gumbel_max_sample<R: Rng + ?Sized>(logits: &ClassLogits, rng: &mut R) -> Vec<f64> {
    let g = gumbel_noise(rng, logits.k());
    gumbel_max_with_noise(logits, &g)
}

pub fn gumbel_max_with_noise(logits: &ClassLogits, noise: &[f64]) -> Vec<f64> {
    let perturbed: Vec<f64> = logits.log_pi.iter().zip(noise).map(|(l, g)| l + g).collect();
    let mut one_hot = vec![0.0; logits.k()];
    one_hot[argmax(&perturbed)] = 1.0;
    one_hot
}

pub fn gumbel_softmax_sample<R: Rng + ?Sized>(
    logits: &ClassLogits,
    tau: f64,
    rng: &mut R,
) -> Result<GsSample> {
    let g = gumbel_noise(rng, logits.k());
    gumbel_softmax_with_noise(logits, tau, &g)
}

/// Gumbel-Softmax sample for externally supplied noise.
pub fn gumbel_softmax_with_noise(logits: &ClassLogits, tau: f64, noise: &[f64]) -> Result<GsSample> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidTemperature(tau));
    }
    if noise.len() != logits.k() {
        return Err(Error::Shape(format!(
            "{} noise values for {} classes",
            noise.len(),
            logits.k()
        )));
    }
    let perturbed: Vec<f64> = logits.log_pi.iter().zip(noise).map(|(l, g)| l + g).collect();
    Ok(GsSample {
        y: softmax(&perturbed, tau),
        tau,
    })
}

/// Jacobian-vector product of the Gumbel-Softmax sample with respect to the logits:
/// returns `dL/dlog_pi` given `dL/dy`.
pub fn gumbel_softmax_backward(sample: &GsSample, grad_y: &[f64]) -> Vec<f64> {
    let dot: f64 = sample.y.iter().zip(grad_y).map(|(y, g)| y * g).sum();
    sample
        .y
        .iter()
        .zip(grad_y)
        .map(|(y, g)| y * (g - dot) / sample.tau)
        .collect()
}

/// Monotone geometric temperature decay from `tau_start` to `tau_end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TemperatureSchedule {
    pub tau_start: f64,
    pub tau_end: f64,
    pub total_epochs: usize,
}

impl TemperatureSchedule {
    pub fn new(tau_start: f64, tau_end: f64, total_epochs: usize) -> Result<Self> {
        let s = Self {
            tau_start,
            tau_end,
            total_epochs,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_end > 0.0) || self.tau_start < self.tau_end || !self.tau_start.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "temperature schedule needs tau_start >= tau_end > 0, got {} -> {}",
                self.tau_start, self.tau_end
            )));
        }
        if self.total_epochs == 0 {
            return Err(Error::InvalidArgument("total_epochs must be >= 1".into()));
        }
        Ok(())
    }
}

impl Default for TemperatureSchedule {
    fn default() -> Self {
        Self {
            tau_start: 1.0,
            tau_end: 0.5,
            total_epochs: 500,
        }
    }
}

/// `start * (end / start)^(e / (total - 1))`, hitting both endpoints exactly.
pub(crate) fn geometric(start: f64, end: f64, epoch: usize, total: usize) -> f64 {
    if epoch == 0 || total == 1 {
        start
    } else if epoch == total - 1 {
        end
    } else {
        start * (end / start).powf(epoch as f64 / (total - 1) as f64)
    }
}

pub fn anneal(schedule: &TemperatureSchedule, epoch: usize) -> Result<f64> {
    if epoch >= schedule.total_epochs {
        return Err(Error::OutOfRange {
            what: "epoch",
            value: epoch,
            bound: schedule.total_epochs,
        });
    }
    Ok(geometric(
        schedule.tau_start,
        schedule.tau_end,
        epoch,
        schedule.total_epochs,
    ))
}
