use log::warn;
use serde::{Deserialize, Serialize};

use super::{FeatureTensor, Spectrogram};
use crate::error::{Error, Result};

pub const VARIANCE_FLOOR: f64 = 1e-8;

/// Per-bin standardization followed by a global min-max map, fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// Range of the standardized training values.
    pub min: f64,
    pub max: f64,
}

impl NormStats {
    fn fit(specs: &[Spectrogram]) -> Result<Self> {
        let bins = specs[0].values.ncols();
        let mut count = 0usize;
        let mut mean = vec![0.0; bins];
        for s in specs {
            for row in s.values.rows() {
                for (m, v) in mean.iter_mut().zip(row) {
                    *m += v;
                }
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::InvalidArgument("no frames to fit statistics".into()));
        }
        mean.iter_mut().for_each(|m| *m /= count as f64);
        let mut variance = vec![0.0; bins];
        for s in specs {
            for row in s.values.rows() {
                for ((acc, v), m) in variance.iter_mut().zip(row).zip(&mean) {
                    *acc += (v - m) * (v - m);
                }
            }
        }
        let mut floored = 0;
        for v in variance.iter_mut() {
            *v /= count as f64;
            if *v < VARIANCE_FLOOR {
                *v = VARIANCE_FLOOR;
                floored += 1;
            }
        }
        if floored > 0 {
            warn!("{floored} of {bins} frequency bins have zero variance; floored at {VARIANCE_FLOOR:e}");
        }

        let mut stats = NormStats {
            mean,
            variance,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        };
        for s in specs {
            for row in s.values.rows() {
                for (f, &v) in row.iter().enumerate() {
                    let z = stats.standardize(f, v);
                    stats.min = stats.min.min(z);
                    stats.max = stats.max.max(z);
                }
            }
        }
        if stats.max - stats.min <= f64::EPSILON {
            // Degenerate constant data: keep max > min so the map stays defined.
            stats.max = stats.min + 1.0;
        }
        Ok(stats)
    }

    #[inline]
    fn standardize(&self, bin: usize, v: f64) -> f64 {
        (v - self.mean[bin]) / self.variance[bin].sqrt()
    }

    /// Maps one raw value of bin `bin` into `[0, 1]`.
    #[inline]
    pub fn apply(&self, bin: usize, v: f64) -> f64 {
        ((self.standardize(bin, v) - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
    }

    pub fn validate(&self, bins: usize) -> Result<()> {
        if self.mean.len() != bins || self.variance.len() != bins {
            return Err(Error::Shape(format!(
                "normalization statistics cover {} bins, features have {bins}",
                self.mean.len()
            )));
        }
        if self.variance.iter().any(|&v| !(v > 0.0)) || !(self.max > self.min) {
            return Err(Error::InvalidArgument("degenerate normalization statistics".into()));
        }
        Ok(())
    }
}

/// Normalizes spectrograms to `[0, 1]`.
///
/// When `stats` is `None` the statistics are fitted on `specs` (the training split);
/// otherwise the given statistics are reused and out-of-range values are clamped.
pub fn normalize(
    specs: &[Spectrogram],
    stats: Option<&NormStats>,
) -> Result<(Vec<FeatureTensor>, NormStats)> {
    if specs.is_empty() {
        return Err(Error::NoRecords);
    }
    let bins = specs[0].values.ncols();
    if specs.iter().any(|s| s.values.ncols() != bins) {
        return Err(Error::Shape("spectrograms disagree on frequency bins".into()));
    }
    let stats = match stats {
        Some(s) => s.clone(),
        None => NormStats::fit(specs)?,
    };
    stats.validate(bins)?;

    let out = specs
        .iter()
        .map(|s| {
            let mut values = s.values.clone();
            for mut row in values.rows_mut() {
                for (f, v) in row.iter_mut().enumerate() {
                    *v = stats.apply(f, *v);
                }
            }
            FeatureTensor {
                values,
                mask: s.mask.clone(),
                frame_hop: s.frame_hop,
                label: s.label,
            }
        })
        .collect();
    Ok((out, stats))
}
