//! Audio to normalized time-frequency tensors.

mod cache;
mod mel;
mod normalize;
mod resample;
mod stft;
mod wav;
mod window;

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

pub use cache::{read_cache, read_cache_from, write_cache, write_cache_to, CACHE_MAGIC, CACHE_VERSION};
pub use mel::{hz_to_mel, mel_filterbank, mel_project, mel_to_hz};
pub use normalize::{normalize, NormStats, VARIANCE_FLOOR};
pub use resample::{resample, SINC_TAPS};
pub use stft::{hann_window, stft_magnitude};
pub use wav::read_wav;
pub use window::window_and_mask;

use crate::config::{FeatureConfig, FrequencyScale};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub source_path: String,
    pub label: Option<usize>,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
            source_path: String::new(),
            label: None,
        }
    }

    pub fn with_label(mut self, label: Option<usize>) -> Self {
        self.label = label;
        self
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Log-compressed time-frequency grid before normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    /// `T x F`.
    pub values: Array2<f64>,
    /// Voice-activity mask derived from raw frame energy.
    pub mask: Vec<u8>,
    pub frame_hop: usize,
    pub label: Option<usize>,
}

/// Normalized `T x F` grid with a per-frame validity mask. This is the model input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTensor {
    pub values: Array2<f64>,
    pub mask: Vec<u8>,
    pub frame_hop: usize,
    pub label: Option<usize>,
}

impl FeatureTensor {
    pub fn new(values: Array2<f64>, mask: Vec<u8>) -> Result<Self> {
        if mask.len() != values.nrows() {
            return Err(Error::Shape(format!(
                "mask has {} entries for {} frames",
                mask.len(),
                values.nrows()
            )));
        }
        Ok(Self {
            values,
            mask,
            frame_hop: 0,
            label: None,
        })
    }

    /// All frames valid.
    pub fn full(values: Array2<f64>) -> Self {
        let t = values.nrows();
        Self {
            values,
            mask: vec![1; t],
            frame_hop: 0,
            label: None,
        }
    }

    pub fn with_label(mut self, label: Option<usize>) -> Self {
        self.label = label;
        self
    }

    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn freq_bins(&self) -> usize {
        self.values.ncols()
    }

    pub fn valid_frames(&self) -> usize {
        self.mask.iter().filter(|&&m| m != 0).count()
    }

    /// Row-major flattening used as the geometry for K-means and metrics.
    pub fn flatten(&self) -> Vec<f64> {
        self.values.iter().copied().collect()
    }
}

/// Frames whose energy exceeds `threshold` times the clip's peak frame energy.
///
/// A clip without any energetic frame (digital silence) is treated as fully valid
/// so that every tensor keeps at least one valid frame.
pub fn vad_mask(frame_energy: &[f64], threshold: f64) -> Vec<u8> {
    let peak = frame_energy.iter().copied().fold(0.0_f64, f64::max);
    let mask: Vec<u8> = frame_energy
        .iter()
        .map(|&e| u8::from(peak > 0.0 && e > threshold * peak))
        .collect();
    if mask.iter().any(|&m| m != 0) {
        mask
    } else {
        vec![1; frame_energy.len()]
    }
}

/// Resample, STFT, frequency reduction and log compression for one clip.
pub fn extract(clip: &AudioClip, cfg: &FeatureConfig) -> Result<Spectrogram> {
    let clip = resample(clip, cfg.sample_rate)?;
    let mag = stft_magnitude(&clip, cfg.window_len, cfg.hop)?;
    let energy: Vec<f64> = mag
        .rows()
        .into_iter()
        .map(|row| row.iter().map(|v| v * v).sum())
        .collect();
    let values = match cfg.scale {
        FrequencyScale::Mel { n_mels } => mel_project(&mag, n_mels, cfg.sample_rate)?,
        FrequencyScale::Linear { bins } => {
            if bins > mag.ncols() {
                return Err(Error::FilterbankOverdetermined {
                    n_mels: bins,
                    n_bins: mag.ncols(),
                });
            }
            mag.slice(s![.., ..bins]).mapv(f64::ln_1p)
        }
    };
    Ok(Spectrogram {
        values,
        mask: vad_mask(&energy, cfg.vad_threshold),
        frame_hop: cfg.hop,
        label: clip.label,
    })
}

/// Normalizes a set of spectrograms and cuts each to the configured window.
///
/// With `stats == None` the statistics are fitted on `specs`.
pub fn finalize(
    specs: &[Spectrogram],
    stats: Option<&NormStats>,
    cfg: &FeatureConfig,
) -> Result<(Vec<FeatureTensor>, NormStats)> {
    let (normed, stats) = normalize(specs, stats)?;
    let windowed = normed
        .iter()
        .map(|f| window_and_mask(f, cfg.target_frames))
        .collect::<Result<Vec<_>>>()?;
    Ok((windowed, stats))
}
