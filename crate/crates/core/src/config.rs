//! Run-level configuration shared by the library and the CLI.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::trainer::TrainConfig;

/// How the linear STFT bins are reduced to the model's frequency axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FrequencyScale {
    /// Triangular mel filterbank followed by `log(1 + v)`.
    Mel { n_mels: usize },
    /// Keep the lowest `bins` linear bins, then `log(1 + v)`.
    Linear { bins: usize },
}

impl FrequencyScale {
    pub fn bins(&self) -> usize {
        match *self {
            FrequencyScale::Mel { n_mels } => n_mels,
            FrequencyScale::Linear { bins } => bins,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub window_len: usize,
    pub hop: usize,
    pub scale: FrequencyScale,
    pub target_frames: usize,
    /// A frame is valid when its energy exceeds this fraction of the clip's peak frame energy.
    #[serde(default = "default_vad_threshold")]
    pub vad_threshold: f64,
}

fn default_vad_threshold() -> f64 {
    1e-6
}

impl FeatureConfig {
    /// One-second spoken-digit clips: 64 linear bins, 32 frames.
    pub fn spoken_digits() -> Self {
        Self {
            sample_rate: 16_000,
            window_len: 960,
            hop: 480,
            scale: FrequencyScale::Linear { bins: 64 },
            target_frames: 32,
            vad_threshold: default_vad_threshold(),
        }
    }

    /// Urban scenes: 128 mel bands, `seconds` long time-context window.
    ///
    /// 4 s gives 128 frames and 10 s gives 320 frames.
    pub fn urban(seconds: u32) -> Self {
        let frames = (seconds as usize * 16_000 / 480) / 16 * 16;
        Self {
            sample_rate: 16_000,
            window_len: 960,
            hop: 480,
            scale: FrequencyScale::Mel { n_mels: 128 },
            target_frames: frames,
            vad_threshold: default_vad_threshold(),
        }
    }

    pub fn freq_bins(&self) -> usize {
        self.scale.bins()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 {
            return Err(Error::InvalidArgument("sample_rate must be > 0".into()));
        }
        if self.window_len == 0 || self.window_len % 2 != 0 {
            return Err(Error::InvalidArgument("window_len must be even".into()));
        }
        if self.hop == 0 {
            return Err(Error::InvalidArgument("hop must be > 0".into()));
        }
        if self.target_frames == 0 || self.target_frames % 16 != 0 {
            return Err(Error::InvalidArgument(
                "target_frames must be a positive multiple of 16".into(),
            ));
        }
        let bins = self.freq_bins();
        if bins == 0 || bins % 16 != 0 {
            return Err(Error::InvalidArgument(
                "frequency bins must be a positive multiple of 16".into(),
            ));
        }
        if bins > self.window_len / 2 + 1 {
            return Err(Error::FilterbankOverdetermined {
                n_mels: bins,
                n_bins: self.window_len / 2 + 1,
            });
        }
        Ok(())
    }
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self::spoken_digits()
    }
}

/// Everything `prepare`, `train` and `eval` need, read from one JSON file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub features: FeatureConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Dataset manifest (newline-delimited JSON).
    pub manifest: PathBuf,
    /// Output of `prepare`; read by `train` and `eval`.
    pub cache_dir: PathBuf,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: RunConfig = serde_json::from_str(&text)?;
        // Relative paths are resolved against the config file's directory.
        if let Some(dir) = path.parent() {
            if cfg.manifest.is_relative() {
                cfg.manifest = dir.join(&cfg.manifest);
            }
            if cfg.cache_dir.is_relative() {
                cfg.cache_dir = dir.join(&cfg.cache_dir);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.model.input_frames != self.features.target_frames
            || self.model.input_freq_bins != self.features.freq_bins()
        {
            return Err(Error::Shape(format!(
                "model expects ({}, {}) but features produce ({}, {})",
                self.model.input_frames,
                self.model.input_freq_bins,
                self.features.target_frames,
                self.features.freq_bins()
            )));
        }
        if self.model.k != self.train.k || self.model.d_z != self.train.d_z {
            return Err(Error::InvalidArgument(
                "K and d_z must agree between model and train sections".into(),
            ));
        }
        Ok(())
    }
}
