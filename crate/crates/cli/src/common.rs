//! Error classification, run-directory locking and feature loading shared by the commands.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use catvac_core::features::{self, read_cache};
use catvac_core::manifest::{Manifest, ManifestRecord, Split};
use catvac_core::{AudioClip, Error, FeatureConfig, FeatureTensor, NormStats};
use ndarray::Array2;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad input: arguments, configs, manifests, missing or unreadable files.
    #[error("{0}")]
    User(String),
    /// Something the library promised cannot happen did.
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::User(_) => 1,
            CliError::Internal(_) => 2,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFiniteLoss { .. } | Error::EmptyMask | Error::DegenerateCentroids(..) | Error::Undefined(_) => {
                CliError::Internal(e.to_string())
            }
            _ => CliError::User(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::User(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::User(e.to_string())
    }
}

pub fn user(msg: impl Into<String>) -> CliError {
    CliError::User(msg.into())
}

pub const LOCK_NAME: &str = ".catvac.lock";

/// Exclusive claim on a run directory, released on drop.
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir)?;
        let path = dir.join(LOCK_NAME);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                let owner = fs::read_to_string(&path).unwrap_or_default();
                Err(user(format!(
                    "{} is in use by process {} (remove {} if that process is gone)",
                    dir.display(),
                    owner.trim(),
                    path.display()
                )))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn is_cache(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "cvac")
}

/// Reads one clip and runs the per-file half of the feature pipeline.
pub fn spectrogram(rec: &ManifestRecord, cfg: &FeatureConfig) -> catvac_core::Result<features::Spectrogram> {
    let clip: AudioClip = features::read_wav(&rec.path)?.with_label(rec.label);
    features::extract(&clip, cfg)
}

/// Features for the records of one split. Cache files are read as they are; audio files go
/// through the pipeline and need the feature settings and normalization of the model.
pub fn load_split(
    manifest: &Manifest,
    split: Split,
    audio: Option<(&FeatureConfig, &NormStats)>,
) -> Result<Vec<FeatureTensor>, CliError> {
    let records: Vec<&ManifestRecord> = manifest.split(split).map(|(_, r)| r).collect();
    if records.is_empty() {
        return Err(user(format!("manifest has no {} records", split.as_str())));
    }
    let mut specs = Vec::new();
    let mut out = Vec::with_capacity(records.len());
    for rec in &records {
        if is_cache(&rec.path) {
            if !rec.path.exists() {
                return Err(user(format!("missing cache file {}", rec.path.display())));
            }
            let mut t = read_cache(&rec.path)?;
            t.label = rec.label.or(t.label);
            out.push(t);
        } else {
            let (cfg, _) = audio.ok_or_else(|| {
                user(format!(
                    "{} is audio; point --manifest at the manifest.ndjson written by prepare",
                    rec.path.display()
                ))
            })?;
            specs.push(spectrogram(rec, cfg).map_err(|e| user(format!("{}: {e}", rec.path.display())))?);
        }
    }
    if !specs.is_empty() {
        if !out.is_empty() {
            return Err(user("manifest mixes cache files and audio files"));
        }
        let (cfg, stats) = audio.expect("checked above");
        out = features::finalize(&specs, Some(stats), cfg)?.0;
    }
    Ok(out)
}

/// Row-per-item matrix of flattened features.
pub fn flatten(items: &[FeatureTensor]) -> Result<Array2<f64>, CliError> {
    let dim = items[0].values.len();
    if items.iter().any(|t| t.values.len() != dim) {
        return Err(user("feature tensors differ in shape"));
    }
    Ok(Array2::from_shape_vec((items.len(), dim), items.iter().flat_map(|t| t.flatten()).collect())
        .expect("length checked"))
}

/// Appends one line of JSON and flushes so a crash loses at most the current epoch.
pub fn append_ndjson<T: Serialize>(file: &mut File, value: &T) -> Result<(), CliError> {
    let mut line = serde_json::to_string(value)?;
    line.push('\n');
    file.write_all(line.as_bytes())?;
    file.flush()?;
    Ok(())
}
