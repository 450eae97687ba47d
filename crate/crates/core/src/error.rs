use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty clip")]
    EmptyClip,

    #[error("clip too short: {len} samples for a window of {window}")]
    ClipTooShort { len: usize, window: usize },

    #[error("filterbank overdetermined: {n_mels} mel bands for {n_bins} linear bins")]
    FilterbankOverdetermined { n_mels: usize, n_bins: usize },

    #[error("invalid temperature {0}")]
    InvalidTemperature(f64),

    #[error("{what} {value} out of range [0, {bound})")]
    OutOfRange {
        what: &'static str,
        value: usize,
        bound: usize,
    },

    #[error("input shape: {0}")]
    Shape(String),

    #[error("empty mask")]
    EmptyMask,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("degenerate centroids: clusters {0} and {1} coincide")]
    DegenerateCentroids(usize, usize),

    #[error("non-finite loss at epoch {epoch}, batch {batch}; parameter norms: {norms}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        norms: String,
    },

    #[error("no records")]
    NoRecords,

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("bad file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Wav(#[from] hound::Error),
}
