//! Categorical unsupervised variational acoustic clustering.
//!
//! The crate is organised along the processing chain:
//!
//! - [`features`]: WAV decoding, resampling, STFT, mel projection, normalization
//!   and fixed-length windowing into [`FeatureTensor`]s.
//! - [`gumbel`]: Gumbel-Max and Gumbel-Softmax sampling plus temperature annealing.
//! - [`model`]: the discriminative encoder, the conditional Gaussian encoder and
//!   the transposed-convolution decoder, built on the layers in [`nn`].
//! - [`losses`]: the λ-weighted negative lower bound and its pieces.
//! - [`trainer`]: Adam training loop with learning-rate decay, checkpoints and logs.
//! - [`kmeans`]: the K-means baseline.
//! - [`metrics`]: accuracy, NMI, silhouette, Davies-Bouldin and Calinski-Harabasz.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod features;
pub mod gumbel;
pub mod kmeans;
pub mod losses;
pub mod manifest;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod real;
pub mod synth;
pub mod trainer;

pub use config::{FeatureConfig, FrequencyScale, RunConfig};
pub use error::{Error, Result};
pub use features::{AudioClip, FeatureTensor, NormStats};
pub use gumbel::{ClassLogits, GsSample, TemperatureSchedule};
pub use kmeans::KMeansModel;
pub use losses::{LossBreakdown, ReconReduction};
pub use metrics::{Assignment, ClusterReport};
pub use model::{CatVae, GaussianPosterior, LatentSample, ModelConfig};
pub use real::Real;
pub use trainer::{EpochLog, TrainConfig};
