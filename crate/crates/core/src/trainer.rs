//! Joint training of the three networks with Adam, geometric learning-rate
//! decay and per-epoch temperature annealing.

use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointKind, CheckpointMeta};
use crate::error::{Error, Result};
use crate::features::{FeatureTensor, NormStats};
use crate::gumbel::{anneal, argmax, geometric, TemperatureSchedule};
use crate::losses::{LossBreakdown, ReconReduction};
use crate::model::{stack_batch, CatVae, ModelConfig, StepMode, StepNoise, StepParams};
use crate::optim::{Adam, AdamConfig};
use crate::real::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub lambda: f64,
    pub tau: TemperatureSchedule,
    pub batch_size: usize,
    pub seed: u64,
    pub k: usize,
    pub d_z: usize,
    #[serde(default)]
    pub recon_reduction: ReconReduction,
    /// Global gradient-norm bound; `None` disables clipping.
    #[serde(default = "default_clip")]
    pub grad_clip: Option<f64>,
}

fn default_clip() -> Option<f64> {
    Some(5.0)
}

impl TrainConfig {
    /// Defaults for `epochs` epochs: LR 5e-4 → 5e-5, τ 1.0 → 0.5, batch 32.
    pub fn new(k: usize, lambda: f64, epochs: usize) -> Self {
        Self {
            epochs,
            lr_start: 5e-4,
            lr_end: 5e-5,
            lambda,
            tau: TemperatureSchedule {
                tau_start: 1.0,
                tau_end: 0.5,
                total_epochs: epochs,
            },
            batch_size: 32,
            seed: 0,
            k,
            d_z: 32,
            recon_reduction: ReconReduction::default(),
            grad_clip: default_clip(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if !(self.lr_end > 0.0) || self.lr_start < self.lr_end {
            return Err(Error::InvalidArgument(format!(
                "need lr_start >= lr_end > 0, got {} -> {}",
                self.lr_start, self.lr_end
            )));
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("lambda must be positive, got {}", self.lambda)));
        }
        self.tau.validate()?;
        if self.tau.total_epochs != self.epochs {
            return Err(Error::InvalidArgument(format!(
                "temperature schedule spans {} epochs, training runs {}",
                self.tau.total_epochs, self.epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::InvalidArgument("grad_clip must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Learning rate of epoch `epoch`: `lr_start * (lr_end / lr_start)^(e / (epochs - 1))`.
pub fn lr_at(config: &TrainConfig, epoch: usize) -> Result<f64> {
    if epoch >= config.epochs {
        return Err(Error::OutOfRange {
            what: "epoch",
            value: epoch,
            bound: config.epochs,
        });
    }
    Ok(geometric(config.lr_start, config.lr_end, epoch, config.epochs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Batch-size weighted averages over the epoch.
    pub loss: LossBreakdown,
    #[serde(default)]
    pub val_loss: Option<LossBreakdown>,
    pub lr: f64,
    pub tau: f64,
    pub wall_time: f64,
}

impl EpochLog {
    /// Equality on everything except wall-clock time.
    pub fn same_trajectory(&self, other: &EpochLog) -> bool {
        self.epoch == other.epoch
            && self.loss == other.loss
            && self.val_loss == other.val_loss
            && self.lr == other.lr
            && self.tau == other.tau
    }
}

/// Owns the model and optimizer state across epochs.
pub struct Trainer<S> {
    pub model: CatVae<S>,
    adam: Adam<S>,
    config: TrainConfig,
    norm: Option<NormStats>,
    next_epoch: usize,
    best_loss: Option<f64>,
    best: Option<Checkpoint>,
}

impl<S: Real> Trainer<S> {
    pub fn new(model_config: ModelConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        check_dims(&model_config, &config)?;
        let mut model = CatVae::new(model_config, config.seed)?;
        let adam = Adam::new(&mut model, AdamConfig::default());
        Ok(Self {
            model,
            adam,
            config,
            norm: None,
            next_epoch: 0,
            best_loss: None,
            best: None,
        })
    }

    /// Restores model, optimizer moments and counters from a checkpoint written by
    /// [`Trainer::checkpoint`].
    pub fn resume(ckpt: &Checkpoint, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model_config = ckpt
            .meta
            .model
            .clone()
            .ok_or_else(|| Error::Format("checkpoint has no model config".into()))?;
        check_dims(&model_config, &config)?;
        if ckpt.meta.epoch > config.epochs {
            return Err(Error::InvalidArgument(format!(
                "checkpoint is at epoch {} of a {}-epoch run",
                ckpt.meta.epoch, config.epochs
            )));
        }
        let model = CatVae::from_checkpoint(ckpt)?;
        let mut t = Self {
            model,
            adam: Adam {
                config: AdamConfig::default(),
                step: 0,
                m: Vec::new(),
                v: Vec::new(),
            },
            config,
            norm: ckpt.meta.norm.clone(),
            next_epoch: ckpt.meta.epoch,
            best_loss: ckpt.meta.best_loss,
            best: None,
        };
        t.adam = Adam::new(&mut t.model, AdamConfig::default());
        t.adam.step = ckpt.meta.adam_step;
        let mut i = 0;
        let mut missing = None;
        let (ms, vs) = (&mut t.adam.m, &mut t.adam.v);
        t.model.visit_params(&mut |name, _| {
            match (ckpt.get(&format!("adam.m.{name}")), ckpt.get(&format!("adam.v.{name}"))) {
                (Some(m), Some(v)) if m.shape == ms[i].shape() && v.shape == vs[i].shape() => {
                    ms[i] = m.to_array();
                    vs[i] = v.to_array();
                }
                _ => {
                    missing.get_or_insert_with(|| name.to_string());
                }
            }
            i += 1;
        });
        if let Some(name) = missing {
            return Err(Error::Format(format!("checkpoint lacks optimizer state for {name}")));
        }
        Ok(t)
    }

    pub fn set_norm_stats(&mut self, norm: Option<NormStats>) {
        self.norm = norm;
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Index of the next epoch to run.
    pub fn next_epoch(&self) -> usize {
        self.next_epoch
    }

    pub fn is_done(&self) -> bool {
        self.next_epoch >= self.config.epochs
    }

    /// Snapshot of the lowest-loss epoch seen since this trainer was built.
    pub fn best_checkpoint(&self) -> Option<&Checkpoint> {
        self.best.as_ref()
    }

    /// Model, optimizer state and counters.
    pub fn checkpoint(&mut self) -> Checkpoint {
        let mut meta = CheckpointMeta::new(CheckpointKind::CatVae);
        meta.model = Some(self.model.config().clone());
        meta.train = Some(self.config.clone());
        meta.norm = self.norm.clone();
        meta.epoch = self.next_epoch;
        meta.tau = if self.next_epoch == 0 {
            self.config.tau.tau_start
        } else {
            anneal(&self.config.tau, self.next_epoch - 1).unwrap_or(self.config.tau.tau_end)
        };
        meta.adam_step = self.adam.step;
        meta.best_loss = self.best_loss;
        let mut ckpt = Checkpoint::new(meta);
        for (name, a) in self.model.state() {
            ckpt.push(format!("model.{name}"), &a);
        }
        let mut names = Vec::new();
        self.model.visit_params(&mut |name, _| names.push(name.to_string()));
        for (i, name) in names.iter().enumerate() {
            ckpt.push(format!("adam.m.{name}"), &self.adam.m[i]);
            ckpt.push(format!("adam.v.{name}"), &self.adam.v[i]);
        }
        ckpt
    }

    /// Runs one epoch over `data`, optionally scoring `val` afterwards.
    pub fn run_epoch(&mut self, data: &[FeatureTensor], val: Option<&[FeatureTensor]>) -> Result<EpochLog> {
        if data.is_empty() {
            return Err(Error::NoRecords);
        }
        if self.is_done() {
            return Err(Error::OutOfRange {
                what: "epoch",
                value: self.next_epoch,
                bound: self.config.epochs,
            });
        }
        let started = Instant::now();
        let epoch = self.next_epoch;
        let lr = lr_at(&self.config, epoch)?;
        let tau = anneal(&self.config.tau, epoch)?;
        let (k, d_z) = (self.config.k, self.config.d_z);

        // Every epoch owns an independent stream, so resuming reproduces it exactly.
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64 + 1);
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);

        let mut parts = Vec::new();
        for (batch, idx) in order.chunks(self.config.batch_size).enumerate() {
            let items: Vec<&FeatureTensor> = idx.iter().map(|&i| &data[i]).collect();
            let (x, mask) = stack_batch::<S>(&items)?;
            let noise = StepNoise::sample(&mut rng, items.len(), k, d_z);
            self.model.zero_grad();
            let out = self
                .model
                .step(&x, &mask, &noise, &self.params(tau), StepMode::Train)?;
            let gnorm = Adam::grad_norm(&mut self.model);
            if !out.loss.is_finite() || !gnorm.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch,
                    norms: self.param_norms(),
                });
            }
            self.adam.update(&mut self.model, lr, self.config.grad_clip);
            parts.push((out.loss, items.len() as f64));
        }
        let loss = LossBreakdown::weighted_mean(&parts);
        let val_loss = match val {
            Some(v) if !v.is_empty() => Some(self.evaluate_loss(v, tau)?),
            _ => None,
        };
        self.next_epoch += 1;

        let score = val_loss.as_ref().unwrap_or(&loss).total;
        if self.best_loss.is_none_or(|b| score < b) {
            self.best_loss = Some(score);
            self.best = Some(self.checkpoint());
        }
        Ok(EpochLog {
            epoch,
            loss,
            val_loss,
            lr,
            tau,
            wall_time: started.elapsed().as_secs_f64(),
        })
    }

    /// Loss in inference mode with a fixed noise stream, so epochs are comparable.
    pub fn evaluate_loss(&mut self, data: &[FeatureTensor], tau: f64) -> Result<LossBreakdown> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(0);
        let (k, d_z) = (self.config.k, self.config.d_z);
        let mut parts = Vec::new();
        for chunk in data.chunks(self.config.batch_size) {
            let items: Vec<&FeatureTensor> = chunk.iter().collect();
            let (x, mask) = stack_batch::<S>(&items)?;
            let noise = StepNoise::sample(&mut rng, items.len(), k, d_z);
            let out = self
                .model
                .step(&x, &mask, &noise, &self.params(tau), StepMode::Eval)?;
            parts.push((out.loss, items.len() as f64));
        }
        Ok(LossBreakdown::weighted_mean(&parts))
    }

    /// Runs the remaining epochs, calling `on_epoch` after each one.
    pub fn fit<F>(&mut self, data: &[FeatureTensor], val: Option<&[FeatureTensor]>, mut on_epoch: F) -> Result<Vec<EpochLog>>
    where
        F: FnMut(&EpochLog, &mut Self) -> Result<()>,
    {
        let mut logs = Vec::new();
        while !self.is_done() {
            let log = self.run_epoch(data, val)?;
            on_epoch(&log, self)?;
            logs.push(log);
        }
        Ok(logs)
    }

    fn params(&self, tau: f64) -> StepParams {
        StepParams {
            tau,
            lambda: self.config.lambda,
            reduction: self.config.recon_reduction,
        }
    }

    fn param_norms(&mut self) -> String {
        let mut parts = Vec::new();
        self.model.visit_params(&mut |name, p| {
            let n: f64 = p.value.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt();
            parts.push(format!("{name}={n:.4e}"));
        });
        parts.join(", ")
    }
}

fn check_dims(model: &ModelConfig, train: &TrainConfig) -> Result<()> {
    if model.k != train.k || model.d_z != train.d_z {
        return Err(Error::InvalidArgument(format!(
            "model (K={}, d_z={}) disagrees with training config (K={}, d_z={})",
            model.k, model.d_z, train.k, train.d_z
        )));
    }
    Ok(())
}

/// Result of a complete run.
pub struct TrainOutput {
    pub final_checkpoint: Checkpoint,
    pub best_checkpoint: Checkpoint,
    pub logs: Vec<EpochLog>,
}

/// Trains a fresh `f32` model on `dataset` for `config.epochs` epochs.
pub fn train(
    dataset: &[FeatureTensor],
    val: Option<&[FeatureTensor]>,
    model_config: ModelConfig,
    config: &TrainConfig,
) -> Result<TrainOutput> {
    if dataset.is_empty() {
        return Err(Error::NoRecords);
    }
    let mut t = Trainer::<f32>::new(model_config, config.clone())?;
    let logs = t.fit(dataset, val, |_, _| Ok(()))?;
    let final_checkpoint = t.checkpoint();
    let best_checkpoint = t.best_checkpoint().cloned().unwrap_or_else(|| final_checkpoint.clone());
    Ok(TrainOutput {
        final_checkpoint,
        best_checkpoint,
        logs,
    })
}

/// Hard cluster per item: argmax of the encoder probabilities in inference mode.
pub fn assign_clusters(dataset: &[FeatureTensor], ckpt: &Checkpoint) -> Result<Vec<usize>> {
    let probs = cluster_probabilities(dataset, ckpt)?;
    Ok(probs
        .rows()
        .into_iter()
        .map(|r| argmax(r.as_slice().expect("contiguous rows")))
        .collect())
}

/// Encoder probabilities `[N, K]` in inference mode.
pub fn cluster_probabilities(dataset: &[FeatureTensor], ckpt: &Checkpoint) -> Result<Array2<f64>> {
    if dataset.is_empty() {
        return Err(Error::NoRecords);
    }
    let mut model = CatVae::<f32>::from_checkpoint(ckpt)?;
    let items: Vec<&FeatureTensor> = dataset.iter().collect();
    model.probabilities(&items, 64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            k: 3,
            d_z: 4,
            conv_channels: vec![2, 3, 3, 4],
            gru_hidden: 5,
            gru_layers: 2,
            kernel: (8, 8),
            stride: (2, 2),
            padding: (3, 3),
            input_freq_bins: 16,
            input_frames: 16,
        }
    }

    fn tiny_train(epochs: usize) -> TrainConfig {
        let mut c = TrainConfig::new(3, 0.5, epochs);
        c.d_z = 4;
        c.batch_size = 2;
        c
    }

    fn toy(n: usize) -> Vec<FeatureTensor> {
        (0..n)
            .map(|i| {
                let band = i % 3;
                FeatureTensor::full(Array2::from_shape_fn((16, 16), |(t, f)| {
                    if f / 5 == band {
                        0.8 + 0.01 * ((t + i) % 5) as f64
                    } else {
                        0.1
                    }
                }))
                .with_label(Some(band))
            })
            .collect()
    }

    #[test]
    fn lr_endpoints_and_midpoint() {
        let c = TrainConfig::new(10, 0.5, 500);
        assert_eq!(lr_at(&c, 0).unwrap(), 5e-4);
        assert_eq!(lr_at(&c, 499).unwrap(), 5e-5);
        let mid = lr_at(&c, 250).unwrap();
        assert!((mid - 5e-4 * 0.1f64.powf(250.0 / 499.0)).abs() < 1e-18);
        assert!((mid / 1.576e-4 - 1.0).abs() < 1e-3);
        assert!(lr_at(&c, 500).is_err());
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig::new(3, 0.5, 10);
        c.validate().unwrap();
        c.lr_end = 1e-3;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::new(3, 0.5, 10);
        c.tau.total_epochs = 11;
        assert!(c.validate().is_err());
        let mut c = TrainConfig::new(3, 0.5, 10);
        c.lambda = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        // Validation rejects lr_end = 0, so the step is driven directly.
        let mut t = Trainer::<f64>::new(tiny_model(), tiny_train(1)).unwrap();
        let before = t.model.state();
        let data = toy(2);
        let items: Vec<&FeatureTensor> = data.iter().collect();
        let (x, mask) = stack_batch::<f64>(&items).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noise = StepNoise::sample(&mut rng, 2, 3, 4);
        t.model.zero_grad();
        t.model.step(&x, &mask, &noise, &t.params(1.0), StepMode::Train).unwrap();
        t.adam.update(&mut t.model, 0.0, Some(5.0));
        let mut after = Vec::new();
        t.model.visit_params(&mut |n, p| after.push((n.to_string(), p.value.clone())));
        for (name, a) in after {
            let b = &before.iter().find(|(n, _)| *n == name).unwrap().1;
            assert_eq!(&a, b, "{name} moved");
        }
    }

    #[test]
    fn same_seed_same_logs_and_resume_matches() {
        let data = toy(6);
        let run = |stop: Option<usize>| {
            let mut t = Trainer::<f64>::new(tiny_model(), tiny_train(4)).unwrap();
            let mut logs = Vec::new();
            if let Some(stop) = stop {
                for _ in 0..stop {
                    logs.push(t.run_epoch(&data, None).unwrap());
                }
                let ckpt = t.checkpoint();
                let mut buf = Vec::new();
                ckpt.write_to(&mut buf).unwrap();
                let ckpt = Checkpoint::read_from(buf.as_slice()).unwrap();
                t = Trainer::resume(&ckpt, tiny_train(4)).unwrap();
            }
            logs.extend(t.fit(&data, None, |_, _| Ok(())).unwrap());
            logs
        };
        let a = run(None);
        let b = run(None);
        let c = run(Some(2));
        assert_eq!(a.len(), 4);
        assert_eq!(c.len(), 4);
        for i in 0..4 {
            assert!(a[i].same_trajectory(&b[i]));
            assert_eq!(a[i].epoch, i);
            assert!((a[i].loss.total - c[i].loss.total).abs() <= 1e-12);
        }
    }

    #[test]
    fn assignments_are_in_range_and_stable() {
        let data = toy(4);
        let out = train(&data, None, tiny_model(), &{
            let mut c = tiny_train(1);
            c.seed = 3;
            c
        })
        .unwrap();
        let mut dup = data.clone();
        dup.push(data[0].clone());
        let a = assign_clusters(&dup, &out.final_checkpoint).unwrap();
        assert!(a.iter().all(|&c| c < 3));
        assert_eq!(a[0], a[4]);
        assert!(assign_clusters(&[], &out.final_checkpoint).is_err());
    }
}
