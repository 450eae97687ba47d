//! The three networks: discriminative encoder `h`, conditional Gaussian encoder
//! `f` and transposed-convolution decoder `g`.
//!
//! Input grids are treated as single-channel images with time along the height
//! axis and frequency along the width axis.

use ndarray::{s, Array2, Array3, Array4, ArrayD, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureTensor;
use crate::gumbel::{gumbel_from_uniform, open_uniform, ClassLogits, GsSample};
use crate::losses::{self, LossBreakdown, ReconReduction};
use crate::nn::{
    relu_backward_inplace, relu_inplace, sigmoid, BatchNorm2d, BufferVisitor, Conv2d, ConvGeom,
    ConvTranspose2d, Gru, Linear, Param, ParamVisitor,
};
use crate::real::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Number of clusters.
    pub k: usize,
    /// Gaussian latent dimension.
    pub d_z: usize,
    /// Output channels of the encoder convolutions; the decoder mirrors them.
    pub conv_channels: Vec<usize>,
    pub gru_hidden: usize,
    pub gru_layers: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub input_freq_bins: usize,
    pub input_frames: usize,
}

impl ModelConfig {
    pub fn new(k: usize, input_frames: usize, input_freq_bins: usize) -> Self {
        Self {
            k,
            d_z: 32,
            conv_channels: vec![16, 32, 64, 128],
            gru_hidden: 128,
            gru_layers: 2,
            kernel: (8, 8),
            stride: (2, 2),
            padding: (3, 3),
            input_freq_bins,
            input_frames,
        }
    }

    pub fn geom(&self) -> ConvGeom {
        ConvGeom {
            kh: self.kernel.0,
            kw: self.kernel.1,
            sh: self.stride.0,
            sw: self.stride.1,
            ph: self.padding.0,
            pw: self.padding.1,
        }
    }

    /// `(channels, frames, freq)` after each encoder convolution.
    pub fn encoder_shapes(&self) -> Result<Vec<(usize, usize, usize)>> {
        let g = self.geom();
        let (mut t, mut f) = (self.input_frames, self.input_freq_bins);
        let mut out = Vec::with_capacity(self.conv_channels.len());
        for &c in &self.conv_channels {
            let (nt, nf) = g
                .conv_out(t, f)
                .filter(|&(a, b)| a > 0 && b > 0)
                .ok_or_else(|| Error::Shape(format!("({t}, {f}) too small for the convolution")))?;
            t = nt;
            f = nf;
            out.push((c, t, f));
        }
        Ok(out)
    }

    /// `(channels, frames, freq)` after each decoder transposed convolution.
    pub fn decoder_shapes(&self) -> Result<Vec<(usize, usize, usize)>> {
        let g = self.geom();
        let enc = self.encoder_shapes()?;
        let &(_, mut t, mut f) = enc.last().expect("at least one stage");
        let mut out = Vec::new();
        for i in (0..self.conv_channels.len()).rev() {
            let c = if i == 0 { 1 } else { self.conv_channels[i - 1] };
            let (nt, nf) = g
                .transposed_out(t, f)
                .ok_or_else(|| Error::Shape("transposed convolution underflow".into()))?;
            t = nt;
            f = nf;
            out.push((c, t, f));
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidArgument("K must be >= 2".into()));
        }
        if self.d_z == 0 || self.gru_hidden == 0 || self.gru_layers == 0 {
            return Err(Error::InvalidArgument("d_z, gru_hidden and gru_layers must be >= 1".into()));
        }
        if self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
            return Err(Error::InvalidArgument("conv_channels must be nonempty and positive".into()));
        }
        let dec = self.decoder_shapes()?;
        let &(c, t, f) = dec.last().unwrap();
        if (c, t, f) != (1, self.input_frames, self.input_freq_bins) {
            return Err(Error::Shape(format!(
                "decoder produces ({t}, {f}) for input ({}, {}); use multiples of 2^{}",
                self.input_frames,
                self.input_freq_bins,
                self.conv_channels.len()
            )));
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        let mut m = CatVae::<f32>::new(self.clone(), 0).expect("valid config");
        let mut n = 0;
        m.visit_params(&mut |_, p| n += p.len());
        n
    }
}

/// Diagonal Gaussian `q(z | y, x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPosterior {
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
}

/// `z = mu + exp(log_var / 2) * epsilon`, with the noise kept for reproduction.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSample {
    pub z: Vec<f64>,
    pub epsilon: Vec<f64>,
}

/// Reparametrized draw from a Gaussian posterior.
pub fn reparametrize<R: Rng + ?Sized>(post: &GaussianPosterior, rng: &mut R) -> LatentSample {
    let epsilon: Vec<f64> = (0..post.mu.len()).map(|_| StandardNormal.sample(rng)).collect();
    reparametrize_with(post, epsilon)
}

pub fn reparametrize_with(post: &GaussianPosterior, epsilon: Vec<f64>) -> LatentSample {
    let z = post
        .mu
        .iter()
        .zip(&post.log_var)
        .zip(&epsilon)
        .map(|((&m, &lv), &e)| m + (lv / 2.0).exp() * e)
        .collect();
    LatentSample { z, epsilon }
}

/// Conv → batch-norm → ReLU stages, a GRU stack over time, and a linear head on
/// the final hidden state.
struct Encoder<S> {
    convs: Vec<Conv2d<S>>,
    bns: Vec<BatchNorm2d<S>>,
    grus: Vec<Gru<S>>,
    head: Linear<S>,
    acts: Vec<Array4<S>>,
    conv_out: (usize, usize, usize, usize),
}

impl<S: Real> Encoder<S> {
    fn new<R: Rng + ?Sized>(cfg: &ModelConfig, in_channels: usize, out: usize, rng: &mut R) -> Result<Self> {
        let shapes = cfg.encoder_shapes()?;
        let geom = cfg.geom();
        let mut convs = Vec::new();
        let mut bns = Vec::new();
        let mut cin = in_channels;
        for &c in &cfg.conv_channels {
            // Bias is redundant in front of batch normalization.
            convs.push(Conv2d::new(cin, c, geom, false, rng));
            bns.push(BatchNorm2d::new(c));
            cin = c;
        }
        let &(c, _, f) = shapes.last().unwrap();
        let mut grus = Vec::new();
        let mut input = c * f;
        for _ in 0..cfg.gru_layers {
            grus.push(Gru::new(input, cfg.gru_hidden, rng));
            input = cfg.gru_hidden;
        }
        Ok(Self {
            convs,
            bns,
            grus,
            head: Linear::new(cfg.gru_hidden, out, rng),
            acts: Vec::new(),
            conv_out: (0, 0, 0, 0),
        })
    }

    /// `x: [C_in, N, T, F]` → `[N, out]`.
    fn forward(&mut self, x: &Array4<S>, train: bool) -> Array2<S> {
        self.acts.clear();
        let mut a = x.clone();
        for (conv, bn) in self.convs.iter_mut().zip(self.bns.iter_mut()) {
            a = conv.forward(&a);
            a = bn.forward(&a, train);
            relu_inplace(&mut a);
            if train {
                self.acts.push(a.clone());
            }
        }
        self.conv_out = a.dim();
        let mut seq = to_sequence(&a);
        for gru in self.grus.iter_mut() {
            seq = gru.forward(&seq);
        }
        let last = seq.index_axis(Axis(0), seq.dim().0 - 1).to_owned();
        self.head.forward(&last)
    }

    fn backward(&mut self, d_out: &Array2<S>) -> Array4<S> {
        let d_last = self.head.backward(d_out);
        let (c, n, t, f) = self.conv_out;
        let mut d_seq = Array3::zeros((t, n, self.grus.last().unwrap().hidden()));
        d_seq.index_axis_mut(Axis(0), t - 1).assign(&d_last);
        for gru in self.grus.iter_mut().rev() {
            d_seq = gru.backward(&d_seq);
        }
        let mut da = from_sequence(&d_seq, c, f);
        for i in (0..self.convs.len()).rev() {
            relu_backward_inplace(&mut da, &self.acts[i]);
            da = self.bns[i].backward(&da);
            da = self.convs[i].backward(&da);
        }
        da
    }

    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_, S>) {
        for (i, (conv, bn)) in self.convs.iter_mut().zip(self.bns.iter_mut()).enumerate() {
            conv.visit_params(&format!("{prefix}.conv{i}"), f);
            bn.visit_params(&format!("{prefix}.bn{i}"), f);
        }
        for (i, gru) in self.grus.iter_mut().enumerate() {
            gru.visit_params(&format!("{prefix}.gru{i}"), f);
        }
        self.head.visit_params(&format!("{prefix}.head"), f);
    }

    fn visit_buffers(&mut self, prefix: &str, f: &mut BufferVisitor<'_, S>) {
        for (i, bn) in self.bns.iter_mut().enumerate() {
            bn.visit_buffers(&format!("{prefix}.bn{i}"), f);
        }
    }
}

/// `[C, N, T, F]` → `[T, N, C·F]`: one feature vector per time step.
fn to_sequence<S: Real>(a: &Array4<S>) -> Array3<S> {
    let (c, n, t, f) = a.dim();
    let mut seq = Array3::zeros((t, n, c * f));
    for ci in 0..c {
        for ni in 0..n {
            for ti in 0..t {
                let src = a.slice(s![ci, ni, ti, ..]);
                seq.slice_mut(s![ti, ni, ci * f..(ci + 1) * f]).assign(&src);
            }
        }
    }
    seq
}

fn from_sequence<S: Real>(seq: &Array3<S>, c: usize, f: usize) -> Array4<S> {
    let (t, n, _) = seq.dim();
    let mut a = Array4::zeros((c, n, t, f));
    for ci in 0..c {
        for ni in 0..n {
            for ti in 0..t {
                a.slice_mut(s![ci, ni, ti, ..])
                    .assign(&seq.slice(s![ti, ni, ci * f..(ci + 1) * f]));
            }
        }
    }
    a
}

/// Linear seed projection of `[y; z]` followed by transposed convolutions.
struct Decoder<S> {
    seed: Linear<S>,
    deconvs: Vec<ConvTranspose2d<S>>,
    acts: Vec<Array4<S>>,
    seed_shape: (usize, usize, usize),
}

impl<S: Real> Decoder<S> {
    fn new<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let enc = cfg.encoder_shapes()?;
        let seed_shape = *enc.last().unwrap();
        let (c, t, f) = seed_shape;
        let geom = cfg.geom();
        let mut deconvs = Vec::new();
        let mut cin = c;
        for (cout, _, _) in cfg.decoder_shapes()? {
            deconvs.push(ConvTranspose2d::new(cin, cout, geom, rng));
            cin = cout;
        }
        Ok(Self {
            seed: Linear::new(cfg.k + cfg.d_z, c * t * f, rng),
            deconvs,
            acts: Vec::new(),
            seed_shape,
        })
    }

    /// `[N, K + d_z]` → logits `[1, N, T, F]`.
    fn forward(&mut self, input: &Array2<S>) -> Array4<S> {
        let n = input.nrows();
        let (c, t, f) = self.seed_shape;
        let seed = self.seed.forward(input);
        let mut a = seed
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((n, c, t, f))
            .expect("seed shape")
            .permuted_axes([1, 0, 2, 3])
            .as_standard_layout()
            .into_owned();
        self.acts.clear();
        let last = self.deconvs.len() - 1;
        for (i, d) in self.deconvs.iter_mut().enumerate() {
            a = d.forward(&a);
            if i < last {
                relu_inplace(&mut a);
                self.acts.push(a.clone());
            }
        }
        a
    }

    fn backward(&mut self, d_logits: &Array4<S>) -> Array2<S> {
        let mut da = d_logits.clone();
        for i in (0..self.deconvs.len()).rev() {
            if i < self.deconvs.len() - 1 {
                relu_backward_inplace(&mut da, &self.acts[i]);
            }
            da = self.deconvs[i].backward(&da);
        }
        let (c, n, t, f) = da.dim();
        let d_seed = da
            .permuted_axes([1, 0, 2, 3])
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((n, c * t * f))
            .expect("seed shape");
        self.seed.backward(&d_seed)
    }

    fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_, S>) {
        self.seed.visit_params(&format!("{prefix}.seed"), f);
        for (i, d) in self.deconvs.iter_mut().enumerate() {
            d.visit_params(&format!("{prefix}.deconv{i}"), f);
        }
    }
}

/// Per-batch noise: Gumbel draws `[N, K]` and Gaussian auxiliaries `[N, d_z]`.
#[derive(Debug, Clone)]
pub struct StepNoise<S> {
    pub gumbel: Array2<S>,
    pub eps: Array2<S>,
}

impl<S: Real> StepNoise<S> {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, n: usize, k: usize, d_z: usize) -> Self {
        let gumbel = Array2::from_shape_simple_fn((n, k), || S::lit(gumbel_from_uniform(open_uniform(rng))));
        let eps = Array2::from_shape_simple_fn((n, d_z), || {
            let e: f64 = StandardNormal.sample(rng);
            S::lit(e)
        });
        Self { gumbel, eps }
    }
}

/// Stacks feature tensors into `[1, N, T, F]` plus a `[N, T]` mask.
pub fn stack_batch<S: Real>(items: &[&FeatureTensor]) -> Result<(Array4<S>, Array2<S>)> {
    let first = items.first().ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    let (t, f) = first.values.dim();
    let mut x = Array4::zeros((1, items.len(), t, f));
    let mut mask = Array2::zeros((items.len(), t));
    for (i, it) in items.iter().enumerate() {
        if it.values.dim() != (t, f) || it.mask.len() != t {
            return Err(Error::Shape("batch items disagree in shape".into()));
        }
        x.slice_mut(s![0, i, .., ..]).assign(&it.values.mapv(S::lit));
        for (m, &v) in mask.row_mut(i).iter_mut().zip(&it.mask) {
            *m = if v != 0 { S::one() } else { S::zero() };
        }
    }
    Ok((x, mask))
}

/// Objective settings of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepParams {
    pub tau: f64,
    pub lambda: f64,
    pub reduction: ReconReduction,
}

/// How [`CatVae::step`] runs the networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepMode {
    /// Batch statistics, running averages updated, gradients accumulated.
    Train,
    /// Batch statistics without the backward pass.
    TrainNoGrad,
    /// Running statistics, no gradients.
    Eval,
}

/// Everything one training step produces besides the parameter gradients.
#[derive(Debug, Clone)]
pub struct StepOutput<S> {
    pub loss: LossBreakdown,
    pub probs: Array2<S>,
}

/// The categorical VAE.
pub struct CatVae<S> {
    config: ModelConfig,
    h: Encoder<S>,
    f: Encoder<S>,
    g: Decoder<S>,
}

impl<S: Real> CatVae<S> {
    /// Builds a freshly initialized model; the same seed always yields the same weights.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = Encoder::new(&config, 1, config.k, &mut rng)?;
        let f = Encoder::new(&config, 1 + config.k, 2 * config.d_z, &mut rng)?;
        let g = Decoder::new(&config, &mut rng)?;
        Ok(Self { config, h, f, g })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn visit_params(&mut self, f: &mut ParamVisitor<'_, S>) {
        self.h.visit_params("h", f);
        self.f.visit_params("f", f);
        self.g.visit_params("g", f);
    }

    pub fn visit_buffers(&mut self, f: &mut BufferVisitor<'_, S>) {
        self.h.visit_buffers("h", f);
        self.f.visit_buffers("f", f);
    }

    pub fn zero_grad(&mut self) {
        self.visit_params(&mut |_, p: &mut Param<S>| p.zero_grad());
    }

    /// Named copies of all parameters and buffers.
    pub fn state(&mut self) -> Vec<(String, ArrayD<S>)> {
        let mut out = Vec::new();
        self.visit_params(&mut |name, p| out.push((name.to_string(), p.value.clone())));
        self.visit_buffers(&mut |name, b| out.push((name.to_string(), b.clone())));
        out
    }

    /// Overwrites parameters and buffers by name; every tensor must be present with the same shape.
    pub fn load_state(&mut self, tensors: &[(String, ArrayD<S>)]) -> Result<()> {
        let lookup: std::collections::HashMap<&str, &ArrayD<S>> =
            tensors.iter().map(|(n, a)| (n.as_str(), a)).collect();
        let mut err = None;
        let mut assign = |name: &str, dst: &mut ArrayD<S>| match lookup.get(name) {
            Some(src) if src.shape() == dst.shape() => dst.assign(src),
            Some(src) => {
                err.get_or_insert(Error::Shape(format!(
                    "{name}: checkpoint {:?} vs model {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            None => {
                err.get_or_insert(Error::Format(format!("checkpoint lacks tensor {name}")));
            }
        };
        self.visit_params(&mut |name, p| assign(name, &mut p.value));
        self.visit_buffers(&mut |name, b| assign(name, b));
        err.map_or(Ok(()), Err)
    }

    /// Rebuilds a model from the `model.*` tensors of a checkpoint.
    pub fn from_checkpoint(ckpt: &crate::checkpoint::Checkpoint) -> Result<Self> {
        let config = ckpt
            .meta
            .model
            .clone()
            .ok_or_else(|| Error::Format("checkpoint has no model config".into()))?;
        let mut m = Self::new(config, 0)?;
        m.load_state(&ckpt.with_prefix::<S>("model."))?;
        Ok(m)
    }

    fn check_input(&self, x: &Array4<S>) -> Result<()> {
        let (c, _, t, f) = x.dim();
        if c != 1 || t != self.config.input_frames || f != self.config.input_freq_bins {
            return Err(Error::Shape(format!(
                "expected (1, N, {}, {}), got {:?}",
                self.config.input_frames,
                self.config.input_freq_bins,
                x.dim()
            )));
        }
        Ok(())
    }

    /// `x` with `y` broadcast to `K` constant planes appended along channels.
    fn condition(&self, x: &Array4<S>, y: &Array2<S>) -> Array4<S> {
        let (_, n, t, f) = x.dim();
        let k = y.ncols();
        let mut xin = Array4::zeros((1 + k, n, t, f));
        xin.slice_mut(s![0..1, .., .., ..]).assign(x);
        for ki in 0..k {
            for ni in 0..n {
                xin.slice_mut(s![1 + ki, ni, .., ..]).fill(y[[ni, ki]]);
            }
        }
        xin
    }

    /// Class logits from `h`, `[N, K]`.
    pub fn class_logits(&mut self, x: &Array4<S>, train: bool) -> Result<Array2<S>> {
        self.check_input(x)?;
        Ok(self.h.forward(x, train))
    }

    /// `(mu, log_var)` from `f`, each `[N, d_z]`.
    pub fn gaussian_params(&mut self, x: &Array4<S>, y: &Array2<S>, train: bool) -> Result<(Array2<S>, Array2<S>)> {
        self.check_input(x)?;
        if y.dim() != (x.dim().1, self.config.k) {
            return Err(Error::Shape(format!("y {:?} for batch {}", y.dim(), x.dim().1)));
        }
        let out = self.f.forward(&self.condition(x, y), train);
        let d = self.config.d_z;
        Ok((out.slice(s![.., ..d]).to_owned(), out.slice(s![.., d..]).to_owned()))
    }

    /// Decoder probabilities `[1, N, T, F]` for `y: [N, K]`, `z: [N, d_z]`.
    pub fn decode_batch(&mut self, y: &Array2<S>, z: &Array2<S>) -> Result<Array4<S>> {
        if y.ncols() != self.config.k || z.ncols() != self.config.d_z || y.nrows() != z.nrows() {
            return Err(Error::Shape(format!("y {:?}, z {:?}", y.dim(), z.dim())));
        }
        let input = ndarray::concatenate(Axis(1), &[y.view(), z.view()]).expect("same rows");
        Ok(self.g.forward(&input).mapv(sigmoid))
    }

    /// Full forward pass and loss; in [`StepMode::Train`] the parameter gradients
    /// are accumulated (call [`CatVae::zero_grad`] first).
    pub fn step(
        &mut self,
        x: &Array4<S>,
        mask: &Array2<S>,
        noise: &StepNoise<S>,
        params: &StepParams,
        mode: StepMode,
    ) -> Result<StepOutput<S>> {
        let StepParams { tau, lambda, reduction } = *params;
        self.check_input(x)?;
        if !(tau > 0.0) {
            return Err(Error::InvalidTemperature(tau));
        }
        let n = x.dim().1;
        let (k, d) = (self.config.k, self.config.d_z);
        if noise.gumbel.dim() != (n, k) || noise.eps.dim() != (n, d) {
            return Err(Error::Shape("noise does not match the batch".into()));
        }

        let train = mode != StepMode::Eval;
        let logits = self.h.forward(x, train);
        let probs = losses::softmax_rows(&logits);
        // softmax((log π + g) / τ) = softmax((logits + g) / τ): the normalizer cancels.
        let inv_tau = S::lit(1.0 / tau);
        let y = losses::softmax_rows(&((&logits + &noise.gumbel) * inv_tau));

        let f_out = self.f.forward(&self.condition(x, &y), train);
        let mu = f_out.slice(s![.., ..d]).to_owned();
        let log_var = f_out.slice(s![.., d..]).to_owned();
        let std = log_var.mapv(|v| (v * S::lit(0.5)).exp());
        let z = &mu + &(&std * &noise.eps);

        let dec_in = ndarray::concatenate(Axis(1), &[y.view(), z.view()]).expect("same rows");
        let x_logits = self.g.forward(&dec_in);

        let (recon, d_xlogits) = losses::reconstruction_batch(x, &x_logits, mask, reduction)?;
        let (kl_g, dmu_kl, dlv_kl) = losses::kl_gaussian_batch(&mu, &log_var);
        let (kl_c, dlogits_kl) = losses::kl_categorical_batch(&logits);
        let loss = LossBreakdown::new(recon, kl_g, kl_c, lambda);

        if mode == StepMode::Train && loss.is_finite() {
            let lam = S::lit(lambda);
            let d_dec = self.g.backward(&d_xlogits);
            let mut dy = d_dec.slice(s![.., ..k]).to_owned();
            let dz = d_dec.slice(s![.., k..]).to_owned();

            let dmu = &dz + &(&dmu_kl * lam);
            let half = S::lit(0.5);
            let dlv = &(&(&dz * &noise.eps) * &std) * half + &(&dlv_kl * lam);
            let d_fout = ndarray::concatenate(Axis(1), &[dmu.view(), dlv.view()]).expect("same rows");
            let d_xin = self.f.backward(&d_fout);
            for ki in 0..k {
                for ni in 0..n {
                    dy[[ni, ki]] = dy[[ni, ki]] + d_xin.slice(s![1 + ki, ni, .., ..]).sum();
                }
            }

            // Gumbel-Softmax Jacobian: (1/τ) y ⊙ (dy - <y, dy>).
            let mut dlogits = dlogits_kl * lam;
            for ni in 0..n {
                let dot: S = (0..k).map(|j| y[[ni, j]] * dy[[ni, j]]).sum();
                for j in 0..k {
                    dlogits[[ni, j]] = dlogits[[ni, j]] + y[[ni, j]] * (dy[[ni, j]] - dot) * inv_tau;
                }
            }
            self.h.backward(&dlogits);
        }
        Ok(StepOutput { loss, probs })
    }

    /// Encoder probabilities `π` in inference mode, `[N, K]`, processed in chunks.
    pub fn probabilities(&mut self, items: &[&FeatureTensor], chunk: usize) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((items.len(), self.config.k));
        for (ci, part) in items.chunks(chunk.max(1)).enumerate() {
            let (x, _) = stack_batch::<S>(part)?;
            let logits = self.class_logits(&x, false)?;
            let p = losses::softmax_rows(&logits).mapv(|v| v.as_f64());
            let start = ci * chunk.max(1);
            out.slice_mut(s![start..start + part.len(), ..]).assign(&p);
        }
        Ok(out)
    }

    /// Posterior means of `z` given the hard class assignment, `[N, d_z]`.
    pub fn latent_means(&mut self, items: &[&FeatureTensor], chunk: usize) -> Result<Array2<f64>> {
        let k = self.config.k;
        let mut out = Array2::zeros((items.len(), self.config.d_z));
        for (ci, part) in items.chunks(chunk.max(1)).enumerate() {
            let (x, _) = stack_batch::<S>(part)?;
            let logits = self.class_logits(&x, false)?;
            let mut y = Array2::zeros((part.len(), k));
            for (i, row) in logits.axis_iter(Axis(0)).enumerate() {
                let v: Vec<f64> = row.iter().map(|a| a.as_f64()).collect();
                y[[i, crate::gumbel::argmax(&v)]] = S::one();
            }
            let (mu, _) = self.gaussian_params(&x, &y, false)?;
            let start = ci * chunk.max(1);
            out.slice_mut(s![start..start + part.len(), ..])
                .assign(&mu.mapv(|v| v.as_f64()));
        }
        Ok(out)
    }

    /// `h(x)` for one item in inference mode.
    pub fn encode_categorical(&mut self, x: &FeatureTensor) -> Result<ClassLogits> {
        let (xb, _) = stack_batch::<S>(&[x])?;
        let logits = self.class_logits(&xb, false)?;
        ClassLogits::new(logits.row(0).iter().map(|v| v.as_f64()).collect())
    }

    /// `f(y, x)` for one item in inference mode.
    pub fn encode_gaussian(&mut self, x: &FeatureTensor, y: &GsSample) -> Result<GaussianPosterior> {
        if y.y.len() != self.config.k {
            return Err(Error::Shape(format!("y has {} classes, model {}", y.y.len(), self.config.k)));
        }
        let (xb, _) = stack_batch::<S>(&[x])?;
        let yb = Array2::from_shape_fn((1, self.config.k), |(_, j)| S::lit(y.y[j]));
        let (mu, lv) = self.gaussian_params(&xb, &yb, false)?;
        Ok(GaussianPosterior {
            mu: mu.iter().map(|v| v.as_f64()).collect(),
            log_var: lv.iter().map(|v| v.as_f64()).collect(),
        })
    }

    /// `g(y, z)` for one item: a `T x F` grid in `(0, 1)`.
    pub fn decode(&mut self, y: &GsSample, z: &LatentSample) -> Result<Array2<f64>> {
        let yb = Array2::from_shape_fn((1, y.y.len()), |(_, j)| S::lit(y.y[j]));
        let zb = Array2::from_shape_fn((1, z.z.len()), |(_, j)| S::lit(z.z[j]));
        let out = self.decode_batch(&yb, &zb)?;
        Ok(out.slice(s![0, 0, .., ..]).mapv(|v| v.as_f64()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> StepParams {
        StepParams { tau: 1.0, lambda: 0.5, reduction: ReconReduction::Sum }
    }

    pub(crate) fn tiny_config() -> ModelConfig {
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

    fn tensor(t: usize, f: usize, phase: usize) -> FeatureTensor {
        FeatureTensor::full(Array2::from_shape_fn((t, f), |(i, j)| {
            ((i * 3 + j * 5 + phase) % 17) as f64 / 16.0
        }))
    }

    #[test]
    fn default_shapes_for_long_windows() {
        let cfg = ModelConfig::new(10, 320, 128);
        assert_eq!(cfg.encoder_shapes().unwrap().last(), Some(&(128, 20, 8)));
        cfg.validate().unwrap();
        let bad = ModelConfig::new(10, 100, 128);
        assert!(bad.validate().is_err());
        assert!(ModelConfig::new(1, 32, 64).validate().is_err());
    }

    #[test]
    fn inference_is_deterministic_and_well_shaped() {
        let mut m = CatVae::<f64>::new(tiny_config(), 5).unwrap();
        let x = tensor(16, 16, 1);
        let a = m.encode_categorical(&x).unwrap();
        let b = m.encode_categorical(&x).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.k(), 3);
        let y = GsSample { y: vec![1.0, 0.0, 0.0], tau: 1.0 };
        let post = m.encode_gaussian(&x, &y).unwrap();
        assert_eq!(post.mu.len(), 4);
        assert_eq!(post.log_var.len(), 4);
        let other = m
            .encode_gaussian(&x, &GsSample { y: vec![0.0, 1.0, 0.0], tau: 1.0 })
            .unwrap();
        assert_ne!(post, other);
        let z = reparametrize_with(&post, vec![0.0; 4]);
        assert_eq!(z.z, post.mu);
        let x_hat = m.decode(&y, &z).unwrap();
        assert_eq!(x_hat.dim(), (16, 16));
        assert!(x_hat.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn wrong_input_shape_is_rejected() {
        let mut m = CatVae::<f64>::new(tiny_config(), 5).unwrap();
        assert!(matches!(m.encode_categorical(&tensor(32, 16, 0)), Err(Error::Shape(_))));
    }

    #[test]
    fn same_seed_same_weights() {
        let mut a = CatVae::<f32>::new(tiny_config(), 9).unwrap();
        let mut b = CatVae::<f32>::new(tiny_config(), 9).unwrap();
        let sa = a.state();
        let sb = b.state();
        assert_eq!(sa.len(), sb.len());
        for ((na, ta), (nb, tb)) in sa.iter().zip(&sb) {
            assert_eq!(na, nb);
            assert_eq!(ta, tb);
        }
    }

    #[test]
    fn every_parameter_receives_gradient() {
        // With 16 frames the recurrent stack sees a single step from a zero state,
        // where the recurrent weights cannot matter; 32 frames give two steps.
        let cfg = ModelConfig { input_frames: 32, ..tiny_config() };
        let mut m = CatVae::<f64>::new(cfg, 2).unwrap();
        let items: Vec<FeatureTensor> = (0..4).map(|i| tensor(32, 16, i * 4)).collect();
        let refs: Vec<&FeatureTensor> = items.iter().collect();
        let (x, mask) = stack_batch::<f64>(&refs).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let noise = StepNoise::sample(&mut rng, 4, 3, 4);
        m.zero_grad();
        let out = m.step(&x, &mask, &noise, &params(), StepMode::Train).unwrap();
        assert!(out.loss.is_finite());
        m.visit_params(&mut |name, p| {
            assert!(p.grad.iter().any(|&g| g != 0.0), "{name} has zero gradient");
            assert!(p.grad.iter().all(|g| g.is_finite()));
        });
    }

    #[test]
    fn reparametrize_identity_case() {
        let post = GaussianPosterior { mu: vec![0.0; 3], log_var: vec![0.0; 3] };
        let s = reparametrize(&post, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(s.z, s.epsilon);
    }
}
