//! Negative λ-weighted lower bound: masked Bernoulli reconstruction error plus
//! KL terms against a standard-normal `p(z)` and a uniform `p(y)`.
//!
//! The free functions operate on single items in `f64`. The `*_batch` variants
//! used by the training loop also return gradients.

use ndarray::{Array2, Array4, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureTensor;
use crate::model::GaussianPosterior;
use crate::nn::sigmoid;
use crate::real::Real;

/// Clamp for probabilities passed to `ln` in the probability-space BCE.
const PROB_EPS: f64 = 1e-15;

/// How the training objective pools the masked per-element BCE.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReconReduction {
    /// Mean over valid frames × F, as [`reconstruction_error`] reports it.
    Mean,
    /// Sum over each item's valid elements, averaged over the batch: the
    /// Bernoulli log-likelihood of the whole grid.
    #[default]
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub recon: f64,
    pub kl_gauss: f64,
    pub kl_cat: f64,
    pub lambda: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(recon: f64, kl_gauss: f64, kl_cat: f64, lambda: f64) -> Self {
        Self {
            recon,
            kl_gauss,
            kl_cat,
            lambda,
            total: recon + lambda * (kl_gauss + kl_cat),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.recon.is_finite()
            && self.kl_gauss.is_finite()
            && self.kl_cat.is_finite()
            && self.total.is_finite()
    }

    /// Weighted mean of several breakdowns (weights need not sum to one).
    pub fn weighted_mean(items: &[(LossBreakdown, f64)]) -> Self {
        let wsum: f64 = items.iter().map(|(_, w)| w).sum();
        if items.is_empty() || wsum <= 0.0 {
            return Self::default();
        }
        let avg = |f: fn(&LossBreakdown) -> f64| items.iter().map(|(l, w)| f(l) * w).sum::<f64>() / wsum;
        Self {
            recon: avg(|l| l.recon),
            kl_gauss: avg(|l| l.kl_gauss),
            kl_cat: avg(|l| l.kl_cat),
            lambda: items[0].0.lambda,
            total: avg(|l| l.total),
        }
    }
}

#[inline]
fn bce(x: f64, p: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -(x * p.ln() + (1.0 - x) * (1.0 - p).ln())
}

/// Mean binary cross-entropy over the valid frames (`mask != 0`) of a `T x F` grid.
pub fn reconstruction_error(x: &FeatureTensor, x_hat: &Array2<f64>, mask: &[u8]) -> Result<f64> {
    if x.values.dim() != x_hat.dim() || mask.len() != x_hat.nrows() {
        return Err(Error::Shape(format!(
            "x {:?}, x_hat {:?}, mask {}",
            x.values.dim(),
            x_hat.dim(),
            mask.len()
        )));
    }
    let valid = mask.iter().filter(|&&m| m != 0).count();
    if valid == 0 {
        return Err(Error::EmptyMask);
    }
    let mut sum = 0.0;
    for ((row_x, row_p), &m) in x.values.rows().into_iter().zip(x_hat.rows()).zip(mask) {
        if m != 0 {
            sum += row_x.iter().zip(row_p).map(|(&a, &p)| bce(a, p)).sum::<f64>();
        }
    }
    Ok(sum / (valid * x_hat.ncols()) as f64)
}

/// `KL(N(mu, diag(exp(log_var))) || N(0, I))`.
pub fn kl_gaussian(post: &GaussianPosterior) -> f64 {
    0.5 * post
        .mu
        .iter()
        .zip(&post.log_var)
        .map(|(&m, &lv)| lv.exp() + m * m - 1.0 - lv)
        .sum::<f64>()
        .max(0.0)
}

/// `KL(probs || uniform)` with `0 log 0 = 0`.
pub fn kl_categorical(probs: &[f64]) -> Result<f64> {
    if probs.is_empty() {
        return Err(Error::InvalidArgument("empty probability vector".into()));
    }
    if probs.iter().any(|&p| !(p >= 0.0)) {
        return Err(Error::InvalidArgument("negative or NaN probability".into()));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidArgument(format!("probabilities sum to {sum}")));
    }
    let log_k = (probs.len() as f64).ln();
    Ok(probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * (p.ln() + log_k))
        .sum::<f64>()
        .max(0.0))
}

pub fn total_loss(
    x: &FeatureTensor,
    x_hat: &Array2<f64>,
    post: &GaussianPosterior,
    probs: &[f64],
    mask: &[u8],
    lambda: f64,
) -> Result<LossBreakdown> {
    if !(lambda >= 0.0) {
        return Err(Error::InvalidArgument(format!("lambda {lambda} must be >= 0")));
    }
    Ok(LossBreakdown::new(
        reconstruction_error(x, x_hat, mask)?,
        kl_gaussian(post),
        kl_categorical(probs)?,
        lambda,
    ))
}

/// Masked BCE computed from decoder logits `[1, N, T, F]`, pooled over the batch
/// according to `reduction`. Returns the loss and its gradient w.r.t. the logits.
pub fn reconstruction_batch<S: Real>(
    x: &Array4<S>,
    logits: &Array4<S>,
    mask: &Array2<S>,
    reduction: ReconReduction,
) -> Result<(f64, Array4<S>)> {
    let (_, n, t, f) = x.dim();
    if logits.dim() != x.dim() || mask.dim() != (n, t) {
        return Err(Error::Shape(format!(
            "x {:?}, logits {:?}, mask {:?}",
            x.dim(),
            logits.dim(),
            mask.dim()
        )));
    }
    let valid: f64 = mask.iter().map(|m| m.as_f64()).sum();
    if valid <= 0.0 {
        return Err(Error::EmptyMask);
    }
    let denom = match reduction {
        ReconReduction::Mean => valid * f as f64,
        ReconReduction::Sum => n as f64,
    };
    let scale = S::lit(1.0 / denom);
    let mut grad = Array4::zeros(x.raw_dim());
    let mut sum = 0.0;
    for ni in 0..n {
        for ti in 0..t {
            let m = mask[[ni, ti]];
            if m == S::zero() {
                continue;
            }
            for fi in 0..f {
                let l = logits[[0, ni, ti, fi]];
                let xv = x[[0, ni, ti, fi]];
                let lf = l.as_f64();
                let xf = xv.as_f64();
                // max(l, 0) - l x + log(1 + e^{-|l|})
                sum += lf.max(0.0) - lf * xf + (-lf.abs()).exp().ln_1p();
                grad[[0, ni, ti, fi]] = (sigmoid(l) - xv) * scale * m;
            }
        }
    }
    Ok((sum / denom, grad))
}

/// Mean Gaussian KL over the batch with gradients w.r.t. `mu` and `log_var`.
pub fn kl_gaussian_batch<S: Real>(mu: &Array2<S>, log_var: &Array2<S>) -> (f64, Array2<S>, Array2<S>) {
    let n = mu.nrows().max(1) as f64;
    let half = S::lit(0.5);
    let inv_n = S::lit(1.0 / n);
    let mut value = 0.0;
    Zip::from(mu).and(log_var).for_each(|&m, &lv| {
        let (m, lv) = (m.as_f64(), lv.as_f64());
        value += 0.5 * (lv.exp() + m * m - 1.0 - lv);
    });
    let dmu = mu.mapv(|m| m * inv_n);
    let dlv = log_var.mapv(|lv| half * (lv.exp() - S::one()) * inv_n);
    (value / n, dmu, dlv)
}

/// Row-wise softmax of `[N, K]` logits.
pub fn softmax_rows<S: Real>(logits: &Array2<S>) -> Array2<S> {
    let mut p = logits.clone();
    for mut row in p.axis_iter_mut(Axis(0)) {
        let m = row.iter().copied().fold(S::neg_infinity(), S::max);
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    p
}

/// Mean categorical KL to the uniform prior, computed from logits, with its gradient.
pub fn kl_categorical_batch<S: Real>(logits: &Array2<S>) -> (f64, Array2<S>) {
    let (n, k) = logits.dim();
    let log_k = (k as f64).ln();
    let inv_n = S::lit(1.0 / n.max(1) as f64);
    let mut grad = Array2::zeros((n, k));
    let mut value = 0.0;
    for (row, mut g) in logits.axis_iter(Axis(0)).zip(grad.axis_iter_mut(Axis(0))) {
        let m = row.iter().copied().fold(S::neg_infinity(), S::max);
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<S>().ln();
        let log_p: Vec<S> = row.iter().map(|&v| v - lse).collect();
        let p: Vec<S> = log_p.iter().map(|lp| lp.exp()).collect();
        let neg_h: S = p.iter().zip(&log_p).map(|(&a, &b)| a * b).sum();
        value += neg_h.as_f64() + log_k;
        for j in 0..k {
            g[j] = p[j] * (log_p[j] - neg_h) * inv_n;
        }
    }
    (value / n.max(1) as f64, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GaussianPosterior;
    use proptest::prelude::*;

    fn grid(values: Vec<f64>, t: usize, f: usize) -> Array2<f64> {
        Array2::from_shape_vec((t, f), values).unwrap()
    }

    #[test]
    fn half_half_is_log_two() {
        let x = FeatureTensor::full(Array2::from_elem((4, 3), 0.5));
        let x_hat = Array2::from_elem((4, 3), 0.5);
        let v = reconstruction_error(&x, &x_hat, &x.mask).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn masked_frames_do_not_count() {
        let x = FeatureTensor::full(grid(vec![0.2, 0.9, 0.4, 0.7, 1.0, 0.0, 0.0, 1.0], 4, 2));
        let mut x_hat = grid(vec![0.3, 0.8, 0.5, 0.6, 0.001, 0.999, 0.999, 0.001], 4, 2);
        let mask = vec![1, 1, 0, 0];
        let full = reconstruction_error(&x, &x_hat, &mask).unwrap();
        let half = FeatureTensor::full(x.values.slice(ndarray::s![..2, ..]).to_owned());
        let half_loss =
            reconstruction_error(&half, &x_hat.slice(ndarray::s![..2, ..]).to_owned(), &[1, 1]).unwrap();
        assert!((full - half_loss).abs() < 1e-15);
        x_hat[[3, 0]] = 0.5;
        assert_eq!(reconstruction_error(&x, &x_hat, &mask).unwrap(), full);
        assert!(matches!(
            reconstruction_error(&x, &x_hat, &[0, 0, 0, 0]),
            Err(Error::EmptyMask)
        ));
    }

    #[test]
    fn gaussian_kl_closed_forms() {
        let zero = GaussianPosterior {
            mu: vec![0.0; 4],
            log_var: vec![0.0; 4],
        };
        assert_eq!(kl_gaussian(&zero), 0.0);
        let one = GaussianPosterior {
            mu: vec![1.0],
            log_var: vec![0.0],
        };
        assert_eq!(kl_gaussian(&one), 0.5);
    }

    #[test]
    fn categorical_kl_closed_forms() {
        assert!(kl_categorical(&[0.25; 4]).unwrap().abs() < 1e-15);
        let mut one_hot = vec![0.0; 10];
        one_hot[3] = 1.0;
        assert!((kl_categorical(&one_hot).unwrap() - 10f64.ln()).abs() < 1e-12);
        let v = kl_categorical(&[0.7, 0.2, 0.1]).unwrap();
        let oracle = 0.7 * 2.1f64.ln() + 0.2 * 0.6f64.ln() + 0.1 * 0.3f64.ln();
        assert!((v - oracle).abs() < 1e-12);
        assert!((v - 0.2968).abs() < 1e-4);
        assert!(kl_categorical(&[1.2, -0.2]).is_err());
    }

    #[test]
    fn total_is_weighted_sum() {
        let l = LossBreakdown::new(1.0, 0.5, 0.25, 2.0);
        assert_eq!(l.total, 2.5);
        let l = LossBreakdown::new(1.0, 0.5, 0.25, 0.0);
        assert_eq!(l.total, l.recon);
    }

    #[test]
    fn saturated_perfect_reconstruction_vanishes() {
        let x = FeatureTensor::full(grid(vec![0.0, 1.0, 1.0, 0.0], 2, 2));
        let x_hat = grid(vec![1e-12, 1.0 - 1e-12, 1.0 - 1e-12, 1e-12], 2, 2);
        let post = GaussianPosterior {
            mu: vec![0.0; 3],
            log_var: vec![0.0; 3],
        };
        let l = total_loss(&x, &x_hat, &post, &[0.5, 0.5], &x.mask, 1.0).unwrap();
        assert!(l.total < 1e-10);
    }

    #[test]
    fn batch_recon_matches_probability_form() {
        let x = Array4::from_shape_fn((1, 2, 3, 2), |(_, n, t, f)| ((n + t + f) % 3) as f64 / 2.0);
        let logits = Array4::from_shape_fn((1, 2, 3, 2), |(_, n, t, f)| (n as f64 - t as f64) * 0.7 + f as f64 * 0.3);
        let mask = Array2::from_shape_vec((2, 3), vec![1.0, 1.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let (v, _) = reconstruction_batch(&x, &logits, &mask, ReconReduction::Mean).unwrap();
        let (total, _) = reconstruction_batch(&x, &logits, &mask, ReconReduction::Sum).unwrap();
        let mut sum = 0.0;
        for n in 0..2 {
            for t in 0..3 {
                if mask[[n, t]] > 0.0 {
                    for f in 0..2 {
                        sum += bce(x[[0, n, t, f]], sigmoid(logits[[0, n, t, f]]));
                    }
                }
            }
        }
        assert!((v - sum / 6.0).abs() < 1e-12);
        assert!((total - sum / 2.0).abs() < 1e-12);
    }

    #[test]
    fn batch_kl_categorical_matches_direct() {
        let logits = Array2::from_shape_vec((2, 3), vec![0.3, -1.0, 2.0, 0.0, 0.0, 0.0]).unwrap();
        let (v, _) = kl_categorical_batch(&logits);
        let p = softmax_rows(&logits);
        let direct = (kl_categorical(p.row(0).as_slice().unwrap()).unwrap()
            + kl_categorical(p.row(1).as_slice().unwrap()).unwrap())
            / 2.0;
        assert!((v - direct).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn kl_terms_are_nonnegative(
            mu in proptest::collection::vec(-5.0f64..5.0, 1..8),
            lv_seed in proptest::collection::vec(-4.0f64..4.0, 8),
            raw in proptest::collection::vec(0.0f64..1.0, 2..10),
        ) {
            let lv: Vec<f64> = lv_seed[..mu.len()].to_vec();
            let post = GaussianPosterior { mu, log_var: lv };
            prop_assert!(kl_gaussian(&post) >= 0.0);
            let s: f64 = raw.iter().sum();
            prop_assume!(s > 1e-6);
            let probs: Vec<f64> = raw.iter().map(|v| v / s).collect();
            prop_assert!(kl_categorical(&probs).unwrap() >= -1e-15);
        }
    }
}
