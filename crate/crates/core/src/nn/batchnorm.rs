use ndarray::{Array1, Array4, ArrayD, Axis, IxDyn};

use super::{BufferVisitor, Param, ParamVisitor};
use crate::real::Real;

const EPS: f64 = 1e-5;
const MOMENTUM: f64 = 0.1;

struct BnCache<S> {
    xhat: Array4<S>,
    inv_std: Array1<S>,
}

/// Per-channel batch normalization over `[C, N, H, W]`.
///
/// Training mode normalizes with batch statistics and updates the running
/// estimates (momentum 0.1, unbiased variance); inference mode uses the
/// running estimates only.
pub struct BatchNorm2d<S> {
    pub gamma: Param<S>,
    pub beta: Param<S>,
    pub running_mean: ArrayD<S>,
    pub running_var: ArrayD<S>,
    cache: Option<BnCache<S>>,
}

impl<S: Real> BatchNorm2d<S> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(ArrayD::ones(IxDyn(&[channels]))),
            beta: Param::new(ArrayD::zeros(IxDyn(&[channels]))),
            running_mean: ArrayD::zeros(IxDyn(&[channels])),
            running_var: ArrayD::ones(IxDyn(&[channels])),
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array4<S>, train: bool) -> Array4<S> {
        let c = x.dim().0;
        let eps = S::lit(EPS);
        let mut y = x.as_standard_layout().into_owned();
        if !train {
            for (ci, mut plane) in y.axis_iter_mut(Axis(0)).enumerate() {
                let inv = S::one() / (self.running_var[ci] + eps).sqrt();
                let (g, b, m) = (self.gamma.value[ci], self.beta.value[ci], self.running_mean[ci]);
                plane.mapv_inplace(|v| (v - m) * inv * g + b);
            }
            self.cache = None;
            return y;
        }

        let mut inv_std = Array1::zeros(c);
        let mut xhat = y.clone();
        let momentum = S::lit(MOMENTUM);
        for ci in 0..c {
            let mut plane = xhat.index_axis_mut(Axis(0), ci);
            let count = plane.len();
            let cnt = S::from_usize(count).unwrap();
            let mean = plane.sum() / cnt;
            let var = plane.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / cnt;
            let inv = S::one() / (var + eps).sqrt();
            plane.mapv_inplace(|v| (v - mean) * inv);
            inv_std[ci] = inv;

            let unbiased = if count > 1 {
                var * cnt / S::from_usize(count - 1).unwrap()
            } else {
                var
            };
            self.running_mean[ci] = (S::one() - momentum) * self.running_mean[ci] + momentum * mean;
            self.running_var[ci] = (S::one() - momentum) * self.running_var[ci] + momentum * unbiased;

            let (g, b) = (self.gamma.value[ci], self.beta.value[ci]);
            y.index_axis_mut(Axis(0), ci)
                .zip_mut_with(&plane, |o, &h| *o = h * g + b);
        }
        self.cache = Some(BnCache { xhat, inv_std });
        y
    }

    pub fn backward(&mut self, dy: &Array4<S>) -> Array4<S> {
        let cache = self.cache.take().expect("backward before training-mode forward");
        let mut dx = Array4::zeros(dy.raw_dim());
        for ci in 0..dy.dim().0 {
            let dyc = dy.index_axis(Axis(0), ci);
            let xh = cache.xhat.index_axis(Axis(0), ci);
            let cnt = S::from_usize(dyc.len()).unwrap();
            let sum_dy = dyc.sum();
            let sum_dy_xh = dyc.iter().zip(xh.iter()).map(|(&a, &b)| a * b).sum::<S>();
            self.gamma.grad[ci] = self.gamma.grad[ci] + sum_dy_xh;
            self.beta.grad[ci] = self.beta.grad[ci] + sum_dy;

            let k = self.gamma.value[ci] * cache.inv_std[ci] / cnt;
            let mut dxc = dx.index_axis_mut(Axis(0), ci);
            ndarray::Zip::from(&mut dxc)
                .and(&dyc)
                .and(&xh)
                .for_each(|o, &d, &h| *o = k * (cnt * d - sum_dy - h * sum_dy_xh));
        }
        dx
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_, S>) {
        f(&format!("{prefix}.gamma"), &mut self.gamma);
        f(&format!("{prefix}.beta"), &mut self.beta);
    }

    pub fn visit_buffers(&mut self, prefix: &str, f: &mut BufferVisitor<'_, S>) {
        f(&format!("{prefix}.running_mean"), &mut self.running_mean);
        f(&format!("{prefix}.running_var"), &mut self.running_var);
    }
}
