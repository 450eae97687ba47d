//! Minimal layer library with hand-written backward passes.
//!
//! Convolutional activations are laid out channel-major, `[C, N, H, W]`, so an
//! im2col product `W · cols` lands directly in the next layer's layout and batch
//! normalization reduces over one contiguous slice per channel.

mod batchnorm;
mod conv;
mod gru;
pub mod init;
mod linear;

use ndarray::{ArrayD, ArrayView2, ArrayViewMut2, Ix2};

pub use batchnorm::BatchNorm2d;
pub use conv::{col2im, im2col, Conv2d, ConvGeom, ConvTranspose2d};
pub use gru::Gru;
pub use linear::Linear;

use crate::real::Real;

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone)]
pub struct Param<S> {
    pub value: ArrayD<S>,
    pub grad: ArrayD<S>,
}

impl<S: Real> Param<S> {
    pub fn new(value: ArrayD<S>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(S::zero());
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub(crate) fn mat(&self) -> ArrayView2<'_, S> {
        self.value.view().into_dimensionality::<Ix2>().expect("2-D parameter")
    }

    pub(crate) fn grad_mat(&mut self) -> ArrayViewMut2<'_, S> {
        self.grad
            .view_mut()
            .into_dimensionality::<Ix2>()
            .expect("2-D parameter")
    }
}

/// Callback over named trainable parameters.
pub type ParamVisitor<'a, S> = dyn FnMut(&str, &mut Param<S>) + 'a;
/// Callback over named non-trainable state (batch-norm running statistics).
pub type BufferVisitor<'a, S> = dyn FnMut(&str, &mut ArrayD<S>) + 'a;

#[inline]
pub fn sigmoid<S: Real>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

/// Elementwise ReLU returning the activation; the backward mask is `out > 0`.
pub(crate) fn relu_inplace<S: Real, D: ndarray::Dimension>(x: &mut ndarray::Array<S, D>) {
    x.mapv_inplace(|v| if v > S::zero() { v } else { S::zero() });
}

pub(crate) fn relu_backward_inplace<S: Real, D: ndarray::Dimension>(
    grad: &mut ndarray::Array<S, D>,
    out: &ndarray::Array<S, D>,
) {
    ndarray::Zip::from(grad).and(out).for_each(|g, &o| {
        if o <= S::zero() {
            *g = S::zero();
        }
    });
}
