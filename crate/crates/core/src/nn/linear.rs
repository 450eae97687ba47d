use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Axis};
use rand::Rng;

use super::{init, Param, ParamVisitor};
use crate::real::Real;

/// `y = x Wᵀ + b` for `x: [N, in]`.
pub struct Linear<S> {
    pub weight: Param<S>,
    pub bias: Param<S>,
    input: Option<Array2<S>>,
}

impl<S: Real> Linear<S> {
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        Self {
            weight: Param::new(init::kaiming_uniform(rng, &[output, input], input)),
            bias: Param::new(init::bias_uniform(rng, output, input)),
            input: None,
        }
    }

    pub fn out_features(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn forward(&mut self, x: &Array2<S>) -> Array2<S> {
        let mut y = x.dot(&self.weight.mat().t());
        let b = self.bias.value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        y += &b;
        self.input = Some(x.clone());
        y
    }

    pub fn backward(&mut self, dy: &Array2<S>) -> Array2<S> {
        let x = self.input.take().expect("backward before forward");
        general_mat_mul(S::one(), &dy.t(), &x, S::one(), &mut self.weight.grad_mat());
        let db = dy.sum_axis(Axis(0));
        self.bias.grad.zip_mut_with(&db.into_dyn(), |g, &d| *g = *g + d);
        dy.dot(&self.weight.mat())
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_, S>) {
        f(&format!("{prefix}.weight"), &mut self.weight);
        f(&format!("{prefix}.bias"), &mut self.bias);
    }
}
