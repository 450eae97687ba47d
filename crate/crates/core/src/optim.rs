//! Adam with bias correction.

use ndarray::{ArrayD, Zip};
use serde::{Deserialize, Serialize};

use crate::model::CatVae;
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair per parameter in visitation order.
pub struct Adam<S> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<ArrayD<S>>,
    pub v: Vec<ArrayD<S>>,
}

impl<S: Real> Adam<S> {
    pub fn new(model: &mut CatVae<S>, config: AdamConfig) -> Self {
        let mut m = Vec::new();
        model.visit_params(&mut |_, p| m.push(ArrayD::zeros(p.value.raw_dim())));
        let v = m.clone();
        Self { config, step: 0, m, v }
    }

    /// Global L2 norm of the accumulated gradients.
    pub fn grad_norm(model: &mut CatVae<S>) -> f64 {
        let mut sq = 0.0;
        model.visit_params(&mut |_, p| {
            sq += p.grad.iter().map(|g| g.as_f64() * g.as_f64()).sum::<f64>();
        });
        sq.sqrt()
    }

    /// Applies one update with learning rate `lr`, first rescaling the gradients
    /// so their global norm is at most `clip` when given.
    pub fn update(&mut self, model: &mut CatVae<S>, lr: f64, clip: Option<f64>) {
        let scale = match clip {
            Some(c) => {
                let norm = Self::grad_norm(model);
                if norm > c {
                    c / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let (b1, b2) = (S::lit(beta1), S::lit(beta2));
        let (one_b1, one_b2) = (S::lit(1.0 - beta1), S::lit(1.0 - beta2));
        let step_size = S::lit(lr / bc1);
        let inv_bc2 = S::lit(1.0 / bc2);
        let eps = S::lit(eps);
        let scale = S::lit(scale);
        let mut i = 0;
        let (ms, vs) = (&mut self.m, &mut self.v);
        model.visit_params(&mut |_, p| {
            Zip::from(&mut p.value)
                .and(&p.grad)
                .and(&mut ms[i])
                .and(&mut vs[i])
                .for_each(|w, &g, m, v| {
                    let g = g * scale;
                    *m = b1 * *m + one_b1 * g;
                    *v = b2 * *v + one_b2 * g * g;
                    *w = *w - step_size * *m / ((*v * inv_bc2).sqrt() + eps);
                });
            i += 1;
        });
    }
}
