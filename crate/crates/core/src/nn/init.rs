//! Parameter initialization.

use ndarray::{Array2, ArrayD, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::real::Real;

/// `U(-b, b)` with `b = sqrt(6 / fan_in)`.
pub fn kaiming_uniform<S: Real, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], fan_in: usize) -> ArrayD<S> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    uniform(rng, shape, bound)
}

pub fn bias_uniform<S: Real, R: Rng + ?Sized>(rng: &mut R, len: usize, fan_in: usize) -> ArrayD<S> {
    uniform(rng, &[len], 1.0 / (fan_in.max(1) as f64).sqrt())
}

pub fn uniform<S: Real, R: Rng + ?Sized>(rng: &mut R, shape: &[usize], bound: f64) -> ArrayD<S> {
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    ArrayD::from_shape_simple_fn(IxDyn(shape), || S::lit(dist.sample(rng)))
}

/// Random `n x n` orthogonal matrix (Gram-Schmidt on a Gaussian matrix).
pub fn orthogonal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Array2<f64> {
    let mut m = Array2::<f64>::from_shape_simple_fn((n, n), || StandardNormal.sample(rng));
    for i in 0..n {
        for j in 0..i {
            let proj = m.row(i).dot(&m.row(j));
            let rj = m.row(j).to_owned();
            m.row_mut(i).scaled_add(-proj, &rj);
        }
        let norm = m.row(i).dot(&m.row(i)).sqrt();
        m.row_mut(i).mapv_inplace(|v| v / norm);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn orthogonal_rows() {
        let q = orthogonal(&mut ChaCha8Rng::seed_from_u64(4), 12);
        let qqt = q.dot(&q.t());
        for i in 0..12 {
            for j in 0..12 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((qqt[[i, j]] - e).abs() < 1e-10);
            }
        }
    }
}
