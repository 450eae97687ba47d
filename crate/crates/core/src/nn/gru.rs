use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Array3, ArrayD, Axis, Ix1, IxDyn};
use rand::Rng;

use super::{init, sigmoid, Param, ParamVisitor};
use crate::real::Real;

struct Step<S> {
    h_prev: Array2<S>,
    r: Array2<S>,
    z: Array2<S>,
    n: Array2<S>,
    /// `W_hn h + b_hn`, needed for the reset-gate gradient.
    gh_n: Array2<S>,
}

struct GruCache<S> {
    x: Array2<S>,
    steps: Vec<Step<S>>,
    seq: (usize, usize, usize),
}

/// Single GRU layer with gate order (reset, update, new):
///
/// ```text
/// r = σ(W_ir x + b_ir + W_hr h + b_hr)
/// z = σ(W_iz x + b_iz + W_hz h + b_hz)
/// n = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
/// h' = (1 - z) ⊙ n + z ⊙ h
/// ```
pub struct Gru<S> {
    pub w_ih: Param<S>,
    pub w_hh: Param<S>,
    pub b_ih: Param<S>,
    pub b_hh: Param<S>,
    hidden: usize,
    cache: Option<GruCache<S>>,
}

impl<S: Real> Gru<S> {
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut w_hh = ArrayD::zeros(IxDyn(&[3 * hidden, hidden]));
        for gate in 0..3 {
            let q = init::orthogonal(rng, hidden);
            w_hh.slice_mut(s![gate * hidden..(gate + 1) * hidden, ..])
                .assign(&q.mapv(S::lit));
        }
        Self {
            w_ih: Param::new(init::uniform(rng, &[3 * hidden, input], bound)),
            w_hh: Param::new(w_hh),
            b_ih: Param::new(init::uniform(rng, &[3 * hidden], bound)),
            b_hh: Param::new(init::uniform(rng, &[3 * hidden], bound)),
            hidden,
            cache: None,
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// `x: [T, N, in]` → all hidden states `[T, N, hidden]`, starting from `h = 0`.
    pub fn forward(&mut self, x: &Array3<S>) -> Array3<S> {
        let (t_len, n, input) = x.dim();
        let hd = self.hidden;
        let x2 = x
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((t_len * n, input))
            .expect("contiguous");
        let b_ih = self.b_ih.value.view().into_dimensionality::<Ix1>().unwrap();
        let b_hh = self.b_hh.value.view().into_dimensionality::<Ix1>().unwrap();
        let gi_all = x2.dot(&self.w_ih.mat().t()) + &b_ih;
        let w_hh = self.w_hh.mat();

        let mut out = Array3::zeros((t_len, n, hd));
        let mut steps = Vec::with_capacity(t_len);
        let mut h = Array2::<S>::zeros((n, hd));
        for t in 0..t_len {
            let gi = gi_all.slice(s![t * n..(t + 1) * n, ..]);
            let gh = h.dot(&w_hh.t()) + &b_hh;
            let mut r = Array2::zeros((n, hd));
            let mut z = Array2::zeros((n, hd));
            let mut nn = Array2::zeros((n, hd));
            let mut h_new = Array2::zeros((n, hd));
            for i in 0..n {
                for j in 0..hd {
                    let rv = sigmoid(gi[[i, j]] + gh[[i, j]]);
                    let zv = sigmoid(gi[[i, hd + j]] + gh[[i, hd + j]]);
                    let nv = (gi[[i, 2 * hd + j]] + rv * gh[[i, 2 * hd + j]]).tanh();
                    r[[i, j]] = rv;
                    z[[i, j]] = zv;
                    nn[[i, j]] = nv;
                    h_new[[i, j]] = (S::one() - zv) * nv + zv * h[[i, j]];
                }
            }
            out.index_axis_mut(Axis(0), t).assign(&h_new);
            steps.push(Step {
                h_prev: h,
                r,
                z,
                n: nn,
                gh_n: gh.slice(s![.., 2 * hd..]).to_owned(),
            });
            h = h_new;
        }
        self.cache = Some(GruCache {
            x: x2,
            steps,
            seq: (t_len, n, input),
        });
        out
    }

    /// `d_out: [T, N, hidden]` (gradient w.r.t. every emitted hidden state) → `dx: [T, N, in]`.
    pub fn backward(&mut self, d_out: &Array3<S>) -> Array3<S> {
        let cache = self.cache.take().expect("backward before forward");
        let (t_len, n, input) = cache.seq;
        let hd = self.hidden;
        let w_hh = self.w_hh.value.view().into_dimensionality::<ndarray::Ix2>().unwrap().to_owned();
        let mut dgi_all = Array2::<S>::zeros((t_len * n, 3 * hd));
        let mut dh_next = Array2::<S>::zeros((n, hd));
        let mut dgh = Array2::<S>::zeros((n, 3 * hd));
        for t in (0..t_len).rev() {
            let st = &cache.steps[t];
            let dh = &d_out.index_axis(Axis(0), t) + &dh_next;
            let mut dgi = dgi_all.slice_mut(s![t * n..(t + 1) * n, ..]);
            let mut dh_prev = Array2::<S>::zeros((n, hd));
            for i in 0..n {
                for j in 0..hd {
                    let (r, z, nv, hp) = (st.r[[i, j]], st.z[[i, j]], st.n[[i, j]], st.h_prev[[i, j]]);
                    let d = dh[[i, j]];
                    let dn = d * (S::one() - z);
                    let dz = d * (hp - nv);
                    dh_prev[[i, j]] = d * z;
                    let dn_pre = dn * (S::one() - nv * nv);
                    let dr = dn_pre * st.gh_n[[i, j]];
                    let dr_pre = dr * r * (S::one() - r);
                    let dz_pre = dz * z * (S::one() - z);
                    dgi[[i, j]] = dr_pre;
                    dgi[[i, hd + j]] = dz_pre;
                    dgi[[i, 2 * hd + j]] = dn_pre;
                    dgh[[i, j]] = dr_pre;
                    dgh[[i, hd + j]] = dz_pre;
                    dgh[[i, 2 * hd + j]] = dn_pre * r;
                }
            }
            general_mat_mul(S::one(), &dgh.t(), &st.h_prev, S::one(), &mut self.w_hh.grad_mat());
            let db = dgh.sum_axis(Axis(0));
            self.b_hh.grad.zip_mut_with(&db.into_dyn(), |g, &v| *g = *g + v);
            general_mat_mul(S::one(), &dgh, &w_hh, S::one(), &mut dh_prev);
            dh_next = dh_prev;
        }
        general_mat_mul(S::one(), &dgi_all.t(), &cache.x, S::one(), &mut self.w_ih.grad_mat());
        let db = dgi_all.sum_axis(Axis(0));
        self.b_ih.grad.zip_mut_with(&db.into_dyn(), |g, &v| *g = *g + v);
        let dx = dgi_all.dot(&self.w_ih.mat());
        dx.into_shape_with_order((t_len, n, input)).expect("shape")
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_, S>) {
        f(&format!("{prefix}.w_ih"), &mut self.w_ih);
        f(&format!("{prefix}.w_hh"), &mut self.w_hh);
        f(&format!("{prefix}.b_ih"), &mut self.b_ih);
        f(&format!("{prefix}.b_hh"), &mut self.b_hh);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut gru = Gru::<f64>::new(3, 4, &mut rng);
        let x = Array3::from_shape_fn((3, 2, 3), |(t, n, i)| ((t * 5 + n * 3 + i * 7) % 9) as f64 / 4.0 - 1.0);
        let w = Array3::from_shape_fn((3, 2, 4), |(t, n, j)| ((t + 2 * n + 3 * j) % 5) as f64 - 2.0);
        let loss = |g: &mut Gru<f64>, x: &Array3<f64>| (&g.forward(x) * &w).sum();
        loss(&mut gru, &x);
        let dx = gru.backward(&w);
        let h = 1e-6;
        for idx in ndarray::indices(x.raw_dim()) {
            let mut p = x.clone();
            p[idx] += h;
            let mut m = x.clone();
            m[idx] -= h;
            let num = (loss(&mut gru, &p) - loss(&mut gru, &m)) / (2.0 * h);
            assert!((num - dx[idx]).abs() < 1e-7, "{num} vs {}", dx[idx]);
        }
        // Weight gradient spot check.
        let analytic = gru.w_hh.grad.clone();
        gru.w_hh.zero_grad();
        for k in [0usize, 5, 17, 40] {
            let orig = gru.w_hh.value.as_slice().unwrap()[k];
            gru.w_hh.value.as_slice_mut().unwrap()[k] = orig + h;
            let lp = loss(&mut gru, &x);
            gru.w_hh.value.as_slice_mut().unwrap()[k] = orig - h;
            let lm = loss(&mut gru, &x);
            gru.w_hh.value.as_slice_mut().unwrap()[k] = orig;
            let num = (lp - lm) / (2.0 * h);
            assert!((num - analytic.as_slice().unwrap()[k]).abs() < 1e-7);
        }
    }
}
