use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Array4, Axis, IxDyn};
use rand::Rng;

use super::{init, BufferVisitor, Param, ParamVisitor};
use crate::real::Real;

/// Kernel, stride and padding of a 2-D (transposed) convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub ph: usize,
    pub pw: usize,
}

impl ConvGeom {
    pub fn conv_out(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let oh = (h + 2 * self.ph).checked_sub(self.kh)? / self.sh + 1;
        let ow = (w + 2 * self.pw).checked_sub(self.kw)? / self.sw + 1;
        Some((oh, ow))
    }

    pub fn transposed_out(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let oh = ((h.checked_sub(1)? * self.sh) + self.kh).checked_sub(2 * self.ph)?;
        let ow = ((w.checked_sub(1)? * self.sw) + self.kw).checked_sub(2 * self.pw)?;
        Some((oh, ow))
    }

    fn taps(&self) -> usize {
        self.kh * self.kw
    }
}

/// Unfolds `x: [C, N, H, W]` into `[C·kh·kw, N·oh·ow]`; out-of-bounds taps read zero.
pub fn im2col<S: Real>(x: &Array4<S>, g: &ConvGeom, oh: usize, ow: usize) -> Array2<S> {
    let (c, n, h, w) = x.dim();
    let x = x.as_standard_layout();
    let xs = x.as_slice().expect("contiguous");
    let ncol = n * oh * ow;
    let mut cols = Array2::zeros((c * g.taps(), ncol));
    let out = cols.as_slice_mut().expect("contiguous");
    for ci in 0..c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = ((ci * g.kh + ki) * g.kw + kj) * ncol;
                for ni in 0..n {
                    for o_h in 0..oh {
                        let ih = (o_h * g.sh + ki) as isize - g.ph as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let src = ((ci * n + ni) * h + ih as usize) * w;
                        let dst = row + (ni * oh + o_h) * ow;
                        for o_w in 0..ow {
                            let iw = (o_w * g.sw + kj) as isize - g.pw as isize;
                            if iw >= 0 && iw < w as isize {
                                out[dst + o_w] = xs[src + iw as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters `[C·kh·kw, N·oh·ow]` back into `[C, N, H, W]`.
pub fn col2im<S: Real>(
    cols: &Array2<S>,
    dims: (usize, usize, usize, usize),
    g: &ConvGeom,
    oh: usize,
    ow: usize,
) -> Array4<S> {
    let (c, n, h, w) = dims;
    let ncol = n * oh * ow;
    assert_eq!(cols.dim(), (c * g.taps(), ncol));
    let cols = cols.as_standard_layout();
    let src = cols.as_slice().expect("contiguous");
    let mut x = Array4::zeros(dims);
    let xs = x.as_slice_mut().expect("contiguous");
    for ci in 0..c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = ((ci * g.kh + ki) * g.kw + kj) * ncol;
                for ni in 0..n {
                    for o_h in 0..oh {
                        let ih = (o_h * g.sh + ki) as isize - g.ph as isize;
                        if ih < 0 || ih >= h as isize {
                            continue;
                        }
                        let dst = ((ci * n + ni) * h + ih as usize) * w;
                        let s = row + (ni * oh + o_h) * ow;
                        for o_w in 0..ow {
                            let iw = (o_w * g.sw + kj) as isize - g.pw as isize;
                            if iw >= 0 && iw < w as isize {
                                xs[dst + iw as usize] = xs[dst + iw as usize] + src[s + o_w];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

fn channel_matrix<S: Real>(x: &Array4<S>) -> Array2<S> {
    let (c, n, h, w) = x.dim();
    x.as_standard_layout()
        .into_owned()
        .into_shape_with_order((c, n * h * w))
        .expect("contiguous")
}

struct ConvCache<S> {
    cols: Array2<S>,
    in_dims: (usize, usize, usize, usize),
}

/// 2-D convolution on `[C, N, H, W]` activations.
pub struct Conv2d<S> {
    pub weight: Param<S>,
    pub bias: Option<Param<S>>,
    geom: ConvGeom,
    cin: usize,
    cout: usize,
    cache: Option<ConvCache<S>>,
}

impl<S: Real> Conv2d<S> {
    pub fn new<R: Rng + ?Sized>(
        cin: usize,
        cout: usize,
        geom: ConvGeom,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = cin * geom.taps();
        let weight = init::kaiming_uniform(rng, &[cout, fan_in], fan_in);
        let bias = bias.then(|| Param::new(init::bias_uniform(rng, cout, fan_in)));
        Self {
            weight: Param::new(weight),
            bias,
            geom,
            cin,
            cout,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array4<S>) -> Array4<S> {
        let (c, n, h, w) = x.dim();
        assert_eq!(c, self.cin, "conv input channels");
        let (oh, ow) = self.geom.conv_out(h, w).expect("conv input too small");
        let cols = im2col(x, &self.geom, oh, ow);
        let mut y = self.weight.mat().dot(&cols);
        if let Some(b) = &self.bias {
            for (mut row, &bv) in y.axis_iter_mut(Axis(0)).zip(b.value.iter()) {
                row.mapv_inplace(|v| v + bv);
            }
        }
        self.cache = Some(ConvCache {
            cols,
            in_dims: (c, n, h, w),
        });
        y.into_shape_with_order((self.cout, n, oh, ow)).expect("shape")
    }

    pub fn backward(&mut self, dy: &Array4<S>) -> Array4<S> {
        let cache = self.cache.take().expect("backward before forward");
        let (_, n, oh, ow) = dy.dim();
        let dy2 = channel_matrix(dy);
        general_mat_mul(
            S::one(),
            &dy2,
            &cache.cols.t(),
            S::one(),
            &mut self.weight.grad_mat(),
        );
        if let Some(b) = &mut self.bias {
            let db = dy2.sum_axis(Axis(1));
            b.grad.zip_mut_with(&db.into_dyn(), |g, &d| *g = *g + d);
        }
        let dcols = self.weight.mat().t().dot(&dy2);
        debug_assert_eq!(dcols.ncols(), n * oh * ow);
        col2im(&dcols, cache.in_dims, &self.geom, oh, ow)
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_, S>) {
        f(&format!("{prefix}.weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&format!("{prefix}.bias"), b);
        }
    }
}

struct DeconvCache<S> {
    x: Array2<S>,
    in_hw: (usize, usize),
}

/// Transposed 2-D convolution; weight layout `[Cin, Cout·kh·kw]`.
pub struct ConvTranspose2d<S> {
    pub weight: Param<S>,
    pub bias: Param<S>,
    geom: ConvGeom,
    cin: usize,
    cout: usize,
    cache: Option<DeconvCache<S>>,
}

impl<S: Real> ConvTranspose2d<S> {
    pub fn new<R: Rng + ?Sized>(cin: usize, cout: usize, geom: ConvGeom, rng: &mut R) -> Self {
        // Each output position receives roughly cin·taps/(stride²) contributions.
        let fan_in = (cin * geom.taps() / (geom.sh * geom.sw)).max(1);
        let weight = init::kaiming_uniform(rng, &[cin, cout * geom.taps()], fan_in);
        Self {
            weight: Param::new(weight),
            bias: Param::new(init::bias_uniform(rng, cout, fan_in)),
            geom,
            cin,
            cout,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array4<S>) -> Array4<S> {
        let (c, n, h, w) = x.dim();
        assert_eq!(c, self.cin, "deconv input channels");
        let (oh, ow) = self.geom.transposed_out(h, w).expect("deconv shape");
        let xm = channel_matrix(x);
        let cols = self.weight.mat().t().dot(&xm);
        let mut y = col2im(&cols, (self.cout, n, oh, ow), &self.geom, h, w);
        for (mut plane, &bv) in y.axis_iter_mut(Axis(0)).zip(self.bias.value.iter()) {
            plane.mapv_inplace(|v| v + bv);
        }
        self.cache = Some(DeconvCache { x: xm, in_hw: (h, w) });
        y
    }

    pub fn backward(&mut self, dy: &Array4<S>) -> Array4<S> {
        let cache = self.cache.take().expect("backward before forward");
        let (_, n, _, _) = dy.dim();
        let (h, w) = cache.in_hw;
        let dcols = im2col(dy, &self.geom, h, w);
        general_mat_mul(
            S::one(),
            &cache.x,
            &dcols.t(),
            S::one(),
            &mut self.weight.grad_mat(),
        );
        let db: Array1<S> = channel_matrix(dy).sum_axis(Axis(1));
        self.bias
            .grad
            .zip_mut_with(&db.into_shape_with_order(IxDyn(&[self.cout])).unwrap(), |g, &d| {
                *g = *g + d
            });
        let dx = self.weight.mat().dot(&dcols);
        dx.into_shape_with_order((self.cin, n, h, w)).expect("shape")
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_, S>) {
        f(&format!("{prefix}.weight"), &mut self.weight);
        f(&format!("{prefix}.bias"), &mut self.bias);
    }

    pub fn visit_buffers(&mut self, _prefix: &str, _f: &mut BufferVisitor<'_, S>) {}
}


#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const G: ConvGeom = ConvGeom {
        kh: 8,
        kw: 8,
        sh: 2,
        sw: 2,
        ph: 3,
        pw: 3,
    };

    #[test]
    fn shape_arithmetic_halves_and_doubles() {
        for n in [16usize, 32, 64, 128, 320] {
            assert_eq!(G.conv_out(n, n), Some((n / 2, n / 2)));
            assert_eq!(G.transposed_out(n / 2, n / 2), Some((n, n)));
        }
    }

    /// Direct 7-loop convolution used as an oracle for the im2col path.
    fn direct_conv(x: &Array4<f64>, w: &Array2<f64>, g: &ConvGeom, cout: usize) -> Array4<f64> {
        let (c, n, h, wd) = x.dim();
        let (oh, ow) = g.conv_out(h, wd).unwrap();
        let mut y = Array4::zeros((cout, n, oh, ow));
        for co in 0..cout {
            for ni in 0..n {
                for i in 0..oh {
                    for j in 0..ow {
                        let mut acc = 0.0;
                        for ci in 0..c {
                            for ki in 0..g.kh {
                                for kj in 0..g.kw {
                                    let ih = (i * g.sh + ki) as isize - g.ph as isize;
                                    let iw = (j * g.sw + kj) as isize - g.pw as isize;
                                    if ih >= 0 && iw >= 0 && (ih as usize) < h && (iw as usize) < wd {
                                        acc += w[[co, (ci * g.kh + ki) * g.kw + kj]]
                                            * x[[ci, ni, ih as usize, iw as usize]];
                                    }
                                }
                            }
                        }
                        y[[co, ni, i, j]] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn im2col_conv_matches_direct() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut conv = Conv2d::<f64>::new(3, 4, G, false, &mut rng);
        let x = Array4::from_shape_fn((3, 2, 16, 12), |(a, b, c, d)| {
            ((a * 7 + b * 5 + c * 3 + d) % 13) as f64 / 13.0 - 0.4
        });
        let y = conv.forward(&x);
        let w = conv.weight.mat().to_owned();
        let expected = direct_conv(&x, &w, &G, 4);
        assert_eq!(y.dim(), (4, 2, 8, 6));
        for (a, b) in y.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), c> == <x, col2im(c)>
        let x = Array4::from_shape_fn((2, 3, 8, 8), |(a, b, c, d)| ((a + 2 * b + 3 * c + 5 * d) % 7) as f64);
        let (oh, ow) = G.conv_out(8, 8).unwrap();
        let cols = im2col(&x, &G, oh, ow);
        let c = Array2::from_shape_fn(cols.dim(), |(i, j)| ((i * 31 + j * 17) % 11) as f64 - 5.0);
        let lhs = (&cols * &c).sum();
        let rhs = (&x * &col2im(&c, x.dim(), &G, oh, ow)).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn transposed_conv_is_adjoint_of_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut conv = Conv2d::<f64>::new(2, 3, G, false, &mut rng);
        let mut deconv = ConvTranspose2d::<f64>::new(3, 2, G, &mut rng);
        deconv.bias.value.fill(0.0);
        // Same weight matrix read as [cout_conv, cin_conv·taps] == [cin_deconv, cout_deconv·taps].
        deconv.weight.value = conv.weight.value.clone();
        let x = Array4::from_shape_fn((2, 1, 8, 8), |(a, _, c, d)| (a + c * d) as f64 / 10.0);
        let y = Array4::from_shape_fn((3, 1, 4, 4), |(a, _, c, d)| (a as f64 - c as f64 + d as f64) / 5.0);
        let lhs = (&conv.forward(&x) * &y).sum();
        let rhs = (&x * &deconv.forward(&y)).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }
}
