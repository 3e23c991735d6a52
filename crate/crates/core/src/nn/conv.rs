use rand::Rng;

use super::{gemm, join, MatRef, Mode, Param, ParamVisitor, Scalar, Tensor};
use crate::error::{Error, Result};

/// Geometry of a 3D convolution over `(T, H, W)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv3dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
    pub bias: bool,
}

impl Conv3dSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: [usize; 3]) -> Self {
        Self { in_channels, out_channels, kernel, stride: [1; 3], padding: [0; 3], bias: false }
    }

    pub fn stride(mut self, stride: [usize; 3]) -> Self {
        self.stride = stride;
        self
    }

    pub fn padding(mut self, padding: [usize; 3]) -> Self {
        self.padding = padding;
        self
    }

    pub fn with_bias(mut self) -> Self {
        self.bias = true;
        self
    }

    /// Elements in one filter: `C_in * kt * kh * kw`.
    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel.iter().product::<usize>()
    }

    pub fn output_dims(&self, dims: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            let padded = dims[a] + 2 * self.padding[a];
            if padded < self.kernel[a] {
                return Err(Error::Shape(format!(
                    "input extent {} (padded {padded}) smaller than kernel {} on axis {a}",
                    dims[a], self.kernel[a]
                )));
            }
            out[a] = (padded - self.kernel[a]) / self.stride[a] + 1;
        }
        Ok(out)
    }
}

/// 3D convolution, weights `O x C x kt x kh x kw`, lowered per output time
/// slice to `im2col` plus a matrix product.
#[derive(Debug, Clone)]
pub struct Conv3d<S> {
    pub spec: Conv3dSpec,
    pub weight: Param<S>,
    pub bias: Option<Param<S>>,
    /// Skip computing the input gradient (first layer of a network).
    pub input_grad: bool,
    cache: Option<Tensor<S>>,
}

struct Geometry {
    c: usize,
    t: usize,
    h: usize,
    w: usize,
    to: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn plane_out(&self) -> usize {
        self.ho * self.wo
    }
}

impl<S: Scalar> Conv3d<S> {
    pub fn new<R: Rng>(spec: Conv3dSpec, rng: &mut R) -> Self {
        let [kt, kh, kw] = spec.kernel;
        let shape = [spec.out_channels, spec.in_channels, kt, kh, kw];
        let weight = Param::kaiming(&shape, spec.fan_in(), rng);
        let bias = spec.bias.then(|| Param::filled(&[spec.out_channels], S::zero()));
        Self { spec, weight, bias, input_grad: true, cache: None }
    }

    pub fn from_weights(spec: Conv3dSpec, weight: Param<S>, bias: Option<Param<S>>) -> Result<Self> {
        let [kt, kh, kw] = spec.kernel;
        let shape = vec![spec.out_channels, spec.in_channels, kt, kh, kw];
        if weight.shape != shape {
            return Err(Error::Shape(format!("conv weight {:?}, expected {shape:?}", weight.shape)));
        }
        if bias.is_some() != spec.bias {
            return Err(Error::Shape("conv bias presence disagrees with its spec".into()));
        }
        Ok(Self { spec, weight, bias, input_grad: true, cache: None })
    }

    fn geometry(&self, shape: &[usize]) -> Result<(usize, Geometry)> {
        if shape.len() != 5 || shape[1] != self.spec.in_channels {
            return Err(Error::Shape(format!(
                "conv expects [B, {}, T, H, W], got {shape:?}",
                self.spec.in_channels
            )));
        }
        let [to, ho, wo] = self.spec.output_dims([shape[2], shape[3], shape[4]])?;
        Ok((shape[0], Geometry { c: shape[1], t: shape[2], h: shape[3], w: shape[4], to, ho, wo }))
    }

    /// Output columns `[lo, hi)` whose input column `ox * s + d - p` lies in `0..len`.
    fn valid_range(out_len: usize, len: usize, stride: usize, offset: usize, pad: usize) -> (usize, usize) {
        // ox * stride + offset >= pad  and  ox * stride + offset < len + pad
        let lo = if offset >= pad { 0 } else { (pad - offset).div_ceil(stride) };
        let hi = if len + pad > offset { (len + pad - offset).div_ceil(stride).min(out_len) } else { 0 };
        (lo.min(hi), hi)
    }

    /// Fills `col` (`K x P`) with the receptive fields of output slice `t_out`.
    fn im2col(&self, x: &[S], g: &Geometry, t_out: usize, col: &mut [S]) {
        let [kt, kh, kw] = self.spec.kernel;
        let [st, sh, sw] = self.spec.stride;
        let [pt, ph, pw] = self.spec.padding;
        let p = g.plane_out();
        let mut row = 0;
        for c in 0..g.c {
            for dt in 0..kt {
                let ti = (t_out * st + dt) as isize - pt as isize;
                for dy in 0..kh {
                    for dx in 0..kw {
                        let dst = &mut col[row * p..(row + 1) * p];
                        row += 1;
                        if ti < 0 || ti >= g.t as isize {
                            dst.fill(S::zero());
                            continue;
                        }
                        let plane = &x[(c * g.t + ti as usize) * g.h * g.w..][..g.h * g.w];
                        let (x_lo, x_hi) = Self::valid_range(g.wo, g.w, sw, dx, pw);
                        for oy in 0..g.ho {
                            let drow = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                            let iy = (oy * sh + dy) as isize - ph as isize;
                            if iy < 0 || iy >= g.h as isize {
                                drow.fill(S::zero());
                                continue;
                            }
                            let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                            drow[..x_lo].fill(S::zero());
                            drow[x_hi..].fill(S::zero());
                            if sw == 1 {
                                let start = x_lo + dx - pw;
                                drow[x_lo..x_hi].copy_from_slice(&src[start..start + (x_hi - x_lo)]);
                            } else {
                                for (ox, d) in drow.iter_mut().enumerate().take(x_hi).skip(x_lo) {
                                    *d = src[ox * sw + dx - pw];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds `col` (`K x P`) back into the input gradient `dx`.
    fn col2im(&self, col: &[S], g: &Geometry, t_out: usize, dx_buf: &mut [S]) {
        let [kt, kh, kw] = self.spec.kernel;
        let [st, sh, sw] = self.spec.stride;
        let [pt, ph, pw] = self.spec.padding;
        let p = g.plane_out();
        let mut row = 0;
        for c in 0..g.c {
            for dt in 0..kt {
                let ti = (t_out * st + dt) as isize - pt as isize;
                for dy in 0..kh {
                    for dxk in 0..kw {
                        let src = &col[row * p..(row + 1) * p];
                        row += 1;
                        if ti < 0 || ti >= g.t as isize {
                            continue;
                        }
                        let plane = &mut dx_buf[(c * g.t + ti as usize) * g.h * g.w..][..g.h * g.w];
                        let (x_lo, x_hi) = Self::valid_range(g.wo, g.w, sw, dxk, pw);
                        for oy in 0..g.ho {
                            let iy = (oy * sh + dy) as isize - ph as isize;
                            if iy < 0 || iy >= g.h as isize {
                                continue;
                            }
                            let drow = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                            let srow = &src[oy * g.wo..(oy + 1) * g.wo];
                            for ox in x_lo..x_hi {
                                drow[ox * sw + dxk - pw] += srow[ox];
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&mut self, x: &Tensor<S>, mode: Mode) -> Result<Tensor<S>> {
        let (batch, g) = self.geometry(x.shape())?;
        let o = self.spec.out_channels;
        let k = self.spec.fan_in();
        let p = g.plane_out();
        let in_len = g.c * g.t * g.h * g.w;
        let out_len = o * g.to * p;
        let mut out = Tensor::zeros(&[batch, o, g.to, g.ho, g.wo]);
        let mut col = vec![S::zero(); k * p];
        let wmat = MatRef::row_major(&self.weight.value, o, k);
        for b in 0..batch {
            let xs = &x.data()[b * in_len..(b + 1) * in_len];
            let ys = &mut out.data_mut()[b * out_len..(b + 1) * out_len];
            for t_out in 0..g.to {
                self.im2col(xs, &g, t_out, &mut col);
                gemm(S::one(), wmat, MatRef::row_major(&col, k, p), S::zero(), &mut ys[t_out * p..], g.to * p);
            }
            if let Some(bias) = &self.bias {
                for (oc, chunk) in ys.chunks_exact_mut(g.to * p).enumerate() {
                    chunk.iter_mut().for_each(|v| *v += bias.value[oc]);
                }
            }
        }
        self.cache = (mode == Mode::Train).then(|| x.clone());
        Ok(out)
    }

    /// Accumulates parameter gradients; returns the input gradient unless
    /// `input_grad` is off.
    pub fn backward(&mut self, dy: &Tensor<S>) -> Result<Option<Tensor<S>>> {
        let x = self
            .cache
            .take()
            .ok_or_else(|| Error::InvalidInput("conv backward without a training forward".into()))?;
        let (batch, g) = self.geometry(x.shape())?;
        let o = self.spec.out_channels;
        let k = self.spec.fan_in();
        let p = g.plane_out();
        if dy.shape() != [batch, o, g.to, g.ho, g.wo] {
            return Err(Error::Shape(format!("conv output gradient {:?}", dy.shape())));
        }
        let in_len = g.c * g.t * g.h * g.w;
        let out_len = o * g.to * p;
        let mut col = vec![S::zero(); k * p];
        let mut dcol = vec![S::zero(); k * p];
        let mut dx = self.input_grad.then(|| Tensor::zeros(x.shape()));
        for b in 0..batch {
            let xs = &x.data()[b * in_len..(b + 1) * in_len];
            let dys = &dy.data()[b * out_len..(b + 1) * out_len];
            for t_out in 0..g.to {
                let dy_t = MatRef { data: &dys[t_out * p..], rows: o, cols: p, rs: g.to * p, cs: 1 };
                self.im2col(xs, &g, t_out, &mut col);
                gemm(S::one(), dy_t, MatRef::transposed(&col, k, p), S::one(), &mut self.weight.grad, k);
                if let Some(dx) = dx.as_mut() {
                    let wt = MatRef::transposed(&self.weight.value, o, k);
                    gemm(S::one(), wt, dy_t, S::zero(), &mut dcol, p);
                    let dxs = &mut dx.data_mut()[b * in_len..(b + 1) * in_len];
                    self.col2im(&dcol, &g, t_out, dxs);
                }
            }
            if let Some(bias) = self.bias.as_mut() {
                for (oc, chunk) in dys.chunks_exact(g.to * p).enumerate() {
                    bias.grad[oc] += chunk.iter().copied().sum::<S>();
                }
            }
        }
        Ok(dx)
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut ParamVisitor<'_, S>) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = self.bias.as_mut() {
            f(&join(prefix, "bias"), b);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::testutil::*;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Direct six-deep loop convolution.
    fn naive_conv(spec: &Conv3dSpec, w: &[f64], bias: Option<&[f64]>, x: &Tensor<f64>) -> Tensor<f64> {
        let s = x.shape();
        let (b, c, t, h, wd) = (s[0], s[1], s[2], s[3], s[4]);
        let [to, ho, wo] = spec.output_dims([t, h, wd]).unwrap();
        let [kt, kh, kw] = spec.kernel;
        let o = spec.out_channels;
        let mut out = Tensor::zeros(&[b, o, to, ho, wo]);
        for bi in 0..b {
            for oc in 0..o {
                for ot in 0..to {
                    for oy in 0..ho {
                        for ox in 0..wo {
                            let mut acc = bias.map_or(0.0, |bb| bb[oc]);
                            for ci in 0..c {
                                for a in 0..kt {
                                    for bb in 0..kh {
                                        for cc in 0..kw {
                                            let it = (ot * spec.stride[0] + a) as isize - spec.padding[0] as isize;
                                            let iy = (oy * spec.stride[1] + bb) as isize - spec.padding[1] as isize;
                                            let ix = (ox * spec.stride[2] + cc) as isize - spec.padding[2] as isize;
                                            if it < 0 || iy < 0 || ix < 0 || it >= t as isize || iy >= h as isize || ix >= wd as isize {
                                                continue;
                                            }
                                            let xi = (((bi * c + ci) * t + it as usize) * h + iy as usize) * wd + ix as usize;
                                            let wi = (((oc * c + ci) * kt + a) * kh + bb) * kw + cc;
                                            acc += w[wi] * x.data()[xi];
                                        }
                                    }
                                }
                            }
                            let oi = (((bi * o + oc) * to + ot) * ho + oy) * wo + ox;
                            out.data_mut()[oi] = acc;
                        }
                    }
                }
            }
        }
        out
    }

    fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn specs() -> Vec<Conv3dSpec> {
        vec![
            Conv3dSpec::new(2, 3, [3, 3, 3]).padding([1, 1, 1]).with_bias(),
            Conv3dSpec::new(3, 4, [3, 7, 7]).stride([1, 2, 2]).padding([1, 3, 3]),
            Conv3dSpec::new(2, 2, [3, 3, 3]).stride([2, 2, 2]).padding([1, 1, 1]),
            Conv3dSpec::new(3, 2, [1, 1, 1]).stride([2, 2, 2]),
            Conv3dSpec::new(2, 3, [3, 1, 1]).padding([1, 0, 0]).with_bias(),
        ]
    }

    #[test]
    fn forward_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for spec in specs() {
            let mut conv = Conv3d::<f64>::new(spec, &mut rng);
            if let Some(b) = conv.bias.as_mut() {
                b.value.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
            }
            let x = random_tensor(&[2, spec.in_channels, 5, 9, 8], &mut rng);
            let y = conv.forward(&x, Mode::Eval).unwrap();
            let expect = naive_conv(&spec, &conv.weight.value, conv.bias.as_ref().map(|b| &b.value[..]), &x);
            assert_eq!(y.shape(), expect.shape());
            for (a, b) in y.data().iter().zip(expect.data()) {
                assert!((a - b).abs() < 1e-12, "{spec:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for spec in specs() {
            let mut conv = Conv3d::<f64>::new(spec, &mut rng);
            let mut x = random_tensor(&[2, spec.in_channels, 4, 6, 5], &mut rng);
            let y = conv.forward(&x, Mode::Train).unwrap();
            let probe = probe_weights(y.len());
            let dy = Tensor::from_vec(y.shape(), probe.clone()).unwrap();
            let dx = conv.backward(&dy).unwrap().unwrap();
            let loss = |conv: &mut Conv3d<f64>, x: &Tensor<f64>| -> f64 {
                let y = conv.forward(x, Mode::Eval).unwrap();
                y.data().iter().zip(&probe).map(|(a, b)| a * b).sum()
            };
            for i in (0..conv.weight.value.len()).step_by(7) {
                let analytic = conv.weight.grad[i];
                let mut w = conv.weight.value.clone();
                let numeric = numeric_grad(&mut w, i, 1e-5, |w| {
                    let mut c = conv.clone();
                    c.weight.value.copy_from_slice(w);
                    loss(&mut c, &x)
                });
                assert!(rel_err(analytic, numeric) < 1e-6, "{spec:?} w[{i}]: {analytic} vs {numeric}");
            }
            for i in (0..x.len()).step_by(11) {
                let analytic = dx.data()[i];
                let orig = x.data()[i];
                x.data_mut()[i] = orig + 1e-5;
                let up = loss(&mut conv, &x);
                x.data_mut()[i] = orig - 1e-5;
                let down = loss(&mut conv, &x);
                x.data_mut()[i] = orig;
                let numeric = (up - down) / 2e-5;
                assert!((analytic - numeric).abs() < 1e-6 * (1.0 + numeric.abs()), "{spec:?} x[{i}]");
            }
            if let Some(b) = &conv.bias {
                let per_sample = y.len() / 2;
                let plane = per_sample / spec.out_channels;
                for oc in 0..spec.out_channels {
                    let expect: f64 = (0..2)
                        .flat_map(|bi| probe[bi * per_sample + oc * plane..][..plane].iter())
                        .sum();
                    assert!((b.grad[oc] - expect).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn rejects_wrong_channel_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut conv = Conv3d::<f32>::new(Conv3dSpec::new(6, 2, [1, 1, 1]), &mut rng);
        assert!(conv.forward(&Tensor::zeros(&[1, 3, 2, 2, 2]), Mode::Eval).is_err());
    }
}
