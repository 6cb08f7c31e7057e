//! Layers with hand-written backward passes.
//!
//! Every layer has a training `forward` that caches what `backward` needs,
//! and a cache-free `infer` used in evaluation mode. Gradients of parameters
//! accumulate into the owning [`ParamSet`].

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::seed::Rng;

use super::param::{ParamId, ParamSet};
use super::tensor::{matmul, Real, Tensor4};

fn missing_cache(layer: &str) -> Error {
    Error::State(format!("{layer}: backward called without a training forward"))
}

#[derive(Clone, Debug)]
pub struct Conv2d<T = f32> {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    cache: Option<ConvCache<T>>,
}

#[derive(Clone, Debug)]
struct ConvCache<T> {
    input_shape: [usize; 4],
    cols: Vec<T>,
}

impl<T: Real> Conv2d<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamSet<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut Rng,
    ) -> Self {
        assert!(stride >= 1 && kernel >= 1);
        let fan_in = in_channels * kernel * kernel;
        let weight = ps.add_kaiming(format!("{name}.weight"), [out_channels, in_channels, kernel, kernel], fan_in, rng);
        let bias = bias.then(|| ps.add_param(format!("{name}.bias"), Tensor4::zeros([1, out_channels, 1, 1])));
        Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
            cache: None,
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (k, s, p) = (self.kernel, self.stride, self.pad);
        if h + 2 * p < k || w + 2 * p < k {
            return Err(Error::Shape(format!("conv: {h}x{w} input smaller than {k}x{k} kernel")));
        }
        Ok(((h + 2 * p - k) / s + 1, (w + 2 * p - k) / s + 1))
    }

    fn check_input(&self, x: &Tensor4<T>) -> Result<(usize, usize)> {
        if x.c() != self.in_channels {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {}",
                self.in_channels,
                x.c()
            )));
        }
        self.output_hw(x.h(), x.w())
    }

    /// Output columns `ox` whose source column `ox * s + kx - p` lies inside `0..w`.
    fn valid_cols(&self, kx: usize, w: usize, wo: usize) -> (usize, usize) {
        let (s, p) = (self.stride, self.pad);
        let lo = if kx >= p { 0 } else { (p - kx).div_ceil(s) };
        let hi = if w + p > kx { ((w + p - kx - 1) / s + 1).min(wo) } else { 0 };
        (lo.min(hi), hi)
    }

    fn im2col(&self, x: &[T], h: usize, w: usize, ho: usize, wo: usize, cols: &mut [T]) {
        let (k, s, p) = (self.kernel, self.stride, self.pad);
        let howo = ho * wo;
        for c in 0..self.in_channels {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let (lo, hi) = self.valid_cols(kx, w, wo);
                    let row = &mut cols[((c * k + ky) * k + kx) * howo..][..howo];
                    for oy in 0..ho {
                        let iy = (oy * s + ky) as isize - p as isize;
                        let dst = &mut row[oy * wo..(oy + 1) * wo];
                        if iy < 0 || iy >= h as isize {
                            dst.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        dst[..lo].fill(T::zero());
                        dst[hi..].fill(T::zero());
                        let start = lo * s + kx - p;
                        if s == 1 {
                            dst[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                        } else {
                            for (d, &v) in dst[lo..hi].iter_mut().zip(src[start..].iter().step_by(s)) {
                                *d = v;
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[T], h: usize, w: usize, ho: usize, wo: usize, dx: &mut [T]) {
        let (k, s, p) = (self.kernel, self.stride, self.pad);
        let howo = ho * wo;
        dx.fill(T::zero());
        for c in 0..self.in_channels {
            let plane = &mut dx[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let (lo, hi) = self.valid_cols(kx, w, wo);
                    if lo >= hi {
                        continue;
                    }
                    let row = &cols[((c * k + ky) * k + kx) * howo..][..howo];
                    let start = lo * s + kx - p;
                    for oy in 0..ho {
                        let iy = (oy * s + ky) as isize - p as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        let src = &row[oy * wo + lo..oy * wo + hi];
                        if s == 1 {
                            for (d, &v) in dst[start..start + hi - lo].iter_mut().zip(src) {
                                *d += v;
                            }
                        } else {
                            for (d, &v) in dst[start..].iter_mut().step_by(s).zip(src) {
                                *d += v;
                            }
                        }
                    }
                }
            }
        }
    }

    fn run(&self, ps: &ParamSet<T>, x: &Tensor4<T>, keep_cols: bool) -> Result<(Tensor4<T>, Vec<T>)> {
        let (ho, wo) = self.check_input(x)?;
        let [n, _, h, w] = x.shape();
        let ckk = self.in_channels * self.kernel * self.kernel;
        let howo = ho * wo;
        let weight = ps.value(self.weight).data();
        let bias = self.bias.map(|b| ps.value(b).data());
        let mut y = Tensor4::zeros([n, self.out_channels, ho, wo]);
        let col_len = ckk * howo;
        let mut cols = if keep_cols { vec![T::zero(); n * col_len] } else { Vec::new() };
        let out_len = self.out_channels * howo;
        let item_len = x.item_len();
        let body = |i: usize, yi: &mut [T], col: &mut [T]| {
            let xi = &x.data()[i * item_len..(i + 1) * item_len];
            self.im2col(xi, h, w, ho, wo, col);
            matmul(self.out_channels, ckk, howo, weight, false, col, false, yi, false);
            if let Some(b) = bias {
                for (oc, chunk) in yi.chunks_exact_mut(howo).enumerate() {
                    chunk.iter_mut().for_each(|v| *v += b[oc]);
                }
            }
        };
        if keep_cols {
            y.data_mut()
                .par_chunks_mut(out_len)
                .zip(cols.par_chunks_mut(col_len))
                .enumerate()
                .for_each(|(i, (yi, col))| body(i, yi, col));
        } else {
            y.data_mut().par_chunks_mut(out_len).enumerate().for_each_init(
                || vec![T::zero(); col_len],
                |col, (i, yi)| body(i, yi, col),
            );
        }
        y.ensure_finite("conv2d")?;
        Ok((y, cols))
    }

    pub fn forward(&mut self, ps: &ParamSet<T>, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let (y, cols) = self.run(ps, x, true)?;
        self.cache = Some(ConvCache {
            input_shape: x.shape(),
            cols,
        });
        Ok(y)
    }

    pub fn infer(&self, ps: &ParamSet<T>, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        Ok(self.run(ps, x, false)?.0)
    }

    pub fn backward(&mut self, ps: &mut ParamSet<T>, dy: &Tensor4<T>) -> Result<Tensor4<T>> {
        let cache = self.cache.take().ok_or_else(|| missing_cache("conv2d"))?;
        let [n, _, h, w] = cache.input_shape;
        let (ho, wo) = self.output_hw(h, w)?;
        dy.expect_shape([n, self.out_channels, ho, wo], "conv2d backward")?;
        let ckk = self.in_channels * self.kernel * self.kernel;
        let howo = ho * wo;
        let col_len = ckk * howo;
        let out_len = self.out_channels * howo;

        // Sequential over items keeps the reduction order fixed.
        {
            let dw = ps.grad_mut(self.weight).data_mut();
            for i in 0..n {
                let dyi = &dy.data()[i * out_len..(i + 1) * out_len];
                let col = &cache.cols[i * col_len..(i + 1) * col_len];
                matmul(self.out_channels, howo, ckk, dyi, false, col, true, dw, true);
            }
        }
        if let Some(b) = self.bias {
            let db = ps.grad_mut(b).data_mut();
            for i in 0..n {
                for (oc, chunk) in dy.data()[i * out_len..(i + 1) * out_len].chunks_exact(howo).enumerate() {
                    let s: f64 = chunk.iter().map(|v| v.as_f64()).sum();
                    db[oc] += T::from_f64(s);
                }
            }
        }

        let weight = ps.value(self.weight).data();
        let mut dx = Tensor4::zeros(cache.input_shape);
        let item_len = dx.item_len();
        dx.data_mut().par_chunks_mut(item_len).enumerate().for_each_init(
            || vec![T::zero(); col_len],
            |dcol, (i, dxi)| {
                let dyi = &dy.data()[i * out_len..(i + 1) * out_len];
                matmul(ckk, self.out_channels, howo, weight, true, dyi, false, dcol, false);
                self.col2im(dcol, h, w, ho, wo, dxi);
            },
        );
        Ok(dx)
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug)]
pub struct BatchNorm2d<T = f32> {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
    cache: Option<BnCache<T>>,
}

#[derive(Clone, Debug)]
struct BnCache<T> {
    xhat: Tensor4<T>,
    inv_std: Vec<f64>,
}

impl<T: Real> BatchNorm2d<T> {
    pub fn new(ps: &mut ParamSet<T>, name: &str, channels: usize) -> Self {
        let shape = [1, channels, 1, 1];
        Self {
            gamma: ps.add_param(format!("{name}.gamma"), Tensor4::filled(shape, T::one())),
            beta: ps.add_param(format!("{name}.beta"), Tensor4::zeros(shape)),
            running_mean: ps.add_buffer(format!("{name}.running_mean"), Tensor4::zeros(shape)),
            running_var: ps.add_buffer(format!("{name}.running_var"), Tensor4::filled(shape, T::one())),
            channels,
            cache: None,
        }
    }

    fn check(&self, x: &Tensor4<T>) -> Result<()> {
        if x.c() != self.channels {
            return Err(Error::Shape(format!("batchnorm expects {} channels, got {}", self.channels, x.c())));
        }
        Ok(())
    }

    /// Normalizes with batch statistics and updates the running statistics.
    pub fn forward(&mut self, ps: &mut ParamSet<T>, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check(x)?;
        let [n, c, h, w] = x.shape();
        if n < 2 {
            return Err(Error::Numeric("batchnorm in training mode needs a batch of at least 2".into()));
        }
        let hw = h * w;
        let m = (n * hw) as f64;
        let mut mean = vec![0.0f64; c];
        let mut var = vec![0.0f64; c];
        for i in 0..n {
            for ch in 0..c {
                let s: f64 = x.data()[(i * c + ch) * hw..][..hw].iter().map(|v| v.as_f64()).sum();
                mean[ch] += s;
            }
        }
        mean.iter_mut().for_each(|v| *v /= m);
        for i in 0..n {
            for ch in 0..c {
                let mu = mean[ch];
                let s: f64 = x.data()[(i * c + ch) * hw..][..hw]
                    .iter()
                    .map(|v| (v.as_f64() - mu).powi(2))
                    .sum();
                var[ch] += s;
            }
        }
        var.iter_mut().for_each(|v| *v /= m);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();

        let gamma = ps.value(self.gamma).data().to_vec();
        let beta = ps.value(self.beta).data().to_vec();
        let mut xhat = Tensor4::zeros(x.shape());
        let mut y = Tensor4::zeros(x.shape());
        for i in 0..n {
            for ch in 0..c {
                let off = (i * c + ch) * hw;
                let (mu, is) = (mean[ch], inv_std[ch]);
                let (g, b) = (gamma[ch].as_f64(), beta[ch].as_f64());
                for j in off..off + hw {
                    let xh = (x.data()[j].as_f64() - mu) * is;
                    xhat.data_mut()[j] = T::from_f64(xh);
                    y.data_mut()[j] = T::from_f64(g * xh + b);
                }
            }
        }
        let unbias = m / (m - 1.0);
        let rm = ps.value_mut(self.running_mean).data_mut();
        for (r, &mu) in rm.iter_mut().zip(&mean) {
            *r = T::from_f64((1.0 - BN_MOMENTUM) * r.as_f64() + BN_MOMENTUM * mu);
        }
        let rv = ps.value_mut(self.running_var).data_mut();
        for (r, &v) in rv.iter_mut().zip(&var) {
            *r = T::from_f64((1.0 - BN_MOMENTUM) * r.as_f64() + BN_MOMENTUM * v * unbias);
        }
        y.ensure_finite("batchnorm")?;
        self.cache = Some(BnCache { xhat, inv_std });
        Ok(y)
    }

    /// Evaluation mode: normalizes with the running statistics.
    pub fn infer(&self, ps: &ParamSet<T>, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        self.check(x)?;
        let [n, c, h, w] = x.shape();
        let hw = h * w;
        let (gamma, beta) = (ps.value(self.gamma).data(), ps.value(self.beta).data());
        let (rm, rv) = (ps.value(self.running_mean).data(), ps.value(self.running_var).data());
        let mut y = x.clone();
        for i in 0..n {
            for ch in 0..c {
                let scale = gamma[ch].as_f64() / (rv[ch].as_f64() + BN_EPS).sqrt();
                let shift = beta[ch].as_f64() - rm[ch].as_f64() * scale;
                let (scale, shift) = (T::from_f64(scale), T::from_f64(shift));
                for v in &mut y.data_mut()[(i * c + ch) * hw..][..hw] {
                    *v = *v * scale + shift;
                }
            }
        }
        y.ensure_finite("batchnorm")?;
        Ok(y)
    }

    pub fn backward(&mut self, ps: &mut ParamSet<T>, dy: &Tensor4<T>) -> Result<Tensor4<T>> {
        let cache = self.cache.take().ok_or_else(|| missing_cache("batchnorm"))?;
        dy.expect_shape(cache.xhat.shape(), "batchnorm backward")?;
        let [n, c, h, w] = dy.shape();
        let hw = h * w;
        let m = (n * hw) as f64;
        let mut sum_dy = vec![0.0f64; c];
        let mut sum_dy_xhat = vec![0.0f64; c];
        for i in 0..n {
            for ch in 0..c {
                let off = (i * c + ch) * hw;
                for j in off..off + hw {
                    let d = dy.data()[j].as_f64();
                    sum_dy[ch] += d;
                    sum_dy_xhat[ch] += d * cache.xhat.data()[j].as_f64();
                }
            }
        }
        {
            let dg = ps.grad_mut(self.gamma).data_mut();
            for ch in 0..c {
                dg[ch] += T::from_f64(sum_dy_xhat[ch]);
            }
        }
        {
            let db = ps.grad_mut(self.beta).data_mut();
            for ch in 0..c {
                db[ch] += T::from_f64(sum_dy[ch]);
            }
        }
        let gamma = ps.value(self.gamma).data();
        let mut dx = Tensor4::zeros(dy.shape());
        for i in 0..n {
            for ch in 0..c {
                let off = (i * c + ch) * hw;
                let k = gamma[ch].as_f64() * cache.inv_std[ch] / m;
                for j in off..off + hw {
                    let v = m * dy.data()[j].as_f64() - sum_dy[ch] - cache.xhat.data()[j].as_f64() * sum_dy_xhat[ch];
                    dx.data_mut()[j] = T::from_f64(k * v);
                }
            }
        }
        Ok(dx)
    }
}

#[derive(Clone, Debug, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn infer<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
        let mut y = x.clone();
        y.data_mut().iter_mut().for_each(|v| *v = v.max(T::zero()));
        y
    }

    pub fn forward<T: Real>(&mut self, x: &Tensor4<T>) -> Tensor4<T> {
        self.mask = Some(x.data().iter().map(|&v| v > T::zero()).collect());
        Self::infer(x)
    }

    pub fn backward<T: Real>(&mut self, dy: &Tensor4<T>) -> Result<Tensor4<T>> {
        let mask = self.mask.take().ok_or_else(|| missing_cache("relu"))?;
        if mask.len() != dy.len() {
            return Err(Error::Shape("relu backward: gradient size mismatch".into()));
        }
        let mut dx = dy.clone();
        for (d, &m) in dx.data_mut().iter_mut().zip(&mask) {
            if !m {
                *d = T::zero();
            }
        }
        Ok(dx)
    }
}

/// 2x2 max pooling with stride 2; ties go to the first maximum in scan order.
#[derive(Clone, Debug, Default)]
pub struct MaxPool2 {
    cache: Option<([usize; 4], Vec<usize>)>,
}

impl MaxPool2 {
    fn run<T: Real>(x: &Tensor4<T>) -> Result<(Tensor4<T>, Vec<usize>)> {
        let [n, c, h, w] = x.shape();
        if h < 2 || w < 2 {
            return Err(Error::Shape(format!("maxpool needs at least 2x2 input, got {h}x{w}")));
        }
        let (ho, wo) = (h / 2, w / 2);
        let mut y = Tensor4::zeros([n, c, ho, wo]);
        let mut arg = vec![0usize; n * c * ho * wo];
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let j = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if x.data()[j] > x.data()[best] {
                            best = j;
                        }
                    }
                    let o = (plane * ho + oy) * wo + ox;
                    y.data_mut()[o] = x.data()[best];
                    arg[o] = best;
                }
            }
        }
        Ok((y, arg))
    }

    pub fn infer<T: Real>(x: &Tensor4<T>) -> Result<Tensor4<T>> {
        Ok(Self::run(x)?.0)
    }

    pub fn forward<T: Real>(&mut self, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let (y, arg) = Self::run(x)?;
        self.cache = Some((x.shape(), arg));
        Ok(y)
    }

    pub fn backward<T: Real>(&mut self, dy: &Tensor4<T>) -> Result<Tensor4<T>> {
        let (shape, arg) = self.cache.take().ok_or_else(|| missing_cache("maxpool"))?;
        if arg.len() != dy.len() {
            return Err(Error::Shape("maxpool backward: gradient size mismatch".into()));
        }
        let mut dx = Tensor4::zeros(shape);
        for (&j, &d) in arg.iter().zip(dy.data()) {
            dx.data_mut()[j] += d;
        }
        Ok(dx)
    }
}

pub fn global_avg_pool<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    let [n, c, h, w] = x.shape();
    let hw = h * w;
    let data = x
        .data()
        .chunks_exact(hw)
        .map(|p| T::from_f64(p.iter().map(|v| v.as_f64()).sum::<f64>() / hw as f64))
        .collect();
    Tensor4::from_vec([n, c, 1, 1], data).expect("sized")
}

pub fn global_avg_pool_backward<T: Real>(dy: &Tensor4<T>, input_shape: [usize; 4]) -> Result<Tensor4<T>> {
    let [n, c, h, w] = input_shape;
    dy.expect_shape([n, c, 1, 1], "global average pool backward")?;
    let hw = h * w;
    let scale = T::from_f64(1.0 / hw as f64);
    let data = dy.data().iter().flat_map(|&d| std::iter::repeat_n(d * scale, hw)).collect();
    Tensor4::from_vec(input_shape, data)
}

pub fn residual_add<T: Real>(a: &Tensor4<T>, b: &Tensor4<T>) -> Result<Tensor4<T>> {
    let mut y = a.clone();
    y.add_assign(b)?;
    Ok(y)
}

/// Fully connected layer over `N x C x 1 x 1` inputs.
#[derive(Clone, Debug)]
pub struct Linear<T = f32> {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
    input: Option<Tensor4<T>>,
}

impl<T: Real> Linear<T> {
    pub fn new(ps: &mut ParamSet<T>, name: &str, in_features: usize, out_features: usize, rng: &mut Rng) -> Self {
        Self {
            weight: ps.add_kaiming(format!("{name}.weight"), [out_features, in_features, 1, 1], in_features, rng),
            bias: ps.add_param(format!("{name}.bias"), Tensor4::zeros([1, out_features, 1, 1])),
            in_features,
            out_features,
            input: None,
        }
    }

    pub fn infer(&self, ps: &ParamSet<T>, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let n = x.n();
        if x.item_len() != self.in_features {
            return Err(Error::Shape(format!(
                "linear expects {} features, got {}",
                self.in_features,
                x.item_len()
            )));
        }
        let mut y = Tensor4::zeros([n, self.out_features, 1, 1]);
        let b = ps.value(self.bias).data();
        for row in y.data_mut().chunks_exact_mut(self.out_features) {
            row.copy_from_slice(b);
        }
        matmul(
            n,
            self.in_features,
            self.out_features,
            x.data(),
            false,
            ps.value(self.weight).data(),
            true,
            y.data_mut(),
            true,
        );
        y.ensure_finite("linear")?;
        Ok(y)
    }

    pub fn forward(&mut self, ps: &ParamSet<T>, x: &Tensor4<T>) -> Result<Tensor4<T>> {
        let y = self.infer(ps, x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, ps: &mut ParamSet<T>, dy: &Tensor4<T>) -> Result<Tensor4<T>> {
        let x = self.input.take().ok_or_else(|| missing_cache("linear"))?;
        let n = x.n();
        dy.expect_shape([n, self.out_features, 1, 1], "linear backward")?;
        let (fi, fo) = (self.in_features, self.out_features);
        matmul(fo, n, fi, dy.data(), true, x.data(), false, ps.grad_mut(self.weight).data_mut(), true);
        {
            let db = ps.grad_mut(self.bias).data_mut();
            for row in dy.data().chunks_exact(fo) {
                for (g, &d) in db.iter_mut().zip(row) {
                    *g += d;
                }
            }
        }
        let mut dx = Tensor4::zeros(x.shape());
        matmul(n, fo, fi, dy.data(), false, ps.value(self.weight).data(), false, dx.data_mut(), false);
        Ok(dx)
    }
}

pub const L2_EPS: f64 = 1e-12;

/// Row-wise `x / max(|x|, eps)`; the zero vector maps to zero.
#[derive(Clone, Debug, Default)]
pub struct L2Normalize<T = f32> {
    cache: Option<(Tensor4<T>, Vec<f64>)>,
}

impl<T: Real> L2Normalize<T> {
    pub fn infer(x: &Tensor4<T>) -> Tensor4<T> {
        Self::run(x).0
    }

    fn run(x: &Tensor4<T>) -> (Tensor4<T>, Vec<f64>) {
        let d = x.item_len();
        let mut y = x.clone();
        let mut norms = Vec::with_capacity(x.n());
        for row in y.data_mut().chunks_exact_mut(d.max(1)) {
            let norm = row.iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt();
            let denom = norm.max(L2_EPS);
            row.iter_mut().for_each(|v| *v = T::from_f64(v.as_f64() / denom));
            norms.push(norm);
        }
        (y, norms)
    }

    pub fn forward(&mut self, x: &Tensor4<T>) -> Tensor4<T> {
        let (y, norms) = Self::run(x);
        self.cache = Some((y.clone(), norms));
        y
    }

    pub fn backward(&mut self, dy: &Tensor4<T>) -> Result<Tensor4<T>> {
        let (y, norms) = self.cache.take().ok_or_else(|| missing_cache("l2 normalize"))?;
        dy.expect_shape(y.shape(), "l2 normalize backward")?;
        let d = y.item_len();
        let mut dx = Tensor4::zeros(y.shape());
        for (i, &norm) in norms.iter().enumerate() {
            let yr = &y.data()[i * d..(i + 1) * d];
            let dr = &dy.data()[i * d..(i + 1) * d];
            let out = &mut dx.data_mut()[i * d..(i + 1) * d];
            if norm > L2_EPS {
                let dot: f64 = yr.iter().zip(dr).map(|(a, b)| a.as_f64() * b.as_f64()).sum();
                for ((o, &yv), &dv) in out.iter_mut().zip(yr).zip(dr) {
                    *o = T::from_f64((dv.as_f64() - yv.as_f64() * dot) / norm);
                }
            } else {
                for (o, &dv) in out.iter_mut().zip(dr) {
                    *o = T::from_f64(dv.as_f64() / L2_EPS);
                }
            }
        }
        Ok(dx)
    }
}
