//! Individual network layers.

use ndarray::{s, Array1, Array2, Array3, Array4, ArrayView3, Axis, Dimension, Ix2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::{join, visit_param, Param, Visit, Visited};
use crate::exec;

fn conv_out_len(len: usize, k: usize, stride: usize, pad: usize) -> usize {
    assert!(
        len + 2 * pad >= k,
        "input {len} too small for kernel {k} with pad {pad}"
    );
    (len + 2 * pad - k) / stride + 1
}

/// Gather the `k x k` input patches under every output position into a
/// `[c*kh*kw, oh*ow]` matrix. Out-of-bounds taps stay zero.
fn im2col(
    x: &ArrayView3<f32>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Array2<f32> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let xs = x.as_slice().expect("contiguous input");
    let mut col = Array2::<f32>::zeros((c * kh * kw, oh * ow));
    let cs = col.as_slice_mut().expect("contiguous col");
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((ci * kh + ky) * kw + kx) * (oh * ow);
                for oy in 0..oh {
                    let y = (oy * stride + ky) as isize - pad as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    let xrow = (ci * h + y as usize) * w;
                    for ox in 0..ow {
                        let xx = (ox * stride + kx) as isize - pad as isize;
                        if xx < 0 || xx >= w as isize {
                            continue;
                        }
                        cs[row + oy * ow + ox] = xs[xrow + xx as usize];
                    }
                }
            }
        }
    }
    col
}

/// Scatter-add the transpose of [`im2col`]: accumulate patch gradients
/// back onto the input grid.
#[allow(clippy::too_many_arguments)]
fn col2im(
    gcol: &Array2<f32>,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Array3<f32> {
    let gs = gcol.as_slice().expect("contiguous gcol");
    let mut gx = Array3::<f32>::zeros((c, h, w));
    let out = gx.as_slice_mut().expect("contiguous gx");
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((ci * kh + ky) * kw + kx) * (oh * ow);
                for oy in 0..oh {
                    let y = (oy * stride + ky) as isize - pad as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    let xrow = (ci * h + y as usize) * w;
                    for ox in 0..ow {
                        let xx = (ox * stride + kx) as isize - pad as isize;
                        if xx < 0 || xx >= w as isize {
                            continue;
                        }
                        out[xrow + xx as usize] += gs[row + oy * ow + ox];
                    }
                }
            }
        }
    }
    gx
}

/// 2-D convolution, computed per sample as a patch-matrix product.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Option<Param>,
    in_c: usize,
    out_c: usize,
    k: usize,
    stride: usize,
    pad: usize,
    cache_x: Option<Array4<f32>>,
}

impl Conv2d {
    /// Square-kernel convolution with He-normal initialization scaled by
    /// the output fan (`std = sqrt(2 / (out_c * k * k))`).
    pub fn new(
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
        with_bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Conv2d {
        let std = (2.0 / (out_c * k * k) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        let weight =
            Array4::from_shape_simple_fn((out_c, in_c, k, k), || normal.sample(rng) as f32);
        let bias = with_bias.then(|| Param::new(Array1::<f32>::zeros(out_c).into_dyn()));
        Conv2d {
            weight: Param::new(weight.into_dyn()),
            bias,
            in_c,
            out_c,
            k,
            stride,
            pad,
            cache_x: None,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            conv_out_len(h, self.k, self.stride, self.pad),
            conv_out_len(w, self.k, self.stride, self.pad),
        )
    }

    /// Samples per GEMM block, capped so one block's patch matrix stays
    /// under ~64 MB. Batching the matrix product amortizes weight-matrix
    /// memory traffic over the whole block instead of paying it per
    /// sample, which dominates at small spatial sizes.
    fn block_len(&self, b: usize, plane: usize) -> usize {
        const CAP_F32: usize = 16 * 1024 * 1024;
        let per_sample = (self.in_c * self.k * self.k * plane).max(1);
        (CAP_F32 / per_sample).clamp(1, b.max(1))
    }

    fn run(&self, x: &Array4<f32>) -> Array4<f32> {
        let (b, c, h, w) = x.dim();
        assert_eq!(c, self.in_c, "channel mismatch");
        let (oh, ow) = self.out_hw(h, w);
        let plane = oh * ow;
        let krows = self.in_c * self.k * self.k;
        let wmat = self
            .weight
            .value
            .view()
            .into_shape_with_order((self.out_c, krows))
            .expect("weight reshape");
        let bias = self.bias.as_ref().map(|p| {
            p.value
                .view()
                .into_dimensionality::<ndarray::Ix1>()
                .expect("bias shape")
        });
        let mut out = Array4::<f32>::zeros((b, self.out_c, oh, ow));
        let block = self.block_len(b, plane);
        let mut start = 0;
        while start < b {
            let bs = block.min(b - start);
            let cols = exec::map_indexed(bs, |j| {
                im2col(
                    &x.index_axis(Axis(0), start + j),
                    self.k,
                    self.k,
                    self.stride,
                    self.pad,
                    oh,
                    ow,
                )
            });
            let mut col_all = Array2::<f32>::zeros((krows, bs * plane));
            for (j, col) in cols.into_iter().enumerate() {
                col_all
                    .slice_mut(s![.., j * plane..(j + 1) * plane])
                    .assign(&col);
            }
            let mut y_all = wmat.dot(&col_all);
            if let Some(bv) = &bias {
                y_all += &bv.view().insert_axis(Axis(1));
            }
            for j in 0..bs {
                out.index_axis_mut(Axis(0), start + j)
                    .into_shape_with_order((self.out_c, plane))
                    .expect("contiguous output sample")
                    .assign(&y_all.slice(s![.., j * plane..(j + 1) * plane]));
            }
            start += bs;
        }
        out
    }

    pub fn infer(&self, x: &Array4<f32>) -> Array4<f32> {
        self.run(x)
    }

    pub fn forward_train(&mut self, x: &Array4<f32>) -> Array4<f32> {
        let y = self.run(x);
        self.cache_x = Some(x.clone());
        y
    }

    pub fn backward(&mut self, gy: &Array4<f32>) -> Array4<f32> {
        let x = self.cache_x.take().expect("backward without forward");
        let (b, c, h, w) = x.dim();
        let (_, oc, oh, ow) = gy.dim();
        assert_eq!(oc, self.out_c);
        let plane = oh * ow;
        let krows = self.in_c * self.k * self.k;
        let wmat = self
            .weight
            .value
            .view()
            .into_shape_with_order((self.out_c, krows))
            .expect("weight reshape");

        let mut gx = Array4::<f32>::zeros((b, c, h, w));
        let block = self.block_len(b, plane);
        let mut start = 0;
        while start < b {
            let bs = block.min(b - start);
            // Patch matrices per sample in parallel, pasted in sample
            // order; the gradient products below then run as one matrix
            // product per block, so results never depend on completion
            // order.
            let cols = exec::map_indexed(bs, |j| {
                im2col(
                    &x.index_axis(Axis(0), start + j),
                    self.k,
                    self.k,
                    self.stride,
                    self.pad,
                    oh,
                    ow,
                )
            });
            let mut col_all = Array2::<f32>::zeros((krows, bs * plane));
            let mut gy_all = Array2::<f32>::zeros((self.out_c, bs * plane));
            for (j, col) in cols.into_iter().enumerate() {
                col_all
                    .slice_mut(s![.., j * plane..(j + 1) * plane])
                    .assign(&col);
                let gy_mat = gy
                    .index_axis(Axis(0), start + j)
                    .into_shape_with_order((self.out_c, plane))
                    .expect("grad reshape");
                gy_all
                    .slice_mut(s![.., j * plane..(j + 1) * plane])
                    .assign(&gy_mat);
            }

            let gw = gy_all.dot(&col_all.t());
            let mut gw_acc = self
                .weight
                .grad
                .view_mut()
                .into_shape_with_order((self.out_c, krows))
                .expect("grad reshape");
            gw_acc += &gw;
            if let Some(p) = self.bias.as_mut() {
                let mut acc = p
                    .grad
                    .view_mut()
                    .into_dimensionality::<ndarray::Ix1>()
                    .expect("bias grad");
                acc += &gy_all.sum_axis(Axis(1));
            }

            let gcol_all = wmat.t().dot(&gy_all);
            let gxs = exec::map_indexed(bs, |j| {
                let gcol = gcol_all
                    .slice(s![.., j * plane..(j + 1) * plane])
                    .to_owned();
                col2im(
                    &gcol, c, h, w, self.k, self.k, self.stride, self.pad, oh, ow,
                )
            });
            for (j, gxi) in gxs.into_iter().enumerate() {
                gx.index_axis_mut(Axis(0), start + j).assign(&gxi);
            }
            start += bs;
        }
        gx
    }
}

impl Visit for Conv2d {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(Visited<'_>)) {
        visit_param(&mut self.weight, prefix, "weight", f);
        if let Some(b) = self.bias.as_mut() {
            visit_param(b, prefix, "bias", f);
        }
    }
}

/// Batch normalization over the channel axis of `[B, C, H, W]`.
///
/// Training normalizes with the batch statistics (biased variance) and
/// keeps exponential running averages (unbiased variance); inference
/// normalizes with the running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub weight: Param,
    pub bias: Param,
    pub running_mean: ndarray::ArrayD<f32>,
    pub running_var: ndarray::ArrayD<f32>,
    channels: usize,
    eps: f64,
    momentum: f64,
    cache: Option<(Array4<f32>, Vec<f32>)>,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> BatchNorm2d {
        BatchNorm2d {
            weight: Param::new(Array1::<f32>::ones(channels).into_dyn()),
            bias: Param::new(Array1::<f32>::zeros(channels).into_dyn()),
            running_mean: Array1::<f32>::zeros(channels).into_dyn(),
            running_var: Array1::<f32>::ones(channels).into_dyn(),
            channels,
            eps: 1e-5,
            momentum: 0.1,
            cache: None,
        }
    }

    pub fn forward_train(&mut self, x: &Array4<f32>) -> Array4<f32> {
        let (b, c, h, w) = x.dim();
        assert_eq!(c, self.channels);
        let n = b * h * w;
        assert!(n > 1, "batch statistics need more than one value per channel");
        let mut y = Array4::<f32>::zeros((b, c, h, w));
        let mut xhat = Array4::<f32>::zeros((b, c, h, w));
        let mut inv_stds = vec![0.0f32; c];
        let xs = x.as_slice().expect("contiguous input");
        let plane = h * w;
        for ci in 0..c {
            let mut sum = 0.0f64;
            for bi in 0..b {
                let base = (bi * c + ci) * plane;
                for &v in &xs[base..base + plane] {
                    sum += v as f64;
                }
            }
            let mean = sum / n as f64;
            let mut var_sum = 0.0f64;
            for bi in 0..b {
                let base = (bi * c + ci) * plane;
                for &v in &xs[base..base + plane] {
                    let d = v as f64 - mean;
                    var_sum += d * d;
                }
            }
            let var = var_sum / n as f64;
            let inv_std = 1.0 / (var + self.eps).sqrt();
            inv_stds[ci] = inv_std as f32;
            let gamma = self.weight.value[[ci]] as f64;
            let beta = self.bias.value[[ci]] as f64;
            {
                let xh = xhat.as_slice_mut().expect("contiguous");
                let yo = y.as_slice_mut().expect("contiguous");
                for bi in 0..b {
                    let base = (bi * c + ci) * plane;
                    for j in base..base + plane {
                        let v = (xs[j] as f64 - mean) * inv_std;
                        xh[j] = v as f32;
                        yo[j] = (gamma * v + beta) as f32;
                    }
                }
            }
            let m = self.momentum;
            let unbiased = var * n as f64 / (n - 1) as f64;
            self.running_mean[[ci]] =
                ((1.0 - m) * self.running_mean[[ci]] as f64 + m * mean) as f32;
            self.running_var[[ci]] =
                ((1.0 - m) * self.running_var[[ci]] as f64 + m * unbiased) as f32;
        }
        self.cache = Some((xhat, inv_stds));
        y
    }

    pub fn backward(&mut self, gy: &Array4<f32>) -> Array4<f32> {
        let (xhat, inv_stds) = self.cache.take().expect("backward without forward");
        let (b, c, h, w) = gy.dim();
        let n = (b * h * w) as f64;
        let plane = h * w;
        let gys = gy.as_slice().expect("contiguous");
        let xhs = xhat.as_slice().expect("contiguous");
        let mut gx = Array4::<f32>::zeros((b, c, h, w));
        let gxs = gx.as_slice_mut().expect("contiguous");
        for ci in 0..c {
            let mut g1 = 0.0f64;
            let mut g2 = 0.0f64;
            for bi in 0..b {
                let base = (bi * c + ci) * plane;
                for j in base..base + plane {
                    let gv = gys[j] as f64;
                    g1 += gv;
                    g2 += gv * xhs[j] as f64;
                }
            }
            self.bias.grad[[ci]] += g1 as f32;
            self.weight.grad[[ci]] += g2 as f32;
            let scale = self.weight.value[[ci]] as f64 * inv_stds[ci] as f64;
            let mean_g = g1 / n;
            let mean_gx = g2 / n;
            for bi in 0..b {
                let base = (bi * c + ci) * plane;
                for j in base..base + plane {
                    gxs[j] =
                        (scale * (gys[j] as f64 - mean_g - xhs[j] as f64 * mean_gx)) as f32;
                }
            }
        }
        gx
    }

    pub fn infer(&self, x: &Array4<f32>) -> Array4<f32> {
        let (b, c, _, _) = x.dim();
        assert_eq!(c, self.channels);
        let mut y = x.clone();
        for ci in 0..c {
            let mean = self.running_mean[[ci]];
            let inv_std = (1.0 / (self.running_var[[ci]] as f64 + self.eps).sqrt()) as f32;
            let gamma = self.weight.value[[ci]];
            let beta = self.bias.value[[ci]];
            for bi in 0..b {
                let mut yo = y.index_axis_mut(Axis(0), bi);
                let mut yo = yo.index_axis_mut(Axis(0), ci);
                yo.mapv_inplace(|v| (v - mean) * inv_std * gamma + beta);
            }
        }
        y
    }
}

impl Visit for BatchNorm2d {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(Visited<'_>)) {
        visit_param(&mut self.weight, prefix, "weight", f);
        visit_param(&mut self.bias, prefix, "bias", f);
        f(Visited {
            name: join(prefix, "running_mean"),
            value: &mut self.running_mean,
            train: None,
        });
        f(Visited {
            name: join(prefix, "running_var"),
            value: &mut self.running_var,
            train: None,
        });
    }
}

/// Rectifier with a cached activity mask for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct Relu<D: Dimension> {
    mask: Option<ndarray::Array<bool, D>>,
}

impl<D: Dimension> Relu<D> {
    pub fn new() -> Relu<D> {
        Relu { mask: None }
    }

    pub fn infer(&self, x: &ndarray::Array<f32, D>) -> ndarray::Array<f32, D> {
        x.mapv(|v| v.max(0.0))
    }

    pub fn forward_train(&mut self, x: &ndarray::Array<f32, D>) -> ndarray::Array<f32, D> {
        self.mask = Some(x.mapv(|v| v > 0.0));
        self.infer(x)
    }

    pub fn backward(&mut self, gy: &ndarray::Array<f32, D>) -> ndarray::Array<f32, D> {
        let mask = self.mask.take().expect("backward without forward");
        let mut gx = gy.clone();
        gx.zip_mut_with(&mask, |g, &keep| {
            if !keep {
                *g = 0.0;
            }
        });
        gx
    }
}

/// Max pooling with cached argmax positions.
#[derive(Debug, Clone)]
pub struct MaxPool2d {
    k: usize,
    stride: usize,
    pad: usize,
    cache: Option<(Array4<u32>, usize, usize)>,
}

impl MaxPool2d {
    pub fn new(k: usize, stride: usize, pad: usize) -> MaxPool2d {
        MaxPool2d {
            k,
            stride,
            pad,
            cache: None,
        }
    }

    fn run(&self, x: &Array4<f32>) -> (Array4<f32>, Array4<u32>) {
        let (b, c, h, w) = x.dim();
        let oh = conv_out_len(h, self.k, self.stride, self.pad);
        let ow = conv_out_len(w, self.k, self.stride, self.pad);
        let parts = exec::map_indexed(b, |bi| {
            let xin = x.index_axis(Axis(0), bi);
            let xs = xin.as_slice().expect("contiguous input");
            let mut y = Array3::<f32>::zeros((c, oh, ow));
            let mut arg = Array3::<u32>::zeros((c, oh, ow));
            for ci in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = f32::NEG_INFINITY;
                        let mut best_at = 0u32;
                        for ky in 0..self.k {
                            let yy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if yy < 0 || yy >= h as isize {
                                continue;
                            }
                            for kx in 0..self.k {
                                let xx = (ox * self.stride + kx) as isize - self.pad as isize;
                                if xx < 0 || xx >= w as isize {
                                    continue;
                                }
                                let v = xs[(ci * h + yy as usize) * w + xx as usize];
                                if v > best {
                                    best = v;
                                    best_at = (yy as usize * w + xx as usize) as u32;
                                }
                            }
                        }
                        y[[ci, oy, ox]] = best;
                        arg[[ci, oy, ox]] = best_at;
                    }
                }
            }
            (y, arg)
        });
        let mut y = Array4::<f32>::zeros((b, c, oh, ow));
        let mut arg = Array4::<u32>::zeros((b, c, oh, ow));
        for (i, (yi, ai)) in parts.into_iter().enumerate() {
            y.index_axis_mut(Axis(0), i).assign(&yi);
            arg.index_axis_mut(Axis(0), i).assign(&ai);
        }
        (y, arg)
    }

    pub fn infer(&self, x: &Array4<f32>) -> Array4<f32> {
        self.run(x).0
    }

    pub fn forward_train(&mut self, x: &Array4<f32>) -> Array4<f32> {
        let (h, w) = (x.dim().2, x.dim().3);
        let (y, arg) = self.run(x);
        self.cache = Some((arg, h, w));
        y
    }

    pub fn backward(&mut self, gy: &Array4<f32>) -> Array4<f32> {
        let (arg, h, w) = self.cache.take().expect("backward without forward");
        let (b, c, oh, ow) = gy.dim();
        let mut gx = Array4::<f32>::zeros((b, c, h, w));
        for bi in 0..b {
            for ci in 0..c {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let flat = arg[[bi, ci, oy, ox]] as usize;
                        gx[[bi, ci, flat / w, flat % w]] += gy[[bi, ci, oy, ox]];
                    }
                }
            }
        }
        gx
    }
}

/// Mean over the spatial axes: `[B, C, H, W]` to `[B, C]`.
#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool {
    cache_hw: Option<(usize, usize)>,
}

impl GlobalAvgPool {
    pub fn new() -> GlobalAvgPool {
        GlobalAvgPool { cache_hw: None }
    }

    pub fn infer(&self, x: &Array4<f32>) -> Array2<f32> {
        let (b, c, h, w) = x.dim();
        let inv = 1.0 / (h * w) as f32;
        let mut y = Array2::<f32>::zeros((b, c));
        for bi in 0..b {
            for ci in 0..c {
                let s: f32 = x
                    .index_axis(Axis(0), bi)
                    .index_axis(Axis(0), ci)
                    .iter()
                    .sum();
                y[[bi, ci]] = s * inv;
            }
        }
        y
    }

    pub fn forward_train(&mut self, x: &Array4<f32>) -> Array2<f32> {
        self.cache_hw = Some((x.dim().2, x.dim().3));
        self.infer(x)
    }

    pub fn backward(&mut self, gy: &Array2<f32>) -> Array4<f32> {
        let (h, w) = self.cache_hw.take().expect("backward without forward");
        let (b, c) = gy.dim();
        let inv = 1.0 / (h * w) as f32;
        let mut gx = Array4::<f32>::zeros((b, c, h, w));
        for bi in 0..b {
            for ci in 0..c {
                gx.index_axis_mut(Axis(0), bi)
                    .index_axis_mut(Axis(0), ci)
                    .fill(gy[[bi, ci]] * inv);
            }
        }
        gx
    }
}

/// Fully connected layer on `[B, in]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
    in_f: usize,
    out_f: usize,
    cache_x: Option<Array2<f32>>,
}

impl Linear {
    /// Uniform initialization in `±1/sqrt(in_f)` for weight and bias.
    pub fn new(in_f: usize, out_f: usize, rng: &mut ChaCha8Rng) -> Linear {
        let bound = 1.0 / (in_f as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        let weight = Array2::from_shape_simple_fn((out_f, in_f), || dist.sample(rng) as f32);
        let bias = Array1::from_shape_simple_fn(out_f, || dist.sample(rng) as f32);
        Linear {
            weight: Param::new(weight.into_dyn()),
            bias: Param::new(bias.into_dyn()),
            in_f,
            out_f,
            cache_x: None,
        }
    }

    fn w2(&self) -> ndarray::ArrayView2<'_, f32> {
        self.weight
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .expect("weight shape")
    }

    pub fn infer(&self, x: &Array2<f32>) -> Array2<f32> {
        assert_eq!(x.dim().1, self.in_f, "feature mismatch");
        let mut y = x.dot(&self.w2().t());
        let b = self
            .bias
            .value
            .view()
            .into_dimensionality::<ndarray::Ix1>()
            .expect("bias shape");
        y += &b;
        y
    }

    pub fn forward_train(&mut self, x: &Array2<f32>) -> Array2<f32> {
        let y = self.infer(x);
        self.cache_x = Some(x.clone());
        y
    }

    pub fn backward(&mut self, gy: &Array2<f32>) -> Array2<f32> {
        let x = self.cache_x.take().expect("backward without forward");
        assert_eq!(gy.dim().1, self.out_f);
        {
            let gw = gy.t().dot(&x);
            let mut acc = self
                .weight
                .grad
                .view_mut()
                .into_dimensionality::<Ix2>()
                .expect("grad shape");
            acc += &gw;
            let gb = gy.sum_axis(Axis(0));
            let mut bacc = self
                .bias
                .grad
                .view_mut()
                .into_dimensionality::<ndarray::Ix1>()
                .expect("bias grad");
            bacc += &gb;
        }
        gy.dot(&self.w2())
    }
}

impl Visit for Linear {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(Visited<'_>)) {
        visit_param(&mut self.weight, prefix, "weight", f);
        visit_param(&mut self.bias, prefix, "bias", f);
    }
}

/// Inverted dropout: surviving activations are scaled by `1/(1-p)` during
/// training so inference is the identity.
#[derive(Debug, Clone)]
pub struct Dropout {
    p: f64,
    rng: ChaCha8Rng,
    mask: Option<Array2<f32>>,
}

impl Dropout {
    pub fn new(p: f64, rng: ChaCha8Rng) -> Dropout {
        assert!((0.0..1.0).contains(&p), "drop probability in [0, 1)");
        Dropout { p, rng, mask: None }
    }

    pub fn reseed(&mut self, rng: ChaCha8Rng) {
        self.rng = rng;
    }

    pub fn infer(&self, x: &Array2<f32>) -> Array2<f32> {
        x.clone()
    }

    pub fn forward_train(&mut self, x: &Array2<f32>) -> Array2<f32> {
        let keep = 1.0 - self.p;
        let scale = (1.0 / keep) as f32;
        let mask = Array2::from_shape_simple_fn(x.dim(), || {
            if self.rng.gen_bool(keep) {
                scale
            } else {
                0.0
            }
        });
        let y = x * &mask;
        self.mask = Some(mask);
        y
    }

    pub fn backward(&mut self, gy: &Array2<f32>) -> Array2<f32> {
        let mask = self.mask.take().expect("backward without forward");
        gy * &mask
    }
}
