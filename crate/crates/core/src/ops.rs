//! Value-level tensor operations and their adjoints.
//!
//! The autodiff tape records these; they are also usable directly on plain
//! tensors when no gradient is needed.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Axis, Tensor};

/// Splits `shape` around `axis` into `(outer, len, inner)` extents.
fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn check_finite<T: Scalar>(t: &Tensor<T>, what: &str) -> Result<()> {
    if !t.is_finite() {
        return Err(Error::Validation(format!("{what} contains non-finite values")));
    }
    Ok(())
}

/// Shared fully connected map along one axis: every fiber `v` along `axis`
/// becomes `weightᵀ·v + bias`. `weight` is `[d, d']`, `bias` is `[d']`.
pub fn axis_linear<T: Scalar>(x: &Tensor<T>, axis: Axis, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let ax = axis.index();
    if x.rank() != 3 {
        return Err(Error::dim(
            "axis_linear",
            format!("expected rank 3 input, got {:?}", x.shape()),
        ));
    }
    let (d_in, d_out) = match weight.shape() {
        &[a, b] => (a, b),
        s => return Err(Error::dim("axis_linear", format!("weight must be rank 2, got {s:?}"))),
    };
    if x.shape()[ax] != d_in {
        return Err(Error::dim(
            "axis_linear",
            format!(
                "input {:?} has {} along {axis:?}, weight expects {d_in}",
                x.shape(),
                x.shape()[ax]
            ),
        ));
    }
    if bias.shape() != [d_out] {
        return Err(Error::dim(
            "axis_linear",
            format!("bias {:?} vs output width {d_out}", bias.shape()),
        ));
    }
    check_finite(weight, "axis_linear weight")?;
    check_finite(bias, "axis_linear bias")?;

    let (outer, _, inner) = split_at_axis(x.shape(), ax);
    let mut shape = x.shape().to_vec();
    shape[ax] = d_out;
    let mut out = vec![T::zero(); outer * d_out * inner];
    let (xs, ws, bs) = (x.data(), weight.data(), bias.data());
    for o in 0..outer {
        let src = &xs[o * d_in * inner..(o + 1) * d_in * inner];
        let dst = &mut out[o * d_out * inner..(o + 1) * d_out * inner];
        for (j, row) in dst.chunks_exact_mut(inner).enumerate() {
            row.fill(bs[j]);
        }
        for (i, fiber) in src.chunks_exact(inner).enumerate() {
            for (j, row) in dst.chunks_exact_mut(inner).enumerate() {
                let w = ws[i * d_out + j];
                if w == T::zero() {
                    continue;
                }
                for (r, &v) in row.iter_mut().zip(fiber) {
                    *r += w * v;
                }
            }
        }
    }
    Tensor::new(shape, out)
}

/// Adjoint of [`axis_linear`]: gradients w.r.t. input, weight and bias.
pub(crate) fn axis_linear_backward<T: Scalar>(
    x: &Tensor<T>,
    axis: Axis,
    weight: &Tensor<T>,
    grad: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let ax = axis.index();
    let (d_in, d_out) = (weight.shape()[0], weight.shape()[1]);
    let (outer, _, inner) = split_at_axis(x.shape(), ax);
    let mut gx = vec![T::zero(); x.len()];
    let mut gw = vec![T::zero(); d_in * d_out];
    let mut gb = vec![T::zero(); d_out];
    let (xs, ws, gs) = (x.data(), weight.data(), grad.data());
    for o in 0..outer {
        let src = &xs[o * d_in * inner..(o + 1) * d_in * inner];
        let g = &gs[o * d_out * inner..(o + 1) * d_out * inner];
        let dst = &mut gx[o * d_in * inner..(o + 1) * d_in * inner];
        for (j, grow) in g.chunks_exact(inner).enumerate() {
            gb[j] += grow.iter().copied().sum();
        }
        for (i, (fiber, dfiber)) in src.chunks_exact(inner).zip(dst.chunks_exact_mut(inner)).enumerate() {
            for (j, grow) in g.chunks_exact(inner).enumerate() {
                let w = ws[i * d_out + j];
                let mut acc = T::zero();
                for ((d, &gv), &xv) in dfiber.iter_mut().zip(grow).zip(fiber) {
                    *d += w * gv;
                    acc += xv * gv;
                }
                gw[i * d_out + j] += acc;
            }
        }
    }
    (
        Tensor::new(x.shape().to_vec(), gx).expect("shape"),
        Tensor::new(vec![d_in, d_out], gw).expect("shape"),
        Tensor::new(vec![d_out], gb).expect("shape"),
    )
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Per-channel parametric ReLU over the last axis.
pub fn prelu<T: Scalar>(x: &Tensor<T>, slope: &Tensor<T>) -> Result<Tensor<T>> {
    let c = *x.shape().last().expect("non-empty shape");
    if slope.shape() != [c] {
        return Err(Error::dim(
            "prelu",
            format!("slope {:?} vs {c} channels", slope.shape()),
        ));
    }
    let s = slope.data();
    let mut out = x.clone();
    for px in out.data_mut().chunks_exact_mut(c) {
        for (v, &a) in px.iter_mut().zip(s) {
            if *v < T::zero() {
                *v = a * *v;
            }
        }
    }
    Ok(out)
}

pub(crate) fn prelu_backward<T: Scalar>(x: &Tensor<T>, slope: &Tensor<T>, grad: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    let c = slope.len();
    let s = slope.data();
    let mut gx = grad.clone();
    let mut gs = vec![T::zero(); c];
    for (gpx, xpx) in gx.data_mut().chunks_exact_mut(c).zip(x.data().chunks_exact(c)) {
        for k in 0..c {
            if xpx[k] < T::zero() {
                gs[k] += gpx[k] * xpx[k];
                gpx[k] *= s[k];
            }
        }
    }
    (gx, Tensor::new(vec![c], gs).expect("shape"))
}

/// Zero-padded, size-preserving 2D cross-correlation.
///
/// `kernel` is `[K, K, Cin, Cout]` indexed by (x offset, y offset, in, out);
/// only `K ∈ {1, 3}` is supported.
pub fn conv2d<T: Scalar>(x: &Tensor<T>, kernel: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (w, h, cin) = x.dims3()?;
    let (k, kcin, cout) = match kernel.shape() {
        &[k1, k2, a, b] if k1 == k2 => (k1, a, b),
        s => {
            return Err(Error::dim(
                "conv2d",
                format!("kernel must be [K, K, Cin, Cout], got {s:?}"),
            ))
        }
    };
    if k != 1 && k != 3 {
        return Err(Error::Validation(format!(
            "conv2d kernel size {k} unsupported (1 or 3)"
        )));
    }
    if kcin != cin {
        return Err(Error::dim(
            "conv2d",
            format!("kernel expects {kcin} input channels, got {cin}"),
        ));
    }
    if bias.shape() != [cout] {
        return Err(Error::dim(
            "conv2d",
            format!("bias {:?} vs {cout} outputs", bias.shape()),
        ));
    }
    check_finite(kernel, "conv2d kernel")?;
    let pad = (k / 2) as isize;
    let (xs, ks) = (x.data(), kernel.data());
    let mut out = Vec::with_capacity(w * h * cout);
    for _ in 0..w * h {
        out.extend_from_slice(bias.data());
    }
    for ox in 0..w {
        for oy in 0..h {
            let dst = &mut out[(ox * h + oy) * cout..(ox * h + oy + 1) * cout];
            for dx in 0..k {
                let sx = ox as isize + dx as isize - pad;
                if sx < 0 || sx >= w as isize {
                    continue;
                }
                for dy in 0..k {
                    let sy = oy as isize + dy as isize - pad;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &xs[(sx as usize * h + sy as usize) * cin..][..cin];
                    let kbase = (dx * k + dy) * cin * cout;
                    for (ci, &v) in src.iter().enumerate() {
                        let krow = &ks[kbase + ci * cout..][..cout];
                        for (d, &kv) in dst.iter_mut().zip(krow) {
                            *d += v * kv;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![w, h, cout], out)
}

/// Adjoint of [`conv2d`]: gradients w.r.t. input, kernel and bias.
pub(crate) fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    grad: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (w, h, cin) = x.dims3().expect("rank 3");
    let (k, cout) = (kernel.shape()[0], kernel.shape()[3]);
    let pad = (k / 2) as isize;
    let (xs, ks, gs) = (x.data(), kernel.data(), grad.data());
    let mut gx = vec![T::zero(); xs.len()];
    let mut gk = vec![T::zero(); ks.len()];
    let mut gb = vec![T::zero(); cout];
    for g in gs.chunks_exact(cout) {
        for (b, &v) in gb.iter_mut().zip(g) {
            *b += v;
        }
    }
    for ox in 0..w {
        for oy in 0..h {
            let g = &gs[(ox * h + oy) * cout..][..cout];
            for dx in 0..k {
                let sx = ox as isize + dx as isize - pad;
                if sx < 0 || sx >= w as isize {
                    continue;
                }
                for dy in 0..k {
                    let sy = oy as isize + dy as isize - pad;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let base = (sx as usize * h + sy as usize) * cin;
                    let kbase = (dx * k + dy) * cin * cout;
                    for ci in 0..cin {
                        let v = xs[base + ci];
                        let krow = &ks[kbase + ci * cout..][..cout];
                        let gkrow = &mut gk[kbase + ci * cout..][..cout];
                        let mut acc = T::zero();
                        for ((gkv, &kv), &gv) in gkrow.iter_mut().zip(krow).zip(g) {
                            *gkv += v * gv;
                            acc += kv * gv;
                        }
                        gx[base + ci] += acc;
                    }
                }
            }
        }
    }
    (
        Tensor::new(x.shape().to_vec(), gx).expect("shape"),
        Tensor::new(kernel.shape().to_vec(), gk).expect("shape"),
        Tensor::new(vec![cout], gb).expect("shape"),
    )
}

/// Channel concatenation of `[W, H, Ci]` tensors, order preserved.
pub fn concat_channels<T: Scalar>(xs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = xs.first().ok_or_else(|| Error::dim("concat_channels", "no inputs"))?;
    let (w, h, _) = first.dims3()?;
    let mut widths = Vec::with_capacity(xs.len());
    for t in xs {
        let (tw, th, tc) = t.dims3()?;
        if (tw, th) != (w, h) {
            return Err(Error::dim("concat_channels", format!("spatial {tw}x{th} vs {w}x{h}")));
        }
        widths.push(tc);
    }
    let total: usize = widths.iter().sum();
    let mut out = Vec::with_capacity(w * h * total);
    for p in 0..w * h {
        for (t, &c) in xs.iter().zip(&widths) {
            out.extend_from_slice(&t.data()[p * c..(p + 1) * c]);
        }
    }
    Tensor::new(vec![w, h, total], out)
}

/// Channels `[start, end)` of a `[W, H, C]` tensor.
pub fn slice_channels<T: Scalar>(x: &Tensor<T>, start: usize, end: usize) -> Result<Tensor<T>> {
    let (w, h, c) = x.dims3()?;
    if start >= end || end > c {
        return Err(Error::dim(
            "slice_channels",
            format!("range {start}..{end} of {c} channels"),
        ));
    }
    let mut out = Vec::with_capacity(w * h * (end - start));
    for px in x.data().chunks_exact(c) {
        out.extend_from_slice(&px[start..end]);
    }
    Tensor::new(vec![w, h, end - start], out)
}

/// 2×2 average pooling (odd trailing rows/columns dropped).
pub fn avg_pool2<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (w, h, c) = x.dims3()?;
    if w < 2 || h < 2 {
        return Err(Error::dim("avg_pool2", format!("{w}x{h} too small")));
    }
    let quarter = T::of(0.25);
    let (ow, oh) = (w / 2, h / 2);
    Ok(Tensor::from_fn3(ow, oh, c, |i, j, k| {
        (x.at3(2 * i, 2 * j, k)
            + x.at3(2 * i + 1, 2 * j, k)
            + x.at3(2 * i, 2 * j + 1, k)
            + x.at3(2 * i + 1, 2 * j + 1, k))
            * quarter
    }))
}

pub(crate) fn avg_pool2_backward<T: Scalar>(in_shape: &[usize], grad: &Tensor<T>) -> Tensor<T> {
    let mut gx = Tensor::zeros(in_shape);
    let (ow, oh, c) = grad.dims3().expect("rank 3");
    let quarter = T::of(0.25);
    for i in 0..ow {
        for j in 0..oh {
            for k in 0..c {
                let g = grad.at3(i, j, k) * quarter;
                for (x, y) in [
                    (2 * i, 2 * j),
                    (2 * i + 1, 2 * j),
                    (2 * i, 2 * j + 1),
                    (2 * i + 1, 2 * j + 1),
                ] {
                    gx.set3(x, y, k, g);
                }
            }
        }
    }
    gx
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResampleMethod {
    /// Keys cubic convolution with a = −0.5 (Catmull-Rom).
    Bicubic,
    Bilinear,
}

/// Interpolation taps for one axis: for each output index, a short list of
/// `(source index, weight)` pairs. Sources are edge-clamped.
#[derive(Clone, Debug)]
pub struct AxisTaps<T> {
    pub n_in: usize,
    pub taps: Vec<Vec<(usize, T)>>,
}

fn cubic_weight(d: f64) -> f64 {
    const A: f64 = -0.5;
    let d = d.abs();
    if d <= 1.0 {
        (A + 2.0) * d * d * d - (A + 3.0) * d * d + 1.0
    } else if d < 2.0 {
        A * d * d * d - 5.0 * A * d * d + 8.0 * A * d - 4.0 * A
    } else {
        0.0
    }
}

impl<T: Scalar> AxisTaps<T> {
    /// Half-pixel-centred sampling: output `o` reads source position
    /// `(o + 0.5)·n_in/n_out − 0.5`.
    pub fn new(n_in: usize, n_out: usize, method: ResampleMethod) -> Self {
        let ratio = n_in as f64 / n_out as f64;
        let last = n_in as isize - 1;
        let taps = (0..n_out)
            .map(|o| {
                if n_in == n_out {
                    return vec![(o, T::one())];
                }
                let src = (o as f64 + 0.5) * ratio - 0.5;
                let base = src.floor();
                let t = src - base;
                let base = base as isize;
                let raw: Vec<(isize, f64)> = match method {
                    ResampleMethod::Bicubic => (-1..=2).map(|d| (base + d, cubic_weight(t - d as f64))).collect(),
                    ResampleMethod::Bilinear => vec![(base, 1.0 - t), (base + 1, t)],
                };
                let mut merged: Vec<(usize, T)> = Vec::with_capacity(raw.len());
                for (i, wgt) in raw {
                    let i = i.clamp(0, last) as usize;
                    match merged.iter_mut().find(|(j, _)| *j == i) {
                        Some((_, acc)) => *acc += T::of(wgt),
                        None => merged.push((i, T::of(wgt))),
                    }
                }
                merged
            })
            .collect();
        AxisTaps { n_in, taps }
    }

    pub fn n_out(&self) -> usize {
        self.taps.len()
    }

    /// Applies the taps along `axis` of `x`.
    pub fn apply(&self, x: &Tensor<T>, axis: usize) -> Tensor<T> {
        let (outer, n_in, inner) = split_at_axis(x.shape(), axis);
        debug_assert_eq!(n_in, self.n_in);
        let n_out = self.n_out();
        let mut shape = x.shape().to_vec();
        shape[axis] = n_out;
        let mut out = vec![T::zero(); outer * n_out * inner];
        for o in 0..outer {
            let src = &x.data()[o * n_in * inner..][..n_in * inner];
            let dst = &mut out[o * n_out * inner..][..n_out * inner];
            for (row, taps) in dst.chunks_exact_mut(inner).zip(&self.taps) {
                for &(i, wgt) in taps {
                    for (r, &v) in row.iter_mut().zip(&src[i * inner..][..inner]) {
                        *r += wgt * v;
                    }
                }
            }
        }
        Tensor::new(shape, out).expect("shape")
    }

    /// Transpose of [`AxisTaps::apply`].
    pub fn apply_transpose(&self, g: &Tensor<T>, axis: usize) -> Tensor<T> {
        let (outer, n_out, inner) = split_at_axis(g.shape(), axis);
        let n_in = self.n_in;
        let mut shape = g.shape().to_vec();
        shape[axis] = n_in;
        let mut out = vec![T::zero(); outer * n_in * inner];
        for o in 0..outer {
            let src = &g.data()[o * n_out * inner..][..n_out * inner];
            let dst = &mut out[o * n_in * inner..][..n_in * inner];
            for (row, taps) in src.chunks_exact(inner).zip(&self.taps) {
                for &(i, wgt) in taps {
                    for (d, &v) in dst[i * inner..][..inner].iter_mut().zip(row) {
                        *d += wgt * v;
                    }
                }
            }
        }
        Tensor::new(shape, out).expect("shape")
    }
}

/// Separable resampling plan for `[W, H, C]` tensors.
#[derive(Clone, Debug)]
pub struct ResamplePlan<T> {
    pub w: AxisTaps<T>,
    pub h: AxisTaps<T>,
}

impl<T: Scalar> ResamplePlan<T> {
    pub fn new(src: (usize, usize), dst: (usize, usize), method: ResampleMethod) -> Result<Self> {
        if dst.0 == 0 || dst.1 == 0 {
            return Err(Error::Validation(format!(
                "resample target {}x{} must be positive",
                dst.0, dst.1
            )));
        }
        Ok(ResamplePlan {
            w: AxisTaps::new(src.0, dst.0, method),
            h: AxisTaps::new(src.1, dst.1, method),
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        self.h.apply(&self.w.apply(x, 0), 1)
    }

    pub fn backward(&self, g: &Tensor<T>) -> Tensor<T> {
        self.w.apply_transpose(&self.h.apply_transpose(g, 1), 0)
    }

    /// Multiply-adds of one forward pass over `channels` channels.
    pub fn flops(&self, channels: usize) -> u64 {
        let wt: usize = self.w.taps.iter().map(Vec::len).sum();
        let ht: usize = self.h.taps.iter().map(Vec::len).sum();
        (wt * self.h.n_in * channels + self.w.n_out() * ht * channels) as u64
    }
}

/// Resizes a `[W, H, C]` tensor to `target_w × target_h`.
pub fn resample<T: Scalar>(
    x: &Tensor<T>,
    target_w: usize,
    target_h: usize,
    method: ResampleMethod,
) -> Result<Tensor<T>> {
    let (w, h, _) = x.dims3()?;
    Ok(ResamplePlan::new((w, h), (target_w, target_h), method)?.forward(x))
}
