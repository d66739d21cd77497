//! Per-channel 2D Fourier analysis and synthesis over the `W` and `H` axes.
//!
//! Forward transforms are unnormalized; the inverse carries `1/(W·H)`.
//! Power-of-two lengths use an iterative radix-2 FFT, other lengths a direct
//! DFT against a cached twiddle table.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Real and imaginary coefficient planes of identical `[W, H, C]` shape.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralPlanes<T> {
    pub real: Tensor<T>,
    pub imag: Tensor<T>,
}

impl<T: Scalar> SpectralPlanes<T> {
    pub fn new(real: Tensor<T>, imag: Tensor<T>) -> Result<Self> {
        real.check_same_shape(&imag, "spectral planes")?;
        real.dims3()?;
        Ok(SpectralPlanes { real, imag })
    }

    pub fn shape(&self) -> &[usize] {
        self.real.shape()
    }
}

/// One-dimensional transform plan of a fixed length.
struct Plan<T> {
    n: usize,
    /// `exp(−2πik/n)` for `k` in `0..n`.
    twiddles: Vec<Complex<T>>,
}

impl<T: Scalar> Plan<T> {
    fn new(n: usize) -> Self {
        let twiddles = (0..n)
            .map(|k| {
                let theta = -2.0 * std::f64::consts::PI * k as f64 / n as f64;
                Complex::new(T::of(theta.cos()), T::of(theta.sin()))
            })
            .collect();
        Plan { n, twiddles }
    }

    fn twiddle(&self, k: usize, inverse: bool) -> Complex<T> {
        let t = self.twiddles[k];
        if inverse {
            t.conj()
        } else {
            t
        }
    }

    fn run(&self, buf: &mut [Complex<T>], scratch: &mut Vec<Complex<T>>, inverse: bool) {
        if self.n.is_power_of_two() {
            self.radix2(buf, inverse);
        } else {
            self.direct(buf, scratch, inverse);
        }
    }

    fn direct(&self, buf: &mut [Complex<T>], scratch: &mut Vec<Complex<T>>, inverse: bool) {
        let n = self.n;
        scratch.clear();
        scratch.extend_from_slice(buf);
        for (k, out) in buf.iter_mut().enumerate() {
            let mut acc = Complex::new(T::zero(), T::zero());
            for (j, &v) in scratch.iter().enumerate() {
                acc += v * self.twiddle((j * k) % n, inverse);
            }
            *out = acc;
        }
    }

    fn radix2(&self, buf: &mut [Complex<T>], inverse: bool) {
        let n = self.n;
        if n <= 1 {
            return;
        }
        let bits = n.trailing_zeros();
        for i in 0..n {
            let j = i.reverse_bits() >> (usize::BITS - bits);
            if j > i {
                buf.swap(i, j);
            }
        }
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let step = n / len;
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let w = self.twiddle(k * step, inverse);
                    let a = buf[start + k];
                    let b = buf[start + k + half] * w;
                    buf[start + k] = a + b;
                    buf[start + k + half] = a - b;
                }
            }
            len <<= 1;
        }
    }
}

/// Unnormalized complex transform along `axis` (0 = W, 1 = H) in place.
fn transform_axis<T: Scalar>(re: &mut [T], im: &mut [T], shape: &[usize], axis: usize, inverse: bool) {
    let n = shape[axis];
    if n == 1 {
        return;
    }
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let plan = Plan::<T>::new(n);
    let mut fiber = vec![Complex::new(T::zero(), T::zero()); n];
    let mut scratch = Vec::with_capacity(n);
    for o in 0..outer {
        for i in 0..inner {
            let base = o * n * inner + i;
            for (k, f) in fiber.iter_mut().enumerate() {
                *f = Complex::new(re[base + k * inner], im[base + k * inner]);
            }
            plan.run(&mut fiber, &mut scratch, inverse);
            for (k, f) in fiber.iter().enumerate() {
                re[base + k * inner] = f.re;
                im[base + k * inner] = f.im;
            }
        }
    }
}

/// Unnormalized 2D DFT (`inverse` flips the exponent sign) of a complex
/// `[W, H, C]` field given as two planes.
pub(crate) fn dft2<T: Scalar>(re: &Tensor<T>, im: &Tensor<T>, inverse: bool) -> (Tensor<T>, Tensor<T>) {
    let shape = re.shape().to_vec();
    let mut r = re.data().to_vec();
    let mut i = im.data().to_vec();
    transform_axis(&mut r, &mut i, &shape, 0, inverse);
    transform_axis(&mut r, &mut i, &shape, 1, inverse);
    (
        Tensor::new(shape.clone(), r).expect("shape"),
        Tensor::new(shape, i).expect("shape"),
    )
}

/// Approximate multiply-add count of one [`dft2`] call.
pub(crate) fn dft2_flops(shape: &[usize]) -> u64 {
    let per_len = |n: usize| -> u64 {
        if n.is_power_of_two() {
            (n.max(2).trailing_zeros() as u64) * n as u64 / 2 * 4
        } else {
            (n * n * 4) as u64
        }
    };
    let (w, h, c) = (shape[0] as u64, shape[1] as u64, shape[2] as u64);
    c * (h * per_len(shape[0]) + w * per_len(shape[1]))
}

/// Forward transform of a real `[W, H, C]` tensor.
pub fn fft2<T: Scalar>(x: &Tensor<T>) -> Result<SpectralPlanes<T>> {
    x.dims3()?;
    let (real, imag) = dft2(x, &Tensor::zeros(x.shape()), false);
    Ok(SpectralPlanes { real, imag })
}

/// Normalized inverse transform, keeping both parts of the complex result.
pub fn ifft2<T: Scalar>(s: &SpectralPlanes<T>) -> SpectralPlanes<T> {
    let (w, h) = (s.shape()[0], s.shape()[1]);
    let norm = T::one() / T::of((w * h) as f64);
    let (real, imag) = dft2(&s.real, &s.imag, true);
    SpectralPlanes {
        real: real.scale(norm),
        imag: imag.scale(norm),
    }
}

/// Real part of the normalized inverse transform. The imaginary residual
/// is dropped: processed planes are generally not Hermitian.
pub fn ifft2_real<T: Scalar>(s: &SpectralPlanes<T>) -> Result<Tensor<T>> {
    if !s.real.is_finite() || !s.imag.is_finite() {
        return Err(Error::Validation("ifft2_real input planes are not finite".into()));
    }
    Ok(ifft2(s).real)
}

/// Elementwise `atan2(imag, real)` in `(−π, π]`; zero where both parts are zero.
pub fn phase_spectrum<T: Scalar>(s: &SpectralPlanes<T>) -> Tensor<T> {
    let pi = T::PI();
    s.real
        .zip_map(&s.imag, |re, im| {
            if re == T::zero() && im == T::zero() {
                T::zero()
            } else {
                let p = im.atan2(re);
                if p <= -pi {
                    pi
                } else {
                    p
                }
            }
        })
        .expect("planes share a shape")
}

/// Moves the zero-frequency bin of each channel to `(W/2, H/2)`.
pub fn fftshift<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (w, h, c) = x.dims3().expect("rank 3");
    let mut out = x.clone();
    for u in 0..w {
        for v in 0..h {
            for k in 0..c {
                out.set3((u + w / 2) % w, (v + h / 2) % h, k, x.at3(u, v, k));
            }
        }
    }
    out
}

/// Log-magnitude image `log(1 + |z|)`, DC centred, rescaled per channel to
/// `[lo, hi]`. Constant channels render as `lo`.
pub fn render_spectrum<T: Scalar>(s: &SpectralPlanes<T>, lo: T, hi: T) -> Tensor<T> {
    let mag = s
        .real
        .zip_map(&s.imag, |re, im| (re * re + im * im).sqrt().ln_1p())
        .expect("planes share a shape");
    rescale_channels(&fftshift(&mag), lo, hi)
}

/// Per-channel affine rescale of `x` onto `[lo, hi]`.
pub fn rescale_channels<T: Scalar>(x: &Tensor<T>, lo: T, hi: T) -> Tensor<T> {
    let (_, _, c) = x.dims3().expect("rank 3");
    let mut out = x.clone();
    for k in 0..c {
        let vals = x.data().iter().skip(k).step_by(c);
        let (mn, mx) = vals.fold((T::infinity(), T::neg_infinity()), |(a, b), &v| (a.min(v), b.max(v)));
        let span = mx - mn;
        for v in out.data_mut().iter_mut().skip(k).step_by(c) {
            *v = if span > T::zero() {
                lo + (*v - mn) / span * (hi - lo)
            } else {
                lo
            };
        }
    }
    out
}
