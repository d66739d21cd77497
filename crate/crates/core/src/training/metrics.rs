use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

pub fn mse<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    a.check_same_shape(b, "mse")?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.to_f64_lossy() - y.to_f64_lossy();
            d * d
        })
        .sum();
    Ok(s / a.len() as f64)
}

/// `10·log10(peak² / MSE)`; identical inputs give `f64::INFINITY`.
pub fn psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of a `w × h` plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, g: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = g.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut tmp = vec![0.0; ow * h];
    for x in 0..ow {
        for y in 0..h {
            tmp[x * h + y] = (0..n).map(|i| g[i] * plane[(x + i) * h + y]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for x in 0..ow {
        for y in 0..oh {
            out[x * oh + y] = (0..n).map(|j| g[j] * tmp[x * h + y + j]).sum();
        }
    }
    (out, ow, oh)
}

/// Mean structural similarity over all valid 11×11 Gaussian windows
/// (σ = 1.5, dynamic range 1), averaged across channels.
pub fn ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    a.check_same_shape(b, "ssim")?;
    let (w, h, c) = a.dims3()?;
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::Validation(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}"
        )));
    }
    let g = gaussian_window();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    for k in 0..c {
        let pa: Vec<f64> = a.data().iter().skip(k).step_by(c).map(|v| v.to_f64_lossy()).collect();
        let pb: Vec<f64> = b.data().iter().skip(k).step_by(c).map(|v| v.to_f64_lossy()).collect();
        let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(x, y)| x * y).collect() };
        let (mu_a, ow, oh) = filter_valid(&pa, w, h, &g);
        let (mu_b, ..) = filter_valid(&pb, w, h, &g);
        let (e_aa, ..) = filter_valid(&prod(&pa, &pa), w, h, &g);
        let (e_bb, ..) = filter_valid(&prod(&pb, &pb), w, h, &g);
        let (e_ab, ..) = filter_valid(&prod(&pa, &pb), w, h, &g);
        let mut acc = 0.0;
        for i in 0..ow * oh {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += acc / (ow * oh) as f64;
    }
    Ok(total / c as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_cases() {
        let a = Tensor::<f64>::full(&[4, 4, 3], 0.3);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        let b = a.map(|v| v + 0.1);
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
        assert!(psnr(&a, &Tensor::zeros(&[4, 4, 1]), 1.0).is_err());
    }

    #[test]
    fn ssim_identity_and_constants() {
        let a = Tensor::<f64>::from_fn3(16, 14, 3, |x, y, k| ((x * 7 + y * 3 + k) % 11) as f64 / 10.0);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let c = Tensor::<f64>::full(&[12, 12, 3], 0.6);
        assert!((ssim(&c, &c).unwrap() - 1.0).abs() < 1e-12);
        assert!(ssim(&Tensor::<f64>::zeros(&[8, 8, 1]), &Tensor::zeros(&[8, 8, 1])).is_err());
    }
}
