use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Blur used to synthesize training pairs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BlurSpec {
    Gaussian {
        sigma: f64,
    },
    /// Uniform streak of `length` pixels at `angle_deg` through the centre.
    Motion {
        length: f64,
        angle_deg: f64,
    },
}

/// Square, nonnegative, unit-sum kernel of side `2·radius + 1`, indexed
/// `[dx][dy]` with offsets in `-radius..=radius`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlurKernel {
    pub radius: usize,
    pub weights: Vec<f64>,
}

impl BlurKernel {
    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn at(&self, dx: isize, dy: isize) -> f64 {
        let r = self.radius as isize;
        self.weights[((dx + r) * self.side() as isize + dy + r) as usize]
    }

    /// A single unit tap.
    pub fn delta() -> Self {
        BlurKernel {
            radius: 0,
            weights: vec![1.0],
        }
    }

    fn normalized(radius: usize, mut weights: Vec<f64>) -> Self {
        let s: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= s);
        BlurKernel { radius, weights }
    }
}

impl BlurSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            BlurSpec::Gaussian { sigma } if !(sigma > 0.0 && sigma.is_finite()) => {
                Err(Error::Validation(format!("gaussian sigma {sigma} must be positive")))
            }
            BlurSpec::Motion { length, angle_deg }
                if !(length >= 1.0 && length.is_finite() && angle_deg.is_finite()) =>
            {
                Err(Error::Validation(format!(
                    "motion length {length} must be at least 1 px"
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn kernel(&self) -> Result<BlurKernel> {
        self.validate()?;
        Ok(match *self {
            BlurSpec::Gaussian { sigma } => {
                let r = (3.0 * sigma).ceil() as usize;
                let side = 2 * r + 1;
                let mut w = Vec::with_capacity(side * side);
                for i in 0..side {
                    for j in 0..side {
                        let (dx, dy) = (i as f64 - r as f64, j as f64 - r as f64);
                        w.push((-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp());
                    }
                }
                BlurKernel::normalized(r, w)
            }
            BlurSpec::Motion { length, angle_deg } => {
                // Bilinear splats of densely sampled points along the streak.
                let r = (length / 2.0).ceil() as usize + 1;
                let side = 2 * r + 1;
                let mut w = vec![0.0; side * side];
                let (s, c) = angle_deg.to_radians().sin_cos();
                let samples = (length * 16.0).ceil() as usize + 1;
                for k in 0..samples {
                    let t = (k as f64 / (samples - 1) as f64 - 0.5) * (length - 1.0);
                    let (px, py) = (t * c + r as f64, t * s + r as f64);
                    let (x0, y0) = (px.floor(), py.floor());
                    let (fx, fy) = (px - x0, py - y0);
                    let (x0, y0) = (x0 as usize, y0 as usize);
                    w[x0 * side + y0] += (1.0 - fx) * (1.0 - fy);
                    w[(x0 + 1) * side + y0] += fx * (1.0 - fy);
                    w[x0 * side + y0 + 1] += (1.0 - fx) * fy;
                    w[(x0 + 1) * side + y0 + 1] += fx * fy;
                }
                BlurKernel::normalized(r, w)
            }
        })
    }
}

/// Draws `n` specs from the default family: Gaussian σ ∈ [1, 3] or linear
/// motion of length ∈ [5, 15] px at a uniform angle, with equal odds.
pub fn sample_blur_specs<R: Rng>(n: usize, rng: &mut R) -> Vec<BlurSpec> {
    (0..n)
        .map(|_| {
            if rng.gen_bool(0.5) {
                BlurSpec::Gaussian {
                    sigma: rng.gen_range(1.0..=3.0),
                }
            } else {
                BlurSpec::Motion {
                    length: rng.gen_range(5.0..=15.0),
                    angle_deg: rng.gen_range(0.0..180.0),
                }
            }
        })
        .collect()
}

/// Per-channel convolution with the normalized kernel, edge-clamped; the
/// result is clamped to `[0, 1]`.
pub fn synth_blur<T: Scalar>(sharp: &Tensor<T>, spec: &BlurSpec) -> Result<Tensor<T>> {
    let kernel = spec.kernel()?;
    blur_with(sharp, &kernel)
}

pub(crate) fn blur_with<T: Scalar>(sharp: &Tensor<T>, kernel: &BlurKernel) -> Result<Tensor<T>> {
    let (w, h, c) = sharp.dims3()?;
    let r = kernel.radius as isize;
    let mut acc = vec![0.0f64; c];
    let mut out = Tensor::zeros(sharp.shape());
    for x in 0..w {
        for y in 0..h {
            acc.iter_mut().for_each(|a| *a = 0.0);
            for dx in -r..=r {
                let sx = (x as isize - dx).clamp(0, w as isize - 1) as usize;
                for dy in -r..=r {
                    let k = kernel.at(dx, dy);
                    if k == 0.0 {
                        continue;
                    }
                    let sy = (y as isize - dy).clamp(0, h as isize - 1) as usize;
                    for (ch, a) in acc.iter_mut().enumerate() {
                        *a += k * sharp.at3(sx, sy, ch).to_f64_lossy();
                    }
                }
            }
            for (ch, &a) in acc.iter().enumerate() {
                out.set3(x, y, ch, T::of(a.clamp(0.0, 1.0)));
            }
        }
    }
    Ok(out)
}

/// Anisotropic total variation: sum of absolute forward differences.
pub fn total_variation<T: Scalar>(x: &Tensor<T>) -> f64 {
    let (w, h, c) = x.dims3().expect("rank 3");
    let mut tv = 0.0;
    for i in 0..w {
        for j in 0..h {
            for k in 0..c {
                let v = x.at3(i, j, k).to_f64_lossy();
                if i + 1 < w {
                    tv += (x.at3(i + 1, j, k).to_f64_lossy() - v).abs();
                }
                if j + 1 < h {
                    tv += (x.at3(i, j + 1, k).to_f64_lossy() - v).abs();
                }
            }
        }
    }
    tv
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn kernels_are_unit_sum_and_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for spec in sample_blur_specs(20, &mut rng) {
            let k = spec.kernel().unwrap();
            assert!(k.weights.iter().all(|&w| w >= 0.0));
            assert!((k.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12, "{spec:?}");
        }
    }

    #[test]
    fn gaussian_kernel_point_symmetric() {
        let k = BlurSpec::Gaussian { sigma: 1.7 }.kernel().unwrap();
        let r = k.radius as isize;
        for dx in -r..=r {
            for dy in -r..=r {
                assert_eq!(k.at(dx, dy), k.at(-dx, -dy));
            }
        }
    }

    #[test]
    fn delta_and_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::<f64>::uniform(&[9, 7, 3], 0.0, 1.0, &mut rng);
        assert_eq!(blur_with(&x, &BlurKernel::delta()).unwrap(), x);
        let c = Tensor::<f64>::full(&[9, 7, 3], 0.4);
        for spec in sample_blur_specs(4, &mut rng) {
            let y = synth_blur(&c, &spec).unwrap();
            assert!(y.data().iter().all(|v| (v - 0.4).abs() < 1e-12));
        }
    }

    #[test]
    fn gaussian_reduces_total_variation() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Tensor::<f64>::uniform(&[16, 16, 3], 0.0, 1.0, &mut rng);
        let y = synth_blur(&x, &BlurSpec::Gaussian { sigma: 2.0 }).unwrap();
        assert!(total_variation(&y) < total_variation(&x));
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(BlurSpec::Gaussian { sigma: 0.0 }.kernel().is_err());
        assert!(BlurSpec::Motion {
            length: 0.5,
            angle_deg: 0.0
        }
        .kernel()
        .is_err());
    }
}
