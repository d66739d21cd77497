use std::f64::consts::PI;

use cubemix::spectral::{fft2, ifft2, ifft2_real, phase_spectrum, SpectralPlanes};
use cubemix::Tensor64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rand(shape: &[usize], seed: u64) -> Tensor64 {
    Tensor64::uniform(shape, -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Textbook O((WH)²) DFT, written independently of the library.
fn naive_dft(x: &Tensor64) -> (Tensor64, Tensor64) {
    let (w, h, c) = x.dims3().unwrap();
    let mut re = Tensor64::zeros(&[w, h, c]);
    let mut im = Tensor64::zeros(&[w, h, c]);
    for k in 0..c {
        for u in 0..w {
            for v in 0..h {
                let (mut sr, mut si) = (0.0, 0.0);
                for px in 0..w {
                    for py in 0..h {
                        let th = -2.0 * PI * ((u * px) as f64 / w as f64 + (v * py) as f64 / h as f64);
                        sr += x.at3(px, py, k) * th.cos();
                        si += x.at3(px, py, k) * th.sin();
                    }
                }
                re.set3(u, v, k, sr);
                im.set3(u, v, k, si);
            }
        }
    }
    (re, im)
}

fn energy(t: &Tensor64) -> f64 {
    t.dot(t)
}

#[test]
fn matches_naive_dft_8x8x3() {
    let x = rand(&[8, 8, 3], 1);
    let s = fft2(&x).unwrap();
    let (re, im) = naive_dft(&x);
    assert!(s.real.max_abs_diff(&re) < 1e-10);
    assert!(s.imag.max_abs_diff(&im) < 1e-10);
}

#[test]
fn matches_naive_dft_odd_sizes() {
    for shape in [[5, 3, 2], [6, 8, 1], [1, 7, 1], [12, 4, 2]] {
        let x = rand(&shape, 2);
        let s = fft2(&x).unwrap();
        let (re, im) = naive_dft(&x);
        assert!(s.real.max_abs_diff(&re) < 1e-10, "{shape:?}");
        assert!(s.imag.max_abs_diff(&im) < 1e-10, "{shape:?}");
    }
}

#[test]
fn round_trip_recovers_input() {
    let x = rand(&[16, 8, 3], 3);
    let back = ifft2_real(&fft2(&x).unwrap()).unwrap();
    assert!(back.max_abs_diff(&x) < 1e-12);
}

#[test]
fn inverse_of_real_spectrum_has_no_imaginary_part() {
    let x = rand(&[8, 6, 2], 4);
    let back = ifft2(&fft2(&x).unwrap());
    assert!(back.imag.max_abs_diff(&Tensor64::zeros(&[8, 6, 2])) < 1e-12);
}

#[test]
fn parseval() {
    let x = rand(&[16, 16, 3], 5);
    let s = fft2(&x).unwrap();
    let spatial = energy(&x);
    let spectral = (energy(&s.real) + energy(&s.imag)) / 256.0;
    assert!((spatial - spectral).abs() / spatial < 1e-8);
}

#[test]
fn real_input_gives_hermitian_spectrum() {
    let (w, h) = (8, 6);
    let x = rand(&[w, h, 2], 6);
    let s = fft2(&x).unwrap();
    for k in 0..2 {
        for u in 0..w {
            for v in 0..h {
                let (mu, mv) = ((w - u) % w, (h - v) % h);
                assert!((s.real.at3(u, v, k) - s.real.at3(mu, mv, k)).abs() < 1e-10);
                assert!((s.imag.at3(u, v, k) + s.imag.at3(mu, mv, k)).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn circular_shift_multiplies_by_phase_ramp() {
    let (w, h, dx, dy) = (8, 8, 3, 5);
    let x = rand(&[w, h, 1], 7);
    let shifted = Tensor64::from_fn3(w, h, 1, |px, py, k| x.at3((px + w - dx) % w, (py + h - dy) % h, k));
    let a = fft2(&x).unwrap();
    let b = fft2(&shifted).unwrap();
    for u in 0..w {
        for v in 0..h {
            let th = -2.0 * PI * ((u * dx) as f64 / w as f64 + (v * dy) as f64 / h as f64);
            let (ar, ai) = (a.real.at3(u, v, 0), a.imag.at3(u, v, 0));
            let er = ar * th.cos() - ai * th.sin();
            let ei = ar * th.sin() + ai * th.cos();
            assert!((b.real.at3(u, v, 0) - er).abs() < 1e-10);
            assert!((b.imag.at3(u, v, 0) - ei).abs() < 1e-10);
        }
    }
}

#[test]
fn phase_on_axes_and_origin() {
    let t = |v: f64| Tensor64::full(&[1, 1, 1], v);
    let cases = [
        ((1.0, 0.0), 0.0),
        ((0.0, 1.0), PI / 2.0),
        ((-1.0, 0.0), PI),
        ((0.0, -1.0), -PI / 2.0),
        ((0.0, 0.0), 0.0),
        ((-1.0, -0.0), PI),
    ];
    for ((re, im), want) in cases {
        let s = SpectralPlanes::new(t(re), t(im)).unwrap();
        let got = phase_spectrum(&s).at3(0, 0, 0);
        assert!((got - want).abs() < 1e-15, "({re}, {im}) -> {got}");
    }
}

#[test]
fn inverse_rejects_non_finite_planes() {
    let mut re = Tensor64::zeros(&[2, 2, 1]);
    re.data_mut()[0] = f64::INFINITY;
    let s = SpectralPlanes::new(re, Tensor64::zeros(&[2, 2, 1])).unwrap();
    assert!(ifft2_real(&s).is_err());
}

#[test]
fn planes_must_share_shape() {
    assert!(SpectralPlanes::new(Tensor64::zeros(&[2, 2, 1]), Tensor64::zeros(&[2, 3, 1])).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn round_trip_any_size(w in 1usize..13, h in 1usize..13, c in 1usize..4, seed in 0u64..10_000) {
        let x = rand(&[w, h, c], seed);
        let back = ifft2_real(&fft2(&x).unwrap()).unwrap();
        prop_assert!(back.max_abs_diff(&x) < 1e-10);
    }

    #[test]
    fn parseval_any_size(w in 1usize..13, h in 1usize..13, seed in 0u64..10_000) {
        let x = rand(&[w, h, 2], seed);
        let s = fft2(&x).unwrap();
        let spatial = energy(&x);
        let spectral = (energy(&s.real) + energy(&s.imag)) / (w * h) as f64;
        prop_assert!((spatial - spectral).abs() <= 1e-8 * spatial.max(1e-300));
    }

    #[test]
    fn phase_stays_in_half_open_interval(re in -2.0f64..2.0, im in -2.0f64..2.0) {
        let s = SpectralPlanes::new(Tensor64::full(&[1, 1, 1], re), Tensor64::full(&[1, 1, 1], im)).unwrap();
        let p = phase_spectrum(&s).at3(0, 0, 0);
        prop_assert!(p > -PI && p <= PI);
    }
}
