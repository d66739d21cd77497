use cubemix::autodiff::GradCheck;
use cubemix::mixer::{block_param_count, hidden_width, wfp_apply, AxisMlp, MixerInit};
use cubemix::{CubicMixer, CubicMixerParams, MixerBlockParams, PlaneFeed, Tensor64};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn w2(m: &Tensor64, i: usize, j: usize) -> f64 {
    m.data()[i * m.shape()[1] + j]
}

/// Evaluates one residual MLP on a single fiber by hand.
fn mlp_fiber(mlp: &AxisMlp<Tensor64>, v: &[f64]) -> Vec<f64> {
    let (d, hid) = (mlp.w_in.shape()[0], mlp.w_in.shape()[1]);
    let hidden: Vec<f64> = (0..hid)
        .map(|j| {
            let s: f64 = (0..d).map(|i| v[i] * w2(&mlp.w_in, i, j)).sum::<f64>() + mlp.b_in.data()[j];
            s.max(0.0)
        })
        .collect();
    (0..d)
        .map(|i| v[i] + (0..hid).map(|j| hidden[j] * w2(&mlp.w_out, j, i)).sum::<f64>() + mlp.b_out.data()[i])
        .collect()
}

fn hand_block(p: &MixerBlockParams<f64>, x: &Tensor64) -> Tensor64 {
    let (w, h, c) = x.dims3().unwrap();
    let mut f = x.clone();
    for y in 0..h {
        for k in 0..c {
            let v: Vec<f64> = (0..w).map(|i| f.at3(i, y, k)).collect();
            for (i, o) in mlp_fiber(&p.width, &v).into_iter().enumerate() {
                f.set3(i, y, k, o);
            }
        }
    }
    for i in 0..w {
        for k in 0..c {
            let v: Vec<f64> = (0..h).map(|y| f.at3(i, y, k)).collect();
            for (y, o) in mlp_fiber(&p.height, &v).into_iter().enumerate() {
                f.set3(i, y, k, o);
            }
        }
    }
    for i in 0..w {
        for y in 0..h {
            let v: Vec<f64> = (0..c).map(|k| f.at3(i, y, k)).collect();
            for (k, o) in mlp_fiber(&p.channel, &v).into_iter().enumerate() {
                f.set3(i, y, k, o);
            }
        }
    }
    f
}

fn randomize_biases(p: &mut MixerBlockParams<f64>, r: &mut ChaCha8Rng) {
    for mlp in [&mut p.width, &mut p.height, &mut p.channel] {
        mlp.b_in = Tensor64::uniform(mlp.b_in.shape(), -0.5, 0.5, r);
        mlp.b_out = Tensor64::uniform(mlp.b_out.shape(), -0.5, 0.5, r);
    }
}

#[test]
fn block_matches_hand_evaluation() {
    let mut r = rng(1);
    for ratio in [1.0, 0.5, 2.0] {
        let mut p = MixerBlockParams::<f64>::init((5, 4, 3), ratio, MixerInit::Uniform, &mut r);
        randomize_biases(&mut p, &mut r);
        let x = Tensor64::uniform(&[5, 4, 3], -1.0, 1.0, &mut r);
        let got = p.forward(&x).unwrap();
        assert!(got.max_abs_diff(&hand_block(&p, &x)) < 1e-12, "ratio {ratio}");
    }
}

#[test]
fn stack_is_composition_of_blocks() {
    let mut r = rng(2);
    let stack = CubicMixerParams::<f64>::init((4, 6, 2), 3, 1.0, MixerInit::Uniform, &mut r);
    let x = Tensor64::uniform(&[4, 6, 2], -1.0, 1.0, &mut r);
    let mut want = x.clone();
    for b in &stack.blocks {
        want = hand_block(b, &want);
    }
    assert!(stack.forward(&x).unwrap().max_abs_diff(&want) < 1e-12);
}

#[test]
fn zero_residual_stack_is_identity() {
    let mut r = rng(3);
    let stack = CubicMixerParams::<f64>::init((6, 6, 3), 4, 1.0, MixerInit::ZeroResidual, &mut r);
    let x = Tensor64::uniform(&[6, 6, 3], -50.0, 50.0, &mut r);
    assert_eq!(stack.forward(&x).unwrap(), x);
}

#[test]
fn width_mixing_commutes_with_height_and_channel_permutations() {
    let mut r = rng(4);
    let (w, h, c) = (5, 4, 3);
    let mut p = MixerBlockParams::<f64>::init((w, h, c), 1.0, MixerInit::Uniform, &mut r);
    // Silence the other two axes.
    for mlp in [&mut p.height, &mut p.channel] {
        mlp.w_out = Tensor64::zeros(mlp.w_out.shape());
    }
    let x = Tensor64::uniform(&[w, h, c], -1.0, 1.0, &mut r);
    let hp = [2, 0, 3, 1];
    let cp = [1, 2, 0];
    let permute = |t: &Tensor64| Tensor64::from_fn3(w, h, c, |i, y, k| t.at3(i, hp[y], cp[k]));
    let a = p.forward(&permute(&x)).unwrap();
    let b = permute(&p.forward(&x).unwrap());
    assert!(a.max_abs_diff(&b) < 1e-12);
}

#[test]
fn mismatched_input_is_rejected() {
    let mut r = rng(5);
    let p = MixerBlockParams::<f64>::init((4, 4, 2), 1.0, MixerInit::Uniform, &mut r);
    assert!(p.forward(&Tensor64::zeros(&[4, 5, 2])).is_err());
    assert!(p.forward(&Tensor64::zeros(&[4, 4, 3])).is_err());
}

#[test]
fn param_count_formula() {
    let mut r = rng(6);
    for (dims, ratio) in [((24, 24, 3), 1.0), ((12, 8, 3), 0.5), ((6, 6, 3), 2.0)] {
        let stack = CubicMixerParams::<f64>::init(dims, 2, ratio, MixerInit::Uniform, &mut r);
        let hid = (
            hidden_width(dims.0, ratio),
            hidden_width(dims.1, ratio),
            hidden_width(dims.2, ratio),
        );
        // Two layers per axis, biases on both.
        let (w, h, c) = dims;
        let manual = 2 * (w * hid.0 + h * hid.1 + c * hid.2) + hid.0 + hid.1 + hid.2 + w + h + c;
        assert_eq!(block_param_count(dims, hid), manual);
        assert_eq!(stack.param_count(), 2 * manual);
    }
}

#[test]
fn doubling_blocks_doubles_params() {
    let mut r = rng(7);
    let a = CubicMixerParams::<f64>::init((8, 8, 3), 4, 1.0, MixerInit::Uniform, &mut r);
    let b = CubicMixerParams::<f64>::init((8, 8, 3), 8, 1.0, MixerInit::Uniform, &mut r);
    assert_eq!(b.param_count(), 2 * a.param_count());
}

#[test]
fn uniform_init_respects_fan_in_bounds() {
    let mut r = rng(8);
    let p = MixerBlockParams::<f64>::init((16, 9, 3), 1.0, MixerInit::Uniform, &mut r);
    for mlp in [&p.width, &p.height, &p.channel] {
        for w in [&mlp.w_in, &mlp.w_out] {
            let bound = 1.0 / (w.shape()[0] as f64).sqrt();
            assert!(w.data().iter().all(|v| v.abs() <= bound));
            assert!(w.data().iter().any(|v| v.abs() > bound / 2.0));
        }
        assert!(mlp.b_in.data().iter().chain(mlp.b_out.data()).all(|&v| v == 0.0));
    }
}

#[test]
fn wfp_with_identity_mixers_is_identity() {
    let mut r = rng(9);
    let dims = (8, 6, 3);
    let phi = CubicMixerParams::<f64>::init(dims, 2, 1.0, MixerInit::ZeroResidual, &mut r);
    let x = Tensor64::uniform(&[8, 6, 3], -1.0, 1.0, &mut r);
    let mut tape = cubemix::Tape64::new();
    let a = phi.map(&mut |t| tape.constant(t.clone()));
    let b = phi.map(&mut |t| tape.constant(t.clone()));
    let xi = tape.constant(x.clone());
    let y = wfp_apply(&mut tape, xi, &a, &b, PlaneFeed::Split).unwrap();
    assert!(tape.value(y).max_abs_diff(&x) < 1e-12);

    // With identity mixers, feeding one plane twice keeps the even (real
    // plane) or odd (imaginary plane) part of the signal.
    let (w, h) = (8, 6);
    let mirror = |i: usize, j: usize, k: usize| x.at3((w - i) % w, (h - j) % h, k);
    let even = Tensor64::from_fn3(w, h, 3, |i, j, k| (x.at3(i, j, k) + mirror(i, j, k)) / 2.0);
    let odd = Tensor64::from_fn3(w, h, 3, |i, j, k| (x.at3(i, j, k) - mirror(i, j, k)) / 2.0);
    let y = wfp_apply(&mut tape, xi, &a, &b, PlaneFeed::DoubleReal).unwrap();
    assert!(tape.value(y).max_abs_diff(&even) < 1e-12);
    let y = wfp_apply(&mut tape, xi, &a, &b, PlaneFeed::DoubleImag).unwrap();
    assert!(tape.value(y).max_abs_diff(&odd) < 1e-12);
}

#[test]
fn wfp_gradient_8x8x2() {
    let mut r = rng(10);
    let dims = (8, 8, 2);
    let re = CubicMixerParams::<f64>::init(dims, 1, 1.0, MixerInit::Uniform, &mut r);
    let im = CubicMixerParams::<f64>::init(dims, 1, 1.0, MixerInit::Uniform, &mut r);
    let x = Tensor64::uniform(&[8, 8, 2], -1.0, 1.0, &mut r);
    let probe = Tensor64::uniform(&[8, 8, 2], -1.0, 1.0, &mut r);
    let mut inputs = vec![x];
    re.visit("", &mut |_, t| inputs.push(t.clone()));
    im.visit("", &mut |_, t| inputs.push(t.clone()));
    let n = (inputs.len() - 1) / 2;
    let rebuild = |ids: &[cubemix::NodeId], start: usize| {
        let mut it = ids[start..start + n].iter();
        re.map(&mut |_| *it.next().unwrap())
    };
    let rep = GradCheck::default()
        .run(&inputs, |t, ids| {
            let a: CubicMixer<_> = rebuild(ids, 1);
            let b: CubicMixer<_> = rebuild(ids, 1 + n);
            let y = wfp_apply(t, ids[0], &a, &b, PlaneFeed::Split)?;
            let p = t.constant(probe.clone());
            let m = t.mul(y, p)?;
            t.sum(m)
        })
        .unwrap();
    assert!(rep.passed, "{rep:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn block_preserves_shape_and_matches_hand(w in 1usize..7, h in 1usize..7, c in 1usize..4, seed in 0u64..1000) {
        let mut r = rng(seed);
        let mut p = MixerBlockParams::<f64>::init((w, h, c), 1.0, MixerInit::Uniform, &mut r);
        randomize_biases(&mut p, &mut r);
        let x = Tensor64::uniform(&[w, h, c], -1.0, 1.0, &mut r);
        let y = p.forward(&x).unwrap();
        prop_assert_eq!(y.shape(), x.shape());
        prop_assert!(y.max_abs_diff(&hand_block(&p, &x)) < 1e-12);
    }
}
