use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{NodeId, Tape};
use crate::error::Result;
use crate::mixer::uniform_fan_in;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Weight of the perceptual term.
pub const DEFAULT_LAMBDA_P: f64 = 0.03;

/// Fixed seed of the frozen feature bank, so the loss is the same function
/// in every run.
const PROXY_SEED: u64 = 0x5eed_f11e;
const PROXY_FEATURES: usize = 8;

/// Frozen two-level feature pyramid standing in for a pretrained perceptual
/// network: `relu(conv3×3)`, 2×2 average pool, `relu(conv3×3)`.
#[derive(Clone, Debug)]
pub struct PerceptualProxy<T> {
    k1: Tensor<T>,
    b1: Tensor<T>,
    k2: Tensor<T>,
    b2: Tensor<T>,
}

impl<T: Scalar> PerceptualProxy<T> {
    pub fn new(channels: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(PROXY_SEED);
        let f = PROXY_FEATURES;
        PerceptualProxy {
            k1: uniform_fan_in(&[3, 3, channels, f], 9 * channels, &mut rng),
            b1: Tensor::zeros(&[f]),
            k2: uniform_fan_in(&[3, 3, f, f], 9 * f, &mut rng),
            b2: Tensor::zeros(&[f]),
        }
    }

    fn features(&self, tape: &mut Tape<T>, x: NodeId, w: &[NodeId; 4]) -> Result<[NodeId; 2]> {
        let f1 = tape.conv2d(x, w[0], w[1])?;
        let f1 = tape.relu(f1)?;
        let pooled = tape.avg_pool2(f1)?;
        let f2 = tape.conv2d(pooled, w[2], w[3])?;
        let f2 = tape.relu(f2)?;
        Ok([f1, f2])
    }

    /// Sum over levels of the mean absolute feature difference.
    pub fn distance(&self, tape: &mut Tape<T>, pred: NodeId, target: NodeId) -> Result<NodeId> {
        let w = [
            tape.constant(self.k1.clone()),
            tape.constant(self.b1.clone()),
            tape.constant(self.k2.clone()),
            tape.constant(self.b2.clone()),
        ];
        let fp = self.features(tape, pred, &w)?;
        let ft = self.features(tape, target, &w)?;
        let mut total: Option<NodeId> = None;
        for (a, b) in fp.into_iter().zip(ft) {
            let d = tape.sub(a, b)?;
            let d = tape.abs(d)?;
            let d = tape.mean(d)?;
            total = Some(match total {
                Some(t) => tape.add(t, d)?,
                None => d,
            });
        }
        Ok(total.expect("two levels"))
    }
}

/// Nodes of the composite loss.
#[derive(Clone, Copy, Debug)]
pub struct LossNodes {
    pub total: NodeId,
    pub l1: NodeId,
    pub perceptual: NodeId,
}

/// Mean absolute error.
pub fn l1_loss<T: Scalar>(tape: &mut Tape<T>, pred: NodeId, target: NodeId) -> Result<NodeId> {
    let d = tape.sub(pred, target)?;
    let d = tape.abs(d)?;
    tape.mean(d)
}

impl<T: Scalar> PerceptualProxy<T> {
    /// `mean|pred − target| + λ·proxy(pred, target)`.
    pub fn total_loss(&self, tape: &mut Tape<T>, pred: NodeId, target: NodeId, lambda_p: f64) -> Result<LossNodes> {
        let l1 = l1_loss(tape, pred, target)?;
        let perceptual = self.distance(tape, pred, target)?;
        let weighted = tape.scale(perceptual, T::of(lambda_p))?;
        let total = tape.add(l1, weighted)?;
        Ok(LossNodes { total, l1, perceptual })
    }
}

/// Value-level composite loss.
pub fn total_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, lambda_p: f64) -> Result<T> {
    pred.check_same_shape(target, "total_loss")?;
    let mut tape = Tape::new();
    let (p, t) = (tape.constant(pred.clone()), tape.constant(target.clone()));
    let nodes = PerceptualProxy::new(pred.dims3()?.2).total_loss(&mut tape, p, t, lambda_p)?;
    Ok(tape.value(nodes.total).data()[0])
}

/// Value-level perceptual proxy distance.
pub fn perceptual_proxy<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    pred.check_same_shape(target, "perceptual_proxy")?;
    let mut tape = Tape::new();
    let (p, t) = (tape.constant(pred.clone()), tape.constant(target.clone()));
    let d = PerceptualProxy::new(pred.dims3()?.2).distance(&mut tape, p, t)?;
    Ok(tape.value(d).data()[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn zero_at_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f64>::uniform(&[12, 10, 3], 0.0, 1.0, &mut rng);
        assert_eq!(total_loss(&x, &x, DEFAULT_LAMBDA_P).unwrap(), 0.0);
        assert_eq!(perceptual_proxy(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset_pure_l1() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = Tensor::<f64>::uniform(&[8, 8, 3], 0.0, 0.5, &mut rng);
        let p = t.map(|v| v + 0.1);
        assert!((total_loss(&p, &t, 0.0).unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn proxy_symmetric_and_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let a = Tensor::<f64>::uniform(&[10, 8, 3], 0.0, 1.0, &mut rng);
            let b = Tensor::<f64>::uniform(&[10, 8, 3], 0.0, 1.0, &mut rng);
            let ab = perceptual_proxy(&a, &b).unwrap();
            assert_eq!(ab, perceptual_proxy(&b, &a).unwrap());
            assert!(ab >= 0.0);
            assert!(total_loss(&a, &b, rng.gen_range(0.0..1.0)).unwrap() >= 0.0);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let a = Tensor::<f64>::zeros(&[4, 4, 3]);
        let b = Tensor::<f64>::zeros(&[4, 5, 3]);
        assert!(total_loss(&a, &b, 0.03).is_err());
    }
}
