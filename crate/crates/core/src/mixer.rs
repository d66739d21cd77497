//! Cubic-mixer blocks: residual two-layer MLPs applied in turn along the
//! width, height and channel axes, and the paired real/imaginary networks
//! that process spectral planes.
//!
//! Parameter containers are generic over their leaf type so the same
//! structure holds tensors, tape handles, gradients or optimizer moments.

use rand::Rng;

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Axis, Tensor};

/// `fiber + w_out·σ(w_in·fiber + b_in) + b_out` along one axis.
#[derive(Clone, Debug, PartialEq)]
pub struct AxisMlp<L> {
    pub w_in: L,
    pub b_in: L,
    pub w_out: L,
    pub b_out: L,
}

/// One cubic-mixer layer; `width`, `height`, `channel` hold (w₁, w₂),
/// (w₃, w₄) and (w₅, w₆) respectively.
#[derive(Clone, Debug, PartialEq)]
pub struct MixerBlock<L> {
    pub width: AxisMlp<L>,
    pub height: AxisMlp<L>,
    pub channel: AxisMlp<L>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CubicMixer<L> {
    pub blocks: Vec<MixerBlock<L>>,
}

pub type MixerBlockParams<T> = MixerBlock<Tensor<T>>;
pub type CubicMixerParams<T> = CubicMixer<Tensor<T>>;

/// How the residual branches start out.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MixerInit {
    /// Output layers zeroed so every block starts as the identity.
    ZeroResidual,
    /// Both layers drawn from `U(−1/√fan_in, 1/√fan_in)`.
    Uniform,
}

/// Hidden width for an axis of length `d` under `ratio` (at least 1).
pub fn hidden_width(d: usize, ratio: f64) -> usize {
    ((d as f64 * ratio).round() as usize).max(1)
}

pub(crate) fn uniform_fan_in<T: Scalar, R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::uniform(shape, -bound, bound, rng)
}

impl<L> AxisMlp<L> {
    pub fn map<M>(&self, f: &mut dyn FnMut(&L) -> M) -> AxisMlp<M> {
        AxisMlp {
            w_in: f(&self.w_in),
            b_in: f(&self.b_in),
            w_out: f(&self.w_out),
            b_out: f(&self.b_out),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a L)) {
        f(format!("{prefix}.w_in"), &self.w_in);
        f(format!("{prefix}.b_in"), &self.b_in);
        f(format!("{prefix}.w_out"), &self.w_out);
        f(format!("{prefix}.b_out"), &self.b_out);
    }

    pub fn leaves_mut(&mut self) -> Vec<&mut L> {
        vec![&mut self.w_in, &mut self.b_in, &mut self.w_out, &mut self.b_out]
    }
}

impl<T: Scalar> AxisMlp<Tensor<T>> {
    pub fn init<R: Rng>(d: usize, hidden: usize, init: MixerInit, rng: &mut R) -> Self {
        let w_out = match init {
            MixerInit::ZeroResidual => Tensor::zeros(&[hidden, d]),
            MixerInit::Uniform => uniform_fan_in(&[hidden, d], hidden, rng),
        };
        AxisMlp {
            w_in: uniform_fan_in(&[d, hidden], d, rng),
            b_in: Tensor::zeros(&[hidden]),
            w_out,
            b_out: Tensor::zeros(&[d]),
        }
    }

    /// `(input length, hidden width)` implied by the weight shapes.
    pub fn dims(&self) -> (usize, usize) {
        (self.w_in.shape()[0], self.w_in.shape()[1])
    }
}

impl<L> MixerBlock<L> {
    pub fn map<M>(&self, f: &mut dyn FnMut(&L) -> M) -> MixerBlock<M> {
        MixerBlock {
            width: self.width.map(f),
            height: self.height.map(f),
            channel: self.channel.map(f),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a L)) {
        self.width.visit(&format!("{prefix}.width"), f);
        self.height.visit(&format!("{prefix}.height"), f);
        self.channel.visit(&format!("{prefix}.channel"), f);
    }

    pub fn leaves_mut(&mut self) -> Vec<&mut L> {
        let mut out = self.width.leaves_mut();
        out.extend(self.height.leaves_mut());
        out.extend(self.channel.leaves_mut());
        out
    }

    fn axes(&self) -> [(Axis, &AxisMlp<L>); 3] {
        [
            (Axis::W, &self.width),
            (Axis::H, &self.height),
            (Axis::C, &self.channel),
        ]
    }
}

impl<T: Scalar> MixerBlock<Tensor<T>> {
    /// Block for `[w, h, c]` planes with hidden widths scaled by `hidden_ratio`.
    pub fn init<R: Rng>(dims: (usize, usize, usize), hidden_ratio: f64, init: MixerInit, rng: &mut R) -> Self {
        let (w, h, c) = dims;
        MixerBlock {
            width: AxisMlp::init(w, hidden_width(w, hidden_ratio), init, rng),
            height: AxisMlp::init(h, hidden_width(h, hidden_ratio), init, rng),
            channel: AxisMlp::init(c, hidden_width(c, hidden_ratio), init, rng),
        }
    }

    /// Spatial/channel extent `(W, H, C)` this block accepts.
    pub fn input_dims(&self) -> (usize, usize, usize) {
        (self.width.dims().0, self.height.dims().0, self.channel.dims().0)
    }

    /// Value-level evaluation without gradient tracking.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let p = self.map(&mut |t| tape.constant(t.clone()));
        let xi = tape.constant(x.clone());
        let out = mixer_block(&mut tape, xi, &p)?;
        Ok(tape.value(out).clone())
    }
}

impl<L> CubicMixer<L> {
    pub fn map<M>(&self, f: &mut dyn FnMut(&L) -> M) -> CubicMixer<M> {
        CubicMixer {
            blocks: self.blocks.iter().map(|b| b.map(f)).collect(),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a L)) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&format!("{prefix}.block{i}"), f);
        }
    }

    pub fn leaves_mut(&mut self) -> Vec<&mut L> {
        self.blocks.iter_mut().flat_map(MixerBlock::leaves_mut).collect()
    }
}

impl<T: Scalar> CubicMixer<Tensor<T>> {
    pub fn init<R: Rng>(
        dims: (usize, usize, usize),
        blocks: usize,
        hidden_ratio: f64,
        init: MixerInit,
        rng: &mut R,
    ) -> Self {
        CubicMixer {
            blocks: (0..blocks)
                .map(|_| MixerBlock::init(dims, hidden_ratio, init, rng))
                .collect(),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let p = self.map(&mut |t| tape.constant(t.clone()));
        let xi = tape.constant(x.clone());
        let out = cubic_mixer(&mut tape, xi, &p)?;
        Ok(tape.value(out).clone())
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.len());
        n
    }
}

/// Closed-form parameter count of one block over `[w, h, c]` with hidden
/// widths `(wh, hh, ch)`, biases included.
pub fn block_param_count(dims: (usize, usize, usize), hidden: (usize, usize, usize)) -> usize {
    let (w, h, c) = dims;
    let (wh, hh, ch) = hidden;
    2 * (w * wh + h * hh + c * ch) + (wh + w) + (hh + h) + (ch + c)
}

/// Residual mixing along W, then H, then C. Shape is preserved.
pub fn mixer_block<T: Scalar>(tape: &mut Tape<T>, x: NodeId, p: &MixerBlock<NodeId>) -> Result<NodeId> {
    let shape = tape.value(x).shape().to_vec();
    let mut f = x;
    for (axis, mlp) in p.axes() {
        let expect = tape.value(mlp.w_in).shape()[0];
        if shape.len() != 3 || shape[axis.index()] != expect {
            return Err(Error::dim(
                "mixer_block",
                format!("input {shape:?} incompatible with {axis:?}-mixer of width {expect}"),
            ));
        }
        let hidden = tape.axis_linear(f, axis, mlp.w_in, mlp.b_in)?;
        let hidden = tape.relu(hidden)?;
        let update = tape.axis_linear(hidden, axis, mlp.w_out, mlp.b_out)?;
        f = tape.add(f, update)?;
    }
    Ok(f)
}

/// Blocks applied in order; an empty stack is the identity.
pub fn cubic_mixer<T: Scalar>(tape: &mut Tape<T>, x: NodeId, p: &CubicMixer<NodeId>) -> Result<NodeId> {
    p.blocks.iter().try_fold(x, |acc, block| mixer_block(tape, acc, block))
}

/// Which spectral plane feeds each of the two mirror networks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PlaneFeed {
    /// Real plane to the first network, imaginary plane to the second.
    #[default]
    Split,
    /// Real plane to both.
    DoubleReal,
    /// Imaginary plane to both.
    DoubleImag,
}

/// Transform, mix the real and imaginary planes with separate networks,
/// recombine (first output as real plane, second as imaginary) and invert.
pub fn wfp_apply<T: Scalar>(
    tape: &mut Tape<T>,
    x: NodeId,
    phi_real: &CubicMixer<NodeId>,
    phi_imag: &CubicMixer<NodeId>,
    feed: PlaneFeed,
) -> Result<NodeId> {
    let (re, im) = tape.fft2(x)?;
    let (a, b) = match feed {
        PlaneFeed::Split => (re, im),
        PlaneFeed::DoubleReal => (re, re),
        PlaneFeed::DoubleImag => (im, im),
    };
    let re_out = cubic_mixer(tape, a, phi_real)?;
    let im_out = cubic_mixer(tape, b, phi_imag)?;
    tape.ifft2_real(re_out, im_out)
}
