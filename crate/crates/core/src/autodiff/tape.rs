use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::ops::{self, ResampleMethod, ResamplePlan};
use crate::scalar::Scalar;
use crate::spectral;
use crate::tensor::{Axis, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Adjoint of a user-supplied op: `(input values, output gradient) -> input gradients`.
pub type CustomAdjoint<T> = Box<dyn Fn(&[&Tensor<T>], &Tensor<T>) -> Vec<Tensor<T>> + Send + Sync>;

enum Op<T> {
    Leaf,
    AxisLinear {
        x: NodeId,
        w: NodeId,
        b: NodeId,
        axis: Axis,
    },
    Relu(NodeId),
    Prelu {
        x: NodeId,
        slope: NodeId,
    },
    Conv2d {
        x: NodeId,
        k: NodeId,
        b: NodeId,
    },
    Concat {
        xs: Vec<NodeId>,
        widths: Vec<usize>,
    },
    SliceChannels {
        x: NodeId,
        start: usize,
    },
    Resample {
        x: NodeId,
        plan: Arc<ResamplePlan<T>>,
    },
    AvgPool2(NodeId),
    FftRe(NodeId),
    FftIm(NodeId),
    IfftReal {
        re: NodeId,
        im: NodeId,
    },
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, T),
    Square(NodeId),
    Abs(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    Custom {
        inputs: Vec<NodeId>,
        adjoint: CustomAdjoint<T>,
    },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => vec![],
            Op::AxisLinear { x, w, b, .. } => vec![*x, *w, *b],
            Op::Conv2d { x, k, b } => vec![*x, *k, *b],
            Op::Prelu { x, slope } => vec![*x, *slope],
            Op::Concat { xs, .. } => xs.clone(),
            Op::Custom { inputs, .. } => inputs.clone(),
            Op::IfftReal { re, im } => vec![*re, *im],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Relu(x)
            | Op::SliceChannels { x, .. }
            | Op::Resample { x, .. }
            | Op::AvgPool2(x)
            | Op::FftRe(x)
            | Op::FftIm(x)
            | Op::Scale(x, _)
            | Op::Square(x)
            | Op::Abs(x)
            | Op::Sum(x)
            | Op::Mean(x) => vec![*x],
        }
    }

    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::AxisLinear { .. } => "axis_linear",
            Op::Relu(_) => "relu",
            Op::Prelu { .. } => "prelu",
            Op::Conv2d { .. } => "conv2d",
            Op::Concat { .. } => "concat_channels",
            Op::SliceChannels { .. } => "slice_channels",
            Op::Resample { .. } => "resample",
            Op::AvgPool2(_) => "avg_pool2",
            Op::FftRe(_) | Op::FftIm(_) => "fft2",
            Op::IfftReal { .. } => "ifft2_real",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Square(_) => "square",
            Op::Abs(_) => "abs",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Custom { .. } => "custom",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Wengert list of recorded operations. Nodes are appended in evaluation
/// order, so inputs always precede their consumers.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    stage: &'static str,
    flops: BTreeMap<&'static str, u64>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients indexed by node; `None` for nodes that do not depend on any
/// gradient-requiring leaf.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// Gradient of `id`, or zeros of `shape` when the output does not depend on it.
    pub fn get_or_zeros(&self, id: NodeId, shape: &[usize]) -> Tensor<T> {
        self.get(id).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor<T>> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            stage: "default",
            flops: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Label under which subsequent ops accumulate their multiply-add counts.
    pub fn set_stage(&mut self, stage: &'static str) {
        self.stage = stage;
    }

    pub fn flops(&self, stage: &str) -> u64 {
        self.flops.get(stage).copied().unwrap_or(0)
    }

    pub fn flops_by_stage(&self) -> &BTreeMap<&'static str, u64> {
        &self.flops
    }

    /// Gradient-tracked leaf (parameter or differentiated input).
    pub fn param(&mut self, value: Tensor<T>) -> NodeId {
        self.push_raw(value, Op::Leaf, true)
    }

    /// Leaf without gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push_raw(value, Op::Leaf, false)
    }

    fn push_raw(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, cost: u64) -> Result<NodeId> {
        let inputs = op.inputs();
        if cfg!(debug_assertions) && !value.is_finite() && inputs.iter().all(|&i| self.value(i).is_finite()) {
            return Err(Error::NonFinite {
                op: op.name().to_string(),
            });
        }
        let requires_grad = inputs.iter().any(|&i| self.nodes[i.0].requires_grad);
        *self.flops.entry(self.stage).or_insert(0) += cost;
        Ok(self.push_raw(value, op, requires_grad))
    }

    pub fn axis_linear(&mut self, x: NodeId, axis: Axis, w: NodeId, b: NodeId) -> Result<NodeId> {
        let v = ops::axis_linear(self.value(x), axis, self.value(w), self.value(b))?;
        let cost = (v.len() * self.value(w).shape()[0]) as u64;
        self.push(v, Op::AxisLinear { x, w, b, axis }, cost)
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let v = ops::relu(self.value(x));
        let cost = v.len() as u64;
        self.push(v, Op::Relu(x), cost)
    }

    pub fn prelu(&mut self, x: NodeId, slope: NodeId) -> Result<NodeId> {
        let v = ops::prelu(self.value(x), self.value(slope))?;
        let cost = v.len() as u64;
        self.push(v, Op::Prelu { x, slope }, cost)
    }

    pub fn conv2d(&mut self, x: NodeId, k: NodeId, b: NodeId) -> Result<NodeId> {
        let v = ops::conv2d(self.value(x), self.value(k), self.value(b))?;
        let ks = self.value(k).shape();
        let cost = (v.len() / ks[3] * ks.iter().product::<usize>()) as u64;
        self.push(v, Op::Conv2d { x, k, b }, cost)
    }

    pub fn concat_channels(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        let vals: Vec<&Tensor<T>> = xs.iter().map(|&i| self.value(i)).collect();
        let v = ops::concat_channels(&vals)?;
        let widths = vals.iter().map(|t| t.shape()[2]).collect();
        let cost = v.len() as u64;
        self.push(
            v,
            Op::Concat {
                xs: xs.to_vec(),
                widths,
            },
            cost,
        )
    }

    pub fn slice_channels(&mut self, x: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let v = ops::slice_channels(self.value(x), start, end)?;
        let cost = v.len() as u64;
        self.push(v, Op::SliceChannels { x, start }, cost)
    }

    pub fn resample(&mut self, x: NodeId, target_w: usize, target_h: usize, method: ResampleMethod) -> Result<NodeId> {
        let (w, h, c) = self.value(x).dims3()?;
        let plan = Arc::new(ResamplePlan::new((w, h), (target_w, target_h), method)?);
        let v = plan.forward(self.value(x));
        let cost = plan.flops(c);
        self.push(v, Op::Resample { x, plan }, cost)
    }

    pub fn avg_pool2(&mut self, x: NodeId) -> Result<NodeId> {
        let v = ops::avg_pool2(self.value(x))?;
        let cost = (v.len() * 4) as u64;
        self.push(v, Op::AvgPool2(x), cost)
    }

    /// Forward 2D transform of a real tensor as `(real plane, imaginary plane)`.
    pub fn fft2(&mut self, x: NodeId) -> Result<(NodeId, NodeId)> {
        let s = spectral::fft2(self.value(x))?;
        let cost = spectral::dft2_flops(s.shape());
        let re = self.push(s.real, Op::FftRe(x), cost)?;
        let im = self.push(s.imag, Op::FftIm(x), 0)?;
        Ok((re, im))
    }

    /// Real part of the normalized inverse transform of `re + i·im`.
    pub fn ifft2_real(&mut self, re: NodeId, im: NodeId) -> Result<NodeId> {
        let s = spectral::SpectralPlanes::new(self.value(re).clone(), self.value(im).clone())?;
        let v = spectral::ifft2_real(&s)?;
        let cost = spectral::dft2_flops(v.shape());
        self.push(v, Op::IfftReal { re, im }, cost)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).zip_map(self.value(b), |p, q| p + q)?;
        let cost = v.len() as u64;
        self.push(v, Op::Add(a, b), cost)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).zip_map(self.value(b), |p, q| p - q)?;
        let cost = v.len() as u64;
        self.push(v, Op::Sub(a, b), cost)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).zip_map(self.value(b), |p, q| p * q)?;
        let cost = v.len() as u64;
        self.push(v, Op::Mul(a, b), cost)
    }

    pub fn scale(&mut self, x: NodeId, s: T) -> Result<NodeId> {
        let v = self.value(x).scale(s);
        let cost = v.len() as u64;
        self.push(v, Op::Scale(x, s), cost)
    }

    pub fn square(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x).map(|p| p * p);
        let cost = v.len() as u64;
        self.push(v, Op::Square(x), cost)
    }

    pub fn abs(&mut self, x: NodeId) -> Result<NodeId> {
        let v = self.value(x).map(T::abs);
        let cost = v.len() as u64;
        self.push(v, Op::Abs(x), cost)
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let v = Tensor::scalar(self.value(x).sum());
        let cost = self.value(x).len() as u64;
        self.push(v, Op::Sum(x), cost)
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        let n = self.value(x).len();
        let v = Tensor::scalar(self.value(x).sum() / T::of(n as f64));
        self.push(v, Op::Mean(x), n as u64)
    }

    /// Records an op whose value was computed by the caller, with a
    /// caller-supplied adjoint.
    pub fn custom(&mut self, inputs: &[NodeId], value: Tensor<T>, adjoint: CustomAdjoint<T>) -> Result<NodeId> {
        self.push(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                adjoint,
            },
            0,
        )
    }

    /// Reverse accumulation from a scalar `root`. Every node at or before
    /// `root` is visited once, in reverse recording order.
    pub fn backward(&self, root: NodeId) -> Result<Gradients<T>> {
        let root_val = self.value(root);
        if root_val.len() != 1 {
            return Err(Error::dim(
                "backward",
                format!("root must be scalar, got {:?}", root_val.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::new(root_val.shape().to_vec(), vec![T::one()]).expect("shape"));

        for id in (0..=root.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            for (input, contrib) in self.adjoint(node, &g) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot @ None => *slot = Some(contrib),
                }
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn adjoint(&self, node: &Node<T>, g: &Tensor<T>) -> Vec<(NodeId, Tensor<T>)> {
        match &node.op {
            Op::Leaf => vec![],
            Op::AxisLinear { x, w, b, axis } => {
                let (gx, gw, gb) = ops::axis_linear_backward(self.value(*x), *axis, self.value(*w), g);
                vec![(*x, gx), (*w, gw), (*b, gb)]
            }
            Op::Relu(x) => {
                let gx = self
                    .value(*x)
                    .zip_map(g, |v, gv| if v > T::zero() { gv } else { T::zero() })
                    .expect("shape");
                vec![(*x, gx)]
            }
            Op::Prelu { x, slope } => {
                let (gx, gs) = ops::prelu_backward(self.value(*x), self.value(*slope), g);
                vec![(*x, gx), (*slope, gs)]
            }
            Op::Conv2d { x, k, b } => {
                let (gx, gk, gb) = ops::conv2d_backward(self.value(*x), self.value(*k), g);
                vec![(*x, gx), (*k, gk), (*b, gb)]
            }
            Op::Concat { xs, widths } => {
                let mut start = 0;
                xs.iter()
                    .zip(widths)
                    .map(|(&x, &w)| {
                        let part = ops::slice_channels(g, start, start + w).expect("shape");
                        start += w;
                        (x, part)
                    })
                    .collect()
            }
            Op::SliceChannels { x, start } => {
                let xv = self.value(*x);
                let (_, _, c) = xv.dims3().expect("rank 3");
                let width = g.shape()[2];
                let mut gx = Tensor::zeros(xv.shape());
                for (dst, src) in gx.data_mut().chunks_exact_mut(c).zip(g.data().chunks_exact(width)) {
                    dst[*start..start + width].copy_from_slice(src);
                }
                vec![(*x, gx)]
            }
            Op::Resample { x, plan } => vec![(*x, plan.backward(g))],
            Op::AvgPool2(x) => vec![(*x, ops::avg_pool2_backward(self.value(*x).shape(), g))],
            Op::FftRe(x) | Op::FftIm(x) => {
                // y = F x with x real: ∂L/∂x = Re(F^H (g_re + i g_im)).
                let zeros = Tensor::zeros(g.shape());
                let (re, im) = match node.op {
                    Op::FftRe(_) => (g, &zeros),
                    _ => (&zeros, g),
                };
                let (gx, _) = spectral::dft2(re, im, true);
                vec![(*x, gx)]
            }
            Op::IfftReal { re, im } => {
                // x = Re(F^H z)/N: ∂L/∂re + i ∂L/∂im = (F g)/N for real g.
                let (w, h) = (g.shape()[0], g.shape()[1]);
                let norm = T::one() / T::of((w * h) as f64);
                let (gr, gi) = spectral::dft2(g, &Tensor::zeros(g.shape()), false);
                vec![(*re, gr.scale(norm)), (*im, gi.scale(norm))]
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.scale(-T::one()))],
            Op::Mul(a, b) => {
                let mut out = Vec::with_capacity(2);
                if self.wants(*a) {
                    out.push((*a, g.zip_map(self.value(*b), |p, q| p * q).expect("shape")));
                }
                if self.wants(*b) {
                    out.push((*b, g.zip_map(self.value(*a), |p, q| p * q).expect("shape")));
                }
                out
            }
            Op::Scale(x, s) => vec![(*x, g.scale(*s))],
            Op::Square(x) => {
                let two = T::of(2.0);
                vec![(*x, self.value(*x).zip_map(g, |v, gv| two * v * gv).expect("shape"))]
            }
            Op::Abs(x) => {
                let gx = self
                    .value(*x)
                    .zip_map(g, |v, gv| {
                        if v > T::zero() {
                            gv
                        } else if v < T::zero() {
                            -gv
                        } else {
                            T::zero()
                        }
                    })
                    .expect("shape");
                vec![(*x, gx)]
            }
            Op::Sum(x) => vec![(*x, Tensor::full(self.value(*x).shape(), g.data()[0]))],
            Op::Mean(x) => {
                let xv = self.value(*x);
                let s = g.data()[0] / T::of(xv.len() as f64);
                vec![(*x, Tensor::full(xv.shape(), s))]
            }
            Op::Custom { inputs, adjoint } => {
                let vals: Vec<&Tensor<T>> = inputs.iter().map(|&i| self.value(i)).collect();
                inputs.iter().copied().zip(adjoint(&vals, g)).collect()
            }
        }
    }
}
