//! Multi-scale frequency-domain deblurring with cubic-mixer networks.
//!
//! A blurry image is downsampled to several low resolutions; at each, the
//! real and imaginary Fourier planes pass through separate stacks of
//! cubic-mixer blocks (residual MLPs along width, height and channels) and
//! are transformed back. The upsampled results are fused with the input by
//! a small convolutional stage that predicts per-pixel affine maps, which
//! are applied to the full-resolution input.
//!
//! Everything is generic over the [`Scalar`] type; training runs in `f32`
//! and gradient checks in `f64`. Concrete aliases are provided below.

pub mod autodiff;
pub mod error;
pub mod mixer;
pub mod net;
pub mod ops;
pub mod scalar;
pub mod spectral;
pub mod tensor;
pub mod training;

pub use autodiff::{grad_check, GradCheck, GradCheckReport, Gradients, NodeId, Tape};
pub use error::{Error, Result};
pub use mixer::{CubicMixer, CubicMixerParams, MixerBlock, MixerBlockParams, PlaneFeed};
pub use net::{Ablation, Head, NetworkConfig, NetworkParams, SliceMaps, SlicingMode};
pub use ops::ResampleMethod;
pub use scalar::Scalar;
pub use spectral::SpectralPlanes;
pub use tensor::{Axis, Tensor};

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Tape32 = Tape<f32>;
pub type Tape64 = Tape<f64>;
pub type Params32 = NetworkParams<Tensor<f32>>;
pub type Params64 = NetworkParams<Tensor<f64>>;
pub type SpectralPlanes32 = SpectralPlanes<f32>;
pub type SpectralPlanes64 = SpectralPlanes<f64>;
