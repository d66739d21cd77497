//! Multi-scale deblurring network: three low-resolution spectral paths,
//! bicubic upsampling, local feature fusion, and full-resolution slicing.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::mixer::{uniform_fan_in, wfp_apply, CubicMixer, MixerInit, PlaneFeed};
use crate::ops::ResampleMethod;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Smallest side a low-resolution path may have.
pub const MIN_PATH_SIDE: usize = 4;

/// Tape stage labels used for cost accounting.
pub mod stage {
    /// Downsampling, spectral transforms and mixers.
    pub const LOW_RES: &str = "low_res";
    /// Bicubic upsampling of the path outputs.
    pub const UPSAMPLE: &str = "upsample";
    /// Concatenation, convolutions, activation and slicing.
    pub const FULL_RES: &str = "full_res";
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlicingMode {
    /// `W ⊙ B + b`
    Affine,
    /// `(W ⊙ B + b)²`
    Polynomial,
}

/// What the 1×1 head predicts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    /// Per-channel scale and offset planes applied to the input.
    Slicing,
    /// The output image itself.
    Direct,
}

/// Architectural variants compared in the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Ablation {
    Full,
    DoubleReal,
    DoubleImag,
    WithoutMultiScale,
    WithoutSlicing,
    WithoutLfe,
}

impl Ablation {
    pub const ALL: [Ablation; 6] = [
        Ablation::Full,
        Ablation::DoubleReal,
        Ablation::DoubleImag,
        Ablation::WithoutMultiScale,
        Ablation::WithoutSlicing,
        Ablation::WithoutLfe,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::DoubleReal => "d-real",
            Ablation::DoubleImag => "d-imag",
            Ablation::WithoutMultiScale => "wo-ms",
            Ablation::WithoutSlicing => "wo-ss",
            Ablation::WithoutLfe => "wo-lfe",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    /// Downsample factors of the paths relative to the input, strictly decreasing.
    pub path_scales: Vec<f64>,
    /// Fixed absolute processing sizes; overrides `path_scales` when set.
    pub path_sizes: Option<Vec<(usize, usize)>>,
    pub blocks_per_path: usize,
    pub channels: usize,
    pub hidden_ratio: f64,
    /// Kernel size of the local feature convolution (3, or 1 to disable spatial context).
    pub lfe_kernel: usize,
    pub slicing_mode: SlicingMode,
    pub plane_feed: PlaneFeed,
    pub head: Head,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            path_scales: vec![1.0 / 4.0, 1.0 / 8.0, 1.0 / 16.0],
            path_sizes: None,
            blocks_per_path: 4,
            channels: 3,
            hidden_ratio: 1.0,
            lfe_kernel: 3,
            slicing_mode: SlicingMode::Affine,
            plane_feed: PlaneFeed::Split,
            head: Head::Slicing,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.path_scales.is_empty() {
            return Err(Error::Config("at least one path scale is required".into()));
        }
        if self.path_scales.iter().any(|&s| !(s > 0.0 && s <= 1.0)) {
            return Err(Error::Config(format!(
                "path scales {:?} must lie in (0, 1]",
                self.path_scales
            )));
        }
        if self.path_scales.windows(2).any(|p| p[1] >= p[0]) {
            return Err(Error::Config(format!(
                "path scales {:?} must be strictly decreasing",
                self.path_scales
            )));
        }
        if let Some(sizes) = &self.path_sizes {
            if sizes.len() != self.path_scales.len() {
                return Err(Error::Config(format!(
                    "{} path sizes given for {} paths",
                    sizes.len(),
                    self.path_scales.len()
                )));
            }
            check_path_sizes(sizes)?;
        }
        if self.blocks_per_path == 0 {
            return Err(Error::Config("blocks_per_path must be at least 1".into()));
        }
        if self.channels == 0 {
            return Err(Error::Config("channels must be at least 1".into()));
        }
        if !(self.hidden_ratio > 0.0 && self.hidden_ratio.is_finite()) {
            return Err(Error::Config(format!(
                "hidden_ratio {} must be positive",
                self.hidden_ratio
            )));
        }
        if self.lfe_kernel != 1 && self.lfe_kernel != 3 {
            return Err(Error::Config(format!("lfe_kernel {} must be 1 or 3", self.lfe_kernel)));
        }
        Ok(())
    }

    pub fn num_paths(&self) -> usize {
        self.path_scales.len()
    }

    /// Processing size of every path for a `w × h` input.
    pub fn path_sizes_for(&self, w: usize, h: usize) -> Result<Vec<(usize, usize)>> {
        let sizes = match &self.path_sizes {
            Some(s) => s.clone(),
            None => self
                .path_scales
                .iter()
                .map(|&s| ((w as f64 * s).floor() as usize, (h as f64 * s).floor() as usize))
                .collect(),
        };
        check_path_sizes(&sizes)?;
        Ok(sizes)
    }

    /// Copy with the path sizes for a `w × h` input frozen, so the network
    /// accepts any input resolution afterwards.
    pub fn pinned(&self, w: usize, h: usize) -> Result<Self> {
        let mut cfg = self.clone();
        cfg.path_sizes = Some(self.path_sizes_for(w, h)?);
        Ok(cfg)
    }

    /// Applies an ablation's architectural switch.
    pub fn with_ablation(&self, ablation: Ablation) -> Self {
        let mut cfg = self.clone();
        match ablation {
            Ablation::Full => {}
            Ablation::DoubleReal => cfg.plane_feed = PlaneFeed::DoubleReal,
            Ablation::DoubleImag => cfg.plane_feed = PlaneFeed::DoubleImag,
            Ablation::WithoutMultiScale => {
                cfg.path_scales.truncate(1);
                if let Some(s) = &mut cfg.path_sizes {
                    s.truncate(1);
                }
            }
            Ablation::WithoutSlicing => cfg.head = Head::Direct,
            Ablation::WithoutLfe => cfg.lfe_kernel = 1,
        }
        cfg
    }

    /// Channels of the fused tensor: the input plus one upsampled map per path.
    pub fn fused_channels(&self) -> usize {
        self.channels * (1 + self.num_paths())
    }

    pub fn head_channels(&self) -> usize {
        match self.head {
            Head::Slicing => 2 * self.channels,
            Head::Direct => self.channels,
        }
    }
}

fn check_path_sizes(sizes: &[(usize, usize)]) -> Result<()> {
    for &(w, h) in sizes {
        if w < MIN_PATH_SIDE || h < MIN_PATH_SIDE {
            return Err(Error::Config(format!(
                "path size {w}x{h} is below the {MIN_PATH_SIDE}x{MIN_PATH_SIDE} minimum"
            )));
        }
    }
    Ok(())
}

/// Mirror networks of one path.
#[derive(Clone, Debug, PartialEq)]
pub struct PathParams<L> {
    pub phi_real: CubicMixer<L>,
    pub phi_imag: CubicMixer<L>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams<L> {
    pub paths: Vec<PathParams<L>>,
    /// `[K, K, Ct, Ct]` local feature convolution.
    pub lfe_kernel: L,
    pub lfe_bias: L,
    pub prelu_slope: L,
    /// `[1, 1, Ct, head_channels]` squeeze to the slicing maps.
    pub head_kernel: L,
    pub head_bias: L,
}

impl<L> NetworkParams<L> {
    pub fn map<M>(&self, f: &mut dyn FnMut(&L) -> M) -> NetworkParams<M> {
        NetworkParams {
            paths: self
                .paths
                .iter()
                .map(|p| PathParams {
                    phi_real: p.phi_real.map(f),
                    phi_imag: p.phi_imag.map(f),
                })
                .collect(),
            lfe_kernel: f(&self.lfe_kernel),
            lfe_bias: f(&self.lfe_bias),
            prelu_slope: f(&self.prelu_slope),
            head_kernel: f(&self.head_kernel),
            head_bias: f(&self.head_bias),
        }
    }

    /// Visits every leaf with a stable dotted name, in checkpoint order.
    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(String, &'a L)) {
        for (k, p) in self.paths.iter().enumerate() {
            p.phi_real.visit(&format!("path{k}.real"), f);
            p.phi_imag.visit(&format!("path{k}.imag"), f);
        }
        f("lfe.kernel".into(), &self.lfe_kernel);
        f("lfe.bias".into(), &self.lfe_bias);
        f("lfe.prelu".into(), &self.prelu_slope);
        f("head.kernel".into(), &self.head_kernel);
        f("head.bias".into(), &self.head_bias);
    }

    /// Mutable leaves in [`NetworkParams::visit`] order.
    pub fn leaves_mut(&mut self) -> Vec<&mut L> {
        let mut out = Vec::new();
        for p in &mut self.paths {
            out.extend(p.phi_real.leaves_mut());
            out.extend(p.phi_imag.leaves_mut());
        }
        out.extend([
            &mut self.lfe_kernel,
            &mut self.lfe_bias,
            &mut self.prelu_slope,
            &mut self.head_kernel,
            &mut self.head_bias,
        ]);
        out
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit(&mut |n, _| out.push(n));
        out
    }
}

impl<T: Scalar> NetworkParams<Tensor<T>> {
    /// Training initialization for a `w × h` input: every weight drawn from
    /// `U(−1/√fan_in, 1/√fan_in)`, biases zero except the slicing head,
    /// which starts at `W ≡ 1, b ≡ 0`.
    pub fn init<R: Rng>(cfg: &NetworkConfig, input: (usize, usize), rng: &mut R) -> Result<Self> {
        Self::build(cfg, input, MixerInit::Uniform, true, rng)
    }

    /// Exact identity network: residual mixers with zero second layers,
    /// zero convolutions and the identity slicing bias. First-layer mixer
    /// weights stay random so the mixers are still live.
    pub fn identity<R: Rng>(cfg: &NetworkConfig, input: (usize, usize), rng: &mut R) -> Result<Self> {
        if cfg.head == Head::Direct {
            return Err(Error::Config("a direct head has no identity configuration".into()));
        }
        Self::build(cfg, input, MixerInit::ZeroResidual, false, rng)
    }

    fn build<R: Rng>(
        cfg: &NetworkConfig,
        input: (usize, usize),
        mixer_init: MixerInit,
        random_convs: bool,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let sizes = cfg.path_sizes_for(input.0, input.1)?;
        let c = cfg.channels;
        let paths = sizes
            .iter()
            .map(|&(w, h)| PathParams {
                phi_real: CubicMixer::init((w, h, c), cfg.blocks_per_path, cfg.hidden_ratio, mixer_init, rng),
                phi_imag: CubicMixer::init((w, h, c), cfg.blocks_per_path, cfg.hidden_ratio, mixer_init, rng),
            })
            .collect();
        let ct = cfg.fused_channels();
        let k = cfg.lfe_kernel;
        let hc = cfg.head_channels();
        let (lfe_kernel, head_kernel) = if random_convs {
            let lfe = uniform_fan_in(&[k, k, ct, ct], k * k * ct, rng);
            (lfe, uniform_fan_in(&[1, 1, ct, hc], ct, rng))
        } else {
            (Tensor::zeros(&[k, k, ct, ct]), Tensor::zeros(&[1, 1, ct, hc]))
        };
        let head_bias = match cfg.head {
            Head::Direct => Tensor::zeros(&[hc]),
            Head::Slicing => identity_slice_bias(c),
        };
        Ok(NetworkParams {
            paths,
            lfe_kernel,
            lfe_bias: Tensor::zeros(&[ct]),
            prelu_slope: Tensor::full(&[ct], T::of(0.25)),
            head_kernel,
            head_bias,
        })
    }

    /// Number of scalar parameters.
    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t| n += t.len());
        n
    }

    /// Parameters of the spectral paths only.
    pub fn mixer_param_count(&self) -> usize {
        self.paths
            .iter()
            .map(|p| p.phi_real.param_count() + p.phi_imag.param_count())
            .sum()
    }

    /// Name → shape for every leaf.
    pub fn shapes(&self) -> BTreeMap<String, Vec<usize>> {
        let mut out = BTreeMap::new();
        self.visit(&mut |n, t| {
            out.insert(n, t.shape().to_vec());
        });
        out
    }

    /// Records every leaf on `tape` as a gradient-tracked parameter.
    pub fn bind(&self, tape: &mut Tape<T>) -> NetworkParams<NodeId> {
        self.map(&mut |t| tape.param(t.clone()))
    }

    /// Records every leaf on `tape` as a constant.
    pub fn bind_constant(&self, tape: &mut Tape<T>) -> NetworkParams<NodeId> {
        self.map(&mut |t| tape.constant(t.clone()))
    }
}

/// Head bias `(1, …, 1, 0, …, 0)`: unit scales then zero offsets.
pub fn identity_slice_bias<T: Scalar>(channels: usize) -> Tensor<T> {
    Tensor::from_vec(
        (0..2 * channels)
            .map(|i| if i < channels { T::one() } else { T::zero() })
            .collect(),
    )
}

/// Per-channel scale and offset planes, each `[W, H, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceMaps<T> {
    pub scale: Vec<Tensor<T>>,
    pub offset: Vec<Tensor<T>>,
}

impl<T: Scalar> SliceMaps<T> {
    /// Splits a `[W, H, 2C]` tensor laid out as `(W_1..W_C, b_1..b_C)`.
    pub fn from_tensor(maps: &Tensor<T>) -> Result<Self> {
        let (_, _, c2) = maps.dims3()?;
        if c2 % 2 != 0 {
            return Err(Error::dim("slice maps", format!("odd channel count {c2}")));
        }
        let c = c2 / 2;
        Ok(SliceMaps {
            scale: (0..c).map(|k| maps.channel(k)).collect::<Result<_>>()?,
            offset: (c..c2).map(|k| maps.channel(k)).collect::<Result<_>>()?,
        })
    }

    pub fn to_tensor(&self) -> Result<Tensor<T>> {
        let parts: Vec<&Tensor<T>> = self.scale.iter().chain(&self.offset).collect();
        crate::ops::concat_channels(&parts)
    }

    /// Constant maps `W ≡ scale`, `b ≡ offset` over `w × h`.
    pub fn constant(w: usize, h: usize, channels: usize, scale: T, offset: T) -> Self {
        SliceMaps {
            scale: vec![Tensor::full(&[w, h, 1], scale); channels],
            offset: vec![Tensor::full(&[w, h, 1], offset); channels],
        }
    }
}

fn check_slice_shapes<T: Scalar>(b: &Tensor<T>, m: &SliceMaps<T>) -> Result<(usize, usize, usize)> {
    let (w, h, c) = b.dims3()?;
    if m.scale.len() != c || m.offset.len() != c {
        return Err(Error::dim(
            "slice_apply",
            format!("{} map pairs for {c} channels", m.scale.len()),
        ));
    }
    for p in m.scale.iter().chain(&m.offset) {
        if p.shape() != [w, h, 1] {
            return Err(Error::dim(
                "slice_apply",
                format!("map {:?} vs image {w}x{h}", p.shape()),
            ));
        }
    }
    Ok((w, h, c))
}

/// `out_c = W_c ⊙ B_c + b_c` for every channel.
pub fn slice_apply<T: Scalar>(b: &Tensor<T>, m: &SliceMaps<T>) -> Result<Tensor<T>> {
    let (w, h, c) = check_slice_shapes(b, m)?;
    Ok(Tensor::from_fn3(w, h, c, |x, y, k| {
        m.scale[k].at3(x, y, 0) * b.at3(x, y, k) + m.offset[k].at3(x, y, 0)
    }))
}

/// `out_c = (W_c ⊙ B_c + b_c)²` for every channel.
pub fn slice_apply_poly<T: Scalar>(b: &Tensor<T>, m: &SliceMaps<T>) -> Result<Tensor<T>> {
    Ok(slice_apply(b, m)?.map(|v| v * v))
}

/// Downsample to `size`, apply the path's spectral mixers, return the
/// low-resolution map.
pub fn scale_path<T: Scalar>(
    tape: &mut Tape<T>,
    b: NodeId,
    size: (usize, usize),
    path: &PathParams<NodeId>,
    feed: PlaneFeed,
) -> Result<NodeId> {
    let low = tape.resample(b, size.0, size.1, ResampleMethod::Bicubic)?;
    wfp_apply(tape, low, &path.phi_real, &path.phi_imag, feed)
}

/// Runs every path and upsamples each result back to the input size.
pub fn multiscale_forward<T: Scalar>(
    tape: &mut Tape<T>,
    b: NodeId,
    params: &NetworkParams<NodeId>,
    cfg: &NetworkConfig,
) -> Result<Vec<NodeId>> {
    let (w, h, _) = tape.value(b).dims3()?;
    let sizes = cfg.path_sizes_for(w, h)?;
    if sizes.len() != params.paths.len() {
        return Err(Error::dim(
            "multiscale_forward",
            format!("{} paths configured, {} parameterized", sizes.len(), params.paths.len()),
        ));
    }
    let mut out = Vec::with_capacity(sizes.len());
    for (&size, path) in sizes.iter().zip(&params.paths) {
        tape.set_stage(stage::LOW_RES);
        let low = scale_path(tape, b, size, path, cfg.plane_feed)?;
        tape.set_stage(stage::UPSAMPLE);
        out.push(tape.resample(low, w, h, ResampleMethod::Bicubic)?);
    }
    Ok(out)
}

/// Concatenate input and path maps, convolve, activate and squeeze to the
/// head output (slicing maps, or the image for a direct head).
pub fn local_feature_fuse<T: Scalar>(
    tape: &mut Tape<T>,
    b: NodeId,
    features: &[NodeId],
    params: &NetworkParams<NodeId>,
) -> Result<NodeId> {
    tape.set_stage(stage::FULL_RES);
    let mut parts = Vec::with_capacity(features.len() + 1);
    parts.push(b);
    parts.extend_from_slice(features);
    let fused = tape.concat_channels(&parts)?;
    let local = tape.conv2d(fused, params.lfe_kernel, params.lfe_bias)?;
    let local = tape.prelu(local, params.prelu_slope)?;
    tape.conv2d(local, params.head_kernel, params.head_bias)
}

/// Affine slicing of `b` by a `[W, H, 2C]` map tensor.
pub fn slice_apply_node<T: Scalar>(tape: &mut Tape<T>, b: NodeId, maps: NodeId) -> Result<NodeId> {
    let c = tape.value(b).dims3()?.2;
    let mc = tape.value(maps).dims3()?.2;
    if mc != 2 * c {
        return Err(Error::dim(
            "slice_apply",
            format!("{mc} map channels for {c} image channels"),
        ));
    }
    let scale = tape.slice_channels(maps, 0, c)?;
    let offset = tape.slice_channels(maps, c, 2 * c)?;
    let scaled = tape.mul(scale, b)?;
    tape.add(scaled, offset)
}

/// Full forward pass; returns the output image node.
pub fn deblur_forward<T: Scalar>(
    tape: &mut Tape<T>,
    b: NodeId,
    params: &NetworkParams<NodeId>,
    cfg: &NetworkConfig,
) -> Result<NodeId> {
    let c = tape.value(b).dims3()?.2;
    if c != cfg.channels {
        return Err(Error::dim(
            "deblur_forward",
            format!("{c} input channels, network expects {}", cfg.channels),
        ));
    }
    let features = multiscale_forward(tape, b, params, cfg)?;
    let head = local_feature_fuse(tape, b, &features, params)?;
    match cfg.head {
        Head::Direct => Ok(head),
        Head::Slicing => {
            let out = slice_apply_node(tape, b, head)?;
            match cfg.slicing_mode {
                SlicingMode::Affine => Ok(out),
                SlicingMode::Polynomial => tape.square(out),
            }
        }
    }
}

/// Value-level inference (no clamping).
pub fn deblur<T: Scalar>(b: &Tensor<T>, params: &NetworkParams<Tensor<T>>, cfg: &NetworkConfig) -> Result<Tensor<T>> {
    let mut tape = Tape::new();
    let p = params.bind_constant(&mut tape);
    let x = tape.constant(b.clone());
    let out = deblur_forward(&mut tape, x, &p, cfg)?;
    Ok(tape.value(out).clone())
}

/// Multiply-add counts per stage of one forward pass over a `w × h` input.
pub fn forward_flops<T: Scalar>(
    params: &NetworkParams<Tensor<T>>,
    cfg: &NetworkConfig,
    w: usize,
    h: usize,
) -> Result<BTreeMap<&'static str, u64>> {
    let mut tape = Tape::new();
    let p = params.bind_constant(&mut tape);
    let x = tape.constant(Tensor::zeros(&[w, h, cfg.channels]));
    deblur_forward(&mut tape, x, &p, cfg)?;
    Ok(tape.flops_by_stage().clone())
}
