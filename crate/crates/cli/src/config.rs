//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Every key is optional and
//! unknown keys are errors. Relative paths are taken as given, i.e.
//! relative to the working directory.
//!
//! | key | type | default | meaning |
//! |---|---|---|---|
//! | `seed` | int | 0 | dataset, initialization and batch order |
//! | `lr` | real | 1e-4 | Adam learning rate |
//! | `batch_size` | int | 4 | |
//! | `iterations` | int | 500 | |
//! | `lambda_p` | real | 0.03 | perceptual-proxy weight |
//! | `log_every` | int | 50 | metric CSV row interval |
//! | `ablation` | variant | full | architecture variant for `train` |
//! | `ablations` | variant list | all six | variants run by `ablate` |
//! | `path_scales` | real list | 0.25,0.125,0.0625 | path scale factors |
//! | `path_sizes` | `WxH` list | from scales | fixed path sizes |
//! | `blocks_per_path` | int | 4 | cubic-mixer blocks per φ network |
//! | `hidden_ratio` | real | 1 | MLP hidden width / axis length |
//! | `lfe_kernel` | 1 or 3 | 3 | local feature conv size |
//! | `slicing` | affine, polynomial | affine | |
//! | `init` | uniform, identity | uniform | parameter initialization for `train` |
//! | `dataset` | dir | none | sharp source PPMs; synthetic scenes if unset |
//! | `synthetic_sources` | int | 10 | number of synthetic scenes |
//! | `source_size` | int | 128 | side of synthetic scenes |
//! | `patch_size` | int | 96 | |
//! | `train_pairs` | int | 32 | |
//! | `held_out_pairs` | int | 8 | |
//! | `blur_specs` | int | 64 | blur kernels sampled for the dataset |
//! | `checkpoint` | path | none | checkpoint written by `train` |
//! | `metrics` | path | none | metric CSV written by `train` |
//! | `out` | path | none | ablation table written by `ablate` |

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use cubemix::net::SlicingMode;
use cubemix::training::{DatasetConfig, TrainConfig};
use cubemix::{Ablation, NetworkConfig};

use crate::error::{CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitKind {
    Uniform,
    Identity,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DataSource {
    Synthetic { count: usize, size: usize },
    Dir(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub net: NetworkConfig,
    pub train: TrainConfig,
    pub init: InitKind,
    pub ablations: Vec<Ablation>,
    pub source: DataSource,
    pub dataset: DatasetConfig,
    pub blur_specs: usize,
    pub checkpoint: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            net: NetworkConfig::default(),
            train: TrainConfig::default(),
            init: InitKind::Uniform,
            ablations: Ablation::ALL.to_vec(),
            source: DataSource::Synthetic { count: 10, size: 128 },
            dataset: DatasetConfig::default(),
            blur_specs: 64,
            checkpoint: None,
            metrics: None,
            out: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> CliResult<T> {
    v.parse()
        .map_err(|_| CliError::Usage(format!("{key}: cannot parse {v:?}")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> CliResult<Vec<T>> {
    v.split(',').map(|s| parse(key, s.trim())).collect()
}

fn parse_size(key: &str, v: &str) -> CliResult<(usize, usize)> {
    let (w, h) = v
        .split_once('x')
        .ok_or_else(|| CliError::Usage(format!("{key}: expected WxH, got {v:?}")))?;
    Ok((parse(key, w.trim())?, parse(key, h.trim())?))
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut cfg = RunConfig::default();
        let (mut count, mut size) = (10, 128);
        let mut dir = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, v) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| CliError::Usage(format!("line {}: expected key = value", n + 1)))?;
            match key {
                "seed" => cfg.train.seed = parse(key, v)?,
                "lr" => cfg.train.lr = parse(key, v)?,
                "batch_size" => cfg.train.batch_size = parse(key, v)?,
                "iterations" => cfg.train.iterations = parse(key, v)?,
                "lambda_p" => cfg.train.lambda_p = parse(key, v)?,
                "log_every" => cfg.train.log_every = parse(key, v)?,
                "ablation" => cfg.train.ablation = parse(key, v)?,
                "ablations" => cfg.ablations = parse_list(key, v)?,
                "path_scales" => cfg.net.path_scales = parse_list(key, v)?,
                "path_sizes" => {
                    let sizes = v
                        .split(',')
                        .map(|s| parse_size(key, s.trim()))
                        .collect::<CliResult<_>>()?;
                    cfg.net.path_sizes = Some(sizes);
                }
                "blocks_per_path" => cfg.net.blocks_per_path = parse(key, v)?,
                "hidden_ratio" => cfg.net.hidden_ratio = parse(key, v)?,
                "lfe_kernel" => cfg.net.lfe_kernel = parse(key, v)?,
                "slicing" => {
                    cfg.net.slicing_mode = match v {
                        "affine" => SlicingMode::Affine,
                        "polynomial" => SlicingMode::Polynomial,
                        _ => {
                            return Err(CliError::Usage(format!(
                                "slicing: expected affine or polynomial, got {v:?}"
                            )))
                        }
                    }
                }
                "init" => {
                    cfg.init = match v {
                        "uniform" => InitKind::Uniform,
                        "identity" => InitKind::Identity,
                        _ => {
                            return Err(CliError::Usage(format!(
                                "init: expected uniform or identity, got {v:?}"
                            )))
                        }
                    }
                }
                "dataset" => dir = Some(PathBuf::from(v)),
                "synthetic_sources" => count = parse(key, v)?,
                "source_size" => size = parse(key, v)?,
                "patch_size" => cfg.dataset.patch_size = parse(key, v)?,
                "train_pairs" => cfg.dataset.train_pairs = parse(key, v)?,
                "held_out_pairs" => cfg.dataset.held_out_pairs = parse(key, v)?,
                "blur_specs" => cfg.blur_specs = parse(key, v)?,
                "checkpoint" => cfg.checkpoint = Some(PathBuf::from(v)),
                "metrics" => cfg.metrics = Some(PathBuf::from(v)),
                "out" => cfg.out = Some(PathBuf::from(v)),
                _ => return Err(CliError::Usage(format!("line {}: unknown key {key:?}", n + 1))),
            }
        }
        cfg.source = match dir {
            Some(d) => DataSource::Dir(d),
            None => DataSource::Synthetic { count, size },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Usage(m) => CliError::Usage(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Checks everything that can be checked without touching the data.
    pub fn validate(&self) -> CliResult<()> {
        self.train.validate()?;
        self.net.validate()?;
        let p = self.dataset.patch_size;
        self.net.with_ablation(self.train.ablation).path_sizes_for(p, p)?;
        if self.dataset.train_pairs == 0 {
            return Err(CliError::Usage("train_pairs must be at least 1".into()));
        }
        if self.blur_specs == 0 {
            return Err(CliError::Usage("blur_specs must be at least 1".into()));
        }
        if let DataSource::Synthetic { count, size } = self.source {
            if count < 2 {
                return Err(CliError::Usage("synthetic_sources must be at least 2".into()));
            }
            if size < p {
                return Err(CliError::Usage(format!(
                    "source_size {size} is smaller than patch_size {p}"
                )));
            }
        }
        Ok(())
    }

    /// Network configuration for `ablation`, path sizes pinned to the patch size.
    pub fn network_for(&self, ablation: Ablation) -> CliResult<NetworkConfig> {
        let p = self.dataset.patch_size;
        Ok(self.net.with_ablation(ablation).pinned(p, p)?)
    }
}
