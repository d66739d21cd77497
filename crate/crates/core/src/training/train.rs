use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::net::{deblur, deblur_forward, Ablation, NetworkConfig, NetworkParams};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::adam::{Adam, AdamConfig};
use super::data::{Dataset, Pair};
use super::loss::{PerceptualProxy, DEFAULT_LAMBDA_P};
use super::metrics::{psnr, ssim};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub lambda_p: f64,
    pub seed: u64,
    pub ablation: Ablation,
    /// A metric row is logged every `log_every` iterations and after the last.
    pub log_every: usize,
    /// Worker threads for per-sample gradients within a batch.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            batch_size: 4,
            iterations: 500,
            lambda_p: DEFAULT_LAMBDA_P,
            seed: 0,
            ablation: Ablation::Full,
            log_every: 50,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr {} must be positive", self.lr)));
        }
        if !(self.lambda_p >= 0.0 && self.lambda_p.is_finite()) {
            return Err(Error::Config(format!("lambda_p {} must be nonnegative", self.lambda_p)));
        }
        if self.batch_size == 0 || self.log_every == 0 || self.threads == 0 {
            return Err(Error::Config(
                "batch_size, log_every and threads must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub iteration: usize,
    pub loss: f64,
    pub l1: f64,
    pub perceptual: f64,
    pub psnr_val: f64,
    pub ssim_val: f64,
}

pub const METRIC_CSV_HEADER: &str = "iteration,loss,l1,perceptual,psnr_val,ssim_val";

pub fn metric_csv(rows: &[MetricRow]) -> String {
    let mut s = String::from(METRIC_CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.iteration, r.loss, r.l1, r.perceptual, r.psnr_val, r.ssim_val
        );
    }
    s
}

pub struct TrainOutcome<T> {
    pub params: NetworkParams<Tensor<T>>,
    pub log: Vec<MetricRow>,
}

struct SampleResult<T> {
    grads: Vec<Tensor<T>>,
    loss: f64,
    l1: f64,
    perceptual: f64,
}

fn sample_gradient<T: Scalar>(
    params: &NetworkParams<Tensor<T>>,
    cfg: &NetworkConfig,
    proxy: &PerceptualProxy<T>,
    pair: &Pair<T>,
    lambda_p: f64,
) -> Result<SampleResult<T>> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let input = tape.constant(pair.blurry.clone());
    let target = tape.constant(pair.sharp.clone());
    let pred = deblur_forward(&mut tape, input, &bound, cfg)?;
    let nodes = proxy.total_loss(&mut tape, pred, target, lambda_p)?;
    let scalar = |id| tape.value(id).data()[0].to_f64_lossy();
    let (loss, l1, perceptual) = (scalar(nodes.total), scalar(nodes.l1), scalar(nodes.perceptual));
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            op: format!("loss on {}", pair.id),
        });
    }
    let mut grads = tape.backward(nodes.total)?;
    let mut out = Vec::new();
    let mut shapes = Vec::new();
    params.visit(&mut |_, t| shapes.push(t.shape().to_vec()));
    let mut k = 0;
    bound.visit(&mut |_, &id| {
        out.push(grads.take(id).unwrap_or_else(|| Tensor::zeros(&shapes[k])));
        k += 1;
    });
    Ok(SampleResult {
        grads: out,
        loss,
        l1,
        perceptual,
    })
}

/// Per-sample results for `batch`, computed on up to `threads` workers and
/// returned in batch order.
fn batch_gradients<T: Scalar>(
    params: &NetworkParams<Tensor<T>>,
    cfg: &NetworkConfig,
    proxy: &PerceptualProxy<T>,
    batch: &[&Pair<T>],
    lambda_p: f64,
    threads: usize,
) -> Result<Vec<SampleResult<T>>> {
    if threads <= 1 || batch.len() <= 1 {
        return batch
            .iter()
            .map(|p| sample_gradient(params, cfg, proxy, p, lambda_p))
            .collect();
    }
    let chunk = batch.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = batch
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|p| sample_gradient(params, cfg, proxy, p, lambda_p))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        let mut out = Vec::with_capacity(batch.len());
        for h in handles {
            out.extend(h.join().expect("gradient worker panicked")?);
        }
        Ok(out)
    })
}

/// Adam on the composite loss over seeded mini-batches of `data.train`,
/// logging held-out metrics along the way. The whole run is a function of
/// its inputs and `cfg.seed`; thread count does not change the result.
pub fn train_loop<T: Scalar>(
    cfg: &TrainConfig,
    net_cfg: &NetworkConfig,
    data: &Dataset<T>,
    mut params: NetworkParams<Tensor<T>>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    net_cfg.validate()?;
    if cfg.iterations == 0 {
        return Ok(TrainOutcome {
            params,
            log: Vec::new(),
        });
    }
    if data.train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let proxy = PerceptualProxy::new(net_cfg.channels);
    let shapes: Vec<Vec<usize>> = {
        let mut s = Vec::new();
        params.visit(&mut |_, t| s.push(t.shape().to_vec()));
        s
    };
    let mut opt = Adam::new(AdamConfig::with_lr(cfg.lr), shapes.iter().map(Vec::as_slice))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = Vec::new();
    let mut log = Vec::new();
    let inv_batch = T::one() / T::of(cfg.batch_size as f64);

    for it in 1..=cfg.iterations {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size {
            if order.is_empty() {
                order = (0..data.train.len()).collect();
                order.shuffle(&mut rng);
            }
            batch.push(&data.train[order.pop().expect("refilled")]);
        }
        let results =
            batch_gradients(&params, net_cfg, &proxy, &batch, cfg.lambda_p, cfg.threads).map_err(|e| match e {
                Error::NonFinite { op } => Error::NonFinite {
                    op: format!("{op} at iteration {it}"),
                },
                other => other,
            })?;

        let mut grads: Vec<Tensor<T>> = shapes.iter().map(|s| Tensor::zeros(s)).collect();
        let (mut loss, mut l1, mut perc) = (0.0, 0.0, 0.0);
        for r in &results {
            for (acc, g) in grads.iter_mut().zip(&r.grads) {
                acc.add_assign(g);
            }
            loss += r.loss;
            l1 += r.l1;
            perc += r.perceptual;
        }
        for g in &mut grads {
            *g = g.scale(inv_batch);
        }
        opt.step(&mut params.leaves_mut(), &grads)?;

        if it % cfg.log_every == 0 || it == cfg.iterations {
            let n = results.len() as f64;
            let (psnr_val, ssim_val) = if data.held_out.is_empty() {
                (f64::NAN, f64::NAN)
            } else {
                let e = evaluate(&params, net_cfg, &data.held_out)?;
                (e.mean_psnr, e.mean_ssim)
            };
            log.push(MetricRow {
                iteration: it,
                loss: loss / n,
                l1: l1 / n,
                perceptual: perc / n,
                psnr_val,
                ssim_val,
            });
        }
    }
    Ok(TrainOutcome { params, log })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub id: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub rows: Vec<EvalRow>,
}

impl Evaluation {
    pub fn from_rows(rows: Vec<EvalRow>) -> Self {
        let n = rows.len().max(1) as f64;
        Evaluation {
            mean_psnr: rows.iter().map(|r| r.psnr).sum::<f64>() / n,
            mean_ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
            rows,
        }
    }
}

/// Scores the network output for one image, clamped to `[0, 1]` as on export.
pub fn eval_image<T: Scalar>(
    params: &NetworkParams<Tensor<T>>,
    cfg: &NetworkConfig,
    id: &str,
    blurry: &Tensor<T>,
    sharp: &Tensor<T>,
) -> Result<EvalRow> {
    let out = deblur(blurry, params, cfg)?.map(|v| v.max(T::zero()).min(T::one()));
    Ok(EvalRow {
        id: id.to_string(),
        psnr: psnr(&out, sharp, 1.0)?,
        ssim: ssim(&out, sharp)?,
    })
}

/// [`eval_image`] over every pair.
pub fn evaluate<T: Scalar>(
    params: &NetworkParams<Tensor<T>>,
    cfg: &NetworkConfig,
    pairs: &[Pair<T>],
) -> Result<Evaluation> {
    let rows = pairs
        .iter()
        .map(|p| eval_image(params, cfg, &p.id, &p.blurry, &p.sharp))
        .collect::<Result<Vec<_>>>()?;
    Ok(Evaluation::from_rows(rows))
}

/// Blurry input versus sharp target, the number a model has to beat.
pub fn baseline<T: Scalar>(pairs: &[Pair<T>]) -> Result<Evaluation> {
    let rows = pairs
        .iter()
        .map(|p| {
            Ok(EvalRow {
                id: p.id.clone(),
                psnr: psnr(&p.blurry, &p.sharp, 1.0)?,
                ssim: ssim(&p.blurry, &p.sharp)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Evaluation::from_rows(rows))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: Ablation,
    pub result: std::result::Result<Evaluation, Error>,
}

/// Trains and evaluates each variant from the same seed on the same data.
/// `full` is always run first; failures are recorded per variant.
pub fn run_ablation<T: Scalar>(
    variants: &[Ablation],
    net_cfg: &NetworkConfig,
    train_cfg: &TrainConfig,
    data: &Dataset<T>,
) -> Vec<AblationRow> {
    let mut list = vec![Ablation::Full];
    list.extend(variants.iter().copied().filter(|&v| v != Ablation::Full));
    list.dedup();
    list.into_iter()
        .map(|variant| {
            let result = (|| {
                let sample = data
                    .train
                    .first()
                    .ok_or_else(|| Error::Config("training split is empty".into()))?;
                let (w, h, _) = sample.blurry.dims3()?;
                let cfg = net_cfg.with_ablation(variant).pinned(w, h)?;
                let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
                let params = NetworkParams::init(&cfg, (w, h), &mut rng)?;
                let tc = TrainConfig {
                    ablation: variant,
                    ..train_cfg.clone()
                };
                let trained = train_loop(&tc, &cfg, data, params)?;
                evaluate(&trained.params, &cfg, &data.held_out)
            })();
            AblationRow { variant, result }
        })
        .collect()
}
