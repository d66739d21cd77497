//! The five commands, as library functions. The `run_*` functions do file
//! I/O and printing; the others are pure and used by tests.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use cubemix::net::deblur;
use cubemix::ops::resample;
use cubemix::spectral::{fft2, fftshift, phase_spectrum, render_spectrum};
use cubemix::training::{
    baseline, eval_image, make_dataset, metric_csv, run_ablation, sample_blur_specs, synthetic_sources, train_loop,
    AblationRow, Dataset, EvalRow, Evaluation, MetricRow,
};
use cubemix::{Error, NetworkConfig, Params32, PlaneFeed, ResampleMethod, SpectralPlanes, Tensor32};

use crate::checkpoint::Checkpoint;
use crate::config::{DataSource, InitKind, RunConfig};
use crate::error::{CliError, CliResult};
use crate::image::{read_ppm, write_ppm};

/// Spectrum renderings use this value range before being mapped to pixels.
pub const SPECTRUM_RANGE: (f32, f32) = (0.0, 10.0);

/// Worker threads from `CUBEMIX_THREADS`, 1 when unset.
pub fn threads_from_env() -> CliResult<usize> {
    match std::env::var("CUBEMIX_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(CliError::Usage(format!(
                "CUBEMIX_THREADS must be a positive integer, got {v:?}"
            ))),
        },
    }
}

fn ppm_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut files = Vec::new();
    for e in entries {
        let p = e.map_err(|e| CliError::io(dir, e))?.path();
        if p.extension().is_some_and(|x| x.eq_ignore_ascii_case("ppm")) {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

pub fn build_dataset(cfg: &RunConfig) -> CliResult<Dataset<f32>> {
    let seed = cfg.train.seed;
    let sources = match &cfg.source {
        DataSource::Synthetic { count, size } => synthetic_sources(*count, *size, seed),
        DataSource::Dir(dir) => {
            let files = ppm_files(dir)?;
            if files.is_empty() {
                return Err(CliError::Usage(format!("{}: no .ppm source images", dir.display())));
            }
            files.iter().map(|f| read_ppm(f)).collect::<CliResult<_>>()?
        }
    };
    let specs = sample_blur_specs(cfg.blur_specs, &mut ChaCha8Rng::seed_from_u64(seed.wrapping_add(1)));
    Ok(make_dataset(&sources, &specs, &cfg.dataset, seed)?)
}

/// SHA-256 over every pair's id and pixel data, hex encoded.
pub fn dataset_digest(data: &Dataset<f32>) -> String {
    let mut h = Sha256::new();
    for p in data.train.iter().chain(&data.held_out) {
        h.update(p.id.as_bytes());
        for t in [&p.blurry, &p.sharp] {
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn init_params(cfg: &RunConfig, net: &NetworkConfig) -> CliResult<Params32> {
    let p = cfg.dataset.patch_size;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    Ok(match cfg.init {
        InitKind::Uniform => Params32::init(net, (p, p), &mut rng)?,
        InitKind::Identity => Params32::identity(net, (p, p), &mut rng)?,
    })
}

pub struct TrainReport {
    pub checkpoint: Checkpoint,
    pub log: Vec<MetricRow>,
    pub baseline: Evaluation,
    pub result: Evaluation,
    pub dataset_digest: String,
}

/// Builds the dataset, trains and evaluates on the held-out split.
pub fn train(cfg: &RunConfig) -> CliResult<TrainReport> {
    cfg.validate()?;
    let data = build_dataset(cfg)?;
    let net = cfg.network_for(cfg.train.ablation)?;
    let params = init_params(cfg, &net)?;
    let outcome = train_loop(&cfg.train, &net, &data, params)?;
    let result = cubemix::training::evaluate(&outcome.params, &net, &data.held_out)?;
    Ok(TrainReport {
        baseline: baseline(&data.held_out)?,
        result,
        log: outcome.log,
        dataset_digest: dataset_digest(&data),
        checkpoint: Checkpoint {
            config: net,
            params: outcome.params,
        },
    })
}

/// Deblurs `img` and clamps to `[0, 1]`.
pub fn infer(ck: &Checkpoint, img: &Tensor32) -> CliResult<Tensor32> {
    Ok(deblur(img, &ck.params, &ck.config)?.map(|v| v.clamp(0.0, 1.0)))
}

/// `(id, blurry, sharp)` triples from `<dir>/blurry/*.ppm` and
/// `<dir>/sharp/*.ppm`, matched by file name.
pub fn load_eval_set(dir: &Path) -> CliResult<Vec<(String, Tensor32, Tensor32)>> {
    let blurry = ppm_files(&dir.join("blurry"))?;
    let sharp = ppm_files(&dir.join("sharp"))?;
    let name = |p: &PathBuf| {
        p.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default()
    };
    let bn: Vec<String> = blurry.iter().map(name).collect();
    let sn: Vec<String> = sharp.iter().map(name).collect();
    if bn != sn {
        return Err(CliError::Usage(format!(
            "{}: blurry/ and sharp/ hold different file names",
            dir.display()
        )));
    }
    if bn.is_empty() {
        return Err(CliError::Usage(format!("{}: evaluation set is empty", dir.display())));
    }
    blurry
        .iter()
        .zip(&sharp)
        .map(|(b, s)| {
            let id = b
                .file_stem()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            let (bi, si) = (read_ppm(b)?, read_ppm(s)?);
            if bi.shape() != si.shape() {
                return Err(CliError::Usage(format!(
                    "{id}: blurry {:?} vs sharp {:?}",
                    bi.shape(),
                    si.shape()
                )));
            }
            Ok((id, bi, si))
        })
        .collect()
}

pub fn evaluate_set(ck: &Checkpoint, set: &[(String, Tensor32, Tensor32)]) -> CliResult<Evaluation> {
    let rows = set
        .iter()
        .map(|(id, b, s)| eval_image(&ck.params, &ck.config, id, b, s))
        .collect::<Result<Vec<EvalRow>, Error>>()?;
    Ok(Evaluation::from_rows(rows))
}

pub fn eval_csv(e: &Evaluation) -> String {
    let mut s = String::from("image_id,psnr,ssim\n");
    for r in &e.rows {
        let _ = writeln!(s, "{},{},{}", r.id, r.psnr, r.ssim);
    }
    s
}

pub fn summary_line(e: &Evaluation) -> String {
    format!("PSNR={} SSIM={}", e.mean_psnr, e.mean_ssim)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("variant,psnr,ssim\n");
    for r in rows {
        let _ = match &r.result {
            Ok(e) => writeln!(s, "{},{},{}", r.variant, e.mean_psnr, e.mean_ssim),
            Err(_) => writeln!(s, "{},nan,nan", r.variant),
        };
    }
    s
}

pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub dataset_digest: String,
}

pub fn ablate(cfg: &RunConfig) -> CliResult<AblationReport> {
    cfg.validate()?;
    for &a in &cfg.ablations {
        cfg.network_for(a)?;
    }
    let data = build_dataset(cfg)?;
    let rows = run_ablation(&cfg.ablations, &cfg.net, &cfg.train, &data);
    Ok(AblationReport {
        rows,
        dataset_digest: dataset_digest(&data),
    })
}

fn to_pixels(t: &Tensor32) -> Tensor32 {
    let (lo, hi) = SPECTRUM_RANGE;
    t.map(|v| (v - lo) / (hi - lo))
}

fn plane_image(plane: &Tensor32) -> Tensor32 {
    let zero = Tensor32::zeros(plane.shape());
    let s = SpectralPlanes::new(plane.clone(), zero).expect("same shape");
    to_pixels(&render_spectrum(&s, SPECTRUM_RANGE.0, SPECTRUM_RANGE.1))
}

/// Named renderings of `img`'s spectrum: `real`, `imag`, `magnitude` and
/// `phase`. With a checkpoint, also `block{k}` for the spectrum after the
/// k-th mixer block of the top path.
pub fn spectrum(img: &Tensor32, ck: Option<&Checkpoint>) -> CliResult<Vec<(String, Tensor32)>> {
    let s = fft2(img)?;
    let pi = std::f32::consts::PI;
    let mut out = vec![
        ("real".to_string(), plane_image(&s.real)),
        ("imag".to_string(), plane_image(&s.imag)),
        (
            "magnitude".to_string(),
            to_pixels(&render_spectrum(&s, SPECTRUM_RANGE.0, SPECTRUM_RANGE.1)),
        ),
        (
            "phase".to_string(),
            fftshift(&phase_spectrum(&s)).map(|p| (p + pi) / (2.0 * pi)),
        ),
    ];
    if let Some(ck) = ck {
        let sizes = ck.config.path_sizes.as_ref().expect("checkpoint configs are pinned");
        let (w, h) = sizes[0];
        let low = resample(img, w, h, ResampleMethod::Bicubic)?;
        let s = fft2(&low)?;
        let (mut re, mut im) = match ck.config.plane_feed {
            PlaneFeed::Split => (s.real, s.imag),
            PlaneFeed::DoubleReal => (s.real.clone(), s.real),
            PlaneFeed::DoubleImag => (s.imag.clone(), s.imag),
        };
        let path = &ck.params.paths[0];
        for (k, (br, bi)) in path.phi_real.blocks.iter().zip(&path.phi_imag.blocks).enumerate() {
            re = br.forward(&re)?;
            im = bi.forward(&im)?;
            let planes = SpectralPlanes::new(re.clone(), im.clone())?;
            out.push((
                format!("block{}", k + 1),
                to_pixels(&render_spectrum(&planes, SPECTRUM_RANGE.0, SPECTRUM_RANGE.1)),
            ));
        }
    }
    Ok(out)
}

fn check_writable(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(d) if !d.as_os_str().is_empty() && !d.is_dir() => Err(CliError::Usage(format!(
            "{}: directory {} does not exist",
            path.display(),
            d.display()
        ))),
        _ => Ok(()),
    }
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Flags shared by every command.
#[derive(Clone, Debug, Default)]
pub struct Common {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl Common {
    fn run_config(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        cfg.train.threads = threads_from_env()?;
        if let DataSource::Dir(d) = &cfg.source {
            if !d.is_dir() {
                return Err(CliError::Usage(format!(
                    "dataset directory {} does not exist",
                    d.display()
                )));
            }
        }
        Ok(cfg)
    }

    fn require_checkpoint(&self) -> CliResult<&Path> {
        self.checkpoint
            .as_deref()
            .ok_or_else(|| CliError::Usage("--checkpoint is required".into()))
    }

    fn load_checkpoint(&self) -> CliResult<Checkpoint> {
        let path = self.require_checkpoint()?;
        match &self.config {
            Some(_) => {
                let cfg = self.run_config()?;
                Checkpoint::load_expecting(path, &cfg.network_for(cfg.train.ablation)?)
            }
            None => Checkpoint::load(path),
        }
    }
}

pub fn run_train(c: &Common) -> CliResult<()> {
    let cfg = c.run_config()?;
    let ck_path = c
        .checkpoint
        .clone()
        .or_else(|| cfg.checkpoint.clone())
        .ok_or_else(|| CliError::Usage("train needs --checkpoint or a checkpoint key".into()))?;
    let metrics = c
        .out
        .clone()
        .or_else(|| cfg.metrics.clone())
        .unwrap_or_else(|| ck_path.with_extension("csv"));
    check_writable(&ck_path)?;
    check_writable(&metrics)?;
    let report = train(&cfg)?;
    write_text(&metrics, &metric_csv(&report.log))?;
    report.checkpoint.save(&ck_path)?;
    eprintln!("dataset sha256 {}", report.dataset_digest);
    println!("blurry {}", summary_line(&report.baseline));
    println!("output {}", summary_line(&report.result));
    Ok(())
}

pub fn run_infer(c: &Common, input: &Path) -> CliResult<()> {
    let out = c
        .out
        .as_deref()
        .ok_or_else(|| CliError::Usage("infer needs --out".into()))?;
    check_writable(out)?;
    let ck = c.load_checkpoint()?;
    let img = read_ppm(input)?;
    write_ppm(out, &infer(&ck, &img)?)
}

pub fn run_eval(c: &Common, dataset: &Path) -> CliResult<()> {
    if let Some(out) = &c.out {
        check_writable(out)?;
    }
    let ck = c.load_checkpoint()?;
    let set = load_eval_set(dataset)?;
    let e = evaluate_set(&ck, &set)?;
    match &c.out {
        Some(out) => write_text(out, &eval_csv(&e))?,
        None => print!("{}", eval_csv(&e)),
    }
    println!("{}", summary_line(&e));
    Ok(())
}

pub fn run_ablate(c: &Common) -> CliResult<()> {
    let cfg = c.run_config()?;
    let out = c.out.clone().or_else(|| cfg.out.clone());
    if let Some(out) = &out {
        check_writable(out)?;
    }
    let report = ablate(&cfg)?;
    for r in &report.rows {
        eprintln!("variant {} dataset sha256 {}", r.variant, report.dataset_digest);
        if let Err(e) = &r.result {
            eprintln!("variant {} failed: {e}", r.variant);
        }
    }
    let table = ablation_csv(&report.rows);
    match &out {
        Some(out) => write_text(out, &table)?,
        None => print!("{table}"),
    }
    let mut failures = report.rows.iter().filter_map(|r| r.result.as_ref().err());
    match failures.next() {
        None => Ok(()),
        Some(first) => Err(first.clone().into()),
    }
}

pub fn run_spectrum(c: &Common, input: &Path) -> CliResult<()> {
    let prefix = c
        .out
        .as_deref()
        .ok_or_else(|| CliError::Usage("spectrum needs --out <prefix>".into()))?;
    check_writable(prefix)?;
    let ck = match &c.checkpoint {
        Some(_) => Some(c.load_checkpoint()?),
        None => None,
    };
    let img = read_ppm(input)?;
    for (name, t) in spectrum(&img, ck.as_ref())? {
        let mut p = prefix.as_os_str().to_os_string();
        p.push(format!("_{name}.ppm"));
        write_ppm(Path::new(&p), &t)?;
    }
    Ok(())
}
