use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::blur::{synth_blur, BlurSpec};

/// A blurred patch and its sharp original.
#[derive(Clone, Debug, PartialEq)]
pub struct Pair<T> {
    pub id: String,
    pub blurry: Tensor<T>,
    pub sharp: Tensor<T>,
    pub spec: BlurSpec,
    pub source: usize,
    pub origin: (usize, usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    pub train: Vec<Pair<T>>,
    pub held_out: Vec<Pair<T>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DatasetConfig {
    pub patch_size: usize,
    pub train_pairs: usize,
    pub held_out_pairs: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            patch_size: 96,
            train_pairs: 32,
            held_out_pairs: 8,
        }
    }
}

/// Crops seeded patches from `sources` and blurs each with a seeded choice
/// from `specs`.
///
/// Sources are partitioned: the last fifth (at least one) only feeds the
/// held-out split, the rest only the training split, so no sharp patch can
/// appear in both.
pub fn make_dataset<T: Scalar>(
    sources: &[Tensor<T>],
    specs: &[BlurSpec],
    cfg: &DatasetConfig,
    seed: u64,
) -> Result<Dataset<T>> {
    if sources.len() < 2 {
        return Err(Error::Config(
            "at least two source images are needed for a train/held-out split".into(),
        ));
    }
    if specs.is_empty() {
        return Err(Error::Config("no blur specs given".into()));
    }
    let p = cfg.patch_size;
    for (i, s) in sources.iter().enumerate() {
        let (w, h, _) = s.dims3()?;
        if w < p || h < p {
            return Err(Error::Config(format!(
                "source {i} is {w}x{h}, smaller than the {p}px patch"
            )));
        }
    }
    let n_held = (sources.len() / 5).max(1);
    let split = sources.len() - n_held;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |count: usize, pool: std::ops::Range<usize>, tag: &str| -> Result<Vec<Pair<T>>> {
        let pool: Vec<usize> = pool.collect();
        (0..count)
            .map(|i| {
                let source = pool[i % pool.len()];
                let img = &sources[source];
                let (w, h, _) = img.dims3()?;
                let origin = (rng.gen_range(0..=w - p), rng.gen_range(0..=h - p));
                let spec = *specs.choose(&mut rng).expect("non-empty");
                let sharp = crop(img, origin, p)?;
                let blurry = synth_blur(&sharp, &spec)?;
                Ok(Pair {
                    id: format!("{tag}{i:03}"),
                    blurry,
                    sharp,
                    spec,
                    source,
                    origin,
                })
            })
            .collect()
    };
    let train = draw(cfg.train_pairs, 0..split, "train")?;
    let held_out = draw(cfg.held_out_pairs, split..sources.len(), "val")?;
    Ok(Dataset { train, held_out })
}

fn crop<T: Scalar>(img: &Tensor<T>, origin: (usize, usize), p: usize) -> Result<Tensor<T>> {
    let (_, _, c) = img.dims3()?;
    Ok(Tensor::from_fn3(p, p, c, |x, y, k| {
        img.at3(origin.0 + x, origin.1 + y, k)
    }))
}

/// Procedural RGB scene in `[0, 1]`: a smooth colour gradient overlaid with
/// seeded rectangles, discs, stripe patches and thin lines.
pub fn synthetic_scene<T: Scalar>(w: usize, h: usize, seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let colour = |rng: &mut ChaCha8Rng| -> [f64; 3] { [rng.gen(), rng.gen(), rng.gen()] };
    let c0 = colour(&mut rng);
    let c1 = colour(&mut rng);
    let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let (ca, sa) = (angle.cos(), angle.sin());
    let mut img = vec![[0.0f64; 3]; w * h];
    for x in 0..w {
        for y in 0..h {
            let t = ((x as f64 / w as f64 - 0.5) * ca + (y as f64 / h as f64 - 0.5) * sa + 0.5).clamp(0.0, 1.0);
            for k in 0..3 {
                img[x * h + y][k] = c0[k] * (1.0 - t) + c1[k] * t;
            }
        }
    }
    let scale = w.min(h) as f64;
    let shapes = rng.gen_range(10..18);
    for _ in 0..shapes {
        let col = colour(&mut rng);
        let cx = rng.gen_range(0.0..w as f64);
        let cy = rng.gen_range(0.0..h as f64);
        let size = rng.gen_range(0.05..0.3) * scale;
        match rng.gen_range(0..4) {
            0 => {
                let (hw, hh) = (size, size * rng.gen_range(0.4..1.6));
                paint(&mut img, w, h, |x, y| (x - cx).abs() < hw && (y - cy).abs() < hh, col);
            }
            1 => paint(
                &mut img,
                w,
                h,
                |x, y| (x - cx).powi(2) + (y - cy).powi(2) < size * size,
                col,
            ),
            2 => {
                let period = rng.gen_range(3.0..9.0);
                let (sx, sy) = if rng.gen_bool(0.5) { (1.0, 0.0) } else { (0.0, 1.0) };
                paint(
                    &mut img,
                    w,
                    h,
                    |x, y| {
                        (x - cx).abs() < size
                            && (y - cy).abs() < size
                            && ((x * sx + y * sy) / period).floor() as i64 % 2 == 0
                    },
                    col,
                );
            }
            _ => {
                let a: f64 = rng.gen_range(0.0..std::f64::consts::PI);
                let (la, lb) = (a.cos(), a.sin());
                let thick = rng.gen_range(0.8..2.5);
                paint(
                    &mut img,
                    w,
                    h,
                    |x, y| {
                        let (dx, dy) = (x - cx, y - cy);
                        (dx * lb - dy * la).abs() < thick && (dx * la + dy * lb).abs() < 2.0 * size
                    },
                    col,
                );
            }
        }
    }
    let mut out = Tensor::zeros(&[w, h, 3]);
    for x in 0..w {
        for y in 0..h {
            for (k, &v) in img[x * h + y].iter().enumerate() {
                out.set3(x, y, k, T::of(v));
            }
        }
    }
    out
}

fn paint(img: &mut [[f64; 3]], w: usize, h: usize, inside: impl Fn(f64, f64) -> bool, col: [f64; 3]) {
    for x in 0..w {
        for y in 0..h {
            if inside(x as f64 + 0.5, y as f64 + 0.5) {
                img[x * h + y] = col;
            }
        }
    }
}

/// `count` scenes of `size × size`, seeds derived from `seed`.
pub fn synthetic_sources<T: Scalar>(count: usize, size: usize, seed: u64) -> Vec<Tensor<T>> {
    (0..count as u64)
        .map(|i| synthetic_scene(size, size, seed.wrapping_mul(1_000_003).wrapping_add(i)))
        .collect()
}
