//! Checkpoint file format, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "CUBEMIX\0"
//! version    u32
//! config     u32 length + UTF-8 text (network config echo, key=value lines)
//! count      u32
//! count × {  u32 name length, name, u32 rank, rank × u32 dims, f32 data }
//! checksum   32 bytes SHA-256 of everything above
//! ```

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use cubemix::net::SlicingMode;
use cubemix::{Head, NetworkConfig, Params32, PlaneFeed, Tensor32};

use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 8] = b"CUBEMIX\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Must have pinned path sizes.
    pub config: NetworkConfig,
    pub params: Params32,
}

/// Canonical text form of a pinned network config.
pub fn config_echo(cfg: &NetworkConfig) -> CliResult<String> {
    let sizes = cfg
        .path_sizes
        .as_ref()
        .ok_or_else(|| CliError::Usage("checkpoint config must have pinned path sizes".into()))?;
    let join = |v: Vec<String>| v.join(",");
    Ok(format!(
        "path_scales={}\npath_sizes={}\nblocks_per_path={}\nchannels={}\nhidden_ratio={}\nlfe_kernel={}\n\
         slicing={}\nplane_feed={}\nhead={}\n",
        join(cfg.path_scales.iter().map(f64::to_string).collect()),
        join(sizes.iter().map(|(w, h)| format!("{w}x{h}")).collect()),
        cfg.blocks_per_path,
        cfg.channels,
        cfg.hidden_ratio,
        cfg.lfe_kernel,
        match cfg.slicing_mode {
            SlicingMode::Affine => "affine",
            SlicingMode::Polynomial => "polynomial",
        },
        match cfg.plane_feed {
            PlaneFeed::Split => "split",
            PlaneFeed::DoubleReal => "double-real",
            PlaneFeed::DoubleImag => "double-imag",
        },
        match cfg.head {
            Head::Slicing => "slicing",
            Head::Direct => "direct",
        },
    ))
}

fn parse_echo(text: &str) -> Result<NetworkConfig, String> {
    let mut cfg = NetworkConfig::default();
    let mut seen = Vec::new();
    for line in text.lines() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("bad config line {line:?}"))?;
        let num = |v: &str| v.parse::<f64>().map_err(|_| format!("{k}: bad number {v:?}"));
        let int = |v: &str| v.parse::<usize>().map_err(|_| format!("{k}: bad integer {v:?}"));
        match k {
            "path_scales" => cfg.path_scales = v.split(',').map(num).collect::<Result<_, _>>()?,
            "path_sizes" => {
                let sizes = v
                    .split(',')
                    .map(|s| {
                        let (w, h) = s.split_once('x').ok_or_else(|| format!("bad size {s:?}"))?;
                        Ok((int(w)?, int(h)?))
                    })
                    .collect::<Result<_, String>>()?;
                cfg.path_sizes = Some(sizes);
            }
            "blocks_per_path" => cfg.blocks_per_path = int(v)?,
            "channels" => cfg.channels = int(v)?,
            "hidden_ratio" => cfg.hidden_ratio = num(v)?,
            "lfe_kernel" => cfg.lfe_kernel = int(v)?,
            "slicing" => {
                cfg.slicing_mode = match v {
                    "affine" => SlicingMode::Affine,
                    "polynomial" => SlicingMode::Polynomial,
                    _ => return Err(format!("bad slicing {v:?}")),
                }
            }
            "plane_feed" => {
                cfg.plane_feed = match v {
                    "split" => PlaneFeed::Split,
                    "double-real" => PlaneFeed::DoubleReal,
                    "double-imag" => PlaneFeed::DoubleImag,
                    _ => return Err(format!("bad plane_feed {v:?}")),
                }
            }
            "head" => {
                cfg.head = match v {
                    "slicing" => Head::Slicing,
                    "direct" => Head::Direct,
                    _ => return Err(format!("bad head {v:?}")),
                }
            }
            _ => return Err(format!("unknown config key {k:?}")),
        }
        seen.push(k.to_string());
    }
    if seen.len() != 9 {
        return Err(format!("config echo has {} keys, expected 9", seen.len()));
    }
    cfg.validate().map_err(|e| e.to_string())?;
    Ok(cfg)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("unexpected end of file at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self) -> Result<String, String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| "non-UTF-8 string".to_string())
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("fits in u32").to_le_bytes());
}

impl Checkpoint {
    pub fn to_bytes(&self) -> CliResult<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let echo = config_echo(&self.config)?;
        put_u32(&mut out, echo.len());
        out.extend_from_slice(echo.as_bytes());
        let mut blobs = Vec::new();
        self.params.visit(&mut |name, t| blobs.push((name, t)));
        put_u32(&mut out, blobs.len());
        for (name, t) in blobs {
            put_u32(&mut out, name.len());
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, t.rank());
            for &d in t.shape() {
                put_u32(&mut out, d);
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    /// Decodes and verifies a checkpoint; `path` only labels errors.
    pub fn from_bytes(bytes: &[u8], path: &Path) -> CliResult<Self> {
        let bad = |d: String| CliError::format(path, d);
        if bytes.len() < MAGIC.len() + 4 + 32 || &bytes[..8] != MAGIC {
            return Err(bad("not a cubemix checkpoint".into()));
        }
        let (body, sum) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != sum {
            return Err(bad("checksum mismatch, file is corrupt".into()));
        }
        let mut r = Reader { bytes: body, pos: 8 };
        let version = r.u32().map_err(bad)?;
        if version != VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let echo = r.string().map_err(bad)?;
        let config = parse_echo(&echo).map_err(|e| bad(format!("config echo: {e}")))?;

        // Shapes and names come from a freshly built network; the blobs must
        // match them one for one.
        let sizes = config.path_sizes.clone().expect("echo always pins sizes");
        let mut params = Params32::init(&config, sizes[0], &mut ChaCha8Rng::seed_from_u64(0))?;
        let names = params.names();
        let count = r.u32().map_err(bad)? as usize;
        if count != names.len() {
            return Err(bad(format!("{count} parameter blobs, config implies {}", names.len())));
        }
        for (leaf, expected) in params.leaves_mut().into_iter().zip(&names) {
            let name = r.string().map_err(bad)?;
            if &name != expected {
                return Err(bad(format!("blob {name:?} where {expected:?} was expected")));
            }
            let rank = r.u32().map_err(bad)? as usize;
            let shape = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()
                .map_err(bad)?;
            if shape != leaf.shape() {
                return Err(bad(format!("{name}: shape {shape:?}, expected {:?}", leaf.shape())));
            }
            let raw = r.take(4 * leaf.len()).map_err(bad)?;
            let data = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            *leaf = Tensor32::new(shape, data)?;
        }
        if r.pos != body.len() {
            return Err(bad(format!("{} trailing bytes", body.len() - r.pos)));
        }
        Ok(Checkpoint { config, params })
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Loads and refuses a checkpoint whose config echo differs from `expected`.
    pub fn load_expecting(path: &Path, expected: &NetworkConfig) -> CliResult<Self> {
        let ck = Self::load(path)?;
        if config_echo(&ck.config)? != config_echo(expected)? {
            return Err(CliError::format(
                path,
                format!(
                    "checkpoint config does not match:\n--- checkpoint\n{}--- expected\n{}",
                    config_echo(&ck.config)?,
                    config_echo(expected)?
                ),
            ));
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Checkpoint {
        let cfg = NetworkConfig {
            blocks_per_path: 1,
            ..NetworkConfig::default()
        }
        .pinned(64, 64)
        .unwrap();
        let params = Params32::init(&cfg, (64, 64), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        Checkpoint { config: cfg, params }
    }

    #[test]
    fn echo_round_trips() {
        let ck = small();
        let echo = config_echo(&ck.config).unwrap();
        assert_eq!(parse_echo(&echo).unwrap(), ck.config);
        assert!(config_echo(&NetworkConfig::default()).is_err());
    }

    #[test]
    fn corrupt_bytes_detected() {
        let bytes = small().to_bytes().unwrap();
        let p = Path::new("c.ckpt");
        assert_eq!(Checkpoint::from_bytes(&bytes, p).unwrap(), small());
        let mut flipped = bytes.clone();
        flipped[100] ^= 1;
        let err = Checkpoint::from_bytes(&flipped, p).unwrap_err().to_string();
        assert!(err.contains("checksum"), "{err}");
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1], p).is_err());
        assert!(Checkpoint::from_bytes(b"hello", p).is_err());
    }
}
