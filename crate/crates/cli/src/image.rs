//! Binary PPM (P6, maxval 255) images as `[W, H, 3]` tensors in `[0, 1]`.

use std::fs;
use std::path::Path;

use cubemix::Tensor32;

use crate::error::{CliError, CliResult};

/// `round_half_up(clamp(v, 0, 1) · 255)`.
pub fn quantize(v: f32) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (f64::from(v) * 255.0 + 0.5).floor() as u8
}

pub fn encode_ppm(img: &Tensor32) -> CliResult<Vec<u8>> {
    let (w, h, c) = img.dims3()?;
    if c != 3 {
        return Err(CliError::Usage(format!("PPM needs 3 channels, image has {c}")));
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(w * h * 3);
    for y in 0..h {
        for x in 0..w {
            for k in 0..3 {
                out.push(quantize(img.at3(x, y, k)));
            }
        }
    }
    Ok(out)
}

/// Parses a P6 file. Comments (`#` to end of line) are allowed between
/// header fields; exactly one whitespace byte separates the header from
/// the pixel data.
pub fn decode_ppm(bytes: &[u8], path: &Path) -> CliResult<Tensor32> {
    let bad = |detail: String| CliError::format(path, detail);
    let mut pos = 0;
    let mut field = |name: &str| -> CliResult<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad(format!("header ends before the {name} field")));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = field("magic")?;
    if magic != "P6" {
        return Err(bad(format!("expected magic P6, found {magic:?}")));
    }
    let mut number = |name: &str| -> CliResult<usize> {
        let s = field(name)?;
        s.parse().map_err(|_| bad(format!("{name} {s:?} is not a number")))
    };
    let w = number("width")?;
    let h = number("height")?;
    let maxval = number("maxval")?;
    if maxval != 255 {
        return Err(bad(format!("only maxval 255 is supported, found {maxval}")));
    }
    if w == 0 || h == 0 {
        return Err(bad(format!("empty image {w}x{h}")));
    }
    // `field` stops on the single whitespace byte after maxval.
    let data_start = pos + 1;
    let need = w * h * 3;
    let have = bytes.len().saturating_sub(data_start);
    if have < need {
        return Err(bad(format!(
            "truncated pixel data: {w}x{h} needs {need} bytes, found {have}"
        )));
    }
    let px = &bytes[data_start..data_start + need];
    Ok(Tensor32::from_fn3(w, h, 3, |x, y, k| {
        f32::from(px[(y * w + x) * 3 + k]) / 255.0
    }))
}

pub fn read_ppm(path: &Path) -> CliResult<Tensor32> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode_ppm(&bytes, path)
}

pub fn write_ppm(path: &Path, img: &Tensor32) -> CliResult<()> {
    fs::write(path, encode_ppm(img)?).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_rounds_half_up() {
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(-0.3), 0);
        assert_eq!(quantize(7.0), 255);
        assert_eq!(quantize(f32::NAN), 0);
        // 0.5 · 255 = 127.5 rounds up
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(1.0 / 255.0), 1);
    }

    #[test]
    fn header_layout() {
        let img = Tensor32::from_fn3(2, 1, 3, |x, _, k| (x * 3 + k) as f32 / 255.0);
        let bytes = encode_ppm(&img).unwrap();
        assert_eq!(&bytes[..11], b"P6\n2 1\n255\n");
        assert_eq!(&bytes[11..], &[0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn comments_and_odd_spacing() {
        let bytes = b"P6 # made by hand\n1\t1 # size\n255\n\x0a\x14\x1e";
        let img = decode_ppm(bytes, Path::new("x.ppm")).unwrap();
        assert_eq!(img.shape(), &[1, 1, 3]);
        assert_eq!(img.at3(0, 0, 2), 30.0 / 255.0);
    }

    #[test]
    fn malformed_headers() {
        let p = Path::new("x.ppm");
        for bytes in [
            &b"P3\n1 1\n255\n000"[..],
            b"P6\n1 1\n65535\n000000",
            b"P6\nx 1\n255\n000",
            b"P6\n1",
        ] {
            assert!(matches!(decode_ppm(bytes, p), Err(CliError::Format { .. })));
        }
    }
}
