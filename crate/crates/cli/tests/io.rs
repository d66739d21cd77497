use std::path::Path;

use cubemix::{NetworkConfig, Params32, Tensor32};
use cubemix_cli::checkpoint::{config_echo, Checkpoint};
use cubemix_cli::image::{decode_ppm, encode_ppm, quantize, read_ppm, write_ppm};
use cubemix_cli::CliError;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_bytes_image(w: usize, h: usize, seed: u64) -> (Vec<u8>, Tensor32) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let px: Vec<u8> = (0..w * h * 3).map(|_| rng.gen()).collect();
    let img = Tensor32::from_fn3(w, h, 3, |x, y, k| f32::from(px[(y * w + x) * 3 + k]) / 255.0);
    (px, img)
}

#[test]
fn random_image_round_trips_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.ppm");
    let (px, img) = random_bytes_image(17, 9, 1);
    write_ppm(&path, &img).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..12], b"P6\n17 9\n255\n");
    assert_eq!(&bytes[12..], &px[..]);
    assert_eq!(read_ppm(&path).unwrap(), img);
}

#[test]
fn truncated_file_reports_lengths() {
    let (_, img) = random_bytes_image(4, 3, 2);
    let bytes = encode_ppm(&img).unwrap();
    let cut = &bytes[..bytes.len() - 5];
    let err = decode_ppm(cut, Path::new("cut.ppm")).unwrap_err();
    assert!(matches!(err, CliError::Format { .. }));
    let msg = err.to_string();
    assert!(
        msg.contains("cut.ppm") && msg.contains("needs 36 bytes, found 31"),
        "{msg}"
    );
}

#[test]
fn unreadable_file_is_an_io_error() {
    let err = read_ppm(Path::new("/nonexistent/x.ppm")).unwrap_err();
    assert!(matches!(err, CliError::Io { .. }));
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn writing_quantizes_and_clamps() {
    let img = Tensor32::from_vec(vec![-0.2, 0.5, 1.7]).reshape(vec![1, 1, 3]).unwrap();
    let bytes = encode_ppm(&img).unwrap();
    assert_eq!(&bytes[bytes.len() - 3..], &[0, 128, 255]);
    assert!(encode_ppm(&Tensor32::zeros(&[2, 2, 1])).is_err());
}

fn checkpoint(blocks: usize, seed: u64) -> Checkpoint {
    let config = NetworkConfig {
        path_scales: vec![0.25, 0.125],
        blocks_per_path: blocks,
        ..NetworkConfig::default()
    }
    .pinned(32, 32)
    .unwrap();
    let params = Params32::init(&config, (32, 32), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    Checkpoint { config, params }
}

#[test]
fn checkpoint_save_load_save_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    let ck = checkpoint(2, 3);
    ck.save(&a).unwrap();
    let loaded = Checkpoint::load(&a).unwrap();
    assert_eq!(loaded, ck);
    loaded.save(&b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn checkpoint_refuses_other_config() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.ckpt");
    let ck = checkpoint(1, 4);
    ck.save(&path).unwrap();
    assert!(Checkpoint::load_expecting(&path, &ck.config).is_ok());
    let other = checkpoint(2, 4).config;
    let err = Checkpoint::load_expecting(&path, &other).unwrap_err().to_string();
    assert!(
        err.contains("does not match") && err.contains("blocks_per_path=2"),
        "{err}"
    );
}

#[test]
fn checkpoint_echo_lists_architecture() {
    let echo = config_echo(&checkpoint(1, 5).config).unwrap();
    assert!(echo.contains("path_sizes=8x8,4x4\n"), "{echo}");
    assert!(echo.contains("head=slicing\n") && echo.contains("plane_feed=split\n"));
}

#[test]
fn checkpoint_rejects_truncation_anywhere() {
    let bytes = checkpoint(1, 6).to_bytes().unwrap();
    for cut in [0, 8, 40, bytes.len() / 2, bytes.len() - 33] {
        assert!(
            Checkpoint::from_bytes(&bytes[..cut], Path::new("t.ckpt")).is_err(),
            "cut {cut}"
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn ppm_round_trip_any_size(w in 1usize..20, h in 1usize..20, seed in 0u64..10_000) {
        let (_, img) = random_bytes_image(w, h, seed);
        let back = decode_ppm(&encode_ppm(&img).unwrap(), Path::new("p.ppm")).unwrap();
        prop_assert_eq!(back, img);
    }

    #[test]
    fn quantize_inverts_byte_scaling(b in 0u8..=255) {
        prop_assert_eq!(quantize(f32::from(b) / 255.0), b);
    }
}
