//! Checkpoint format and half-precision quantization against hand-built oracles.

use proptest::prelude::*;
use wdm::attacks::{quantize_value, quantize_weights_with_report};
use wdm::checkpoint::{decode, encode, load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION, MAGIC};
use wdm::denoiser::{Architecture, Denoiser};
use wdm::error::WdmError;
use wdm::schedule::NoiseSchedule;

fn model(seed: u64) -> Denoiser {
    Denoiser::init(Architecture::new(2, vec![8, 6], 4), seed).unwrap()
}

fn sched() -> NoiseSchedule {
    NoiseSchedule::linear(100, 1e-3, 0.2).unwrap()
}

#[test]
fn round_trip_is_bit_identical_in_f32() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.wdmk");
    let m = model(3);
    save_checkpoint(&m, &sched(), &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.steps, 100);
    assert_eq!(back.beta_1, 1e-3);
    assert_eq!(back.beta_t, 0.2);
    assert_eq!(back.model.arch(), m.arch());
    for (a, b) in m.flat_params().iter().zip(back.model.flat_params()) {
        assert_eq!((*a as f32).to_bits(), (b as f32).to_bits());
    }
    // A second save of the loaded model reproduces the file byte for byte.
    let again = dir.path().join("again.wdmk");
    save_checkpoint(&back.model, &back.schedule().unwrap(), &again).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn header_layout_is_little_endian() {
    let bytes = encode(&Checkpoint::new(&model(1), &sched())).unwrap();
    assert_eq!(&bytes[..4], MAGIC);
    assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), FORMAT_VERSION);
    assert_eq!(u32::from_le_bytes(bytes[6..10].try_into().unwrap()), 100);
    assert_eq!(f64::from_le_bytes(bytes[10..18].try_into().unwrap()), 1e-3);
    assert_eq!(f64::from_le_bytes(bytes[18..26].try_into().unwrap()), 0.2);
}

#[test]
fn every_truncation_is_a_corruption_error() {
    let bytes = encode(&Checkpoint::new(&model(2), &sched())).unwrap();
    for len in 0..bytes.len() {
        match decode(&bytes[..len]) {
            Err(WdmError::Corrupt(_)) => {}
            other => panic!("length {len}: {other:?}"),
        }
    }
}

#[test]
fn flipped_byte_fails_checksum() {
    let mut bytes = encode(&Checkpoint::new(&model(2), &sched())).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    let err = decode(&bytes).unwrap_err();
    assert!(matches!(err, WdmError::Corrupt(ref m) if m.contains("checksum")), "{err}");
}

#[test]
fn bad_magic_is_rejected() {
    let mut bytes = encode(&Checkpoint::new(&model(2), &sched())).unwrap();
    bytes[0] = b'X';
    assert!(matches!(decode(&bytes), Err(WdmError::Corrupt(_))));
}

#[test]
fn version_bump_names_both_versions() {
    let mut bytes = encode(&Checkpoint::new(&model(2), &sched())).unwrap();
    let bumped = FORMAT_VERSION + 1;
    bytes[4..6].copy_from_slice(&bumped.to_le_bytes());
    let err = decode(&bytes).unwrap_err();
    match &err {
        WdmError::VersionMismatch { found, expected } => {
            assert_eq!((*found, *expected), (bumped, FORMAT_VERSION));
        }
        other => panic!("{other:?}"),
    }
    let msg = err.to_string();
    assert!(msg.contains(&bumped.to_string()) && msg.contains(&FORMAT_VERSION.to_string()), "{msg}");
}

/// Round to the binary16 grid by exact arithmetic: the spacing is
/// `2^(e-10)` for normal exponents and `2^-24` below `2^-14`.
fn f16_oracle(v: f64) -> f64 {
    if v == 0.0 {
        return v;
    }
    let e = v.abs().log2().floor().max(-14.0) as i32;
    let ulp = 2f64.powi(e - 10);
    let q = (v / ulp).round_ties_even() * ulp;
    q.clamp(-65504.0, 65504.0)
}

#[test]
fn quantization_matches_oracle_on_edge_values() {
    let cases = [
        1.0,
        -1.0,
        1.0 + 2f64.powi(-11),
        1.0 + 3.0 * 2f64.powi(-11),
        0.1,
        -0.333,
        2f64.powi(-14),
        2f64.powi(-24),
        2f64.powi(-25),
        3.0 * 2f64.powi(-26),
        65504.0,
        65519.0,
        -65519.0,
        1234.5678,
    ];
    for v in cases {
        let (q, sat) = quantize_value(v);
        assert_eq!(q, f16_oracle(v), "v={v}");
        assert!(!sat, "v={v}");
    }
    // Ties go to even.
    assert_eq!(quantize_value(1.0 + 2f64.powi(-11)).0, 1.0);
    assert_eq!(quantize_value(1.0 + 3.0 * 2f64.powi(-11)).0, 1.0 + 2f64.powi(-9));
    assert_eq!(quantize_value(1e9), (65504.0, true));
}

#[test]
fn quantizing_a_model_reports_changes() {
    let m = model(9);
    let (q, report) = quantize_weights_with_report(&m);
    assert_eq!(report.saturated, 0);
    let worst = m
        .flat_params()
        .iter()
        .zip(q.flat_params())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert_eq!(report.max_abs_change, worst);
    for (a, b) in m.flat_params().iter().zip(q.flat_params()) {
        assert_eq!(b, f16_oracle(*a));
    }
}

proptest! {
    #[test]
    fn quantization_matches_oracle(v in -70000.0f64..70000.0, scale in -30i32..0) {
        let x = v * 2f64.powi(scale);
        prop_assert_eq!(quantize_value(x).0, f16_oracle(x));
    }

    #[test]
    fn quantization_is_idempotent(v in -60000.0f64..60000.0) {
        let q = quantize_value(v).0;
        prop_assert_eq!(quantize_value(q).0, q);
    }
}
