//! On-disk capture contract: round-trip fidelity and rejection of every
//! malformed-manifest case with its own error.

use std::fs;

use blindsight::capture::{save_capture, CaptureError, CaptureReader};
use blindsight_core::layout::SinkSpec;
use blindsight_core::mask::{BaseVisibility, MaskType};
use blindsight_core::synth::{self, SynthSetConfig};

fn sample_set(prompts: usize) -> Vec<blindsight_core::PromptCapture> {
    let cfg = SynthSetConfig {
        layers: 2,
        heads: 2,
        prompts,
        seed: 31,
        head_dim: 8,
        noise_sigma: 0.5,
        logit_gain: 8.0,
        pattern: synth::PatternAssignment::Fixed(MaskType::Sink),
        layout: synth::RandomLayoutParams {
            min_images: 1,
            max_images: 2,
            min_image_tokens: 10,
            max_image_tokens: 16,
            max_text_tokens: 4,
        },
        sinks: SinkSpec::default_prefix(),
        base: BaseVisibility::Causal,
    };
    synth::generate_set(&cfg).unwrap().prompts
}

#[test]
fn round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let prompts = sample_set(2);
    save_capture(&prompts, "toy", dir.path(), false).unwrap();

    let reader = CaptureReader::open(dir.path()).unwrap();
    let loaded: Vec<_> = reader.prompts().collect::<Result<_, _>>().unwrap();
    assert_eq!(loaded, prompts);

    // Saving the loaded set elsewhere reproduces identical tensor bytes.
    let dir2 = tempfile::tempdir().unwrap();
    save_capture(&loaded, "toy", dir2.path(), false).unwrap();
    for entry in &reader.manifest().prompts {
        for rel in [&entry.files.q, &entry.files.k, &entry.files.v] {
            let a = fs::read(dir.path().join(rel)).unwrap();
            let b = fs::read(dir2.path().join(rel)).unwrap();
            assert_eq!(a, b, "{rel} differs after round trip");
        }
    }
}

#[test]
fn declared_byte_length_exactly_matches_file() {
    let reader_dir = tempfile::tempdir().unwrap();
    save_capture(&sample_set(1), "toy", reader_dir.path(), false).unwrap();
    let reader = CaptureReader::open(reader_dir.path()).unwrap();
    let entry = &reader.manifest().prompts[0];
    let [l, h, s, d] = entry.shape;
    let bytes = fs::read(reader_dir.path().join(&entry.files.q)).unwrap();
    assert_eq!(bytes.len(), 4 * l * h * s * d);
}

#[test]
fn empty_prompt_list_yields_valid_manifest() {
    let dir = tempfile::tempdir().unwrap();
    save_capture(&[], "empty", dir.path(), false).unwrap();
    let reader = CaptureReader::open(dir.path()).unwrap();
    assert_eq!(reader.prompt_count(), 0);
}

#[test]
fn overwrite_refused_without_force() {
    let dir = tempfile::tempdir().unwrap();
    let prompts = sample_set(1);
    save_capture(&prompts, "toy", dir.path(), false).unwrap();
    let again = save_capture(&prompts, "toy", dir.path(), false);
    assert!(matches!(again, Err(CaptureError::AlreadyExists { .. })));
    save_capture(&prompts, "toy", dir.path(), true).unwrap();
}

#[test]
fn truncated_tensor_file_is_a_distinct_error() {
    let dir = tempfile::tempdir().unwrap();
    save_capture(&sample_set(1), "toy", dir.path(), false).unwrap();
    let reader = CaptureReader::open(dir.path()).unwrap();
    let q_rel = reader.manifest().prompts[0].files.q.clone();
    let q_path = dir.path().join(&q_rel);
    let bytes = fs::read(&q_path).unwrap();
    fs::write(&q_path, &bytes[..bytes.len() - 8]).unwrap();

    let err = reader.prompts().next().unwrap().unwrap_err();
    match err {
        CaptureError::Truncated { expected, actual, .. } => {
            assert_eq!(actual + 8, expected);
        }
        other => panic!("expected Truncated, got {other}"),
    }
}

#[test]
fn oversized_tensor_file_is_a_distinct_error() {
    let dir = tempfile::tempdir().unwrap();
    save_capture(&sample_set(1), "toy", dir.path(), false).unwrap();
    let reader = CaptureReader::open(dir.path()).unwrap();
    let k_rel = reader.manifest().prompts[0].files.k.clone();
    let k_path = dir.path().join(&k_rel);
    let mut bytes = fs::read(&k_path).unwrap();
    bytes.extend_from_slice(&[0u8; 4]);
    fs::write(&k_path, bytes).unwrap();

    let err = reader.prompts().next().unwrap().unwrap_err();
    assert!(matches!(err, CaptureError::LengthMismatch { .. }), "got {err}");
}

#[test]
fn nan_payload_is_a_distinct_error() {
    let dir = tempfile::tempdir().unwrap();
    save_capture(&sample_set(1), "toy", dir.path(), false).unwrap();
    let reader = CaptureReader::open(dir.path()).unwrap();
    let v_rel = reader.manifest().prompts[0].files.v.clone();
    let v_path = dir.path().join(&v_rel);
    let mut bytes = fs::read(&v_path).unwrap();
    bytes[40..44].copy_from_slice(&f32::NAN.to_le_bytes());
    fs::write(&v_path, bytes).unwrap();

    let err = reader.prompts().next().unwrap().unwrap_err();
    match err {
        CaptureError::NonFinite { role, index, .. } => {
            assert_eq!(role, "v");
            assert_eq!(index, 10);
        }
        other => panic!("expected NonFinite, got {other}"),
    }
}

#[test]
fn version_mismatch_is_a_distinct_error() {
    let dir = tempfile::tempdir().unwrap();
    save_capture(&sample_set(1), "toy", dir.path(), false).unwrap();
    let manifest_path = dir.path().join("manifest.json");
    let raw = fs::read_to_string(&manifest_path).unwrap();
    fs::write(&manifest_path, raw.replace("\"version\": 1", "\"version\": 2")).unwrap();

    let err = CaptureReader::open(dir.path()).unwrap_err();
    assert!(matches!(err, CaptureError::VersionMismatch { found: 2 }), "got {err}");
}

#[test]
fn shape_mismatch_is_a_distinct_error() {
    let dir = tempfile::tempdir().unwrap();
    save_capture(&sample_set(1), "toy", dir.path(), false).unwrap();
    let manifest_path = dir.path().join("manifest.json");
    let raw = fs::read_to_string(&manifest_path).unwrap();
    // Declare one more layer than the model has.
    let patched = raw.replacen("\"shape\": [\n        2,", "\"shape\": [\n        3,", 1);
    assert_ne!(patched, raw, "patch did not apply");
    fs::write(&manifest_path, patched).unwrap();

    let reader = CaptureReader::open(dir.path()).unwrap();
    let err = reader.prompts().next().unwrap().unwrap_err();
    assert!(matches!(err, CaptureError::ShapeMismatch { .. }), "got {err}");
}

#[test]
fn bad_dtype_and_byte_order_are_distinct_errors() {
    for (field, value, check) in [
        ("\"dtype\": \"f32\"", "\"dtype\": \"f16\"", 0usize),
        ("\"byte_order\": \"little\"", "\"byte_order\": \"big\"", 1),
    ] {
        let dir = tempfile::tempdir().unwrap();
        save_capture(&sample_set(1), "toy", dir.path(), false).unwrap();
        let manifest_path = dir.path().join("manifest.json");
        let raw = fs::read_to_string(&manifest_path).unwrap();
        fs::write(&manifest_path, raw.replacen(field, value, 1)).unwrap();
        let reader = CaptureReader::open(dir.path()).unwrap();
        let err = reader.prompts().next().unwrap().unwrap_err();
        match check {
            0 => assert!(matches!(err, CaptureError::UnsupportedDtype { .. }), "got {err}"),
            _ => assert!(matches!(err, CaptureError::UnsupportedByteOrder { .. }), "got {err}"),
        }
    }
}

#[test]
fn missing_tensor_file_reports_path() {
    let dir = tempfile::tempdir().unwrap();
    save_capture(&sample_set(1), "toy", dir.path(), false).unwrap();
    let reader = CaptureReader::open(dir.path()).unwrap();
    let q_rel = reader.manifest().prompts[0].files.q.clone();
    fs::remove_file(dir.path().join(&q_rel)).unwrap();
    let err = reader.prompts().next().unwrap().unwrap_err();
    match err {
        CaptureError::Io { path, .. } => assert!(path.ends_with(&q_rel)),
        other => panic!("expected Io, got {other}"),
    }
}
