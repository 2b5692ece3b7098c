use std::path::Path;

use fedmix::dataset::{load_dataset, save_dataset};
use fedmix::{fmps, fmtd, Error};
use fedmix_core::data::{synth_generate, SynthSpec};
use fedmix_core::model::{build_model, Arch, ModelConfig};
use fedmix_core::Precision;

fn small_spec() -> SynthSpec {
    SynthSpec {
        groups: 3,
        classes: 4,
        samples_per_group: 5,
        image_size: 8,
        label_alpha: Some(0.5),
        drift_strength: 1.0,
        ..SynthSpec::default()
    }
}

#[test]
fn tensor_file_round_trip_and_layout() {
    let bytes = fmtd::encode(&[2, 1], &[1.5, -2.0]);
    assert_eq!(&bytes[..5], b"FMTD\x02");
    assert_eq!(&bytes[5..13], &[2, 0, 0, 0, 1, 0, 0, 0]);
    assert_eq!(&bytes[13..17], &1.5f32.to_le_bytes());
    let (shape, values) = fmtd::decode(&bytes, Path::new("t")).unwrap();
    assert_eq!((shape, values), (vec![2, 1], vec![1.5, -2.0]));
}

#[test]
fn malformed_tensor_files_are_rejected() {
    let p = Path::new("x.fmtd");
    assert!(matches!(fmtd::decode(b"NOPE\x00", p), Err(Error::Format { .. })));
    let mut bytes = fmtd::encode(&[3], &[1.0, 2.0, 3.0]);
    bytes.pop();
    assert!(matches!(fmtd::decode(&bytes, p), Err(Error::Format { .. })));
}

#[test]
fn dataset_directory_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth_generate(&small_spec(), 3).unwrap();
    save_dataset(&ds, dir.path()).unwrap();
    assert_eq!(load_dataset(dir.path()).unwrap(), ds);
    assert_eq!(load_dataset(&dir.path().join("manifest.csv")).unwrap(), ds);
}

fn saved() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&synth_generate(&small_spec(), 1).unwrap(), dir.path()).unwrap();
    dir
}

fn edit_manifest(dir: &Path, f: impl Fn(&str) -> String) {
    let path = dir.join("manifest.csv");
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, f(&text)).unwrap();
}

fn error_text(dir: &Path) -> String {
    let e = load_dataset(dir).unwrap_err();
    assert!(matches!(e, Error::Format { .. } | Error::Io { .. }), "{e:?}");
    e.to_string()
}

#[test]
fn empty_label_list_is_rejected_with_line() {
    let dir = saved();
    edit_manifest(dir.path(), |t| {
        let mut lines: Vec<String> = t.lines().map(String::from).collect();
        let cols: Vec<&str> = lines[2].split(',').collect();
        lines[2] = format!("{},{},,{}", cols[0], cols[1], cols[3]);
        lines.join("\n") + "\n"
    });
    let msg = error_text(dir.path());
    assert!(msg.contains("line 3") && msg.contains("empty label list"), "{msg}");
}

#[test]
fn out_of_range_label_is_rejected() {
    let dir = saved();
    edit_manifest(dir.path(), |t| {
        let mut lines: Vec<String> = t.lines().map(String::from).collect();
        let cols: Vec<&str> = lines[1].split(',').collect();
        lines[1] = format!("{},{},9,{}", cols[0], cols[1], cols[3]);
        lines.join("\n") + "\n"
    });
    let msg = error_text(dir.path());
    assert!(msg.contains("line 2") && msg.contains("outside [0, 4)"), "{msg}");
}

#[test]
fn mismatched_image_dims_are_rejected() {
    let dir = saved();
    fmtd::write(&dir.path().join("tensors/000004.fmtd"), &[3, 4, 4], &[0.0; 48]).unwrap();
    let msg = error_text(dir.path());
    assert!(msg.contains("line 6") && msg.contains("differs"), "{msg}");
}

#[test]
fn missing_tensor_file_names_the_path() {
    let dir = saved();
    std::fs::remove_file(dir.path().join("tensors/000002.fmtd")).unwrap();
    let e = load_dataset(dir.path()).unwrap_err();
    assert!(matches!(e, Error::Io { .. }));
    assert!(e.to_string().contains("000002.fmtd"));
}

#[test]
fn param_blob_round_trips_at_both_precisions() {
    let model = build_model(&ModelConfig::toy(Arch::ConvMixer, 6), 2).unwrap();
    let params = model.initial_params();
    let p = Path::new("blob");

    let exact = fmps::decode(&fmps::encode(params, Precision::F64), p).unwrap();
    assert_eq!(&exact.params, params);
    assert_eq!(exact.value_bytes, params.count_params() * 8);

    let blob = fmps::encode(params, Precision::F32);
    let narrow = fmps::decode(&blob, p).unwrap();
    assert_eq!(narrow.precision, Precision::F32);
    assert_eq!(narrow.value_bytes, params.count_params() * 4);
    let mut rounded = params.clone();
    rounded.round_to(Precision::F32);
    assert_eq!(narrow.params, rounded);
    assert_eq!(fmps::encode(&narrow.params, Precision::F32), blob);
}

#[test]
fn truncated_blob_is_rejected() {
    let model = build_model(&ModelConfig::toy(Arch::PoolFormer, 3), 0).unwrap();
    let mut blob = fmps::encode(model.initial_params(), Precision::F32);
    blob.truncate(blob.len() - 1);
    assert!(matches!(fmps::decode(&blob, Path::new("b")), Err(Error::Format { .. })));
    assert!(matches!(fmps::decode(b"FMPS\x03\0\0\0\0", Path::new("b")), Err(Error::Format { .. })));
}
