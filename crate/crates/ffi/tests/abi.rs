use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use bike_core::synthetic::{gen_synthetic, write_synthetic, SyntheticParams};
use bike_core::Error;
use bike_ffi::*;

fn last_error() -> String {
    let p = bike_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn matrix(rows: usize, cols: usize, data: &[f64]) -> *mut BikeMatrix {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { bike_matrix_new(rows, cols, data.as_ptr(), &mut m) }, BIKE_OK);
    m
}

fn cpath(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn synthetic(dir: &Path) -> PathBuf {
    let p = SyntheticParams { classes: 6, videos: 24, frames: 6, dim: 16, noise_frames: 2, ..Default::default() };
    write_synthetic(&gen_synthetic(&p).unwrap(), dir).unwrap()
}

#[test]
fn status_constants_match_library_codes() {
    let cases = [
        (Error::ZeroVector, BIKE_ERR_ZERO_VECTOR),
        (Error::DimMismatch { expected: 1, got: 2 }, BIKE_ERR_DIM_MISMATCH),
        (Error::NonPositiveTemperature(0.0), BIKE_ERR_NON_POSITIVE_TEMPERATURE),
        (Error::NonFinite, BIKE_ERR_NON_FINITE),
        (Error::BadShape { rows: 1, cols: 1, len: 2 }, BIKE_ERR_BAD_SHAPE),
        (Error::LengthMismatch { expected: 1, got: 2 }, BIKE_ERR_LENGTH_MISMATCH),
        (Error::BadMagic(*b"XXXX"), BIKE_ERR_BAD_MAGIC),
        (Error::BadVersion(9), BIKE_ERR_BAD_VERSION),
        (Error::TruncatedFile { expected: 2, found: 1 }, BIKE_ERR_TRUNCATED_FILE),
        (Error::TrailingBytes(1), BIKE_ERR_TRAILING_BYTES),
        (Error::DimOverflow { rows: 0, cols: 0 }, BIKE_ERR_DIM_OVERFLOW),
        (Error::MissingFile("x".into()), BIKE_ERR_MISSING_FILE),
        (Error::UnknownLabel { label: 3, categories: 2 }, BIKE_ERR_UNKNOWN_LABEL),
        (Error::Manifest("m".into()), BIKE_ERR_MANIFEST),
        (Error::EmptyText, BIKE_ERR_EMPTY_TEXT),
        (Error::BadK { k: 0, max: 1 }, BIKE_ERR_BAD_K),
        (Error::EmptyAttributes, BIKE_ERR_EMPTY_ATTRIBUTES),
        (Error::MissingPlaceholder("p".into()), BIKE_ERR_MISSING_PLACEHOLDER),
        (Error::IndivisibleBatch { batch: 3, workers: 2 }, BIKE_ERR_INDIVISIBLE_BATCH),
        (Error::InconsistentShardPlan, BIKE_ERR_INCONSISTENT_SHARD_PLAN),
        (Error::GatherNotRun(0), BIKE_ERR_GATHER_NOT_RUN),
        (Error::LambdaOutOfRange(2.0), BIKE_ERR_LAMBDA_OUT_OF_RANGE),
        (Error::EmptyDataset, BIKE_ERR_EMPTY_DATASET),
        (Error::TooFewClasses(1), BIKE_ERR_TOO_FEW_CLASSES),
        (Error::DimTooSmall { dim: 1, classes: 2 }, BIKE_ERR_DIM_TOO_SMALL),
        (Error::InvalidArgument("a".into()), BIKE_ERR_INVALID_ARGUMENT),
        (Error::Io { path: "p".into(), source: std::io::Error::other("x") }, BIKE_ERR_IO),
    ];
    for (e, code) in cases {
        assert_eq!(e.code(), code, "{e}");
    }
    let json: Error = serde_json::from_str::<f64>("{").unwrap_err().into();
    assert_eq!(json.code(), BIKE_ERR_JSON);
}

#[test]
fn matrix_round_trip_through_bemb() {
    let dir = tempfile::tempdir().unwrap();
    let data = [1.0, -2.5, 0.25, 4.0, 8.0, -0.125];
    let m = matrix(2, 3, &data);
    assert_eq!(unsafe { (bike_matrix_rows(m), bike_matrix_cols(m)) }, (2, 3));
    let path = cpath(&dir.path().join("m.bemb"));
    assert_eq!(unsafe { bike_bemb_write(path.as_ptr(), m) }, BIKE_OK);
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { bike_bemb_read(path.as_ptr(), &mut back) }, BIKE_OK);
    let mut out = [0.0; 6];
    assert_eq!(unsafe { bike_matrix_copy(back, out.as_mut_ptr(), 6) }, BIKE_OK);
    assert_eq!(out, data);
    assert_eq!(unsafe { bike_matrix_copy(back, out.as_mut_ptr(), 5) }, BIKE_ERR_LENGTH_MISMATCH);
    unsafe {
        bike_matrix_free(m);
        bike_matrix_free(back);
        bike_matrix_free(ptr::null_mut());
    }
}

#[test]
fn errors_carry_codes_and_messages() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = ptr::null_mut();
    let missing = cpath(&dir.path().join("nope.bemb"));
    assert_eq!(unsafe { bike_bemb_read(missing.as_ptr(), &mut m) }, BIKE_ERR_MISSING_FILE);
    assert!(last_error().contains("nope.bemb"));
    assert!(m.is_null());

    let bad = dir.path().join("bad.bemb");
    std::fs::write(&bad, b"NOPE\x01\0\0\0\x01\0\0\0\x01\0\0\0\0\0\0\0").unwrap();
    assert_eq!(unsafe { bike_bemb_read(cpath(&bad).as_ptr(), &mut m) }, BIKE_ERR_BAD_MAGIC);

    assert_eq!(unsafe { bike_bemb_read(ptr::null(), &mut m) }, BIKE_ERR_NULL_POINTER);
    let nan = [f64::NAN];
    assert_eq!(unsafe { bike_matrix_new(1, 1, nan.as_ptr(), &mut m) }, BIKE_ERR_NON_FINITE);
    assert_eq!(unsafe { bike_matrix_new(1, 1, nan.as_ptr(), ptr::null_mut()) }, BIKE_ERR_NON_FINITE);
    let one = [1.0];
    assert_eq!(unsafe { bike_matrix_new(1, 1, one.as_ptr(), ptr::null_mut()) }, BIKE_ERR_NULL_POINTER);
}

#[test]
fn saliency_and_losses() {
    let frames = matrix(2, 2, &[1.0, 0.0, 0.0, 1.0]);
    let words = matrix(1, 2, &[1.0, 0.0]);
    let mut s = [0.0; 2];
    assert_eq!(unsafe { bike_temporal_saliency(frames, words, 1.0, s.as_mut_ptr(), 2) }, BIKE_OK);
    assert!((s[0] - 0.731_058_578_630_004_9).abs() < 1e-12);
    assert_eq!(unsafe { bike_temporal_saliency(frames, words, 0.0, s.as_mut_ptr(), 2) }, BIKE_ERR_NON_POSITIVE_TEMPERATURE);

    let same = matrix(2, 2, &[1.0, 0.0, 1.0, 0.0]);
    let mut t = BikeInfoNce::default();
    assert_eq!(unsafe { bike_symmetric_infonce(same, same, [0usize, 1].as_ptr(), 2, 1.0, &mut t) }, BIKE_OK);
    assert!((t.sym - std::f64::consts::LN_2).abs() < 1e-15);

    let rows: Vec<f64> = (0..4).flat_map(|i| (0..4).map(move |j| if i == j { 1.0 } else { 0.0 })).collect();
    let v = matrix(4, 4, &rows);
    let labels = [0usize, 1, 2, 3];
    let (mut one, mut four) = (0.0, 0.0);
    unsafe {
        assert_eq!(bike_distributed_loss(v, v, labels.as_ptr(), 4, 1.0, 1, BikePositiveMode::MultiPositive, false, &mut one), BIKE_OK);
        assert_eq!(bike_distributed_loss(v, v, labels.as_ptr(), 4, 1.0, 4, BikePositiveMode::Diagonal, true, &mut four), BIKE_OK);
        assert_eq!(
            bike_distributed_loss(v, v, labels.as_ptr(), 4, 1.0, 3, BikePositiveMode::Diagonal, false, &mut four),
            BIKE_ERR_INDIVISIBLE_BATCH
        );
    }
    // aligned one-hot pairs: lse(1, 0, 0, 0) - 1
    let want = (1f64.exp() + 3.0).ln() - 1.0;
    assert!((one - want).abs() < 1e-12 && (four - want).abs() < 1e-12);
    unsafe {
        for m in [frames, words, same, v] {
            bike_matrix_free(m);
        }
    }
}

#[test]
fn fuse_and_topk() {
    let (sv, sa) = ([0.8, 0.1, 0.8], [0.5, 0.9, 0.5]);
    let mut out = [0.0; 3];
    assert_eq!(unsafe { bike_fuse(sv.as_ptr(), sa.as_ptr(), 3, 0.6, out.as_mut_ptr()) }, BIKE_OK);
    assert!((out[0] - 0.68).abs() < 1e-15);
    let mut top = [0usize; 3];
    assert_eq!(unsafe { bike_predict_topk(out.as_ptr(), 3, 3, top.as_mut_ptr()) }, BIKE_OK);
    assert_eq!(top, [0, 2, 1]);
    assert_eq!(unsafe { bike_fuse(sv.as_ptr(), sa.as_ptr(), 3, 1.5, out.as_mut_ptr()) }, BIKE_ERR_LAMBDA_OUT_OF_RANGE);
    assert_eq!(unsafe { bike_predict_topk(out.as_ptr(), 3, 4, top.as_mut_ptr()) }, BIKE_ERR_BAD_K);
}

#[test]
fn dataset_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = cpath(&synthetic(dir.path()));
    let lexicon = cpath(&dir.path().join("lexicon.json"));
    let (mut ds, mut lex) = (ptr::null_mut(), ptr::null_mut());
    unsafe {
        assert_eq!(bike_dataset_load(manifest.as_ptr(), &mut ds), BIKE_OK);
        assert_eq!(bike_lexicon_load(lexicon.as_ptr(), &mut lex), BIKE_OK);
        assert_eq!((bike_dataset_num_videos(ds), bike_dataset_num_classes(ds)), (24, 6));

        let mut cfg = bike_eval_config_default();
        assert_eq!(cfg.lambda, 0.6);
        let (mut top1, mut top5) = (0.0, 0.0);
        assert_eq!(bike_evaluate(ds, &cfg, ptr::null(), &mut top1, &mut top5), BIKE_OK);
        assert_eq!((top1, top5), (1.0, 1.0));
        cfg.k_attributes = 1;
        assert_eq!(bike_evaluate(ds, &cfg, lex, &mut top1, &mut top5), BIKE_OK);
        assert_eq!(top1, 1.0);

        let (mut mean, mut std) = (0.0, 0.0);
        assert_eq!(bike_half_class_eval(ds, &cfg, ptr::null(), 10, 3, &mut mean, &mut std), BIKE_OK);
        assert_eq!((mean, std), (1.0, 0.0));

        cfg.lambda = -0.1;
        assert_eq!(bike_evaluate(ds, &cfg, ptr::null(), &mut top1, &mut top5), BIKE_ERR_LAMBDA_OUT_OF_RANGE);
        bike_dataset_free(ds);
        bike_lexicon_free(lex);
    }
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(bike_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

/// Compiles a C program against the generated header and the static library.
#[test]
fn c_program_links_and_runs() {
    let header_dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let header = std::fs::read_to_string(header_dir.join("bike.h")).unwrap();
    for name in ["bike_matrix_new", "bike_evaluate", "bike_last_error", "BIKE_ERR_BAD_MAGIC", "typedef struct BikeMatrix BikeMatrix"] {
        assert!(header.contains(name), "{name} missing from header");
    }
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("no C compiler on PATH; header content checked only");
        return;
    }
    // tests live in target/<profile>/deps; the static library one level up
    let exe = std::env::current_exe().unwrap();
    let lib_dir = exe.parent().unwrap().parent().unwrap();
    assert!(lib_dir.join("libbike_ffi.a").exists(), "static library not found in {}", lib_dir.display());

    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include <string.h>
#include "bike.h"

int main(void) {
    double data[4] = {3.0, 4.0, 0.0, 1.0};
    BikeMatrix *m = NULL;
    if (bike_matrix_new(2, 2, data, &m) != BIKE_OK) return 1;
    double words[2] = {1.0, 0.0};
    BikeMatrix *w = NULL;
    if (bike_matrix_new(1, 2, words, &w) != BIKE_OK) return 2;
    double s[2];
    if (bike_temporal_saliency(m, w, 1.0, s, 2) != BIKE_OK) return 3;
    if (s[0] + s[1] < 0.999999 || s[0] + s[1] > 1.000001) return 4;
    BikeMatrix *missing = NULL;
    if (bike_bemb_read("/nonexistent/x.bemb", &missing) != BIKE_ERR_MISSING_FILE) return 5;
    if (strstr(bike_last_error(), "x.bemb") == NULL) return 6;
    BikeEvalConfig cfg = bike_eval_config_default();
    if (cfg.aggregation != BIKE_AGGREGATION_CONCEPT_SPOTTING) return 7;
    bike_matrix_free(m);
    bike_matrix_free(w);
    printf("ok %s\n", bike_version());
    return 0;
}
"#,
    )
    .unwrap();
    let bin = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(&header_dir)
        .arg(lib_dir.join("libbike_ffi.a"))
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "C program exited with {:?}", out.status.code());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
