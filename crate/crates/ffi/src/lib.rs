//! C ABI over `bike-core`.
//!
//! Conventions:
//! - Every fallible function returns an `int32_t` status; `BIKE_OK` is zero.
//!   On failure, `bike_last_error` returns a message for the calling thread.
//! - Objects are opaque handles created by `*_new`/`*_load`/`*_read` and
//!   released with the matching `*_free`. Passing NULL to a free is a no-op.
//! - Output buffers are caller-allocated; their lengths are checked.
//! - Panics never cross the boundary; they surface as `BIKE_ERR_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use bike_core::attributes::{SentenceEncoder, DEFAULT_PREFIX};
use bike_core::concept_spotting::{temporal_saliency, Aggregation};
use bike_core::distributed::{distributed_loss, Execution, PositiveMode};
use bike_core::objective::{symmetric_infonce, Batch};
use bike_core::recognition::{evaluate, fuse, half_class_eval, predict_topk, AttributeBranch, Branch, FusionConfig, ScoreVector};
use bike_core::store::{load_dataset, load_lexicon, read_bemb, write_bemb, DatasetManifest, FrameEmbeddings, Lexicon};
use bike_core::{Error, Matrix};

pub const BIKE_OK: i32 = 0;
pub const BIKE_ERR_ZERO_VECTOR: i32 = 1;
pub const BIKE_ERR_DIM_MISMATCH: i32 = 2;
pub const BIKE_ERR_NON_POSITIVE_TEMPERATURE: i32 = 3;
pub const BIKE_ERR_NON_FINITE: i32 = 4;
pub const BIKE_ERR_BAD_SHAPE: i32 = 5;
pub const BIKE_ERR_LENGTH_MISMATCH: i32 = 6;
pub const BIKE_ERR_BAD_MAGIC: i32 = 10;
pub const BIKE_ERR_BAD_VERSION: i32 = 11;
pub const BIKE_ERR_TRUNCATED_FILE: i32 = 12;
pub const BIKE_ERR_TRAILING_BYTES: i32 = 13;
pub const BIKE_ERR_DIM_OVERFLOW: i32 = 14;
pub const BIKE_ERR_MISSING_FILE: i32 = 15;
pub const BIKE_ERR_UNKNOWN_LABEL: i32 = 16;
pub const BIKE_ERR_MANIFEST: i32 = 17;
pub const BIKE_ERR_EMPTY_TEXT: i32 = 18;
pub const BIKE_ERR_BAD_K: i32 = 20;
pub const BIKE_ERR_EMPTY_ATTRIBUTES: i32 = 21;
pub const BIKE_ERR_MISSING_PLACEHOLDER: i32 = 22;
pub const BIKE_ERR_INDIVISIBLE_BATCH: i32 = 30;
pub const BIKE_ERR_INCONSISTENT_SHARD_PLAN: i32 = 31;
pub const BIKE_ERR_GATHER_NOT_RUN: i32 = 32;
pub const BIKE_ERR_LAMBDA_OUT_OF_RANGE: i32 = 40;
pub const BIKE_ERR_EMPTY_DATASET: i32 = 41;
pub const BIKE_ERR_TOO_FEW_CLASSES: i32 = 42;
pub const BIKE_ERR_DIM_TOO_SMALL: i32 = 43;
pub const BIKE_ERR_INVALID_ARGUMENT: i32 = 44;
pub const BIKE_ERR_IO: i32 = 50;
pub const BIKE_ERR_JSON: i32 = 51;
pub const BIKE_ERR_NULL_POINTER: i32 = 100;
pub const BIKE_ERR_INVALID_STRING: i32 = 101;
pub const BIKE_ERR_PANIC: i32 = 102;

/// Dense row-major matrix of doubles.
pub struct BikeMatrix(Matrix);

/// Loaded dataset manifest: categories plus labeled videos.
pub struct BikeDataset(DatasetManifest);

/// Loaded attribute lexicon.
pub struct BikeLexicon(Lexicon);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BikeAggregation {
    MeanPool = 0,
    ConceptSpotting = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BikePositiveMode {
    /// Every row sharing the anchor's label is a positive.
    MultiPositive = 0,
    /// Only the aligned row is a positive.
    Diagonal = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BikeEvalConfig {
    pub lambda: f64,
    pub tau_vcs: f64,
    pub k_attributes: usize,
    /// When false, attribute sentences are the bare phrase list.
    pub use_prompt: bool,
    pub aggregation: BikeAggregation,
    /// Seed of the surrogate sentence encoder used by the attribute branch.
    pub encoder_seed: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BikeInfoNce {
    pub x2y: f64,
    pub y2x: f64,
    pub sym: f64,
}

struct Fail {
    code: i32,
    message: String,
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail { code: e.code(), message: e.to_string() }
    }
}

fn fail(code: i32, message: impl Into<String>) -> Fail {
    Fail { code, message: message.into() }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).expect("interior NULs replaced");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

/// Runs `f`, recording any error or panic and turning it into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => BIKE_OK,
        Ok(Err(e)) => {
            set_last_error(&e.message);
            e.code
        }
        Err(_) => {
            set_last_error("panic inside bike-ffi");
            BIKE_ERR_PANIC
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| fail(BIKE_ERR_NULL_POINTER, format!("{name} is NULL")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(BIKE_ERR_NULL_POINTER, format!("{name} is NULL")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, name: &str) -> Result<&'a mut [T], Fail> {
    if p.is_null() {
        return Err(fail(BIKE_ERR_NULL_POINTER, format!("{name} is NULL")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn path(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(fail(BIKE_ERR_NULL_POINTER, "path is NULL"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| fail(BIKE_ERR_INVALID_STRING, "path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(fail(BIKE_ERR_NULL_POINTER, "output pointer is NULL"));
    }
    out.write(value);
    Ok(())
}

fn check_len(expected: usize, got: usize) -> Result<(), Fail> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::LengthMismatch { expected, got }.into())
    }
}

/// Message describing the last failure on this thread, or NULL if none.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn bike_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bike_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Defaults: lambda 0.6, tau_vcs 0.01, five attributes, prompt on,
/// concept spotting, encoder seed 0.
#[no_mangle]
pub extern "C" fn bike_eval_config_default() -> BikeEvalConfig {
    let d = FusionConfig::default();
    BikeEvalConfig {
        lambda: d.lambda,
        tau_vcs: d.tau_vcs,
        k_attributes: d.k_attributes,
        use_prompt: true,
        aggregation: BikeAggregation::ConceptSpotting,
        encoder_seed: 0,
    }
}

/// Copies `rows * cols` doubles into a new matrix.
///
/// # Safety
/// `data` must point to `rows * cols` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bike_matrix_new(rows: usize, cols: usize, data: *const f64, out: *mut *mut BikeMatrix) -> i32 {
    guard(|| {
        let n = rows.checked_mul(cols).ok_or_else(|| fail(BIKE_ERR_INVALID_ARGUMENT, "rows * cols overflows"))?;
        let m = Matrix::new(rows, cols, slice(data, n, "data")?.to_vec())?;
        write_out(out, Box::into_raw(Box::new(BikeMatrix(m))))
    })
}

/// # Safety
/// `m` must be NULL or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn bike_matrix_free(m: *mut BikeMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// # Safety
/// `m` must be a live matrix handle.
#[no_mangle]
pub unsafe extern "C" fn bike_matrix_rows(m: *const BikeMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.0.rows())
}

/// # Safety
/// `m` must be a live matrix handle.
#[no_mangle]
pub unsafe extern "C" fn bike_matrix_cols(m: *const BikeMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.0.cols())
}

/// Copies the row-major contents into `out`, which must hold exactly
/// `rows * cols` doubles.
///
/// # Safety
/// `m` must be a live handle; `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn bike_matrix_copy(m: *const BikeMatrix, out: *mut f64, len: usize) -> i32 {
    guard(|| {
        let m = &borrow(m, "matrix")?.0;
        check_len(m.as_slice().len(), len)?;
        slice_mut(out, len, "out")?.copy_from_slice(m.as_slice());
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bike_bemb_read(path: *const c_char, out: *mut *mut BikeMatrix) -> i32 {
    guard(|| {
        let m = read_bemb(self::path(path)?)?;
        write_out(out, Box::into_raw(Box::new(BikeMatrix(m))))
    })
}

/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; `m` a live handle.
#[no_mangle]
pub unsafe extern "C" fn bike_bemb_write(path: *const c_char, m: *const BikeMatrix) -> i32 {
    guard(|| Ok(write_bemb(self::path(path)?, &borrow(m, "matrix")?.0)?))
}

/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bike_dataset_load(path: *const c_char, out: *mut *mut BikeDataset) -> i32 {
    guard(|| {
        let ds = load_dataset(self::path(path)?)?;
        write_out(out, Box::into_raw(Box::new(BikeDataset(ds))))
    })
}

/// # Safety
/// `ds` must be NULL or a dataset handle that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn bike_dataset_free(ds: *mut BikeDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// # Safety
/// `ds` must be a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn bike_dataset_num_videos(ds: *const BikeDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.videos().len())
}

/// # Safety
/// `ds` must be a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn bike_dataset_num_classes(ds: *const BikeDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.categories().len())
}

/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bike_lexicon_load(path: *const c_char, out: *mut *mut BikeLexicon) -> i32 {
    guard(|| {
        let lex = load_lexicon(self::path(path)?)?;
        write_out(out, Box::into_raw(Box::new(BikeLexicon(lex))))
    })
}

/// # Safety
/// `lex` must be NULL or a lexicon handle that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn bike_lexicon_free(lex: *mut BikeLexicon) {
    if !lex.is_null() {
        drop(Box::from_raw(lex));
    }
}

fn fusion_config(c: &BikeEvalConfig) -> FusionConfig {
    FusionConfig {
        lambda: c.lambda,
        tau_vcs: c.tau_vcs,
        k_attributes: c.k_attributes,
        prefix: c.use_prompt.then(|| DEFAULT_PREFIX.to_string()),
        aggregation: match c.aggregation {
            BikeAggregation::MeanPool => Aggregation::MeanPool,
            BikeAggregation::ConceptSpotting => Aggregation::ConceptSpotting,
        },
    }
}

/// Top-1 and top-5 accuracy over the dataset. `lexicon` may be NULL, which
/// disables the attribute branch.
///
/// # Safety
/// `ds` and `config` must be valid; `lexicon` NULL or valid; `top1` and
/// `top5` writable.
#[no_mangle]
pub unsafe extern "C" fn bike_evaluate(
    ds: *const BikeDataset,
    config: *const BikeEvalConfig,
    lexicon: *const BikeLexicon,
    top1: *mut f64,
    top5: *mut f64,
) -> i32 {
    guard(|| {
        let cfg = borrow(config, "config")?;
        let lexicon = lexicon.as_ref();
        let branch = lexicon.map(|l| AttributeBranch { lexicon: &l.0, encoder: SentenceEncoder::Surrogate { seed: cfg.encoder_seed } });
        let r = evaluate(&borrow(ds, "dataset")?.0, &fusion_config(cfg), branch.as_ref())?;
        write_out(top1, r.top1)?;
        write_out(top5, r.top5)
    })
}

/// Half-class protocol: mean and population std of top-1 over `repeats`
/// random halves of the class set.
///
/// # Safety
/// As for [`bike_evaluate`]; `mean` and `std_dev` writable.
#[no_mangle]
pub unsafe extern "C" fn bike_half_class_eval(
    ds: *const BikeDataset,
    config: *const BikeEvalConfig,
    lexicon: *const BikeLexicon,
    repeats: usize,
    seed: u64,
    mean: *mut f64,
    std_dev: *mut f64,
) -> i32 {
    guard(|| {
        let cfg = borrow(config, "config")?;
        let lexicon = lexicon.as_ref();
        let branch = lexicon.map(|l| AttributeBranch { lexicon: &l.0, encoder: SentenceEncoder::Surrogate { seed: cfg.encoder_seed } });
        let r = half_class_eval(&borrow(ds, "dataset")?.0, &fusion_config(cfg), branch.as_ref(), repeats, seed)?;
        write_out(mean, r.mean)?;
        write_out(std_dev, r.std)
    })
}

/// Per-frame saliency of `frames` (T x d) with respect to `words` (N x d).
/// Frame rows are normalized first. `out` must hold exactly T doubles.
///
/// # Safety
/// Handles must be live; `out` must point to `out_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn bike_temporal_saliency(
    frames: *const BikeMatrix,
    words: *const BikeMatrix,
    tau_vcs: f64,
    out: *mut f64,
    out_len: usize,
) -> i32 {
    guard(|| {
        let frames = FrameEmbeddings::new("ffi", borrow(frames, "frames")?.0.clone())?;
        check_len(frames.num_frames(), out_len)?;
        let s = temporal_saliency(&frames, &borrow(words, "words")?.0, tau_vcs)?;
        slice_mut(out, out_len, "out")?.copy_from_slice(&s.weights);
        Ok(())
    })
}

/// Symmetric multi-positive InfoNCE between row-aligned `x` and `y`.
///
/// # Safety
/// Handles must be live; `labels` must point to `n_labels` values; `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn bike_symmetric_infonce(
    x: *const BikeMatrix,
    y: *const BikeMatrix,
    labels: *const usize,
    n_labels: usize,
    tau: f64,
    out: *mut BikeInfoNce,
) -> i32 {
    guard(|| {
        let t = symmetric_infonce(&borrow(x, "x")?.0, &borrow(y, "y")?.0, slice(labels, n_labels, "labels")?, tau)?;
        write_out(out, BikeInfoNce { x2y: t.x2y, y2x: t.y2x, sym: t.sym })
    })
}

/// Video-category loss computed by `workers` simulated workers with batch
/// gathering. Rows of `video` and `category` must be unit-norm.
///
/// # Safety
/// Handles must be live; `labels` must point to `n_labels` values; `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn bike_distributed_loss(
    video: *const BikeMatrix,
    category: *const BikeMatrix,
    labels: *const usize,
    n_labels: usize,
    tau: f64,
    workers: usize,
    mode: BikePositiveMode,
    threaded: bool,
    out: *mut f64,
) -> i32 {
    guard(|| {
        let labels = slice(labels, n_labels, "labels")?.to_vec();
        let batch = Batch::new(borrow(video, "video")?.0.clone(), None, borrow(category, "category")?.0.clone(), labels, tau)?;
        let mode = match mode {
            BikePositiveMode::MultiPositive => PositiveMode::MultiPositive,
            BikePositiveMode::Diagonal => PositiveMode::Diagonal,
        };
        let execution = if threaded { Execution::Threaded } else { Execution::Sequential };
        write_out(out, distributed_loss(&batch, workers, mode, execution)?.loss)
    })
}

/// `out[c] = lambda * video[c] + (1 - lambda) * attributes[c]`.
///
/// # Safety
/// All three pointers must reference `n` doubles; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn bike_fuse(video: *const f64, attributes: *const f64, n: usize, lambda: f64, out: *mut f64) -> i32 {
    guard(|| {
        let sv = ScoreVector { scores: slice(video, n, "video")?.to_vec(), branch: Branch::Video };
        let sa = ScoreVector { scores: slice(attributes, n, "attributes")?.to_vec(), branch: Branch::Attributes };
        let fused = fuse(&sv, &sa, lambda)?;
        slice_mut(out, n, "out")?.copy_from_slice(&fused.scores);
        Ok(())
    })
}

/// Writes the `k` best labels into `out`, highest score first, ties to the
/// lower label.
///
/// # Safety
/// `scores` must reference `n` doubles and `out` `k` writable slots.
#[no_mangle]
pub unsafe extern "C" fn bike_predict_topk(scores: *const f64, n: usize, k: usize, out: *mut usize) -> i32 {
    guard(|| {
        let s = ScoreVector { scores: slice(scores, n, "scores")?.to_vec(), branch: Branch::Fused };
        let top = predict_topk(&s, k)?;
        slice_mut(out, k, "out")?.copy_from_slice(&top);
        Ok(())
    })
}
