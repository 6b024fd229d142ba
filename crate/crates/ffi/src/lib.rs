//! C ABI over `vista-core`.
//!
//! Every fallible function returns a [`VistaStatus`]; on failure the message
//! is available from [`vista_last_error`] on the same thread until the next
//! call. Handles are opaque and must be released with their `_free`
//! function. Passing NULL where a pointer is required yields
//! `VISTA_STATUS_NULL_ARGUMENT`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use vista_core::ensemble::{ensemble_predictions, EnsembleConfig};
use vista_core::eval::{evaluate, EvalConfig};
use vista_core::io::{self, GroundTruthSet, Submission};
use vista_core::{Box2D, VistaError};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VistaStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Validation = 5,
    Tensor = 6,
    Dimension = 7,
    TooLarge = 8,
    Panic = 9,
}

impl From<&VistaError> for VistaStatus {
    fn from(e: &VistaError) -> Self {
        match e {
            VistaError::Io { .. } => VistaStatus::Io,
            VistaError::Parse { .. } => VistaStatus::Parse,
            VistaError::Validation { .. } => VistaStatus::Validation,
            VistaError::Tensor(_) => VistaStatus::Tensor,
            VistaError::Dimension(_) => VistaStatus::Dimension,
            VistaError::TooLarge(_) => VistaStatus::TooLarge,
        }
    }
}

/// A loaded or computed prediction set.
pub struct VistaPredictions {
    inner: Submission,
}

/// Ground-truth annotations with their taxonomy.
pub struct VistaGroundTruth {
    inner: GroundTruthSet,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VistaEvalConfig {
    pub iou_min: f64,
    pub ttc_max_error: f64,
    pub top_k: usize,
}

/// Mean AP per variant, in percent.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VistaMaps {
    pub overall: f64,
    pub noun: f64,
    pub noun_verb: f64,
    pub noun_ttc: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(VistaStatus, String);

impl From<VistaError> for Failure {
    fn from(e: VistaError) -> Self {
        Failure((&e).into(), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> VistaStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => VistaStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            VistaStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(VistaStatus::NullArgument, format!("{what} is NULL"))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| Failure(VistaStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Message for the last failed call on this thread, or NULL. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn vista_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn vista_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Intersection over union of two `[x1, y1, x2, y2]` boxes.
///
/// # Safety
/// `a` and `b` must point to four doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vista_iou(a: *const f64, b: *const f64, out: *mut f64) -> VistaStatus {
    guard(|| {
        let to_box = |p: *const f64, what: &str| -> Result<Box2D, Failure> {
            if p.is_null() {
                return Err(null(what));
            }
            let c = std::slice::from_raw_parts(p, 4);
            Ok(Box2D::new(c[0], c[1], c[2], c[3])?)
        };
        let (a, b) = (to_box(a, "a")?, to_box(b, "b")?);
        *out_arg(out, "out")? = vista_core::iou(&a, &b);
        Ok(())
    })
}

/// Softplus mapping from a raw head output to a non-negative ttc.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn vista_ttc_from_raw(raw: f64, out: *mut f64) -> VistaStatus {
    guard(|| {
        *out_arg(out, "out")? = vista_core::postprocess::ttc_from_raw(raw)?;
        Ok(())
    })
}

/// Writes `frame_count` ascending frame timestamps into `out_times`.
///
/// # Safety
/// `out_times` must have room for `frame_count` doubles.
#[no_mangle]
pub unsafe extern "C" fn vista_plan_frames(
    query_time: f64,
    frame_count: usize,
    sample_rate: f64,
    out_times: *mut f64,
) -> VistaStatus {
    guard(|| {
        if out_times.is_null() {
            return Err(null("out_times"));
        }
        let plan = vista_core::sampling::plan_frames(query_time, frame_count, sample_rate)?;
        std::slice::from_raw_parts_mut(out_times, frame_count).copy_from_slice(&plan.frame_times);
        Ok(())
    })
}

/// Loads a submission document.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable. On
/// success `*out` owns a handle to release with [`vista_predictions_free`].
#[no_mangle]
pub unsafe extern "C" fn vista_predictions_load(path: *const c_char, out: *mut *mut VistaPredictions) -> VistaStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let sub = io::load_predictions(&path_arg(path, "path")?)?.value;
        *out = Box::into_raw(Box::new(VistaPredictions { inner: sub }));
        Ok(())
    })
}

/// Writes a submission document.
///
/// # Safety
/// `preds` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn vista_predictions_write(preds: *const VistaPredictions, path: *const c_char) -> VistaStatus {
    guard(|| {
        let preds = ref_arg(preds, "preds")?;
        io::write_submission(&preds.inner, &path_arg(path, "path")?)?;
        Ok(())
    })
}

/// Total hypotheses across examples; 0 for NULL.
///
/// # Safety
/// `preds` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vista_predictions_count(preds: *const VistaPredictions) -> usize {
    preds.as_ref().map_or(0, |p| p.inner.predictions.n_hypotheses())
}

/// Number of examples; 0 for NULL.
///
/// # Safety
/// `preds` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vista_predictions_examples(preds: *const VistaPredictions) -> usize {
    preds.as_ref().map_or(0, |p| p.inner.predictions.n_examples())
}

/// # Safety
/// `preds` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vista_predictions_free(preds: *mut VistaPredictions) {
    if !preds.is_null() {
        drop(Box::from_raw(preds));
    }
}

/// Loads a ground-truth document.
///
/// # Safety
/// As [`vista_predictions_load`]; release with [`vista_ground_truth_free`].
#[no_mangle]
pub unsafe extern "C" fn vista_ground_truth_load(path: *const c_char, out: *mut *mut VistaGroundTruth) -> VistaStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let gt = io::load_ground_truth(&path_arg(path, "path")?)?.value;
        *out = Box::into_raw(Box::new(VistaGroundTruth { inner: gt }));
        Ok(())
    })
}

/// Number of annotations; 0 for NULL.
///
/// # Safety
/// `gt` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn vista_ground_truth_count(gt: *const VistaGroundTruth) -> usize {
    gt.as_ref().map_or(0, |g| g.inner.annotations.len())
}

/// # Safety
/// `gt` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vista_ground_truth_free(gt: *mut VistaGroundTruth) {
    if !gt.is_null() {
        drop(Box::from_raw(gt));
    }
}

/// Default evaluation settings (iou > 0.5, |ttc error| < 0.25 s, top 5).
#[no_mangle]
pub extern "C" fn vista_eval_config_default() -> VistaEvalConfig {
    let d = EvalConfig::default();
    VistaEvalConfig {
        iou_min: d.iou_min,
        ttc_max_error: d.ttc_max_error,
        top_k: d.top_k,
    }
}

/// Evaluates `preds` against `gt`. `config` may be NULL for the defaults.
///
/// # Safety
/// Handles must be live; `config` NULL or readable; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn vista_evaluate(
    preds: *const VistaPredictions,
    gt: *const VistaGroundTruth,
    config: *const VistaEvalConfig,
    out: *mut VistaMaps,
) -> VistaStatus {
    guard(|| {
        let preds = ref_arg(preds, "preds")?;
        let gt = ref_arg(gt, "gt")?;
        let out = out_arg(out, "out")?;
        let c = config.as_ref().copied().unwrap_or_else(|| vista_eval_config_default());
        let cfg = EvalConfig {
            iou_min: c.iou_min,
            ttc_max_error: c.ttc_max_error,
            top_k: c.top_k,
        };
        let r = evaluate(&preds.inner.predictions, &gt.inner.annotations, &gt.inner.taxonomy, &cfg)?;
        *out = VistaMaps {
            overall: r.map_overall,
            noun: r.map_noun,
            noun_verb: r.map_noun_verb,
            noun_ttc: r.map_noun_ttc,
        };
        Ok(())
    })
}

/// Merges `count` prediction sets with the default ensemble settings.
///
/// # Safety
/// `sources` must point to `count` live handles; `out` must be writable.
/// Release the result with [`vista_predictions_free`].
#[no_mangle]
pub unsafe extern "C" fn vista_ensemble(
    sources: *const *const VistaPredictions,
    count: usize,
    out: *mut *mut VistaPredictions,
) -> VistaStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        if sources.is_null() {
            return Err(null("sources"));
        }
        let handles = std::slice::from_raw_parts(sources, count);
        let mut sets = Vec::with_capacity(count);
        let mut taxonomies = Vec::with_capacity(count);
        for (i, &h) in handles.iter().enumerate() {
            let s = ref_arg(h, &format!("sources[{i}]"))?;
            sets.push(s.inner.predictions.clone());
            taxonomies.push(s.inner.taxonomy.as_ref());
        }
        vista_core::ensemble::check_taxonomies(&taxonomies)?;
        let (merged, _) = ensemble_predictions(&sets, &EnsembleConfig::default())?;
        let mut sub = Submission::new(merged);
        sub.taxonomy = taxonomies.into_iter().flatten().next().cloned();
        *out = Box::into_raw(Box::new(VistaPredictions { inner: sub }));
        Ok(())
    })
}
