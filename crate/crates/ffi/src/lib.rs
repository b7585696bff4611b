//! C ABI over the brighteye pipeline.
//!
//! Classifiers are loaded into an opaque `BeClassifiers` handle and freed
//! with `be_classifiers_free`. Every fallible call returns a `BeStatus`; on
//! failure `be_last_error_message` describes the most recent error on the
//! calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use brighteye::cli::{load_classifiers, CliError};
use brighteye::dataset::{Task, NUM_FEATURES};
use brighteye::detection::RoiPlan;
use brighteye::metrics;
use brighteye::preprocess::{prepare_image, to_unit_pixels, RgbImage};
use brighteye::train::ClassifierBank;
use brighteye::DiscDetection;

/// Number of entries written by `be_predict`: glaucoma then features 1-10.
pub const BE_NUM_TASKS: usize = 11;

const _: () = assert!(BE_NUM_TASKS == 1 + NUM_FEATURES);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    NotFound = 3,
    Incompatible = 4,
    Failed = 5,
    Panic = 6,
}

/// One detector box in pixel coordinates of the input image.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct BeDetection {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    pub confidence: f64,
}

/// Loaded classifier bank (or a single classifier).
pub struct BeClassifiers {
    bank: ClassifierBank,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul bytes removed"));
}

fn fail(status: BeStatus, msg: impl Into<String>) -> BeStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> BeStatus) -> BeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == BeStatus::Ok {
                set_error("");
            }
            s
        }
        Err(_) => fail(BeStatus::Panic, "internal panic"),
    }
}

/// Message for the last failed call on this thread; empty after success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn be_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn be_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint file or a bank directory into `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn be_classifiers_load(path: *const c_char, out: *mut *mut BeClassifiers) -> BeStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return fail(BeStatus::NullPointer, "null argument");
        }
        *out = ptr::null_mut();
        let Ok(path) = CStr::from_ptr(path).to_str() else {
            return fail(BeStatus::InvalidArgument, "path is not UTF-8");
        };
        match load_classifiers(Path::new(path)) {
            Ok(bank) => {
                *out = Box::into_raw(Box::new(BeClassifiers { bank }));
                BeStatus::Ok
            }
            Err(e) => {
                let status = match e {
                    CliError::Missing(_) => BeStatus::NotFound,
                    CliError::Incompatible(_) => BeStatus::Incompatible,
                    CliError::Usage(_) => BeStatus::InvalidArgument,
                    CliError::Failed(_) => BeStatus::Failed,
                };
                fail(status, e.to_string())
            }
        }
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `handle` must come from `be_classifiers_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn be_classifiers_free(handle: *mut BeClassifiers) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Model input size.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn be_classifiers_input_size(
    handle: *const BeClassifiers,
    width: *mut u32,
    height: *mut u32,
) -> BeStatus {
    guard(|| {
        if handle.is_null() || width.is_null() || height.is_null() {
            return fail(BeStatus::NullPointer, "null argument");
        }
        let c = &(*handle).bank.config;
        *width = c.image_width as u32;
        *height = c.image_height as u32;
        BeStatus::Ok
    })
}

fn task_at(index: usize) -> Task {
    if index == 0 {
        Task::Glaucoma
    } else {
        Task::Feature(index as u8)
    }
}

/// Whether the handle holds a classifier for task `index` (0 glaucoma,
/// 1-10 features).
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn be_classifiers_has_task(
    handle: *const BeClassifiers,
    index: u32,
    present: *mut bool,
) -> BeStatus {
    guard(|| {
        if handle.is_null() || present.is_null() {
            return fail(BeStatus::NullPointer, "null argument");
        }
        if index as usize >= BE_NUM_TASKS {
            return fail(BeStatus::InvalidArgument, format!("task index {index} out of range"));
        }
        *present = (*handle).bank.models.contains_key(&task_at(index as usize));
        BeStatus::Ok
    })
}

/// Runs every loaded classifier on one interleaved RGB8 image.
///
/// `detections` may be null when `n_detections` is 0. `probs` receives
/// `BE_NUM_TASKS` values (glaucoma, then features 1-10); tasks without a
/// classifier get NaN. `used_crop`, if not null, is set to whether the disc
/// crop was applied.
///
/// # Safety
/// `rgb` must hold `3 * width * height` bytes, `detections` must hold
/// `n_detections` entries and `probs` room for `BE_NUM_TASKS` floats.
#[no_mangle]
pub unsafe extern "C" fn be_predict(
    handle: *const BeClassifiers,
    rgb: *const u8,
    width: u32,
    height: u32,
    detections: *const BeDetection,
    n_detections: usize,
    probs: *mut f32,
    used_crop: *mut bool,
) -> BeStatus {
    guard(|| {
        if handle.is_null() || rgb.is_null() || probs.is_null() || (detections.is_null() && n_detections > 0) {
            return fail(BeStatus::NullPointer, "null argument");
        }
        if width == 0 || height == 0 {
            return fail(BeStatus::InvalidArgument, "empty image");
        }
        let bank = &(*handle).bank;
        let len = 3 * width as usize * height as usize;
        let pixels = std::slice::from_raw_parts(rgb, len).to_vec();
        let image = RgbImage::from_raw(width, height, pixels).expect("buffer length checked");
        let dets: Vec<DiscDetection> = if n_detections == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(detections, n_detections)
                .iter()
                .map(|d| DiscDetection {
                    cx: d.cx,
                    cy: d.cy,
                    w: d.w,
                    h: d.h,
                    confidence: d.confidence,
                })
                .collect()
        };
        let c = &bank.config;
        let (prepared, plan) =
            match prepare_image(&image, &dets, &bank.preprocess, c.image_width as u32, c.image_height as u32) {
                Ok(v) => v,
                Err(e) => return fail(BeStatus::InvalidArgument, e.to_string()),
            };
        let input = to_unit_pixels(&prepared);
        let out = std::slice::from_raw_parts_mut(probs, BE_NUM_TASKS);
        for (i, slot) in out.iter_mut().enumerate() {
            *slot = match bank.models.get(&task_at(i)) {
                Some(model) => match model.predict(&input) {
                    Ok(p) => p,
                    Err(e) => return fail(BeStatus::Failed, e.to_string()),
                },
                None => f32::NAN,
            };
        }
        if !used_crop.is_null() {
            *used_crop = matches!(plan, RoiPlan::CropDisc(_));
        }
        BeStatus::Ok
    })
}

unsafe fn scores_and_labels<'a>(
    scores: *const f64,
    labels: *const u8,
    n: usize,
) -> Result<(&'a [f64], Vec<bool>), BeStatus> {
    if scores.is_null() || labels.is_null() {
        return Err(fail(BeStatus::NullPointer, "null argument"));
    }
    let s = std::slice::from_raw_parts(scores, n);
    let l = std::slice::from_raw_parts(labels, n).iter().map(|&b| b != 0).collect();
    Ok((s, l))
}

/// Sensitivity at the given specificity (0.95 for the screening metric).
///
/// # Safety
/// `scores` and `labels` must hold `n` entries; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn be_tpr_at_specificity(
    scores: *const f64,
    labels: *const u8,
    n: usize,
    specificity: f64,
    out: *mut f64,
) -> BeStatus {
    guard(|| {
        if out.is_null() {
            return fail(BeStatus::NullPointer, "null argument");
        }
        let (s, l) = match scores_and_labels(scores, labels, n) {
            Ok(v) => v,
            Err(status) => return status,
        };
        match metrics::tpr_at_specificity(s, &l, specificity) {
            Ok(v) => {
                *out = v;
                BeStatus::Ok
            }
            Err(e) => fail(BeStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Area under the ROC curve.
///
/// # Safety
/// `scores` and `labels` must hold `n` entries; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn be_auc(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> BeStatus {
    guard(|| {
        if out.is_null() {
            return fail(BeStatus::NullPointer, "null argument");
        }
        let (s, l) = match scores_and_labels(scores, labels, n) {
            Ok(v) => v,
            Err(status) => return status,
        };
        match metrics::roc_curve(s, &l) {
            Ok(curve) => {
                *out = metrics::auc(&curve);
                BeStatus::Ok
            }
            Err(e) => fail(BeStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Fraction of differing flags between two vectors of length `n`.
///
/// # Safety
/// `pred` and `truth` must hold `n` entries; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn be_normalized_hamming(
    pred: *const u8,
    truth: *const u8,
    n: usize,
    out: *mut f64,
) -> BeStatus {
    guard(|| {
        if pred.is_null() || truth.is_null() || out.is_null() {
            return fail(BeStatus::NullPointer, "null argument");
        }
        let flags = |p: *const u8| -> Vec<bool> { std::slice::from_raw_parts(p, n).iter().map(|&b| b != 0).collect() };
        match metrics::normalized_hamming(&flags(pred), &flags(truth)) {
            Ok(v) => {
                *out = v;
                BeStatus::Ok
            }
            Err(e) => fail(BeStatus::InvalidArgument, e.to_string()),
        }
    })
}
