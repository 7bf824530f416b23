//! C interface: load a trained detector or transfer module, run slide-level
//! detection on raw RGB buffers, restyle patches and score detections.
//!
//! Every fallible call returns a [`MitodetStatus`]; on failure the message is
//! available from [`mitodet_last_error`] on the same thread. Handles are
//! opaque and released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use mitodet::detector::Detector;
use mitodet::eval::{evaluate, infer_slide, EvalConfig};
use mitodet::geometry::{Detection, GroundTruthBox};
use mitodet::patch::{Patch, RgbImage};
use mitodet::style::{ScannerDomain, StyleCode};
use mitodet::synth::Slide;
use mitodet::transfer::Generator;
use mitodet::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MitodetStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    BadCheckpoint = 4,
    Shape = 5,
    Panic = 6,
}

/// Trained detector plus the patch size it was trained on.
pub struct MitodetDetector {
    model: Detector<f32>,
    patch_size: usize,
}

/// Trained style-transfer generator.
pub struct MitodetTransfer {
    generator: Generator<f32>,
    patch_size: usize,
}

/// Detections produced by [`mitodet_detect_rgb`].
pub struct MitodetDetections {
    items: Vec<Detection>,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MitodetDetection {
    pub x: f64,
    pub y: f64,
    pub score: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MitodetPoint {
    pub x: f64,
    pub y: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MitodetEvalConfig {
    pub score_threshold: f64,
    pub nms_iou: f64,
    pub match_radius: f64,
    pub tile_overlap: usize,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MitodetCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior NUL");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> MitodetStatus {
    match e {
        Error::Io(_) => MitodetStatus::Io,
        Error::Checkpoint { .. } => MitodetStatus::BadCheckpoint,
        Error::Shape(_) | Error::Tile { .. } => MitodetStatus::Shape,
        _ => MitodetStatus::InvalidArgument,
    }
}

struct Failure(MitodetStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(MitodetStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(MitodetStatus::InvalidArgument, msg.into())
}

/// Runs `f`, recording the error message and converting panics.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MitodetStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MitodetStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            MitodetStatus::Panic
        }
    }
}

unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, Failure> {
    if path.is_null() {
        return Err(null("path"));
    }
    // SAFETY: non-null and NUL-terminated per the caller contract.
    let s = unsafe { CStr::from_ptr(path) }.to_str().map_err(|_| invalid("path is not UTF-8"))?;
    Ok(PathBuf::from(s))
}

fn config_from(cfg: &MitodetEvalConfig) -> EvalConfig {
    EvalConfig {
        score_threshold: cfg.score_threshold,
        nms_iou: cfg.nms_iou,
        match_radius: cfg.match_radius,
        tile_overlap: cfg.tile_overlap,
    }
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn mitodet_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mitodet_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn mitodet_eval_config_default() -> MitodetEvalConfig {
    let d = EvalConfig::default();
    MitodetEvalConfig {
        score_threshold: d.score_threshold,
        nms_iou: d.nms_iou,
        match_radius: d.match_radius,
        tile_overlap: d.tile_overlap,
    }
}

/// Loads a detector checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mitodet_detector_load(path: *const c_char, out: *mut *mut MitodetDetector) -> MitodetStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        // SAFETY: forwarded caller contract.
        let path = unsafe { path_arg(path) }?;
        let (cfg, state) = mitodet::checkpoint::load_detector(&path)?;
        let handle = Box::new(MitodetDetector {
            model: state.detector,
            patch_size: cfg.patch_size,
        });
        // SAFETY: `out` is non-null and writable per the caller contract.
        unsafe { *out = Box::into_raw(handle) };
        Ok(())
    })
}

/// # Safety
/// `det` must come from [`mitodet_detector_load`] and not be used afterwards.
/// NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn mitodet_detector_free(det: *mut MitodetDetector) {
    if !det.is_null() {
        // SAFETY: allocated by `Box::into_raw` in `mitodet_detector_load`.
        drop(unsafe { Box::from_raw(det) });
    }
}

/// Patch size the detector was trained with, or 0 for NULL.
///
/// # Safety
/// `det` must be NULL or a live detector handle.
#[no_mangle]
pub unsafe extern "C" fn mitodet_detector_patch_size(det: *const MitodetDetector) -> usize {
    // SAFETY: NULL or live per the caller contract.
    unsafe { det.as_ref() }.map_or(0, |d| d.patch_size)
}

/// Detects figures on an interleaved 8-bit RGB image of `width × height`
/// pixels (row stride `3 * width`). No style transfer is applied.
///
/// # Safety
/// `rgb` must point to `3 * width * height` readable bytes; `det`, `cfg` and
/// `out` must be valid. `cfg` may be NULL for the defaults.
#[no_mangle]
pub unsafe extern "C" fn mitodet_detect_rgb(
    det: *const MitodetDetector,
    rgb: *const u8,
    width: usize,
    height: usize,
    cfg: *const MitodetEvalConfig,
    out: *mut *mut MitodetDetections,
) -> MitodetStatus {
    guard(|| {
        // SAFETY: NULL or live per the caller contract.
        let det = unsafe { det.as_ref() }.ok_or_else(|| null("detector"))?;
        if rgb.is_null() {
            return Err(null("rgb"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let len = width.checked_mul(height).and_then(|n| n.checked_mul(3)).ok_or_else(|| invalid("image too large"))?;
        // SAFETY: `rgb` covers `len` bytes per the caller contract.
        let data = unsafe { std::slice::from_raw_parts(rgb, len) }.to_vec();
        // SAFETY: NULL or valid per the caller contract.
        let cfg = unsafe { cfg.as_ref() }.map_or_else(EvalConfig::default, config_from);
        let slide = Slide {
            slide_id: String::new(),
            scanner: ScannerDomain::UNSEEN,
            image: RgbImage::from_raw(width, height, data)?,
            mitoses: Vec::new(),
        };
        let items = infer_slide(&det.model, &slide, det.patch_size, &cfg)?;
        // SAFETY: `out` is non-null and writable.
        unsafe { *out = Box::into_raw(Box::new(MitodetDetections { items })) };
        Ok(())
    })
}

/// Number of detections, or 0 for NULL.
///
/// # Safety
/// `dets` must be NULL or a live detections handle.
#[no_mangle]
pub unsafe extern "C" fn mitodet_detections_len(dets: *const MitodetDetections) -> usize {
    // SAFETY: NULL or live per the caller contract.
    unsafe { dets.as_ref() }.map_or(0, |d| d.items.len())
}

/// Copies detection `index` (highest score first) into `out`.
///
/// # Safety
/// `dets` must be a live detections handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mitodet_detections_get(
    dets: *const MitodetDetections,
    index: usize,
    out: *mut MitodetDetection,
) -> MitodetStatus {
    guard(|| {
        // SAFETY: NULL or live per the caller contract.
        let dets = unsafe { dets.as_ref() }.ok_or_else(|| null("detections"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let d = dets
            .items
            .get(index)
            .ok_or_else(|| invalid(format!("index {index} out of range ({} detections)", dets.items.len())))?;
        // SAFETY: `out` is non-null and writable.
        unsafe {
            *out = MitodetDetection {
                x: d.x,
                y: d.y,
                score: d.score,
            }
        };
        Ok(())
    })
}

/// # Safety
/// `dets` must come from [`mitodet_detect_rgb`] and not be used afterwards.
/// NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn mitodet_detections_free(dets: *mut MitodetDetections) {
    if !dets.is_null() {
        // SAFETY: allocated by `Box::into_raw` in `mitodet_detect_rgb`.
        drop(unsafe { Box::from_raw(dets) });
    }
}

/// Loads the generator of a transfer checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mitodet_transfer_load(path: *const c_char, out: *mut *mut MitodetTransfer) -> MitodetStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        // SAFETY: forwarded caller contract.
        let path = unsafe { path_arg(path) }?;
        let (cfg, state) = mitodet::checkpoint::load_transfer(&path)?;
        let handle = Box::new(MitodetTransfer {
            generator: state.generator,
            patch_size: cfg.patch_size,
        });
        // SAFETY: `out` is non-null and writable.
        unsafe { *out = Box::into_raw(handle) };
        Ok(())
    })
}

/// # Safety
/// `t` must come from [`mitodet_transfer_load`] and not be used afterwards.
/// NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn mitodet_transfer_free(t: *mut MitodetTransfer) {
    if !t.is_null() {
        // SAFETY: allocated by `Box::into_raw` in `mitodet_transfer_load`.
        drop(unsafe { Box::from_raw(t) });
    }
}

/// Patch size the generator was trained with, or 0 for NULL.
///
/// # Safety
/// `t` must be NULL or a live transfer handle.
#[no_mangle]
pub unsafe extern "C" fn mitodet_transfer_patch_size(t: *const MitodetTransfer) -> usize {
    // SAFETY: NULL or live per the caller contract.
    unsafe { t.as_ref() }.map_or(0, |t| t.patch_size)
}

/// Restyles a square interleaved RGB patch towards the style code
/// `weights[0..4]` (non-negative, summing to 1) and writes the result to
/// `rgb_out`. The side must be a positive multiple of 4.
///
/// # Safety
/// `rgb_in` and `rgb_out` must each cover `3 * size * size` bytes, `weights`
/// four doubles, and `t` must be a live transfer handle.
#[no_mangle]
pub unsafe extern "C" fn mitodet_transfer_rgb(
    t: *const MitodetTransfer,
    rgb_in: *const u8,
    size: usize,
    weights: *const f64,
    rgb_out: *mut u8,
) -> MitodetStatus {
    guard(|| {
        // SAFETY: NULL or live per the caller contract.
        let t = unsafe { t.as_ref() }.ok_or_else(|| null("transfer"))?;
        if rgb_in.is_null() || rgb_out.is_null() || weights.is_null() {
            return Err(null("buffer"));
        }
        let len = size.checked_mul(size).and_then(|n| n.checked_mul(3)).ok_or_else(|| invalid("patch too large"))?;
        // SAFETY: buffer sizes per the caller contract.
        let input = unsafe { std::slice::from_raw_parts(rgb_in, len) }.to_vec();
        // SAFETY: four readable doubles per the caller contract.
        let w = unsafe { std::slice::from_raw_parts(weights, 4) };
        let code = StyleCode::new([w[0], w[1], w[2], w[3]])?;
        let image = RgbImage::from_raw(size, size, input)?;
        let patch = Patch::crop(&image, "", ScannerDomain::UNSEEN, 0, 0, size)?;
        let styled = t.generator.transfer_patch(&patch, &code)?.to_rgb();
        // SAFETY: `rgb_out` covers `len` writable bytes.
        unsafe { ptr::copy_nonoverlapping(styled.data.as_ptr(), rgb_out, len) };
        Ok(())
    })
}

/// Scores detections on one slide against ground-truth centres.
///
/// # Safety
/// `dets` must cover `n_dets` items and `truth` `n_truth` items (either may
/// be NULL when its count is 0); `cfg` may be NULL; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mitodet_evaluate(
    dets: *const MitodetDetection,
    n_dets: usize,
    truth: *const MitodetPoint,
    n_truth: usize,
    cfg: *const MitodetEvalConfig,
    out: *mut MitodetCounts,
) -> MitodetStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if (dets.is_null() && n_dets > 0) || (truth.is_null() && n_truth > 0) {
            return Err(null("input array"));
        }
        let dets: &[MitodetDetection] = if n_dets == 0 {
            &[]
        } else {
            // SAFETY: `n_dets` readable items per the caller contract.
            unsafe { std::slice::from_raw_parts(dets, n_dets) }
        };
        let truth: &[MitodetPoint] = if n_truth == 0 {
            &[]
        } else {
            // SAFETY: `n_truth` readable items per the caller contract.
            unsafe { std::slice::from_raw_parts(truth, n_truth) }
        };
        if let Some(d) = dets.iter().find(|d| !(0.0..=1.0).contains(&d.score)) {
            return Err(invalid(format!("score {} outside [0, 1]", d.score)));
        }
        // SAFETY: NULL or valid per the caller contract.
        let cfg = unsafe { cfg.as_ref() }.map_or_else(EvalConfig::default, config_from);
        let key = String::from("slide");
        let d = [(key.clone(), dets.iter().map(|d| Detection::new(d.x, d.y, d.score)).collect())].into();
        let g = [(key, truth.iter().map(|p| GroundTruthBox::new(p.x, p.y)).collect())].into();
        let r = evaluate(&d, &g, &cfg)?;
        // SAFETY: `out` is non-null and writable.
        unsafe {
            *out = MitodetCounts {
                tp: r.tp,
                fp: r.fp,
                fn_: r.fn_,
                precision: r.precision,
                recall: r.recall,
                f1: r.f1,
            }
        };
        Ok(())
    })
}
