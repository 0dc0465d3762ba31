//! C ABI over the occlusia toolkit.
//!
//! Objects are opaque handles created by `occ_*_new`/`occ_*_load` style functions and released
//! with the matching `occ_*_free`. Every fallible function returns an [`OccStatus`]; on failure
//! [`occ_last_error`] gives a message for the calling thread. Rasters are row-major `float`
//! arrays with interleaved channels.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use occlusia::annotate::{build_ground_truth, AnnotateConfig, InstanceMap, SegmentsFile};
use occlusia::eval::{aor_curve, THRESHOLD_COUNT};
use occlusia::infer::{infer_with, multiscale_average, InferConfig, NmsConfig, ScoredBoundaryMap};
use occlusia::net::{forward, Architecture, Head, ModelParams};
use occlusia::chain::Pixel;
use occlusia::{Error, OrientedBoundaryMap, Raster};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OccStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    InvalidInput = 2,
    ShapeMismatch = 3,
    /// A file or buffer could not be parsed.
    Format = 4,
    Io = 5,
    Diverged = 6,
    /// An internal error; the library state is unchanged.
    Panic = 7,
}

/// Network output stream, for receptive-field queries.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OccHead {
    Trunk = 0,
    Boundary = 1,
    Orientation = 2,
}

/// Image or per-pixel map.
pub struct OccRaster(Raster);

/// Trained network parameters.
pub struct OccModel(ModelParams);

/// Inference output: boundary confidence, orientation, orientation confidence and total score.
pub struct OccScoredMap {
    rasters: [OccRaster; 4],
    untangented: Vec<Pixel>,
}

impl OccScoredMap {
    fn new(s: ScoredBoundaryMap) -> Self {
        Self {
            rasters: [s.edge_conf, s.orient, s.orient_conf, s.total].map(OccRaster),
            untangented: s.untangented,
        }
    }

    fn scored(&self) -> ScoredBoundaryMap {
        let [e, o, c, t] = &self.rasters;
        ScoredBoundaryMap {
            edge_conf: e.0.clone(),
            orient: o.0.clone(),
            orient_conf: c.0.clone(),
            total: t.0.clone(),
            untangented: self.untangented.clone(),
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> OccStatus {
    match e {
        Error::InvalidInput(_) => OccStatus::InvalidInput,
        Error::ShapeMismatch(_) => OccStatus::ShapeMismatch,
        Error::Format { .. } | Error::Json(_) | Error::Image(_) => OccStatus::Format,
        Error::Io(_) => OccStatus::Io,
        Error::Divergence(_) => OccStatus::Diverged,
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

/// Runs `f`, converting errors and panics into a status and the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> OccStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OccStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("{what}: null pointer"));
            OccStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal error".into());
            OccStatus::Panic
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut *mut T, what: &'static str) -> Result<&'a mut *mut T, Failure> {
    let slot = p.as_mut().ok_or(Failure::Null(what))?;
    *slot = ptr::null_mut();
    Ok(slot)
}

unsafe fn path_arg(p: *const c_char, what: &'static str) -> Result<PathBuf, Failure> {
    Ok(PathBuf::from(str_arg(p, what)?))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Lib(Error::InvalidInput(format!("{what}: not valid UTF-8"))))
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Message describing the last failed call on this thread, or null if none. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn occ_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn occ_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies `width * height * channels` floats from `data` into a new raster.
///
/// # Safety
/// `data` must point to that many readable floats; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn occ_raster_new(
    width: usize,
    height: usize,
    channels: usize,
    data: *const f32,
    out: *mut *mut OccRaster,
) -> OccStatus {
    guard(|| {
        let slot = out_ptr(out, "out")?;
        let n = width
            .checked_mul(height)
            .and_then(|v| v.checked_mul(channels))
            .ok_or_else(|| Error::InvalidInput("raster size overflows".into()))?;
        if data.is_null() {
            return Err(Failure::Null("data"));
        }
        let v = std::slice::from_raw_parts(data, n).to_vec();
        *slot = boxed(OccRaster(Raster::from_vec(width, height, channels, v)?));
        Ok(())
    })
}

/// Loads a `.fmap` file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn occ_raster_load_fmap(path: *const c_char, out: *mut *mut OccRaster) -> OccStatus {
    guard(|| {
        let slot = out_ptr(out, "out")?;
        *slot = boxed(OccRaster(Raster::load_fmap(path_arg(path, "path")?)?));
        Ok(())
    })
}

/// Loads an 8-bit PNG scaled to `[0, 1]` (one channel for grayscale, three otherwise).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn occ_raster_load_png(path: *const c_char, out: *mut *mut OccRaster) -> OccStatus {
    guard(|| {
        let slot = out_ptr(out, "out")?;
        *slot = boxed(OccRaster(Raster::load_png(path_arg(path, "path")?)?));
        Ok(())
    })
}

/// Writes a raster as `.fmap`.
///
/// # Safety
/// `raster` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn occ_raster_save_fmap(raster: *const OccRaster, path: *const c_char) -> OccStatus {
    guard(|| {
        let r = borrow(raster, "raster")?;
        std::fs::write(path_arg(path, "path")?, r.0.to_fmap_bytes()).map_err(Error::from)?;
        Ok(())
    })
}

/// # Safety
/// `raster` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn occ_raster_width(raster: *const OccRaster) -> usize {
    raster.as_ref().map_or(0, |r| r.0.width())
}

/// # Safety
/// `raster` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn occ_raster_height(raster: *const OccRaster) -> usize {
    raster.as_ref().map_or(0, |r| r.0.height())
}

/// # Safety
/// `raster` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn occ_raster_channels(raster: *const OccRaster) -> usize {
    raster.as_ref().map_or(0, |r| r.0.channels())
}

/// Borrowed pointer to the raster's samples, valid while the handle lives.
///
/// # Safety
/// `raster` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn occ_raster_data(raster: *const OccRaster) -> *const f32 {
    raster.as_ref().map_or(ptr::null(), |r| r.0.data().as_ptr())
}

/// # Safety
/// `raster` must come from this library and not be freed twice; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn occ_raster_free(raster: *mut OccRaster) {
    if !raster.is_null() {
        drop(Box::from_raw(raster));
    }
}

/// Loads a model file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn occ_model_load(path: *const c_char, out: *mut *mut OccModel) -> OccStatus {
    guard(|| {
        let slot = out_ptr(out, "out")?;
        *slot = boxed(OccModel(ModelParams::load(path_arg(path, "path")?)?));
        Ok(())
    })
}

/// Seeded, untrained network of the standard architecture.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn occ_model_init(in_channels: usize, seed: u64, out: *mut *mut OccModel) -> OccStatus {
    guard(|| {
        let slot = out_ptr(out, "out")?;
        *slot = boxed(OccModel(ModelParams::init(&Architecture::standard(in_channels), seed)?));
        Ok(())
    })
}

/// Writes a model file.
///
/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn occ_model_save(model: *const OccModel, path: *const c_char) -> OccStatus {
    guard(|| {
        let m = borrow(model, "model")?;
        std::fs::write(path_arg(path, "path")?, m.0.to_bytes()).map_err(Error::from)?;
        Ok(())
    })
}

/// Receptive field in pixels of one output stream; 0 for a null handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn occ_model_receptive_field(model: *const OccModel, head: OccHead) -> usize {
    let head = match head {
        OccHead::Trunk => Head::Trunk,
        OccHead::Boundary => Head::Boundary,
        OccHead::Orientation => Head::Orientation,
    };
    model.as_ref().map_or(0, |m| m.0.receptive_field(head))
}

/// # Safety
/// `model` must come from this library and not be freed twice; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn occ_model_free(model: *mut OccModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Raw network outputs: boundary probability and unbounded orientation.
///
/// # Safety
/// Handles must be live; output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn occ_model_forward(
    model: *const OccModel,
    image: *const OccRaster,
    out_edge: *mut *mut OccRaster,
    out_orient: *mut *mut OccRaster,
) -> OccStatus {
    guard(|| {
        let e_slot = out_ptr(out_edge, "out_edge")?;
        let o_slot = out_ptr(out_orient, "out_orient")?;
        let (e, o) = forward(&borrow(model, "model")?.0, &borrow(image, "image")?.0)?;
        *e_slot = boxed(OccRaster(e));
        *o_slot = boxed(OccRaster(o));
        Ok(())
    })
}

/// Thins and scores raw outputs. `nms_margin` below 1 selects the default.
///
/// # Safety
/// Handles must be live; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn occ_infer(
    edge_prob: *const OccRaster,
    orient: *const OccRaster,
    nms_margin: f64,
    out: *mut *mut OccScoredMap,
) -> OccStatus {
    guard(|| {
        let slot = out_ptr(out, "out")?;
        let mut cfg = InferConfig::default();
        if nms_margin >= 1.0 {
            cfg.nms = NmsConfig {
                margin: nms_margin,
                ..cfg.nms
            };
        }
        let s = infer_with(&borrow(edge_prob, "edge_prob")?.0, &borrow(orient, "orient")?.0, &cfg)?;
        *slot = boxed(OccScoredMap::new(s));
        Ok(())
    })
}

/// Full prediction for an image: multi-scale network pass, thinning and scoring.
///
/// # Safety
/// Handles must be live; `scales` must point to `n_scales` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn occ_predict(
    model: *const OccModel,
    image: *const OccRaster,
    scales: *const f64,
    n_scales: usize,
    out: *mut *mut OccScoredMap,
) -> OccStatus {
    guard(|| {
        let slot = out_ptr(out, "out")?;
        if scales.is_null() {
            return Err(Failure::Null("scales"));
        }
        let scales = std::slice::from_raw_parts(scales, n_scales);
        let ms = multiscale_average(&borrow(model, "model")?.0, &borrow(image, "image")?.0, scales)?;
        *slot = boxed(OccScoredMap::new(infer_with(&ms.edge_prob, &ms.orient, &InferConfig::default())?));
        Ok(())
    })
}

/// Borrowed view of one of the scored map's rasters, valid while the map lives.
/// `which`: 0 boundary confidence, 1 orientation, 2 orientation confidence, 3 total.
///
/// # Safety
/// `map` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn occ_scored_raster(map: *const OccScoredMap, which: u32) -> *const OccRaster {
    match (map.as_ref(), which) {
        (Some(m), 0..=3) => &m.rasters[which as usize],
        _ => ptr::null(),
    }
}

/// Number of thinned boundary pixels.
///
/// # Safety
/// `map` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn occ_scored_support(map: *const OccScoredMap) -> usize {
    map.as_ref().map_or(0, |m| m.rasters[1].0.data().iter().filter(|v| v.is_finite()).count())
}

/// # Safety
/// `map` must come from this library and not be freed twice; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn occ_scored_free(map: *mut OccScoredMap) {
    if !map.is_null() {
        drop(Box::from_raw(map));
    }
}

/// Number of thresholds in an AOR curve.
#[no_mangle]
pub extern "C" fn occ_threshold_count() -> usize {
    THRESHOLD_COUNT
}

/// AOR curve of a prediction against ground truth. `recall` and `accuracy` receive
/// [`occ_threshold_count`] values each; undefined accuracy is written as NaN.
///
/// # Safety
/// Handles must be live; the output arrays must hold the threshold count.
#[no_mangle]
pub unsafe extern "C" fn occ_eval_aor(
    pred: *const OccScoredMap,
    gt_edge: *const OccRaster,
    gt_orient: *const OccRaster,
    max_dist_frac: f64,
    recall: *mut f64,
    accuracy: *mut f64,
) -> OccStatus {
    guard(|| {
        if recall.is_null() || accuracy.is_null() {
            return Err(Failure::Null("recall/accuracy"));
        }
        let gt = OrientedBoundaryMap::new(borrow(gt_edge, "gt_edge")?.0.clone(), borrow(gt_orient, "gt_orient")?.0.clone())?;
        let c = aor_curve(&borrow(pred, "pred")?.scored(), &gt, max_dist_frac)?;
        let r = std::slice::from_raw_parts_mut(recall, THRESHOLD_COUNT);
        let a = std::slice::from_raw_parts_mut(accuracy, THRESHOLD_COUNT);
        for k in 0..THRESHOLD_COUNT {
            r[k] = c.recall[k];
            a[k] = c.accuracy[k].unwrap_or(f64::NAN);
        }
        Ok(())
    })
}

/// Ground truth from an instance map and a segments document (the annotation tool's JSON).
/// `rho` at or below 0 selects the default matching radius.
///
/// # Safety
/// Strings must be NUL-terminated; output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn occ_ground_truth_from_segments(
    instances_png: *const c_char,
    classes_json: *const c_char,
    segments_json: *const c_char,
    rho: f64,
    out_edge: *mut *mut OccRaster,
    out_orient: *mut *mut OccRaster,
) -> OccStatus {
    guard(|| {
        let e_slot = out_ptr(out_edge, "out_edge")?;
        let o_slot = out_ptr(out_orient, "out_orient")?;
        let m = InstanceMap::load(path_arg(instances_png, "instances_png")?, path_arg(classes_json, "classes_json")?)?;
        let segs = SegmentsFile::parse(str_arg(segments_json, "segments_json")?)?;
        let mut cfg = AnnotateConfig::default();
        if rho > 0.0 {
            cfg.rho = rho;
        }
        let gt = build_ground_truth(&m, &segs.segments, &cfg)?;
        *e_slot = boxed(OccRaster(gt.map.edge));
        *o_slot = boxed(OccRaster(gt.map.orient));
        Ok(())
    })
}
