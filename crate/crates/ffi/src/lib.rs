//! C ABI over `reid_lstm`.
//!
//! Every fallible function returns a [`ReidStatus`]; on failure a message is
//! available from [`reid_last_error`] until the next call on the same thread.
//! Handles are opaque and must be released with their matching `_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::ptr;

use reid_lstm::model::{contrastive_loss, distance, embed, Label};
use reid_lstm::{Error, FeatureSet, RowSequence, SiameseParams};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReidStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Dimension = 5,
    Numerical = 6,
    BufferTooSmall = 7,
}

/// Loaded siamese model.
pub struct ReidModel {
    params: SiameseParams,
}

/// Feature set loaded from a manifest.
pub struct ReidFeatureSet {
    set: FeatureSet,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(err: &Error) -> ReidStatus {
    match err {
        Error::Shape { .. } => ReidStatus::Dimension,
        Error::Io { .. } => ReidStatus::Io,
        Error::BadMagic { .. } | Error::Truncated { .. } | Error::Inconsistent { .. } | Error::Json { .. } => {
            ReidStatus::Format
        }
        Error::NonFiniteLoss { .. } | Error::Numerical(_) => ReidStatus::Numerical,
        _ => ReidStatus::InvalidArgument,
    }
}

fn fail(status: ReidStatus, msg: impl Into<String>) -> ReidStatus {
    set_error(msg);
    status
}

fn fail_with(err: Error) -> ReidStatus {
    let status = status_of(&err);
    fail(status, err.to_string())
}

unsafe fn path_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, ReidStatus> {
    if p.is_null() {
        return Err(fail(ReidStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(ReidStatus::InvalidArgument, format!("{what} is not valid UTF-8")))
}

/// Message for the most recent failure on this thread, or null.
///
/// The pointer stays valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn reid_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Loads a model file into `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn reid_model_load(path: *const c_char, out: *mut *mut ReidModel) -> ReidStatus {
    clear_error();
    if out.is_null() {
        return fail(ReidStatus::NullPointer, "out is null");
    }
    *out = ptr::null_mut();
    let path = match path_arg(path, "path") {
        Ok(p) => p,
        Err(s) => return s,
    };
    match SiameseParams::load(Path::new(path)) {
        Ok(params) => {
            *out = Box::into_raw(Box::new(ReidModel { params }));
            ReidStatus::Ok
        }
        Err(e) => fail_with(e),
    }
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`reid_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn reid_model_free(model: *mut ReidModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Writes rows `R`, input width `d`, hidden size `n` and embedding length.
///
/// # Safety
/// `model` must be a live handle; each out pointer may be null.
#[no_mangle]
pub unsafe extern "C" fn reid_model_dims(
    model: *const ReidModel,
    rows: *mut usize,
    input_dim: *mut usize,
    hidden_dim: *mut usize,
    embedding_dim: *mut usize,
) -> ReidStatus {
    clear_error();
    let Some(m) = model.as_ref() else {
        return fail(ReidStatus::NullPointer, "model is null");
    };
    for (p, v) in [
        (rows, m.params.rows()),
        (input_dim, m.params.input_dim()),
        (hidden_dim, m.params.hidden_dim()),
        (embedding_dim, m.params.embedding_dim()),
    ] {
        if !p.is_null() {
            *p = v;
        }
    }
    ReidStatus::Ok
}

/// Embeds one image given as `rows × input_dim` values, row-major.
///
/// `out` must hold `out_len >= embedding_dim` values.
///
/// # Safety
/// `features` must point to `len` readable doubles and `out` to `out_len`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn reid_model_embed(
    model: *const ReidModel,
    features: *const f64,
    len: usize,
    out: *mut f64,
    out_len: usize,
) -> ReidStatus {
    clear_error();
    let Some(m) = model.as_ref() else {
        return fail(ReidStatus::NullPointer, "model is null");
    };
    if features.is_null() || out.is_null() {
        return fail(ReidStatus::NullPointer, "features or out is null");
    }
    let p = &m.params;
    if len != p.rows() * p.input_dim() {
        return fail(
            ReidStatus::Dimension,
            format!("expected {}x{} = {} values, got {len}", p.rows(), p.input_dim(), p.rows() * p.input_dim()),
        );
    }
    if out_len < p.embedding_dim() {
        return fail(
            ReidStatus::BufferTooSmall,
            format!("output needs {} values, got {out_len}", p.embedding_dim()),
        );
    }
    let data = std::slice::from_raw_parts(features, len).to_vec();
    let result = RowSequence::from_flat(p.rows(), p.input_dim(), data).and_then(|seq| embed(p, &seq));
    match result {
        Ok(s) => {
            std::slice::from_raw_parts_mut(out, s.len()).copy_from_slice(&s);
            ReidStatus::Ok
        }
        Err(e) => fail_with(e),
    }
}

/// Euclidean distance between two embeddings of length `len`.
///
/// # Safety
/// `a` and `b` must point to `len` doubles, `out` to one writable double.
#[no_mangle]
pub unsafe extern "C" fn reid_distance(a: *const f64, b: *const f64, len: usize, out: *mut f64) -> ReidStatus {
    clear_error();
    if a.is_null() || b.is_null() || out.is_null() {
        return fail(ReidStatus::NullPointer, "argument is null");
    }
    let (a, b) = (std::slice::from_raw_parts(a, len), std::slice::from_raw_parts(b, len));
    match distance(a, b) {
        Ok(d) => {
            *out = d;
            ReidStatus::Ok
        }
        Err(e) => fail_with(e),
    }
}

/// Contrastive loss for a pair at distance `dist`; `label` is 0 for the same
/// person and 1 for different people.
///
/// # Safety
/// `out` must point to one writable double.
#[no_mangle]
pub unsafe extern "C" fn reid_contrastive_loss(dist: f64, label: u8, margin: f64, out: *mut f64) -> ReidStatus {
    clear_error();
    if out.is_null() {
        return fail(ReidStatus::NullPointer, "out is null");
    }
    match Label::from_int(label).and_then(|l| contrastive_loss(dist, l, margin)) {
        Ok(v) => {
            *out = v;
            ReidStatus::Ok
        }
        Err(e) => fail_with(e),
    }
}

/// Loads feature set `name` listed in the manifest at `manifest`.
///
/// # Safety
/// Both strings must be NUL-terminated; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn reid_features_load(
    manifest: *const c_char,
    name: *const c_char,
    out: *mut *mut ReidFeatureSet,
) -> ReidStatus {
    clear_error();
    if out.is_null() {
        return fail(ReidStatus::NullPointer, "out is null");
    }
    *out = ptr::null_mut();
    let manifest = match path_arg(manifest, "manifest") {
        Ok(p) => p,
        Err(s) => return s,
    };
    let name = match path_arg(name, "name") {
        Ok(p) => p,
        Err(s) => return s,
    };
    match reid_lstm::dataset::load_feature_set(Path::new(manifest), name) {
        Ok(set) => {
            *out = Box::into_raw(Box::new(ReidFeatureSet { set }));
            ReidStatus::Ok
        }
        Err(e) => fail_with(e),
    }
}

/// Releases a feature set. Null is ignored.
///
/// # Safety
/// `set` must come from [`reid_features_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn reid_features_free(set: *mut ReidFeatureSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

/// Writes item count, rows `R` and row width `d`.
///
/// # Safety
/// `set` must be a live handle; each out pointer may be null.
#[no_mangle]
pub unsafe extern "C" fn reid_features_dims(
    set: *const ReidFeatureSet,
    count: *mut usize,
    rows: *mut usize,
    dim: *mut usize,
) -> ReidStatus {
    clear_error();
    let Some(s) = set.as_ref() else {
        return fail(ReidStatus::NullPointer, "set is null");
    };
    for (p, v) in [(count, s.set.len()), (rows, s.set.rows()), (dim, s.set.dim())] {
        if !p.is_null() {
            *p = v;
        }
    }
    ReidStatus::Ok
}

/// Copies item `index` (`R × d` values, row-major) into `out` and its
/// identity and camera into the optional out pointers.
///
/// # Safety
/// `set` must be a live handle and `out` must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn reid_features_item(
    set: *const ReidFeatureSet,
    index: usize,
    out: *mut f64,
    out_len: usize,
    identity: *mut u32,
    camera: *mut u32,
) -> ReidStatus {
    clear_error();
    let Some(s) = set.as_ref() else {
        return fail(ReidStatus::NullPointer, "set is null");
    };
    if out.is_null() {
        return fail(ReidStatus::NullPointer, "out is null");
    }
    let Some(item) = s.set.items().get(index) else {
        return fail(
            ReidStatus::InvalidArgument,
            format!("index {index} out of range for {} items", s.set.len()),
        );
    };
    let values = item.seq.concat();
    if out_len < values.len() {
        return fail(
            ReidStatus::BufferTooSmall,
            format!("output needs {} values, got {out_len}", values.len()),
        );
    }
    std::slice::from_raw_parts_mut(out, values.len()).copy_from_slice(&values);
    if !identity.is_null() {
        *identity = item.identity;
    }
    if !camera.is_null() {
        *camera = item.camera;
    }
    ReidStatus::Ok
}
