//! C ABI over the relpu core: point cloud handles, metrics, farthest point
//! sampling and checkpoint inference.
//!
//! Every fallible call returns a [`RelpuStatus`]; on failure the message is
//! available from [`relpu_last_error`] on the same thread. Handles are
//! opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use relpu::geometry::farthest_point_sample;
use relpu::io::{read_xyz, write_xyz};
use relpu::metrics::{chamfer, hausdorff};
use relpu::model::{upsample_full_model, Checkpoint, FullModelConfig, ModelVariant, Upsampler};
use relpu::{Error, PointCloud};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RelpuStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    Io = 4,
    Numerical = 5,
    InvalidModel = 6,
    Config = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// Opaque point cloud.
pub struct RelpuCloud {
    inner: PointCloud,
}

/// Opaque trained model.
pub struct RelpuModel {
    inner: ModelVariant,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> RelpuStatus {
    match e {
        Error::InvalidArgument(_) | Error::DegenerateFit(_) => RelpuStatus::InvalidArgument,
        Error::Parse { .. } => RelpuStatus::Parse,
        Error::Io { .. } => RelpuStatus::Io,
        Error::TrainingDiverged(_) | Error::Numerical(_) => RelpuStatus::Numerical,
        Error::InvalidModel(_) => RelpuStatus::InvalidModel,
        Error::Config(_) => RelpuStatus::Config,
    }
}

struct Fail(RelpuStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> RelpuStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RelpuStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            RelpuStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(RelpuStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(RelpuStatus::InvalidArgument, "path is not UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn cloud_ref<'a>(c: *const RelpuCloud) -> Result<&'a PointCloud, Fail> {
    c.as_ref().map(|c| &c.inner).ok_or_else(|| null("cloud"))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn relpu_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Copies `count` points from `xyz` (`3 * count` doubles, row-major).
///
/// # Safety
/// `xyz` must point to `3 * count` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn relpu_cloud_from_buffer(xyz: *const f64, count: usize, out: *mut *mut RelpuCloud) -> RelpuStatus {
    guard(|| {
        if xyz.is_null() {
            return Err(null("xyz"));
        }
        let flat = std::slice::from_raw_parts(xyz, 3 * count);
        put(out, RelpuCloud {
            inner: PointCloud::from_flat(flat)?,
        })
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn relpu_cloud_read_xyz(path: *const c_char, out: *mut *mut RelpuCloud) -> RelpuStatus {
    guard(|| {
        let p = path_arg(path)?;
        put(out, RelpuCloud { inner: read_xyz(&p)? })
    })
}

/// # Safety
/// `cloud` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn relpu_cloud_write_xyz(cloud: *const RelpuCloud, path: *const c_char) -> RelpuStatus {
    guard(|| {
        let c = cloud_ref(cloud)?;
        write_xyz(&path_arg(path)?, c)?;
        Ok(())
    })
}

/// Number of points, 0 for NULL.
///
/// # Safety
/// `cloud` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn relpu_cloud_len(cloud: *const RelpuCloud) -> usize {
    cloud.as_ref().map_or(0, |c| c.inner.len())
}

/// Writes the points to `out` as `3 * len` doubles. Fails with
/// `BufferTooSmall` when `capacity` (in points) is below the length.
///
/// # Safety
/// `cloud` must be a live handle; `out` must hold `3 * capacity` doubles.
#[no_mangle]
pub unsafe extern "C" fn relpu_cloud_copy_points(cloud: *const RelpuCloud, out: *mut f64, capacity: usize) -> RelpuStatus {
    guard(|| {
        let c = cloud_ref(cloud)?;
        if out.is_null() {
            return Err(null("out"));
        }
        if capacity < c.len() {
            return Err(Fail(
                RelpuStatus::BufferTooSmall,
                format!("buffer holds {capacity} points, cloud has {}", c.len()),
            ));
        }
        let flat = c.to_flat();
        ptr::copy_nonoverlapping(flat.as_ptr(), out, flat.len());
        Ok(())
    })
}

/// # Safety
/// `cloud` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn relpu_cloud_free(cloud: *mut RelpuCloud) {
    if !cloud.is_null() {
        drop(Box::from_raw(cloud));
    }
}

/// Squared-distance Chamfer distance between two clouds.
///
/// # Safety
/// `a`, `b` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn relpu_chamfer(a: *const RelpuCloud, b: *const RelpuCloud, out: *mut f64) -> RelpuStatus {
    guard(|| {
        let v = chamfer(cloud_ref(a)?, cloud_ref(b)?)?.value;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}

/// Symmetric Hausdorff distance between two clouds.
///
/// # Safety
/// `a`, `b` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn relpu_hausdorff(a: *const RelpuCloud, b: *const RelpuCloud, out: *mut f64) -> RelpuStatus {
    guard(|| {
        let v = hausdorff(cloud_ref(a)?, cloud_ref(b)?)?;
        *out.as_mut().ok_or_else(|| null("out"))? = v;
        Ok(())
    })
}

/// Farthest point sampling of `m` indices starting from `start`.
///
/// # Safety
/// `cloud` must be a live handle; `out` must hold `m` indices.
#[no_mangle]
pub unsafe extern "C" fn relpu_fps(cloud: *const RelpuCloud, m: usize, start: usize, out: *mut usize) -> RelpuStatus {
    guard(|| {
        let c = cloud_ref(cloud)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let idx = farthest_point_sample(c, m, start)?;
        ptr::copy_nonoverlapping(idx.as_ptr(), out, idx.len());
        Ok(())
    })
}

/// Loads a model from a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn relpu_model_load(path: *const c_char, out: *mut *mut RelpuModel) -> RelpuStatus {
    guard(|| {
        let p = path_arg(path)?;
        let model = Checkpoint::load(&p)?.state.model;
        model.check()?;
        put(out, RelpuModel { inner: model })
    })
}

/// Upsampling ratio, 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn relpu_model_ratio(model: *const RelpuModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.ratio())
}

/// Upsamples a whole cloud to `ratio * len` points using `patches` patches
/// of `patch_points` points each.
///
/// # Safety
/// `model` and `cloud` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn relpu_model_upsample(
    model: *const RelpuModel,
    cloud: *const RelpuCloud,
    patches: usize,
    patch_points: usize,
    seed: u64,
    out: *mut *mut RelpuCloud,
) -> RelpuStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let cfg = FullModelConfig {
            patches,
            patch_points,
            seed,
        };
        let up = upsample_full_model(&m.inner, cloud_ref(cloud)?, &cfg)?;
        put(out, RelpuCloud { inner: up })
    })
}

/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn relpu_model_free(model: *mut RelpuModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
