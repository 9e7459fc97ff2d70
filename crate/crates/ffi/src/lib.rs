//! C ABI over `hdrf-core`: load a trained checkpoint behind an opaque
//! handle, render LDR and HDR views into caller-owned buffers, sample the
//! learned response curve, and compute the mu-law and PSNR metrics.
//!
//! Every function returns an `HdrfStatus`; on failure a message is kept
//! per thread and can be copied out with `hdrf_last_error`. Panics never
//! cross the boundary. Images are row-major, top row first, interleaved RGB
//! `double`s, `3 * width * height` of them.

use hdrf_core::io::ImageBuffer;
use hdrf_core::metrics::{mu_law_value, psnr};
use hdrf_core::model::{read_checkpoint, CheckpointMeta, ModelBundle};
use hdrf_core::render::{render_image, CameraView, Pose, RenderMode};
use hdrf_core::Error;
use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HdrfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Numeric = 5,
    BufferTooSmall = 6,
    Panic = 7,
    Internal = 8,
}

/// A loaded checkpoint. Create with `hdrf_model_load`, release with
/// `hdrf_model_free`. A handle may be shared across threads for rendering.
pub struct HdrfModel {
    meta: CheckpointMeta,
    bundle: ModelBundle,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

struct Failure(HdrfStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => HdrfStatus::Io,
            Error::Format(_) => HdrfStatus::Format,
            Error::Numeric { .. } => HdrfStatus::Numeric,
            Error::Input(_) | Error::Shape(_) | Error::Domain(_) => HdrfStatus::InvalidArgument,
            _ => HdrfStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: HdrfStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

/// Runs `f`, records any error message and converts panics to a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> HdrfStatus {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| p.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "unknown panic".into());
        Err(Failure(HdrfStatus::Panic, format!("panic: {msg}")))
    });
    match outcome {
        Ok(()) => {
            LAST_ERROR.with(|e| e.borrow_mut().clear());
            HdrfStatus::Ok
        }
        Err(Failure(status, msg)) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = msg);
            status
        }
    }
}

unsafe fn model_ref<'a>(model: *const HdrfModel) -> Result<&'a HdrfModel, Failure> {
    model.as_ref().ok_or_else(|| fail(HdrfStatus::NullPointer, "model handle is null"))
}

unsafe fn in_slice<'a>(ptr: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if ptr.is_null() {
        return Err(fail(HdrfStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn out_slice<'a>(ptr: *mut f64, len: usize, need: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if ptr.is_null() {
        return Err(fail(HdrfStatus::NullPointer, format!("{what} is null")));
    }
    if len < need {
        return Err(fail(
            HdrfStatus::BufferTooSmall,
            format!("{what} holds {len} values, {need} are needed"),
        ));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

/// Loads a checkpoint written by `hdrf train`. On success `*out` owns a new
/// handle; on failure it is set to null.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hdrf_model_load(path: *const c_char, out: *mut *mut HdrfModel) -> HdrfStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(HdrfStatus::NullPointer, "out is null"));
        }
        *out = std::ptr::null_mut();
        if path.is_null() {
            return Err(fail(HdrfStatus::NullPointer, "path is null"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| fail(HdrfStatus::InvalidArgument, "path is not valid UTF-8"))?;
        let (meta, bundle) = read_checkpoint(Path::new(path))?;
        *out = Box::into_raw(Box::new(HdrfModel { meta, bundle }));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from `hdrf_model_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hdrf_model_free(model: *mut HdrfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Image size the checkpoint renders at.
///
/// # Safety
/// `model` must be a live handle; `width` and `height` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn hdrf_model_image_size(
    model: *const HdrfModel,
    width: *mut usize,
    height: *mut usize,
) -> HdrfStatus {
    guard(|| {
        let m = model_ref(model)?;
        if width.is_null() || height.is_null() {
            return Err(fail(HdrfStatus::NullPointer, "width or height is null"));
        }
        *width = m.meta.frame.intrinsics.width;
        *height = m.meta.frame.intrinsics.height;
        Ok(())
    })
}

unsafe fn render_into(
    model: *const HdrfModel,
    c2w: *const f64,
    mode: RenderMode,
    out: *mut f64,
    out_len: usize,
) -> Result<(), Failure> {
    let m = model_ref(model)?;
    let pose = Pose::from_c2w(in_slice(c2w, 16, "c2w")?)?;
    let k = m.meta.frame.intrinsics;
    let out = out_slice(out, out_len, 3 * k.width * k.height, "out")?;
    let exposure_time = match mode {
        RenderMode::Ldr { exposure_time } => exposure_time,
        RenderMode::Hdr => 1.0,
    };
    let view = CameraView {
        pose,
        intrinsics: k,
        exposure_time,
    };
    let img = render_image(&view, &m.meta.frame, &m.bundle, mode, &m.meta.render)?;
    out[..img.data.len()].copy_from_slice(&img.data);
    Ok(())
}

/// Renders the LDR view seen from a 4x4 row-major camera-to-world matrix at
/// `exposure_s` seconds. Colors lie in [0, 1].
///
/// # Safety
/// `c2w` must point to 16 doubles and `out` to `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hdrf_render_ldr(
    model: *const HdrfModel,
    c2w: *const f64,
    exposure_s: f64,
    out: *mut f64,
    out_len: usize,
) -> HdrfStatus {
    guard(|| {
        if !(exposure_s > 0.0 && exposure_s.is_finite()) {
            return Err(fail(HdrfStatus::InvalidArgument, format!("exposure must be positive, got {exposure_s}")));
        }
        render_into(model, c2w, RenderMode::Ldr { exposure_time: exposure_s }, out, out_len)
    })
}

/// Renders linear HDR radiance from a camera-to-world matrix.
///
/// # Safety
/// As for `hdrf_render_ldr`.
#[no_mangle]
pub unsafe extern "C" fn hdrf_render_hdr(
    model: *const HdrfModel,
    c2w: *const f64,
    out: *mut f64,
    out_len: usize,
) -> HdrfStatus {
    guard(|| render_into(model, c2w, RenderMode::Hdr, out, out_len))
}

/// Evaluates the learned response at `n` log exposures, writing `3 * n`
/// interleaved RGB colors.
///
/// # Safety
/// `log_exposure` must point to `n` doubles and `out` to `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hdrf_export_crf(
    model: *const HdrfModel,
    log_exposure: *const f64,
    n: usize,
    out: *mut f64,
    out_len: usize,
) -> HdrfStatus {
    guard(|| {
        let m = model_ref(model)?;
        let xs = in_slice(log_exposure, n, "log_exposure")?;
        let out = out_slice(out, out_len, 3 * n, "out")?;
        if xs.iter().any(|x| !x.is_finite()) {
            return Err(fail(HdrfStatus::InvalidArgument, "log exposures must be finite"));
        }
        for (i, &x) in xs.iter().enumerate() {
            for c in 0..3 {
                out[3 * i + c] = m.bundle.tone.eval_channel(c, x);
            }
        }
        Ok(())
    })
}

/// Mu-law tone map of a value in [0, 1] with the given mu.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hdrf_mu_law(x: f64, mu: f64, out: *mut f64) -> HdrfStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(HdrfStatus::NullPointer, "out is null"));
        }
        if !(mu > 0.0 && mu.is_finite() && x.is_finite()) {
            return Err(fail(HdrfStatus::InvalidArgument, "mu must be positive and x finite"));
        }
        *out = mu_law_value(x, mu);
        Ok(())
    })
}

/// PSNR in dB between two RGB images of the same size; identical images
/// give +infinity.
///
/// # Safety
/// `a` and `b` must each point to `3 * width * height` doubles; `out` must
/// be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hdrf_psnr(
    a: *const f64,
    b: *const f64,
    width: usize,
    height: usize,
    peak: f64,
    out: *mut f64,
) -> HdrfStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(HdrfStatus::NullPointer, "out is null"));
        }
        let n = width
            .checked_mul(height)
            .and_then(|p| p.checked_mul(3))
            .ok_or_else(|| fail(HdrfStatus::InvalidArgument, "image size overflows"))?;
        let img = |p, what| -> Result<ImageBuffer, Failure> {
            Ok(ImageBuffer::new(width, height, in_slice(p, n, what)?.to_vec())?)
        };
        *out = psnr(&img(a, "a")?, &img(b, "b")?, peak)?;
        Ok(())
    })
}

/// Copies the calling thread's last error message into `buf` (truncated,
/// always NUL-terminated when `len > 0`) and returns the full message
/// length in bytes, excluding the terminator. Zero means no error.
///
/// # Safety
/// `buf` must point to `len` writable bytes, or be null with `len == 0`.
#[no_mangle]
pub unsafe extern "C" fn hdrf_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hdrf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}
