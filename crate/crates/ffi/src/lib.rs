//! C interface to vfikit.
//!
//! Objects cross the boundary as opaque handles created by a `*_new` or
//! `*_load` function and released by the matching `*_free`. Every function
//! returns a [`VfiStatus`]; on failure [`vfi_last_error`] describes the most
//! recent error on the calling thread. Images are planar `[3, H, W]` float
//! arrays in `[0, 1]`; flows are interleaved `(u, v)` pairs in row-major
//! order.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use vfikit::io::{load_quad, read_manifest, Checkpoint};
use vfikit::motion::{reverse_flow, FlowField};
use vfikit::pipeline::{Mode, Pipeline, PipelineConfig};
use vfikit::synth::{make_quad, make_scene, Difficulty, Quad};
use vfikit::Error;

/// Result of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VfiStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Contract = 4,
    Format = 5,
    Io = 6,
    NonFinite = 7,
    Panic = 8,
}

/// Source of the motion coefficients.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VfiMode {
    Learned = 0,
    AnalyticBaseline = 1,
    GtCoeffs = 2,
}

impl From<VfiMode> for Mode {
    fn from(m: VfiMode) -> Self {
        match m {
            VfiMode::Learned => Mode::Learned,
            VfiMode::AnalyticBaseline => Mode::AnalyticBaseline,
            VfiMode::GtCoeffs => Mode::GtCoeffs,
        }
    }
}

/// A configured interpolator.
pub struct VfiPipeline {
    inner: Pipeline,
}

/// Four frames with their flows and occlusion maps.
pub struct VfiQuad {
    inner: Quad,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

enum Fail {
    Null(&'static str),
    Arg(String),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn status_of(e: &Error) -> VfiStatus {
    match e {
        Error::Dimension { .. } => VfiStatus::Dimension,
        Error::Contract(_) => VfiStatus::Contract,
        Error::Format { .. } => VfiStatus::Format,
        Error::Io { .. } => VfiStatus::Io,
        Error::NonFinite(_) => VfiStatus::NonFinite,
        Error::Config(_) => VfiStatus::InvalidArgument,
    }
}

/// Runs `f`, converting errors and panics into a status and the thread's
/// last error message.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> VfiStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            VfiStatus::Ok
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("{what} is null"));
            VfiStatus::NullPointer
        }
        Ok(Err(Fail::Arg(msg))) => {
            set_error(msg);
            VfiStatus::InvalidArgument
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal error: {msg}"));
            VfiStatus::Panic
        }
    }
}

unsafe fn arg_str<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail::Arg(format!("{what} is not UTF-8")))
}

unsafe fn arg_ref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T, what: &'static str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null(what));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failed call on this thread, or an empty string. The
/// pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn vfi_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn vfi_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a pipeline with default settings. Learned mode starts from
/// freshly initialised weights.
///
/// # Safety
/// `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn vfi_pipeline_new(mode: VfiMode, out: *mut *mut VfiPipeline) -> VfiStatus {
    guard(|| {
        let inner = Pipeline::new(PipelineConfig {
            mode: mode.into(),
            ..PipelineConfig::default()
        })?;
        put(out, VfiPipeline { inner }, "out")
    })
}

/// Restores a pipeline from a checkpoint file and switches it to `mode`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` valid for a pointer
/// write.
#[no_mangle]
pub unsafe extern "C" fn vfi_pipeline_load(
    path: *const c_char,
    mode: VfiMode,
    out: *mut *mut VfiPipeline,
) -> VfiStatus {
    guard(|| {
        let path = PathBuf::from(arg_str(path, "path")?);
        let inner = Pipeline::from_checkpoint(&Checkpoint::load(path)?)?.with_mode(mode.into())?;
        put(out, VfiPipeline { inner }, "out")
    })
}

/// # Safety
/// `p` must be null or a handle from `vfi_pipeline_new`/`vfi_pipeline_load`
/// that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn vfi_pipeline_free(p: *mut VfiPipeline) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Generates synthetic scene `index` of the dataset named by a difficulty
/// preset (`linear`, `moderate`, `occlusion`, `quadratic`), `seed` and
/// `size`, the same quad `make_dataset` produces at that index.
///
/// # Safety
/// `difficulty` must be a NUL-terminated string and `out` valid for a
/// pointer write.
#[no_mangle]
pub unsafe extern "C" fn vfi_quad_synthetic(
    difficulty: *const c_char,
    seed: u64,
    index: usize,
    size: usize,
    out: *mut *mut VfiQuad,
) -> VfiStatus {
    guard(|| {
        let d = Difficulty::preset(arg_str(difficulty, "difficulty")?)?;
        let scene = make_scene(seed, index, size, &d)?;
        let inner = make_quad(&scene, d.t, d.observation)?;
        put(out, VfiQuad { inner }, "out")
    })
}

/// Loads row `row` (0-based) of a dataset manifest.
///
/// # Safety
/// `manifest` must be a NUL-terminated string and `out` valid for a pointer
/// write.
#[no_mangle]
pub unsafe extern "C" fn vfi_quad_load(manifest: *const c_char, row: usize, out: *mut *mut VfiQuad) -> VfiStatus {
    guard(|| {
        let rows = read_manifest(arg_str(manifest, "manifest")?)?;
        let r = rows
            .get(row)
            .ok_or_else(|| Fail::Arg(format!("manifest has {} rows, asked for row {row}", rows.len())))?;
        put(out, VfiQuad { inner: load_quad(r)? }, "out")
    })
}

/// Width, height and target time of a quad. Any output pointer may be null.
///
/// # Safety
/// `q` must be a live quad handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn vfi_quad_info(q: *const VfiQuad, width: *mut usize, height: *mut usize, t: *mut f64) -> VfiStatus {
    guard(|| {
        let q = &arg_ref(q, "quad")?.inner;
        if let Some(w) = width.as_mut() {
            *w = q.width();
        }
        if let Some(h) = height.as_mut() {
            *h = q.height();
        }
        if let Some(x) = t.as_mut() {
            *x = q.t;
        }
        Ok(())
    })
}

/// Copies the quad's ground-truth frame into `out` (`3 * width * height`
/// floats).
///
/// # Safety
/// `q` must be a live quad handle and `out` writable for `len` floats.
#[no_mangle]
pub unsafe extern "C" fn vfi_quad_target(q: *const VfiQuad, out: *mut f32, len: usize) -> VfiStatus {
    guard(|| {
        let q = &arg_ref(q, "quad")?.inner;
        copy_out(q.target()?.data(), out, len)
    })
}

/// # Safety
/// `q` must be null or a live quad handle.
#[no_mangle]
pub unsafe extern "C" fn vfi_quad_free(q: *mut VfiQuad) {
    if !q.is_null() {
        drop(Box::from_raw(q));
    }
}

unsafe fn copy_out(src: &[f32], out: *mut f32, len: usize) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null("out"));
    }
    if len != src.len() {
        return Err(Fail::Arg(format!("output buffer holds {len} floats, need {}", src.len())));
    }
    std::ptr::copy_nonoverlapping(src.as_ptr(), out, len);
    Ok(())
}

/// Interpolates the frame at `t` into `out` (`3 * width * height` floats,
/// planar RGB).
///
/// # Safety
/// `p` and `q` must be live handles and `out` writable for `len` floats.
#[no_mangle]
pub unsafe extern "C" fn vfi_interpolate(
    p: *const VfiPipeline,
    q: *const VfiQuad,
    t: f64,
    out: *mut f32,
    len: usize,
) -> VfiStatus {
    guard(|| {
        let p = &arg_ref(p, "pipeline")?.inner;
        let q = &arg_ref(q, "quad")?.inner;
        let r = p.interpolate(q, t)?;
        copy_out(r.frame.data(), out, len)
    })
}

/// Reverses a forward flow of `width * height` vectors into `out` by
/// Gaussian-weighted splatting. `holes`, when non-null, receives one byte
/// per pixel: 1 where nothing landed.
///
/// # Safety
/// `flow` must be readable and `out` writable for `2 * width * height`
/// floats; a non-null `holes` must be writable for `width * height` bytes.
#[no_mangle]
pub unsafe extern "C" fn vfi_reverse_flow(
    flow: *const f32,
    width: usize,
    height: usize,
    out: *mut f32,
    holes: *mut u8,
) -> VfiStatus {
    guard(|| {
        if flow.is_null() {
            return Err(Fail::Null("flow"));
        }
        let n = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(2))
            .ok_or_else(|| Fail::Arg("flow size overflows".into()))?;
        let f = FlowField::from_vec(width, height, std::slice::from_raw_parts(flow, n).to_vec())?;
        let (rev, h) = reverse_flow(&f);
        copy_out(rev.data(), out, n)?;
        if !holes.is_null() {
            for (i, &b) in h.data().iter().enumerate() {
                *holes.add(i) = b as u8;
            }
        }
        Ok(())
    })
}
