//! C ABI for loading a trained model and scoring contents.
//!
//! Every function returns an [`HcStatus`]. On failure the message is kept
//! per thread and read with [`hc_last_error`]. Handles are opaque and must
//! be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use chrono::NaiveDate;
use hotcold::dataset::{ingest, Catalog, ContentType, DataFormat, Popularity};
use hotcold::hybrid::HybridModel;
use hotcold::optim::{Ftrl, FtrlParams, Optimizer};

/// Result of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    NotFound = 5,
    Prediction = 6,
    Panic = 7,
}

/// Data file format for [`hc_catalog_load`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HcFormat {
    Jsonl = 0,
    Csv = 1,
}

/// One scored content.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HcPrediction {
    pub probability: f64,
    /// 1 for hot, 0 for cold.
    pub hot: i32,
    /// 0 for series contents (route A), 1 for the rest (route B).
    pub route: i32,
}

/// Trained model.
pub struct HcModel(HybridModel);

/// Content catalog with view history.
pub struct HcCatalog(Catalog);

/// FTRL-Proximal optimizer state.
pub struct HcFtrl(Ftrl);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(HcStatus, String);

fn fail(status: HcStatus, msg: impl std::fmt::Display) -> Failure {
    Failure(status, msg.to_string())
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> HcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            HcStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            HcStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(HcStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(HcStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| fail(HcStatus::NullPointer, format!("{name} is null")))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null after a
/// success. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn hc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a model saved by `hotcold train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hc_model_load_file(path: *const c_char, out: *mut *mut HcModel) -> HcStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(HcStatus::NullPointer, "out is null"));
        }
        let path = str_arg(path, "path")?;
        let model = HybridModel::load(Path::new(path)).map_err(|e| fail(HcStatus::Io, e))?;
        *out = Box::into_raw(Box::new(HcModel(model)));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from [`hc_model_load_file`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hc_model_free(model: *mut HcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Loads `contents` and `views` files from a directory.
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hc_catalog_load(
    dir: *const c_char,
    format: HcFormat,
    out: *mut *mut HcCatalog,
) -> HcStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(HcStatus::NullPointer, "out is null"));
        }
        let dir = str_arg(dir, "dir")?;
        let fmt = match format {
            HcFormat::Jsonl => DataFormat::Jsonl,
            HcFormat::Csv => DataFormat::Csv,
        };
        let (contents, logs) = ingest(Path::new(dir), fmt).map_err(|e| fail(HcStatus::Io, e))?;
        let catalog = Catalog::new(contents, &logs).map_err(|e| fail(HcStatus::InvalidArgument, e))?;
        *out = Box::into_raw(Box::new(HcCatalog(catalog)));
        Ok(())
    })
}

/// Releases a catalog. Null is ignored.
///
/// # Safety
/// `catalog` must come from [`hc_catalog_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hc_catalog_free(catalog: *mut HcCatalog) {
    if !catalog.is_null() {
        drop(Box::from_raw(catalog));
    }
}

/// Scores one catalog content at decision date `at` (`YYYY-MM-DD`), which
/// must not be after its release.
///
/// # Safety
/// Handles must be live, strings NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn hc_predict(
    model: *const HcModel,
    catalog: *const HcCatalog,
    content_id: *const c_char,
    at: *const c_char,
    out: *mut HcPrediction,
) -> HcStatus {
    guard(|| {
        let model = &ref_arg(model, "model")?.0;
        let catalog = &ref_arg(catalog, "catalog")?.0;
        if out.is_null() {
            return Err(fail(HcStatus::NullPointer, "out is null"));
        }
        let id = str_arg(content_id, "content_id")?;
        let at = str_arg(at, "at")?;
        let at = NaiveDate::parse_from_str(at, "%Y-%m-%d")
            .map_err(|e| fail(HcStatus::InvalidArgument, format!("at `{at}`: {e}")))?;
        let content = catalog
            .get(id)
            .ok_or_else(|| fail(HcStatus::NotFound, format!("unknown content `{id}`")))?;
        let p = model
            .predict(catalog, content, at)
            .map_err(|e| fail(HcStatus::Prediction, e))?;
        *out = HcPrediction {
            probability: p.probability,
            hot: i32::from(p.label == Popularity::Hot),
            route: match p.route {
                ContentType::TypeA => 0,
                ContentType::TypeB => 1,
            },
        };
        Ok(())
    })
}

/// FTRL-Proximal state for `dim` parameters starting from zero.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn hc_ftrl_new(
    dim: usize,
    alpha: f64,
    beta: f64,
    lambda1: f64,
    lambda2: f64,
    out: *mut *mut HcFtrl,
) -> HcStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(HcStatus::NullPointer, "out is null"));
        }
        let params = FtrlParams {
            alpha,
            beta,
            lambda1,
            lambda2,
        };
        let ftrl = Ftrl::new(dim, params).map_err(|e| fail(HcStatus::InvalidArgument, e))?;
        *out = Box::into_raw(Box::new(HcFtrl(ftrl)));
        Ok(())
    })
}

/// One update of `params` from the gradient `grad`, both of length `len`.
///
/// # Safety
/// `grad` and `params` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hc_ftrl_step(
    ftrl: *mut HcFtrl,
    grad: *const f64,
    params: *mut f64,
    len: usize,
) -> HcStatus {
    guard(|| {
        let ftrl = ftrl
            .as_mut()
            .ok_or_else(|| fail(HcStatus::NullPointer, "ftrl is null"))?;
        if grad.is_null() || params.is_null() {
            return Err(fail(HcStatus::NullPointer, "grad or params is null"));
        }
        let grad = std::slice::from_raw_parts(grad, len);
        let params = std::slice::from_raw_parts_mut(params, len);
        ftrl.0
            .step(grad, params)
            .map_err(|e| fail(HcStatus::InvalidArgument, e))
    })
}

/// Releases an optimizer. Null is ignored.
///
/// # Safety
/// `ftrl` must come from [`hc_ftrl_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hc_ftrl_free(ftrl: *mut HcFtrl) {
    if !ftrl.is_null() {
        drop(Box::from_raw(ftrl));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn last_error() -> String {
        let p = hc_last_error();
        assert!(!p.is_null());
        unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
    }

    #[test]
    fn version_matches_package() {
        let v = unsafe { CStr::from_ptr(hc_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }

    #[test]
    fn null_arguments_are_reported() {
        let mut out = ptr::null_mut();
        let s = unsafe { hc_model_load_file(ptr::null(), &mut out) };
        assert_eq!(s, HcStatus::NullPointer);
        assert!(last_error().contains("path"));
        assert!(out.is_null());
    }

    #[test]
    fn missing_model_file_is_io_error() {
        let path = CString::new("/nonexistent/model.json").unwrap();
        let mut out = ptr::null_mut();
        let s = unsafe { hc_model_load_file(path.as_ptr(), &mut out) };
        assert_eq!(s, HcStatus::Io);
        assert!(!last_error().is_empty());
    }

    #[test]
    fn ftrl_step_matches_rust_optimizer() {
        let mut h = ptr::null_mut();
        assert_eq!(unsafe { hc_ftrl_new(3, 0.1, 1.0, 0.01, 0.0, &mut h) }, HcStatus::Ok);
        assert!(hc_last_error().is_null());
        let mut reference = Ftrl::new(3, FtrlParams { alpha: 0.1, beta: 1.0, lambda1: 0.01, lambda2: 0.0 }).unwrap();
        let mut a = [0.0; 3];
        let mut b = [0.0; 3];
        for g in [[0.5, -1.0, 0.001], [0.2, 0.3, -0.4]] {
            assert_eq!(unsafe { hc_ftrl_step(h, g.as_ptr(), a.as_mut_ptr(), 3) }, HcStatus::Ok);
            reference.step(&g, &mut b).unwrap();
        }
        assert_eq!(a, b);
        unsafe { hc_ftrl_free(h) };
    }

    #[test]
    fn ftrl_rejects_bad_input() {
        let mut h = ptr::null_mut();
        assert_eq!(unsafe { hc_ftrl_new(2, 0.0, 1.0, 0.0, 0.0, &mut h) }, HcStatus::InvalidArgument);
        assert!(last_error().contains("alpha"));
        assert_eq!(unsafe { hc_ftrl_new(2, 0.1, 1.0, 0.0, 0.0, &mut h) }, HcStatus::Ok);
        let g = [f64::NAN, 0.0];
        let mut w = [0.0; 2];
        assert_eq!(unsafe { hc_ftrl_step(h, g.as_ptr(), w.as_mut_ptr(), 2) }, HcStatus::InvalidArgument);
        unsafe { hc_ftrl_free(h) };
    }

    #[test]
    fn free_accepts_null() {
        unsafe {
            hc_model_free(ptr::null_mut());
            hc_catalog_free(ptr::null_mut());
            hc_ftrl_free(ptr::null_mut());
        }
    }
}
