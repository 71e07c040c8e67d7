//! C ABI over the qualcode codebook, parser and metrics.
//!
//! Conventions:
//! - every function returns a [`QcStatus`]; results go through out-pointers;
//! - strings in are NUL-terminated UTF-8, strings out are owned by the caller
//!   and released with [`qc_string_free`];
//! - structured results are JSON documents;
//! - on failure, [`qc_last_error_message`] describes the error for the
//!   calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use qualcode::codebook::Codebook;
use qualcode::metrics::{agreement_report, MetricOptions};
use qualcode::parser::{extract_structured, parse_output, read_records_jsonl, Normalizer};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QcStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    InvalidCodebook = 4,
    InvalidInput = 5,
    Metrics = 6,
    Panic = 7,
}

/// Opaque codebook handle.
pub struct QcCodebook {
    inner: Codebook,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(QcStatus, String);

type FfiResult<T> = Result<T, Failure>;

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior NUL");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn guard(f: impl FnOnce() -> FfiResult<()>) -> QcStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => QcStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            QcStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(Failure(QcStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(QcStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

unsafe fn codebook_arg<'a>(p: *const QcCodebook) -> FfiResult<&'a Codebook> {
    p.as_ref()
        .map(|h| &h.inner)
        .ok_or_else(|| Failure(QcStatus::NullArgument, "codebook handle is null".into()))
}

fn check_out<T>(out: *mut T) -> FfiResult<()> {
    if out.is_null() {
        Err(Failure(QcStatus::NullArgument, "output pointer is null".into()))
    } else {
        Ok(())
    }
}

unsafe fn write_string(out: *mut *mut c_char, s: String) -> FfiResult<()> {
    let c = CString::new(s).map_err(|_| Failure(QcStatus::InvalidInput, "result contains NUL".into()))?;
    *out = c.into_raw();
    Ok(())
}

unsafe fn write_json<T: serde::Serialize>(out: *mut *mut c_char, value: &T) -> FfiResult<()> {
    write_string(out, serde_json::to_string(value).expect("serializable"))
}

unsafe fn write_handle(out: *mut *mut QcCodebook, cb: Codebook) {
    *out = Box::into_raw(Box::new(QcCodebook { inner: cb }));
}

/// Loads a codebook file. On success `*out` holds a handle to release with
/// [`qc_codebook_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qc_codebook_load(path: *const c_char, out: *mut *mut QcCodebook) -> QcStatus {
    guard(|| {
        check_out(out)?;
        let path = str_arg(path, "path")?;
        let cb = Codebook::load(Path::new(path)).map_err(|e| {
            let status = if Path::new(path).is_file() { QcStatus::InvalidCodebook } else { QcStatus::Io };
            Failure(status, e.to_string())
        })?;
        write_handle(out, cb);
        Ok(())
    })
}

/// Builds a codebook from its JSON document.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qc_codebook_from_json(json: *const c_char, out: *mut *mut QcCodebook) -> QcStatus {
    guard(|| {
        check_out(out)?;
        let json = str_arg(json, "json")?;
        let cb = Codebook::from_json(json).map_err(|e| Failure(QcStatus::InvalidCodebook, e.to_string()))?;
        write_handle(out, cb);
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `cb` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn qc_codebook_free(cb: *mut QcCodebook) {
    if !cb.is_null() {
        drop(Box::from_raw(cb));
    }
}

/// # Safety
/// `cb` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qc_codebook_version(cb: *const QcCodebook, out: *mut u64) -> QcStatus {
    guard(|| {
        check_out(out)?;
        *out = codebook_arg(cb)?.version_id;
        Ok(())
    })
}

/// Resolves one label string; `*out` receives the resolution as JSON
/// (`code_ids`, `kind`, `similarity`, ...).
///
/// # Safety
/// `cb` must be a live handle, `label` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qc_normalize_label(
    cb: *const QcCodebook,
    label: *const c_char,
    out: *mut *mut c_char,
) -> QcStatus {
    guard(|| {
        check_out(out)?;
        let cb = codebook_arg(cb)?;
        let label = str_arg(label, "label")?;
        write_json(out, &Normalizer::new(cb).normalize(label))
    })
}

/// Recovers the JSON object in a raw model output; `*out` receives
/// `{"payload": ..., "repair": ..., "notes": [...]}`.
///
/// # Safety
/// `raw` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qc_extract_structured(raw: *const c_char, out: *mut *mut c_char) -> QcStatus {
    guard(|| {
        check_out(out)?;
        let raw = str_arg(raw, "raw")?;
        write_json(out, &extract_structured(raw))
    })
}

/// Extraction, normalization and validity; `*out` receives
/// `{"labels": ..., "repair": ..., "status": ...}`.
///
/// # Safety
/// `cb` must be a live handle, `raw` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qc_parse_output(cb: *const QcCodebook, raw: *const c_char, out: *mut *mut c_char) -> QcStatus {
    guard(|| {
        check_out(out)?;
        let cb = codebook_arg(cb)?;
        let raw = str_arg(raw, "raw")?;
        write_json(out, &parse_output(raw, &Normalizer::new(cb)))
    })
}

/// Agreement between two annotators given as JSONL record documents.
/// `options_json` may be null for defaults (item level, all strata, used
/// codes). `*out` receives the agreement report as JSON.
///
/// # Safety
/// `cb` must be a live handle, the strings NUL-terminated or (for options)
/// null, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qc_agreement(
    cb: *const QcCodebook,
    records_a: *const c_char,
    records_b: *const c_char,
    options_json: *const c_char,
    out: *mut *mut c_char,
) -> QcStatus {
    guard(|| {
        check_out(out)?;
        let cb = codebook_arg(cb)?;
        let parse = |p: *const c_char, name: &str| -> FfiResult<_> {
            let text = str_arg(p, name)?;
            read_records_jsonl(text.as_bytes()).map_err(|e| Failure(QcStatus::InvalidInput, format!("{name}: {e}")))
        };
        let a = parse(records_a, "records_a")?;
        let b = parse(records_b, "records_b")?;
        let opts: MetricOptions = if options_json.is_null() {
            MetricOptions::default()
        } else {
            serde_json::from_str(str_arg(options_json, "options_json")?)
                .map_err(|e| Failure(QcStatus::InvalidInput, format!("options_json: {e}")))?
        };
        let report = agreement_report(&a, &b, cb, &opts).map_err(|e| Failure(QcStatus::Metrics, e.to_string()))?;
        write_json(out, &report)
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn qc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn qc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}
