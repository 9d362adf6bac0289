//! C ABI over the explainer: load a model, explain a sentence to a JSON
//! report, inspect a few model properties. Handles are opaque, every
//! call returns a status code, and the last error message per thread is
//! available as a C string. The header is generated into
//! `include/relgram.h` at build time.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use relgram::lrp::RatioRule;
use relgram::report::{explain_text, render_json};
use relgram::{CnnModel, Error};

/// Result of every fallible call in this interface.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelgramStatus {
    RelgramOk = 0,
    /// A required pointer argument was null.
    RelgramNullArgument = 1,
    /// A string argument was not valid UTF-8.
    RelgramInvalidUtf8 = 2,
    /// An argument value was out of range (for example a non-positive
    /// epsilon).
    RelgramBadArgument = 3,
    /// The model file could not be read.
    RelgramIoError = 4,
    /// The model payload failed to parse or validate.
    RelgramBadModel = 5,
    /// The sentence had no tokens left after tokenization.
    RelgramDegenerateInput = 6,
    /// Any other failure inside the pipeline.
    RelgramInternalError = 7,
    /// A panic was caught at the boundary; state may be stale.
    RelgramPanic = 8,
}

/// Relevance decomposition rule selector.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelgramRule {
    /// Signed-sum denominator.
    RelgramRulePlain = 0,
    /// Signed-sum denominator with a stabilizer; needs epsilon > 0.
    RelgramRuleEpsilon = 1,
    /// Absolute-sum denominator.
    RelgramRuleAbsolute = 2,
}

/// Opaque loaded model.
pub struct RelgramModel {
    inner: CnnModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', "?");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).expect("nul bytes replaced");
    });
}

fn status_for(e: &Error) -> RelgramStatus {
    match e {
        Error::Io { .. } => RelgramStatus::RelgramIoError,
        Error::Json { .. } | Error::InvalidModel(_) | Error::FormatVersion { .. } => {
            RelgramStatus::RelgramBadModel
        }
        Error::DegenerateInput => RelgramStatus::RelgramDegenerateInput,
        Error::InvalidConfig(_) => RelgramStatus::RelgramBadArgument,
        _ => RelgramStatus::RelgramInternalError,
    }
}

fn fail(e: &Error) -> RelgramStatus {
    set_error(&e.to_string());
    status_for(e)
}

fn guard(body: impl FnOnce() -> RelgramStatus) -> RelgramStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic with non-string payload".into());
            set_error(&message);
            RelgramStatus::RelgramPanic
        }
    }
}

/// # Safety
/// `text` must be null or point at a nul-terminated string.
unsafe fn required_str<'a>(text: *const c_char, what: &str) -> Result<&'a str, RelgramStatus> {
    if text.is_null() {
        set_error(&format!("{what} is null"));
        return Err(RelgramStatus::RelgramNullArgument);
    }
    CStr::from_ptr(text).to_str().map_err(|_| {
        set_error(&format!("{what} is not valid UTF-8"));
        RelgramStatus::RelgramInvalidUtf8
    })
}

fn emit_model(model: CnnModel, out: *mut *mut RelgramModel) -> RelgramStatus {
    let handle = Box::new(RelgramModel { inner: model });
    unsafe { *out = Box::into_raw(handle) };
    RelgramStatus::RelgramOk
}

/// Loads a model from a JSON file into a fresh handle. On success writes
/// the handle to `out`; free it with `relgram_model_free`.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn relgram_model_load(
    path: *const c_char,
    out: *mut *mut RelgramModel,
) -> RelgramStatus {
    guard(|| {
        if out.is_null() {
            set_error("out handle is null");
            return RelgramStatus::RelgramNullArgument;
        }
        let path = match required_str(path, "path") {
            Ok(p) => p,
            Err(status) => return status,
        };
        match relgram::load_model(Path::new(path)) {
            Ok(model) => emit_model(model, out),
            Err(e) => fail(&e),
        }
    })
}

/// Parses a model from a JSON string into a fresh handle.
///
/// # Safety
/// `json` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn relgram_model_from_json(
    json: *const c_char,
    out: *mut *mut RelgramModel,
) -> RelgramStatus {
    guard(|| {
        if out.is_null() {
            set_error("out handle is null");
            return RelgramStatus::RelgramNullArgument;
        }
        let json = match required_str(json, "json") {
            Ok(j) => j,
            Err(status) => return status,
        };
        match relgram::model_from_json(json) {
            Ok(model) => emit_model(model, out),
            Err(e) => fail(&e),
        }
    })
}

/// Releases a handle returned by the load functions. Null is a no-op.
///
/// # Safety
/// `model` must be null or a handle this library returned, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn relgram_model_free(model: *mut RelgramModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of convolution filters across all channels; 0 on null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn relgram_model_filter_count(model: *const RelgramModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.filter_count())
}

/// Number of output classes; 0 on null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn relgram_model_class_count(model: *const RelgramModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.class_count())
}

/// Fixed input width in tokens; 0 on null.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn relgram_model_pad_length(model: *const RelgramModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.pad_length)
}

/// Explains one sentence and writes the JSON report as a fresh string to
/// `out_json`; free it with `relgram_string_free`. `epsilon` is only
/// read for the epsilon rule and must then be positive.
///
/// # Safety
/// `model` must be a live handle, `sentence` a nul-terminated string,
/// and `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn relgram_explain_json(
    model: *const RelgramModel,
    sentence: *const c_char,
    rule: RelgramRule,
    epsilon: f64,
    out_json: *mut *mut c_char,
) -> RelgramStatus {
    guard(|| {
        if out_json.is_null() {
            set_error("out_json is null");
            return RelgramStatus::RelgramNullArgument;
        }
        let Some(model) = model.as_ref() else {
            set_error("model handle is null");
            return RelgramStatus::RelgramNullArgument;
        };
        let sentence = match required_str(sentence, "sentence") {
            Ok(s) => s,
            Err(status) => return status,
        };
        let rule = match rule {
            RelgramRule::RelgramRulePlain => RatioRule::Lrp0,
            RelgramRule::RelgramRuleAbsolute => RatioRule::LrpAdapted,
            RelgramRule::RelgramRuleEpsilon => {
                if epsilon.is_nan() || epsilon <= 0.0 {
                    set_error("epsilon must be positive for the epsilon rule");
                    return RelgramStatus::RelgramBadArgument;
                }
                RatioRule::LrpEps { epsilon }
            }
        };
        match explain_text(&model.inner, sentence, rule) {
            Ok(report) => {
                let json = render_json(&report).replace('\0', "?");
                *out_json = CString::new(json).expect("nul bytes replaced").into_raw();
                RelgramStatus::RelgramOk
            }
            Err(e) => fail(&e),
        }
    })
}

/// Releases a string returned by this library. Null is a no-op.
///
/// # Safety
/// `text` must be null or a string this library returned, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn relgram_string_free(text: *mut c_char) {
    if !text.is_null() {
        drop(CString::from_raw(text));
    }
}

/// Message of the most recent error on this thread, or an empty string.
/// The pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn relgram_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}
