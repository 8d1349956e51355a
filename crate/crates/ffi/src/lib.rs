//! C ABI over the skiptag tagger.
//!
//! Handles are opaque and owned by the caller once returned; release them
//! with the matching `_free` function. Every fallible call returns a
//! [`SkipTagStatus`] and, on failure, records a message readable through
//! [`skiptag_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use skiptag::checkpoint;
use skiptag::corpus::{recognize_percentages, Instance};
use skiptag::layers::{EncoderMode, GateTrace};
use skiptag::model::Tagger;
use skiptag::Error;

/// Result codes. Values 2 to 4 match the command-line exit codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SkipTagStatus {
    Ok = 0,
    Internal = 1,
    Config = 2,
    Data = 3,
    ModelIncompatible = 4,
    NullPointer = 5,
    InvalidUtf8 = 6,
    OutOfRange = 7,
}

/// A loaded model.
pub struct SkipTagModel {
    tagger: Tagger,
}

/// Tags, spans and gate bits for one instance.
pub struct SkipTagPrediction {
    tags: Vec<CString>,
    spans: Vec<(CString, usize, usize)>,
    trace: Option<GateTrace>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(status: SkipTagStatus, msg: &str) -> SkipTagStatus {
    set_error(msg);
    status
}

fn from_error(e: &Error) -> SkipTagStatus {
    let status = match e.exit_code() {
        2 => SkipTagStatus::Config,
        3 => SkipTagStatus::Data,
        4 => SkipTagStatus::ModelIncompatible,
        _ => SkipTagStatus::Internal,
    };
    fail(status, &e.to_string())
}

fn guard(f: impl FnOnce() -> SkipTagStatus) -> SkipTagStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(SkipTagStatus::Internal, "panic inside skiptag"),
    }
}

/// # Safety
/// `p` must be null or a valid NUL-terminated string.
unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, SkipTagStatus> {
    if p.is_null() {
        return Err(fail(SkipTagStatus::NullPointer, &format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(SkipTagStatus::InvalidUtf8, &format!("{what} is not valid UTF-8")))
}

/// # Safety
/// `arr` must be null or point to `len` valid NUL-terminated strings.
unsafe fn str_array(arr: *const *const c_char, len: usize, what: &str) -> Result<Vec<String>, SkipTagStatus> {
    if arr.is_null() {
        return Err(fail(SkipTagStatus::NullPointer, &format!("{what} is null")));
    }
    (0..len)
        .map(|i| str_arg(*arr.add(i), what).map(str::to_string))
        .collect()
}

/// Load a checkpoint written by `skiptag train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn skiptag_model_load(path: *const c_char, out: *mut *mut SkipTagModel) -> SkipTagStatus {
    guard(|| {
        if out.is_null() {
            return fail(SkipTagStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let path = match str_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match checkpoint::load(Path::new(path)) {
            Ok((tagger, _)) => {
                *out = Box::into_raw(Box::new(SkipTagModel { tagger }));
                SkipTagStatus::Ok
            }
            Err(e) => from_error(&e),
        }
    })
}

/// # Safety
/// `model` must be null or a handle from [`skiptag_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn skiptag_model_free(model: *mut SkipTagModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// 1 for a skip-mode model, 0 for plain mode or a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn skiptag_model_is_skip(model: *const SkipTagModel) -> i32 {
    model
        .as_ref()
        .map_or(0, |m| i32::from(m.tagger.config.mode == EncoderMode::Skip))
}

/// Number of tags in the model's tag set, 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn skiptag_model_num_tags(model: *const SkipTagModel) -> usize {
    model.as_ref().map_or(0, |m| m.tagger.tagset.len())
}

/// Tag one sentence from the point of view of the percentage at
/// `mask_index` (negative for none). Percentage tokens are found with the
/// built-in recognizer. `pos` may be null, in which case every token gets the
/// unknown POS tag.
///
/// # Safety
/// `tokens` (and `pos` when non-null) must hold `len` NUL-terminated strings;
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn skiptag_predict(
    model: *const SkipTagModel,
    tokens: *const *const c_char,
    pos: *const *const c_char,
    len: usize,
    mask_index: i64,
    out: *mut *mut SkipTagPrediction,
) -> SkipTagStatus {
    guard(|| {
        if out.is_null() {
            return fail(SkipTagStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let Some(model) = model.as_ref() else {
            return fail(SkipTagStatus::NullPointer, "model is null");
        };
        if len == 0 {
            return fail(SkipTagStatus::Data, "empty sentence");
        }
        let tokens = match str_array(tokens, len, "tokens") {
            Ok(t) => t,
            Err(s) => return s,
        };
        let pos = if pos.is_null() {
            vec![String::new(); len]
        } else {
            match str_array(pos, len, "pos") {
                Ok(p) => p,
                Err(s) => return s,
            }
        };
        let mut mask = vec![0u8; len];
        if mask_index >= 0 {
            match usize::try_from(mask_index).ok().filter(|&i| i < len) {
                Some(i) => mask[i] = 1,
                None => {
                    return fail(
                        SkipTagStatus::OutOfRange,
                        &format!("mask index {mask_index} outside sentence of {len} tokens"),
                    )
                }
            }
        }
        let mut pct_indicator = vec![0u8; len];
        for m in recognize_percentages(&tokens) {
            pct_indicator[m.token_index] = 1;
        }
        for (p, &m) in pct_indicator.iter_mut().zip(&mask) {
            *p = (*p).max(m);
        }
        let inst = Instance {
            sentence_id: String::new(),
            percentage: None,
            gold: vec![skiptag::codec::Tag::O; len],
            tokens,
            pos,
            pct_indicator,
            mask,
        };
        match model.tagger.predict(&inst) {
            Ok(p) => {
                let cstr = |s: String| CString::new(s).unwrap_or_default();
                let pred = SkipTagPrediction {
                    tags: p.tags.iter().map(|t| cstr(t.to_string())).collect(),
                    spans: p.spans.into_iter().map(|s| (cstr(s.role), s.start, s.end)).collect(),
                    trace: p.trace,
                };
                *out = Box::into_raw(Box::new(pred));
                SkipTagStatus::Ok
            }
            Err(e) => from_error(&e),
        }
    })
}

/// # Safety
/// `pred` must be null or a handle from [`skiptag_predict`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn skiptag_prediction_free(pred: *mut SkipTagPrediction) {
    if !pred.is_null() {
        drop(Box::from_raw(pred));
    }
}

/// Number of tokens, 0 for a null handle.
///
/// # Safety
/// `pred` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn skiptag_prediction_len(pred: *const SkipTagPrediction) -> usize {
    pred.as_ref().map_or(0, |p| p.tags.len())
}

/// Tag string of token `index`, e.g. `B-part`; null when out of range. The
/// string lives as long as the prediction.
///
/// # Safety
/// `pred` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn skiptag_prediction_tag(pred: *const SkipTagPrediction, index: usize) -> *const c_char {
    pred.as_ref()
        .and_then(|p| p.tags.get(index))
        .map_or(ptr::null(), |s| s.as_ptr())
}

/// # Safety
/// `pred` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn skiptag_prediction_num_spans(pred: *const SkipTagPrediction) -> usize {
    pred.as_ref().map_or(0, |p| p.spans.len())
}

/// Role and half-open token range of span `index`. The role string lives as
/// long as the prediction.
///
/// # Safety
/// `pred` must be a live handle; `role`, `start` and `end` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn skiptag_prediction_span(
    pred: *const SkipTagPrediction,
    index: usize,
    role: *mut *const c_char,
    start: *mut usize,
    end: *mut usize,
) -> SkipTagStatus {
    let Some(p) = pred.as_ref() else {
        return fail(SkipTagStatus::NullPointer, "prediction is null");
    };
    if role.is_null() || start.is_null() || end.is_null() {
        return fail(SkipTagStatus::NullPointer, "output pointer is null");
    }
    let Some((r, s, e)) = p.spans.get(index) else {
        return fail(SkipTagStatus::OutOfRange, &format!("span {index} of {}", p.spans.len()));
    };
    *role = r.as_ptr();
    *start = *s;
    *end = *e;
    SkipTagStatus::Ok
}

/// Copy the forward and backward update-gate bits (one byte per token) into
/// caller buffers of at least `skiptag_prediction_len` bytes. Plain-mode
/// predictions have no gates.
///
/// # Safety
/// `pred` must be a live handle; `u_fwd` and `u_bwd` must be writable for
/// `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn skiptag_prediction_gates(
    pred: *const SkipTagPrediction,
    u_fwd: *mut u8,
    u_bwd: *mut u8,
    len: usize,
) -> SkipTagStatus {
    let Some(p) = pred.as_ref() else {
        return fail(SkipTagStatus::NullPointer, "prediction is null");
    };
    let Some(trace) = &p.trace else {
        return fail(SkipTagStatus::ModelIncompatible, "plain-mode prediction has no gates");
    };
    if u_fwd.is_null() || u_bwd.is_null() {
        return fail(SkipTagStatus::NullPointer, "gate buffer is null");
    }
    if len < trace.len() {
        return fail(
            SkipTagStatus::OutOfRange,
            &format!("buffer of {len} for {} gates", trace.len()),
        );
    }
    ptr::copy_nonoverlapping(trace.u_fwd.as_ptr(), u_fwd, trace.len());
    ptr::copy_nonoverlapping(trace.u_bwd.as_ptr(), u_bwd, trace.len());
    SkipTagStatus::Ok
}

/// Run the percentage recognizer. Writes up to `capacity` token indices and
/// values and stores the total number of mentions in `count`.
///
/// # Safety
/// `tokens` must hold `len` NUL-terminated strings; `indices` and `values`
/// must be writable for `capacity` elements (or null when `capacity` is 0);
/// `count` must be valid.
#[no_mangle]
pub unsafe extern "C" fn skiptag_recognize_percentages(
    tokens: *const *const c_char,
    len: usize,
    indices: *mut usize,
    values: *mut f64,
    capacity: usize,
    count: *mut usize,
) -> SkipTagStatus {
    guard(|| {
        if count.is_null() || (capacity > 0 && (indices.is_null() || values.is_null())) {
            return fail(SkipTagStatus::NullPointer, "output pointer is null");
        }
        let tokens = match str_array(tokens, len, "tokens") {
            Ok(t) => t,
            Err(s) => return s,
        };
        let found = recognize_percentages(&tokens);
        for (i, m) in found.iter().take(capacity).enumerate() {
            *indices.add(i) = m.token_index;
            *values.add(i) = m.normalized_value;
        }
        *count = found.len();
        SkipTagStatus::Ok
    })
}

/// Message of the last failure on this thread; empty when none. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn skiptag_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version string.
#[no_mangle]
pub extern "C" fn skiptag_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => panic!("version contains NUL"),
    };
    VERSION.as_ptr()
}
