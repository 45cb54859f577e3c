//! C ABI for loading a trained tokenizer and model, transferring sentences
//! and reading sentence embeddings.
//!
//! Every fallible call returns a [`StxStatus`]. On failure the message is kept
//! per thread and can be read with [`stx_last_error`]. Strings returned by the
//! library must be released with [`stx_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use stylex::corpus::StyleTag;
use stylex::seqmodel::Model;
use stylex::tokenizer::BpeModel;
use stylex::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StxStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    InvalidArgument = 4,
    Format = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Opaque tokenizer handle.
pub struct StxTokenizer {
    bpe: BpeModel,
}

/// Opaque model handle.
pub struct StxModel {
    model: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> StxStatus {
    match e {
        Error::Io { .. } => StxStatus::Io,
        Error::InvalidUtf8 { .. } => StxStatus::InvalidUtf8,
        Error::Format(_) | Error::Json(_) => StxStatus::Format,
        _ => StxStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (StxStatus, String)>) -> StxStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => StxStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            StxStatus::Panic
        }
    }
}

fn lib<T>(r: stylex::Result<T>) -> Result<T, (StxStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, (StxStatus, String)> {
    if p.is_null() {
        return Err((StxStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (StxStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

fn null(what: &str) -> (StxStatus, String) {
    (StxStatus::NullPointer, format!("{what} is null"))
}

/// Message of the last failed call on this thread. Valid until the next
/// failing call on the same thread. Never null.
#[no_mangle]
pub extern "C" fn stx_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn stx_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn stx_tokenizer_load(path: *const c_char, out: *mut *mut StxTokenizer) -> StxStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let bpe = lib(BpeModel::load(Path::new(text(path, "path")?)))?;
        *out = Box::into_raw(Box::new(StxTokenizer { bpe }));
        Ok(())
    })
}

/// # Safety
/// `tok` must come from [`stx_tokenizer_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn stx_tokenizer_free(tok: *mut StxTokenizer) {
    if !tok.is_null() {
        drop(Box::from_raw(tok));
    }
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn stx_model_load(path: *const c_char, out: *mut *mut StxModel) -> StxStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let model = lib(Model::load(Path::new(text(path, "path")?)))?;
        *out = Box::into_raw(Box::new(StxModel { model }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`stx_model_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn stx_model_free(model: *mut StxModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Length of the bag-of-embeddings vector `w`.
///
/// # Safety
/// `model` must be a live handle or null (which yields 0).
#[no_mangle]
pub unsafe extern "C" fn stx_model_w_dim(model: *const StxModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.config().embed_dim)
}

/// Length of the encoder-state vector `e`.
///
/// # Safety
/// `model` must be a live handle or null (which yields 0).
#[no_mangle]
pub unsafe extern "C" fn stx_model_e_dim(model: *const StxModel) -> usize {
    model.as_ref().map_or(0, |m| 2 * m.model.config().hidden_dim)
}

/// Rewrites `sentence` into the style `target` (a tag id such as `neg`).
/// On success `*out` holds a new string for [`stx_string_free`].
///
/// # Safety
/// Handles must be live, strings NUL-terminated, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn stx_transfer(
    model: *const StxModel,
    tok: *const StxTokenizer,
    sentence: *const c_char,
    target: *const c_char,
    out: *mut *mut c_char,
) -> StxStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let t = tok.as_ref().ok_or_else(|| null("tokenizer"))?;
        let s = text(sentence, "sentence")?;
        let tag: StyleTag = text(target, "target")?
            .parse()
            .map_err(|e: Error| (StxStatus::InvalidArgument, e.to_string()))?;
        let mut res = lib(stylex::trainer::transfer(&m.model, &t.bpe, &[s], &tag))?;
        let c = CString::new(res.remove(0)).map_err(|_| (StxStatus::Format, "output contains NUL".to_string()))?;
        *out = c.into_raw();
        Ok(())
    })
}

/// Writes the two sentence embeddings of `sentence` into `w` and `e`, of
/// capacity `w_cap` and `e_cap` (see [`stx_model_w_dim`], [`stx_model_e_dim`]).
///
/// # Safety
/// Handles must be live, `sentence` NUL-terminated, and `w`, `e` valid for
/// their capacities.
#[no_mangle]
pub unsafe extern "C" fn stx_embed(
    model: *const StxModel,
    tok: *const StxTokenizer,
    sentence: *const c_char,
    w: *mut f64,
    w_cap: usize,
    e: *mut f64,
    e_cap: usize,
) -> StxStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let t = tok.as_ref().ok_or_else(|| null("tokenizer"))?;
        if w.is_null() || e.is_null() {
            return Err(null("output buffer"));
        }
        let (wd, ed) = (m.model.config().embed_dim, 2 * m.model.config().hidden_dim);
        if w_cap < wd || e_cap < ed {
            return Err((
                StxStatus::BufferTooSmall,
                format!("need {wd} and {ed} doubles, got {w_cap} and {e_cap}"),
            ));
        }
        let s = text(sentence, "sentence")?;
        let mut seq = lib(t.bpe.encode(&stylex::corpus::normalize_text(s), None))?;
        seq.ids.truncate(m.model.config().max_len - 2);
        let r = lib(m.model.represent(&seq))?;
        ptr::copy_nonoverlapping(r.w.as_ptr(), w, wd);
        ptr::copy_nonoverlapping(r.e.as_ptr(), e, ed);
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library, or be null.
#[no_mangle]
pub unsafe extern "C" fn stx_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
