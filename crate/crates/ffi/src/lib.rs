//! C interface for applying trained checkpoints: load a checkpoint, extract
//! a rationale mask and predict a label for a tokenized document.
//!
//! Every call returns an [`InkwellStatus`]. On failure the message of the
//! most recent error on the calling thread is available from
//! [`inkwell_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use inkwell::corpus::Document;
use inkwell::model::target_k;
use inkwell::rationale::extract;
use inkwell::trainer::{predict, Checkpoint};
use inkwell::Error;

/// Result code of every exported function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InkwellStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    InvalidCheckpoint = 4,
    InvalidArgument = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Opaque handle to a loaded checkpoint.
pub struct InkwellCheckpoint {
    inner: Checkpoint,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: InkwellStatus, msg: impl Into<String>) -> InkwellStatus {
    set_error(msg);
    status
}

fn status_of(e: &Error) -> InkwellStatus {
    match e {
        Error::Io(_) | Error::MissingInput(_) => InkwellStatus::Io,
        Error::Json(_) | Error::Checkpoint(_) => InkwellStatus::InvalidCheckpoint,
        _ => InkwellStatus::InvalidArgument,
    }
}

fn guard(f: impl FnOnce() -> InkwellStatus) -> InkwellStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(InkwellStatus::Panic, "internal panic"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, InkwellStatus> {
    if p.is_null() {
        return Err(fail(InkwellStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(InkwellStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

/// Message of the last failed call on this thread, or null when none.
/// Valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn inkwell_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn inkwell_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint file. On success `*out` owns a handle that must be
/// released with [`inkwell_checkpoint_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn inkwell_checkpoint_load(
    path: *const c_char,
    out: *mut *mut InkwellCheckpoint,
) -> InkwellStatus {
    guard(|| {
        if out.is_null() {
            return fail(InkwellStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let path = match str_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match Checkpoint::load(path) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(InkwellCheckpoint { inner }));
                InkwellStatus::Ok
            }
            Err(e) => fail(status_of(&e), format!("{path}: {e}")),
        }
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `handle` must come from [`inkwell_checkpoint_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn inkwell_checkpoint_free(handle: *mut InkwellCheckpoint) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Length level the checkpoint was trained at.
///
/// # Safety
/// `handle` must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn inkwell_checkpoint_length_level(
    handle: *const InkwellCheckpoint,
    out: *mut f64,
) -> InkwellStatus {
    if handle.is_null() || out.is_null() {
        return fail(InkwellStatus::NullPointer, "handle or out is null");
    }
    *out = (*handle).inner.config.length_level();
    InkwellStatus::Ok
}

/// Number of labels the checkpoint predicts.
///
/// # Safety
/// `handle` must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn inkwell_checkpoint_label_count(
    handle: *const InkwellCheckpoint,
    out: *mut usize,
) -> InkwellStatus {
    if handle.is_null() || out.is_null() {
        return fail(InkwellStatus::NullPointer, "handle or out is null");
    }
    *out = (*handle).inner.labelspace.len();
    InkwellStatus::Ok
}

/// Words kept out of `n` at `level`.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn inkwell_target_k(level: f64, n: usize, out: *mut usize) -> InkwellStatus {
    if out.is_null() {
        return fail(InkwellStatus::NullPointer, "out is null");
    }
    match target_k(level, n) {
        Ok(k) => {
            *out = k;
            InkwellStatus::Ok
        }
        Err(e) => fail(status_of(&e), e.to_string()),
    }
}

/// Extracts the rationale of a document given as `n_words` words at
/// `level` (the checkpoint's own level when `level <= 0`). Writes one
/// 0/1 byte per word into `mask` (capacity `mask_len`) and, when
/// `label` is not null, the predicted label index.
///
/// # Safety
/// `words` must point to `n_words` NUL-terminated strings and `mask` to
/// `mask_len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn inkwell_extract(
    handle: *const InkwellCheckpoint,
    words: *const *const c_char,
    n_words: usize,
    level: f64,
    mask: *mut u8,
    mask_len: usize,
    label: *mut usize,
) -> InkwellStatus {
    guard(|| {
        if handle.is_null() || words.is_null() || mask.is_null() {
            return fail(InkwellStatus::NullPointer, "handle, words or mask is null");
        }
        if mask_len < n_words {
            return fail(
                InkwellStatus::BufferTooSmall,
                format!("mask holds {mask_len} bytes, need {n_words}"),
            );
        }
        let ckpt = &(*handle).inner;
        let mut owned = Vec::with_capacity(n_words);
        for i in 0..n_words {
            match str_arg(*words.add(i), "word") {
                Ok(w) => owned.push(w.to_string()),
                Err(s) => return s,
            }
        }
        let level = if level > 0.0 { level } else { ckpt.config.length_level() };
        let mut doc = Document::new("ffi", owned, 0, None);
        let mut run = || -> inkwell::Result<(Vec<bool>, usize)> {
            doc.retokenize(ckpt.tokenizer.as_ref())?;
            let r = extract(ckpt, &doc, level)?;
            let y = predict(&ckpt.model, ckpt.config.method, level, &doc)?;
            Ok((r.mask, y))
        };
        match run() {
            Ok((m, y)) => {
                let out = std::slice::from_raw_parts_mut(mask, n_words);
                for (o, b) in out.iter_mut().zip(m) {
                    *o = u8::from(b);
                }
                if !label.is_null() {
                    *label = y;
                }
                InkwellStatus::Ok
            }
            Err(e) => fail(status_of(&e), e.to_string()),
        }
    })
}
