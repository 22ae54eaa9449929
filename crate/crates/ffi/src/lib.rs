//! C ABI over the label model, metrics, and answer parsing.
//!
//! Conventions:
//! - Every fallible function returns a [`VrStatus`]; results go through out
//!   pointers. On failure, [`vr_last_error`] describes what went wrong on the
//!   calling thread.
//! - Objects are opaque handles created by `vr_*_new`/`vr_*_fit` and released
//!   with the matching `vr_*_free`. Freeing NULL is a no-op.
//! - Strings returned to the caller are NUL-terminated UTF-8 and must be
//!   released with [`vr_string_free`].
//! - Votes are `int8_t` in row-major order: 1, 0, or -1 for abstain.
//! - Panics never cross the boundary; they surface as `VR_PANIC`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use veracity::analysis::{chi_squared, ContingencyTable2x2};
use veracity::evaluation::f1_macro;
use veracity::label_model::{
    fit, majority_vote, predict_proba, CorrelationSet, FitConfig, FitMode, LabelModelError,
    LabelModelParams, VoteMatrix,
};
use veracity::signals::{parse_answer, AnswerValue};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    FitFailed = 4,
    Parse = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VrFitMode {
    Auto = 0,
    Exact = 1,
    Gibbs = 2,
}

/// Label-model training options. Start from vr_fit_options_default() and
/// adjust fields as needed. `mode` takes a VrFitMode value.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct VrFitOptions {
    pub epochs: usize,
    pub step_size: f64,
    pub seed: u64,
    pub mode: u32,
    pub chains: usize,
    pub sweeps: usize,
    pub prior: f64,
    pub init_accuracy: f64,
}

/// Opaque vote matrix.
pub struct VrVoteMatrix(VoteMatrix);

/// Opaque fitted label model.
pub struct VrLabelModel(LabelModelParams);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("NULs removed"));
}

struct Failure(VrStatus, String);

impl From<LabelModelError> for Failure {
    fn from(e: LabelModelError) -> Self {
        let status = match e {
            LabelModelError::Shape(_) | LabelModelError::Correlation(_) => VrStatus::Shape,
            LabelModelError::Config(_) => VrStatus::InvalidArgument,
            LabelModelError::Io(_) => VrStatus::Parse,
            _ => VrStatus::FitFailed,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(VrStatus::NullPointer, format!("{what} is NULL"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(VrStatus::InvalidArgument, msg.into())
}

/// Runs `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> VrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            VrStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            VrStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Message for the most recent failure on this thread; empty after a
/// success. Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn vr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn vr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn vr_fit_options_default() -> VrFitOptions {
    let d = FitConfig::default();
    VrFitOptions {
        epochs: d.epochs,
        step_size: d.step_size,
        seed: d.seed,
        mode: VrFitMode::Auto as u32,
        chains: d.chains,
        sweeps: d.sweeps,
        prior: d.prior,
        init_accuracy: d.init_accuracy,
    }
}

fn fit_config(o: &VrFitOptions) -> Result<FitConfig, Failure> {
    const AUTO: u32 = VrFitMode::Auto as u32;
    const EXACT: u32 = VrFitMode::Exact as u32;
    const GIBBS: u32 = VrFitMode::Gibbs as u32;
    Ok(FitConfig {
        epochs: o.epochs,
        step_size: o.step_size,
        seed: o.seed,
        mode: match o.mode {
            AUTO => FitMode::Auto,
            EXACT => FitMode::Exact,
            GIBBS => FitMode::Gibbs,
            m => return Err(invalid(format!("unknown fit mode {m}"))),
        },
        chains: o.chains,
        sweeps: o.sweeps,
        prior: o.prior,
        init_accuracy: o.init_accuracy,
    })
}

/// Copies an m×n row-major vote array into a new matrix.
#[no_mangle]
pub unsafe extern "C" fn vr_votes_new(
    votes: *const i8,
    m: usize,
    n: usize,
    out_matrix: *mut *mut VrVoteMatrix,
) -> VrStatus {
    guard(|| {
        let dst = out(out_matrix, "out_matrix")?;
        let len = m.checked_mul(n).ok_or_else(|| invalid("m * n overflows"))?;
        let v = slice(votes, len, "votes")?;
        let vm = VoteMatrix::new(
            (0..m).map(|i| i.to_string()).collect(),
            (0..n).map(|j| format!("lf{j}")).collect(),
            v.to_vec(),
        )?;
        *dst = Box::into_raw(Box::new(VrVoteMatrix(vm)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn vr_votes_free(matrix: *mut VrVoteMatrix) {
    if !matrix.is_null() {
        drop(Box::from_raw(matrix));
    }
}

#[no_mangle]
pub unsafe extern "C" fn vr_votes_shape(
    matrix: *const VrVoteMatrix,
    out_m: *mut usize,
    out_n: *mut usize,
) -> VrStatus {
    guard(|| {
        let vm = &handle(matrix, "matrix")?.0;
        *out(out_m, "out_m")? = vm.m();
        *out(out_n, "out_n")? = vm.n();
        Ok(())
    })
}

/// Fits a label model. `pairs` holds `n_pairs` correlated column pairs as
/// consecutive (j, k) indices; pass NULL and 0 for none.
#[no_mangle]
pub unsafe extern "C" fn vr_label_model_fit(
    matrix: *const VrVoteMatrix,
    options: *const VrFitOptions,
    pairs: *const usize,
    n_pairs: usize,
    out_model: *mut *mut VrLabelModel,
) -> VrStatus {
    guard(|| {
        let dst = out(out_model, "out_model")?;
        let vm = &handle(matrix, "matrix")?.0;
        let cfg = match options.as_ref() {
            Some(o) => fit_config(o)?,
            None => FitConfig::default(),
        };
        let len = n_pairs
            .checked_mul(2)
            .ok_or_else(|| invalid("n_pairs overflows"))?;
        let flat = slice(pairs, len, "pairs")?;
        let c = CorrelationSet::new(flat.chunks_exact(2).map(|p| (p[0], p[1])))?;
        let params = fit(vm, &c, &cfg)?;
        *dst = Box::into_raw(Box::new(VrLabelModel(params)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn vr_label_model_free(model: *mut VrLabelModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Writes P(y = 1 | votes) for every row of `matrix` into `out_proba`,
/// which must hold `len` = m values.
#[no_mangle]
pub unsafe extern "C" fn vr_label_model_predict_proba(
    model: *const VrLabelModel,
    matrix: *const VrVoteMatrix,
    out_proba: *mut f64,
    len: usize,
) -> VrStatus {
    guard(|| {
        let p = &handle(model, "model")?.0;
        let vm = &handle(matrix, "matrix")?.0;
        if len != vm.m() {
            return Err(Failure(
                VrStatus::Shape,
                format!("buffer holds {len}, matrix has {} rows", vm.m()),
            ));
        }
        let wl = predict_proba(p, vm)?;
        slice_mut(out_proba, len, "out_proba")?.copy_from_slice(&wl.proba);
        Ok(())
    })
}

/// Number of weights: accuracies, then propensities, then one per
/// correlated pair.
#[no_mangle]
pub unsafe extern "C" fn vr_label_model_num_weights(
    model: *const VrLabelModel,
    out_len: *mut usize,
) -> VrStatus {
    guard(|| {
        *out(out_len, "out_len")? = handle(model, "model")?.0.dim();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn vr_label_model_weights(
    model: *const VrLabelModel,
    out_weights: *mut f64,
    len: usize,
) -> VrStatus {
    guard(|| {
        let w = &handle(model, "model")?.0.weights;
        if len != w.len() {
            return Err(Failure(
                VrStatus::Shape,
                format!("buffer holds {len}, model has {} weights", w.len()),
            ));
        }
        slice_mut(out_weights, len, "out_weights")?.copy_from_slice(w);
        Ok(())
    })
}

/// Serialises the model as JSON. Release the string with vr_string_free().
#[no_mangle]
pub unsafe extern "C" fn vr_label_model_to_json(
    model: *const VrLabelModel,
    out_json: *mut *mut c_char,
) -> VrStatus {
    guard(|| {
        let dst = out(out_json, "out_json")?;
        let text = handle(model, "model")?.0.to_json()?;
        *dst = CString::new(text)
            .map_err(|e| invalid(e.to_string()))?
            .into_raw();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn vr_label_model_from_json(
    json: *const c_char,
    out_model: *mut *mut VrLabelModel,
) -> VrStatus {
    guard(|| {
        let dst = out(out_model, "out_model")?;
        if json.is_null() {
            return Err(null("json"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| Failure(VrStatus::Parse, format!("json is not UTF-8: {e}")))?;
        let p = LabelModelParams::from_json(text)?;
        *dst = Box::into_raw(Box::new(VrLabelModel(p)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn vr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Majority vote per row; ties and all-abstain rows give 0.
#[no_mangle]
pub unsafe extern "C" fn vr_majority_vote(
    matrix: *const VrVoteMatrix,
    out_labels: *mut u8,
    len: usize,
) -> VrStatus {
    guard(|| {
        let vm = &handle(matrix, "matrix")?.0;
        if len != vm.m() {
            return Err(Failure(
                VrStatus::Shape,
                format!("buffer holds {len}, matrix has {} rows", vm.m()),
            ));
        }
        slice_mut(out_labels, len, "out_labels")?.copy_from_slice(&majority_vote(vm).predictions);
        Ok(())
    })
}

/// Macro-averaged F1 over classes 0 and 1.
#[no_mangle]
pub unsafe extern "C" fn vr_f1_macro(
    preds: *const u8,
    labels: *const u8,
    len: usize,
    out_f1: *mut f64,
) -> VrStatus {
    guard(|| {
        let dst = out(out_f1, "out_f1")?;
        let p = slice(preds, len, "preds")?;
        let l = slice(labels, len, "labels")?;
        *dst = f1_macro(p, l).map_err(|e| invalid(e.to_string()))?;
        Ok(())
    })
}

/// Pearson χ² (no continuity correction) and 1-dof p-value for the table
/// [[a, b], [c, d]].
#[no_mangle]
pub unsafe extern "C" fn vr_chi_squared(
    a: u64,
    b: u64,
    c: u64,
    d: u64,
    out_stat: *mut f64,
    out_p: *mut f64,
) -> VrStatus {
    guard(|| {
        let (s, p) = chi_squared(&ContingencyTable2x2::from_cells([[a, b], [c, d]]));
        *out(out_stat, "out_stat")? = s;
        *out(out_p, "out_p")? = p;
        Ok(())
    })
}

/// Parses an LLM completion into a vote: 1 (Yes), 0 (No) or -1 (Unsure).
/// With `allow_unsure` = 0, unusable text maps to 0 instead of -1.
/// `out_warning` (may be NULL) is set to 1 when the text held no clean answer.
#[no_mangle]
pub unsafe extern "C" fn vr_parse_answer(
    completion: *const c_char,
    allow_unsure: i32,
    out_vote: *mut i8,
    out_warning: *mut i32,
) -> VrStatus {
    guard(|| {
        let dst = out(out_vote, "out_vote")?;
        if completion.is_null() {
            return Err(null("completion"));
        }
        let text = String::from_utf8_lossy(CStr::from_ptr(completion).to_bytes());
        let a = parse_answer(&text, allow_unsure != 0);
        *dst = match a.value {
            AnswerValue::Yes => 1,
            AnswerValue::No => 0,
            AnswerValue::Unsure => -1,
        };
        if !out_warning.is_null() {
            *out_warning = i32::from(a.warning);
        }
        Ok(())
    })
}
