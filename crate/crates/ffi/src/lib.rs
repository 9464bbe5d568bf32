//! C ABI over the spkver back-end.
//!
//! Conventions: every constructor returns a status code and writes an
//! opaque handle through an out-pointer; handles are freed with their
//! `_free` function; `spkver_last_error` returns a thread-local message
//! describing the most recent failure on the calling thread. Status
//! codes mirror the CLI exit codes (0 ok, 2 config, 3 data, 4 numerical)
//! plus 5 for null/invalid arguments and 6 for internal panics.
//!
//! The matching header lives at `include/spkver.h` (maintained by hand;
//! the `header_lists_every_symbol` test keeps it honest).

use std::cell::RefCell;
use std::ffi::{c_char, c_double, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use spkver::corpus::{Corpus, TrialKey};
use spkver::metrics::{CostMode, CostParams};
use spkver::plda::{PldaModel, PldaScorer, ScoreOptions};

pub const SPKVER_OK: c_int = 0;
pub const SPKVER_CONFIG_ERROR: c_int = 2;
pub const SPKVER_DATA_ERROR: c_int = 3;
pub const SPKVER_NUMERICAL_ERROR: c_int = 4;
pub const SPKVER_NULL_ARGUMENT: c_int = 5;
pub const SPKVER_INTERNAL_ERROR: c_int = 6;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|e| {
        *e.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &spkver::Error) -> c_int {
    err.exit_code() as c_int
}

/// Message describing the most recent error on this thread. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn spkver_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

fn run_ffi(f: impl FnOnce() -> c_int) -> c_int {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            SPKVER_INTERNAL_ERROR
        }
    }
}

unsafe fn path_arg(ptr: *const c_char) -> Result<PathBuf, c_int> {
    if ptr.is_null() {
        set_error("null path argument");
        return Err(SPKVER_NULL_ARGUMENT);
    }
    match CStr::from_ptr(ptr).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => {
            set_error("path is not valid UTF-8");
            Err(SPKVER_NULL_ARGUMENT)
        }
    }
}

macro_rules! try_ffi {
    ($expr:expr) => {
        match $expr {
            Ok(v) => v,
            Err(e) => {
                set_error(&e.to_string());
                return status_of(&e);
            }
        }
    };
}

macro_rules! out_ptr {
    ($ptr:expr) => {
        match unsafe { $ptr.as_mut() } {
            Some(p) => p,
            None => {
                set_error("null out-pointer");
                return SPKVER_NULL_ARGUMENT;
            }
        }
    };
}

// ------------------------------------------------------------------
// Corpus

pub struct SpkverCorpus {
    inner: Corpus,
}

/// Reads a corpus file (`#dim=` header format).
#[no_mangle]
pub unsafe extern "C" fn spkver_corpus_read(
    path: *const c_char,
    out: *mut *mut SpkverCorpus,
) -> c_int {
    run_ffi(|| {
        let out = out_ptr!(out);
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let corpus = try_ffi!(spkver::corpus::read_corpus(&path));
        *out = Box::into_raw(Box::new(SpkverCorpus { inner: corpus }));
        SPKVER_OK
    })
}

/// Generates a corpus from a JSON-encoded synthesis config (the same
/// schema as the `synth` block of an experiment config).
#[no_mangle]
pub unsafe extern "C" fn spkver_corpus_generate_json(
    config_json: *const c_char,
    out: *mut *mut SpkverCorpus,
) -> c_int {
    run_ffi(|| {
        let out = out_ptr!(out);
        if config_json.is_null() {
            set_error("null config argument");
            return SPKVER_NULL_ARGUMENT;
        }
        let text = match CStr::from_ptr(config_json).to_str() {
            Ok(s) => s,
            Err(_) => {
                set_error("config is not valid UTF-8");
                return SPKVER_NULL_ARGUMENT;
            }
        };
        let cfg: spkver::corpus::SynthConfig = match serde_json::from_str(text) {
            Ok(c) => c,
            Err(e) => {
                set_error(&format!("config parse error: {e}"));
                return SPKVER_CONFIG_ERROR;
            }
        };
        let corpus = try_ffi!(spkver::corpus::generate_corpus(&cfg));
        *out = Box::into_raw(Box::new(SpkverCorpus { inner: corpus }));
        SPKVER_OK
    })
}

#[no_mangle]
pub unsafe extern "C" fn spkver_corpus_write(
    corpus: *const SpkverCorpus,
    path: *const c_char,
) -> c_int {
    run_ffi(|| {
        let Some(corpus) = (unsafe { corpus.as_ref() }) else {
            set_error("null corpus handle");
            return SPKVER_NULL_ARGUMENT;
        };
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        try_ffi!(spkver::corpus::write_corpus(&corpus.inner, &path));
        SPKVER_OK
    })
}

#[no_mangle]
pub unsafe extern "C" fn spkver_corpus_len(corpus: *const SpkverCorpus) -> usize {
    unsafe { corpus.as_ref() }.map_or(0, |c| c.inner.len())
}

#[no_mangle]
pub unsafe extern "C" fn spkver_corpus_dimension(corpus: *const SpkverCorpus) -> usize {
    unsafe { corpus.as_ref() }.map_or(0, |c| c.inner.dimension())
}

#[no_mangle]
pub unsafe extern "C" fn spkver_corpus_free(corpus: *mut SpkverCorpus) {
    if !corpus.is_null() {
        drop(unsafe { Box::from_raw(corpus) });
    }
}

// ------------------------------------------------------------------
// Projection

pub struct SpkverProjection {
    inner: spkver::lda::Projection,
}

#[no_mangle]
pub unsafe extern "C" fn spkver_projection_read(
    path: *const c_char,
    out: *mut *mut SpkverProjection,
) -> c_int {
    run_ffi(|| {
        let out = out_ptr!(out);
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let projection = try_ffi!(spkver::lda::read_projection(&path));
        *out = Box::into_raw(Box::new(SpkverProjection { inner: projection }));
        SPKVER_OK
    })
}

#[no_mangle]
pub unsafe extern "C" fn spkver_projection_input_dim(p: *const SpkverProjection) -> usize {
    unsafe { p.as_ref() }.map_or(0, |p| p.inner.input_dim())
}

#[no_mangle]
pub unsafe extern "C" fn spkver_projection_output_dim(p: *const SpkverProjection) -> usize {
    unsafe { p.as_ref() }.map_or(0, |p| p.inner.output_dim())
}

/// Applies the projection to one vector. `input` must hold `input_dim`
/// doubles and `output` must have room for `output_dim`.
#[no_mangle]
pub unsafe extern "C" fn spkver_projection_apply(
    p: *const SpkverProjection,
    input: *const c_double,
    input_dim: usize,
    output: *mut c_double,
    output_dim: usize,
) -> c_int {
    run_ffi(|| {
        let Some(p) = (unsafe { p.as_ref() }) else {
            set_error("null projection handle");
            return SPKVER_NULL_ARGUMENT;
        };
        if input.is_null() || output.is_null() {
            set_error("null buffer argument");
            return SPKVER_NULL_ARGUMENT;
        }
        if input_dim != p.inner.input_dim() || output_dim != p.inner.output_dim() {
            set_error(&format!(
                "projection expects {} -> {}, got buffers {} -> {}",
                p.inner.input_dim(),
                p.inner.output_dim(),
                input_dim,
                output_dim
            ));
            return SPKVER_DATA_ERROR;
        }
        let input = unsafe { std::slice::from_raw_parts(input, input_dim) };
        let result = p.inner.apply(input);
        let output = unsafe { std::slice::from_raw_parts_mut(output, output_dim) };
        output.copy_from_slice(&result);
        SPKVER_OK
    })
}

#[no_mangle]
pub unsafe extern "C" fn spkver_projection_free(p: *mut SpkverProjection) {
    if !p.is_null() {
        drop(unsafe { Box::from_raw(p) });
    }
}

// ------------------------------------------------------------------
// PLDA

pub struct SpkverPlda {
    model: PldaModel,
    scorer: PldaScorer,
}

#[no_mangle]
pub unsafe extern "C" fn spkver_plda_read(path: *const c_char, out: *mut *mut SpkverPlda) -> c_int {
    run_ffi(|| {
        let out = out_ptr!(out);
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let model = try_ffi!(spkver::plda::read_plda(&path));
        let scorer = try_ffi!(model.scorer());
        *out = Box::into_raw(Box::new(SpkverPlda { model, scorer }));
        SPKVER_OK
    })
}

#[no_mangle]
pub unsafe extern "C" fn spkver_plda_dim(plda: *const SpkverPlda) -> usize {
    unsafe { plda.as_ref() }.map_or(0, |p| p.model.dim())
}

/// Verification LLR for one (enroll, test) pair of `dim` doubles each.
/// Nonzero `trial_mean_subtract` applies pairwise mean subtraction
/// before scoring.
#[no_mangle]
pub unsafe extern "C" fn spkver_plda_score(
    plda: *const SpkverPlda,
    enroll: *const c_double,
    test: *const c_double,
    dim: usize,
    trial_mean_subtract: c_int,
    llr_out: *mut c_double,
) -> c_int {
    run_ffi(|| {
        let Some(plda) = (unsafe { plda.as_ref() }) else {
            set_error("null plda handle");
            return SPKVER_NULL_ARGUMENT;
        };
        if enroll.is_null() || test.is_null() || llr_out.is_null() {
            set_error("null buffer argument");
            return SPKVER_NULL_ARGUMENT;
        }
        if dim != plda.model.dim() {
            set_error(&format!(
                "plda model dimension is {}, got vectors of {dim}",
                plda.model.dim()
            ));
            return SPKVER_DATA_ERROR;
        }
        let e = unsafe { std::slice::from_raw_parts(enroll, dim) };
        let t = unsafe { std::slice::from_raw_parts(test, dim) };
        let llr = if trial_mean_subtract != 0 {
            let (e2, t2) = spkver::preprocess::trial_mean_subtract(e, t);
            plda.scorer.score(&e2, &t2)
        } else {
            plda.scorer.score(e, t)
        };
        unsafe { *llr_out = llr };
        SPKVER_OK
    })
}

/// Scores a trial file against a corpus and writes a score file.
#[no_mangle]
pub unsafe extern "C" fn spkver_plda_score_trials(
    plda: *const SpkverPlda,
    corpus: *const SpkverCorpus,
    trials_path: *const c_char,
    scores_out_path: *const c_char,
    trial_mean_subtract: c_int,
) -> c_int {
    run_ffi(|| {
        let (Some(plda), Some(corpus)) = (unsafe { plda.as_ref() }, unsafe { corpus.as_ref() })
        else {
            set_error("null handle argument");
            return SPKVER_NULL_ARGUMENT;
        };
        let trials_path = match path_arg(trials_path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let out_path = match path_arg(scores_out_path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let trials = try_ffi!(spkver::corpus::read_trials(&trials_path));
        let scores = try_ffi!(spkver::plda::score_trialset(
            &plda.model,
            &corpus.inner,
            &trials,
            ScoreOptions {
                trial_mean_subtract: trial_mean_subtract != 0,
            },
        ));
        try_ffi!(spkver::corpus::write_scores(&scores, &out_path));
        SPKVER_OK
    })
}

#[no_mangle]
pub unsafe extern "C" fn spkver_plda_free(plda: *mut SpkverPlda) {
    if !plda.is_null() {
        drop(unsafe { Box::from_raw(plda) });
    }
}

// ------------------------------------------------------------------
// Calibration

pub struct SpkverCalibration {
    inner: spkver::calfuse::CalibrationMap,
}

#[no_mangle]
pub unsafe extern "C" fn spkver_calibration_read(
    path: *const c_char,
    out: *mut *mut SpkverCalibration,
) -> c_int {
    run_ffi(|| {
        let out = out_ptr!(out);
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let map = try_ffi!(spkver::calfuse::read_calibration(&path));
        *out = Box::into_raw(Box::new(SpkverCalibration { inner: map }));
        SPKVER_OK
    })
}

/// Maps one raw score through the monotone calibration transform.
#[no_mangle]
pub unsafe extern "C" fn spkver_calibration_apply(
    map: *const SpkverCalibration,
    score: c_double,
) -> c_double {
    unsafe { map.as_ref() }.map_or(f64::NAN, |m| m.inner.apply_one(score))
}

#[no_mangle]
pub unsafe extern "C" fn spkver_calibration_free(map: *mut SpkverCalibration) {
    if !map.is_null() {
        drop(unsafe { Box::from_raw(map) });
    }
}

// ------------------------------------------------------------------
// Metrics

unsafe fn keyed_scores(
    scores: *const c_double,
    is_target: *const c_int,
    n: usize,
) -> Result<(Vec<f64>, Vec<TrialKey>), c_int> {
    if scores.is_null() || is_target.is_null() || n == 0 {
        set_error("null or empty score buffers");
        return Err(SPKVER_NULL_ARGUMENT);
    }
    let s = std::slice::from_raw_parts(scores, n).to_vec();
    let k = std::slice::from_raw_parts(is_target, n)
        .iter()
        .map(|&t| if t != 0 { TrialKey::Target } else { TrialKey::Nontarget })
        .collect();
    Ok((s, k))
}

/// Equal error rate of keyed scores (`is_target` nonzero marks targets).
#[no_mangle]
pub unsafe extern "C" fn spkver_eer(
    scores: *const c_double,
    is_target: *const c_int,
    n: usize,
    out: *mut c_double,
) -> c_int {
    run_ffi(|| {
        if out.is_null() {
            set_error("null out-pointer");
            return SPKVER_NULL_ARGUMENT;
        }
        let (s, k) = match keyed_scores(scores, is_target, n) {
            Ok(v) => v,
            Err(code) => return code,
        };
        let eer = try_ffi!(spkver::metrics::eer_from_scores(&s, &k));
        unsafe { *out = eer };
        SPKVER_OK
    })
}

/// min- or act-Cprimary at the default operating points
/// ((0.01, 1, 1) and (0.005, 1, 1)); nonzero `actual` selects act mode.
#[no_mangle]
pub unsafe extern "C" fn spkver_cprimary(
    scores: *const c_double,
    is_target: *const c_int,
    n: usize,
    actual: c_int,
    out: *mut c_double,
) -> c_int {
    run_ffi(|| {
        if out.is_null() {
            set_error("null out-pointer");
            return SPKVER_NULL_ARGUMENT;
        }
        let (s, k) = match keyed_scores(scores, is_target, n) {
            Ok(v) => v,
            Err(code) => return code,
        };
        let mode = if actual != 0 { CostMode::Act } else { CostMode::Min };
        let c = try_ffi!(cprimary_default(&s, &k, mode));
        unsafe { *out = c };
        SPKVER_OK
    })
}

fn cprimary_default(s: &[f64], k: &[TrialKey], mode: CostMode) -> spkver::Result<f64> {
    spkver::metrics::cprimary(s, k, &CostParams::default(), mode)
}
