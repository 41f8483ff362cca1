//! C interface to `hedge`.
//!
//! Objects are opaque heap handles released with the matching `*_free`.
//! Every fallible call returns a [`HedgeStatus`]; on failure a message is
//! available from [`hedge_last_error`] on the same thread until the next call.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use hedge::cli::load_model;
use hedge::datasets::{load_incidence_with, read_batch_dir};
use hedge::forward::DiffusionConfig;
use hedge::incidence::Constraints;
use hedge::metrics::evaluate;
use hedge::net::DriftNet;
use hedge::sampler::{generate, SampleConfig};
use hedge::validation::{run_validation, ValidationBudget};
use hedge::{HedgeError, IncidenceMatrix};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HedgeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Shape = 4,
    Numeric = 5,
    Panic = 6,
}

/// A binary incidence matrix.
pub struct HedgeIncidence(IncidenceMatrix);

/// A batch of incidence matrices.
pub struct HedgeBatch(Vec<IncidenceMatrix>);

/// A trained drift network with its diffusion settings.
pub struct HedgeModel {
    net: DriftNet,
    diffusion: DiffusionConfig,
}

/// The ten distances of a metric report plus the spectral truncation used.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct HedgeMetrics {
    pub delta_rho: f64,
    pub delta_k: f64,
    pub delta_e: f64,
    pub w1_degree: f64,
    pub w1_size: f64,
    pub node_spec_wd: f64,
    pub edge_spec_wd: f64,
    pub tail_gap: f64,
    pub intersection_wd: f64,
    pub feature_mmd: f64,
    pub truncation: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &HedgeError) -> HedgeStatus {
    match e {
        HedgeError::Io(_) | HedgeError::NotFound(_) | HedgeError::Parse { .. } | HedgeError::Json(_) => HedgeStatus::Io,
        HedgeError::Checkpoint(_) => HedgeStatus::Io,
        HedgeError::DimensionMismatch { .. } => HedgeStatus::Shape,
        HedgeError::NonFinite(_)
        | HedgeError::EigenNonConvergence { .. }
        | HedgeError::ScoreSingular { .. }
        | HedgeError::DriftBlowUp { .. } => HedgeStatus::Numeric,
        _ => HedgeStatus::InvalidArgument,
    }
}

struct Fail(HedgeStatus, String);

impl From<HedgeError> for Fail {
    fn from(e: HedgeError) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(HedgeStatus::NullPointer, format!("{what} is null"))
}

/// Runs `body`, converting errors and panics into status codes.
fn guarded(body: impl FnOnce() -> Result<(), Fail>) -> HedgeStatus {
    set_error("");
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => HedgeStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_error(&format!("internal panic: {msg}"));
            HedgeStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(HedgeStatus::InvalidArgument, "path is not UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn write_out<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failed call on this thread; empty after a success.
#[no_mangle]
pub extern "C" fn hedge_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn hedge_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds an `n x m` incidence from row-major 0/1 bytes. Isolated nodes are
/// allowed; empty hyperedges are rejected.
#[no_mangle]
pub unsafe extern "C" fn hedge_incidence_new(
    n: usize,
    m: usize,
    data: *const u8,
    out: *mut *mut HedgeIncidence,
) -> HedgeStatus {
    guarded(|| {
        if data.is_null() {
            return Err(null("data"));
        }
        let len = n
            .checked_mul(m)
            .ok_or_else(|| Fail(HedgeStatus::Shape, "n * m overflows".into()))?;
        let bytes = std::slice::from_raw_parts(data, len).to_vec();
        let h = IncidenceMatrix::with_constraints(n, m, bytes, Constraints::ALLOW_ISOLATED)?;
        write_out(out, HedgeIncidence(h))
    })
}

/// Reads the text incidence format.
#[no_mangle]
pub unsafe extern "C" fn hedge_incidence_load(path: *const c_char, out: *mut *mut HedgeIncidence) -> HedgeStatus {
    guarded(|| {
        let h = load_incidence_with(&path_arg(path)?, Constraints::RELAXED)?;
        write_out(out, HedgeIncidence(h))
    })
}

#[no_mangle]
pub unsafe extern "C" fn hedge_incidence_shape(h: *const HedgeIncidence, n: *mut usize, m: *mut usize) -> HedgeStatus {
    guarded(|| {
        let h = h.as_ref().ok_or_else(|| null("incidence"))?;
        if n.is_null() || m.is_null() {
            return Err(null("shape output"));
        }
        (*n, *m) = h.0.shape();
        Ok(())
    })
}

/// Copies the row-major entries into `buf`, which must hold `n * m` bytes.
#[no_mangle]
pub unsafe extern "C" fn hedge_incidence_copy(h: *const HedgeIncidence, buf: *mut u8, len: usize) -> HedgeStatus {
    guarded(|| {
        let h = h.as_ref().ok_or_else(|| null("incidence"))?;
        if buf.is_null() {
            return Err(null("buffer"));
        }
        let src = h.0.as_slice();
        if len != src.len() {
            return Err(Fail(
                HedgeStatus::Shape,
                format!("buffer holds {len} bytes, matrix has {}", src.len()),
            ));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), buf, len);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn hedge_incidence_free(h: *mut HedgeIncidence) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Reads every matrix of a batch directory.
#[no_mangle]
pub unsafe extern "C" fn hedge_batch_load_dir(path: *const c_char, out: *mut *mut HedgeBatch) -> HedgeStatus {
    guarded(|| {
        let batch = read_batch_dir(&path_arg(path)?, Constraints::RELAXED)?;
        write_out(out, HedgeBatch(batch))
    })
}

#[no_mangle]
pub unsafe extern "C" fn hedge_batch_len(b: *const HedgeBatch, len: *mut usize) -> HedgeStatus {
    guarded(|| {
        let b = b.as_ref().ok_or_else(|| null("batch"))?;
        if len.is_null() {
            return Err(null("length output"));
        }
        *len = b.0.len();
        Ok(())
    })
}

/// A new handle holding a copy of element `i`.
#[no_mangle]
pub unsafe extern "C" fn hedge_batch_get(b: *const HedgeBatch, i: usize, out: *mut *mut HedgeIncidence) -> HedgeStatus {
    guarded(|| {
        let b = b.as_ref().ok_or_else(|| null("batch"))?;
        let h = b
            .0
            .get(i)
            .ok_or_else(|| Fail(HedgeStatus::InvalidArgument, format!("index {i} out of {}", b.0.len())))?;
        write_out(out, HedgeIncidence(h.clone()))
    })
}

#[no_mangle]
pub unsafe extern "C" fn hedge_batch_free(b: *mut HedgeBatch) {
    if !b.is_null() {
        drop(Box::from_raw(b));
    }
}

/// Loads a model directory written by `hedge train`.
#[no_mangle]
pub unsafe extern "C" fn hedge_model_load(dir: *const c_char, out: *mut *mut HedgeModel) -> HedgeStatus {
    guarded(|| {
        let (net, sidecar) = load_model(&path_arg(dir)?)?;
        write_out(
            out,
            HedgeModel {
                net,
                diffusion: sidecar.diffusion,
            },
        )
    })
}

/// Draws `count` projected samples with `steps` reverse steps.
#[no_mangle]
pub unsafe extern "C" fn hedge_model_generate(
    model: *const HedgeModel,
    count: usize,
    steps: usize,
    seed: u64,
    threshold: f64,
    out: *mut *mut HedgeBatch,
) -> HedgeStatus {
    guarded(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let sc = SampleConfig { steps, seed, threshold };
        let output = generate(&model.net, &model.diffusion, &sc, count)?;
        if let Some(f) = output.failures.first() {
            return Err(Fail(
                HedgeStatus::Numeric,
                format!("{} of {count} samples failed; first: {}", output.failures.len(), f.message),
            ));
        }
        write_out(out, HedgeBatch(output.matrices()))
    })
}

#[no_mangle]
pub unsafe extern "C" fn hedge_model_free(m: *mut HedgeModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

#[no_mangle]
pub unsafe extern "C" fn hedge_evaluate(
    real: *const HedgeBatch,
    generated: *const HedgeBatch,
    out: *mut HedgeMetrics,
) -> HedgeStatus {
    guarded(|| {
        let real = real.as_ref().ok_or_else(|| null("real batch"))?;
        let generated = generated.as_ref().ok_or_else(|| null("generated batch"))?;
        let out = out.as_mut().ok_or_else(|| null("metrics output"))?;
        let r = evaluate(&real.0, &generated.0)?;
        *out = HedgeMetrics {
            delta_rho: r.delta_rho,
            delta_k: r.delta_k,
            delta_e: r.delta_e,
            w1_degree: r.w1_degree,
            w1_size: r.w1_size,
            node_spec_wd: r.node_spec_wd,
            edge_spec_wd: r.edge_spec_wd,
            tail_gap: r.tail_gap,
            intersection_wd: r.intersection_wd,
            feature_mmd: r.feature_mmd,
            truncation: r.truncation,
        };
        Ok(())
    })
}

/// Runs the validation suite; `passed` receives 1 if every check passed.
#[no_mangle]
pub unsafe extern "C" fn hedge_validate(seed: u64, quick: bool, passed: *mut i32) -> HedgeStatus {
    guarded(|| {
        let passed = passed.as_mut().ok_or_else(|| null("result output"))?;
        let budget = if quick {
            ValidationBudget::quick()
        } else {
            ValidationBudget::default()
        };
        *passed = i32::from(run_validation(seed, &budget, None).passed);
        Ok(())
    })
}
