//! C ABI over the `nvmc` solver.
//!
//! Models and runs are opaque heap handles owned by the caller and released
//! with their `_free` function. Every fallible call returns an
//! [`NvmcStatus`]; on failure the message is kept per thread and read with
//! [`nvmc_last_error_message`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use ndarray::ArrayView2;
use nvmc::hamiltonians::local_energies;
use nvmc::nodal::{moment_converges, NodalScaling, Sampling, Verdict};
use nvmc::{Error, HamiltonianSpec, RunConfig, RunRecord, WavefunctionModel};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NvmcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Config = 4,
    Io = 5,
    Checkpoint = 6,
    Training = 7,
    Domain = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NvmcVerdict {
    Converges = 0,
    Diverges = 1,
    LogDivergent = 2,
}

/// Scalar results of a finished run. `relative_error` is NaN without a
/// reference value.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NvmcRunSummary {
    pub energy: f64,
    pub observable: f64,
    pub variance: f64,
    pub relative_error: f64,
    pub steps: usize,
    pub converged: bool,
}

/// Opaque trained wavefunction.
pub struct NvmcModel(WavefunctionModel);

/// Opaque finished run: trajectory, summary, resolved config and model.
pub struct NvmcRun(RunRecord);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(NvmcStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Config(_) | Error::Json(_) => NvmcStatus::Config,
            Error::File { .. } | Error::Io(_) => NvmcStatus::Io,
            Error::Checkpoint { .. } => NvmcStatus::Checkpoint,
            Error::Training(_) | Error::NonFinite { .. } | Error::TooFewSamples { .. } => {
                NvmcStatus::Training
            }
            Error::Domain(_) => NvmcStatus::Domain,
            Error::Shape(_) => NvmcStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: NvmcStatus, msg: &str) -> Failure {
    Failure(status, msg.to_string())
}

/// Runs `f`, recording any failure or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> NvmcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            NvmcStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("internal panic: {msg}"));
            NvmcStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(NvmcStatus::NullPointer, &format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(NvmcStatus::InvalidUtf8, &format!("{name} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| fail(NvmcStatus::NullPointer, &format!("{name} is null")))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| fail(NvmcStatus::NullPointer, &format!("{name} is null")))
}

unsafe fn rows_arg<'a>(
    inputs: *const f64,
    n_rows: usize,
    dim: usize,
) -> Result<ArrayView2<'a, f64>, Failure> {
    if inputs.is_null() {
        return Err(fail(NvmcStatus::NullPointer, "inputs is null"));
    }
    let len = n_rows
        .checked_mul(dim)
        .ok_or_else(|| fail(NvmcStatus::InvalidArgument, "n_rows * dim overflows"))?;
    let flat = std::slice::from_raw_parts(inputs, len);
    ArrayView2::from_shape((n_rows, dim), flat)
        .map_err(|e| fail(NvmcStatus::InvalidArgument, &e.to_string()))
}

/// Message of the last failed call on this thread, or NULL after a
/// success. Valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn nvmc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn nvmc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Reads a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn nvmc_model_load(path: *const c_char, out: *mut *mut NvmcModel) -> NvmcStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let path = str_arg(path, "path")?;
        let text = std::fs::read_to_string(path)
            .map_err(|e| fail(NvmcStatus::Io, &format!("{path}: {e}")))?;
        let model = WavefunctionModel::from_checkpoint(&text)?;
        *out = Box::into_raw(Box::new(NvmcModel(model)));
        Ok(())
    })
}

/// Parses checkpoint text.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn nvmc_model_from_checkpoint(
    text: *const c_char,
    out: *mut *mut NvmcModel,
) -> NvmcStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let model = WavefunctionModel::from_checkpoint(str_arg(text, "text")?)?;
        *out = Box::into_raw(Box::new(NvmcModel(model)));
        Ok(())
    })
}

/// Configuration-space dimension, 0 for a NULL handle.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nvmc_model_input_dim(model: *const NvmcModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.input_dim)
}

/// Number of trainable parameters, 0 for a NULL handle.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nvmc_model_n_params(model: *const NvmcModel) -> usize {
    model.as_ref().map_or(0, |m| m.0.n_params())
}

/// Evaluates ψ, ∇ψ and ∇²ψ on `n_rows` row-major configurations of length
/// `dim`. `grad_out` (`n_rows*dim`) and `laplacian_out` (`n_rows`) may be
/// NULL when not wanted.
///
/// # Safety
/// Buffers must hold the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn nvmc_model_eval(
    model: *const NvmcModel,
    inputs: *const f64,
    n_rows: usize,
    dim: usize,
    value_out: *mut f64,
    grad_out: *mut f64,
    laplacian_out: *mut f64,
) -> NvmcStatus {
    guard(|| {
        let model = &ref_arg(model, "model")?.0;
        let rows = rows_arg(inputs, n_rows, dim)?;
        if value_out.is_null() {
            return Err(fail(NvmcStatus::NullPointer, "value_out is null"));
        }
        let batch = model.psi_batch(rows)?;
        std::slice::from_raw_parts_mut(value_out, n_rows).copy_from_slice(
            batch.value.as_slice().expect("contiguous"),
        );
        if !grad_out.is_null() {
            let g = std::slice::from_raw_parts_mut(grad_out, n_rows * dim);
            for (dst, src) in g.iter_mut().zip(batch.grad.iter()) {
                *dst = *src;
            }
        }
        if !laplacian_out.is_null() {
            std::slice::from_raw_parts_mut(laplacian_out, n_rows)
                .copy_from_slice(batch.laplacian.as_slice().expect("contiguous"));
        }
        Ok(())
    })
}

/// Local energies `Hψ/ψ` for the system described by `system_json` (the
/// `system` object of a run config). Rows near a node or outside the
/// domain come back as NaN.
///
/// # Safety
/// `system_json` must be NUL-terminated; buffers must hold the stated
/// number of doubles.
#[no_mangle]
pub unsafe extern "C" fn nvmc_model_local_energies(
    model: *const NvmcModel,
    system_json: *const c_char,
    inputs: *const f64,
    n_rows: usize,
    dim: usize,
    energies_out: *mut f64,
) -> NvmcStatus {
    guard(|| {
        let model = &ref_arg(model, "model")?.0;
        let spec: HamiltonianSpec = parse_system(str_arg(system_json, "system_json")?)?;
        let rows = rows_arg(inputs, n_rows, dim)?;
        if energies_out.is_null() {
            return Err(fail(NvmcStatus::NullPointer, "energies_out is null"));
        }
        let el = local_energies(&spec, &model.psi_batch(rows)?)?;
        let out = std::slice::from_raw_parts_mut(energies_out, n_rows);
        for ((dst, &v), &excluded) in out.iter_mut().zip(el.values.iter()).zip(&el.excluded) {
            *dst = if excluded { f64::NAN } else { v };
        }
        Ok(())
    })
}

fn parse_system(text: &str) -> Result<HamiltonianSpec, Failure> {
    let spec: HamiltonianSpec = RunConfig::from_json(&format!("{{\"system\":{text}}}"))?.system;
    spec.validate()?;
    Ok(spec)
}

/// Releases a model handle; NULL is ignored.
///
/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nvmc_model_free(model: *mut NvmcModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Trains from a JSON run config. Artifacts are written when the config
/// names an output directory. A run that ends unconverged still succeeds;
/// inspect its summary.
///
/// # Safety
/// `config_json` must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nvmc_run_train(config_json: *const c_char, out: *mut *mut NvmcRun) -> NvmcStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let config = RunConfig::from_json(str_arg(config_json, "config_json")?)?;
        let record = nvmc::trainer::train_and_write(&config)?;
        *out = Box::into_raw(Box::new(NvmcRun(record)));
        Ok(())
    })
}

/// Loads a completed run directory.
///
/// # Safety
/// `dir` must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nvmc_run_read(dir: *const c_char, out: *mut *mut NvmcRun) -> NvmcStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let record = RunRecord::read(Path::new(str_arg(dir, "dir")?))?;
        *out = Box::into_raw(Box::new(NvmcRun(record)));
        Ok(())
    })
}

/// Writes config echo, metrics, checkpoint and summary into `dir`.
///
/// # Safety
/// `run` must be a live handle and `dir` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn nvmc_run_write(run: *mut NvmcRun, dir: *const c_char) -> NvmcStatus {
    guard(|| {
        let run = out_arg(run, "run")?;
        run.0.write(Path::new(str_arg(dir, "dir")?))?;
        Ok(())
    })
}

/// # Safety
/// `run` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nvmc_run_summary(run: *const NvmcRun, out: *mut NvmcRunSummary) -> NvmcStatus {
    guard(|| {
        let s = &ref_arg(run, "run")?.0.summary;
        *out_arg(out, "out")? = NvmcRunSummary {
            energy: s.energy,
            observable: s.observable,
            variance: s.variance,
            relative_error: s.relative_error.unwrap_or(f64::NAN),
            steps: s.steps,
            converged: s.converged,
        };
        Ok(())
    })
}

/// Number of recorded metric rows, 0 for a NULL handle.
///
/// # Safety
/// `run` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn nvmc_run_metrics_len(run: *const NvmcRun) -> usize {
    run.as_ref().map_or(0, |r| r.0.rows.len())
}

/// Copies the per-step energy and variance series; either buffer may be
/// NULL. Each holds `nvmc_run_metrics_len` doubles.
///
/// # Safety
/// Non-NULL buffers must hold the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn nvmc_run_metrics(
    run: *const NvmcRun,
    energy_out: *mut f64,
    variance_out: *mut f64,
) -> NvmcStatus {
    guard(|| {
        let rows = &ref_arg(run, "run")?.0.rows;
        if !energy_out.is_null() {
            let e = std::slice::from_raw_parts_mut(energy_out, rows.len());
            for (dst, r) in e.iter_mut().zip(rows) {
                *dst = r.energy;
            }
        }
        if !variance_out.is_null() {
            let v = std::slice::from_raw_parts_mut(variance_out, rows.len());
            for (dst, r) in v.iter_mut().zip(rows) {
                *dst = r.variance;
            }
        }
        Ok(())
    })
}

/// Copies the trained model into a new handle.
///
/// # Safety
/// `run` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nvmc_run_model(run: *const NvmcRun, out: *mut *mut NvmcModel) -> NvmcStatus {
    guard(|| {
        let model = ref_arg(run, "run")?.0.model.clone();
        *out_arg(out, "out")? = Box::into_raw(Box::new(NvmcModel(model)));
        Ok(())
    })
}

/// Releases a run handle; NULL is ignored.
///
/// # Safety
/// `run` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nvmc_run_free(run: *mut NvmcRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Whether the `p`-th moment of the local energy is finite near a node of
/// codimension `k` where `ψ ~ δ^β` and `E_L ~ δ^{-γ}`.
///
/// # Safety
/// `verdict_out` and `margin_out` must be writable; `margin_out` may be
/// NULL.
#[no_mangle]
pub unsafe extern "C" fn nvmc_nodal_check(
    beta: f64,
    gamma: f64,
    k: u32,
    p: u32,
    uniform: bool,
    verdict_out: *mut NvmcVerdict,
    margin_out: *mut f64,
) -> NvmcStatus {
    guard(|| {
        let verdict_out = out_arg(verdict_out, "verdict_out")?;
        let sampling = if uniform {
            Sampling::Uniform
        } else {
            Sampling::PsiSquared
        };
        let s = NodalScaling::new(beta, gamma, k, p, sampling);
        s.validate().map_err(|m| fail(NvmcStatus::InvalidArgument, &m))?;
        let v = moment_converges(&s);
        *verdict_out = match v.verdict {
            Verdict::Converges => NvmcVerdict::Converges,
            Verdict::Diverges => NvmcVerdict::Diverges,
            Verdict::LogDivergent => NvmcVerdict::LogDivergent,
        };
        if !margin_out.is_null() {
            *margin_out = v.margin;
        }
        Ok(())
    })
}
