//! C ABI over `twinctl`.
//!
//! Objects are opaque handles created by `*_new` functions and released with
//! the matching `*_free`. Every fallible call returns a [`TwinctlStatus`]; on
//! failure [`twinctl_last_error`] describes the error for the calling thread.
//! Output arrays are caller-allocated and must have exactly the length the
//! corresponding dimension query reports.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::BufWriter;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::DVector;
use twinctl::config::parse_config;
use twinctl::harness::RngStreams;
use twinctl::{
    build_twin, discounted_cost, DigitalTwin, ExperimentPreset, Observation, Simulation, TwinError,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TwinctlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidString = 2,
    Config = 3,
    Dimension = 4,
    NonFinite = 5,
    Runtime = 6,
    Io = 7,
    Panic = 8,
}

/// Kind of data passed to [`twinctl_twin_step`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TwinctlData {
    /// No data this step; `data` may be null.
    None = 0,
    /// Continuous-time increment `dY` over the step.
    Increment = 1,
    /// Discrete observation `Y` at the current time.
    Discrete = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TwinctlDims {
    pub state_dim: usize,
    pub obs_dim: usize,
    pub control_dim: usize,
    pub ensemble_size: usize,
}

/// A physical twin coupled to its digital twin, with its run record.
pub struct TwinctlSimulation {
    sim: Simulation,
}

/// A digital twin fed with externally supplied observations.
pub struct TwinctlTwin {
    twin: DigitalTwin,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(TwinctlStatus, String);

impl From<TwinError> for Failure {
    fn from(err: TwinError) -> Self {
        let status = match err.root() {
            TwinError::Dimension(_) => TwinctlStatus::Dimension,
            TwinError::Config { .. } | TwinError::Usage(_) => TwinctlStatus::Config,
            TwinError::NonFinite { .. } => TwinctlStatus::NonFinite,
            TwinError::Io(_) => TwinctlStatus::Io,
            _ => TwinctlStatus::Runtime,
        };
        Failure(status, err.to_string())
    }
}

fn set_last_error(message: String) {
    let message = CString::new(message.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(message));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TwinctlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TwinctlStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {message}"));
            TwinctlStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(TwinctlStatus::NullPointer, format!("{what} is null"))
}

unsafe fn string<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        Failure(
            TwinctlStatus::InvalidString,
            format!("{what} is not valid UTF-8"),
        )
    })
}

unsafe fn handle<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn out_slice<'a>(
    p: *mut f64,
    len: usize,
    expected: usize,
    what: &str,
) -> Result<&'a mut [f64], Failure> {
    if len != expected {
        return Err(Failure(
            TwinctlStatus::Dimension,
            format!("{what} has length {len}, expected {expected}"),
        ));
    }
    if p.is_null() {
        return if expected == 0 {
            Ok(&mut [])
        } else {
            Err(null(what))
        };
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn in_slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return if len == 0 { Ok(&[]) } else { Err(null(what)) };
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

unsafe fn preset_with_seed(name: *const c_char, seed: u64) -> Result<ExperimentPreset, Failure> {
    let mut preset = ExperimentPreset::by_name(string(name, "preset")?)?;
    preset.twin.seed = seed;
    preset.validate()?;
    Ok(preset)
}

unsafe fn preset_from_config(text: *const c_char) -> Result<ExperimentPreset, Failure> {
    Ok(parse_config(string(text, "config")?)?)
}

/// Message for the last failed call on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn twinctl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn twinctl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

// ---------------------------------------------------------------------------
// simulation

fn boxed_simulation(
    preset: ExperimentPreset,
    out: *mut *mut TwinctlSimulation,
) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    let sim = Box::new(TwinctlSimulation {
        sim: Simulation::new(preset)?,
    });
    unsafe { out.write(Box::into_raw(sim)) };
    Ok(())
}

/// Creates a simulation of a built-in preset (`lorenz63` or `pendulum`).
///
/// # Safety
/// `preset` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn twinctl_simulation_new(
    preset: *const c_char,
    seed: u64,
    out: *mut *mut TwinctlSimulation,
) -> TwinctlStatus {
    guard(|| boxed_simulation(preset_with_seed(preset, seed)?, out))
}

/// Creates a simulation from `key = value` config text.
///
/// # Safety
/// `config` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn twinctl_simulation_from_config(
    config: *const c_char,
    out: *mut *mut TwinctlSimulation,
) -> TwinctlStatus {
    guard(|| boxed_simulation(preset_from_config(config)?, out))
}

/// # Safety
/// `sim` must come from a `twinctl_simulation_*` constructor and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn twinctl_simulation_free(sim: *mut TwinctlSimulation) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Advances by `steps` steps, stopping early at the configured horizon.
///
/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn twinctl_simulation_advance(
    sim: *mut TwinctlSimulation,
    steps: usize,
) -> TwinctlStatus {
    guard(|| {
        let sim = &mut handle(sim, "sim")?.sim;
        let end = (sim.steps_taken() + steps).min(sim.preset().twin.n_steps);
        while sim.steps_taken() < end {
            sim.advance()?;
        }
        Ok(())
    })
}

/// Runs to the configured horizon.
///
/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn twinctl_simulation_run(sim: *mut TwinctlSimulation) -> TwinctlStatus {
    guard(|| Ok(handle(sim, "sim")?.sim.run_to_end()?))
}

/// # Safety
/// `sim` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn twinctl_simulation_dims(
    sim: *mut TwinctlSimulation,
    out: *mut TwinctlDims,
) -> TwinctlStatus {
    guard(|| {
        let dims = twin_dims(handle(sim, "sim")?.sim.twin());
        write_out(out, dims, "out")
    })
}

/// # Safety
/// `sim` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn twinctl_simulation_steps(
    sim: *mut TwinctlSimulation,
    out: *mut usize,
) -> TwinctlStatus {
    guard(|| write_out(out, handle(sim, "sim")?.sim.steps_taken(), "out"))
}

/// # Safety
/// `sim` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn twinctl_simulation_time(
    sim: *mut TwinctlSimulation,
    out: *mut f64,
) -> TwinctlStatus {
    guard(|| write_out(out, handle(sim, "sim")?.sim.time(), "out"))
}

/// Physical-twin state; `len` must equal the state dimension.
///
/// # Safety
/// `sim` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn twinctl_simulation_true_state(
    sim: *mut TwinctlSimulation,
    out: *mut f64,
    len: usize,
) -> TwinctlStatus {
    guard(|| {
        let x = handle(sim, "sim")?.sim.x_true();
        out_slice(out, len, x.len(), "out")?.copy_from_slice(x.as_slice());
        Ok(())
    })
}

/// Ensemble mean of the digital twin; `len` must equal the state dimension.
///
/// # Safety
/// `sim` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn twinctl_simulation_mean_state(
    sim: *mut TwinctlSimulation,
    out: *mut f64,
    len: usize,
) -> TwinctlStatus {
    guard(|| {
        let m = handle(sim, "sim")?.sim.twin().ensemble().mean_state();
        out_slice(out, len, m.len(), "out")?.copy_from_slice(m.as_slice());
        Ok(())
    })
}

/// Control applied over the next step; `len` must equal the control dimension.
///
/// # Safety
/// `sim` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn twinctl_simulation_control(
    sim: *mut TwinctlSimulation,
    out: *mut f64,
    len: usize,
) -> TwinctlStatus {
    guard(|| {
        let u = handle(sim, "sim")?.sim.applied_control();
        out_slice(out, len, u.len(), "out")?.copy_from_slice(u.as_slice());
        Ok(())
    })
}

/// Discounted cost accumulated so far.
///
/// # Safety
/// `sim` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn twinctl_simulation_discounted_cost(
    sim: *mut TwinctlSimulation,
    out: *mut f64,
) -> TwinctlStatus {
    guard(|| {
        let sim = &handle(sim, "sim")?.sim;
        write_out(
            out,
            discounted_cost(sim.record(), sim.preset().twin.gamma),
            "out",
        )
    })
}

/// Writes the run record as CSV to `path`.
///
/// # Safety
/// `sim` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn twinctl_simulation_write_csv(
    sim: *mut TwinctlSimulation,
    path: *const c_char,
) -> TwinctlStatus {
    guard(|| {
        let sim = &handle(sim, "sim")?.sim;
        let path = string(path, "path")?;
        let io = |e: std::io::Error| Failure(TwinctlStatus::Io, format!("{path}: {e}"));
        let file = File::create(path).map_err(io)?;
        sim.record().write_csv(BufWriter::new(file)).map_err(io)
    })
}

// ---------------------------------------------------------------------------
// externally fed twin

fn twin_dims(twin: &DigitalTwin) -> TwinctlDims {
    TwinctlDims {
        state_dim: twin.model().state_dim(),
        obs_dim: twin.obs_model().obs_dim(),
        control_dim: twin.model().control_dim(),
        ensemble_size: twin.ensemble().size(),
    }
}

fn boxed_twin(preset: ExperimentPreset, out: *mut *mut TwinctlTwin) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("out"));
    }
    let mut rngs = RngStreams::from_seed(preset.twin.seed);
    let twin = Box::new(TwinctlTwin {
        twin: build_twin(&preset, &mut rngs.particles)?,
    });
    unsafe { out.write(Box::into_raw(twin)) };
    Ok(())
}

/// Creates a digital twin for a built-in preset. The particle draw matches a
/// simulation created with the same preset and seed.
///
/// # Safety
/// `preset` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn twinctl_twin_new(
    preset: *const c_char,
    seed: u64,
    out: *mut *mut TwinctlTwin,
) -> TwinctlStatus {
    guard(|| boxed_twin(preset_with_seed(preset, seed)?, out))
}

/// Creates a digital twin from `key = value` config text.
///
/// # Safety
/// `config` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn twinctl_twin_from_config(
    config: *const c_char,
    out: *mut *mut TwinctlTwin,
) -> TwinctlStatus {
    guard(|| boxed_twin(preset_from_config(config)?, out))
}

/// # Safety
/// `twin` must come from a `twinctl_twin_*` constructor and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn twinctl_twin_free(twin: *mut TwinctlTwin) {
    if !twin.is_null() {
        drop(Box::from_raw(twin));
    }
}

/// # Safety
/// `twin` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn twinctl_twin_dims(
    twin: *mut TwinctlTwin,
    out: *mut TwinctlDims,
) -> TwinctlStatus {
    guard(|| write_out(out, twin_dims(&handle(twin, "twin")?.twin), "out"))
}

/// Advances the twin one step with the given data and writes the control it
/// used over that step. `data_len` must equal the observation dimension unless
/// `kind` is `None`; `control_len` must equal the control dimension.
///
/// # Safety
/// `twin` must be a live handle, `data` must hold `data_len` doubles and
/// `control_out` must hold `control_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn twinctl_twin_step(
    twin: *mut TwinctlTwin,
    kind: TwinctlData,
    data: *const f64,
    data_len: usize,
    control_out: *mut f64,
    control_len: usize,
) -> TwinctlStatus {
    guard(|| {
        let twin = &mut handle(twin, "twin")?.twin;
        let dims = twin_dims(twin);
        let control = out_slice(control_out, control_len, dims.control_dim, "control_out")?;
        let observation = match kind {
            TwinctlData::None => Observation::None,
            TwinctlData::Increment | TwinctlData::Discrete => {
                if data_len != dims.obs_dim {
                    return Err(Failure(
                        TwinctlStatus::Dimension,
                        format!("data has length {data_len}, expected {}", dims.obs_dim),
                    ));
                }
                let y = DVector::from_column_slice(in_slice(data, data_len, "data")?);
                if kind == TwinctlData::Increment {
                    Observation::Increment(y)
                } else {
                    Observation::Discrete(y)
                }
            }
        };
        let diagnostics = twin.step(&observation)?;
        control.copy_from_slice(diagnostics.control.as_slice());
        Ok(())
    })
}

/// Control implied by the current ensemble.
///
/// # Safety
/// `twin` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn twinctl_twin_control(
    twin: *mut TwinctlTwin,
    out: *mut f64,
    len: usize,
) -> TwinctlStatus {
    guard(|| {
        let u = handle(twin, "twin")?.twin.control();
        out_slice(out, len, u.len(), "out")?.copy_from_slice(u.as_slice());
        Ok(())
    })
}

/// # Safety
/// `twin` must be a live handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn twinctl_twin_mean_state(
    twin: *mut TwinctlTwin,
    out: *mut f64,
    len: usize,
) -> TwinctlStatus {
    guard(|| {
        let m = handle(twin, "twin")?.twin.ensemble().mean_state();
        out_slice(out, len, m.len(), "out")?.copy_from_slice(m.as_slice());
        Ok(())
    })
}

/// # Safety
/// `twin` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn twinctl_twin_time(twin: *mut TwinctlTwin, out: *mut f64) -> TwinctlStatus {
    guard(|| write_out(out, handle(twin, "twin")?.twin.ensemble().time, "out"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn failure_sets_thread_local_message() {
        let status = guard(|| Err(Failure(TwinctlStatus::Config, "bad key".into())));
        assert_eq!(status, TwinctlStatus::Config);
        let msg = unsafe { CStr::from_ptr(twinctl_last_error()) };
        assert_eq!(msg.to_str().unwrap(), "bad key");
    }

    #[test]
    fn panics_become_status() {
        let status = guard(|| panic!("boom"));
        assert_eq!(status, TwinctlStatus::Panic);
        let msg = unsafe { CStr::from_ptr(twinctl_last_error()) };
        assert_eq!(msg.to_str().unwrap(), "panic: boom");
    }

    #[test]
    fn errors_map_by_root_cause() {
        let f: Failure = TwinError::config("m", "x").at_step(3).into();
        assert_eq!(f.0, TwinctlStatus::Config);
        let f: Failure = TwinError::Dimension("d".into()).into();
        assert_eq!(f.0, TwinctlStatus::Dimension);
    }
}
