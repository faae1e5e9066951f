//! C interface to the icam solver.
//!
//! Every fallible call returns an [`IcamStatus`]; on failure the message is
//! available from [`icam_last_error`] on the same thread. Objects cross the
//! boundary as opaque handles that must be released with their `_free`
//! function. Panics never unwind into C; they surface as `ICAM_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use icam::eval::{exact_cvrp, exact_tsp, gap, nn_two_opt};
use icam::instance::cvrplib::{parse_cvrplib, scale_cvrplib};
use icam::instance::{generate_uniform, CapacityRule, Instance, Problem};
use icam::model::{IcamModel as Model, ModelConfig};
use icam::numeric::checkpoint::{self, DType};
use icam::rollout::{solve, tour_length, RolloutMode, SolutionRecord};
use icam::Error;

pub const ICAM_PROBLEM_TSP: i32 = 0;
pub const ICAM_PROBLEM_CVRP: i32 = 1;

pub const ICAM_MODE_GREEDY_SINGLE: i32 = 0;
pub const ICAM_MODE_GREEDY_MULTI: i32 = 1;
pub const ICAM_MODE_SAMPLE: i32 = 2;
pub const ICAM_MODE_AUGMENTED: i32 = 3;

/// Architectures for [`icam_model_new`].
pub const ICAM_PRESET_PAPER: i32 = 0;
pub const ICAM_PRESET_DESK: i32 = 1;
pub const ICAM_PRESET_TINY: i32 = 2;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum IcamStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    /// Instance too large for the requested oracle.
    Size = 5,
    Infeasible = 6,
    Numeric = 7,
    Checkpoint = 8,
    Panic = 9,
}

/// Opaque instance handle.
pub struct IcamInstance(Instance);

/// Opaque model handle.
pub struct IcamModel(Model);

/// Opaque solution handle.
pub struct IcamSolution(SolutionRecord);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> IcamStatus {
    match e {
        Error::Parse { .. } | Error::Json(_) | Error::Config(_) => IcamStatus::Parse,
        Error::File { .. } | Error::Io(_) => IcamStatus::Io,
        Error::Size(_) => IcamStatus::Size,
        Error::Infeasible(_) | Error::Contract(_) => IcamStatus::Infeasible,
        Error::Numeric(_) => IcamStatus::Numeric,
        Error::Checkpoint(_) => IcamStatus::Checkpoint,
        Error::Dimension(_) | Error::Domain(_) | Error::Argument(_) => IcamStatus::InvalidArgument,
    }
}

struct Fail(IcamStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(IcamStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(IcamStatus::InvalidArgument, msg.into())
}

/// Runs `f`, records any failure for [`icam_last_error`] and maps it to a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> IcamStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => IcamStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            IcamStatus::Panic
        }
    }
}

fn problem(p: i32) -> Result<Problem, Fail> {
    match p {
        ICAM_PROBLEM_TSP => Ok(Problem::Tsp),
        ICAM_PROBLEM_CVRP => Ok(Problem::Cvrp),
        other => Err(invalid(format!("unknown problem code {other}"))),
    }
}

fn mode(m: i32) -> Result<RolloutMode, Fail> {
    match m {
        ICAM_MODE_GREEDY_SINGLE => Ok(RolloutMode::GreedySingle),
        ICAM_MODE_GREEDY_MULTI => Ok(RolloutMode::GreedyMulti),
        ICAM_MODE_SAMPLE => Ok(RolloutMode::Sample),
        ICAM_MODE_AUGMENTED => Ok(RolloutMode::Augmented),
        other => Err(invalid(format!("unknown mode code {other}"))),
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| invalid("path is not UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn get<'a, T>(h: *const T, what: &str) -> Result<&'a T, Fail> {
    h.as_ref().ok_or_else(|| null(what))
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn icam_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn icam_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Random instance with `n` cities (TSP) or customers (CVRP). A `capacity` of
/// 0 picks the standard capacity for the scale.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn icam_instance_generate(
    problem_code: i32,
    n: usize,
    capacity: u32,
    seed: u64,
    out: *mut *mut IcamInstance,
) -> IcamStatus {
    guard(|| {
        let rule = if capacity == 0 {
            CapacityRule::ByScale
        } else {
            CapacityRule::Fixed { capacity }
        };
        let inst = generate_uniform(problem(problem_code)?, n, rule, seed)?;
        put(out, IcamInstance(inst))
    })
}

/// TSP instance from `n` interleaved `x, y` pairs.
///
/// # Safety
/// `xy` must point to `2 * n` readable doubles; `out` as above.
#[no_mangle]
pub unsafe extern "C" fn icam_instance_tsp(xy: *const f64, n: usize, out: *mut *mut IcamInstance) -> IcamStatus {
    guard(|| {
        if xy.is_null() {
            return Err(null("xy"));
        }
        let flat = std::slice::from_raw_parts(xy, 2 * n);
        let coords = flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
        let inst = Instance::tsp("ffi", coords)?;
        inst.validate()?;
        put(out, IcamInstance(inst))
    })
}

/// CVRP instance from `n` nodes (node 0 is the depot, `demands[0] == 0`).
///
/// # Safety
/// `xy` must point to `2 * n` readable doubles and `demands` to `n` readable
/// values; `out` as above.
#[no_mangle]
pub unsafe extern "C" fn icam_instance_cvrp(
    xy: *const f64,
    demands: *const u32,
    n: usize,
    capacity: u32,
    out: *mut *mut IcamInstance,
) -> IcamStatus {
    guard(|| {
        if xy.is_null() || demands.is_null() {
            return Err(null("xy or demands"));
        }
        let flat = std::slice::from_raw_parts(xy, 2 * n);
        let coords = flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
        let d = std::slice::from_raw_parts(demands, n).to_vec();
        let inst = Instance::cvrp("ffi", coords, d, capacity)?;
        inst.validate()?;
        put(out, IcamInstance(inst))
    })
}

/// Reads a CVRPLIB `.vrp` file and normalizes it to the unit square; lengths
/// are still reported in the file's units.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` as above.
#[no_mangle]
pub unsafe extern "C" fn icam_instance_from_cvrplib(path: *const c_char, out: *mut *mut IcamInstance) -> IcamStatus {
    guard(|| {
        let path = path_arg(path)?;
        let text = std::fs::read_to_string(&path).map_err(|e| Fail(IcamStatus::Io, format!("{}: {e}", path.display())))?;
        let inst = scale_cvrplib(&parse_cvrplib(&text)?)?;
        put(out, IcamInstance(inst))
    })
}

/// Number of nodes (including the CVRP depot), or 0 for NULL.
///
/// # Safety
/// `inst` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn icam_instance_len(inst: *const IcamInstance) -> usize {
    inst.as_ref().map_or(0, |i| i.0.len())
}

/// # Safety
/// `inst` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn icam_instance_free(inst: *mut IcamInstance) {
    if !inst.is_null() {
        drop(Box::from_raw(inst));
    }
}

/// Freshly initialized model with one of the `ICAM_PRESET_*` architectures.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn icam_model_new(problem_code: i32, preset: i32, seed: u64, out: *mut *mut IcamModel) -> IcamStatus {
    guard(|| {
        let p = problem(problem_code)?;
        let cfg = match preset {
            ICAM_PRESET_PAPER => ModelConfig::paper(p),
            ICAM_PRESET_DESK => ModelConfig::desk(p),
            ICAM_PRESET_TINY => ModelConfig::tiny(p),
            other => return Err(invalid(format!("unknown preset code {other}"))),
        };
        put(out, IcamModel(Model::new(cfg, seed)?))
    })
}

/// Loads a checkpoint; the architecture is read from the parameter shapes.
/// `clip` is the compatibility clip the model was trained with (50 by default).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` as above.
#[no_mangle]
pub unsafe extern "C" fn icam_model_load(path: *const c_char, clip: f64, out: *mut *mut IcamModel) -> IcamStatus {
    guard(|| {
        let params = checkpoint::load(&path_arg(path)?)?;
        let cfg = ModelConfig {
            clip,
            ..ModelConfig::infer(&params)?
        };
        put(out, IcamModel(Model::from_params(cfg, params)?))
    })
}

/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn icam_model_save(model: *const IcamModel, path: *const c_char) -> IcamStatus {
    guard(|| {
        let m = get(model, "model")?;
        checkpoint::save(&m.0.params, &path_arg(path)?, DType::F64)?;
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn icam_model_free(model: *mut IcamModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Best solution found with one of the `ICAM_MODE_*` modes. `seed` is used by
/// sampling only.
///
/// # Safety
/// `model` and `inst` must be live handles; `out` as above.
#[no_mangle]
pub unsafe extern "C" fn icam_solve(
    model: *const IcamModel,
    inst: *const IcamInstance,
    mode_code: i32,
    seed: u64,
    out: *mut *mut IcamSolution,
) -> IcamStatus {
    guard(|| {
        let m = get(model, "model")?;
        let i = get(inst, "instance")?;
        let sol = solve(&m.0, &i.0, mode(mode_code)?, Some(seed))?;
        put(out, IcamSolution(sol))
    })
}

/// Solution length in the instance's original units; NaN for NULL.
///
/// # Safety
/// `sol` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn icam_solution_length(sol: *const IcamSolution) -> f64 {
    sol.as_ref().map_or(f64::NAN, |s| s.0.length)
}

/// Number of entries in the visit order (CVRP orders include depot visits).
///
/// # Safety
/// `sol` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn icam_solution_order_len(sol: *const IcamSolution) -> usize {
    sol.as_ref().map_or(0, |s| s.0.order.len())
}

/// Copies the visit order into `buf`, which must hold
/// [`icam_solution_order_len`] entries.
///
/// # Safety
/// `sol` must be a live handle and `buf` must point to `cap` writable values.
#[no_mangle]
pub unsafe extern "C" fn icam_solution_order(sol: *const IcamSolution, buf: *mut usize, cap: usize) -> IcamStatus {
    guard(|| {
        let s = get(sol, "solution")?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        if cap < s.0.order.len() {
            return Err(invalid(format!("buffer holds {cap}, order has {}", s.0.order.len())));
        }
        ptr::copy_nonoverlapping(s.0.order.as_ptr(), buf, s.0.order.len());
        Ok(())
    })
}

/// # Safety
/// `sol` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn icam_solution_free(sol: *mut IcamSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}

/// Length of `order` on `inst` in original units; rejects infeasible orders.
///
/// # Safety
/// `inst` must be a live handle, `order` must point to `len` values and
/// `out` to one writable double.
#[no_mangle]
pub unsafe extern "C" fn icam_tour_length(inst: *const IcamInstance, order: *const usize, len: usize, out: *mut f64) -> IcamStatus {
    guard(|| {
        let i = get(inst, "instance")?;
        if order.is_null() || out.is_null() {
            return Err(null("order or out"));
        }
        let o = std::slice::from_raw_parts(order, len);
        *out = tour_length(&i.0, o)? * i.0.unit_scale;
        Ok(())
    })
}

/// Optimal objective in original units (TSP up to 15 nodes, CVRP up to 8
/// customers); `ICAM_SIZE` beyond that.
///
/// # Safety
/// `inst` must be a live handle and `out` point to one writable double.
#[no_mangle]
pub unsafe extern "C" fn icam_exact(inst: *const IcamInstance, out: *mut f64) -> IcamStatus {
    guard(|| {
        let i = get(inst, "instance")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let len = match i.0.problem {
            Problem::Tsp => exact_tsp(&i.0)?.length,
            Problem::Cvrp => exact_cvrp(&i.0)?.length,
        };
        *out = len * i.0.unit_scale;
        Ok(())
    })
}

/// Nearest neighbour + 2-opt tour length in original units (TSP only).
///
/// # Safety
/// `inst` must be a live handle and `out` point to one writable double.
#[no_mangle]
pub unsafe extern "C" fn icam_nn2opt(inst: *const IcamInstance, out: *mut f64) -> IcamStatus {
    guard(|| {
        let i = get(inst, "instance")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = nn_two_opt(&i.0)?.length * i.0.unit_scale;
        Ok(())
    })
}

/// `(obj − reference) / reference · 100`.
///
/// # Safety
/// `out` must point to one writable double.
#[no_mangle]
pub unsafe extern "C" fn icam_gap(obj: f64, reference: f64, out: *mut f64) -> IcamStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = gap(obj, reference)?;
        Ok(())
    })
}
