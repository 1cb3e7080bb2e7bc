//! C ABI over `absorb_core`.
//!
//! Every fallible function returns an [`AbsorbStatus`]. On failure a
//! description is kept per thread and can be read with
//! [`absorb_last_error`]. Specs live behind the opaque [`AbsorbSpec`]
//! handle, created from JSON and released with [`absorb_spec_free`].
//!
//! States cross the boundary as arrays of `d` token ids (`uint32_t`);
//! distributions as arrays of `S^d` doubles in mixed-radix order with
//! dimension 0 least significant.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;

use absorb_core::bounds::{compute_gamma, forward_kl_curve};
use absorb_core::divergence;
use absorb_core::forward::marginal;
use absorb_core::reverse::{
    exact_law, make_schedule, tau_leaping_run, uniformization_run, InitDist, LambdaMode, SamplerKind, Schedule,
    StepRule, UniformizationConfig, UniformizationPlan,
};
use absorb_core::score::{score_analytic, ClipMode, ClippedScore, ExactScore, ScoreFn, TransitionPair};
use absorb_core::state_space::{DenseDist, ModelSpec, SpecConfig, StateVec, TokenId};
use absorb_core::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AbsorbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Config = 4,
    CapExceeded = 5,
    ZeroMass = 6,
    SupportViolation = 7,
    BufferTooSmall = 8,
    Numerical = 9,
    Panic = 10,
}

/// Opaque model spec.
pub struct AbsorbSpec {
    inner: Arc<ModelSpec>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Failure(AbsorbStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::CapExceeded { .. } => AbsorbStatus::CapExceeded,
            Error::ZeroMass { .. } => AbsorbStatus::ZeroMass,
            Error::SupportViolation { .. } => AbsorbStatus::SupportViolation,
            Error::Config(_) | Error::Io(_) => AbsorbStatus::Config,
            Error::IntensityTooSmall { .. } | Error::IntegratorUnstable(_) => AbsorbStatus::Numerical,
            _ => AbsorbStatus::InvalidArgument,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: AbsorbStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

/// Runs `f`, converting errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> AbsorbStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AbsorbStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            AbsorbStatus::Panic
        }
    }
}

unsafe fn spec_ref<'a>(spec: *const AbsorbSpec) -> Result<&'a AbsorbSpec, Failure> {
    spec.as_ref()
        .ok_or_else(|| fail(AbsorbStatus::NullPointer, "spec handle is null"))
}

unsafe fn out_ref<'a, T>(ptr: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    ptr.as_mut()
        .ok_or_else(|| fail(AbsorbStatus::NullPointer, format!("{name} is null")))
}

unsafe fn slice<'a, T>(ptr: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if ptr.is_null() {
        return Err(fail(AbsorbStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn slice_mut<'a, T>(ptr: *mut T, len: usize, name: &str) -> Result<&'a mut [T], Failure> {
    if ptr.is_null() {
        return Err(fail(AbsorbStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

fn copy_dist(dist: &DenseDist, out: &mut [f64]) -> Result<(), Failure> {
    if out.len() < dist.len() {
        return Err(fail(
            AbsorbStatus::BufferTooSmall,
            format!("buffer holds {} values, need {}", out.len(), dist.len()),
        ));
    }
    out[..dist.len()].copy_from_slice(dist.mass());
    Ok(())
}

fn state_from(spec: &ModelSpec, tokens: &[u32]) -> Result<StateVec, Failure> {
    let state = StateVec::new(tokens.iter().map(|&t| TokenId(t)).collect());
    spec.validate_state(&state)?;
    Ok(state)
}

fn write_state(state: &StateVec, out: &mut [u32]) -> Result<(), Failure> {
    if out.len() < state.len() {
        return Err(fail(
            AbsorbStatus::BufferTooSmall,
            format!("state buffer holds {} tokens, need {}", out.len(), state.len()),
        ));
    }
    for (o, t) in out.iter_mut().zip(state.tokens()) {
        *o = t.0;
    }
    Ok(())
}

/// Last error message on this thread, or NULL. Valid until the next call
/// into this library from the same thread.
#[no_mangle]
pub extern "C" fn absorb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn absorb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a spec from JSON such as `{"S":3,"d":2,"q0":"uniform"}`.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn absorb_spec_from_json(json: *const c_char, out: *mut *mut AbsorbSpec) -> AbsorbStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = std::ptr::null_mut();
        if json.is_null() {
            return Err(fail(AbsorbStatus::NullPointer, "json is null"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| fail(AbsorbStatus::InvalidUtf8, e.to_string()))?;
        let cfg: SpecConfig = serde_json::from_str(text).map_err(|e| fail(AbsorbStatus::Config, e.to_string()))?;
        let spec = ModelSpec::from_config(&cfg)?;
        *out = Box::into_raw(Box::new(AbsorbSpec { inner: Arc::new(spec) }));
        Ok(())
    })
}

/// Releases a spec. NULL is ignored.
///
/// # Safety
/// `spec` must come from [`absorb_spec_from_json`] and not be used again.
#[no_mangle]
pub unsafe extern "C" fn absorb_spec_free(spec: *mut AbsorbSpec) {
    if !spec.is_null() {
        drop(Box::from_raw(spec));
    }
}

/// Vocabulary size, dimension count, mask token and number of states.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn absorb_spec_info(
    spec: *const AbsorbSpec,
    vocab: *mut usize,
    dims: *mut usize,
    mask: *mut u32,
    num_states: *mut usize,
) -> AbsorbStatus {
    guard(|| {
        let s = &spec_ref(spec)?.inner;
        *out_ref(vocab, "vocab")? = s.vocab();
        *out_ref(dims, "dims")? = s.dims();
        *out_ref(mask, "mask")? = s.mask().0;
        *out_ref(num_states, "num_states")? = s.num_states();
        Ok(())
    })
}

/// Writes the forward marginal `q_t` into `out` (length `S^d`).
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn absorb_marginal(spec: *const AbsorbSpec, t: f64, out: *mut f64, len: usize) -> AbsorbStatus {
    guard(|| {
        let s = &spec_ref(spec)?.inner;
        copy_dist(&marginal(s, t)?, slice_mut(out, len, "out")?)
    })
}

/// Exact score `q_t(y)/q_t(x)` for an unmasking pair; `x` and `y` hold `d`
/// tokens each.
///
/// # Safety
/// `x` and `y` must point to `dims` tokens, `out` to one double.
#[no_mangle]
pub unsafe extern "C" fn absorb_score(
    spec: *const AbsorbSpec,
    t: f64,
    x: *const u32,
    y: *const u32,
    dims: usize,
    out: *mut f64,
) -> AbsorbStatus {
    guard(|| {
        let s = &spec_ref(spec)?.inner;
        if dims != s.dims() {
            return Err(Error::DimensionMismatch {
                expected: s.dims(),
                got: dims,
            }
            .into());
        }
        let x = state_from(s, slice(x, dims, "x")?)?;
        let y = state_from(s, slice(y, dims, "y")?)?;
        let pair = TransitionPair::new(s, x, y)?;
        *out_ref(out, "out")? = score_analytic(s, t, &pair)?;
        Ok(())
    })
}

fn dist_from(values: &[f64]) -> Result<DenseDist, Failure> {
    Ok(DenseDist::new(values.to_vec())?)
}

/// `KL(p ‖ q)`.
///
/// # Safety
/// `p` and `q` must point to `len` doubles, `out` to one double.
#[no_mangle]
pub unsafe extern "C" fn absorb_kl(p: *const f64, q: *const f64, len: usize, out: *mut f64) -> AbsorbStatus {
    guard(|| {
        let p = dist_from(slice(p, len, "p")?)?;
        let q = dist_from(slice(q, len, "q")?)?;
        *out_ref(out, "out")? = divergence::kl(&p, &q)?;
        Ok(())
    })
}

/// Total variation distance.
///
/// # Safety
/// `p` and `q` must point to `len` doubles, `out` to one double.
#[no_mangle]
pub unsafe extern "C" fn absorb_tv(p: *const f64, q: *const f64, len: usize, out: *mut f64) -> AbsorbStatus {
    guard(|| {
        let p = dist_from(slice(p, len, "p")?)?;
        let q = dist_from(slice(q, len, "q")?)?;
        *out_ref(out, "out")? = divergence::tv(&p, &q)?;
        Ok(())
    })
}

/// `KL(q_T ‖ p_init)` with `ε_T = e^{-T}`.
///
/// # Safety
/// `out` must point to one double.
#[no_mangle]
pub unsafe extern "C" fn absorb_forward_kl(spec: *const AbsorbSpec, horizon: f64, out: *mut f64) -> AbsorbStatus {
    guard(|| {
        let s = &spec_ref(spec)?.inner;
        *out_ref(out, "out")? = forward_kl_curve(s, &[horizon])?[0];
        Ok(())
    })
}

/// The data constant γ (may be +infinity for all-mask data).
///
/// # Safety
/// `out` must point to one double.
#[no_mangle]
pub unsafe extern "C" fn absorb_gamma(spec: *const AbsorbSpec, out: *mut f64) -> AbsorbStatus {
    guard(|| {
        let s = &spec_ref(spec)?.inner;
        *out_ref(out, "out")? = compute_gamma(s);
        Ok(())
    })
}

/// Geometric schedule when `delta > 0`, constant schedule otherwise, each
/// with step constant `c`.
fn schedule(horizon: f64, delta: f64, c: f64) -> Result<Schedule, Failure> {
    let rule = if delta > 0.0 {
        StepRule::Geometric(c)
    } else {
        StepRule::Constant(c)
    };
    Ok(make_schedule(horizon, delta, rule)?)
}

/// Exact output law of τ-leaping with the exact score.
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn absorb_tau_leaping_law(
    spec: *const AbsorbSpec,
    horizon: f64,
    delta: f64,
    c: f64,
    out: *mut f64,
    len: usize,
) -> AbsorbStatus {
    guard(|| {
        let s = &spec_ref(spec)?.inner;
        let sched = schedule(horizon, delta, c)?;
        let law = exact_law(
            &ExactScore::analytic(s.clone()),
            &sched,
            &InitDist::for_horizon(horizon)?,
            SamplerKind::TauLeaping,
        )?;
        copy_dist(&law, slice_mut(out, len, "out")?)
    })
}

/// One τ-leaping trajectory with the exact score; writes `d` tokens.
///
/// # Safety
/// `out` must point to `dims` writable tokens.
#[no_mangle]
pub unsafe extern "C" fn absorb_tau_leaping_sample(
    spec: *const AbsorbSpec,
    horizon: f64,
    delta: f64,
    c: f64,
    seed: u64,
    out: *mut u32,
    dims: usize,
) -> AbsorbStatus {
    guard(|| {
        let s = &spec_ref(spec)?.inner;
        let sched = schedule(horizon, delta, c)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = tau_leaping_run(
            &ExactScore::analytic(s.clone()),
            &sched,
            &InitDist::for_horizon(horizon)?,
            &mut rng,
        )?;
        write_state(&x, slice_mut(out, dims, "out")?)
    })
}

fn clipped(spec: &Arc<ModelSpec>, delta: f64) -> Result<ClippedScore, Failure> {
    let mode = if delta > 0.0 {
        ClipMode::EarlyStop
    } else {
        ClipMode::NoEarlyStop {
            gamma: compute_gamma(spec),
        }
    };
    let exact: Arc<dyn ScoreFn> = Arc::new(ExactScore::analytic(spec.clone()));
    Ok(ClippedScore::new(exact, 1.0, mode)?)
}

/// One uniformization trajectory with the clipped exact score and the
/// analytic intensity scaled by `kappa_lambda`. Writes `d` tokens and the
/// number of clock events.
///
/// # Safety
/// `out` must point to `dims` writable tokens and `events` to one integer.
#[no_mangle]
pub unsafe extern "C" fn absorb_uniformization_sample(
    spec: *const AbsorbSpec,
    horizon: f64,
    delta: f64,
    c: f64,
    kappa_lambda: f64,
    seed: u64,
    out: *mut u32,
    dims: usize,
    events: *mut u64,
) -> AbsorbStatus {
    guard(|| {
        let s = &spec_ref(spec)?.inner;
        let sched = schedule(horizon, delta, c)?;
        let score = clipped(s, delta)?;
        let ucfg = UniformizationConfig::new(LambdaMode::Analytic, kappa_lambda)?;
        let plan = UniformizationPlan::new(&score, &sched, &ucfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (x, n) = uniformization_run(&score, &sched, &plan, &InitDist::for_horizon(horizon)?, &mut rng)?;
        write_state(&x, slice_mut(out, dims, "out")?)?;
        *out_ref(events, "events")? = n;
        Ok(())
    })
}

/// Exact output law of uniformization with the clipped exact score.
///
/// # Safety
/// `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn absorb_uniformization_law(
    spec: *const AbsorbSpec,
    horizon: f64,
    delta: f64,
    c: f64,
    out: *mut f64,
    len: usize,
) -> AbsorbStatus {
    guard(|| {
        let s = &spec_ref(spec)?.inner;
        let sched = schedule(horizon, delta, c)?;
        let law = exact_law(
            &clipped(s, delta)?,
            &sched,
            &InitDist::for_horizon(horizon)?,
            SamplerKind::Uniformization,
        )?;
        copy_dist(&law, slice_mut(out, len, "out")?)
    })
}
