//! C ABI over `linerdyn`.
//!
//! Every function returns an [`LdStatus`]; results come back through out
//! pointers. Objects are opaque handles created by `ld_config_load`,
//! `ld_policy_solve` and `ld_ensemble_simulate` and released with the
//! matching `ld_*_free`. After a non-zero
//! status, `ld_last_error_message` describes the failure on the calling
//! thread.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use linerdyn::cli_io::pipeline::configured_environment;
use linerdyn::cli_io::RunConfig;
use linerdyn::dynamic_game::{backward_induction, ActorType, MarketEnvironment, PolicySolution};
use linerdyn::simulation::{simulate_ensemble, Ensemble, Scenario, ScenarioKind};
use linerdyn::state_space::{IndustryState, Level, StateSpace, N_LEVELS};
use linerdyn::static_market::{equilibrium_price, Regime, RouteSnapshot, StaticParams};
use linerdyn::Error;

/// Status codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Domain = 3,
    Precondition = 4,
    Solver = 5,
    Config = 6,
    Consistency = 7,
    Estimation = 8,
    Io = 9,
    BufferTooSmall = 10,
    Panic = 99,
}

fn status_of(err: &Error) -> LdStatus {
    match err {
        Error::Domain(_) => LdStatus::Domain,
        Error::Precondition(_) => LdStatus::Precondition,
        Error::Solver(_) => LdStatus::Solver,
        Error::Config(_) => LdStatus::Config,
        Error::Consistency(_) => LdStatus::Consistency,
        Error::Estimation(_) => LdStatus::Estimation,
        Error::Load { .. } | Error::Io(_) | Error::Csv(_) => LdStatus::Io,
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn fail(status: LdStatus, msg: impl Into<String>) -> LdStatus {
    set_error(msg);
    status
}

/// Runs `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), LdStatus>) -> LdStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LdStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(LdStatus::Panic, "internal panic"),
    }
}

fn lift<T>(r: linerdyn::Result<T>) -> Result<T, LdStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

fn null(what: &str) -> LdStatus {
    fail(LdStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, LdStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(LdStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Copies the last error message of this thread into `buf` (NUL-terminated)
/// and stores the full length, without the NUL, in `*len`. With no error the
/// message is empty. `buf` may be null to query the length only.
#[no_mangle]
pub unsafe extern "C" fn ld_last_error_message(buf: *mut c_char, cap: usize, len: *mut usize) -> LdStatus {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_ref().map(|c| c.as_bytes()).unwrap_or(&[]);
        if !len.is_null() {
            *len = bytes.len();
        }
        if buf.is_null() {
            return LdStatus::Ok;
        }
        if cap < bytes.len() + 1 {
            return LdStatus::BufferTooSmall;
        }
        std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, bytes.len());
        *buf.add(bytes.len()) = 0;
        LdStatus::Ok
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ld_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Pricing regime of a route-year.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LdRegime {
    Collusive79 = 0,
    Collusive83 = 1,
    Competitive = 2,
}

/// Static route coefficients, USD/TEU where applicable.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct LdStaticParams {
    pub alpha1: f64,
    pub gamma0: f64,
    pub gamma1: f64,
    pub cartel_effect_pre80: f64,
    pub cartel_effect_80_83: f64,
}

/// Equilibrium route price for `n` firms with the given tonnages (TEU).
#[no_mangle]
pub unsafe extern "C" fn ld_equilibrium_price(
    params: *const LdStaticParams,
    demand_state: f64,
    tonnages: *const f64,
    n: usize,
    regime: LdRegime,
    out_price: *mut f64,
) -> LdStatus {
    guard(|| {
        if params.is_null() {
            return Err(null("params"));
        }
        if out_price.is_null() {
            return Err(null("out_price"));
        }
        if tonnages.is_null() && n > 0 {
            return Err(null("tonnages"));
        }
        let p = &*params;
        let params = StaticParams {
            alpha1: p.alpha1,
            gamma0: p.gamma0,
            gamma1: p.gamma1,
            cartel_effect_pre80: p.cartel_effect_pre80,
            cartel_effect_80_83: p.cartel_effect_80_83,
        };
        let tons = if n == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(tonnages, n).to_vec()
        };
        let regime = match regime {
            LdRegime::Collusive79 => Regime::Collusive79,
            LdRegime::Collusive83 => Regime::Collusive83,
            LdRegime::Competitive => Regime::Competitive,
        };
        let levels = vec![Level::new(1).expect("level 1 exists"); tons.len()];
        let snapshot = lift(RouteSnapshot::with_levels(demand_state, tons, levels, 0, regime))?;
        *out_price = lift(equilibrium_price(&snapshot, &params))?;
        Ok(())
    })
}

/// A loaded run configuration.
pub struct LdConfig {
    cfg: RunConfig,
}

/// Loads a TOML run configuration.
#[no_mangle]
pub unsafe extern "C" fn ld_config_load(path: *const c_char, out: *mut *mut LdConfig) -> LdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        let path = str_arg(path, "path")?;
        let cfg = lift(RunConfig::load(Path::new(path)))?;
        *out = Box::into_raw(Box::new(LdConfig { cfg }));
        Ok(())
    })
}

/// Parses a configuration from TOML text; relative paths resolve against the
/// working directory.
#[no_mangle]
pub unsafe extern "C" fn ld_config_from_toml(text: *const c_char, out: *mut *mut LdConfig) -> LdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        let text = str_arg(text, "text")?;
        let cfg = lift(RunConfig::from_toml(text))?;
        *out = Box::into_raw(Box::new(LdConfig { cfg }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ld_config_free(cfg: *mut LdConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// A solved game together with the environment it was solved for.
pub struct LdPolicy {
    env: MarketEnvironment,
    policy: PolicySolution,
    initial: IndustryState,
    horizon: usize,
}

unsafe fn market_env(
    cfg: &LdConfig,
    market: *const c_char,
    scenario: *const c_char,
) -> Result<(MarketEnvironment, IndustryState), LdStatus> {
    let name = if market.is_null() { None } else { Some(str_arg(market, "market")?) };
    let section = lift(cfg.cfg.select_market(name))?;
    let env = lift(configured_environment(&cfg.cfg, section))?;
    let env = if scenario.is_null() {
        env
    } else {
        let kind: ScenarioKind = lift(str_arg(scenario, "scenario")?.parse())?;
        Scenario::new(kind).apply(&env)
    };
    Ok((env, section.initial()))
}

/// Builds profits for `market` (null: the only configured market) under
/// `scenario` (null: baseline; else `baseline`, `no-cartel`, `omega1` or
/// `omega2`) and solves the game with the configured parameters.
#[no_mangle]
pub unsafe extern "C" fn ld_policy_solve(
    cfg: *const LdConfig,
    market: *const c_char,
    scenario: *const c_char,
    out: *mut *mut LdPolicy,
) -> LdStatus {
    guard(|| {
        if cfg.is_null() {
            return Err(null("cfg"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        let cfg = &*cfg;
        let (env, initial) = market_env(cfg, market, scenario)?;
        let profits = lift(env.profit_table(&StateSpace::new(cfg.cfg.solver.caps)))?;
        let policy = lift(backward_induction(&profits, &cfg.cfg.dynamic.params(), &cfg.cfg.solver.options()))?;
        *out = Box::into_raw(Box::new(LdPolicy {
            env,
            policy,
            initial,
            horizon: cfg.cfg.horizon(),
        }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ld_policy_free(policy: *mut LdPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Number of periods and of states of a solved game.
#[no_mangle]
pub unsafe extern "C" fn ld_policy_dims(policy: *const LdPolicy, periods: *mut usize, states: *mut usize) -> LdStatus {
    guard(|| {
        if policy.is_null() {
            return Err(null("policy"));
        }
        let p = &(*policy).policy;
        if !periods.is_null() {
            *periods = p.periods();
        }
        if !states.is_null() {
            *states = p.space().len();
        }
        Ok(())
    })
}

unsafe fn locate<'a>(
    policy: *const LdPolicy,
    t: usize,
    state: *const u32,
    actor: u32,
) -> Result<(&'a LdPolicy, usize, ActorType), LdStatus> {
    if policy.is_null() {
        return Err(null("policy"));
    }
    if state.is_null() {
        return Err(null("state"));
    }
    let p: &'a LdPolicy = &*policy;
    if t >= p.policy.periods() {
        return Err(fail(LdStatus::InvalidArgument, format!("period {t} out of range")));
    }
    let counts: [u32; N_LEVELS] = std::slice::from_raw_parts(state, N_LEVELS).try_into().expect("four counts");
    let s = p
        .policy
        .space()
        .index(&IndustryState(counts))
        .ok_or_else(|| fail(LdStatus::InvalidArgument, format!("state {counts:?} outside the state space")))?;
    let actor = match actor as usize {
        a if a < N_LEVELS => ActorType::Incumbent(Level::from_index(a)),
        a if a == N_LEVELS => ActorType::Entrant,
        a => {
            return Err(fail(
                LdStatus::InvalidArgument,
                format!("actor {a} out of range (0-3 levels, 4 entrant)"),
            ))
        }
    };
    Ok((p, s, actor))
}

/// CCP row at period `t` (0-based) and `state` (four level counts).
/// `actor` is 0..3 for levels 1..4 and 4 for potential entrants. Incumbent
/// rows are (exit, keep, build); entrant rows are (quit, enter, 0).
#[no_mangle]
pub unsafe extern "C" fn ld_policy_ccp(policy: *const LdPolicy, t: usize, state: *const u32, actor: u32, out_row: *mut f64) -> LdStatus {
    guard(|| {
        if out_row.is_null() {
            return Err(null("out_row"));
        }
        let (p, s, actor) = locate(policy, t, state, actor)?;
        let row = p.policy.ccp_row(t, s, actor);
        std::ptr::copy_nonoverlapping(row.as_ptr(), out_row, 3);
        Ok(())
    })
}

/// Integrated value of `actor` at period `t` and `state`, in 100 bn USD.
#[no_mangle]
pub unsafe extern "C" fn ld_policy_value(
    policy: *const LdPolicy,
    t: usize,
    state: *const u32,
    actor: u32,
    out_value: *mut f64,
) -> LdStatus {
    guard(|| {
        if out_value.is_null() {
            return Err(null("out_value"));
        }
        let (p, s, actor) = locate(policy, t, state, actor)?;
        *out_value = p.policy.value(t, s, actor);
        Ok(())
    })
}

/// Simulated paths from the configured initial state.
pub struct LdEnsemble {
    ensemble: Ensemble,
}

/// Simulates `n` paths with seeds `seed, seed + 1, ...`.
#[no_mangle]
pub unsafe extern "C" fn ld_ensemble_simulate(policy: *const LdPolicy, n: usize, seed: u64, out: *mut *mut LdEnsemble) -> LdStatus {
    guard(|| {
        if policy.is_null() {
            return Err(null("policy"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        let p = &*policy;
        let ensemble = lift(simulate_ensemble(&p.policy, &p.env, p.initial, p.horizon, n, seed))?;
        *out = Box::into_raw(Box::new(LdEnsemble { ensemble }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ld_ensemble_free(ensemble: *mut LdEnsemble) {
    if !ensemble.is_null() {
        drop(Box::from_raw(ensemble));
    }
}

/// Number of simulated years.
#[no_mangle]
pub unsafe extern "C" fn ld_ensemble_years(ensemble: *const LdEnsemble, out_years: *mut usize) -> LdStatus {
    guard(|| {
        if ensemble.is_null() {
            return Err(null("ensemble"));
        }
        if out_years.is_null() {
            return Err(null("out_years"));
        }
        *out_years = (*ensemble).ensemble.years().len();
        Ok(())
    })
}

/// Mean firm counts per year and level, row-major `years x 4`, into `out`
/// of capacity `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn ld_ensemble_mean_counts(ensemble: *const LdEnsemble, out: *mut f64, cap: usize) -> LdStatus {
    guard(|| {
        if ensemble.is_null() {
            return Err(null("ensemble"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let means = (*ensemble).ensemble.mean_counts();
        if cap < means.len() * N_LEVELS {
            return Err(fail(
                LdStatus::BufferTooSmall,
                format!("need {} doubles, got {cap}", means.len() * N_LEVELS),
            ));
        }
        for (i, row) in means.iter().enumerate() {
            std::ptr::copy_nonoverlapping(row.as_ptr(), out.add(i * N_LEVELS), N_LEVELS);
        }
        Ok(())
    })
}
