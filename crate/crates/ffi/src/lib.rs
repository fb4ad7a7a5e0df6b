//! C ABI over the grid environment, trained policies and the metrics.
//!
//! Every fallible call returns a status code; on failure the message is
//! available from `crfn_last_error` on the same thread. Handles are opaque
//! and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;

use crfn::env::{Action, Cell, EpisodeSpec, GridEnv, GridMap, Heading, Observation, Pose, SoundSignature};
use crfn::metrics::{EpisodeRecord, MetricsReport};
use crfn::policy::{act_greedy, AgentState, Policy};
use crfn::Error;

pub const CRFN_OK: i32 = 0;
pub const CRFN_ERR_NULL: i32 = 1;
pub const CRFN_ERR_INVALID: i32 = 2;
pub const CRFN_ERR_IO: i32 = 3;
pub const CRFN_ERR_NUMERIC: i32 = 4;
pub const CRFN_ERR_STATE: i32 = 5;
pub const CRFN_ERR_BUFFER: i32 = 6;
pub const CRFN_ERR_PANIC: i32 = 7;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn code_of(e: &Error) -> i32 {
    match e {
        Error::Io { .. } => CRFN_ERR_IO,
        Error::Numeric(_) => CRFN_ERR_NUMERIC,
        Error::Contract(_) => CRFN_ERR_STATE,
        _ => CRFN_ERR_INVALID,
    }
}

struct Fail(i32, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(code_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(CRFN_ERR_NULL, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            CRFN_OK
        }
        Ok(Err(Fail(code, msg))) => {
            set_error(&msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            CRFN_ERR_PANIC
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(CRFN_ERR_INVALID, format!("{what} is not UTF-8")))
}

unsafe fn out_buf<'a>(p: *mut f64, len: usize, need: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    if len < need {
        return Err(Fail(CRFN_ERR_BUFFER, format!("{what} holds {len} values, need {need}")));
    }
    Ok(std::slice::from_raw_parts_mut(p, need))
}

/// Message of the last failed call on this thread; empty after success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn crfn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Episode parameters. Headings: 0 = N, 1 = E, 2 = S, 3 = W.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CrfnEpisodeDesc {
    pub start_x: i32,
    pub start_y: i32,
    pub start_heading: u32,
    pub goal_x: i32,
    pub goal_y: i32,
    pub max_steps: u32,
    pub noise_std: f64,
    pub seed: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CrfnStepResult {
    pub reward: f64,
    pub geodesic_distance: f64,
    pub done: bool,
    pub success: bool,
    pub collided: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CrfnEpisodeRecord {
    pub success: bool,
    pub geodesic_len: f64,
    pub path_len: f64,
    pub action_count: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CrfnMetrics {
    pub sr: f64,
    pub spl: f64,
    pub sna: f64,
}

/// Environment with one active episode.
pub struct CrfnEnv {
    env: GridEnv,
    obs: Observation,
}

/// Trained policy with its recurrent state.
pub struct CrfnPolicy {
    policy: Policy,
    state: AgentState,
}

/// Creates an environment from an ASCII map ('#' blocked; '.', 'S', 'G'
/// free) and a sound spectrum of `bins` values, and starts the episode.
///
/// # Safety
/// `map_ascii` must be a NUL-terminated string, `spectrum` must point to
/// `bins` readable doubles, `desc` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn crfn_env_new(
    map_ascii: *const c_char,
    desc: *const CrfnEpisodeDesc,
    spectrum: *const f64,
    bins: usize,
    out: *mut *mut CrfnEnv,
) -> i32 {
    guard(|| {
        let text = str_arg(map_ascii, "map_ascii")?;
        let desc = desc.as_ref().ok_or_else(|| null("desc"))?;
        if spectrum.is_null() {
            return Err(null("spectrum"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let raw = std::slice::from_raw_parts(spectrum, bins).to_vec();
        if desc.start_heading > 3 {
            return Err(Fail(CRFN_ERR_INVALID, format!("heading {} out of range", desc.start_heading)));
        }
        let spec = EpisodeSpec {
            map: Arc::new(GridMap::parse("ffi", text)?.map),
            start: Pose::new(desc.start_x, desc.start_y, Heading::from_index(desc.start_heading as usize)),
            goal: Cell::new(desc.goal_x, desc.goal_y),
            signature: SoundSignature::new("ffi", raw)?,
            max_steps: desc.max_steps,
            noise_std: desc.noise_std,
            seed: desc.seed,
        };
        let mut env = GridEnv::default();
        let obs = env.reset(spec)?;
        *out = Box::into_raw(Box::new(CrfnEnv { env, obs }));
        Ok(())
    })
}

/// # Safety
/// `env` must be null or a handle from `crfn_env_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn crfn_env_free(env: *mut CrfnEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Lengths of the visual vector and of one audio channel.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn crfn_env_sizes(env: *const CrfnEnv, visual_len: *mut usize, audio_bins: *mut usize) -> i32 {
    guard(|| {
        let env = env.as_ref().ok_or_else(|| null("env"))?;
        if visual_len.is_null() || audio_bins.is_null() {
            return Err(null("output"));
        }
        *visual_len = env.obs.visual.len();
        *audio_bins = env.obs.audio.left.len();
        Ok(())
    })
}

/// Copies the current observation: ray depths into `visual`, then the
/// left channel followed by the right channel into `audio`.
///
/// # Safety
/// `visual` and `audio` must hold `visual_cap` and `audio_cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn crfn_env_observe(
    env: *const CrfnEnv,
    visual: *mut f64,
    visual_cap: usize,
    audio: *mut f64,
    audio_cap: usize,
) -> i32 {
    guard(|| {
        let env = env.as_ref().ok_or_else(|| null("env"))?;
        let v = out_buf(visual, visual_cap, env.obs.visual.len(), "visual")?;
        v.copy_from_slice(&env.obs.visual);
        let flat = env.obs.audio.flatten();
        let a = out_buf(audio, audio_cap, flat.len(), "audio")?;
        a.copy_from_slice(&flat);
        Ok(())
    })
}

/// Applies an action: 0 Forward, 1 TurnLeft, 2 TurnRight, 3 Stop.
///
/// # Safety
/// `env` must be a live handle and `result` null or valid.
#[no_mangle]
pub unsafe extern "C" fn crfn_env_step(env: *mut CrfnEnv, action: u32, result: *mut CrfnStepResult) -> i32 {
    guard(|| {
        let env = env.as_mut().ok_or_else(|| null("env"))?;
        let action = Action::from_index(action as usize)
            .ok_or_else(|| Fail(CRFN_ERR_INVALID, format!("action {action} out of range")))?;
        let res = env.env.step(action)?;
        if let Some(r) = result.as_mut() {
            *r = CrfnStepResult {
                reward: res.reward,
                geodesic_distance: res.info.geodesic_distance,
                done: res.done,
                success: res.info.success,
                collided: res.info.collided,
            };
        }
        env.obs = res.obs;
        Ok(())
    })
}

/// Episode accounting so far.
///
/// # Safety
/// `env` and `record` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn crfn_env_record(env: *const CrfnEnv, record: *mut CrfnEpisodeRecord) -> i32 {
    guard(|| {
        let env = env.as_ref().ok_or_else(|| null("env"))?;
        let out = record.as_mut().ok_or_else(|| null("record"))?;
        let r = env.env.record("ffi")?;
        *out = CrfnEpisodeRecord {
            success: r.success,
            geodesic_len: r.geodesic_len,
            path_len: r.path_len,
            action_count: r.action_count,
        };
        Ok(())
    })
}

/// Loads a policy checkpoint written by `crfn train`.
///
/// # Safety
/// `path` must be NUL-terminated and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn crfn_policy_load(path: *const c_char, out: *mut *mut CrfnPolicy) -> i32 {
    guard(|| {
        let path = str_arg(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let policy = Policy::load(Path::new(path))?;
        let state = policy.initial_state();
        *out = Box::into_raw(Box::new(CrfnPolicy { policy, state }));
        Ok(())
    })
}

/// # Safety
/// `policy` must be null or a handle from `crfn_policy_load` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn crfn_policy_free(policy: *mut CrfnPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Clears the recurrent state; call at the start of every episode.
///
/// # Safety
/// `policy` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn crfn_policy_reset(policy: *mut CrfnPolicy) -> i32 {
    guard(|| {
        let p = policy.as_mut().ok_or_else(|| null("policy"))?;
        p.state = p.policy.initial_state();
        Ok(())
    })
}

/// Greedy action for the environment's current observation. Advances the
/// policy's recurrent state but not the environment.
///
/// # Safety
/// Handles must be live and `action` valid.
#[no_mangle]
pub unsafe extern "C" fn crfn_policy_act(policy: *mut CrfnPolicy, env: *const CrfnEnv, action: *mut u32) -> i32 {
    guard(|| {
        let p = policy.as_mut().ok_or_else(|| null("policy"))?;
        let env = env.as_ref().ok_or_else(|| null("env"))?;
        if action.is_null() {
            return Err(null("action"));
        }
        let out = p.policy.step(&env.obs, &p.state)?;
        let (a, _) = act_greedy(&out.logits)?;
        p.state.hidden = out.next_hidden;
        p.state.step_index += 1;
        *action = a.index() as u32;
        Ok(())
    })
}

/// Current fusion weights. Fails with `CRFN_ERR_INVALID` for variants
/// without them.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn crfn_policy_betas(policy: *const CrfnPolicy, beta_v: *mut f64, beta_a: *mut f64) -> i32 {
    guard(|| {
        let p = policy.as_ref().ok_or_else(|| null("policy"))?;
        if beta_v.is_null() || beta_a.is_null() {
            return Err(null("output"));
        }
        let (bv, ba) = p
            .policy
            .betas()
            .ok_or_else(|| Fail(CRFN_ERR_INVALID, format!("variant {} has no fusion weights", p.policy.variant())))?;
        *beta_v = bv;
        *beta_a = ba;
        Ok(())
    })
}

/// SR, SPL and SNA as fractions over `n` records.
///
/// # Safety
/// `records` must point to `n` records and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn crfn_metrics(records: *const CrfnEpisodeRecord, n: usize, out: *mut CrfnMetrics) -> i32 {
    guard(|| {
        if records.is_null() {
            return Err(null("records"));
        }
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let recs: Vec<EpisodeRecord> = std::slice::from_raw_parts(records, n)
            .iter()
            .map(|r| EpisodeRecord {
                success: r.success,
                geodesic_len: r.geodesic_len,
                path_len: r.path_len,
                action_count: r.action_count,
                scenario_id: String::new(),
            })
            .collect();
        let m = MetricsReport::from_records(&recs)?;
        *out = CrfnMetrics {
            sr: m.sr,
            spl: m.spl,
            sna: m.sna,
        };
        Ok(())
    })
}

/// Geodesic (BFS) distance between two cells, or -1 when unreachable.
///
/// # Safety
/// `map_ascii` must be NUL-terminated and `distance` valid.
#[no_mangle]
pub unsafe extern "C" fn crfn_geodesic(
    map_ascii: *const c_char,
    from_x: i32,
    from_y: i32,
    to_x: i32,
    to_y: i32,
    distance: *mut i64,
) -> i32 {
    guard(|| {
        let text = str_arg(map_ascii, "map_ascii")?;
        let out = distance.as_mut().ok_or_else(|| null("distance"))?;
        let map = GridMap::parse("ffi", text)?.map;
        let g = crfn::env::geodesic(&map, Cell::new(from_x, from_y), Cell::new(to_x, to_y))?;
        *out = g.distance.map_or(-1, i64::from);
        Ok(())
    })
}
