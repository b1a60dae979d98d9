//! C ABI over the pairwise estimator, the outlier screen and the scenario
//! runner.
//!
//! Every fallible function returns a [`SwlStatus`]; on failure a message is
//! kept per thread and can be read with [`swl_last_error_message`]. Handles
//! are opaque, created by a `*_new` function and released by the matching
//! `*_free`. Vectors are passed as pointers to three (or seven) doubles.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use nalgebra::Vector3;
use swarmloc::estimation::{LearningRate, ThetaEstimate};
use swarmloc::harness::{self, ScenarioConfig};
use swarmloc::outlier_detection::{JudgeQueue, Verdict};
use swarmloc::regression::{build_sample, OdomSegment, ParamMask, RecordOutcome, RecordPolicy};
use swarmloc::sensing::MeasurementTriplet;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// The estimator has no recorded data yet.
    NotReady = 3,
    /// The yaw components of the estimate are both zero.
    Degenerate = 4,
    Config = 5,
    Run = 6,
    Io = 7,
    Panic = 8,
}

/// What [`swl_pair_push`] did with a measurement.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwlPushOutcome {
    /// First measurement; only stored as the start of the next interval.
    Started = 0,
    /// Added to the record while below capacity.
    Appended = 1,
    /// Replaced a recorded sample.
    Replaced = 2,
    /// Used for one update but not recorded.
    Discarded = 3,
    /// The regressor vanished (no relative motion); nothing was updated.
    Rejected = 4,
}

/// Learning-rate rule selector for [`swl_pair_new`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SwlLearningRate {
    Nominal = 0,
    Squared = 1,
}

/// Pairwise relative-pose estimator fed with raw ranges and odometry.
pub struct SwlPairEstimator {
    estimate: ThetaEstimate,
    prev: Option<(f64, Vector3<f64>, Vector3<f64>)>,
}

/// Outlier screen for one ranging pair.
pub struct SwlJudgeQueue {
    queue: JudgeQueue,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: SwlStatus, msg: impl Into<String>) -> SwlStatus {
    set_error(msg);
    status
}

/// Runs `f`, converting a panic into [`SwlStatus::Panic`].
fn guard(f: impl FnOnce() -> SwlStatus) -> SwlStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(SwlStatus::Panic, "internal panic"),
    }
}

unsafe fn read_vec3(p: *const f64) -> Option<Vector3<f64>> {
    if p.is_null() {
        return None;
    }
    let s = std::slice::from_raw_parts(p, 3);
    Some(Vector3::new(s[0], s[1], s[2]))
}

unsafe fn read_str<'a>(p: *const c_char) -> Result<&'a str, SwlStatus> {
    if p.is_null() {
        return Err(fail(SwlStatus::NullPointer, "null string"));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(SwlStatus::InvalidArgument, "string is not UTF-8"))
}

/// Message describing the last failure on this thread, or null. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn swl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn swl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates an estimator keeping at most `hist_cap` recorded samples.
/// `planar` non-zero excludes the vertical offset from the excitation test.
///
/// # Safety
/// `out` must be valid for writing one pointer.
#[no_mangle]
pub unsafe extern "C" fn swl_pair_new(
    hist_cap: u32,
    planar: c_int,
    rate: SwlLearningRate,
    out: *mut *mut SwlPairEstimator,
) -> SwlStatus {
    guard(|| {
        if out.is_null() {
            return fail(SwlStatus::NullPointer, "out is null");
        }
        if hist_cap == 0 {
            return fail(SwlStatus::InvalidArgument, "hist_cap must be positive");
        }
        let mask = if planar != 0 { ParamMask::Planar } else { ParamMask::Spatial };
        let rate = match rate {
            SwlLearningRate::Nominal => LearningRate::Nominal,
            SwlLearningRate::Squared => LearningRate::Squared,
        };
        let est = ThetaEstimate::new(RecordPolicy { hist_cap: hist_cap as usize }, mask, rate);
        *out = Box::into_raw(Box::new(SwlPairEstimator { estimate: est, prev: None }));
        SwlStatus::Ok
    })
}

/// Releases an estimator. Null is ignored.
///
/// # Safety
/// `h` must come from [`swl_pair_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn swl_pair_free(h: *mut SwlPairEstimator) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Feeds one range `d` together with the cumulative odometry of the owning
/// robot (`own_pos`) and of the neighbor (`nbr_pos`), each in its own
/// odometry frame. Consecutive pushes form one regressor sample.
/// `outcome` may be null.
///
/// # Safety
/// `h` must be a live handle; `own_pos` and `nbr_pos` must point to three
/// doubles; `outcome`, when non-null, must be writable.
#[no_mangle]
pub unsafe extern "C" fn swl_pair_push(
    h: *mut SwlPairEstimator,
    d: f64,
    own_pos: *const f64,
    nbr_pos: *const f64,
    tick: u64,
    outcome: *mut SwlPushOutcome,
) -> SwlStatus {
    guard(|| {
        let Some(h) = h.as_mut() else { return fail(SwlStatus::NullPointer, "handle is null") };
        let (Some(z_i), Some(z_j)) = (read_vec3(own_pos), read_vec3(nbr_pos)) else {
            return fail(SwlStatus::NullPointer, "position is null");
        };
        if !(d.is_finite() && d >= 0.0 && z_i.iter().chain(z_j.iter()).all(|x| x.is_finite())) {
            return fail(SwlStatus::InvalidArgument, "inputs must be finite and the range non-negative");
        }
        let result = match h.prev.replace((d, z_i, z_j)) {
            None => SwlPushOutcome::Started,
            Some((d0, p_i, p_j)) => {
                match build_sample(d0, d, &OdomSegment::between(p_i, z_i), &OdomSegment::between(p_j, z_j), tick) {
                    Err(_) => SwlPushOutcome::Rejected,
                    Ok(sample) => match h.estimate.ingest(sample).0 {
                        RecordOutcome::Appended => SwlPushOutcome::Appended,
                        RecordOutcome::Replaced(_) => SwlPushOutcome::Replaced,
                        RecordOutcome::Discarded => SwlPushOutcome::Discarded,
                    },
                }
            }
        };
        if let Some(o) = outcome.as_mut() {
            *o = result;
        }
        SwlStatus::Ok
    })
}

/// Copies the seven-component parameter estimate into `out`.
///
/// # Safety
/// `h` must be a live handle and `out` must be writable for seven doubles.
#[no_mangle]
pub unsafe extern "C" fn swl_pair_theta(h: *const SwlPairEstimator, out: *mut f64) -> SwlStatus {
    guard(|| {
        let Some(h) = h.as_ref() else { return fail(SwlStatus::NullPointer, "handle is null") };
        if out.is_null() {
            return fail(SwlStatus::NullPointer, "out is null");
        }
        std::slice::from_raw_parts_mut(out, 7).copy_from_slice(h.estimate.theta_hat.as_slice());
        SwlStatus::Ok
    })
}

/// Initial position of the neighbor relative to the owner (`p0`, three
/// doubles, owner's odometry frame) and the initial relative yaw in radians.
///
/// # Safety
/// `h` must be a live handle; `p0` must be writable for three doubles and
/// `yaw` for one.
#[no_mangle]
pub unsafe extern "C" fn swl_pair_pose(h: *const SwlPairEstimator, p0: *mut f64, yaw: *mut f64) -> SwlStatus {
    guard(|| {
        let Some(h) = h.as_ref() else { return fail(SwlStatus::NullPointer, "handle is null") };
        if p0.is_null() || yaw.is_null() {
            return fail(SwlStatus::NullPointer, "output is null");
        }
        if h.estimate.data.is_empty() {
            return fail(SwlStatus::NotReady, "no recorded samples");
        }
        match h.estimate.reconstruct_pose() {
            Ok(pose) => {
                std::slice::from_raw_parts_mut(p0, 3).copy_from_slice(pose.p0_hat.as_slice());
                *yaw = pose.theta0().0;
                SwlStatus::Ok
            }
            Err(e) => fail(SwlStatus::Degenerate, e.to_string()),
        }
    })
}

/// Ratio of the smallest to the largest eigenvalue of the recorded data
/// matrix, in `[0, 1]`.
///
/// # Safety
/// `h` must be a live handle and `ratio` writable.
#[no_mangle]
pub unsafe extern "C" fn swl_pair_excitation(h: *const SwlPairEstimator, ratio: *mut f64) -> SwlStatus {
    guard(|| {
        let Some(h) = h.as_ref() else { return fail(SwlStatus::NullPointer, "handle is null") };
        if ratio.is_null() {
            return fail(SwlStatus::NullPointer, "ratio is null");
        }
        match h.estimate.data.excitation_ratio() {
            Ok(r) => {
                *ratio = r;
                SwlStatus::Ok
            }
            Err(e) => fail(SwlStatus::NotReady, e.to_string()),
        }
    })
}

/// Creates an outlier screen holding up to `capacity` accepted measurements;
/// a candidate is an outlier when more than `threshold` of them vote so.
///
/// # Safety
/// `out` must be valid for writing one pointer.
#[no_mangle]
pub unsafe extern "C" fn swl_judge_new(capacity: u32, threshold: f64, out: *mut *mut SwlJudgeQueue) -> SwlStatus {
    guard(|| {
        if out.is_null() {
            return fail(SwlStatus::NullPointer, "out is null");
        }
        if capacity == 0 || !(threshold > 0.0 && threshold < 1.0) {
            return fail(SwlStatus::InvalidArgument, "capacity must be positive and threshold in (0, 1)");
        }
        *out = Box::into_raw(Box::new(SwlJudgeQueue { queue: JudgeQueue::new(capacity as usize, threshold) }));
        SwlStatus::Ok
    })
}

/// Releases a screen. Null is ignored.
///
/// # Safety
/// `h` must come from [`swl_judge_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn swl_judge_free(h: *mut SwlJudgeQueue) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Screens one measurement; inliers are enqueued. `votes` receives the
/// outlier votes cast by the `size` queued measurements that judged it.
/// `is_outlier`, `votes` and `size` may each be null.
///
/// # Safety
/// `h` must be a live handle; `z_i` and `z_j` must point to three doubles;
/// non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn swl_judge_screen(
    h: *mut SwlJudgeQueue,
    d: f64,
    z_i: *const f64,
    z_j: *const f64,
    tick: u64,
    is_outlier: *mut c_int,
    votes: *mut u32,
    size: *mut u32,
) -> SwlStatus {
    guard(|| {
        let Some(h) = h.as_mut() else { return fail(SwlStatus::NullPointer, "handle is null") };
        let (Some(z_i), Some(z_j)) = (read_vec3(z_i), read_vec3(z_j)) else {
            return fail(SwlStatus::NullPointer, "position is null");
        };
        if !(d.is_finite() && z_i.iter().chain(z_j.iter()).all(|x| x.is_finite())) {
            return fail(SwlStatus::InvalidArgument, "inputs must be finite");
        }
        let s = h.queue.screen(MeasurementTriplet { d, z_i, z_j, tick });
        if let Some(o) = is_outlier.as_mut() {
            *o = c_int::from(s.verdict == Verdict::Outlier);
        }
        if let Some(v) = votes.as_mut() {
            *v = s.votes as u32;
        }
        if let Some(n) = size.as_mut() {
            *n = s.size as u32;
        }
        SwlStatus::Ok
    })
}

/// Loads a TOML scenario, runs it and writes its logs to `out_dir`. A
/// non-zero `override_seed` replaces the configured seed with `seed`.
/// `passed`, when non-null, receives whether the acceptance thresholds held.
///
/// # Safety
/// `config_path` and `out_dir` must be NUL-terminated strings; `passed`,
/// when non-null, must be writable.
#[no_mangle]
pub unsafe extern "C" fn swl_run_scenario(
    config_path: *const c_char,
    out_dir: *const c_char,
    override_seed: c_int,
    seed: u64,
    passed: *mut c_int,
) -> SwlStatus {
    guard(|| {
        let config_path = match read_str(config_path) {
            Ok(s) => s,
            Err(s) => return s,
        };
        let out_dir = match read_str(out_dir) {
            Ok(s) => s,
            Err(s) => return s,
        };
        let mut cfg = match ScenarioConfig::load(Path::new(config_path)) {
            Ok(c) => c,
            Err(e) => return fail(status_of(&e), e.to_string()),
        };
        if override_seed != 0 {
            cfg.seed = seed;
        }
        let out = match harness::run(&cfg, cfg.seed) {
            Ok(o) => o,
            Err(e) => return fail(status_of(&e), e.to_string()),
        };
        if let Err(e) = harness::write_run(Path::new(out_dir), &cfg, &out) {
            return fail(status_of(&e), e.to_string());
        }
        if let Some(p) = passed.as_mut() {
            *p = c_int::from(out.passed());
        }
        SwlStatus::Ok
    })
}

fn status_of(e: &harness::HarnessError) -> SwlStatus {
    use harness::HarnessError as E;
    match e {
        E::Config(_) | E::Parse(_) | E::Topology(_) => SwlStatus::Config,
        E::Io(_) | E::Csv(_) | E::Json(_) | E::MissingLogs(_) => SwlStatus::Io,
        E::Control(_) | E::NonFinite { .. } => SwlStatus::Run,
    }
}
