//! C ABI over `predictive-offload`.
//!
//! Every function returns a [`PoStatus`]; results come back through out
//! pointers. Windows and engines are opaque heap handles that must be released
//! with their `*_free` function. After a non-OK status the message is
//! available from [`po_last_error`] on the same thread.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use predictive_offload::engine::{Engine, Plan, TaskInfo};
use predictive_offload::metrics;
use predictive_offload::transport::{
    self, ExecRequest, ExecResponse, FrameError, Message, FRAME_LEN,
};
use predictive_offload::workload::{self, Task};
use predictive_offload::{
    decide, Decision, EngineConfig, Error, LinearModel, Observation, Phase, SlidingWindow, Target,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InsufficientObservations = 3,
    InvalidPrediction = 4,
    UndefinedCorrelation = 5,
    NeedMoreBytes = 6,
    ProtocolError = 7,
    BufferTooSmall = 8,
    Panic = 9,
    Internal = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoTarget {
    Local = 0,
    Cloud = 1,
}

impl From<Target> for PoTarget {
    fn from(t: Target) -> Self {
        match t {
            Target::Local => PoTarget::Local,
            Target::Cloud => PoTarget::Cloud,
        }
    }
}

impl From<PoTarget> for Target {
    fn from(t: PoTarget) -> Self {
        match t {
            PoTarget::Local => Target::Local,
            PoTarget::Cloud => Target::Cloud,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoFrameKind {
    Request = 1,
    Response = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoLinearModel {
    pub slope: f64,
    pub intercept: f64,
    pub degenerate: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoDecision {
    pub target: PoTarget,
    pub p_local: f64,
    pub p_cloud: f64,
}

impl From<Decision> for PoDecision {
    fn from(d: Decision) -> Self {
        Self {
            target: d.target.into(),
            p_local: d.p_local,
            p_cloud: d.p_cloud,
        }
    }
}

/// Result of planning a task. When `warmup` is true the caller must run the
/// task on both targets and report both times; `decision` is then zeroed.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoPlan {
    pub warmup: bool,
    pub decision: PoDecision,
}

/// Outcome of one replayed task.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoStep {
    pub steady: bool,
    /// Meaningful only when `steady` is true.
    pub decision: PoDecision,
    pub oracle_target: PoTarget,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoFrame {
    pub kind: PoFrameKind,
    pub task_id: u64,
    /// Input size `d` for requests, elapsed seconds for responses.
    pub value: f64,
}

/// Opaque sliding window handle.
pub struct PoWindow(SlidingWindow);

/// Opaque engine handle.
pub struct PoEngine(Engine);

/// Encoded frame size in bytes.
pub const PO_FRAME_LEN: usize = 21;
const _: () = assert!(PO_FRAME_LEN == FRAME_LEN);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> PoStatus {
    match err {
        Error::InsufficientObservations { .. } => PoStatus::InsufficientObservations,
        Error::InvalidPrediction(_) => PoStatus::InvalidPrediction,
        Error::UndefinedCorrelation(_) => PoStatus::UndefinedCorrelation,
        Error::InvalidParameter(_) | Error::NoApplicableRecords(_) => PoStatus::InvalidArgument,
        _ => PoStatus::Internal,
    }
}

enum Fail {
    Status(PoStatus, String),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn null() -> Fail {
    Fail::Status(PoStatus::NullPointer, "null pointer argument".into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> PoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PoStatus::Ok,
        Ok(Err(Fail::Status(s, msg))) => {
            set_last_error(msg);
            s
        }
        Ok(Err(Fail::Core(e))) => {
            set_last_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_last_error("panic in predictive-offload".into());
            PoStatus::Panic
        }
    }
}

unsafe fn out<'a, T>(p: *mut T) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(null)
}

unsafe fn inp<'a, T>(p: *const T) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(null)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn po_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length excluding the NUL, or
/// 0 when there is none.
#[no_mangle]
pub unsafe extern "C" fn po_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

#[no_mangle]
pub unsafe extern "C" fn po_window_new(
    capacity: usize,
    out_window: *mut *mut PoWindow,
) -> PoStatus {
    guard(|| {
        let slot = out(out_window)?;
        let w = SlidingWindow::new(capacity)?;
        *slot = Box::into_raw(Box::new(PoWindow(w)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn po_window_free(window: *mut PoWindow) {
    if !window.is_null() {
        drop(Box::from_raw(window));
    }
}

#[no_mangle]
pub unsafe extern "C" fn po_window_push(window: *mut PoWindow, d: f64, t: f64) -> PoStatus {
    guard(|| {
        let w = out(window)?;
        w.0.push(Observation::new(d, t)?);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn po_window_len(window: *const PoWindow, out_len: *mut usize) -> PoStatus {
    guard(|| {
        *out(out_len)? = inp(window)?.0.len();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn po_window_fit(
    window: *const PoWindow,
    out_model: *mut PoLinearModel,
) -> PoStatus {
    guard(|| {
        let slot = out(out_model)?;
        let m = inp(window)?.0.fit()?;
        *slot = PoLinearModel {
            slope: m.slope,
            intercept: m.intercept,
            degenerate: m.degenerate,
        };
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn po_predict(
    model: *const PoLinearModel,
    d: f64,
    out_time: *mut f64,
) -> PoStatus {
    guard(|| {
        let m = inp(model)?;
        *out(out_time)? = LinearModel {
            slope: m.slope,
            intercept: m.intercept,
            degenerate: m.degenerate,
        }
        .predict(d);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn po_decide(
    p_local: f64,
    p_cloud: f64,
    out_decision: *mut PoDecision,
) -> PoStatus {
    guard(|| {
        let slot = out(out_decision)?;
        *slot = decide(p_local, p_cloud)?.into();
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn po_engine_new(
    window_capacity: usize,
    clamp_negative_predictions: bool,
    out_engine: *mut *mut PoEngine,
) -> PoStatus {
    guard(|| {
        let slot = out(out_engine)?;
        let mut config = EngineConfig::new(window_capacity);
        config.clamp_negative_predictions = clamp_negative_predictions;
        *slot = Box::into_raw(Box::new(PoEngine(Engine::new(config)?)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn po_engine_free(engine: *mut PoEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Plans a live task. The caller executes as instructed and reports measured
/// times with [`po_engine_observe`].
#[no_mangle]
pub unsafe extern "C" fn po_engine_plan(
    engine: *mut PoEngine,
    task_id: u64,
    d: f64,
    out_plan: *mut PoPlan,
) -> PoStatus {
    guard(|| {
        let e = out(engine)?;
        let slot = out(out_plan)?;
        let info = TaskInfo {
            task_id,
            d,
            replay: None,
        };
        *slot = match e.0.plan(&info)? {
            Plan::Warmup => PoPlan {
                warmup: true,
                decision: PoDecision {
                    target: PoTarget::Local,
                    p_local: 0.0,
                    p_cloud: 0.0,
                },
            },
            Plan::Execute(dec) => PoPlan {
                warmup: false,
                decision: dec.into(),
            },
        };
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn po_engine_observe(
    engine: *mut PoEngine,
    target: PoTarget,
    d: f64,
    t: f64,
) -> PoStatus {
    guard(|| {
        out(engine)?.0.observe(target.into(), d, t)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn po_engine_step_replay(
    engine: *mut PoEngine,
    task_id: u64,
    d: f64,
    t_local: f64,
    t_cloud: f64,
    out_step: *mut PoStep,
) -> PoStatus {
    guard(|| {
        let e = out(engine)?;
        let slot = out(out_step)?;
        let rec = e.0.step_replay(&Task {
            task_id,
            d,
            t_local,
            t_cloud,
        })?;
        let oracle = rec
            .oracle_target
            .unwrap_or(Target::faster(t_local, t_cloud));
        *slot = PoStep {
            steady: rec.phase == Phase::Steady,
            decision: rec.decision.map(PoDecision::from).unwrap_or(PoDecision {
                target: PoTarget::Local,
                p_local: 0.0,
                p_cloud: 0.0,
            }),
            oracle_target: oracle.into(),
        };
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn po_engine_window_len(
    engine: *const PoEngine,
    target: PoTarget,
    out_len: *mut usize,
) -> PoStatus {
    guard(|| {
        *out(out_len)? = inp(engine)?.0.window(target.into()).len();
        Ok(())
    })
}

/// Encodes `frame` into `buf`, which must hold at least [`PO_FRAME_LEN`] bytes.
#[no_mangle]
pub unsafe extern "C" fn po_encode_frame(
    frame: *const PoFrame,
    buf: *mut u8,
    len: usize,
) -> PoStatus {
    guard(|| {
        let f = inp(frame)?;
        if buf.is_null() {
            return Err(null());
        }
        if len < FRAME_LEN {
            return Err(Fail::Status(
                PoStatus::BufferTooSmall,
                format!("buffer of {len} bytes, need {FRAME_LEN}"),
            ));
        }
        let msg = match f.kind {
            PoFrameKind::Request => Message::Request(ExecRequest {
                task_id: f.task_id,
                d: f.value,
            }),
            PoFrameKind::Response => Message::Response(ExecResponse {
                task_id: f.task_id,
                elapsed: f.value,
            }),
        };
        let bytes = transport::encode_frame(&msg);
        ptr::copy_nonoverlapping(bytes.as_ptr(), buf, FRAME_LEN);
        Ok(())
    })
}

/// Decodes one frame from the front of `buf`. Returns
/// `PO_STATUS_NEED_MORE_BYTES` when the buffer holds only part of a frame.
#[no_mangle]
pub unsafe extern "C" fn po_decode_frame(
    buf: *const u8,
    len: usize,
    out_frame: *mut PoFrame,
    out_consumed: *mut usize,
) -> PoStatus {
    guard(|| {
        let slot = out(out_frame)?;
        let consumed = out(out_consumed)?;
        let bytes: &[u8] = if len == 0 {
            &[]
        } else if buf.is_null() {
            return Err(null());
        } else {
            std::slice::from_raw_parts(buf, len)
        };
        let (msg, n) = transport::decode_frame(bytes).map_err(|e| match e {
            FrameError::Incomplete { .. } => Fail::Status(PoStatus::NeedMoreBytes, e.to_string()),
            _ => Fail::Status(PoStatus::ProtocolError, e.to_string()),
        })?;
        *slot = match msg {
            Message::Request(r) => PoFrame {
                kind: PoFrameKind::Request,
                task_id: r.task_id,
                value: r.d,
            },
            Message::Response(r) => PoFrame {
                kind: PoFrameKind::Response,
                task_id: r.task_id,
                value: r.elapsed,
            },
        };
        *consumed = n;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn po_node_count(
    distance: f64,
    grid_resolution: f64,
    out_count: *mut u64,
) -> PoStatus {
    guard(|| {
        *out(out_count)? = workload::node_count(distance, grid_resolution)?;
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn po_raw_input_size(node_count: u64) -> f64 {
    workload::raw_input_size(node_count)
}

#[no_mangle]
pub unsafe extern "C" fn po_normalize_input_size(
    raw: f64,
    map_scale: f64,
    out_value: *mut f64,
) -> PoStatus {
    guard(|| {
        *out(out_value)? = workload::normalize_input_size(raw, map_scale)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn po_pearson(
    xs: *const f64,
    ys: *const f64,
    len: usize,
    out_r: *mut f64,
) -> PoStatus {
    guard(|| {
        let slot = out(out_r)?;
        if xs.is_null() || ys.is_null() {
            return Err(null());
        }
        let xs = std::slice::from_raw_parts(xs, len);
        let ys = std::slice::from_raw_parts(ys, len);
        *slot = metrics::pearson(xs, ys)?;
        Ok(())
    })
}
