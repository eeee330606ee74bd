//! The online offloading loop.
//!
//! Until both windows hold `N` observations every task runs on both targets
//! (warm-up). Afterwards each task is predicted on both targets, executed on
//! the one predicted faster, and only that target's window is updated.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use log::warn;

use crate::error::{invalid, Error, Result};
use crate::window::{Observation, SlidingWindow, MIN_FIT_LEN};
use crate::workload::{fmt_f64, TargetProfile, Task, TaskStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Target {
    Local,
    Cloud,
}

impl Target {
    pub fn other(self) -> Self {
        match self {
            Target::Local => Target::Cloud,
            Target::Cloud => Target::Local,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Target::Local => "local",
            Target::Cloud => "cloud",
        }
    }

    /// Faster of two measured times; ties go local.
    pub fn faster(t_local: f64, t_cloud: f64) -> Self {
        if t_cloud < t_local {
            Target::Cloud
        } else {
            Target::Local
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Target {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "local" => Ok(Target::Local),
            "cloud" => Ok(Target::Cloud),
            _ => Err(invalid(format!("unknown target '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub target: Target,
    pub p_local: f64,
    pub p_cloud: f64,
}

impl Decision {
    pub fn predicted(&self, target: Target) -> f64 {
        match target {
            Target::Local => self.p_local,
            Target::Cloud => self.p_cloud,
        }
    }
}

/// Offload only when the cloud is predicted strictly faster.
pub fn decide(p_local: f64, p_cloud: f64) -> Result<Decision> {
    if p_local.is_nan() || p_cloud.is_nan() {
        return Err(Error::InvalidPrediction(format!(
            "p_local = {p_local}, p_cloud = {p_cloud}"
        )));
    }
    let target = if p_cloud < p_local {
        Target::Cloud
    } else {
        Target::Local
    };
    Ok(Decision {
        target,
        p_local,
        p_cloud,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Warmup,
    Steady,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Warmup => "warmup",
            Phase::Steady => "steady",
        }
    }
}

/// Recorded times of both targets, available when replaying a stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplayTimes {
    pub local: f64,
    pub cloud: f64,
}

impl ReplayTimes {
    pub fn get(&self, target: Target) -> f64 {
        match target {
            Target::Local => self.local,
            Target::Cloud => self.cloud,
        }
    }
}

/// One row of an engine trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskRecord {
    pub task_id: u64,
    pub d: f64,
    pub phase: Phase,
    /// Absent during warm-up.
    pub decision: Option<Decision>,
    /// Target that actually ran in the steady phase. Differs from the
    /// decision only when the chosen executor failed.
    pub executed: Option<Target>,
    pub measured_local: Option<f64>,
    pub measured_cloud: Option<f64>,
    pub replay: Option<ReplayTimes>,
    pub oracle_target: Option<Target>,
}

impl TaskRecord {
    pub fn measured(&self, target: Target) -> Option<f64> {
        match target {
            Target::Local => self.measured_local,
            Target::Cloud => self.measured_cloud,
        }
    }

    /// Measured time, or the recorded time of the target that did not run
    /// when replaying.
    pub fn actual(&self, target: Target) -> Option<f64> {
        self.measured(target)
            .or_else(|| self.replay.map(|r| r.get(target)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub window_capacity: usize,
    pub clamp_negative_predictions: bool,
    /// Issue the two warm-up executions on separate threads (live mode).
    pub concurrent_warmup: bool,
}

impl EngineConfig {
    pub fn new(window_capacity: usize) -> Self {
        Self {
            window_capacity,
            clamp_negative_predictions: true,
            concurrent_warmup: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_capacity < MIN_FIT_LEN {
            return Err(invalid(format!(
                "window capacity must be >= {MIN_FIT_LEN}, got {}",
                self.window_capacity
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskInfo {
    pub task_id: u64,
    pub d: f64,
    pub replay: Option<ReplayTimes>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub time: f64,
    pub degenerate: bool,
}

pub trait Predictor {
    fn predict(
        &mut self,
        target: Target,
        window: &SlidingWindow,
        task: &TaskInfo,
    ) -> Result<Prediction>;
}

/// Refits an ordinary least-squares line to the window on every call.
#[derive(Debug, Clone, Copy, Default)]
pub struct LeastSquares;

impl Predictor for LeastSquares {
    fn predict(
        &mut self,
        _target: Target,
        window: &SlidingWindow,
        task: &TaskInfo,
    ) -> Result<Prediction> {
        let model = window.fit()?;
        Ok(Prediction {
            time: model.predict(task.d),
            degenerate: model.degenerate,
        })
    }
}

/// Predicts the recorded time exactly. Replay only; an upper bound for
/// decision accuracy.
#[derive(Debug, Clone, Copy, Default)]
pub struct PerfectInformation;

impl Predictor for PerfectInformation {
    fn predict(
        &mut self,
        target: Target,
        _window: &SlidingWindow,
        task: &TaskInfo,
    ) -> Result<Prediction> {
        let times = task
            .replay
            .ok_or_else(|| invalid("perfect-information predictor needs replay times"))?;
        Ok(Prediction {
            time: times.get(target),
            degenerate: false,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct ExecError(pub String);

/// Runs one task on one target and reports its execution time in seconds.
pub trait Executor: Send {
    fn execute(&mut self, task_id: u64, d: f64) -> Result<f64, ExecError>;
}

impl<F> Executor for F
where
    F: FnMut(u64, f64) -> Result<f64, ExecError> + Send,
{
    fn execute(&mut self, task_id: u64, d: f64) -> Result<f64, ExecError> {
        self(task_id, d)
    }
}

/// In-process executor that sleeps for a profile-drawn time and reports the
/// wall-clock duration it observed.
pub struct SimulatedExecutor {
    profile: TargetProfile,
    rng: rand_chacha::ChaCha8Rng,
}

impl SimulatedExecutor {
    pub fn new(profile: TargetProfile, seed: u64) -> Result<Self> {
        use rand::SeedableRng;
        profile.validate()?;
        Ok(Self {
            profile,
            rng: rand_chacha::ChaCha8Rng::seed_from_u64(seed),
        })
    }
}

impl Executor for SimulatedExecutor {
    fn execute(&mut self, task_id: u64, d: f64) -> Result<f64, ExecError> {
        let t = self.profile.sample(task_id, d, &mut self.rng);
        let start = Instant::now();
        std::thread::sleep(std::time::Duration::from_secs_f64(t));
        Ok(start.elapsed().as_secs_f64())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EngineEvent {
    ExecutorFailed {
        task_id: u64,
        target: Target,
        error: String,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EngineStats {
    pub warmup_tasks: usize,
    pub steady_tasks: usize,
    pub degenerate_fits_local: usize,
    pub degenerate_fits_cloud: usize,
}

/// What the engine wants done with the next task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Plan {
    /// Run on both targets and record both times.
    Warmup,
    Execute(Decision),
}

pub struct Engine<P = LeastSquares> {
    config: EngineConfig,
    local: SlidingWindow,
    cloud: SlidingWindow,
    predictor: P,
    events: Vec<EngineEvent>,
    stats: EngineStats,
}

impl Engine<LeastSquares> {
    pub fn new(config: EngineConfig) -> Result<Self> {
        Self::with_predictor(config, LeastSquares)
    }
}

impl<P: Predictor> Engine<P> {
    pub fn with_predictor(config: EngineConfig, predictor: P) -> Result<Self> {
        config.validate()?;
        let n = config.window_capacity;
        Ok(Self {
            local: SlidingWindow::new(n)?,
            cloud: SlidingWindow::new(n)?,
            config,
            predictor,
            events: Vec::new(),
            stats: EngineStats::default(),
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn window(&self, target: Target) -> &SlidingWindow {
        match target {
            Target::Local => &self.local,
            Target::Cloud => &self.cloud,
        }
    }

    pub fn events(&self) -> &[EngineEvent] {
        &self.events
    }

    pub fn stats(&self) -> EngineStats {
        self.stats
    }

    pub fn is_warmed_up(&self) -> bool {
        self.local.is_full() && self.cloud.is_full()
    }

    /// Fits both predictors and decides, or asks for warm-up while either
    /// window is short.
    pub fn plan(&mut self, task: &TaskInfo) -> Result<Plan> {
        if !self.is_warmed_up() {
            return Ok(Plan::Warmup);
        }
        let pl = self.predictor.predict(Target::Local, &self.local, task)?;
        let pc = self.predictor.predict(Target::Cloud, &self.cloud, task)?;
        if pl.degenerate {
            self.stats.degenerate_fits_local += 1;
        }
        if pc.degenerate {
            self.stats.degenerate_fits_cloud += 1;
        }
        let (mut p_local, mut p_cloud) = (pl.time, pc.time);
        if self.config.clamp_negative_predictions {
            p_local = p_local.max(0.0);
            p_cloud = p_cloud.max(0.0);
        }
        decide(p_local, p_cloud).map(Plan::Execute)
    }

    /// Appends a measured execution to `target`'s window.
    pub fn observe(&mut self, target: Target, d: f64, t: f64) -> Result<()> {
        let obs = Observation::new(d, t)?;
        match target {
            Target::Local => self.local.push(obs),
            Target::Cloud => self.cloud.push(obs),
        };
        Ok(())
    }

    /// Processes one replayed task: "executing" a target reads its recorded time.
    pub fn step_replay(&mut self, task: &Task) -> Result<TaskRecord> {
        let replay = ReplayTimes {
            local: task.t_local,
            cloud: task.t_cloud,
        };
        let info = TaskInfo {
            task_id: task.task_id,
            d: task.d,
            replay: Some(replay),
        };
        let oracle = Some(Target::faster(task.t_local, task.t_cloud));
        match self.plan(&info)? {
            Plan::Warmup => {
                self.observe(Target::Local, task.d, task.t_local)?;
                self.observe(Target::Cloud, task.d, task.t_cloud)?;
                self.stats.warmup_tasks += 1;
                Ok(TaskRecord {
                    task_id: task.task_id,
                    d: task.d,
                    phase: Phase::Warmup,
                    decision: None,
                    executed: None,
                    measured_local: Some(task.t_local),
                    measured_cloud: Some(task.t_cloud),
                    replay: Some(replay),
                    oracle_target: oracle,
                })
            }
            Plan::Execute(decision) => {
                let target = decision.target;
                let t = replay.get(target);
                self.observe(target, task.d, t)?;
                self.stats.steady_tasks += 1;
                let mut rec = TaskRecord {
                    task_id: task.task_id,
                    d: task.d,
                    phase: Phase::Steady,
                    decision: Some(decision),
                    executed: Some(target),
                    measured_local: None,
                    measured_cloud: None,
                    replay: Some(replay),
                    oracle_target: oracle,
                };
                set_measured(&mut rec, target, t);
                Ok(rec)
            }
        }
    }

    /// Processes one task against live executors.
    ///
    /// A failed execution is logged as an [`EngineEvent`] and contributes
    /// nothing to that target's window. In the steady phase the task is then
    /// retried on the other target.
    pub fn step(
        &mut self,
        task_id: u64,
        d: f64,
        local: &mut dyn Executor,
        cloud: &mut dyn Executor,
    ) -> Result<TaskRecord> {
        let info = TaskInfo {
            task_id,
            d,
            replay: None,
        };
        let mut rec = TaskRecord {
            task_id,
            d,
            phase: Phase::Warmup,
            decision: None,
            executed: None,
            measured_local: None,
            measured_cloud: None,
            replay: None,
            oracle_target: None,
        };
        match self.plan(&info)? {
            Plan::Warmup => {
                let (rl, rc) = if self.config.concurrent_warmup {
                    std::thread::scope(|s| {
                        let h = s.spawn(|| cloud.execute(task_id, d));
                        let rl = local.execute(task_id, d);
                        let rc = h
                            .join()
                            .unwrap_or_else(|_| Err(ExecError("cloud executor panicked".into())));
                        (rl, rc)
                    })
                } else {
                    (local.execute(task_id, d), cloud.execute(task_id, d))
                };
                if let (Err(el), Err(ec)) = (&rl, &rc) {
                    return Err(Error::ExecutorsExhausted {
                        task_id,
                        local: el.0.clone(),
                        cloud: ec.0.clone(),
                    });
                }
                for (target, res) in [(Target::Local, rl), (Target::Cloud, rc)] {
                    match res {
                        Ok(t) => {
                            self.observe(target, d, t)?;
                            set_measured(&mut rec, target, t);
                        }
                        Err(e) => self.fail(task_id, target, e),
                    }
                }
                if let (Some(l), Some(c)) = (rec.measured_local, rec.measured_cloud) {
                    rec.oracle_target = Some(Target::faster(l, c));
                }
                self.stats.warmup_tasks += 1;
            }
            Plan::Execute(decision) => {
                rec.phase = Phase::Steady;
                rec.decision = Some(decision);
                let first = decision.target;
                let (target, t) = match run_on(first, task_id, d, local, cloud) {
                    Ok(t) => (first, t),
                    Err(e1) => {
                        let msg1 = e1.0.clone();
                        self.fail(task_id, first, e1);
                        let second = first.other();
                        match run_on(second, task_id, d, local, cloud) {
                            Ok(t) => (second, t),
                            Err(e2) => {
                                let msg2 = e2.0.clone();
                                self.fail(task_id, second, e2);
                                let (local, cloud) = match first {
                                    Target::Local => (msg1, msg2),
                                    Target::Cloud => (msg2, msg1),
                                };
                                return Err(Error::ExecutorsExhausted {
                                    task_id,
                                    local,
                                    cloud,
                                });
                            }
                        }
                    }
                };
                self.observe(target, d, t)?;
                set_measured(&mut rec, target, t);
                rec.executed = Some(target);
                self.stats.steady_tasks += 1;
            }
        }
        Ok(rec)
    }

    fn fail(&mut self, task_id: u64, target: Target, error: ExecError) {
        warn!("task {task_id}: {target} executor failed: {error}");
        self.events.push(EngineEvent::ExecutorFailed {
            task_id,
            target,
            error: error.0,
        });
    }
}

fn run_on(
    target: Target,
    task_id: u64,
    d: f64,
    local: &mut dyn Executor,
    cloud: &mut dyn Executor,
) -> Result<f64, ExecError> {
    match target {
        Target::Local => local.execute(task_id, d),
        Target::Cloud => cloud.execute(task_id, d),
    }
}

fn set_measured(rec: &mut TaskRecord, target: Target, t: f64) {
    match target {
        Target::Local => rec.measured_local = Some(t),
        Target::Cloud => rec.measured_cloud = Some(t),
    }
}

pub fn run_replay(stream: &TaskStream, config: &EngineConfig) -> Result<Vec<TaskRecord>> {
    run_replay_with(stream, config, LeastSquares)
}

pub fn run_replay_with<P: Predictor>(
    stream: &TaskStream,
    config: &EngineConfig,
    predictor: P,
) -> Result<Vec<TaskRecord>> {
    let mut engine = Engine::with_predictor(config.clone(), predictor)?;
    stream.tasks.iter().map(|t| engine.step_replay(t)).collect()
}

/// Runs `(task_id, d)` pairs against live executors, stopping at the first
/// task that neither target could execute.
pub fn run_live<I>(
    tasks: I,
    config: &EngineConfig,
    local: &mut dyn Executor,
    cloud: &mut dyn Executor,
) -> Result<(Vec<TaskRecord>, Vec<EngineEvent>)>
where
    I: IntoIterator<Item = (u64, f64)>,
{
    let mut engine = Engine::new(config.clone())?;
    let trace = tasks
        .into_iter()
        .map(|(id, d)| engine.step(id, d, local, cloud))
        .collect::<Result<Vec<_>>>()?;
    Ok((trace, engine.events))
}

pub const TRACE_CSV_HEADER: [&str; 9] = [
    "task_id",
    "d",
    "phase",
    "p_local",
    "p_cloud",
    "target",
    "t_local",
    "t_cloud",
    "oracle_target",
];

/// Writes a trace as CSV. Time columns carry every known actual time, so
/// replay traces fill both and live traces only the executed target's.
/// `target` is the target that ran.
pub fn write_trace_csv<W: Write>(trace: &[TaskRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_CSV_HEADER)?;
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    for r in trace {
        w.write_record([
            r.task_id.to_string(),
            fmt_f64(r.d),
            r.phase.as_str().to_string(),
            opt(r.decision.map(|d| d.p_local)),
            opt(r.decision.map(|d| d.p_cloud)),
            r.executed.map(|t| t.to_string()).unwrap_or_default(),
            opt(r.actual(Target::Local)),
            opt(r.actual(Target::Cloud)),
            r.oracle_target.map(|t| t.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
