//! Evaluation of replay traces: correlation between input size and time,
//! mean residuals, decision accuracy, and the sweep over window sizes.

use std::fmt::Write as _;
use std::io::Write;
use std::thread;

use log::{info, warn};

use crate::engine::{decide, Engine, EngineConfig, Phase, Target, TaskRecord};
use crate::error::{invalid, Error, Result};
use crate::window::{LinearModel, Observation};
use crate::workload::{fmt_f64, TaskStream};

/// Window sizes evaluated by default.
pub const DEFAULT_WINDOWS: [usize; 9] = [5, 10, 20, 30, 40, 50, 75, 100, 500];

/// Fraction of the stream used for fitting in the full-dataset row.
pub const TRAIN_FRACTION: f64 = 0.8;

/// Sample Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(invalid(format!(
            "length mismatch: {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::UndefinedCorrelation("fewer than two points"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RollingCorrelation {
    pub mean: f64,
    pub windows: usize,
    /// Windows skipped because either series had zero variance.
    pub skipped: usize,
}

/// Mean Pearson r over every contiguous window of length `n` (stride 1).
pub fn rolling_avg_correlation(xs: &[f64], ys: &[f64], n: usize) -> Result<RollingCorrelation> {
    if xs.len() != ys.len() {
        return Err(invalid(format!(
            "length mismatch: {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    if n < 2 {
        return Err(invalid(format!("correlation window must be >= 2, got {n}")));
    }
    if xs.len() < n {
        return Err(invalid(format!(
            "series of length {} shorter than window {n}",
            xs.len()
        )));
    }
    let (mut sum, mut used, mut skipped) = (0.0, 0usize, 0usize);
    for (wx, wy) in xs.windows(n).zip(ys.windows(n)) {
        match pearson(wx, wy) {
            Ok(r) => {
                sum += r;
                used += 1;
            }
            Err(Error::UndefinedCorrelation(_)) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if used == 0 {
        return Err(Error::UndefinedCorrelation(
            "every window has zero variance",
        ));
    }
    Ok(RollingCorrelation {
        mean: sum / used as f64,
        windows: used,
        skipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualReport {
    pub mean_t: f64,
    pub mean_p: f64,
    /// `mean_p - mean_t`; positive means over-prediction.
    pub residual: f64,
    /// `|residual| / mean_t`.
    pub error_rate: f64,
    pub count: usize,
}

impl ResidualReport {
    pub fn from_means(mean_t: f64, mean_p: f64, count: usize) -> Self {
        let residual = mean_p - mean_t;
        Self {
            mean_t,
            mean_p,
            residual,
            error_rate: residual.abs() / mean_t,
            count,
        }
    }
}

/// Compares mean predicted and mean actual time for `target` over the steady
/// records that carry both.
pub fn residual_report(trace: &[TaskRecord], target: Target) -> Result<ResidualReport> {
    let (mut st, mut sp, mut n) = (0.0, 0.0, 0usize);
    for r in trace.iter().filter(|r| r.phase == Phase::Steady) {
        if let (Some(dec), Some(t)) = (r.decision, r.actual(target)) {
            st += t;
            sp += dec.predicted(target);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::NoApplicableRecords(
            "no steady records with prediction and actual time",
        ));
    }
    Ok(ResidualReport::from_means(st / n as f64, sp / n as f64, n))
}

/// Fraction of steady records whose decision matches the faster target.
pub fn decision_accuracy(trace: &[TaskRecord]) -> Result<f64> {
    let (mut hits, mut n) = (0usize, 0usize);
    for r in trace.iter().filter(|r| r.phase == Phase::Steady) {
        if let (Some(dec), Some(oracle)) = (r.decision, r.oracle_target) {
            n += 1;
            if dec.target == oracle {
                hits += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::NoApplicableRecords(
            "no steady records with an oracle target",
        ));
    }
    Ok(hits as f64 / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowKind {
    /// Sliding-window replay with capacity `n`.
    Window,
    /// One fit on the leading 80% of the stream, evaluated on the rest.
    FullSplit,
}

impl RowKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RowKind::Window => "window",
            RowKind::FullSplit => "full",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub n: usize,
    pub kind: RowKind,
    /// `None` when every correlation window had zero variance.
    pub avg_corr_cloud: Option<f64>,
    pub avg_corr_local: Option<f64>,
    pub cloud: ResidualReport,
    pub local: ResidualReport,
    pub accuracy: f64,
    pub skipped_corr_windows: usize,
    pub degenerate_fits: usize,
}

impl SweepRow {
    pub fn residual(&self, target: Target) -> &ResidualReport {
        match target {
            Target::Local => &self.local,
            Target::Cloud => &self.cloud,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Requested window sizes that were not shorter than the stream.
    pub skipped: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOptions {
    pub windows: Vec<usize>,
    pub full_split: bool,
    pub clamp_negative_predictions: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            windows: DEFAULT_WINDOWS.to_vec(),
            full_split: true,
            clamp_negative_predictions: true,
        }
    }
}

fn avg_corr(ds: &[f64], ts: &[f64], n: usize) -> Result<(Option<f64>, usize)> {
    match rolling_avg_correlation(ds, ts, n) {
        Ok(rc) => Ok((Some(rc.mean), rc.skipped)),
        Err(Error::UndefinedCorrelation(_)) => Ok((None, ds.len() - n + 1)),
        Err(e) => Err(e),
    }
}

/// Replays `stream` once per window size and evaluates each trace.
/// Window sizes run on separate threads; rows keep the requested order.
pub fn sweep(stream: &TaskStream, options: &SweepOptions) -> Result<SweepReport> {
    let (usable, skipped): (Vec<usize>, Vec<usize>) =
        options.windows.iter().partition(|&&n| n < stream.len());
    for n in &skipped {
        warn!(
            "skipping window {n}: stream has only {} tasks",
            stream.len()
        );
    }
    let ds = stream.ds();
    let tl = stream.times(Target::Local);
    let tc = stream.times(Target::Cloud);

    let mut rows = thread::scope(|s| {
        let handles: Vec<_> = usable
            .iter()
            .map(|&n| {
                let (ds, tl, tc) = (&ds, &tl, &tc);
                s.spawn(move || {
                    window_row(stream, n, options.clamp_negative_predictions, ds, tl, tc)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep worker panicked"))
            .collect::<Result<Vec<_>>>()
    })?;

    if options.full_split {
        rows.push(full_split_row(
            stream,
            options.clamp_negative_predictions,
            &ds,
            &tl,
            &tc,
        )?);
    }
    Ok(SweepReport { rows, skipped })
}

fn window_row(
    stream: &TaskStream,
    n: usize,
    clamp: bool,
    ds: &[f64],
    tl: &[f64],
    tc: &[f64],
) -> Result<SweepRow> {
    let mut config = EngineConfig::new(n);
    config.clamp_negative_predictions = clamp;
    let mut engine = Engine::new(config)?;
    let trace = stream
        .tasks
        .iter()
        .map(|t| engine.step_replay(t))
        .collect::<Result<Vec<_>>>()?;
    let stats = engine.stats();
    let degenerate_fits = stats.degenerate_fits_local + stats.degenerate_fits_cloud;
    let (corr_cloud, skip_c) = avg_corr(ds, tc, n)?;
    let (corr_local, skip_l) = avg_corr(ds, tl, n)?;
    let row = SweepRow {
        n,
        kind: RowKind::Window,
        avg_corr_cloud: corr_cloud,
        avg_corr_local: corr_local,
        cloud: residual_report(&trace, Target::Cloud)?,
        local: residual_report(&trace, Target::Local)?,
        accuracy: decision_accuracy(&trace)?,
        skipped_corr_windows: skip_c + skip_l,
        degenerate_fits,
    };
    info!("window {n}: accuracy {:.4}", row.accuracy);
    Ok(row)
}

fn full_split_row(
    stream: &TaskStream,
    clamp: bool,
    ds: &[f64],
    tl: &[f64],
    tc: &[f64],
) -> Result<SweepRow> {
    let len = stream.len();
    let split = (len as f64 * TRAIN_FRACTION).floor() as usize;
    if split < 2 || split >= len {
        return Err(invalid(format!(
            "stream of {len} tasks too short for an 80:20 split"
        )));
    }
    let (train, test) = stream.tasks.split_at(split);
    let obs = |target: Target| -> Vec<Observation> {
        train
            .iter()
            .map(|t| Observation {
                d: t.d,
                t: t.time(target),
            })
            .collect()
    };
    let local_model = LinearModel::fit(&obs(Target::Local))?;
    let cloud_model = LinearModel::fit(&obs(Target::Cloud))?;
    let degenerate_fits = usize::from(local_model.degenerate) + usize::from(cloud_model.degenerate);

    let mut acc = 0usize;
    let (mut sl, mut sc, mut pl, mut pc) = (0.0, 0.0, 0.0, 0.0);
    for t in test {
        let mut p_local = local_model.predict(t.d);
        let mut p_cloud = cloud_model.predict(t.d);
        if clamp {
            p_local = p_local.max(0.0);
            p_cloud = p_cloud.max(0.0);
        }
        if decide(p_local, p_cloud)?.target == Target::faster(t.t_local, t.t_cloud) {
            acc += 1;
        }
        sl += t.t_local;
        sc += t.t_cloud;
        pl += p_local;
        pc += p_cloud;
    }
    let m = test.len() as f64;
    let (corr_cloud, skip_c) = avg_corr(ds, tc, len)?;
    let (corr_local, skip_l) = avg_corr(ds, tl, len)?;
    Ok(SweepRow {
        n: len,
        kind: RowKind::FullSplit,
        avg_corr_cloud: corr_cloud,
        avg_corr_local: corr_local,
        cloud: ResidualReport::from_means(sc / m, pc / m, test.len()),
        local: ResidualReport::from_means(sl / m, pl / m, test.len()),
        accuracy: acc as f64 / m,
        skipped_corr_windows: skip_c + skip_l,
        degenerate_fits,
    })
}

pub const SWEEP_CSV_HEADER: [&str; 13] = [
    "n",
    "kind",
    "avg_corr_cloud",
    "avg_corr_local",
    "mean_t_cloud",
    "mean_p_cloud",
    "residual_cloud",
    "mean_t_local",
    "mean_p_local",
    "residual_local",
    "error_rate_cloud",
    "error_rate_local",
    "accuracy",
];

impl SweepReport {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(SWEEP_CSV_HEADER)?;
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.n.to_string(),
                r.kind.as_str().to_string(),
                opt(r.avg_corr_cloud),
                opt(r.avg_corr_local),
                fmt_f64(r.cloud.mean_t),
                fmt_f64(r.cloud.mean_p),
                fmt_f64(r.cloud.residual),
                fmt_f64(r.local.mean_t),
                fmt_f64(r.local.mean_p),
                fmt_f64(r.local.residual),
                fmt_f64(r.cloud.error_rate),
                fmt_f64(r.local.error_rate),
                fmt_f64(r.accuracy),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Aligned plain-text rendering for terminals.
    pub fn render_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# accuracy counts steady-phase tasks only; the full row fits once on the first 80% and tests on the last 20%"
        );
        let _ = writeln!(
            s,
            "{:>11} {:>9} {:>9} {:>9} {:>9} {:>10} {:>9} {:>9} {:>10} {:>8} {:>8} {:>8}",
            "N",
            "r(tc,d)",
            "r(tl,d)",
            "mean tc",
            "mean pc",
            "resid c",
            "mean tl",
            "mean pl",
            "resid l",
            "err c",
            "err l",
            "acc %"
        );
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.5}")).unwrap_or_else(|| "-".into());
        for r in &self.rows {
            let label = match r.kind {
                RowKind::Window => r.n.to_string(),
                RowKind::FullSplit => format!("{} (full)", r.n),
            };
            let _ = writeln!(
                s,
                "{:>11} {:>9} {:>9} {:>9.5} {:>9.5} {:>10.5} {:>9.5} {:>9.5} {:>10.5} {:>8.4} {:>8.4} {:>8.2}",
                label,
                opt(r.avg_corr_cloud),
                opt(r.avg_corr_local),
                r.cloud.mean_t,
                r.cloud.mean_p,
                r.cloud.residual,
                r.local.mean_t,
                r.local.mean_p,
                r.local.residual,
                r.cloud.error_rate,
                r.local.error_rate,
                r.accuracy * 100.0
            );
        }
        if !self.skipped.is_empty() {
            let _ = writeln!(
                s,
                "# skipped windows (not shorter than stream): {:?}",
                self.skipped
            );
        }
        s
    }
}
