//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use predictive_offload::engine::{
    run_live, run_replay, run_replay_with, PerfectInformation, SimulatedExecutor,
};
use predictive_offload::metrics::{
    decision_accuracy, pearson, residual_report, sweep, SweepOptions, DEFAULT_WINDOWS,
};
use predictive_offload::transport::{
    decode_frame, encode_frame, ExecRequest, ExecResponse, Message, RemoteExecutor, Server,
    ServerConfig,
};
use predictive_offload::workload::{node_count, raw_input_size};
use predictive_offload::{
    generate_stream, CostProfile, Decision, Engine, EngineConfig, Observation, Phase,
    SlidingWindow, Target, TargetProfile, TaskRecord,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within_time(start: Instant, limit: Duration) -> Result<Duration, String> {
    let took = start.elapsed();
    ensure(took < limit, format!("took {took:?}, limit {limit:?}"))?;
    Ok(took)
}

fn input_size_pin() -> Outcome {
    let n = node_count(35.02, 0.05).map_err(|e| e.to_string())?;
    ensure(n.abs_diff(245_280) <= 1, format!("node_count = {n}"))?;
    let raw = raw_input_size(n);
    ensure(
        (raw - 3_043_962.0).abs() <= 2.0,
        format!("raw_input_size = {raw}"),
    )?;
    Ok(format!("node_count = {n}, raw = {raw:.2}"))
}

/// Closed-form OLS using raw sums.
fn ols_oracle(obs: &[(f64, f64)]) -> (f64, f64) {
    let n = obs.len() as f64;
    let (sx, sy) = obs
        .iter()
        .fold((0.0, 0.0), |(a, b), &(x, y)| (a + x, b + y));
    let sxx: f64 = obs.iter().map(|&(x, _)| x * x).sum();
    let sxy: f64 = obs.iter().map(|&(x, y)| x * y).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    (slope, (sy - slope * sx) / n)
}

fn regression_exactness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_line: f64 = 0.0;
    let mut worst_oracle: f64 = 0.0;
    for case in 0..1000 {
        let cap = rng.gen_range(2..=200);
        let mut w = SlidingWindow::new(cap).unwrap();
        let (a, b) = (rng.gen_range(-5.0..5.0), rng.gen_range(-1.0..1.0));
        let pushes = rng.gen_range(2..=2 * cap);
        for _ in 0..pushes {
            let d = rng.gen_range(0.0..5.0);
            w.push(Observation { d, t: a * d + b });
        }
        let m = w.fit().map_err(|e| format!("case {case}: {e}"))?;
        worst_line = worst_line
            .max((m.slope - a).abs())
            .max((m.intercept - b).abs());

        let mut noisy = SlidingWindow::new(cap).unwrap();
        for _ in 0..pushes {
            let d = rng.gen_range(0.0..5.0);
            noisy.push(Observation {
                d,
                t: a * d + b + rng.gen_range(-0.5..0.5),
            });
        }
        let pts: Vec<(f64, f64)> = noisy.iter().map(|o| (o.d, o.t)).collect();
        let (os, oi) = ols_oracle(&pts);
        let m = noisy.fit().map_err(|e| e.to_string())?;
        worst_oracle = worst_oracle
            .max((m.slope - os).abs())
            .max((m.intercept - oi).abs());
    }
    ensure(
        worst_line <= 1e-9,
        format!("noiseless recovery error {worst_line:e}"),
    )?;
    ensure(
        worst_oracle <= 1e-9,
        format!("oracle mismatch {worst_oracle:e}"),
    )?;
    let took = within_time(start, Duration::from_secs(1))?;
    Ok(format!(
        "max line error {worst_line:.1e}, max oracle gap {worst_oracle:.1e}, {took:.2?}"
    ))
}

fn decision_rule_equivalence() -> Outcome {
    let profile = CostProfile::calibrated();
    let mut checked = 0usize;
    let mut slowest = Duration::ZERO;
    for seed in 0..5u64 {
        let stream = generate_stream(&profile, 1000, seed).map_err(|e| e.to_string())?;
        for n in [5, 50] {
            let config = EngineConfig::new(n);
            let perfect =
                run_replay_with(&stream, &config, PerfectInformation).map_err(|e| e.to_string())?;
            let acc = decision_accuracy(&perfect).map_err(|e| e.to_string())?;
            ensure(
                acc == 1.0,
                format!("seed {seed}, N={n}: perfect-information accuracy {acc}"),
            )?;

            let start = Instant::now();
            let trace = run_replay(&stream, &config).map_err(|e| e.to_string())?;
            slowest = slowest.max(within_time(start, Duration::from_secs(1))?);
            for r in trace.iter().filter(|r| r.phase == Phase::Steady) {
                let d = r.decision.ok_or("steady record without decision")?;
                let want = if d.p_cloud < d.p_local {
                    Target::Cloud
                } else {
                    Target::Local
                };
                ensure(
                    d.target == want && r.executed == Some(d.target),
                    format!("task {}: {:?}", r.task_id, d),
                )?;
                checked += 1;
            }
        }
    }
    Ok(format!(
        "{checked} steady decisions consistent, perfect accuracy 1.0, slowest 1000-task replay {slowest:.2?}"
    ))
}

fn fifo_equivalence() -> Outcome {
    let start = Instant::now();
    let stream =
        generate_stream(&CostProfile::calibrated(), 1000, 11).map_err(|e| e.to_string())?;
    for n in [5, 50, 500] {
        let mut engine = Engine::new(EngineConfig::new(n)).map_err(|e| e.to_string())?;
        let mut local: Vec<(f64, f64)> = Vec::new();
        let mut cloud: Vec<(f64, f64)> = Vec::new();
        for task in &stream.tasks {
            let rec = engine.step_replay(task).map_err(|e| e.to_string())?;
            match rec.phase {
                Phase::Warmup => {
                    local.push((task.d, task.t_local));
                    cloud.push((task.d, task.t_cloud));
                }
                Phase::Steady => match rec.executed.ok_or("steady record without target")? {
                    Target::Local => local.push((task.d, task.t_local)),
                    Target::Cloud => cloud.push((task.d, task.t_cloud)),
                },
            }
            for (target, hist) in [(Target::Local, &local), (Target::Cloud, &cloud)] {
                let want = &hist[hist.len().saturating_sub(n)..];
                let got: Vec<(f64, f64)> =
                    engine.window(target).iter().map(|o| (o.d, o.t)).collect();
                let same = got.len() == want.len()
                    && got.iter().zip(want).all(|(g, w)| {
                        g.0.to_bits() == w.0.to_bits() && g.1.to_bits() == w.1.to_bits()
                    });
                ensure(
                    same,
                    format!("N={n}, task {}: {target} window diverged", task.task_id),
                )?;
            }
        }
    }
    let took = within_time(start, Duration::from_secs(2))?;
    Ok(format!(
        "windows match list slices at every step for N = 5, 50, 500, {took:.2?}"
    ))
}

fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for k in i..=j {
                r[idx[k]] = avg;
            }
            i = j + 1;
        }
        r
    }
    pearson(&ranks(xs), &ranks(ys)).unwrap_or(f64::NAN)
}

fn trend_reproduction() -> Outcome {
    const SEEDS: u64 = 20;
    let start = Instant::now();
    let profile = CostProfile::calibrated();
    let options = SweepOptions {
        windows: DEFAULT_WINDOWS.to_vec(),
        full_split: false,
        clamp_negative_predictions: true,
    };
    let k = DEFAULT_WINDOWS.len();
    let (mut acc, mut err_c, mut err_l) = (vec![0.0; k], vec![0.0; k], vec![0.0; k]);
    let (mut mean_c, mut mean_l, mut r_c, mut r_l) = (0.0, 0.0, 0.0, 0.0);
    for seed in 0..SEEDS {
        let stream = generate_stream(&profile, 1000, seed).map_err(|e| e.to_string())?;
        let ds = stream.ds();
        let tc = stream.times(Target::Cloud);
        let tl = stream.times(Target::Local);
        mean_c += tc.iter().sum::<f64>() / tc.len() as f64;
        mean_l += tl.iter().sum::<f64>() / tl.len() as f64;
        r_c += pearson(&ds, &tc).map_err(|e| e.to_string())?;
        r_l += pearson(&ds, &tl).map_err(|e| e.to_string())?;
        let report = sweep(&stream, &options).map_err(|e| e.to_string())?;
        ensure(report.rows.len() == k, "sweep dropped a window size")?;
        for (i, row) in report.rows.iter().enumerate() {
            acc[i] += row.accuracy;
            err_c[i] += row.cloud.error_rate;
            err_l[i] += row.local.error_rate;
        }
    }
    let s = SEEDS as f64;
    for v in [&mut acc, &mut err_c, &mut err_l] {
        v.iter_mut().for_each(|x| *x /= s);
    }
    let (mean_c, mean_l, r_c, r_l) = (mean_c / s, mean_l / s, r_c / s, r_l / s);

    ensure(
        (mean_c / 0.140 - 1.0).abs() <= 0.15,
        format!("mean t_cloud {mean_c:.4}"),
    )?;
    ensure(
        (mean_l / 0.175 - 1.0).abs() <= 0.15,
        format!("mean t_local {mean_l:.4}"),
    )?;
    ensure(r_l > r_c, format!("r_local {r_l:.3} <= r_cloud {r_c:.3}"))?;

    let at = |n: usize| DEFAULT_WINDOWS.iter().position(|&w| w == n).unwrap();
    let gain = acc[at(50)] - acc[at(5)];
    ensure(gain >= 0.10, format!("acc(50) - acc(5) = {gain:.3}"))?;
    for (i, &n) in DEFAULT_WINDOWS.iter().enumerate().filter(|(_, &n)| n >= 50) {
        ensure(
            err_c[i] < 0.02 && err_l[i] < 0.02,
            format!(
                "N={n}: error rates cloud {:.4}, local {:.4}",
                err_c[i], err_l[i]
            ),
        )?;
    }
    let ns: Vec<f64> = DEFAULT_WINDOWS.iter().map(|&n| n as f64).collect();
    let rho = spearman(&ns, &acc);
    ensure(
        rho > 0.8,
        format!("Spearman(N, accuracy) = {rho:.3}, accuracy {acc:.3?}"),
    )?;
    let took = within_time(start, Duration::from_secs(30))?;
    let max_err = DEFAULT_WINDOWS
        .iter()
        .enumerate()
        .filter(|(_, &n)| n >= 50)
        .map(|(i, _)| err_c[i].max(err_l[i]))
        .fold(0.0, f64::max);
    Ok(format!(
        "acc(5) {:.3}, acc(50) {:.3}, gain {gain:.3}, max error rate N>=50 {max_err:.4}, \
         Spearman {rho:.3}, means {mean_c:.3}/{mean_l:.3}, r {r_c:.2}/{r_l:.2}, {took:.2?}",
        acc[at(5)],
        acc[at(50)]
    ))
}

fn residual_sign_pin() -> Outcome {
    let (mean_t, mean_p) = (0.14016, 0.17697);
    let spread = [-0.01, 0.0, 0.01];
    let trace: Vec<TaskRecord> = spread
        .iter()
        .enumerate()
        .map(|(i, &e)| TaskRecord {
            task_id: i as u64 + 1,
            d: 1.0,
            phase: Phase::Steady,
            decision: Some(Decision {
                target: Target::Cloud,
                p_local: 0.2,
                p_cloud: mean_p - e,
            }),
            executed: Some(Target::Cloud),
            measured_local: None,
            measured_cloud: Some(mean_t + e),
            replay: None,
            oracle_target: None,
        })
        .collect();
    let r = residual_report(&trace, Target::Cloud).map_err(|e| e.to_string())?;
    ensure(
        (r.residual - 0.03681).abs() < 1e-9,
        format!("residual {}", r.residual),
    )?;
    ensure(
        (0.25..=0.27).contains(&r.error_rate),
        format!("error_rate {}", r.error_rate),
    )?;
    Ok(format!(
        "residual {:+.5}, error_rate {:.4}",
        r.residual, r.error_rate
    ))
}

fn protocol_golden_bytes() -> Outcome {
    let start = Instant::now();
    let golden: [u8; 21] = [
        0x00, 0x00, 0x00, 0x11, 0x01, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x01, 0x00, 0x00,
        0x00, 0x00, 0x00, 0x00, 0x00, 0x00,
    ];
    let got = encode_frame(&Message::Request(ExecRequest { task_id: 1, d: 0.0 }));
    ensure(got == golden, format!("encoded {got:02x?}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..1000 {
        let value = loop {
            let v = f64::from_bits(rng.gen());
            if !v.is_nan() {
                break v;
            }
        };
        let msg = if rng.gen() {
            Message::Request(ExecRequest {
                task_id: rng.gen(),
                d: value,
            })
        } else {
            Message::Response(ExecResponse {
                task_id: rng.gen(),
                elapsed: value,
            })
        };
        let (back, used) =
            decode_frame(&encode_frame(&msg)).map_err(|e| format!("message {i}: {e}"))?;
        ensure(
            back == msg && used == 21,
            format!("message {i}: {msg:?} -> {back:?}"),
        )?;
    }
    let took = within_time(start, Duration::from_secs(1))?;
    Ok(format!(
        "golden bytes match, 1000 round-trips identical, {took:.2?}"
    ))
}

fn live_loopback() -> Outcome {
    let start = Instant::now();
    let rtt = Duration::from_millis(30);
    let cloud = TargetProfile::new(0.01, 0.01, 0.0);
    let local = TargetProfile::new(0.015, 0.005, 0.0);
    let mut config = ServerConfig::new("127.0.0.1:0", cloud.clone());
    config.injected_rtt = rtt;
    let handle = Server::bind(config)
        .map_err(|e| e.to_string())?
        .spawn()
        .map_err(|e| e.to_string())?;
    let mut remote = RemoteExecutor::new(handle.addr().to_string(), Duration::from_secs(5));
    let mut sim = SimulatedExecutor::new(local.clone(), 0).map_err(|e| e.to_string())?;

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let tasks: Vec<(u64, f64)> = (1..=100).map(|i| (i, rng.gen_range(0.0..5.0))).collect();
    let (trace, events) = run_live(tasks, &EngineConfig::new(10), &mut sim, &mut remote)
        .map_err(|e| e.to_string())?;
    handle.shutdown().map_err(|e| e.to_string())?;
    ensure(events.is_empty(), format!("executor failures: {events:?}"))?;
    ensure(trace.len() == 100, format!("{} records", trace.len()))?;

    let mut worst: f64 = 0.0;
    let mut samples = 0;
    for r in &trace {
        for (target, analytic) in [
            (Target::Local, local.expected(r.task_id, r.d)),
            (
                Target::Cloud,
                cloud.expected(r.task_id, r.d) + rtt.as_secs_f64(),
            ),
        ] {
            if let Some(t) = r.measured(target) {
                worst = worst.max((t - analytic).abs());
                samples += 1;
                ensure(
                    (t - analytic).abs() <= 0.020,
                    format!(
                        "task {} {target}: measured {t:.4}, analytic {analytic:.4}",
                        r.task_id
                    ),
                )?;
            }
        }
    }
    let took = within_time(start, Duration::from_secs(60))?;
    Ok(format!(
        "{samples} measurements, worst deviation {:.1} ms, {took:.2?}",
        worst * 1e3
    ))
}

fn sweep_performance() -> Outcome {
    let stream =
        generate_stream(&CostProfile::calibrated(), 1000, 42).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let report = sweep(&stream, &SweepOptions::default()).map_err(|e| e.to_string())?;
    let took = within_time(start, Duration::from_secs(10))?;
    ensure(
        report.rows.len() == DEFAULT_WINDOWS.len() + 1,
        format!("{} rows", report.rows.len()),
    )?;
    Ok(format!("{} rows in {took:.2?}", report.rows.len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("input-size pin", input_size_pin),
        ("regression exactness", regression_exactness),
        (
            "decision rule and oracle equivalence",
            decision_rule_equivalence,
        ),
        ("FIFO/trace equivalence", fifo_equivalence),
        ("window-size trend", trend_reproduction),
        ("residual sign convention", residual_sign_pin),
        ("protocol golden bytes", protocol_golden_bytes),
        ("live loopback", live_loopback),
        ("sweep performance", sweep_performance),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS criterion {}: {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {}: {name}: {detail}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
