use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use log::info;

use predictive_offload::engine::{run_live, run_replay, write_trace_csv, SimulatedExecutor};
use predictive_offload::metrics::{self, decision_accuracy, residual_report, SweepOptions};
use predictive_offload::transport::{RemoteExecutor, Server, ServerConfig, DEFAULT_BIND};
use predictive_offload::workload::Disturbance;
use predictive_offload::{
    generate_stream, CostProfile, EngineConfig, Target, TargetProfile, TaskStream,
};

const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Parser)]
#[command(
    name = "offload",
    version,
    about = "Sliding-window offloading experiments"
)]
struct Cli {
    /// More log output (-v debug, -vv trace).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Only warnings and errors.
    #[arg(short, long, global = true, conflicts_with = "verbose")]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize a task stream and write it as CSV.
    Generate(GenerateArgs),
    /// Run the offloading loop over a stream (replay) or against a server (live).
    Run(RunArgs),
    /// Replay a stream for several window sizes and tabulate the results.
    Sweep(SweepArgs),
    /// Serve simulated cloud executions over TCP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    /// Number of tasks.
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    count: u64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    local: LocalProfileArgs,
    #[command(flatten)]
    cloud: CloudProfileArgs,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Task stream CSV. In live mode only task_id and d are used.
    #[arg(long)]
    data: PathBuf,
    /// Window size N.
    #[arg(long, default_value_t = 50)]
    window: usize,
    /// Trace CSV output path.
    #[arg(long)]
    trace: PathBuf,
    /// Keep negative predictions instead of clamping them to zero.
    #[arg(long)]
    no_clamp: bool,
    /// Execute against a running server instead of replaying recorded times.
    #[arg(long)]
    live: bool,
    /// Server address for live mode.
    #[arg(long, env = "OFFLOAD_SERVER", default_value = DEFAULT_BIND)]
    server: String,
    /// Per-request timeout in milliseconds for live mode.
    #[arg(long, default_value_t = 5000)]
    timeout_ms: u64,
    /// Run the two warm-up executions concurrently in live mode.
    #[arg(long)]
    concurrent_warmup: bool,
    /// Seed for the simulated local executor in live mode.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[command(flatten)]
    local: LocalProfileArgs,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    data: PathBuf,
    /// Report CSV output path.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated window sizes [default: 5,10,20,30,40,50,75,100,500 plus the full-dataset row].
    #[arg(long, value_delimiter = ',')]
    windows: Option<Vec<usize>>,
    /// Add the full-dataset 80:20 row when --windows is given.
    #[arg(long)]
    full: bool,
    #[arg(long)]
    no_clamp: bool,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, env = "OFFLOAD_BIND", default_value = DEFAULT_BIND)]
    bind: String,
    /// Injected round-trip latency in milliseconds.
    #[arg(long, default_value_t = 30.0)]
    rtt_ms: f64,
    /// Seed for the server's noise generator.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[command(flatten)]
    cloud: CloudProfileArgs,
}

#[derive(Debug, Args)]
struct LocalProfileArgs {
    /// Local seconds per unit of d.
    #[arg(long)]
    local_slope: Option<f64>,
    /// Local seconds at d = 0.
    #[arg(long)]
    local_intercept: Option<f64>,
    /// Local Gaussian noise std in seconds.
    #[arg(long)]
    local_noise: Option<f64>,
    /// Local slowdown, START-END:+SECS or START-END:xFACTOR (repeatable).
    #[arg(long)]
    local_disturbance: Vec<Disturbance>,
}

#[derive(Debug, Args)]
struct CloudProfileArgs {
    /// Cloud seconds per unit of d.
    #[arg(long)]
    cloud_slope: Option<f64>,
    /// Cloud seconds at d = 0, excluding round trip.
    #[arg(long)]
    cloud_intercept: Option<f64>,
    /// Cloud Gaussian noise std in seconds.
    #[arg(long)]
    cloud_noise: Option<f64>,
    /// Cloud slowdown, START-END:+SECS or START-END:xFACTOR (repeatable).
    #[arg(long)]
    cloud_disturbance: Vec<Disturbance>,
}

fn apply(
    mut p: TargetProfile,
    slope: Option<f64>,
    intercept: Option<f64>,
    noise: Option<f64>,
    disturbances: &[Disturbance],
) -> anyhow::Result<TargetProfile> {
    if let Some(v) = slope {
        p.slope = v;
    }
    if let Some(v) = intercept {
        p.intercept = v;
    }
    if let Some(v) = noise {
        p.noise_std = v;
    }
    p.disturbances.extend_from_slice(disturbances);
    p.validate()?;
    Ok(p)
}

impl LocalProfileArgs {
    fn profile(&self) -> anyhow::Result<TargetProfile> {
        apply(
            CostProfile::calibrated().local,
            self.local_slope,
            self.local_intercept,
            self.local_noise,
            &self.local_disturbance,
        )
        .context("local profile")
    }
}

impl CloudProfileArgs {
    fn profile(&self) -> anyhow::Result<TargetProfile> {
        apply(
            CostProfile::calibrated().cloud,
            self.cloud_slope,
            self.cloud_intercept,
            self.cloud_noise,
            &self.cloud_disturbance,
        )
        .context("cloud profile")
    }
}

fn check_output(path: &Path) -> anyhow::Result<()> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    if !parent.is_dir() {
        bail!("output directory {} does not exist", parent.display());
    }
    if path.is_dir() {
        bail!("output path {} is a directory", path.display());
    }
    Ok(())
}

fn read_stream(path: &Path) -> anyhow::Result<TaskStream> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    TaskStream::read_csv(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

/// Writes through a sibling temp file so a failed run leaves no partial artifact.
fn write_atomic(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<File>) -> anyhow::Result<()>,
) -> anyhow::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    let result = (|| {
        let mut w = BufWriter::new(
            File::create(&tmp).with_context(|| format!("cannot create {}", tmp.display()))?,
        );
        f(&mut w)?;
        w.flush()?;
        drop(w);
        fs::rename(&tmp, path).with_context(|| format!("cannot write {}", path.display()))
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result
}

fn cmd_generate(args: GenerateArgs) -> anyhow::Result<()> {
    check_output(&args.out)?;
    let profile = CostProfile {
        local: args.local.profile()?,
        cloud: args.cloud.profile()?,
    };
    let stream = generate_stream(&profile, args.count as usize, args.seed)?;
    write_atomic(&args.out, |w| Ok(stream.write_csv(w)?))?;

    let ds = stream.ds();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let corr = |t: Target| {
        metrics::pearson(&ds, &stream.times(t))
            .map(|r| format!("{r:.5}"))
            .unwrap_or_else(|_| "undefined".into())
    };
    println!(
        "wrote {} tasks to {}: mean t_local {:.5} s, mean t_cloud {:.5} s, r(t_local,d) {}, r(t_cloud,d) {}",
        stream.len(),
        args.out.display(),
        mean(&stream.times(Target::Local)),
        mean(&stream.times(Target::Cloud)),
        corr(Target::Local),
        corr(Target::Cloud),
    );
    Ok(())
}

fn cmd_run(args: RunArgs) -> anyhow::Result<()> {
    check_output(&args.trace)?;
    let stream = read_stream(&args.data)?;
    let mut config = EngineConfig::new(args.window);
    config.clamp_negative_predictions = !args.no_clamp;
    config.concurrent_warmup = args.concurrent_warmup;
    config.validate()?;

    if args.live {
        let mut local = SimulatedExecutor::new(args.local.profile()?, args.seed)?;
        let mut cloud =
            RemoteExecutor::new(args.server.clone(), Duration::from_millis(args.timeout_ms));
        let tasks = stream.tasks.iter().map(|t| (t.task_id, t.d));
        let (trace, events) = run_live(tasks, &config, &mut local, &mut cloud)?;
        write_atomic(&args.trace, |w| Ok(write_trace_csv(&trace, w)?))?;
        let executed = |t: Target| trace.iter().filter(|r| r.executed == Some(t)).count();
        println!(
            "live run: {} tasks ({} warm-up), steady local {}, steady cloud {}, executor failures {}",
            trace.len(),
            trace.iter().filter(|r| r.decision.is_none()).count(),
            executed(Target::Local),
            executed(Target::Cloud),
            events.len()
        );
        return Ok(());
    }

    let trace = run_replay(&stream, &config)?;
    write_atomic(&args.trace, |w| Ok(write_trace_csv(&trace, w)?))?;
    let warmup = trace.iter().filter(|r| r.decision.is_none()).count();
    print!("replay: {} tasks, {} warm-up", trace.len(), warmup);
    match decision_accuracy(&trace) {
        Ok(acc) => {
            let c = residual_report(&trace, Target::Cloud)?;
            let l = residual_report(&trace, Target::Local)?;
            println!(
                ", accuracy {:.2}%, cloud residual {:+.5} s ({:.2}%), local residual {:+.5} s ({:.2}%)",
                acc * 100.0,
                c.residual,
                c.error_rate * 100.0,
                l.residual,
                l.error_rate * 100.0
            );
        }
        Err(_) => println!(", no steady-phase tasks"),
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> anyhow::Result<()> {
    check_output(&args.out)?;
    let stream = read_stream(&args.data)?;
    let options = match args.windows {
        Some(windows) => SweepOptions {
            windows,
            full_split: args.full,
            clamp_negative_predictions: !args.no_clamp,
        },
        None => SweepOptions {
            clamp_negative_predictions: !args.no_clamp,
            ..SweepOptions::default()
        },
    };
    if let Some(&n) = options.windows.iter().find(|&&n| n < 2) {
        bail!("window sizes must be >= 2, got {n}");
    }
    let report = metrics::sweep(&stream, &options)?;
    if report.rows.is_empty() {
        bail!(
            "no window size is shorter than the {}-task stream",
            stream.len()
        );
    }
    write_atomic(&args.out, |w| Ok(report.write_csv(w)?))?;
    print!("{}", report.render_table());
    Ok(())
}

fn cmd_serve(args: ServeArgs) -> anyhow::Result<()> {
    if !(args.rtt_ms.is_finite() && args.rtt_ms >= 0.0) {
        bail!("--rtt-ms must be >= 0");
    }
    let config = ServerConfig {
        bind: args.bind.clone(),
        profile: args.cloud.profile()?,
        injected_rtt: Duration::from_secs_f64(args.rtt_ms / 1000.0),
        seed: args.seed,
    };
    let server = Server::bind(config).with_context(|| format!("cannot bind {}", args.bind))?;
    let shutdown = Arc::new(AtomicBool::new(false));
    let flag = Arc::clone(&shutdown);
    ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst))
        .context("installing signal handler")?;
    info!("injected rtt {} ms", args.rtt_ms);
    server.serve(&shutdown)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet {
        log::LevelFilter::Warn
    } else {
        match cli.verbose {
            0 => log::LevelFilter::Info,
            1 => log::LevelFilter::Debug,
            _ => log::LevelFilter::Trace,
        }
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .init();

    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Serve(a) => cmd_serve(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
