//! `hdmon`: calibrate critical values, train Phase I, monitor a stream, run experiments.
//!
//! Exit status: 0 finished without alarm, 10 alarm, 1 usage error, 2 data error.

mod csvio;
mod session;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use hdmon::adaptive::{Decision, Monitor, Thresholds};
use hdmon::limitlaw::{CriticalValueTable, GridSpec, TableKey};
use hdmon::simharness::{run_experiment, ScenarioSpec};
use hdmon::{BoundaryKind, Error, MonitorConfig, NormEstimates, Observation};

use session::SessionConfig;

pub const EXIT_OK: u8 = 0;
pub const EXIT_ALARM: u8 = 10;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "hdmon", version, about = "Closed-end monitoring of high-dimensional mean shifts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate and cache critical-value tables.
    Calibrate(CommonArgs),
    /// Estimate Phase-I norms from a CSV block.
    Train(CommonArgs),
    /// Monitor a CSV stream against a trained state.
    Monitor(MonitorArgs),
    /// Run a size/power experiment on synthetic AR(1) data.
    Simulate(SimulateArgs),
}

/// Flags shared by every subcommand. Anything unset falls back to `--config`, then to defaults.
#[derive(Debug, Clone, Args)]
struct CommonArgs {
    /// JSON session file supplying defaults for the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Phase-I length.
    #[arg(long)]
    n: Option<usize>,
    /// Dimension.
    #[arg(long)]
    p: Option<usize>,
    /// Even norm indices, comma separated.
    #[arg(long, value_delimiter = ',')]
    q: Option<Vec<u32>>,
    /// Horizon multiplier T; monitoring stops at floor(nT).
    #[arg(long = "T")]
    horizon: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// T1, T2 or T3 (calibrate accepts a comma-separated list).
    #[arg(long, value_delimiter = ',')]
    boundary: Option<Vec<BoundaryKind>>,
    /// Grid points per unit time for the limit simulation.
    #[arg(long)]
    grid: Option<usize>,
    /// Replications (limit draws for calibrate/monitor, Monte Carlo runs for simulate).
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "cache-dir", env = "HDMON_CACHE_DIR")]
    cache_dir: Option<PathBuf>,
    /// Input CSV path, or `-` for stdin.
    #[arg(long)]
    input: Option<String>,
    /// Output path; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Tuple sample count for the incomplete L_q estimators.
    #[arg(long = "incomplete-N")]
    incomplete_n: Option<usize>,
}

#[derive(Debug, Clone, Args)]
struct MonitorArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Trained state written by `hdmon train`.
    #[arg(long)]
    state: PathBuf,
}

#[derive(Debug, Clone, Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// AR(1) cross-sectional correlation.
    #[arg(long, default_value_t = 0.0)]
    rho: f64,
    /// Total shift energy ||Delta||_2^2; 0 runs the null scenario.
    #[arg(long, default_value_t = 0.0)]
    delta: f64,
    /// Number of shifted coordinates (defaults to p).
    #[arg(long)]
    r: Option<usize>,
    /// Limit-process draws per critical-value table.
    #[arg(long = "cv-reps")]
    cv_reps: Option<usize>,
}

/// Phase-I output: the estimates plus the training block the scans need.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedState {
    pub version: String,
    pub q_set: Vec<u32>,
    pub seed: u64,
    pub estimates: NormEstimates,
    pub training: Vec<Vec<f64>>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(msg) => CliError::Usage(msg),
            e @ Error::TooFewReplications { .. } => CliError::Usage(e.to_string()),
            other => CliError::Data(other),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Data(Error::Io(e))
    }
}

type CliResult<T> = Result<T, CliError>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Calibrate(a) => cmd_calibrate(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Monitor(a) => cmd_monitor(&a),
        Command::Simulate(a) => cmd_simulate(&a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(CliError::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_DATA)
        }
    }
}

fn session(args: &CommonArgs) -> CliResult<SessionConfig> {
    let base = match &args.config {
        Some(path) => SessionConfig::load(path)?,
        None => SessionConfig::default(),
    };
    Ok(base.overridden_by(&SessionConfig {
        n: args.n,
        p: args.p,
        q: args.q.clone(),
        horizon: args.horizon,
        alpha: args.alpha,
        boundary: args.boundary.clone(),
        grid: args.grid,
        reps: args.reps,
        seed: args.seed,
        cache_dir: args.cache_dir.clone(),
        input: args.input.clone(),
        output: args.output.clone(),
        incomplete_n: args.incomplete_n,
    }))
}

fn writer(output: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match output {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            Box::new(BufWriter::new(File::create(path)?))
        }
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn write_line(out: &mut dyn Write, value: &serde_json::Value) -> CliResult<()> {
    serde_json::to_writer(&mut *out, value).map_err(|e| CliError::Data(Error::Io(e.into())))?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn validated_q(s: &SessionConfig) -> CliResult<Vec<u32>> {
    let q = s.q_set();
    for &v in &q {
        hdmon::streamcore::validate_q(v)?;
    }
    Ok(q)
}

/// Loads (or simulates and stores) the table for every `q` and returns the thresholds.
fn thresholds_for(config: &MonitorConfig, s: &SessionConfig, reps: usize) -> CliResult<Thresholds> {
    let dir = s.cache_dir();
    let tables = config
        .q_set
        .iter()
        .map(|&q| {
            let key = TableKey::new(q, config.horizon, config.boundary, s.seed())
                .with_grid(s.grid_for(q))
                .with_reps(reps);
            let (table, path) = CriticalValueTable::load_or_calibrate(&dir, key, &[])?;
            log::info!("critical values for q = {q}: {}", path.display());
            Ok(table)
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(Thresholds::from_tables(config, &tables)?)
}

fn cmd_calibrate(args: &CommonArgs) -> CliResult<u8> {
    let s = session(args)?;
    let q_set = validated_q(&s)?;
    let boundaries = s.boundaries();
    let horizon = s.horizon();
    let reps = s.reps().unwrap_or(hdmon::limitlaw::DEFAULT_REPS);
    let seed = s.seed();
    let dir = s.cache_dir();
    std::fs::create_dir_all(&dir)?;
    let mut out = writer(s.output.as_deref())?;
    for &q in &q_set {
        let grid = GridSpec::new(horizon, s.grid_for(q))?;
        let key_for = |b| TableKey { q, horizon, boundary: b, g: grid.g, reps, seed };
        let missing: Vec<BoundaryKind> = boundaries
            .iter()
            .copied()
            .filter(|&b| CriticalValueTable::load(&dir.join(key_for(b).file_name()), &key_for(b)).is_err())
            .collect();
        let fresh = if missing.is_empty() {
            Vec::new()
        } else {
            CriticalValueTable::calibrate_boundaries(q, &grid, &missing, reps, seed, &[])?
        };
        for &b in &boundaries {
            let key = key_for(b);
            let path = dir.join(key.file_name());
            let (table, status) = match fresh.iter().find(|t| t.key.boundary == b) {
                Some(t) => {
                    t.save(&path)?;
                    (t.clone(), "written")
                }
                None => (CriticalValueTable::load(&path, &key)?, "exists"),
            };
            write_line(
                &mut out,
                &json!({
                    "status": status,
                    "file": path,
                    "q": q,
                    "boundary": b,
                    "T": horizon,
                    "grid": grid.g,
                    "reps": reps,
                    "seed": seed,
                    "quantiles": table.quantiles,
                }),
            )?;
        }
    }
    Ok(EXIT_OK)
}

fn cmd_train(args: &CommonArgs) -> CliResult<u8> {
    let s = session(args)?;
    let q_set = validated_q(&s)?;
    let input = s.input.clone().ok_or_else(|| CliError::Usage("train needs --input".into()))?;
    let mut data = csvio::read_matrix(&input)?;
    if let Some(n) = s.n {
        if data.len() < n {
            return Err(CliError::Data(Error::PhaseOne(format!(
                "training CSV has {} rows, --n asks for {n}",
                data.len()
            ))));
        }
        data.truncate(n);
    }
    let p = data.first().map(Vec::len).unwrap_or(0);
    if let Some(expected) = s.p {
        if expected != p {
            return Err(CliError::Data(Error::Dimension { expected, got: p }));
        }
    }
    let estimates = NormEstimates::estimate(&data, &q_set, s.incomplete_n, s.seed())?;
    let state = TrainedState {
        version: hdmon::limitlaw::LIBRARY_VERSION.to_string(),
        q_set,
        seed: s.seed(),
        estimates,
        training: data,
    };
    let mut out = writer(s.output.as_deref())?;
    serde_json::to_writer(&mut out, &state).map_err(|e| CliError::Data(Error::Io(e.into())))?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(EXIT_OK)
}

fn load_state(path: &Path) -> CliResult<TrainedState> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| {
        CliError::Data(Error::CorruptCache { path: path.to_path_buf(), detail: e.to_string() })
    })
}

fn cmd_monitor(args: &MonitorArgs) -> CliResult<u8> {
    let s = session(&args.common)?;
    let state = load_state(&args.state)?;
    if let Some(q) = &s.q {
        let mut q = q.clone();
        q.sort_unstable();
        q.dedup();
        if q != state.q_set {
            return Err(CliError::Usage(format!("--q {:?} differs from the trained q set {:?}", q, state.q_set)));
        }
    }
    let n = state.training.len();
    let p = state.estimates.p;
    if let Some(expected) = s.p.filter(|&v| v != p) {
        return Err(CliError::Data(Error::Dimension { expected, got: p }));
    }
    if let Some(expected) = s.n.filter(|&v| v != n) {
        return Err(CliError::Usage(format!("--n {expected} differs from the trained block length {n}")));
    }
    let boundary = *s.boundaries().first().expect("at least one boundary");
    let config = MonitorConfig::new(n, p)
        .with_q_set(&state.q_set)
        .with_horizon(s.horizon())
        .with_alpha(s.alpha())
        .with_boundary(boundary)
        .with_seed(state.seed);
    config.validate()?;
    let reps = s.reps().unwrap_or(hdmon::limitlaw::DEFAULT_REPS);
    let thresholds = thresholds_for(&config, &s, reps)?;
    let mut monitor = Monitor::new(config.clone(), thresholds)?;
    monitor.train_with_estimates(&state.training, state.estimates.clone())?;

    let mut out = writer(s.output.as_deref())?;
    let horizon = config.horizon_len();
    let rows = csvio::stream_rows(s.input.as_deref().unwrap_or("-"))?;
    let mut k = n;
    for row in rows {
        if k >= horizon {
            break;
        }
        let step = row.and_then(|x| {
            if x.len() != p {
                return Err(Error::Dimension { expected: p, got: x.len() });
            }
            Observation::new(k + 1, x).and_then(|obs| monitor.step(&obs))
        });
        let outcome = match step {
            Ok(o) => o,
            Err(e) => {
                write_line(&mut out, &json!({ "event": "error", "k": k + 1, "message": e.to_string() }))?;
                return Err(e.into());
            }
        };
        k = outcome.k;
        let stats: Vec<_> = outcome
            .entries
            .iter()
            .map(|e| json!({ "q": e.q, "stat": e.stat, "threshold": e.threshold, "argmax_m": e.argmax_m }))
            .collect();
        match outcome.decision {
            Decision::Continue => {
                write_line(&mut out, &json!({ "event": "step", "k": k, "stats": stats, "decision": "continue" }))?;
            }
            Decision::Alarm(ev) => {
                write_line(&mut out, &json!({ "event": "step", "k": k, "stats": stats, "decision": "alarm" }))?;
                write_line(&mut out, &json!({ "event": "alarm", "alarm": ev }))?;
                return Ok(EXIT_ALARM);
            }
        }
    }
    let status = if k >= horizon { "no_alarm" } else { "truncated" };
    write_line(&mut out, &json!({ "event": "end", "status": status, "k": k, "horizon": horizon }))?;
    Ok(EXIT_OK)
}

fn cmd_simulate(args: &SimulateArgs) -> CliResult<u8> {
    let s = session(&args.common)?;
    let q_set = validated_q(&s)?;
    let n = s.n.unwrap_or(100);
    let p = s.p.unwrap_or(50);
    let reps = s.reps().unwrap_or(500);
    if reps == 0 {
        return Err(CliError::Usage("--reps must be at least 1".into()));
    }
    let mut spec = ScenarioSpec::null(n, p)
        .with_q_set(&q_set)
        .with_rho(args.rho)
        .with_alpha(s.alpha())
        .with_boundary(*s.boundaries().first().expect("at least one boundary"))
        .with_reps(reps)
        .with_seed(s.seed());
    spec.horizon = s.horizon();
    spec.samples = s.incomplete_n;
    if args.delta > 0.0 {
        spec = spec.with_shift(args.delta, args.r.unwrap_or(p));
    }
    spec.validate()?;
    let config = spec.monitor_config();
    let cv_reps = args.cv_reps.unwrap_or(hdmon::limitlaw::DEFAULT_REPS);
    let thresholds = thresholds_for(&config, &s, cv_reps)?;
    let report = run_experiment(&spec, &thresholds)?;
    let mut out = writer(s.output.as_deref())?;
    let value = serde_json::to_value(&report).map_err(|e| CliError::Data(Error::Io(e.into())))?;
    write_line(&mut out, &value)?;
    Ok(EXIT_OK)
}
