//! `liqdet` — trade-through extraction, marked-Hawkes fitting and CUSUM
//! liquidity-regime detection.
//!
//! Every run writes a manifest JSON (inputs, parameters, versions, seed) so
//! results can be reproduced byte-for-byte; see `--manifest`.
//!
//! Exit codes: 0 success, 1 data error (unreadable/malformed inputs, model
//! failures), 2 usage error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use liqdet_core::cusum::{
    arl_decrease, arl_increase, calibrate_threshold, run_two_sided, tilde_g, tilde_h,
    write_regimes_csv, Regime, TwoSidedConfig,
};
use liqdet_core::diagnostics::{gof_report, qq_data, residuals};
use liqdet_core::hawkes::fit::{fit_mle, FitOptions};
use liqdet_core::hawkes::{simulate, HawkesParams, MarkedEvent, Stream, DEFAULT_BASELINE_BINS};
use liqdet_core::lob::{
    filter_session, parse_book_csv, parse_trades_csv, write_book_csv, write_trades_csv,
    SessionWindow,
};
use liqdet_core::trades_through::{
    extract, parse_trades_through_csv, to_streams, write_trades_through_csv, Multiplicity,
    SideMode, TradeThrough,
};
use liqdet_core::verify::{check_reflected_convergence, mc_arl};
use liqdet_core::Error as CoreError;

#[derive(Parser)]
#[command(
    name = "liqdet",
    version,
    about = "Order-book trade-through modelling and liquidity regime detection",
    propagate_version = true
)]
struct Cli {
    /// Manifest path; defaults to `<first output>.manifest.json`, or
    /// `liqdet-manifest.json` for print-only commands.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate and normalize raw book/trade CSV files.
    Ingest(IngestArgs),
    /// Extract trade-through events from a book/trade session.
    Extract(ExtractArgs),
    /// Simulate marked events from a params file (thinning).
    Simulate(SimulateArgs),
    /// Fit model parameters to an event file by maximum likelihood.
    Fit(FitArgs),
    /// Goodness-of-fit via time-rescaling: KS, Ljung-Box, Q-Q data.
    Diagnose(DiagnoseArgs),
    /// Run the two-sided CUSUM detector over a session.
    Detect(DetectArgs),
    /// Evaluate average-run-length formulas (single point or CSV surface).
    Arl(ArlArgs),
    /// Find the threshold m whose run length meets a target.
    Calibrate(CalibrateArgs),
    /// Monte-Carlo verification oracles.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Book CSV: ts_ns,side,level,price_ticks,size.
    #[arg(long)]
    book: PathBuf,
    /// Trades CSV: ts_ns,price_ticks,size,aggressor.
    #[arg(long)]
    trades: PathBuf,
    /// Displayed depth K retained per side.
    #[arg(long, default_value_t = 4)]
    depth: usize,
    /// Trading window HH:MM:SS-HH:MM:SS; rows outside are dropped.
    #[arg(long)]
    session: Option<String>,
    /// Normalized book output; omit to only validate.
    #[arg(long)]
    out_book: Option<PathBuf>,
    /// Normalized trades output; omit to only validate.
    #[arg(long)]
    out_trades: Option<PathBuf>,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    book: PathBuf,
    #[arg(long)]
    trades: PathBuf,
    #[arg(long, default_value_t = 4)]
    depth: usize,
    #[arg(long)]
    session: Option<String>,
    /// Side filter for the optional stream output.
    #[arg(long, value_enum, default_value_t = ModeArg::Both)]
    mode: ModeArg,
    /// Jump convention for the optional stream output.
    #[arg(long, value_enum, default_value_t = MultiplicityArg::Ground)]
    multiplicity: MultiplicityArg,
    /// Trade-through events CSV: ts_ns,side,depth,volume.
    #[arg(long)]
    out: PathBuf,
    /// Optional detector-facing point stream: ts_ns,side,jump,mark.
    #[arg(long)]
    streams: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Model parameters JSON.
    #[arg(long)]
    params: PathBuf,
    /// Horizon in seconds; defaults to the params horizon.
    #[arg(long)]
    horizon: Option<f64>,
    /// RNG seed (runs are deterministic per seed).
    #[arg(long)]
    seed: u64,
    /// Event CSV out: time_s,stream,mark.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FitArgs {
    /// Events CSV: either ts_ns,side,depth,volume or time_s,stream,mark.
    #[arg(long)]
    events: PathBuf,
    /// Observation horizon in seconds.
    #[arg(long)]
    horizon: f64,
    /// Session time zero (HH:MM:SS) for nanosecond timestamps.
    #[arg(long, default_value = "09:30:00")]
    t0: String,
    /// Baseline bins per stream.
    #[arg(long, default_value_t = DEFAULT_BASELINE_BINS)]
    bins: usize,
    /// Mark-exponent profile grid, comma-separated.
    #[arg(long, default_value = "0,0.5,1")]
    eta_grid: String,
    /// Skip the joint polish of the mark exponents after the grid search.
    #[arg(long)]
    no_polish_eta: bool,
    #[arg(long, default_value_t = 250)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-3)]
    grad_tol: f64,
    /// Fitted parameters JSON out.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DiagnoseArgs {
    #[arg(long)]
    events: PathBuf,
    #[arg(long)]
    params: PathBuf,
    #[arg(long, default_value = "09:30:00")]
    t0: String,
    /// Ljung-Box lag count.
    #[arg(long, default_value_t = 20)]
    lags: usize,
    /// Report JSON out (statistics, p-values, pass flags at 1/2.5/5%).
    #[arg(long)]
    out: PathBuf,
    /// Q-Q plot data CSV out: stream,theoretical,sample.
    #[arg(long)]
    qq: Option<PathBuf>,
}

#[derive(Args)]
struct DetectArgs {
    /// Test-day trade-through CSV: ts_ns,side,depth,volume.
    #[arg(long)]
    events: PathBuf,
    /// Reference-day fitted parameters JSON (H0 intensity).
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long, default_value_t = 1.5)]
    rho_up: f64,
    #[arg(long, default_value_t = 0.5)]
    rho_down: f64,
    #[arg(long, default_value_t = 5.0)]
    m: f64,
    #[arg(long, value_enum, default_value_t = MultiplicityArg::Ground)]
    multiplicity: MultiplicityArg,
    /// Depth cap D for per-limit jumps.
    #[arg(long, default_value_t = 4)]
    max_jump: u32,
    /// Reference-day mean event depth for the per-limit compensator;
    /// defaults to the mean depth of the test-day events.
    #[arg(long)]
    mean_depth: Option<f64>,
    #[arg(long, default_value = "09:30:00")]
    t0: String,
    /// Regime series CSV out: ts_ns,U,U_tilde,U_hat,alarm,regime.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ArlArgs {
    /// Intensity ratio rho (< 1: decrease detector, > 1: increase).
    #[arg(long)]
    rho: Option<f64>,
    /// Threshold m.
    #[arg(long)]
    m: Option<f64>,
    /// Starting level of the reflected statistic.
    #[arg(long, default_value_t = 0.0)]
    from: f64,
    /// Print the post-change expected detection delay instead of the H0
    /// run length.
    #[arg(long)]
    delay: bool,
    /// Comma-separated rho values for a surface.
    #[arg(long)]
    rho_grid: Option<String>,
    /// m range start:stop:step for a surface.
    #[arg(long)]
    m_grid: Option<String>,
    /// Surface CSV out: rho,m,arl,delay.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    rho: f64,
    /// Target average run length (events to a false alarm).
    #[arg(long)]
    target: f64,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(subcommand)]
    command: VerifyCommand,
}

#[derive(Subcommand)]
enum VerifyCommand {
    /// Monte-Carlo run length vs the closed-form value.
    Arl {
        #[arg(long)]
        rho: f64,
        #[arg(long)]
        m: f64,
        #[arg(long, default_value_t = 10_000)]
        reps: usize,
        /// Constant H0 intensity of the simulated Poisson input.
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long)]
        seed: u64,
    },
    /// Epsilon-shift convergence of the reflected statistics.
    Epsilon {
        #[arg(long, default_value_t = 0.5)]
        rho_down: f64,
        #[arg(long, default_value_t = 1.5)]
        rho_up: f64,
        /// Strictly decreasing epsilon grid, comma-separated.
        #[arg(long, default_value = "0.1,0.05,0.01")]
        eps: String,
        #[arg(long, default_value_t = 1_000)]
        paths: usize,
        #[arg(long, default_value_t = 50.0)]
        horizon: f64,
        /// Simultaneous stream count D.
        #[arg(long, default_value_t = 4)]
        streams: usize,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        /// Mean-gap tolerance at the smallest epsilon.
        #[arg(long, default_value_t = 0.05)]
        tol: f64,
        #[arg(long)]
        seed: u64,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Bid,
    Ask,
    Both,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MultiplicityArg {
    Ground,
    PerLimit,
}

impl From<ModeArg> for SideMode {
    fn from(value: ModeArg) -> Self {
        match value {
            ModeArg::Bid => SideMode::Bid,
            ModeArg::Ask => SideMode::Ask,
            ModeArg::Both => SideMode::Both,
        }
    }
}

impl From<MultiplicityArg> for Multiplicity {
    fn from(value: MultiplicityArg) -> Self {
        match value {
            MultiplicityArg::Ground => Multiplicity::Ground,
            MultiplicityArg::PerLimit => Multiplicity::PerLimit,
        }
    }
}

const USAGE_EXIT: u8 = 2;
const DATA_EXIT: u8 = 1;

/// An argument combination clap cannot express; reported like clap's own
/// usage errors (exit 2).
struct UsageError(String);

enum RunError {
    Usage(String),
    Data(anyhow::Error),
}

impl From<UsageError> for RunError {
    fn from(value: UsageError) -> Self {
        RunError::Usage(value.0)
    }
}

impl From<anyhow::Error> for RunError {
    fn from(value: anyhow::Error) -> Self {
        RunError::Data(value)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse(); // unknown flags / missing args: clap exits 2
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(RunError::Usage(message)) => {
            eprintln!("usage error: {message}");
            ExitCode::from(USAGE_EXIT)
        }
        Err(RunError::Data(error)) => {
            eprintln!("error: {error:#}");
            ExitCode::from(DATA_EXIT)
        }
    }
}

fn run(cli: Cli) -> Result<(), RunError> {
    match cli.command {
        Command::Ingest(args) => cmd_ingest(args, cli.manifest),
        Command::Extract(args) => cmd_extract(args, cli.manifest),
        Command::Simulate(args) => cmd_simulate(args, cli.manifest),
        Command::Fit(args) => cmd_fit(args, cli.manifest),
        Command::Diagnose(args) => cmd_diagnose(args, cli.manifest),
        Command::Detect(args) => cmd_detect(args, cli.manifest),
        Command::Arl(args) => cmd_arl(args, cli.manifest),
        Command::Calibrate(args) => cmd_calibrate(args, cli.manifest),
        Command::Verify(args) => cmd_verify(args, cli.manifest),
    }
}

// ---------------------------------------------------------------------------
// Manifest

fn write_manifest(
    explicit: Option<PathBuf>,
    primary_output: Option<&Path>,
    subcommand: &str,
    args: serde_json::Value,
    seed: Option<u64>,
) -> anyhow::Result<()> {
    let path = explicit.unwrap_or_else(|| match primary_output {
        Some(out) => {
            let mut name = out.as_os_str().to_owned();
            name.push(".manifest.json");
            PathBuf::from(name)
        }
        None => PathBuf::from("liqdet-manifest.json"),
    });
    // serde_json maps are sorted; combined with the absence of timestamps
    // this keeps reruns byte-identical.
    let manifest = json!({
        "schema": 1,
        "tool": "liqdet",
        "version": env!("CARGO_PKG_VERSION"),
        "subcommand": subcommand,
        "args": args,
        "seed": seed,
    });
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    fs::write(&path, text).with_context(|| format!("writing manifest {}", path.display()))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Shared input handling

fn parse_hms_ns(text: &str) -> Result<i64, UsageError> {
    let parts: Vec<&str> = text.split(':').collect();
    let bad = || UsageError(format!("expected HH:MM:SS, got '{text}'"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let h: i64 = parts[0].parse().map_err(|_| bad())?;
    let m: i64 = parts[1].parse().map_err(|_| bad())?;
    let s: i64 = parts[2].parse().map_err(|_| bad())?;
    if !(0..24).contains(&h) || !(0..60).contains(&m) || !(0..60).contains(&s) {
        return Err(bad());
    }
    Ok(((h * 60 + m) * 60 + s) * 1_000_000_000)
}

fn parse_session(text: &str) -> Result<SessionWindow, UsageError> {
    SessionWindow::parse(text).map_err(|e| UsageError(e.to_string()))
}

fn parse_f64_list(text: &str, flag: &str) -> Result<Vec<f64>, UsageError> {
    text.split(',')
        .map(|part| {
            part.trim()
                .parse::<f64>()
                .map_err(|_| UsageError(format!("{flag}: '{part}' is not a number")))
        })
        .collect()
}

/// `start:stop:step` inclusive range.
fn parse_range(text: &str, flag: &str) -> Result<Vec<f64>, UsageError> {
    let parts: Vec<&str> = text.split(':').collect();
    let bad = |msg: &str| UsageError(format!("{flag}: {msg} (expected start:stop:step)"));
    if parts.len() != 3 {
        return Err(bad("wrong arity"));
    }
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| p.parse::<f64>().map_err(|_| bad("not a number")))
        .collect::<Result<_, _>>()?;
    let (start, stop, step) = (nums[0], nums[1], nums[2]);
    if !(step > 0.0) || stop < start {
        return Err(bad("need stop >= start and step > 0"));
    }
    let count = ((stop - start) / step).round() as usize + 1;
    Ok((0..count).map(|k| start + k as f64 * step).filter(|&x| x <= stop + 1e-12).collect())
}

fn mark_of(volume: u64) -> f64 {
    // Exponential marks have no mass at zero; clip at one share.
    (volume.max(1)) as f64
}

fn stream_of_side(side: i8) -> Stream {
    // +1 = bid side consumed, carried by stream B; -1 = ask side, stream A.
    if side == 1 {
        Stream::B
    } else {
        Stream::A
    }
}

/// Reads events in either accepted schema and converts to model time.
fn load_marked_events(path: &Path, t0_ns: i64) -> anyhow::Result<Vec<MarkedEvent>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let header = text.lines().next().unwrap_or("").trim();
    match header {
        "ts_ns,side,depth,volume" => {
            let events = parse_trades_through_csv(path)?;
            events
                .iter()
                .map(|e| {
                    if e.ts_ns < t0_ns {
                        bail!("event at ts_ns {} is before t0; pass the right --t0", e.ts_ns);
                    }
                    Ok(MarkedEvent {
                        time: (e.ts_ns - t0_ns) as f64 / 1e9,
                        stream: stream_of_side(e.side),
                        mark: mark_of(e.volume),
                    })
                })
                .collect()
        }
        "time_s,stream,mark" => {
            let mut events = Vec::new();
            for (idx, line) in text.lines().enumerate().skip(1) {
                let fields: Vec<&str> = line.split(',').collect();
                let line_no = idx + 1;
                if fields.len() != 3 {
                    bail!("{}:{line_no}: expected 3 fields", path.display());
                }
                let time: f64 = fields[0]
                    .parse()
                    .with_context(|| format!("{}:{line_no}: bad time", path.display()))?;
                let stream = match fields[1] {
                    "A" => Stream::A,
                    "B" => Stream::B,
                    other => bail!("{}:{line_no}: bad stream '{other}'", path.display()),
                };
                let mark: f64 = fields[2]
                    .parse()
                    .with_context(|| format!("{}:{line_no}: bad mark", path.display()))?;
                if !(mark > 0.0) {
                    bail!("{}:{line_no}: mark must be > 0", path.display());
                }
                events.push(MarkedEvent { time, stream, mark });
            }
            if events.windows(2).any(|w| w[1].time < w[0].time) {
                bail!("{}: events not time-sorted", path.display());
            }
            Ok(events)
        }
        other => bail!(
            "{}: unrecognized header '{other}' (expected ts_ns,side,depth,volume or time_s,stream,mark)",
            path.display()
        ),
    }
}

fn load_params(path: &Path) -> anyhow::Result<HawkesParams> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(HawkesParams::from_json(&text)?)
}

fn load_session_inputs(
    book: &Path,
    trades: &Path,
    depth: usize,
    session: Option<&SessionWindow>,
) -> anyhow::Result<(Vec<liqdet_core::lob::BookSnapshot>, Vec<liqdet_core::lob::TradePrint>)> {
    let snapshots = parse_book_csv(book, depth).with_context(|| format!("book {}", book.display()))?;
    let prints = parse_trades_csv(trades).with_context(|| format!("trades {}", trades.display()))?;
    Ok(match session {
        Some(window) => (
            filter_session(snapshots, |s| s.ts_ns, *window, |_| true),
            filter_session(prints, |p| p.ts_ns, *window, |_| true),
        ),
        None => (snapshots, prints),
    })
}

// ---------------------------------------------------------------------------
// Subcommands

fn cmd_ingest(args: IngestArgs, manifest: Option<PathBuf>) -> Result<(), RunError> {
    let window = args.session.as_deref().map(parse_session).transpose()?;
    let (snapshots, prints) =
        load_session_inputs(&args.book, &args.trades, args.depth, window.as_ref())?;
    if let Some(out) = &args.out_book {
        let file = fs::File::create(out).with_context(|| format!("creating {}", out.display()))?;
        write_book_csv(file, &snapshots).map_err(anyhow::Error::from)?;
    }
    if let Some(out) = &args.out_trades {
        let file = fs::File::create(out).with_context(|| format!("creating {}", out.display()))?;
        write_trades_csv(file, &prints).map_err(anyhow::Error::from)?;
    }
    println!("snapshots: {}", snapshots.len());
    println!("prints: {}", prints.len());
    write_manifest(
        manifest,
        args.out_book.as_deref().or(args.out_trades.as_deref()),
        "ingest",
        json!({
            "book": args.book,
            "trades": args.trades,
            "depth": args.depth,
            "session": args.session,
            "out_book": args.out_book,
            "out_trades": args.out_trades,
        }),
        None,
    )?;
    Ok(())
}

fn cmd_extract(args: ExtractArgs, manifest: Option<PathBuf>) -> Result<(), RunError> {
    let window = args.session.as_deref().map(parse_session).transpose()?;
    let (snapshots, prints) =
        load_session_inputs(&args.book, &args.trades, args.depth, window.as_ref())?;
    let events = extract(&snapshots, &prints).map_err(anyhow::Error::from)?;
    let file = fs::File::create(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    write_trades_through_csv(file, &events).map_err(anyhow::Error::from)?;
    if let Some(path) = &args.streams {
        let points = to_streams(&events, args.mode.into(), args.multiplicity.into());
        let mut text = String::from("ts_ns,side,jump,mark\n");
        for p in &points {
            text += &format!("{},{},{},{}\n", p.ts_ns, p.side, p.jump, p.mark);
        }
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    println!("trades-through: {}", events.len());
    write_manifest(
        manifest,
        Some(&args.out),
        "extract",
        json!({
            "book": args.book,
            "trades": args.trades,
            "depth": args.depth,
            "session": args.session,
            "mode": format!("{:?}", SideMode::from(args.mode)),
            "multiplicity": format!("{:?}", Multiplicity::from(args.multiplicity)),
            "out": args.out,
            "streams": args.streams,
        }),
        None,
    )?;
    Ok(())
}

fn cmd_simulate(args: SimulateArgs, manifest: Option<PathBuf>) -> Result<(), RunError> {
    let params = load_params(&args.params)?;
    let horizon = args.horizon.unwrap_or(params.horizon);
    let events = simulate(&params, horizon, args.seed).map_err(anyhow::Error::from)?;
    let mut text = String::from("time_s,stream,mark\n");
    for e in &events {
        let stream = match e.stream {
            Stream::A => "A",
            Stream::B => "B",
        };
        text += &format!("{},{stream},{}\n", e.time, e.mark);
    }
    fs::write(&args.out, text).with_context(|| format!("writing {}", args.out.display()))?;
    println!("events: {}", events.len());
    write_manifest(
        manifest,
        Some(&args.out),
        "simulate",
        json!({
            "params": args.params,
            "horizon": horizon,
            "out": args.out,
        }),
        Some(args.seed),
    )?;
    Ok(())
}

fn cmd_fit(args: FitArgs, manifest: Option<PathBuf>) -> Result<(), RunError> {
    if args.bins == 0 {
        return Err(UsageError("--bins must be >= 1".into()).into());
    }
    let t0_ns = parse_hms_ns(&args.t0)?;
    let eta_grid = parse_f64_list(&args.eta_grid, "--eta-grid")?;
    let events = load_marked_events(&args.events, t0_ns)?;

    // Flat initial guess: half the empirical rate as baseline, mild
    // self-excitation; the optimizer works in log space so any interior
    // point serves.
    let rate = |stream: Stream| {
        events.iter().filter(|e| e.stream == stream).count() as f64 / args.horizon
    };
    let init = HawkesParams {
        schema: 1,
        horizon: args.horizon,
        baseline_a: vec![(0.5 * rate(Stream::A)).max(1e-6); args.bins],
        baseline_b: vec![(0.5 * rate(Stream::B)).max(1e-6); args.bins],
        alpha: [[0.2, 0.05], [0.05, 0.2]],
        decay: [[1.0; 2]; 2],
        mark_exponent: [0.0, 0.0],
        mark_rate: [1.0, 1.0],
    };
    let opts = FitOptions {
        max_iters: args.max_iters,
        grad_tol: args.grad_tol,
        eta_grid,
        polish_eta: !args.no_polish_eta,
    };

    let outcome = fit_mle(&events, args.horizon, &init, &opts);
    let (params, diag, converged) = match outcome {
        Ok((params, diag)) => (params, diag, true),
        // Keep the best-so-far fit on disk for inspection, but fail the run.
        Err(CoreError::Nonconvergence { max_iters, log_likelihood, best }) => {
            fs::write(&args.out, best.to_json() + "\n")
                .with_context(|| format!("writing {}", args.out.display()))?;
            return Err(anyhow::anyhow!(
                "no convergence after {max_iters} iterations (log-likelihood {log_likelihood:.4}); \
                 best parameters written to {}",
                args.out.display()
            )
            .into());
        }
        Err(e) => return Err(anyhow::Error::from(e).into()),
    };
    fs::write(&args.out, params.to_json() + "\n")
        .with_context(|| format!("writing {}", args.out.display()))?;
    let summary = json!({
        "events": events.len(),
        "log_likelihood": diag.log_likelihood,
        "grad_norm": diag.grad_norm,
        "iterations": diag.iterations,
        "spectral_radius": diag.spectral_radius,
        "stable": diag.stable,
        "converged": converged,
    });
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary json"));
    write_manifest(
        manifest,
        Some(&args.out),
        "fit",
        json!({
            "events": args.events,
            "horizon": args.horizon,
            "t0": args.t0,
            "bins": args.bins,
            "eta_grid": args.eta_grid,
            "no_polish_eta": args.no_polish_eta,
            "max_iters": args.max_iters,
            "grad_tol": args.grad_tol,
            "out": args.out,
        }),
        None,
    )?;
    Ok(())
}

fn cmd_diagnose(args: DiagnoseArgs, manifest: Option<PathBuf>) -> Result<(), RunError> {
    let t0_ns = parse_hms_ns(&args.t0)?;
    let events = load_marked_events(&args.events, t0_ns)?;
    let params = load_params(&args.params)?;
    let report = gof_report(&events, &params, args.lags).map_err(anyhow::Error::from)?;
    let text = serde_json::to_string_pretty(&report).expect("report json") + "\n";
    fs::write(&args.out, &text).with_context(|| format!("writing {}", args.out.display()))?;
    print!("{text}");
    if let Some(path) = &args.qq {
        let series = residuals(&events, &params).map_err(anyhow::Error::from)?;
        let mut csv = String::from("stream,theoretical,sample\n");
        for (label, sample) in [
            ("A", series.stream(Stream::A).to_vec()),
            ("B", series.stream(Stream::B).to_vec()),
            ("pooled", series.pooled()),
        ] {
            for (theoretical, observed) in qq_data(&sample) {
                csv += &format!("{label},{theoretical},{observed}\n");
            }
        }
        fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?;
    }
    write_manifest(
        manifest,
        Some(&args.out),
        "diagnose",
        json!({
            "events": args.events,
            "params": args.params,
            "t0": args.t0,
            "lags": args.lags,
            "out": args.out,
            "qq": args.qq,
        }),
        None,
    )?;
    Ok(())
}

fn cmd_detect(args: DetectArgs, manifest: Option<PathBuf>) -> Result<(), RunError> {
    if !(args.rho_down < 1.0 && 1.0 < args.rho_up) {
        return Err(UsageError(format!(
            "need --rho-down < 1 < --rho-up, got {} and {}",
            args.rho_down, args.rho_up
        ))
        .into());
    }
    let t0_ns = parse_hms_ns(&args.t0)?;
    let events: Vec<TradeThrough> = parse_trades_through_csv(&args.events)
        .with_context(|| format!("events {}", args.events.display()))?;
    let ref_params = load_params(&args.reference)?;
    let mean_depth = match args.mean_depth {
        Some(value) if value >= 1.0 => value,
        Some(value) => {
            return Err(UsageError(format!("--mean-depth must be >= 1, got {value}")).into())
        }
        None if events.is_empty() => 1.0,
        None => events.iter().map(|e| e.depth as f64).sum::<f64>() / events.len() as f64,
    };
    let config = TwoSidedConfig {
        rho_up: args.rho_up,
        rho_down: args.rho_down,
        m: args.m,
        multiplicity: args.multiplicity.into(),
        mean_depth,
        max_jump: args.max_jump,
    };
    let report = run_two_sided(&events, t0_ns, &ref_params, &config).map_err(anyhow::Error::from)?;
    let file = fs::File::create(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    write_regimes_csv(file, &report).map_err(anyhow::Error::from)?;
    let ups = report.alarms.iter().filter(|a| a.direction == liqdet_core::cusum::Direction::Up).count();
    let downs = report.alarms.len() - ups;
    let final_regime = report
        .rows
        .last()
        .map(|row| match row.regime {
            Regime::Neutral => "NEUTRAL",
            Regime::Up => "UP",
            Regime::Down => "DOWN",
        })
        .unwrap_or("NEUTRAL");
    println!("events: {}", events.len());
    println!("alarms: {} up, {} down", ups, downs);
    println!("final regime: {final_regime}");
    write_manifest(
        manifest,
        Some(&args.out),
        "detect",
        json!({
            "events": args.events,
            "ref": args.reference,
            "rho_up": args.rho_up,
            "rho_down": args.rho_down,
            "m": args.m,
            "multiplicity": format!("{:?}", Multiplicity::from(args.multiplicity)),
            "max_jump": args.max_jump,
            "mean_depth": mean_depth,
            "t0": args.t0,
            "out": args.out,
        }),
        None,
    )?;
    Ok(())
}

fn arl_point(from: f64, m: f64, rho: f64, delay: bool) -> liqdet_core::Result<f64> {
    match (rho < 1.0, delay) {
        (true, false) => arl_decrease(from, m, rho),
        (true, true) => tilde_g(from, m, rho),
        (false, false) => arl_increase(from, m, rho),
        (false, true) => tilde_h(from, m, rho),
    }
}

fn cmd_arl(args: ArlArgs, manifest: Option<PathBuf>) -> Result<(), RunError> {
    let surface = args.rho_grid.is_some() || args.m_grid.is_some();
    if surface {
        let (Some(rho_grid), Some(m_grid), Some(out)) =
            (args.rho_grid.as_deref(), args.m_grid.as_deref(), args.out.as_ref())
        else {
            return Err(UsageError(
                "surface mode needs --rho-grid, --m-grid and --out together".into(),
            )
            .into());
        };
        let rhos = parse_f64_list(rho_grid, "--rho-grid")?;
        let ms = parse_range(m_grid, "--m-grid")?;
        let mut csv = String::from("rho,m,arl,delay\n");
        for &rho in &rhos {
            for &m in &ms {
                let arl = arl_point(args.from, m, rho, false).map_err(anyhow::Error::from)?;
                let delay = arl_point(args.from, m, rho, true).map_err(anyhow::Error::from)?;
                csv += &format!("{rho},{m},{arl},{delay}\n");
            }
        }
        fs::write(out, csv).with_context(|| format!("writing {}", out.display()))?;
        println!("surface: {} rho x {} m -> {}", rhos.len(), ms.len(), out.display());
    } else {
        let (Some(rho), Some(m)) = (args.rho, args.m) else {
            return Err(UsageError("need --rho and --m (or the grid flags)".into()).into());
        };
        let value = arl_point(args.from, m, rho, args.delay).map_err(anyhow::Error::from)?;
        println!("{value:.6}");
    }
    write_manifest(
        manifest,
        args.out.as_deref(),
        "arl",
        json!({
            "rho": args.rho,
            "m": args.m,
            "from": args.from,
            "delay": args.delay,
            "rho_grid": args.rho_grid,
            "m_grid": args.m_grid,
            "out": args.out,
        }),
        None,
    )?;
    Ok(())
}

fn cmd_calibrate(args: CalibrateArgs, manifest: Option<PathBuf>) -> Result<(), RunError> {
    if !(args.target > 0.0) {
        return Err(UsageError("--target must be > 0".into()).into());
    }
    let m = calibrate_threshold(args.target, args.rho).map_err(anyhow::Error::from)?;
    println!("{m:.6}");
    write_manifest(
        manifest,
        None,
        "calibrate",
        json!({ "rho": args.rho, "target": args.target }),
        None,
    )?;
    Ok(())
}

fn cmd_verify(args: VerifyArgs, manifest: Option<PathBuf>) -> Result<(), RunError> {
    match args.command {
        VerifyCommand::Arl { rho, m, reps, lambda, seed } => {
            let (mean, se) = mc_arl(rho, m, lambda, reps, seed).map_err(anyhow::Error::from)?;
            let closed = arl_point(0.0, m, rho, false).map_err(anyhow::Error::from)?;
            println!("monte-carlo: {mean:.4} +/- {se:.4} ({reps} reps)");
            println!("closed form: {closed:.4}");
            println!("relative gap: {:+.4}%", 100.0 * (mean - closed) / closed);
            write_manifest(
                manifest,
                None,
                "verify arl",
                json!({ "rho": rho, "m": m, "reps": reps, "lambda": lambda }),
                Some(seed),
            )?;
            Ok(())
        }
        VerifyCommand::Epsilon {
            rho_down,
            rho_up,
            eps,
            paths,
            horizon,
            streams,
            lambda,
            tol,
            seed,
        } => {
            let grid = parse_f64_list(&eps, "--eps")?;
            let report = check_reflected_convergence(
                rho_down, rho_up, lambda, horizon, streams, &grid, paths, seed, tol,
            )
            .map_err(anyhow::Error::from)?;
            for point in &report.points {
                println!(
                    "eps {:>8}: |dU~| {:.5} +/- {:.5}  |dU^| {:.5} +/- {:.5}  collisions {:.3}",
                    point.eps,
                    point.mean_gap_down,
                    point.se_down,
                    point.mean_gap_up,
                    point.se_up,
                    point.collision_rate
                );
            }
            println!(
                "decreasing: {}  final below {tol}: {}",
                report.decreasing, report.final_below_tol
            );
            write_manifest(
                manifest,
                None,
                "verify epsilon",
                json!({
                    "rho_down": rho_down,
                    "rho_up": rho_up,
                    "eps": eps,
                    "paths": paths,
                    "horizon": horizon,
                    "streams": streams,
                    "lambda": lambda,
                    "tol": tol,
                }),
                Some(seed),
            )?;
            if !(report.decreasing && report.final_below_tol) {
                return Err(anyhow::anyhow!("epsilon-shift convergence check failed").into());
            }
            Ok(())
        }
    }
}
