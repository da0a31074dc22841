//! `aerial-ndt` command-line front end.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use aerial_ndt::metrics::{
    compare, compute_metrics, metrics_to_string, parse_metrics, MetricsRecord, Outcome, RunMetrics,
};
use aerial_ndt::mission::Phase;
use aerial_ndt::observer::{default_masses, identification_experiment, identify_cf, write_id_dataset};
use aerial_ndt::scenario::Scenario;
use aerial_ndt::scheduler::{run, RunLog};
use aerial_ndt::telemetry::{log_to_string, parse_log};
use aerial_ndt::Error;
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

#[derive(Parser)]
#[command(name = "aerial-ndt", version, about = "Contact-based ultrasonic inspection simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fly an inspection mission and write log.csv, metrics.csv and summary.txt.
    Run(RunArgs),
    /// Hover with several payload masses and fit the thrust coefficient.
    Identify(IdentifyArgs),
    /// Recompute metrics from a log, optionally against a baseline.
    Metrics(MetricsArgs),
}

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario TOML file; built-in defaults when omitted.
    scenario: Option<PathBuf>,
    /// Override a scenario key, e.g. `--set mission.f_desired=3.0`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Run this many consecutive seeds in parallel.
    #[arg(long, default_value_t = 1)]
    repeat: u64,
    /// Log rate in Hz; the physics rate gives the full-rate log.
    #[arg(long)]
    log_rate: Option<f64>,
}

#[derive(Args)]
struct IdentifyArgs {
    #[command(flatten)]
    scenario: ScenarioArgs,
    /// Payload masses in kg; defaults to the nominal mass plus 0 to 400 g.
    #[arg(long, value_delimiter = ',')]
    masses: Vec<f64>,
    /// Hover duration per mass, s.
    #[arg(long, default_value_t = 10.0)]
    duration: f64,
}

#[derive(Args)]
struct MetricsArgs {
    /// Log written by `run`.
    log: PathBuf,
    /// Metrics CSV to compare against (any subset of columns).
    #[arg(long)]
    baseline: Option<PathBuf>,
    /// Absolute tolerance for every compared column.
    #[arg(long, default_value_t = 0.05)]
    tol: f64,
    /// Per-column tolerance, e.g. `--tol-for rmse_z=0.02`.
    #[arg(long = "tol-for", value_name = "COLUMN=TOL")]
    tol_for: Vec<String>,
    /// Also write metrics.csv into this directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A failed command: exit code and message.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::Schema(_) | Error::Io(_) | Error::InvalidPose(_) => 2,
            _ => 3,
        };
        Failure { code, message: e.to_string() }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure { code: 2, message: format!("{}: {e}", path.display()) }
}

type CmdResult = Result<u8, Failure>;

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| io_failure(path, e))
}

fn load_scenario(args: &ScenarioArgs, extra: &[String]) -> Result<(Scenario, Vec<&'static str>), Failure> {
    let text = match &args.scenario {
        Some(p) => fs::read_to_string(p).map_err(|e| io_failure(p, e))?,
        None => String::new(),
    };
    let mut overrides = args.set.clone();
    if let Some(seed) = args.seed {
        overrides.push(format!("run.seed={seed}"));
    }
    overrides.extend_from_slice(extra);
    let scenario = Scenario::from_toml_str(&text, &overrides).map_err(|e| {
        let origin = args.scenario.as_ref().map_or("defaults".into(), |p| p.display().to_string());
        Failure { code: 2, message: format!("{origin}: {e}") }
    })?;
    Ok((scenario, Scenario::defaulted_keys(&text, &overrides)))
}

fn outcome_of(log: &RunLog) -> Outcome {
    match log.mission.phase {
        Phase::Done => Outcome::Success,
        Phase::Aborted => Outcome::Aborted,
        _ => Outcome::Incomplete,
    }
}

/// Metrics of a run, or an outcome-only record when contact never happened.
fn run_metrics(log: &RunLog) -> Result<(Option<RunMetrics>, MetricsRecord), Failure> {
    match compute_metrics(&log.rows) {
        Ok(m) => {
            let rec = m.to_record();
            Ok((Some(m), rec))
        }
        Err(Error::NoContactPhase) => {
            Ok((None, MetricsRecord { outcome: Some(outcome_of(log)), ..Default::default() }))
        }
        Err(e) => Err(e.into()),
    }
}

fn timeline(log: &RunLog) -> String {
    let mut s = String::new();
    for (t, phase) in &log.timeline {
        let number = phase.number().map_or("-".into(), |n| n.to_string());
        let _ = writeln!(s, "{t:8.2} s  {number:>2}  {}", phase.name());
    }
    s
}

fn run_summary(scenario: &Scenario, defaulted: &[&str], log: &RunLog, metrics: Option<&RunMetrics>) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "seed                  {}", scenario.run.seed);
    let _ = writeln!(s, "vehicle mass          {} kg", scenario.vehicle.m);
    if !defaulted.is_empty() {
        let _ = writeln!(s, "defaults used         {}", defaulted.join(", "));
    }
    let _ = writeln!(s, "\nphase timeline\n{}", timeline(log));
    if let Some(reason) = &log.mission.abort_reason {
        let _ = writeln!(s, "abort reason          {reason}");
    }
    for w in &log.warnings {
        let _ = writeln!(s, "warning               {w}");
    }
    let _ = writeln!(s, "bias                  {:.4} {:.4} {:.4} N", log.bias.x, log.bias.y, log.bias.z);
    match metrics {
        Some(m) => s += &m.summary(),
        None => {
            let _ = writeln!(s, "outcome               {}", outcome_of(log).name());
            let _ = writeln!(s, "contact never latched; no contact metrics");
        }
    }
    s
}

fn status(outcome: Outcome) -> u8 {
    match outcome {
        Outcome::Success => 0,
        Outcome::Aborted | Outcome::Incomplete => 1,
    }
}

fn cmd_run(args: &RunArgs) -> CmdResult {
    let extra: Vec<String> = args.log_rate.map(|r| format!("run.log_rate={r}")).into_iter().collect();
    let (scenario, defaulted) = load_scenario(&args.scenario, &extra)?;
    if args.repeat == 0 {
        return Err(Failure { code: 2, message: "--repeat must be at least 1".into() });
    }
    let out = &args.scenario.out;
    fs::create_dir_all(out).map_err(|e| io_failure(out, e))?;

    if args.repeat == 1 {
        let log = run(&scenario)?;
        let (metrics, record) = run_metrics(&log)?;
        write(&out.join("log.csv"), &log_to_string(&log.rows))?;
        write(&out.join("metrics.csv"), &metrics_to_string(std::slice::from_ref(&record)))?;
        let summary = run_summary(&scenario, &defaulted, &log, metrics.as_ref());
        write(&out.join("summary.txt"), &summary)?;
        print!("{summary}");
        return Ok(status(record.outcome.unwrap_or(Outcome::Incomplete)));
    }

    let base = scenario.run.seed;
    log::info!("running {} seeds from {base}", args.repeat);
    let seeds: Vec<u64> = (0..args.repeat).map(|k| base.wrapping_add(k)).collect();
    let runs: Vec<Result<(u64, RunLog), Error>> = seeds
        .par_iter()
        .map(|&seed| {
            let mut s = scenario.clone();
            s.run.seed = seed;
            run(&s).map(|log| (seed, log))
        })
        .collect();

    let mut records = Vec::new();
    let mut pooled = Vec::new();
    let mut summary = String::new();
    let mut code = 0;
    for result in runs {
        let (seed, log) = result?;
        let (metrics, mut record) = run_metrics(&log)?;
        record.seed = Some(seed);
        write(&out.join(format!("log_seed{seed}.csv")), &log_to_string(&log.rows))?;
        let outcome = record.outcome.unwrap_or(Outcome::Incomplete);
        code = code.max(status(outcome));
        let reason = log.mission.abort_reason.as_deref().unwrap_or("");
        let _ = writeln!(summary, "seed {seed:>6}  {:<10} {reason}", outcome.name());
        if let Some(m) = metrics {
            pooled.extend(m.thickness);
        }
        records.push(record);
    }
    if pooled.len() > 1 {
        let n = pooled.len() as f64;
        let mean = pooled.iter().sum::<f64>() / n;
        let sd = (pooled.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let _ = writeln!(summary, "thickness over batch  {mean:.4} mm ± {sd:.4} mm ({} readings)", pooled.len());
    }
    write(&out.join("metrics.csv"), &metrics_to_string(&records))?;
    write(&out.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(code)
}

fn cmd_identify(args: &IdentifyArgs) -> CmdResult {
    let (scenario, _) = load_scenario(&args.scenario, &[])?;
    let masses = if args.masses.is_empty() { default_masses(scenario.vehicle.m) } else { args.masses.clone() };
    let out = &args.scenario.out;
    fs::create_dir_all(out).map_err(|e| io_failure(out, e))?;
    log::info!("identification hover with {} masses", masses.len());
    let data = identification_experiment(&scenario, &masses, args.duration)?;
    let (c_f, residual) = identify_cf(&data, &scenario.vehicle.z_p)?;
    let mut csv = Vec::new();
    write_id_dataset(&data, &mut csv)?;
    fs::write(out.join("id_dataset.csv"), csv).map_err(|e| io_failure(out, e))?;
    let truth = scenario.vehicle.c_f;
    let mut s = String::new();
    let listed: Vec<String> = masses.iter().map(|m| format!("{m:.3}")).collect();
    let _ = writeln!(s, "masses                {} kg", listed.join(", "));
    let _ = writeln!(s, "c_f estimate          {c_f:.9e}");
    let _ = writeln!(s, "c_f configured        {truth:.9e}");
    let _ = writeln!(s, "relative error        {:.3e}", ((c_f - truth) / truth).abs());
    let _ = writeln!(s, "rms force residual    {residual:.3e} N");
    write(&out.join("identify.txt"), &s)?;
    print!("{s}");
    Ok(0)
}

fn parse_tolerances(default: f64, specific: &[String]) -> Result<impl Fn(&str) -> f64, Failure> {
    let mut table = Vec::new();
    for item in specific {
        let bad = || Failure { code: 2, message: format!("--tol-for `{item}` is not COLUMN=TOL") };
        let (k, v) = item.split_once('=').ok_or_else(bad)?;
        let v: f64 = v.trim().parse().map_err(|_| bad())?;
        table.push((k.trim().to_string(), v));
    }
    Ok(move |col: &str| table.iter().rev().find(|(k, _)| k == col).map_or(default, |(_, v)| *v))
}

fn cmd_metrics(args: &MetricsArgs) -> CmdResult {
    let text = fs::read_to_string(&args.log).map_err(|e| io_failure(&args.log, e))?;
    let rows = parse_log(&text)?;
    let (metrics, record) = match compute_metrics(&rows) {
        Ok(m) => {
            let r = m.to_record();
            (Some(m), r)
        }
        Err(Error::NoContactPhase) => {
            let outcome = match rows.last().map(|r| r.phase) {
                Some(Phase::Done) => Outcome::Success,
                Some(Phase::Aborted) => Outcome::Aborted,
                _ => Outcome::Incomplete,
            };
            (None, MetricsRecord { outcome: Some(outcome), ..Default::default() })
        }
        Err(e) => return Err(e.into()),
    };
    let csv = metrics_to_string(std::slice::from_ref(&record));
    if let Some(out) = &args.out {
        fs::create_dir_all(out).map_err(|e| io_failure(out, e))?;
        write(&out.join("metrics.csv"), &csv)?;
    }
    match &metrics {
        Some(m) => print!("{}", m.summary()),
        None => println!("contact never latched; no contact metrics"),
    }
    print!("{csv}");

    let Some(path) = &args.baseline else {
        return Ok(0);
    };
    let base_text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
    let baseline = parse_metrics(&base_text)?;
    let tol = parse_tolerances(args.tol, &args.tol_for)?;
    let mut all_pass = true;
    println!("\n{:<24} {:>12} {:>12} {:>12} {:>10}", "column", "value", "baseline", "delta", "result");
    for d in compare(&record, &baseline[0], 0.0) {
        let t = tol(&d.column);
        let pass = (d.value - d.baseline).abs() <= t;
        all_pass &= pass;
        println!(
            "{:<24} {:>12.5} {:>12.5} {:>12.5} {:>10}",
            d.column,
            d.value,
            d.baseline,
            d.value - d.baseline,
            if pass { "pass" } else { "FAIL" }
        );
    }
    Ok(if all_pass { 0 } else { 1 })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Identify(a) => cmd_identify(a),
        Command::Metrics(a) => cmd_metrics(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
