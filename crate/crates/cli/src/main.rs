//! `cachesel`: run simulations, parameter grids and trace statistics.

mod input;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cachesel::config::SystemConfig;
use cachesel::report::{ads_csv, requests_csv, testbed_csv, SimReport, SUMMARY_COLUMNS};
use cachesel::sim::{LogOptions, Simulation};
use cachesel::trace::{trace_stats, TraceSource};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use thiserror::Error;

use input::{apply_override, load_config, parse_assignment, parse_zipf, split_values};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Io(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("simulation failed: {0}")]
    Sim(String),
}

impl CliError {
    fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) | CliError::Sim(_) => 1,
        }
    }
}

#[derive(Parser)]
#[command(name = "cachesel", version, about = "Multi-cache indicator advertisement and selection simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write its report.
    Simulate(SimulateArgs),
    /// Run the Cartesian product of parameter values, one directory per cell.
    Grid(GridArgs),
    /// Print request and inter-arrival statistics of a trace.
    Stats(TraceArgs),
}

#[derive(Args)]
struct TraceArgs {
    /// Trace file, one key per line.
    #[arg(long, conflicts_with = "zipf")]
    trace: Option<PathBuf>,
    /// Synthetic Zipf trace: universe,exponent,length,seed.
    #[arg(long)]
    zipf: Option<String>,
}

impl TraceArgs {
    fn source(&self) -> Result<Option<TraceSource>, CliError> {
        match (&self.trace, &self.zipf) {
            (Some(path), _) => Ok(Some(TraceSource::File { path: path.clone() })),
            (None, Some(spec)) => parse_zipf(spec).map(Some),
            (None, None) => Ok(None),
        }
    }
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML config, or a report.json from an earlier run.
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    trace: TraceArgs,
    #[arg(long, value_parser = ["salsa2", "static"])]
    policy: Option<String>,
    #[arg(long, value_parser = ["exhaustive", "greedy"])]
    selection: Option<String>,
    /// Delta loss probability.
    #[arg(long)]
    loss: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Override any config field, e.g. `--set budget=200`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<(SystemConfig, TraceSource), CliError> {
        let (mut config, embedded) = load_config(&self.config)?;
        let mut overrides: Vec<(String, String)> = Vec::new();
        for (key, value) in [("policy", &self.policy), ("selection", &self.selection)] {
            if let Some(v) = value {
                overrides.push((key.into(), v.clone()));
            }
        }
        if let Some(p) = self.loss {
            overrides.push(("delta_loss_probability".into(), p.to_string()));
        }
        if let Some(s) = self.seed {
            overrides.push(("rng_seed".into(), s.to_string()));
        }
        for spec in &self.sets {
            let (k, v) = parse_assignment(spec)?;
            overrides.push((k.into(), v.into()));
        }
        for (k, v) in &overrides {
            config = apply_override(&config, k, v)?;
        }
        let source = self
            .trace
            .source()?
            .or(embedded)
            .ok_or_else(|| CliError::Config("no trace: pass --trace or --zipf".into()))?;
        Ok((config, source))
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Also write per-request, per-advertisement and testbed event logs.
    #[arg(long)]
    events: bool,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// `key=v1,v2,...`; repeat for more dimensions.
    #[arg(long, required = true, value_name = "KEY=VALUES")]
    vary: Vec<String>,
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    jobs: Option<usize>,
}

fn load_trace(source: &TraceSource) -> Result<Vec<u64>, CliError> {
    source.load().map_err(|e| match e {
        cachesel::trace::TraceError::InvalidZipf(_) => CliError::Config(e.to_string()),
        other => CliError::Io(other.to_string()),
    })
}

fn validate(config: &SystemConfig) -> Result<(), CliError> {
    config.validate().map_err(|e| CliError::Config(e.to_string()))
}

/// Writes through a temporary file in the same directory, then renames.
fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    use std::io::Write;
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(contents.as_bytes()).map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Runs one simulation and writes its report files to `out`.
fn run_into(config: &SystemConfig, trace: &[u64], source: &TraceSource, out: &Path, events: bool) -> Result<SimReport, CliError> {
    let logs = if events { LogOptions::all() } else { LogOptions::default() };
    let mut sim = Simulation::new(config, logs).map_err(|e| CliError::Sim(e.to_string()))?;
    for &key in trace {
        sim.process_request(key).map_err(|e| CliError::Sim(e.to_string()))?;
    }
    let report = sim.report().with_trace(source.clone());
    create_dir(out)?;
    write_atomic(&out.join("report.json"), &report.to_json())?;
    write_atomic(&out.join("report.csv"), &report.to_csv())?;
    if events {
        write_atomic(&out.join("requests.csv"), &requests_csv(sim.request_log()))?;
        write_atomic(&out.join("ads.csv"), &ads_csv(sim.ad_log()))?;
        if !sim.testbed_series().is_empty() {
            write_atomic(&out.join("testbed.csv"), &testbed_csv(sim.testbed_series()))?;
        }
    }
    Ok(report)
}

fn summary_line(r: &SimReport) -> String {
    let full: u64 = r.caches.iter().map(|c| c.full_ads.total()).sum();
    let delta: u64 = r.caches.iter().map(|c| c.delta_ads).sum();
    format!(
        "requests={} normalized_cost={:.4} mean_cost={:.4} bits_per_request={:.3} hits={} full_ads={} delta_ads={}",
        r.request_count, r.normalized_service_cost, r.mean_service_cost, r.bits_per_request, r.hits, full, delta
    )
}

fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let (config, source) = args.config.load()?;
    validate(&config)?;
    let trace = load_trace(&source)?;
    let report = run_into(&config, &trace, &source, &args.out, args.events)?;
    println!("{}", summary_line(&report));
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn grid(args: &GridArgs) -> Result<(), CliError> {
    let (base, source) = args.config.load()?;
    let mut dims: Vec<(String, Vec<String>)> = Vec::new();
    for spec in &args.vary {
        let (k, v) = parse_assignment(spec)?;
        dims.push((k.to_string(), split_values(v)));
    }
    let mut cells: Vec<Vec<String>> = vec![Vec::new()];
    for (_, values) in &dims {
        cells = cells
            .iter()
            .flat_map(|prefix| values.iter().map(move |v| [prefix.clone(), vec![v.clone()]].concat()))
            .collect();
    }
    let configs: Vec<SystemConfig> = cells
        .iter()
        .map(|values| {
            let mut c = base.clone();
            for ((key, _), v) in dims.iter().zip(values) {
                c = apply_override(&c, key, v)?;
            }
            validate(&c).map_err(|e| CliError::Config(format!("cell {}: {e}", values.join(","))))?;
            Ok(c)
        })
        .collect::<Result<_, CliError>>()?;
    let trace = load_trace(&source)?;
    create_dir(&args.out)?;

    let run = || {
        configs
            .par_iter()
            .enumerate()
            .map(|(i, c)| run_into(c, &trace, &source, &args.out.join(format!("cell-{i:03}")), false))
            .collect::<Result<Vec<_>, _>>()
    };
    let reports = match args.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Sim(e.to_string()))?
            .install(run)?,
        None => run()?,
    };

    let mut csv = String::from("cell");
    for (key, _) in &dims {
        csv.push(',');
        csv.push_str(key);
    }
    for col in SUMMARY_COLUMNS {
        csv.push(',');
        csv.push_str(col);
    }
    csv.push('\n');
    for (i, (values, report)) in cells.iter().zip(&reports).enumerate() {
        let mut row = vec![format!("cell-{i:03}")];
        row.extend(values.iter().map(|v| csv_field(v)));
        row.extend(report.summary_values());
        let _ = writeln!(csv, "{}", row.join(","));
    }
    write_atomic(&args.out.join("grid.csv"), &csv)?;
    println!("{} cells written to {}", reports.len(), args.out.display());
    Ok(())
}

fn stats(args: &TraceArgs) -> Result<(), CliError> {
    let source = args.source()?.ok_or_else(|| CliError::Config("no trace: pass --trace or --zipf".into()))?;
    let trace = load_trace(&source)?;
    println!("{}", serde_json::to_string_pretty(&trace_stats(&trace)).expect("stats serialize"));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Grid(a) => grid(a),
        Command::Stats(a) => stats(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
