use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vtl_core::metrics::{compute_metrics_with, sweep_table};
use vtl_core::sim::SWEEP_PARAMETERS;
use vtl_core::{compare_receivers, load_scenario, LoadError, NodeId, Scenario, Trace};

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  2  invalid command-line usage
  3  input file missing or unreadable
  4  invalid scenario, trace, sweep parameter or node id
  5  output directory or file not writable";

#[derive(Parser)]
#[command(name = "vtl", version, about = "Virtual traffic light scenario runner", after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario; runs its sweep instead if it defines one or --sweep is given.
    #[command(after_help = EXIT_CODES)]
    Run(RunArgs),
    /// Run one trace per value of a swept parameter.
    #[command(after_help = EXIT_CODES)]
    Sweep(RunArgs),
    /// Compute metrics from a trace CSV.
    #[command(after_help = EXIT_CODES)]
    Metrics {
        #[arg(long)]
        trace: PathBuf,
        /// Also write metrics.csv and summary.txt here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare reception at two nodes of one trace.
    #[command(after_help = EXIT_CODES)]
    Compare {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        a: u32,
        #[arg(long)]
        b: u32,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Replace the scenario's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// `<parameter>=<v1,v2,...>`; parameters: distance, duration_s,
    /// advertising_interval_ms, state_period_ms, staleness_timeout_ms, duty_cycle.
    #[arg(long, value_parser = parse_sweep)]
    sweep: Option<(String, Vec<f64>)>,
}

fn parse_sweep(s: &str) -> Result<(String, Vec<f64>), String> {
    let (name, values) = s
        .split_once('=')
        .ok_or_else(|| "expected <parameter>=<v1,v2,...>".to_string())?;
    let values = values
        .split(',')
        .filter(|v| !v.trim().is_empty())
        .map(|v| v.trim().parse::<f64>().map_err(|_| format!("invalid value `{v}`")))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((name.trim().to_string(), values))
}

#[derive(Debug)]
enum CliError {
    Input(String),
    Invalid(String),
    Output(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Input(_) => 3,
            CliError::Invalid(_) => 4,
            CliError::Output(_) => 5,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Invalid(m) | CliError::Output(m) => m,
        }
    }
}

impl From<LoadError> for CliError {
    fn from(e: LoadError) -> Self {
        match e {
            LoadError::Io { .. } => CliError::Input(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Output(format!("cannot write {}: {e}", path.display())))
}

fn prepare_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Output(format!("cannot create {}: {e}", dir.display())))
}

fn receiver_comparisons(scenario: &Scenario, report: &vtl_core::MetricsReport) -> String {
    let ids: Vec<NodeId> = scenario.receivers.iter().map(|r| r.config.node_id).collect();
    let mut out = String::new();
    if let Some((first, rest)) = ids.split_first() {
        for other in rest {
            if let Ok(c) = compare_receivers(report, *first, *other) {
                out.push_str(&c.summary());
            }
        }
    }
    out
}

fn run_single(scenario: &Scenario, out: &Path) -> Result<String, CliError> {
    let trace = vtl_core::run(scenario).map_err(|e| CliError::Invalid(e.to_string()))?;
    let report = compute_metrics_with(&trace, &scenario.timing);
    let mut summary = report.summary();
    summary.push_str(&receiver_comparisons(scenario, &report));
    prepare_out(out)?;
    write(&out.join("trace.csv"), &trace.to_csv_string())?;
    write(&out.join("metrics.csv"), &report.to_csv_string())?;
    write(&out.join("summary.txt"), &summary)?;
    Ok(summary)
}

fn run_sweep(scenario: &Scenario, parameter: &str, values: &[f64], out: &Path) -> Result<String, CliError> {
    if !SWEEP_PARAMETERS.contains(&parameter) {
        return Err(CliError::Invalid(format!(
            "unknown sweep parameter `{parameter}` (expected one of {})",
            SWEEP_PARAMETERS.join(", ")
        )));
    }
    let runs = vtl_core::sweep(scenario, parameter, values).map_err(|e| CliError::Invalid(e.to_string()))?;
    prepare_out(out)?;
    let mut reports = Vec::new();
    let mut summary = String::new();
    for (value, trace) in &runs {
        write(
            &out.join(format!("trace_{parameter}_{value}.csv")),
            &trace.to_csv_string(),
        )?;
        let report = compute_metrics_with(trace, &scenario.timing);
        summary.push_str(&format!("== {parameter} = {value}\n"));
        summary.push_str(&report.summary());
        reports.push((*value, report));
    }
    let table = sweep_table(parameter, &reports);
    write(&out.join(format!("psr_vs_{parameter}.csv")), &table)?;
    write(&out.join("summary.txt"), &summary)?;
    Ok(table)
}

fn run_command(args: RunArgs, force_sweep: bool) -> Result<String, CliError> {
    let file = load_scenario(&args.scenario)?;
    let mut scenario = file.scenario;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    let sweep = args.sweep.or(file.sweep.map(|s| (s.parameter, s.values)));
    match sweep {
        Some((parameter, values)) => run_sweep(&scenario, &parameter, &values, &args.out),
        None if force_sweep => Err(CliError::Invalid(format!(
            "{} defines no [sweep] section and --sweep was not given",
            args.scenario.display()
        ))),
        None => run_single(&scenario, &args.out),
    }
}

fn read_trace(path: &Path) -> Result<Trace, CliError> {
    let file = fs::File::open(path).map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    Trace::read_csv(file).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

fn execute(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Run(args) => run_command(args, false),
        Command::Sweep(args) => run_command(args, true),
        Command::Metrics { trace, out } => {
            let report = vtl_core::compute_metrics(&read_trace(&trace)?);
            let summary = report.summary();
            if let Some(out) = out {
                prepare_out(&out)?;
                write(&out.join("metrics.csv"), &report.to_csv_string())?;
                write(&out.join("summary.txt"), &summary)?;
            }
            Ok(summary)
        }
        Command::Compare { trace, a, b } => {
            let report = vtl_core::compute_metrics(&read_trace(&trace)?);
            compare_receivers(&report, NodeId(a), NodeId(b))
                .map(|c| c.summary())
                .map_err(|e| CliError::Invalid(e.to_string()))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
