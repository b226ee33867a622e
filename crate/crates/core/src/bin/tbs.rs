//! Command-line driver: simulate experiments from JSON specs, evaluate the
//! closed forms, optimize configurations, re-render persisted run records,
//! and emit plot data.
//!
//! Exit codes: 0 success, 1 configuration/usage error, 2 runtime failure.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use temporal_bell::geometry::{Config, Outcome, SettingLabel};
use temporal_bell::harness::{
    analyze_records, report_from_records, resolve_seed, run_experiment, write_sweep_csv,
    ExperimentSpec, RunOptions,
};
use temporal_bell::inequality::{
    eval_expect_10, eval_prob_7, eval_prob_8, eval_quantum_16, eval_quantum_18, ExactPairProbs,
    ExpectationEstimate, InequalityReport,
};
use temporal_bell::optimize::{
    grid_search, local_refine, multi_start, Objective, OptimizationResult,
};
use temporal_bell::quantum::StatePrep;
use temporal_bell::records::{read_run_records_file, write_run_records_file};
use temporal_bell::{Error, Result};

#[derive(Parser)]
#[command(
    name = "tbs",
    version,
    about = "Temporal Bell inequality simulator and exact evaluator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a JSON spec and persist records + report
    Simulate(SimulateArgs),
    /// Evaluate every inequality's closed form for a configuration
    Exact(ExactArgs),
    /// Search measurement configurations maximizing a closed-form objective
    Optimize(OptimizeArgs),
    /// Re-render analysis from persisted run records
    Report(ReportArgs),
    /// Emit plot data for the symmetric coplanar configuration family
    Sweep(SweepArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Experiment spec (JSON file)
    #[arg(long)]
    spec: PathBuf,
    /// Seed override (precedence: this flag, spec, TBS_SEED, 0)
    #[arg(long)]
    seed: Option<u64>,
    /// Run-count override
    #[arg(long)]
    runs: Option<u64>,
    /// Output directory (default: the spec's out_dir, else ".")
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Report format: json writes report.json, csv writes per-series count
    /// tables; run records are always written as records.csv
    #[arg(long, value_enum, default_value_t = SimFormat::Json)]
    format: SimFormat,
    /// Worker threads (results are identical for any worker count)
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SimFormat {
    Json,
    Csv,
}

#[derive(Args)]
struct ExactArgs {
    /// Measurement configuration (JSON file with directions a, b, c)
    #[arg(long)]
    config: PathBuf,
    /// State preparation (JSON file); default: the a-axis +1 eigenstate
    #[arg(long)]
    prep: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ExactFormat::Text)]
    format: ExactFormat,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ExactFormat {
    Text,
    Json,
}

#[derive(Args)]
struct OptimizeArgs {
    /// Objective to maximize
    #[arg(long, value_enum)]
    objective: ObjectiveArg,
    /// Grid resolution in degrees (at most 10)
    #[arg(long, default_value_t = 1.0)]
    grid_deg: f64,
    /// Number of random refinement starts
    #[arg(long, default_value_t = 32)]
    starts: u32,
    /// Seed for the random starts (falls back to TBS_SEED, then 0)
    #[arg(long)]
    seed: Option<u64>,
    /// Refinement convergence tolerance
    #[arg(long, default_value_t = 1e-10)]
    tolerance: f64,
    /// Write the JSON result here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    #[value(name = "ineq16")]
    Ineq16,
    #[value(name = "ineq18")]
    Ineq18,
}

impl From<ObjectiveArg> for Objective {
    fn from(arg: ObjectiveArg) -> Objective {
        match arg {
            ObjectiveArg::Ineq16 => Objective::Ineq16,
            ObjectiveArg::Ineq18 => Objective::Ineq18,
        }
    }
}

#[derive(Args)]
struct ReportArgs {
    /// Run records (CSV file written by simulate)
    #[arg(long)]
    records: PathBuf,
    /// Original experiment spec; with it the full report is reproduced,
    /// without it the analysis is inferred from the records alone
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Seed echoed into the report (same precedence as simulate)
    #[arg(long)]
    seed: Option<u64>,
    /// Write the JSON result here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Angle step in degrees
    #[arg(long, default_value_t = 1.0)]
    step_deg: f64,
    /// Write the CSV here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Exact(args) => cmd_exact(args),
        Command::Optimize(args) => cmd_optimize(args),
        Command::Report(args) => cmd_report(args),
        Command::Sweep(args) => cmd_sweep(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(if err.is_configuration() { 1 } else { 2 })
        }
    }
}

/// Pretty JSON with a trailing newline; the one renderer every JSON artifact
/// goes through, so identical values give identical bytes.
fn render_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, text)?;
            println!("wrote {}", path.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn inequality_summary(report: &InequalityReport) -> String {
    let mut line = format!(
        "{:<10} lhs = {}, bound = {}, margin = {}",
        report.variant.name(),
        report.lhs,
        report.bound,
        report.margin
    );
    if let Some(z) = report.z_score {
        line.push_str(&format!(", z = {z:.2}"));
    }
    if report.insufficient_stats {
        line.push_str(", insufficient statistics");
    } else if report.violated {
        line.push_str(", VIOLATED");
    }
    line
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let started = Instant::now();
    let mut spec = ExperimentSpec::from_json_file(&args.spec)?;
    if let Some(runs) = args.runs {
        spec.n_runs = runs;
        spec.validate()?;
    }
    let seed = resolve_seed(args.seed, spec.seed)?;
    let out_dir = args
        .out_dir
        .or_else(|| spec.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)?;

    let options = RunOptions {
        workers: args.workers,
        keep_records: true,
    };
    let outcome = run_experiment(&spec, seed, &options)?;
    let records = outcome
        .records
        .as_ref()
        .expect("simulate keeps run records");

    let records_path = out_dir.join("records.csv");
    write_run_records_file(&records_path, records)?;
    let mut written = vec![records_path];
    match args.format {
        SimFormat::Json => {
            let path = out_dir.join("report.json");
            std::fs::write(&path, render_json(&outcome.report)?)?;
            written.push(path);
        }
        SimFormat::Csv => {
            for series in &outcome.report.series {
                let name = if series.label.is_empty() {
                    "counts.csv".to_string()
                } else {
                    format!("counts_{}.csv", series.label)
                };
                let path = out_dir.join(name);
                let file = std::fs::File::create(&path)?;
                series.table.write_csv(file)?;
                written.push(path);
            }
        }
    }

    // Console summary only; timing never enters the persisted artifacts.
    println!("seed: {seed}");
    println!(
        "runs: {} across {} series",
        outcome
            .report
            .series
            .iter()
            .map(|s| s.table.total_runs())
            .sum::<u64>(),
        outcome.report.series.len()
    );
    for report in &outcome.report.inequalities {
        println!("{}", inequality_summary(report));
    }
    for path in &written {
        println!("wrote {}", path.display());
    }
    println!("wall time: {:.3}s", started.elapsed().as_secs_f64());
    Ok(())
}

#[derive(Serialize)]
struct ExactOutput {
    config: Config,
    config_degenerate: bool,
    prep: StatePrep,
    dot_products: BTreeMap<String, f64>,
    reports: Vec<InequalityReport>,
}

fn cmd_exact(args: ExactArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.config)?;
    let config: Config =
        serde_json::from_str(&text).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    let prep = match &args.prep {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str(&text).map_err(|e| Error::InvalidSpec(e.to_string()))?
        }
        None => StatePrep::eigenstate(SettingLabel::A, Outcome::Plus),
    };
    let state = prep.resolve(&config)?;

    let ab = config.a.dot(&config.b);
    let bc = config.b.dot(&config.c);
    let ac = config.a.dot(&config.c);
    let exact_probs = ExactPairProbs::new(state, config);
    let mut reports = vec![
        eval_quantum_16(&config),
        eval_quantum_18(&config),
        eval_expect_10(
            ExpectationEstimate::exact(ab),
            ExpectationEstimate::exact(bc),
            ExpectationEstimate::exact(ac),
        )?,
        eval_prob_7(&exact_probs),
        eval_prob_8(&exact_probs),
    ];
    let degenerate = config.is_degenerate();
    for report in &mut reports {
        report.degenerate = Some(degenerate);
    }

    match args.format {
        ExactFormat::Json => {
            let output = ExactOutput {
                config,
                config_degenerate: degenerate,
                prep,
                dot_products: BTreeMap::from([
                    ("a.b".to_string(), ab),
                    ("b.c".to_string(), bc),
                    ("a.c".to_string(), ac),
                ]),
                reports,
            };
            print!("{}", render_json(&output)?);
        }
        ExactFormat::Text => {
            println!("prep: {}", serde_json::to_string(&prep)?);
            println!("a.b = {ab}, b.c = {bc}, a.c = {ac}, degenerate = {degenerate}");
            for report in &reports {
                println!("{}", inequality_summary(report));
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct OptimizeOutput {
    objective: String,
    grid: OptimizationResult,
    refined: OptimizationResult,
    multi_start: OptimizationResult,
    best_value: f64,
    /// |refined - multi-start| best values; the two searches should land on
    /// the same maximum.
    agreement_abs: f64,
}

fn cmd_optimize(args: OptimizeArgs) -> Result<()> {
    let objective: Objective = args.objective.into();
    let seed = resolve_seed(args.seed, None)?;
    let grid = grid_search(&objective, args.grid_deg)?;
    let refined = local_refine(&objective, &grid.best_config, args.tolerance)?;
    let multi = multi_start(&objective, args.starts, seed, args.tolerance)?;
    let output = OptimizeOutput {
        objective: objective.name().to_string(),
        best_value: refined.best_value.max(multi.best_value),
        agreement_abs: (refined.best_value - multi.best_value).abs(),
        grid,
        refined,
        multi_start: multi,
    };
    emit(&render_json(&output)?, args.out.as_deref())?;
    if args.out.is_some() {
        println!(
            "{}: best value {} (grid {} deg, {} starts, agreement {:.3e})",
            output.objective,
            output.best_value,
            args.grid_deg,
            args.starts,
            output.agreement_abs
        );
    }
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let series = read_run_records_file(&args.records)?;
    let text = match &args.spec {
        Some(path) => {
            let spec = ExperimentSpec::from_json_file(path)?;
            let seed = resolve_seed(args.seed, spec.seed)?;
            let report = report_from_records(&spec, seed, &series)?;
            render_json(&report)?
        }
        None => render_json(&analyze_records(&series)?)?,
    };
    emit(&text, args.out.as_deref())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let mut buffer = Vec::new();
    write_sweep_csv(&mut buffer, args.step_deg)?;
    let text = String::from_utf8(buffer).expect("CSV output is UTF-8");
    emit(&text, args.out.as_deref())
}
