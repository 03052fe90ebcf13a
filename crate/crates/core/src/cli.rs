//! Command-line entry points.
//!
//! One invocation is one pipeline run. Machine-readable results go to files
//! under the output directory; diagnostics go to standard error. Exit codes:
//! 0 success, 1 validation/config error, 2 data error, 3 numerical
//! divergence.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::backcast::{self, report, RunConfig};
use crate::ingest::{self, join_hourly, parse_series_csv, rows_to_celsius, ColumnSpec, ValueUnit};
use crate::neural::{grad_check, GradCheckConfig};
use crate::synth;

#[derive(Debug, Parser)]
#[command(name = "demandcast", version, about = "Back-forecasting of hourly electricity demand")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Pipeline configuration file (TOML or JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Repeatable config override, e.g. --set train.epochs=300
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory; overrides the config output dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Only log errors.
    #[arg(long, short = 'q', global = true)]
    quiet: bool,
    /// Increase log verbosity (-v debug, -vv trace).
    #[arg(short = 'v', global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse, validate and join the input files; write the joined hourly
    /// series and its gap index.
    Ingest,
    /// Generate a synthetic demand/temperature dataset from a scenario file.
    Synth(SynthArgs),
    /// Train the configured models and write artifacts and traces.
    Train,
    /// Full run: train, back-forecast over the historical span, evaluate,
    /// and emit every report artifact.
    Backcast,
    /// Compare a predictions file against actual demand.
    Evaluate(EvaluateArgs),
    /// Regenerate derived tables and figures from emitted predictions.
    Report,
    /// Verify analytic gradients against central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Scenario description (JSON).
    #[arg(long)]
    scenario: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    demand: PathBuf,
    #[arg(long)]
    temperature: PathBuf,
    /// Unit of the temperature file.
    #[arg(long, default_value = "celsius")]
    unit: String,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Maximum accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders its own usage text; validation problems are exit 1.
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    init_logging(cli.quiet, cli.verbose);
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            log::error!("{e}");
            e.exit_code()
        }
    }
}

fn init_logging(quiet: bool, verbose: u8) {
    let level = if quiet {
        log::LevelFilter::Error
    } else {
        match verbose {
            0 => log::LevelFilter::Info,
            1 => log::LevelFilter::Debug,
            _ => log::LevelFilter::Trace,
        }
    };
    let _ = env_logger::Builder::new().filter_level(level).format_timestamp(None).try_init();
}

fn load_config(cli: &Cli) -> Result<RunConfig, backcast::PipelineError> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::from_path(path)?,
        None => RunConfig::default(),
    };
    config.apply_overrides(&cli.overrides)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output.dir = out.clone();
    }
    config.validate()?;
    Ok(config)
}

fn require_config_file(cli: &Cli) -> Result<(), backcast::PipelineError> {
    if cli.config.is_none() {
        return Err(backcast::PipelineError::Config(backcast::ConfigError::Invalid(
            "this command requires --config".into(),
        )));
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<(), backcast::PipelineError> {
    match &cli.command {
        Command::Ingest => {
            require_config_file(cli)?;
            let config = load_config(cli)?;
            cmd_ingest(&config)
        }
        Command::Synth(args) => {
            let config = load_config(cli)?;
            cmd_synth(&config, args, cli.seed.unwrap_or(config.seed))
        }
        Command::Train => {
            require_config_file(cli)?;
            let config = load_config(cli)?;
            cmd_train(&config)
        }
        Command::Backcast => {
            require_config_file(cli)?;
            let config = load_config(cli)?;
            cmd_backcast(&config)
        }
        Command::Evaluate(args) => {
            let config = load_config(cli)?;
            cmd_evaluate(&config, args)
        }
        Command::Report => {
            let config = load_config(cli)?;
            report::emit_report_from_files(&config, &config.output.dir)?;
            log::info!("report regenerated under {}", config.output.dir.display());
            Ok(())
        }
        Command::Gradcheck(args) => cmd_gradcheck(cli, args),
    }
}

fn cmd_ingest(config: &RunConfig) -> Result<(), backcast::PipelineError> {
    let columns = config.inputs.columns();
    let demand = parse_series_csv(&config.inputs.demand_csv, ValueUnit::MegaWatts, &columns)?;
    let temperature = rows_to_celsius(
        parse_series_csv(&config.inputs.temperature_csv, config.inputs.temperature_unit, &columns)?,
        config.inputs.temperature_unit,
    )?;
    let joined = join_hourly(&demand, &temperature)?;
    let outdir = &config.output.dir;
    std::fs::create_dir_all(outdir)?;

    let mut csv = String::from("timestamp,demand_mw,temperature_c\n");
    for r in joined.records() {
        let demand = r.demand_mw.map(|v| v.to_string()).unwrap_or_default();
        csv.push_str(&format!(
            "{},{},{}\n",
            ingest::format_timestamp(r.timestamp),
            demand,
            r.temperature_c
        ));
    }
    std::fs::write(outdir.join("hourly_series.csv"), csv)?;
    std::fs::write(
        outdir.join("gaps.json"),
        serde_json::to_string_pretty(joined.gaps()).unwrap(),
    )?;
    log::info!(
        "ingested {} hours ({} gaps) into {}",
        joined.len(),
        joined.gaps().len(),
        outdir.display()
    );
    Ok(())
}

fn cmd_synth(
    config: &RunConfig,
    args: &SynthArgs,
    seed: u64,
) -> Result<(), backcast::PipelineError> {
    let text = std::fs::read_to_string(&args.scenario)?;
    let scenario: synth::SynthScenario = serde_json::from_str(&text)
        .map_err(|e| synth::SynthError::InvalidScenario(e.to_string()))?;
    let out = synth::generate(&scenario, seed)?;
    let outdir = &config.output.dir;
    std::fs::create_dir_all(outdir)?;

    let columns = ColumnSpec::default();
    let demand_rows: Vec<ingest::RawSeriesRow> = out
        .series
        .records()
        .iter()
        .map(|r| ingest::RawSeriesRow { timestamp: r.timestamp, value: r.demand_mw })
        .collect();
    let temp_rows: Vec<ingest::RawSeriesRow> = out
        .series
        .records()
        .iter()
        .map(|r| ingest::RawSeriesRow { timestamp: r.timestamp, value: Some(r.temperature_c) })
        .collect();
    let truth_rows: Vec<ingest::RawSeriesRow> = out
        .series
        .records()
        .iter()
        .zip(&out.noiseless_demand_mw)
        .map(|(r, v)| ingest::RawSeriesRow { timestamp: r.timestamp, value: Some(*v) })
        .collect();
    ingest::write_series_csv(&outdir.join("demand.csv"), &demand_rows, &columns)?;
    ingest::write_series_csv(&outdir.join("temperature.csv"), &temp_rows, &columns)?;
    ingest::write_series_csv(&outdir.join("truth.csv"), &truth_rows, &columns)?;
    log::info!(
        "generated {} synthetic hours (seed {seed}, {} clamped) into {}",
        out.series.len(),
        out.clamped_count,
        outdir.display()
    );
    Ok(())
}

fn cmd_train(config: &RunConfig) -> Result<(), backcast::PipelineError> {
    let columns = config.inputs.columns();
    let demand = parse_series_csv(&config.inputs.demand_csv, ValueUnit::MegaWatts, &columns)?;
    let temperature = rows_to_celsius(
        parse_series_csv(&config.inputs.temperature_csv, config.inputs.temperature_unit, &columns)?,
        config.inputs.temperature_unit,
    )?;
    let joined = join_hourly(&demand, &temperature)?;
    let splits = backcast::prepare_data(config, &joined)?;
    let models = backcast::train_models(config, &splits)?;

    let outdir = &config.output.dir;
    std::fs::create_dir_all(outdir)?;
    for (scope, model) in &models.piecewise {
        std::fs::write(outdir.join(format!("model_piecewise_{}.json", scope.name())), model.to_json())?;
    }
    for (scope, model) in &models.lstm {
        std::fs::write(outdir.join(format!("model_lstm_{}.json", scope.name())), model.to_json())?;
    }
    for (scope, trace) in &models.traces {
        std::fs::write(outdir.join(format!("trace_lstm_{}.csv", scope.name())), trace.to_csv())?;
    }
    log::info!(
        "trained {} piecewise and {} lstm model(s) into {}",
        models.piecewise.len(),
        models.lstm.len(),
        outdir.display()
    );
    Ok(())
}

fn cmd_backcast(config: &RunConfig) -> Result<(), backcast::PipelineError> {
    let result = backcast::run_backcast(config)?;
    let manifest = report::emit_report(&result, &config.output.dir)?;
    log::info!(
        "backcast complete: {} prediction rows, {} artifacts, manifest under {}",
        result.predictions.len(),
        manifest.artifacts.len(),
        config.output.dir.display()
    );
    Ok(())
}

fn cmd_evaluate(config: &RunConfig, args: &EvaluateArgs) -> Result<(), backcast::PipelineError> {
    let columns = ColumnSpec::default();
    let unit = match args.unit.as_str() {
        "kelvin" => ValueUnit::Kelvin,
        "celsius" => ValueUnit::Celsius,
        other => {
            return Err(backcast::PipelineError::Config(backcast::ConfigError::Invalid(format!(
                "unknown temperature unit {other:?}"
            ))))
        }
    };
    let demand = parse_series_csv(&args.demand, ValueUnit::MegaWatts, &columns)?;
    let temperature =
        rows_to_celsius(parse_series_csv(&args.temperature, unit, &columns)?, unit)?;
    let actuals = join_hourly(&demand, &temperature)?;
    let lookup: std::collections::BTreeMap<_, _> = actuals
        .records()
        .iter()
        .filter_map(|r| r.demand_mw.map(|d| (r.timestamp, (d, r.temperature_c))))
        .collect();

    let mut reader = csv::Reader::from_path(&args.predictions)
        .map_err(ingest::IngestError::Csv)?;
    let mut per_model: std::collections::BTreeMap<
        String,
        (Vec<chrono::NaiveDateTime>, Vec<f64>, Vec<f64>, Vec<f64>),
    > = Default::default();
    for record in reader.records() {
        let record = record.map_err(ingest::IngestError::Csv)?;
        let Some(ts) = ingest::parse_timestamp(&record[0]) else { continue };
        let Some((actual, temp)) = lookup.get(&ts) else { continue };
        let Ok(pred) = record[3].parse::<f64>() else { continue };
        let entry = per_model.entry(record[1].to_string()).or_default();
        entry.0.push(ts);
        entry.1.push(*actual);
        entry.2.push(pred);
        entry.3.push(*temp);
    }
    let mut metrics = std::collections::BTreeMap::new();
    for (model, (ts, actual, pred, temp)) in per_model {
        let report = crate::eval::metrics_report(&ts, &actual, &pred, &temp, None)?;
        metrics.insert(model, report);
    }
    std::fs::create_dir_all(&config.output.dir)?;
    std::fs::write(
        config.output.dir.join("metrics.json"),
        serde_json::to_string_pretty(&metrics).unwrap(),
    )?;
    log::info!("evaluated {} model(s) into {}", metrics.len(), config.output.dir.display());
    Ok(())
}

fn cmd_gradcheck(cli: &Cli, args: &GradcheckArgs) -> Result<(), backcast::PipelineError> {
    let config = GradCheckConfig { seed: cli.seed.unwrap_or(7), ..GradCheckConfig::default() };
    let report = grad_check(&config, args.tolerance);
    log::info!(
        "gradient check over {} parameters: max relative error {:.3e} in {} (tolerance {:.1e})",
        report.parameter_count,
        report.max_rel_error,
        report.worst_tensor,
        report.tolerance
    );
    if let Some(out) = &cli.out {
        std::fs::create_dir_all(out)?;
        std::fs::write(out.join("gradcheck.json"), serde_json::to_string_pretty(&report).unwrap())?;
    }
    if report.passed {
        Ok(())
    } else {
        Err(backcast::PipelineError::Neural(crate::neural::NeuralError::Diverged { epoch: 0 }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(args: &[&str]) -> Vec<String> {
        std::iter::once("demandcast").chain(args.iter().copied()).map(String::from).collect()
    }

    #[test]
    fn unknown_subcommand_exits_one() {
        assert_eq!(run(argv(&["frobnicate"])), 1);
    }

    #[test]
    fn gradcheck_passes_at_default_tolerance() {
        assert_eq!(run(argv(&["gradcheck", "--seed", "7"])), 0);
    }

    #[test]
    fn gradcheck_fails_below_fd_floor() {
        assert_eq!(run(argv(&["gradcheck", "--seed", "7", "--tolerance", "1e-12"])), 3);
    }

    #[test]
    fn train_with_missing_input_exits_two() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = dir.path().join("run.toml");
        let mut config = RunConfig::default();
        config.inputs.demand_csv = dir.path().join("nope.csv");
        config.inputs.temperature_csv = dir.path().join("nope_temp.csv");
        std::fs::write(&config_path, toml::to_string(&config).unwrap()).unwrap();
        let code = run(argv(&["train", "--config", config_path.to_str().unwrap()]));
        assert_eq!(code, 2);
    }

    #[test]
    fn train_requires_config() {
        assert_eq!(run(argv(&["train"])), 1);
    }

    #[test]
    fn bad_override_exits_one() {
        let dir = tempfile::tempdir().unwrap();
        let config_path = dir.path().join("run.toml");
        std::fs::write(&config_path, toml::to_string(&RunConfig::default()).unwrap()).unwrap();
        let code = run(argv(&[
            "train",
            "--config",
            config_path.to_str().unwrap(),
            "--set",
            "train.epoks=50",
        ]));
        assert_eq!(code, 1);
    }
}
