use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use robust_mobo::harness::{
    self, RunConfig, SelectStrategy, TestReport, TrainOptions, CONFIG_FILE,
};
use robust_mobo::optimizer::Mode;
use robust_mobo::{ControllerGains, Error};

const REPORT_CSV: &str = "test_report.csv";
const REPORT_JSON: &str = "test_report.json";

#[derive(Parser)]
#[command(
    name = "robust-mobo",
    version,
    about = "Robust controller tuning with multi-objective Bayesian optimization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize controller gains on the training plant.
    Train(TrainArgs),
    /// Pick a controller from a finished run and print it as JSON.
    Select(SelectArgs),
    /// Run the perturbation test battery on the nominal plant.
    Test(TestArgs),
    /// Write plot data for a finished run and check its progress curve.
    ExportPlots(RunDirArgs),
    /// Re-check the margins of Pareto points with longer episodes.
    VerifyFront(RunDirArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the master seed of the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the objective wiring of the configuration.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<Mode>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Run directory; defaults to `output_dir` from the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace the artifacts of an earlier run in the output directory.
    #[arg(long)]
    force: bool,
    /// Continue from the newest checkpoint in the output directory.
    #[arg(long, conflicts_with = "force")]
    resume: bool,
    /// Stop after this many iterations.
    #[arg(long)]
    max_steps: Option<usize>,
}

#[derive(Args)]
struct SelectArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    out: PathBuf,
    /// Pick this front point (0 is the most robust) instead of the elbow.
    #[arg(long)]
    index: Option<usize>,
}

#[derive(Args)]
struct TestArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Run directory; its elbow controller and configuration are used unless
    /// overridden, and the report is written there.
    #[arg(long)]
    out: PathBuf,
    /// Explicit controller gains, comma separated.
    #[arg(long, value_parser = parse_gains, allow_hyphen_values = true)]
    gains: Option<ControllerGains>,
    /// Front index to test instead of the elbow.
    #[arg(long, conflicts_with = "gains")]
    index: Option<usize>,
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct RunDirArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_gains(s: &str) -> Result<ControllerGains, String> {
    let values = s
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}")))
        .collect::<Result<Vec<f64>, String>>()?;
    let gains: [f64; 4] = values
        .try_into()
        .map_err(|v: Vec<f64>| format!("expected 4 comma-separated gains, got {}", v.len()))?;
    Ok(ControllerGains(gains))
}

fn resolve_config(args: &ConfigArgs, fallback: Option<&Path>) -> Result<RunConfig, Error> {
    let path = args.config.as_deref().or(fallback);
    let mut cfg = match (path, args.mode) {
        (Some(p), _) => RunConfig::load(p)?,
        (None, Some(mode)) => RunConfig::new(mode, args.seed.unwrap_or(0)),
        (None, None) => {
            return Err(Error::Config {
                key: "mode".into(),
                message: "pass --config or --mode".into(),
            })
        }
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = args.mode {
        cfg.mode = mode;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn train(args: TrainArgs) -> Result<(), Error> {
    let cfg = resolve_config(&args.config, None)?;
    let out = args
        .out
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| Error::Config {
            key: "output_dir".into(),
            message: "pass --out or set output_dir".into(),
        })?;
    let opts = TrainOptions {
        force: args.force,
        resume: args.resume,
        max_steps: args.max_steps,
    };
    let state = harness::train(&cfg, &out, &opts)?;
    let summary = match state.hv_history.last().or(state.best_history.last()) {
        Some(v) if cfg.mode == Mode::Scalar => format!("best return {v:.4}"),
        Some(v) => format!(
            "hypervolume {v:.4}, {} front points",
            state.front().points().len()
        ),
        None => "no evaluations".into(),
    };
    println!(
        "{}: {} evaluations{}, {summary}; results in {}",
        cfg.mode.name(),
        state.iteration,
        if state.stopped_early {
            " (stopped early)"
        } else {
            ""
        },
        out.display()
    );
    Ok(())
}

fn strategy(index: Option<usize>) -> SelectStrategy {
    index.map_or(SelectStrategy::Elbow, SelectStrategy::Index)
}

fn select(args: SelectArgs) -> Result<(), Error> {
    let chosen = harness::select(&args.out, strategy(args.index))?;
    println!("{}", serde_json::to_string_pretty(&chosen)?);
    Ok(())
}

fn print_report(report: &TestReport) {
    println!("controller {:?}", report.controller.0);
    println!(
        "{:<14} {:>10} {:>8} {:>12}",
        "scenario", "E[R]", "fail %", "fail time s"
    );
    for s in &report.scenarios {
        println!(
            "{:<14} {:>10.2} {:>8.1} {:>12.2}",
            s.scenario, s.mean_return, s.failure_rate, s.mean_fail_time
        );
    }
}

fn test(args: TestArgs) -> Result<(), Error> {
    let stored = args.out.join(CONFIG_FILE);
    let cfg = resolve_config(&args.config, stored.exists().then_some(stored.as_path()))?;
    let json_path = args.out.join(REPORT_JSON);
    if json_path.exists() && !args.force {
        return Err(Error::OutputExists(json_path));
    }
    let gains = match args.gains {
        Some(g) => g,
        None => harness::select(&args.out, strategy(args.index))?.gains,
    };
    let report = harness::run_battery(&gains, &cfg.environment, &cfg.test, cfg.seed)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::Io {
        path: args.out.clone(),
        source: e,
    })?;
    report.write_csv(&args.out.join(REPORT_CSV))?;
    std::fs::write(&json_path, serde_json::to_string_pretty(&report)?).map_err(|e| Error::Io {
        path: json_path.clone(),
        source: e,
    })?;
    print_report(&report);
    Ok(())
}

fn export_plots(args: RunDirArgs) -> Result<(), Error> {
    let summary = harness::export_plots(&args.out, args.force)?;
    println!(
        "{} iterations, final value {:.4}, {} discarded front points",
        summary.iterations,
        summary.curve.last().copied().unwrap_or(0.0),
        summary.discarded
    );
    for f in summary.files {
        println!("wrote {}", f.display());
    }
    Ok(())
}

fn verify_front(args: RunDirArgs) -> Result<(), Error> {
    let rows = harness::verify_front(&args.out, args.force)?;
    let discarded = rows.iter().filter(|r| r.discarded).count();
    println!("{} front points checked, {discarded} discarded", rows.len());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Select(a) => select(a),
        Command::Test(a) => test(a),
        Command::ExportPlots(a) => export_plots(a),
        Command::VerifyFront(a) => verify_front(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gains_parse_from_a_comma_list() {
        assert_eq!(
            parse_gains("-1, 20,0.5,2").unwrap(),
            ControllerGains([-1.0, 20.0, 0.5, 2.0])
        );
        assert!(parse_gains("1,2,3").unwrap_err().contains("got 3"));
        assert!(parse_gains("1,2,x,4").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
