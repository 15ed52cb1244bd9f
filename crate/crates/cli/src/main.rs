//! `carnot-lab`: run the named experiments and write their artifacts.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{error::ErrorKind, Parser, Subcommand};

use carnot_core::experiments::{self, Experiment, ExperimentConfig, LevelRange, RunOutcome, EXIT_CONFIG};
use carnot_core::Error;

#[derive(Parser, Debug)]
#[command(name = "carnot-lab", version, about = "Experiments on discretized path-space costs over Carnot groups")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one experiment.
    Run(RunArgs),
    /// List experiment names and the statement each one probes.
    List,
}

#[derive(clap::Args, Debug)]
struct RunArgs {
    /// Experiment name; may come from --config instead.
    experiment: Option<Experiment>,
    #[arg(long)]
    seed: Option<u64>,
    /// JSON file holding an experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    quiet: bool,
    /// Dyadic level range, e.g. 4..10.
    #[arg(long)]
    levels: Option<LevelRange>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Drift name: zero, line or feedback.
    #[arg(long)]
    drift: Option<String>,
}

fn build_config(args: &RunArgs) -> Result<ExperimentConfig, Error> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Input(format!("cannot read config {}: {e}", path.display())))?;
            let mut c = ExperimentConfig::from_json(&text)?;
            if let Some(e) = args.experiment {
                c.experiment = e;
            }
            c
        }
        None => {
            let e = args.experiment.ok_or_else(|| Error::Input("missing experiment name".into()))?;
            ExperimentConfig::new(e, 0, "results")
        }
    };
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(o) = &args.out {
        config.output_dir = o.clone();
    }
    let o = &mut config.overrides;
    o.levels = args.levels.or(o.levels);
    o.trials = args.trials.or(o.trials);
    o.epsilon = args.epsilon.or(o.epsilon);
    o.alpha = args.alpha.or(o.alpha);
    if args.drift.is_some() {
        o.drift = args.drift.clone();
    }
    config.validate()?;
    Ok(config)
}

fn report(outcome: &RunOutcome) {
    println!("{} ({:.1} s)", outcome.experiment, outcome.wall_time_seconds);
    for c in &outcome.checks {
        println!("  [{}] {}: {:.4e} (target {})", if c.passed { "pass" } else { "FAIL" }, c.name, c.value, c.target);
    }
    for f in &outcome.files {
        println!("  wrote {}", f.display());
    }
}

fn run(args: RunArgs) -> i32 {
    let config = match build_config(&args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    match experiments::run_with_threads(&config, args.threads) {
        Ok(outcome) => {
            if !args.quiet {
                report(&outcome);
            }
            outcome.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            if let Err(w) = experiments::write_failure(&config, &e) {
                eprintln!("error: could not write failure record: {w}");
            }
            experiments::exit_code_for(&e)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_CONFIG as u8),
            };
        }
    };
    let code = match cli.command {
        Command::Run(args) => run(args),
        Command::List => {
            for e in Experiment::ALL {
                println!("{:<18} {}", e.name(), e.claim());
            }
            0
        }
    };
    ExitCode::from(code as u8)
}
