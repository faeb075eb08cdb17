//! Thin CLI over the structmem library: configured experiment runs,
//! hyperparameter sweeps, report rendering, and standalone memory
//! builds. Exit codes: 0 success, 1 config error, 2 completed with
//! quarantined questions, 3 provider unreachable.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use structmem::harness::{self, ExperimentConfig, GatewayMode, HarnessError, SweepAxis};

/// Prints to stdout, ignoring a closed pipe (e.g. piping into `head`).
fn say(text: impl AsRef<str>) {
    let _ = writeln!(std::io::stdout(), "{}", text.as_ref());
}

#[derive(Parser)]
#[command(
    name = "structmem",
    version,
    about = "Structural memory experiments for LLM agents"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML mirroring ExperimentConfig fields).
    #[arg(long)]
    config: PathBuf,
    /// Cap on dataset instances, overriding the config.
    #[arg(long)]
    limit: Option<usize>,
    /// Use the built-in deterministic provider; no network, no API key.
    #[arg(long)]
    mock: bool,
    /// Replay from the response cache only; abort on any miss.
    #[arg(long, visible_alias = "cache-only")]
    offline: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment grid.
    Run(RunArgs),
    /// Sweep one hyperparameter axis with the others pinned.
    Sweep {
        #[command(flatten)]
        common: RunArgs,
        /// Axis to sweep: k, r, t, n, or noise.
        #[arg(long)]
        axis: String,
    },
    /// Format a run's summary.csv as a markdown table.
    Report {
        /// Directory containing summary.csv.
        run_dir: PathBuf,
    },
    /// Build memory units for every question and write them as JSONL.
    BuildMemory {
        #[command(flatten)]
        common: RunArgs,
        /// Comma-separated kinds: chunks, triples, atomic_facts,
        /// summaries, or mixed.
        #[arg(long)]
        kinds: String,
        /// Output path for the units file.
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(args: &RunArgs) -> Result<(ExperimentConfig, GatewayMode), HarnessError> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(limit) = args.limit {
        cfg.instance_limit = Some(limit);
        cfg.validate()?;
    }
    let mode = match (args.mock, args.offline) {
        (true, false) => GatewayMode::Mock,
        (false, true) => GatewayMode::Offline,
        (false, false) => GatewayMode::Live,
        (true, true) => {
            return Err(HarnessError::Config(harness::ConfigError::Invalid(
                "--mock and --offline are mutually exclusive".into(),
            )))
        }
    };
    Ok((cfg, mode))
}

fn finish(outcome: Result<harness::RunOutcome, HarnessError>) -> ExitCode {
    match outcome {
        Ok(run) => {
            say(format!("run dir: {}", run.run_dir.display()));
            for s in &run.summaries {
                let metric = match (s.mean_em, s.mean_f1, s.accuracy) {
                    (Some(em), Some(f1), _) => format!("EM={em:.2} F1={f1:.2}"),
                    (_, _, Some(acc)) => format!("ACC={acc:.2}"),
                    _ => String::new(),
                };
                say(format!(
                    "{} | {} | K={} R={} T={} N={} noise={} | {} (n={})",
                    s.memory_kinds,
                    s.strategy,
                    s.hyperparameters.k,
                    s.hyperparameters.r,
                    s.hyperparameters.t,
                    s.hyperparameters.n,
                    s.hyperparameters.noise,
                    metric,
                    s.n_instances
                ));
            }
            if run.quarantined > 0 {
                eprintln!(
                    "{} question(s) quarantined; see failures.jsonl",
                    run.quarantined
                );
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => match load_config(&args) {
            Ok((cfg, mode)) => finish(harness::run_experiment(&cfg, mode)),
            Err(err) => finish(Err(err)),
        },
        Command::Sweep { common, axis } => match load_config(&common).and_then(|(cfg, mode)| {
            let axis = SweepAxis::parse(&axis)?;
            Ok((cfg, mode, axis))
        }) {
            Ok((cfg, mode, axis)) => finish(harness::sweep(&cfg, axis, mode)),
            Err(err) => finish(Err(err)),
        },
        Command::Report { run_dir } => match harness::report::render_report(&run_dir) {
            Ok(text) => {
                say(text);
                ExitCode::SUCCESS
            }
            Err(err) => {
                eprintln!("error: {err}");
                ExitCode::from(err.exit_code() as u8)
            }
        },
        Command::BuildMemory { common, kinds, out } => {
            let parsed = load_config(&common).and_then(|(cfg, mode)| {
                let labels: Vec<String> = kinds
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect();
                let kinds = harness::config::parse_kind_set(&labels)?;
                Ok((cfg, mode, kinds))
            });
            match parsed {
                Ok((cfg, mode, kinds)) => {
                    match harness::build_memory_file(&cfg, &kinds, mode, &out) {
                        Ok(counts) => {
                            say(format!("wrote {}", out.display()));
                            for (kind, count) in counts {
                                say(format!("{kind}: {count}"));
                            }
                            ExitCode::SUCCESS
                        }
                        Err(err) => {
                            eprintln!("error: {err}");
                            ExitCode::from(err.exit_code() as u8)
                        }
                    }
                }
                Err(err) => {
                    eprintln!("error: {err}");
                    ExitCode::from(err.exit_code() as u8)
                }
            }
        }
    }
}
