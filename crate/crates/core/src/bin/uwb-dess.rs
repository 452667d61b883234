use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use uwb_dess::experiments::{
    cmd_agc_study, cmd_ingest, cmd_loo, cmd_protocol_bench, cmd_report, cmd_simulate, cmd_transfer, ExperimentConfig,
    Source,
};

/// Signal-strength UWB distance estimation experiments.
#[derive(Debug, Parser)]
#[command(name = "uwb-dess", version)]
struct Cli {
    /// Experiment config file (TOML or JSON). Flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for simulation, splits and benchmark trials.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, short = 'o', global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a dataset and write it as CSV.
    Simulate {
        /// Bundled preset name.
        #[arg(long, conflicts_with = "profile")]
        preset: Option<String>,
        /// Channel/receiver/grid file (TOML or JSON).
        #[arg(long)]
        profile: Option<PathBuf>,
    },
    /// Validate a recorded CSV and rewrite it in the canonical schema.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        /// JSON object mapping input column names to canonical column names.
        #[arg(long)]
        mapping: Option<PathBuf>,
    },
    /// Compare AGC on/off at maximum gain and over all gains.
    AgcStudy,
    /// Cross-environment transfer matrix.
    Transfer {
        /// Drop the transmit gain from the features.
        #[arg(long)]
        gain_ablation: bool,
        /// Leave-one-distance-out instead of the held-out split.
        #[arg(long)]
        loo: bool,
    },
    /// Benchmark two-phase minimum-gain ranging.
    ProtocolBench {
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Summarize the results present in the output directory.
    Report,
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out = out;
    }
    let context = || match &cli.config {
        Some(p) => format!("config {}, seed {}", p.display(), cfg.seed),
        None => format!("default config, seed {}", cfg.seed),
    };

    match cli.command {
        Command::Simulate { preset, profile } => {
            let (source, name) = match (preset, profile) {
                (Some(p), None) => (Source::Preset(p.clone()), p),
                (None, Some(path)) => {
                    let stem = path
                        .file_stem()
                        .and_then(|s| s.to_str())
                        .unwrap_or("simulated")
                        .to_string();
                    (Source::Profile(path), stem)
                }
                _ => bail!("simulate needs exactly one of --preset or --profile"),
            };
            let s = cmd_simulate(&cfg, &source, &name).with_context(context)?;
            println!("{}: {} records, {} delivered", s.path.display(), s.records, s.delivered);
        }
        Command::Ingest { input, mapping } => {
            let s = cmd_ingest(&cfg, &input, mapping.as_deref()).with_context(context)?;
            println!("{}: {} records, {} delivered", s.path.display(), s.records, s.delivered);
        }
        Command::AgcStudy => {
            let study = cmd_agc_study(&cfg).with_context(context)?;
            print!("{}", study.text_table());
        }
        Command::Transfer { gain_ablation, loo } => {
            if loo {
                print!("{}", cmd_loo(&cfg, gain_ablation).with_context(context)?.text_table());
            } else {
                print!(
                    "{}",
                    cmd_transfer(&cfg, gain_ablation)
                        .with_context(context)?
                        .matrix
                        .text_table()
                );
            }
        }
        Command::ProtocolBench { trials } => {
            if let Some(n) = trials {
                cfg.protocol.trials = n;
            }
            let s = cmd_protocol_bench(&cfg).with_context(context)?;
            println!(
                "{} trials ({} soundings lost, {} fallbacks): baseline averaged MAE {:.3} m, refined {:.3} m",
                s.trials, s.sounding_lost, s.fallbacks, s.baseline_averaged_mae, s.refined_averaged_mae
            );
        }
        Command::Report => print!("{}", cmd_report(&cfg).with_context(context)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
