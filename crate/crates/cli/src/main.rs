//! Command-line driver: `sl2walk <subcommand> --config path.json
//! [--seed N] [--out dir] [--threads K]`.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use sl2walk::runner::{run, ExperimentConfig, Subcommand};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Command {
    Classify,
    Elementarity,
    Gap,
    Iterate,
    Equidistribute,
    Lyapunov,
    Clt,
    Variance,
    Normcheck,
    Regularity,
    Checks,
}

impl From<Command> for Subcommand {
    fn from(c: Command) -> Self {
        match c {
            Command::Classify => Subcommand::Classify,
            Command::Elementarity => Subcommand::Elementarity,
            Command::Gap => Subcommand::Gap,
            Command::Iterate => Subcommand::Iterate,
            Command::Equidistribute => Subcommand::Equidistribute,
            Command::Lyapunov => Subcommand::Lyapunov,
            Command::Clt => Subcommand::Clt,
            Command::Variance => Subcommand::Variance,
            Command::Normcheck => Subcommand::Normcheck,
            Command::Regularity => Subcommand::Regularity,
            Command::Checks => Subcommand::Checks,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "sl2walk", version, about = "Random walks on PSL(2,C): seeded experiments")]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// Flat JSON config with dotted keys; every key has a default.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let mut cfg = match &args.config {
        Some(p) => match ExperimentConfig::from_path(p) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("sl2walk: {e}");
                return ExitCode::from(2);
            }
        },
        None => ExperimentConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(o) = &args.out {
        cfg.out = o.to_string_lossy().into_owned();
    }
    if let Some(k) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("sl2walk: {e}");
            return ExitCode::from(2);
        }
    }
    let out = PathBuf::from(&cfg.out);
    match run(args.command.into(), &cfg, &out) {
        Ok(outcome) => {
            println!("{}", serde_json::to_string_pretty(&outcome.summary["outputs"]).unwrap_or_default());
            if outcome.passed {
                ExitCode::SUCCESS
            } else {
                eprintln!("sl2walk: checks failed");
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("sl2walk: {e}");
            ExitCode::from(match e {
                sl2walk::runner::RunError::Config(_) => 2,
                _ => 1,
            })
        }
    }
}
