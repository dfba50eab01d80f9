use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qflow_cli::{CliError, Experiment, ExperimentConfig};

#[derive(Parser)]
#[command(name = "qflow", version, about = "Open bosonic dynamics with normalizing flows in the Husimi Q representation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for batch work (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build the initial flow and save it as pretrained.ckpt.
    Pretrain(Common),
    /// Run the configured time evolution.
    Evolve(Common),
    /// Solve on a grid for reference (at most 4 phase-space dimensions).
    Reference(Common),
    /// Evaluate a checkpoint against the configured metrics.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

fn setup(c: &Common) -> Result<Experiment, CliError> {
    if let Some(n) = c.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    }
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out = o.clone();
    }
    Experiment::new(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Pretrain(c) => {
            let path = setup(&c)?.cmd_pretrain()?;
            println!("wrote {}", path.display());
        }
        Cmd::Evolve(c) => {
            let mut ex = setup(&c)?;
            let rec = ex.cmd_evolve()?;
            println!("wrote {} rows to {}", rec.rows.len(), ex.out().display());
        }
        Cmd::Reference(c) => {
            let mut ex = setup(&c)?;
            let rec = ex.cmd_reference()?;
            println!("wrote {} rows to {}", rec.rows.len(), ex.out().display());
        }
        Cmd::Eval { common, checkpoint } => {
            let rec = setup(&common)?.cmd_eval(&checkpoint)?;
            print!("{}", rec.to_csv());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
