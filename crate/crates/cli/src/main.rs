use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dsrl_cli::{cmd_baseline, cmd_compare, cmd_eval, cmd_train, CliError, CompareArgs, EvalArgs, EvalNoise, RunArgs};

#[derive(Parser)]
#[command(name = "dsrl", version, about = "Distributionally safe RL: train, evaluate and compare")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunFlags {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

impl From<RunFlags> for RunArgs {
    fn from(f: RunFlags) -> Self {
        RunArgs { config: f.config, seed: f.seed, out: f.out, checkpoint_every: f.checkpoint_every }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train with the worst-case noise adversary.
    Train(RunFlags),
    /// Train with safety rows at the prior mean and no adversary.
    Baseline(RunFlags),
    /// Roll out a checkpoint deterministically for each seed.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// nominal, worst or sample
        #[arg(long, default_value = "worst")]
        noise: String,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Checkpoint supplying the worst-case noise.
        #[arg(long)]
        omega_from: Option<PathBuf>,
    },
    /// Aggregate returns and trajectories across run directories.
    Compare {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Train(flags) => cmd_train(&flags.into()).map(|s| println!("{}", s.final_checkpoint.display())),
        Command::Baseline(flags) => cmd_baseline(&flags.into()).map(|s| println!("{}", s.final_checkpoint.display())),
        Command::Eval { checkpoint, config, noise, seeds, out, omega_from } => {
            let noise: EvalNoise = noise.parse()?;
            let records = cmd_eval(&EvalArgs { checkpoint, config, noise, seeds, out, omega_from })?;
            for r in records {
                println!(
                    "seed {}: return {:.3}, min_h {:.4}, goal {}, violations {}",
                    r.seed, r.episode_return, r.min_h, r.reached_goal, r.violations
                );
            }
            Ok(())
        }
        Command::Compare { runs, out } => cmd_compare(&CompareArgs { runs, out }).map(|_| ()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
