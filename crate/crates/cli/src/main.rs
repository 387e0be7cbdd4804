use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use coxq_cli::{run, Command, Invocation};

/// Simulate infinite-server queues in a fast Markov environment and compare
/// them with their limit theory.
#[derive(Debug, Parser)]
#[command(name = "coxq", version)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Root seed; overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Override a configuration key, e.g. `--set service.alpha=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads; affects speed only.
    #[arg(long, env = "COXQ_THREADS")]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            // usage errors are configuration errors; exit code 2 is reserved
            // for failed statistical checks
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let code = run(&Invocation {
        command: args.command,
        config: args.config,
        out: args.out,
        seed: args.seed,
        set: args.set,
        threads: args.threads,
    });
    ExitCode::from(code as u8)
}
