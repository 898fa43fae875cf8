use std::process::ExitCode;

use clap::{Parser, Subcommand};
use erq_cli::commands::{
    block_cmd, evaluate, generate_cmd, resolve, serve, BlockArgs, EvaluateArgs, GenerateArgs, ResolveArgs, ServeArgs,
};

/// Splits entity-resolution workloads between machine and human labeling
/// under precision, recall and confidence requirements.
#[derive(Parser, Debug)]
#[command(name = "erq", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve one workload and write the solution, labels and summary.
    Resolve(ResolveArgs),
    /// Write a synthetic workload CSV.
    Generate(GenerateArgs),
    /// Block two record tables into a workload CSV.
    Block(BlockArgs),
    /// Run repeated trials or a parameter sweep.
    Evaluate(EvaluateArgs),
    /// Run a solver whose labels come from the HTTP labeling API.
    Serve(ServeArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Resolve(args) => resolve(&args),
        Command::Generate(args) => generate_cmd(&args).map(|_| 0),
        Command::Block(args) => block_cmd(&args).map(|_| 0),
        Command::Evaluate(args) => evaluate(&args).map(|_| 0),
        Command::Serve(args) => tokio::runtime::Runtime::new()
            .map_err(anyhow::Error::from)
            .and_then(|rt| rt.block_on(serve(args)))
            .map(|_| 0),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
