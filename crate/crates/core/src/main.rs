use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use conjlab::cli::{self, Command, RunOptions, EXIT_FATAL};
use conjlab::config::RunConfig;

#[derive(Parser)]
#[command(name = "conjlab", version, about = "Conjugacies between linear and perturbed nonautonomous ODEs")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check the dichotomy and perturbation hypotheses.
    Verify(Common),
    /// Tabulate H and G and the equivalence residuals.
    Conjugate(Common),
    /// Tabulate dG, dH, dw, d2w against finite differences and bounds.
    Differentiate(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Proceed even when verification reports soft failures.
    #[arg(long)]
    force: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = Cli::parse();
    let (command, common) = match args.command {
        Cmd::Verify(c) => (Command::Verify, c),
        Cmd::Conjugate(c) => (Command::Conjugate, c),
        Cmd::Differentiate(c) => (Command::Differentiate, c),
    };
    let result = RunConfig::load(&common.config).and_then(|cfg| {
        let opts = RunOptions {
            force: common.force,
            seed: common.seed,
            out: common.out.clone(),
        };
        cli::run(command, &cfg, &opts)
    });
    match result {
        Ok(outcome) => {
            for row in outcome.rows.iter().filter(|r| r.status == "fail" || r.status.starts_with("error") || r.status == "singular") {
                eprintln!("{}: {}", row.quantity, row.status);
            }
            println!(
                "{}",
                serde_json::to_string_pretty(&outcome.report).unwrap_or_default()
            );
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(e) => {
            eprintln!("conjlab: {e}");
            ExitCode::from(EXIT_FATAL as u8)
        }
    }
}
