use std::path::{Path, PathBuf};
use std::process::ExitCode;

use blockspec_cli::{
    cmd_decode, cmd_oracle_khat, cmd_sweep, cmd_verify_dist, CliError, OracleKhatArgs, OracleOutcome, RunOptions,
    VerifyDistArgs,
};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "blockspec", version, about = "Block-diffusion decoding experiments on a synthetic model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decode every configured prompt and write JSON-lines step records.
    Decode(RunArgs),
    /// Run a parameter grid and write one CSV row per cell.
    Sweep(RunArgs),
    /// Monte Carlo check of the committed-token law.
    VerifyDist(VerifyDistCli),
    /// Closed-form expected prefix against brute-force enumeration.
    OracleKhat(OracleKhatCli),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct VerifyDistCli {
    #[arg(long, default_value_t = 21)]
    pairs: usize,
    #[arg(long, default_value_t = 200_000)]
    samples: usize,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    #[arg(long, value_delimiter = ',', default_value = "3,8,16")]
    vocab: Vec<usize>,
    #[arg(long, default_value_t = 0.01)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Compare against the verifier law even when tempering.
    #[arg(long)]
    assert: bool,
    #[arg(long)]
    jobs: Option<usize>,
    /// Also write the report to this file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OracleKhatCli {
    #[arg(long, default_value_t = 1000)]
    vectors: usize,
    #[arg(long, default_value_t = 12)]
    max_len: usize,
    #[arg(long, default_value_t = 1e-12)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn report(outcome: OracleOutcome, out: Option<&Path>) -> Result<bool, CliError> {
    print!("{}", outcome.report);
    if let Some(path) = out {
        std::fs::write(path, &outcome.report)
            .map_err(|e| CliError::Io { path: path.display().to_string(), source: e })?;
    }
    Ok(outcome.passed)
}

fn run(cli: Cli) -> Result<bool, CliError> {
    match cli.command {
        Command::Decode(a) => cmd_decode(&a.config, &a.out, &RunOptions { seed: a.seed, jobs: a.jobs }).map(|()| true),
        Command::Sweep(a) => cmd_sweep(&a.config, &a.out, &RunOptions { seed: a.seed, jobs: a.jobs }).map(|()| true),
        Command::VerifyDist(a) => {
            let args = VerifyDistArgs {
                pairs: a.pairs,
                samples: a.samples,
                gamma: a.gamma,
                vocab: a.vocab,
                tol: a.tol,
                seed: a.seed,
                assert: a.assert,
                jobs: a.jobs,
            };
            report(cmd_verify_dist(&args)?, a.out.as_deref())
        }
        Command::OracleKhat(a) => {
            let args = OracleKhatArgs { vectors: a.vectors, max_len: a.max_len, tol: a.tol, seed: a.seed };
            report(cmd_oracle_khat(&args)?, a.out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("blockspec: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
