use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use flowsmc::commands::{self, CommandError, OracleCheckParams};
use flowsmc::eval::Scorer;

#[derive(Parser)]
#[command(name = "flowsmc", version, about = "Sequential Monte Carlo workflow search")]
struct Cli {
    /// Worker threads for look-ahead scoring.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Root seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one search and write its artifacts.
    Search {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "runs/latest")]
        out: PathBuf,
    },
    /// Compare the sampler with the exact posterior of a tabular instance.
    OracleCheck {
        /// Instance file (tabular prior plus reward table).
        #[arg(long, alias = "instance")]
        config: PathBuf,
        #[arg(long, default_value = "runs/oracle")]
        out: PathBuf,
        #[arg(long, default_value_t = 5000)]
        n: usize,
        #[arg(long, default_value_t = 500)]
        n_small: usize,
        #[arg(long, default_value_t = 3)]
        k: usize,
        #[arg(long, default_value_t = 20)]
        seeds: usize,
    },
    /// Best@L, Mean@L and Majority@L from an answer matrix.
    Metrics {
        #[arg(long)]
        answers: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// Workflows per example to use (all when absent).
        #[arg(long = "l")]
        l: Option<usize>,
        #[arg(long, value_enum, default_value_t = ScorerArg::ExactMatch)]
        scorer: ScorerArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarise a finished run directory.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ScorerArg {
    ExactMatch,
    Numeric,
    TokenF1,
    ChoiceLetter,
}

impl From<ScorerArg> for Scorer {
    fn from(s: ScorerArg) -> Self {
        match s {
            ScorerArg::ExactMatch => Scorer::ExactMatch,
            ScorerArg::Numeric => Scorer::Numeric,
            ScorerArg::TokenF1 => Scorer::TokenF1,
            ScorerArg::ChoiceLetter => Scorer::ChoiceLetter,
        }
    }
}

fn run(cli: Cli) -> Result<(), CommandError> {
    match cli.command {
        Command::Search { config, out } => {
            let s = commands::search(&config, cli.seed, cli.workers, &out)?;
            println!("best reward {:.4} (round {}, id {})", s.best_reward, s.best_round, s.best_id);
            println!("archive size {}, reward evaluations {}", s.archive_size, s.evaluations);
            if let Some(u) = s.usage {
                println!("usage: {} requests, cost {:.6}", u.requests, u.total_cost);
            }
            println!("artifacts in {}", out.display());
        }
        Command::OracleCheck { config, out, n, n_small, k, seeds } => {
            let params = OracleCheckParams {
                n,
                n_small,
                k,
                seeds,
                seed: cli.seed.unwrap_or(0),
                workers: cli.workers.unwrap_or(1),
                ..OracleCheckParams::default()
            };
            let lines = commands::oracle_check(&config, &params, &out)?;
            for l in &lines {
                println!("{l}");
            }
            let failed = lines.iter().filter(|l| !l.passed).count();
            if failed > 0 {
                return Err(CommandError::Criteria(failed));
            }
        }
        Command::Metrics { answers, gold, l, scorer, out } => {
            let m = commands::metrics(&answers, &gold, l, scorer.into(), out.as_deref())?;
            println!("{}", serde_json::to_string(&m)?);
        }
        Command::Report { out } => print!("{}", commands::report(&out)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
