use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fmapg::harness::{self, exit, Experiment, ExperimentKind, RunOptions};

#[derive(Parser)]
#[command(name = "fmapg", version, about = "FMA-PG experiments on bandits and tabular MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Bernoulli bandit study of IWEXP3, LBIWEXP3 and sEXP3.
    Bandit(Common),
    /// MDPO and sPPO on the Cliff gridworld.
    Cliff(Common),
    /// Improvement study on seeded random MDPs.
    Tabular(Common),
    /// Run the invariant verification suite.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Random policies per MDP in the lower-bound checks.
        #[arg(long)]
        trials: Option<usize>,
    },
}

#[derive(Args)]
struct Common {
    /// JSON experiment configuration; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Results file (overrides `output.path`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    threads: Option<usize>,
    /// Master seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, common, trials) = match cli.command {
        Command::Bandit(c) => (ExperimentKind::Bandit, c, None),
        Command::Cliff(c) => (ExperimentKind::Cliff, c, None),
        Command::Tabular(c) => (ExperimentKind::TabularRandom, c, None),
        Command::Verify { common, trials } => (ExperimentKind::Verify, common, trials),
    };
    ExitCode::from(run(kind, common, trials) as u8)
}

fn run(kind: ExperimentKind, common: Common, trials: Option<usize>) -> i32 {
    let mut config = match harness::load_or_default(common.config.as_deref(), kind) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return harness::exit_code_for(&e);
        }
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let (Some(t), Experiment::Verify(v)) = (trials, &mut config.experiment) {
        v.trials = t;
    }
    if common.threads == Some(0) {
        eprintln!("error: --threads must be at least 1");
        return exit::VALIDATION;
    }
    let options = RunOptions {
        out: common.out,
        threads: common.threads,
        ..RunOptions::default()
    };
    match harness::run_config(&config, &options) {
        Ok(summary) => {
            if let Some(report) = &summary.verification {
                print!("{}", report.summary());
            }
            println!(
                "wrote {} rows to {} (metadata: {})",
                summary.rows,
                summary.results.display(),
                summary.metadata.display()
            );
            if summary.failures > 0 {
                eprintln!("{} cell(s) failed; see the metadata file", summary.failures);
            }
            summary.exit_code
        }
        Err(e) => {
            eprintln!("error: {e}");
            harness::exit_code_for(&e)
        }
    }
}
