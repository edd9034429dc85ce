use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use coloc::harness::{self, Overrides, PolicySpec, RunSummary};

#[derive(Parser)]
#[command(name = "coloc", version, about = "Cooperative mmWave localization with learned ranging selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train or replay a policy on a scenario and write episode logs.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// learned, fixed-toa, fixed-tdoa, fixed-rss or random
        #[arg(long)]
        policy: String,
        #[arg(long)]
        episodes: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "threshold-m")]
        threshold_m: Option<f64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Independent seeds run in parallel, written to rep_<i> subdirectories.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
        replicates: u32,
    },
    /// Tabulate summaries from several run directories.
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn print_summary(s: &RunSummary) {
    let bound = s
        .mean_crlb_bound
        .map_or("n/a".to_string(), |b| format!("{b:.4} m"));
    println!(
        "{} seed {}: {} episodes, mean rmse {:.4} m, reward rate {:.3}, crlb {}",
        s.policy_name, s.seed, s.episodes_run, s.mean_rmse_last_100, s.reward_rate_last_100, bound
    );
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run {
            scenario,
            policy,
            episodes,
            seed,
            threshold_m,
            out,
            replicates,
        } => {
            let policy: PolicySpec = policy.parse()?;
            let overrides = Overrides {
                episodes,
                seed,
                threshold_m,
            };
            if replicates == 1 {
                let summary = harness::run_experiment(&scenario, policy, &overrides, &out)
                    .with_context(|| format!("running {}", scenario.display()))?;
                print_summary(&summary);
            } else {
                let summaries = harness::run_replicates(&scenario, policy, &overrides, &out, replicates)
                    .with_context(|| format!("running {}", scenario.display()))?;
                summaries.iter().for_each(print_summary);
            }
        }
        Command::Compare { inputs, out } => {
            let summaries = inputs
                .iter()
                .map(|dir| harness::read_summary(dir))
                .collect::<Result<Vec<_>, _>>()?;
            let comparison = harness::compare(&summaries)?;
            std::fs::write(&out, comparison.to_csv()).with_context(|| format!("writing {}", out.display()))?;
            print!("{}", comparison.to_text());
        }
    }
    Ok(())
}
