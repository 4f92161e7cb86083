//! Command-line orchestration for contract-governed training: configuration,
//! subcommands and their artifacts.

pub mod commands;
pub mod config;
pub mod error;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{Overrides, RunConfig};
pub use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "osag", version, about = "Contract-governed sampling experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the configured synthetic dataset as CSV.
    GenData(CommonArgs),
    /// Train every (policy, seed) pair and summarise.
    Train(CommonArgs),
    /// Monte Carlo checks of the coverage, risk and graph bounds.
    VerifyTheory(CommonArgs),
    /// Coarse versus refined contract comparison.
    Ablate(CommonArgs),
    /// Recompute the summary from existing run files.
    Report(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML run configuration.
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Comma-separated seeds, replacing the configured list.
    #[arg(long, value_delimiter = ',', value_name = "SEEDS")]
    pub seed_list: Option<Vec<u64>>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Also report PrioCovErr over the final N steps.
    #[arg(long, value_name = "N")]
    pub cov_window: Option<u64>,
    /// Worker threads.
    #[arg(long, value_name = "N")]
    pub jobs: Option<usize>,
}

impl CommonArgs {
    pub fn resolve(&self) -> CliResult<RunConfig> {
        RunConfig::load(&self.config)?.apply(&Overrides {
            seeds: self.seed_list.clone(),
            out_dir: self.out.clone(),
            cov_window: self.cov_window,
            jobs: self.jobs,
        })
    }
}

impl Command {
    pub fn args(&self) -> &CommonArgs {
        match self {
            Command::GenData(a)
            | Command::Train(a)
            | Command::VerifyTheory(a)
            | Command::Ablate(a)
            | Command::Report(a) => a,
        }
    }
}

/// Executes one parsed invocation, printing a short summary to stdout.
pub fn run(cli: Cli) -> CliResult<()> {
    let cfg = cli.command.args().resolve()?;
    commands::with_pool(cfg.jobs, || execute(&cli.command, &cfg))?
}

fn print_summary(summary: &commands::Summary) {
    for r in &summary.rows {
        let high = r
            .acc_high
            .map_or("n/a".to_string(), |s| format!("{:.2}±{:.2}", s.mean, s.std));
        println!(
            "{:<16} acc_all {:.2}±{:.2}  acc_high {high}  prio_cov_err {:.2}±{:.2}",
            r.policy, r.acc_all.mean, r.acc_all.std, r.prio_cov_err.mean, r.prio_cov_err.std
        );
    }
}

fn execute(command: &Command, cfg: &RunConfig) -> CliResult<()> {
    match command {
        Command::GenData(_) => {
            let path = commands::gen_data(cfg)?;
            println!("wrote {}", path.display());
        }
        Command::Train(_) => print_summary(&commands::train(cfg)?),
        Command::Report(_) => print_summary(&commands::report(cfg)?),
        Command::VerifyTheory(_) => {
            let o = commands::verify_theory(cfg)?;
            println!(
                "all bounds hold: {} concentration cells, {} risk trials, {} graph trials; refinement fraction {:.3}",
                o.concentration.cells.len(),
                o.risk.trials,
                o.graph.trials,
                o.refinement.fraction
            );
        }
        Command::Ablate(_) => {
            let r = commands::ablate(cfg)?;
            for d in [&r.coarse, &r.fine] {
                println!(
                    "{:<6} {} ({:.2}, {:.2}) -> {} ({:.2}, {:.2})",
                    d.design,
                    r.baseline_policy,
                    d.mean_baseline.prio_cov_err,
                    d.mean_baseline.acc_all,
                    r.governed_policy,
                    d.mean_governed.prio_cov_err,
                    d.mean_governed.acc_all
                );
            }
            println!("fine design not costlier in {}/{} seeds", r.fine_not_costlier, r.seed_count);
        }
    }
    Ok(())
}
