use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use xdiff_cli::commands::{self, parse_values, SweepParam};
use xdiff_cli::config::{Overrides, Resolved, RunConfig};
use xdiff_core::baselines::ProviderKind;

#[derive(Parser)]
#[command(name = "xdiff", version, about = "Multi-cell interference management experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Args)]
struct BatchArgs {
    /// Scenario preset: lab, building, two_cell_coupled or single_link.
    #[arg(long)]
    preset: Option<String>,
    /// xdiff, xdiff-hard, ddqn, ddpg, cira, otfr or csrs.
    #[arg(long, value_parser = parse_provider)]
    provider: Option<ProviderKind>,
    /// Number of seeds, counted up from the config's first_seed (default 1).
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long)]
    slots: Option<usize>,
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Charge modelled policy generation time as policy staleness.
    #[arg(long, value_enum)]
    latency_coupling: Option<Switch>,
}

impl BatchArgs {
    fn load(&self) -> Result<(RunConfig, Overrides)> {
        let cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let flags = Overrides {
            preset: self.preset.clone(),
            provider: self.provider,
            seeds: self.seeds,
            slots: self.slots,
            latency_coupling: self.latency_coupling.map(|s| matches!(s, Switch::On)),
        };
        Ok((cfg, flags))
    }
}

fn parse_provider(s: &str) -> Result<ProviderKind, String> {
    s.parse::<ProviderKind>().map_err(|e| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Run one provider over a batch of seeds.
    Run {
        #[command(flatten)]
        batch: BatchArgs,
        #[arg(long, default_value = "runs/latest")]
        out: PathBuf,
    },
    /// Rank run directories and plot them side by side.
    Compare {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long, default_value = "runs/compare")]
        out: PathBuf,
    },
    /// Sweep a diffusion-agent hyperparameter.
    Sweep {
        #[arg(long, value_enum)]
        param: SweepParam,
        /// Comma-separated values; defaults to the standard grid.
        #[arg(long)]
        values: Option<String>,
        #[command(flatten)]
        batch: BatchArgs,
        #[arg(long, default_value = "runs/sweep")]
        out: PathBuf,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("XDIFF_LOG", "info")).init();
    match Cli::parse().command {
        Command::Run { batch, out } => {
            let (cfg, flags) = batch.load()?;
            let resolved = Resolved::new(&cfg, &flags)?;
            let summary = commands::run(&resolved, &out)?;
            println!(
                "{} on {}: mean reward {:.4}, final third {:.4} over {} seeds -> {}",
                summary.provider,
                summary.preset,
                summary.reward_mean,
                summary.final_third_reward_mean,
                summary.seeds.len(),
                out.display()
            );
        }
        Command::Compare { dirs, out } => {
            let cmp = commands::compare(&dirs, &out)?;
            for e in &cmp.ranking {
                println!("{:>2}. {:<28} reward {:.4}", e.rank, e.label, e.reward_mean);
            }
        }
        Command::Sweep { param, values, batch, out } => {
            let values = match values {
                Some(v) => parse_values(&v)?,
                None => param.default_values(),
            };
            let (mut cfg, flags) = batch.load()?;
            if flags.seeds.is_none() && cfg.seeds.is_none() {
                cfg.seeds = Some(3);
            }
            let report = commands::sweep(param, &values, &cfg, &flags, &out)?;
            for p in &report.points {
                println!("{:>6} median reward {:.4}", p.value, p.median_reward);
            }
        }
    }
    Ok(())
}
