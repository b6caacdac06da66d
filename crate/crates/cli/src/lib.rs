//! Command-line front end: config files in, CSV or JSON tables out.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use loopdet::entropy::EntropyConvention;
use loopdet::postselect::AcceptRule;
use loopdet::ReferencePlane;

use crate::commands::{CalibrateArgs, ChannelsArgs, OptimizeArgs, PostselectArgs};
use crate::config::{Format, HeraldKind, RunConfig};
pub use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "loopdet", version, about = "Fiber-loop time-multiplexed detector toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Monte Carlo seed; overrides simulation.seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Monte Carlo trials; overrides simulation.n_trials.
    #[arg(long, global = true)]
    pub trials: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Where the source multi-photon content is evaluated: input|detected.
    #[arg(long, global = true)]
    pub reference_plane: Option<ReferencePlane>,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for Monte Carlo (0 = all cores). Does not affect results.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

fn parse_convention(s: &str) -> Result<EntropyConvention, String> {
    match s {
        "unnormalized" => Ok(EntropyConvention::Unnormalized),
        "normalized" => Ok(EntropyConvention::Normalized),
        other => Err(format!(
            "unknown convention `{other}` (expected unnormalized|normalized)"
        )),
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Channel transmissions and shares, or a division-ratio sweep.
    Channels {
        #[arg(long)]
        r: Option<f64>,
        #[arg(long)]
        sweep: bool,
        #[arg(long)]
        r_step: Option<f64>,
        /// Number of channels listed.
        #[arg(long)]
        channels: Option<usize>,
    },
    /// Entropy scan over the division ratio and its maximum.
    Optimize {
        #[arg(long)]
        grid_step: Option<f64>,
        #[arg(long)]
        tolerance: Option<f64>,
        #[arg(long, value_parser = parse_convention)]
        convention: Option<EntropyConvention>,
    },
    /// Device versus source multi-photon content over mean photon number.
    CmCurve {
        #[arg(long, value_delimiter = ',')]
        mu: Option<Vec<f64>>,
    },
    /// Monte Carlo time-of-flight histogram.
    SimulateTof,
    /// Loss calibration from measured channel shares.
    Calibrate {
        /// CSV with columns k,H_k,sigma_k.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        ratio_stat: Option<f64>,
        #[arg(long)]
        t_over_eta: Option<f64>,
        #[arg(long)]
        t_over_eta_sigma: Option<f64>,
        #[arg(long)]
        theta: Option<f64>,
    },
    /// Multi-photon suppression by heralded postselection.
    Postselect {
        #[arg(long, value_delimiter = ',')]
        mu: Option<Vec<f64>>,
        #[arg(long)]
        rule: Option<AcceptRule>,
        #[arg(long)]
        pair_coupling: Option<f64>,
        #[arg(long, value_enum)]
        herald: Option<HeraldKind>,
    },
}

/// Executes a parsed command line and writes its output.
pub fn run(cli: &Cli) -> CliResult<()> {
    let g = &cli.global;
    let cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let report = match &cli.command {
        Command::Channels {
            r,
            sweep,
            r_step,
            channels,
        } => commands::channels(
            &cfg,
            &ChannelsArgs {
                r: *r,
                sweep: *sweep,
                r_step: *r_step,
                channels: *channels,
            },
        )?,
        Command::Optimize {
            grid_step,
            tolerance,
            convention,
        } => commands::optimize(
            &cfg,
            &OptimizeArgs {
                grid_step: *grid_step,
                tolerance: *tolerance,
                convention: *convention,
            },
        )?,
        Command::CmCurve { mu } => {
            let plane = g.reference_plane.or(cfg.output.reference_plane).unwrap_or_default();
            commands::cm_curve(&cfg, mu.clone(), plane)?
        }
        Command::SimulateTof => commands::simulate_tof(&cfg, g.seed, g.trials, g.workers)?,
        Command::Calibrate {
            input,
            ratio_stat,
            t_over_eta,
            t_over_eta_sigma,
            theta,
        } => commands::calibrate(
            &cfg,
            &CalibrateArgs {
                input: input.as_deref(),
                ratio_stat: *ratio_stat,
                t_over_eta: *t_over_eta,
                t_over_eta_sigma: *t_over_eta_sigma,
                theta: *theta,
            },
        )?,
        Command::Postselect {
            mu,
            rule,
            pair_coupling,
            herald,
        } => commands::postselect(
            &cfg,
            &PostselectArgs {
                mu: mu.clone(),
                rule: *rule,
                pair_coupling: *pair_coupling,
                herald: *herald,
            },
            g.seed,
            g.trials,
            g.workers,
        )?,
    };
    let format = g.format.or(cfg.output.format).unwrap_or_default();
    let out = g.out.as_deref().or(cfg.output.path.as_deref());
    report.emit(format, out)
}
