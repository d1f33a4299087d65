use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rssi_slam::config::Config;
use rssi_slam::experiment::{apply_visibility, run_experiment, simulate_truth, write_report, RunMode};
use rssi_slam::io::{read_log_file, read_theta_file, write_log_file, write_theta_file};
use rssi_slam::trace::{evaluate, run_trace, write_trace};
use rssi_slam_core::{ObservationRecord, Visibility};

#[derive(Parser)]
#[command(name = "rssi-slam", version, about = "Joint WiFi localization and propagation-map estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// TOML configuration; the bundled 31×31 study when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Draws true maps and an observation log.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Overrides `simulation.steps`.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Runs BOEM on a log and writes its trace.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = RunMode::Stabilized)]
        mode: RunMode,
        /// Observation log; simulated from the configuration when omitted.
        #[arg(long)]
        obs: Option<PathBuf>,
        /// True parameters, for map errors.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Localizes a log with fixed parameters.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        theta: PathBuf,
        #[arg(long)]
        obs: PathBuf,
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Monte Carlo study: BOEM against the known-maps baseline.
    #[command(name = "reproduce-sec5a")]
    Reproduce {
        #[command(flatten)]
        common: Common,
        /// Repeatable; stabilized and unstabilized by default.
        #[arg(long, value_enum)]
        mode: Vec<RunMode>,
        #[arg(long)]
        replications: Option<usize>,
        /// 50 replications.
        #[arg(long, conflicts_with = "replications")]
        full: bool,
        #[arg(long)]
        blocks: Option<u64>,
    },
}

fn load(path: &Option<PathBuf>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::study()),
    }
}

fn read_log_checked(path: &Path, ap_count: usize) -> Result<Vec<ObservationRecord>> {
    let (b, records) = read_log_file(path).with_context(|| format!("reading {}", path.display()))?;
    if b != ap_count {
        bail!("{} has {b} access points, configuration has {ap_count}", path.display());
    }
    Ok(records)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Simulate { common, steps } => {
            let cfg = load(&common.config)?;
            let model = cfg.build()?;
            let truth = simulate_truth(&cfg, &model, common.seed, steps.unwrap_or(cfg.simulation.steps))?;
            let vis = cfg.simulation.visibility.resolve(model.grid.ap_count())?;
            let records = apply_visibility(&model.grid, &truth.records, &truth.path, &vis, common.seed);
            std::fs::create_dir_all(&common.out)?;
            write_log_file(&common.out.join("observations.csv"), model.grid.ap_count(), &records)?;
            write_theta_file(&common.out.join("truth_theta.csv"), &model.grid, &truth.theta)?;
            log::info!("wrote {} records to {}", records.len(), common.out.display());
        }
        Command::Run { common, mode, obs, truth } => {
            let cfg = load(&common.config)?;
            let model = cfg.build()?;
            let (records, truth) = match obs {
                Some(p) => {
                    let t = truth.map(|t| read_theta_file(&t, &model.grid)).transpose()?;
                    (read_log_checked(&p, model.grid.ap_count())?, t)
                }
                None => {
                    let t = simulate_truth(&cfg, &model, common.seed, cfg.simulation.steps)?;
                    // Full modes need every reading.
                    let vis = match mode {
                        RunMode::Partial => cfg.experiment.partial_visibility.resolve(model.grid.ap_count())?,
                        _ => Visibility::Full,
                    };
                    (apply_visibility(&model.grid, &t.records, &t.path, &vis, common.seed), Some(t.theta))
                }
            };
            let trace = run_trace(&cfg, &model, &records, common.seed, mode)?;
            write_trace(&common.out, &model.grid, &records, &trace, truth.as_ref())?;
            if !trace.never_observed.is_empty() {
                log::warn!("access points never observed: {:?}", trace.never_observed);
            }
            log::info!("{} block updates written to {}", trace.blocks.len(), common.out.display());
        }
        Command::Evaluate { common, theta, obs, truth } => {
            let cfg = load(&common.config)?;
            let model = cfg.build()?;
            let th = read_theta_file(&theta, &model.grid).with_context(|| format!("reading {}", theta.display()))?;
            let truth = truth.map(|t| read_theta_file(&t, &model.grid)).transpose()?;
            let records = read_log_checked(&obs, model.grid.ap_count())?;
            let q = evaluate(&common.out, &cfg, &model, &th, &records, truth.as_ref(), common.seed)?;
            println!("localization quantile {}: {q}", cfg.experiment.quantile);
        }
        Command::Reproduce { common, mode, replications, full, blocks } => {
            let cfg = load(&common.config)?;
            let modes = if mode.is_empty() { vec![RunMode::Stabilized, RunMode::Unstabilized] } else { mode };
            let reps = if full { 50 } else { replications.unwrap_or(cfg.experiment.replications) };
            let blocks = blocks.unwrap_or(cfg.experiment.blocks);
            let report = run_experiment(&cfg, common.seed, &modes, blocks, reps)?;
            write_report(&common.out, &report)?;
            eprintln!("wall-clock {:.1?}", report.wall_clock);
        }
    }
    Ok(())
}
