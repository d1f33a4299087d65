//! Monte Carlo harness: simulated truth, BOEM runs and the known-maps baseline.
//!
//! Every replication owns its seed, so rows are identical whatever the thread
//! count. Wall-clock time is logged, never written to the report files.

use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use anyhow::{ensure, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rssi_slam_core::metrics::quantile;
use rssi_slam_core::{
    evaluate_frozen, localization_quantile, map_error, simulate_from_theta, simulate_trajectory, ApMask, BoemRunner,
    GridMap, InitialDistribution, Mode, ObservationRecord, Theta, Visibility,
};

use crate::config::{Config, Model};
use crate::io::fmt_f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, clap::ValueEnum)]
pub enum RunMode {
    Stabilized,
    Unstabilized,
    Partial,
}

impl RunMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Stabilized => "stabilized",
            Self::Unstabilized => "unstabilized",
            Self::Partial => "partial",
        }
    }

    pub fn runner_mode(self) -> Mode {
        match self {
            Self::Partial => Mode::PerAp,
            _ => Mode::Full,
        }
    }

    pub fn stabilized(self) -> bool {
        self != Self::Unstabilized
    }
}

/// Simulated ground truth for one seed.
pub struct Truth {
    pub theta: Theta,
    pub path: Vec<usize>,
    pub records: Vec<ObservationRecord>,
}

/// Draws `δ* ~ N(0, Σ)`, a trajectory and a fully visible stream of `steps` readings.
pub fn simulate_truth(cfg: &Config, model: &Model, seed: u64, steps: usize) -> Result<Truth> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = model.grid.ap_count();
    let delta = model.prior.sample(&mut rng);
    let theta = Theta::new(&model.grid, vec![cfg.model.c1; b], vec![cfg.model.c2; b], delta, cfg.model.sigma2)?;
    let path = simulate_trajectory(&InitialDistribution::Uniform, &model.kernel, steps, &mut rng)?;
    let records = simulate_from_theta(&model.grid, &path, &theta, &Visibility::Full, &mut rng)?;
    Ok(Truth { theta, path, records })
}

/// Hides readings of a fully visible stream; Bernoulli draws use stream 4 of `seed`.
pub fn apply_visibility(
    grid: &GridMap,
    records: &[ObservationRecord],
    path: &[usize],
    visibility: &Visibility,
    seed: u64,
) -> Vec<ObservationRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(4);
    records
        .iter()
        .zip(path)
        .map(|(r, &x)| {
            let bits: Vec<bool> = match visibility {
                Visibility::Full => vec![true; r.y.len()],
                Visibility::Bernoulli(p) => p.iter().map(|&pj| rng.random::<f64>() < pj).collect(),
                Visibility::Range { radius } => (0..r.y.len()).map(|j| grid.ap_distance(x, j) <= *radius).collect(),
            };
            let mask = ApMask::from_bools(&bits);
            let y = r.y.iter().zip(&bits).map(|(&v, &on)| if on { v } else { f64::NAN }).collect();
            ObservationRecord { t: r.t, y, mask, truth: r.truth }
        })
        .collect()
}

/// One report row: a replication, a mode and a schedule block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockRow {
    pub replication: usize,
    pub seed: u64,
    pub mode: RunMode,
    pub block: u64,
    pub end_t: u64,
    pub map_error_hat: f64,
    pub map_error_tilde: f64,
    pub quantile_hat: f64,
    pub quantile_tilde: f64,
    pub quantile_optimal: f64,
    pub sigma2_hat: f64,
    pub sigma2_tilde: f64,
}

pub const BLOCK_HEADER: [&str; 12] = [
    "replication",
    "seed",
    "mode",
    "block",
    "end_t",
    "map_error_hat",
    "map_error_tilde",
    "quantile_hat",
    "quantile_tilde",
    "quantile_optimal",
    "sigma2_hat",
    "sigma2_tilde",
];

pub const METRICS: [&str; 5] = ["map_error_hat", "map_error_tilde", "quantile_hat", "quantile_tilde", "quantile_optimal"];

impl BlockRow {
    pub fn metric(&self, name: &str) -> f64 {
        match name {
            "map_error_hat" => self.map_error_hat,
            "map_error_tilde" => self.map_error_tilde,
            "quantile_hat" => self.quantile_hat,
            "quantile_tilde" => self.quantile_tilde,
            "quantile_optimal" => self.quantile_optimal,
            _ => panic!("unknown metric {name}"),
        }
    }

    fn fields(&self) -> Vec<String> {
        vec![
            self.replication.to_string(),
            self.seed.to_string(),
            self.mode.name().to_string(),
            self.block.to_string(),
            self.end_t.to_string(),
            fmt_f64(self.map_error_hat),
            fmt_f64(self.map_error_tilde),
            fmt_f64(self.quantile_hat),
            fmt_f64(self.quantile_tilde),
            fmt_f64(self.quantile_optimal),
            fmt_f64(self.sigma2_hat),
            fmt_f64(self.sigma2_tilde),
        ]
    }
}

pub struct ExperimentReport {
    pub rows: Vec<BlockRow>,
    pub seeds: Vec<u64>,
    pub wall_clock: Duration,
}

/// Runs one mode on one replication and scores it at every schedule boundary.
pub fn run_replication(
    cfg: &Config,
    model: &Model,
    replication: usize,
    seed: u64,
    mode: RunMode,
    blocks: u64,
) -> Result<Vec<BlockRow>> {
    let schedule = cfg.schedule();
    let steps = schedule.cumulative(blocks) as usize;
    let truth = simulate_truth(cfg, model, seed, steps)?;
    let records = match mode {
        RunMode::Partial => {
            let vis = cfg.experiment.partial_visibility.resolve(model.grid.ap_count())?;
            apply_visibility(&model.grid, &truth.records, &truth.path, &vis, seed)
        }
        _ => truth.records,
    };
    let q = cfg.experiment.quantile;
    let optimal =
        evaluate_frozen(&model.grid, &model.kernel, &truth.theta, &records, cfg.boem.particles, cfg.resampling(), seed, q)?;
    let mut runner = BoemRunner::new(
        &model.grid,
        &model.kernel,
        &model.prior,
        cfg.theta0(&model.grid)?,
        cfg.boem_config(seed, mode.stabilized()),
        mode.runner_mode(),
    )?;

    let truth_cells: Vec<_> = truth.path.iter().map(|&x| model.grid.cell(x)).collect();
    let mut hat_d = Vec::new();
    let mut tilde_d = Vec::new();
    let mut rows = Vec::with_capacity(blocks as usize);
    let mut start = 0usize;
    for (i, r) in records.iter().enumerate() {
        let out = runner.step(r)?;
        hat_d.push(model.grid.cell(out.hat).distance(truth_cells[i]));
        tilde_d.push(model.grid.cell(out.tilde).distance(truth_cells[i]));
        let k = rows.len() as u64 + 1;
        if (i + 1) as u64 == schedule.cumulative(k) {
            rows.push(BlockRow {
                replication,
                seed,
                mode,
                block: k,
                end_t: r.t,
                map_error_hat: map_error(runner.theta_hat().maps(), truth.theta.maps())?,
                map_error_tilde: map_error(runner.theta_tilde().maps(), truth.theta.maps())?,
                quantile_hat: localization_quantile(&hat_d[start..], q)?,
                quantile_tilde: localization_quantile(&tilde_d[start..], q)?,
                quantile_optimal: localization_quantile(&optimal.distances[start..=i], q)?,
                sigma2_hat: runner.theta_hat().sigma2(),
                sigma2_tilde: runner.theta_tilde().sigma2(),
            });
            start = i + 1;
        }
    }
    Ok(rows)
}

/// Replications `0..replications` with seeds `base_seed + r`, in parallel.
pub fn run_experiment(
    cfg: &Config,
    base_seed: u64,
    modes: &[RunMode],
    blocks: u64,
    replications: usize,
) -> Result<ExperimentReport> {
    ensure!(blocks > 0 && replications > 0, "experiment needs at least one block and one replication");
    ensure!(!modes.is_empty(), "no mode selected");
    let started = Instant::now();
    let model = cfg.build()?;
    let seeds: Vec<u64> = (0..replications as u64).map(|r| base_seed.wrapping_add(r)).collect();
    let mut modes = modes.to_vec();
    modes.sort();
    modes.dedup();
    let jobs: Vec<(usize, RunMode)> = (0..replications).flat_map(|r| modes.iter().map(move |&m| (r, m))).collect();
    let results: Vec<Result<Vec<BlockRow>>> = jobs
        .par_iter()
        .map(|&(r, m)| {
            let t0 = Instant::now();
            let rows = run_replication(cfg, &model, r, seeds[r], m, blocks)
                .with_context(|| format!("replication {r} ({})", m.name()));
            log::info!("replication {r} {} done in {:.1?}", m.name(), t0.elapsed());
            rows
        })
        .collect();
    let mut rows = Vec::new();
    for res in results {
        rows.extend(res?);
    }
    let wall_clock = started.elapsed();
    log::info!("experiment finished in {wall_clock:.1?}");
    Ok(ExperimentReport { rows, seeds, wall_clock })
}

/// Five-number summary of one metric over replications.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub mode: RunMode,
    pub block: u64,
    pub metric: &'static str,
    pub count: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

pub const SUMMARY_HEADER: [&str; 9] = ["mode", "block", "metric", "count", "min", "q1", "median", "q3", "max"];

/// Nearest-rank quartiles per (mode, block, metric).
pub fn summarize(rows: &[BlockRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(RunMode, u64)> = rows.iter().map(|r| (r.mode, r.block)).collect();
    keys.sort();
    keys.dedup();
    let mut out = Vec::new();
    for (mode, block) in keys {
        let group: Vec<&BlockRow> = rows.iter().filter(|r| r.mode == mode && r.block == block).collect();
        for metric in METRICS {
            let v: Vec<f64> = group.iter().map(|r| r.metric(metric)).collect();
            let qv = |p: f64| quantile(&v, p).expect("nonempty group");
            out.push(SummaryRow {
                mode,
                block,
                metric,
                count: v.len(),
                min: v.iter().copied().fold(f64::INFINITY, f64::min),
                q1: qv(0.25),
                median: qv(0.5),
                q3: qv(0.75),
                max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            });
        }
    }
    out
}

pub fn write_blocks<W: Write>(out: W, rows: &[BlockRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(BLOCK_HEADER)?;
    for r in rows {
        w.write_record(r.fields())?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary<W: Write>(out: W, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for s in rows {
        w.write_record([
            s.mode.name().to_string(),
            s.block.to_string(),
            s.metric.to_string(),
            s.count.to_string(),
            fmt_f64(s.min),
            fmt_f64(s.q1),
            fmt_f64(s.median),
            fmt_f64(s.q3),
            fmt_f64(s.max),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `blocks.csv` and `summary.csv` under `dir`.
pub fn write_report(dir: &Path, report: &ExperimentReport) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let file = |name: &str| -> Result<std::io::BufWriter<std::fs::File>> {
        let p = dir.join(name);
        Ok(std::io::BufWriter::new(std::fs::File::create(&p).with_context(|| format!("creating {}", p.display()))?))
    };
    write_blocks(file("blocks.csv")?, &report.rows)?;
    write_summary(file("summary.csv")?, &summarize(&report.rows))?;
    Ok(())
}
