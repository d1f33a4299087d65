//! Single-run outputs for the `run` and `evaluate` subcommands.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use anyhow::{Context, Result};
use rssi_slam_core::{
    evaluate_frozen, map_error, run_boem, run_boem_partial, BoemTrace, GridMap, Mode, ObservationRecord, Theta,
};

use crate::config::{Config, Model};
use crate::experiment::RunMode;
use crate::io::{fmt_f64, write_theta_file};

fn create(dir: &Path, name: &str) -> Result<csv::Writer<BufWriter<File>>> {
    let p = dir.join(name);
    let f = File::create(&p).with_context(|| format!("creating {}", p.display()))?;
    Ok(csv::Writer::from_writer(BufWriter::new(f)))
}

fn cell_fields(grid: &GridMap, x: usize) -> [String; 2] {
    let c = grid.cell(x);
    [c.x.to_string(), c.y.to_string()]
}

pub fn run_trace(cfg: &Config, model: &Model, records: &[ObservationRecord], seed: u64, mode: RunMode) -> Result<BoemTrace> {
    let mut config = cfg.boem_config(seed, mode.stabilized());
    config.record_thetas = true;
    let theta0 = cfg.theta0(&model.grid)?;
    let run = match mode.runner_mode() {
        Mode::Full => run_boem,
        Mode::PerAp => run_boem_partial,
    };
    Ok(run(&model.grid, &model.kernel, &model.prior, theta0, config, records)?)
}

/// Writes `positions.csv`, `blocks.csv`, `params.csv`, `theta_hat.csv` and
/// `theta_tilde.csv`. Map errors are filled in when `truth` is given.
pub fn write_trace(
    dir: &Path,
    grid: &GridMap,
    records: &[ObservationRecord],
    trace: &BoemTrace,
    truth: Option<&Theta>,
) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;

    let mut w = create(dir, "positions.csv")?;
    w.write_record(["t", "hat_x", "hat_y", "tilde_x", "tilde_y", "truth_x", "truth_y"])?;
    for (i, r) in records.iter().enumerate() {
        let mut row = vec![trace.t[i].to_string()];
        row.extend(cell_fields(grid, trace.hat[i]));
        row.extend(cell_fields(grid, trace.tilde[i]));
        match r.truth {
            Some(c) => row.extend([c.x.to_string(), c.y.to_string()]),
            None => row.extend([String::new(), String::new()]),
        }
        w.write_record(&row)?;
    }
    w.flush()?;

    let err = |th: &Option<Theta>| -> Result<String> {
        Ok(match (th, truth) {
            (Some(est), Some(t)) => fmt_f64(map_error(est.maps(), t.maps())?),
            _ => String::new(),
        })
    };
    let mut w = create(dir, "blocks.csv")?;
    w.write_record([
        "event",
        "block",
        "aps",
        "end_t",
        "length",
        "total",
        "truncated",
        "stabilized",
        "frozen_hat",
        "frozen_tilde",
        "sigma2_hat",
        "sigma2_tilde",
        "map_error_hat",
        "map_error_tilde",
    ])?;
    let join = |v: &[usize]| v.iter().map(|j| j.to_string()).collect::<Vec<_>>().join(";");
    for (i, e) in trace.blocks.iter().enumerate() {
        let s2 = |th: &Option<Theta>| th.as_ref().map_or(String::new(), |t| fmt_f64(t.sigma2()));
        w.write_record([
            i.to_string(),
            e.block.to_string(),
            join(&e.aps),
            e.end_t.to_string(),
            e.length.to_string(),
            e.total.to_string(),
            e.truncated.to_string(),
            e.stabilized.to_string(),
            join(&e.hat_report.frozen),
            join(&e.tilde_report.frozen),
            s2(&e.theta_hat),
            s2(&e.theta_tilde),
            err(&e.theta_hat)?,
            err(&e.theta_tilde)?,
        ])?;
    }
    w.flush()?;

    let mut w = create(dir, "params.csv")?;
    w.write_record(["event", "block", "end_t", "estimator", "ap", "c1", "c2", "sigma2"])?;
    for (i, e) in trace.blocks.iter().enumerate() {
        for (name, th) in [("hat", &e.theta_hat), ("tilde", &e.theta_tilde)] {
            let Some(th) = th else { continue };
            for j in 0..th.ap_count() {
                w.write_record([
                    i.to_string(),
                    e.block.to_string(),
                    e.end_t.to_string(),
                    name.to_string(),
                    j.to_string(),
                    fmt_f64(th.c1()[j]),
                    fmt_f64(th.c2()[j]),
                    fmt_f64(th.sigma2()),
                ])?;
            }
        }
    }
    w.flush()?;

    write_theta_file(&dir.join("theta_hat.csv"), grid, &trace.theta_hat)?;
    write_theta_file(&dir.join("theta_tilde.csv"), grid, &trace.theta_tilde)?;
    Ok(())
}

/// Localizes `records` under a fixed `θ`; writes `localization.csv` and `evaluation.csv`.
pub fn evaluate(
    dir: &Path,
    cfg: &Config,
    model: &Model,
    theta: &Theta,
    records: &[ObservationRecord],
    truth: Option<&Theta>,
    seed: u64,
) -> Result<f64> {
    let q = cfg.experiment.quantile;
    let eval = evaluate_frozen(&model.grid, &model.kernel, theta, records, cfg.boem.particles, cfg.resampling(), seed, q)?;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut w = create(dir, "localization.csv")?;
    w.write_record(["t", "est_x", "est_y", "truth_x", "truth_y", "distance"])?;
    for (i, r) in records.iter().enumerate() {
        let truth_cell = r.truth.expect("checked by the evaluation");
        let mut row = vec![r.t.to_string()];
        row.extend(cell_fields(&model.grid, eval.estimates[i]));
        row.extend([truth_cell.x.to_string(), truth_cell.y.to_string(), fmt_f64(eval.distances[i])]);
        w.write_record(&row)?;
    }
    w.flush()?;
    let mut w = create(dir, "evaluation.csv")?;
    w.write_record(["metric", "value"])?;
    w.write_record(["steps".to_string(), records.len().to_string()])?;
    w.write_record([format!("localization_quantile_{q}"), fmt_f64(eval.quantile)])?;
    if let Some(t) = truth {
        w.write_record(["map_error".to_string(), fmt_f64(map_error(theta.maps(), t.maps())?)])?;
    }
    w.flush()?;
    Ok(eval.quantile)
}
