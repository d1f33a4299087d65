//! Comma-separated file formats.
//!
//! Observation log: `t,mask,y1..yB,truth_x,truth_y`. The mask is a bitstring
//! with the first access point first, hidden readings are written as `NaN` and
//! the truth columns are empty when unknown.
//!
//! Parameter dump: `ap,cell,x,y,c1,c2,sigma2,delta,F`, one row per access point
//! and cell.

use std::io::{Read, Write};
use std::path::Path;

use rssi_slam_core::{ApField, ApMask, Cell, GridMap, ObservationRecord, Theta};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Model(#[from] rssi_slam_core::Error),
}

pub type Result<T> = std::result::Result<T, IoError>;

/// Shortest text that round-trips the value: 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v:.16e}")
    }
}

fn parse_err(line: u64, message: impl Into<String>) -> IoError {
    IoError::Parse { line, message: message.into() }
}

pub fn log_header(ap_count: usize) -> Vec<String> {
    let mut h = vec!["t".to_string(), "mask".to_string()];
    h.extend((1..=ap_count).map(|j| format!("y{j}")));
    h.push("truth_x".into());
    h.push("truth_y".into());
    h
}

pub fn write_log<W: Write>(out: W, ap_count: usize, records: &[ObservationRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(log_header(ap_count))?;
    for r in records {
        if r.y.len() != ap_count || r.mask.len() != ap_count {
            return Err(rssi_slam_core::Error::DimensionMismatch { expected: ap_count, found: r.y.len() }.into());
        }
        let mut row = vec![r.t.to_string(), r.mask.to_bitstring()];
        row.extend(r.y.iter().enumerate().map(|(j, &v)| if r.mask.get(j) { fmt_f64(v) } else { "NaN".into() }));
        match r.truth {
            Some(c) => {
                row.push(c.x.to_string());
                row.push(c.y.to_string());
            }
            None => {
                row.push(String::new());
                row.push(String::new());
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a log; the access-point count comes from the header.
pub fn read_log<R: Read>(input: R) -> Result<(usize, Vec<ObservationRecord>)> {
    let mut rd = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = rd.headers()?.clone();
    let b = header.len().checked_sub(4).ok_or_else(|| parse_err(1, "header too short"))?;
    let expected = log_header(b);
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(parse_err(1, format!("expected header {}", expected.join(","))));
    }
    let mut out = Vec::new();
    let mut last: Option<u64> = None;
    for rec in rd.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let t: u64 = rec[0].parse().map_err(|_| parse_err(line, format!("bad step index {:?}", &rec[0])))?;
        if last.is_some_and(|p| t <= p) {
            return Err(parse_err(line, "step indices must strictly increase"));
        }
        last = Some(t);
        let mask = ApMask::parse_bitstring(&rec[1]).map_err(|e| parse_err(line, e.to_string()))?;
        if mask.len() != b {
            return Err(parse_err(line, format!("mask has {} bits, expected {b}", mask.len())));
        }
        let mut y = Vec::with_capacity(b);
        for j in 0..b {
            let field = &rec[2 + j];
            let v: f64 = field.parse().map_err(|_| parse_err(line, format!("bad reading {field:?} in y{}", j + 1)))?;
            if mask.get(j) && !v.is_finite() {
                return Err(parse_err(line, format!("visible reading y{} is not finite", j + 1)));
            }
            y.push(if mask.get(j) { v } else { f64::NAN });
        }
        let truth = match (&rec[2 + b], &rec[3 + b]) {
            ("", "") => None,
            (x, yv) => {
                let x: i64 = x.parse().map_err(|_| parse_err(line, format!("bad truth_x {x:?}")))?;
                let yv: i64 = yv.parse().map_err(|_| parse_err(line, format!("bad truth_y {yv:?}")))?;
                Some(Cell::new(x, yv))
            }
        };
        out.push(ObservationRecord { t, y, mask, truth });
    }
    Ok((b, out))
}

pub fn write_log_file(path: &Path, ap_count: usize, records: &[ObservationRecord]) -> Result<()> {
    write_log(std::io::BufWriter::new(std::fs::File::create(path)?), ap_count, records)
}

pub fn read_log_file(path: &Path) -> Result<(usize, Vec<ObservationRecord>)> {
    read_log(std::io::BufReader::new(std::fs::File::open(path)?))
}

pub const THETA_HEADER: [&str; 9] = ["ap", "cell", "x", "y", "c1", "c2", "sigma2", "delta", "F"];

pub fn write_theta<W: Write>(out: W, grid: &GridMap, theta: &Theta) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(THETA_HEADER)?;
    for j in 0..theta.ap_count() {
        for x in 0..grid.len() {
            let c = grid.cell(x);
            w.write_record([
                j.to_string(),
                x.to_string(),
                c.x.to_string(),
                c.y.to_string(),
                fmt_f64(theta.c1()[j]),
                fmt_f64(theta.c2()[j]),
                fmt_f64(theta.sigma2()),
                fmt_f64(theta.delta().get(j, x)),
                fmt_f64(theta.maps().get(j, x)),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Rebuilds `θ` from a dump; maps are recomputed from `(c1, c2, δ)`.
pub fn read_theta<R: Read>(input: R, grid: &GridMap) -> Result<Theta> {
    let mut rd = csv::Reader::from_reader(input);
    if rd.headers()?.iter().ne(THETA_HEADER) {
        return Err(parse_err(1, format!("expected header {}", THETA_HEADER.join(","))));
    }
    let (b, c) = (grid.ap_count(), grid.len());
    let mut coef: Vec<Option<(f64, f64)>> = vec![None; b];
    let mut delta = ApField::zeros(b, c);
    let mut seen = vec![false; b * c];
    let mut sigma2 = None;
    for rec in rd.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let num = |i: usize| -> Result<f64> {
            rec[i].parse().map_err(|_| parse_err(line, format!("bad {} value {:?}", THETA_HEADER[i], &rec[i])))
        };
        let j: usize = rec[0].parse().map_err(|_| parse_err(line, "bad access point index"))?;
        let x: usize = rec[1].parse().map_err(|_| parse_err(line, "bad cell index"))?;
        if j >= b || x >= c {
            return Err(parse_err(line, format!("index ({j}, {x}) outside {b} access points × {c} cells")));
        }
        let cell = grid.cell(x);
        if rec[2].parse::<i64>().ok() != Some(cell.x) || rec[3].parse::<i64>().ok() != Some(cell.y) {
            return Err(parse_err(line, format!("cell {x} is not at ({}, {})", &rec[2], &rec[3])));
        }
        if std::mem::replace(&mut seen[j * c + x], true) {
            return Err(parse_err(line, format!("duplicate row for access point {j}, cell {x}")));
        }
        let (a, bb, s) = (num(4)?, num(5)?, num(6)?);
        if coef[j].is_some_and(|(u, v)| u.to_bits() != a.to_bits() || v.to_bits() != bb.to_bits()) {
            return Err(parse_err(line, "coefficients differ between rows of the same access point"));
        }
        if sigma2.is_some_and(|v: f64| v.to_bits() != s.to_bits()) {
            return Err(parse_err(line, "noise variance differs between rows"));
        }
        coef[j] = Some((a, bb));
        sigma2 = Some(s);
        delta.set(j, x, num(7)?);
    }
    if seen.iter().any(|s| !s) {
        return Err(parse_err(0, "parameter dump does not cover every access point and cell"));
    }
    let (c1, c2) = coef.into_iter().map(|v| v.expect("covered")).unzip();
    Ok(Theta::new(grid, c1, c2, delta, sigma2.expect("nonempty"))?)
}

pub fn write_theta_file(path: &Path, grid: &GridMap, theta: &Theta) -> Result<()> {
    write_theta(std::io::BufWriter::new(std::fs::File::create(path)?), grid, theta)
}

pub fn read_theta_file(path: &Path, grid: &GridMap) -> Result<Theta> {
    read_theta(std::io::BufReader::new(std::fs::File::open(path)?), grid)
}
