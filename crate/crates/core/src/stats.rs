//! Block sufficient statistics.
//!
//! For a block of `n` steps and access point `j`:
//! - occupancy `S1(x)`: expected fraction of steps spent in cell `x`,
//! - RSSI sums `S2_j(x)`: expected occupancy-weighted mean of `y_j` in cell `x`,
//! - squares `S3_j`: mean of `y_j²` (observation-only).
//!
//! When access points are observed on different steps each one carries its
//! own occupancy ([`ApStatistic`]); with full visibility they share one
//! ([`SufficientStats`]).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::theta::ApField;

/// Flat vector layout `[S1 (|C|) | S2 (B × |C|) | S3 (B)]` used by the
/// auxiliary statistics of the forward recursions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StatLayout {
    pub cells: usize,
    pub aps: usize,
}

impl StatLayout {
    pub fn new(cells: usize, aps: usize) -> Self {
        Self { cells, aps }
    }

    pub fn dim(&self) -> usize {
        self.cells * (1 + self.aps) + self.aps
    }

    #[inline]
    pub fn rssi_offset(&self, ap: usize) -> usize {
        self.cells * (1 + ap)
    }

    #[inline]
    pub fn square_offset(&self) -> usize {
        self.cells * (1 + self.aps)
    }

    /// Adds `weight · s(x, y)` to `out`, the statistic of being in `cell`
    /// while observing `y`.
    pub fn add_increment(&self, out: &mut [f64], cell: usize, y: &[f64], weight: f64) {
        out[cell] += weight;
        for (j, &yj) in y.iter().enumerate() {
            out[self.rssi_offset(j) + cell] += weight * yj;
        }
        let o = self.square_offset();
        for (j, &yj) in y.iter().enumerate() {
            out[o + j] += weight * yj * yj;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    occupancy: Vec<f64>,
    rssi: ApField,
    squares: Vec<f64>,
    /// Number of steps the statistic summarizes.
    steps: f64,
}

impl SufficientStats {
    pub fn new(occupancy: Vec<f64>, rssi: ApField, squares: Vec<f64>, steps: f64) -> Result<Self> {
        if rssi.cell_count() != occupancy.len() {
            return Err(Error::DimensionMismatch { expected: occupancy.len(), found: rssi.cell_count() });
        }
        if squares.len() != rssi.ap_count() {
            return Err(Error::DimensionMismatch { expected: rssi.ap_count(), found: squares.len() });
        }
        Ok(Self { occupancy, rssi, squares, steps })
    }

    pub fn zeros(cells: usize, aps: usize) -> Self {
        Self { occupancy: vec![0.0; cells], rssi: ApField::zeros(aps, cells), squares: vec![0.0; aps], steps: 0.0 }
    }

    pub fn from_flat(layout: StatLayout, flat: &[f64], steps: f64) -> Result<Self> {
        if flat.len() != layout.dim() {
            return Err(Error::DimensionMismatch { expected: layout.dim(), found: flat.len() });
        }
        let c = layout.cells;
        let occupancy = flat[..c].to_vec();
        let mut rssi = ApField::zeros(layout.aps, c);
        for j in 0..layout.aps {
            let o = layout.rssi_offset(j);
            rssi.row_mut(j).copy_from_slice(&flat[o..o + c]);
        }
        let squares = flat[layout.square_offset()..].to_vec();
        Ok(Self { occupancy, rssi, squares, steps })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = self.occupancy.clone();
        v.extend_from_slice(self.rssi.as_slice());
        v.extend_from_slice(&self.squares);
        v
    }

    pub fn layout(&self) -> StatLayout {
        StatLayout::new(self.occupancy.len(), self.squares.len())
    }

    pub fn occupancy(&self) -> &[f64] {
        &self.occupancy
    }

    pub fn rssi(&self) -> &ApField {
        &self.rssi
    }

    pub fn squares(&self) -> &[f64] {
        &self.squares
    }

    pub fn steps(&self) -> f64 {
        self.steps
    }

    pub fn ap_count(&self) -> usize {
        self.squares.len()
    }

    pub fn cell_count(&self) -> usize {
        self.occupancy.len()
    }

    /// View of access point `j`'s part.
    pub fn ap_view(&self, j: usize) -> ApStatView<'_> {
        ApStatView { occupancy: &self.occupancy, rssi: self.rssi.row(j), square: self.squares[j] }
    }

    /// `(prev_weight · self + new_weight · new) / (prev_weight + new_weight)`.
    pub fn running_average(&mut self, prev_weight: f64, new: &SufficientStats, new_weight: f64) {
        let total = prev_weight + new_weight;
        avg_into(&mut self.occupancy, prev_weight, &new.occupancy, new_weight, total);
        avg_into(self.rssi.as_mut_slice(), prev_weight, new.rssi.as_slice(), new_weight, total);
        avg_into(&mut self.squares, prev_weight, &new.squares, new_weight, total);
        self.steps += new.steps;
    }
}

fn avg_into(dst: &mut [f64], w0: f64, src: &[f64], w1: f64, total: f64) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = (w0 * *d + w1 * s) / total;
    }
}

/// One access point's statistic with its own occupancy.
#[derive(Debug, Clone, PartialEq)]
pub struct ApStatistic {
    pub occupancy: Vec<f64>,
    pub rssi: Vec<f64>,
    pub square: f64,
    pub steps: f64,
}

impl ApStatistic {
    pub fn view(&self) -> ApStatView<'_> {
        ApStatView { occupancy: &self.occupancy, rssi: &self.rssi, square: self.square }
    }

    pub fn running_average(&mut self, prev_weight: f64, new: &ApStatistic, new_weight: f64) {
        let total = prev_weight + new_weight;
        avg_into(&mut self.occupancy, prev_weight, &new.occupancy, new_weight, total);
        avg_into(&mut self.rssi, prev_weight, &new.rssi, new_weight, total);
        self.square = (prev_weight * self.square + new_weight * new.square) / total;
        self.steps += new.steps;
    }
}

/// Borrowed per-access-point statistic consumed by the M-step.
#[derive(Debug, Clone, Copy)]
pub struct ApStatView<'a> {
    pub occupancy: &'a [f64],
    pub rssi: &'a [f64],
    pub square: f64,
}
