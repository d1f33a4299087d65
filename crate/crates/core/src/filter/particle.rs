//! Bootstrap particle filter: multinomial selection, propagation through the
//! transition kernel, reweighting by the emission density.

use alloc::vec::Vec;

use rand::Rng;

use super::argmax_first;
use crate::emission::{emission_constants, emission_with_constants};
use crate::error::{Error, Result};
use crate::grid::{GridMap, Point};
use crate::math::normalize_log_weights;
use crate::observation::ObservationRecord;
use crate::theta::Theta;
use crate::transition::TransitionKernel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Resampling {
    /// Independent draws at every step.
    #[default]
    Multinomial,
    /// One uniform offset, `N` evenly spaced pointers.
    Systematic,
}

/// Weighted particle cloud `{ξ^p, ω^p}` over cell indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSystem {
    cells: Vec<usize>,
    weights: Vec<f64>,
    ancestors: Vec<usize>,
    fallback: bool,
}

impl ParticleSystem {
    /// `n` particles drawn uniformly over `cell_count` cells, weights `1/n`.
    pub fn uniform<R: Rng + ?Sized>(n: usize, cell_count: usize, rng: &mut R) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("particle count must be positive"));
        }
        if cell_count == 0 {
            return Err(Error::Empty);
        }
        let cells = (0..n).map(|_| rng.random_range(0..cell_count)).collect();
        Ok(Self {
            cells,
            weights: alloc::vec![1.0 / n as f64; n],
            ancestors: (0..n).collect(),
            fallback: false,
        })
    }

    pub fn from_parts(cells: Vec<usize>, weights: Vec<f64>) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::Empty);
        }
        if cells.len() != weights.len() {
            return Err(Error::DimensionMismatch { expected: cells.len(), found: weights.len() });
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !(*w >= 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter("weights must be nonnegative and sum to one"));
        }
        let n = cells.len();
        Ok(Self { cells, weights, ancestors: (0..n).collect(), fallback: false })
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Resampling index `I^p` used to create each particle.
    pub fn ancestors(&self) -> &[usize] {
        &self.ancestors
    }

    /// True when every emission weight was non-finite and uniform weights
    /// were substituted.
    pub fn used_fallback(&self) -> bool {
        self.fallback
    }

    /// Effective sample size `1 / Σ ω²`.
    pub fn ess(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }

    /// Index of the particle with the largest weight (lowest index on ties).
    pub fn map_particle(&self) -> usize {
        argmax_first(&self.weights)
    }

    /// Cell of the max-weight particle.
    pub fn map_estimate(&self) -> usize {
        self.cells[self.map_particle()]
    }

    /// Weighted mean position (diagnostic only).
    pub fn posterior_mean(&self, grid: &GridMap) -> Point {
        let (mut x, mut y) = (0.0, 0.0);
        for (&c, &w) in self.cells.iter().zip(&self.weights) {
            let c = grid.cell(c);
            x += w * c.x as f64;
            y += w * c.y as f64;
        }
        Point::new(x, y)
    }
}

fn draw_index(cumulative: &[f64], u: f64) -> usize {
    cumulative.partition_point(|&c| c <= u).min(cumulative.len() - 1)
}

/// One step of the bootstrap filter.
pub fn bootstrap_filter_recursion<R: Rng + ?Sized>(
    prev: &ParticleSystem,
    kernel: &TransitionKernel,
    theta: &Theta,
    record: &ObservationRecord,
    resampling: Resampling,
    rng: &mut R,
) -> ParticleSystem {
    let n = prev.len();
    let mut cumulative = Vec::with_capacity(n);
    let mut acc = 0.0;
    for &w in &prev.weights {
        acc += w;
        cumulative.push(acc);
    }
    let total = acc;

    let mut cells = Vec::with_capacity(n);
    let mut ancestors = Vec::with_capacity(n);
    match resampling {
        Resampling::Multinomial => {
            for _ in 0..n {
                let u: f64 = rng.random::<f64>() * total;
                let i = draw_index(&cumulative, u);
                ancestors.push(i);
                cells.push(kernel.sample_next(prev.cells[i], rng));
            }
        }
        Resampling::Systematic => {
            let offset: f64 = rng.random();
            for p in 0..n {
                let u = (p as f64 + offset) / n as f64 * total;
                ancestors.push(draw_index(&cumulative, u));
            }
            for &i in &ancestors {
                cells.push(kernel.sample_next(prev.cells[i], rng));
            }
        }
    }

    let (inv, norm) = emission_constants(theta.sigma2());
    let mut weights: Vec<f64> = cells
        .iter()
        .map(|&x| emission_with_constants(theta, x, &record.y, &record.mask, inv, norm))
        .collect();
    let fallback = !normalize_log_weights(&mut weights);
    if fallback {
        weights.iter_mut().for_each(|w| *w = 1.0 / n as f64);
    }
    ParticleSystem { cells, weights, ancestors, fallback }
}
