//! Gaussian random-walk transition kernel on the grid,
//! `q(x, x') ∝ exp(−‖x − x'‖² / a)`, normalized over every cell of the row.

use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::grid::GridMap;
use crate::math::exp;

#[derive(Debug, Clone)]
pub struct TransitionKernel {
    a: f64,
    n: usize,
    probs: Vec<f64>,
    cumulative: Vec<f64>,
}

impl TransitionKernel {
    pub fn build(grid: &GridMap, a: f64) -> Result<Self> {
        Self::build_with_cutoff(grid, a, None)
    }

    /// Optionally drops moves longer than `radius` (in grid units). `None`
    /// keeps full support.
    pub fn build_with_cutoff(grid: &GridMap, a: f64, radius: Option<f64>) -> Result<Self> {
        if !(a > 0.0) || !a.is_finite() {
            return Err(Error::InvalidParameter("transition spread a must be positive"));
        }
        if let Some(r) = radius {
            if !(r >= 0.0) {
                return Err(Error::InvalidParameter("cutoff radius must be nonnegative"));
            }
        }
        let n = grid.len();
        let mut probs = Vec::with_capacity(n * n);
        let mut cumulative = Vec::with_capacity(n * n);
        let r2 = radius.map(|r| r * r);
        for i in 0..n {
            let start = probs.len();
            let mut total = 0.0;
            for k in 0..n {
                let d2 = grid.cell_dist2(i, k);
                let w = match r2 {
                    Some(r2) if d2 > r2 => 0.0,
                    _ => exp(-d2 / a),
                };
                total += w;
                probs.push(w);
            }
            // The self-transition has weight 1, so total >= 1.
            let mut acc = 0.0;
            for p in &mut probs[start..] {
                *p /= total;
                acc += *p;
                cumulative.push(acc);
            }
            // Pin the tail at 1 from the last reachable cell on, so sampling
            // never runs off the row or lands on an unreachable cell.
            let last = (0..n).rev().find(|&k| probs[start + k] > 0.0).unwrap_or(n - 1);
            for c in &mut cumulative[start + last..] {
                *c = 1.0;
            }
        }
        Ok(Self { a, n, probs, cumulative })
    }

    pub fn spread(&self) -> f64 {
        self.a
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn row(&self, from: usize) -> &[f64] {
        &self.probs[from * self.n..(from + 1) * self.n]
    }

    #[inline]
    pub fn prob(&self, from: usize, to: usize) -> f64 {
        self.probs[from * self.n + to]
    }

    /// Exact categorical draw from row `from`.
    pub fn sample_next<R: Rng + ?Sized>(&self, from: usize, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        self.inverse_cdf(from, u)
    }

    fn inverse_cdf(&self, from: usize, u: f64) -> usize {
        let cdf = &self.cumulative[from * self.n..(from + 1) * self.n];
        let mut idx = cdf.partition_point(|&c| c <= u);
        // Skip zero-probability cells that share the cumulative value.
        while idx < self.n - 1 && self.probs[from * self.n + idx] == 0.0 {
            idx += 1;
        }
        idx.min(self.n - 1)
    }

    /// `Σ_x' φ(x') q(x', x)`.
    pub fn predict(&self, phi: &[f64]) -> Vec<f64> {
        let mut out = alloc::vec![0.0; self.n];
        for (from, &w) in phi.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (o, &q) in out.iter_mut().zip(self.row(from)) {
                *o += w * q;
            }
        }
        out
    }
}
