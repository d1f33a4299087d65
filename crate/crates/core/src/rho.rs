//! Forward-only computation of smoothed block statistics.
//!
//! `ρ_t(x) = E[(1/t) Σ_{s≤t} s(X_s, Y_s) | Y_{1:t}, X_t = x]` obeys
//!
//! ```text
//! ρ_t(x) = Σ_x' [ (1/t) s(x, Y_t) + (1 − 1/t) ρ_{t−1}(x') ] · φ_{t−1}(x') q(x', x) / Σ_x'' φ_{t−1}(x'') q(x'', x)
//! ```
//!
//! and the block statistic is `Σ_x φ_t(x) ρ_t(x)`. Three evaluations live here:
//!
//! - [`ExactRho`]: the recursion over all cells, for small grids and tests;
//! - [`ParticleRho`]: the particle version where `φ_{t−1}` is the previous
//!   weighted cloud, kept forward in time;
//! - [`BlockHistory`]: the same particle quantity evaluated at block end by a
//!   backward sweep over the stored clouds. The final statistic is linear in
//!   the per-step increments, so pushing the final weights backward through the
//!   per-step backward kernels gives the identical value without carrying a
//!   `dim`-length vector per particle at every step.
//!
//! Our statistics depend on the current state only, so the first step of a
//! block contributes `s(X_1, Y_1)` and occupancy sums to one.

use alloc::vec;
use alloc::vec::Vec;

use crate::emission::ApMask;
use crate::error::{Error, Result};
use crate::filter::particle::ParticleSystem;
use crate::observation::ObservationRecord;
use crate::stats::{ApStatistic, StatLayout, SufficientStats};
use crate::theta::ApField;
use crate::transition::TransitionKernel;

fn require_full(record: &ObservationRecord) -> Result<()> {
    if record.mask.is_full() {
        Ok(())
    } else {
        Err(Error::InvalidStream("shared-occupancy statistics need every access point observed"))
    }
}

/// Per-cell auxiliary statistic of the exact recursion.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactRho {
    layout: StatLayout,
    values: Vec<f64>,
}

impl ExactRho {
    /// `ρ ≡ 0`.
    pub fn zeros(layout: StatLayout) -> Self {
        Self { layout, values: vec![0.0; layout.cells * layout.dim()] }
    }

    /// `ρ_1(x) = s(x, Y_1)`.
    pub fn first(layout: StatLayout, record: &ObservationRecord) -> Result<Self> {
        require_full(record)?;
        let mut r = Self::zeros(layout);
        let dim = layout.dim();
        for x in 0..layout.cells {
            layout.add_increment(&mut r.values[x * dim..(x + 1) * dim], x, &record.y, 1.0);
        }
        Ok(r)
    }

    pub fn layout(&self) -> StatLayout {
        self.layout
    }

    pub fn at(&self, cell: usize) -> &[f64] {
        let dim = self.layout.dim();
        &self.values[cell * dim..(cell + 1) * dim]
    }

    /// `Σ_x φ(x) ρ(x)`.
    pub fn expectation(&self, phi: &[f64]) -> Vec<f64> {
        let dim = self.layout.dim();
        let mut out = vec![0.0; dim];
        for (x, &p) in phi.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for (o, &v) in out.iter_mut().zip(self.at(x)) {
                *o += p * v;
            }
        }
        out
    }
}

/// One step of the exact recursion; `t ≥ 2` is the step count within the
/// block. Cells with no predictive mass get `ρ_t(x) = 0` and are returned in
/// the second slot.
pub fn rho_update_exact(
    prev: &ExactRho,
    phi_prev: &[f64],
    kernel: &TransitionKernel,
    record: &ObservationRecord,
    t: usize,
) -> Result<(ExactRho, Vec<usize>)> {
    require_full(record)?;
    if t < 1 {
        return Err(Error::InvalidParameter("step count starts at 1"));
    }
    let layout = prev.layout;
    let dim = layout.dim();
    let inv_t = 1.0 / t as f64;
    let keep = 1.0 - inv_t;
    let mut next = ExactRho::zeros(layout);
    let mut unreachable = Vec::new();
    let mut mix = vec![0.0; dim];
    for x in 0..layout.cells {
        let mut z = 0.0;
        mix.iter_mut().for_each(|m| *m = 0.0);
        for (xp, &p) in phi_prev.iter().enumerate() {
            let w = p * kernel.prob(xp, x);
            if w == 0.0 {
                continue;
            }
            z += w;
            for (m, &r) in mix.iter_mut().zip(prev.at(xp)) {
                *m += w * r;
            }
        }
        let out = &mut next.values[x * dim..(x + 1) * dim];
        if !(z > 0.0) {
            unreachable.push(x);
            continue;
        }
        for (o, &m) in out.iter_mut().zip(&mix) {
            *o = keep * (m / z);
        }
        layout.add_increment(out, x, &record.y, inv_t);
    }
    Ok((next, unreachable))
}

/// Per-particle auxiliary statistics `ρ^p` propagated forward.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleRho {
    layout: StatLayout,
    values: Vec<f64>,
    t: usize,
}

impl ParticleRho {
    /// `ρ^p = 0` for `n` particles.
    pub fn new(layout: StatLayout, n: usize) -> Self {
        Self { layout, values: vec![0.0; n * layout.dim()], t: 0 }
    }

    /// Steps folded in since the last reset.
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn particle(&self, p: usize) -> &[f64] {
        let dim = self.layout.dim();
        &self.values[p * dim..(p + 1) * dim]
    }

    /// Folds in the step that produced `next` from `prev`; returns the number
    /// of particles whose backward normalizer vanished (those copy their
    /// ancestor's blend).
    pub fn update(
        &mut self,
        prev: &ParticleSystem,
        next: &ParticleSystem,
        kernel: &TransitionKernel,
        record: &ObservationRecord,
    ) -> Result<usize> {
        require_full(record)?;
        let n = next.len();
        if prev.len() * self.layout.dim() != self.values.len() || n != prev.len() {
            return Err(Error::DimensionMismatch { expected: self.values.len(), found: n * self.layout.dim() });
        }
        self.t += 1;
        let dim = self.layout.dim();
        let inv_t = 1.0 / self.t as f64;
        let keep = 1.0 - inv_t;

        // Previous particles grouped by cell: total weight and weighted ρ.
        let prev_groups = group_by_cell(prev.cells());
        let mut agg_w = vec![0.0; prev_groups.len()];
        let mut agg_r = vec![0.0; prev_groups.len() * dim];
        if keep != 0.0 {
            for (g, (_, members)) in prev_groups.iter().enumerate() {
                for &l in members {
                    let w = prev.weights()[l];
                    agg_w[g] += w;
                    for (a, &r) in agg_r[g * dim..(g + 1) * dim].iter_mut().zip(self.particle(l)) {
                        *a += w * r;
                    }
                }
            }
        }

        let mut out = vec![0.0; n * dim];
        let mut degenerate = 0;
        let mut blend = vec![0.0; dim];
        for (cell, members) in group_by_cell(next.cells()) {
            blend.iter_mut().for_each(|b| *b = 0.0);
            let mut ok = true;
            if keep != 0.0 {
                let mut z = 0.0;
                for (g, (pc, _)) in prev_groups.iter().enumerate() {
                    let w = agg_w[g] * kernel.prob(*pc, cell);
                    if w == 0.0 {
                        continue;
                    }
                    z += w;
                    let q = kernel.prob(*pc, cell);
                    for (b, &r) in blend.iter_mut().zip(&agg_r[g * dim..(g + 1) * dim]) {
                        *b += q * r;
                    }
                }
                if z > 0.0 {
                    blend.iter_mut().for_each(|b| *b = keep * (*b / z));
                } else {
                    ok = false;
                }
            }
            for &p in &members {
                let dst = &mut out[p * dim..(p + 1) * dim];
                if ok {
                    dst.copy_from_slice(&blend);
                } else {
                    degenerate += 1;
                    let a = next.ancestors()[p];
                    for (d, &r) in dst.iter_mut().zip(self.particle(a)) {
                        *d = keep * r;
                    }
                }
                self.layout.add_increment(dst, cell, &record.y, inv_t);
            }
        }
        self.values = out;
        Ok(degenerate)
    }

    /// `Σ_p ω^p ρ^p`; resets `ρ` to zero and the step count to 0.
    pub fn finalize(&mut self, weights: &[f64]) -> Result<SufficientStats> {
        let dim = self.layout.dim();
        let mut acc = vec![0.0; dim];
        for (p, &w) in weights.iter().enumerate() {
            for (a, &r) in acc.iter_mut().zip(self.particle(p)) {
                *a += w * r;
            }
        }
        let steps = self.t as f64;
        self.values.iter_mut().for_each(|v| *v = 0.0);
        self.t = 0;
        SufficientStats::from_flat(self.layout, &acc, steps)
    }
}

/// Functional form of one particle update: returns the new per-particle
/// statistics and the count of degenerate particles.
pub fn rho_update_particle(
    rho: &ParticleRho,
    prev: &ParticleSystem,
    next: &ParticleSystem,
    kernel: &TransitionKernel,
    record: &ObservationRecord,
) -> Result<(ParticleRho, usize)> {
    let mut out = rho.clone();
    let degenerate = out.update(prev, next, kernel, record)?;
    Ok((out, degenerate))
}

/// Sorted distinct cells with the particle indices sitting on each.
fn group_by_cell(cells: &[usize]) -> Vec<(usize, Vec<usize>)> {
    let mut order: Vec<usize> = (0..cells.len()).collect();
    order.sort_by_key(|&p| (cells[p], p));
    let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
    for p in order {
        match groups.last_mut() {
            Some((c, members)) if *c == cells[p] => members.push(p),
            _ => groups.push((cells[p], vec![p])),
        }
    }
    groups
}

#[derive(Debug, Clone)]
struct HistoryStep {
    cells: Vec<usize>,
    weights: Vec<f64>,
    ancestors: Vec<usize>,
    y: Vec<f64>,
    mask: ApMask,
}

/// Particle clouds of the current block(s), for block-end evaluation of the
/// particle recursion.
#[derive(Debug, Clone, Default)]
pub struct BlockHistory {
    /// Absolute index of `steps[0]`.
    base: usize,
    steps: Vec<HistoryStep>,
}

impl BlockHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, system: &ParticleSystem, record: &ObservationRecord) {
        self.steps.push(HistoryStep {
            cells: system.cells().to_vec(),
            weights: system.weights().to_vec(),
            ancestors: system.ancestors().to_vec(),
            y: record.y.clone(),
            mask: record.mask.clone(),
        });
    }

    /// Absolute index one past the last stored step.
    pub fn end(&self) -> usize {
        self.base + self.steps.len()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Drops every step with absolute index below `start`.
    pub fn discard_before(&mut self, start: usize) {
        if start <= self.base {
            return;
        }
        let k = (start - self.base).min(self.steps.len());
        self.steps.drain(..k);
        self.base += k;
    }

    fn window(&self, start: usize) -> &[HistoryStep] {
        &self.steps[start.saturating_sub(self.base).min(self.steps.len())..]
    }

    /// Statistic of the steps `start..end()` with shared occupancy.
    pub fn block_statistics(&self, start: usize, kernel: &TransitionKernel, cells: usize) -> Result<SufficientStats> {
        let steps = self.window(start);
        if steps.is_empty() {
            return Err(Error::Empty);
        }
        let aps = steps[0].y.len();
        if steps.iter().any(|s| !s.mask.is_full()) {
            return Err(Error::InvalidStream("shared-occupancy statistics need every access point observed"));
        }
        let mut occupancy = vec![0.0; cells];
        let mut rssi = ApField::zeros(aps, cells);
        backward_sweep(steps, kernel, |step, v| {
            for (&x, &vp) in step.cells.iter().zip(v) {
                occupancy[x] += vp;
                for j in 0..aps {
                    let r = rssi.row_mut(j);
                    r[x] += vp * step.y[j];
                }
            }
        });
        let n = steps.len() as f64;
        let mut squares = vec![0.0; aps];
        for step in steps {
            for (s, &yj) in squares.iter_mut().zip(&step.y) {
                *s += yj * yj;
            }
        }
        occupancy.iter_mut().for_each(|v| *v /= n);
        rssi.as_mut_slice().iter_mut().for_each(|v| *v /= n);
        squares.iter_mut().for_each(|v| *v /= n);
        SufficientStats::new(occupancy, rssi, squares, n)
    }

    /// Statistic of access point `ap` over the steps `start..end()` on which
    /// it was observed. Returns `None` when it was never observed.
    pub fn ap_statistic(&self, start: usize, kernel: &TransitionKernel, cells: usize, ap: usize) -> Option<ApStatistic> {
        let steps = self.window(start);
        let n = steps.iter().filter(|s| s.mask.get(ap)).count();
        if n == 0 {
            return None;
        }
        let mut occupancy = vec![0.0; cells];
        let mut rssi = vec![0.0; cells];
        backward_sweep(steps, kernel, |step, v| {
            if !step.mask.get(ap) {
                return;
            }
            let y = step.y[ap];
            for (&x, &vp) in step.cells.iter().zip(v) {
                occupancy[x] += vp;
                rssi[x] += vp * y;
            }
        });
        let mut square = 0.0;
        for step in steps.iter().filter(|s| s.mask.get(ap)) {
            square += step.y[ap] * step.y[ap];
        }
        let n = n as f64;
        occupancy.iter_mut().for_each(|v| *v /= n);
        rssi.iter_mut().for_each(|v| *v /= n);
        Some(ApStatistic { occupancy, rssi, square: square / n, steps: n })
    }
}

/// Visits steps last to first with the smoothing weights `v_t` obtained by
/// pushing the final filter weights back through the backward kernels
/// `B_t(p, ℓ) = ω_{t−1}^ℓ q(ξ_{t−1}^ℓ, ξ_t^p) / Σ_ℓ' ω_{t−1}^ℓ' q(ξ_{t−1}^ℓ', ξ_t^p)`.
fn backward_sweep(steps: &[HistoryStep], kernel: &TransitionKernel, mut visit: impl FnMut(&HistoryStep, &[f64])) {
    let Some(last) = steps.last() else { return };
    let mut v = last.weights.clone();
    for idx in (0..steps.len()).rev() {
        visit(&steps[idx], &v);
        if idx == 0 {
            break;
        }
        v = backward_weights(&steps[idx - 1], &steps[idx], &v, kernel);
    }
}

fn backward_weights(prev: &HistoryStep, cur: &HistoryStep, v: &[f64], kernel: &TransitionKernel) -> Vec<f64> {
    let mut out = vec![0.0; prev.cells.len()];
    for (cell, members) in group_by_cell(&cur.cells) {
        let z: f64 = prev.cells.iter().zip(&prev.weights).map(|(&c, &w)| w * kernel.prob(c, cell)).sum();
        if z > 0.0 {
            let mass: f64 = members.iter().map(|&p| v[p]).sum::<f64>() / z;
            if mass == 0.0 {
                continue;
            }
            for (o, (&c, &w)) in out.iter_mut().zip(prev.cells.iter().zip(&prev.weights)) {
                *o += mass * w * kernel.prob(c, cell);
            }
        } else {
            for &p in &members {
                out[cur.ancestors[p]] += v[p];
            }
        }
    }
    out
}
