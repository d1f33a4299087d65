//! Block online EM with averaging and periodic stabilization.
//!
//! Two bootstrap filters run side by side: one under the block estimate `θ̂`
//! (it also produces the block statistics) and one under the averaged estimate
//! `θ̃` (used for localization). At the end of block `k`:
//!
//! 1. `Ŝ_k` is the smoothed statistic of the block, `θ̂ = θ̄(Ŝ_k, τ_k)`;
//! 2. `S̃_k = (T_{k−1} S̃_{k−1} + τ_k Ŝ_k) / T_k` (`S̃_1 = Ŝ_1`), `θ̃ = θ̄(S̃_k, T_k)`;
//! 3. if stabilization is on and `k` is a multiple of `N_b`, `θ̂ = θ̃`.
//!
//! In per-AP mode every access point keeps its own block counter and window:
//! AP `j`'s block `k` ends once it has been observed `τ_k` times. Access
//! points completing on the same step are updated jointly.

use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::filter::particle::{bootstrap_filter_recursion, ParticleSystem, Resampling};
use crate::grid::{Cell, GridMap};
use crate::metrics::{localization_quantile, position_distances};
use crate::mstep::{m_step, m_step_group, MStepItem, MStepOptions, MStepReport, SigmaUpdate};
use crate::observation::ObservationRecord;
use crate::prior::PerturbationPrior;
use crate::rho::{BlockHistory, ParticleRho};
use crate::schedule::BlockSchedule;
use crate::stats::{ApStatistic, StatLayout, SufficientStats};
use crate::theta::Theta;
use crate::transition::TransitionKernel;

/// How the block statistic is evaluated. Both give the same quantity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RhoBackend {
    /// Store the block's particle clouds and sweep backward at block end.
    #[default]
    Deferred,
    /// Carry `ρ^p` forward at every step.
    Forward,
}

/// `σ²` policy in per-AP mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PartialSigma {
    /// Keep the initial `σ²`.
    Known,
    /// Re-estimate it from each completing group with the full-mode rule.
    #[default]
    Estimate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoemConfig {
    pub particles: usize,
    pub schedule: BlockSchedule,
    /// `N_b`; `None` disables stabilization.
    pub stabilize_every: Option<u64>,
    pub mstep: MStepOptions,
    pub partial_sigma: PartialSigma,
    pub resampling: Resampling,
    pub backend: RhoBackend,
    pub seed: u64,
    /// Keep `(θ̂_k, θ̃_k)` in the trace after every block.
    pub record_thetas: bool,
}

impl Default for BoemConfig {
    fn default() -> Self {
        Self {
            particles: 25,
            schedule: BlockSchedule::default(),
            stabilize_every: Some(5),
            mstep: MStepOptions::default(),
            partial_sigma: PartialSigma::Estimate,
            resampling: Resampling::Multinomial,
            backend: RhoBackend::Deferred,
            seed: 0,
            record_thetas: false,
        }
    }
}

impl BoemConfig {
    fn validate(&self) -> Result<()> {
        if self.particles == 0 {
            return Err(Error::InvalidParameter("particle count must be positive"));
        }
        if self.stabilize_every == Some(0) {
            return Err(Error::InvalidParameter("stabilization period must be positive"));
        }
        if self.schedule.tau(1) == 0 {
            return Err(Error::InvalidParameter("block lengths must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Every access point observed at every step; one shared schedule.
    Full,
    /// Per-access-point schedules driven by the observation masks.
    PerAp,
}

/// One parameter update.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockEvent {
    /// Block index (the completing access points' own index in per-AP mode).
    pub block: u64,
    /// Access points updated.
    pub aps: Vec<usize>,
    /// Step index `t` of the last observation in the block.
    pub end_t: u64,
    /// Number of observations summarized.
    pub length: u64,
    /// Total observations summarized by the averaged statistic.
    pub total: u64,
    /// The stream ended before the block was complete.
    pub truncated: bool,
    pub stabilized: bool,
    pub hat_report: MStepReport,
    pub tilde_report: MStepReport,
    pub theta_hat: Option<Theta>,
    pub theta_tilde: Option<Theta>,
}

/// Result of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub t: u64,
    /// Max-weight cell of the block-estimate filter.
    pub hat: usize,
    /// Max-weight cell of the averaged-estimate filter.
    pub tilde: usize,
    pub events: Vec<BlockEvent>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoemTrace {
    pub t: Vec<u64>,
    pub hat: Vec<usize>,
    pub tilde: Vec<usize>,
    pub blocks: Vec<BlockEvent>,
    pub theta_hat: Theta,
    pub theta_tilde: Theta,
    /// Access points never observed (per-AP mode).
    pub never_observed: Vec<usize>,
    /// Steps at which either filter's weights all underflowed.
    pub fallback_steps: Vec<u64>,
}

struct FilterState {
    particles: ParticleSystem,
    rng: ChaCha8Rng,
    theta: Theta,
}

impl FilterState {
    fn new(theta: Theta, n: usize, cells: usize, seed: u64, stream: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let particles = ParticleSystem::uniform(n, cells, &mut rng)?;
        Ok(Self { particles, rng, theta })
    }

    fn advance(&mut self, kernel: &TransitionKernel, record: &ObservationRecord, resampling: Resampling) {
        self.particles =
            bootstrap_filter_recursion(&self.particles, kernel, &self.theta, record, resampling, &mut self.rng);
    }
}

struct FullState {
    k: u64,
    in_block: u64,
    /// `T_{k−1}`.
    total: u64,
    averaged: Option<SufficientStats>,
    rho: Option<ParticleRho>,
    block_start: usize,
}

struct ApState {
    k: u64,
    in_block: u64,
    total: u64,
    averaged: Option<ApStatistic>,
    window_start: usize,
    observed: bool,
}

enum ModeState {
    Full(FullState),
    PerAp(Vec<ApState>),
}

/// Step-wise driver.
pub struct BoemRunner<'a> {
    grid: &'a GridMap,
    kernel: &'a TransitionKernel,
    prior: &'a PerturbationPrior,
    config: BoemConfig,
    hat: FilterState,
    tilde: FilterState,
    history: BlockHistory,
    state: ModeState,
    last_t: Option<u64>,
    steps: usize,
}

impl<'a> BoemRunner<'a> {
    pub fn new(
        grid: &'a GridMap,
        kernel: &'a TransitionKernel,
        prior: &'a PerturbationPrior,
        theta0: Theta,
        config: BoemConfig,
        mode: Mode,
    ) -> Result<Self> {
        config.validate()?;
        if kernel.len() != grid.len() || prior.cell_count() != grid.len() {
            return Err(Error::DimensionMismatch { expected: grid.len(), found: kernel.len() });
        }
        if theta0.ap_count() != grid.ap_count() || prior.ap_count() != grid.ap_count() {
            return Err(Error::DimensionMismatch { expected: grid.ap_count(), found: theta0.ap_count() });
        }
        if mode == Mode::PerAp && config.backend == RhoBackend::Forward {
            return Err(Error::InvalidParameter("per-AP mode evaluates statistics at block end only"));
        }
        let hat = FilterState::new(theta0.clone(), config.particles, grid.len(), config.seed, 1)?;
        let tilde = FilterState::new(theta0, config.particles, grid.len(), config.seed, 2)?;
        let state = match mode {
            Mode::Full => ModeState::Full(FullState {
                k: 1,
                in_block: 0,
                total: 0,
                averaged: None,
                rho: match config.backend {
                    RhoBackend::Forward => {
                        Some(ParticleRho::new(StatLayout::new(grid.len(), grid.ap_count()), config.particles))
                    }
                    RhoBackend::Deferred => None,
                },
                block_start: 0,
            }),
            Mode::PerAp => ModeState::PerAp(
                (0..grid.ap_count())
                    .map(|_| ApState { k: 1, in_block: 0, total: 0, averaged: None, window_start: 0, observed: false })
                    .collect(),
            ),
        };
        Ok(Self { grid, kernel, prior, config, hat, tilde, history: BlockHistory::new(), state, last_t: None, steps: 0 })
    }

    pub fn theta_hat(&self) -> &Theta {
        &self.hat.theta
    }

    pub fn theta_tilde(&self) -> &Theta {
        &self.tilde.theta
    }

    pub fn hat_particles(&self) -> &ParticleSystem {
        &self.hat.particles
    }

    pub fn tilde_particles(&self) -> &ParticleSystem {
        &self.tilde.particles
    }

    /// Index of the block in progress (full mode).
    pub fn block_index(&self) -> Option<u64> {
        match &self.state {
            ModeState::Full(s) => Some(s.k),
            ModeState::PerAp(_) => None,
        }
    }

    /// Completed blocks per access point (per-AP mode).
    pub fn ap_blocks(&self) -> Option<Vec<u64>> {
        match &self.state {
            ModeState::Full(_) => None,
            ModeState::PerAp(aps) => Some(aps.iter().map(|a| a.k - 1).collect()),
        }
    }

    pub fn step(&mut self, record: &ObservationRecord) -> Result<StepOutput> {
        if record.y.len() != self.grid.ap_count() || record.mask.len() != self.grid.ap_count() {
            return Err(Error::DimensionMismatch { expected: self.grid.ap_count(), found: record.y.len() });
        }
        if let Some(last) = self.last_t {
            if record.t <= last {
                return Err(Error::InvalidStream("step indices must strictly increase"));
            }
        }
        if matches!(self.state, ModeState::Full(_)) && !record.mask.is_full() {
            return Err(Error::InvalidStream("full mode needs every access point observed; use the per-AP mode"));
        }
        self.last_t = Some(record.t);

        let prev_hat = match &self.state {
            ModeState::Full(s) if s.rho.is_some() => Some(self.hat.particles.clone()),
            _ => None,
        };
        self.hat.advance(self.kernel, record, self.config.resampling);
        self.tilde.advance(self.kernel, record, self.config.resampling);
        let hat = self.hat.particles.map_estimate();
        let tilde = self.tilde.particles.map_estimate();

        match (&mut self.state, prev_hat) {
            (ModeState::Full(s), Some(prev)) => {
                let rho = s.rho.as_mut().expect("forward backend keeps ρ");
                rho.update(&prev, &self.hat.particles, self.kernel, record)?;
            }
            _ => self.history.push(&self.hat.particles, record),
        }
        self.steps += 1;

        let events = match &mut self.state {
            ModeState::Full(s) => {
                s.in_block += 1;
                if s.in_block == self.config.schedule.tau(s.k) {
                    vec![self.end_full_block(record.t, false)?]
                } else {
                    Vec::new()
                }
            }
            ModeState::PerAp(aps) => {
                let mut done = Vec::new();
                for j in record.mask.visible() {
                    let a = &mut aps[j];
                    a.observed = true;
                    a.in_block += 1;
                    if a.in_block == self.config.schedule.tau(a.k) {
                        done.push(j);
                    }
                }
                if done.is_empty() {
                    Vec::new()
                } else {
                    self.end_ap_blocks(&done, record.t, false)?
                }
            }
        };
        Ok(StepOutput { t: record.t, hat, tilde, events })
    }

    /// Closes any incomplete block with its actual length.
    pub fn finish(&mut self) -> Result<Vec<BlockEvent>> {
        let t = self.last_t.unwrap_or(0);
        match &mut self.state {
            ModeState::Full(s) => {
                if s.in_block > 0 {
                    Ok(vec![self.end_full_block(t, true)?])
                } else {
                    Ok(Vec::new())
                }
            }
            ModeState::PerAp(aps) => {
                let open: Vec<usize> = (0..aps.len()).filter(|&j| aps[j].in_block > 0).collect();
                if open.is_empty() {
                    Ok(Vec::new())
                } else {
                    self.end_ap_blocks(&open, t, true)
                }
            }
        }
    }

    fn end_full_block(&mut self, end_t: u64, truncated: bool) -> Result<BlockEvent> {
        let ModeState::Full(s) = &mut self.state else { unreachable!() };
        let length = s.in_block;
        let block = match s.rho.as_mut() {
            Some(rho) => rho.finalize(self.hat.particles.weights())?,
            None => {
                let stat = self.history.block_statistics(s.block_start, self.kernel, self.grid.len())?;
                s.block_start = self.steps;
                self.history.discard_before(s.block_start);
                stat
            }
        };
        let (theta_hat, hat_report) =
            m_step(&block, length as f64, &self.hat.theta, self.grid, self.prior, &self.config.mstep)?;
        self.hat.theta = theta_hat;

        let total = s.total + length;
        let averaged = match s.averaged.take() {
            None => block,
            Some(mut avg) => {
                avg.running_average(s.total as f64, &block, length as f64);
                avg
            }
        };
        let (theta_tilde, tilde_report) =
            m_step(&averaged, total as f64, &self.tilde.theta, self.grid, self.prior, &self.config.mstep)?;
        self.tilde.theta = theta_tilde;
        s.averaged = Some(averaged);
        s.total = total;

        let stabilized = matches!(self.config.stabilize_every, Some(nb) if s.k % nb == 0);
        if stabilized {
            self.hat.theta = self.tilde.theta.clone();
        }
        let event = BlockEvent {
            block: s.k,
            aps: (0..self.grid.ap_count()).collect(),
            end_t,
            length,
            total,
            truncated,
            stabilized,
            hat_report,
            tilde_report,
            theta_hat: self.config.record_thetas.then(|| self.hat.theta.clone()),
            theta_tilde: self.config.record_thetas.then(|| self.tilde.theta.clone()),
        };
        s.k += 1;
        s.in_block = 0;
        Ok(event)
    }

    fn end_ap_blocks(&mut self, done: &[usize], end_t: u64, truncated: bool) -> Result<Vec<BlockEvent>> {
        let ModeState::PerAp(aps) = &mut self.state else { unreachable!() };
        let mut opts = self.config.mstep;
        if self.config.partial_sigma == PartialSigma::Known {
            opts.sigma = SigmaUpdate::Known;
        }

        let mut blocks: Vec<ApStatistic> = Vec::with_capacity(done.len());
        for &j in done {
            let stat = self
                .history
                .ap_statistic(aps[j].window_start, self.kernel, self.grid.len(), j)
                .ok_or(Error::Empty)?;
            blocks.push(stat);
        }
        let items: Vec<MStepItem<'_>> = done
            .iter()
            .zip(&blocks)
            .map(|(&j, b)| MStepItem { ap: j, stat: b.view(), steps: aps[j].in_block as f64 })
            .collect();
        let hat_update = m_step_group(&items, &self.hat.theta, self.grid, self.prior, &opts)?;
        hat_update.apply(self.grid, &mut self.hat.theta)?;
        drop(items);

        let mut averaged: Vec<ApStatistic> = Vec::with_capacity(done.len());
        let mut totals = Vec::with_capacity(done.len());
        for (&j, block) in done.iter().zip(blocks) {
            let a = &mut aps[j];
            let total = a.total + a.in_block;
            let avg = match a.averaged.take() {
                None => block,
                Some(mut avg) => {
                    avg.running_average(a.total as f64, &block, a.in_block as f64);
                    avg
                }
            };
            averaged.push(avg);
            totals.push(total);
        }
        let items: Vec<MStepItem<'_>> = done
            .iter()
            .zip(&averaged)
            .zip(&totals)
            .map(|((&j, s), &total)| MStepItem { ap: j, stat: s.view(), steps: total as f64 })
            .collect();
        let tilde_update = m_step_group(&items, &self.tilde.theta, self.grid, self.prior, &opts)?;
        tilde_update.apply(self.grid, &mut self.tilde.theta)?;
        drop(items);

        let mut stabilized_any = false;
        let mut events = Vec::with_capacity(done.len());
        for (i, (&j, avg)) in done.iter().zip(averaged).enumerate() {
            let a = &mut aps[j];
            let stabilized = matches!(self.config.stabilize_every, Some(nb) if a.k % nb == 0);
            if stabilized {
                self.hat.theta.copy_ap_from(&self.tilde.theta, j);
                stabilized_any = true;
            }
            let length = a.in_block;
            a.total = totals[i];
            a.averaged = Some(avg);
            a.window_start = self.steps;
            events.push(BlockEvent {
                block: a.k,
                aps: vec![j],
                end_t,
                length,
                total: a.total,
                truncated,
                stabilized,
                hat_report: single_report(&hat_update.report, j),
                tilde_report: single_report(&tilde_update.report, j),
                theta_hat: None,
                theta_tilde: None,
            });
            a.k += 1;
            a.in_block = 0;
        }
        if stabilized_any {
            self.hat.theta.set_sigma2(self.tilde.theta.sigma2())?;
        }
        if self.config.record_thetas {
            for e in &mut events {
                e.theta_hat = Some(self.hat.theta.clone());
                e.theta_tilde = Some(self.tilde.theta.clone());
            }
        }
        let oldest = aps.iter().map(|a| a.window_start).min().unwrap_or(self.steps);
        self.history.discard_before(oldest);
        Ok(events)
    }

    fn never_observed(&self) -> Vec<usize> {
        match &self.state {
            ModeState::Full(_) => Vec::new(),
            ModeState::PerAp(aps) => (0..aps.len()).filter(|&j| !aps[j].observed).collect(),
        }
    }
}

fn single_report(group: &MStepReport, ap: usize) -> MStepReport {
    MStepReport {
        frozen: group.frozen.iter().copied().filter(|&j| j == ap).collect(),
        sigma_floored: group.sigma_floored,
        sigma_evaluations: group.sigma_evaluations,
        sigma_converged: group.sigma_converged,
    }
}

fn drive(mut runner: BoemRunner<'_>, records: &[ObservationRecord]) -> Result<BoemTrace> {
    let n = records.len();
    let mut trace = BoemTrace {
        t: Vec::with_capacity(n),
        hat: Vec::with_capacity(n),
        tilde: Vec::with_capacity(n),
        blocks: Vec::new(),
        theta_hat: runner.theta_hat().clone(),
        theta_tilde: runner.theta_tilde().clone(),
        never_observed: Vec::new(),
        fallback_steps: Vec::new(),
    };
    for r in records {
        let out = runner.step(r)?;
        if runner.hat.particles.used_fallback() || runner.tilde.particles.used_fallback() {
            trace.fallback_steps.push(out.t);
        }
        trace.t.push(out.t);
        trace.hat.push(out.hat);
        trace.tilde.push(out.tilde);
        trace.blocks.extend(out.events);
    }
    trace.blocks.extend(runner.finish()?);
    trace.theta_hat = runner.theta_hat().clone();
    trace.theta_tilde = runner.theta_tilde().clone();
    trace.never_observed = runner.never_observed();
    Ok(trace)
}

/// Runs the full-visibility algorithm over `records`.
pub fn run_boem(
    grid: &GridMap,
    kernel: &TransitionKernel,
    prior: &PerturbationPrior,
    theta0: Theta,
    config: BoemConfig,
    records: &[ObservationRecord],
) -> Result<BoemTrace> {
    drive(BoemRunner::new(grid, kernel, prior, theta0, config, Mode::Full)?, records)
}

/// Runs the per-access-point variant over a masked stream.
pub fn run_boem_partial(
    grid: &GridMap,
    kernel: &TransitionKernel,
    prior: &PerturbationPrior,
    theta0: Theta,
    config: BoemConfig,
    records: &[ObservationRecord],
) -> Result<BoemTrace> {
    drive(BoemRunner::new(grid, kernel, prior, theta0, config, Mode::PerAp)?, records)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrozenEvaluation {
    pub estimates: Vec<usize>,
    pub distances: Vec<f64>,
    pub quantile: f64,
}

/// Localizes `records` with a single filter under a fixed `θ` and scores the
/// max-weight estimates against the recorded truth.
pub fn evaluate_frozen(
    grid: &GridMap,
    kernel: &TransitionKernel,
    theta: &Theta,
    records: &[ObservationRecord],
    particles: usize,
    resampling: Resampling,
    seed: u64,
    q: f64,
) -> Result<FrozenEvaluation> {
    if records.is_empty() {
        return Err(Error::Empty);
    }
    let truth: Vec<Cell> = records
        .iter()
        .map(|r| r.truth.ok_or(Error::InvalidStream("evaluation needs the true position of every record")))
        .collect::<Result<_>>()?;
    let mut state = FilterState::new(theta.clone(), particles, grid.len(), seed, 3)?;
    let mut estimates = Vec::with_capacity(records.len());
    for r in records {
        if r.y.len() != grid.ap_count() {
            return Err(Error::DimensionMismatch { expected: grid.ap_count(), found: r.y.len() });
        }
        state.advance(kernel, r, resampling);
        estimates.push(state.particles.map_estimate());
    }
    let cells: Vec<Cell> = estimates.iter().map(|&i| grid.cell(i)).collect();
    let distances = position_distances(&cells, &truth)?;
    let quantile = localization_quantile(&distances, q)?;
    Ok(FrozenEvaluation { estimates, distances, quantile })
}
