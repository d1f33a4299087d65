//! Maximization step: `θ̄(S, n) = argmax_θ Q(θ; S, n)` with
//!
//! ```text
//! Q = −λ/2 Σ_j δ_jᵀ Σ_j⁻¹ δ_j − (B/2) ln σ² − Σ_j [S3_j − 2⟨S2_j, F_j⟩ + ⟨S1_j, F_j²⟩] / (2σ²)
//! ```
//!
//! where `λ` is the penalty weight (`1/n` by default).
//!
//! For fixed `σ²` each access point is a generalized ridge problem in
//! `(β_j, δ_j)` with `β_j = (c1_j, c2_j)`. With `c = λσ²`, `D = diag(S1)`,
//! `A = [1, ln‖x − O_j‖]` the normal equations are
//!
//! ```text
//! (c Σ⁻¹ + D) δ = S2 − D A β,        Aᵀ D (A β + δ) = Aᵀ S2.
//! ```
//!
//! They are solved without forming `Σ⁻¹`: on the cells with positive
//! occupancy `K = c I + D^{1/2} Σ D^{1/2}` is well conditioned (its smallest
//! eigenvalue is at least `c`), and
//!
//! ```text
//! c ÃᵀK⁻¹Ã β = c ÃᵀK⁻¹g − ÃᵀK⁻¹p + Aᵀr,    δ = Σr/c + Σ D^{1/2} K⁻¹(g − Ãβ − p/c)
//! ```
//!
//! with `Ã = D^{1/2}A`, `S2 = D^{1/2}g + r` (`r` supported where `S1 = 0`) and
//! `p = D^{1/2}Σr`. The `σ²` update is the mean residual over the access points
//! of the group. Because `c` depends on `σ²`, a stationary point of `Q` needs
//! the two to agree; [`SigmaUpdate::FixedPoint`] iterates until they do.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::GridMap;
use crate::linalg::{dot, Cholesky, DenseMatrix};
use crate::math::ln;
use crate::prior::{CovarianceFactor, PerturbationPrior};
use crate::stats::{ApStatView, SufficientStats};
use crate::theta::Theta;

/// Weight of the prior penalty relative to the number of steps `n` summarized
/// by the statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PenaltyWeight {
    /// `1/n`.
    #[default]
    PerStep,
    /// `1/(n + 1)`.
    PerStepPlusOne,
}

impl PenaltyWeight {
    pub fn lambda(self, steps: f64) -> f64 {
        match self {
            PenaltyWeight::PerStep => 1.0 / steps,
            PenaltyWeight::PerStepPlusOne => 1.0 / (steps + 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SigmaUpdate {
    /// Solve for `(β, δ)` with the previous `σ²`, then set `σ²` to the mean
    /// residual once.
    SingleSweep,
    /// Iterate the joint update until `σ²` is self-consistent.
    FixedPoint { tol: f64, max_iter: usize },
    /// Keep the previous `σ²`.
    Known,
}

impl SigmaUpdate {
    pub const fn fixed_point() -> Self {
        SigmaUpdate::FixedPoint { tol: 1e-12, max_iter: 50 }
    }
}

impl Default for SigmaUpdate {
    fn default() -> Self {
        Self::fixed_point()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MStepOptions {
    pub penalty: PenaltyWeight,
    pub sigma: SigmaUpdate,
    /// Relative determinant below which `(c1, c2)` are kept.
    pub det_tol: f64,
    pub sigma_floor: f64,
}

impl Default for MStepOptions {
    fn default() -> Self {
        Self { penalty: PenaltyWeight::PerStep, sigma: SigmaUpdate::default(), det_tol: 1e-10, sigma_floor: 1e-6 }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MStepReport {
    /// Access points whose `(c1, c2)` were kept because the path-loss design
    /// was degenerate.
    pub frozen: Vec<usize>,
    pub sigma_floored: bool,
    /// Residual evaluations used for `σ²`.
    pub sigma_evaluations: usize,
    pub sigma_converged: bool,
}

impl MStepReport {
    pub fn merge(&mut self, other: &MStepReport) {
        self.frozen.extend_from_slice(&other.frozen);
        self.frozen.sort_unstable();
        self.sigma_floored |= other.sigma_floored;
        self.sigma_evaluations += other.sigma_evaluations;
        self.sigma_converged &= other.sigma_converged;
    }
}

/// One access point's statistic entering a joint update.
#[derive(Debug, Clone, Copy)]
pub struct MStepItem<'a> {
    pub ap: usize,
    pub stat: ApStatView<'a>,
    /// Steps summarized, for the penalty weight.
    pub steps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApSolution {
    pub ap: usize,
    pub c1: f64,
    pub c2: f64,
    pub delta: Vec<f64>,
    pub frozen: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupUpdate {
    pub solutions: Vec<ApSolution>,
    pub sigma2: f64,
    pub report: MStepReport,
}

impl GroupUpdate {
    /// Writes the per-access-point parameters (and `σ²`) into `theta`.
    pub fn apply(&self, grid: &GridMap, theta: &mut Theta) -> Result<()> {
        for s in &self.solutions {
            theta.set_ap(grid, s.ap, s.c1, s.c2, &s.delta)?;
        }
        theta.set_sigma2(self.sigma2)
    }
}

/// Full M-step for a shared-occupancy statistic summarizing `steps` steps.
pub fn m_step(
    stats: &SufficientStats,
    steps: f64,
    prev: &Theta,
    grid: &GridMap,
    prior: &PerturbationPrior,
    opts: &MStepOptions,
) -> Result<(Theta, MStepReport)> {
    if stats.cell_count() != grid.len() || stats.ap_count() != grid.ap_count() {
        return Err(Error::DimensionMismatch { expected: grid.len(), found: stats.cell_count() });
    }
    let items: Vec<MStepItem<'_>> =
        (0..stats.ap_count()).map(|j| MStepItem { ap: j, stat: stats.ap_view(j), steps }).collect();
    let update = m_step_group(&items, prev, grid, prior, opts)?;
    let mut theta = prev.clone();
    update.apply(grid, &mut theta)?;
    Ok((theta, update.report))
}

/// Access points sharing a factorization: same prior factor, occupancy and
/// penalty weight.
struct Cluster {
    factor: usize,
    members: Vec<usize>,
    active: Vec<usize>,
    sqrt_d: Vec<f64>,
    lambda: f64,
    /// `D^{1/2} Σ D^{1/2}` on the active cells.
    scaled: DenseMatrix,
}

struct Evaluation {
    solutions: Vec<ApSolution>,
    mean_residual: f64,
}

/// Joint update of the access points in `items` with a common `σ²`.
pub fn m_step_group(
    items: &[MStepItem<'_>],
    prev: &Theta,
    grid: &GridMap,
    prior: &PerturbationPrior,
    opts: &MStepOptions,
) -> Result<GroupUpdate> {
    if items.is_empty() {
        return Err(Error::Empty);
    }
    for it in items {
        if it.stat.occupancy.len() != grid.len() || it.stat.rssi.len() != grid.len() {
            return Err(Error::DimensionMismatch { expected: grid.len(), found: it.stat.occupancy.len() });
        }
        if !(it.steps > 0.0) {
            return Err(Error::InvalidParameter("statistic must summarize at least one step"));
        }
    }
    let clusters = build_clusters(items, prior, opts.penalty);
    let floor = opts.sigma_floor;
    let clamp = |s: f64, report: &mut MStepReport| -> f64 {
        if s > floor && s.is_finite() {
            s
        } else {
            report.sigma_floored = true;
            floor
        }
    };
    let mut report = MStepReport { sigma_converged: true, ..MStepReport::default() };

    let (eval, sigma2) = match opts.sigma {
        SigmaUpdate::Known => {
            let e = evaluate(items, &clusters, prev, grid, prior, prev.sigma2(), opts)?;
            report.sigma_evaluations = 1;
            (e, prev.sigma2())
        }
        SigmaUpdate::SingleSweep => {
            let e = evaluate(items, &clusters, prev, grid, prior, prev.sigma2(), opts)?;
            report.sigma_evaluations = 1;
            let s = clamp(e.mean_residual, &mut report);
            (e, s)
        }
        SigmaUpdate::FixedPoint { tol, max_iter } => {
            let mut s0 = prev.sigma2();
            let mut e0 = evaluate(items, &clusters, prev, grid, prior, s0, opts)?;
            let mut g0 = clamp(e0.mean_residual, &mut report);
            let mut evals = 1;
            let mut h0 = g0 - s0;
            let mut converged = h0.abs() <= tol * s0.max(1.0);
            let mut s1 = g0;
            while !converged && evals < max_iter.max(1) {
                let e1 = evaluate(items, &clusters, prev, grid, prior, s1, opts)?;
                evals += 1;
                let g1 = clamp(e1.mean_residual, &mut report);
                let h1 = g1 - s1;
                converged = h1.abs() <= tol * s1.max(1.0);
                let secant = if h1 != h0 { s1 - h1 * (s1 - s0) / (h1 - h0) } else { f64::NAN };
                let next = if secant > floor && secant.is_finite() { secant } else { g1 };
                s0 = s1;
                h0 = h1;
                e0 = e1;
                g0 = g1;
                s1 = next;
            }
            report.sigma_evaluations = evals;
            report.sigma_converged = converged;
            (e0, g0)
        }
    };
    report.frozen = eval.solutions.iter().filter(|s| s.frozen).map(|s| s.ap).collect();
    Ok(GroupUpdate { solutions: eval.solutions, sigma2, report })
}

fn build_clusters(items: &[MStepItem<'_>], prior: &PerturbationPrior, penalty: PenaltyWeight) -> Vec<Cluster> {
    let mut clusters: Vec<Cluster> = Vec::new();
    for (i, it) in items.iter().enumerate() {
        let factor = prior.factor_index(it.ap);
        let lambda = penalty.lambda(it.steps);
        let found = clusters.iter_mut().find(|c| {
            let rep = &items[c.members[0]];
            c.factor == factor
                && c.lambda == lambda
                && (core::ptr::eq(rep.stat.occupancy, it.stat.occupancy) || rep.stat.occupancy == it.stat.occupancy)
        });
        match found {
            Some(c) => c.members.push(i),
            None => {
                let occ = it.stat.occupancy;
                let active: Vec<usize> = (0..occ.len()).filter(|&x| occ[x] > 0.0).collect();
                let sqrt_d: Vec<f64> = active.iter().map(|&x| crate::math::sqrt(occ[x])).collect();
                let cov = prior.factor(it.ap).covariance();
                let scaled = DenseMatrix::from_fn(active.len(), |a, b| {
                    sqrt_d[a] * cov.get(active[a], active[b]) * sqrt_d[b]
                });
                clusters.push(Cluster { factor, members: vec![i], active, sqrt_d, lambda, scaled });
            }
        }
    }
    clusters
}

fn evaluate(
    items: &[MStepItem<'_>],
    clusters: &[Cluster],
    prev: &Theta,
    grid: &GridMap,
    prior: &PerturbationPrior,
    sigma2: f64,
    opts: &MStepOptions,
) -> Result<Evaluation> {
    let mut solutions: Vec<Option<ApSolution>> = vec![None; items.len()];
    let mut residuals = vec![0.0; items.len()];
    for cluster in clusters {
        let c = cluster.lambda * sigma2;
        let chol = if cluster.active.is_empty() {
            None
        } else {
            let mut k = cluster.scaled.clone();
            k.add_diagonal(c);
            Some(Cholesky::factor(&k)?)
        };
        let factor = prior.factor(items[cluster.members[0]].ap);
        for &i in &cluster.members {
            let it = &items[i];
            let sol = solve_ap(it, cluster, chol.as_ref(), factor, c, prev, grid, opts.det_tol);
            residuals[i] = residual(it.stat, &sol, grid);
            solutions[i] = Some(sol);
        }
    }
    let mean_residual = residuals.iter().sum::<f64>() / items.len() as f64;
    Ok(Evaluation { solutions: solutions.into_iter().map(|s| s.expect("every item is in a cluster")).collect(), mean_residual })
}

#[allow(clippy::too_many_arguments)]
fn solve_ap(
    it: &MStepItem<'_>,
    cluster: &Cluster,
    chol: Option<&Cholesky>,
    factor: &CovarianceFactor,
    c: f64,
    prev: &Theta,
    grid: &GridMap,
    det_tol: f64,
) -> ApSolution {
    let cells = grid.len();
    let logd = grid.log_distances(it.ap);
    let active = &cluster.active;
    let sd = &cluster.sqrt_d;
    let m = active.len();

    // Split S2 into the occupied part D^{1/2} g and the remainder r.
    let mut is_active = vec![false; cells];
    for &x in active {
        is_active[x] = true;
    }
    let g: Vec<f64> = active.iter().zip(sd).map(|(&x, &s)| it.stat.rssi[x] / s).collect();
    let r: Vec<f64> = (0..cells).map(|x| if is_active[x] { 0.0 } else { it.stat.rssi[x] }).collect();
    let has_r = r.iter().any(|&v| v != 0.0);
    let sigma_r = if has_r { Some(factor.covariance().matvec(&r)) } else { None };

    let a0: Vec<f64> = sd.clone();
    let a1: Vec<f64> = active.iter().zip(sd).map(|(&x, &s)| s * logd[x]).collect();
    let p: Vec<f64> = match &sigma_r {
        Some(sr) => active.iter().zip(sd).map(|(&x, &s)| s * sr[x]).collect(),
        None => vec![0.0; m],
    };
    let (k_a0, k_a1, k_g, k_p) = match chol {
        Some(ch) => (ch.solve(&a0), ch.solve(&a1), ch.solve(&g), if has_r { ch.solve(&p) } else { vec![0.0; m] }),
        None => (Vec::new(), Vec::new(), Vec::new(), Vec::new()),
    };

    let w11 = c * dot(&a0, &k_a0);
    let w12 = c * dot(&a0, &k_a1);
    let w22 = c * dot(&a1, &k_a1);
    let (mut r0, mut r1) = (c * dot(&a0, &k_g) - dot(&a0, &k_p), c * dot(&a1, &k_g) - dot(&a1, &k_p));
    if has_r {
        for x in 0..cells {
            r0 += r[x];
            r1 += logd[x] * r[x];
        }
    }
    let det = w11 * w22 - w12 * w12;
    let frozen = !(w11 > 0.0) || !(det > det_tol * w11 * w22) || !det.is_finite();
    let (b0, b1) = if frozen {
        (prev.c1()[it.ap], prev.c2()[it.ap])
    } else {
        ((w22 * r0 - w12 * r1) / det, (w11 * r1 - w12 * r0) / det)
    };

    let z: Vec<f64> = (0..m).map(|a| sd[a] * (k_g[a] - b0 * k_a0[a] - b1 * k_a1[a] - k_p[a] / c)).collect();
    let mut delta = if m > 0 { factor.covariance().matvec_columns(active, &z) } else { vec![0.0; cells] };
    if let Some(sr) = &sigma_r {
        for (d, &v) in delta.iter_mut().zip(sr) {
            *d += v / c;
        }
    }
    ApSolution { ap: it.ap, c1: b0, c2: b1, delta, frozen }
}

/// `S3 − 2⟨S2, F⟩ + ⟨S1, F²⟩` for the map implied by `sol`.
fn residual(stat: ApStatView<'_>, sol: &ApSolution, grid: &GridMap) -> f64 {
    let logd = grid.log_distances(sol.ap);
    let mut cross = 0.0;
    let mut quad = 0.0;
    for x in 0..grid.len() {
        let f = sol.c1 + sol.c2 * logd[x] + sol.delta[x];
        cross += stat.rssi[x] * f;
        quad += stat.occupancy[x] * f * f;
    }
    stat.square - 2.0 * cross + quad
}

/// `Σ_j [S3_j − 2⟨S2_j, F_j⟩ + ⟨S1_j, F_j²⟩]` for `θ`'s maps.
fn residual_sum(items: &[MStepItem<'_>], theta: &Theta) -> f64 {
    items
        .iter()
        .map(|it| {
            let f = theta.maps().row(it.ap);
            it.stat.square - 2.0 * dot(it.stat.rssi, f)
                + it.stat.occupancy.iter().zip(f).map(|(&s, &v)| s * v * v).sum::<f64>()
        })
        .sum()
}

/// `Q(θ; S, n)` for a shared-occupancy statistic.
pub fn penalized_q(
    stats: &SufficientStats,
    steps: f64,
    theta: &Theta,
    prior: &PerturbationPrior,
    penalty: PenaltyWeight,
) -> f64 {
    let items: Vec<MStepItem<'_>> =
        (0..stats.ap_count()).map(|j| MStepItem { ap: j, stat: stats.ap_view(j), steps }).collect();
    penalized_q_group(&items, theta, prior, penalty)
}

/// `Q` restricted to the access points of `items`.
pub fn penalized_q_group(
    items: &[MStepItem<'_>],
    theta: &Theta,
    prior: &PerturbationPrior,
    penalty: PenaltyWeight,
) -> f64 {
    let s2 = theta.sigma2();
    let penalty_term: f64 = items
        .iter()
        .map(|it| penalty.lambda(it.steps) * prior.factor(it.ap).quad_form(theta.delta().row(it.ap)))
        .sum();
    -0.5 * penalty_term - 0.5 * items.len() as f64 * ln(s2) - residual_sum(items, theta) / (2.0 * s2)
}
