//! Ground-truth generation: trajectories, propagation maps and RSSI streams.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::emission::ApMask;
use crate::error::{Error, Result};
use crate::grid::GridMap;
use crate::math::sqrt;
use crate::observation::ObservationRecord;
use crate::theta::{ApField, Theta};
use crate::transition::TransitionKernel;

/// Distribution of the first position.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialDistribution {
    Uniform,
    /// Nonnegative weights over the cells (normalized on use).
    Weights(Vec<f64>),
}

impl InitialDistribution {
    pub fn probabilities(&self, cells: usize) -> Result<Vec<f64>> {
        match self {
            Self::Uniform => Ok(vec![1.0 / cells as f64; cells]),
            Self::Weights(w) => {
                if w.len() != cells {
                    return Err(Error::DimensionMismatch { expected: cells, found: w.len() });
                }
                if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                    return Err(Error::InvalidParameter("initial weights must be nonnegative"));
                }
                let total: f64 = w.iter().sum();
                if !(total > 0.0) {
                    return Err(Error::InvalidParameter("initial weights sum to zero"));
                }
                Ok(w.iter().map(|v| v / total).collect())
            }
        }
    }
}

/// Which access points appear in each report.
#[derive(Debug, Clone, PartialEq)]
pub enum Visibility {
    Full,
    /// Access point `j` is reported independently with probability `p[j]`.
    Bernoulli(Vec<f64>),
    /// Access point `j` is reported when within `radius` grid units.
    Range { radius: f64 },
}

impl Visibility {
    fn validate(&self, ap_count: usize) -> Result<()> {
        match self {
            Self::Full => Ok(()),
            Self::Bernoulli(p) => {
                if p.len() != ap_count {
                    return Err(Error::DimensionMismatch { expected: ap_count, found: p.len() });
                }
                if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(Error::InvalidParameter("visibility probabilities must be in [0, 1]"));
                }
                Ok(())
            }
            Self::Range { radius } => {
                if !(*radius >= 0.0) {
                    return Err(Error::InvalidParameter("visibility radius must be nonnegative"));
                }
                Ok(())
            }
        }
    }
}

fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
        }
        acc += p;
        if u < acc && p > 0.0 {
            return i;
        }
    }
    last_positive
}

/// `X_1 ~ ν`, `X_{t+1} ~ q(X_t, ·)`; returns cell indices.
pub fn simulate_trajectory<R: Rng + ?Sized>(
    initial: &InitialDistribution,
    kernel: &TransitionKernel,
    steps: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if steps == 0 {
        return Err(Error::InvalidParameter("trajectory length must be at least 1"));
    }
    let nu = initial.probabilities(kernel.len())?;
    let mut path = Vec::with_capacity(steps);
    let mut x = sample_categorical(&nu, rng);
    path.push(x);
    for _ in 1..steps {
        x = kernel.sample_next(x, rng);
        path.push(x);
    }
    Ok(path)
}

/// `y_t = F_{·,x_t} + ε_t`, `ε_t ~ N(0, noise_var · I)`, masks drawn per step.
///
/// Noise is drawn for every access point, hidden ones included, before the
/// mask. Step indices start at 1.
pub fn simulate_observations<R: Rng + ?Sized>(
    grid: &GridMap,
    truth: &[usize],
    maps: &ApField,
    noise_var: f64,
    visibility: &Visibility,
    rng: &mut R,
) -> Result<Vec<ObservationRecord>> {
    let b = grid.ap_count();
    if maps.ap_count() != b || maps.cell_count() != grid.len() {
        return Err(Error::DimensionMismatch { expected: b * grid.len(), found: maps.as_slice().len() });
    }
    if !(noise_var >= 0.0) || !noise_var.is_finite() {
        return Err(Error::InvalidParameter("noise variance must be nonnegative"));
    }
    visibility.validate(b)?;
    let sd = sqrt(noise_var);
    let mut out = Vec::with_capacity(truth.len());
    for (t, &x) in truth.iter().enumerate() {
        let mut y: Vec<f64> = (0..b)
            .map(|j| {
                let e: f64 = StandardNormal.sample(rng);
                maps.get(j, x) + sd * e
            })
            .collect();
        let mask = match visibility {
            Visibility::Full => ApMask::full(b),
            Visibility::Bernoulli(p) => {
                let bits: Vec<bool> = p.iter().map(|&pj| rng.random::<f64>() < pj).collect();
                ApMask::from_bools(&bits)
            }
            Visibility::Range { radius } => {
                let bits: Vec<bool> = (0..b).map(|j| grid.ap_distance(x, j) <= *radius).collect();
                ApMask::from_bools(&bits)
            }
        };
        for (j, v) in y.iter_mut().enumerate() {
            if !mask.get(j) {
                *v = f64::NAN;
            }
        }
        out.push(ObservationRecord { t: t as u64 + 1, y, mask, truth: Some(grid.cell(x)) });
    }
    Ok(out)
}

/// Convenience wrapper using `θ*`'s maps and noise variance.
pub fn simulate_from_theta<R: Rng + ?Sized>(
    grid: &GridMap,
    truth: &[usize],
    theta: &Theta,
    visibility: &Visibility,
    rng: &mut R,
) -> Result<Vec<ObservationRecord>> {
    simulate_observations(grid, truth, theta.maps(), theta.sigma2(), visibility, rng)
}
