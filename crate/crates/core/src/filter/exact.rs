use alloc::vec::Vec;

use super::{argmax_first, log_likelihoods};
use crate::error::{Error, Result};
use crate::grid::{GridMap, Point};
use crate::math::{ln, normalize_log_weights};
use crate::observation::ObservationRecord;
use crate::theta::Theta;
use crate::transition::TransitionKernel;

/// Exact filtering distribution `φ_t(x) = P(X_t = x | Y_{1:t})` over the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactFilter {
    phi: Vec<f64>,
    t: usize,
}

/// Posterior `∝ prior · exp(loglik)`, computed in log space.
pub fn bayes_update(prior: &[f64], loglik: &[f64], step: usize) -> Result<Vec<f64>> {
    if prior.len() != loglik.len() {
        return Err(Error::DimensionMismatch { expected: prior.len(), found: loglik.len() });
    }
    let mut w: Vec<f64> = prior
        .iter()
        .zip(loglik)
        .map(|(&p, &l)| if p > 0.0 { ln(p) + l } else { f64::NEG_INFINITY })
        .collect();
    if !normalize_log_weights(&mut w) {
        return Err(Error::Underflow { step });
    }
    Ok(w)
}

impl ExactFilter {
    /// `φ_1 ∝ ν · g_θ(·, y_1)`.
    pub fn init(nu: &[f64], theta: &Theta, record: &ObservationRecord) -> Result<Self> {
        let phi = bayes_update(nu, &log_likelihoods(theta, record), 1)?;
        Ok(Self { phi, t: 1 })
    }

    /// Predict through `q`, then update with `y_t`.
    pub fn step(&mut self, kernel: &TransitionKernel, theta: &Theta, record: &ObservationRecord) -> Result<()> {
        let pred = kernel.predict(&self.phi);
        self.phi = bayes_update(&pred, &log_likelihoods(theta, record), self.t + 1)?;
        self.t += 1;
        Ok(())
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn t(&self) -> usize {
        self.t
    }

    /// Most probable cell (lowest index on ties).
    pub fn map_estimate(&self) -> usize {
        argmax_first(&self.phi)
    }

    pub fn mean_position(&self, grid: &GridMap) -> Point {
        let (mut x, mut y) = (0.0, 0.0);
        for (i, &p) in self.phi.iter().enumerate() {
            let c = grid.cell(i);
            x += p * c.x as f64;
            y += p * c.y as f64;
        }
        Point::new(x, y)
    }
}
