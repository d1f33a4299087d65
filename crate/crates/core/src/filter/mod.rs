//! Filtering: the exact forward recursion (used as an oracle on small grids)
//! and the bootstrap particle filter.

pub mod exact;
pub mod particle;

use crate::emission::{emission_constants, emission_with_constants};
use crate::observation::ObservationRecord;
use crate::theta::Theta;
use alloc::vec::Vec;

/// `log g_θ(x, y_t)` for every cell.
pub fn log_likelihoods(theta: &Theta, record: &ObservationRecord) -> Vec<f64> {
    let (inv, norm) = emission_constants(theta.sigma2());
    (0..theta.maps().cell_count())
        .map(|x| emission_with_constants(theta, x, &record.y, &record.mask, inv, norm))
        .collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
