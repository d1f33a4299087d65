//! Map and localization errors.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::Cell;
use crate::math::ceil;
use crate::theta::ApField;

/// Normalized L1 error `(1/B) Σ_j (1/|C|) Σ_x |F̂_{j,x} − F*_{j,x}|`.
pub fn map_error(estimate: &ApField, truth: &ApField) -> Result<f64> {
    if estimate.ap_count() != truth.ap_count() || estimate.cell_count() != truth.cell_count() {
        return Err(Error::DimensionMismatch {
            expected: truth.as_slice().len(),
            found: estimate.as_slice().len(),
        });
    }
    if truth.as_slice().is_empty() {
        return Err(Error::Empty);
    }
    let total: f64 = estimate.as_slice().iter().zip(truth.as_slice()).map(|(a, b)| (a - b).abs()).sum();
    Ok(total / truth.as_slice().len() as f64)
}

/// Nearest-rank `q`-quantile: the `⌈q·n⌉`-th smallest value (rank clamped to
/// `1..=n`).
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty);
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidParameter("quantile level must lie in [0, 1]"));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidParameter("quantile of NaN"));
    }
    let n = values.len();
    let rank = (ceil(q * n as f64) as usize).clamp(1, n);
    let mut v: Vec<f64> = values.to_vec();
    let (_, kth, _) = v.select_nth_unstable_by(rank - 1, |a, b| a.total_cmp(b));
    Ok(*kth)
}

/// `q`-quantile of per-step localization distances.
pub fn localization_quantile(distances: &[f64], q: f64) -> Result<f64> {
    quantile(distances, q)
}

/// Per-step Euclidean distances between estimated and true cells.
pub fn position_distances(estimates: &[Cell], truth: &[Cell]) -> Result<Vec<f64>> {
    if estimates.len() != truth.len() {
        return Err(Error::DimensionMismatch { expected: truth.len(), found: estimates.len() });
    }
    Ok(estimates.iter().zip(truth).map(|(e, t)| e.distance(*t)).collect())
}
