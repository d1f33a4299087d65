use alloc::vec::Vec;

use crate::emission::ApMask;
use crate::error::{Error, Result};
use crate::grid::Cell;

/// One RSSI report. Entries of `y` hidden by `mask` hold NaN and are never read.
#[derive(Debug, Clone)]
pub struct ObservationRecord {
    pub t: u64,
    pub y: Vec<f64>,
    pub mask: ApMask,
    pub truth: Option<Cell>,
}

impl ObservationRecord {
    pub fn full(t: u64, y: Vec<f64>) -> Self {
        let mask = ApMask::full(y.len());
        Self { t, y, mask, truth: None }
    }

    pub fn ap_count(&self) -> usize {
        self.y.len()
    }
}

impl PartialEq for ObservationRecord {
    /// Field-wise equality where masked entries compare by bit pattern (NaN == NaN).
    fn eq(&self, other: &Self) -> bool {
        self.t == other.t
            && self.mask == other.mask
            && self.truth == other.truth
            && self.y.len() == other.y.len()
            && self.y.iter().zip(&other.y).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Checks that every record has `ap_count` entries and that step indices
/// strictly increase.
pub fn validate_stream(records: &[ObservationRecord], ap_count: usize) -> Result<()> {
    let mut last: Option<u64> = None;
    for r in records {
        if r.y.len() != ap_count || r.mask.len() != ap_count {
            return Err(Error::DimensionMismatch { expected: ap_count, found: r.y.len() });
        }
        if let Some(prev) = last {
            if r.t <= prev {
                return Err(Error::InvalidStream("step indices must strictly increase"));
            }
        }
        last = Some(r.t);
    }
    Ok(())
}
