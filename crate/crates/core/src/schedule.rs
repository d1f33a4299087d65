//! Block lengths `τ_k = slope · k + intercept`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSchedule {
    pub slope: u64,
    pub intercept: u64,
}

impl Default for BlockSchedule {
    fn default() -> Self {
        Self { slope: 10, intercept: 500 }
    }
}

impl BlockSchedule {
    pub fn new(slope: u64, intercept: u64) -> Result<Self> {
        if slope == 0 && intercept == 0 {
            return Err(Error::InvalidParameter("block lengths must be positive"));
        }
        Ok(Self { slope, intercept })
    }

    /// Length of block `k ≥ 1`.
    pub fn tau(&self, k: u64) -> u64 {
        self.slope * k + self.intercept
    }

    /// `T_k = Σ_{i≤k} τ_i`.
    pub fn cumulative(&self, k: u64) -> u64 {
        self.slope * k * (k + 1) / 2 + self.intercept * k
    }
}
