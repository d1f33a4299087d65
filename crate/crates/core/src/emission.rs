//! Gaussian observation density over the visible access points.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{ln, LN_2PI};
use crate::theta::Theta;

/// Set of access points present in one RSSI vector.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ApMask {
    len: usize,
    words: Vec<u64>,
}

impl ApMask {
    pub fn full(len: usize) -> Self {
        let mut m = Self::empty(len);
        for j in 0..len {
            m.set(j, true);
        }
        m
    }

    pub fn empty(len: usize) -> Self {
        Self { len, words: vec![0; len.div_ceil(64)] }
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut m = Self::empty(bits.len());
        for (j, &b) in bits.iter().enumerate() {
            m.set(j, b);
        }
        m
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    #[inline]
    pub fn get(&self, j: usize) -> bool {
        j < self.len && (self.words[j / 64] >> (j % 64)) & 1 == 1
    }

    pub fn set(&mut self, j: usize, on: bool) {
        assert!(j < self.len, "mask index out of range");
        let bit = 1u64 << (j % 64);
        if on {
            self.words[j / 64] |= bit;
        } else {
            self.words[j / 64] &= !bit;
        }
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_full(&self) -> bool {
        self.count() == self.len
    }

    pub fn visible(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len).filter(move |&j| self.get(j))
    }

    /// `'1'`/`'0'` per access point, first access point first.
    pub fn to_bitstring(&self) -> String {
        (0..self.len).map(|j| if self.get(j) { '1' } else { '0' }).collect()
    }

    pub fn parse_bitstring(s: &str) -> Result<Self> {
        let mut m = Self::empty(s.len());
        for (j, c) in s.chars().enumerate() {
            match c {
                '1' => m.set(j, true),
                '0' => {}
                _ => return Err(Error::InvalidParameter("mask must contain only '0' and '1'")),
            }
        }
        Ok(m)
    }
}

/// `log g_θ(x, y)` restricted to the access points selected by `mask`.
///
/// With a full mask this is the B-variate isotropic Gaussian density around
/// `F_{·,x}`. An empty mask carries no information and yields 0. Masked-out
/// entries of `y` are never read.
pub fn emission_logdensity(theta: &Theta, cell: usize, y: &[f64], mask: &ApMask) -> f64 {
    let (inv, norm) = emission_constants(theta.sigma2());
    emission_with_constants(theta, cell, y, mask, inv, norm)
}

/// `(1 / 2σ², ½ ln(2πσ²))`.
#[inline]
pub(crate) fn emission_constants(sigma2: f64) -> (f64, f64) {
    (0.5 / sigma2, 0.5 * (LN_2PI + ln(sigma2)))
}

#[inline]
pub(crate) fn emission_with_constants(
    theta: &Theta,
    cell: usize,
    y: &[f64],
    mask: &ApMask,
    half_inv_var: f64,
    half_log_norm: f64,
) -> f64 {
    let mut acc = 0.0;
    let mut seen = 0usize;
    for j in mask.visible() {
        let r = y[j] - theta.map_value(j, cell);
        acc += r * r;
        seen += 1;
    }
    -(seen as f64) * half_log_norm - half_inv_var * acc
}
