//! Gaussian prior on the perturbation fields `δ_j ~ N(0, Σ_j)` with the
//! squared-exponential covariance `Σ_j(x, x') = v1 · exp(−|x − x'|² / v2)`.
//!
//! The Gram matrix of a smooth kernel on a dense grid is numerically singular,
//! so a ridge `jitter · v1` is added to the diagonal before factorizing. The
//! jittered matrix is the prior covariance everywhere (sampling, log-density and
//! the M-step), which keeps those three consistent. Access points sharing the
//! same kernel share one factorization.

use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::grid::GridMap;
use crate::linalg::{dot, Cholesky, DenseMatrix};
use crate::theta::ApField;

pub const DEFAULT_JITTER: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceKernel {
    pub v1: f64,
    pub v2: f64,
}

impl CovarianceKernel {
    pub fn new(v1: f64, v2: f64) -> Result<Self> {
        if !(v1 > 0.0) || !(v2 > 0.0) || !v1.is_finite() || !v2.is_finite() {
            return Err(Error::InvalidParameter("covariance v1 and v2 must be positive"));
        }
        Ok(Self { v1, v2 })
    }
}

#[derive(Debug)]
pub struct CovarianceFactor {
    kernel: CovarianceKernel,
    covariance: DenseMatrix,
    chol: Cholesky,
    precision: DenseMatrix,
}

impl CovarianceFactor {
    fn build(grid: &GridMap, kernel: CovarianceKernel, jitter: f64) -> Result<Self> {
        let mut covariance = DenseMatrix::from_fn(grid.len(), |i, k| {
            kernel.v1 * crate::math::exp(-grid.cell_dist2(i, k) / kernel.v2)
        });
        covariance.add_diagonal(jitter * kernel.v1);
        let chol = Cholesky::factor(&covariance)?;
        let precision = chol.inverse();
        Ok(Self { kernel, covariance, chol, precision })
    }

    pub fn kernel(&self) -> CovarianceKernel {
        self.kernel
    }

    /// `Σ_j + jitter · v1 · I`.
    pub fn covariance(&self) -> &DenseMatrix {
        &self.covariance
    }

    pub fn cholesky(&self) -> &Cholesky {
        &self.chol
    }

    pub fn precision(&self) -> &DenseMatrix {
        &self.precision
    }

    /// `δᵀ Σ⁻¹ δ` through the square root: `‖L⁻¹ δ‖²`.
    pub fn quad_form(&self, delta: &[f64]) -> f64 {
        let mut z = delta.to_vec();
        self.chol.solve_lower_in_place(&mut z);
        dot(&z, &z)
    }

    /// `δᵀ Σ⁻¹ δ` through the cached inverse.
    pub fn quad_form_precision(&self, delta: &[f64]) -> f64 {
        self.precision.quadratic_form(delta)
    }
}

#[derive(Debug, Clone)]
pub struct PerturbationPrior {
    cells: usize,
    jitter: f64,
    factors: Vec<Arc<CovarianceFactor>>,
    ap_factor: Vec<usize>,
}

impl PerturbationPrior {
    /// `kernels` holds either one kernel shared by all access points or one per
    /// access point.
    pub fn new(grid: &GridMap, kernels: &[CovarianceKernel], jitter: f64) -> Result<Self> {
        let b = grid.ap_count();
        if !(jitter > 0.0) || !jitter.is_finite() {
            return Err(Error::InvalidParameter("jitter must be positive"));
        }
        let per_ap: Vec<CovarianceKernel> = match kernels.len() {
            1 => alloc::vec![kernels[0]; b],
            n if n == b => kernels.to_vec(),
            n => return Err(Error::DimensionMismatch { expected: b, found: n }),
        };
        let mut distinct: Vec<CovarianceKernel> = Vec::new();
        let mut ap_factor = Vec::with_capacity(b);
        for k in &per_ap {
            let idx = match distinct.iter().position(|d| d == k) {
                Some(i) => i,
                None => {
                    distinct.push(*k);
                    distinct.len() - 1
                }
            };
            ap_factor.push(idx);
        }
        let factors = distinct
            .into_iter()
            .map(|k| CovarianceFactor::build(grid, k, jitter).map(Arc::new))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { cells: grid.len(), jitter, factors, ap_factor })
    }

    pub fn shared(grid: &GridMap, kernel: CovarianceKernel) -> Result<Self> {
        Self::new(grid, &[kernel], DEFAULT_JITTER)
    }

    pub fn ap_count(&self) -> usize {
        self.ap_factor.len()
    }

    pub fn cell_count(&self) -> usize {
        self.cells
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn factor(&self, ap: usize) -> &CovarianceFactor {
        &self.factors[self.ap_factor[ap]]
    }

    /// Index of the (deduplicated) factor used by `ap`.
    pub fn factor_index(&self, ap: usize) -> usize {
        self.ap_factor[ap]
    }

    /// Draws `δ_j = L_j z`, `z ~ N(0, I)`, for every access point.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ApField {
        let mut out = ApField::zeros(self.ap_count(), self.cells);
        for j in 0..self.ap_count() {
            let z: Vec<f64> = (0..self.cells).map(|_| StandardNormal.sample(rng)).collect();
            let d = self.factor(j).cholesky().mul_lower(&z);
            out.row_mut(j).copy_from_slice(&d);
        }
        out
    }

    /// `log π(δ)` up to its normalizing constant: `−½ Σ_j δ_jᵀ Σ_j⁻¹ δ_j`.
    pub fn log_density(&self, delta: &ApField) -> f64 {
        -0.5 * (0..self.ap_count()).map(|j| self.factor(j).quad_form(delta.row(j))).sum::<f64>()
    }

    /// Same quantity evaluated with the cached precision matrices.
    pub fn log_density_precision(&self, delta: &ApField) -> f64 {
        -0.5 * (0..self.ap_count())
            .map(|j| self.factor(j).quad_form_precision(delta.row(j)))
            .sum::<f64>()
    }
}
