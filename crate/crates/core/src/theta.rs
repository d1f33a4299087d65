//! Model parameters and the propagation maps they induce.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{GridMap, Point};
use crate::math::ln;

/// Log-distance (Friis) mean `c1 + c2 · ln ‖x − O‖`.
pub fn friis_mean(c1: f64, c2: f64, x: Point, ap: Point) -> Result<f64> {
    let d = x.distance(ap);
    if !(d > 0.0) {
        return Err(Error::SingularGeometry { ap: 0 });
    }
    Ok(c1 + c2 * ln(d))
}

/// A `B × |C|` field indexed by access point then cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ApField {
    aps: usize,
    cells: usize,
    data: Vec<f64>,
}

impl ApField {
    pub fn zeros(aps: usize, cells: usize) -> Self {
        Self { aps, cells, data: vec![0.0; aps * cells] }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let aps = rows.len();
        let cells = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(aps * cells);
        for r in rows {
            if r.len() != cells {
                return Err(Error::DimensionMismatch { expected: cells, found: r.len() });
            }
            data.extend(r);
        }
        Ok(Self { aps, cells, data })
    }

    pub fn ap_count(&self) -> usize {
        self.aps
    }

    pub fn cell_count(&self) -> usize {
        self.cells
    }

    #[inline]
    pub fn get(&self, ap: usize, cell: usize) -> f64 {
        self.data[ap * self.cells + cell]
    }

    #[inline]
    pub fn set(&mut self, ap: usize, cell: usize, v: f64) {
        self.data[ap * self.cells + cell] = v;
    }

    #[inline]
    pub fn row(&self, ap: usize) -> &[f64] {
        &self.data[ap * self.cells..(ap + 1) * self.cells]
    }

    #[inline]
    pub fn row_mut(&mut self, ap: usize) -> &mut [f64] {
        &mut self.data[ap * self.cells..(ap + 1) * self.cells]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// `θ = (c1, c2, δ, σ²)` with the derived maps `F_{j,x} = c1_j + c2_j ln‖x − O_j‖ + δ_{j,x}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Theta {
    c1: Vec<f64>,
    c2: Vec<f64>,
    delta: ApField,
    sigma2: f64,
    maps: ApField,
}

impl Theta {
    pub fn new(grid: &GridMap, c1: Vec<f64>, c2: Vec<f64>, delta: ApField, sigma2: f64) -> Result<Self> {
        let b = grid.ap_count();
        if c1.len() != b {
            return Err(Error::DimensionMismatch { expected: b, found: c1.len() });
        }
        if c2.len() != b {
            return Err(Error::DimensionMismatch { expected: b, found: c2.len() });
        }
        if delta.ap_count() != b || delta.cell_count() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: b * grid.len(),
                found: delta.ap_count() * delta.cell_count(),
            });
        }
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::InvalidParameter("sigma2 must be positive"));
        }
        let mut theta = Self { c1, c2, delta, sigma2, maps: ApField::zeros(b, grid.len()) };
        theta.maps = theta.compute_maps(grid);
        Ok(theta)
    }

    /// Same path-loss coefficients for every access point and `δ = 0`.
    pub fn uniform(grid: &GridMap, c1: f64, c2: f64, sigma2: f64) -> Result<Self> {
        let b = grid.ap_count();
        Self::new(grid, vec![c1; b], vec![c2; b], ApField::zeros(b, grid.len()), sigma2)
    }

    pub fn ap_count(&self) -> usize {
        self.c1.len()
    }

    pub fn c1(&self) -> &[f64] {
        &self.c1
    }

    pub fn c2(&self) -> &[f64] {
        &self.c2
    }

    pub fn delta(&self) -> &ApField {
        &self.delta
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// The propagation maps `F`.
    pub fn maps(&self) -> &ApField {
        &self.maps
    }

    #[inline]
    pub fn map_value(&self, ap: usize, cell: usize) -> f64 {
        self.maps.get(ap, cell)
    }

    /// Recomputes `F` from `(c1, c2, δ)`.
    pub fn compute_maps(&self, grid: &GridMap) -> ApField {
        let mut maps = ApField::zeros(self.ap_count(), grid.len());
        for j in 0..self.ap_count() {
            self.fill_map_row(grid, j, maps.row_mut(j));
        }
        maps
    }

    fn fill_map_row(&self, grid: &GridMap, j: usize, out: &mut [f64]) {
        let d = grid.log_distances(j);
        for ((o, &dj), &dl) in out.iter_mut().zip(&d).zip(self.delta.row(j)) {
            *o = self.c1[j] + self.c2[j] * dj + dl;
        }
    }

    /// Replaces one access point's `(c1, c2, δ_j)` and refreshes its map.
    pub fn set_ap(&mut self, grid: &GridMap, j: usize, c1: f64, c2: f64, delta: &[f64]) -> Result<()> {
        if delta.len() != grid.len() {
            return Err(Error::DimensionMismatch { expected: grid.len(), found: delta.len() });
        }
        self.c1[j] = c1;
        self.c2[j] = c2;
        self.delta.row_mut(j).copy_from_slice(delta);
        let mut row = vec![0.0; grid.len()];
        self.fill_map_row(grid, j, &mut row);
        self.maps.row_mut(j).copy_from_slice(&row);
        Ok(())
    }

    /// Copies access point `j`'s parameters and map from `other`.
    pub fn copy_ap_from(&mut self, other: &Theta, j: usize) {
        self.c1[j] = other.c1[j];
        self.c2[j] = other.c2[j];
        self.delta.row_mut(j).copy_from_slice(other.delta.row(j));
        self.maps.row_mut(j).copy_from_slice(other.maps.row(j));
    }

    pub fn set_sigma2(&mut self, sigma2: f64) -> Result<()> {
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::InvalidParameter("sigma2 must be positive"));
        }
        self.sigma2 = sigma2;
        Ok(())
    }
}
