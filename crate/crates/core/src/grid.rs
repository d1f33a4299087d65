//! The discretized environment: a rectangular set of integer cells plus the
//! access-point positions.
//!
//! Distances are in grid units. Cells are ordered row-major starting at the
//! origin cell, so the cell index is `(y - oy) * width + (x - ox)`.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{ln, sqrt};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub x: i64,
    pub y: i64,
}

impl Cell {
    pub const fn new(x: i64, y: i64) -> Self {
        Self { x, y }
    }

    pub fn dist2(self, other: Cell) -> f64 {
        let dx = (self.x - other.x) as f64;
        let dy = (self.y - other.y) as f64;
        dx * dx + dy * dy
    }

    pub fn distance(self, other: Cell) -> f64 {
        sqrt(self.dist2(other))
    }

    pub fn to_point(self) -> Point {
        Point::new(self.x as f64, self.y as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        sqrt(dx * dx + dy * dy)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    origin: Cell,
    width: usize,
    height: usize,
    cells: Vec<Cell>,
    aps: Vec<Point>,
    outside: Vec<usize>,
}

impl GridMap {
    /// Grid `{0..width-1} × {0..height-1}` with the given access points.
    pub fn new(width: usize, height: usize, aps: Vec<Point>) -> Result<Self> {
        Self::with_origin(Cell::new(0, 0), width, height, aps)
    }

    /// Access points outside the bounding box are accepted (see
    /// [`GridMap::aps_outside`]); an access point exactly on a cell center is
    /// rejected because its log-distance is undefined.
    pub fn with_origin(origin: Cell, width: usize, height: usize, aps: Vec<Point>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParameter("grid must have at least one cell"));
        }
        let mut cells = Vec::with_capacity(width * height);
        for y in 0..height as i64 {
            for x in 0..width as i64 {
                cells.push(Cell::new(origin.x + x, origin.y + y));
            }
        }
        let (x0, y0) = (origin.x as f64, origin.y as f64);
        let (x1, y1) = (x0 + (width - 1) as f64, y0 + (height - 1) as f64);
        let mut outside = Vec::new();
        for (j, ap) in aps.iter().enumerate() {
            if !ap.x.is_finite() || !ap.y.is_finite() {
                return Err(Error::InvalidParameter("access point position must be finite"));
            }
            if ap.x == libm::trunc(ap.x) && ap.y == libm::trunc(ap.y) {
                let c = Cell::new(ap.x as i64, ap.y as i64);
                if c.x >= origin.x
                    && c.y >= origin.y
                    && c.x < origin.x + width as i64
                    && c.y < origin.y + height as i64
                {
                    return Err(Error::SingularGeometry { ap: j });
                }
            }
            if ap.x < x0 || ap.x > x1 || ap.y < y0 || ap.y > y1 {
                outside.push(j);
            }
        }
        Ok(Self { origin, width, height, cells, aps, outside })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn origin(&self) -> Cell {
        self.origin
    }

    /// Number of cells, `|C|`.
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    #[inline]
    pub fn cell(&self, index: usize) -> Cell {
        self.cells[index]
    }

    pub fn index_of(&self, cell: Cell) -> Option<usize> {
        let dx = cell.x - self.origin.x;
        let dy = cell.y - self.origin.y;
        if dx < 0 || dy < 0 || dx >= self.width as i64 || dy >= self.height as i64 {
            return None;
        }
        Some(dy as usize * self.width + dx as usize)
    }

    /// Number of access points, `B`.
    pub fn ap_count(&self) -> usize {
        self.aps.len()
    }

    pub fn aps(&self) -> &[Point] {
        &self.aps
    }

    /// Indices of access points lying outside the cell bounding box.
    pub fn aps_outside(&self) -> &[usize] {
        &self.outside
    }

    #[inline]
    pub fn cell_dist2(&self, i: usize, k: usize) -> f64 {
        self.cells[i].dist2(self.cells[k])
    }

    #[inline]
    pub fn cell_distance(&self, i: usize, k: usize) -> f64 {
        self.cells[i].distance(self.cells[k])
    }

    pub fn ap_distance(&self, cell: usize, ap: usize) -> f64 {
        self.cells[cell].to_point().distance(self.aps[ap])
    }

    /// `D_j = {ln ‖x − O_j‖}_x`, the regressor of the path-loss slope.
    pub fn log_distances(&self, ap: usize) -> Vec<f64> {
        (0..self.len()).map(|x| ln(self.ap_distance(x, ap))).collect()
    }

    /// The same grid and access points shifted by `(dx, dy)`.
    pub fn translated(&self, dx: i64, dy: i64) -> Result<Self> {
        let aps = self.aps.iter().map(|p| Point::new(p.x + dx as f64, p.y + dy as f64)).collect();
        Self::with_origin(
            Cell::new(self.origin.x + dx, self.origin.y + dy),
            self.width,
            self.height,
            aps,
        )
    }
}
