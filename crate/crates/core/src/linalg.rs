//! Small dense linear algebra: square row-major matrices and Cholesky factors.
//!
//! Only what the covariance prior and the M-step need. The Cholesky kernel is
//! blocked four rows at a time, which matters for the ~10³-cell grids.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::sqrt;

/// Square matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    pub fn from_row_major(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::DimensionMismatch { expected: n * n, found: data.len() });
        }
        Ok(Self { n, data })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn add_diagonal(&mut self, v: f64) {
        for i in 0..self.n {
            self.data[i * self.n + i] += v;
        }
    }

    /// `out = self * x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.n);
        (0..self.n).map(|i| dot(self.row(i), x)).collect()
    }

    /// `self[:, cols] * x` where `x` is indexed like `cols`.
    pub fn matvec_columns(&self, cols: &[usize], x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(cols.len(), x.len());
        (0..self.n)
            .map(|i| {
                let row = self.row(i);
                cols.iter().zip(x).map(|(&c, &v)| row[c] * v).sum()
            })
            .collect()
    }

    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        dot(x, &self.matvec(x))
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            for j in 0..i {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }
}

/// Dot product with four independent accumulators.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..n {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Lower-triangular Cholesky factor `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    n: usize,
    l: Vec<f64>,
}

const BLOCK: usize = 4;

impl Cholesky {
    pub fn factor(a: &DenseMatrix) -> Result<Self> {
        let n = a.dim();
        let mut l = vec![0.0; n * n];
        let mut ib = 0;
        while ib < n {
            let ie = (ib + BLOCK).min(n);
            let mut jb = 0;
            while jb <= ib {
                let je = (jb + BLOCK).min(n);
                // Common-prefix contribution, k < jb, for the whole tile.
                let mut tile = [[0.0f64; BLOCK]; BLOCK];
                if jb > 0 {
                    prefix_tile(&l, n, ib, ie, jb, je, &mut tile);
                }
                for j in jb..je {
                    for i in ib.max(j)..ie {
                        let mut v = a.get(i, j) - tile[i - ib][j - jb];
                        for k in jb..j {
                            v -= l[i * n + k] * l[j * n + k];
                        }
                        if i == j {
                            if !(v > 0.0) || !v.is_finite() {
                                return Err(Error::NotPositiveDefinite { pivot: i });
                            }
                            l[i * n + i] = sqrt(v);
                        } else {
                            l[i * n + j] = v / l[j * n + j];
                        }
                    }
                }
                jb += BLOCK;
            }
            ib += BLOCK;
        }
        Ok(Self { n, l })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn lrow(&self, i: usize) -> &[f64] {
        &self.l[i * self.n..i * self.n + i + 1]
    }

    pub fn lower(&self) -> DenseMatrix {
        DenseMatrix { n: self.n, data: self.l.clone() }
    }

    /// Solves `L z = b` in place.
    pub fn solve_lower_in_place(&self, b: &mut [f64]) {
        for i in 0..self.n {
            let row = self.lrow(i);
            let s = dot(&row[..i], &b[..i]);
            b[i] = (b[i] - s) / row[i];
        }
    }

    /// Solves `Lᵀ x = b` in place.
    pub fn solve_upper_in_place(&self, b: &mut [f64]) {
        for i in (0..self.n).rev() {
            let row = self.lrow(i);
            let xi = b[i] / row[i];
            b[i] = xi;
            for (bk, &lk) in b[..i].iter_mut().zip(&row[..i]) {
                *bk -= lk * xi;
            }
        }
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        self.solve_lower_in_place(b);
        self.solve_upper_in_place(b);
    }

    /// `L z`.
    pub fn mul_lower(&self, z: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| dot(self.lrow(i), &z[..=i])).collect()
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.n).map(|i| crate::math::ln(self.l[i * self.n + i])).sum::<f64>()
    }

    pub fn inverse(&self) -> DenseMatrix {
        let n = self.n;
        let mut inv = DenseMatrix::zeros(n);
        let mut col = vec![0.0; n];
        for j in 0..n {
            col.iter_mut().for_each(|c| *c = 0.0);
            col[j] = 1.0;
            self.solve_in_place(&mut col);
            for i in 0..n {
                inv.data[i * n + j] = col[i];
            }
        }
        // Symmetrize away rounding so downstream quadratic forms are exact
        // functions of a symmetric matrix.
        for i in 0..n {
            for j in 0..i {
                let v = 0.5 * (inv.data[i * n + j] + inv.data[j * n + i]);
                inv.data[i * n + j] = v;
                inv.data[j * n + i] = v;
            }
        }
        inv
    }
}

fn prefix_tile(
    l: &[f64],
    n: usize,
    ib: usize,
    ie: usize,
    jb: usize,
    je: usize,
    tile: &mut [[f64; BLOCK]; BLOCK],
) {
    if ie - ib == BLOCK && je - jb == BLOCK {
        let r = |i: usize| &l[(ib + i) * n..(ib + i) * n + jb];
        let c = |j: usize| &l[(jb + j) * n..(jb + j) * n + jb];
        let (r0, r1, r2, r3) = (r(0), r(1), r(2), r(3));
        let (c0, c1, c2, c3) = (c(0), c(1), c(2), c(3));
        let mut acc = [[0.0f64; BLOCK]; BLOCK];
        for k in 0..jb {
            let a = [r0[k], r1[k], r2[k], r3[k]];
            let b = [c0[k], c1[k], c2[k], c3[k]];
            for (accr, &ar) in acc.iter_mut().zip(&a) {
                for (v, &bc) in accr.iter_mut().zip(&b) {
                    *v += ar * bc;
                }
            }
        }
        *tile = acc;
    } else {
        for i in ib..ie {
            for j in jb..je.min(i + 1) {
                tile[i - ib][j - jb] = dot(&l[i * n..i * n + jb], &l[j * n..j * n + jb]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spd(n: usize) -> DenseMatrix {
        // Gaussian-kernel Gram matrix on a line plus a ridge.
        let mut m = DenseMatrix::from_fn(n, |i, j| {
            let d = i as f64 - j as f64;
            libm::exp(-d * d / 7.0)
        });
        m.add_diagonal(0.1);
        m
    }

    #[test]
    fn factor_reconstructs_matrix() {
        for n in [1, 2, 3, 4, 5, 9, 17, 33] {
            let a = spd(n);
            let ch = Cholesky::factor(&a).unwrap();
            let l = ch.lower();
            for i in 0..n {
                for j in 0..n {
                    let v: f64 = (0..n).map(|k| l.get(i, k) * l.get(j, k)).sum();
                    assert!((v - a.get(i, j)).abs() < 1e-12, "n={n} ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn solve_and_inverse_agree() {
        let a = spd(13);
        let ch = Cholesky::factor(&a).unwrap();
        let b: Vec<f64> = (0..13).map(|i| (i as f64).sin()).collect();
        let x = ch.solve(&b);
        let ax = a.matvec(&x);
        for (u, v) in ax.iter().zip(&b) {
            assert!((u - v).abs() < 1e-11);
        }
        let inv = ch.inverse();
        let y = inv.matvec(&b);
        for (u, v) in x.iter().zip(&y) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_indefinite() {
        let mut a = DenseMatrix::identity(3);
        a.set(1, 1, -1.0);
        assert_eq!(Cholesky::factor(&a).unwrap_err(), Error::NotPositiveDefinite { pivot: 1 });
    }

    #[test]
    fn mul_lower_matches_dense() {
        let a = spd(6);
        let ch = Cholesky::factor(&a).unwrap();
        let z = [1.0, -2.0, 0.5, 3.0, 0.0, 1.5];
        let lz = ch.mul_lower(&z);
        let dense = ch.lower().matvec(&z);
        for (u, v) in lz.iter().zip(&dense) {
            assert!((u - v).abs() < 1e-14);
        }
    }
}
