//! Reference computations shared by the integration tests. Everything here is
//! written from the model definitions directly and only reads plain data out
//! of the library types.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rssi_slam_core::simulate::{simulate_from_theta, simulate_trajectory, InitialDistribution, Visibility};
use rssi_slam_core::*;

/// Random small problem: `w × h` grid, `aps` access points at random
/// non-integer positions, random `θ`, `n` full-visibility observations.
pub fn random_instance(
    rng: &mut ChaCha8Rng,
    w: usize,
    h: usize,
    aps: usize,
    a: f64,
    n: usize,
) -> (GridMap, TransitionKernel, Theta, Vec<ObservationRecord>) {
    let positions: Vec<Point> = (0..aps)
        .map(|_| {
            Point::new(
                rng.random_range(0..w) as f64 + rng.random_range(0.1..0.9),
                rng.random_range(0..h) as f64 + rng.random_range(0.1..0.9),
            )
        })
        .collect();
    let grid = GridMap::new(w, h, positions).unwrap();
    let kernel = TransitionKernel::build(&grid, a).unwrap();
    let c1: Vec<f64> = (0..aps).map(|_| rng.random_range(-40.0..-15.0)).collect();
    let c2: Vec<f64> = (0..aps).map(|_| rng.random_range(-25.0..-8.0)).collect();
    let rows: Vec<Vec<f64>> = (0..aps).map(|_| (0..grid.len()).map(|_| rng.random_range(-4.0..4.0)).collect()).collect();
    let sigma2 = rng.random_range(4.0..30.0);
    let theta = Theta::new(&grid, c1, c2, ApField::from_rows(rows).unwrap(), sigma2).unwrap();
    let path = simulate_trajectory(&InitialDistribution::Uniform, &kernel, n, rng).unwrap();
    let records = simulate_from_theta(&grid, &path, &theta, &Visibility::Full, rng).unwrap();
    (grid, kernel, theta, records)
}

/// `exp(−‖x − x'‖² / a)` normalized over `x'`.
pub fn kernel_matrix(grid: &GridMap, a: f64) -> Vec<Vec<f64>> {
    let cells = grid.cells();
    cells
        .iter()
        .map(|&c| {
            let row: Vec<f64> = cells.iter().map(|&d| (-(c.dist2(d)) / a).exp()).collect();
            let z: f64 = row.iter().sum();
            row.into_iter().map(|v| v / z).collect()
        })
        .collect()
}

pub fn log_gaussian(theta: &Theta, cell: usize, y: &[f64]) -> f64 {
    let s2 = theta.sigma2();
    y.iter()
        .enumerate()
        .map(|(j, &v)| {
            let r = v - theta.maps().get(j, cell);
            -0.5 * (r * r / s2 + (2.0 * std::f64::consts::PI * s2).ln())
        })
        .sum()
}

/// Flat statistic `[S1 | S2 (row per AP) | S3]` of one `(x, y)` pair.
pub fn increment(cells: usize, cell: usize, y: &[f64]) -> Vec<f64> {
    let b = y.len();
    let mut s = vec![0.0; cells * (1 + b) + b];
    s[cell] = 1.0;
    for (j, &v) in y.iter().enumerate() {
        s[cells * (1 + j) + cell] = v;
        s[cells * (1 + b) + j] = v * v;
    }
    s
}

/// `E[(1/n) Σ_t s(X_t, Y_t) | Y_{1:n}]` by summing over every path, with a
/// uniform initial law.
pub fn enumerate_smoothed(grid: &GridMap, a: f64, theta: &Theta, records: &[ObservationRecord]) -> Vec<f64> {
    let c = grid.len();
    let n = records.len();
    let q = kernel_matrix(grid, a);
    let logg: Vec<Vec<f64>> =
        records.iter().map(|r| (0..c).map(|x| log_gaussian(theta, x, &r.y)).collect()).collect();
    let dim = c * (1 + grid.ap_count()) + grid.ap_count();
    let incs: Vec<Vec<Vec<f64>>> =
        records.iter().map(|r| (0..c).map(|x| increment(c, x, &r.y)).collect()).collect();

    let total_paths = c.pow(n as u32);
    let mut logw = Vec::with_capacity(total_paths);
    let mut paths = Vec::with_capacity(total_paths);
    for code in 0..total_paths {
        let mut path = vec![0usize; n];
        let mut k = code;
        for slot in path.iter_mut() {
            *slot = k % c;
            k /= c;
        }
        let mut lw = (1.0 / c as f64).ln() + logg[0][path[0]];
        for t in 1..n {
            lw += q[path[t - 1]][path[t]].ln() + logg[t][path[t]];
        }
        logw.push(lw);
        paths.push(path);
    }
    let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = weights.iter().sum();
    let mut out = vec![0.0; dim];
    for (path, w) in paths.iter().zip(&weights) {
        let p = w / z;
        for (t, &x) in path.iter().enumerate() {
            for (o, v) in out.iter_mut().zip(&incs[t][x]) {
                *o += p * v / n as f64;
            }
        }
    }
    out
}

/// Exact filter `φ_t` with uniform initial law, one vector per step.
pub fn forward_filter(grid: &GridMap, a: f64, theta: &Theta, records: &[ObservationRecord]) -> Vec<Vec<f64>> {
    let c = grid.len();
    let q = kernel_matrix(grid, a);
    let mut out: Vec<Vec<f64>> = Vec::new();
    let mut pred = vec![1.0 / c as f64; c];
    for r in records {
        if let Some(prev) = out.last() {
            pred = (0..c).map(|x| (0..c).map(|xp| prev[xp] * q[xp][x]).sum()).collect();
        }
        let logs: Vec<f64> = (0..c).map(|x| pred[x].ln() + log_gaussian(theta, x, &r.y)).collect();
        let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = w.iter().sum();
        out.push(w.into_iter().map(|v| v / z).collect());
    }
    out
}

/// Literal per-particle update: every new particle averages over all previous
/// particles with backward weights `ω^ℓ q(ξ^ℓ, ξ^p)`.
pub fn literal_particle_rho(
    prev_rho: &[Vec<f64>],
    prev: &ParticleSystem,
    next: &ParticleSystem,
    q: &[Vec<f64>],
    cells: usize,
    y: &[f64],
    t: usize,
) -> Vec<Vec<f64>> {
    let dim = prev_rho[0].len();
    let inv = 1.0 / t as f64;
    (0..next.len())
        .map(|p| {
            let xp = next.cells()[p];
            let inc = increment(cells, xp, y);
            let mut num = vec![0.0; dim];
            let mut z = 0.0;
            for l in 0..prev.len() {
                let w = prev.weights()[l] * q[prev.cells()[l]][xp];
                z += w;
                for d in 0..dim {
                    num[d] += w * (inv * inc[d] + (1.0 - inv) * prev_rho[l][d]);
                }
            }
            num.into_iter().map(|v| v / z).collect()
        })
        .collect()
}

/// `Σ(x, x') = v1 exp(−|x − x'|² / v2) + jitter · v1 · 1{x = x'}`.
pub fn covariance(grid: &GridMap, v1: f64, v2: f64, jitter: f64) -> DMatrix<f64> {
    let cells = grid.cells();
    DMatrix::from_fn(grid.len(), grid.len(), |i, k| {
        v1 * (-(cells[i].dist2(cells[k])) / v2).exp() + if i == k { jitter * v1 } else { 0.0 }
    })
}

/// Flattened parameter `(c1, c2, δ rows, σ²)`.
pub fn flatten(theta: &Theta) -> Vec<f64> {
    let mut v = theta.c1().to_vec();
    v.extend_from_slice(theta.c2());
    v.extend_from_slice(theta.delta().as_slice());
    v.push(theta.sigma2());
    v
}

pub fn unflatten(grid: &GridMap, v: &[f64]) -> Theta {
    let b = grid.ap_count();
    let c = grid.len();
    let rows: Vec<Vec<f64>> = (0..b).map(|j| v[2 * b + j * c..2 * b + (j + 1) * c].to_vec()).collect();
    Theta::new(grid, v[..b].to_vec(), v[b..2 * b].to_vec(), ApField::from_rows(rows).unwrap(), v[v.len() - 1]).unwrap()
}

/// `Q` written out with an explicit dense inverse of the prior covariance.
pub fn dense_q(grid: &GridMap, sigma_inv: &DMatrix<f64>, stats: &SufficientStats, lambda: f64, v: &[f64]) -> f64 {
    let b = grid.ap_count();
    let c = grid.len();
    let s2 = v[v.len() - 1];
    let mut q = -(b as f64) / 2.0 * s2.ln();
    for j in 0..b {
        let delta = DVector::from_column_slice(&v[2 * b + j * c..2 * b + (j + 1) * c]);
        q -= 0.5 * lambda * (delta.transpose() * sigma_inv * &delta)[(0, 0)];
        let mut bracket = stats.squares()[j];
        for x in 0..c {
            let f = v[j] + v[b + j] * grid.ap_distance(x, j).ln() + delta[x];
            bracket += -2.0 * stats.rssi().get(j, x) * f + stats.occupancy()[x] * f * f;
        }
        q -= bracket / (2.0 * s2);
    }
    q
}

/// Maximizer of `Q` by a joint dense solve in `(β, δ)` for fixed `σ²`,
/// alternated with the closed-form `σ²` until it stops moving.
pub fn dense_maximizer(grid: &GridMap, sigma_inv: &DMatrix<f64>, stats: &SufficientStats, lambda: f64, s2_start: f64) -> Vec<f64> {
    let b = grid.ap_count();
    let c = grid.len();
    let mut s2 = s2_start;
    let mut sol = vec![0.0; 2 * b + b * c + 1];
    for _ in 0..500 {
        let mut resid = 0.0;
        for j in 0..b {
            let logd: Vec<f64> = (0..c).map(|x| grid.ap_distance(x, j).ln()).collect();
            let m = c + 2;
            let mut a = DMatrix::<f64>::zeros(m, m);
            let mut rhs = DVector::<f64>::zeros(m);
            // Unknowns: δ (0..c), c1 (c), c2 (c + 1).
            for x in 0..c {
                for xp in 0..c {
                    a[(x, xp)] = lambda * s2 * sigma_inv[(x, xp)];
                }
                let d = stats.occupancy()[x];
                a[(x, x)] += d;
                a[(x, c)] = d;
                a[(x, c + 1)] = d * logd[x];
                a[(c, x)] = d;
                a[(c + 1, x)] = d * logd[x];
                a[(c, c)] += d;
                a[(c, c + 1)] += d * logd[x];
                a[(c + 1, c)] += d * logd[x];
                a[(c + 1, c + 1)] += d * logd[x] * logd[x];
                let s = stats.rssi().get(j, x);
                rhs[x] = s;
                rhs[c] += s;
                rhs[c + 1] += s * logd[x];
            }
            let z = a.lu().solve(&rhs).expect("joint system is regular");
            sol[j] = z[c];
            sol[b + j] = z[c + 1];
            for x in 0..c {
                sol[2 * b + j * c + x] = z[x];
            }
            let mut bracket = stats.squares()[j];
            for x in 0..c {
                let f = z[c] + z[c + 1] * logd[x] + z[x];
                bracket += -2.0 * stats.rssi().get(j, x) * f + stats.occupancy()[x] * f * f;
            }
            resid += bracket;
        }
        let next = resid / b as f64;
        let done = (next - s2).abs() <= 1e-14 * s2;
        s2 = next;
        if done {
            break;
        }
    }
    let last = sol.len() - 1;
    sol[last] = s2;
    sol
}

/// Central finite-difference gradient.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let step = h * x[i].abs().max(1.0);
        xp[i] = x[i] + step;
        let up = f(&xp);
        xp[i] = x[i] - step;
        let down = f(&xp);
        xp[i] = x[i];
        g[i] = (up - down) / (2.0 * step);
    }
    g
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Random statistic consistent with an occupancy law over the grid: a few
/// empty cells, RSSI sums from a noisy path-loss map, squares dominating the
/// implied second moment.
pub fn random_stats(rng: &mut ChaCha8Rng, grid: &GridMap, steps: f64) -> SufficientStats {
    let c = grid.len();
    let b = grid.ap_count();
    let mut occ: Vec<f64> = (0..c).map(|_| if rng.random::<f64>() < 0.2 { 0.0 } else { rng.random::<f64>() }).collect();
    occ[0] += 0.1;
    occ[c - 1] += 0.1;
    let total: f64 = occ.iter().sum();
    occ.iter_mut().for_each(|v| *v /= total);
    let mut rssi = ApField::zeros(b, c);
    let mut squares = vec![0.0; b];
    for j in 0..b {
        let c1 = rng.random_range(-40.0..-15.0);
        let c2 = rng.random_range(-25.0..-8.0);
        for x in 0..c {
            let mean = c1 + c2 * grid.ap_distance(x, j).ln() + rng.random_range(-5.0..5.0);
            rssi.set(j, x, occ[x] * mean);
            squares[j] += occ[x] * (mean * mean + rng.random_range(5.0..30.0));
        }
    }
    SufficientStats::new(occ, rssi, squares, steps).unwrap()
}
