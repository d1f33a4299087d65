mod common;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rssi_slam_core::*;

fn run_exact(kernel: &TransitionKernel, theta: &Theta, records: &[ObservationRecord]) -> Vec<Vec<f64>> {
    let c = kernel.len();
    run_exact_from(kernel, &vec![1.0 / c as f64; c], theta, records)
}

fn run_exact_from(kernel: &TransitionKernel, nu: &[f64], theta: &Theta, records: &[ObservationRecord]) -> Vec<Vec<f64>> {
    let mut f = ExactFilter::init(nu, theta, &records[0]).unwrap();
    let mut out = vec![f.phi().to_vec()];
    for r in &records[1..] {
        f.step(kernel, theta, r).unwrap();
        out.push(f.phi().to_vec());
    }
    out
}

#[test]
fn exact_filter_matches_path_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for _ in 0..10 {
        let a = 0.5 + 3.0 * rand::Rng::random::<f64>(&mut rng);
        let (g, q, theta, recs) = common::random_instance(&mut rng, 2, 2, 2, a, 6);
        let phis = run_exact(&q, &theta, &recs);
        // The occupancy part of the smoothed statistic at n = t, restricted to
        // the last step, is the filter. Enumerate over prefixes.
        for t in 1..=6 {
            let smoothed = common::enumerate_smoothed(&g, a, &theta, &recs[..t]);
            let reference = common::forward_filter(&g, a, &theta, &recs[..t]);
            for x in 0..4 {
                assert!((phis[t - 1][x] - reference[t - 1][x]).abs() < 1e-10);
            }
            let occ: f64 = smoothed[..4].iter().sum();
            assert!((occ - 1.0).abs() < 1e-12);
        }
        // Marginal of the last state from the enumeration.
        let last = last_state_marginal(&g, a, &theta, &recs);
        for x in 0..4 {
            assert!((phis[5][x] - last[x]).abs() < 1e-10, "{} vs {}", phis[5][x], last[x]);
        }
    }
}

fn last_state_marginal(g: &GridMap, a: f64, theta: &Theta, recs: &[ObservationRecord]) -> Vec<f64> {
    let c = g.len();
    let n = recs.len();
    let q = common::kernel_matrix(g, a);
    let mut mass = vec![0.0; c];
    let mut logs = Vec::new();
    let mut lasts = Vec::new();
    for code in 0..c.pow(n as u32) {
        let mut k = code;
        let path: Vec<usize> = (0..n)
            .map(|_| {
                let v = k % c;
                k /= c;
                v
            })
            .collect();
        let mut lw = common::log_gaussian(theta, path[0], &recs[0].y);
        for t in 1..n {
            lw += q[path[t - 1]][path[t]].ln() + common::log_gaussian(theta, path[t], &recs[t].y);
        }
        logs.push(lw);
        lasts.push(path[n - 1]);
    }
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for (l, &x) in logs.iter().zip(&lasts) {
        mass[x] += (l - m).exp();
    }
    let z: f64 = mass.iter().sum();
    mass.into_iter().map(|v| v / z).collect()
}

#[test]
fn flat_likelihood_converges_to_stationary_law() {
    let g = GridMap::new(3, 2, vec![Point::new(0.5, 0.5)]).unwrap();
    let q = TransitionKernel::build(&g, 1.5).unwrap();
    let theta = Theta::uniform(&g, -30.0, -20.0, 10.0).unwrap();
    let hidden = |t| ObservationRecord { t, y: vec![f64::NAN], mask: ApMask::empty(1), truth: None };
    let mut nu = vec![0.0; 6];
    nu[0] = 1.0;
    let mut f = ExactFilter::init(&nu, &theta, &hidden(1)).unwrap();
    for t in 2..=1000 {
        f.step(&q, &theta, &hidden(t)).unwrap();
    }
    // Power iteration on the kernel as reference.
    let mut pi = vec![1.0 / 6.0; 6];
    for _ in 0..5000 {
        pi = q.predict(&pi);
    }
    for x in 0..6 {
        assert!((f.phi()[x] - pi[x]).abs() < 1e-8);
    }
}

/// Mean and standard deviation over runs, per step.
fn mean_sd(samples: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let runs = samples.len() as f64;
    let steps = samples[0].len();
    let mean: Vec<f64> = (0..steps).map(|t| samples.iter().map(|s| s[t]).sum::<f64>() / runs).collect();
    let sd: Vec<f64> = (0..steps)
        .map(|t| (samples.iter().map(|s| (s[t] - mean[t]).powi(2)).sum::<f64>() / (runs - 1.0)).sqrt())
        .collect();
    (mean, sd)
}

#[test]
fn particle_filter_mean_tracks_exact_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (g, q, theta, recs) = common::random_instance(&mut rng, 3, 3, 2, 2.0, 30);
    // Particles start uniform and move once before the first weighting.
    let qm = common::kernel_matrix(&g, 2.0);
    let nu: Vec<f64> = (0..9).map(|y| (0..9).map(|x| qm[x][y] / 9.0).sum()).collect();
    let exact = run_exact_from(&q, &nu, &theta, &recs);
    let exact_x: Vec<f64> = exact.iter().map(|phi| (0..9).map(|x| phi[x] * g.cell(x).x as f64).sum()).collect();
    let mut runs = Vec::new();
    for seed in 0..20u64 {
        let mut prng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let mut sys = ParticleSystem::uniform(10_000, 9, &mut prng).unwrap();
        let mut xs = Vec::new();
        for r in &recs {
            sys = bootstrap_filter_recursion(&sys, &q, &theta, r, Resampling::Multinomial, &mut prng);
            xs.push(sys.posterior_mean(&g).x);
        }
        runs.push(xs);
    }
    let (_, sd) = mean_sd(&runs);
    let mut inside = 0;
    let mut total = 0;
    for run in &runs {
        for t in 0..recs.len() {
            total += 1;
            if (run[t] - exact_x[t]).abs() <= 3.0 * sd[t] + 1e-12 {
                inside += 1;
            }
        }
    }
    assert!(inside as f64 >= 0.95 * total as f64, "{inside}/{total}");
}

#[test]
fn total_variation_shrinks_with_particle_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (g, q, theta, recs) = common::random_instance(&mut rng, 3, 3, 2, 2.0, 20);
    let qm = common::kernel_matrix(&g, 2.0);
    let nu: Vec<f64> = (0..9).map(|y| (0..9).map(|x| qm[x][y] / 9.0).sum()).collect();
    let exact = run_exact_from(&q, &nu, &theta, &recs);
    let mut avg_tv = Vec::new();
    for &n in &[100usize, 1000, 10_000] {
        let mut tv_sum = 0.0;
        for seed in 0..20u64 {
            let mut prng = ChaCha8Rng::seed_from_u64(seed);
            let mut sys = ParticleSystem::uniform(n, 9, &mut prng).unwrap();
            for (t, r) in recs.iter().enumerate() {
                sys = bootstrap_filter_recursion(&sys, &q, &theta, r, Resampling::Multinomial, &mut prng);
                let mut hist = [0.0; 9];
                for (&c, &w) in sys.cells().iter().zip(sys.weights()) {
                    hist[c] += w;
                }
                tv_sum += 0.5 * (0..9).map(|x| (hist[x] - exact[t][x]).abs()).sum::<f64>();
            }
        }
        avg_tv.push(tv_sum / 20.0);
    }
    assert!(avg_tv[0] > avg_tv[1] && avg_tv[1] > avg_tv[2], "{avg_tv:?}");
}

#[test]
fn single_particle_random_walk() {
    let g = GridMap::new(3, 3, vec![Point::new(1.5, 1.5)]).unwrap();
    let q = TransitionKernel::build(&g, 2.0).unwrap();
    let theta = Theta::uniform(&g, -30.0, -20.0, 10.0).unwrap();
    let mut a = ChaCha8Rng::seed_from_u64(1);
    let mut b = ChaCha8Rng::seed_from_u64(1);
    let mut sys = ParticleSystem::uniform(1, 9, &mut a).unwrap();
    let mut x = rand::Rng::random_range(&mut b, 0..9usize);
    for t in 1..50 {
        let r = ObservationRecord::full(t, vec![-50.0]);
        sys = bootstrap_filter_recursion(&sys, &q, &theta, &r, Resampling::Multinomial, &mut a);
        // Selection draw, then the move.
        let _: f64 = rand::Rng::random(&mut b);
        x = q.sample_next(x, &mut b);
        assert_eq!(sys.cells(), &[x]);
        assert_eq!(sys.weights(), &[1.0]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn exact_filter_ignores_constant_log_shift(seed in any::<u64>(), shift in -50.0f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (g, q, theta, recs) = common::random_instance(&mut rng, 3, 2, 2, 1.0, 5);
        let mut phi = vec![1.0 / g.len() as f64; g.len()];
        for r in &recs {
            let pred = q.predict(&phi);
            let ll = filter::log_likelihoods(&theta, r);
            let shifted: Vec<f64> = ll.iter().map(|v| v + shift).collect();
            let a = filter::exact::bayes_update(&pred, &ll, 0).unwrap();
            let b = filter::exact::bayes_update(&pred, &shifted, 0).unwrap();
            for (u, v) in a.iter().zip(&b) {
                prop_assert!((u - v).abs() < 1e-12);
            }
            let cubed: Vec<f64> = a.iter().map(|v| v * v * v).collect();
            prop_assert_eq!(filter::argmax_first(&a), filter::argmax_first(&cubed));
            phi = a;
        }
    }
}
