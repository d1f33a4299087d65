mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rssi_slam_core::rho::BlockHistory;
use rssi_slam_core::*;

struct Setup {
    grid: GridMap,
    kernel: TransitionKernel,
    prior: PerturbationPrior,
    truth: Theta,
}

fn setup(seed: u64) -> Setup {
    let grid = GridMap::new(
        6,
        6,
        vec![Point::new(0.5, 0.5), Point::new(5.5, 0.5), Point::new(2.5, 4.5), Point::new(5.5, 5.5)],
    )
    .unwrap();
    let kernel = TransitionKernel::build(&grid, 3.0).unwrap();
    let prior = PerturbationPrior::shared(&grid, CovarianceKernel::new(10.0, 18.0).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = Theta::new(&grid, vec![-26.0; 4], vec![-17.5; 4], prior.sample(&mut rng), 25.0).unwrap();
    Setup { grid, kernel, prior, truth }
}

fn stream(s: &Setup, n: usize, vis: &Visibility, seed: u64) -> Vec<ObservationRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let path = simulate_trajectory(&InitialDistribution::Uniform, &s.kernel, n, &mut rng).unwrap();
    simulate_from_theta(&s.grid, &path, &s.truth, vis, &mut rng).unwrap()
}

fn theta0(s: &Setup) -> Theta {
    Theta::uniform(&s.grid, -10.0, -30.0, 30.0).unwrap()
}

fn config() -> BoemConfig {
    BoemConfig {
        particles: 20,
        schedule: BlockSchedule::new(5, 20).unwrap(),
        record_thetas: true,
        seed: 11,
        ..BoemConfig::default()
    }
}

#[test]
fn stabilizing_every_block_keeps_estimates_equal() {
    let s = setup(1);
    let recs = stream(&s, 300, &Visibility::Full, 2);
    let cfg = BoemConfig { stabilize_every: Some(1), ..config() };
    let trace = run_boem(&s.grid, &s.kernel, &s.prior, theta0(&s), cfg, &recs).unwrap();
    assert!(trace.blocks.len() > 3);
    for e in &trace.blocks {
        assert!(e.stabilized);
        assert_eq!(e.theta_hat, e.theta_tilde);
    }
    assert_eq!(trace.theta_hat, trace.theta_tilde);
}

#[test]
fn single_block_is_one_batch_em_step() {
    let s = setup(2);
    let recs = stream(&s, 80, &Visibility::Full, 3);
    let cfg = BoemConfig { schedule: BlockSchedule::new(0, 1000).unwrap(), ..config() };
    let trace = run_boem(&s.grid, &s.kernel, &s.prior, theta0(&s), cfg, &recs).unwrap();
    assert_eq!(trace.blocks.len(), 1);
    let e = &trace.blocks[0];
    assert!(e.truncated);
    assert_eq!((e.length, e.total, e.end_t), (80, 80, 80));

    // Replay the θ̂ filter on its own stream.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    rng.set_stream(1);
    let mut sys = ParticleSystem::uniform(20, 36, &mut rng).unwrap();
    let mut hist = BlockHistory::new();
    let th0 = theta0(&s);
    for r in &recs {
        sys = bootstrap_filter_recursion(&sys, &s.kernel, &th0, r, Resampling::Multinomial, &mut rng);
        hist.push(&sys, r);
    }
    let stats = hist.block_statistics(0, &s.kernel, 36).unwrap();
    let (batch, _) = m_step(&stats, 80.0, &th0, &s.grid, &s.prior, &MStepOptions::default()).unwrap();
    assert_eq!(trace.theta_hat, batch);
    // One block: the average is the block itself.
    assert_eq!(trace.theta_tilde, batch);
}

#[test]
fn forward_and_deferred_backends_agree() {
    let s = setup(3);
    let recs = stream(&s, 250, &Visibility::Full, 4);
    let a = run_boem(&s.grid, &s.kernel, &s.prior, theta0(&s), config(), &recs).unwrap();
    let cfg = BoemConfig { backend: RhoBackend::Forward, ..config() };
    let b = run_boem(&s.grid, &s.kernel, &s.prior, theta0(&s), cfg, &recs).unwrap();
    assert_eq!(a.hat, b.hat);
    assert_eq!(a.blocks.len(), b.blocks.len());
    let (x, y) = (common::flatten(&a.theta_tilde), common::flatten(&b.theta_tilde));
    for (u, v) in x.iter().zip(&y) {
        assert!((u - v).abs() < 1e-8 * v.abs().max(1.0), "{u} vs {v}");
    }
}

#[test]
fn block_bookkeeping_follows_schedule() {
    let s = setup(4);
    let recs = stream(&s, 300, &Visibility::Full, 5);
    let trace = run_boem(&s.grid, &s.kernel, &s.prior, theta0(&s), config(), &recs).unwrap();
    let sched = BlockSchedule::new(5, 20).unwrap();
    let mut total = 0;
    for (i, e) in trace.blocks.iter().enumerate() {
        let k = i as u64 + 1;
        assert_eq!(e.block, k);
        total += e.length;
        assert_eq!(e.total, total);
        assert_eq!(e.end_t, total);
        assert_eq!(e.stabilized, k % 5 == 0);
        if e.truncated {
            assert_eq!(i + 1, trace.blocks.len());
            assert!(e.length < sched.tau(k));
        } else {
            assert_eq!(e.length, sched.tau(k));
            assert_eq!(sched.cumulative(k), total);
        }
    }
    assert_eq!(total, 300);
    assert!(trace.blocks.last().unwrap().truncated);
    assert_eq!(trace.t, (1..=300).collect::<Vec<u64>>());
}

#[test]
fn runs_are_deterministic() {
    let s = setup(5);
    let recs = stream(&s, 200, &Visibility::Full, 6);
    let a = run_boem(&s.grid, &s.kernel, &s.prior, theta0(&s), config(), &recs).unwrap();
    let b = run_boem(&s.grid, &s.kernel, &s.prior, theta0(&s), config(), &recs).unwrap();
    assert_eq!(a.hat, b.hat);
    assert_eq!(a.tilde, b.tilde);
    assert_eq!(a.theta_hat, b.theta_hat);
    assert_eq!(a.theta_tilde, b.theta_tilde);
    let c = run_boem(&s.grid, &s.kernel, &s.prior, theta0(&s), BoemConfig { seed: 12, ..config() }, &recs).unwrap();
    assert_ne!(a.theta_hat, c.theta_hat);
}

#[test]
fn stabilization_changes_nothing_before_it_fires() {
    let s = setup(6);
    let recs = stream(&s, 400, &Visibility::Full, 7);
    let a = run_boem(&s.grid, &s.kernel, &s.prior, theta0(&s), config(), &recs).unwrap();
    let cfg = BoemConfig { stabilize_every: None, ..config() };
    let b = run_boem(&s.grid, &s.kernel, &s.prior, theta0(&s), cfg, &recs).unwrap();
    // Blocks 1..=5 end at t = 25, 55, 90, 130, 175.
    for i in 0..5 {
        assert_eq!(a.blocks[i].theta_tilde, b.blocks[i].theta_tilde);
    }
    for i in 0..4 {
        assert_eq!(a.blocks[i].theta_hat, b.blocks[i].theta_hat);
    }
    assert_ne!(a.blocks[4].theta_hat, b.blocks[4].theta_hat);
    assert_eq!(a.hat[..175], b.hat[..175]);
    assert!(b.blocks.iter().all(|e| !e.stabilized));
}

#[test]
fn per_ap_mode_reduces_to_full_mode() {
    let s = setup(7);
    let recs = stream(&s, 260, &Visibility::Full, 8);
    let a = run_boem(&s.grid, &s.kernel, &s.prior, theta0(&s), config(), &recs).unwrap();
    let b = run_boem_partial(&s.grid, &s.kernel, &s.prior, theta0(&s), config(), &recs).unwrap();
    assert_eq!(a.hat, b.hat);
    assert_eq!(a.tilde, b.tilde);
    assert_eq!(a.theta_hat, b.theta_hat);
    assert_eq!(a.theta_tilde, b.theta_tilde);
    assert_eq!(b.blocks.len(), 4 * a.blocks.len());
}

#[test]
fn hidden_access_point_is_never_updated() {
    let s = setup(8);
    let vis = Visibility::Bernoulli(vec![1.0, 0.7, 0.0, 0.9]);
    let recs = stream(&s, 300, &vis, 9);
    let th0 = theta0(&s);
    let cfg = BoemConfig { partial_sigma: PartialSigma::Known, ..config() };
    let trace = run_boem_partial(&s.grid, &s.kernel, &s.prior, th0.clone(), cfg, &recs).unwrap();
    assert_eq!(trace.never_observed, vec![2]);
    assert!(trace.blocks.iter().all(|e| e.aps != vec![2]));
    for th in [&trace.theta_hat, &trace.theta_tilde] {
        assert_eq!(th.maps().row(2), th0.maps().row(2));
        assert_eq!(th.c1()[2], -10.0);
        assert_ne!(th.maps().row(0), th0.maps().row(0));
        assert_eq!(th.sigma2(), 30.0);
    }
}

#[test]
fn full_mode_rejects_masked_records() {
    let s = setup(9);
    let recs = stream(&s, 20, &Visibility::Bernoulli(vec![0.5; 4]), 10);
    assert!(run_boem(&s.grid, &s.kernel, &s.prior, theta0(&s), config(), &recs).is_err());
    let mut r = BoemRunner::new(&s.grid, &s.kernel, &s.prior, theta0(&s), config(), Mode::Full).unwrap();
    let full = stream(&s, 2, &Visibility::Full, 10);
    r.step(&full[1]).unwrap();
    assert!(r.step(&full[0]).is_err());
    let cfg = BoemConfig { backend: RhoBackend::Forward, ..config() };
    assert!(BoemRunner::new(&s.grid, &s.kernel, &s.prior, theta0(&s), cfg, Mode::PerAp).is_err());
}

#[test]
fn half_visibility_halves_block_count() {
    let s = setup(10);
    let cfg = BoemConfig { schedule: BlockSchedule::new(0, 20).unwrap(), ..config() };
    let (mut full, mut half) = (0usize, 0usize);
    for seed in 0..10 {
        let vis = Visibility::Bernoulli(vec![1.0, 1.0, 0.5, 1.0]);
        let recs = stream(&s, 400, &vis, 100 + seed);
        let trace = run_boem_partial(&s.grid, &s.kernel, &s.prior, theta0(&s), cfg.clone(), &recs).unwrap();
        let count = |j: usize| trace.blocks.iter().filter(|e| e.aps == vec![j] && !e.truncated).count();
        full += count(0);
        half += count(2);
    }
    let ratio = half as f64 / full as f64;
    assert!((ratio - 0.5).abs() <= 0.1, "{ratio}");
}

#[test]
fn frozen_evaluation_scores_localization() {
    let g = GridMap::new(4, 4, vec![Point::new(0.5, 0.5), Point::new(3.5, 0.5), Point::new(1.5, 3.5)]).unwrap();
    let q = TransitionKernel::build(&g, 2.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let prior = PerturbationPrior::shared(&g, CovarianceKernel::new(10.0, 18.0).unwrap()).unwrap();
    let truth = Theta::new(&g, vec![-26.0; 3], vec![-17.5; 3], prior.sample(&mut rng), 0.01).unwrap();
    let path = simulate_trajectory(&InitialDistribution::Uniform, &q, 60, &mut rng).unwrap();
    let recs = simulate_from_theta(&g, &path, &truth, &Visibility::Full, &mut rng).unwrap();
    let eval = evaluate_frozen(&g, &q, &truth, &recs, 400, Resampling::Multinomial, 1, 0.8).unwrap();
    assert_eq!(eval.estimates, path);
    assert_eq!(eval.quantile, 0.0);

    let bad = Theta::uniform(&g, -10.0, -30.0, 0.01).unwrap();
    let worse = evaluate_frozen(&g, &q, &bad, &recs, 400, Resampling::Multinomial, 1, 0.8).unwrap();
    assert!(worse.quantile > 0.0);
    assert_eq!(worse.distances.len(), 60);

    let mut missing = recs.clone();
    missing[7].truth = None;
    assert!(evaluate_frozen(&g, &q, &truth, &missing, 400, Resampling::Multinomial, 1, 0.8).is_err());
}
