#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use safe_mppi::barrier::{embed, Aggregation, BarrierSpec, Obstacle, ObstacleField};
use safe_mppi::dynamics::ModelSpec;
use safe_mppi::harness::Config;
use safe_mppi::trajopt::{ilqg_solve, IlqgOptions, LinearSystem, QuadraticObjective};

/// A small field and short horizons, quick enough for debug-profile tests.
pub fn small_config() -> Config {
    let mut cfg = Config::default();
    cfg.scenario.arena = [12.0, 12.0];
    cfg.scenario.start = [1.0, 1.0];
    cfg.scenario.goal = [11.0, 11.0];
    cfg.scenario.n_obstacles = 3;
    cfg.scenario.radius_range = [0.5, 1.0];
    cfg.scenario.clearance = 1.0;
    cfg.scenario.max_steps = Some(40);
    cfg.sampler.n_samples = 24;
    cfg.sampler.horizon = 15;
    cfg.sampler.monitor.n_boot = 40;
    cfg.sampler.monitor.n_probe = 2;
    cfg.trajopt.ilqg.max_iters = 20;
    cfg.run.trials = 3;
    cfg
}

fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

fn spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let l = randn(rng, n, n);
    &l * l.transpose() + DMatrix::identity(n, n) * 0.1
}

/// Finite-horizon discrete Riccati gains for `Σ xᵀQx + uᵀRu + x_TᵀQ_f x_T`,
/// as `u = K x`.
pub fn riccati_gains(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    qf: &DMatrix<f64>,
    horizon: usize,
) -> Vec<DMatrix<f64>> {
    let mut p = qf.clone();
    let mut gains = vec![DMatrix::zeros(b.ncols(), a.nrows()); horizon];
    for k in (0..horizon).rev() {
        let btp = b.transpose() * &p;
        let s = r + &btp * b;
        let k_gain = -s.lu().solve(&(&btp * a)).unwrap();
        p = q + a.transpose() * &p * a + a.transpose() * &p * b * &k_gain;
        p = 0.5 * (&p + p.transpose());
        gains[k] = k_gain;
    }
    gains
}

/// Largest relative gain error of iLQG against the Riccati recursion over
/// `instances` random LQR problems.
pub fn riccati_max_rel_err(instances: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = IlqgOptions {
        gain_clip: f64::INFINITY,
        ..IlqgOptions::default()
    };
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let n = rng.random_range(2..=4);
        let m = rng.random_range(1..=2);
        let horizon = rng.random_range(5..=25);
        let a = DMatrix::identity(n, n) + randn(&mut rng, n, n) * 0.2;
        let b = randn(&mut rng, n, m) * 0.5;
        let obj = QuadraticObjective {
            q: spd(&mut rng, n),
            r: spd(&mut rng, m),
            qf: spd(&mut rng, n),
        };
        let x0 = DVector::from_fn(n, |_, _| rng.sample(StandardNormal));
        let sys = LinearSystem { a: a.clone(), b: b.clone() };
        let sol = ilqg_solve(&sys, &obj, &x0, &vec![DVector::zeros(m); horizon], &opts).unwrap();
        let expected = riccati_gains(&a, &b, &obj.q, &obj.r, &obj.qf, horizon);
        for (got, want) in sol.gains.iter().zip(&expected) {
            worst = worst.max((got - want).norm() / want.norm().max(1e-12));
        }
    }
    worst
}

/// Largest relative error of the embedded-model Jacobians against central
/// differences, at `points` random states per aggregation whose current and
/// next positions keep `h ≥ 0.5`.
pub fn jacobian_max_rel_err(points: usize, seed: u64) -> f64 {
    let field = ObstacleField::new(vec![
        Obstacle::new(2.0, 2.0, 1.0),
        Obstacle::new(5.0, 1.0, 0.7),
        Obstacle::new(3.5, 4.5, 1.2),
    ]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for aggregation in [Aggregation::SingleSummed, Aggregation::Vector] {
        let barrier = BarrierSpec {
            aggregation,
            ..BarrierSpec::default()
        };
        let emb = embed(&ModelSpec::single_integrator(0.05, 5.0), &field, &barrier);
        let mut checked = 0;
        while checked < points {
            let x = DVector::from_fn(2, |_, _| rng.random_range(-1.0..7.0));
            let u = DVector::from_fn(2, |_, _| rng.random_range(-5.0..5.0));
            let next = emb.model.step(&x, &u, None).unwrap();
            if field.min_h(x.as_slice()) < 0.5 || field.min_h(next.as_slice()) < 0.5 {
                continue;
            }
            let xbar = emb.augment(&x).unwrap();
            let (a, b) = emb.jacobians(&xbar, &u).unwrap();
            let (a_fd, b_fd) = emb.jacobians_fd(&xbar, &u, 1e-6).unwrap();
            for (exact, fd) in [(&a, &a_fd), (&b, &b_fd)] {
                worst = worst.max((exact - fd).norm() / exact.norm().max(1e-12));
            }
            checked += 1;
        }
    }
    worst
}

/// Counts `(states with finite β, of which unsafe)` over `rollouts` random
/// 30-step rollouts among three obstacles.
pub fn finite_beta_rollouts(rollouts: usize, seed: u64) -> (usize, usize) {
    let field = ObstacleField::new(vec![
        Obstacle::new(1.0, 0.0, 0.6),
        Obstacle::new(0.0, 1.2, 0.5),
        Obstacle::new(-1.0, -0.5, 0.4),
    ]);
    let emb = embed(&ModelSpec::single_integrator(0.05, 5.0), &field, &BarrierSpec::default());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut finite, mut unsafe_) = (0, 0);
    for _ in 0..rollouts {
        let mut x = DVector::from_vec(vec![0.0, 0.0]);
        for _ in 0..30 {
            let u = DVector::from_fn(2, |_, _| rng.random_range(-5.0..5.0));
            x = emb.model.step(&x, &u, None).unwrap();
            if let Ok(beta) = emb.beta(x.as_slice()) {
                if beta.iter().all(|b| b.is_finite() && *b < emb.barrier.cap) {
                    finite += 1;
                    if field.min_h(x.as_slice()) <= 0.0 {
                        unsafe_ += 1;
                    }
                }
            }
        }
    }
    (finite, unsafe_)
}
