mod common;

use nalgebra::DVector;
use proptest::prelude::*;

use safe_mppi::barrier::{embed, BarrierSpec, Obstacle, ObstacleField};
use safe_mppi::cost::CostSpec;
use safe_mppi::dynamics::ModelSpec;
use safe_mppi::femonitor::free_energy_mc;
use safe_mppi::harness::{run_monte_carlo, ControllerId, Scenario, TrialSetup};
use safe_mppi::sampler::{bas_mppi_batch, blend_cost, mppi_weights, SamplerSpec};

fn costs() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..1e4f64, 1..200)
}

fn argmax(w: &[f64]) -> usize {
    w.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if *v > acc.1 { (i, *v) } else { acc })
        .0
}

proptest! {
    #[test]
    fn weights_are_normalized(s in costs(), lambda in 1e-3..1e3f64) {
        let w = mppi_weights(&s, lambda);
        prop_assert!(w.iter().all(|v| *v >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn weights_ignore_a_cost_baseline(s in costs(), lambda in 1e-2..1e2f64, c in -1e3..1e3f64) {
        let w = mppi_weights(&s, lambda);
        let shifted: Vec<f64> = s.iter().map(|v| v + c).collect();
        let ws = mppi_weights(&shifted, lambda);
        prop_assert_eq!(argmax(&w), argmax(&ws));
        for (a, b) in w.iter().zip(&ws) {
            prop_assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn free_energy_shifts_with_the_costs(s in costs(), lambda in 1e-2..1e2f64, c in -1e3..1e3f64) {
        let shifted: Vec<f64> = s.iter().map(|v| v + c).collect();
        let f = free_energy_mc(&s, lambda);
        let fs = free_energy_mc(&shifted, lambda);
        prop_assert!((fs - (f + c)).abs() <= 1e-9 * (1.0 + f.abs() + c.abs()));
    }

    #[test]
    fn free_energy_lambda_limits(s in prop::collection::vec(1.0..100.0f64, 2..50)) {
        let min = s.iter().copied().fold(f64::INFINITY, f64::min);
        let mean = s.iter().sum::<f64>() / s.len() as f64;
        let small = free_energy_mc(&s, 1e-4);
        let large = free_energy_mc(&s, 1e4);
        prop_assert!((small - min).abs() <= 0.01 * min);
        prop_assert!((large - mean).abs() <= 0.01 * mean);
    }

    #[test]
    fn blend_case_split(s in -1e3..1e3f64, s_hat in -1e3..1e3f64, alpha in -1e3..1e3f64) {
        let b = blend_cost(s, s_hat, alpha);
        let expected = if s_hat.min(alpha) <= s {
            s
        } else if s_hat <= alpha {
            0.5 * (s + s_hat)
        } else {
            0.5 * (s + alpha)
        };
        prop_assert_eq!(b, expected);
        prop_assert!(b >= s);
    }

    #[test]
    fn clamp_is_idempotent(u in prop::collection::vec(-1e3..1e3f64, 2), limit in 0.1..50.0f64) {
        let model = ModelSpec::single_integrator(0.05, limit);
        let once = model.clamp_control(&DVector::from_vec(u));
        let twice = model.clamp_control(&once);
        prop_assert_eq!(&once, &twice);
        prop_assert!(once.iter().all(|v| v.abs() <= limit));
    }
}

#[test]
fn finite_barrier_state_implies_safe_position() {
    let (finite, unsafe_) = common::finite_beta_rollouts(1000, 3);
    assert!(finite > 1000);
    assert_eq!(unsafe_, 0);
}

#[test]
fn sample_costs_do_not_depend_on_worker_count() {
    let field = ObstacleField::new(vec![Obstacle::new(1.0, 0.1, 0.4)]);
    let emb = embed(&ModelSpec::single_integrator(0.05, 5.0), &field, &BarrierSpec::default());
    let cost = CostSpec::planar(2, &[2.0, 0.0], 1.0, 1.0, 10.0, 1e6);
    let spec = SamplerSpec {
        n_samples: 64,
        horizon: 20,
        ..SamplerSpec::default()
    };
    let x0 = DVector::from_vec(vec![0.0, 0.0]);
    let controls = vec![DVector::from_vec(vec![1.0, 0.0]); 20];
    let run = |threads| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| bas_mppi_batch(&emb, &cost, &spec, &x0, &controls, 9).unwrap())
    };
    let (a, b) = (run(1), run(4));
    assert_eq!(a.noise, b.noise);
    assert_eq!(a.s_nom, b.s_nom);
}

#[test]
fn monte_carlo_is_bit_identical_across_worker_counts() {
    let mut cfg = common::small_config();
    cfg.model = cfg.model.with_disturbance(safe_mppi::dynamics::DisturbanceSpec::gaussian(4.0));
    let scenario = Scenario::from_config(&cfg).unwrap();
    let setup = TrialSetup::new(&cfg, &scenario, 4.0);
    for id in [ControllerId::BasMppi, ControllerId::SaRmppi] {
        let one = run_monte_carlo(&setup, id, &scenario.seeds, Some(1)).unwrap();
        let four = run_monte_carlo(&setup, id, &scenario.seeds, Some(4)).unwrap();
        for (a, b) in one.iter().zip(&four) {
            assert_eq!(a.safe, b.safe);
            assert_eq!(a.steps, b.steps);
            let xa: Vec<u64> = a.rows.iter().flat_map(|r| r.x.iter().map(|v| v.to_bits())).collect();
            let xb: Vec<u64> = b.rows.iter().flat_map(|r| r.x.iter().map(|v| v.to_bits())).collect();
            assert_eq!(xa, xb);
        }
    }
}
