//! Tracking an unsafe reference through one obstacle under control noise.

use nalgebra::DVector;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ControllerId, TrackingSpec};
use crate::barrier::{embed, BarrierSpec, EmbeddedModel, ObstacleField};
use crate::cbf;
use crate::cost::CostSpec;
use crate::dynamics::{Control, ModelSpec, State};
use crate::error::{Error, Result};
use crate::rng::{stream, Domain};
use crate::trajopt::{al_outer_loop, ilqg_solve, StateCostObjective, TrajOptSolution, TrajOptSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackingSummary {
    pub controller: ControllerId,
    pub trials: usize,
    pub violation_pct: f64,
    pub reach_pct: f64,
    /// Unsafe or unreached.
    pub failure_pct: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackingRun {
    pub safe: bool,
    pub reached: bool,
    pub final_error: f64,
    pub states: Vec<State>,
}

/// A tracking plan and the feedback law around it.
#[derive(Clone, Debug)]
pub struct TrackingPolicy {
    pub controller: ControllerId,
    pub model: ModelSpec,
    pub field: ObstacleField,
    pub plan: TrajOptSolution,
    /// Set when the plan lives on the embedded model.
    pub embedding: Option<EmbeddedModel>,
    pub cbf: Option<cbf::CbfSpec>,
}

impl TrackingPolicy {
    /// Past the plan horizon the law holds the final plan state with the
    /// last gain.
    pub fn control(&self, k: usize, x: &State) -> Result<Control> {
        let horizon = self.plan.controls.len();
        let xbar = match &self.embedding {
            Some(e) => e.augment_capped(x),
            None => x.clone(),
        };
        let u = if k < horizon {
            &self.plan.controls[k] + &self.plan.gains[k] * (xbar - &self.plan.states[k])
        } else {
            &self.plan.gains[horizon - 1] * (xbar - &self.plan.states[horizon])
        };
        let u = self.model.clamp_control(&u);
        match &self.cbf {
            Some(spec) => Ok(cbf::filter(spec, &self.model, &self.field, x, &u)?.control),
            None => Ok(u),
        }
    }

    /// Positions of the noise-free plan.
    pub fn nominal_path(&self) -> Vec<[f64; 2]> {
        self.plan.states.iter().map(|x| [x[0], x[1]]).collect()
    }
}

pub fn reference(spec: &TrackingSpec) -> Vec<Vec<f64>> {
    (0..=spec.steps)
        .map(|k| {
            let t = k as f64 / spec.steps as f64;
            (0..2).map(|i| spec.start[i] + t * (spec.goal[i] - spec.start[i])).collect()
        })
        .collect()
}

pub fn tracking_model(spec: &TrackingSpec) -> ModelSpec {
    ModelSpec::single_integrator(spec.dt, spec.u_limit)
}

fn tracking_cost(spec: &TrackingSpec) -> CostSpec {
    let mut cost = CostSpec::planar(2, &spec.goal, spec.q, spec.q_beta, spec.phi, 1e6);
    cost.reference = Some(reference(spec));
    cost
}

pub fn tracking_policy(
    spec: &TrackingSpec,
    id: ControllerId,
    barrier: &BarrierSpec,
    trajopt: &TrajOptSpec,
) -> Result<TrackingPolicy> {
    let model = tracking_model(spec);
    let field = ObstacleField::new(vec![spec.obstacle]);
    let cost = tracking_cost(spec);
    let x0 = DVector::from_column_slice(&spec.start);
    let zeros = vec![Control::zeros(2); spec.steps];
    let mut opts = trajopt.ilqg.clone();
    opts.control_bounds = Some((model.u_min.clone(), model.u_max.clone()));
    let plain_objective = StateCostObjective::new(&cost, spec.control_weight, 2, 0);
    let policy = |plan, embedding, cbf| TrackingPolicy {
        controller: id,
        model: model.clone(),
        field: field.clone(),
        plan,
        embedding,
        cbf,
    };
    match id {
        ControllerId::BasIlqg => {
            let emb = embed(&model, &field, barrier);
            let objective = StateCostObjective::new(&cost, spec.control_weight, 2, emb.n_beta());
            let plan = ilqg_solve(&emb, &objective, &emb.augment(&x0)?, &zeros, &opts)?;
            Ok(policy(plan, Some(emb), None))
        }
        ControllerId::AlIlqg => {
            let mut al = trajopt.al.clone();
            al.inner = opts;
            let res = al_outer_loop(&model, &plain_objective, &field, &x0, &zeros, &al)?;
            Ok(policy(res.solution, None, None))
        }
        ControllerId::CbfFilter => {
            let plan = ilqg_solve(&model, &plain_objective, &x0, &zeros, &opts)?;
            Ok(policy(plan, None, Some(spec.cbf.clone())))
        }
        other => Err(Error::InvalidConfig(format!("{other} is not a tracking controller"))),
    }
}

/// One noisy closed-loop rollout, `u_k = sat(π_k(x_k) + ε_k)`, over the
/// reference and the hold phase.
pub fn tracking_run(spec: &TrackingSpec, policy: &TrackingPolicy, trial: u64, keep_states: bool) -> Result<TrackingRun> {
    let mut rng = stream(spec.seed, Domain::Tracking, trial, 0);
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let model = &policy.model;
    let mut x = DVector::from_column_slice(&spec.start);
    let mut states = vec![x.clone()];
    let mut safe = policy.field.is_safe(x.as_slice());
    for k in 0..spec.steps + spec.hold_steps {
        if !safe {
            break;
        }
        let mut u = policy.control(k, &x)?;
        for v in u.iter_mut() {
            *v += noise.sample(&mut rng);
        }
        x = model.step(&x, &model.clamp_control(&u), None)?;
        safe = policy.field.is_safe(x.as_slice());
        if keep_states {
            states.push(x.clone());
        }
    }
    let final_error = ((x[0] - spec.goal[0]).powi(2) + (x[1] - spec.goal[1]).powi(2)).sqrt();
    Ok(TrackingRun {
        safe,
        reached: safe && final_error < spec.reach_radius,
        final_error,
        states: if keep_states { states } else { vec![x] },
    })
}

pub fn tracking_comparison(
    spec: &TrackingSpec,
    id: ControllerId,
    barrier: &BarrierSpec,
    trajopt: &TrajOptSpec,
) -> Result<TrackingSummary> {
    let policy = tracking_policy(spec, id, barrier, trajopt)?;
    let runs: Vec<TrackingRun> = (0..spec.trials as u64)
        .into_par_iter()
        .map(|t| tracking_run(spec, &policy, t, false))
        .collect::<Result<_>>()?;
    Ok(summarize_tracking(id, &runs))
}

pub fn summarize_tracking(id: ControllerId, runs: &[TrackingRun]) -> TrackingSummary {
    let n = runs.len().max(1) as f64;
    let unsafe_ = runs.iter().filter(|r| !r.safe).count() as f64;
    let reached = runs.iter().filter(|r| r.reached).count() as f64;
    TrackingSummary {
        controller: id,
        trials: runs.len(),
        violation_pct: 100.0 * unsafe_ / n,
        reach_pct: 100.0 * reached / n,
        failure_pct: 100.0 * (n - reached) / n,
    }
}
