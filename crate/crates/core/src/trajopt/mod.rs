//! iLQG over plain or barrier-embedded dynamics, the augmented-Lagrangian
//! outer loop, and the time-varying linear feedback built from a solution.

mod al;
mod ilqg;
mod policy;

pub use al::{al_outer_loop, AlObjective, AlOptions, AlResult, AlState};
pub use ilqg::{ilqg_solve, IlqgOptions};
pub use policy::{feedback_policy, LinearFeedback};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::barrier::EmbeddedModel;
use crate::cost::CostSpec;
use crate::dynamics::ModelSpec;
use crate::error::Result;

/// Trajectory-optimization settings shared by the iLQG-based controllers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajOptSpec {
    /// Weight of `uᵀu` in the iLQG objective.
    pub control_weight: f64,
    /// iLQG iterations spent on the warm-started re-solve each MPC step.
    pub resolve_iters: usize,
    /// Feed back on the physical error only, dropping the barrier columns.
    pub physical_only: bool,
    pub ilqg: IlqgOptions,
    pub al: AlOptions,
}

impl Default for TrajOptSpec {
    fn default() -> Self {
        Self {
            control_weight: 0.01,
            resolve_iters: 5,
            physical_only: false,
            ilqg: IlqgOptions::default(),
            al: AlOptions::default(),
        }
    }
}

/// Discrete dynamics `x' = f(k, x, u)` with first derivatives.
pub trait Dynamics {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn step(&self, k: usize, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>>;
    fn jacobians(&self, k: usize, x: &DVector<f64>, u: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)>;
}

/// Second-order expansion of a running cost.
pub struct Expansion {
    pub lx: DVector<f64>,
    pub lu: DVector<f64>,
    pub lxx: DMatrix<f64>,
    pub luu: DMatrix<f64>,
    pub lux: DMatrix<f64>,
}

pub trait Objective {
    fn running(&self, k: usize, x: &DVector<f64>, u: &DVector<f64>) -> f64;
    fn running_expansion(&self, k: usize, x: &DVector<f64>, u: &DVector<f64>) -> Expansion;
    fn terminal(&self, x: &DVector<f64>) -> f64;
    fn terminal_expansion(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>);
}

impl Dynamics for EmbeddedModel {
    fn state_dim(&self) -> usize {
        self.n_aug()
    }

    fn control_dim(&self) -> usize {
        self.m()
    }

    fn step(&self, _k: usize, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        EmbeddedModel::step(self, x, u)
    }

    fn jacobians(&self, _k: usize, x: &DVector<f64>, u: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        EmbeddedModel::jacobians(self, x, u)
    }
}

impl Dynamics for ModelSpec {
    fn state_dim(&self) -> usize {
        self.n()
    }

    fn control_dim(&self) -> usize {
        self.m()
    }

    fn step(&self, _k: usize, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        ModelSpec::step(self, x, u, None)
    }

    fn jacobians(&self, _k: usize, _x: &DVector<f64>, _u: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        Ok(ModelSpec::jacobians(self))
    }
}

/// Time-invariant `x' = A x + B u`.
#[derive(Clone, Debug)]
pub struct LinearSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl Dynamics for LinearSystem {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn control_dim(&self) -> usize {
        self.b.ncols()
    }

    fn step(&self, _k: usize, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.a * x + &self.b * u)
    }

    fn jacobians(&self, _k: usize, _x: &DVector<f64>, _u: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        Ok((self.a.clone(), self.b.clone()))
    }
}

/// `xᵀQx + uᵀRu` running, `xᵀQ_f x` terminal.
#[derive(Clone, Debug)]
pub struct QuadraticObjective {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub qf: DMatrix<f64>,
}

impl Objective for QuadraticObjective {
    fn running(&self, _k: usize, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        (x.transpose() * &self.q * x)[0] + (u.transpose() * &self.r * u)[0]
    }

    fn running_expansion(&self, _k: usize, x: &DVector<f64>, u: &DVector<f64>) -> Expansion {
        Expansion {
            lx: 2.0 * &self.q * x,
            lu: 2.0 * &self.r * u,
            lxx: 2.0 * &self.q,
            luu: 2.0 * &self.r,
            lux: DMatrix::zeros(u.len(), x.len()),
        }
    }

    fn terminal(&self, x: &DVector<f64>) -> f64 {
        (x.transpose() * &self.qf * x)[0]
    }

    fn terminal_expansion(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        (2.0 * &self.qf * x, 2.0 * &self.qf)
    }
}

/// Goal or reference tracking on `[x, β]` plus `uᵀRu`. Crash indicators are
/// left out; the barrier state carries the constraint.
#[derive(Clone, Debug)]
pub struct StateCostObjective {
    pub cost: CostSpec,
    pub control_weight: DMatrix<f64>,
    pub n_beta: usize,
}

impl StateCostObjective {
    pub fn new(cost: &CostSpec, control_weight: f64, m: usize, n_beta: usize) -> Self {
        Self {
            cost: cost.clone(),
            control_weight: DMatrix::identity(m, m) * control_weight,
            n_beta,
        }
    }

    fn split<'a>(&self, x: &'a DVector<f64>) -> (&'a [f64], &'a [f64]) {
        x.as_slice().split_at(self.cost.n())
    }

    fn expansion_with(&self, w: &DMatrix<f64>, target: &[f64], x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.cost.n();
        let na = n + self.n_beta;
        let mut lx = DVector::zeros(na);
        let mut lxx = DMatrix::zeros(na, na);
        let e = DVector::from_fn(n, |i, _| x[i] - target[i]);
        let sym = w + w.transpose();
        lx.rows_mut(0, n).copy_from(&(&sym * e));
        lxx.view_mut((0, 0), (n, n)).copy_from(&sym);
        for j in 0..self.n_beta {
            lx[n + j] = 2.0 * self.cost.q_beta * x[n + j];
            lxx[(n + j, n + j)] = 2.0 * self.cost.q_beta;
        }
        (lx, lxx)
    }
}

impl Objective for StateCostObjective {
    fn running(&self, k: usize, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let (xs, beta) = self.split(x);
        self.cost.running_cost(k, xs, beta, true) + (u.transpose() * &self.control_weight * u)[0]
    }

    fn running_expansion(&self, k: usize, x: &DVector<f64>, u: &DVector<f64>) -> Expansion {
        let (lx, lxx) = self.expansion_with(&self.cost.q, self.cost.target(k), x);
        Expansion {
            lx,
            lu: 2.0 * &self.control_weight * u,
            lxx,
            luu: 2.0 * &self.control_weight,
            lux: DMatrix::zeros(u.len(), x.len()),
        }
    }

    fn terminal(&self, x: &DVector<f64>) -> f64 {
        let (xs, beta) = self.split(x);
        self.cost.terminal_cost(xs, beta, true)
    }

    fn terminal_expansion(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let target: Vec<f64> = match &self.cost.reference {
            Some(r) if !r.is_empty() => r[r.len() - 1].clone(),
            _ => self.cost.goal.clone(),
        };
        self.expansion_with(&self.cost.phi_weight, &target, x)
    }
}

/// Nominal trajectory, controls and time-indexed gains from iLQG.
#[derive(Clone, Debug)]
pub struct TrajOptSolution {
    /// `T + 1` (augmented) states.
    pub states: Vec<DVector<f64>>,
    /// `T` open-loop controls.
    pub controls: Vec<DVector<f64>>,
    /// `T` gains, each `m × state_dim`, linearized about `states`/`controls`.
    pub gains: Vec<DMatrix<f64>>,
    pub converged: bool,
    pub final_cost: f64,
    pub iterations: usize,
    /// Total cost after the initial rollout and each accepted iteration.
    pub cost_history: Vec<f64>,
}

impl TrajOptSolution {
    pub fn horizon(&self) -> usize {
        self.controls.len()
    }
}
