use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{ilqg_solve, Dynamics, Expansion, IlqgOptions, Objective, TrajOptSolution};
use crate::barrier::ObstacleField;
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlOptions {
    pub outer_iters: usize,
    pub mu_init: f64,
    pub mu_growth: f64,
    pub mu_max: f64,
    /// Stop once `max (margin − h) ≤ tol`.
    pub tol: f64,
    /// Constraint tightening: the penalized constraint is `h ≥ margin`.
    pub margin: f64,
    /// `μ` grows when the violation does not shrink below this fraction of
    /// its previous value.
    pub improve_ratio: f64,
    pub inner: IlqgOptions,
}

impl Default for AlOptions {
    fn default() -> Self {
        Self {
            outer_iters: 30,
            mu_init: 1.0,
            mu_growth: 10.0,
            mu_max: 1e8,
            tol: 1e-3,
            margin: 1e-2,
            improve_ratio: 0.25,
            inner: IlqgOptions::default(),
        }
    }
}

/// Multipliers per (step, constraint) and the shared penalty parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AlState {
    pub multipliers: Vec<Vec<f64>>,
    pub mu: f64,
    pub margin: f64,
}

impl AlState {
    pub fn new(horizon: usize, n_constraints: usize, mu: f64) -> Self {
        Self {
            multipliers: vec![vec![0.0; n_constraints]; horizon + 1],
            mu,
            margin: 0.0,
        }
    }

    /// `λ ← max(0, λ + μ h₀)` with `h₀ = margin − h` at each state.
    pub fn update_multipliers(&mut self, field: &ObstacleField, states: &[DVector<f64>]) {
        for (lam_k, x) in self.multipliers.iter_mut().zip(states) {
            for (lam, o) in lam_k.iter_mut().zip(&field.obstacles) {
                let h0 = self.margin - o.h(x.as_slice());
                *lam = (*lam + self.mu * h0).max(0.0);
            }
        }
    }
}

/// `f₀ + Σ (μ/2) ‖h₀ + λ/μ‖₊²` over every state and obstacle.
pub struct AlObjective<'a, O> {
    pub base: &'a O,
    pub field: &'a ObstacleField,
    pub state: &'a AlState,
}

impl<O: Objective> AlObjective<'_, O> {
    fn penalty(&self, k: usize, x: &DVector<f64>) -> f64 {
        let mu = self.state.mu;
        self.field
            .obstacles
            .iter()
            .zip(&self.state.multipliers[k])
            .map(|(o, lam)| {
                let t = (self.state.margin - o.h(x.as_slice()) + lam / mu).max(0.0);
                0.5 * mu * t * t
            })
            .sum()
    }

    /// Gauss-Newton expansion of the penalty (position block only).
    fn add_penalty(&self, k: usize, x: &DVector<f64>, lx: &mut DVector<f64>, lxx: &mut DMatrix<f64>) {
        let mu = self.state.mu;
        for (o, lam) in self.field.obstacles.iter().zip(&self.state.multipliers[k]) {
            let t = self.state.margin - o.h(x.as_slice()) + lam / mu;
            if t <= 0.0 {
                continue;
            }
            let g = o.grad_h(x.as_slice());
            let dc = [-g[0], -g[1]];
            for i in 0..2 {
                lx[i] += mu * t * dc[i];
                for j in 0..2 {
                    lxx[(i, j)] += mu * dc[i] * dc[j];
                }
            }
        }
    }
}

impl<O: Objective> Objective for AlObjective<'_, O> {
    fn running(&self, k: usize, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        self.base.running(k, x, u) + self.penalty(k, x)
    }

    fn running_expansion(&self, k: usize, x: &DVector<f64>, u: &DVector<f64>) -> Expansion {
        let mut e = self.base.running_expansion(k, x, u);
        self.add_penalty(k, x, &mut e.lx, &mut e.lxx);
        e
    }

    fn terminal(&self, x: &DVector<f64>) -> f64 {
        let last = self.state.multipliers.len() - 1;
        self.base.terminal(x) + self.penalty(last, x)
    }

    fn terminal_expansion(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let last = self.state.multipliers.len() - 1;
        let (mut vx, mut vxx) = self.base.terminal_expansion(x);
        self.add_penalty(last, x, &mut vx, &mut vxx);
        (vx, vxx)
    }
}

#[derive(Clone, Debug)]
pub struct AlResult {
    pub solution: TrajOptSolution,
    pub state: AlState,
    /// `max_k max_i h₀(x_k)` after each outer iteration.
    pub violations: Vec<f64>,
    /// `μ` used by each outer iteration.
    pub mu_history: Vec<f64>,
}

pub fn max_violation(field: &ObstacleField, states: &[DVector<f64>]) -> f64 {
    states
        .iter()
        .map(|x| -field.min_h(x.as_slice()))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// PHR augmented-Lagrangian iLQG for `h₀ = −h ≤ 0` on a plain model.
pub fn al_outer_loop<D: Dynamics, O: Objective>(
    dyn_: &D,
    objective: &O,
    field: &ObstacleField,
    x0: &DVector<f64>,
    u_init: &[DVector<f64>],
    opts: &AlOptions,
) -> Result<AlResult> {
    let horizon = u_init.len();
    let mut state = AlState::new(horizon, field.len(), opts.mu_init);
    state.margin = opts.margin;
    let mut controls = u_init.to_vec();
    let mut violations = Vec::new();
    let mut mu_history = Vec::new();
    let mut prev_violation = f64::INFINITY;
    let mut solution = None;

    for _ in 0..opts.outer_iters.max(1) {
        mu_history.push(state.mu);
        let obj = AlObjective {
            base: objective,
            field,
            state: &state,
        };
        let sol = ilqg_solve(dyn_, &obj, x0, &controls, &opts.inner)?;
        let viol = max_violation(field, &sol.states);
        violations.push(viol);
        controls = sol.controls.clone();
        let done = viol + opts.margin <= opts.tol;
        let states = sol.states.clone();
        solution = Some(sol);
        if done {
            break;
        }
        state.update_multipliers(field, &states);
        let viol = viol + opts.margin;
        if viol.max(0.0) > opts.improve_ratio * prev_violation.max(0.0) {
            state.mu = (state.mu * opts.mu_growth).min(opts.mu_max);
        }
        prev_violation = viol;
    }

    Ok(AlResult {
        solution: solution.expect("at least one outer iteration"),
        state,
        violations,
        mu_history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::Obstacle;
    use crate::cost::CostSpec;
    use crate::dynamics::ModelSpec;
    use crate::trajopt::StateCostObjective;
    use nalgebra::dvector;

    #[test]
    fn multiplier_update_formula() {
        let field = ObstacleField::new(vec![Obstacle::new(0.0, 0.0, 1.0)]);
        let mut st = AlState::new(0, 1, 1.0);
        // h = 0.5 - 1 = -0.5 → h₀ = 0.5.
        st.update_multipliers(&field, &[dvector![0.5f64.sqrt(), 0.0]]);
        assert!((st.multipliers[0][0] - 0.5).abs() < 1e-12);
        // Inactive constraint keeps λ at zero.
        st.update_multipliers(&field, &[dvector![10.0, 0.0]]);
        assert!((st.multipliers[0][0] - 0.0).abs() < 1e-12);
    }

    #[test]
    fn inactive_constraint_matches_unconstrained() {
        let model = ModelSpec::single_integrator(0.05, 15.0);
        let field = ObstacleField::new(vec![Obstacle::new(0.0, 30.0, 1.0)]);
        let cost = CostSpec::planar(2, &[4.0, 0.0], 1.0, 0.0, 100.0, 1e9);
        let obj = StateCostObjective::new(&cost, 0.01, 2, 0);
        let x0 = dvector![0.0, 0.0];
        let u0 = vec![DVector::zeros(2); 40];
        let al = al_outer_loop(&model, &obj, &field, &x0, &u0, &AlOptions::default()).unwrap();
        let plain = ilqg_solve(&model, &obj, &x0, &u0, &IlqgOptions::default()).unwrap();
        assert!(al.state.multipliers.iter().flatten().all(|l| *l == 0.0));
        for (a, b) in al.solution.controls.iter().zip(&plain.controls) {
            assert!((a - b).norm() < 1e-9);
        }
    }
}
