//! Discrete-time control barrier function safety filter.
//!
//! Solves `min ‖u − u_nom‖²` subject to the one-step decay condition
//! `h_i(F(x, u)) ≥ (1 − α) h_i(x)` for every obstacle and the control box.
//! Each condition is linearized in `u` about `u = 0`; for the single
//! integrator the dropped term is `dt²‖u‖² ≥ 0`, so the linearized halfspace
//! is inside the true feasible set.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::barrier::ObstacleField;
use crate::dynamics::{Control, ModelSpec, State};
use crate::error::{check_dim, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CbfSpec {
    /// Decay rate in `(0, 1]`.
    pub alpha_gain: f64,
}

impl Default for CbfSpec {
    fn default() -> Self {
        Self { alpha_gain: 0.2 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterOutput {
    pub control: Control,
    pub feasible: bool,
}

/// `a·u ≥ b`
#[derive(Clone, Copy, Debug)]
struct HalfSpace {
    a: Vector2<f64>,
    b: f64,
}

impl HalfSpace {
    fn slack(&self, u: &Vector2<f64>) -> f64 {
        self.a.dot(u) - self.b
    }
}

const FEAS_TOL: f64 = 1e-12;

fn constraints(spec: &CbfSpec, model: &ModelSpec, field: &ObstacleField, x: &[f64]) -> Vec<HalfSpace> {
    let mut free = vec![0.0; model.n()];
    model.step_into(x, &[0.0, 0.0], None, &mut free);
    let (_, fu) = model.jacobians();
    let mut out = Vec::with_capacity(field.len() + 4);
    for o in &field.obstacles {
        let g = o.grad_h(&free);
        let a = Vector2::new(
            g[0] * fu[(0, 0)] + g[1] * fu[(1, 0)],
            g[0] * fu[(0, 1)] + g[1] * fu[(1, 1)],
        );
        let b = (1.0 - spec.alpha_gain) * o.h(x) - o.h(&free);
        out.push(HalfSpace { a, b });
    }
    for j in 0..2 {
        let mut e = Vector2::zeros();
        e[j] = 1.0;
        out.push(HalfSpace { a: e, b: model.u_min[j] });
        out.push(HalfSpace { a: -e, b: -model.u_max[j] });
    }
    out
}

fn feasible(cons: &[HalfSpace], u: &Vector2<f64>) -> bool {
    cons.iter().all(|c| c.slack(u) >= -FEAS_TOL * (1.0 + c.b.abs()))
}

/// Exact projection onto the polygon `{u : A u ≥ b}` in the plane: the
/// minimizer is `u_nom`, a projection onto one edge, or a vertex.
fn project(cons: &[HalfSpace], u_nom: &Vector2<f64>) -> Option<Vector2<f64>> {
    if feasible(cons, u_nom) {
        return Some(*u_nom);
    }
    let mut best: Option<(f64, Vector2<f64>)> = None;
    let mut consider = |u: Vector2<f64>| {
        if feasible(cons, &u) {
            let d = (u - u_nom).norm_squared();
            if best.map_or(true, |(bd, _)| d < bd) {
                best = Some((d, u));
            }
        }
    };
    for c in cons {
        let nn = c.a.norm_squared();
        if nn == 0.0 {
            continue;
        }
        let s = c.slack(u_nom);
        if s < 0.0 {
            consider(u_nom - c.a * (s / nn));
        }
    }
    for (i, ci) in cons.iter().enumerate() {
        for cj in &cons[i + 1..] {
            let det = ci.a[0] * cj.a[1] - ci.a[1] * cj.a[0];
            if det.abs() < 1e-14 * ci.a.norm() * cj.a.norm() || det == 0.0 {
                continue;
            }
            let u = Vector2::new(
                (ci.b * cj.a[1] - cj.b * ci.a[1]) / det,
                (ci.a[0] * cj.b - cj.a[0] * ci.b) / det,
            );
            consider(u);
        }
    }
    best.map(|(_, u)| u)
}

/// Box-constrained minimizer of the summed squared (normalized) violation.
fn least_violating(cons: &[HalfSpace], model: &ModelSpec, start: &Vector2<f64>) -> Vector2<f64> {
    let normalized: Vec<HalfSpace> = cons[..cons.len() - 4]
        .iter()
        .filter_map(|c| {
            let n = c.a.norm();
            (n > 0.0).then(|| HalfSpace { a: c.a / n, b: c.b / n })
        })
        .collect();
    let mut u = *start;
    let boxed = |u: &mut Vector2<f64>| {
        for j in 0..2 {
            u[j] = u[j].clamp(model.u_min[j], model.u_max[j]);
        }
    };
    boxed(&mut u);
    let lip = normalized.len().max(1) as f64;
    for _ in 0..2000 {
        let mut grad = Vector2::zeros();
        for c in &normalized {
            let v = c.slack(&u);
            if v < 0.0 {
                grad += c.a * v;
            }
        }
        if grad.norm() < 1e-12 {
            break;
        }
        u -= grad / lip;
        boxed(&mut u);
    }
    u
}

pub fn filter(spec: &CbfSpec, model: &ModelSpec, field: &ObstacleField, x: &State, u_nom: &Control) -> Result<FilterOutput> {
    check_dim("state", model.n(), x.len())?;
    check_dim("control", model.m(), u_nom.len())?;
    if !(spec.alpha_gain > 0.0 && spec.alpha_gain <= 1.0) {
        return Err(Error::InvalidConfig("alpha_gain must lie in (0, 1]".into()));
    }
    let cons = constraints(spec, model, field, x.as_slice());
    let un = Vector2::new(u_nom[0], u_nom[1]);
    match project(&cons, &un) {
        Some(u) => Ok(FilterOutput {
            control: Control::from_column_slice(u.as_slice()),
            feasible: true,
        }),
        None => {
            let u = least_violating(&cons, model, &un);
            Ok(FilterOutput {
                control: Control::from_column_slice(u.as_slice()),
                feasible: false,
            })
        }
    }
}
