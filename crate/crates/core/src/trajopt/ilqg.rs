use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Dynamics, Objective, TrajOptSolution};
use crate::error::{check_dim, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IlqgOptions {
    pub max_iters: usize,
    /// Converged when the relative cost decrease falls below this.
    pub tol: f64,
    pub reg_init: f64,
    pub reg_min: f64,
    pub reg_max: f64,
    pub reg_factor: f64,
    /// Backtracking factor and the number of halvings tried.
    pub backtrack: f64,
    pub max_backtracks: usize,
    /// Spectral-norm cap applied to the returned gains.
    pub gain_clip: f64,
    /// Box applied to controls in the forward pass.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub control_bounds: Option<(Vec<f64>, Vec<f64>)>,
}

impl Default for IlqgOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-6,
            reg_init: 0.0,
            reg_min: 1e-6,
            reg_max: 1e10,
            reg_factor: 10.0,
            backtrack: 0.5,
            max_backtracks: 12,
            gain_clip: 50.0,
            control_bounds: None,
        }
    }
}

struct BackwardPass {
    feedforward: Vec<DVector<f64>>,
    gains: Vec<DMatrix<f64>>,
    /// Expected decrease terms: `α Σ kᵀQ_u + α²/2 Σ kᵀQ_uu k`.
    dv: (f64, f64),
}

fn total_cost<O: Objective>(obj: &O, xs: &[DVector<f64>], us: &[DVector<f64>]) -> f64 {
    let running: f64 = us.iter().enumerate().map(|(k, u)| obj.running(k, &xs[k], u)).sum();
    running + obj.terminal(&xs[us.len()])
}

fn clamp(bounds: &Option<(Vec<f64>, Vec<f64>)>, u: &mut DVector<f64>) {
    if let Some((lo, hi)) = bounds {
        for i in 0..u.len() {
            u[i] = u[i].clamp(lo[i], hi[i]);
        }
    }
}

fn rollout<D: Dynamics>(
    dyn_: &D,
    x0: &DVector<f64>,
    us: &[DVector<f64>],
    bounds: &Option<(Vec<f64>, Vec<f64>)>,
) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
    let mut xs = Vec::with_capacity(us.len() + 1);
    let mut applied = Vec::with_capacity(us.len());
    xs.push(x0.clone());
    for (k, u) in us.iter().enumerate() {
        let mut u = u.clone();
        clamp(bounds, &mut u);
        xs.push(dyn_.step(k, &xs[k], &u)?);
        applied.push(u);
    }
    Ok((xs, applied))
}

fn backward<D: Dynamics, O: Objective>(
    dyn_: &D,
    obj: &O,
    xs: &[DVector<f64>],
    us: &[DVector<f64>],
    reg: f64,
) -> Result<Option<BackwardPass>> {
    let horizon = us.len();
    let m = dyn_.control_dim();
    let (mut vx, mut vxx) = obj.terminal_expansion(&xs[horizon]);
    let mut feedforward = vec![DVector::zeros(m); horizon];
    let mut gains = vec![DMatrix::zeros(m, dyn_.state_dim()); horizon];
    let mut dv = (0.0, 0.0);
    for k in (0..horizon).rev() {
        let (a, b) = dyn_.jacobians(k, &xs[k], &us[k])?;
        let l = obj.running_expansion(k, &xs[k], &us[k]);
        let bt_vxx = b.transpose() * &vxx;
        let qx = &l.lx + a.transpose() * &vx;
        let qu = &l.lu + b.transpose() * &vx;
        let qxx = &l.lxx + a.transpose() * &vxx * &a;
        let quu = &l.luu + &bt_vxx * &b;
        let qux = &l.lux + &bt_vxx * &a;

        let mut quu_reg = quu.clone();
        for i in 0..m {
            quu_reg[(i, i)] += reg;
        }
        let quu_reg = (&quu_reg + quu_reg.transpose()) * 0.5;
        let Some(chol) = quu_reg.cholesky() else {
            return Ok(None);
        };
        let kff = -chol.solve(&qu);
        let kfb = -chol.solve(&qux);

        dv.0 += kff.dot(&qu);
        dv.1 += 0.5 * kff.dot(&(&quu * &kff));

        vx = &qx + kfb.transpose() * &quu * &kff + kfb.transpose() * &qu + qux.transpose() * &kff;
        let vxx_new = &qxx + kfb.transpose() * &quu * &kfb + kfb.transpose() * &qux + qux.transpose() * &kfb;
        vxx = (&vxx_new + vxx_new.transpose()) * 0.5;
        feedforward[k] = kff;
        gains[k] = kfb;
    }
    Ok(Some(BackwardPass {
        feedforward,
        gains,
        dv,
    }))
}

fn clip_gain(k: &mut DMatrix<f64>, cap: f64) {
    if !cap.is_finite() {
        return;
    }
    let kkt = &*k * k.transpose();
    let norm = kkt.symmetric_eigenvalues().max().max(0.0).sqrt();
    if norm > cap {
        *k *= cap / norm;
    }
}

/// Iterative LQG (Gauss-Newton DDP) with Levenberg regularization on `Q_uu`
/// and a backtracking line search.
///
/// A forward pass that raises `BarrierBlowup` rejects the step. The returned
/// gains come from a backward pass about the returned trajectory.
pub fn ilqg_solve<D: Dynamics, O: Objective>(
    dyn_: &D,
    obj: &O,
    x0: &DVector<f64>,
    u_init: &[DVector<f64>],
    opts: &IlqgOptions,
) -> Result<TrajOptSolution> {
    check_dim("initial state", dyn_.state_dim(), x0.len())?;
    if u_init.is_empty() {
        return Err(Error::Length {
            what: "control sequence",
            expected: 1,
            got: 0,
        });
    }
    let (mut xs, mut us) = rollout(dyn_, x0, u_init, &opts.control_bounds)?;
    let mut cost = total_cost(obj, &xs, &us);
    let mut history = vec![cost];
    let mut reg = opts.reg_init;
    let mut converged = false;
    let mut iterations = 0;

    'outer: while iterations < opts.max_iters {
        iterations += 1;
        let pass = loop {
            match backward(dyn_, obj, &xs, &us, reg)? {
                Some(p) => break p,
                None => {
                    reg = (reg * opts.reg_factor).max(opts.reg_min);
                    if reg > opts.reg_max {
                        return Err(Error::RegularizationExhausted(opts.reg_max));
                    }
                }
            }
        };

        if -(pass.dv.0 + pass.dv.1) <= opts.tol * cost.abs() {
            converged = true;
            break;
        }

        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            if let Ok(candidate) = forward(dyn_, x0, &xs, &us, &pass, step, &opts.control_bounds) {
                let new_cost = total_cost(obj, &candidate.0, &candidate.1);
                let expected = -(step * pass.dv.0 + step * step * pass.dv.1);
                let ok = if expected > 0.0 {
                    (cost - new_cost) / expected > 1e-4
                } else {
                    new_cost < cost
                };
                if ok && new_cost.is_finite() {
                    accepted = Some((candidate, new_cost));
                    break;
                }
                if new_cost <= cost && (cost - new_cost) <= opts.tol * cost.abs().max(1e-300) {
                    // Already at a stationary point.
                    converged = true;
                    break 'outer;
                }
            }
            step *= opts.backtrack;
        }

        match accepted {
            Some(((new_xs, new_us), new_cost)) => {
                let rel = (cost - new_cost) / cost.abs().max(1e-300);
                xs = new_xs;
                us = new_us;
                cost = new_cost;
                history.push(cost);
                reg = if reg / opts.reg_factor < opts.reg_min {
                    0.0
                } else {
                    reg / opts.reg_factor
                };
                if rel < opts.tol {
                    converged = true;
                    break;
                }
            }
            None => {
                reg = (reg * opts.reg_factor).max(opts.reg_min);
                if reg > opts.reg_max {
                    break;
                }
            }
        }
    }
    if cost == 0.0 {
        converged = true;
    }

    // Gains about the final trajectory.
    let mut final_reg = 0.0;
    let pass = loop {
        match backward(dyn_, obj, &xs, &us, final_reg)? {
            Some(p) => break p,
            None => {
                final_reg = (final_reg * opts.reg_factor).max(opts.reg_min);
                if final_reg > opts.reg_max {
                    return Err(Error::RegularizationExhausted(opts.reg_max));
                }
            }
        }
    };
    let mut gains = pass.gains;
    for k in gains.iter_mut() {
        clip_gain(k, opts.gain_clip);
    }

    Ok(TrajOptSolution {
        states: xs,
        controls: us,
        gains,
        converged,
        final_cost: cost,
        iterations,
        cost_history: history,
    })
}

fn forward<D: Dynamics>(
    dyn_: &D,
    x0: &DVector<f64>,
    xs: &[DVector<f64>],
    us: &[DVector<f64>],
    pass: &BackwardPass,
    step: f64,
    bounds: &Option<(Vec<f64>, Vec<f64>)>,
) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
    let horizon = us.len();
    let mut new_xs = Vec::with_capacity(horizon + 1);
    let mut new_us = Vec::with_capacity(horizon);
    new_xs.push(x0.clone());
    for k in 0..horizon {
        let dx = &new_xs[k] - &xs[k];
        let mut u = &us[k] + &pass.feedforward[k] * step + &pass.gains[k] * dx;
        clamp(bounds, &mut u);
        let next = dyn_.step(k, &new_xs[k], &u)?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::BarrierBlowup { h: f64::NAN });
        }
        new_xs.push(next);
        new_us.push(u);
    }
    Ok((new_xs, new_us))
}
