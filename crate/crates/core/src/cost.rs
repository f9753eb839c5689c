//! State costs on plain and barrier-embedded states, cost-to-go and local
//! Lipschitz estimates over a tube around a nominal trajectory.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::barrier::{Aggregation, EmbeddedModel};
use crate::dynamics::State;
use crate::error::{Error, Result};
use crate::rng::{stream, Domain};

/// (De)serializes a square matrix as a list of rows.
pub(crate) mod rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(serde::de::Error::custom("ragged matrix"));
        }
        Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    pub goal: Vec<f64>,
    /// Running weight on the state error.
    #[serde(with = "rows")]
    pub q: DMatrix<f64>,
    /// Weight on `‖β‖²`.
    pub q_beta: f64,
    /// Terminal weight on the state error.
    #[serde(with = "rows")]
    pub phi_weight: DMatrix<f64>,
    /// Added once per unsafe state; also the floor of a crashed sample's cost.
    pub crash_cost: f64,
    /// Per-step reference replacing `goal` (tracking variant). Entry `k` is
    /// used at step `k`; the last entry for the terminal cost.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<Vec<Vec<f64>>>,
}

impl CostSpec {
    /// Position-error costs for a planar model of state dimension `n`.
    pub fn planar(n: usize, goal: &[f64], q: f64, q_beta: f64, phi: f64, crash_cost: f64) -> Self {
        let mut g = vec![0.0; n];
        g[..2].copy_from_slice(&goal[..2]);
        let diag = |w: f64| DMatrix::from_fn(n, n, |i, j| if i == j && i < 2 { w } else { 0.0 });
        Self {
            goal: g,
            q: diag(q),
            q_beta,
            phi_weight: diag(phi),
            crash_cost,
            reference: None,
        }
    }

    pub fn n(&self) -> usize {
        self.goal.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        let bad = |what: &str| Err(Error::InvalidConfig(what.to_string()));
        if self.q.shape() != (n, n) || self.phi_weight.shape() != (n, n) {
            return bad("cost weights must be n×n");
        }
        for w in [&self.q, &self.phi_weight] {
            if (w - w.transpose()).amax() > 1e-12 || w.clone().symmetric_eigenvalues().min() < -1e-12 {
                return bad("cost weights must be symmetric PSD");
            }
        }
        if !(self.q_beta >= 0.0) || !(self.crash_cost > 0.0) {
            return bad("q_beta must be nonnegative and crash_cost positive");
        }
        Ok(())
    }

    #[inline]
    pub fn target(&self, k: usize) -> &[f64] {
        match &self.reference {
            Some(r) if !r.is_empty() => &r[k.min(r.len() - 1)],
            _ => &self.goal,
        }
    }

    fn terminal_target(&self) -> &[f64] {
        match &self.reference {
            Some(r) if !r.is_empty() => &r[r.len() - 1],
            _ => &self.goal,
        }
    }

    #[inline]
    fn quad(w: &DMatrix<f64>, x: &[f64], g: &[f64]) -> f64 {
        let n = g.len();
        let mut acc = 0.0;
        for i in 0..n {
            let ei = x[i] - g[i];
            if ei == 0.0 {
                continue;
            }
            for j in 0..n {
                acc += ei * w[(i, j)] * (x[j] - g[j]);
            }
        }
        acc
    }

    /// `(x − g_k)ᵀQ(x − g_k) + q_β‖β‖² + crash_cost·1[unsafe]`.
    #[inline]
    pub fn running_cost(&self, k: usize, x: &[f64], beta: &[f64], safe: bool) -> f64 {
        let b2: f64 = beta.iter().map(|b| b * b).sum();
        let c = Self::quad(&self.q, x, self.target(k)) + self.q_beta * b2;
        if safe {
            c
        } else {
            c + self.crash_cost
        }
    }

    #[inline]
    pub fn terminal_cost(&self, x: &[f64], beta: &[f64], safe: bool) -> f64 {
        let b2: f64 = beta.iter().map(|b| b * b).sum();
        let c = Self::quad(&self.phi_weight, x, self.terminal_target()) + self.q_beta * b2;
        if safe {
            c
        } else {
            c + self.crash_cost
        }
    }

    /// Gradient of the running state cost with respect to the physical state,
    /// with `β = β(x)` substituted.
    pub fn running_grad(&self, k: usize, emb: &EmbeddedModel, x: &[f64]) -> Result<DVector<f64>> {
        self.grad_with(&self.q, self.target(k), emb, x)
    }

    pub fn terminal_grad(&self, emb: &EmbeddedModel, x: &[f64]) -> Result<DVector<f64>> {
        self.grad_with(&self.phi_weight, self.terminal_target(), emb, x)
    }

    fn grad_with(&self, w: &DMatrix<f64>, g: &[f64], emb: &EmbeddedModel, x: &[f64]) -> Result<DVector<f64>> {
        let n = self.n();
        let e = DVector::from_fn(n, |i, _| x[i] - g[i]);
        let mut grad = (w + w.transpose()) * e;
        if self.q_beta != 0.0 && !emb.field.is_empty() {
            let beta = emb.beta(x)?;
            for (i, o) in emb.field.obstacles.iter().enumerate() {
                let h = o.h(x);
                let db = emb.barrier.barrier_deriv(h);
                let bj = match emb.barrier.aggregation {
                    Aggregation::SingleSummed => beta[0],
                    Aggregation::Vector => beta[i],
                };
                let gh = o.grad_h(x);
                grad[0] += 2.0 * self.q_beta * bj * db * gh[0];
                grad[1] += 2.0 * self.q_beta * bj * db * gh[1];
            }
        }
        Ok(grad)
    }
}

/// `φ(x_T) + Σ_{k<T} q(x_k)` over a physical trajectory of length `T + 1`,
/// with barrier states and safety evaluated from the embedding.
pub fn cost_to_go(spec: &CostSpec, emb: &EmbeddedModel, traj: &[State]) -> f64 {
    let nb = emb.n_beta();
    let mut beta = vec![0.0; nb];
    let horizon = traj.len().saturating_sub(1);
    let mut total = 0.0;
    for (k, x) in traj.iter().enumerate() {
        let x = x.as_slice();
        emb.beta_capped_into(x, &mut beta);
        let safe = emb.field.is_safe(x);
        if k < horizon {
            total += spec.running_cost(k, x, &beta, safe);
        } else {
            total += spec.terminal_cost(x, &beta, safe);
        }
    }
    total
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LipschitzEstimate {
    pub l_q: f64,
    pub l_phi: f64,
    /// Some probe fell outside the safe set and was excluded.
    pub tube_intersects_unsafe: bool,
}

/// Probe-max of `‖∇q‖` over the radius-`radius` tube around the running
/// states of `nominal`, and of `‖∇φ‖` around its terminal state.
///
/// Probes come in antithetic pairs `c ± r·z`, so for a convex quadratic the
/// estimate is nondecreasing in `radius` at a fixed seed.
pub fn estimate_local_lipschitz(
    spec: &CostSpec,
    emb: &EmbeddedModel,
    nominal: &[State],
    radius: f64,
    n_probe: usize,
    seed: u64,
) -> Result<LipschitzEstimate> {
    if !(radius > 0.0) || n_probe == 0 || nominal.is_empty() {
        return Err(Error::InvalidConfig("tube radius and probe count must be positive".into()));
    }
    let n = emb.n();
    let horizon = nominal.len().saturating_sub(1).max(1);
    let mut rng = stream(seed, Domain::Probe, 0, 0);
    let eps = emb.barrier.epsilon_h;
    let mut intersects = false;

    let mut offsets = Vec::with_capacity(n_probe);
    while offsets.len() < n_probe {
        let mut z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = z.norm();
        if norm == 0.0 {
            continue;
        }
        let scale: f64 = rng.random::<f64>().powf(1.0 / n as f64) / norm;
        z *= scale;
        offsets.push(-&z);
        offsets.push(z);
    }
    offsets.truncate(n_probe);

    let mut sweep = |centre: &dyn Fn(usize) -> (usize, usize), terminal: bool| -> Result<Option<f64>> {
        let mut best: Option<f64> = None;
        for (j, z) in offsets.iter().enumerate() {
            let (k, idx) = centre(j);
            let p = &nominal[idx] + z * radius;
            if emb.field.min_h(p.as_slice()) <= eps {
                intersects = true;
                continue;
            }
            let g = if terminal {
                spec.terminal_grad(emb, p.as_slice())?
            } else {
                spec.running_grad(k, emb, p.as_slice())?
            };
            let v = g.norm();
            best = Some(best.map_or(v, |b| b.max(v)));
        }
        Ok(best)
    };

    let running = nominal.len().saturating_sub(1).max(1).min(nominal.len());
    let l_q = sweep(&|j| ((j / 2) % running, (j / 2) % running), false)?;
    let last = nominal.len() - 1;
    let l_phi = sweep(&|_| (horizon, last), true)?;
    match (l_q, l_phi) {
        (Some(l_q), Some(l_phi)) => Ok(LipschitzEstimate {
            l_q,
            l_phi,
            tube_intersects_unsafe: intersects,
        }),
        _ => Err(Error::EmptyTube),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::{embed, BarrierSpec, Obstacle, ObstacleField};
    use crate::dynamics::ModelSpec;
    use nalgebra::dvector;

    fn emb(obstacles: Vec<Obstacle>) -> EmbeddedModel {
        embed(
            &ModelSpec::single_integrator(0.05, 5.0),
            &ObstacleField::new(obstacles),
            &BarrierSpec::default(),
        )
    }

    fn spec(q_beta: f64) -> CostSpec {
        CostSpec::planar(2, &[0.0, 0.0], 1.0, q_beta, 1.0, 1e9)
    }

    #[test]
    fn running_cost_cases() {
        let s = spec(10.0);
        assert_eq!(s.running_cost(0, &[0.0, 0.0], &[0.0], true), 0.0);
        assert!((s.running_cost(0, &[0.0, 0.0], &[1.0 / 3.0], true) - 10.0 / 9.0).abs() < 1e-14);
        assert!(s.running_cost(0, &[0.0, 0.0], &[0.0], false) >= s.crash_cost);
    }

    #[test]
    fn terminal_cost_cases() {
        let s = spec(0.0);
        assert_eq!(s.terminal_cost(&[0.0, 0.0], &[0.0], true), 0.0);
        assert!((s.terminal_cost(&[0.6, 0.8], &[0.0], true) - 1.0).abs() < 1e-15);
        assert!(s.terminal_cost(&[0.6, 0.8], &[0.0], false) >= s.crash_cost);
    }

    #[test]
    fn cost_to_go_sums_parts() {
        let s = spec(0.0);
        let e = emb(vec![]);
        // q(x0) = 1, q(x1) = 2, φ(x2) = 3 with identity weights.
        let traj = vec![dvector![1.0, 0.0], dvector![1.0, 1.0], dvector![3f64.sqrt(), 0.0]];
        assert!((cost_to_go(&s, &e, &traj) - 6.0).abs() < 1e-12);
        let at_goal = vec![dvector![0.0, 0.0]; 5];
        assert_eq!(cost_to_go(&s, &e, &at_goal), 0.0);
    }

    #[test]
    fn tracking_reference_overrides_goal() {
        let mut s = spec(0.0);
        s.reference = Some(vec![vec![1.0, 0.0], vec![2.0, 0.0]]);
        assert_eq!(s.running_cost(0, &[1.0, 0.0], &[0.0], true), 0.0);
        assert_eq!(s.running_cost(5, &[2.0, 0.0], &[0.0], true), 0.0);
        assert_eq!(s.terminal_cost(&[2.0, 0.0], &[0.0], true), 0.0);
    }

    #[test]
    fn validate_rejects_indefinite_weights() {
        let mut s = spec(1.0);
        assert!(s.validate().is_ok());
        s.q[(0, 0)] = -1.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn serde_round_trip() {
        let s = spec(3.0);
        let text = toml::to_string(&s).unwrap();
        let back: CostSpec = toml::from_str(&text).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn lipschitz_quadratic_oracle() {
        // q(x) = xᵀx: sup ‖∇q‖ over the ball B(p, R) is 2(‖p‖ + R).
        let s = spec(0.0);
        let e = emb(vec![]);
        let p = dvector![3.0, 4.0];
        let est = estimate_local_lipschitz(&s, &e, &[p.clone(), p.clone()], 0.5, 10_000, 1).unwrap();
        let exact = 2.0 * (5.0 + 0.5);
        assert!((est.l_q - exact).abs() / exact < 0.05);
        assert!((est.l_phi - exact).abs() / exact < 0.05);
        assert!(!est.tube_intersects_unsafe);
    }

    #[test]
    fn lipschitz_zero_cost() {
        let mut s = spec(0.0);
        s.q.fill(0.0);
        s.phi_weight.fill(0.0);
        let est = estimate_local_lipschitz(&s, &emb(vec![]), &vec![dvector![1.0, 1.0]; 3], 1.0, 200, 2).unwrap();
        assert_eq!((est.l_q, est.l_phi), (0.0, 0.0));
    }

    #[test]
    fn lipschitz_flags_unsafe_probes_and_empty_tube() {
        let s = spec(1.0);
        let e = emb(vec![Obstacle::new(1.0, 0.0, 0.5)]);
        let traj = vec![dvector![0.0, 0.0], dvector![0.2, 0.0]];
        let est = estimate_local_lipschitz(&s, &e, &traj, 0.9, 1000, 3).unwrap();
        assert!(est.tube_intersects_unsafe);
        assert!(est.l_q.is_finite());

        let inside = vec![dvector![1.0, 0.0]; 2];
        let r = estimate_local_lipschitz(&s, &e, &inside, 0.1, 200, 3);
        assert!(matches!(r, Err(Error::EmptyTube)));
    }

    #[test]
    fn lipschitz_monotone_in_radius() {
        let s = spec(0.0);
        let e = emb(vec![]);
        let traj: Vec<State> = (0..20).map(|k| dvector![k as f64 * 0.3, 1.0]).collect();
        let mut prev = 0.0;
        for r in [0.1, 0.2, 0.5, 1.0, 2.0, 4.0] {
            let est = estimate_local_lipschitz(&s, &e, &traj, r, 400, 9).unwrap();
            assert!(est.l_q >= prev);
            prev = est.l_q;
        }
    }

    #[test]
    fn barrier_gradient_matches_fd() {
        let s = spec(50.0);
        let e = emb(vec![Obstacle::new(1.0, 0.0, 0.5), Obstacle::new(-1.0, 2.0, 1.0)]);
        let x = [0.1, 0.3];
        let g = s.running_grad(0, &e, &x).unwrap();
        let f = |p: [f64; 2]| {
            let b = e.beta(&p).unwrap();
            s.running_cost(0, &p, b.as_slice(), true)
        };
        let h = 1e-6;
        for i in 0..2 {
            let mut a = x;
            let mut b = x;
            a[i] += h;
            b[i] -= h;
            let fd = (f(a) - f(b)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-5 * fd.abs().max(1.0));
        }
    }
}
