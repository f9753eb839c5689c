//! Circular-obstacle safe sets, barrier functions and the safety embedded
//! model `x̄ = [x, β]` with `β' = B(h(F(x, u)))`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{Control, ModelSpec, State};
use crate::error::{check_dim, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
}

impl Obstacle {
    pub fn new(cx: f64, cy: f64, r: f64) -> Self {
        Self { cx, cy, r }
    }

    /// `‖p − c‖² − r²`: positive outside, zero on the circle.
    #[inline]
    pub fn h(&self, p: &[f64]) -> f64 {
        let dx = p[0] - self.cx;
        let dy = p[1] - self.cy;
        dx * dx + dy * dy - self.r * self.r
    }

    #[inline]
    pub fn grad_h(&self, p: &[f64]) -> [f64; 2] {
        [2.0 * (p[0] - self.cx), 2.0 * (p[1] - self.cy)]
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObstacleField {
    pub obstacles: Vec<Obstacle>,
}

impl ObstacleField {
    pub fn new(obstacles: Vec<Obstacle>) -> Self {
        Self { obstacles }
    }

    pub fn len(&self) -> usize {
        self.obstacles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obstacles.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for o in &self.obstacles {
            if !(o.r > 0.0) || !o.cx.is_finite() || !o.cy.is_finite() {
                return Err(Error::InvalidConfig(format!("bad obstacle {o:?}")));
            }
        }
        Ok(())
    }

    /// `h_i` at the position part of `x`.
    pub fn h_eval(&self, x: &[f64], i: usize) -> f64 {
        self.obstacles[i].h(x)
    }

    /// Smallest `h_i` over all obstacles (`+inf` for an empty field).
    #[inline]
    pub fn min_h(&self, x: &[f64]) -> f64 {
        self.obstacles
            .iter()
            .map(|o| o.h(x))
            .fold(f64::INFINITY, f64::min)
    }

    /// Strict interior test `h_i > 0` for every obstacle.
    pub fn is_safe(&self, x: &[f64]) -> bool {
        self.obstacles.iter().all(|o| o.h(x) > 0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BarrierKind {
    /// `1/h`
    Inverse,
    /// `−log(h / (1 + h))`
    LogShifted,
    /// `exp(−γ h)`; bounded, so it never blows up at the boundary.
    Exponential,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// One barrier state holding the sum over constraints.
    SingleSummed,
    /// One barrier state per constraint.
    Vector,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarrierSpec {
    pub kind: BarrierKind,
    pub aggregation: Aggregation,
    /// Floor on `h` for the unbounded kinds.
    pub epsilon_h: f64,
    /// Rate of the exponential kind.
    pub gamma: f64,
    /// Barrier values are capped here before they reach any cost.
    pub cap: f64,
}

impl Default for BarrierSpec {
    fn default() -> Self {
        Self {
            kind: BarrierKind::Inverse,
            aggregation: Aggregation::SingleSummed,
            epsilon_h: 1e-6,
            gamma: 1.0,
            cap: 1e12,
        }
    }
}

impl BarrierSpec {
    fn bounded(&self) -> bool {
        matches!(self.kind, BarrierKind::Exponential)
    }

    pub fn barrier_eval(&self, h: f64) -> Result<f64> {
        if !self.bounded() && !(h > self.epsilon_h) {
            return Err(Error::BarrierBlowup { h });
        }
        let b = match self.kind {
            BarrierKind::Inverse => 1.0 / h,
            BarrierKind::LogShifted => -(h / (1.0 + h)).ln(),
            BarrierKind::Exponential => (-self.gamma * h).exp(),
        };
        Ok(b.min(self.cap))
    }

    /// `dB/dh`, valid wherever `barrier_eval` succeeds.
    pub fn barrier_deriv(&self, h: f64) -> f64 {
        match self.kind {
            BarrierKind::Inverse => -1.0 / (h * h),
            BarrierKind::LogShifted => -1.0 / (h * (1.0 + h)),
            BarrierKind::Exponential => -self.gamma * (-self.gamma * h).exp(),
        }
    }

    /// Barrier value with blow-up mapped to the cap.
    pub fn barrier_capped(&self, h: f64) -> f64 {
        self.barrier_eval(h).unwrap_or(self.cap)
    }
}

/// The safety embedded model `F̄ = [F, B∘h∘F]`.
#[derive(Clone, Debug)]
pub struct EmbeddedModel {
    pub model: ModelSpec,
    pub field: ObstacleField,
    pub barrier: BarrierSpec,
}

pub fn embed(model: &ModelSpec, field: &ObstacleField, barrier: &BarrierSpec) -> EmbeddedModel {
    EmbeddedModel {
        model: model.clone(),
        field: field.clone(),
        barrier: barrier.clone(),
    }
}

impl EmbeddedModel {
    pub fn n(&self) -> usize {
        self.model.n()
    }

    pub fn m(&self) -> usize {
        self.model.m()
    }

    pub fn n_beta(&self) -> usize {
        match self.barrier.aggregation {
            Aggregation::SingleSummed => 1,
            Aggregation::Vector => self.field.len(),
        }
    }

    pub fn n_aug(&self) -> usize {
        self.n() + self.n_beta()
    }

    /// `β(x) = B(h(x))` written into `out` (length `n_beta`).
    #[inline]
    pub fn beta_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        match self.barrier.aggregation {
            Aggregation::SingleSummed => {
                let mut sum = 0.0;
                for o in &self.field.obstacles {
                    sum += self.barrier.barrier_eval(o.h(x))?;
                }
                out[0] = sum.min(self.barrier.cap);
            }
            Aggregation::Vector => {
                for (b, o) in out.iter_mut().zip(&self.field.obstacles) {
                    *b = self.barrier.barrier_eval(o.h(x))?;
                }
            }
        }
        Ok(())
    }

    /// Same as [`beta_into`](Self::beta_into) but saturating at the cap
    /// instead of failing.
    pub fn beta_capped_into(&self, x: &[f64], out: &mut [f64]) {
        match self.barrier.aggregation {
            Aggregation::SingleSummed => {
                let sum: f64 = self
                    .field
                    .obstacles
                    .iter()
                    .map(|o| self.barrier.barrier_capped(o.h(x)))
                    .sum();
                out[0] = sum.min(self.barrier.cap);
            }
            Aggregation::Vector => {
                for (b, o) in out.iter_mut().zip(&self.field.obstacles) {
                    *b = self.barrier.barrier_capped(o.h(x));
                }
            }
        }
    }

    /// Capped barrier states written into `out`; returns `min_i h_i(x)`
    /// (`+∞` for an empty field).
    #[inline]
    pub fn beta_capped_min_h(&self, x: &[f64], out: &mut [f64]) -> f64 {
        let mut min_h = f64::INFINITY;
        let mut sum = 0.0;
        for (i, o) in self.field.obstacles.iter().enumerate() {
            let h = o.h(x);
            min_h = min_h.min(h);
            let b = self.barrier.barrier_capped(h);
            match self.barrier.aggregation {
                Aggregation::SingleSummed => sum += b,
                Aggregation::Vector => out[i] = b,
            }
        }
        if self.barrier.aggregation == Aggregation::SingleSummed {
            out[0] = sum.min(self.barrier.cap);
        }
        min_h
    }

    /// Whether a state with the given `min h` has left the safe set or sits
    /// where an unbounded barrier blows up.
    #[inline]
    pub fn exits(&self, min_h: f64) -> bool {
        !(min_h > 0.0) || (!self.barrier.bounded() && !(min_h > self.barrier.epsilon_h))
    }

    pub fn beta(&self, x: &[f64]) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.n_beta());
        self.beta_into(x, out.as_mut_slice())?;
        Ok(out)
    }

    /// Lifts a physical state to `[x, β(x)]`.
    pub fn augment(&self, x: &State) -> Result<DVector<f64>> {
        check_dim("state", self.n(), x.len())?;
        let mut out = DVector::zeros(self.n_aug());
        out.rows_mut(0, self.n()).copy_from(x);
        self.beta_into(x.as_slice(), &mut out.as_mut_slice()[self.n()..])?;
        Ok(out)
    }

    /// `[x, β(x)]` with capped barrier values; never fails.
    pub fn augment_capped(&self, x: &State) -> DVector<f64> {
        let n = self.n();
        let mut out = DVector::zeros(self.n_aug());
        out.rows_mut(0, n).copy_from(&x.rows(0, n));
        self.beta_capped_into(&x.as_slice()[..n], &mut out.as_mut_slice()[n..]);
        out
    }

    /// `β_{k+1} = B(h(F(x, u)))` (no disturbance).
    pub fn dbas_step(&self, x: &State, u: &Control) -> Result<DVector<f64>> {
        let next = self.model.step(x, u, None)?;
        self.beta(next.as_slice())
    }

    /// `x̄' = F̄(x̄, u)`.
    pub fn step(&self, xbar: &DVector<f64>, u: &Control) -> Result<DVector<f64>> {
        check_dim("augmented state", self.n_aug(), xbar.len())?;
        check_dim("control", self.m(), u.len())?;
        let n = self.n();
        let mut out = DVector::zeros(self.n_aug());
        self.model
            .step_into(&xbar.as_slice()[..n], u.as_slice(), None, &mut out.as_mut_slice()[..n]);
        let (head, tail) = out.as_mut_slice().split_at_mut(n);
        self.beta_into(head, tail)?;
        Ok(out)
    }

    /// Analytic Jacobians `(∂F̄/∂x̄, ∂F̄/∂u)` at `(x̄, u)`.
    pub fn jacobians(&self, xbar: &DVector<f64>, u: &Control) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        check_dim("augmented state", self.n_aug(), xbar.len())?;
        let n = self.n();
        let na = self.n_aug();
        let m = self.m();
        let (fx, fu) = self.model.jacobians();
        let mut next = vec![0.0; n];
        self.model
            .step_into(&xbar.as_slice()[..n], u.as_slice(), None, &mut next);

        let mut a = DMatrix::zeros(na, na);
        let mut b = DMatrix::zeros(na, m);
        a.view_mut((0, 0), (n, n)).copy_from(&fx);
        b.view_mut((0, 0), (n, m)).copy_from(&fu);

        // dβ'_j/dx = B'(h_i(x')) ∇h_i(x')ᵀ ∂p'/∂x, the position rows of F.
        let dp_dx = fx.rows(0, 2);
        let dp_du = fu.rows(0, 2);
        for (i, o) in self.field.obstacles.iter().enumerate() {
            let h = o.h(&next);
            self.barrier.barrier_eval(h)?;
            let db = self.barrier.barrier_deriv(h);
            let g = o.grad_h(&next);
            let row = match self.barrier.aggregation {
                Aggregation::SingleSummed => n,
                Aggregation::Vector => n + i,
            };
            for c in 0..n {
                a[(row, c)] += db * (g[0] * dp_dx[(0, c)] + g[1] * dp_dx[(1, c)]);
            }
            for c in 0..m {
                b[(row, c)] += db * (g[0] * dp_du[(0, c)] + g[1] * dp_du[(1, c)]);
            }
        }
        Ok((a, b))
    }

    /// Central finite-difference Jacobians, usable for any model.
    pub fn jacobians_fd(&self, xbar: &DVector<f64>, u: &Control, eps: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let na = self.n_aug();
        let m = self.m();
        let mut a = DMatrix::zeros(na, na);
        let mut b = DMatrix::zeros(na, m);
        for j in 0..na {
            let mut xp = xbar.clone();
            let mut xm = xbar.clone();
            xp[j] += eps;
            xm[j] -= eps;
            let d = (self.step(&xp, u)? - self.step(&xm, u)?) / (2.0 * eps);
            a.set_column(j, &d);
        }
        for j in 0..m {
            let mut up = u.clone();
            let mut um = u.clone();
            up[j] += eps;
            um[j] -= eps;
            let d = (self.step(xbar, &up)? - self.step(xbar, &um)?) / (2.0 * eps);
            b.set_column(j, &d);
        }
        Ok((a, b))
    }
}
