use nalgebra::DMatrix;

use super::TrajOptSolution;
use crate::barrier::EmbeddedModel;
use crate::dynamics::FeedbackLaw;

/// `k_fb = K_k (x̄ − x̄*)`, with barrier components evaluated from the
/// physical states.
#[derive(Clone, Debug)]
pub struct LinearFeedback {
    pub gains: Vec<DMatrix<f64>>,
    /// Present when the gains act on `[x, β]`.
    pub embedding: Option<EmbeddedModel>,
    /// Drop the barrier columns of each gain.
    pub physical_only: bool,
}

pub fn feedback_policy(sol: &TrajOptSolution, embedding: Option<&EmbeddedModel>) -> LinearFeedback {
    LinearFeedback {
        gains: sol.gains.clone(),
        embedding: embedding.cloned(),
        physical_only: false,
    }
}

impl LinearFeedback {
    pub fn zero(horizon: usize, m: usize, cols: usize) -> Self {
        Self {
            gains: vec![DMatrix::zeros(m, cols); horizon],
            embedding: None,
            physical_only: false,
        }
    }

    pub fn horizon(&self) -> usize {
        self.gains.len()
    }

    /// Feedback from already-augmented states `[x, β]`.
    #[inline]
    pub fn feedback_augmented(&self, k: usize, xbar: &[f64], xbar_nominal: &[f64], out: &mut [f64]) {
        let Some(gain) = self.gains.get(k.min(self.gains.len().saturating_sub(1))) else {
            out.fill(0.0);
            return;
        };
        let cols = if self.physical_only {
            self.embedding.as_ref().map_or(gain.ncols(), |e| e.n())
        } else {
            gain.ncols()
        };
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for j in 0..cols {
                acc += gain[(i, j)] * (xbar[j] - xbar_nominal[j]);
            }
            *o = acc;
        }
    }
}

impl FeedbackLaw for LinearFeedback {
    fn feedback(&self, k: usize, x: &[f64], x_nominal: &[f64], out: &mut [f64]) {
        match &self.embedding {
            None => self.feedback_augmented(k, x, x_nominal, out),
            Some(emb) => {
                let n = emb.n();
                let na = emb.n_aug();
                let mut a = vec![0.0; na];
                let mut b = vec![0.0; na];
                a[..n].copy_from_slice(&x[..n]);
                b[..n].copy_from_slice(&x_nominal[..n]);
                emb.beta_capped_into(&x[..n], &mut a[n..]);
                emb.beta_capped_into(&x_nominal[..n], &mut b[n..]);
                self.feedback_augmented(k, &a, &b, out);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::barrier::{embed, BarrierSpec, Obstacle, ObstacleField};
    use crate::dynamics::ModelSpec;

    fn emb() -> EmbeddedModel {
        embed(
            &ModelSpec::single_integrator(0.05, 5.0),
            &ObstacleField::new(vec![Obstacle::new(0.0, 0.0, 1.0)]),
            &BarrierSpec::default(),
        )
    }

    #[test]
    fn zero_error_or_zero_gain_gives_zero() {
        let mut p = LinearFeedback::zero(3, 2, 3);
        p.embedding = Some(emb());
        let mut out = [1.0, 1.0];
        p.feedback(0, &[2.0, 1.0], &[3.0, 0.0], &mut out);
        assert_eq!(out, [0.0, 0.0]);

        p.gains[1] = DMatrix::from_element(2, 3, 7.0);
        p.feedback(1, &[2.0, 1.0], &[2.0, 1.0], &mut out);
        assert_eq!(out, [0.0, 0.0]);
    }

    #[test]
    fn linearization_matches_finite_difference() {
        // k_fb(x* + δ) ≈ K [I; ∂β/∂x] δ.
        let e = emb();
        let gain = DMatrix::from_row_slice(2, 3, &[-3.0, 0.5, 2.0, 0.2, -4.0, -1.0]);
        let p = LinearFeedback {
            gains: vec![gain.clone()],
            embedding: Some(e.clone()),
            physical_only: false,
        };
        let xs = [1.8, 0.9];
        let h = e.field.obstacles[0].h(&xs);
        let g = e.field.obstacles[0].grad_h(&xs);
        let db = e.barrier.barrier_deriv(h);
        let jac = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, db * g[0], db * g[1]]);
        for dir in [[1.0, 0.0], [0.0, 1.0], [0.6, -0.8]] {
            let eps = 1e-6;
            let x = [xs[0] + eps * dir[0], xs[1] + eps * dir[1]];
            let mut out = [0.0; 2];
            p.feedback(0, &x, &xs, &mut out);
            let lin = &gain * &jac * nalgebra::dvector![dir[0], dir[1]] * eps;
            for i in 0..2 {
                assert!((out[i] - lin[i]).abs() < 1e-10, "{} vs {}", out[i], lin[i]);
            }
        }
    }

    #[test]
    fn physical_only_ignores_barrier_columns() {
        let gain = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 100.0, 0.0, 1.0, 100.0]);
        let p = LinearFeedback {
            gains: vec![gain],
            embedding: Some(emb()),
            physical_only: true,
        };
        let mut out = [0.0; 2];
        p.feedback(0, &[2.0, 0.0], &[3.0, 0.0], &mut out);
        assert_eq!(out, [-1.0, 0.0]);
    }
}
