//! Planar point-mass models and the real/nominal rollout kernel.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, check_len, Result};

pub type State = DVector<f64>;
pub type Control = DVector<f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// Position state, velocity control: `x' = x + (u + w) dt`.
    SingleIntegrator,
    /// Position and velocity state, acceleration control.
    DoubleIntegrator,
}

/// Velocity disturbance: i.i.d. zero-mean Gaussian, optionally truncated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceSpec {
    /// Variance in (m/s)^2.
    pub sigma2: f64,
    /// Truncation bound `D`. `None` samples the untruncated Gaussian.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
}

impl DisturbanceSpec {
    pub fn none() -> Self {
        Self {
            sigma2: 0.0,
            bound: None,
        }
    }

    pub fn gaussian(sigma2: f64) -> Self {
        Self { sigma2, bound: None }
    }

    /// Draws one disturbance component.
    pub fn sample_scalar<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.sigma2 <= 0.0 {
            return 0.0;
        }
        let sigma = self.sigma2.sqrt();
        match self.bound {
            None => sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng),
            Some(d) if d <= 0.0 => 0.0,
            Some(d) => loop {
                let w: f64 = sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng);
                if w.abs() <= d {
                    break w;
                }
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Time step in seconds.
    pub dt: f64,
    pub u_min: Vec<f64>,
    pub u_max: Vec<f64>,
    pub disturbance: DisturbanceSpec,
}

impl ModelSpec {
    pub fn single_integrator(dt: f64, u_limit: f64) -> Self {
        Self {
            kind: ModelKind::SingleIntegrator,
            dt,
            u_min: vec![-u_limit; 2],
            u_max: vec![u_limit; 2],
            disturbance: DisturbanceSpec::none(),
        }
    }

    pub fn double_integrator(dt: f64, u_limit: f64) -> Self {
        Self {
            kind: ModelKind::DoubleIntegrator,
            ..Self::single_integrator(dt, u_limit)
        }
    }

    pub fn with_disturbance(mut self, disturbance: DisturbanceSpec) -> Self {
        self.disturbance = disturbance;
        self
    }

    /// State dimension `n`.
    pub fn n(&self) -> usize {
        match self.kind {
            ModelKind::SingleIntegrator => 2,
            ModelKind::DoubleIntegrator => 4,
        }
    }

    /// Control dimension `m`.
    pub fn m(&self) -> usize {
        2
    }

    pub fn validate(&self) -> Result<()> {
        use crate::error::Error::InvalidConfig;
        if !(self.dt > 0.0) {
            return Err(InvalidConfig(format!("dt must be positive, got {}", self.dt)));
        }
        check_dim("u_min", self.m(), self.u_min.len())?;
        check_dim("u_max", self.m(), self.u_max.len())?;
        if self.u_min.iter().zip(&self.u_max).any(|(lo, hi)| !(lo < hi)) {
            return Err(InvalidConfig("u_min must be below u_max".into()));
        }
        if !(self.disturbance.sigma2 >= 0.0) {
            return Err(InvalidConfig("disturbance variance must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn position<'a>(&self, x: &'a [f64]) -> &'a [f64] {
        &x[..2]
    }

    /// Instantaneous velocity of a state (double integrator only).
    pub fn velocity<'a>(&self, x: &'a [f64]) -> Option<&'a [f64]> {
        match self.kind {
            ModelKind::SingleIntegrator => None,
            ModelKind::DoubleIntegrator => Some(&x[2..4]),
        }
    }

    /// Saturates `u` into the control box in place.
    pub fn clamp_in_place(&self, u: &mut [f64]) {
        for ((ui, lo), hi) in u.iter_mut().zip(&self.u_min).zip(&self.u_max) {
            *ui = ui.clamp(*lo, *hi);
        }
    }

    pub fn clamp_control(&self, u: &Control) -> Control {
        let mut out = u.clone();
        self.clamp_in_place(out.as_mut_slice());
        out
    }

    /// Allocation-free transition. `w` has length `n`; for the double
    /// integrator only its velocity entries are used.
    #[inline]
    pub fn step_into(&self, x: &[f64], u: &[f64], w: Option<&[f64]>, out: &mut [f64]) {
        let dt = self.dt;
        match self.kind {
            ModelKind::SingleIntegrator => {
                for i in 0..2 {
                    let wi = w.map_or(0.0, |w| w[i]);
                    out[i] = x[i] + (u[i] + wi) * dt;
                }
            }
            ModelKind::DoubleIntegrator => {
                for i in 0..2 {
                    let wi = w.map_or(0.0, |w| w[2 + i]);
                    out[i] = x[i] + x[2 + i] * dt;
                    out[2 + i] = x[2 + i] + u[i] * dt + wi;
                }
            }
        }
    }

    /// One step of `x' = F(x, u) + w`. The caller clamps `u`.
    pub fn step(&self, x: &State, u: &Control, w: Option<&DVector<f64>>) -> Result<State> {
        check_dim("state", self.n(), x.len())?;
        check_dim("control", self.m(), u.len())?;
        if let Some(w) = w {
            check_dim("disturbance", self.n(), w.len())?;
        }
        let mut out = State::zeros(self.n());
        self.step_into(
            x.as_slice(),
            u.as_slice(),
            w.map(|w| w.as_slice()),
            out.as_mut_slice(),
        );
        Ok(out)
    }

    /// Draws a disturbance vector of length `n` (zero on position channels of
    /// the double integrator).
    pub fn sample_disturbance<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self.kind {
            ModelKind::SingleIntegrator => {
                for w in out.iter_mut().take(2) {
                    *w = self.disturbance.sample_scalar(rng);
                }
            }
            ModelKind::DoubleIntegrator => {
                out[0] = 0.0;
                out[1] = 0.0;
                out[2] = self.disturbance.sample_scalar(rng);
                out[3] = self.disturbance.sample_scalar(rng);
            }
        }
    }

    /// Jacobians of `F` (linear for both kinds).
    pub fn jacobians(&self) -> (nalgebra::DMatrix<f64>, nalgebra::DMatrix<f64>) {
        use nalgebra::DMatrix;
        let n = self.n();
        let dt = self.dt;
        let mut a = DMatrix::identity(n, n);
        let mut b = DMatrix::zeros(n, 2);
        match self.kind {
            ModelKind::SingleIntegrator => {
                b[(0, 0)] = dt;
                b[(1, 1)] = dt;
            }
            ModelKind::DoubleIntegrator => {
                a[(0, 2)] = dt;
                a[(1, 3)] = dt;
                b[(2, 0)] = dt;
                b[(3, 1)] = dt;
            }
        }
        (a, b)
    }
}

/// Feedback law `K(k, x, x*)` applied to the real system of a dual rollout.
pub trait FeedbackLaw: Sync {
    /// Writes the feedback control for step `k` into `out`.
    fn feedback(&self, k: usize, x: &[f64], x_nominal: &[f64], out: &mut [f64]);
}

/// The zero policy.
pub struct NoFeedback;

impl FeedbackLaw for NoFeedback {
    fn feedback(&self, _k: usize, _x: &[f64], _x_nominal: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
}

#[derive(Clone, Debug)]
pub struct PairRollout {
    pub real: Vec<State>,
    pub nominal: Vec<State>,
    pub feedback: Vec<Control>,
    /// Controls actually applied to the real system (after clamping).
    pub applied: Vec<Control>,
}

/// Rolls the nominal system `x*' = F(x*, u + e)` and the real system
/// `x' = F(x, u + e + K(k, x, x*)) + w` side by side with shared noise.
pub fn rollout_pair(
    model: &ModelSpec,
    x0: &State,
    x0_nominal: &State,
    controls: &[Control],
    noise: &[Control],
    feedback: &dyn FeedbackLaw,
    disturbances: &[DVector<f64>],
) -> Result<PairRollout> {
    let (n, m) = (model.n(), model.m());
    let horizon = controls.len();
    check_dim("x0", n, x0.len())?;
    check_dim("x0_nominal", n, x0_nominal.len())?;
    check_len("noise", horizon, noise.len())?;
    check_len("disturbances", horizon, disturbances.len())?;
    for (u, e) in controls.iter().zip(noise) {
        check_dim("control", m, u.len())?;
        check_dim("noise", m, e.len())?;
    }
    for w in disturbances {
        check_dim("disturbance", n, w.len())?;
    }

    let mut real = vec![x0.clone()];
    let mut nominal = vec![x0_nominal.clone()];
    let mut fbs = Vec::with_capacity(horizon);
    let mut applied = Vec::with_capacity(horizon);
    let mut fb = Control::zeros(m);
    for k in 0..horizon {
        let (x, xn) = (&real[k], &nominal[k]);
        feedback.feedback(k, x.as_slice(), xn.as_slice(), fb.as_mut_slice());

        let mut un = &controls[k] + &noise[k];
        model.clamp_in_place(un.as_mut_slice());
        let mut ur = &controls[k] + &noise[k] + &fb;
        model.clamp_in_place(ur.as_mut_slice());

        let mut xn_next = State::zeros(n);
        model.step_into(xn.as_slice(), un.as_slice(), None, xn_next.as_mut_slice());
        let mut x_next = State::zeros(n);
        model.step_into(
            x.as_slice(),
            ur.as_slice(),
            Some(disturbances[k].as_slice()),
            x_next.as_mut_slice(),
        );
        real.push(x_next);
        nominal.push(xn_next);
        fbs.push(fb.clone());
        applied.push(ur);
    }
    Ok(PairRollout {
        real,
        nominal,
        feedback: fbs,
        applied,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};
    use nalgebra::dvector;
    use proptest::prelude::*;

    fn si(dt: f64) -> ModelSpec {
        ModelSpec::single_integrator(dt, 5.0)
    }

    #[test]
    fn euler_step_arithmetic() {
        let m = si(0.05);
        let x = m.step(&dvector![0.0, 0.0], &dvector![1.0, 2.0], None).unwrap();
        assert!((x[0] - 0.05).abs() < 1e-15 && (x[1] - 0.10).abs() < 1e-15);

        let m = si(0.1);
        let x = m
            .step(&dvector![0.0, 0.0], &dvector![1.0, 0.0], Some(&dvector![0.5, 0.0]))
            .unwrap();
        assert!((x[0] - 0.15).abs() < 1e-15);
        assert_eq!(x[1], 0.0);
    }

    #[test]
    fn zero_input_is_a_fixed_point() {
        for m in [si(0.05), ModelSpec::double_integrator(0.05, 5.0)] {
            let x = State::from_fn(m.n(), |i, _| if i < 2 { 1.5 + i as f64 } else { 0.0 });
            let next = m.step(&x, &Control::zeros(2), Some(&DVector::zeros(m.n()))).unwrap();
            assert_eq!(next, x);
        }
    }

    #[test]
    fn double_integrator_disturbs_velocity_only() {
        let m = ModelSpec::double_integrator(0.1, 5.0);
        let x = dvector![0.0, 0.0, 1.0, 0.0];
        let next = m
            .step(&x, &dvector![2.0, 0.0], Some(&dvector![9.0, 9.0, 0.5, 0.0]))
            .unwrap();
        assert!((next[0] - 0.1).abs() < 1e-15);
        assert_eq!(next[1], 0.0);
        assert!((next[2] - 1.7).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let m = si(0.05);
        assert!(m.step(&dvector![0.0], &dvector![0.0, 0.0], None).is_err());
        assert!(m.step(&dvector![0.0, 0.0], &dvector![0.0], None).is_err());
    }

    #[test]
    fn saturation() {
        let m = si(0.05);
        assert_eq!(m.clamp_control(&dvector![7.0, -9.0]), dvector![5.0, -5.0]);
        assert_eq!(m.clamp_control(&dvector![3.0, -2.0]), dvector![3.0, -2.0]);
    }

    #[test]
    fn validate_rejects_bad_specs() {
        let mut m = si(0.05);
        assert!(m.validate().is_ok());
        m.dt = 0.0;
        assert!(m.validate().is_err());
        let mut m = si(0.05);
        m.u_min[0] = 6.0;
        assert!(m.validate().is_err());
    }

    #[test]
    fn truncated_disturbance_respects_bound() {
        let d = DisturbanceSpec {
            sigma2: 100.0,
            bound: Some(3.0),
        };
        let mut rng = stream(11, Domain::Disturbance, 0, 0);
        let max = (0..1_000_000)
            .map(|_| d.sample_scalar(&mut rng).abs())
            .fold(0.0, f64::max);
        assert!(max <= 3.0);
        assert!(max > 2.9);
    }

    struct Proportional(f64);
    impl FeedbackLaw for Proportional {
        fn feedback(&self, _k: usize, x: &[f64], xn: &[f64], out: &mut [f64]) {
            for i in 0..out.len() {
                out[i] = self.0 * (xn[i] - x[i]);
            }
        }
    }

    fn random_inputs(seed: u64, horizon: usize, sigma: f64) -> (Vec<Control>, Vec<Control>, Vec<DVector<f64>>) {
        let mut rng = stream(seed, Domain::Sampling, 0, 0);
        let mut draw = |s: f64| s * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
        let u = (0..horizon).map(|_| dvector![draw(2.0), draw(2.0)]).collect();
        let e = (0..horizon).map(|_| dvector![draw(1.0), draw(1.0)]).collect();
        let w = (0..horizon).map(|_| dvector![draw(sigma), draw(sigma)]).collect();
        (u, e, w)
    }

    #[test]
    fn identical_pair_without_disturbance() {
        let m = si(0.05);
        let (u, e, _) = random_inputs(3, 40, 0.0);
        let w = vec![DVector::zeros(2); 40];
        let x0 = dvector![1.0, 2.0];
        let r = rollout_pair(&m, &x0, &x0, &u, &e, &Proportional(10.0), &w).unwrap();
        assert_eq!(r.real, r.nominal);
        assert!(r.feedback.iter().all(|f| f.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn decoupled_pair_without_feedback() {
        let m = si(0.05);
        let (u, e, _) = random_inputs(4, 30, 0.0);
        let w = vec![DVector::zeros(2); 30];
        let (a, b) = (dvector![0.0, 0.0], dvector![3.0, -1.0]);
        let r = rollout_pair(&m, &a, &b, &u, &e, &NoFeedback, &w).unwrap();
        let ra = rollout_pair(&m, &a, &a, &u, &e, &NoFeedback, &w).unwrap();
        let rb = rollout_pair(&m, &b, &b, &u, &e, &NoFeedback, &w).unwrap();
        assert_eq!(r.real, ra.real);
        assert_eq!(r.nominal, rb.nominal);
    }

    #[test]
    fn nominal_ignores_disturbance_and_length_checked() {
        let m = si(0.05);
        let (u, e, w) = random_inputs(5, 20, 3.0);
        let zero = vec![DVector::zeros(2); 20];
        let x0 = dvector![0.0, 0.0];
        let a = rollout_pair(&m, &x0, &x0, &u, &e, &NoFeedback, &w).unwrap();
        let b = rollout_pair(&m, &x0, &x0, &u, &e, &NoFeedback, &zero).unwrap();
        assert_eq!(a.nominal, b.nominal);
        assert_ne!(a.real, b.real);
        assert!(rollout_pair(&m, &x0, &x0, &u, &e[..19], &NoFeedback, &w).is_err());
    }

    proptest! {
        #[test]
        fn clamp_is_idempotent_and_boxed(a in -50.0..50.0f64, b in -50.0..50.0f64) {
            let m = si(0.05);
            let once = m.clamp_control(&dvector![a, b]);
            prop_assert_eq!(m.clamp_control(&once), once.clone());
            prop_assert!(once.iter().all(|v| v.abs() <= 5.0));
        }

        #[test]
        fn rollout_is_deterministic_and_saturated(seed in 0u64..1000) {
            let m = si(0.05);
            let (u, e, w) = random_inputs(seed, 25, 4.0);
            let x0 = dvector![0.0, 0.0];
            let xn = dvector![0.5, 0.5];
            let a = rollout_pair(&m, &x0, &xn, &u, &e, &Proportional(30.0), &w).unwrap();
            let b = rollout_pair(&m, &x0, &xn, &u, &e, &Proportional(30.0), &w).unwrap();
            prop_assert_eq!(&a.real, &b.real);
            prop_assert_eq!(&a.nominal, &b.nominal);
            prop_assert!(a.applied.iter().all(|c| c.iter().all(|v| v.abs() <= 5.0)));
        }
    }
}
