//! MPPI on the safety embedded model (BaS-MPPI) and the safety augmented
//! importance sampler with its MPC loop (SA-RMPPI).

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::barrier::EmbeddedModel;
use crate::cost::{estimate_local_lipschitz, CostSpec};
use crate::dynamics::{Control, State};
use crate::error::{check_dim, Error, Result};
use crate::femonitor::{estimate_e_m_v, free_energy_mc, lemma1_bound, tube_radius, BoundInputs, FreeEnergyReport};
use crate::rng::{mix, stream, Domain};
use crate::trajopt::{ilqg_solve, IlqgOptions, LinearFeedback, StateCostObjective, TrajOptSolution, TrajOptSpec};

/// Which state seeds the nominal system at the next MPC step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NominalUpdate {
    /// The measured real state when its free energy stays below `α`,
    /// otherwise the propagated nominal state.
    BestOf,
    /// Always reset to the measured state.
    Real,
    /// Always keep the propagated nominal state.
    Nominal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MonitorSpec {
    pub enabled: bool,
    pub n_boot: usize,
    pub n_probe: usize,
    pub radius_floor: f64,
    /// Overrides the estimated tube radius.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_radius: Option<f64>,
}

impl Default for MonitorSpec {
    fn default() -> Self {
        Self {
            enabled: true,
            n_boot: 200,
            n_probe: 8,
            radius_floor: 1e-3,
            fixed_radius: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerSpec {
    pub n_samples: usize,
    pub horizon: usize,
    pub lambda: f64,
    #[serde(with = "crate::cost::rows")]
    pub sigma: DMatrix<f64>,
    /// Fixed cost threshold `α`. When absent, `α = alpha_scale` times the
    /// cost of the current nominal plan.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_thresh: Option<f64>,
    pub alpha_scale: f64,
    pub beta_mix: f64,
    pub nominal_update: NominalUpdate,
    #[serde(default)]
    pub monitor: MonitorSpec,
}

impl Default for SamplerSpec {
    fn default() -> Self {
        Self {
            n_samples: 128,
            horizon: 100,
            lambda: 1.0,
            sigma: DMatrix::identity(2, 2) * 4.0,
            alpha_thresh: None,
            alpha_scale: 2.0,
            beta_mix: 0.0,
            nominal_update: NominalUpdate::BestOf,
            monitor: MonitorSpec::default(),
        }
    }
}

impl SamplerSpec {
    pub fn validate(&self, m: usize) -> Result<()> {
        let bad = |s: &str| Err(Error::InvalidConfig(s.into()));
        if self.n_samples == 0 || self.horizon == 0 {
            return bad("sample count and horizon must be positive");
        }
        if !(self.lambda > 0.0) {
            return bad("lambda must be positive");
        }
        check_dim("sigma rows", m, self.sigma.nrows())?;
        check_dim("sigma cols", m, self.sigma.ncols())?;
        if self.sigma.clone().cholesky().is_none() {
            return bad("sigma must be positive definite");
        }
        if !(0.0..1.0).contains(&self.beta_mix) {
            return bad("beta_mix must lie in [0, 1)");
        }
        Ok(())
    }

    fn chol(&self) -> DMatrix<f64> {
        self.sigma.clone().cholesky().expect("validated").l()
    }

    fn sigma_inv(&self) -> DMatrix<f64> {
        self.sigma.clone().try_inverse().expect("validated")
    }
}

/// One batch of `N` rollouts.
#[derive(Clone, Debug)]
pub struct RolloutBatch {
    pub n_samples: usize,
    pub horizon: usize,
    pub m: usize,
    /// `N × T × m`, sample-major.
    pub noise: Vec<f64>,
    /// Nominal-system cost-to-go `S_n`.
    pub s: Vec<f64>,
    /// Feedback rollout cost-to-go `Ŝ_n`.
    pub s_hat: Vec<f64>,
    pub s_real: Vec<f64>,
    /// `½S + ½max(min(Ŝ, α), S)` before the control coupling.
    pub s_blend: Vec<f64>,
    /// Blend plus control coupling; the weighting cost.
    pub s_nom: Vec<f64>,
    /// The real (feedback) rollout left the safe set.
    pub crash: Vec<bool>,
    pub nominal_crash: Vec<bool>,
    /// `max_k ‖x_k − x*_k‖` per sample.
    pub max_deviation: Vec<f64>,
}

impl RolloutBatch {
    pub fn eps(&self, n: usize, k: usize) -> &[f64] {
        let base = (n * self.horizon + k) * self.m;
        &self.noise[base..base + self.m]
    }
}

/// Normalized `exp(−(S − min S)/λ)`.
pub fn mppi_weights(costs: &[f64], lambda: f64) -> Vec<f64> {
    let min = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let mut w: Vec<f64> = costs.iter().map(|s| (-(s - min) / lambda).exp()).collect();
    let z: f64 = w.iter().sum();
    for wi in &mut w {
        *wi /= z;
    }
    w
}

/// `u_k ← u_k + Σ_n w_n ε_k^n`.
pub fn mppi_update(controls: &mut [Control], batch: &RolloutBatch, weights: &[f64]) {
    for (k, u) in controls.iter_mut().enumerate().take(batch.horizon) {
        for (n, w) in weights.iter().enumerate() {
            if *w == 0.0 {
                continue;
            }
            let e = batch.eps(n, k);
            for j in 0..batch.m {
                u[j] += w * e[j];
            }
        }
    }
}

/// Receding-horizon shift with the last control repeated.
pub fn shift_controls(controls: &mut [Control]) {
    if controls.len() > 1 {
        controls.rotate_left(1);
        let last = controls.len() - 1;
        controls[last] = controls[last - 1].clone();
    }
}

fn quad(m: &DMatrix<f64>, a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.len() {
        for j in 0..b.len() {
            acc += a[i] * m[(i, j)] * b[j];
        }
    }
    acc
}

struct SampleOut {
    s: f64,
    s_hat: f64,
    s_real: f64,
    coupling: f64,
    crash: bool,
    nominal_crash: bool,
    max_dev: f64,
}

struct Kernel<'a> {
    emb: &'a EmbeddedModel,
    cost: &'a CostSpec,
    spec: &'a SamplerSpec,
    chol: DMatrix<f64>,
    sigma_inv: DMatrix<f64>,
    controls: &'a [Control],
}

/// Running cost of a post-step state, flagging exits.
#[inline]
fn step_cost(kern: &Kernel, k: usize, xa: &mut [f64], crashed: &mut bool) -> f64 {
    let n = kern.emb.n();
    let (x, beta) = xa.split_at_mut(n);
    let min_h = kern.emb.beta_capped_min_h(x, beta);
    let safe = !kern.emb.exits(min_h);
    if !safe {
        *crashed = true;
    }
    kern.cost.running_cost(k, x, beta, safe)
}

impl Kernel<'_> {
    fn run(
        &self,
        x0: &[f64],
        x0_nominal: &[f64],
        feedback: Option<&LinearFeedback>,
        rng: &mut rand_chacha::ChaCha8Rng,
        noise: &mut [f64],
    ) -> SampleOut {
        let emb = self.emb;
        let model = &emb.model;
        let (n, m) = (emb.n(), emb.m());
        let na = emb.n_aug();
        let horizon = self.spec.horizon;
        let coef = 0.5 * self.spec.lambda * (1.0 - self.spec.beta_mix);
        let cap = emb.barrier.cap;

        let mut xs = vec![0.0; na];
        xs[..n].copy_from_slice(x0_nominal);
        emb.beta_capped_min_h(x0_nominal, &mut xs[n..]);
        let mut xr = vec![0.0; na];
        xr[..n].copy_from_slice(x0);
        emb.beta_capped_min_h(x0, &mut xr[n..]);
        let mut next = vec![0.0; n];
        let mut z = vec![0.0; m];
        let mut un = vec![0.0; m];
        let mut ur = vec![0.0; m];
        let mut kfb = vec![0.0; m];

        let (mut s, mut s_hat, mut s_real, mut coupling) = (0.0, 0.0, 0.0, 0.0);
        let (mut ncrash, mut rcrash) = (false, false);
        let mut max_dev: f64 = 0.0;
        let coincident = x0 == x0_nominal;
        let mut qn = 0.0;

        for k in 0..horizon {
            let u = self.controls[k].as_slice();
            for zi in z.iter_mut() {
                *zi = StandardNormal.sample(rng);
            }
            let eps = &mut noise[k * m..(k + 1) * m];
            for i in 0..m {
                eps[i] = (0..=i).map(|j| self.chol[(i, j)] * z[j]).sum();
            }
            coupling += quad(&self.sigma_inv, u, u) + 2.0 * quad(&self.sigma_inv, u, eps);

            if let Some(fb) = feedback {
                if !rcrash && !coincident {
                    fb.feedback_augmented(k, &xr, &xs, &mut kfb);
                }
            }

            if !ncrash {
                for i in 0..m {
                    un[i] = u[i] + eps[i];
                }
                model.clamp_in_place(&mut un);
                model.step_into(&xs[..n], &un, None, &mut next);
                xs[..n].copy_from_slice(&next);
                qn = step_cost(self, k + 1, &mut xs, &mut ncrash);
                s += qn;
            }

            if feedback.is_some() && !rcrash {
                let q = if coincident {
                    kfb.fill(0.0);
                    xr.copy_from_slice(&xs);
                    rcrash = ncrash;
                    qn
                } else {
                    for i in 0..m {
                        ur[i] = u[i] + eps[i] + kfb[i];
                    }
                    model.clamp_in_place(&mut ur);
                    model.step_into(&xr[..n], &ur, None, &mut next);
                    xr[..n].copy_from_slice(&next);
                    step_cost(self, k + 1, &mut xr, &mut rcrash)
                };
                let fb_cost = coef * quad(&self.sigma_inv, &kfb, &kfb);
                let mut a = [0.0; 8];
                let mut b = [0.0; 8];
                for i in 0..m {
                    a[i] = u[i] + kfb[i];
                    b[i] = u[i] + 2.0 * eps[i] + kfb[i];
                }
                let real_cost = coef * quad(&self.sigma_inv, &a[..m], &b[..m]);
                s_hat += q + fb_cost;
                s_real += q + real_cost;
                let dev: f64 = (0..n).map(|i| (xr[i] - xs[i]).powi(2)).sum::<f64>().sqrt();
                max_dev = max_dev.max(dev);
            }
        }

        if !ncrash {
            let (x, beta) = xs.split_at(n);
            s += self.cost.terminal_cost(x, beta, true);
        } else {
            s += cap;
        }
        if feedback.is_some() {
            if !rcrash {
                let (x, beta) = xr.split_at(n);
                let phi = self.cost.terminal_cost(x, beta, true);
                s_hat += phi;
                s_real += phi;
            } else {
                s_hat += cap;
                s_real += cap;
            }
        } else {
            s_hat = s;
            s_real = s;
            rcrash = ncrash;
        }
        SampleOut {
            s,
            s_hat,
            s_real,
            coupling: 0.5 * self.spec.lambda * coupling,
            crash: rcrash,
            nominal_crash: ncrash,
            max_dev,
        }
    }
}

/// Seed of the sampling streams for one MPC step.
pub fn step_seed(seed: u64, step: u64) -> u64 {
    mix(seed, step)
}

#[allow(clippy::too_many_arguments)]
fn sample_batch(
    emb: &EmbeddedModel,
    cost: &CostSpec,
    spec: &SamplerSpec,
    x0: &State,
    x0_nominal: &State,
    controls: &[Control],
    feedback: Option<&LinearFeedback>,
    alpha: f64,
    seed: u64,
) -> Result<RolloutBatch> {
    spec.validate(emb.m())?;
    check_dim("state", emb.n(), x0.len())?;
    check_dim("nominal state", emb.n(), x0_nominal.len())?;
    if controls.len() < spec.horizon {
        return Err(Error::Length {
            what: "control sequence",
            expected: spec.horizon,
            got: controls.len(),
        });
    }
    let kern = Kernel {
        emb,
        cost,
        spec,
        chol: spec.chol(),
        sigma_inv: spec.sigma_inv(),
        controls,
    };
    let (n_samples, horizon, m) = (spec.n_samples, spec.horizon, emb.m());
    let mut noise = vec![0.0; n_samples * horizon * m];
    let outs: Vec<SampleOut> = noise
        .par_chunks_mut(horizon * m)
        .enumerate()
        .map(|(i, chunk)| {
            let mut rng = stream(seed, Domain::Sampling, 0, i as u64);
            kern.run(x0.as_slice(), x0_nominal.as_slice(), feedback, &mut rng, chunk)
        })
        .collect();

    let mut batch = RolloutBatch {
        n_samples,
        horizon,
        m,
        noise,
        s: Vec::with_capacity(n_samples),
        s_hat: Vec::with_capacity(n_samples),
        s_real: Vec::with_capacity(n_samples),
        s_blend: Vec::with_capacity(n_samples),
        s_nom: Vec::with_capacity(n_samples),
        crash: Vec::with_capacity(n_samples),
        nominal_crash: Vec::with_capacity(n_samples),
        max_deviation: Vec::with_capacity(n_samples),
    };
    for o in outs {
        let blend = if feedback.is_some() { blend_cost(o.s, o.s_hat, alpha) } else { o.s };
        batch.s.push(o.s);
        batch.s_hat.push(o.s_hat);
        batch.s_real.push(o.s_real);
        batch.s_blend.push(blend);
        batch.s_nom.push(blend + o.coupling);
        batch.crash.push(o.crash);
        batch.nominal_crash.push(o.nominal_crash);
        batch.max_deviation.push(o.max_dev);
    }
    Ok(batch)
}

/// `½S + ½max(min(Ŝ, α), S)`.
#[inline]
pub fn blend_cost(s: f64, s_hat: f64, alpha: f64) -> f64 {
    0.5 * s + 0.5 * s_hat.min(alpha).max(s)
}

/// Plain rollouts of the embedded model from `x̄0` (no feedback, no
/// nominal system). `S_nom` holds `S` plus the control coupling.
pub fn bas_mppi_batch(
    emb: &EmbeddedModel,
    cost: &CostSpec,
    spec: &SamplerSpec,
    x0: &State,
    controls: &[Control],
    seed: u64,
) -> Result<RolloutBatch> {
    sample_batch(emb, cost, spec, x0, x0, controls, None, f64::INFINITY, seed)
}

/// The dual-system sampler: nominal rollouts from `x0_nominal` without
/// feedback and real rollouts from `x0` under `feedback`, sharing noise.
#[allow(clippy::too_many_arguments)]
pub fn sais(
    emb: &EmbeddedModel,
    cost: &CostSpec,
    spec: &SamplerSpec,
    feedback: &LinearFeedback,
    x0: &State,
    x0_nominal: &State,
    controls: &[Control],
    alpha: f64,
    seed: u64,
) -> Result<RolloutBatch> {
    sample_batch(emb, cost, spec, x0, x0_nominal, controls, Some(feedback), alpha, seed)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// Single-system sampling.
    Plain,
    /// Nominal system kept on its propagated state.
    Nominal,
    /// Nominal system reset to the measured state.
    Real,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepDiagnostics {
    pub s_nom_min: f64,
    pub s_nom_mean: f64,
    pub s_nom_max: f64,
    /// `1/Σw²`.
    pub ess: f64,
    pub crash_frac: f64,
    pub all_crashed: bool,
    pub argmax: usize,
    pub branch: Branch,
}

fn diagnostics(batch: &RolloutBatch, weights: &[f64], branch: Branch) -> StepDiagnostics {
    let n = batch.n_samples as f64;
    let crashes = batch.crash.iter().filter(|c| **c).count();
    let argmax = weights
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, w)| if *w > acc.1 { (i, *w) } else { acc })
        .0;
    StepDiagnostics {
        s_nom_min: batch.s_nom.iter().copied().fold(f64::INFINITY, f64::min),
        s_nom_mean: batch.s_nom.iter().sum::<f64>() / n,
        s_nom_max: batch.s_nom.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        ess: 1.0 / weights.iter().map(|w| w * w).sum::<f64>(),
        crash_frac: crashes as f64 / n,
        all_crashed: batch.nominal_crash.iter().all(|c| *c),
        argmax,
        branch,
    }
}

/// Weighted update of `U` from `S_nom`, then saturation. All-crashed
/// batches leave `U` untouched.
fn update_with(
    emb: &EmbeddedModel,
    spec: &SamplerSpec,
    controls: &mut [Control],
    batch: &RolloutBatch,
    branch: Branch,
) -> StepDiagnostics {
    let weights = mppi_weights(&batch.s_nom, spec.lambda);
    let diag = diagnostics(batch, &weights, branch);
    if !diag.all_crashed {
        mppi_update(controls, batch, &weights);
        for u in controls.iter_mut() {
            emb.model.clamp_in_place(u.as_mut_slice());
        }
    }
    diag
}

#[derive(Clone, Debug)]
pub struct BasStep {
    /// Control to execute.
    pub control: Control,
    pub diagnostics: StepDiagnostics,
    pub batch: RolloutBatch,
}

/// One BaS-MPPI iteration from `x0`: sample, reweight, update, then shift
/// `controls` for the next step.
pub fn bas_mppi_step(
    emb: &EmbeddedModel,
    cost: &CostSpec,
    spec: &SamplerSpec,
    x0: &State,
    controls: &mut [Control],
    seed: u64,
) -> Result<BasStep> {
    let batch = bas_mppi_batch(emb, cost, spec, x0, controls, seed)?;
    let diagnostics = update_with(emb, spec, controls, &batch, Branch::Plain);
    let control = emb.model.clamp_control(&controls[0]);
    shift_controls(controls);
    Ok(BasStep {
        control,
        diagnostics,
        batch,
    })
}

/// Receding-horizon BaS-MPPI controller state.
#[derive(Clone, Debug)]
pub struct BasMppi {
    pub emb: EmbeddedModel,
    pub cost: CostSpec,
    pub spec: SamplerSpec,
    pub controls: Vec<Control>,
}

impl BasMppi {
    pub fn new(emb: &EmbeddedModel, cost: &CostSpec, spec: &SamplerSpec) -> Result<Self> {
        spec.validate(emb.m())?;
        Ok(Self {
            emb: emb.clone(),
            cost: cost.clone(),
            spec: spec.clone(),
            controls: vec![Control::zeros(emb.m()); spec.horizon],
        })
    }

    pub fn step(&mut self, x: &State, seed: u64, step: u64) -> Result<BasStep> {
        bas_mppi_step(&self.emb, &self.cost, &self.spec, x, &mut self.controls, step_seed(seed, step))
    }
}

/// Sampler-units cost of a plan: post-step running costs plus terminal cost.
pub fn plan_cost(emb: &EmbeddedModel, cost: &CostSpec, plan: &TrajOptSolution) -> f64 {
    let n = emb.n();
    let horizon = plan.horizon();
    let mut total = 0.0;
    for k in 1..=horizon {
        let x = plan.states[k].as_slice();
        let (xs, beta) = x.split_at(n);
        total += cost.running_cost(k, xs, beta, true);
    }
    let x = plan.states[horizon].as_slice();
    let (xs, beta) = x.split_at(n);
    total + cost.terminal_cost(xs, beta, true)
}

#[derive(Clone, Debug)]
pub struct SaStep {
    /// Control to execute (saturated).
    pub control: Control,
    /// Feedback part of `control` before saturation.
    pub feedback: Control,
    pub diagnostics: StepDiagnostics,
    pub report: Option<FreeEnergyReport>,
    pub alpha: f64,
    /// Nominal state the step was computed about.
    pub x_nominal: State,
    pub batch: RolloutBatch,
}

/// Receding-horizon SA-RMPPI controller state: the nominal state, the
/// importance-sampling sequence and the iLQG plan supplying the feedback.
#[derive(Clone, Debug)]
pub struct SaRmppi {
    pub emb: EmbeddedModel,
    pub cost: CostSpec,
    pub spec: SamplerSpec,
    pub trajopt: TrajOptSpec,
    pub x_nominal: State,
    pub controls: Vec<Control>,
    pub plan: TrajOptSolution,
    objective: StateCostObjective,
    prev_f_real: Option<f64>,
}

impl SaRmppi {
    pub fn new(emb: &EmbeddedModel, cost: &CostSpec, spec: &SamplerSpec, trajopt: &TrajOptSpec, x0: &State) -> Result<Self> {
        spec.validate(emb.m())?;
        let objective = StateCostObjective::new(cost, trajopt.control_weight, emb.m(), emb.n_beta());
        let zeros = vec![Control::zeros(emb.m()); spec.horizon];
        let mut opts = trajopt.ilqg.clone();
        opts.control_bounds = Some((emb.model.u_min.clone(), emb.model.u_max.clone()));
        let plan = ilqg_solve(emb, &objective, &emb.augment(x0)?, &zeros, &opts)?;
        let controls = plan.controls.iter().map(|u| emb.model.clamp_control(u)).collect();
        Ok(Self {
            emb: emb.clone(),
            cost: cost.clone(),
            spec: spec.clone(),
            trajopt: trajopt.clone(),
            x_nominal: x0.clone(),
            controls,
            plan,
            objective,
            prev_f_real: None,
        })
    }

    fn resolve_options(&self) -> IlqgOptions {
        let mut opts = self.trajopt.ilqg.clone();
        opts.max_iters = self.trajopt.resolve_iters;
        opts.control_bounds = Some((self.emb.model.u_min.clone(), self.emb.model.u_max.clone()));
        opts
    }

    fn feedback_law(&self) -> LinearFeedback {
        LinearFeedback {
            gains: self.plan.gains.clone(),
            embedding: None,
            physical_only: self.trajopt.physical_only,
        }
    }

    /// Threshold `α` for the current plan.
    pub fn alpha(&self) -> f64 {
        self.spec
            .alpha_thresh
            .unwrap_or_else(|| self.spec.alpha_scale * plan_cost(&self.emb, &self.cost, &self.plan))
    }

    /// Re-solves the plan about the current nominal state, warm-started from
    /// `controls`; keeps the shifted previous plan if the solve fails.
    fn resolve(&mut self) -> Result<()> {
        let xbar = self.emb.augment(&self.x_nominal)?;
        let opts = self.resolve_options();
        let warm: Vec<Control> = self.controls.iter().map(|u| self.emb.model.clamp_control(u)).collect();
        match ilqg_solve(&self.emb, &self.objective, &xbar, &warm, &opts) {
            Ok(plan) => self.plan = plan,
            Err(_) => {
                let fallback: Vec<Control> = self.plan.controls.clone();
                if let Ok(plan) = ilqg_solve(&self.emb, &self.objective, &xbar, &fallback, &opts) {
                    self.plan = plan;
                } else {
                    let zeros = vec![Control::zeros(self.emb.m()); self.spec.horizon];
                    self.plan = ilqg_solve(&self.emb, &self.objective, &xbar, &zeros, &opts)?;
                }
            }
        }
        Ok(())
    }

    pub fn step(&mut self, x_real: &State, seed: u64, step: u64) -> Result<SaStep> {
        let lambda = self.spec.lambda;
        let alpha = self.alpha();
        let sseed = step_seed(seed, step);
        let fb = self.feedback_law();
        let (emb, cost, spec) = (&self.emb, &self.cost, &self.spec);

        let mut batch = sais(emb, cost, spec, &fb, x_real, &self.x_nominal, &self.controls, alpha, sseed)?;
        let mut branch = Branch::Nominal;
        if *x_real != self.x_nominal {
            let adopt = match spec.nominal_update {
                NominalUpdate::Nominal => None,
                NominalUpdate::Real => Some(sais(emb, cost, spec, &fb, x_real, x_real, &self.controls, alpha, sseed)?),
                NominalUpdate::BestOf => {
                    let real = sais(emb, cost, spec, &fb, x_real, x_real, &self.controls, alpha, sseed)?;
                    (free_energy_mc(&real.s_blend, lambda) <= alpha).then_some(real)
                }
            };
            if let Some(real) = adopt {
                batch = real;
                branch = Branch::Real;
                self.x_nominal = x_real.clone();
                self.resolve()?;
            }
        }
        let x_nominal = self.x_nominal.clone();

        let diagnostics = update_with(&self.emb, &self.spec, &mut self.controls, &batch, branch);
        let report = self.monitor(&batch, x_real, alpha, seed, step)?;

        let emb = &self.emb;
        let u0 = emb.model.clamp_control(&self.controls[0]);
        let mut kfb = Control::zeros(emb.m());
        let xr = emb.augment_capped(x_real);
        let xn = emb.augment_capped(&self.x_nominal);
        self.feedback_law()
            .feedback_augmented(0, xr.as_slice(), xn.as_slice(), kfb.as_mut_slice());
        let control = emb.model.clamp_control(&(&self.controls[0] + &kfb));

        self.x_nominal = emb.model.step(&self.x_nominal, &u0, None)?;
        shift_controls(&mut self.controls);
        self.resolve()?;

        Ok(SaStep {
            control,
            feedback: kfb,
            diagnostics,
            report,
            alpha,
            x_nominal,
            batch,
        })
    }

    fn monitor(&mut self, batch: &RolloutBatch, x_real: &State, alpha: f64, seed: u64, step: u64) -> Result<Option<FreeEnergyReport>> {
        let mon = &self.spec.monitor;
        if !mon.enabled {
            return Ok(None);
        }
        let lambda = self.spec.lambda;
        let f_real = free_energy_mc(&batch.s_real, lambda);
        let f_nominal = free_energy_mc(&batch.s, lambda);
        let e_m_v = estimate_e_m_v(&batch.s_real, lambda, mon.n_boot, mix(seed, step));
        let radius = mon
            .fixed_radius
            .unwrap_or_else(|| tube_radius(&batch.max_deviation, mon.radius_floor));
        let n = self.emb.n();
        let nominal: Vec<State> = self.plan.states.iter().map(|x| x.rows(0, n).into_owned()).collect();
        let (l_q, l_phi) = match estimate_local_lipschitz(&self.cost, &self.emb, &nominal, radius, mon.n_probe, mix(seed, step ^ 0x5a5a)) {
            Ok(est) => (est.l_q, est.l_phi),
            Err(Error::EmptyTube) => (f64::INFINITY, f64::INFINITY),
            Err(e) => return Err(e),
        };
        let u0 = self.emb.model.clamp_control(&self.controls[0]);
        let moved = self.emb.model.step(x_real, &u0, None)?;
        let d = match self.emb.model.disturbance.bound {
            Some(b) => b,
            None => 3.0 * self.emb.model.disturbance.sigma2.sqrt(),
        };
        let d_f = (&moved - x_real).norm() + (&self.x_nominal - x_real).norm() + d;
        let (bound_proof, bound_stated) = lemma1_bound(&BoundInputs {
            f_nominal,
            alpha,
            e_m_v,
            l_q,
            l_phi,
            radius,
            horizon: self.spec.horizon,
            d_f,
        });
        let delta_f_real = self.prev_f_real.map(|p| f_real - p);
        self.prev_f_real = Some(f_real);
        Ok(Some(FreeEnergyReport {
            f_real,
            f_nominal,
            e_m_v,
            radius,
            l_q,
            l_phi,
            d_f,
            alpha,
            bound_proof,
            bound_stated,
            delta_f_real,
        }))
    }
}

/// Free energy of the plain batch, for single-system logs.
pub fn batch_free_energy(batch: &RolloutBatch, lambda: f64) -> f64 {
    free_energy_mc(&batch.s, lambda)
}
