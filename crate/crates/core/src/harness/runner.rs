use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::config::{Config, ControllerId};
use super::scenario::Scenario;
use crate::barrier::{embed, EmbeddedModel};
use crate::cbf::{self, CbfSpec};
use crate::cost::CostSpec;
use crate::dynamics::{Control, DisturbanceSpec, ModelSpec, State};
use crate::error::{Error, Result};
use crate::femonitor::FreeEnergyReport;
use crate::rng::{stream, Domain};
use crate::sampler::{shift_controls, BasMppi, Branch, SaRmppi, SamplerSpec, StepDiagnostics};
use crate::trajopt::{al_outer_loop, ilqg_solve, AlOptions, IlqgOptions, StateCostObjective, TrajOptSpec};

/// What a controller returns for one step.
#[derive(Clone, Debug)]
pub struct Action {
    pub control: Control,
    pub feedback: Option<Control>,
    pub diagnostics: Option<StepDiagnostics>,
    pub report: Option<FreeEnergyReport>,
    pub alpha: Option<f64>,
    /// Safety-filter feasibility.
    pub feasible: Option<bool>,
}

impl Action {
    fn plain(control: Control) -> Self {
        Self {
            control,
            feedback: None,
            diagnostics: None,
            report: None,
            alpha: None,
            feasible: None,
        }
    }
}

pub trait Controller: Send {
    fn act(&mut self, k: usize, x: &State, seed: u64) -> Result<Action>;
}

struct BasMppiCtl(BasMppi);

impl Controller for BasMppiCtl {
    fn act(&mut self, k: usize, x: &State, seed: u64) -> Result<Action> {
        let out = self.0.step(x, seed, k as u64)?;
        Ok(Action {
            diagnostics: Some(out.diagnostics),
            ..Action::plain(out.control)
        })
    }
}

struct SaRmppiCtl(SaRmppi);

impl Controller for SaRmppiCtl {
    fn act(&mut self, k: usize, x: &State, seed: u64) -> Result<Action> {
        let out = self.0.step(x, seed, k as u64)?;
        Ok(Action {
            control: out.control,
            feedback: Some(out.feedback),
            diagnostics: Some(out.diagnostics),
            report: out.report,
            alpha: Some(out.alpha),
            feasible: None,
        })
    }
}

fn bounded(opts: &IlqgOptions, model: &ModelSpec) -> IlqgOptions {
    let mut o = opts.clone();
    o.control_bounds = Some((model.u_min.clone(), model.u_max.clone()));
    o
}

/// Receding-horizon iLQG on the embedded model, warm-started each step.
struct IlqgMpc {
    emb: EmbeddedModel,
    objective: StateCostObjective,
    first: IlqgOptions,
    resolve: IlqgOptions,
    controls: Vec<Control>,
    started: bool,
}

impl Controller for IlqgMpc {
    fn act(&mut self, _k: usize, x: &State, _seed: u64) -> Result<Action> {
        let opts = if self.started { &self.resolve } else { &self.first };
        let plan = ilqg_solve(&self.emb, &self.objective, &self.emb.augment(x)?, &self.controls, opts)?;
        self.started = true;
        let u = self.emb.model.clamp_control(&plan.controls[0]);
        self.controls = plan.controls;
        shift_controls(&mut self.controls);
        Ok(Action::plain(u))
    }
}

/// Receding-horizon augmented-Lagrangian iLQG on the plain model.
struct AlMpc {
    model: ModelSpec,
    field: crate::barrier::ObstacleField,
    objective: StateCostObjective,
    first: AlOptions,
    resolve: AlOptions,
    controls: Vec<Control>,
    started: bool,
}

impl Controller for AlMpc {
    fn act(&mut self, _k: usize, x: &State, _seed: u64) -> Result<Action> {
        let opts = if self.started { &self.resolve } else { &self.first };
        let res = al_outer_loop(&self.model, &self.objective, &self.field, x, &self.controls, opts)?;
        self.started = true;
        let u = self.model.clamp_control(&res.solution.controls[0]);
        self.controls = res.solution.controls;
        shift_controls(&mut self.controls);
        Ok(Action::plain(u))
    }
}

/// Saturated proportional go-to-goal law behind the CBF filter.
struct CbfCtl {
    model: ModelSpec,
    field: crate::barrier::ObstacleField,
    spec: CbfSpec,
    goal: State,
    gain: f64,
}

impl Controller for CbfCtl {
    fn act(&mut self, _k: usize, x: &State, _seed: u64) -> Result<Action> {
        let u_nom = self.model.clamp_control(&((&self.goal - x).rows(0, 2).into_owned() * self.gain));
        let out = cbf::filter(&self.spec, &self.model, &self.field, x, &u_nom)?;
        Ok(Action {
            feasible: Some(out.feasible),
            ..Action::plain(out.control)
        })
    }
}

/// Everything a trial needs besides its seed.
#[derive(Clone, Debug)]
pub struct TrialSetup {
    pub model: ModelSpec,
    pub emb: EmbeddedModel,
    pub cost: CostSpec,
    pub sampler: SamplerSpec,
    pub trajopt: TrajOptSpec,
    pub cbf: CbfSpec,
    pub start: State,
    pub goal: State,
    pub max_steps: usize,
    pub settle_steps: usize,
    pub reach_radius: f64,
}

impl TrialSetup {
    pub fn new(cfg: &Config, scenario: &Scenario, sigma2: f64) -> Self {
        let model = scenario.model.clone().with_disturbance(DisturbanceSpec {
            sigma2,
            ..cfg.model.disturbance.clone()
        });
        let emb = embed(&model, &scenario.field, &cfg.barrier);
        let cost = cfg.cost.spec(model.n(), scenario.goal.as_slice());
        Self {
            model,
            emb,
            cost,
            sampler: cfg.sampler.clone(),
            trajopt: cfg.trajopt.clone(),
            cbf: cfg.run.cbf.clone(),
            start: scenario.start.clone(),
            goal: scenario.goal.clone(),
            max_steps: scenario.horizon,
            settle_steps: cfg.scenario.settle_steps,
            reach_radius: cfg.scenario.reach_radius,
        }
    }

    pub fn controller(&self, id: ControllerId) -> Result<Box<dyn Controller>> {
        let m = self.model.m();
        let horizon = self.sampler.horizon;
        Ok(match id {
            ControllerId::BasMppi => Box::new(BasMppiCtl(BasMppi::new(&self.emb, &self.cost, &self.sampler)?)),
            ControllerId::SaRmppi => Box::new(SaRmppiCtl(SaRmppi::new(
                &self.emb,
                &self.cost,
                &self.sampler,
                &self.trajopt,
                &self.start,
            )?)),
            ControllerId::BasIlqg => {
                let first = bounded(&self.trajopt.ilqg, &self.model);
                let mut resolve = first.clone();
                resolve.max_iters = self.trajopt.resolve_iters;
                Box::new(IlqgMpc {
                    emb: self.emb.clone(),
                    objective: StateCostObjective::new(&self.cost, self.trajopt.control_weight, m, self.emb.n_beta()),
                    first,
                    resolve,
                    controls: vec![Control::zeros(m); horizon],
                    started: false,
                })
            }
            ControllerId::AlIlqg => {
                let mut first = self.trajopt.al.clone();
                first.inner = bounded(&first.inner, &self.model);
                let mut resolve = first.clone();
                resolve.inner.max_iters = self.trajopt.resolve_iters;
                Box::new(AlMpc {
                    model: self.model.clone(),
                    field: self.emb.field.clone(),
                    objective: StateCostObjective::new(&self.cost, self.trajopt.control_weight, m, 0),
                    first,
                    resolve,
                    controls: vec![Control::zeros(m); horizon],
                    started: false,
                })
            }
            ControllerId::CbfFilter => Box::new(CbfCtl {
                model: self.model.clone(),
                field: self.emb.field.clone(),
                spec: self.cbf.clone(),
                goal: self.goal.clone(),
                gain: 2.0,
            }),
        })
    }
}

/// One logged step. Row `k` holds the state the control was computed at;
/// the final row holds the last executed state and no control.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub k: usize,
    pub x: Vec<f64>,
    pub v_realized: Vec<f64>,
    pub u: Vec<f64>,
    pub k_fb: Vec<f64>,
    pub w: Vec<f64>,
    pub min_h: f64,
    pub beta: f64,
    pub s_nom_min: Option<f64>,
    pub ess: Option<f64>,
    pub crash_frac: Option<f64>,
    pub branch: Option<Branch>,
    pub alpha: Option<f64>,
    pub feasible: Option<bool>,
    pub report: Option<FreeEnergyReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunRecord {
    pub seed: u64,
    pub controller: ControllerId,
    pub sigma2: f64,
    pub safe: bool,
    pub reached: bool,
    /// Distance from the final state to the goal, in meters.
    pub rmse_to_goal: f64,
    pub steps: usize,
    pub rows: Vec<TraceRow>,
    pub wall_time: f64,
    pub error: Option<String>,
}

fn capped_beta(emb: &EmbeddedModel, x: &[f64]) -> f64 {
    let mut b = vec![0.0; emb.n_beta()];
    emb.beta_capped_into(x, &mut b);
    b.iter().sum()
}

pub fn run_trial(setup: &TrialSetup, id: ControllerId, seed: u64) -> RunRecord {
    let clock = Instant::now();
    let model = &setup.model;
    let emb = &setup.emb;
    let (n, m) = (model.n(), model.m());
    let mut rng = stream(seed, Domain::Disturbance, 0, 0);
    let mut x = setup.start.clone();
    let mut rows = Vec::new();
    let mut safe = emb.field.is_safe(x.as_slice());
    let mut error = None;
    let mut entered: Option<usize> = None;
    let mut w = State::zeros(m);

    let mut ctl = match setup.controller(id) {
        Ok(c) => Some(c),
        Err(e) => {
            error = Some(e.to_string());
            None
        }
    };
    let mut k = 0;
    while let Some(c) = ctl.as_mut().filter(|_| safe && k < setup.max_steps) {
        let act = match c.act(k, &x, seed) {
            Ok(a) => a,
            Err(e) => {
                error = Some(e.to_string());
                break;
            }
        };
        model.sample_disturbance(&mut rng, w.as_mut_slice());
        let next = match model.step(&x, &act.control, Some(&w)) {
            Ok(s) => s,
            Err(e) => {
                error = Some(e.to_string());
                break;
            }
        };
        let v: Vec<f64> = (0..2).map(|i| (next[i] - x[i]) / model.dt).collect();
        rows.push(TraceRow {
            k,
            x: x.iter().copied().collect(),
            v_realized: v,
            u: act.control.iter().copied().collect(),
            k_fb: act.feedback.map_or(vec![0.0; m], |f| f.iter().copied().collect()),
            w: w.iter().copied().collect(),
            min_h: emb.field.min_h(x.as_slice()),
            beta: capped_beta(emb, x.as_slice()),
            s_nom_min: act.diagnostics.as_ref().map(|d| d.s_nom_min),
            ess: act.diagnostics.as_ref().map(|d| d.ess),
            crash_frac: act.diagnostics.as_ref().map(|d| d.crash_frac),
            branch: act.diagnostics.as_ref().map(|d| d.branch),
            alpha: act.alpha,
            feasible: act.feasible,
            report: act.report,
        });
        x = next;
        k += 1;
        safe = emb.field.is_safe(x.as_slice());
        if goal_error(&x, &setup.goal) < setup.reach_radius {
            entered.get_or_insert(k);
        }
        if entered.is_some_and(|k0| k - k0 >= setup.settle_steps) {
            break;
        }
    }
    rows.push(TraceRow {
        k,
        x: x.iter().copied().collect(),
        v_realized: vec![f64::NAN; 2],
        u: vec![f64::NAN; m],
        k_fb: vec![f64::NAN; m],
        w: vec![f64::NAN; m],
        min_h: emb.field.min_h(x.as_slice()),
        beta: capped_beta(emb, x.as_slice()),
        s_nom_min: None,
        ess: None,
        crash_frac: None,
        branch: None,
        alpha: None,
        feasible: None,
        report: None,
    });
    debug_assert_eq!(rows[0].x.len(), n);
    let err = goal_error(&x, &setup.goal);
    RunRecord {
        seed,
        controller: id,
        sigma2: model.disturbance.sigma2,
        safe,
        reached: safe && err < setup.reach_radius,
        rmse_to_goal: err,
        steps: k,
        rows,
        wall_time: clock.elapsed().as_secs_f64(),
        error,
    }
}

pub fn goal_error(x: &State, goal: &State) -> f64 {
    ((x[0] - goal[0]).powi(2) + (x[1] - goal[1]).powi(2)).sqrt()
}

/// Runs one trial per seed, concurrently, returning records in seed order.
pub fn run_monte_carlo(setup: &TrialSetup, id: ControllerId, seeds: &[u64], threads: Option<usize>) -> Result<Vec<RunRecord>> {
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("at least one trial is required".into()));
    }
    let work = || seeds.par_iter().map(|&s| run_trial(setup, id, s)).collect();
    match threads {
        Some(t) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| Error::InvalidConfig(e.to_string()))?;
            Ok(pool.install(work))
        }
        None => Ok(work()),
    }
}
