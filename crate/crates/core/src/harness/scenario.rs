use std::collections::VecDeque;

use rand::Rng;

use super::config::{Config, ScenarioSpec};
use crate::barrier::{Obstacle, ObstacleField};
use crate::dynamics::{ModelSpec, State};
use crate::error::{Error, Result};
use crate::rng::{stream, Domain};

const GRID: f64 = 0.25;
const TRIES_PER_OBSTACLE: usize = 200;

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Grid search for a start-goal path whose points all keep `passage_min / 2`
/// from every obstacle surface and stay inside the arena.
pub fn has_passage(field: &ObstacleField, spec: &ScenarioSpec) -> bool {
    let half = 0.5 * spec.passage_min;
    let nx = (spec.arena[0] / GRID).ceil() as usize + 1;
    let ny = (spec.arena[1] / GRID).ceil() as usize + 1;
    let cell = |p: [f64; 2]| {
        let i = (p[0] / GRID).round().clamp(0.0, (nx - 1) as f64) as usize;
        let j = (p[1] / GRID).round().clamp(0.0, (ny - 1) as f64) as usize;
        (i, j)
    };
    let free = |i: usize, j: usize| {
        let p = [i as f64 * GRID, j as f64 * GRID];
        field.obstacles.iter().all(|o| dist(p, [o.cx, o.cy]) - o.r >= half)
    };
    let (s, g) = (cell(spec.start), cell(spec.goal));
    if !free(s.0, s.1) || !free(g.0, g.1) {
        return false;
    }
    let mut seen = vec![false; nx * ny];
    let mut queue = VecDeque::from([s]);
    seen[s.0 * ny + s.1] = true;
    while let Some((i, j)) = queue.pop_front() {
        if (i, j) == g {
            return true;
        }
        let neighbors = [
            (i.wrapping_sub(1), j),
            (i + 1, j),
            (i, j.wrapping_sub(1)),
            (i, j + 1),
        ];
        for (a, b) in neighbors {
            if a < nx && b < ny && !seen[a * ny + b] && free(a, b) {
                seen[a * ny + b] = true;
                queue.push_back((a, b));
            }
        }
    }
    false
}

/// Rejection-samples `n_obstacles` circles with centers uniform in the arena
/// and radii uniform in `radius_range`, keeping the start and goal more than
/// `clearance` from every surface. A field without a passage is redrawn.
pub fn generate_field(seed: u64, spec: &ScenarioSpec) -> Result<ObstacleField> {
    if !(spec.clearance > 0.0) {
        return Err(Error::InvalidConfig("clearance must be positive".into()));
    }
    if spec.n_obstacles == 0 {
        return Ok(ObstacleField::default());
    }
    let [r_lo, r_hi] = spec.radius_range;
    for attempt in 0..spec.max_attempts.max(1) {
        let mut rng = stream(seed, Domain::Field, attempt as u64, 0);
        let mut obstacles = Vec::with_capacity(spec.n_obstacles);
        'place: for _ in 0..spec.n_obstacles {
            for _ in 0..TRIES_PER_OBSTACLE {
                let c = [rng.random_range(0.0..spec.arena[0]), rng.random_range(0.0..spec.arena[1])];
                let r = if r_hi > r_lo { rng.random_range(r_lo..r_hi) } else { r_lo };
                if dist(c, spec.start) > r + spec.clearance && dist(c, spec.goal) > r + spec.clearance {
                    obstacles.push(Obstacle::new(c[0], c[1], r));
                    continue 'place;
                }
            }
            break;
        }
        if obstacles.len() < spec.n_obstacles {
            continue;
        }
        let field = ObstacleField::new(obstacles);
        if has_passage(&field, spec) {
            return Ok(field);
        }
    }
    Err(Error::GenerationFailed(spec.max_attempts))
}

fn embed_point(model: &ModelSpec, p: [f64; 2]) -> State {
    let mut x = State::zeros(model.n());
    x[0] = p[0];
    x[1] = p[1];
    x
}

/// A navigation problem with the seeds of its trials.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub model: ModelSpec,
    pub field: ObstacleField,
    pub start: State,
    pub goal: State,
    pub reference: Option<Vec<State>>,
    pub sigma2_schedule: Vec<f64>,
    /// Episode cap in steps.
    pub horizon: usize,
    pub seeds: Vec<u64>,
}

impl Scenario {
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let s = &cfg.scenario;
        let field = match &s.obstacles {
            Some(obs) => ObstacleField::new(obs.clone()),
            None => generate_field(s.field_seed, s)?,
        };
        let scenario = Scenario {
            name: s.name.clone(),
            model: cfg.model.clone(),
            field,
            start: embed_point(&cfg.model, s.start),
            goal: embed_point(&cfg.model, s.goal),
            reference: None,
            sigma2_schedule: cfg.run.sweep.clone(),
            horizon: s.max_steps.unwrap_or_else(|| default_episode_steps(&cfg.model, s.start, s.goal)),
            seeds: (0..cfg.run.trials as u64).map(|i| cfg.run.seed + i).collect(),
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<()> {
        self.field.validate()?;
        if !(self.field.min_h(self.start.as_slice()) > 0.0) || !(self.field.min_h(self.goal.as_slice()) > 0.0) {
            return Err(Error::InvalidConfig("start and goal must be strictly safe".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("scenario needs at least one seed".into()));
        }
        Ok(())
    }
}

/// Four times the straight-line travel time at full speed.
pub fn default_episode_steps(model: &ModelSpec, start: [f64; 2], goal: [f64; 2]) -> usize {
    let speed = model.u_max.iter().chain(&model.u_min).fold(f64::INFINITY, |a, b| a.min(b.abs()));
    4 * (dist(start, goal) / (speed * model.dt)).ceil() as usize
}
