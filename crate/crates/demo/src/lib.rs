//! WebAssembly bindings for the browser demo in `www/index.html`.

use wasm_bindgen::prelude::*;

use safe_mppi::harness::{
    reference, run_trial, summarize_tracking, tracking_policy, tracking_run, Config, ControllerId, Scenario,
    TrackingRun, TrialSetup,
};

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn field_config(seed: u64) -> Config {
    let mut cfg = Config::default();
    cfg.scenario.field_seed = seed;
    cfg
}

/// Obstacles of the generated field as flat `[cx, cy, r, ...]`.
#[wasm_bindgen]
pub fn field(seed: u64) -> Result<Vec<f64>, JsError> {
    let scenario = Scenario::from_config(&field_config(seed)).map_err(js_err)?;
    Ok(scenario.field.obstacles.iter().flat_map(|o| [o.cx, o.cy, o.r]).collect())
}

#[wasm_bindgen]
pub struct Episode {
    path: Vec<f64>,
    safe: bool,
    reached: bool,
    final_error: f64,
}

#[wasm_bindgen]
impl Episode {
    /// Positions as flat `[x, y, ...]`.
    #[wasm_bindgen(getter)]
    pub fn path(&self) -> Vec<f64> {
        self.path.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn safe(&self) -> bool {
        self.safe
    }

    #[wasm_bindgen(getter)]
    pub fn reached(&self) -> bool {
        self.reached
    }

    #[wasm_bindgen(getter)]
    pub fn final_error(&self) -> f64 {
        self.final_error
    }
}

/// One navigation episode through the field of `field_seed`.
#[wasm_bindgen]
pub fn episode(
    controller: &str,
    sigma2: f64,
    field_seed: u64,
    seed: u64,
    n_samples: usize,
    horizon: usize,
) -> Result<Episode, JsError> {
    let id: ControllerId = controller.parse().map_err(js_err)?;
    let mut cfg = field_config(field_seed);
    cfg.sampler.n_samples = n_samples.max(1);
    cfg.sampler.horizon = horizon.max(2);
    cfg.validate().map_err(js_err)?;
    let scenario = Scenario::from_config(&cfg).map_err(js_err)?;
    let setup = TrialSetup::new(&cfg, &scenario, sigma2);
    let rec = run_trial(&setup, id, seed);
    if let Some(e) = rec.error {
        return Err(JsError::new(&e));
    }
    Ok(Episode {
        path: rec.rows.iter().flat_map(|r| [r.x[0], r.x[1]]).collect(),
        safe: rec.safe,
        reached: rec.reached,
        final_error: rec.rmse_to_goal,
    })
}

/// Tracking Monte Carlo for one controller. Returns
/// `[violation_pct, reach_pct, failure_pct, cx, cy, r, ref_len, ref..., path_len, path...]`
/// where the paths are flat `[x, y, ...]` and the sample path is trial 0.
#[wasm_bindgen]
pub fn tracking(controller: &str, trials: usize, noise_std: f64) -> Result<Vec<f64>, JsError> {
    let id: ControllerId = controller.parse().map_err(js_err)?;
    let cfg = Config::default();
    let mut spec = cfg.scenario.tracking.clone();
    spec.trials = trials.max(1);
    spec.noise_std = noise_std;
    let policy = tracking_policy(&spec, id, &cfg.barrier, &cfg.trajopt).map_err(js_err)?;
    let runs: Vec<TrackingRun> = (0..spec.trials as u64)
        .map(|t| tracking_run(&spec, &policy, t, t == 0))
        .collect::<Result<_, _>>()
        .map_err(js_err)?;
    let summary = summarize_tracking(id, &runs);
    let o = spec.obstacle;
    let mut out = vec![summary.violation_pct, summary.reach_pct, summary.failure_pct, o.cx, o.cy, o.r];
    let reference: Vec<f64> = reference(&spec).iter().flat_map(|p| [p[0], p[1]]).collect();
    out.push((reference.len() / 2) as f64);
    out.extend(reference);
    let path: Vec<f64> = runs[0].states.iter().flat_map(|s| [s[0], s[1]]).collect();
    out.push((path.len() / 2) as f64);
    out.extend(path);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_is_flat_triples() {
        let f = field(0).unwrap();
        assert_eq!(f.len() % 3, 0);
        assert!(!f.is_empty());
    }

    #[test]
    fn short_episode_runs() {
        let ep = episode("bas_mppi", 0.0, 0, 1000, 16, 10).unwrap();
        assert!(ep.path().len() >= 2);
    }

    #[test]
    fn tracking_layout() {
        let out = tracking("bas_ilqg", 4, 10.0).unwrap();
        let n_ref = out[6] as usize;
        let n_path = out[7 + 2 * n_ref] as usize;
        assert_eq!(out.len(), 8 + 2 * n_ref + 2 * n_path);
    }
}
