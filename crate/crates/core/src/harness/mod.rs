//! Scenarios, Monte Carlo runs, summary metrics and CSV output.

mod config;
mod io;
mod metrics;
mod runner;
mod scenario;
mod tracking;

pub use config::{Config, ControllerId, CostConfig, RunSpec, ScenarioSpec, TrackingSpec};
pub use io::{read_field, read_summary, read_trace_states, trace_header, write_field, write_runs, write_summary, write_trace};
pub use metrics::{rmse, summarize, velocity_stats, Summary, VelocityStats};
pub use runner::{goal_error, run_monte_carlo, run_trial, Action, Controller, RunRecord, TraceRow, TrialSetup};
pub use scenario::{default_episode_steps, generate_field, has_passage, Scenario};
pub use tracking::{
    reference, summarize_tracking, tracking_comparison, tracking_model, tracking_policy, tracking_run, TrackingPolicy,
    TrackingRun, TrackingSummary,
};

use std::path::Path;

use crate::error::Result;

/// Runs every controller at every variance, writing `summary.csv` and,
/// when enabled, one trace per trial under `out/<controller>_<sigma2>/`.
pub fn sweep(cfg: &Config, scenario: &Scenario, sigma2s: &[f64], controllers: &[ControllerId], out: Option<&Path>) -> Result<Vec<Summary>> {
    let mut summaries = Vec::new();
    for &sigma2 in sigma2s {
        let setup = TrialSetup::new(cfg, scenario, sigma2);
        for &id in controllers {
            let records = run_monte_carlo(&setup, id, &scenario.seeds, cfg.run.threads)?;
            let summary = summarize(&records);
            if let Some(dir) = out {
                persist(dir, cfg, &records, &format!("{id}_{sigma2}"))?;
            }
            summaries.push(summary);
        }
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        write_summary(&dir.join("summary.csv"), &summaries)?;
        write_field(&dir.join("field.csv"), &scenario.field)?;
    }
    Ok(summaries)
}

/// Writes `runs.csv` and the per-trial traces of one batch under `dir/sub`.
pub fn persist(dir: &Path, cfg: &Config, records: &[RunRecord], sub: &str) -> Result<()> {
    let d = dir.join(sub);
    std::fs::create_dir_all(&d)?;
    write_runs(&d.join("runs.csv"), records)?;
    if cfg.run.write_traces {
        for r in records {
            write_trace(&d.join(format!("trace_{}.csv", r.seed)), r)?;
        }
    }
    Ok(())
}
