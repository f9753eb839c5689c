use serde::{Deserialize, Serialize};

use super::config::ControllerId;
use super::runner::RunRecord;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub controller: ControllerId,
    pub sigma2: f64,
    pub trials: usize,
    pub safety_pct: f64,
    pub reach_pct: f64,
    /// Root mean square final goal error over safe, reached runs; NaN when
    /// there are none.
    pub rmse_m: f64,
}

pub fn rmse(errors: &[f64]) -> f64 {
    if errors.is_empty() {
        return f64::NAN;
    }
    (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt()
}

pub fn summarize(records: &[RunRecord]) -> Summary {
    assert!(!records.is_empty(), "summary of no records");
    let n = records.len() as f64;
    let safe = records.iter().filter(|r| r.safe).count() as f64;
    let reached = records.iter().filter(|r| r.reached).count() as f64;
    let errors: Vec<f64> = records
        .iter()
        .filter(|r| r.safe && r.reached)
        .map(|r| r.rmse_to_goal)
        .collect();
    Summary {
        controller: records[0].controller,
        sigma2: records[0].sigma2,
        trials: records.len(),
        safety_pct: 100.0 * safe / n,
        reach_pct: 100.0 * reached / n,
        rmse_m: rmse(&errors),
    }
}

/// Per-step mean and standard deviation of the realized velocity, over the
/// runs still active at that step.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityStats {
    pub mean: Vec<[f64; 2]>,
    pub std: Vec<[f64; 2]>,
    pub count: Vec<usize>,
}

pub fn velocity_stats(records: &[RunRecord]) -> VelocityStats {
    let len = records.iter().map(|r| r.rows.len().saturating_sub(1)).max().unwrap_or(0);
    let mut stats = VelocityStats {
        mean: vec![[0.0; 2]; len],
        std: vec![[0.0; 2]; len],
        count: vec![0; len],
    };
    for k in 0..len {
        let vs: Vec<&[f64]> = records
            .iter()
            .filter_map(|r| r.rows.get(k).filter(|row| row.v_realized[0].is_finite()))
            .map(|row| row.v_realized.as_slice())
            .collect();
        let c = vs.len();
        stats.count[k] = c;
        for i in 0..2 {
            let mean = vs.iter().map(|v| v[i]).sum::<f64>() / c as f64;
            let var = vs.iter().map(|v| (v[i] - mean).powi(2)).sum::<f64>() / c as f64;
            stats.mean[k][i] = mean;
            stats.std[k][i] = var.sqrt();
        }
    }
    stats
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(safe: bool, reached: bool, err: f64) -> RunRecord {
        RunRecord {
            seed: 0,
            controller: ControllerId::BasMppi,
            sigma2: 0.0,
            safe,
            reached,
            rmse_to_goal: err,
            steps: 0,
            rows: vec![],
            wall_time: 0.0,
            error: None,
        }
    }

    #[test]
    fn counting() {
        let s = summarize(&[rec(true, true, 0.0), rec(true, false, 2.0), rec(false, false, 9.0)]);
        assert!((s.safety_pct - 200.0 / 3.0).abs() < 1e-12);
        assert!((s.reach_pct - 100.0 / 3.0).abs() < 1e-12);
        assert_eq!(s.rmse_m, 0.0);
    }

    #[test]
    fn two_record_rmse() {
        let s = summarize(&[rec(true, true, 0.3), rec(true, true, 0.4)]);
        assert!((s.rmse_m - 0.5 / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn no_reached_runs_is_nan() {
        assert!(summarize(&[rec(false, false, 3.0)]).rmse_m.is_nan());
    }
}
