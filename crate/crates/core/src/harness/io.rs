//! CSV persistence. Floats are written with the shortest representation
//! that parses back to the same value.

use std::path::Path;

use super::metrics::Summary;
use super::runner::{RunRecord, TraceRow};
use crate::barrier::{Obstacle, ObstacleField};
use crate::error::{Error, Result};

fn num(v: f64) -> String {
    format!("{v:?}")
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, num)
}

fn parse(s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("not a number: `{s}`")))
}

pub fn write_summary(path: &Path, rows: &[Summary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["controller", "sigma2", "trials", "safety_pct", "reach_pct", "rmse_m"])?;
    for s in rows {
        w.write_record([
            s.controller.to_string(),
            num(s.sigma2),
            s.trials.to_string(),
            num(s.safety_pct),
            num(s.reach_pct),
            num(s.rmse_m),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary(path: &Path) -> Result<Vec<Summary>> {
    let mut r = csv::Reader::from_path(path)?;
    r.records()
        .map(|rec| {
            let rec = rec?;
            Ok(Summary {
                controller: rec[0].parse()?,
                sigma2: parse(&rec[1])?,
                trials: rec[2]
                    .parse()
                    .map_err(|_| Error::InvalidConfig(format!("bad trial count `{}`", &rec[2])))?,
                safety_pct: parse(&rec[3])?,
                reach_pct: parse(&rec[4])?,
                rmse_m: parse(&rec[5])?,
            })
        })
        .collect()
}

pub fn write_field(path: &Path, field: &ObstacleField) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["cx", "cy", "r"])?;
    for o in &field.obstacles {
        w.write_record([num(o.cx), num(o.cy), num(o.r)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_field(path: &Path) -> Result<ObstacleField> {
    let mut r = csv::Reader::from_path(path)?;
    let obstacles = r
        .records()
        .map(|rec| {
            let rec = rec?;
            Ok(Obstacle::new(parse(&rec[0])?, parse(&rec[1])?, parse(&rec[2])?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ObstacleField::new(obstacles))
}

pub fn trace_header(n: usize, m: usize) -> Vec<String> {
    let mut h = vec!["k".to_string()];
    h.extend((0..n).map(|i| format!("x{i}")));
    h.extend((0..2).map(|i| format!("v_realized{i}")));
    h.extend((0..m).map(|i| format!("u{i}")));
    h.extend((0..m).map(|i| format!("k_fb{i}")));
    h.extend((0..m).map(|i| format!("w{i}")));
    for c in [
        "min_h",
        "beta",
        "S_nom_min",
        "F_real",
        "F_nominal",
        "E_M_V",
        "R",
        "L_q",
        "L_phi",
        "bound_proof",
        "bound_stated",
        "bound_ok",
        "bound_stated_ok",
        "delta_F_real",
        "D_F",
        "alpha",
        "ess",
        "crash_frac",
        "branch",
        "cbf_feasible",
    ] {
        h.push(c.into());
    }
    h
}

fn trace_fields(row: &TraceRow) -> Vec<String> {
    let mut f = vec![row.k.to_string()];
    for v in [&row.x, &row.v_realized, &row.u, &row.k_fb, &row.w] {
        f.extend(v.iter().map(|x| num(*x)));
    }
    f.push(num(row.min_h));
    f.push(num(row.beta));
    f.push(opt(row.s_nom_min));
    let r = row.report.as_ref();
    for v in [
        r.map(|r| r.f_real),
        r.map(|r| r.f_nominal),
        r.map(|r| r.e_m_v),
        r.map(|r| r.radius),
        r.map(|r| r.l_q),
        r.map(|r| r.l_phi),
        r.map(|r| r.bound_proof),
        r.map(|r| r.bound_stated),
    ] {
        f.push(opt(v));
    }
    f.push(r.map_or_else(String::new, |r| r.proof_ok().to_string()));
    f.push(r.map_or_else(String::new, |r| r.stated_ok().to_string()));
    f.push(opt(r.and_then(|r| r.delta_f_real)));
    f.push(opt(r.map(|r| r.d_f)));
    f.push(opt(row.alpha));
    f.push(opt(row.ess));
    f.push(opt(row.crash_frac));
    f.push(row.branch.map_or_else(String::new, |b| format!("{b:?}").to_lowercase()));
    f.push(row.feasible.map_or_else(String::new, |b| b.to_string()));
    f
}

pub fn write_trace(path: &Path, record: &RunRecord) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let n = record.rows.first().map_or(2, |r| r.x.len());
    let m = record.rows.first().map_or(2, |r| r.u.len());
    w.write_record(trace_header(n, m))?;
    for row in &record.rows {
        w.write_record(trace_fields(row))?;
    }
    w.flush()?;
    Ok(())
}

/// Executed states of a trace, in step order.
pub fn read_trace_states(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let cols: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.strip_prefix('x').is_some_and(|d| d.parse::<usize>().is_ok()))
        .map(|(i, _)| i)
        .collect();
    r.records()
        .map(|rec| {
            let rec = rec?;
            cols.iter().map(|&i| parse(&rec[i])).collect()
        })
        .collect()
}

/// One line per trial.
pub fn write_runs(path: &Path, records: &[RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "seed",
        "controller",
        "sigma2",
        "safe",
        "reached",
        "final_error_m",
        "steps",
        "wall_time_s",
        "error",
    ])?;
    for r in records {
        w.write_record([
            r.seed.to_string(),
            r.controller.to_string(),
            num(r.sigma2),
            r.safe.to_string(),
            r.reached.to_string(),
            num(r.rmse_to_goal),
            r.steps.to_string(),
            num(r.wall_time),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for v in [0.1, 1.0 / 3.0, 1e-300, 1e12, -2.5e-7, f64::MAX, f64::INFINITY] {
            assert_eq!(parse(&num(v)).unwrap(), v);
        }
        assert!(parse(&num(f64::NAN)).unwrap().is_nan());
    }
}
