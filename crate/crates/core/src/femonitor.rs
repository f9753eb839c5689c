//! Monte Carlo free energy, its bootstrap uncertainty, and the free-energy
//! growth bound for the real system.

use rand::Rng;
use serde::Serialize;

use crate::rng::{stream, Domain};

/// `−λ log((1/N) Σ exp(−S_n/λ))`, evaluated around the minimum cost.
pub fn free_energy_mc(costs: &[f64], lambda: f64) -> f64 {
    assert!(!costs.is_empty(), "free energy of an empty batch");
    let min = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let sum: f64 = costs.iter().map(|s| (-(s - min) / lambda).exp()).sum();
    min - lambda * (sum / costs.len() as f64).ln()
}

/// Linear-interpolated quantile of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let t = pos - lo as f64;
    sorted[lo] + t * (sorted[hi] - sorted[lo])
}

pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, p)
}

/// Half-width of the central 99% bootstrap interval of [`free_energy_mc`].
pub fn estimate_e_m_v(costs: &[f64], lambda: f64, n_boot: usize, seed: u64) -> f64 {
    let n = costs.len();
    if n < 2 || n_boot == 0 {
        return 0.0;
    }
    let mut rng = stream(seed, Domain::Bootstrap, 0, 0);
    let mut resample = vec![0.0; n];
    let mut stats: Vec<f64> = (0..n_boot)
        .map(|_| {
            for r in resample.iter_mut() {
                *r = costs[rng.random_range(0..n)];
            }
            free_energy_mc(&resample, lambda)
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let lo = quantile_sorted(&stats, 0.005);
    let hi = quantile_sorted(&stats, 0.995);
    (0.5 * (hi - lo)).max(0.0)
}

/// 95th percentile of the per-sample maximum real/nominal deviation,
/// floored at `floor`.
pub fn tube_radius(max_deviation: &[f64], floor: f64) -> f64 {
    if max_deviation.is_empty() {
        return floor;
    }
    quantile(max_deviation, 0.95).max(floor)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundInputs {
    pub f_nominal: f64,
    pub alpha: f64,
    pub e_m_v: f64,
    pub l_q: f64,
    pub l_phi: f64,
    pub radius: f64,
    pub horizon: usize,
    pub d_f: f64,
}

/// Returns `(proof form, stated form)`:
/// `(α − F*) + 2E + (L_φ + (T−1)L_q) R` and the same with the last term
/// multiplied by `D_F`.
pub fn lemma1_bound(b: &BoundInputs) -> (f64, f64) {
    let base = (b.alpha - b.f_nominal) + 2.0 * b.e_m_v;
    let lip = (b.l_phi + b.horizon.saturating_sub(1) as f64 * b.l_q) * b.radius;
    (base + lip, base + lip * b.d_f)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FreeEnergyReport {
    pub f_real: f64,
    pub f_nominal: f64,
    pub e_m_v: f64,
    pub radius: f64,
    pub l_q: f64,
    pub l_phi: f64,
    pub d_f: f64,
    pub alpha: f64,
    pub bound_proof: f64,
    pub bound_stated: f64,
    /// `F_real` minus the previous step's `F_real`; `None` on the first step.
    pub delta_f_real: Option<f64>,
}

impl FreeEnergyReport {
    /// Proof-form check; vacuously true without a previous step.
    pub fn proof_ok(&self) -> bool {
        self.delta_f_real.is_none_or(|d| d <= self.bound_proof)
    }

    pub fn stated_ok(&self) -> bool {
        self.delta_f_real.is_none_or(|d| d <= self.bound_stated)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Exp};

    #[test]
    fn constant_costs() {
        assert!((free_energy_mc(&[3.5; 7], 0.3) - 3.5).abs() < 1e-12);
        assert_eq!(estimate_e_m_v(&[3.5; 40], 0.3, 200, 1), 0.0);
    }

    #[test]
    fn two_term_closed_form() {
        let lam = 2.0;
        let expect = -lam * ((1.0 + (-1.0f64).exp()) / 2.0).ln();
        assert!((free_energy_mc(&[0.0, lam], lam) - expect).abs() < 1e-12);
    }

    #[test]
    fn below_mean() {
        let c = [1.0, 4.0, 2.5, 10.0, 0.3];
        let mean = c.iter().sum::<f64>() / 5.0;
        for lam in [0.01, 1.0, 100.0] {
            assert!(free_energy_mc(&c, lam) <= mean + 1e-12);
        }
    }

    #[test]
    fn huge_costs_stay_finite() {
        let f = free_energy_mc(&[1e12, 1e12 + 5.0, 3.0], 1.0);
        assert!(f.is_finite());
        assert!((f - (3.0 + 3f64.ln())).abs() < 1e-9);
    }

    #[test]
    fn bootstrap_shrinks_with_sample_count() {
        let dist = Exp::new(0.1).unwrap();
        let median = |n: usize| {
            let mut v: Vec<f64> = (0..50)
                .map(|t| {
                    let mut rng = stream(t, Domain::Probe, n as u64, 0);
                    let c: Vec<f64> = (0..n).map(|_| dist.sample(&mut rng)).collect();
                    estimate_e_m_v(&c, 5.0, 200, t)
                })
                .collect();
            v.sort_by(f64::total_cmp);
            v[25]
        };
        assert!(median(200) < median(100));
        assert!(median(100) >= 0.0);
    }

    #[test]
    fn bound_forms() {
        let mut b = BoundInputs {
            f_nominal: 4.0,
            alpha: 10.0,
            e_m_v: 0.0,
            l_q: 0.0,
            l_phi: 0.0,
            radius: 0.5,
            horizon: 50,
            d_f: 3.0,
        };
        assert_eq!(lemma1_bound(&b), (6.0, 6.0));
        b.l_q = 2.0;
        b.l_phi = 1.0;
        b.e_m_v = 0.25;
        let (p, s) = lemma1_bound(&b);
        assert!((p - (6.5 + 99.0 * 0.5)).abs() < 1e-12);
        assert!((s - (6.5 + 99.0 * 0.5 * 3.0)).abs() < 1e-12);
        b.d_f = 1.0;
        let (p, s) = lemma1_bound(&b);
        assert_eq!(p, s);
    }

    #[test]
    fn quantiles() {
        assert_eq!(quantile(&[3.0, 1.0, 2.0], 0.5), 2.0);
        assert_eq!(quantile(&[0.0, 10.0], 0.95), 9.5);
        assert_eq!(tube_radius(&[0.0; 10], 1e-3), 1e-3);
    }
}
