//! Optimal masking-rate schedules and the sample-complexity bound.

use serde::{Deserialize, Serialize};

use crate::error::{MdError, Result};
use crate::masking::{signal_probability, Schedule};

const BISECTION_LO: f64 = 1e-9;
const BISECTION_HI: f64 = 1.0 - 1e-9;
const BISECTION_ITERS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean_t: f64,
    /// E[(1-t)^k]: probability that k given positions all stay visible.
    pub rho_k: f64,
}

pub fn moments(schedule: &Schedule, k: usize) -> Moments {
    let (t0, t1) = (schedule.t0(), schedule.t1());
    let rho_k = if schedule.is_point() {
        (1.0 - t0).powi(k as i32)
    } else {
        let e = k as i32 + 1;
        ((1.0 - t0).powi(e) - (1.0 - t1).powi(e)) / ((t1 - t0) * (k as f64 + 1.0))
    };
    Moments {
        mean_t: schedule.mean(),
        rho_k,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimalKind {
    SignalOptimal,
    ComplexityOptimal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimalScheduleResult {
    pub kind: OptimalKind,
    pub t0: f64,
    pub t1: f64,
    /// P_S for the signal-optimal rate, E[t] * rho_k^2 for the complexity-optimal schedule.
    pub objective_value: f64,
    /// |p(y*)| of the defining polynomial; 0 when no root is involved.
    pub residual: f64,
}

impl OptimalScheduleResult {
    pub fn schedule(&self) -> Schedule {
        Schedule::new(self.t0, self.t1).expect("optimal schedules are valid by construction")
    }
}

/// Point mass t = 1/(k+1), which maximizes P_S = (k+1) t (1-t)^k.
pub fn signal_optimal_rate(k: usize) -> OptimalScheduleResult {
    let t = 1.0 / (k as f64 + 1.0);
    let schedule = Schedule::point(t).expect("1/(k+1) lies in [0,1]");
    OptimalScheduleResult {
        kind: OptimalKind::SignalOptimal,
        t0: t,
        t1: t,
        objective_value: signal_probability(&schedule, k).signal,
        residual: 0.0,
    }
}

/// p(y) = (2k+1) y^(k+1) - (2k+2) y^k + 1. Always has the root y = 1.
pub fn complexity_polynomial(k: usize, y: f64) -> f64 {
    let kf = k as f64;
    let yk = y.powi(k as i32);
    (2.0 * kf + 1.0) * yk * y - (2.0 * kf + 2.0) * yk + 1.0
}

/// Bisection for the root of `complexity_polynomial` in (0, 1).
///
/// p(0) = 1 and p'(1) = k + 1 > 0, so p changes sign once on the bracket
/// and the trivial root y = 1 lies outside it.
pub fn complexity_root(k: usize) -> Result<f64> {
    if k == 0 {
        return Err(MdError::InvalidTask("k must be at least 1".into()));
    }
    let (mut lo, mut hi) = (BISECTION_LO, BISECTION_HI);
    let (p_lo, p_hi) = (complexity_polynomial(k, lo), complexity_polynomial(k, hi));
    if !(p_lo > 0.0 && p_hi < 0.0) {
        return Err(MdError::Bracketing { k, p_lo, p_hi });
    }
    for _ in 0..BISECTION_ITERS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if complexity_polynomial(k, mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (r_lo, r_hi) = (
        complexity_polynomial(k, lo).abs(),
        complexity_polynomial(k, hi).abs(),
    );
    Ok(if r_lo <= r_hi { lo } else { hi })
}

/// Uniform schedule maximizing E[t] * rho_k^2, i.e. minimizing the sample bound.
///
/// For k > 1 the optimum is U[0, 1 - y*]. For k = 1 any uniform schedule with
/// mean 1/3 is optimal; the root y* = 1/3 gives the representative U[0, 2/3].
pub fn complexity_optimal_schedule(k: usize) -> Result<OptimalScheduleResult> {
    let y = complexity_root(k)?;
    let t1 = 1.0 - y;
    let schedule = Schedule::new(0.0, t1)?;
    let m = moments(&schedule, k);
    Ok(OptimalScheduleResult {
        kind: OptimalKind::ComplexityOptimal,
        t0: 0.0,
        t1,
        objective_value: m.mean_t * m.rho_k * m.rho_k,
        residual: complexity_polynomial(k, y).abs(),
    })
}

/// N_min = ceil(4 ln(4n/delta) / (E[t] rho_k^2)), natural log.
pub fn sample_complexity_bound(n: usize, k: usize, delta: f64, schedule: &Schedule) -> Result<u64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(MdError::Config(format!(
            "delta must lie in (0,1), got {delta}"
        )));
    }
    if n == 0 {
        return Err(MdError::InvalidTask("n must be at least 1".into()));
    }
    let m = moments(schedule, k);
    let denom = m.mean_t * m.rho_k * m.rho_k;
    if denom <= 0.0 {
        return Err(MdError::UnboundedSampleBound);
    }
    Ok((4.0 * (4.0 * n as f64 / delta).ln() / denom).ceil() as u64)
}

/// Minimum expected cross-entropy for predicting one masked feature at rate t.
pub fn bayes_risk(in_secret: bool, t: f64, k: usize) -> f64 {
    let ln2 = std::f64::consts::LN_2;
    if in_secret {
        (1.0 - (1.0 - t).powi(k as i32)) * ln2
    } else {
        ln2
    }
}

/// Expected Bayes-risk gap between non-secret and secret features: rho_k ln 2.
pub fn loss_gap(schedule: &Schedule, k: usize) -> f64 {
    moments(schedule, k).rho_k * std::f64::consts::LN_2
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    fn sched(t0: f64, t1: f64) -> Schedule {
        Schedule::new(t0, t1).unwrap()
    }

    #[test]
    fn moment_examples() {
        assert!((moments(&sched(0.0, 1.0), 2).rho_k - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(moments(&sched(0.0, 0.0), 5).rho_k, 1.0);
        assert_eq!(moments(&sched(0.0, 1.0), 2).mean_t, 0.5);
    }

    #[test]
    fn rho_matches_generic_monomial_expectation() {
        for (t0, t1) in [(0.0, 0.3), (0.2, 0.9), (0.5, 0.5)] {
            let s = sched(t0, t1);
            for k in 1..10 {
                let a = moments(&s, k).rho_k;
                let b = s.expect_monomial(0, k as u32);
                assert!((a - b).abs() < 1e-13 * b.max(1e-300), "{t0},{t1},{k}");
            }
        }
    }

    #[test]
    fn signal_optimal_examples() {
        assert_eq!(signal_optimal_rate(1).t0, 0.5);
        assert!((signal_optimal_rate(6).t1 - 0.142857).abs() < 1e-6);
        for k in 1..=10 {
            let r = signal_optimal_rate(k);
            let closed = (1.0 - 1.0 / (k as f64 + 1.0)).powi(k as i32);
            assert!((r.objective_value - closed).abs() < 1e-15);
            assert_eq!(
                r.objective_value,
                signal_probability(&r.schedule(), k).signal
            );
        }
    }

    #[test]
    fn signal_optimum_matches_grid_search() {
        for k in 1..=10 {
            let best = (0..=10_000)
                .map(|i| i as f64 * 1e-4)
                .max_by(|a, b| {
                    let pa = signal_probability(&Schedule::point(*a).unwrap(), k).signal;
                    let pb = signal_probability(&Schedule::point(*b).unwrap(), k).signal;
                    pa.total_cmp(&pb)
                })
                .unwrap();
            assert!(
                (best - 1.0 / (k as f64 + 1.0)).abs() <= 1e-4 + 1e-12,
                "k={k}: {best}"
            );
        }
    }

    #[test]
    fn complexity_root_for_k2_matches_quadratic_factor() {
        let y = complexity_root(2).unwrap();
        let closed = (1.0 + 21f64.sqrt()) / 10.0;
        assert!((y - closed).abs() < 1e-9);
        assert!((y - 0.55826).abs() < 1e-5);
    }

    #[test]
    fn complexity_residuals_and_range() {
        for k in 2..=12 {
            let r = complexity_optimal_schedule(k).unwrap();
            assert!(r.residual < 1e-12, "k={k}: {}", r.residual);
            assert!(r.t1 > 0.0 && r.t1 < 1.0);
            assert_eq!(r.t0, 0.0);
        }
    }

    #[test]
    fn k1_gives_mean_one_third() {
        let r = complexity_optimal_schedule(1).unwrap();
        assert!((r.schedule().mean() - 1.0 / 3.0).abs() < 1e-12);
        // Every uniform schedule with mean 1/3 attains the same objective.
        for (t0, t1) in [(1.0 / 3.0, 1.0 / 3.0), (0.1, 0.1 + 2.0 * (1.0 / 3.0 - 0.1))] {
            let m = moments(&sched(t0, t1), 1);
            assert!((m.mean_t * m.rho_k * m.rho_k - r.objective_value).abs() < 1e-12);
        }
    }

    #[test]
    fn complexity_optimum_beats_two_dimensional_grid() {
        for k in 2..=4 {
            let r = complexity_optimal_schedule(k).unwrap();
            let steps = 200;
            for i in 0..=steps {
                for j in i..=steps {
                    let s = sched(i as f64 / steps as f64, j as f64 / steps as f64);
                    let m = moments(&s, k);
                    assert!(m.mean_t * m.rho_k * m.rho_k <= r.objective_value + 1e-12);
                }
            }
        }
    }

    #[test]
    fn sample_bound_examples() {
        let n = sample_complexity_bound(20, 1, 0.05, &Schedule::point(1.0 / 3.0).unwrap()).unwrap();
        assert_eq!(n, (27.0 * 1600f64.ln()).ceil() as u64);
        assert_eq!(n, 200);
        let limit = sample_complexity_bound(20, 3, 0.05, &Schedule::point(1.0).unwrap());
        assert!(matches!(limit, Err(MdError::UnboundedSampleBound)));
        assert!(matches!(
            sample_complexity_bound(20, 3, 0.05, &Schedule::point(0.0).unwrap()),
            Err(MdError::UnboundedSampleBound)
        ));
        assert!(sample_complexity_bound(20, 3, 1.5, &sched(0.0, 0.2)).is_err());
    }

    #[test]
    fn sample_bound_is_monotone_in_mean_rho_squared() {
        let mut pts: Vec<(f64, u64)> = (1..100)
            .map(|i| {
                let s = sched(0.0, i as f64 / 100.0);
                let m = moments(&s, 3);
                (
                    m.mean_t * m.rho_k * m.rho_k,
                    sample_complexity_bound(20, 3, 0.05, &s).unwrap(),
                )
            })
            .collect();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert!(pts.windows(2).all(|w| w[1].1 <= w[0].1));
    }

    #[test]
    fn complexity_schedule_needs_no_more_samples_than_signal_rate() {
        for k in 2..=8 {
            let c = sample_complexity_bound(
                20,
                k,
                0.05,
                &complexity_optimal_schedule(k).unwrap().schedule(),
            )
            .unwrap();
            let s =
                sample_complexity_bound(20, k, 0.05, &signal_optimal_rate(k).schedule()).unwrap();
            assert!(c <= s, "k={k}: {c} > {s}");
        }
    }

    #[test]
    fn boundary_point_masses_are_strictly_worse() {
        for k in 1..=8 {
            let s = signal_optimal_rate(k);
            let c = complexity_optimal_schedule(k).unwrap();
            for t in [0.0, 1.0] {
                let p = Schedule::point(t).unwrap();
                assert!(signal_probability(&p, k).signal < s.objective_value);
                let m = moments(&p, k);
                assert!(m.mean_t * m.rho_k * m.rho_k < c.objective_value);
            }
        }
    }

    #[test]
    fn bayes_risk_examples() {
        assert_eq!(bayes_risk(true, 0.0, 3), 0.0);
        assert_eq!(bayes_risk(true, 1.0, 3), LN_2);
        assert_eq!(bayes_risk(false, 0.4, 3), LN_2);
        assert!((loss_gap(&sched(0.0, 1.0), 2) - LN_2 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn uniform_six_argmax_near_quarter() {
        let best = (1..=1000)
            .map(|i| i as f64 / 1000.0)
            .max_by(|a, b| {
                let pa = signal_probability(&sched(0.0, *a), 6).signal;
                let pb = signal_probability(&sched(0.0, *b), 6).signal;
                pa.total_cmp(&pb)
            })
            .unwrap();
        assert!((0.241..=0.251).contains(&best), "{best}");
    }
}
