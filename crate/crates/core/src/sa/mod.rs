//! Step-size schedules, box projection and the shared two-timescale update.
//!
//! A run of either driver interleaves a fast tracker, moved with step
//! `alpha_k`, and a slow projected iterate, moved with step `beta_k`:
//!
//! ```text
//! fast' = fast + alpha_k * fast_drift
//! slow' = Proj_box(slow + beta_k * slow_drift)
//! ```
//!
//! Drifts are computed by the callers from the *current* states, so the slow
//! update always sees the tracker value from before this step.

mod projection;
mod schedule;

pub use projection::{BoxDomain, ProjectionResult};
pub use schedule::{ScheduleKind, StepSchedule};

use crate::error::{Error, Result};

/// Result of [`two_timescale_step`].
#[derive(Debug, Clone, PartialEq)]
pub struct TwoTimescaleOutput {
    pub fast: Vec<f64>,
    pub slow: Vec<f64>,
    pub projection: ProjectionResult,
}

/// Applies one coupled update. Aborts on any non-finite drift component.
pub fn two_timescale_step(
    fast_state: &[f64],
    slow_state: &[f64],
    fast_drift: &[f64],
    slow_drift: &[f64],
    k: u64,
    schedule: &StepSchedule,
    slow_box: &BoxDomain,
) -> Result<TwoTimescaleOutput> {
    if fast_state.len() != fast_drift.len() || slow_state.len() != slow_drift.len() {
        return Err(Error::Contract("state and drift dimensions differ".into()));
    }
    slow_box.check_dim(slow_state)?;
    check_finite(k, "fast drift", fast_drift)?;
    check_finite(k, "slow drift", slow_drift)?;
    let (alpha, beta) = schedule.steps_at(k)?;
    let fast = fast_state.iter().zip(fast_drift).map(|(x, d)| x + alpha * d).collect();
    let mut slow: Vec<f64> = slow_state.iter().zip(slow_drift).map(|(x, d)| x + beta * d).collect();
    let correction = slow_box.project_in_place(&mut slow);
    Ok(TwoTimescaleOutput {
        fast,
        slow: slow.clone(),
        projection: ProjectionResult { point: slow, correction },
    })
}

pub(crate) fn check_finite(k: u64, what: &str, v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::NonFinite { k, detail: format!("{what}[{i}] = {}", v[i]) }),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched() -> StepSchedule {
        StepSchedule::polynomial(0.5, 0.6, 0.01, 1.0).unwrap()
    }

    #[test]
    fn zero_drift_is_fixed_point() {
        let b = BoxDomain::interval(0.5, 2.0).unwrap();
        let out = two_timescale_step(&[0.3, -1.0], &[1.1], &[0.0, 0.0], &[0.0], 3, &sched(), &b).unwrap();
        assert_eq!(out.fast, vec![0.3, -1.0]);
        assert_eq!(out.slow, vec![1.1]);
        assert!(!out.projection.is_active());
    }

    #[test]
    fn fast_arithmetic() {
        // alpha_1 = 0.5
        let b = BoxDomain::interval(0.5, 2.0).unwrap();
        let out = two_timescale_step(&[1.0], &[1.0], &[2.0], &[1.0], 1, &sched(), &b).unwrap();
        assert_eq!(out.fast, vec![2.0]);
        assert!((out.slow[0] - 1.01).abs() < 1e-15);
        assert!(!out.projection.is_active());
    }

    #[test]
    fn clamped_slow_reports_correction() {
        let b = BoxDomain::interval(0.5, 2.0).unwrap();
        let out = two_timescale_step(&[0.0], &[1.99], &[0.0], &[10.0], 1, &sched(), &b).unwrap();
        assert_eq!(out.slow, vec![2.0]);
        assert!(out.projection.correction[0] < 0.0);
    }

    #[test]
    fn non_finite_drift_aborts() {
        let b = BoxDomain::interval(0.5, 2.0).unwrap();
        let err = two_timescale_step(&[0.0], &[1.0], &[f64::NAN], &[0.0], 7, &sched(), &b).unwrap_err();
        assert!(matches!(err, Error::NonFinite { k: 7, .. }));
        let err = two_timescale_step(&[0.0], &[1.0], &[0.0], &[f64::INFINITY], 2, &sched(), &b).unwrap_err();
        assert!(matches!(err, Error::NonFinite { k: 2, .. }));
    }

    #[test]
    fn deterministic() {
        let b = BoxDomain::interval(-1.0, 1.0).unwrap();
        let a = two_timescale_step(&[0.1, 0.2], &[0.3], &[1.0, -1.0], &[5.0], 4, &sched(), &b).unwrap();
        let c = two_timescale_step(&[0.1, 0.2], &[0.3], &[1.0, -1.0], &[5.0], 4, &sched(), &b).unwrap();
        assert_eq!(a, c);
    }
}
