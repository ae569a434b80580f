use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Functional form of a step-size sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    /// `c / k^e`
    Polynomial,
    /// `c / (k log(k+1))^e`
    PolyLog,
}

/// Fast (`alpha`) and slow (`beta`) step sizes of a two-timescale recursion.
///
/// The slow exponent must exceed the fast one so that `beta_k / alpha_k -> 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSchedule {
    pub kind: ScheduleKind,
    pub alpha0: f64,
    pub a: f64,
    pub beta0: f64,
    pub b: f64,
    #[serde(default = "default_start")]
    pub start_index: u64,
}

fn default_start() -> u64 {
    1
}

impl StepSchedule {
    pub fn new(kind: ScheduleKind, alpha0: f64, a: f64, beta0: f64, b: f64) -> Result<Self> {
        let s = StepSchedule { kind, alpha0, a, beta0, b, start_index: 1 };
        s.validate()?;
        Ok(s)
    }

    pub fn polynomial(alpha0: f64, a: f64, beta0: f64, b: f64) -> Result<Self> {
        Self::new(ScheduleKind::Polynomial, alpha0, a, beta0, b)
    }

    pub fn poly_log(alpha0: f64, a: f64, beta0: f64, b: f64) -> Result<Self> {
        Self::new(ScheduleKind::PolyLog, alpha0, a, beta0, b)
    }

    /// Checks the exponent ranges, positivity, and the separation `b > a`.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSchedule(m));
        if !(self.alpha0.is_finite() && self.alpha0 > 0.0) {
            return bad(format!("alpha0 must be positive, got {}", self.alpha0));
        }
        if !(self.beta0.is_finite() && self.beta0 > 0.0) {
            return bad(format!("beta0 must be positive, got {}", self.beta0));
        }
        for (name, e) in [("a", self.a), ("b", self.b)] {
            if !(e > 0.5 && e <= 1.0) {
                return bad(format!("exponent {name} must lie in (1/2, 1], got {e}"));
            }
        }
        if self.b <= self.a {
            return bad(format!("timescale separation requires b > a (a = {}, b = {})", self.a, self.b));
        }
        if self.start_index == 0 {
            return bad("start_index must be at least 1".into());
        }
        Ok(())
    }

    fn base(&self, k: u64) -> Result<f64> {
        if k == 0 || k < self.start_index {
            return Err(Error::Domain { k, start: self.start_index });
        }
        let kf = k as f64;
        Ok(match self.kind {
            ScheduleKind::Polynomial => kf,
            ScheduleKind::PolyLog => kf * (kf + 1.0).ln(),
        })
    }

    /// Fast step size at iteration `k`.
    pub fn alpha_at(&self, k: u64) -> Result<f64> {
        Ok(self.alpha0 / self.base(k)?.powf(self.a))
    }

    /// Slow step size at iteration `k`.
    pub fn beta_at(&self, k: u64) -> Result<f64> {
        Ok(self.beta0 / self.base(k)?.powf(self.b))
    }

    /// Both step sizes, computing the shared base once.
    pub fn steps_at(&self, k: u64) -> Result<(f64, f64)> {
        let base = self.base(k)?;
        Ok((self.alpha0 / base.powf(self.a), self.beta0 / base.powf(self.b)))
    }
}
