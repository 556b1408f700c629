use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear warmup to `lr_peak` over `warmup` steps, hold for `plateau` steps,
/// then decay as `lr_peak · warmup^d / (t − plateau)^d`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleParams {
    pub lr_peak: f64,
    pub warmup: f64,
    pub plateau: f64,
    pub decay: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            lr_peak: 2e-3,
            warmup: 200.0,
            plateau: 800.0,
            decay: 1.0,
        }
    }
}

impl ScheduleParams {
    /// The classic inverse-square-root schedule `scale · min(t^-½, t · warmup^-3/2)`.
    pub fn noam(scale: f64, warmup: f64) -> Self {
        Self {
            lr_peak: scale / warmup.sqrt(),
            warmup,
            plateau: 0.0,
            decay: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field, reason: &str| Err(Error::Config { field, reason: reason.into() });
        if !(self.lr_peak >= 0.0 && self.lr_peak.is_finite()) {
            return bad("schedule.lr_peak", "must be finite and nonnegative");
        }
        if !(self.warmup > 0.0 && self.warmup.is_finite()) {
            return bad("schedule.warmup", "must be positive");
        }
        if !(self.plateau >= 0.0 && self.plateau.is_finite()) {
            return bad("schedule.plateau", "must be nonnegative");
        }
        if !(self.decay > 0.0 && self.decay.is_finite()) {
            return bad("schedule.decay", "must be positive");
        }
        Ok(())
    }
}

pub fn lr(t: f64, p: &ScheduleParams) -> f64 {
    if t < p.warmup {
        p.lr_peak * t / p.warmup
    } else if t < p.warmup + p.plateau {
        p.lr_peak
    } else {
        p.lr_peak * p.warmup.powf(p.decay) / (t - p.plateau).powf(p.decay)
    }
}
