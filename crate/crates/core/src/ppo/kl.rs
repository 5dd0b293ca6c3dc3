use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Log-space proportional controller for the KL penalty coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KlController {
    pub beta_kl: f64,
    pub target_kl: f64,
    pub gain: f64,
    pub error_clip: f64,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for KlController {
    fn default() -> Self {
        Self {
            beta_kl: 0.2,
            target_kl: 8.0,
            gain: 0.01,
            error_clip: 0.2,
            beta_min: 0.15,
            beta_max: 0.25,
        }
    }
}

impl KlController {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &'static str, reason: &str| {
            Err(Error::InvalidConfig {
                field,
                reason: reason.to_owned(),
            })
        };
        if !(self.target_kl > 0.0 && self.target_kl.is_finite()) {
            return bad("target_kl", "must be positive");
        }
        if !(self.beta_min <= self.beta_max && self.beta_min >= 0.0) {
            return bad("beta_min", "must satisfy 0 <= beta_min <= beta_max");
        }
        if !(self.beta_min..=self.beta_max).contains(&self.beta_kl) {
            return bad("beta_kl", "initial value must lie within [beta_min, beta_max]");
        }
        if !(self.gain.is_finite() && self.error_clip >= 0.0) {
            return bad("gain", "gain must be finite and error_clip non-negative");
        }
        Ok(())
    }

    /// Applies one update in place and returns the new coefficient.
    pub fn update(&mut self, measured_kl: f64) -> f64 {
        let error = ((measured_kl - self.target_kl) / self.target_kl).clamp(-self.error_clip, self.error_clip);
        self.beta_kl = (self.beta_kl * (1.0 + self.gain * error)).clamp(self.beta_min, self.beta_max);
        self.beta_kl
    }
}

pub fn kl_controller_step(ctrl: &KlController, measured_kl: f64) -> KlController {
    let mut next = ctrl.clone();
    next.update(measured_kl);
    next
}
