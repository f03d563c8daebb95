use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Force-noise reduction law, all thresholds in N.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptiveNoiseConfig {
    pub trigger_threshold: f64,
    pub release_threshold: f64,
    pub r_max: f64,
    pub slope_sigma: f64,
    pub exponent_gain: f64,
}

impl Default for AdaptiveNoiseConfig {
    fn default() -> Self {
        Self {
            trigger_threshold: 700.0,
            release_threshold: 500.0,
            r_max: 12.5,
            slope_sigma: 800.0,
            exponent_gain: 0.05,
        }
    }
}

impl AdaptiveNoiseConfig {
    pub fn validate(&self, nominal: (f64, f64)) -> Result<()> {
        if !(self.release_threshold < self.trigger_threshold) {
            return Err(Error::Config("release threshold must lie below the trigger threshold".into()));
        }
        if !(self.slope_sigma > 0.0) || !(self.exponent_gain >= 0.0) || !(self.r_max >= 0.0) {
            return Err(Error::Config("adaptive slope, gain and r_max must be positive".into()));
        }
        if !(self.r_max < nominal.0.min(nominal.1)) {
            return Err(Error::Config(format!(
                "r_max {} must stay below the nominal force stds {nominal:?}",
                self.r_max
            )));
        }
        Ok(())
    }

    /// Reduced std for a given mismatch, ignoring the hysteresis gate.
    pub fn reduced(&self, nominal: f64, delta_fy: f64) -> f64 {
        let z = (delta_fy - self.trigger_threshold) / self.slope_sigma;
        nominal - self.r_max * (1.0 - (-self.exponent_gain * z * z).exp())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct HysteresisState {
    pub active: bool,
}

/// Returns the force-channel stds to use this step, the next hysteresis state
/// and whether adaptation is active.
pub fn adapt_tyre_noise(
    nominal: (f64, f64),
    delta_fy: f64,
    state: HysteresisState,
    config: &AdaptiveNoiseConfig,
) -> ((f64, f64), HysteresisState, bool) {
    let active = if state.active {
        delta_fy >= config.release_threshold
    } else {
        delta_fy > config.trigger_threshold
    };
    let stds = if active {
        (config.reduced(nominal.0, delta_fy), config.reduced(nominal.1, delta_fy))
    } else {
        nominal
    };
    (stds, HysteresisState { active }, active)
}
