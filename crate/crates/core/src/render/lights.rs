use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::msnet::LightSample;

/// Directions are uniform on the cap within `max_polar_deg` of the view
/// axis; intensities (equal on all channels) are uniform in `intensity`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LightPolicy {
    pub max_polar_deg: f64,
    pub intensity: (f64, f64),
}

impl Default for LightPolicy {
    fn default() -> Self {
        LightPolicy {
            max_polar_deg: 75.0,
            intensity: (0.3, 2.0),
        }
    }
}

pub const DEFAULT_LIGHT_COUNT: usize = 100;

/// `K` random lights. Directions are built exactly unit-length up to
/// rounding and renormalised before use.
pub fn sample_lights(rng: &mut impl Rng, k: usize, policy: &LightPolicy) -> Result<Vec<LightSample>> {
    if k < 3 {
        return Err(Error::invalid(format!("need at least 3 lights, got {k}")));
    }
    if !(policy.max_polar_deg > 0.0 && policy.max_polar_deg < 90.0) {
        return Err(Error::invalid("max polar angle must lie in (0°, 90°)"));
    }
    let (lo, hi) = policy.intensity;
    if !(lo > 0.0 && lo <= hi) {
        return Err(Error::invalid("intensity range must be positive and ordered"));
    }
    let zmin = policy.max_polar_deg.to_radians().cos();
    (0..k)
        .map(|_| {
            let z: f64 = rng.random_range(zmin..=1.0);
            let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let r = (1.0 - z * z).max(0.0).sqrt();
            let d = [r * phi.cos(), r * phi.sin(), z];
            let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            let i = if lo < hi { rng.random_range(lo..hi) } else { lo };
            LightSample::white(d.map(|c| c / n), i)
        })
        .collect()
}
