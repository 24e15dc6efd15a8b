//! Compactly supported C^2 initial data in phase space.

use crate::phase::vec3::Phase6;
use crate::{Error, Result};

/// Cubic bump `f(z) = c * max(0, 1 - |z|^2/r^2)^3`.
///
/// Twice continuously differentiable, supported in the ball `|z| < r`,
/// with a closed-form gradient that vanishes on the support boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitialDatum {
    pub amplitude: f64,
    pub radius: f64,
}

impl InitialDatum {
    pub fn new(amplitude: f64, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || amplitude < 0.0 || !amplitude.is_finite() {
            return Err(Error::InvalidParameter(
                "datum requires radius > 0 and amplitude >= 0".into(),
            ));
        }
        Ok(InitialDatum { amplitude, radius })
    }

    #[inline]
    pub fn eval(&self, z: Phase6) -> f64 {
        let u = 1.0 - z.norm_sq() / (self.radius * self.radius);
        if u <= 0.0 {
            0.0
        } else {
            self.amplitude * u * u * u
        }
    }

    /// Gradient in all six phase-space components.
    #[inline]
    pub fn grad(&self, z: Phase6) -> Phase6 {
        let r2 = self.radius * self.radius;
        let u = 1.0 - z.norm_sq() / r2;
        if u <= 0.0 {
            Phase6::default()
        } else {
            let s = -6.0 * self.amplitude * u * u / r2;
            Phase6::new(z.x * s, z.v * s)
        }
    }

    /// `int f dz` over phase space, in closed form (6D radial integral).
    pub fn mass(&self) -> f64 {
        // surface of the unit 5-sphere is pi^3; int_0^1 (1-u^2)^3 u^5 du = 1/120.
        let pi3 = std::f64::consts::PI.powi(3);
        self.amplitude * self.radius.powi(6) * pi3 / 120.0
    }

    /// `int f^2 dz` in closed form.
    pub fn l2_sq(&self) -> f64 {
        // int_0^1 (1-u^2)^6 u^5 du = 1/2 * B(3,7) = 1/504.
        let pi3 = std::f64::consts::PI.powi(3);
        self.amplitude * self.amplitude * self.radius.powi(6) * pi3 / 504.0
    }
}
