//! Phase-space characteristics of the transport operator.
//!
//! The flow map `Z(s, t, z)` solves `dx/ds = v`, `dv/ds = A(s,x) + v x B(s,x)`
//! with `Z(t, t, z) = z`, integrated by a classical 4th-order one-step
//! method, forward or backward in time.  Both fields are evaluated at the
//! running time.  The certified support-growth radius [`zeta`] bounds every
//! characteristic excursion from a ball.

use crate::phase::field::ControlField;
use crate::phase::vec3::{Phase6, Vec3};
use crate::{Error, Result};
use std::sync::Arc;

/// A time-space vector field evaluator.
#[derive(Clone)]
pub enum FieldEval {
    Zero,
    Constant(Vec3),
    /// Grid-tabulated field (linear in time, trilinear in space, zero
    /// outside the cube).
    Field(Arc<ControlField>),
    Closure(Arc<dyn Fn(f64, Vec3) -> Vec3 + Send + Sync>),
}

impl std::fmt::Debug for FieldEval {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FieldEval::Zero => write!(f, "FieldEval::Zero"),
            FieldEval::Constant(v) => write!(f, "FieldEval::Constant({v:?})"),
            FieldEval::Field(_) => write!(f, "FieldEval::Field(..)"),
            FieldEval::Closure(_) => write!(f, "FieldEval::Closure(..)"),
        }
    }
}

impl FieldEval {
    #[inline]
    pub fn eval(&self, t: f64, x: Vec3) -> Vec3 {
        match self {
            FieldEval::Zero => Vec3::ZERO,
            FieldEval::Constant(v) => *v,
            FieldEval::Field(f) => f.eval(t, x),
            FieldEval::Closure(f) => f(t, x),
        }
    }
}

/// The acceleration field `A` and magnetic field `B` driving one flow.
#[derive(Debug, Clone)]
pub struct FlowField {
    pub a: FieldEval,
    pub b: FieldEval,
}

impl FlowField {
    pub fn free_streaming() -> Self {
        FlowField {
            a: FieldEval::Zero,
            b: FieldEval::Zero,
        }
    }

    #[inline]
    fn deriv(&self, t: f64, z: Phase6) -> Phase6 {
        let acc = self.a.eval(t, z.x) + z.v.cross(self.b.eval(t, z.x));
        Phase6::new(z.v, acc)
    }

    /// One 4th-order step of size `h` starting at `(t, z)`.
    #[inline]
    pub fn rk4_step(&self, t: f64, z: Phase6, h: f64) -> Phase6 {
        let k1 = self.deriv(t, z);
        let k2 = self.deriv(t + 0.5 * h, z + k1 * (0.5 * h));
        let k3 = self.deriv(t + 0.5 * h, z + k2 * (0.5 * h));
        let k4 = self.deriv(t + h, z + k3 * h);
        z + (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0)
    }
}

/// Integrates the characteristic through `(t, z)` to time `s` with step
/// size at most `dt` (backward when `s < t`).  Errors with `Blowup` if a
/// non-finite state appears.
pub fn flow(field: &FlowField, t: f64, z: Phase6, s: f64, dt: f64) -> Result<Phase6> {
    if s == t {
        return Ok(z);
    }
    let span = s - t;
    let n = (span.abs() / dt).ceil().max(1.0) as usize;
    let h = span / n as f64;
    let mut state = z;
    let mut tau = t;
    for step in 0..n {
        state = field.rk4_step(tau, state, h);
        tau = t + (step + 1) as f64 * h;
        if !state.is_finite() {
            return Err(Error::Blowup { step });
        }
    }
    Ok(state)
}

/// Certified support-growth radius: characteristics started in the ball of
/// radius `r` stay inside the ball of radius
/// `exp(2 T) (r + sqrt(T) |A|_{L2(0,T;Linf)})` for all times in `[0, T]`.
pub fn zeta(r: f64, t_final: f64, a_norm: f64) -> f64 {
    (2.0 * t_final).exp() * (r + t_final.sqrt() * a_norm)
}

/// Jacobian of the flow map with respect to the phase-space argument, by
/// central finite differences of step `h_fd`.  Row `i`, column `j` holds
/// `d Z_i / d z_j`.
pub fn flow_jacobian(
    field: &FlowField,
    t: f64,
    z: Phase6,
    s: f64,
    h_fd: f64,
    dt: f64,
) -> Result<[[f64; 6]; 6]> {
    if !(h_fd > 0.0) {
        return Err(Error::InvalidParameter("h_fd must be > 0".into()));
    }
    let mut jac = [[0.0f64; 6]; 6];
    for j in 0..6 {
        let mut zp = z;
        let mut zm = z;
        zp.set_comp(j, z.comp(j) + h_fd);
        zm.set_comp(j, z.comp(j) - h_fd);
        let fp = flow(field, t, zp, s, dt)?;
        let fm = flow(field, t, zm, s, dt)?;
        for i in 0..6 {
            jac[i][j] = (fp.comp(i) - fm.comp(i)) / (2.0 * h_fd);
        }
    }
    Ok(jac)
}
