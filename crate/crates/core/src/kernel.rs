//! Mollified Coulomb kernel sums.
//!
//! Every nonlocal field in the model is a direct summation over weighted
//! point sources against the regularized kernel `1/sqrt(|x|^2 + eps^2)`:
//! the Newtonian potential of the charge density, its gradient (the
//! self-consistent force), the nonlocal fields coupling a linearized
//! solution back to its coefficient, and the convolution representation of
//! the optimal control.  Velocity integration is carried by marker weights;
//! there is no velocity grid.

use crate::par;
use crate::phase::ensemble::ParticleEnsemble;
use crate::phase::grids::SpatialGrid;
use crate::phase::vec3::Vec3;
use crate::{Error, Result};

/// Smoothing of the `1/|x|` kernel: value `1/sqrt(|x|^2+eps^2)` is bounded
/// by `1/eps`, the gradient by `c/eps^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MollifiedKernel {
    pub eps: f64,
}

impl MollifiedKernel {
    pub fn new(eps: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::InvalidParameter(
                "mollification length must be > 0".into(),
            ));
        }
        Ok(MollifiedKernel { eps })
    }

    /// Kernel value at displacement `d`.
    #[inline]
    pub fn value(&self, d: Vec3) -> f64 {
        1.0 / (d.norm_sq() + self.eps * self.eps).sqrt()
    }

    /// Kernel gradient `-d / (|d|^2 + eps^2)^(3/2)` at displacement `d`.
    #[inline]
    pub fn grad(&self, d: Vec3) -> Vec3 {
        let inv = 1.0 / (d.norm_sq() + self.eps * self.eps);
        d * (-inv * inv.sqrt())
    }
}

/// Potential of the ensemble's charge density at `x`:
/// `sum_i w_i f_i / sqrt(|x - x_i|^2 + eps^2)`.
pub fn psi(kernel: &MollifiedKernel, ens: &ParticleEnsemble, x: Vec3) -> Result<f64> {
    if ens.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let mut acc = 0.0;
    for i in 0..ens.len() {
        acc += ens.w[i] * ens.f[i] * kernel.value(x - ens.pos[i]);
    }
    Ok(acc)
}

/// Spatial gradient of [`psi`]:
/// `-sum_i w_i f_i (x - x_i) / (|x - x_i|^2 + eps^2)^(3/2)`.
pub fn grad_psi(kernel: &MollifiedKernel, ens: &ParticleEnsemble, x: Vec3) -> Vec3 {
    let eps2 = kernel.eps * kernel.eps;
    let mut acc = Vec3::ZERO;
    for i in 0..ens.len() {
        let d = x - ens.pos[i];
        let inv = 1.0 / (d.norm_sq() + eps2);
        acc += d * (-ens.w[i] * ens.f[i] * inv * inv.sqrt());
    }
    acc
}

/// [`grad_psi`] evaluated at every marker position, excluding the marker's
/// own contribution (a marker exerts no force on itself).
pub fn grad_psi_at_markers(kernel: &MollifiedKernel, ens: &ParticleEnsemble) -> Vec<Vec3> {
    let eps2 = kernel.eps * kernel.eps;
    let pos = &ens.pos;
    let q: Vec<f64> = ens.w.iter().zip(&ens.f).map(|(w, f)| w * f).collect();
    par::map_indexed(ens.len(), |i| {
        let xi = pos[i];
        let mut acc = Vec3::ZERO;
        for j in 0..pos.len() {
            if j == i {
                continue;
            }
            let d = xi - pos[j];
            let inv = 1.0 / (d.norm_sq() + eps2);
            acc += d * (-q[j] * inv * inv.sqrt());
        }
        acc
    })
}

/// [`grad_psi`] of generic weighted sources, tabulated on every node of a
/// spatial grid.
pub fn grad_psi_table(
    kernel: &MollifiedKernel,
    src_pos: &[Vec3],
    src_charge: &[f64],
    grid: &SpatialGrid,
) -> Vec<Vec3> {
    let eps2 = kernel.eps * kernel.eps;
    par::map_indexed(grid.n_nodes(), |idx| {
        let x = grid.node(idx);
        let mut acc = Vec3::ZERO;
        for (p, q) in src_pos.iter().zip(src_charge) {
            let d = x - *p;
            let inv = 1.0 / (d.norm_sq() + eps2);
            acc += d * (-q * inv * inv.sqrt());
        }
        acc
    })
}

/// The nonlocal field coupling a linear Vlasov solution to a coefficient
/// `a`: `-sum_i w_i f_i (x - x_i) . dva_i / (|x - x_i|^2 + eps^2)^(3/2)`
/// where `dva_i` is the velocity gradient of `a` at marker `i`.
pub fn phi_field(
    kernel: &MollifiedKernel,
    ens: &ParticleEnsemble,
    dva: &[Vec3],
    x: Vec3,
) -> Result<f64> {
    if dva.len() != ens.len() {
        return Err(Error::MissingGradients(
            "phi_field needs a v-gradient of the coefficient at every marker".into(),
        ));
    }
    let eps2 = kernel.eps * kernel.eps;
    let mut acc = 0.0;
    for i in 0..ens.len() {
        let d = x - ens.pos[i];
        let inv = 1.0 / (d.norm_sq() + eps2);
        acc -= ens.w[i] * ens.f[i] * inv * inv.sqrt() * d.dot(dva[i]);
    }
    Ok(acc)
}

/// Marker-carried phase-space gradients used by [`phi_prime`].
#[derive(Debug, Clone)]
pub struct MarkerGrads {
    /// x-gradient of the coefficient at each marker.
    pub dxa: Vec<Vec3>,
    /// v-gradient of the coefficient at each marker.
    pub dva: Vec<Vec3>,
    /// x-gradient of the solution at each marker.
    pub dxf: Vec<Vec3>,
    /// v-gradient of the solution at each marker.
    pub dvf: Vec<Vec3>,
}

/// Derivative form of [`phi_field`]: component `j` is
/// `-sum_i w_i K(x - x_i) . ( dva_i dxf_i[j] - dvf_i dxa_i[j] )` with the
/// kernel gradient direction `K(d) = d/(|d|^2+eps^2)^(3/2)`.  Component-wise
/// it agrees with the x-derivatives of [`phi_field`].
pub fn phi_prime(
    kernel: &MollifiedKernel,
    ens: &ParticleEnsemble,
    grads: &MarkerGrads,
    x: Vec3,
) -> Result<Vec3> {
    let n = ens.len();
    if grads.dxa.len() != n || grads.dva.len() != n || grads.dxf.len() != n || grads.dvf.len() != n
    {
        return Err(Error::MissingGradients(
            "phi_prime needs x- and v-gradients of coefficient and solution at every marker"
                .into(),
        ));
    }
    let eps2 = kernel.eps * kernel.eps;
    let mut out = Vec3::ZERO;
    for i in 0..n {
        let d = x - ens.pos[i];
        let inv = 1.0 / (d.norm_sq() + eps2);
        let kv = d * (inv * inv.sqrt());
        let w = ens.w[i];
        for j in 0..3 {
            let bracket = grads.dva[i] * grads.dxf[i].comp(j) - grads.dvf[i] * grads.dxa[i].comp(j);
            out.set_comp(j, out.comp(j) - w * kv.dot(bracket));
        }
    }
    Ok(out)
}

/// One time slice of the convolution representation of the optimal
/// control, evaluated on every grid node:
/// `B(x) = 1/(4 pi lambda) sum_i w_i f_i (v_i x dvg_i) / sqrt(|x-x_i|^2+eps^2)`,
/// the integration-by-parts form that needs only v-gradients of the
/// costate (`dvg_i`), not of the state.
pub fn control_slice_from_fg(
    kernel: &MollifiedKernel,
    ens: &ParticleEnsemble,
    dvg: &[Vec3],
    lambda: f64,
    grid: &SpatialGrid,
) -> Result<Vec<Vec3>> {
    if !(lambda > 0.0) {
        return Err(Error::RepresentationUndefined);
    }
    if dvg.len() != ens.len() {
        return Err(Error::MissingGradients(
            "control representation needs costate v-gradients at every marker".into(),
        ));
    }
    let coef = 1.0 / (4.0 * std::f64::consts::PI * lambda);
    // moment per marker: w f (v x dvg)
    let moment: Vec<Vec3> = (0..ens.len())
        .map(|i| ens.vel[i].cross(dvg[i]) * (ens.w[i] * ens.f[i]))
        .collect();
    Ok(par::map_indexed(grid.n_nodes(), |idx| {
        let x = grid.node(idx);
        let mut acc = Vec3::ZERO;
        for i in 0..ens.len() {
            acc += moment[i] * kernel.value(x - ens.pos[i]);
        }
        acc * coef
    }))
}
