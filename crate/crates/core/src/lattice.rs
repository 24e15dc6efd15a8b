//! Fixed 6D lattice: the solution carrier of the linear Vlasov solver and
//! the bridge between marker ensembles and lattice functions.
//!
//! Nodes span the cube `[-a, a]^6` with `n` per axis; only nodes inside a
//! ball (the coefficient support plus a two-cell shell) are *active* --
//! values elsewhere are identically zero and never touched.  Marker data
//! enters through cloud-in-cell deposition; lattice data is read back by
//! multilinear interpolation.  The two are exact transposes of each other,
//! which the gradient assembly relies on.

use crate::phase::ensemble::ParticleEnsemble;
use crate::phase::vec3::{Phase6, Vec3};
use crate::{Error, Result};
use std::sync::Arc;

const INACTIVE: u32 = u32::MAX;

/// Geometry and active-node bookkeeping of the lattice.
#[derive(Debug)]
pub struct Lattice6 {
    /// Per-axis half-width of the node cube.
    pub half_width: f64,
    /// Nodes per axis.
    pub n: usize,
    /// Node spacing.
    pub h: f64,
    /// Radius of the support ball the lattice was sized for.
    pub r_support: f64,
    /// Nodes with `|z| <= r_active` are stored and evaluated.
    pub r_active: f64,
    /// Positions of active nodes.
    pub active_pos: Vec<Phase6>,
    /// Multi-indices of active nodes.
    active_idx: Vec<[u16; 6]>,
    /// Dense `n^6` map from multi-index to active slot (INACTIVE outside).
    dense: Vec<u32>,
    /// Active nodes grouped by spatial sub-index: `(x position,
    /// [(active slot, velocity)])`; the velocity reduction of kernel sums.
    pub x_groups: Vec<(Vec3, Vec<(u32, Vec3)>)>,
}

impl Lattice6 {
    /// Sizes the cube so markers anywhere in the support ball deposit
    /// without clipping (`half_width = r + h`), which fixes
    /// `h = 2 r / (n - 3)`.  Active nodes fill the support ball exactly:
    /// every consumer of lattice values weights them by a coefficient
    /// supported inside that ball, so an outer shell would only carry
    /// near-zero data at six-dimensional node counts.
    pub fn new(r_support: f64, n: usize) -> Result<Arc<Self>> {
        if n < 5 || n > 19 {
            return Err(Error::InvalidParameter(
                "lattice nodes per axis must lie in [5, 19]".into(),
            ));
        }
        if !(r_support > 0.0) {
            return Err(Error::InvalidParameter(
                "lattice support radius must be > 0".into(),
            ));
        }
        let h = 2.0 * r_support / (n - 3) as f64;
        let half_width = r_support + h;
        let r_active = r_support;

        let coord = |i: usize| -> f64 { -half_width + h * i as f64 };
        let n6 = n.pow(6);
        let mut dense = vec![INACTIVE; n6];
        let mut active_pos = Vec::new();
        let mut active_idx = Vec::new();
        let r2 = r_active * r_active;
        let mut idx = [0usize; 6];
        for d0 in 0..n {
            idx[0] = d0;
            for d1 in 0..n {
                idx[1] = d1;
                for d2 in 0..n {
                    idx[2] = d2;
                    let x = Vec3::new(coord(d0), coord(d1), coord(d2));
                    let x2 = x.norm_sq();
                    if x2 > r2 {
                        continue;
                    }
                    for d3 in 0..n {
                        idx[3] = d3;
                        for d4 in 0..n {
                            idx[4] = d4;
                            for d5 in 0..n {
                                idx[5] = d5;
                                let v = Vec3::new(coord(d3), coord(d4), coord(d5));
                                if x2 + v.norm_sq() > r2 {
                                    continue;
                                }
                                let dense_i = Self::dense_index_static(n, &idx);
                                dense[dense_i] = active_pos.len() as u32;
                                active_pos.push(Phase6::new(x, v));
                                active_idx.push([
                                    d0 as u16, d1 as u16, d2 as u16, d3 as u16, d4 as u16,
                                    d5 as u16,
                                ]);
                            }
                        }
                    }
                }
            }
        }
        if active_pos.is_empty() {
            return Err(Error::InvalidParameter(
                "lattice has no active nodes".into(),
            ));
        }

        // group by spatial sub-index
        let mut groups: std::collections::BTreeMap<[u16; 3], Vec<(u32, Vec3)>> =
            std::collections::BTreeMap::new();
        for (slot, mi) in active_idx.iter().enumerate() {
            groups
                .entry([mi[0], mi[1], mi[2]])
                .or_default()
                .push((slot as u32, active_pos[slot].v));
        }
        let x_groups = groups
            .into_iter()
            .map(|(key, list)| {
                let x = Vec3::new(
                    coord(key[0] as usize),
                    coord(key[1] as usize),
                    coord(key[2] as usize),
                );
                (x, list)
            })
            .collect();

        Ok(Arc::new(Lattice6 {
            half_width,
            n,
            h,
            r_support,
            r_active,
            active_pos,
            active_idx,
            dense,
            x_groups,
        }))
    }

    #[inline]
    fn dense_index_static(n: usize, idx: &[usize; 6]) -> usize {
        ((((idx[0] * n + idx[1]) * n + idx[2]) * n + idx[3]) * n + idx[4]) * n + idx[5]
    }

    pub fn n_active(&self) -> usize {
        self.active_pos.len()
    }

    #[inline]
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(6)
    }

    /// Active slot of a multi-index, if active.
    #[inline]
    fn slot(&self, idx: &[usize; 6]) -> u32 {
        self.dense[Self::dense_index_static(self.n, idx)]
    }

    /// Value at the active neighbor `idx +- 1` along dimension `d`; zero
    /// outside the cube or outside the active ball.
    #[inline]
    fn neighbor_val(&self, vals: &[f64], mi: &[u16; 6], d: usize, up: bool) -> f64 {
        let c = mi[d] as isize + if up { 1 } else { -1 };
        if c < 0 || c >= self.n as isize {
            return 0.0;
        }
        let mut idx = [0usize; 6];
        for k in 0..6 {
            idx[k] = mi[k] as usize;
        }
        idx[d] = c as usize;
        let s = self.slot(&idx);
        if s == INACTIVE {
            0.0
        } else {
            vals[s as usize]
        }
    }

    /// Base indices and fractional offsets of the interpolation cell
    /// containing `z`; `None` outside the cube.
    #[inline]
    fn stencil(&self, z: Phase6) -> Option<([usize; 6], [f64; 6])> {
        let mut base = [0usize; 6];
        let mut frac = [0.0f64; 6];
        for d in 0..6 {
            let s = (z.comp(d) + self.half_width) / self.h;
            if !s.is_finite() || s < 0.0 || s > (self.n - 1) as f64 {
                return None;
            }
            let mut i = s.floor() as usize;
            if i >= self.n - 1 {
                i = self.n - 2;
            }
            base[d] = i;
            frac[d] = s - i as f64;
        }
        Some((base, frac))
    }

    /// Multilinear interpolation of an active-indexed value vector; zero
    /// outside the cube, inactive corners read as zero.
    pub fn interp(&self, vals: &[f64], z: Phase6) -> f64 {
        let Some((base, frac)) = self.stencil(z) else {
            return 0.0;
        };
        let mut acc = 0.0;
        // 64 corners
        for corner in 0..64usize {
            let mut w = 1.0;
            let mut idx = [0usize; 6];
            for d in 0..6 {
                let up = (corner >> d) & 1;
                idx[d] = base[d] + up;
                w *= if up == 1 { frac[d] } else { 1.0 - frac[d] };
            }
            if w == 0.0 {
                continue;
            }
            let s = self.slot(&idx);
            if s != INACTIVE {
                acc += w * vals[s as usize];
            }
        }
        acc
    }

    /// Multilinear interpolation of an active-indexed 3-vector field.
    pub fn interp_vec(&self, vals: &[Vec3], z: Phase6) -> Vec3 {
        let Some((base, frac)) = self.stencil(z) else {
            return Vec3::ZERO;
        };
        let mut acc = Vec3::ZERO;
        for corner in 0..64usize {
            let mut w = 1.0;
            let mut idx = [0usize; 6];
            for d in 0..6 {
                let up = (corner >> d) & 1;
                idx[d] = base[d] + up;
                w *= if up == 1 { frac[d] } else { 1.0 - frac[d] };
            }
            if w == 0.0 {
                continue;
            }
            let s = self.slot(&idx);
            if s != INACTIVE {
                acc += vals[s as usize] * w;
            }
        }
        acc
    }

    /// Central-difference gradient along the three velocity axes at every
    /// active node (missing neighbors read as zero).
    pub fn grad_v(&self, vals: &[f64]) -> Vec<Vec3> {
        let inv2h = 0.5 / self.h;
        (0..self.n_active())
            .map(|a| {
                let mi = &self.active_idx[a];
                Vec3::new(
                    (self.neighbor_val(vals, mi, 3, true) - self.neighbor_val(vals, mi, 3, false))
                        * inv2h,
                    (self.neighbor_val(vals, mi, 4, true) - self.neighbor_val(vals, mi, 4, false))
                        * inv2h,
                    (self.neighbor_val(vals, mi, 5, true) - self.neighbor_val(vals, mi, 5, false))
                        * inv2h,
                )
            })
            .collect()
    }

    /// Central-difference gradient along the three spatial axes.
    pub fn grad_x(&self, vals: &[f64]) -> Vec<Vec3> {
        let inv2h = 0.5 / self.h;
        (0..self.n_active())
            .map(|a| {
                let mi = &self.active_idx[a];
                Vec3::new(
                    (self.neighbor_val(vals, mi, 0, true) - self.neighbor_val(vals, mi, 0, false))
                        * inv2h,
                    (self.neighbor_val(vals, mi, 1, true) - self.neighbor_val(vals, mi, 1, false))
                        * inv2h,
                    (self.neighbor_val(vals, mi, 2, true) - self.neighbor_val(vals, mi, 2, false))
                        * inv2h,
                )
            })
            .collect()
    }

    /// Discrete L2 inner product over active nodes.
    pub fn l2_inner(&self, a: &[f64], b: &[f64]) -> f64 {
        let vol = self.cell_volume();
        a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() * vol
    }

    pub fn l2_norm(&self, a: &[f64]) -> f64 {
        self.l2_inner(a, a).sqrt()
    }

    pub fn sup_norm(&self, a: &[f64]) -> f64 {
        a.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
    }

    /// Sup over active nodes inside `|z| <= radius`.
    pub fn sup_norm_within(&self, a: &[f64], radius: f64) -> f64 {
        let r2 = radius * radius;
        let mut m = 0.0f64;
        for (slot, z) in self.active_pos.iter().enumerate() {
            if z.norm_sq() <= r2 {
                m = m.max(a[slot].abs());
            }
        }
        m
    }
}

/// A scalar function carried on the active nodes of a lattice.
#[derive(Debug, Clone)]
pub struct LatticeFn {
    pub lattice: Arc<Lattice6>,
    pub vals: Vec<f64>,
    /// Marker mass captured by the deposit divided by the ensemble mass
    /// (1 when nothing was clipped); `None` for functions not built by
    /// deposition.
    pub mass_ratio: Option<f64>,
}

impl LatticeFn {
    pub fn zeros(lattice: Arc<Lattice6>) -> Self {
        let n = lattice.n_active();
        LatticeFn {
            lattice,
            vals: vec![0.0; n],
            mass_ratio: None,
        }
    }

    pub fn from_fn(lattice: Arc<Lattice6>, f: impl Fn(Phase6) -> f64) -> Self {
        let vals = lattice.active_pos.iter().map(|&z| f(z)).collect();
        LatticeFn {
            lattice,
            vals,
            mass_ratio: None,
        }
    }

    pub fn eval(&self, z: Phase6) -> f64 {
        self.lattice.interp(&self.vals, z)
    }
}

/// Cloud-in-cell deposition of marker values onto the lattice:
/// `F_j = sum_i w_i f_i W_j(z_i) / h^6` with the 64-corner tent weights
/// `W_j`.  Exactly transposed to [`Lattice6::interp`], mass preserving up
/// to the tail clipped by the active ball.  Markers outside the node cube
/// are an error (the lattice was sized wrongly for this ensemble).
pub fn lattice_deposit(lattice: &Arc<Lattice6>, ens: &ParticleEnsemble) -> Result<LatticeFn> {
    let mut vals = vec![0.0f64; lattice.n_active()];
    let inv_vol = 1.0 / lattice.cell_volume();
    let mut escaped: Vec<usize> = Vec::new();
    for i in 0..ens.len() {
        let z = ens.phase(i);
        let Some((base, frac)) = lattice.stencil(z) else {
            escaped.push(i);
            if escaped.len() >= 8 {
                break;
            }
            continue;
        };
        let q = ens.w[i] * ens.f[i] * inv_vol;
        if q == 0.0 {
            continue;
        }
        for corner in 0..64usize {
            let mut w = 1.0;
            let mut idx = [0usize; 6];
            for d in 0..6 {
                let up = (corner >> d) & 1;
                idx[d] = base[d] + up;
                w *= if up == 1 { frac[d] } else { 1.0 - frac[d] };
            }
            if w == 0.0 {
                continue;
            }
            let s = lattice.slot(&idx);
            if s != INACTIVE {
                vals[s as usize] += q * w;
            }
        }
    }
    if !escaped.is_empty() {
        return Err(Error::SupportEscape {
            count: escaped.len(),
            first: escaped,
        });
    }
    let captured: f64 = vals.iter().sum::<f64>() * lattice.cell_volume();
    let total = ens.mass();
    let mass_ratio = if total.abs() > 0.0 {
        Some(captured / total)
    } else {
        None
    };
    Ok(LatticeFn {
        lattice: Arc::clone(lattice),
        vals,
        mass_ratio,
    })
}

/// Time series of lattice functions (one value vector per time node).
#[derive(Debug, Clone)]
pub struct LatticeSeries {
    pub lattice: Arc<Lattice6>,
    pub per_node: Vec<Vec<f64>>,
}

impl LatticeSeries {
    pub fn zeros(lattice: Arc<Lattice6>, n_nodes: usize) -> Self {
        let n = lattice.n_active();
        LatticeSeries {
            lattice,
            per_node: vec![vec![0.0; n]; n_nodes],
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.per_node.len()
    }

    /// Largest node-wise change against another series.
    pub fn sup_diff(&self, other: &LatticeSeries) -> f64 {
        let mut m = 0.0f64;
        for (a, b) in self.per_node.iter().zip(&other.per_node) {
            for (x, y) in a.iter().zip(b) {
                m = m.max((x - y).abs());
            }
        }
        m
    }
}

/// Time series of v-gradients on the lattice.
#[derive(Debug, Clone)]
pub struct GradSeries {
    pub lattice: Arc<Lattice6>,
    pub per_node: Vec<Vec<Vec3>>,
}

impl GradSeries {
    /// Central-difference v-gradients of every node of a series.
    pub fn of_series(series: &LatticeSeries) -> Self {
        GradSeries {
            lattice: Arc::clone(&series.lattice),
            per_node: series
                .per_node
                .iter()
                .map(|v| series.lattice.grad_v(v))
                .collect(),
        }
    }

    pub fn eval(&self, k: usize, z: Phase6) -> Vec3 {
        self.lattice.interp_vec(&self.per_node[k], z)
    }
}
