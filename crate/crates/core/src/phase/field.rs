//! The magnetic control field on a space-time grid.

use crate::phase::grids::{SpatialGrid, TimeGrid};
use crate::phase::vec3::Vec3;
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Field values `B[k][node]` on every time node of a [`TimeGrid`] and every
/// node of a [`SpatialGrid`].  Evaluation is trilinear in space and linear
/// in time, with zero extension outside the cube.  This is the optimization
/// variable.
#[derive(Debug, Clone)]
pub struct ControlField {
    pub time: TimeGrid,
    pub grid: SpatialGrid,
    /// Time-major storage: `vals[k * grid.n_nodes() + node]`.
    pub vals: Vec<Vec3>,
}

impl ControlField {
    pub fn zeros(time: TimeGrid, grid: SpatialGrid) -> Self {
        let len = time.n_nodes() * grid.n_nodes();
        ControlField {
            time,
            grid,
            vals: vec![Vec3::ZERO; len],
        }
    }

    pub fn constant(time: TimeGrid, grid: SpatialGrid, b: Vec3) -> Self {
        let len = time.n_nodes() * grid.n_nodes();
        ControlField {
            time,
            grid,
            vals: vec![b; len],
        }
    }

    /// Fills the field by sampling a closure at every `(t, x)` node pair.
    pub fn from_fn(time: TimeGrid, grid: SpatialGrid, f: impl Fn(f64, Vec3) -> Vec3) -> Self {
        let mut field = ControlField::zeros(time, grid);
        for k in 0..field.time.n_nodes() {
            let t = field.time.node(k);
            for idx in 0..field.grid.n_nodes() {
                let x = field.grid.node(idx);
                field.vals[k * field.grid.n_nodes() + idx] = f(t, x);
            }
        }
        field
    }

    #[inline]
    pub fn slice(&self, k: usize) -> &[Vec3] {
        let n = self.grid.n_nodes();
        &self.vals[k * n..(k + 1) * n]
    }

    #[inline]
    pub fn slice_mut(&mut self, k: usize) -> &mut [Vec3] {
        let n = self.grid.n_nodes();
        &mut self.vals[k * n..(k + 1) * n]
    }

    pub fn same_layout(&self, other: &ControlField) -> Result<()> {
        if self.time != other.time || !self.grid.same_layout(&other.grid) {
            return Err(Error::MismatchedGrids(
                "control fields live on different grids".into(),
            ));
        }
        Ok(())
    }

    /// Trilinear interpolation of one time slice; zero outside the cube.
    pub fn eval_slice(&self, k: usize, x: Vec3) -> Vec3 {
        match self.grid.stencil(x) {
            None => Vec3::ZERO,
            Some((base, frac)) => {
                let s = self.slice(k);
                let g = &self.grid;
                let mut acc = Vec3::ZERO;
                for (di, wi) in [(0usize, 1.0 - frac[0]), (1, frac[0])] {
                    for (dj, wj) in [(0usize, 1.0 - frac[1]), (1, frac[1])] {
                        let wij = wi * wj;
                        if wij == 0.0 {
                            continue;
                        }
                        for (dk, wk) in [(0usize, 1.0 - frac[2]), (1, frac[2])] {
                            let w = wij * wk;
                            if w == 0.0 {
                                continue;
                            }
                            let idx = g.index(base[0] + di, base[1] + dj, base[2] + dk);
                            acc += s[idx] * w;
                        }
                    }
                }
                acc
            }
        }
    }

    /// Space-time evaluation: linear in `t`, trilinear in `x`.
    pub fn eval(&self, t: f64, x: Vec3) -> Vec3 {
        let tg = &self.time;
        let tau = (t / tg.dt).clamp(0.0, tg.n_steps as f64);
        let k = (tau.floor() as usize).min(tg.n_steps.saturating_sub(1));
        let w = tau - k as f64;
        if w == 0.0 {
            self.eval_slice(k, x)
        } else {
            self.eval_slice(k, x) * (1.0 - w) + self.eval_slice(k + 1, x) * w
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.vals {
            *v = *v * s;
        }
    }

    pub fn scaled(&self, s: f64) -> ControlField {
        let mut out = self.clone();
        out.scale(s);
        out
    }

    /// `self += s * other`.
    pub fn add_scaled(&mut self, other: &ControlField, s: f64) -> Result<()> {
        self.same_layout(other)?;
        for (a, b) in self.vals.iter_mut().zip(&other.vals) {
            *a += *b * s;
        }
        Ok(())
    }

    pub fn lin_comb(a: &ControlField, sa: f64, b: &ControlField, sb: f64) -> Result<ControlField> {
        a.same_layout(b)?;
        let mut out = a.scaled(sa);
        out.add_scaled(b, sb)?;
        Ok(out)
    }

    /// Plain space-time L2 inner product: trapezoid in time, node sum
    /// times cell volume in space.
    pub fn l2_inner(&self, other: &ControlField) -> Result<f64> {
        self.same_layout(other)?;
        let vol = self.grid.cell_volume();
        let mut acc = 0.0;
        for k in 0..self.time.n_nodes() {
            let wt = self.time.trap_weight(k);
            let mut s = 0.0;
            for (a, b) in self.slice(k).iter().zip(other.slice(k)) {
                s += a.dot(*b);
            }
            acc += wt * vol * s;
        }
        Ok(acc)
    }

    pub fn l2_norm(&self) -> f64 {
        self.l2_inner(self).unwrap().sqrt()
    }

    /// Gradient inner product `<D_x A, D_x B>` over links (forward
    /// differences between neighbouring nodes), trapezoid in time.  This is
    /// the bilinear form whose exact adjoint is [`ControlField::laplacian`].
    pub fn grad_inner(&self, other: &ControlField) -> Result<f64> {
        self.same_layout(other)?;
        let vol = self.grid.cell_volume();
        let n = self.grid.n;
        let h2 = self.grid.h * self.grid.h;
        let mut acc = 0.0;
        for k in 0..self.time.n_nodes() {
            let wt = self.time.trap_weight(k);
            let a = self.slice(k);
            let b = other.slice(k);
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    for l in 0..n {
                        let idx = self.grid.index(i, j, l);
                        if i + 1 < n {
                            let idx2 = self.grid.index(i + 1, j, l);
                            s += (a[idx2] - a[idx]).dot(b[idx2] - b[idx]);
                        }
                        if j + 1 < n {
                            let idx2 = self.grid.index(i, j + 1, l);
                            s += (a[idx2] - a[idx]).dot(b[idx2] - b[idx]);
                        }
                        if l + 1 < n {
                            let idx2 = self.grid.index(i, j, l + 1);
                            s += (a[idx2] - a[idx]).dot(b[idx2] - b[idx]);
                        }
                    }
                }
            }
            acc += wt * vol * s / h2;
        }
        Ok(acc)
    }

    /// Discrete Laplacian: second differences per axis, one-sided rows at
    /// the boundary, chosen so that `<-lap(B), H>` under [`Self::l2_inner`]
    /// equals [`Self::grad_inner`] exactly (summation by parts on the grid).
    pub fn laplacian(&self) -> ControlField {
        let mut out = ControlField::zeros(self.time.clone(), self.grid.clone());
        let n = self.grid.n;
        let h2 = self.grid.h * self.grid.h;
        for k in 0..self.time.n_nodes() {
            let src = self.slice(k);
            let n_nodes = self.grid.n_nodes();
            let dst = &mut out.vals[k * n_nodes..(k + 1) * n_nodes];
            for i in 0..n {
                for j in 0..n {
                    for l in 0..n {
                        let idx = self.grid.index(i, j, l);
                        let mut acc = Vec3::ZERO;
                        for (d, c) in [(0usize, i), (1, j), (2, l)] {
                            let at = |m: usize| -> Vec3 {
                                let mut ijk = [i, j, l];
                                ijk[d] = m;
                                src[self.grid.index(ijk[0], ijk[1], ijk[2])]
                            };
                            if c == 0 {
                                acc += at(1) - at(0);
                            } else if c == n - 1 {
                                acc += at(n - 2) - at(n - 1);
                            } else {
                                acc += at(c + 1) - at(c) * 2.0 + at(c - 1);
                            }
                        }
                        dst[idx] = acc * (1.0 / h2);
                    }
                }
            }
        }
        out
    }

    /// Node-based first derivatives (central in the interior, one-sided at
    /// the boundary) of one time slice; used by diagnostics and probes.
    pub fn grad_central(&self, k: usize, i: usize, j: usize, l: usize) -> [Vec3; 3] {
        let s = self.slice(k);
        let n = self.grid.n;
        let h = self.grid.h;
        let mut out = [Vec3::ZERO; 3];
        for (d, c) in [(0usize, i), (1, j), (2, l)] {
            let at = |m: usize| -> Vec3 {
                let mut ijk = [i, j, l];
                ijk[d] = m;
                s[self.grid.index(ijk[0], ijk[1], ijk[2])]
            };
            out[d] = if c == 0 {
                (at(1) - at(0)) * (1.0 / h)
            } else if c == n - 1 {
                (at(n - 1) - at(n - 2)) * (1.0 / h)
            } else {
                (at(c + 1) - at(c - 1)) * (0.5 / h)
            };
        }
        out
    }

    /// Sup over nodes of `|B|`, one time slice.
    pub fn sup_slice(&self, k: usize) -> f64 {
        self.slice(k).iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// Discrete surrogate of the admissible-field norm: all derivatives up to
/// second order in L2 over the grid, trapezoid in time,
/// `sqrt( sum_k w_k [ |B|^2 + |D_x B|^2 + |D2_x B|^2 ]_L2 )`.
/// A Hilbert norm, so projection onto the admissible ball is exact radial
/// scaling.
pub fn v_norm(field: &ControlField) -> f64 {
    v_inner(field, field).unwrap().sqrt()
}

/// The inner product that induces [`v_norm`].
pub fn v_inner(a: &ControlField, b: &ControlField) -> Result<f64> {
    a.same_layout(b)?;
    let l2 = a.l2_inner(b)?;
    let grad = a.grad_inner(b)?;
    // second-difference form (diagonal of the Hessian surrogate)
    let vol = a.grid.cell_volume();
    let mut acc2 = 0.0;
    if a.grid.n >= 3 {
        for k in 0..a.time.n_nodes() {
            let wt = a.time.trap_weight(k);
            // polarization: reuse the squared form through linearity
            acc2 += wt * vol * second_diff_inner(a, b, k);
        }
    }
    Ok(l2 + grad + acc2)
}

fn second_diff_inner(a: &ControlField, b: &ControlField, k: usize) -> f64 {
    let sa = a.slice(k);
    let sb = b.slice(k);
    let n = a.grid.n;
    let h2 = a.grid.h * a.grid.h;
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            for l in 0..n {
                for (d, c) in [(0usize, i), (1, j), (2, l)] {
                    let at = |s: &[Vec3], m: usize| -> Vec3 {
                        let mut ijk = [i, j, l];
                        ijk[d] = m;
                        s[a.grid.index(ijk[0], ijk[1], ijk[2])]
                    };
                    let sd = |s: &[Vec3]| -> Vec3 {
                        if c == 0 {
                            at(s, 2) - at(s, 1) * 2.0 + at(s, 0)
                        } else if c == n - 1 {
                            at(s, n - 1) - at(s, n - 2) * 2.0 + at(s, n - 3)
                        } else {
                            at(s, c + 1) - at(s, c) * 2.0 + at(s, c - 1)
                        }
                    };
                    acc += sd(sa).dot(sd(sb)) / (h2 * h2);
                }
            }
        }
    }
    acc
}

/// Smooth envelope vanishing at the cube boundary; keeps randomly generated
/// fields compatible with the zero extension outside the grid.
pub fn boundary_envelope(grid: &SpatialGrid, x: Vec3) -> f64 {
    let mut e = 1.0;
    for d in 0..3 {
        let c = (std::f64::consts::FRAC_PI_2 * x.comp(d) / grid.l).cos();
        e *= c * c;
    }
    e
}

/// Band-limited random field: a few low-wavenumber modes per component with
/// seeded coefficients, multiplied by the boundary envelope.  Deterministic
/// for a fixed seed.
pub fn band_limited_random(
    time: TimeGrid,
    grid: SpatialGrid,
    seed: u64,
    amplitude: f64,
    n_modes: usize,
) -> ControlField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // (component, wave vector, phase, temporal slope, weight)
    let mut modes = Vec::new();
    for _ in 0..n_modes.max(1) {
        let comp = rng.gen_range(0..3usize);
        let kx = rng.gen_range(1..=2u32) as f64;
        let ky = rng.gen_range(0..=2u32) as f64;
        let kz = rng.gen_range(0..=2u32) as f64;
        let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let slope: f64 = rng.gen_range(-0.5..0.5);
        let weight: f64 = rng.gen_range(0.5..1.0);
        modes.push((comp, Vec3::new(kx, ky, kz), phase, slope, weight));
    }
    let t_final = time.t_final;
    let l = grid.l;
    ControlField::from_fn(time, grid, |t, x| {
        let env = {
            let mut e = 1.0;
            for d in 0..3 {
                let c = (std::f64::consts::FRAC_PI_2 * x.comp(d) / l).cos();
                e *= c * c;
            }
            e
        };
        let mut b = Vec3::ZERO;
        for (comp, k, phase, slope, weight) in &modes {
            let arg = std::f64::consts::PI * (k.x * x.x + k.y * x.y + k.z * x.z) / l + phase;
            let tdep = 1.0 + slope * t / t_final;
            let val = amplitude * weight * env * arg.sin() * tdep;
            let mut v = Vec3::ZERO;
            v.set_comp(*comp, val);
            b += v;
        }
        b
    })
}
