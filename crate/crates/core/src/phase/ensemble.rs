//! Marker ensembles: the discrete carrier of the distribution function.

use crate::phase::datum::InitialDatum;
use crate::phase::vec3::{Phase6, Vec3};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Markers in 6D phase space.  Each marker carries a solution value `f`
/// (constant along characteristics for transport equations) and a
/// quadrature weight `w` (the phase-space volume of its sampling cell).
#[derive(Debug, Clone, Default)]
pub struct ParticleEnsemble {
    pub pos: Vec<Vec3>,
    pub vel: Vec<Vec3>,
    pub f: Vec<f64>,
    pub w: Vec<f64>,
}

impl ParticleEnsemble {
    pub fn len(&self) -> usize {
        self.pos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pos.is_empty()
    }

    #[inline]
    pub fn phase(&self, i: usize) -> Phase6 {
        Phase6::new(self.pos[i], self.vel[i])
    }

    /// Total mass `sum w_i f_i`.
    pub fn mass(&self) -> f64 {
        self.w.iter().zip(&self.f).map(|(w, f)| w * f).sum()
    }

    /// Largest phase-space radius over markers.
    pub fn support_radius(&self) -> f64 {
        (0..self.len())
            .map(|i| self.phase(i).norm())
            .fold(0.0, f64::max)
    }

    /// Discrete `L^p` norm: `(sum w_i f_i^p)^(1/p)` for finite `p >= 1`,
    /// `max_i f_i` for `p = infinity` (pass `f64::INFINITY`).
    pub fn lp_norm(&self, p: f64) -> Result<f64> {
        if p.is_infinite() {
            return Ok(self.f.iter().fold(0.0f64, |m, &v| m.max(v.abs())));
        }
        if !(p >= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "lp norm requires p >= 1, got {p}"
            )));
        }
        let s: f64 = self
            .w
            .iter()
            .zip(&self.f)
            .map(|(w, f)| w * f.abs().powf(p))
            .sum();
        Ok(s.powf(1.0 / p))
    }

    /// Norms for a list of exponents, in order.
    pub fn lp_norms(&self, ps: &[f64]) -> Result<Vec<f64>> {
        ps.iter().map(|&p| self.lp_norm(p)).collect()
    }
}

/// Number of cell-centered lattice points per axis needed so the marker
/// count inside the support ball reaches `n`.
fn axis_count_for(datum: &InitialDatum, n: usize) -> usize {
    for m in 1..=64usize {
        if count_in_ball(datum, m) >= n {
            return m;
        }
    }
    64
}

fn count_in_ball(datum: &InitialDatum, m: usize) -> usize {
    // cell-centered lattice over [-r, r]^6 restricted to |z| < r
    let r = datum.radius;
    let h = 2.0 * r / m as f64;
    let coords: Vec<f64> = (0..m).map(|k| -r + (k as f64 + 0.5) * h).collect();
    let r2 = r * r;
    let mut count = 0usize;
    // count by radial shells: iterate x-part norms and v-part norms
    let mut sq: Vec<f64> = Vec::with_capacity(m);
    for &c in &coords {
        sq.push(c * c);
    }
    // 3D squared-norm histogram, then convolve with itself
    let mut norms3 = Vec::with_capacity(m * m * m);
    for &a in &sq {
        for &b in &sq {
            for &c in &sq {
                norms3.push(a + b + c);
            }
        }
    }
    norms3.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for &nx in &norms3 {
        if nx >= r2 {
            break;
        }
        let rem = r2 - nx;
        // count norms3 entries < rem via binary search
        let idx = norms3.partition_point(|&v| v < rem);
        count += idx;
    }
    count
}

/// Lays markers on a deterministic cell-centered 6D lattice restricted to
/// the support ball of the datum.  Weights are the lattice cell volume, so
/// `sum w_i f_i` is a midpoint quadrature of the datum mass.  The smallest
/// per-axis resolution reaching the requested count is used, so the actual
/// marker count is at least `n`.  `jitter` (in units of the lattice
/// spacing) displaces markers with a seeded RNG; zero keeps the sampling
/// fully deterministic.
pub fn sample_initial_ensemble(
    datum: &InitialDatum,
    n: usize,
    seed: u64,
    jitter: f64,
) -> Result<ParticleEnsemble> {
    if n == 0 {
        return Err(Error::InvalidParameter("marker count must be >= 1".into()));
    }
    let m = axis_count_for(datum, n);
    sample_with_axis_count(datum, m, seed, jitter)
}

/// Same lattice construction with the per-axis resolution given directly.
pub fn sample_with_axis_count(
    datum: &InitialDatum,
    m: usize,
    seed: u64,
    jitter: f64,
) -> Result<ParticleEnsemble> {
    let r = datum.radius;
    let h = 2.0 * r / m as f64;
    let w_cell = h.powi(6);
    let coords: Vec<f64> = (0..m).map(|k| -r + (k as f64 + 0.5) * h).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ens = ParticleEnsemble::default();
    for ix in 0..m {
        for iy in 0..m {
            for iz in 0..m {
                let x = Vec3::new(coords[ix], coords[iy], coords[iz]);
                let nx = x.norm_sq();
                if nx >= r * r {
                    continue;
                }
                for jx in 0..m {
                    for jy in 0..m {
                        for jz in 0..m {
                            let v = Vec3::new(coords[jx], coords[jy], coords[jz]);
                            let mut z = Phase6::new(x, v);
                            if z.norm_sq() >= r * r {
                                continue;
                            }
                            if jitter > 0.0 {
                                for d in 0..6 {
                                    let u: f64 = rng.gen_range(-0.5..0.5);
                                    z.set_comp(d, z.comp(d) + jitter * h * u);
                                }
                            }
                            let fv = datum.eval(z);
                            ens.pos.push(z.x);
                            ens.vel.push(z.v);
                            ens.f.push(fv);
                            ens.w.push(w_cell);
                        }
                    }
                }
            }
        }
    }
    if ens.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    Ok(ens)
}
