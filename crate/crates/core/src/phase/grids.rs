//! Uniform time and space grids.

use crate::phase::vec3::Vec3;
use crate::{Error, Result};

/// Uniform partition of `[0, T]` into `n_steps` intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    pub t_final: f64,
    pub n_steps: usize,
    pub dt: f64,
}

impl TimeGrid {
    /// Builds the grid from the final time and a target step size.  The
    /// number of steps is rounded so the nodes land exactly on `[0, T]`
    /// (the stored `dt` may differ from the requested one by the rounding).
    pub fn from_dt(t_final: f64, dt: f64) -> Result<Self> {
        if !(t_final > 0.0) || !(dt > 0.0) {
            return Err(Error::InvalidParameter(
                "time grid requires T > 0 and dt > 0".into(),
            ));
        }
        let n_steps = (t_final / dt).round().max(1.0) as usize;
        Ok(TimeGrid::new(t_final, n_steps))
    }

    pub fn new(t_final: f64, n_steps: usize) -> Self {
        assert!(t_final > 0.0 && n_steps >= 1);
        TimeGrid {
            t_final,
            n_steps,
            dt: t_final / n_steps as f64,
        }
    }

    /// Number of nodes (`n_steps + 1`).
    #[inline]
    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }

    #[inline]
    pub fn node(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.t_final
        } else {
            k as f64 * self.dt
        }
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_nodes()).map(move |k| self.node(k))
    }

    /// Trapezoidal quadrature weight of node `k`.
    #[inline]
    pub fn trap_weight(&self, k: usize) -> f64 {
        if k == 0 || k == self.n_steps {
            0.5 * self.dt
        } else {
            self.dt
        }
    }
}

/// Cube `[-L, L]^3` with `n` nodes per axis, spacing `h = 2L/(n-1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGrid {
    pub l: f64,
    pub n: usize,
    pub h: f64,
}

impl SpatialGrid {
    pub fn new(l: f64, n: usize) -> Result<Self> {
        if !(l > 0.0) || n < 2 {
            return Err(Error::InvalidParameter(
                "spatial grid requires L > 0 and n >= 2".into(),
            ));
        }
        Ok(SpatialGrid {
            l,
            n,
            h: 2.0 * l / (n - 1) as f64,
        })
    }

    #[inline]
    pub fn n_nodes(&self) -> usize {
        self.n * self.n * self.n
    }

    /// Node coordinate along one axis; reproducible bit-exactly from `(L, n)`.
    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        -self.l + self.h * i as f64
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n + j) * self.n + k
    }

    #[inline]
    pub fn node(&self, idx: usize) -> Vec3 {
        let n = self.n;
        let k = idx % n;
        let j = (idx / n) % n;
        let i = idx / (n * n);
        Vec3::new(self.coord(i), self.coord(j), self.coord(k))
    }

    pub fn nodes(&self) -> impl Iterator<Item = Vec3> + '_ {
        (0..self.n_nodes()).map(move |idx| self.node(idx))
    }

    /// Cell volume used in discrete L2 sums over grid nodes.
    #[inline]
    pub fn cell_volume(&self) -> f64 {
        self.h * self.h * self.h
    }

    pub fn same_layout(&self, other: &SpatialGrid) -> bool {
        self.n == other.n && (self.l - other.l).abs() <= 1e-12 * self.l.max(other.l)
    }

    /// Trilinear interpolation stencil for point `p`: base node index per
    /// axis and fractional offsets.  Returns `None` outside the cube.
    #[inline]
    pub fn stencil(&self, p: Vec3) -> Option<([usize; 3], [f64; 3])> {
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for d in 0..3 {
            let s = (p.comp(d) + self.l) / self.h;
            if !(s.is_finite()) || s < 0.0 || s > (self.n - 1) as f64 {
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
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn time_grid_hits_final_time_exactly() {
        let tg = TimeGrid::from_dt(0.3, 0.007).unwrap();
        let last = tg.node(tg.n_steps);
        assert!((last - 0.3).abs() <= 1e-12 * 0.3);
        let total: f64 = (0..tg.n_nodes()).map(|k| tg.trap_weight(k)).sum();
        assert!((total - 0.3).abs() < 1e-14);
        // strictly increasing
        let nodes: Vec<f64> = tg.nodes().collect();
        assert!(nodes.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn spatial_grid_nodes_bit_exact() {
        let g = SpatialGrid::new(2.0, 5).unwrap();
        assert_eq!(g.h, 1.0);
        assert_eq!(g.coord(0), -2.0);
        assert_eq!(g.coord(4), 2.0);
        let g2 = SpatialGrid::new(2.0, 5).unwrap();
        for (a, b) in g.nodes().zip(g2.nodes()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn grid_rejects_degenerate_input() {
        assert!(SpatialGrid::new(1.0, 1).is_err());
        assert!(SpatialGrid::new(-1.0, 4).is_err());
        assert!(TimeGrid::from_dt(0.0, 0.1).is_err());
    }
}
