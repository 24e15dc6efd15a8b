//! General inhomogeneous linear Vlasov solver.
//!
//! Solves, in initial- or final-value orientation,
//!
//! ```text
//! df/dt + v . dx f + A . dv f + (v x B) . dv f
//!     = grad psi_f . C  +  chi Phi_{a,f}  +  b
//! ```
//!
//! by Picard iteration on the characteristic representation formula: the
//! value at `(t, z)` is the datum pulled back along the characteristic
//! through `(t, z)` plus the time integral of the right-hand side along
//! that characteristic.  Iterates live on the active nodes of a fixed 6D
//! lattice; the nonlocal fields of an iterate (`grad psi_f`, `Phi_{a,f}`)
//! are reduced over the lattice and tabulated on the spatial grid once per
//! iteration, then interpolated along the paths.  Characteristics do not
//! change across iterations, so they are walked once and cached when a
//! path set is supplied, or re-walked on demand.

use crate::characteristics::{FieldEval, FlowField};
use crate::kernel::MollifiedKernel;
use crate::lattice::{Lattice6, LatticeSeries};
use crate::par;
use crate::phase::grids::{SpatialGrid, TimeGrid};
use crate::phase::vec3::{Phase6, Vec3};
use crate::{characteristics, Error, Result};
use std::sync::Arc;

/// Orientation of the data: value prescribed at `t = 0` or at `t = T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    Initial,
    Final,
}

/// Radial cutoff multiplying the nonlocal coupling: 1 inside `r1`, 0
/// outside `r2`, a symmetric cubic transition between.
#[derive(Debug, Clone, Copy)]
pub struct Cutoff {
    pub r1: f64,
    pub r2: f64,
}

impl Cutoff {
    pub fn new(r1: f64, r2: f64) -> Result<Self> {
        if !(r2 > r1) || !(r1 >= 0.0) {
            return Err(Error::InvalidParameter(
                "cutoff requires 0 <= r1 < r2".into(),
            ));
        }
        Ok(Cutoff { r1, r2 })
    }

    #[inline]
    pub fn eval(&self, z: Phase6) -> f64 {
        let r = z.norm();
        if r <= self.r1 {
            1.0
        } else if r >= self.r2 {
            0.0
        } else {
            let s = (r - self.r1) / (self.r2 - self.r1);
            1.0 - s * s * (3.0 - 2.0 * s)
        }
    }
}

/// Cutoff sized so solution values on the coefficient-support ball do not
/// depend on the cutoff choice: the inner radius is the certified
/// support-growth radius of that ball, the outer radius twice that.
pub fn build_cutoff(r0: f64, t_final: f64, a_norm: f64) -> Result<Cutoff> {
    let r1 = characteristics::zeta(r0, t_final, a_norm);
    Cutoff::new(r1, 2.0 * r1)
}

/// Characteristics through every (time node, active lattice node) anchor,
/// walked over the full time range once and shared by every solve and
/// coefficient builder that uses the same fields.
pub struct PathSet {
    pub time: TimeGrid,
    pub lattice: Arc<Lattice6>,
    /// `z[anchor * (n_steps+1) + m]` is the characteristic through anchor
    /// `(k, j)` evaluated at time node `m`; anchors are `k * n_active + j`.
    pub z: Vec<Phase6>,
}

impl PathSet {
    #[inline]
    pub fn stride(&self) -> usize {
        self.time.n_nodes()
    }

    #[inline]
    pub fn point(&self, anchor: usize, m: usize) -> Phase6 {
        self.z[anchor * self.stride() + m]
    }

    /// Estimated storage in MiB for the given scale.
    pub fn estimate_mb(lattice: &Lattice6, time: &TimeGrid) -> usize {
        let pts = lattice.n_active() * time.n_nodes() * time.n_nodes();
        pts * std::mem::size_of::<Phase6>() / (1024 * 1024)
    }
}

/// Walks one characteristic from `(t_k, z)` across all time nodes; calls
/// `visit(m, z_m)` at every node, in walk order (anchor first, then down
/// to node 0, then up from the anchor to the last node).
pub fn walk_full<F: FnMut(usize, Phase6)>(
    flow: &FlowField,
    time: &TimeGrid,
    k: usize,
    z: Phase6,
    mut visit: F,
) {
    visit(k, z);
    let dt = time.dt;
    let mut cur = z;
    for m in (0..k).rev() {
        cur = flow.rk4_step(time.node(m + 1), cur, -dt);
        visit(m, cur);
    }
    cur = z;
    for m in k + 1..time.n_nodes() {
        cur = flow.rk4_step(time.node(m - 1), cur, dt);
        visit(m, cur);
    }
}

/// Builds the full path cache for the given transport fields.
pub fn walk_paths(
    a_field: &FieldEval,
    b_field: &FieldEval,
    time: &TimeGrid,
    lattice: &Arc<Lattice6>,
) -> PathSet {
    let flow = FlowField {
        a: a_field.clone(),
        b: b_field.clone(),
    };
    let na = lattice.n_active();
    let stride = time.n_nodes();
    let n_anchor = stride * na;
    let z = par::map_indexed(n_anchor, |anchor| {
        let k = anchor / na;
        let j = anchor % na;
        let mut row = vec![Phase6::default(); stride];
        walk_full(&flow, time, k, lattice.active_pos[j], |m, zm| {
            row[m] = zm;
        });
        row
    })
    .into_iter()
    .flatten()
    .collect();
    PathSet {
        time: time.clone(),
        lattice: Arc::clone(lattice),
        z,
    }
}

/// Scalar field tabulated on the spatial grid, trilinear interpolation,
/// zero outside.
pub struct ScalarTable {
    pub grid: SpatialGrid,
    pub vals: Vec<f64>,
}

impl ScalarTable {
    pub fn eval(&self, x: Vec3) -> f64 {
        match self.grid.stencil(x) {
            None => 0.0,
            Some((base, frac)) => {
                let g = &self.grid;
                let mut acc = 0.0;
                for (di, wi) in [(0usize, 1.0 - frac[0]), (1, frac[0])] {
                    for (dj, wj) in [(0usize, 1.0 - frac[1]), (1, frac[1])] {
                        for (dk, wk) in [(0usize, 1.0 - frac[2]), (1, frac[2])] {
                            let w = wi * wj * wk;
                            if w != 0.0 {
                                acc += w
                                    * self.vals
                                        [g.index(base[0] + di, base[1] + dj, base[2] + dk)];
                            }
                        }
                    }
                }
                acc
            }
        }
    }
}

/// 3-vector field tabulated on the spatial grid.
pub struct VecTable {
    pub grid: SpatialGrid,
    pub vals: Vec<Vec3>,
}

impl VecTable {
    pub fn eval(&self, x: Vec3) -> Vec3 {
        match self.grid.stencil(x) {
            None => Vec3::ZERO,
            Some((base, frac)) => {
                let g = &self.grid;
                let mut acc = Vec3::ZERO;
                for (di, wi) in [(0usize, 1.0 - frac[0]), (1, frac[0])] {
                    for (dj, wj) in [(0usize, 1.0 - frac[1]), (1, frac[1])] {
                        for (dk, wk) in [(0usize, 1.0 - frac[2]), (1, frac[2])] {
                            let w = wi * wj * wk;
                            if w != 0.0 {
                                acc += self.vals
                                    [g.index(base[0] + di, base[1] + dj, base[2] + dk)]
                                    * w;
                            }
                        }
                    }
                }
                acc
            }
        }
    }
}

/// Datum of the problem, evaluated at characteristic endpoints.
#[derive(Clone)]
pub enum Datum {
    Zero,
    Closure(Arc<dyn Fn(Phase6) -> f64 + Send + Sync>),
}

impl Datum {
    fn eval(&self, z: Phase6) -> f64 {
        match self {
            Datum::Zero => 0.0,
            Datum::Closure(f) => f(z),
        }
    }

    fn is_zero(&self) -> bool {
        matches!(self, Datum::Zero)
    }
}

/// The full coefficient bundle of one linear Vlasov problem.
pub struct LinearVlasovProblem<'a> {
    pub orientation: Orientation,
    pub time: TimeGrid,
    /// Spatial grid for the nonlocal-field tables.
    pub grid: SpatialGrid,
    pub kernel: MollifiedKernel,
    pub lattice: Arc<Lattice6>,
    /// Acceleration coefficient `A(t, x)`.
    pub a_field: FieldEval,
    /// Magnetic coefficient `B(t, x)`.
    pub b_field: FieldEval,
    /// Cutoff multiplying the nonlocal coupling (required with `a_values`).
    pub chi: Option<Cutoff>,
    /// Coefficient of the nonlocal coupling, as values on (time node,
    /// active lattice node); the velocity reduction integrates by parts so
    /// only values are needed.
    pub a_values: Option<&'a LatticeSeries>,
    /// `C` coupling vectors pre-evaluated along cached paths (requires a
    /// `PathSet` with matching layout).
    pub c_paths: Option<&'a [Vec3]>,
    /// Fixed source pre-evaluated along cached paths.
    pub b_paths: Option<&'a [f64]>,
    /// Fixed source evaluated pointwise `(time node, z) -> value`;
    /// alternative to `b_paths` for closed-form sources.
    pub b_closure: Option<Arc<dyn Fn(usize, Phase6) -> f64 + Send + Sync>>,
    pub datum: Datum,
    /// Support radius of coefficients and datum (diagnostic; the lattice
    /// active region must cover it).
    pub r_support: f64,
}

/// Solver output: the solution series and the Picard iteration log.
#[derive(Debug, Clone)]
pub struct LinearSolution {
    pub series: LatticeSeries,
    /// Sup-norm change of each iteration.
    pub log: Vec<f64>,
    pub iterations: usize,
}

/// Per-iteration contraction factors: ratios of successive sup-norm
/// changes.  Needs at least 3 log entries.
pub fn picard_rate(log: &[f64]) -> Result<Vec<f64>> {
    if log.len() < 3 {
        return Err(Error::ShortLog {
            need: 3,
            got: log.len(),
        });
    }
    Ok(log
        .windows(2)
        .map(|w| if w[0] == 0.0 { 0.0 } else { w[1] / w[0] })
        .collect())
}

/// Nonlocal-field tables of one iterate.
pub struct IterationTables {
    /// `grad psi` of the current iterate per time node (for the C coupling).
    pub psi_grad: Option<Vec<VecTable>>,
    /// Nonlocal coupling field of the current iterate per time node.
    pub phi: Option<Vec<ScalarTable>>,
}

/// `grad psi` of a lattice-carried density slice, tabulated on the grid:
/// the velocity reduction collapses the 6D lattice to charges on its
/// spatial sub-lattice, then the mollified kernel gradient is summed.
pub fn psi_grad_table(
    lattice: &Lattice6,
    vals: &[f64],
    grid: &SpatialGrid,
    kernel: &MollifiedKernel,
) -> VecTable {
    let vol3 = lattice.h * lattice.h * lattice.h;
    let sources: Vec<(Vec3, f64)> = lattice
        .x_groups
        .iter()
        .map(|(x, list)| {
            let rho: f64 = list.iter().map(|&(slot, _)| vals[slot as usize]).sum();
            (*x, rho * vol3)
        })
        .collect();
    let eps2 = kernel.eps * kernel.eps;
    let tab = par::map_indexed(grid.n_nodes(), |idx| {
        let xg = grid.node(idx);
        let mut acc = Vec3::ZERO;
        for (y, q) in &sources {
            let d = xg - *y;
            let inv = 1.0 / (d.norm_sq() + eps2);
            acc += d * (-q * inv * inv.sqrt());
        }
        acc
    });
    VecTable {
        grid: grid.clone(),
        vals: tab,
    }
}

/// The nonlocal coupling field `Phi_{a,f}` of lattice-carried `a` and `f`
/// slices, tabulated on the grid.  The velocity reduction integrates by
/// parts (`int dv(a) f dv = -int a dv(f) dv`), so `a` enters through
/// values and `f` through central-difference gradients; with compactly
/// supported slices the two forms agree exactly on the lattice.
pub fn phi_table(
    lattice: &Lattice6,
    a_vals: &[f64],
    f_vals: &[f64],
    grid: &SpatialGrid,
    kernel: &MollifiedKernel,
) -> ScalarTable {
    let vol3 = lattice.h * lattice.h * lattice.h;
    let dvf = lattice.grad_v(f_vals);
    let sources: Vec<(Vec3, Vec3)> = lattice
        .x_groups
        .iter()
        .map(|(x, list)| {
            let mut q = Vec3::ZERO;
            for &(slot, _) in list {
                q += dvf[slot as usize] * a_vals[slot as usize];
            }
            (*x, q * (-vol3))
        })
        .collect();
    let eps2 = kernel.eps * kernel.eps;
    let tab = par::map_indexed(grid.n_nodes(), |idx| {
        let xg = grid.node(idx);
        let mut acc = 0.0;
        for (y, q) in &sources {
            let d = xg - *y;
            let inv = 1.0 / (d.norm_sq() + eps2);
            // kernel gradient dotted with the reduced moment
            acc -= (inv * inv.sqrt()) * d.dot(*q);
        }
        acc
    });
    ScalarTable {
        grid: grid.clone(),
        vals: tab,
    }
}

/// Tables for every time node of an iterate.
pub fn build_tables(p: &LinearVlasovProblem, f_cur: &LatticeSeries) -> IterationTables {
    let n_nodes = p.time.n_nodes();
    let psi_grad = p.c_paths.map(|_| {
        (0..n_nodes)
            .map(|m| psi_grad_table(&p.lattice, &f_cur.per_node[m], &p.grid, &p.kernel))
            .collect()
    });
    let phi = p.a_values.map(|a_series| {
        (0..n_nodes)
            .map(|m| {
                phi_table(
                    &p.lattice,
                    &a_series.per_node[m],
                    &f_cur.per_node[m],
                    &p.grid,
                    &p.kernel,
                )
            })
            .collect()
    });
    IterationTables { psi_grad, phi }
}

/// Right-hand side of the representation formula at `(t_m, z)` for path
/// `anchor`, given the current iterate's tables.
#[inline]
fn rhs_at(
    p: &LinearVlasovProblem,
    tabs: &IterationTables,
    anchor: usize,
    stride: usize,
    m: usize,
    z: Phase6,
) -> f64 {
    let mut acc = 0.0;
    if let (Some(c_paths), Some(psi)) = (p.c_paths, tabs.psi_grad.as_ref()) {
        let c = c_paths[anchor * stride + m];
        acc += psi[m].eval(z.x).dot(c);
    }
    if let Some(phi) = tabs.phi.as_ref() {
        let chi = p.chi.as_ref().map(|c| c.eval(z)).unwrap_or(1.0);
        if chi != 0.0 {
            acc += chi * phi[m].eval(z.x);
        }
    }
    if let Some(b_paths) = p.b_paths {
        acc += b_paths[anchor * stride + m];
    }
    if let Some(b) = p.b_closure.as_ref() {
        acc += b(m, z);
    }
    acc
}

/// Solves the problem by Picard iteration starting from the zero iterate.
/// `paths` carries pre-walked characteristics (mandatory when the problem
/// has path-indexed coefficients); without it paths are re-walked on
/// demand each iteration.
pub fn solve_linear(
    p: &LinearVlasovProblem,
    paths: Option<&PathSet>,
    tol: f64,
    max_iter: usize,
) -> Result<LinearSolution> {
    solve_linear_from(
        p,
        paths,
        LatticeSeries::zeros(Arc::clone(&p.lattice), p.time.n_nodes()),
        tol,
        max_iter,
    )
}

/// Picard iteration from an explicit starting iterate (used by the
/// perturbed-start uniqueness probes; [`solve_linear`] starts from zero).
pub fn solve_linear_from(
    p: &LinearVlasovProblem,
    paths: Option<&PathSet>,
    start: LatticeSeries,
    tol: f64,
    max_iter: usize,
) -> Result<LinearSolution> {
    if (p.c_paths.is_some() || p.b_paths.is_some()) && paths.is_none() {
        return Err(Error::InvalidParameter(
            "path-indexed coefficients need the pre-walked path set".into(),
        ));
    }
    if p.a_values.is_some() && p.chi.is_none() {
        return Err(Error::InvalidParameter(
            "nonlocal coupling requires a cutoff".into(),
        ));
    }
    if let Some(a) = p.a_values {
        if a.per_node.len() != p.time.n_nodes() || a.lattice.n_active() != p.lattice.n_active() {
            return Err(Error::MismatchedGrids(
                "coupling coefficient series does not match the lattice/time layout".into(),
            ));
        }
    }
    let lat = &p.lattice;
    let na = lat.n_active();
    let n_nodes = p.time.n_nodes();
    let stride = n_nodes;
    let flow = FlowField {
        a: p.a_field.clone(),
        b: p.b_field.clone(),
    };

    // datum values at path endpoints, fixed across iterations
    let end_node = match p.orientation {
        Orientation::Initial => 0usize,
        Orientation::Final => n_nodes - 1,
    };
    let datum_cache: Vec<f64> = if p.datum.is_zero() {
        vec![0.0; na * n_nodes]
    } else {
        par::map_indexed(na * n_nodes, |anchor| {
            let end = match paths {
                Some(ps) => ps.point(anchor, end_node),
                None => {
                    let k = anchor / na;
                    let j = anchor % na;
                    let mut end = lat.active_pos[j];
                    walk_full(&flow, &p.time, k, lat.active_pos[j], |m, zm| {
                        if m == end_node {
                            end = zm;
                        }
                    });
                    end
                }
            };
            p.datum.eval(end)
        })
    };

    let mut f_cur = start;
    let mut log: Vec<f64> = Vec::new();
    for iter in 0..max_iter {
        let tabs = build_tables(p, &f_cur);
        let dt = p.time.dt;
        let rows: Vec<Vec<f64>> = par::map_indexed(n_nodes, |k| {
            (0..na)
                .map(|j| {
                    let anchor = k * na + j;
                    let mut acc = 0.0;
                    {
                        let mut add = |m: usize, zm: Phase6| {
                            let inside = match p.orientation {
                                Orientation::Initial => m <= k,
                                Orientation::Final => m >= k,
                            };
                            if !inside || k == end_node {
                                return;
                            }
                            let w = if m == k || m == end_node {
                                0.5 * dt
                            } else {
                                dt
                            };
                            acc += w * rhs_at(p, &tabs, anchor, stride, m, zm);
                        };
                        match paths {
                            Some(ps) => {
                                let lo = k.min(end_node);
                                let hi = k.max(end_node);
                                for m in lo..=hi {
                                    add(m, ps.point(anchor, m));
                                }
                            }
                            None => {
                                walk_full(&flow, &p.time, k, lat.active_pos[j], |m, zm| {
                                    add(m, zm)
                                });
                            }
                        }
                    }
                    match p.orientation {
                        Orientation::Initial => datum_cache[anchor] + acc,
                        Orientation::Final => datum_cache[anchor] - acc,
                    }
                })
                .collect()
        });
        let next = LatticeSeries {
            lattice: Arc::clone(lat),
            per_node: rows,
        };
        let delta = f_cur.sup_diff(&next);
        log.push(delta);
        f_cur = next;
        if delta < tol {
            return Ok(LinearSolution {
                series: f_cur,
                iterations: iter + 1,
                log,
            });
        }
    }
    let last = *log.last().unwrap_or(&f64::NAN);
    Err(Error::NonConvergence {
        max_iter,
        last,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase::datum::InitialDatum;

    fn base_problem<'a>(
        orientation: Orientation,
        lattice: &Arc<Lattice6>,
        time: &TimeGrid,
    ) -> LinearVlasovProblem<'a> {
        LinearVlasovProblem {
            orientation,
            time: time.clone(),
            grid: SpatialGrid::new(2.5, 8).unwrap(),
            kernel: MollifiedKernel::new(0.3).unwrap(),
            lattice: Arc::clone(lattice),
            a_field: FieldEval::Zero,
            b_field: FieldEval::Zero,
            chi: None,
            a_values: None,
            c_paths: None,
            b_paths: None,
            b_closure: None,
            datum: Datum::Zero,
            r_support: 1.0,
        }
    }

    #[test]
    fn cutoff_shape() {
        let c = Cutoff::new(1.0, 2.0).unwrap();
        let at = |r: f64| c.eval(Phase6::new(Vec3::new(r, 0.0, 0.0), Vec3::ZERO));
        assert_eq!(at(0.5), 1.0);
        assert_eq!(at(1.0), 1.0);
        assert_eq!(at(2.0), 0.0);
        assert_eq!(at(3.0), 0.0);
        // symmetric cubic transition: exactly 1/2 at the midpoint
        assert!((at(1.5) - 0.5).abs() < 1e-14);
        assert!(Cutoff::new(2.0, 1.0).is_err());
    }

    #[test]
    fn build_cutoff_uses_growth_radius() {
        let c = build_cutoff(1.0, 0.5 * std::f64::consts::LN_2, 0.0).unwrap();
        assert!((c.r1 - 2.0).abs() < 1e-12);
        assert!((c.r2 - 4.0).abs() < 1e-12);
    }

    #[test]
    fn pure_transport_matches_flow_pullback() {
        // a = C = b = 0: the solution is the datum along characteristics,
        // and the iteration converges on the second sweep.
        let lattice = Lattice6::new(1.0, 7).unwrap();
        let time = TimeGrid::new(0.4, 8);
        let datum = InitialDatum::new(1.0, 1.0).unwrap();
        let a_const = Vec3::new(0.2, -0.1, 0.0);
        let b_const = Vec3::new(0.0, 0.0, 0.8);
        let mut p = base_problem(Orientation::Initial, &lattice, &time);
        p.a_field = FieldEval::Constant(a_const);
        p.b_field = FieldEval::Constant(b_const);
        p.datum = Datum::Closure(Arc::new(move |z| datum.eval(z)));
        let sol = solve_linear(&p, None, 1e-12, 5).unwrap();
        assert!(sol.iterations <= 2, "transport took {} sweeps", sol.iterations);

        // independent check: pull the datum back along the flow
        let flow = FlowField {
            a: FieldEval::Constant(a_const),
            b: FieldEval::Constant(b_const),
        };
        let k = 5usize;
        let mut worst = 0.0f64;
        for (j, &zj) in lattice.active_pos.iter().enumerate() {
            let z0 = characteristics::flow(&flow, time.node(k), zj, 0.0, time.dt).unwrap();
            let expect = datum.eval(z0);
            worst = worst.max((sol.series.per_node[k][j] - expect).abs());
        }
        assert!(worst < 1e-9, "transport error {worst:.3e}");
    }

    #[test]
    fn source_only_matches_quadrature_oracle() {
        // b-only, free streaming: f(t,z) = int_0^t b(s, x - (t-s) v, v) ds.
        // The oracle integrates with a fine midpoint rule along the exact
        // straight-line characteristic; the solver converges in <= 2 sweeps
        // because the right-hand side does not involve the unknown.
        let lattice = Lattice6::new(1.0, 7).unwrap();
        let time = TimeGrid::new(0.3, 10);
        let mut p = base_problem(Orientation::Initial, &lattice, &time);
        let source = |t: f64, z: Phase6| -> f64 {
            let u = 1.0 - z.norm_sq();
            if u <= 0.0 {
                0.0
            } else {
                (1.0 + t) * u * u
            }
        };
        p.b_closure = Some(Arc::new(move |m, z| source(m as f64 * 0.03, z)));
        let sol = solve_linear(&p, None, 1e-12, 5).unwrap();
        assert!(sol.iterations <= 2);

        let k = time.n_steps; // final node
        let t = time.t_final;
        let mut worst = 0.0f64;
        for (j, &zj) in lattice.active_pos.iter().enumerate() {
            // fine midpoint quadrature
            let n_q = 2000;
            let hq = t / n_q as f64;
            let mut oracle = 0.0;
            for q in 0..n_q {
                let s = (q as f64 + 0.5) * hq;
                let zs = Phase6::new(zj.x - zj.v * (t - s), zj.v);
                oracle += source(s, zs) * hq;
            }
            worst = worst.max((sol.series.per_node[k][j] - oracle).abs());
        }
        // trapezoid in time vs the oracle: O(dt^2)
        assert!(worst < 4e-4, "source quadrature error {worst:.3e}");
    }

    #[test]
    fn linearity_in_datum_and_source() {
        let lattice = Lattice6::new(1.0, 5).unwrap();
        let time = TimeGrid::new(0.25, 5);
        let d1 = InitialDatum::new(1.0, 1.0).unwrap();
        let d2 = InitialDatum::new(0.7, 0.8).unwrap();
        let tol = 1e-11;

        let solve_combo = |alpha: f64, beta: f64| -> LinearSolution {
            let mut p = base_problem(Orientation::Initial, &lattice, &time);
            p.a_field = FieldEval::Constant(Vec3::new(0.1, 0.0, -0.05));
            p.datum = Datum::Closure(Arc::new(move |z| alpha * d1.eval(z) + beta * d2.eval(z)));
            p.b_closure = Some(Arc::new(move |m, z| {
                let u = (1.0 - z.norm_sq()).max(0.0);
                (alpha * 0.4 + beta * 0.2) * u * u * (1.0 + 0.1 * m as f64)
            }));
            solve_linear(&p, None, tol, 8).unwrap()
        };
        let s10 = solve_combo(1.0, 0.0);
        let s01 = solve_combo(0.0, 1.0);
        let s23 = solve_combo(2.0, -3.0);
        let mut worst = 0.0f64;
        for m in 0..time.n_nodes() {
            for j in 0..lattice.n_active() {
                let combo = 2.0 * s10.series.per_node[m][j] - 3.0 * s01.series.per_node[m][j];
                worst = worst.max((combo - s23.series.per_node[m][j]).abs());
            }
        }
        assert!(worst <= 5.0 * tol, "linearity violated: {worst:.3e}");
    }

    #[test]
    fn coupled_problem_contracts_and_is_cutoff_independent() {
        // nonlocal coupling switched on: the iteration is a genuine fixed
        // point; ratios of successive changes fall and the solution on the
        // coefficient-support ball does not depend on the admissible cutoff
        let lattice = Lattice6::new(1.0, 7).unwrap();
        let time = TimeGrid::new(0.3, 6);
        let datum = InitialDatum::new(1.0, 1.0).unwrap();

        // coefficient a: the datum itself (supported in the unit ball)
        let a_series = LatticeSeries {
            lattice: Arc::clone(&lattice),
            per_node: (0..time.n_nodes())
                .map(|_| lattice.active_pos.iter().map(|&z| datum.eval(z)).collect())
                .collect(),
        };

        let solve_with = |r2_factor: f64| -> LinearSolution {
            let mut p = base_problem(Orientation::Initial, &lattice, &time);
            let r1 = characteristics::zeta(1.0, time.t_final, 0.0);
            p.chi = Some(Cutoff::new(r1, r2_factor * r1).unwrap());
            p.a_values = Some(&a_series);
            p.datum = Datum::Closure(Arc::new(move |z| datum.eval(z)));
            solve_linear(&p, None, 1e-10, 20).unwrap()
        };

        let sol_a = solve_with(2.0);
        let sol_b = solve_with(1.5);

        // contraction: after the startup sweeps the change decays fast
        let rates = picard_rate(&sol_a.log).unwrap();
        for (i, r) in rates.iter().enumerate().skip(1) {
            if sol_a.log[i + 1] > 1e-14 {
                assert!(*r < 0.6, "slow contraction at step {i}: ratio {r}");
            }
        }

        // cutoff independence on the support ball
        let mut worst = 0.0f64;
        for m in 0..time.n_nodes() {
            for (j, &z) in lattice.active_pos.iter().enumerate() {
                if z.norm() <= 1.0 {
                    worst = worst
                        .max((sol_a.series.per_node[m][j] - sol_b.series.per_node[m][j]).abs());
                }
            }
        }
        assert!(worst <= 2e-10, "cutoff dependence {worst:.3e}");
    }

    #[test]
    fn perturbed_starting_iterates_collapse() {
        let lattice = Lattice6::new(1.0, 5).unwrap();
        let time = TimeGrid::new(0.25, 5);
        let datum = InitialDatum::new(1.0, 1.0).unwrap();
        let a_series = LatticeSeries {
            lattice: Arc::clone(&lattice),
            per_node: (0..time.n_nodes())
                .map(|_| lattice.active_pos.iter().map(|&z| datum.eval(z)).collect())
                .collect(),
        };
        let tol = 1e-11;
        let mut p1 = base_problem(Orientation::Initial, &lattice, &time);
        let r1 = characteristics::zeta(1.0, time.t_final, 0.0);
        p1.chi = Some(Cutoff::new(r1, 2.0 * r1).unwrap());
        p1.datum = Datum::Closure(Arc::new(move |z| datum.eval(z)));
        p1.a_values = Some(&a_series);
        let s_zero = solve_linear(&p1, None, tol, 30).unwrap();
        let mut start = LatticeSeries::zeros(Arc::clone(&lattice), time.n_nodes());
        for row in &mut start.per_node {
            for (j, v) in row.iter_mut().enumerate() {
                *v = 0.5 + 0.1 * (j % 7) as f64;
            }
        }
        let s_pert = solve_linear_from(&p1, None, start, tol, 30).unwrap();
        assert!(
            s_zero.series.sup_diff(&s_pert.series) <= 20.0 * tol,
            "fixed points differ: {:.3e}",
            s_zero.series.sup_diff(&s_pert.series)
        );
    }

    #[test]
    fn orientation_roundtrip() {
        // transport the datum forward with the initial-value solver, feed
        // the result as final datum to the final-value solver with the same
        // fields: it must reproduce the original datum at t = 0.
        let lattice = Lattice6::new(1.0, 7).unwrap();
        let time = TimeGrid::new(0.3, 6);
        let datum = InitialDatum::new(1.0, 1.0).unwrap();
        let a_const = Vec3::new(0.15, 0.0, -0.1);

        let mut fwd = base_problem(Orientation::Initial, &lattice, &time);
        fwd.a_field = FieldEval::Constant(a_const);
        fwd.datum = Datum::Closure(Arc::new(move |z| datum.eval(z)));
        let fwd_sol = solve_linear(&fwd, None, 1e-12, 5).unwrap();

        // final datum: interpolate the terminal slice
        let terminal = fwd_sol.series.per_node[time.n_steps].clone();
        let lat2 = Arc::clone(&lattice);
        let mut back = base_problem(Orientation::Final, &lattice, &time);
        back.a_field = FieldEval::Constant(a_const);
        back.datum = Datum::Closure(Arc::new(move |z| lat2.interp(&terminal, z)));
        let back_sol = solve_linear(&back, None, 1e-12, 5).unwrap();

        let mut worst = 0.0f64;
        let mut scale = 0.0f64;
        for (j, &z) in lattice.active_pos.iter().enumerate() {
            if z.norm() < 0.8 {
                let got = back_sol.series.per_node[0][j];
                let expect = datum.eval(z);
                worst = worst.max((got - expect).abs());
                scale = scale.max(expect.abs());
            }
        }
        // the roundtrip pays one 6D interpolation of the terminal slice
        assert!(
            worst < 0.25 * scale,
            "roundtrip error {worst:.3e} vs scale {scale:.3e}"
        );
    }

    #[test]
    fn nonconvergence_carries_log() {
        let lattice = Lattice6::new(1.0, 5).unwrap();
        let time = TimeGrid::new(0.25, 4);
        let datum = InitialDatum::new(1.0, 1.0).unwrap();
        let mut p = base_problem(Orientation::Initial, &lattice, &time);
        p.datum = Datum::Closure(Arc::new(move |z| datum.eval(z)));
        match solve_linear(&p, None, 1e-30, 1) {
            Err(Error::NonConvergence { log, .. }) => assert_eq!(log.len(), 1),
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn picard_rate_guards() {
        assert!(picard_rate(&[1.0, 0.5]).is_err());
        let r = picard_rate(&[1.0, 0.5, 0.1]).unwrap();
        assert_eq!(r.len(), 2);
        assert!((r[0] - 0.5).abs() < 1e-15);
        assert!((r[1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn cached_paths_match_on_demand_walks() {
        let lattice = Lattice6::new(1.0, 5).unwrap();
        let time = TimeGrid::new(0.3, 6);
        let datum = InitialDatum::new(1.0, 1.0).unwrap();
        let a_field = FieldEval::Constant(Vec3::new(0.2, -0.1, 0.05));
        let b_field = FieldEval::Constant(Vec3::new(0.0, 0.0, 0.6));
        let paths = walk_paths(&a_field, &b_field, &time, &lattice);
        let mut p = base_problem(Orientation::Initial, &lattice, &time);
        p.a_field = a_field;
        p.b_field = b_field;
        p.datum = Datum::Closure(Arc::new(move |z| datum.eval(z)));
        let with_cache = solve_linear(&p, Some(&paths), 1e-12, 5).unwrap();
        let without = solve_linear(&p, None, 1e-12, 5).unwrap();
        assert_eq!(with_cache.series.sup_diff(&without.series), 0.0);
    }
}
