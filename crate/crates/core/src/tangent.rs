//! Tangent and costate instantiations of the linear Vlasov solver.
//!
//! Both linearizations transport along the characteristics of the forward
//! run's self-consistent field plus the control.  Because the forward
//! equation is pure transport, the forward state and its phase-space
//! gradients are available pointwise anywhere through the flow
//! representation (`f(t,z)` is the datum at the foot of the characteristic
//! through `(t,z)`); marker-to-lattice deposition is far too noisy in six
//! dimensions to serve as a coefficient source at desk-scale marker
//! counts, so every coefficient below is evaluated through the flow.

use crate::characteristics::{flow, FieldEval, FlowField};
use crate::forward::ForwardTrajectory;
use crate::kernel::MollifiedKernel;
use crate::lattice::{Lattice6, LatticeSeries};
use crate::linear::{
    phi_table, psi_grad_table, solve_linear, walk_paths, Cutoff, Datum, LinearSolution,
    LinearVlasovProblem, Orientation, PathSet, ScalarTable, VecTable,
};
use crate::par;
use crate::phase::config::RunConfig;
use crate::phase::datum::InitialDatum;
use crate::phase::field::ControlField;
use crate::phase::grids::{SpatialGrid, TimeGrid};
use crate::phase::vec3::{Phase6, Vec3};
use crate::{linear, Error, Result};
use std::sync::Arc;

pub use crate::lattice::lattice_deposit;

/// Shared discretization of one linearized problem family.
#[derive(Clone)]
pub struct Discretization {
    pub time: TimeGrid,
    pub grid: SpatialGrid,
    pub kernel: MollifiedKernel,
    pub lattice: Arc<Lattice6>,
    pub picard_tol: f64,
    pub picard_max_iter: usize,
    /// Step of the finite differences applied to flow-represented states.
    pub h_fd: f64,
}

impl Discretization {
    /// Sizes the lattice from a measured support radius; everything else
    /// comes from the configuration.
    pub fn new(cfg: &RunConfig, time: TimeGrid, r_support: f64) -> Result<Self> {
        let lattice = Lattice6::new(r_support, cfg.lattice_n)?;
        // the flow representation is smooth in z; a small step keeps the
        // central-difference truncation well below the coupling scales
        let h_fd = 0.05 * lattice.h;
        Ok(Discretization {
            time,
            grid: cfg.spatial_grid(),
            kernel: MollifiedKernel::new(cfg.eps_resolved())?,
            lattice,
            picard_tol: cfg.picard_tol,
            picard_max_iter: cfg.picard_max_iter,
            h_fd,
        })
    }
}

/// Pointwise evaluator of the forward state through its transport
/// representation: the datum at the foot of the characteristic.
pub struct StateEvaluator {
    pub flow: FlowField,
    pub datum: InitialDatum,
    pub time: TimeGrid,
    /// Radius certainly containing the state at all times.
    pub support_radius: f64,
}

impl StateEvaluator {
    pub fn new(fwd: &ForwardTrajectory, b_field: &Arc<ControlField>, datum: InitialDatum) -> Result<Self> {
        let tables = fwd.accel_tables.as_ref().ok_or_else(|| {
            Error::MissingGradients(
                "forward run lacks acceleration tables; solve with build_tables".into(),
            )
        })?;
        Ok(StateEvaluator {
            flow: FlowField {
                a: FieldEval::Field(Arc::clone(tables)),
                b: FieldEval::Field(Arc::clone(b_field)),
            },
            datum,
            time: fwd.time.clone(),
            support_radius: fwd.max_radius,
        })
    }

    /// Foot of the characteristic through `(t, z)`.
    #[inline]
    pub fn pull_back(&self, t: f64, z: Phase6) -> Phase6 {
        if t == 0.0 {
            z
        } else {
            flow(&self.flow, t, z, 0.0, self.time.dt).unwrap_or(z)
        }
    }

    /// `f(t, z)`.
    pub fn value(&self, t: f64, z: Phase6) -> f64 {
        self.datum.eval(self.pull_back(t, z))
    }

    /// `f(t, z)` and its velocity gradient by central differences of the
    /// representation.
    pub fn value_and_vgrad(&self, t: f64, z: Phase6, h_fd: f64) -> (f64, Vec3) {
        let center = self.pull_back(t, z);
        let val = self.datum.eval(center);
        // the state vanishes on paths footed outside the datum support;
        // nearby feet stay outside up to the Lipschitz reach of the flow
        if center.norm() > self.datum.radius + 4.0 * h_fd * (2.0 * self.time.t_final).exp() {
            return (val, Vec3::ZERO);
        }
        let mut grad = Vec3::ZERO;
        for d in 0..3 {
            let mut zp = z;
            let mut zm = z;
            zp.v.set_comp(d, z.v.comp(d) + h_fd);
            zm.v.set_comp(d, z.v.comp(d) - h_fd);
            let fp = self.datum.eval(self.pull_back(t, zp));
            let fm = self.datum.eval(self.pull_back(t, zm));
            grad.set_comp(d, (fp - fm) / (2.0 * h_fd));
        }
        (val, grad)
    }
}

/// Values of the forward state at every (time node, active node), read off
/// the endpoints of a pre-walked path set for free.
pub fn state_series_from_paths(ev: &StateEvaluator, paths: &PathSet) -> LatticeSeries {
    let na = paths.lattice.n_active();
    let n_nodes = paths.time.n_nodes();
    let per_node = (0..n_nodes)
        .map(|k| {
            (0..na)
                .map(|j| ev.datum.eval(paths.point(k * na + j, 0)))
                .collect()
        })
        .collect();
    LatticeSeries {
        lattice: Arc::clone(&paths.lattice),
        per_node,
    }
}

/// Values of the forward state at every (time node, active node), walking
/// each characteristic on demand (used when no path set is cached).
pub fn state_series_on_demand(
    ev: &StateEvaluator,
    lattice: &Arc<Lattice6>,
    time: &TimeGrid,
) -> LatticeSeries {
    let na = lattice.n_active();
    let per_node = (0..time.n_nodes())
        .map(|k| {
            let t = time.node(k);
            par::map_indexed(na, |j| ev.value(t, lattice.active_pos[j]))
        })
        .collect();
    LatticeSeries {
        lattice: Arc::clone(lattice),
        per_node,
    }
}

/// Everything the tangent solves for one forward run share: the cached
/// characteristics and the state v-gradients along them.
pub struct TangentWorkspace {
    pub disc: Discretization,
    pub b_field: Arc<ControlField>,
    pub state: StateEvaluator,
    pub paths: PathSet,
    /// `dv f_B` at every cached path point (the `C` coupling coefficient
    /// and the factor of every tangent source).
    pub dvf_paths: Vec<Vec3>,
}

impl TangentWorkspace {
    pub fn new(
        fwd: &ForwardTrajectory,
        b_field: Arc<ControlField>,
        datum: InitialDatum,
        disc: Discretization,
        cache_budget_mb: usize,
    ) -> Result<Self> {
        let est = PathSet::estimate_mb(&disc.lattice, &disc.time);
        if est > cache_budget_mb {
            return Err(Error::InvalidParameter(format!(
                "path cache needs ~{est} MiB, over the {cache_budget_mb} MiB budget; \
                 reduce lattice_n or the number of time steps"
            )));
        }
        let state = StateEvaluator::new(fwd, &b_field, datum)?;
        let paths = walk_paths(&state.flow.a, &state.flow.b, &disc.time, &disc.lattice);
        let na = disc.lattice.n_active();
        let stride = paths.stride();
        let datum_r = datum.radius;
        let h_fd = disc.h_fd;
        let reach = datum_r + 4.0 * h_fd * (2.0 * disc.time.t_final).exp();
        let dvf_paths: Vec<Vec3> = par::map_indexed(na * stride, |anchor| {
            // the foot of every point on this path is the anchor's foot
            let foot = paths.point(anchor, 0);
            let mut out = vec![Vec3::ZERO; stride];
            if foot.norm() <= reach {
                for m in 0..stride {
                    let t = disc.time.node(m);
                    let (_, g) = state.value_and_vgrad(t, paths.point(anchor, m), h_fd);
                    out[m] = g;
                }
            }
            out
        })
        .into_iter()
        .flatten()
        .collect();
        Ok(TangentWorkspace {
            disc,
            b_field,
            state,
            paths,
            dvf_paths,
        })
    }

    fn base_problem(&self) -> LinearVlasovProblem<'_> {
        LinearVlasovProblem {
            orientation: Orientation::Initial,
            time: self.disc.time.clone(),
            grid: self.disc.grid.clone(),
            kernel: self.disc.kernel,
            lattice: Arc::clone(&self.disc.lattice),
            a_field: self.state.flow.a.clone(),
            b_field: self.state.flow.b.clone(),
            chi: None,
            a_values: None,
            c_paths: None,
            b_paths: None,
            b_closure: None,
            datum: Datum::Zero,
            r_support: self.state.support_radius,
        }
    }
}

/// Solves the tangent equation for direction `H`: zero datum, the state
/// coupling through `grad psi_f . dv f_B`, and source `-(v x H) . dv f_B`.
/// The solution is the derivative of the field-state map at `B` in
/// direction `H`.
pub fn tangent(ws: &TangentWorkspace, h_field: &ControlField) -> Result<LinearSolution> {
    let stride = ws.paths.stride();
    let na = ws.disc.lattice.n_active();
    let time = &ws.disc.time;
    // fixed source along paths
    let b_paths: Vec<f64> = par::map_indexed(na * stride, |anchor| {
        let mut out = vec![0.0; stride];
        for m in 0..stride {
            let dvf = ws.dvf_paths[anchor * stride + m];
            if dvf == Vec3::ZERO {
                continue;
            }
            let z = ws.paths.point(anchor, m);
            let h = h_field.eval(time.node(m), z.x);
            out[m] = -z.v.cross(h).dot(dvf);
        }
        out
    })
    .into_iter()
    .flatten()
    .collect();

    let mut p = ws.base_problem();
    p.c_paths = Some(&ws.dvf_paths);
    p.b_paths = Some(&b_paths);
    let sol = solve_linear(&p, Some(&ws.paths), ws.disc.picard_tol, ws.disc.picard_max_iter)?;
    debug_assert!(sol.series.per_node[0].iter().all(|&v| v == 0.0));
    Ok(sol)
}

/// Costate solve output plus everything needed to evaluate the costate and
/// its gradients away from the lattice.
pub struct CostateSolution {
    pub sol: LinearSolution,
    pub chi: Cutoff,
    /// Converged nonlocal coupling tables, one per time node.
    pub phi_tables: Vec<ScalarTable>,
    pub evaluator: CostateEvaluator,
}

/// Pointwise costate evaluator through the backward representation:
/// `g(t,z) = e_T(Z(T,t,z)) - int_t^T [chi Phi](s, Z(s,t,z)) ds` with the
/// converged coupling tables.
pub struct CostateEvaluator {
    pub flow: FlowField,
    pub time: TimeGrid,
    pub chi: Cutoff,
    pub phi_tables: Arc<Vec<ScalarTable>>,
    pub terminal: Arc<dyn Fn(Phase6) -> f64 + Send + Sync>,
}

impl CostateEvaluator {
    /// `g(t_m, z)` by walking forward from node `m` to the final node.
    pub fn value(&self, m: usize, z: Phase6) -> f64 {
        let n = self.time.n_steps;
        let dt = self.time.dt;
        let mut acc = 0.0;
        let mut cur = z;
        if m < n {
            let w0 = 0.5 * dt;
            acc += w0 * self.chi.eval(cur) * self.phi_tables[m].eval(cur.x);
            for node in m + 1..=n {
                cur = self.flow.rk4_step(self.time.node(node - 1), cur, dt);
                let w = if node == n { 0.5 * dt } else { dt };
                acc += w * self.chi.eval(cur) * self.phi_tables[node].eval(cur.x);
            }
        }
        (self.terminal)(cur) - acc
    }

    /// Value and velocity gradient at `(t_m, z)` by central differences of
    /// the representation.
    pub fn value_and_vgrad(&self, m: usize, z: Phase6, h_fd: f64) -> (f64, Vec3) {
        let val = self.value(m, z);
        let mut grad = Vec3::ZERO;
        for d in 0..3 {
            let mut zp = z;
            let mut zm = z;
            zp.v.set_comp(d, z.v.comp(d) + h_fd);
            zm.v.set_comp(d, z.v.comp(d) - h_fd);
            grad.set_comp(d, (self.value(m, zp) - self.value(m, zm)) / (2.0 * h_fd));
        }
        (val, grad)
    }
}

/// Target distribution the terminal state is steered toward.
#[derive(Clone)]
pub enum TargetDistribution {
    Zero,
    Analytic(InitialDatum),
    /// Terminal state of another forward run (twin construction), read
    /// through that run's flow representation.
    FlowState(Arc<StateEvaluator>),
}

impl TargetDistribution {
    pub fn eval(&self, z: Phase6) -> f64 {
        match self {
            TargetDistribution::Zero => 0.0,
            TargetDistribution::Analytic(d) => d.eval(z),
            TargetDistribution::FlowState(ev) => ev.value(ev.time.t_final, z),
        }
    }

    pub fn support_radius(&self) -> f64 {
        match self {
            TargetDistribution::Zero => 0.0,
            TargetDistribution::Analytic(d) => d.radius,
            TargetDistribution::FlowState(ev) => ev.support_radius,
        }
    }
}

/// Solves the costate equation: final datum `f_B(T) - f_d`, transport
/// along the forward characteristics, nonlocal coupling `chi Phi_{f_B, g}`.
/// The optional path set (reused from a tangent workspace) speeds the
/// solve up but does not change it.
pub fn costate(
    fwd: &ForwardTrajectory,
    b_field: &Arc<ControlField>,
    datum: InitialDatum,
    target: &TargetDistribution,
    disc: &Discretization,
    paths: Option<&PathSet>,
) -> Result<CostateSolution> {
    let state = StateEvaluator::new(fwd, b_field, datum)?;
    let a_series = match paths {
        Some(ps) => state_series_from_paths(&state, ps),
        None => state_series_on_demand(&state, &disc.lattice, &disc.time),
    };
    let chi = linear::build_cutoff(state.support_radius.max(target.support_radius()), disc.time.t_final, fwd.a_norm)?;

    let t_final = disc.time.t_final;
    let state_arc = Arc::new(StateEvaluator {
        flow: state.flow.clone(),
        datum,
        time: state.time.clone(),
        support_radius: state.support_radius,
    });
    let target_c = target.clone();
    let terminal: Arc<dyn Fn(Phase6) -> f64 + Send + Sync> = {
        let st = Arc::clone(&state_arc);
        Arc::new(move |z| st.value(t_final, z) - target_c.eval(z))
    };

    let mut p = LinearVlasovProblem {
        orientation: Orientation::Final,
        time: disc.time.clone(),
        grid: disc.grid.clone(),
        kernel: disc.kernel,
        lattice: Arc::clone(&disc.lattice),
        a_field: state.flow.a.clone(),
        b_field: state.flow.b.clone(),
        chi: Some(chi),
        a_values: Some(&a_series),
        c_paths: None,
        b_paths: None,
        b_closure: None,
        datum: Datum::Closure(Arc::clone(&terminal)),
        r_support: state.support_radius.max(target.support_radius()),
    };
    let sol = solve_linear(&p, paths, disc.picard_tol, disc.picard_max_iter)?;

    // converged coupling tables for the pointwise evaluator
    p.a_values = Some(&a_series);
    let phi_tables: Vec<ScalarTable> = (0..disc.time.n_nodes())
        .map(|m| {
            phi_table(
                &disc.lattice,
                &a_series.per_node[m],
                &sol.series.per_node[m],
                &disc.grid,
                &disc.kernel,
            )
        })
        .collect();

    let evaluator = CostateEvaluator {
        flow: state.flow.clone(),
        time: disc.time.clone(),
        chi,
        phi_tables: Arc::new(
            phi_tables
                .iter()
                .map(|t| ScalarTable {
                    grid: t.grid.clone(),
                    vals: t.vals.clone(),
                })
                .collect(),
        ),
        terminal,
    };
    Ok(CostateSolution {
        sol,
        chi,
        phi_tables,
        evaluator,
    })
}

/// Costate v-gradients at every marker of every snapshot, through the
/// backward representation (exact up to the integrator and table
/// interpolation, no lattice interpolation).
pub fn costate_vgrad_at_markers(
    cs: &CostateSolution,
    fwd: &ForwardTrajectory,
    h_fd: f64,
) -> Vec<Vec<Vec3>> {
    // markers with negligible carried values contribute nothing to the
    // moments these gradients feed
    let f_sup = fwd.snapshots[0].f.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let cut = 1e-5 * f_sup;
    (0..fwd.time.n_nodes())
        .map(|m| {
            let ens = &fwd.snapshots[m];
            par::map_indexed(ens.len(), |i| {
                if ens.f[i].abs() <= cut {
                    Vec3::ZERO
                } else {
                    cs.evaluator.value_and_vgrad(m, ens.phase(i), h_fd).1
                }
            })
        })
        .collect()
}

/// Costate values and v-gradients on the lattice nodes, per time node.
pub fn costate_vgrad_series(
    cs: &CostateSolution,
    lattice: &Arc<Lattice6>,
    h_fd: f64,
) -> Vec<Vec<Vec3>> {
    let na = lattice.n_active();
    (0..cs.evaluator.time.n_nodes())
        .map(|m| {
            par::map_indexed(na, |j| {
                cs.evaluator
                    .value_and_vgrad(m, lattice.active_pos[j], h_fd)
                    .1
            })
        })
        .collect()
}

/// State v-gradients on the lattice nodes, per time node.
pub fn state_vgrad_series(
    ev: &StateEvaluator,
    lattice: &Arc<Lattice6>,
    time: &TimeGrid,
    h_fd: f64,
) -> Vec<Vec<Vec3>> {
    let na = lattice.n_active();
    (0..time.n_nodes())
        .map(|m| {
            let t = time.node(m);
            par::map_indexed(na, |j| ev.value_and_vgrad(t, lattice.active_pos[j], h_fd).1)
        })
        .collect()
}

/// Solves the derivative of the costate with respect to the control in
/// direction `H`: a final-value problem with zero datum, the same
/// transport and coupling as the costate, and fixed sources combining the
/// tangent solution and the costate gradients.
pub fn costate_derivative(
    ws: &TangentWorkspace,
    cs: &CostateSolution,
    tangent_sol: &LinearSolution,
    h_field: &ControlField,
) -> Result<LinearSolution> {
    let disc = &ws.disc;
    let na = disc.lattice.n_active();
    let stride = ws.paths.stride();
    let n_nodes = disc.time.n_nodes();

    // grad psi of the tangent solution, per time node
    let psi_f_prime: Vec<VecTable> = (0..n_nodes)
        .map(|m| psi_grad_table(&disc.lattice, &tangent_sol.series.per_node[m], &disc.grid, &disc.kernel))
        .collect();
    // Phi_{g_B, f'} tables, per time node
    let phi_gf: Vec<ScalarTable> = (0..n_nodes)
        .map(|m| {
            phi_table(
                &disc.lattice,
                &cs.sol.series.per_node[m],
                &tangent_sol.series.per_node[m],
                &disc.grid,
                &disc.kernel,
            )
        })
        .collect();

    // state series needed for the coupling coefficient (a = f_B)
    let a_series = state_series_from_paths(&ws.state, &ws.paths);

    // fixed source along paths: exact costate gradients via the backward
    // representation at every path point
    let time = disc.time.clone();
    let h_fd = disc.h_fd;
    let b_paths: Vec<f64> = par::map_indexed(na * stride, |anchor| {
        let mut out = vec![0.0; stride];
        for m in 0..stride {
            let z = ws.paths.point(anchor, m);
            let (_, dvg) = cs.evaluator.value_and_vgrad(m, z, h_fd);
            if dvg == Vec3::ZERO {
                continue;
            }
            let t = time.node(m);
            let h = h_field.eval(t, z.x);
            let mut b = psi_f_prime[m].eval(z.x).dot(dvg);
            b -= z.v.cross(h).dot(dvg);
            b -= cs.chi.eval(z) * phi_gf[m].eval(z.x);
            out[m] = b;
        }
        out
    })
    .into_iter()
    .flatten()
    .collect();

    let mut p = ws.base_problem();
    p.orientation = Orientation::Final;
    p.chi = Some(cs.chi);
    p.a_values = Some(&a_series);
    p.b_paths = Some(&b_paths);
    solve_linear(&p, Some(&ws.paths), disc.picard_tol, disc.picard_max_iter)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::{solve_vp, solve_vp_with, SolveOptions};
    use crate::phase::ensemble::sample_with_axis_count;

    fn small_cfg() -> RunConfig {
        RunConfig {
            t_final: 0.2,
            dt: 0.04,
            grid_l: 2.0,
            grid_n: 8,
            eps_kernel: 0.3,
            n_particles: 300,
            lattice_n: 7,
            datum_amplitude: 0.5,
            picard_tol: 1e-9,
            picard_max_iter: 25,
            ..RunConfig::default()
        }
    }

    fn setup(cfg: &RunConfig) -> (ForwardTrajectory, Arc<ControlField>, InitialDatum, Discretization) {
        let datum = cfg.datum();
        let b = Arc::new(ControlField::from_fn(
            cfg.time_grid(),
            cfg.spatial_grid(),
            |_t, x| Vec3::new(0.0, 0.15 * x.x, 0.4),
        ));
        let fwd = solve_vp(&datum, &b, cfg).unwrap();
        let disc = Discretization::new(cfg, fwd.time.clone(), fwd.max_radius + 1e-9).unwrap();
        (fwd, b, datum, disc)
    }

    #[test]
    fn state_evaluator_matches_marker_transport() {
        // markers carry exact datum values; the flow representation must
        // reproduce them at the marker positions at later times
        let cfg = small_cfg();
        let (fwd, b, datum, _) = setup(&cfg);
        let ev = StateEvaluator::new(&fwd, &b, datum).unwrap();
        let k = fwd.time.n_steps;
        let ens = &fwd.snapshots[k];
        let t = fwd.time.t_final;
        let mut worst = 0.0f64;
        for i in (0..ens.len()).step_by(17) {
            let direct = ens.f[i];
            let via_flow = ev.value(t, ens.phase(i));
            worst = worst.max((direct - via_flow).abs());
        }
        // the marker push uses per-step frozen direct sums, the evaluator
        // walks table fields: the gap is the table-interpolation error
        assert!(worst < 5e-3, "flow representation off by {worst:.3e}");
    }

    #[test]
    fn state_vgrad_matches_analytic_at_t0() {
        let cfg = small_cfg();
        let (fwd, b, datum, disc) = setup(&cfg);
        let ev = StateEvaluator::new(&fwd, &b, datum).unwrap();
        let z = Phase6::new(Vec3::new(0.2, -0.1, 0.3), Vec3::new(0.1, 0.4, -0.2));
        let (val, grad) = ev.value_and_vgrad(0.0, z, disc.h_fd);
        assert!((val - datum.eval(z)).abs() < 1e-12);
        let exact = datum.grad(z).v;
        assert!((grad - exact).norm() < 0.01, "{:?} vs {exact:?}", grad);
    }

    #[test]
    fn tangent_zero_direction_is_zero() {
        let cfg = small_cfg();
        let (fwd, b, datum, disc) = setup(&cfg);
        let ws = TangentWorkspace::new(&fwd, Arc::clone(&b), datum, disc, 512).unwrap();
        let h0 = ControlField::zeros(cfg.time_grid(), cfg.spatial_grid());
        let sol = tangent(&ws, &h0).unwrap();
        let sup: f64 = sol
            .series
            .per_node
            .iter()
            .map(|row| row.iter().fold(0.0f64, |m, &v| m.max(v.abs())))
            .fold(0.0, f64::max);
        assert_eq!(sup, 0.0);
        assert!(sol.iterations <= 2);
    }

    #[test]
    fn tangent_linear_in_direction() {
        let cfg = small_cfg();
        let (fwd, b, datum, disc) = setup(&cfg);
        let tol = disc.picard_tol;
        let ws = TangentWorkspace::new(&fwd, Arc::clone(&b), datum, disc, 512).unwrap();
        let h1 = ControlField::from_fn(cfg.time_grid(), cfg.spatial_grid(), |_t, x| {
            Vec3::new(0.2 * x.y, 0.0, 0.3)
        });
        let s1 = tangent(&ws, &h1).unwrap();
        let s2 = tangent(&ws, &h1.scaled(2.0)).unwrap();
        let mut worst = 0.0f64;
        for m in 0..s1.series.per_node.len() {
            for j in 0..s1.series.per_node[m].len() {
                worst = worst
                    .max((2.0 * s1.series.per_node[m][j] - s2.series.per_node[m][j]).abs());
            }
        }
        assert!(worst <= 20.0 * tol, "nonlinearity {worst:.3e}");
    }

    #[test]
    fn costate_twin_target_is_zero() {
        let cfg = small_cfg();
        let (fwd, b, datum, disc) = setup(&cfg);
        // target = own terminal state: zero final datum, zero costate
        let ev = Arc::new(StateEvaluator::new(&fwd, &b, datum).unwrap());
        let target = TargetDistribution::FlowState(ev);
        let cs = costate(&fwd, &b, datum, &target, &disc, None).unwrap();
        let sup: f64 = cs
            .sol
            .series
            .per_node
            .iter()
            .map(|row| row.iter().fold(0.0f64, |m, &v| m.max(v.abs())))
            .fold(0.0, f64::max);
        assert!(sup <= 1e-12, "twin costate not zero: {sup:.3e}");
    }

    #[test]
    fn costate_zero_plasma_is_pure_backward_transport() {
        // zero datum amplitude: no plasma, no self-field, no coupling; the
        // costate is -f_d transported backward
        let mut cfg = small_cfg();
        cfg.datum_amplitude = 0.0;
        let datum = cfg.datum();
        let b = Arc::new(ControlField::from_fn(
            cfg.time_grid(),
            cfg.spatial_grid(),
            |_t, _x| Vec3::new(0.0, 0.0, 0.5),
        ));
        let ens = sample_with_axis_count(&datum, 4, 0, 0.0).unwrap();
        let fwd = solve_vp_with(ens, &b, &cfg, SolveOptions::default()).unwrap();
        let disc = Discretization::new(&cfg, fwd.time.clone(), 1.2).unwrap();
        let f_d = InitialDatum::new(0.8, 0.9).unwrap();
        let target = TargetDistribution::Analytic(f_d);
        let cs = costate(&fwd, &b, datum, &target, &disc, None).unwrap();
        // compare against the flow pullback of -f_d
        let flow = FlowField {
            a: FieldEval::Field(Arc::clone(fwd.accel_tables.as_ref().unwrap())),
            b: FieldEval::Field(Arc::clone(&b)),
        };
        let k = 1usize;
        let mut worst = 0.0f64;
        // direct check at a sample of nodes
        for (j, &z) in disc.lattice.active_pos.iter().enumerate().step_by(37) {
            let z_end = crate::characteristics::flow(
                &flow,
                disc.time.node(k),
                z,
                disc.time.t_final,
                disc.time.dt,
            )
            .unwrap();
            let expect = -f_d.eval(z_end);
            worst = worst.max((cs.sol.series.per_node[k][j] - expect).abs());
        }
        assert!(worst < 1e-9, "zero-plasma costate error {worst:.3e}");
    }

    #[test]
    fn costate_decomposition_identity() {
        // Solving with final datum f_B(T) - f_d equals (by linearity of the
        // discrete fixed point) the solve with datum f_B(T) minus the solve
        // with datum f_d, to Picard-tail accuracy.
        let cfg = small_cfg();
        let (fwd, b, datum, disc) = setup(&cfg);
        let f_d = InitialDatum::new(0.4, 0.9).unwrap();
        let target = TargetDistribution::Analytic(f_d);
        let cs = costate(&fwd, &b, datum, &target, &disc, None).unwrap();

        // datum f_B(T): target zero
        let cs_f = costate(&fwd, &b, datum, &TargetDistribution::Zero, &disc, None).unwrap();
        // datum f_d alone: plasma state still f_B (the coupling coefficient
        // is unchanged), terminal datum f_d
        let ev = StateEvaluator::new(&fwd, &b, datum).unwrap();
        let a_series = state_series_on_demand(&ev, &disc.lattice, &disc.time);
        let terminal: Arc<dyn Fn(Phase6) -> f64 + Send + Sync> =
            Arc::new(move |z| f_d.eval(z));
        let p = LinearVlasovProblem {
            orientation: Orientation::Final,
            time: disc.time.clone(),
            grid: disc.grid.clone(),
            kernel: disc.kernel,
            lattice: Arc::clone(&disc.lattice),
            a_field: ev.flow.a.clone(),
            b_field: ev.flow.b.clone(),
            chi: Some(cs.chi),
            a_values: Some(&a_series),
            c_paths: None,
            b_paths: None,
            b_closure: None,
            datum: Datum::Closure(terminal),
            r_support: ev.support_radius,
        };
        let h_sol = solve_linear(&p, None, disc.picard_tol, disc.picard_max_iter).unwrap();

        let mut worst = 0.0f64;
        for m in 0..disc.time.n_nodes() {
            for j in 0..disc.lattice.n_active() {
                let lhs = cs.sol.series.per_node[m][j];
                let rhs = cs_f.sol.series.per_node[m][j] - h_sol.series.per_node[m][j];
                worst = worst.max((lhs - rhs).abs());
            }
        }
        assert!(
            worst <= 50.0 * disc.picard_tol,
            "decomposition violated: {worst:.3e}"
        );
    }

    #[test]
    fn costate_derivative_zero_direction() {
        let cfg = small_cfg();
        let (fwd, b, datum, disc) = setup(&cfg);
        let ws = TangentWorkspace::new(&fwd, Arc::clone(&b), datum, disc.clone(), 512).unwrap();
        let f_d = InitialDatum::new(0.4, 0.9).unwrap();
        let cs = costate(
            &fwd,
            &b,
            datum,
            &TargetDistribution::Analytic(f_d),
            &disc,
            Some(&ws.paths),
        )
        .unwrap();
        let h0 = ControlField::zeros(cfg.time_grid(), cfg.spatial_grid());
        let t0 = tangent(&ws, &h0).unwrap();
        let gd = costate_derivative(&ws, &cs, &t0, &h0).unwrap();
        let sup: f64 = gd
            .series
            .per_node
            .iter()
            .map(|row| row.iter().fold(0.0f64, |m, &v| m.max(v.abs())))
            .fold(0.0, f64::max);
        assert!(sup <= 1e-10, "zero-direction costate derivative: {sup:.3e}");
    }
}
