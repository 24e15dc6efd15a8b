//! Tracking cost, its adjoint-form gradient, directional derivatives, the
//! Lagrangian, and the second derivative.
//!
//! The cost is
//! `J(B) = 1/2 |f_B(T) - f_d|_L2^2 + (lambda/2) |D_x B|_L2^2`.
//! Its derivative in a direction `H` has two equivalent forms: the tangent
//! path pairs the terminal residual with the tangent solution, the adjoint
//! path pairs the gradient field `-lambda lap B + p` with `H`, where
//! `p(t,x) = int v x dv(f_B) g_B dv` is assembled in the
//! integration-by-parts form `-int (v x dv g_B) f_B dv` so only costate
//! gradients are differentiated.

use crate::forward::ForwardTrajectory;
use crate::lattice::LatticeSeries;
use crate::linear::{psi_grad_table, LinearSolution};
use crate::phase::field::ControlField;
use crate::phase::vec3::Vec3;
use crate::tangent::{
    costate_vgrad_at_markers, CostateSolution, Discretization, StateEvaluator, TargetDistribution,
};
use crate::{Error, Result};

/// Cost value split into its two terms.
#[derive(Debug, Clone, Copy)]
pub struct CostReport {
    pub j: f64,
    pub tracking: f64,
    pub regularization: f64,
}

/// Terminal residual `f_B(T) - f_d` sampled on the active lattice nodes
/// through the flow representation.
pub fn terminal_residual(
    state: &StateEvaluator,
    target: &TargetDistribution,
    disc: &Discretization,
) -> Vec<f64> {
    let t = state.time.t_final;
    crate::par::map_indexed(disc.lattice.n_active(), |j| {
        let z = disc.lattice.active_pos[j];
        state.value(t, z) - target.eval(z)
    })
}

/// Evaluates `J(B)`: tracking term by lattice quadrature of the terminal
/// residual, regularization by the discrete gradient norm of the control.
pub fn cost(
    b_field: &ControlField,
    state: &StateEvaluator,
    target: &TargetDistribution,
    lambda: f64,
    disc: &Discretization,
) -> Result<CostReport> {
    let e_t = terminal_residual(state, target, disc);
    let tracking = 0.5 * disc.lattice.l2_inner(&e_t, &e_t);
    let regularization = 0.5 * lambda * b_field.grad_inner(b_field)?;
    Ok(CostReport {
        j: tracking + regularization,
        tracking,
        regularization,
    })
}

/// Tent-weighted scatter of marker moments onto the spatial grid (the
/// 3D counterpart of the phase-space deposit; exact transpose of the
/// trilinear interpolation used to read controls at marker positions).
fn deposit_moments3(
    grid: &crate::phase::grids::SpatialGrid,
    positions: &[Vec3],
    moments: &[Vec3],
) -> Vec<Vec3> {
    let mut out = vec![Vec3::ZERO; grid.n_nodes()];
    let inv_vol = 1.0 / grid.cell_volume();
    for (pos, mom) in positions.iter().zip(moments) {
        let Some((base, frac)) = grid.stencil(*pos) else {
            continue; // outside the grid: the control is zero there anyway
        };
        for corner in 0..8usize {
            let mut w = inv_vol;
            let mut idx = [0usize; 3];
            for d in 0..3 {
                let up = (corner >> d) & 1;
                idx[d] = base[d] + up;
                w *= if up == 1 { frac[d] } else { 1.0 - frac[d] };
            }
            if w != 0.0 {
                out[grid.index(idx[0], idx[1], idx[2])] += *mom * w;
            }
        }
    }
    out
}

/// Assembles the gradient field `G = -lambda lap(B) + p` with
/// `p = -int (v x dv g_B) f_B dv` evaluated by marker-weighted summation
/// of costate v-gradients.
pub fn gradient(
    b_field: &ControlField,
    fwd: &ForwardTrajectory,
    cs: &CostateSolution,
    lambda: f64,
    disc: &Discretization,
) -> Result<ControlField> {
    let dvg = costate_vgrad_at_markers(cs, fwd, disc.h_fd);
    let mut g = b_field.laplacian();
    g.scale(-lambda);
    for m in 0..fwd.time.n_nodes() {
        let ens = &fwd.snapshots[m];
        let moments: Vec<Vec3> = (0..ens.len())
            .map(|i| ens.vel[i].cross(dvg[m][i]) * (-ens.w[i] * ens.f[i]))
            .collect();
        let p_slice = deposit_moments3(&b_field.grid, &ens.pos, &moments);
        for (dst, p) in g.slice_mut(m).iter_mut().zip(p_slice) {
            *dst += p;
        }
    }
    Ok(g)
}

/// Directional derivative through the tangent path:
/// `<f_B(T) - f_d, f'_B(T)[H]> + lambda <D_x B, D_x H>`.
pub fn directional_derivative_tangent(
    b_field: &ControlField,
    h_field: &ControlField,
    state: &StateEvaluator,
    target: &TargetDistribution,
    tangent_sol: &LinearSolution,
    lambda: f64,
    disc: &Discretization,
) -> Result<f64> {
    let e_t = terminal_residual(state, target, disc);
    let f_prime_t = &tangent_sol.series.per_node[disc.time.n_steps];
    let tracking_part = disc.lattice.l2_inner(&e_t, f_prime_t);
    let reg_part = lambda * b_field.grad_inner(h_field)?;
    Ok(tracking_part + reg_part)
}

/// The Lagrangian of independent state, control and multiplier series:
/// the two explicit cost terms minus the space-time quadrature of the
/// transport operator applied to `f`, paired with `g`.  When `f` solves
/// the forward equation the value coincides with `J(B)` for every `g`.
pub fn lagrangian(
    f_series: &LatticeSeries,
    b_field: &ControlField,
    g_series: &LatticeSeries,
    target: &TargetDistribution,
    lambda: f64,
    disc: &Discretization,
) -> Result<f64> {
    let lat = &disc.lattice;
    let na = lat.n_active();
    let n_nodes = disc.time.n_nodes();
    if f_series.per_node.len() != n_nodes || g_series.per_node.len() != n_nodes {
        return Err(Error::MismatchedGrids(
            "lagrangian series do not match the time grid".into(),
        ));
    }
    // explicit cost terms from the terminal slice of f
    let terminal = &f_series.per_node[n_nodes - 1];
    let mut tracking = 0.0;
    for (j, &z) in lat.active_pos.iter().enumerate() {
        let e = terminal[j] - target.eval(z);
        tracking += e * e;
    }
    tracking *= 0.5 * lat.cell_volume();
    let reg = 0.5 * lambda * b_field.grad_inner(b_field)?;

    // transport operator applied to f, paired with g
    let dt = disc.time.dt;
    let mut pairing = 0.0;
    for m in 0..n_nodes {
        let fm = &f_series.per_node[m];
        let gm = &g_series.per_node[m];
        // time derivative: central in the interior, one-sided at the ends
        let dfdt: Vec<f64> = (0..na)
            .map(|j| {
                if m == 0 {
                    (f_series.per_node[1][j] - f_series.per_node[0][j]) / dt
                } else if m == n_nodes - 1 {
                    (f_series.per_node[m][j] - f_series.per_node[m - 1][j]) / dt
                } else {
                    (f_series.per_node[m + 1][j] - f_series.per_node[m - 1][j]) / (2.0 * dt)
                }
            })
            .collect();
        let dxf = lat.grad_x(fm);
        let dvf = lat.grad_v(fm);
        let psi = psi_grad_table(lat, fm, &disc.grid, &disc.kernel);
        let t_m = disc.time.node(m);
        let mut slice_sum = 0.0;
        for (j, &z) in lat.active_pos.iter().enumerate() {
            if gm[j] == 0.0 {
                continue;
            }
            let adv = dfdt[j] + z.v.dot(dxf[j]) - psi.eval(z.x).dot(dvf[j])
                + z.v.cross(b_field.eval(t_m, z.x)).dot(dvf[j]);
            slice_sum += adv * gm[j];
        }
        pairing += disc.time.trap_weight(m) * lat.cell_volume() * slice_sum;
    }
    Ok(tracking + reg - pairing)
}

/// Second derivative `J''(B)[H1, H2]`: the regularization pairing plus the
/// mixed quadrature of tangent and costate-derivative solutions against
/// the state and costate v-gradients,
/// `lambda <D_x H1, D_x H2> - int (v x H1).(dv f_B g'[H2] - dv g_B f'[H2])`.
pub fn second_derivative(
    h1_field: &ControlField,
    h2_field: &ControlField,
    dvf_nodes: &[Vec<Vec3>],
    dvg_nodes: &[Vec<Vec3>],
    tangent_h2: &LinearSolution,
    costate_deriv_h2: &LinearSolution,
    lambda: f64,
    disc: &Discretization,
) -> Result<f64> {
    let reg = lambda * h1_field.grad_inner(h2_field)?;
    let lat = &disc.lattice;
    let vol = lat.cell_volume();
    let mut mixed = 0.0;
    for m in 0..disc.time.n_nodes() {
        let t_m = disc.time.node(m);
        let f_prime = &tangent_h2.series.per_node[m];
        let g_prime = &costate_deriv_h2.series.per_node[m];
        let mut slice = 0.0;
        for (j, &z) in lat.active_pos.iter().enumerate() {
            let bracket = dvf_nodes[m][j] * g_prime[j] - dvg_nodes[m][j] * f_prime[j];
            if bracket == Vec3::ZERO {
                continue;
            }
            let h1 = h1_field.eval(t_m, z.x);
            slice += z.v.cross(h1).dot(bracket);
        }
        mixed += disc.time.trap_weight(m) * vol * slice;
    }
    Ok(reg - mixed)
}

/// Convenience: `<G, H>` over space-time, the pairing used by stationarity
/// measures and the duality probes.
pub fn pairing(g_field: &ControlField, h_field: &ControlField) -> Result<f64> {
    g_field.l2_inner(h_field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forward::solve_vp;
    use crate::phase::config::RunConfig;
    use crate::tangent::state_series_on_demand;
    use std::sync::Arc;

    fn cfg() -> RunConfig {
        RunConfig {
            t_final: 0.2,
            dt: 0.04,
            grid_l: 2.0,
            grid_n: 8,
            eps_kernel: 0.3,
            n_particles: 400,
            lattice_n: 7,
            datum_amplitude: 0.5,
            ..RunConfig::default()
        }
    }

    fn setup(
        cfg: &RunConfig,
        b: ControlField,
    ) -> (
        ForwardTrajectory,
        Arc<ControlField>,
        StateEvaluator,
        Discretization,
    ) {
        let datum = cfg.datum();
        let b = Arc::new(b);
        let fwd = solve_vp(&datum, &b, cfg).unwrap();
        let disc = Discretization::new(cfg, fwd.time.clone(), fwd.max_radius + 1e-9).unwrap();
        let ev = StateEvaluator::new(&fwd, &b, datum).unwrap();
        (fwd, b, ev, disc)
    }

    #[test]
    fn twin_target_gives_zero_tracking() {
        let cfg = cfg();
        let b0 = ControlField::zeros(cfg.time_grid(), cfg.spatial_grid());
        let (fwd, b, ev, disc) = setup(&cfg, b0);
        let _ = fwd;
        let twin = TargetDistribution::FlowState(Arc::new(StateEvaluator {
            flow: ev.flow.clone(),
            datum: cfg.datum(),
            time: ev.time.clone(),
            support_radius: ev.support_radius,
        }));
        let report = cost(&b, &ev, &twin, cfg.lambda, &disc).unwrap();
        assert_eq!(report.tracking, 0.0);
        assert_eq!(report.regularization, 0.0);
        assert_eq!(report.j, 0.0);
    }

    #[test]
    fn zero_target_tracking_is_half_datum_norm() {
        // B = 0, f_d = 0: the tracking term is half the squared norm of
        // the transported datum, which the flow preserves; compare against
        // the closed-form datum norm within 1% (needs the quadrature-grade
        // lattice resolution, n >= 9)
        let mut cfg = cfg();
        cfg.lattice_n = 9;
        let b0 = ControlField::zeros(cfg.time_grid(), cfg.spatial_grid());
        let (_fwd, b, ev, disc) = setup(&cfg, b0);
        let report = cost(&b, &ev, &TargetDistribution::Zero, cfg.lambda, &disc).unwrap();
        let exact = 0.5 * cfg.datum().l2_sq();
        let rel = (report.tracking - exact).abs() / exact;
        assert!(rel < 0.01, "tracking {:.6e} vs {:.6e} ({:.2}%)", report.tracking, exact, 100.0 * rel);
    }

    #[test]
    fn lambda_scales_only_regularization() {
        let cfg = cfg();
        let b = ControlField::from_fn(cfg.time_grid(), cfg.spatial_grid(), |_t, x| {
            Vec3::new(0.1 * x.y, 0.0, 0.2)
        });
        let (_fwd, b, ev, disc) = setup(&cfg, b);
        let r1 = cost(&b, &ev, &TargetDistribution::Zero, 0.5, &disc).unwrap();
        let r2 = cost(&b, &ev, &TargetDistribution::Zero, 1.0, &disc).unwrap();
        assert_eq!(r1.tracking, r2.tracking);
        assert!((2.0 * r1.regularization - r2.regularization).abs() < 1e-15);
        // assembly identity
        assert_eq!(r1.j, r1.tracking + r1.regularization);
    }

    #[test]
    fn gradient_of_zero_plasma_is_pure_laplacian() {
        let mut c = cfg();
        c.datum_amplitude = 0.0;
        let b = ControlField::from_fn(c.time_grid(), c.spatial_grid(), |_t, x| {
            Vec3::new((x.x).sin() * 0.3, 0.1 * x.z, 0.0)
        });
        let datum = c.datum();
        let b = Arc::new(b);
        let ens = crate::phase::ensemble::sample_with_axis_count(&datum, 3, 0, 0.0).unwrap();
        let fwd = crate::forward::solve_vp_with(
            ens,
            &b,
            &c,
            crate::forward::SolveOptions::default(),
        )
        .unwrap();
        let disc = Discretization::new(&c, fwd.time.clone(), 1.1).unwrap();
        let cs = crate::tangent::costate(
            &fwd,
            &b,
            datum,
            &TargetDistribution::Zero,
            &disc,
            None,
        )
        .unwrap();
        let lambda = 0.7;
        let g = gradient(&b, &fwd, &cs, lambda, &disc).unwrap();
        let lap = b.laplacian();
        let mut worst = 0.0f64;
        for (a, l) in g.vals.iter().zip(&lap.vals) {
            worst = worst.max((*a - *l * (-lambda)).norm());
        }
        assert!(worst < 1e-12, "plasma-free gradient deviates: {worst:.3e}");
    }

    #[test]
    fn constant_control_has_zero_laplacian_gradient() {
        let mut c = cfg();
        c.datum_amplitude = 0.0;
        let b = ControlField::constant(c.time_grid(), c.spatial_grid(), Vec3::new(0.4, -0.2, 0.1));
        let lap = b.laplacian();
        for v in &lap.vals {
            assert!(v.norm() < 1e-13);
        }
    }

    #[test]
    fn second_derivative_degenerate_cases() {
        let c = cfg();
        let disc = {
            let datum = c.datum();
            let b0 = Arc::new(ControlField::zeros(c.time_grid(), c.spatial_grid()));
            let fwd = solve_vp(&datum, &b0, &c).unwrap();
            Discretization::new(&c, fwd.time.clone(), fwd.max_radius + 1e-9).unwrap()
        };
        let n_nodes = disc.time.n_nodes();
        let na = disc.lattice.n_active();
        let zero_series = LinearSolution {
            series: LatticeSeries::zeros(Arc::clone(&disc.lattice), n_nodes),
            log: vec![0.0],
            iterations: 1,
        };
        let zero_grads = vec![vec![Vec3::ZERO; na]; n_nodes];
        let h = ControlField::from_fn(c.time_grid(), c.spatial_grid(), |_t, x| {
            Vec3::new(0.2 * x.y, 0.1, 0.0)
        });
        let h0 = ControlField::zeros(c.time_grid(), c.spatial_grid());
        let lambda = 0.3;
        // H1 = 0 or H2 = 0 gives zero
        let v0 = second_derivative(&h0, &h, &zero_grads, &zero_grads, &zero_series, &zero_series, lambda, &disc).unwrap();
        assert_eq!(v0, 0.0);
        // zero plasma: exactly the regularization pairing
        let v = second_derivative(&h, &h, &zero_grads, &zero_grads, &zero_series, &zero_series, lambda, &disc).unwrap();
        let expect = lambda * h.grad_inner(&h).unwrap();
        assert!((v - expect).abs() < 1e-14);
        // constant-in-space direction: degenerate (zero) quadratic form
        let hc = ControlField::constant(c.time_grid(), c.spatial_grid(), Vec3::new(0.0, 0.0, 1.0));
        let vc = second_derivative(&hc, &hc, &zero_grads, &zero_grads, &zero_series, &zero_series, lambda, &disc).unwrap();
        assert_eq!(vc, 0.0);
    }

    #[test]
    fn lagrangian_reductions() {
        let c = cfg();
        let b = ControlField::from_fn(c.time_grid(), c.spatial_grid(), |_t, x| {
            Vec3::new(0.0, 0.1 * x.x, 0.3)
        });
        let (_fwd, b, ev, disc) = setup(&c, b);
        let lambda = 0.25;
        let f_series = state_series_on_demand(&ev, &disc.lattice, &disc.time);
        let zeros = LatticeSeries::zeros(Arc::clone(&disc.lattice), disc.time.n_nodes());
        let target = TargetDistribution::Zero;

        // g = 0: exactly the two explicit cost terms
        let l0 = lagrangian(&f_series, &b, &zeros, &target, lambda, &disc).unwrap();
        let report = cost(&b, &ev, &target, lambda, &disc).unwrap();
        let tracking_lat = {
            // lagrangian uses the terminal slice of the given series
            let terminal = &f_series.per_node[disc.time.n_steps];
            0.5 * disc.lattice.l2_inner(terminal, terminal)
        };
        assert!((l0 - (tracking_lat + report.regularization)).abs() < 1e-12);

        // f = 0, f_d = 0: only the regularization term
        let lz = lagrangian(&zeros, &b, &f_series, &target, lambda, &disc).unwrap();
        assert!((lz - report.regularization).abs() < 1e-12);

        // multiplier independence on the solution: two different g series
        // move the value by a small fraction of J
        let g1 = LatticeSeries {
            lattice: Arc::clone(&disc.lattice),
            per_node: (0..disc.time.n_nodes())
                .map(|m| {
                    disc.lattice
                        .active_pos
                        .iter()
                        .map(|z| 0.3 * ((z.x.x + z.v.y) * (1.0 + m as f64 * 0.1)).sin())
                        .collect()
                })
                .collect(),
        };
        let l1 = lagrangian(&f_series, &b, &g1, &target, lambda, &disc).unwrap();
        let j = tracking_lat + report.regularization;
        assert!(
            (l1 - l0).abs() <= 0.05 * j.abs().max(1e-12),
            "multiplier dependence {:.3e} vs J {:.3e}",
            (l1 - l0).abs(),
            j
        );
    }
}
