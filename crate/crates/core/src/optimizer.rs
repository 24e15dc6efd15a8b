//! Projected gradient descent over the admissible ball, with first-order,
//! second-order and uniqueness diagnostics.

use crate::cost::{cost, gradient, pairing, second_derivative, CostReport};
use crate::forward::{solve_vp, ForwardTrajectory};
use crate::kernel::control_slice_from_fg;
use crate::phase::config::RunConfig;
use crate::phase::field::{band_limited_random, v_norm, ControlField};
use crate::tangent::{
    costate, costate_vgrad_at_markers, costate_vgrad_series, state_vgrad_series, tangent,
    CostateSolution, Discretization, StateEvaluator, TangentWorkspace, TargetDistribution,
};
use crate::{Error, Result};
use std::sync::Arc;

/// Exact radial projection onto the admissible ball (the surrogate norm is
/// a Hilbert norm, so scaling is the metric projection): idempotent, and
/// after projection the norm is at most `K` to round-off.
pub fn project_ball(b: &ControlField, k: f64) -> ControlField {
    let norm = v_norm(b);
    if norm <= k {
        b.clone()
    } else {
        b.scaled(k / norm)
    }
}

/// One row of the optimization trace.
#[derive(Debug, Clone)]
pub struct TraceRow {
    pub iteration: usize,
    pub j: f64,
    pub tracking: f64,
    pub regularization: f64,
    /// Stationarity measure: the gradient paired with its own unit-norm
    /// direction, `<G, G> / |G|_V`.
    pub grad_pairing: f64,
    pub step: f64,
    pub v_norm: f64,
    pub projection_active: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptStatus {
    Converged,
    MaxIterations,
    /// The line search could not find a decreasing step.
    Stalled,
}

/// Full record of one minimization run.
pub struct OptimizationTrace {
    pub rows: Vec<TraceRow>,
    pub status: OptStatus,
}

/// Converged state of a minimization, kept for the optimality diagnostics.
pub struct MinimizeResult {
    pub trace: OptimizationTrace,
    pub b_final: Arc<ControlField>,
    pub fwd: ForwardTrajectory,
    pub costate: CostateSolution,
    pub gradient: ControlField,
    pub report: CostReport,
    pub disc: Discretization,
}

/// Projected gradient descent: forward solve, costate solve, adjoint
/// gradient, backtracking line search along the projected step, repeat
/// until the dual stationarity measure drops below the configured
/// tolerance.  `J` never increases across accepted steps.
pub fn minimize(
    cfg: &RunConfig,
    target: &TargetDistribution,
    b0: Option<ControlField>,
) -> Result<MinimizeResult> {
    let datum = cfg.datum();
    let time = cfg.time_grid();
    let grid = cfg.spatial_grid();
    let mut b = Arc::new(project_ball(
        &b0.unwrap_or_else(|| ControlField::zeros(time.clone(), grid.clone())),
        cfg.k_radius,
    ));

    let mut fwd = solve_vp(&datum, &b, cfg)?;
    let r_support = 1.05 * fwd.max_radius.max(target.support_radius()).max(datum.radius);
    let mut disc = Discretization::new(cfg, fwd.time.clone(), r_support)?;

    let mut rows: Vec<TraceRow> = Vec::new();
    let mut status = OptStatus::MaxIterations;
    let mut prev_bg: Option<(Arc<ControlField>, ControlField)> = None;
    let mut result_parts: Option<(CostateSolution, ControlField, CostReport)> = None;

    for iteration in 0..cfg.opt_max_iter {
        if fwd.max_radius > disc.lattice.r_support {
            // support outgrew the lattice: rebuild the discretization
            disc = Discretization::new(cfg, fwd.time.clone(), 1.05 * fwd.max_radius)?;
        }
        let state = StateEvaluator::new(&fwd, &b, datum)?;
        let cs = costate(&fwd, &b, datum, target, &disc, None)?;
        let report = cost(&b, &state, target, cfg.lambda, &disc)?;
        let g = gradient(&b, &fwd, &cs, cfg.lambda, &disc)?;

        let g_vnorm = v_norm(&g);
        let grad_pairing = if g_vnorm > 0.0 {
            pairing(&g, &g)? / g_vnorm
        } else {
            0.0
        };
        let bnorm = v_norm(&b);
        rows.push(TraceRow {
            iteration,
            j: report.j,
            tracking: report.tracking,
            regularization: report.regularization,
            grad_pairing,
            step: 0.0,
            v_norm: bnorm,
            projection_active: bnorm >= cfg.k_radius * (1.0 - 1e-12),
        });

        if grad_pairing.abs() < cfg.opt_grad_tol {
            status = OptStatus::Converged;
            result_parts = Some((cs, g, report));
            break;
        }

        // initial step: spectral (Barzilai-Borwein) estimate when history
        // exists, the configured step otherwise
        let mut alpha = match &prev_bg {
            Some((b_prev, g_prev)) => {
                let db = ControlField::lin_comb(&b, 1.0, b_prev, -1.0)?;
                let dg = ControlField::lin_comb(&g, 1.0, g_prev, -1.0)?;
                let num = db.l2_inner(&db)?;
                let den = db.l2_inner(&dg)?;
                if den > 0.0 && num > 0.0 {
                    (num / den).clamp(1e-4 * cfg.opt_step_init, 1e4 * cfg.opt_step_init)
                } else {
                    cfg.opt_step_init
                }
            }
            None => cfg.opt_step_init,
        };

        // backtracking along the projected-gradient arc
        let mut accepted = false;
        for _ in 0..cfg.opt_max_backtracks {
            let trial = {
                let mut t = (*b).clone();
                t.add_scaled(&g, -alpha)?;
                Arc::new(project_ball(&t, cfg.k_radius))
            };
            let fwd_trial = solve_vp(&datum, &trial, cfg)?;
            if fwd_trial.max_radius > disc.lattice.r_support {
                disc = Discretization::new(cfg, fwd_trial.time.clone(), 1.05 * fwd_trial.max_radius)?;
            }
            let state_trial = StateEvaluator::new(&fwd_trial, &trial, datum)?;
            let report_trial = cost(&trial, &state_trial, target, cfg.lambda, &disc)?;
            // sufficient decrease along the actually taken (projected) step
            let taken = ControlField::lin_comb(&b, 1.0, &trial, -1.0)?;
            let decrease_ref = pairing(&g, &taken)?;
            if report_trial.j <= report.j - cfg.opt_armijo * decrease_ref.max(0.0)
                && report_trial.j < report.j
            {
                prev_bg = Some((Arc::clone(&b), g.clone()));
                if let Some(row) = rows.last_mut() {
                    row.step = alpha;
                }
                b = trial;
                fwd = fwd_trial;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            status = OptStatus::Stalled;
            result_parts = Some((cs, g, report));
            break;
        }
    }

    let (cs, g, report) = match result_parts {
        Some(parts) => parts,
        None => {
            // iteration cap reached: evaluate the final point once more
            let state = StateEvaluator::new(&fwd, &b, datum)?;
            let cs = costate(&fwd, &b, datum, target, &disc, None)?;
            let report = cost(&b, &state, target, cfg.lambda, &disc)?;
            let g = gradient(&b, &fwd, &cs, cfg.lambda, &disc)?;
            (cs, g, report)
        }
    };

    Ok(MinimizeResult {
        trace: OptimizationTrace { rows, status },
        b_final: b,
        fwd,
        costate: cs,
        gradient: g,
        report,
        disc,
    })
}

/// Outcome of the first-order variational check at a candidate optimum.
#[derive(Debug, Clone)]
pub struct VariationalReport {
    /// Minimum of `<G, B - B_bar>` over the admissible panel.
    pub min_pairing: f64,
    /// Max of `|<G, H>|` over unit-norm directions (interior measure).
    pub max_unit_pairing: f64,
    pub boundary: bool,
}

/// Pairs the gradient with a seeded panel of admissible fields: at an
/// interior optimum all pairings vanish; on the boundary they are
/// nonnegative toward the interior.
pub fn variational_inequality_check(
    b_bar: &ControlField,
    grad: &ControlField,
    cfg: &RunConfig,
    n_panel: usize,
) -> Result<VariationalReport> {
    let bnorm = v_norm(b_bar);
    let boundary = bnorm >= cfg.k_radius * (1.0 - 1e-9);
    let mut min_pairing = f64::INFINITY;
    let mut max_unit = 0.0f64;
    for i in 0..n_panel {
        let raw = band_limited_random(
            b_bar.time.clone(),
            b_bar.grid.clone(),
            cfg.seed.wrapping_add(1000 + i as u64),
            1.0,
            4,
        );
        let admissible = project_ball(&raw, cfg.k_radius);
        let diff = ControlField::lin_comb(&admissible, 1.0, b_bar, -1.0)?;
        min_pairing = min_pairing.min(pairing(grad, &diff)?);
        let hnorm = v_norm(&raw);
        if hnorm > 0.0 {
            max_unit = max_unit.max(pairing(grad, &raw.scaled(1.0 / hnorm))?.abs());
        }
    }
    // include the gradient's own direction in the unit panel
    let gnorm = v_norm(grad);
    if gnorm > 0.0 {
        max_unit = max_unit.max(pairing(grad, &grad.scaled(1.0 / gnorm))?.abs());
    }
    Ok(VariationalReport {
        min_pairing,
        max_unit_pairing: max_unit,
        boundary,
    })
}

/// Residuals of the optimality system at an interior candidate.
#[derive(Debug, Clone)]
pub struct OptimalityResidual {
    /// Relative grid L2 distance between the control and its convolution
    /// representation from the state/costate pair.
    pub convolution_rel: f64,
    /// Relative residual of the differential form,
    /// `|lap B - p / lambda| / |lap B|`.
    pub laplacian_rel: f64,
}

/// Evaluates both forms of the optimality representation at a candidate.
pub fn optimality_residual(
    b_bar: &ControlField,
    fwd: &ForwardTrajectory,
    cs: &CostateSolution,
    lambda: f64,
    disc: &Discretization,
) -> Result<OptimalityResidual> {
    if !(lambda > 0.0) {
        return Err(Error::RepresentationUndefined);
    }
    let dvg = costate_vgrad_at_markers(cs, fwd, disc.h_fd);
    // convolution form, node by node
    let mut b_conv = ControlField::zeros(b_bar.time.clone(), b_bar.grid.clone());
    for m in 0..fwd.time.n_nodes() {
        let slice =
            control_slice_from_fg(&disc.kernel, &fwd.snapshots[m], &dvg[m], lambda, &b_bar.grid)?;
        b_conv.slice_mut(m).copy_from_slice(&slice);
    }
    let diff = ControlField::lin_comb(b_bar, 1.0, &b_conv, -1.0)?;
    let denom = b_bar.l2_norm().max(1e-300);
    let convolution_rel = diff.l2_norm() / denom;

    // differential form: lap B = p / lambda, with p assembled exactly as
    // in the gradient (so the residual is the gradient's own size)
    let g = gradient(b_bar, fwd, cs, lambda, disc)?;
    let lap = b_bar.laplacian();
    let lap_norm = lap.l2_norm().max(1e-300);
    let laplacian_rel = g.l2_norm() / (lambda * lap_norm);
    Ok(OptimalityResidual {
        convolution_rel,
        laplacian_rel,
    })
}

/// Measurement report of the second-order sufficient condition.
#[derive(Debug, Clone)]
pub struct SufficientConditionReport {
    /// Sampled quadratic-form values `J''[H,H]` on unit directions.
    pub quadratic_values: Vec<f64>,
    /// Implied coercivity constant (minimum sampled value).
    pub eps_hat: f64,
    /// `(s, J(B+sH) - J(B), (eps_hat/4) s^alpha)` along the worst ray.
    pub growth_samples: Vec<(f64, f64, f64)>,
    /// Whether positivity and the growth inequality held on every sample.
    pub verified: bool,
}

/// Samples the second derivative on random unit directions and checks the
/// implied quadratic growth along the worst ray.  Purely observational:
/// a `verified = false` report is a finding, not an error.
#[allow(clippy::too_many_arguments)]
pub fn sufficient_condition_probe(
    cfg: &RunConfig,
    ws: &TangentWorkspace,
    cs: &CostateSolution,
    b_bar: &ControlField,
    target: &TargetDistribution,
    j_at_bar: f64,
    alpha: f64,
    n_samples: usize,
    ray_values: &[f64],
) -> Result<SufficientConditionReport> {
    if !(alpha > 0.0 && alpha < 2.0 + cfg.gamma) {
        return Err(Error::InvalidParameter(
            "growth exponent must lie in (0, 2 + gamma)".into(),
        ));
    }
    let datum = cfg.datum();
    let disc = &ws.disc;
    let dvf_nodes = state_vgrad_series(&ws.state, &disc.lattice, &disc.time, disc.h_fd);
    let dvg_nodes = costate_vgrad_series(cs, &disc.lattice, disc.h_fd);

    let mut quadratic_values = Vec::new();
    let mut worst: Option<(f64, ControlField)> = None;
    for i in 0..n_samples.max(1) {
        let raw = band_limited_random(
            b_bar.time.clone(),
            b_bar.grid.clone(),
            cfg.seed.wrapping_add(5000 + i as u64),
            1.0,
            4,
        );
        let n = v_norm(&raw);
        if n == 0.0 {
            continue;
        }
        let h = raw.scaled(1.0 / n);
        let tan = tangent(ws, &h)?;
        let gd = crate::tangent::costate_derivative(ws, cs, &tan, &h)?;
        let q = second_derivative(&h, &h, &dvf_nodes, &dvg_nodes, &tan, &gd, cfg.lambda, disc)?;
        quadratic_values.push(q);
        if worst.as_ref().map(|(w, _)| q < *w).unwrap_or(true) {
            worst = Some((q, h));
        }
    }
    let eps_hat = quadratic_values.iter().copied().fold(f64::INFINITY, f64::min);
    let mut growth_samples = Vec::new();
    let mut verified = eps_hat > 0.0;
    if let Some((_, h)) = worst {
        for &s in ray_values {
            let trial = {
                let mut t = b_bar.clone();
                t.add_scaled(&h, s)?;
                Arc::new(project_ball(&t, cfg.k_radius))
            };
            let fwd = solve_vp(&datum, &trial, cfg)?;
            let state = StateEvaluator::new(&fwd, &trial, datum)?;
            // J along the ray against the claimed growth
            let report = cost(&trial, &state, target, cfg.lambda, disc)?;
            let lhs = report.j - j_at_bar;
            let rhs = 0.25 * eps_hat.max(0.0) * s.powf(alpha);
            if lhs < rhs - 1e-12 {
                verified = false;
            }
            growth_samples.push((s, lhs, rhs));
        }
    }
    Ok(SufficientConditionReport {
        quadratic_values,
        eps_hat,
        growth_samples,
        verified,
    })
}

/// Multi-start uniqueness experiment.
#[derive(Debug, Clone)]
pub struct UniquenessReport {
    pub t_over_lambda: f64,
    /// Pairwise distances of the converged controls in the surrogate norm.
    pub control_distances: Vec<f64>,
    /// Pairwise lattice L2 distances of the terminal states.
    pub state_distances: Vec<f64>,
    pub stalled: Vec<bool>,
    pub max_control_distance: f64,
}

/// Runs the minimization from several seeded initial fields and reports
/// how far apart the converged controls and terminal states are.  In the
/// contractive regime (small `T / lambda`) they collapse together.
pub fn uniqueness_experiment(
    cfg: &RunConfig,
    target: &TargetDistribution,
    n_starts: usize,
) -> Result<UniquenessReport> {
    if n_starts < 2 {
        return Err(Error::InvalidParameter(
            "uniqueness experiment needs at least 2 starts".into(),
        ));
    }
    let time = cfg.time_grid();
    let grid = cfg.spatial_grid();
    let mut results: Vec<MinimizeResult> = Vec::new();
    let mut stalled = Vec::new();
    for i in 0..n_starts {
        let b0 = if i == 0 {
            ControlField::zeros(time.clone(), grid.clone())
        } else {
            let raw = band_limited_random(
                time.clone(),
                grid.clone(),
                cfg.seed.wrapping_add(77 + i as u64),
                0.5,
                3,
            );
            project_ball(&raw, 0.8 * cfg.k_radius)
        };
        let res = minimize(cfg, target, Some(b0))?;
        stalled.push(res.trace.status == OptStatus::Stalled);
        results.push(res);
    }
    let mut control_distances = Vec::new();
    let mut state_distances = Vec::new();
    let datum = cfg.datum();
    for i in 0..n_starts {
        for j in i + 1..n_starts {
            let diff = ControlField::lin_comb(&results[i].b_final, 1.0, &results[j].b_final, -1.0)?;
            control_distances.push(v_norm(&diff));
            // terminal states on a shared lattice
            let disc = &results[i].disc;
            let ev_i = StateEvaluator::new(&results[i].fwd, &results[i].b_final, datum)?;
            let ev_j = StateEvaluator::new(&results[j].fwd, &results[j].b_final, datum)?;
            let t = cfg.t_final;
            let vals: Vec<f64> = disc
                .lattice
                .active_pos
                .iter()
                .map(|&z| ev_i.value(t, z) - ev_j.value(t, z))
                .collect();
            state_distances.push(disc.lattice.l2_norm(&vals));
        }
    }
    let max_control_distance = control_distances.iter().copied().fold(0.0, f64::max);
    Ok(UniquenessReport {
        t_over_lambda: cfg.t_final / cfg.lambda,
        control_distances,
        state_distances,
        stalled,
        max_control_distance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase::vec3::Vec3;

    fn cfg() -> RunConfig {
        RunConfig {
            t_final: 0.15,
            dt: 0.03,
            grid_l: 2.0,
            grid_n: 8,
            eps_kernel: 0.3,
            n_particles: 300,
            lattice_n: 7,
            datum_amplitude: 0.4,
            lambda: 1e-3,
            k_radius: 2.0,
            opt_max_iter: 8,
            opt_grad_tol: 1e-9,
            ..RunConfig::default()
        }
    }

    #[test]
    fn projection_properties() {
        let c = cfg();
        let b = band_limited_random(c.time_grid(), c.spatial_grid(), 3, 1.0, 4);
        let k = 0.5 * v_norm(&b);
        let p = project_ball(&b, k);
        assert!((v_norm(&p) - k).abs() <= 1e-12 * k, "projected norm off");
        // idempotence, bitwise
        let pp = project_ball(&p, k);
        assert_eq!(p.vals, pp.vals);
        // inside-ball fields pass through unchanged
        let small = b.scaled(0.25 * k / v_norm(&b));
        let ps = project_ball(&small, k);
        assert_eq!(small.vals, ps.vals);
    }

    #[test]
    fn stationary_start_terminates_immediately() {
        // target generated by the zero field, started at the zero field:
        // zero costate, zero gradient, immediate convergence
        let c = cfg();
        let datum = c.datum();
        let b0 = Arc::new(ControlField::zeros(c.time_grid(), c.spatial_grid()));
        let fwd = solve_vp(&datum, &b0, &c).unwrap();
        let ev = StateEvaluator::new(&fwd, &b0, datum).unwrap();
        let target = TargetDistribution::FlowState(Arc::new(ev));
        let res = minimize(&c, &target, None).unwrap();
        assert_eq!(res.trace.status, OptStatus::Converged);
        assert_eq!(res.trace.rows.len(), 1);
        assert_eq!(res.trace.rows[0].grad_pairing, 0.0);
    }

    #[test]
    fn zero_plasma_regularization_descent() {
        // no plasma: J is the quadratic regularization alone; descent from
        // a random field decreases J monotonically
        let mut c = cfg();
        c.datum_amplitude = 0.0;
        c.lambda = 0.5;
        c.opt_max_iter = 6;
        c.opt_grad_tol = 1e-14;
        let b0 = band_limited_random(c.time_grid(), c.spatial_grid(), 5, 0.4, 3);
        let res = minimize(&c, &TargetDistribution::Zero, Some(b0)).unwrap();
        let js: Vec<f64> = res.trace.rows.iter().map(|r| r.j).collect();
        assert!(js.windows(2).all(|w| w[1] <= w[0] + 1e-15), "J not monotone: {js:?}");
        assert!(js.last().unwrap() < &(0.5 * js[0]), "insufficient decrease: {js:?}");
        // norms stay admissible after every projection
        for row in &res.trace.rows {
            assert!(row.v_norm <= c.k_radius + 1e-12);
        }
    }

    #[test]
    fn uniqueness_needs_two_starts() {
        let c = cfg();
        assert!(matches!(
            uniqueness_experiment(&c, &TargetDistribution::Zero, 1),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn variational_check_zero_gradient() {
        let c = cfg();
        let b = ControlField::zeros(c.time_grid(), c.spatial_grid());
        let g = ControlField::zeros(c.time_grid(), c.spatial_grid());
        let rep = variational_inequality_check(&b, &g, &c, 4).unwrap();
        assert_eq!(rep.max_unit_pairing, 0.0);
        assert!(rep.min_pairing.abs() < 1e-15);
        assert!(!rep.boundary);
        let _ = Vec3::ZERO;
    }
}
