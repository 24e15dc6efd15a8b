//! Nonlinear forward solver.
//!
//! Markers carry fixed values and weights and are pushed through the
//! superposition of their own mollified Coulomb field and the external
//! magnetic field.  The acceleration acting on each marker is evaluated
//! once per time step from the beginning-of-step ensemble (explicit
//! coupling, a marker never acts on itself); the magnetic rotation is
//! resolved within the step by the 4th-order integrator.

use crate::kernel::MollifiedKernel;
use crate::par;
use crate::phase::config::RunConfig;
use crate::phase::datum::InitialDatum;
use crate::phase::ensemble::{sample_initial_ensemble, ParticleEnsemble};
use crate::phase::field::{v_norm, ControlField};
use crate::phase::grids::TimeGrid;
use crate::phase::vec3::Vec3;
use crate::{characteristics, Error, Result};
use std::sync::Arc;

/// Per-time-node scalar diagnostics of a forward run.
#[derive(Debug, Clone)]
pub struct NodeDiagnostics {
    pub t: f64,
    pub l1: f64,
    pub l2: f64,
    pub linf: f64,
    pub support_radius: f64,
    /// Electrostatic energy `(1/2) sum_i w_i f_i psi(x_i)` (self-term
    /// excluded), equal to the field energy of the induced potential.
    pub field_energy: f64,
    /// Sup over markers of the self-consistent acceleration magnitude.
    pub accel_sup: f64,
}

/// Full time history of a forward solve.
#[derive(Debug, Clone)]
pub struct ForwardTrajectory {
    pub time: TimeGrid,
    /// Ensemble state at every time node (values and weights constant).
    pub snapshots: Vec<ParticleEnsemble>,
    pub diagnostics: Vec<NodeDiagnostics>,
    /// Self-consistent acceleration `A = -grad psi` tabulated on the field
    /// grid at every time node; present when requested at solve time.
    pub accel_tables: Option<Arc<ControlField>>,
    /// Measured `sqrt( sum_k w_k sup_x |A(t_k, x)|^2 )`, the norm entering
    /// the support-growth bound.
    pub a_norm: f64,
    pub initial_radius: f64,
    pub max_radius: f64,
    /// Set when the control exceeded the admissible-ball radius (the solve
    /// proceeds; callers decide whether to warn).
    pub norm_exceeded: Option<f64>,
}

impl ForwardTrajectory {
    pub fn terminal(&self) -> &ParticleEnsemble {
        self.snapshots.last().expect("nonempty trajectory")
    }

    /// Certified containment radius for this run (support-growth bound with
    /// the measured field norm).
    pub fn zeta_bound(&self) -> f64 {
        characteristics::zeta(self.initial_radius, self.time.t_final, self.a_norm)
    }
}

/// Force and potential at every marker from every other marker.
fn forces_at_markers(kernel: &MollifiedKernel, ens: &ParticleEnsemble) -> Vec<(Vec3, f64)> {
    let eps2 = kernel.eps * kernel.eps;
    let q: Vec<f64> = ens.w.iter().zip(&ens.f).map(|(w, f)| w * f).collect();
    let pos = &ens.pos;
    par::map_indexed(ens.len(), |i| {
        let xi = pos[i];
        let mut acc = Vec3::ZERO;
        let mut pot = 0.0;
        for j in 0..pos.len() {
            if j == i {
                continue;
            }
            let d = xi - pos[j];
            let inv = 1.0 / (d.norm_sq() + eps2);
            let root = inv.sqrt();
            // A = -grad psi: repulsive for positive values
            acc += d * (q[j] * inv * root);
            pot += q[j] * root;
        }
        (acc, pot)
    })
}

/// Options for [`solve_vp_with`].
#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    /// Tabulate the self-consistent acceleration on the field grid at every
    /// node (needed by the linearized solvers; skippable for plain runs).
    pub build_tables: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { build_tables: true }
    }
}

/// Solves the forward system for the configured datum and the given
/// control, with acceleration tables.
pub fn solve_vp(
    datum: &InitialDatum,
    b_field: &ControlField,
    cfg: &RunConfig,
) -> Result<ForwardTrajectory> {
    let ens = sample_initial_ensemble(datum, cfg.n_particles, cfg.seed, cfg.marker_jitter)?;
    solve_vp_with(ens, b_field, cfg, SolveOptions::default())
}

/// Solves the forward system from an explicit initial ensemble.
pub fn solve_vp_with(
    ens0: ParticleEnsemble,
    b_field: &ControlField,
    cfg: &RunConfig,
    opts: SolveOptions,
) -> Result<ForwardTrajectory> {
    if ens0.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let kernel = MollifiedKernel::new(cfg.eps_resolved())?;
    let time = b_field.time.clone();
    let grid = b_field.grid.clone();
    let n_nodes = time.n_nodes();

    let bnorm = v_norm(b_field);
    let norm_exceeded = (bnorm > cfg.k_radius).then_some(bnorm);

    let mut snapshots: Vec<ParticleEnsemble> = Vec::with_capacity(n_nodes);
    let mut diagnostics: Vec<NodeDiagnostics> = Vec::with_capacity(n_nodes);
    let mut tables = opts
        .build_tables
        .then(|| ControlField::zeros(time.clone(), grid.clone()));

    let initial_radius = ens0.support_radius();
    let mut max_radius = initial_radius;
    let mut accel_sups: Vec<f64> = Vec::with_capacity(n_nodes);

    let mut current = ens0;
    for k in 0..n_nodes {
        let t_k = time.node(k);
        let forces = forces_at_markers(&kernel, &current);

        // diagnostics at this node
        let support_radius = current.support_radius();
        max_radius = max_radius.max(support_radius);
        let accel_sup = forces.iter().map(|(a, _)| a.norm()).fold(0.0, f64::max);
        accel_sups.push(accel_sup);
        let field_energy = 0.5
            * (0..current.len())
                .map(|i| current.w[i] * current.f[i] * forces[i].1)
                .sum::<f64>();
        diagnostics.push(NodeDiagnostics {
            t: t_k,
            l1: current.lp_norm(1.0)?,
            l2: current.lp_norm(2.0)?,
            linf: current.lp_norm(f64::INFINITY)?,
            support_radius,
            field_energy,
            accel_sup,
        });

        if let Some(tab) = tables.as_mut() {
            let q: Vec<f64> = current.w.iter().zip(&current.f).map(|(w, f)| w * f).collect();
            let slice = crate::kernel::grad_psi_table(&kernel, &current.pos, &q, &grid);
            for (dst, g) in tab.slice_mut(k).iter_mut().zip(slice) {
                *dst = -g;
            }
        }

        if k == n_nodes - 1 {
            snapshots.push(current);
            break;
        }

        // push all markers one step; the per-marker acceleration is frozen,
        // the magnetic field is interpolated at the stage points
        let dt = time.dt;
        let pos = &current.pos;
        let vel = &current.vel;
        let pushed: Vec<(Vec3, Vec3)> = par::map_indexed(pos.len(), |i| {
            let a_i = forces[i].0;
            let mut x = pos[i];
            let mut v = vel[i];
            let deriv = |tau: f64, x: Vec3, v: Vec3| -> (Vec3, Vec3) {
                (v, a_i + v.cross(b_field.eval(tau, x)))
            };
            let (k1x, k1v) = deriv(t_k, x, v);
            let (k2x, k2v) = deriv(t_k + 0.5 * dt, x + k1x * (0.5 * dt), v + k1v * (0.5 * dt));
            let (k3x, k3v) = deriv(t_k + 0.5 * dt, x + k2x * (0.5 * dt), v + k2v * (0.5 * dt));
            let (k4x, k4v) = deriv(t_k + dt, x + k3x * dt, v + k3v * dt);
            x += (k1x + (k2x + k3x) * 2.0 + k4x) * (dt / 6.0);
            v += (k1v + (k2v + k3v) * 2.0 + k4v) * (dt / 6.0);
            (x, v)
        });
        let mut next = ParticleEnsemble {
            pos: Vec::with_capacity(pushed.len()),
            vel: Vec::with_capacity(pushed.len()),
            f: current.f.clone(),
            w: current.w.clone(),
        };
        for (x, v) in pushed {
            if !x.is_finite() || !v.is_finite() {
                return Err(Error::Blowup { step: k });
            }
            next.pos.push(x);
            next.vel.push(v);
        }
        snapshots.push(current);
        current = next;
    }

    // measured field norm entering the support bound
    let a_norm = {
        let mut acc = 0.0;
        for (k, s) in accel_sups.iter().enumerate() {
            acc += time.trap_weight(k) * s * s;
        }
        acc.sqrt()
    };

    Ok(ForwardTrajectory {
        time,
        snapshots,
        diagnostics,
        accel_tables: tables.map(Arc::new),
        a_norm,
        initial_radius,
        max_radius,
        norm_exceeded,
    })
}
