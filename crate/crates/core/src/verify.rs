//! Numerical probes tying the solvers' continuity and differentiability
//! claims to measurements, and a one-command suite over all of them.

use crate::cost::{directional_derivative_tangent, gradient, pairing};
use crate::forward::solve_vp;
use crate::phase::config::RunConfig;
use crate::phase::field::{band_limited_random, v_norm, ControlField};
use crate::tangent::{
    costate, tangent, Discretization, StateEvaluator, TangentWorkspace, TargetDistribution,
};
use crate::{Error, Result};
use std::sync::Arc;

/// One probe's measurements and verdict.
#[derive(Debug, Clone)]
pub struct ProbeReport {
    pub name: String,
    /// The single claim this probe measures.
    pub anchor: String,
    /// `(perturbation size, measured quantity)` pairs.
    pub samples: Vec<(f64, f64)>,
    /// Log-log least-squares exponent when at least 4 samples exist.
    pub fitted_exponent: Option<f64>,
    pub passed: bool,
    pub detail: String,
}

/// Least-squares slope of `log(q)` against `log(size)`; needs at least 4
/// points to be trustworthy, fewer return `None`.
pub fn fit_exponent(samples: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = samples
        .iter()
        .filter(|(s, q)| *s > 0.0 && *q > 0.0)
        .map(|(s, q)| (s.ln(), q.ln()))
        .collect();
    if pts.len() < 4 {
        return None;
    }
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-300 {
        None
    } else {
        Some((n * sxy - sx * sy) / denom)
    }
}

/// Differentiability probe: the remainder
/// `R(h) = |f_{B+hH}(T) - f_B(T) - h f'_B[H](T)| / h`
/// measured in the lattice L2 norm must decrease along the step sequence
/// and end below the configured fraction of `|f'_B[H](T)|`.
pub fn frechet_probe(
    cfg: &RunConfig,
    b_field: &Arc<ControlField>,
    h_field: &ControlField,
    steps: &[f64],
) -> Result<ProbeReport> {
    if v_norm(h_field) == 0.0 {
        return Err(Error::ZeroDirection);
    }
    let datum = cfg.datum();
    let fwd = solve_vp(&datum, b_field, cfg)?;
    let disc = Discretization::new(cfg, fwd.time.clone(), 1.05 * fwd.max_radius)?;
    let ws = TangentWorkspace::new(&fwd, Arc::clone(b_field), datum, disc, cfg.traj_cache_mb)?;
    let tan = tangent(&ws, h_field)?;
    let t_final = cfg.t_final;
    let lat = &ws.disc.lattice;

    let f_prime_t = &tan.series.per_node[ws.disc.time.n_steps];
    let tangent_norm = lat.l2_norm(f_prime_t);

    let base_vals: Vec<f64> = lat
        .active_pos
        .iter()
        .map(|&z| ws.state.value(t_final, z))
        .collect();

    let mut samples = Vec::new();
    for &h in steps {
        let b_pert = Arc::new(ControlField::lin_comb(b_field, 1.0, h_field, h)?);
        let fwd_p = solve_vp(&datum, &b_pert, cfg)?;
        let ev_p = StateEvaluator::new(&fwd_p, &b_pert, datum)?;
        let diff: Vec<f64> = crate::par::map_indexed(lat.n_active(), |j| {
            let z = lat.active_pos[j];
            ev_p.value(t_final, z) - base_vals[j] - h * f_prime_t[j]
        });
        samples.push((h, lat.l2_norm(&diff) / h));
    }
    let decreasing = samples.windows(2).all(|w| w[1].1 < w[0].1);
    let final_r = samples.last().map(|s| s.1).unwrap_or(f64::INFINITY);
    let passed = decreasing && final_r <= cfg.tol_frechet * tangent_norm;
    Ok(ProbeReport {
        name: "frechet".into(),
        anchor: "terminal-state derivative remainder".into(),
        fitted_exponent: fit_exponent(&samples),
        detail: format!(
            "remainders {:?}, tangent norm {tangent_norm:.3e}, decreasing {decreasing}",
            samples.iter().map(|s| s.1).collect::<Vec<_>>()
        ),
        samples,
        passed,
    })
}

/// Continuity probe: the ratio `sup |f_B - f_H| / |B - H|_V` over a
/// shrinking panel of field pairs stays bounded (no growth trend).
pub fn lipschitz_probe(
    cfg: &RunConfig,
    b_field: &Arc<ControlField>,
    direction: &ControlField,
    deltas: &[f64],
) -> Result<ProbeReport> {
    let dir_norm = v_norm(direction);
    if dir_norm == 0.0 || deltas.iter().any(|&d| d == 0.0) {
        return Err(Error::ZeroDirection);
    }
    let datum = cfg.datum();
    let fwd = solve_vp(&datum, b_field, cfg)?;
    let disc = Discretization::new(cfg, fwd.time.clone(), 1.1 * fwd.max_radius)?;
    let ev = StateEvaluator::new(&fwd, b_field, datum)?;
    let lat = &disc.lattice;
    // sup over (time node, lattice node) of the base run, reused per pair
    let base: Vec<Vec<f64>> = (0..disc.time.n_nodes())
        .map(|m| {
            let t = disc.time.node(m);
            crate::par::map_indexed(lat.n_active(), |j| ev.value(t, lat.active_pos[j]))
        })
        .collect();

    let mut samples = Vec::new();
    for &delta in deltas {
        let b_pert = Arc::new(ControlField::lin_comb(b_field, 1.0, direction, delta)?);
        let fwd_p = solve_vp(&datum, &b_pert, cfg)?;
        let ev_p = StateEvaluator::new(&fwd_p, &b_pert, datum)?;
        let mut sup = 0.0f64;
        for m in 0..disc.time.n_nodes() {
            let t = disc.time.node(m);
            let diffs = crate::par::map_indexed(lat.n_active(), |j| {
                (ev_p.value(t, lat.active_pos[j]) - base[m][j]).abs()
            });
            sup = diffs.into_iter().fold(sup, f64::max);
        }
        samples.push((delta * dir_norm, sup / (delta * dir_norm)));
    }
    let ratios: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let max = ratios.iter().copied().fold(0.0f64, f64::max);
    let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let spread = if min > 0.0 { max / min } else { f64::INFINITY };
    // bounded ratios: no blow-up as the perturbation shrinks
    let passed = if max == 0.0 {
        true
    } else {
        spread <= cfg.tol_lipschitz_spread
    };
    Ok(ProbeReport {
        name: "lipschitz".into(),
        anchor: "state continuity in the control".into(),
        fitted_exponent: fit_exponent(&samples),
        detail: format!("ratios {ratios:?}, spread {spread:.2}"),
        samples,
        passed,
    })
}

/// Duality probe: the adjoint-path pairing `<G, H>` matches the
/// tangent-path directional derivative for every panel direction.
pub fn duality_probe(
    cfg: &RunConfig,
    b_field: &Arc<ControlField>,
    target: &TargetDistribution,
    n_panel: usize,
) -> Result<ProbeReport> {
    let datum = cfg.datum();
    let fwd = solve_vp(&datum, b_field, cfg)?;
    let disc = Discretization::new(
        cfg,
        fwd.time.clone(),
        1.05 * fwd.max_radius.max(target.support_radius()),
    )?;
    let ws = TangentWorkspace::new(&fwd, Arc::clone(b_field), datum, disc, cfg.traj_cache_mb)?;
    let cs = costate(&fwd, b_field, datum, target, &ws.disc, Some(&ws.paths))?;
    let g = gradient(b_field, &fwd, &cs, cfg.lambda, &ws.disc)?;

    let mut samples = Vec::new();
    let mut worst_gap = 0.0f64;
    let mut all_pass = true;
    for i in 0..n_panel {
        let h = band_limited_random(
            b_field.time.clone(),
            b_field.grid.clone(),
            cfg.seed.wrapping_add(300 + i as u64),
            0.5,
            4,
        );
        let d_adj = pairing(&g, &h)?;
        let tan = tangent(&ws, &h)?;
        let d_tan = directional_derivative_tangent(
            b_field,
            &h,
            &ws.state,
            target,
            &tan,
            cfg.lambda,
            &ws.disc,
        )?;
        let scale = d_adj.abs().max(d_tan.abs()).max(1e-8);
        let gap = (d_adj - d_tan).abs() / scale;
        worst_gap = worst_gap.max(gap);
        all_pass &= gap <= cfg.tol_duality;
        samples.push((i as f64 + 1.0, gap));
    }
    Ok(ProbeReport {
        name: "duality".into(),
        anchor: "tangent/adjoint derivative agreement".into(),
        fitted_exponent: None,
        detail: format!("worst relative gap {worst_gap:.3e} over {n_panel} directions"),
        samples,
        passed: all_pass,
    })
}

/// Conservation probe: norm drift of a forward run and containment of all
/// markers inside the certified support-growth radius.
pub fn conservation_probe(cfg: &RunConfig, b_field: &Arc<ControlField>) -> Result<ProbeReport> {
    let datum = cfg.datum();
    let fwd = solve_vp(&datum, b_field, cfg)?;
    let first = &fwd.diagnostics[0];
    let mut worst_drift = 0.0f64;
    for d in &fwd.diagnostics {
        for (now, init) in [(d.l1, first.l1), (d.l2, first.l2), (d.linf, first.linf)] {
            if init > 0.0 {
                worst_drift = worst_drift.max((now - init).abs() / init);
            }
        }
    }
    let bound = fwd.zeta_bound();
    let contained = fwd.max_radius <= bound + 1e-9;
    let passed = worst_drift <= cfg.tol_conservation_drift && contained;
    Ok(ProbeReport {
        name: "conservation".into(),
        anchor: "norm preservation and support growth bound".into(),
        samples: vec![(1.0, worst_drift), (2.0, fwd.max_radius / bound.max(1e-300))],
        fitted_exponent: None,
        detail: format!(
            "drift {worst_drift:.3e}, support {:.3} of certified {:.3}",
            fwd.max_radius, bound
        ),
        passed,
    })
}

/// Aggregated result of [`run_all`].
#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub probes: Vec<ProbeReport>,
    pub passed: bool,
}

impl SuiteReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for p in &self.probes {
            out.push_str(&format!(
                "[{}] {} -- {} ({})\n",
                if p.passed { "PASS" } else { "FAIL" },
                p.name,
                p.anchor,
                p.detail
            ));
        }
        out.push_str(&format!(
            "suite: {}\n",
            if self.passed { "PASS" } else { "FAIL" }
        ));
        out
    }
}

/// Runs every probe with seeded inputs derived from the configuration.
/// Individual probe errors are collected as failures, not propagated.
pub fn run_all(cfg: &RunConfig) -> SuiteReport {
    let time = cfg.time_grid();
    let grid = cfg.spatial_grid();
    let b_base = Arc::new(project_scaled(
        band_limited_random(time.clone(), grid.clone(), cfg.seed, 0.3, 4),
        0.25 * cfg.k_radius,
    ));
    let h_dir = band_limited_random(time.clone(), grid.clone(), cfg.seed + 1, 0.3, 4);

    let mut probes = Vec::new();
    let frechet = frechet_probe(cfg, &b_base, &h_dir, &[0.2, 0.1, 0.05]);
    probes.push(unwrap_probe("frechet", frechet));
    let lipschitz = lipschitz_probe(cfg, &b_base, &h_dir, &[0.2, 0.1, 0.05, 0.025]);
    probes.push(unwrap_probe("lipschitz", lipschitz));
    let duality = duality_probe(cfg, &b_base, &TargetDistribution::Zero, 4);
    probes.push(unwrap_probe("duality", duality));
    let conservation = conservation_probe(cfg, &b_base);
    probes.push(unwrap_probe("conservation", conservation));

    let passed = probes.iter().all(|p| p.passed);
    SuiteReport { probes, passed }
}

fn project_scaled(b: ControlField, target_norm: f64) -> ControlField {
    let n = v_norm(&b);
    if n == 0.0 {
        b
    } else {
        b.scaled(target_norm / n)
    }
}

fn unwrap_probe(name: &str, r: Result<ProbeReport>) -> ProbeReport {
    match r {
        Ok(p) => p,
        Err(e) => ProbeReport {
            name: name.into(),
            anchor: "probe execution".into(),
            samples: Vec::new(),
            fitted_exponent: None,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}
