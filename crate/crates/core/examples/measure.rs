// fixture tuning: frechet + duality measurements
use std::sync::Arc;
use std::time::Instant;
use vpc_core::cost::{directional_derivative_tangent, gradient, pairing};
use vpc_core::forward::solve_vp;
use vpc_core::phase::field::{band_limited_random, v_norm, ControlField};
use vpc_core::tangent::*;
use vpc_core::RunConfig;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lattice_n: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(7);
    let n_steps: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(10);
    let markers: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let amp: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1.0);

    let cfg = RunConfig {
        t_final: 0.3,
        dt: 0.3 / n_steps as f64,
        grid_l: 2.5,
        grid_n: 16,
        eps_kernel: 0.3,
        n_particles: markers,
        lattice_n,
        datum_amplitude: amp,
        lambda: 1e-3,
        k_radius: 4.0,
        picard_tol: 1e-9,
        ..RunConfig::default()
    };
    let datum = cfg.datum();
    let t0 = Instant::now();

    // base control and direction
    let b = {
        let raw = band_limited_random(cfg.time_grid(), cfg.spatial_grid(), 11, 0.3, 4);
        let n = v_norm(&raw);
        Arc::new(raw.scaled(0.8 / n))
    };
    let h = {
        let raw = band_limited_random(cfg.time_grid(), cfg.spatial_grid(), 23, 0.3, 4);
        let n = v_norm(&raw);
        raw.scaled(2.0 / n)
    };

    let fwd = solve_vp(&datum, &b, &cfg).unwrap();
    println!("fwd: {:.1}s, markers {}, support {:.3}, a_norm {:.3}", t0.elapsed().as_secs_f64(), fwd.snapshots[0].len(), fwd.max_radius, fwd.a_norm);

    let disc = Discretization::new(&cfg, fwd.time.clone(), 1.03 * fwd.max_radius).unwrap();
    println!("lattice: n={} h={:.3} active={} (cube hw {:.3})", cfg.lattice_n, disc.lattice.h, disc.lattice.n_active(), disc.lattice.half_width);

    let t1 = Instant::now();
    let ws = TangentWorkspace::new(&fwd, Arc::clone(&b), datum, disc.clone(), 1024).unwrap();
    println!("workspace: {:.1}s", t1.elapsed().as_secs_f64());

    let t2 = Instant::now();
    let tan = tangent(&ws, &h).unwrap();
    println!("tangent: {:.1}s, {} picard iters, log {:?}", t2.elapsed().as_secs_f64(), tan.iterations, tan.log);

    // frechet: R(h)
    let lat = &disc.lattice;
    let t_final = cfg.t_final;
    let base_vals: Vec<f64> = lat.active_pos.iter().map(|&z| ws.state.value(t_final, z)).collect();
    let f_prime_t = &tan.series.per_node[disc.time.n_steps];
    let tan_norm = lat.l2_norm(f_prime_t);
    println!("|f'(T)| = {tan_norm:.4e}");
    for hh in [0.2, 0.1, 0.05] {
        let bp = Arc::new(ControlField::lin_comb(&b, 1.0, &h, hh).unwrap());
        let fwd_p = solve_vp(&datum, &bp, &cfg).unwrap();
        let ev_p = StateEvaluator::new(&fwd_p, &bp, datum).unwrap();
        let diff: Vec<f64> = (0..lat.n_active())
            .map(|j| ev_p.value(t_final, lat.active_pos[j]) - base_vals[j] - hh * f_prime_t[j])
            .collect();
        let r = lat.l2_norm(&diff) / hh;
        println!("  R({hh}) = {r:.4e}  ({:.2}% of |f'|)", 100.0 * r / tan_norm);
    }

    // duality with a zero target
    let t3 = Instant::now();
    let target = TargetDistribution::Analytic(vpc_core::InitialDatum::new(0.5 * amp, 0.9).unwrap());
    let cs = costate(&fwd, &b, datum, &target, &disc, Some(&ws.paths)).unwrap();
    println!("costate: {:.1}s, {} iters", t3.elapsed().as_secs_f64(), cs.sol.iterations);
    let g = gradient(&b, &fwd, &cs, cfg.lambda, &disc).unwrap();
    for i in 0..3u64 {
        let hh = band_limited_random(cfg.time_grid(), cfg.spatial_grid(), 300 + i, 0.5, 4);
        let d_adj = pairing(&g, &hh).unwrap();
        let tt = Instant::now();
        let tn = tangent(&ws, &hh).unwrap();
        let d_tan = directional_derivative_tangent(&b, &hh, &ws.state, &target, &tn, cfg.lambda, &disc).unwrap();
        let scale = d_adj.abs().max(d_tan.abs()).max(1e-8);
        println!("  dir {i}: adj {d_adj:.5e} tan {d_tan:.5e} gap {:.3e} ({:.1}s)", (d_adj - d_tan).abs() / scale, tt.elapsed().as_secs_f64());
    }
    println!("total {:.1}s", t0.elapsed().as_secs_f64());
}
