//! Independent oracle for the linear solver: dense space-time collocation
//! (implicit Euler in time, central differences in phase space, nonlocal
//! fields assembled directly from their defining kernel sums), solved with
//! a dense LU per step.  Compares against the Picard solver on a tiny
//! instance with every coefficient switched on.

use nalgebra::{DMatrix, DVector};
use std::sync::Arc;
use vpc_core::characteristics::FieldEval;
use vpc_core::kernel::MollifiedKernel;
use vpc_core::lattice::{Lattice6, LatticeSeries};
use vpc_core::linear::{solve_linear, walk_paths, Cutoff, Datum, LinearVlasovProblem, Orientation};
use vpc_core::phase::grids::{SpatialGrid, TimeGrid};
use vpc_core::phase::vec3::{Phase6, Vec3};
use vpc_core::InitialDatum;

const EPS: f64 = 0.35;
const A_CONST: Vec3 = Vec3 { x: 0.1, y: 0.0, z: -0.05 };
const B_CONST: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.3 };

fn bump(z: Phase6) -> f64 {
    let u = 1.0 - z.norm_sq();
    if u <= 0.0 {
        0.0
    } else {
        u * u * u
    }
}

/// coefficient of the nonlocal coupling and its analytic v-gradient
fn a_coeff(z: Phase6) -> f64 {
    0.6 * bump(z)
}

fn a_coeff_dv(z: Phase6) -> Vec3 {
    let u = 1.0 - z.norm_sq();
    if u <= 0.0 {
        Vec3::ZERO
    } else {
        z.v * (-6.0 * 0.6 * u * u)
    }
}

fn c_coeff(z: Phase6) -> Vec3 {
    let u = (1.0 - z.norm_sq()).max(0.0);
    Vec3::new(0.3, -0.2, 0.5) * (0.4 * u * u)
}

fn b_source(t: f64, z: Phase6) -> f64 {
    let u = (1.0 - z.norm_sq()).max(0.0);
    0.3 * (1.0 + t) * u * u
}

/// Returns `(sup |picard - oracle|, sup |oracle|)` over all nodes and steps.
pub fn run() -> (f64, f64) {
    // instance: 485 active nodes (3-5 per axis inside the unit ball),
    // 4 time steps
    let lattice = Lattice6::new(1.0, 7).unwrap();
    assert!(lattice.n_active() <= 729, "instance exceeds the node budget");
    let time = TimeGrid::new(0.15, 4);
    let grid = SpatialGrid::new(2.0, 12).unwrap();
    let kernel = MollifiedKernel::new(EPS).unwrap();
    let datum = InitialDatum::new(1.0, 1.0).unwrap();
    let a_norm = A_CONST.norm() * time.t_final.sqrt();
    let chi = {
        let r1 = vpc_core::characteristics::zeta(1.0, time.t_final, a_norm);
        Cutoff::new(r1, 2.0 * r1).unwrap()
    };

    // --- Picard solver ---
    let a_field = FieldEval::Constant(A_CONST);
    let b_field = FieldEval::Constant(B_CONST);
    let paths = walk_paths(&a_field, &b_field, &time, &lattice);
    let a_series = LatticeSeries {
        lattice: Arc::clone(&lattice),
        per_node: (0..time.n_nodes())
            .map(|_| lattice.active_pos.iter().map(|&z| a_coeff(z)).collect())
            .collect(),
    };
    let stride = paths.stride();
    let c_paths: Vec<Vec3> = (0..lattice.n_active() * stride * stride)
        .map(|flat| {
            let anchor = flat / stride;
            let m = flat % stride;
            c_coeff(paths.point(anchor, m))
        })
        .collect();
    let p = LinearVlasovProblem {
        orientation: Orientation::Initial,
        time: time.clone(),
        grid: grid.clone(),
        kernel,
        lattice: Arc::clone(&lattice),
        a_field,
        b_field,
        chi: Some(chi),
        a_values: Some(&a_series),
        c_paths: Some(&c_paths),
        b_paths: None,
        b_closure: Some(Arc::new(move |m, z| b_source(m as f64 * 0.0375, z))),
        datum: Datum::Closure(Arc::new(move |z| datum.eval(z))),
        r_support: 1.0,
    };
    let picard = solve_linear(&p, Some(&paths), 1e-11, 30).unwrap();

    // --- collocation oracle ---
    let na = lattice.n_active();
    let h = lattice.h;
    let vol6 = lattice.cell_volume();
    let dt = time.dt;

    // nonlocal coupling matrix from the defining sums:
    //   row i gains  C(z_i) . sum_j vol f_j gradK(x_i - x_j)
    //              + chi(z_i) sum_j vol f_j [-(x_i-x_j).dva(z_j) k3(x_i-x_j)]
    let mut nonlocal = DMatrix::<f64>::zeros(na, na);
    for i in 0..na {
        let zi = lattice.active_pos[i];
        let ci = c_coeff(zi);
        let chi_i = chi.eval(zi);
        for j in 0..na {
            let zj = lattice.active_pos[j];
            let d = zi.x - zj.x;
            let inv = 1.0 / (d.norm_sq() + EPS * EPS);
            let k3 = inv * inv.sqrt();
            let grad_k = d * (-k3);
            let mut entry = ci.dot(grad_k) * vol6;
            entry += chi_i * vol6 * (-(d.dot(a_coeff_dv(zj))) * k3);
            nonlocal[(i, j)] = entry;
        }
    }

    // transport matrix: central differences over active neighbors, zero
    // extension outside the active set
    let mut transport = DMatrix::<f64>::zeros(na, na);
    {
        // neighbor lookup via positions: build an index from rounded coords
        use std::collections::HashMap;
        let mut index: HashMap<[i64; 6], usize> = HashMap::new();
        let key = |z: Phase6| -> [i64; 6] {
            let mut k = [0i64; 6];
            for d in 0..6 {
                k[d] = (z.comp(d) / h).round() as i64;
            }
            k
        };
        for (slot, &z) in lattice.active_pos.iter().enumerate() {
            index.insert(key(z), slot);
        }
        for i in 0..na {
            let zi = lattice.active_pos[i];
            let vel = zi.v;
            let acc = A_CONST + vel.cross(B_CONST);
            for d in 0..6 {
                let coef = if d < 3 { vel.comp(d) } else { acc.comp(d - 3) };
                if coef == 0.0 {
                    continue;
                }
                for (sign, shift) in [(1.0, 1i64), (-1.0, -1i64)] {
                    let mut k = key(zi);
                    k[d] += shift;
                    if let Some(&nb) = index.get(&k) {
                        transport[(i, nb)] += sign * coef / (2.0 * h);
                    }
                }
            }
        }
    }

    // (I/dt + transport - nonlocal) f^{k+1} = f^k/dt + b^{k+1}
    let mut system = DMatrix::<f64>::identity(na, na) / dt;
    system += &transport;
    system -= &nonlocal;
    let lu = system.lu();

    let mut oracle: Vec<DVector<f64>> = Vec::with_capacity(time.n_nodes());
    let f0 = DVector::from_iterator(na, lattice.active_pos.iter().map(|&z| datum.eval(z)));
    oracle.push(f0);
    for k in 1..time.n_nodes() {
        let t_k = time.node(k);
        let mut rhs = &oracle[k - 1] / dt;
        for i in 0..na {
            rhs[i] += b_source(t_k, lattice.active_pos[i]);
        }
        oracle.push(lu.solve(&rhs).expect("collocation system is regular"));
    }

    let mut sup_diff = 0.0f64;
    let mut sup_ref = 0.0f64;
    for k in 0..time.n_nodes() {
        for j in 0..na {
            sup_diff = sup_diff.max((picard.series.per_node[k][j] - oracle[k][j]).abs());
            sup_ref = sup_ref.max(oracle[k][j].abs());
        }
    }
    (sup_diff, sup_ref)
}
