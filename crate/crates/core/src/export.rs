//! File output: trajectory CSVs, optimization traces, field snapshots
//! (CSV or little-endian binary), probe reports and plot slices.
//! Every CSV starts with a header row naming its columns; all quantities
//! are dimensionless.

use crate::forward::ForwardTrajectory;
use crate::optimizer::OptimizationTrace;
use crate::phase::field::ControlField;
use crate::phase::grids::{SpatialGrid, TimeGrid};
use crate::phase::vec3::Vec3;
use crate::verify::SuiteReport;
use crate::{Error, Result};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

/// Marker snapshots: one row per (time node, marker).
pub fn write_trajectory_csv(path: &Path, traj: &ForwardTrajectory) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "t,marker_id,x1,x2,x3,v1,v2,v3,f,w")?;
    for (k, ens) in traj.snapshots.iter().enumerate() {
        let t = traj.time.node(k);
        for i in 0..ens.len() {
            let (p, v) = (ens.pos[i], ens.vel[i]);
            writeln!(
                w,
                "{t},{i},{},{},{},{},{},{},{},{}",
                p.x, p.y, p.z, v.x, v.y, v.z, ens.f[i], ens.w[i]
            )?;
        }
    }
    Ok(())
}

/// Per-node diagnostics of a forward run.
pub fn write_diagnostics_csv(path: &Path, traj: &ForwardTrajectory) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "t,l1_norm,l2_norm,linf_norm,support_radius,field_energy,accel_sup"
    )?;
    for d in &traj.diagnostics {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            d.t, d.l1, d.l2, d.linf, d.support_radius, d.field_energy, d.accel_sup
        )?;
    }
    Ok(())
}

/// Optimization trace: one row per iteration.
pub fn write_trace_csv(path: &Path, trace: &OptimizationTrace) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "iteration,j,tracking,regularization,grad_pairing,step,v_norm,projection_active"
    )?;
    for r in &trace.rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.iteration,
            r.j,
            r.tracking,
            r.regularization,
            r.grad_pairing,
            r.step,
            r.v_norm,
            r.projection_active as u8
        )?;
    }
    Ok(())
}

/// Probe suite summary.
pub fn write_suite_csv(path: &Path, suite: &SuiteReport) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "probe,claim,passed,fitted_exponent,detail")?;
    for p in &suite.probes {
        writeln!(
            w,
            "{},{},{},{},\"{}\"",
            p.name,
            p.anchor,
            p.passed as u8,
            p.fitted_exponent.map_or(String::from(""), |e| e.to_string()),
            p.detail.replace('"', "'")
        )?;
    }
    Ok(())
}

/// Field snapshot as CSV: header comment carries the grid layout, then one
/// row per (time node, grid node) in node order.
pub fn write_field_csv(path: &Path, field: &ControlField) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(
        w,
        "# grid_n={} grid_l={} n_steps={} dt={}",
        field.grid.n, field.grid.l, field.time.n_steps, field.time.dt
    )?;
    writeln!(w, "time_node,grid_node,b1,b2,b3")?;
    for k in 0..field.time.n_nodes() {
        for (idx, b) in field.slice(k).iter().enumerate() {
            writeln!(w, "{k},{idx},{},{},{}", b.x, b.y, b.z)?;
        }
    }
    Ok(())
}

pub fn read_field_csv(path: &Path) -> Result<ControlField> {
    let r = BufReader::new(File::open(path)?);
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| bad_file("empty field file"))??;
    let layout = parse_layout(&header)?;
    let mut field = ControlField::zeros(layout.0, layout.1);
    let _columns = lines.next().ok_or_else(|| bad_file("missing column row"))??;
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 5 {
            return Err(bad_file("field row needs 5 columns"));
        }
        let k: usize = parts[0].parse().map_err(|_| bad_file("bad time node"))?;
        let idx: usize = parts[1].parse().map_err(|_| bad_file("bad grid node"))?;
        let b = Vec3::new(
            parts[2].parse().map_err(|_| bad_file("bad b1"))?,
            parts[3].parse().map_err(|_| bad_file("bad b2"))?,
            parts[4].parse().map_err(|_| bad_file("bad b3"))?,
        );
        field.slice_mut(k)[idx] = b;
    }
    Ok(field)
}

const FIELD_MAGIC: &[u8; 8] = b"VPCFLD01";

/// Field snapshot, little-endian binary: magic, `u32` grid nodes per axis,
/// `u32` time steps, `f64` half-width, `f64` dt, then node-ordered triples.
pub fn write_field_bin(path: &Path, field: &ControlField) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(FIELD_MAGIC)?;
    w.write_all(&(field.grid.n as u32).to_le_bytes())?;
    w.write_all(&(field.time.n_steps as u32).to_le_bytes())?;
    w.write_all(&field.grid.l.to_le_bytes())?;
    w.write_all(&field.time.dt.to_le_bytes())?;
    for b in &field.vals {
        w.write_all(&b.x.to_le_bytes())?;
        w.write_all(&b.y.to_le_bytes())?;
        w.write_all(&b.z.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_field_bin(path: &Path) -> Result<ControlField> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != FIELD_MAGIC {
        return Err(bad_file("not a field snapshot"));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let n = u32::from_le_bytes(u32buf) as usize;
    r.read_exact(&mut u32buf)?;
    let n_steps = u32::from_le_bytes(u32buf) as usize;
    let mut f64buf = [0u8; 8];
    r.read_exact(&mut f64buf)?;
    let l = f64::from_le_bytes(f64buf);
    r.read_exact(&mut f64buf)?;
    let dt = f64::from_le_bytes(f64buf);
    let grid = SpatialGrid::new(l, n)?;
    let time = TimeGrid::new(dt * n_steps as f64, n_steps);
    let mut field = ControlField::zeros(time, grid);
    for b in &mut field.vals {
        let mut comp = [0.0f64; 3];
        for c in &mut comp {
            r.read_exact(&mut f64buf)?;
            *c = f64::from_le_bytes(f64buf);
        }
        *b = Vec3::new(comp[0], comp[1], comp[2]);
    }
    Ok(field)
}

fn parse_layout(header: &str) -> Result<(TimeGrid, SpatialGrid)> {
    let mut n = None;
    let mut l = None;
    let mut n_steps = None;
    let mut dt = None;
    for tok in header.trim_start_matches('#').split_whitespace() {
        if let Some((k, v)) = tok.split_once('=') {
            match k {
                "grid_n" => n = v.parse::<usize>().ok(),
                "grid_l" => l = v.parse::<f64>().ok(),
                "n_steps" => n_steps = v.parse::<usize>().ok(),
                "dt" => dt = v.parse::<f64>().ok(),
                _ => {}
            }
        }
    }
    match (n, l, n_steps, dt) {
        (Some(n), Some(l), Some(n_steps), Some(dt)) => Ok((
            TimeGrid::new(dt * n_steps as f64, n_steps),
            SpatialGrid::new(l, n)?,
        )),
        _ => Err(bad_file("field header lacks layout keys")),
    }
}

fn bad_file(msg: &str) -> Error {
    Error::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, msg))
}

/// Midplane slices for external plotting: per time node, the spatial
/// density (velocity-integrated, deposited on the grid) and the control
/// magnitude on the `x3 = 0` plane.
pub fn write_plot_slices(
    dir: &Path,
    traj: &ForwardTrajectory,
    b_field: &ControlField,
) -> Result<()> {
    let grid = &b_field.grid;
    let mid = grid.n / 2;
    for (k, ens) in traj.snapshots.iter().enumerate() {
        // velocity-integrated density by tent-weighted deposit
        let mut rho = vec![0.0f64; grid.n_nodes()];
        let inv_vol = 1.0 / grid.cell_volume();
        for i in 0..ens.len() {
            if let Some((base, frac)) = grid.stencil(ens.pos[i]) {
                let q = ens.w[i] * ens.f[i] * inv_vol;
                for corner in 0..8usize {
                    let mut wgt = q;
                    let mut idx = [0usize; 3];
                    for d in 0..3 {
                        let up = (corner >> d) & 1;
                        idx[d] = base[d] + up;
                        wgt *= if up == 1 { frac[d] } else { 1.0 - frac[d] };
                    }
                    rho[grid.index(idx[0], idx[1], idx[2])] += wgt;
                }
            }
        }
        let path = dir.join(format!("slice_{k:04}.csv"));
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "x1,x2,density,control_magnitude")?;
        let slice = b_field.slice(k);
        for i in 0..grid.n {
            for j in 0..grid.n {
                let idx = grid.index(i, j, mid);
                writeln!(
                    w,
                    "{},{},{},{}",
                    grid.coord(i),
                    grid.coord(j),
                    rho[idx],
                    slice[idx].norm()
                )?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase::field::band_limited_random;

    fn tmpdir() -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("vpc-export-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn field_roundtrip_csv_and_bin() {
        let time = TimeGrid::new(0.2, 4);
        let grid = SpatialGrid::new(1.5, 5).unwrap();
        let field = band_limited_random(time, grid, 9, 0.7, 4);
        let dir = tmpdir();

        let csv_path = dir.join("field.csv");
        write_field_csv(&csv_path, &field).unwrap();
        let back = read_field_csv(&csv_path).unwrap();
        assert_eq!(field.grid.n, back.grid.n);
        for (a, b) in field.vals.iter().zip(&back.vals) {
            assert!((*a - *b).norm() < 1e-12);
        }

        let bin_path = dir.join("field.bin");
        write_field_bin(&bin_path, &field).unwrap();
        let back2 = read_field_bin(&bin_path).unwrap();
        // binary is bit-exact
        for (a, b) in field.vals.iter().zip(&back2.vals) {
            assert_eq!(*a, *b);
        }
    }

    #[test]
    fn csv_headers_name_columns() {
        let time = TimeGrid::new(0.1, 2);
        let grid = SpatialGrid::new(1.0, 4).unwrap();
        let field = ControlField::zeros(time, grid);
        let dir = tmpdir();
        let p = dir.join("f2.csv");
        write_field_csv(&p, &field).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("# grid_n="));
        assert_eq!(lines.next().unwrap(), "time_node,grid_node,b1,b2,b3");
    }
}
