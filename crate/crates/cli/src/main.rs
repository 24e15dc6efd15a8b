//! Command-line driver: forward runs, optimization, gradient checks, the
//! verification suite and plot exports.  All file formats are CSV unless
//! the binary flag is set; every run is reproducible from the config file
//! and the seed.

use clap::{Parser, Subcommand, ValueEnum};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use vpc_core::export;
use vpc_core::forward::solve_vp;
use vpc_core::optimizer::{minimize, optimality_residual, variational_inequality_check, OptStatus};
use vpc_core::phase::field::{band_limited_random, v_norm, ControlField};
use vpc_core::tangent::{StateEvaluator, TargetDistribution};
use vpc_core::verify;
use vpc_core::{parse_config, RunConfig};

#[derive(Parser)]
#[command(name = "vpc", about = "Vlasov-Poisson plasma control toolkit")]
struct Cli {
    /// Configuration file (key=value per line; missing keys use defaults)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (created if absent)
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Seed override
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Field snapshot format
    #[arg(long, global = true, value_enum, default_value_t = FieldFormat::Csv)]
    format: FieldFormat,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FieldFormat {
    Csv,
    Bin,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the forward system with a seeded admissible control
    Forward,
    /// Projected-gradient minimization toward a twin target
    Optimize,
    /// Differentiability and duality probes
    Gradcheck,
    /// Full verification suite
    Verify,
    /// Per-time-node midplane slices of density and control magnitude
    ExportPlot,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Box<dyn std::error::Error>> {
    let mut cfg = match &cli.config {
        Some(path) => parse_config(&std::fs::read_to_string(path)?)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// Seeded admissible control used by the forward/plot commands.
fn seeded_control(cfg: &RunConfig) -> Arc<ControlField> {
    let raw = band_limited_random(cfg.time_grid(), cfg.spatial_grid(), cfg.seed, 0.3, 4);
    let n = v_norm(&raw);
    let target = 0.5 * cfg.k_radius;
    Arc::new(if n > 0.0 { raw.scaled(target / n) } else { raw })
}

fn write_field(path_base: &Path, field: &ControlField, format: FieldFormat) -> vpc_core::Result<()> {
    match format {
        FieldFormat::Csv => export::write_field_csv(&path_base.with_extension("csv"), field),
        FieldFormat::Bin => export::write_field_bin(&path_base.with_extension("bin"), field),
    }
}

fn run(cli: &Cli) -> Result<ExitCode, Box<dyn std::error::Error>> {
    let cfg = load_config(cli)?;
    std::fs::create_dir_all(&cli.out)?;
    match cli.command {
        Command::Forward => {
            let datum = cfg.datum();
            let b = seeded_control(&cfg);
            if v_norm(&b) > cfg.k_radius {
                eprintln!("warning: control exceeds the admissible radius");
            }
            let traj = solve_vp(&datum, &b, &cfg)?;
            if let Some(norm) = traj.norm_exceeded {
                eprintln!("warning: control norm {norm:.3e} exceeds K = {:.3e}", cfg.k_radius);
            }
            export::write_trajectory_csv(&cli.out.join("trajectory.csv"), &traj)?;
            export::write_diagnostics_csv(&cli.out.join("diagnostics.csv"), &traj)?;
            println!(
                "forward: {} markers, {} nodes, support {:.3} (certified {:.3})",
                traj.snapshots[0].len(),
                traj.time.n_nodes(),
                traj.max_radius,
                traj.zeta_bound()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Optimize => {
            // twin target: terminal state of a seeded admissible control
            let datum = cfg.datum();
            let b_star = seeded_control(&cfg);
            let fwd_star = solve_vp(&datum, &b_star, &cfg)?;
            let ev_star = StateEvaluator::new(&fwd_star, &b_star, datum)?;
            let target = TargetDistribution::FlowState(Arc::new(ev_star));

            let res = minimize(&cfg, &target, None)?;
            export::write_trace_csv(&cli.out.join("trace.csv"), &res.trace)?;
            write_field(&cli.out.join("control"), &res.b_final, cli.format)?;

            let vi = variational_inequality_check(&res.b_final, &res.gradient, &cfg, 8)?;
            let residual_line = if cfg.lambda > 0.0 && !vi.boundary {
                let or = optimality_residual(&res.b_final, &res.fwd, &res.costate, cfg.lambda, &res.disc)?;
                format!(
                    "convolution residual {:.3e}, differential residual {:.3e}",
                    or.convolution_rel, or.laplacian_rel
                )
            } else {
                "boundary point or lambda = 0: representation residual skipped".into()
            };
            std::fs::write(
                cli.out.join("residuals.txt"),
                format!(
                    "status: {:?}\nmin admissible pairing: {:.3e}\nmax unit pairing: {:.3e}\n{}\n",
                    res.trace.status, vi.min_pairing, vi.max_unit_pairing, residual_line
                ),
            )?;
            println!(
                "optimize: {:?} after {} iterations, J = {:.6e} (tracking {:.3e})",
                res.trace.status,
                res.trace.rows.len(),
                res.report.j,
                res.report.tracking
            );
            Ok(if res.trace.status == OptStatus::Stalled {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            })
        }
        Command::Gradcheck => {
            let b = seeded_control(&cfg);
            let h = band_limited_random(cfg.time_grid(), cfg.spatial_grid(), cfg.seed + 1, 0.3, 4);
            let frechet = verify::frechet_probe(&cfg, &b, &h, &[0.2, 0.1, 0.05])?;
            let duality = verify::duality_probe(&cfg, &b, &TargetDistribution::Zero, 6)?;
            let suite = verify::SuiteReport {
                passed: frechet.passed && duality.passed,
                probes: vec![frechet, duality],
            };
            print!("{}", suite.to_text());
            export::write_suite_csv(&cli.out.join("gradcheck.csv"), &suite)?;
            Ok(if suite.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(3)
            })
        }
        Command::Verify => {
            let suite = verify::run_all(&cfg);
            print!("{}", suite.to_text());
            export::write_suite_csv(&cli.out.join("verify.csv"), &suite)?;
            std::fs::write(cli.out.join("verify.txt"), suite.to_text())?;
            Ok(if suite.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(3)
            })
        }
        Command::ExportPlot => {
            let datum = cfg.datum();
            let b = seeded_control(&cfg);
            let traj = solve_vp(&datum, &b, &cfg)?;
            export::write_plot_slices(&cli.out, &traj, &b)?;
            println!("plot slices written to {}", cli.out.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}
