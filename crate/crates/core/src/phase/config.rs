//! Run configuration: one flat key=value file drives every solver.

use crate::phase::datum::InitialDatum;
use crate::phase::grids::{SpatialGrid, TimeGrid};
use crate::{Error, Result};

/// All tunable parameters of a run.  Field names double as configuration
/// file keys; unknown keys in a file are a hard error.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Final time `T > 0`.
    pub t_final: f64,
    /// Regularization weight `lambda >= 0`; the convolution representation
    /// of the optimal control needs `lambda > 0`.
    pub lambda: f64,
    /// Radius of the admissible-field ball, `K > 0`.
    pub k_radius: f64,
    /// Hoelder exponent surrogate used by probe reports, in `(0, 1)`.
    pub gamma: f64,
    /// Mollification length of the Coulomb kernel; `0` resolves to the
    /// spatial grid spacing.
    pub eps_kernel: f64,
    /// Requested time step (the time grid rounds it to divide `T` exactly).
    pub dt: f64,
    /// Requested marker count (the sampling lattice may exceed it).
    pub n_particles: usize,
    /// Half-width of the field grid cube.
    pub grid_l: f64,
    /// Nodes per axis of the field grid.
    pub grid_n: usize,
    /// Nodes per axis of the 6D solution lattice used by the linear solver.
    pub lattice_n: usize,
    /// Amplitude of the cubic-bump initial datum.
    pub datum_amplitude: f64,
    /// Support radius of the initial datum.
    pub datum_radius: f64,
    /// Optional marker jitter in units of the sampling spacing (0 = off).
    pub marker_jitter: f64,
    /// Picard stopping tolerance (sup-norm change between iterates).
    pub picard_tol: f64,
    /// Picard iteration cap.
    pub picard_max_iter: usize,
    /// Projected-gradient iteration cap.
    pub opt_max_iter: usize,
    /// Stationarity tolerance on the dual pairing of the gradient.
    pub opt_grad_tol: f64,
    /// Initial line-search step.
    pub opt_step_init: f64,
    /// Sufficient-decrease parameter of the backtracking line search.
    pub opt_armijo: f64,
    /// Backtracking cap per iteration.
    pub opt_max_backtracks: usize,
    /// Threshold on `T / lambda` below which the uniqueness experiment
    /// treats the regime as contractive.
    pub uniq_t_over_lambda: f64,
    /// RNG seed for panels, random fields and optional jitter.
    pub seed: u64,
    /// Conservation probe: allowed relative drift of the `L^p` norms.
    pub tol_conservation_drift: f64,
    /// Differentiability probe: allowed final remainder relative to the
    /// tangent solution norm.
    pub tol_frechet: f64,
    /// Duality probe: allowed relative gap between gradient pairings and
    /// tangent-path directional derivatives.
    pub tol_duality: f64,
    /// Lipschitz probe: allowed max/min spread of difference ratios.
    pub tol_lipschitz_spread: f64,
    /// Trajectory cache budget for the linear solver, in MiB.
    pub traj_cache_mb: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            t_final: 0.3,
            lambda: 1e-3,
            k_radius: 4.0,
            gamma: 0.5,
            eps_kernel: 0.0,
            dt: 0.006,
            n_particles: 20_000,
            grid_l: 3.0,
            grid_n: 16,
            lattice_n: 9,
            datum_amplitude: 1.0,
            datum_radius: 1.0,
            marker_jitter: 0.0,
            picard_tol: 1e-8,
            picard_max_iter: 30,
            opt_max_iter: 50,
            opt_grad_tol: 1e-7,
            opt_step_init: 1.0,
            opt_armijo: 1e-4,
            opt_max_backtracks: 40,
            uniq_t_over_lambda: 0.1,
            seed: 42,
            tol_conservation_drift: 0.01,
            tol_frechet: 0.05,
            tol_duality: 1e-2,
            tol_lipschitz_spread: 3.0,
            traj_cache_mb: 512,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(msg.into()));
        if !(self.t_final > 0.0) {
            return bad("t_final must be > 0");
        }
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return bad("lambda must be >= 0");
        }
        if !(self.k_radius > 0.0) {
            return bad("k_radius must be > 0");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if self.eps_kernel < 0.0 {
            return bad("eps_kernel must be >= 0 (0 = use grid spacing)");
        }
        if !(self.dt > 0.0) {
            return bad("dt must be > 0");
        }
        if self.n_particles < 1 {
            return bad("n_particles must be >= 1");
        }
        if !(self.grid_l > 0.0) || self.grid_n < 2 {
            return bad("grid requires grid_l > 0 and grid_n >= 2");
        }
        if self.lattice_n < 5 {
            return bad("lattice_n must be >= 5");
        }
        if !(self.datum_radius > 0.0) || self.datum_amplitude < 0.0 {
            return bad("datum requires radius > 0 and amplitude >= 0");
        }
        if !(self.picard_tol > 0.0) || self.picard_max_iter == 0 {
            return bad("picard_tol must be > 0 and picard_max_iter >= 1");
        }
        if !(self.opt_step_init > 0.0) || !(self.opt_armijo > 0.0 && self.opt_armijo < 1.0) {
            return bad("optimizer requires opt_step_init > 0 and opt_armijo in (0,1)");
        }
        Ok(())
    }

    pub fn time_grid(&self) -> TimeGrid {
        TimeGrid::from_dt(self.t_final, self.dt).expect("validated config")
    }

    pub fn spatial_grid(&self) -> SpatialGrid {
        SpatialGrid::new(self.grid_l, self.grid_n).expect("validated config")
    }

    pub fn datum(&self) -> InitialDatum {
        InitialDatum::new(self.datum_amplitude, self.datum_radius).expect("validated config")
    }

    /// Mollification length actually used: the configured value, or the
    /// grid spacing when the config says `0`.
    pub fn eps_resolved(&self) -> f64 {
        if self.eps_kernel > 0.0 {
            self.eps_kernel
        } else {
            self.spatial_grid().h
        }
    }
}

macro_rules! config_keys {
    ($($key:ident : $kind:ident),* $(,)?) => {
        /// Parses the strict key=value format.  Blank lines and `#` comments
        /// are allowed; unknown keys, duplicate keys and unparsable values
        /// are errors naming the line.
        pub fn parse_config(text: &str) -> Result<RunConfig> {
            let mut cfg = RunConfig::default();
            let mut seen: Vec<&str> = Vec::new();
            for (lineno, raw) in text.lines().enumerate() {
                let line = raw.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
                    line: lineno + 1,
                    msg: format!("expected key=value, got {line:?}"),
                })?;
                let key = key.trim();
                let value = value.trim();
                if seen.contains(&key) {
                    return Err(Error::Config {
                        line: lineno + 1,
                        msg: format!("duplicate key {key:?}"),
                    });
                }
                match key {
                    $(stringify!($key) => {
                        cfg.$key = value.parse().map_err(|_| Error::Config {
                            line: lineno + 1,
                            msg: format!("cannot parse value {value:?} for key {key:?}"),
                        })?;
                    })*
                    _ => {
                        return Err(Error::Config {
                            line: lineno + 1,
                            msg: format!("unknown key {key:?}"),
                        })
                    }
                }
                // the match above only falls through for known keys
                if let Some(slot) = known_key(key) {
                    seen.push(slot);
                }
            }
            cfg.validate().map_err(|e| Error::Config {
                line: 0,
                msg: e.to_string(),
            })?;
            Ok(cfg)
        }

        fn known_key(key: &str) -> Option<&'static str> {
            match key {
                $(stringify!($key) => Some(stringify!($key)),)*
                _ => None,
            }
        }

        /// Writes every key in declaration order; `parse_config` of the
        /// output reproduces the config exactly.
        pub fn serialize_config(cfg: &RunConfig) -> String {
            let mut out = String::new();
            $(out.push_str(&format!("{}={}\n", stringify!($key), cfg.$key));)*
            out
        }
    };
}

config_keys! {
    t_final: f64,
    lambda: f64,
    k_radius: f64,
    gamma: f64,
    eps_kernel: f64,
    dt: f64,
    n_particles: usize,
    grid_l: f64,
    grid_n: usize,
    lattice_n: usize,
    datum_amplitude: f64,
    datum_radius: f64,
    marker_jitter: f64,
    picard_tol: f64,
    picard_max_iter: usize,
    opt_max_iter: usize,
    opt_grad_tol: f64,
    opt_step_init: f64,
    opt_armijo: f64,
    opt_max_backtracks: usize,
    uniq_t_over_lambda: f64,
    seed: u64,
    tol_conservation_drift: f64,
    tol_frechet: f64,
    tol_duality: f64,
    tol_lipschitz_spread: f64,
    traj_cache_mb: usize,
}
