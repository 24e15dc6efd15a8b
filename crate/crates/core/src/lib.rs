//! Optimal control of a collisionless plasma by an external magnetic field.
//!
//! The library solves the 3D3V Vlasov--Poisson system for a distribution
//! function driven by its self-consistent electric field and a prescribed
//! magnetic control field, and minimizes a terminal tracking functional
//! over a norm ball of admissible controls.  The pieces:
//!
//! * [`phase`] -- grids, marker ensembles, control fields, configuration.
//! * [`kernel`] -- mollified Coulomb kernel sums (potential, forces, the
//!   nonlocal linearization fields, the convolution form of the optimal
//!   control).
//! * [`characteristics`] -- the phase-space flow map and its certified
//!   support-growth bound.
//! * [`forward`] -- the nonlinear forward solver (markers pushed through
//!   their own field).
//! * [`linear`] -- a general inhomogeneous linear Vlasov solver: Picard
//!   iteration on the characteristic representation formula, on a fixed
//!   6D lattice, in initial- or final-value orientation.
//! * [`tangent`] -- tangent, costate and costate-derivative instantiations
//!   of the linear solver, plus marker-to-lattice deposition.
//! * [`cost`] -- the tracking functional, its adjoint gradient field,
//!   directional derivatives, the Lagrangian and the second derivative.
//! * [`optimizer`] -- projected gradient descent over the admissible ball
//!   with first- and second-order diagnostics.
//! * [`verify`] -- one-command numerical probes for the continuity,
//!   differentiability and conservation claims the solvers rely on.
//! * [`export`] -- CSV / binary output of trajectories, traces and fields.

pub mod characteristics;
pub mod cost;
pub mod export;
pub mod forward;
pub mod kernel;
pub mod lattice;
pub mod linear;
pub mod optimizer;
pub mod phase;
pub mod tangent;
pub mod verify;


mod par;

pub use phase::config::{parse_config, serialize_config, RunConfig};
pub use phase::datum::InitialDatum;
pub use phase::ensemble::{sample_initial_ensemble, ParticleEnsemble};
pub use phase::field::{v_norm, ControlField};
pub use phase::grids::{SpatialGrid, TimeGrid};
pub use phase::vec3::{Phase6, Vec3};

use thiserror::Error;

/// Errors shared by every solver layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty ensemble: no markers inside the datum support")]
    EmptyEnsemble,
    #[error("mismatched grids: {0}")]
    MismatchedGrids(String),
    #[error("blow-up: non-finite marker state at step {step}")]
    Blowup { step: usize },
    #[error("picard iteration did not converge within {max_iter} iterations (last change {last:.3e})")]
    NonConvergence {
        max_iter: usize,
        last: f64,
        log: Vec<f64>,
    },
    #[error("support escape: {count} markers outside the lattice (first ids: {first:?})")]
    SupportEscape { count: usize, first: Vec<usize> },
    #[error("missing gradient data: {0}")]
    MissingGradients(String),
    #[error("representation undefined: lambda must be positive")]
    RepresentationUndefined,
    #[error("zero direction: probe requires a nonzero perturbation")]
    ZeroDirection,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("log too short: need at least {need} entries, got {got}")]
    ShortLog { need: usize, got: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
