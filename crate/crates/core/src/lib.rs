//! Single-step memory message passing for compressed sensing with invariant
//! random sensing matrices, together with the random-matrix calculus it needs
//! and analytic predictors for the statistics of its iterates.
//!
//! Model: `y = A x + n` with `n ~ N(0, 1/xi)`, coupling `J = xi I - xi A^T A`
//! and external field `h = xi A^T y`.

pub mod error;
pub mod instance;
pub mod io;
pub mod logreal;
pub mod matrix;
pub mod prior;
pub mod quadrature;
pub mod rmt;
pub mod seed;
pub mod series;
pub mod solver;
pub mod stats;

pub use error::{Error, Result};
pub use instance::ProblemInstance;
pub use matrix::{sample_matrix, SensingMatrix};
pub use prior::{replica_chi, Posterior, Prior, ReplicaOptions, ReplicaPoint};
pub use quadrature::Expectation;
pub use rmt::{BCoefficients, EnsembleKind, EnsembleSpec};
pub use solver::{
    run, tap_residual, ChiMode, IterationRecord, SolverOptions, SolverPath, SolverState,
    StopReason, TapResidual, Trajectory, VSchedule,
};
pub use stats::FieldStats;
