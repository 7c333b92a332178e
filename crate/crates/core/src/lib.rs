//! Inference of credit transition matrices from cumulative default probabilities.
//!
//! The cumulative default curves of an absorbing rating chain determine a
//! linear system for the one-year migration block `Q`. The system is usually
//! underdetermined or numerically singular, so `Q` is chosen as the
//! Fermi-Dirac entropy minimizer inside analyst-supplied bounds, computed
//! through the concave dual with two-point step sizes.
//!
//! - [`markov`]: chains in block form, forward default curves, fundamental matrix.
//! - [`assembly`]: the stacked system `A x = y` and its box constraints.
//! - [`solver`]: entropy, dual functional, primal map and the dual ascent.
//! - [`validation`]: rebuilding `P*` and l1 prediction-error tables.
//! - [`io`]: CSV tables, constraint files and run reports.

pub mod assembly;
pub mod error;
pub mod io;
pub mod markov;
pub mod solver;
pub mod validation;

pub use assembly::{
    assemble_system, build_data_vectors, matrix_from_vector, residual, BoxConstraints, LinearSystem,
};
pub use error::{CtmError, Result};
pub use markov::{
    chain_power, cumulative_default_curves, fundamental_matrix, mean_time_to_default,
    AbsorbingChain, DefaultCurveTable, RatingScale, SubstochasticMatrix,
};
pub use solver::{
    dual_gradient, dual_m, dual_objective, entropy, primal_from_dual, solve, DualSolution,
    SolverConfig,
};
pub use validation::{
    augment, augment_with_slack, consistency_table, l1_curve_error, reconstruct,
    PredictionErrorTable, Reconstruction,
};
