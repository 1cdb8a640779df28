//! Robust pose-graph optimization with graduated non-convexity.
//!
//! The efficient schedule assigns each robust factor the control values
//! `0 -> mu* -> 1`, where `mu*` is the largest value that keeps the SIG kernel
//! convex at the factor's current residual. A fixed heuristic ramp is
//! available as a baseline for comparison.

pub mod config;
pub mod corrupt;
pub mod error;
pub mod eval;
pub mod kernel;
mod linalg;
pub mod posegraph;
pub mod schedule;
pub mod solver;

pub use config::RunConfig;
pub use corrupt::{corrupt, dead_reckoning, grid_world, inject_false_loops, perturb, CorruptionMode, CorruptionSpec, GridWorldSpec};
pub use error::{Error, Result};
pub use eval::{ate, rpe, score_classification, ClassificationReport, EvalReport, TrajectoryErrors};
pub use kernel::{baseline_mu_update, find_mu_star, sig_d2, sig_rho, sig_weight, KernelConfig, KernelEval, MuStar};
pub use posegraph::g2o::{parse_g2o, serialize_g2o};
pub use posegraph::{factor_residual, Factor, FactorKind, Pose, Pose2, Pose3, PoseGraph, VertexId};
pub use schedule::{assign_mu, chi2_quantile, converged, mark_strong_outliers, ChiSquareGate, FactorScheduleState};
pub use solver::{
    gnc_optimize, gnc_optimize_observed, optimize_inner, Classification, GncReport, GncResult, LineFitProblem, PgoProblem, RobustProblem, ScheduleKind,
    SolverConfig,
};
