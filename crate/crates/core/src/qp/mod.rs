//! Convex quadratic programs: representation, validation and a primal-dual
//! interior-point solver with batched solving.

mod batch;
mod kkt;
mod problem;
mod solver;

pub use batch::{batch_threads, solve_batch, solve_batch_with_threads, THREADS_ENV};
pub use kkt::{KktFactor, KktLayout};
pub use problem::{validate_problem, QpProblem, ValidatedProblem, PSD_TOL, RANK_TOL};
pub use solver::{
    kkt_residuals, solve_qp, QpSolution, ResidualReport, Residuals, SolveStatus, SolverConfig,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("P is not positive semidefinite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },
    #[error("equality matrix A has rank {rank} < {n_eq} rows")]
    RankDeficientEquality { rank: usize, n_eq: usize },
    #[error("problem data contains non-finite values")]
    NonFinite,
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(String),
}
