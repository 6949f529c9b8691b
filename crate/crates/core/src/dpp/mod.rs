//! Parametrized problem trees, curvature verification, and canonicalization
//! to affine-solver-affine form.
//!
//! A verified [`DppProblem`] is reduced once to sparse maps ([`AsaForm`])
//! from `θ̃ = (θ, 1)` to QP data; solving for new parameter values and
//! differentiating with respect to them never revisits the tree.

mod canon;
mod curvature;
mod expr;
mod tensor;

pub use canon::{asa_backward, asa_forward, canonical_dump, canonicalize, AsaForm, AsaGradient, Retriever, SolveRecord};
pub use curvature::{
    curvature_of, verify, verify_dcp, verify_dpp, Curvature, CurvatureTag, Monotonicity, RuleSet,
    VerificationReport, Violation,
};
pub use expr::{broadcast, Atom, Constraint, DppProblem, Expr, Shape};
pub use tensor::{psi, LinearAction, SparseTensor, CONST_COL};

use thiserror::Error;

use crate::qp::{QpError, SolveStatus};
use crate::qp_diff::DiffError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DppError {
    #[error("shape error at {path:?}: {message}")]
    Shape { path: Vec<usize>, message: String },
    #[error("declaration error: {0}")]
    Declaration(String),
    #[error("unknown curvature at {path:?}: {reason}")]
    UnknownCurvature { path: Vec<usize>, reason: String },
    #[error("problem is not DPP: {0}")]
    NotVerified(String),
    #[error("unsupported atom: {0}")]
    UnsupportedAtom(String),
    #[error("parameter usage breaks affineness: {0}")]
    NotDpp(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("solver finished with status {0:?}")]
    SolverStatus(SolveStatus),
    #[error(transparent)]
    Diff(#[from] DiffError),
}
