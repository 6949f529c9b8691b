//! Text format for parametrized problems (`.dpp` files).
//!
//! ```text
//! # comments run to the end of the line
//! var z[3]
//! param Q[3,3]
//! param q[3] = [1, 0, -1]
//! minimize 0.5 * sum_squares(Q * z) + q' * z
//! subject to
//!   sum(z) == 1
//!   -z <= 0
//! ```
//!
//! `a' * b` is an inner product, `M * v` a matrix-vector product and a
//! scalar on either side of `*` scales the other factor. `x[i]` and
//! `x[i:j]` select entries. Functions: `sum`, `sum_squares`,
//! `quad_over_identity` (½‖·‖²), `norm1`, and `max` (elementwise over its
//! arguments, scalars broadcast). A `+`, `-` or `[` that begins a line starts a
//! new expression, so a sum continues across lines only with the operator
//! at the end of the line.

mod format;
mod lexer;
mod parser;

use std::collections::BTreeMap;

use nalgebra::DVector;
use thiserror::Error;

pub use format::{format_expr, format_problem, format_with_values};
pub use parser::{parse_problem, FUNCTIONS, KEYWORDS};

use crate::dpp::DppProblem;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DslError {
    #[error("{line}:{col}: {message}")]
    Lex { line: usize, col: usize, message: String },
    #[error("{line}:{col}: {message}")]
    Parse { line: usize, col: usize, message: String },
    #[error("{line}:{col}: undeclared identifier '{name}'")]
    UndeclaredIdentifier { line: usize, col: usize, name: String },
    #[error("{line}:{col}: {function} takes {expected} argument(s), found {found}")]
    Arity { line: usize, col: usize, function: String, expected: String, found: usize },
}

impl DslError {
    pub fn location(&self) -> (usize, usize) {
        match *self {
            DslError::Lex { line, col, .. }
            | DslError::Parse { line, col, .. }
            | DslError::UndeclaredIdentifier { line, col, .. }
            | DslError::Arity { line, col, .. } => (line, col),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedProblem {
    pub problem: DppProblem,
    /// Values bound with `param name[..] = literal`.
    pub values: BTreeMap<String, Vec<f64>>,
}

impl ParsedProblem {
    /// `θ` from the bound values, if every parameter has one.
    pub fn theta(&self) -> Option<DVector<f64>> {
        let mut out = Vec::with_capacity(self.problem.n_params());
        for (name, shape) in &self.problem.parameters {
            let v = self.values.get(name)?;
            if v.len() != shape.size() {
                return None;
            }
            out.extend_from_slice(v);
        }
        Some(DVector::from_vec(out))
    }
}

/// Parses bytes that may not be valid UTF-8.
pub fn parse_bytes(bytes: &[u8]) -> Result<ParsedProblem, DslError> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        let prefix = &bytes[..e.valid_up_to()];
        let line = 1 + prefix.iter().filter(|&&b| b == b'\n').count();
        let col = 1 + prefix.iter().rev().take_while(|&&b| b != b'\n').count();
        DslError::Lex { line, col, message: "invalid UTF-8".into() }
    })?;
    parse_problem(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dpp::{curvature_of, verify_dpp, Curvature, RuleSet};

    #[test]
    fn two_term_objective() {
        let p = parse_problem("var z[2] param q[2] minimize sum_squares(z) + q'*z").unwrap();
        assert_eq!(curvature_of(&p.problem.objective, RuleSet::Dpp).unwrap().curvature, Curvature::Convex);
        assert!(verify_dpp(&p.problem).is_ok());
    }

    #[test]
    fn undeclared_identifier_located() {
        assert_eq!(
            parse_problem("minimize z"),
            Err(DslError::UndeclaredIdentifier { line: 1, col: 10, name: "z".into() })
        );
    }

    #[test]
    fn arity_and_parse_errors() {
        let e = parse_problem("var x[2]\nminimize norm1(x, x)").unwrap_err();
        assert!(matches!(e, DslError::Arity { line: 2, col: 10, found: 2, .. }));
        let e = parse_problem("var x[2]\nminimize x' + x").unwrap_err();
        assert!(matches!(e, DslError::Parse { line: 2, .. }));
        let e = parse_problem("var x[2] minimize sum(x) subject to x <=").unwrap_err();
        assert!(matches!(e, DslError::Parse { .. }));
    }

    #[test]
    fn values_bind_theta() {
        let p = parse_problem("var x[2]\nparam A[2,2] = [[1, 2], [3, 4]]\nparam b[2] = [-1, 0.5]\nminimize sum(A * x - b)")
            .unwrap();
        let theta = p.theta().unwrap();
        assert_eq!(theta.as_slice(), &[1.0, 2.0, 3.0, 4.0, -1.0, 0.5]);
    }

    #[test]
    fn format_omits_empty_constraints_and_minimizes_parens() {
        let p = parse_problem("var x[2] minimize ((sum(x))) + (2 * (sum(x)))").unwrap();
        let text = format_problem(&p.problem);
        assert_eq!(text, "var x[2]\nminimize sum(x) + 2 * sum(x)\n");
        let p = parse_problem("var x[2] minimize sum(x - (x - x)) + -(2) + -2").unwrap();
        assert_eq!(format_expr(&p.problem.objective), "sum(x - (x - x)) - 2 + -2");
    }

    #[test]
    fn leading_sign_starts_a_new_constraint() {
        let p = parse_problem("var z[1]\nminimize sum(z)\nsubject to\n  z <= 0\n  -z <= -1\n").unwrap();
        assert_eq!(p.problem.ineq_constraints.len(), 2);
        let p = parse_problem("var z[1]\nminimize sum(z) +\n  sum(z)").unwrap();
        assert_eq!(format_expr(&p.problem.objective), "sum(z) + sum(z)");
    }

    #[test]
    fn invalid_utf8_is_a_lex_error() {
        assert!(matches!(parse_bytes(b"var x[2]\n\xff"), Err(DslError::Lex { line: 2, col: 1, .. })));
    }
}
