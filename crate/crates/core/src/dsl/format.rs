use std::collections::BTreeMap;
use std::fmt::Write;

use crate::dpp::{Atom, DppProblem, Expr, Shape};

const SUM: u8 = 1;
const PRODUCT: u8 = 2;
const UNARY: u8 = 3;
const POSTFIX: u8 = 4;

/// Canonical text of a problem; `parse_problem(format_problem(p))` gives
/// back `p`.
pub fn format_problem(p: &DppProblem) -> String {
    format_with_values(p, &BTreeMap::new())
}

/// As [`format_problem`], binding parameter values where given.
pub fn format_with_values(p: &DppProblem, values: &BTreeMap<String, Vec<f64>>) -> String {
    let mut out = String::new();
    for (name, dim) in &p.variables {
        let _ = writeln!(out, "var {name}[{dim}]");
    }
    for (name, shape) in &p.parameters {
        let dims = match shape {
            Shape::Vector(d) => d.to_string(),
            Shape::Matrix(r, c) => format!("{r},{c}"),
        };
        match values.get(name) {
            Some(v) => {
                let _ = writeln!(out, "param {name}[{dims}] = {}", literal(*shape, v));
            }
            None => {
                let _ = writeln!(out, "param {name}[{dims}]");
            }
        }
    }
    let _ = writeln!(out, "minimize {}", format_expr(&p.objective));
    if !p.eq_constraints.is_empty() || !p.ineq_constraints.is_empty() {
        out.push_str("subject to\n");
        for c in &p.eq_constraints {
            let _ = writeln!(out, "  {} == {}", format_expr(&c.lhs), format_expr(&c.rhs));
        }
        for c in &p.ineq_constraints {
            let _ = writeln!(out, "  {} <= {}", format_expr(&c.lhs), format_expr(&c.rhs));
        }
    }
    out
}

pub fn format_expr(e: &Expr) -> String {
    fmt(e).0
}

fn number(v: f64) -> String {
    format!("{v}")
}

fn literal(shape: Shape, values: &[f64]) -> String {
    let row = |vals: &[f64]| format!("[{}]", vals.iter().map(|&v| number(v)).collect::<Vec<_>>().join(", "));
    match shape {
        Shape::Vector(1) => number(values[0]),
        Shape::Vector(_) => row(values),
        Shape::Matrix(_, c) => {
            format!("[{}]", values.chunks(c.max(1)).map(row).collect::<Vec<_>>().join(", "))
        }
    }
}

fn at_least(e: &Expr, level: u8) -> String {
    let (s, l) = fmt(e);
    if l < level {
        format!("({s})")
    } else {
        s
    }
}

fn fmt(e: &Expr) -> (String, u8) {
    match e {
        Expr::Variable { name, .. } | Expr::Parameter { name, .. } => (name.clone(), POSTFIX),
        Expr::Constant { shape, values } => (literal(*shape, values), POSTFIX),
        Expr::Atom { atom, args } => match atom {
            Atom::Add => {
                let left = at_least(&args[0], SUM);
                let right = match &args[1] {
                    Expr::Atom { atom: Atom::Negate, args: inner } => format!("- {}", at_least(&inner[0], PRODUCT)),
                    other => format!("+ {}", at_least(other, PRODUCT)),
                };
                (format!("{left} {right}"), SUM)
            }
            Atom::Negate => {
                let (s, l) = fmt(&args[0]);
                let bare = l >= UNARY
                    && !matches!(args[0], Expr::Constant { .. })
                    && !s.starts_with(|c: char| c.is_ascii_digit());
                (if bare { format!("-{s}") } else { format!("-({s})") }, UNARY)
            }
            Atom::ScalarMul | Atom::MatVecMul => {
                (format!("{} * {}", at_least(&args[0], PRODUCT), at_least(&args[1], UNARY)), PRODUCT)
            }
            Atom::InnerProduct => {
                (format!("{}' * {}", at_least(&args[0], POSTFIX), at_least(&args[1], UNARY)), PRODUCT)
            }
            Atom::AffineIndex { start, end } => {
                let base = at_least(&args[0], POSTFIX);
                if *end == start + 1 {
                    (format!("{base}[{start}]"), POSTFIX)
                } else {
                    (format!("{base}[{start}:{end}]"), POSTFIX)
                }
            }
            Atom::Sum | Atom::SumSquares | Atom::QuadOverIdentity | Atom::Norm1 | Atom::MaxElementwise => {
                let name = match atom {
                    Atom::Sum => "sum",
                    Atom::SumSquares => "sum_squares",
                    Atom::QuadOverIdentity => "quad_over_identity",
                    Atom::Norm1 => "norm1",
                    _ => "max",
                };
                let inner = args.iter().map(format_expr).collect::<Vec<_>>().join(", ");
                (format!("{name}({inner})"), POSTFIX)
            }
        },
    }
}
