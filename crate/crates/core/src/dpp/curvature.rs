//! Curvature tags and the DCP / DPP composition rules.

use serde::Serialize;

use super::expr::{Atom, DppProblem, Expr};
use super::DppError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Curvature {
    Constant,
    ParameterAffine,
    Affine,
    Convex,
    Concave,
    Unknown,
}

impl Curvature {
    /// Constant, parameter-affine or affine.
    pub fn is_affine(self) -> bool {
        matches!(self, Curvature::Constant | Curvature::ParameterAffine | Curvature::Affine)
    }

    pub fn is_convex(self) -> bool {
        self.is_affine() || self == Curvature::Convex
    }

    pub fn is_concave(self) -> bool {
        self.is_affine() || self == Curvature::Concave
    }

    fn negate(self) -> Self {
        match self {
            Curvature::Convex => Curvature::Concave,
            Curvature::Concave => Curvature::Convex,
            c => c,
        }
    }

    fn rank(self) -> u8 {
        match self {
            Curvature::Constant => 0,
            Curvature::ParameterAffine => 1,
            _ => 2,
        }
    }

    fn sum(self, other: Self) -> Self {
        use Curvature::*;
        match (self, other) {
            (Unknown, _) | (_, Unknown) | (Convex, Concave) | (Concave, Convex) => Unknown,
            (Convex, _) | (_, Convex) => Convex,
            (Concave, _) | (_, Concave) => Concave,
            (a, b) => {
                if a.rank() >= b.rank() {
                    a
                } else {
                    b
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Monotonicity {
    Nondecreasing,
    Nonincreasing,
    None,
}

/// Curvature of a node and the monotonicity of its atom in each argument.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CurvatureTag {
    pub curvature: Curvature,
    pub monotonicity: Vec<Monotonicity>,
}

/// DCP treats parameters as constants; DPP treats them as affine objects and
/// only admits products with a parameter-free side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleSet {
    Dcp,
    Dpp,
}

fn monotonicity(atom: &Atom, arg: usize, args: &[Expr]) -> Monotonicity {
    use Monotonicity::*;
    match atom {
        Atom::Add | Atom::Sum | Atom::AffineIndex { .. } | Atom::MaxElementwise => Nondecreasing,
        Atom::Negate => Nonincreasing,
        Atom::ScalarMul => match (arg, args[0].scalar_value()) {
            (1, Some(v)) if v >= 0.0 => Nondecreasing,
            (1, Some(_)) => Nonincreasing,
            _ => None,
        },
        _ => None,
    }
}

pub fn curvature_of(e: &Expr, rules: RuleSet) -> Result<CurvatureTag, DppError> {
    let curvature = walk(e, rules, &mut Vec::new())?;
    let monotonicity = match e {
        Expr::Atom { atom, args } => (0..args.len()).map(|i| monotonicity(atom, i, args)).collect(),
        _ => Vec::new(),
    };
    Ok(CurvatureTag { curvature, monotonicity })
}

fn unknown(path: &[usize], reason: impl Into<String>) -> DppError {
    DppError::UnknownCurvature { path: path.to_vec(), reason: reason.into() }
}

fn walk(e: &Expr, rules: RuleSet, path: &mut Vec<usize>) -> Result<Curvature, DppError> {
    let (atom, args) = match e {
        Expr::Variable { .. } => return Ok(Curvature::Affine),
        Expr::Constant { .. } => return Ok(Curvature::Constant),
        Expr::Parameter { .. } => {
            return Ok(match rules {
                RuleSet::Dcp => Curvature::Constant,
                RuleSet::Dpp => Curvature::ParameterAffine,
            })
        }
        Expr::Atom { atom, args } => (atom, args),
    };
    let mut cs = Vec::with_capacity(args.len());
    for (i, a) in args.iter().enumerate() {
        path.push(i);
        cs.push(walk(a, rules, path)?);
        path.pop();
    }
    let var_free = |i: usize| !args[i].has_variables();
    let param_free = |i: usize| !args[i].has_parameters();
    match atom {
        Atom::Add => match cs[0].sum(cs[1]) {
            Curvature::Unknown => Err(unknown(path, "sum of convex and concave terms")),
            c => Ok(c),
        },
        Atom::Negate => Ok(cs[0].negate()),
        Atom::Sum | Atom::AffineIndex { .. } => Ok(cs[0]),
        Atom::ScalarMul | Atom::MatVecMul | Atom::InnerProduct => product(atom, args, &cs, rules, path, var_free, param_free),
        Atom::SumSquares | Atom::QuadOverIdentity | Atom::Norm1 => {
            let c = cs[0];
            if !c.is_affine() {
                return Err(unknown(path, format!("{} of a non-affine argument", atom.name())));
            }
            match c {
                Curvature::Constant => Ok(Curvature::Constant),
                Curvature::ParameterAffine => {
                    Err(unknown(path, format!("{} of a parameter expression is not parameter-affine", atom.name())))
                }
                _ => Ok(Curvature::Convex),
            }
        }
        Atom::MaxElementwise => {
            if cs.iter().any(|c| !c.is_convex()) {
                return Err(unknown(path, "max of a concave or unknown argument"));
            }
            if cs.iter().all(|&c| c == Curvature::Constant) {
                Ok(Curvature::Constant)
            } else if cs.iter().all(|c| c.rank() <= 1) {
                Err(unknown(path, "max of parameter expressions is not parameter-affine"))
            } else {
                Ok(Curvature::Convex)
            }
        }
    }
}

fn product(
    atom: &Atom,
    args: &[Expr],
    cs: &[Curvature],
    rules: RuleSet,
    path: &[usize],
    var_free: impl Fn(usize) -> bool,
    param_free: impl Fn(usize) -> bool,
) -> Result<Curvature, DppError> {
    // Pick the side playing the role of the coefficient.
    let candidates: Vec<usize> = match rules {
        RuleSet::Dcp => (0..2).filter(|&i| var_free(i)).collect(),
        // a literal coefficient scales anything
        RuleSet::Dpp => (0..2).filter(|&i| var_free(i) && (param_free(1 - i) || param_free(i))).collect(),
    };
    let Some(&k) = candidates.first() else {
        return Err(unknown(
            path,
            match rules {
                RuleSet::Dcp => "product of two non-constant expressions",
                RuleSet::Dpp => "product needs a parameter-affine side and a parameter-free side",
            },
        ));
    };
    let (coef, other) = (cs[k], cs[1 - k]);
    if coef == Curvature::Constant && other == Curvature::Constant {
        return Ok(Curvature::Constant);
    }
    if other.is_affine() {
        return Ok(match (coef, other) {
            (_, Curvature::Affine) => Curvature::Affine,
            (Curvature::ParameterAffine, _) | (_, Curvature::ParameterAffine) => Curvature::ParameterAffine,
            _ => Curvature::Constant,
        });
    }
    // A convex or concave factor keeps its curvature only under a literal
    // scalar of known sign.
    if *atom == Atom::ScalarMul && k == 0 {
        if let Some(v) = args[0].scalar_value() {
            return Ok(if v >= 0.0 { other } else { other.negate() });
        }
    }
    Err(unknown(path, "product of a nonlinear expression with a coefficient of unknown sign"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    /// `objective`, `eq[i].lhs`, `ineq[i].rhs`, ...
    pub location: String,
    /// Child indices from the expression root to the offending node.
    pub path: Vec<usize>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub violations: Vec<Violation>,
}

impl VerificationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn verify_dpp(p: &DppProblem) -> VerificationReport {
    verify(p, RuleSet::Dpp)
}

pub fn verify_dcp(p: &DppProblem) -> VerificationReport {
    verify(p, RuleSet::Dcp)
}

pub fn verify(p: &DppProblem, rules: RuleSet) -> VerificationReport {
    let mut violations = Vec::new();
    if let Err(e) = p.check_declarations() {
        violations.push(Violation { location: "declarations".into(), path: vec![], message: e.to_string() });
        return VerificationReport { violations };
    }
    if let Some(c) = tag(&mut violations, rules, "objective".into(), &p.objective) {
        if !c.is_convex() {
            violations_push(&mut violations, "objective", "minimized objective must be convex or affine");
        }
    }
    match p.objective.shape() {
        Ok(s) if !s.is_scalar() => violations_push(&mut violations, "objective", "objective must be scalar"),
        _ => {}
    }
    for (i, c) in p.eq_constraints.iter().enumerate() {
        let l = tag(&mut violations, rules, format!("eq[{i}].lhs"), &c.lhs);
        let r = tag(&mut violations, rules, format!("eq[{i}].rhs"), &c.rhs);
        if let (Some(l), Some(r)) = (l, r) {
            if !l.is_affine() || !r.is_affine() {
                violations_push(&mut violations, &format!("eq[{i}]"), "equality sides must be affine");
            }
        }
        constraint_shapes(&mut violations, &format!("eq[{i}]"), &c.lhs, &c.rhs);
    }
    for (i, c) in p.ineq_constraints.iter().enumerate() {
        let l = tag(&mut violations, rules, format!("ineq[{i}].lhs"), &c.lhs);
        let r = tag(&mut violations, rules, format!("ineq[{i}].rhs"), &c.rhs);
        if let (Some(l), Some(r)) = (l, r) {
            if !l.is_convex() {
                violations_push(&mut violations, &format!("ineq[{i}].lhs"), "left side of <= must be convex");
            }
            if !r.is_concave() {
                violations_push(&mut violations, &format!("ineq[{i}].rhs"), "right side of <= must be concave");
            }
        }
        constraint_shapes(&mut violations, &format!("ineq[{i}]"), &c.lhs, &c.rhs);
    }
    VerificationReport { violations }
}

fn tag(violations: &mut Vec<Violation>, rules: RuleSet, location: String, e: &Expr) -> Option<Curvature> {
    if let Err(err) = e.shape() {
        let path = match &err {
            DppError::Shape { path, .. } => path.clone(),
            _ => vec![],
        };
        violations.push(Violation { location, path, message: err.to_string() });
        return None;
    }
    match walk(e, rules, &mut Vec::new()) {
        Ok(c) => Some(c),
        Err(DppError::UnknownCurvature { path, reason }) => {
            violations.push(Violation { location, path, message: reason });
            None
        }
        Err(other) => {
            violations.push(Violation { location, path: vec![], message: other.to_string() });
            None
        }
    }
}

fn violations_push(v: &mut Vec<Violation>, location: &str, message: &str) {
    v.push(Violation { location: location.into(), path: vec![], message: message.into() });
}

fn constraint_shapes(v: &mut Vec<Violation>, location: &str, lhs: &Expr, rhs: &Expr) {
    if let (Ok(a), Ok(b)) = (lhs.shape(), rhs.shape()) {
        if super::expr::broadcast(a, b).is_none() {
            violations_push(v, location, &format!("sides have shapes {a:?} and {b:?}"));
        }
    }
}
