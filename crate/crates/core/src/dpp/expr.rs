use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::DppError;

/// Vectors (scalars are `Vector(1)`) and row-major matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Shape {
    Vector(usize),
    Matrix(usize, usize),
}

impl Shape {
    pub fn size(&self) -> usize {
        match *self {
            Shape::Vector(d) => d,
            Shape::Matrix(m, n) => m * n,
        }
    }

    pub fn is_scalar(&self) -> bool {
        *self == Shape::Vector(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Atom {
    Add,
    Negate,
    /// `(scalar, expr)`
    ScalarMul,
    /// `(matrix, vector)`
    MatVecMul,
    Sum,
    InnerProduct,
    SumSquares,
    /// `½‖·‖²`
    QuadOverIdentity,
    Norm1,
    MaxElementwise,
    /// Rows `start..end` of a vector.
    AffineIndex { start: usize, end: usize },
}

impl Atom {
    pub fn name(&self) -> &'static str {
        match self {
            Atom::Add => "add",
            Atom::Negate => "negate",
            Atom::ScalarMul => "scalar_mul",
            Atom::MatVecMul => "mat_vec_mul",
            Atom::Sum => "sum",
            Atom::InnerProduct => "inner_product",
            Atom::SumSquares => "sum_squares",
            Atom::QuadOverIdentity => "quad_over_identity",
            Atom::Norm1 => "norm1",
            Atom::MaxElementwise => "max_elementwise",
            Atom::AffineIndex { .. } => "affine_index",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    Variable { name: String, dim: usize },
    Parameter { name: String, shape: Shape },
    /// Row-major values.
    Constant { shape: Shape, values: Vec<f64> },
    Atom { atom: Atom, args: Vec<Expr> },
}

impl Expr {
    pub fn var(name: &str, dim: usize) -> Self {
        Expr::Variable { name: name.into(), dim }
    }

    pub fn param(name: &str, shape: Shape) -> Self {
        Expr::Parameter { name: name.into(), shape }
    }

    pub fn scalar(v: f64) -> Self {
        Expr::Constant { shape: Shape::Vector(1), values: vec![v] }
    }

    pub fn vector(values: Vec<f64>) -> Self {
        Expr::Constant { shape: Shape::Vector(values.len()), values }
    }

    pub fn atom(atom: Atom, args: Vec<Expr>) -> Self {
        Expr::Atom { atom, args }
    }

    pub fn add(a: Expr, b: Expr) -> Self {
        Self::atom(Atom::Add, vec![a, b])
    }

    pub fn sub(a: Expr, b: Expr) -> Self {
        Self::add(a, Self::neg(b))
    }

    pub fn neg(a: Expr) -> Self {
        Self::atom(Atom::Negate, vec![a])
    }

    pub fn scale(s: Expr, e: Expr) -> Self {
        Self::atom(Atom::ScalarMul, vec![s, e])
    }

    pub fn matvec(m: Expr, v: Expr) -> Self {
        Self::atom(Atom::MatVecMul, vec![m, v])
    }

    pub fn inner(a: Expr, b: Expr) -> Self {
        Self::atom(Atom::InnerProduct, vec![a, b])
    }

    pub fn args(&self) -> &[Expr] {
        match self {
            Expr::Atom { args, .. } => args,
            _ => &[],
        }
    }

    /// The subtree at `path` (child indices from this node).
    pub fn at_path(&self, path: &[usize]) -> Option<&Expr> {
        path.iter().try_fold(self, |e, &i| e.args().get(i))
    }

    pub fn has_variables(&self) -> bool {
        match self {
            Expr::Variable { .. } => true,
            Expr::Atom { args, .. } => args.iter().any(Expr::has_variables),
            _ => false,
        }
    }

    pub fn has_parameters(&self) -> bool {
        match self {
            Expr::Parameter { .. } => true,
            Expr::Atom { args, .. } => args.iter().any(Expr::has_parameters),
            _ => false,
        }
    }

    /// Numeric value of a literal scalar, looking through negation.
    pub fn scalar_value(&self) -> Option<f64> {
        match self {
            Expr::Constant { shape, values } if shape.is_scalar() => Some(values[0]),
            Expr::Atom { atom: Atom::Negate, args } => args[0].scalar_value().map(|v| -v),
            _ => None,
        }
    }

    /// Result shape, checking argument compatibility.
    pub fn shape(&self) -> Result<Shape, DppError> {
        self.shape_at(&mut Vec::new())
    }

    fn shape_at(&self, path: &mut Vec<usize>) -> Result<Shape, DppError> {
        let err = |path: &Vec<usize>, msg: String| DppError::Shape { path: path.clone(), message: msg };
        match self {
            Expr::Variable { dim, .. } => {
                if *dim == 0 {
                    return Err(err(path, "zero-length variable".into()));
                }
                Ok(Shape::Vector(*dim))
            }
            Expr::Parameter { shape, .. } => {
                if shape.size() == 0 {
                    return Err(err(path, "empty parameter".into()));
                }
                Ok(*shape)
            }
            Expr::Constant { shape, values } => {
                if shape.size() != values.len() || values.is_empty() {
                    return Err(err(path, format!("constant of shape {shape:?} has {} values", values.len())));
                }
                Ok(*shape)
            }
            Expr::Atom { atom, args } => {
                let mut shapes = Vec::with_capacity(args.len());
                for (i, a) in args.iter().enumerate() {
                    path.push(i);
                    shapes.push(a.shape_at(path)?);
                    path.pop();
                }
                let arity_ok = match atom {
                    Atom::Add | Atom::ScalarMul | Atom::MatVecMul | Atom::InnerProduct => shapes.len() == 2,
                    Atom::MaxElementwise => !shapes.is_empty(),
                    _ => shapes.len() == 1,
                };
                if !arity_ok {
                    return Err(err(path, format!("{} takes a different number of arguments", atom.name())));
                }
                let vector_dim = |s: &Shape| match s {
                    Shape::Vector(d) => Some(*d),
                    Shape::Matrix(..) => None,
                };
                match atom {
                    Atom::Add => broadcast(shapes[0], shapes[1])
                        .ok_or_else(|| err(path, format!("cannot add {:?} and {:?}", shapes[0], shapes[1]))),
                    Atom::Negate => Ok(shapes[0]),
                    Atom::ScalarMul => {
                        if !shapes[0].is_scalar() {
                            return Err(err(path, "scalar_mul needs a scalar first argument".into()));
                        }
                        Ok(shapes[1])
                    }
                    Atom::MatVecMul => match (shapes[0], shapes[1]) {
                        (Shape::Matrix(m, n), Shape::Vector(k)) if n == k => Ok(Shape::Vector(m)),
                        (a, b) => Err(err(path, format!("cannot multiply {a:?} by {b:?}"))),
                    },
                    Atom::InnerProduct => match (vector_dim(&shapes[0]), vector_dim(&shapes[1])) {
                        (Some(a), Some(b)) if a == b => Ok(Shape::Vector(1)),
                        _ => Err(err(path, "inner_product needs vectors of equal length".into())),
                    },
                    Atom::Sum | Atom::SumSquares | Atom::QuadOverIdentity | Atom::Norm1 => {
                        vector_dim(&shapes[0])
                            .map(|_| Shape::Vector(1))
                            .ok_or_else(|| err(path, format!("{} needs a vector", atom.name())))
                    }
                    Atom::MaxElementwise => {
                        let mut out = shapes[0];
                        for s in &shapes[1..] {
                            out = broadcast(out, *s)
                                .ok_or_else(|| err(path, "max arguments have mismatched shapes".into()))?;
                        }
                        match out {
                            Shape::Vector(_) => Ok(out),
                            Shape::Matrix(..) => Err(err(path, "max needs vectors".into())),
                        }
                    }
                    Atom::AffineIndex { start, end } => match vector_dim(&shapes[0]) {
                        Some(d) if start < end && *end <= d => Ok(Shape::Vector(end - start)),
                        _ => Err(err(path, format!("index {start}:{end} out of range for {:?}", shapes[0]))),
                    },
                }
            }
        }
    }
}

/// Equal shapes, or a scalar against anything.
pub fn broadcast(a: Shape, b: Shape) -> Option<Shape> {
    if a == b || b.is_scalar() {
        Some(a)
    } else if a.is_scalar() {
        Some(b)
    } else {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraint {
    pub lhs: Expr,
    pub rhs: Expr,
}

/// `minimize objective` subject to `lhs == rhs` and `lhs <= rhs` rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DppProblem {
    pub variables: Vec<(String, usize)>,
    /// Defines `θ`: parameters concatenated in this order, matrices
    /// row-major.
    pub parameters: Vec<(String, Shape)>,
    pub objective: Expr,
    pub eq_constraints: Vec<Constraint>,
    pub ineq_constraints: Vec<Constraint>,
}

impl DppProblem {
    pub fn n_params(&self) -> usize {
        self.parameters.iter().map(|(_, s)| s.size()).sum()
    }

    pub fn n_vars(&self) -> usize {
        self.variables.iter().map(|(_, d)| d).sum()
    }

    /// `name → (offset, size)` in the stacked variable vector.
    pub fn variable_offsets(&self) -> HashMap<String, (usize, usize)> {
        offsets(self.variables.iter().map(|(n, d)| (n.clone(), *d)))
    }

    /// `name → (offset, size)` in `θ`.
    pub fn parameter_offsets(&self) -> HashMap<String, (usize, usize)> {
        offsets(self.parameters.iter().map(|(n, s)| (n.clone(), s.size())))
    }

    /// Every leaf must match its declaration and every atom must be
    /// shape-consistent.
    pub fn check_declarations(&self) -> Result<(), DppError> {
        let vars: HashMap<_, _> = self.variables.iter().cloned().collect();
        let params: HashMap<_, _> = self.parameters.iter().cloned().collect();
        if vars.len() != self.variables.len() || params.len() != self.parameters.len() {
            return Err(DppError::Declaration("duplicate declaration".into()));
        }
        if let Some(name) = vars.keys().find(|k| params.contains_key(*k)) {
            return Err(DppError::Declaration(format!("{name} declared as variable and parameter")));
        }
        for (location, e) in self.expressions() {
            check_leaves(e, &vars, &params).map_err(|m| DppError::Declaration(format!("{location}: {m}")))?;
        }
        Ok(())
    }

    /// `(location, expression)` pairs in canonical order.
    pub fn expressions(&self) -> Vec<(String, &Expr)> {
        let mut out = vec![("objective".to_string(), &self.objective)];
        for (i, c) in self.eq_constraints.iter().enumerate() {
            out.push((format!("eq[{i}].lhs"), &c.lhs));
            out.push((format!("eq[{i}].rhs"), &c.rhs));
        }
        for (i, c) in self.ineq_constraints.iter().enumerate() {
            out.push((format!("ineq[{i}].lhs"), &c.lhs));
            out.push((format!("ineq[{i}].rhs"), &c.rhs));
        }
        out
    }
}

fn offsets(items: impl Iterator<Item = (String, usize)>) -> HashMap<String, (usize, usize)> {
    let mut off = 0;
    items
        .map(|(n, d)| {
            let e = (n, (off, d));
            off += d;
            e
        })
        .collect()
}

fn check_leaves(
    e: &Expr,
    vars: &HashMap<String, usize>,
    params: &HashMap<String, Shape>,
) -> Result<(), String> {
    match e {
        Expr::Variable { name, dim } => match vars.get(name) {
            Some(d) if d == dim => Ok(()),
            Some(d) => Err(format!("variable {name} used with dimension {dim}, declared {d}")),
            None => Err(format!("undeclared variable {name}")),
        },
        Expr::Parameter { name, shape } => match params.get(name) {
            Some(s) if s == shape => Ok(()),
            Some(s) => Err(format!("parameter {name} used with shape {shape:?}, declared {s:?}")),
            None => Err(format!("undeclared parameter {name}")),
        },
        Expr::Constant { values, .. } => {
            if values.iter().all(|v| v.is_finite()) {
                Ok(())
            } else {
                Err("non-finite constant".into())
            }
        }
        Expr::Atom { args, .. } => args.iter().try_for_each(|a| check_leaves(a, vars, params)),
    }
}
