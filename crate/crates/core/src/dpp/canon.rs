//! Canonicalization to a QP whose data is affine in `θ̃ = (θ, 1)`, and the
//! resulting differentiable layer `x*(θ) = R(s(C(θ)))`.

use std::collections::{BTreeMap, HashMap};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::curvature::verify_dpp;
use super::expr::{Atom, DppProblem, Expr, Shape};
use super::tensor::{psi, LinearAction, SparseTensor, CONST_COL};
use super::DppError;
use crate::qp::{solve_qp, validate_problem, QpProblem, QpSolution, SolveStatus, SolverConfig, ValidatedProblem};
use crate::qp_diff::{backward, BackwardSeeds};

/// Selects the original variables from the canonical solution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Retriever {
    pub n_canonical: usize,
    /// Canonical column of each original coordinate.
    pub index: Vec<usize>,
}

impl Retriever {
    pub fn apply(&self, x_canonical: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.index.len(), self.index.iter().map(|&j| x_canonical[j]))
    }

    pub fn adjoint(&self, g: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.n_canonical);
        for (i, &j) in self.index.iter().enumerate() {
            out[j] += g[i];
        }
        out
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.index.len(), self.n_canonical);
        for (i, &j) in self.index.iter().enumerate() {
            m[(i, j)] = 1.0;
        }
        m
    }
}

/// Canonical QP data as fixed sparse maps of `θ̃`.
///
/// * `q = Qmat θ̃`, objective offset `r = offset · θ̃`
/// * `[A b]` are rows `0..n_eq` of `Σ_l R[:, :, l] θ̃_l`, `[G h]` the rest
/// * `P` is parameter-free
#[derive(Debug, Clone, PartialEq)]
pub struct AsaForm {
    pub n_params: usize,
    pub n_canonical: usize,
    pub n_eq: usize,
    pub n_ineq: usize,
    pub p_matrix: BTreeMap<(usize, usize), f64>,
    pub qmat: BTreeMap<(usize, usize), f64>,
    pub offset: BTreeMap<usize, f64>,
    pub rtensor: BTreeMap<(usize, usize, usize), f64>,
    pub retriever: Retriever,
}

impl AsaForm {
    pub fn canonical_dims(&self) -> (usize, usize) {
        (self.n_canonical, self.n_eq + self.n_ineq)
    }

    fn theta_tilde(&self, theta: &DVector<f64>) -> Result<DVector<f64>, DppError> {
        if theta.len() != self.n_params {
            return Err(DppError::Dimension(format!(
                "θ has {} entries, expected {}",
                theta.len(),
                self.n_params
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(DppError::Dimension("θ has non-finite entries".into()));
        }
        let mut t = DVector::from_element(self.n_params + 1, 1.0);
        t.rows_mut(0, self.n_params).copy_from(theta);
        Ok(t)
    }

    /// Canonical QP blocks at `θ`. Touches only the stored maps.
    pub fn instantiate(&self, theta: &DVector<f64>) -> Result<QpProblem, DppError> {
        let t = self.theta_tilde(theta)?;
        let n = self.n_canonical;
        let mut p = DMatrix::zeros(n, n);
        for (&(i, j), &v) in &self.p_matrix {
            p[(i, j)] = v;
        }
        let mut q = DVector::zeros(n);
        for (&(j, l), &v) in &self.qmat {
            q[j] += v * t[l];
        }
        let r = self.offset.iter().map(|(&l, &v)| v * t[l]).sum();
        let mut ab = DMatrix::zeros(self.n_eq + self.n_ineq, n + 1);
        for (&(i, j, l), &v) in &self.rtensor {
            ab[(i, j)] += v * t[l];
        }
        let a = ab.view((0, 0), (self.n_eq, n)).into_owned();
        let b = ab.view((0, n), (self.n_eq, 1)).column(0).into_owned();
        let g = ab.view((self.n_eq, 0), (self.n_ineq, n)).into_owned();
        let h = ab.view((self.n_eq, n), (self.n_ineq, 1)).column(0).into_owned();
        let mut problem = QpProblem::unconstrained(p, q).with_equalities(a, b).with_inequalities(g, h);
        problem.r = r;
        Ok(problem)
    }
}

/// What [`asa_backward`] needs from a forward pass.
#[derive(Debug, Clone)]
pub struct SolveRecord {
    pub problem: ValidatedProblem,
    pub solution: QpSolution,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AsaGradient {
    pub theta: DVector<f64>,
    /// Degenerate canonical constraints; nonempty means the gradient is a
    /// heuristic choice.
    pub degenerate: Vec<usize>,
}

pub fn asa_forward(
    form: &AsaForm,
    theta: &DVector<f64>,
    cfg: &SolverConfig,
) -> Result<(DVector<f64>, SolveRecord), DppError> {
    let problem = validate_problem(form.instantiate(theta)?)?;
    let solution = solve_qp(&problem, cfg)?;
    if solution.status != SolveStatus::Optimal {
        return Err(DppError::SolverStatus(solution.status));
    }
    let x = form.retriever.apply(&solution.z_star);
    Ok((x, SolveRecord { problem, solution }))
}

/// `∂ℓ/∂θ` by the chain retriever adjoint → QP backward → transposed
/// canonicalizer maps.
pub fn asa_backward(form: &AsaForm, rec: &SolveRecord, dl_dx: &DVector<f64>) -> Result<AsaGradient, DppError> {
    if dl_dx.len() != form.retriever.index.len() {
        return Err(DppError::Dimension(format!(
            "loss gradient has {} entries, expected {}",
            dl_dx.len(),
            form.retriever.index.len()
        )));
    }
    let seeds = BackwardSeeds::new(form.retriever.adjoint(dl_dx));
    let (g, triple) = backward(&rec.problem, &rec.solution, &seeds)?;
    let n = form.n_canonical;
    let mut gt = DVector::zeros(form.n_params + 1);
    for (&(j, l), &v) in &form.qmat {
        gt[l] += v * g.g_q[j];
    }
    for (&(i, j, l), &v) in &form.rtensor {
        let w = match (i < form.n_eq, j < n) {
            (true, true) => g.g_a[(i, j)],
            (true, false) => g.g_b[i],
            (false, true) => g.g_g[(i - form.n_eq, j)],
            (false, false) => g.g_h[i - form.n_eq],
        };
        gt[l] += v * w;
    }
    Ok(AsaGradient { theta: gt.rows(0, form.n_params).into_owned(), degenerate: triple.degenerate })
}

/// Builds the sparse maps. Auxiliary variables follow the originals in
/// preorder over the objective, then equalities, then inequalities.
pub fn canonicalize(p: &DppProblem) -> Result<AsaForm, DppError> {
    let report = verify_dpp(p);
    if !report.is_ok() {
        let msg = report
            .violations
            .iter()
            .map(|v| format!("{} {:?}: {}", v.location, v.path, v.message))
            .collect::<Vec<_>>()
            .join("; ");
        return Err(DppError::NotVerified(msg));
    }
    let mut c = Canon {
        vars: p.variable_offsets(),
        params: p.parameter_offsets(),
        const_slice: p.n_params(),
        next_col: p.n_vars(),
        eq: Vec::new(),
        ineq: Vec::new(),
        quad: BTreeMap::new(),
    };
    let linear = c.objective(&p.objective, 1.0)?;
    for con in &p.eq_constraints {
        let l = c.convex(&con.lhs, 1.0)?;
        let r = c.convex(&con.rhs, 1.0)?;
        c.eq.push(l.add(&r.scale(-1.0)));
    }
    for con in &p.ineq_constraints {
        let l = c.convex(&con.lhs, 1.0)?;
        let r = c.convex(&con.rhs, -1.0)?;
        c.ineq.push(l.add(&r.scale(-1.0)));
    }

    let n_c = c.next_col;
    let const_slice = c.const_slice;
    let mut qmat = BTreeMap::new();
    let mut offset = BTreeMap::new();
    for (&(_, j, l), &v) in &linear.entries {
        if j == CONST_COL {
            offset.insert(l, v);
        } else {
            qmat.insert((j, l), v);
        }
    }
    let mut rtensor = BTreeMap::new();
    let mut row = 0;
    let mut n_rows = [0usize; 2];
    for (kind, blocks) in [&c.eq, &c.ineq].into_iter().enumerate() {
        for block in blocks {
            for (&(i, j, l), &v) in &block.entries {
                // Rows store Mx̃ + k; b = −k.
                let (col, val) = if j == CONST_COL { (n_c, -v) } else { (j, v) };
                rtensor.insert((row + i, col, l), val);
            }
            row += block.rows;
            n_rows[kind] += block.rows;
        }
    }
    let mut p_matrix = BTreeMap::new();
    for (&(i, j), &v) in &c.quad {
        p_matrix.insert((i, j), v);
    }
    debug_assert!(const_slice == p.n_params());
    Ok(AsaForm {
        n_params: p.n_params(),
        n_canonical: n_c,
        n_eq: n_rows[0],
        n_ineq: n_rows[1],
        p_matrix,
        qmat,
        offset,
        rtensor,
        retriever: Retriever { n_canonical: n_c, index: (0..p.n_vars()).collect() },
    })
}

struct Canon {
    vars: HashMap<String, (usize, usize)>,
    params: HashMap<String, (usize, usize)>,
    const_slice: usize,
    next_col: usize,
    eq: Vec<SparseTensor>,
    ineq: Vec<SparseTensor>,
    quad: BTreeMap<(usize, usize), f64>,
}

impl Canon {
    fn aux(&mut self, dim: usize) -> (usize, SparseTensor) {
        let off = self.next_col;
        self.next_col += dim;
        (off, SparseTensor::variable(off, dim, self.const_slice))
    }

    /// Linear part of the objective; quadratic terms reachable through sums
    /// and nonnegative literal scalings go into `P`.
    fn objective(&mut self, e: &Expr, kappa: f64) -> Result<SparseTensor, DppError> {
        match e {
            Expr::Atom { atom: Atom::Add, args } => {
                let a = self.objective(&args[0], kappa)?;
                let b = self.objective(&args[1], kappa)?;
                Ok(a.add(&b))
            }
            Expr::Atom { atom: Atom::ScalarMul, args } if args[1].has_variables() => match args[0].scalar_value() {
                Some(c) if c >= 0.0 => self.objective(&args[1], kappa * c),
                _ => Ok(self.convex(e, 1.0)?.scale(kappa)),
            },
            Expr::Atom { atom: atom @ (Atom::SumSquares | Atom::QuadOverIdentity), args } if args[0].has_variables() => {
                let weight = kappa * if *atom == Atom::SumSquares { 2.0 } else { 1.0 };
                if let Expr::Variable { name, dim } = &args[0] {
                    let (off, _) = self.vars[name];
                    for i in 0..*dim {
                        *self.quad.entry((off + i, off + i)).or_insert(0.0) += weight;
                    }
                } else {
                    let arg = self.convex(&args[0], 1.0)?;
                    let (off, w) = self.aux(arg.rows);
                    self.eq.push(arg.add(&w.scale(-1.0)));
                    for i in 0..arg.rows {
                        *self.quad.entry((off + i, off + i)).or_insert(0.0) += weight;
                    }
                }
                Ok(SparseTensor::zeros(1, self.const_slice))
            }
            _ => Ok(self.convex(e, 1.0)?.scale(kappa)),
        }
    }

    /// Affine stand-in `U` for `e` with auxiliary constraints enforcing
    /// `σ U ≥ σ e`, tight at the optimum.
    fn convex(&mut self, e: &Expr, sigma: f64) -> Result<SparseTensor, DppError> {
        let ps = self.const_slice;
        let (atom, args) = match e {
            Expr::Variable { name, dim } => {
                let (off, _) = *self.vars.get(name).ok_or_else(|| DppError::Declaration(name.clone()))?;
                return Ok(SparseTensor::variable(off, *dim, ps));
            }
            Expr::Parameter { name, shape } => {
                let (off, _) = *self.params.get(name).ok_or_else(|| DppError::Declaration(name.clone()))?;
                return Ok(SparseTensor::parameter(off, shape.size(), ps));
            }
            Expr::Constant { values, .. } => return Ok(SparseTensor::constant(values, ps)),
            Expr::Atom { atom, args } => (atom, args),
        };
        let is_constant = !e.has_variables() && !e.has_parameters();
        match atom {
            Atom::Add => {
                let a = self.convex(&args[0], sigma)?;
                let b = self.convex(&args[1], sigma)?;
                Ok(a.add(&b))
            }
            Atom::Negate => Ok(self.convex(&args[0], -sigma)?.scale(-1.0)),
            Atom::Sum => Ok(self.convex(&args[0], sigma)?.sum_rows()),
            Atom::AffineIndex { start, end } => Ok(self.convex(&args[0], sigma)?.select_rows(*start, *end)),
            Atom::ScalarMul => {
                if !args[0].has_variables() {
                    let coef = self.convex(&args[0], 1.0)?;
                    let sign = match args[0].scalar_value() {
                        Some(v) if v < 0.0 => -1.0,
                        _ => 1.0,
                    };
                    let other = self.convex(&args[1], sigma * sign)?;
                    let mut t = LinearAction::new(other.rows);
                    for (&(_, l), &v) in &coef.coefficients() {
                        for i in 0..other.rows {
                            t.insert(i, i, l, v);
                        }
                    }
                    psi(&t, &other)
                } else {
                    let coef = self.convex(&args[1], 1.0)?;
                    let other = self.convex(&args[0], sigma)?;
                    let mut t = LinearAction::new(coef.rows);
                    for (&(i, l), &v) in &coef.coefficients() {
                        t.insert(i, 0, l, v);
                    }
                    psi(&t, &other)
                }
            }
            Atom::MatVecMul => {
                let m = self.convex(&args[0], 1.0)?;
                if !m.is_variable_free() {
                    return Err(DppError::NotDpp("matrix factor contains variables".into()));
                }
                let (rows, cols) = match args[0].shape()? {
                    Shape::Matrix(r, c) => (r, c),
                    s => return Err(DppError::Dimension(format!("mat_vec_mul on {s:?}"))),
                };
                let v = self.convex(&args[1], sigma)?;
                let mut t = LinearAction::new(rows);
                for (&(k, l), &val) in &m.coefficients() {
                    t.insert(k / cols, k % cols, l, val);
                }
                psi(&t, &v)
            }
            Atom::InnerProduct => {
                let (ci, oi) = if !args[0].has_variables() { (0, 1) } else { (1, 0) };
                let coef = self.convex(&args[ci], 1.0)?;
                if !coef.is_variable_free() {
                    return Err(DppError::NotDpp("inner product of two variable expressions".into()));
                }
                let other = self.convex(&args[oi], sigma)?;
                let mut t = LinearAction::new(1);
                for (&(k, l), &v) in &coef.coefficients() {
                    t.insert(0, k, l, v);
                }
                psi(&t, &other)
            }
            Atom::Norm1 => {
                let arg = self.convex(&args[0], 1.0)?;
                if let Some(vals) = arg.constant_values() {
                    return Ok(SparseTensor::constant(&[vals.iter().map(|v| v.abs()).sum()], ps));
                }
                if sigma < 0.0 {
                    return Err(DppError::NotDpp("norm1 in a concave position".into()));
                }
                let (_, t) = self.aux(arg.rows);
                self.ineq.push(arg.add(&t.scale(-1.0)));
                self.ineq.push(arg.scale(-1.0).add(&t.scale(-1.0)));
                Ok(t.sum_rows())
            }
            Atom::MaxElementwise => {
                let d = e.shape()?.size();
                if is_constant {
                    let mut out = vec![f64::NEG_INFINITY; d];
                    for a in args {
                        let vals = self.convex(a, 1.0)?.constant_values().unwrap_or_default();
                        for (i, o) in out.iter_mut().enumerate() {
                            let v = if vals.len() == 1 { vals[0] } else { vals[i] };
                            *o = o.max(v);
                        }
                    }
                    return Ok(SparseTensor::constant(&out, ps));
                }
                if sigma < 0.0 {
                    return Err(DppError::NotDpp("max in a concave position".into()));
                }
                let (_, t) = self.aux(d);
                for a in args {
                    let branch = self.convex(a, 1.0)?.broadcast(d);
                    self.ineq.push(branch.add(&t.scale(-1.0)));
                }
                Ok(t)
            }
            Atom::SumSquares | Atom::QuadOverIdentity => {
                let arg = self.convex(&args[0], 1.0)?;
                if let Some(vals) = arg.constant_values() {
                    let ss: f64 = vals.iter().map(|v| v * v).sum();
                    let v = if *atom == Atom::SumSquares { ss } else { 0.5 * ss };
                    return Ok(SparseTensor::constant(&[v], ps));
                }
                Err(DppError::UnsupportedAtom(format!(
                    "{} is supported only as a nonnegatively scaled term of the objective",
                    atom.name()
                )))
            }
        }
    }
}

#[derive(Serialize)]
struct Dump<'a> {
    n_params: usize,
    n_canonical: usize,
    n_eq: usize,
    n_ineq: usize,
    variables: &'a [(String, usize)],
    parameters: Vec<(String, Vec<usize>)>,
    p_matrix: Vec<(usize, usize, f64)>,
    qmat: Vec<(usize, usize, f64)>,
    offset: Vec<(usize, f64)>,
    rtensor: Vec<(usize, usize, usize, f64)>,
    retriever: &'a [usize],
}

/// Deterministic JSON of the canonical maps, used for golden files.
pub fn canonical_dump(p: &DppProblem, form: &AsaForm) -> String {
    let dump = Dump {
        n_params: form.n_params,
        n_canonical: form.n_canonical,
        n_eq: form.n_eq,
        n_ineq: form.n_ineq,
        variables: &p.variables,
        parameters: p
            .parameters
            .iter()
            .map(|(n, s)| {
                let dims = match *s {
                    Shape::Vector(d) => vec![d],
                    Shape::Matrix(r, c) => vec![r, c],
                };
                (n.clone(), dims)
            })
            .collect(),
        p_matrix: form.p_matrix.iter().map(|(&(i, j), &v)| (i, j, v)).collect(),
        qmat: form.qmat.iter().map(|(&(j, l), &v)| (j, l, v)).collect(),
        offset: form.offset.iter().map(|(&l, &v)| (l, v)).collect(),
        rtensor: form.rtensor.iter().map(|(&(i, j, l), &v)| (i, j, l, v)).collect(),
        retriever: &form.retriever.index,
    };
    let mut s = serde_json::to_string_pretty(&dump).expect("dump serializes");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dpp::expr::Constraint;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    fn linear_in_theta(n: usize) -> DppProblem {
        // minimize θᵀz s.t. −z ≤ 0
        DppProblem {
            variables: vec![("z".into(), n)],
            parameters: vec![("t".into(), Shape::Vector(n))],
            objective: Expr::inner(Expr::param("t", Shape::Vector(n)), Expr::var("z", n)),
            eq_constraints: vec![],
            ineq_constraints: vec![Constraint { lhs: Expr::neg(Expr::var("z", n)), rhs: Expr::scalar(0.0) }],
        }
    }

    #[test]
    fn cost_map_is_identity_on_theta() {
        let form = canonicalize(&linear_in_theta(3)).unwrap();
        let expected: BTreeMap<_, _> = (0..3).map(|i| ((i, i), 1.0)).collect();
        assert_eq!(form.qmat, expected);
        let qp = form.instantiate(&dv(&[0.5, -1.0, 2.0])).unwrap();
        assert_eq!(qp.q, dv(&[0.5, -1.0, 2.0]));
        assert_eq!(qp.g, -DMatrix::identity(3, 3));
        assert_eq!(qp.h, DVector::zeros(3));
    }

    #[test]
    fn constant_cost_lives_in_offset_column() {
        let p = DppProblem {
            variables: vec![("z".into(), 2)],
            parameters: vec![("t".into(), Shape::Vector(1))],
            objective: Expr::inner(Expr::vector(vec![1.0, 2.0]), Expr::var("z", 2)),
            eq_constraints: vec![],
            ineq_constraints: vec![],
        };
        let form = canonicalize(&p).unwrap();
        assert!(form.qmat.keys().all(|&(_, l)| l == 1));
    }

    #[test]
    fn relu_instance_forward_and_backward() {
        // minimize ½‖x − v‖² s.t. −x ≤ 0
        let x = Expr::var("x", 2);
        let v = Expr::param("v", Shape::Vector(2));
        let p = DppProblem {
            variables: vec![("x".into(), 2)],
            parameters: vec![("v".into(), Shape::Vector(2))],
            objective: Expr::atom(Atom::QuadOverIdentity, vec![Expr::sub(x.clone(), v)]),
            eq_constraints: vec![],
            ineq_constraints: vec![Constraint { lhs: Expr::neg(x), rhs: Expr::scalar(0.0) }],
        };
        let form = canonicalize(&p).unwrap();
        let (xs, rec) = asa_forward(&form, &dv(&[1.0, -2.0]), &SolverConfig::default()).unwrap();
        assert!((&xs - dv(&[1.0, 0.0])).amax() < 1e-8);
        let g = asa_backward(&form, &rec, &dv(&[1.0, 0.0])).unwrap();
        assert!((g.theta - dv(&[1.0, 0.0])).amax() < 1e-6);
    }

    #[test]
    fn parameter_only_in_offset_has_zero_gradient() {
        let x = Expr::var("x", 1);
        let t = Expr::param("t", Shape::Vector(1));
        let p = DppProblem {
            variables: vec![("x".into(), 1)],
            parameters: vec![("t".into(), Shape::Vector(1))],
            objective: Expr::add(Expr::atom(Atom::SumSquares, vec![Expr::sub(x, Expr::scalar(1.0))]), t),
            eq_constraints: vec![],
            ineq_constraints: vec![],
        };
        let form = canonicalize(&p).unwrap();
        let (xs, rec) = asa_forward(&form, &dv(&[3.0]), &SolverConfig::default()).unwrap();
        assert!((xs[0] - 1.0).abs() < 1e-9);
        let g = asa_backward(&form, &rec, &dv(&[1.0])).unwrap();
        assert_eq!(g.theta, dv(&[0.0]));
    }

    #[test]
    fn epigraph_atoms_add_auxiliaries_in_preorder() {
        // minimize norm1(x − a) + max(x, 0)[0]
        let x = Expr::var("x", 2);
        let obj = Expr::add(
            Expr::atom(Atom::Norm1, vec![Expr::sub(x.clone(), Expr::vector(vec![1.0, 2.0]))]),
            Expr::atom(
                Atom::AffineIndex { start: 0, end: 1 },
                vec![Expr::atom(Atom::MaxElementwise, vec![x, Expr::scalar(0.0)])],
            ),
        );
        let p = DppProblem {
            variables: vec![("x".into(), 2)],
            parameters: vec![],
            objective: obj,
            eq_constraints: vec![],
            ineq_constraints: vec![],
        };
        let form = canonicalize(&p).unwrap();
        // x (2), norm1 aux (2), max aux (2)
        assert_eq!(form.canonical_dims(), (6, 8));
        let qp = form.instantiate(&DVector::zeros(0)).unwrap();
        assert_eq!(qp.q, dv(&[0.0, 0.0, 1.0, 1.0, 1.0, 0.0]));
    }

    #[test]
    fn unsupported_quadratic_constraint() {
        let x = Expr::var("x", 2);
        let p = DppProblem {
            variables: vec![("x".into(), 2)],
            parameters: vec![],
            objective: Expr::atom(Atom::Sum, vec![x.clone()]),
            eq_constraints: vec![],
            ineq_constraints: vec![Constraint { lhs: Expr::atom(Atom::SumSquares, vec![x]), rhs: Expr::scalar(1.0) }],
        };
        assert!(matches!(canonicalize(&p), Err(DppError::UnsupportedAtom(_))));
    }
}
