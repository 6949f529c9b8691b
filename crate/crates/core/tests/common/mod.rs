//! Shared generators and reference solvers for the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use optlayer::qp::QpProblem;

pub fn dv(v: &[f64]) -> DVector<f64> {
    DVector::from_row_slice(v)
}

/// Brute-force optimum: solve the equality-constrained KKT system for every
/// subset of inequalities treated as equalities, keep the primal-feasible
/// points and return the lowest objective. Exact for strictly convex QPs.
pub fn brute_force_optimum(p: &QpProblem) -> Option<(DVector<f64>, f64)> {
    let (n, me, mi) = p.dims();
    assert!(mi <= 12, "subset enumeration is exponential");
    let mut best: Option<(DVector<f64>, f64)> = None;
    for mask in 0u32..(1 << mi) {
        let active: Vec<usize> = (0..mi).filter(|&i| mask & (1 << i) != 0).collect();
        let k = me + active.len();
        if k > n {
            continue;
        }
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&p.p);
        let mut rows = DMatrix::zeros(k, n);
        let mut rhs = DVector::zeros(n + k);
        rhs.rows_mut(0, n).copy_from(&-&p.q);
        for r in 0..me {
            rows.row_mut(r).copy_from(&p.a.row(r));
            rhs[n + r] = p.b[r];
        }
        for (r, &i) in active.iter().enumerate() {
            rows.row_mut(me + r).copy_from(&p.g.row(i));
            rhs[n + me + r] = p.h[i];
        }
        kkt.view_mut((0, n), (n, k)).copy_from(&rows.transpose());
        kkt.view_mut((n, 0), (k, n)).copy_from(&rows);
        let Some(x) = kkt.lu().solve(&rhs) else { continue };
        let z = x.rows(0, n).into_owned();
        if !z.iter().all(|v| v.is_finite()) {
            continue;
        }
        let feasible = (&p.a * &z - &p.b).amax() <= 1e-9
            && (&p.g * &z - &p.h).iter().all(|&v| v <= 1e-9);
        if !feasible {
            continue;
        }
        let f = p.objective(&z);
        if best.as_ref().is_none_or(|(_, bf)| f < *bf) {
            best = Some((z, f));
        }
    }
    best
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
}

pub mod gen {
    //! Seeded random problems for structural properties. Shapes are always
    //! consistent; curvature is arbitrary.
    use optlayer::dpp::{Atom, Constraint, DppProblem, Expr, Shape};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub struct Gen {
        rng: ChaCha8Rng,
        vars: Vec<(String, usize)>,
        params: Vec<(String, Shape)>,
    }

    impl Gen {
        pub fn new(seed: u64) -> Self {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let nv = rng.random_range(1..=3);
            let vars = (0..nv).map(|i| (format!("x{i}"), rng.random_range(1..=4))).collect();
            let np = rng.random_range(0..=3);
            let params = (0..np)
                .map(|i| {
                    let shape = if rng.random_bool(0.3) {
                        Shape::Matrix(rng.random_range(1..=3), rng.random_range(1..=3))
                    } else {
                        Shape::Vector(rng.random_range(1..=4))
                    };
                    (format!("p_{i}"), shape)
                })
                .collect();
            Self { rng, vars, params }
        }

        fn number(&mut self) -> f64 {
            let v = self.rng.random_range(-40i32..=40) as f64 / 8.0;
            if v == 0.0 { 0.5 } else { v }
        }

        fn constant(&mut self, shape: Shape) -> Expr {
            let values = (0..shape.size()).map(|_| self.number()).collect();
            Expr::Constant { shape, values }
        }

        fn leaf(&mut self, shape: Shape) -> Expr {
            let mut options: Vec<Expr> = Vec::new();
            if let Shape::Vector(d) = shape {
                for (n, dim) in &self.vars {
                    if *dim == d {
                        options.push(Expr::var(n, d));
                    }
                }
            }
            for (n, s) in &self.params {
                if *s == shape {
                    options.push(Expr::param(n, shape));
                }
            }
            if options.is_empty() || self.rng.random_bool(0.25) {
                return self.constant(shape);
            }
            let k = self.rng.random_range(0..options.len());
            options.swap_remove(k)
        }

        pub fn expr(&mut self, shape: Shape, depth: usize) -> Expr {
            if depth == 0 || self.rng.random_bool(0.2) {
                return self.leaf(shape);
            }
            let scalar = Shape::Vector(1);
            match shape {
                Shape::Matrix(..) => match self.rng.random_range(0..3) {
                    0 => Expr::add(self.expr(shape, depth - 1), self.expr(shape, depth - 1)),
                    1 => Expr::neg(self.expr(shape, depth - 1)),
                    _ => Expr::scale(self.expr(scalar, depth - 1), self.expr(shape, depth - 1)),
                },
                Shape::Vector(d) => {
                    let k = self.rng.random_range(1..=3);
                    let choice = self.rng.random_range(0..if d == 1 { 12 } else { 7 });
                    match choice {
                        0 => Expr::add(self.expr(shape, depth - 1), self.expr(shape, depth - 1)),
                        1 => Expr::add(self.expr(shape, depth - 1), self.expr(scalar, depth - 1)),
                        2 => Expr::neg(self.expr(shape, depth - 1)),
                        3 => Expr::scale(self.expr(scalar, depth - 1), self.expr(shape, depth - 1)),
                        4 => Expr::matvec(self.expr(Shape::Matrix(d, k), depth - 1), self.expr(Shape::Vector(k), depth - 1)),
                        5 => {
                            let extra = self.rng.random_range(0..=2);
                            let start = self.rng.random_range(0..=extra);
                            Expr::atom(
                                Atom::AffineIndex { start, end: start + d },
                                vec![self.expr(Shape::Vector(d + extra), depth - 1)],
                            )
                        }
                        6 => {
                            let n = self.rng.random_range(1..=3);
                            let args = (0..n)
                                .map(|i| {
                                    let s = if i > 0 && self.rng.random_bool(0.3) { scalar } else { shape };
                                    self.expr(s, depth - 1)
                                })
                                .collect();
                            Expr::atom(Atom::MaxElementwise, args)
                        }
                        7 => Expr::inner(self.expr(Shape::Vector(k), depth - 1), self.expr(Shape::Vector(k), depth - 1)),
                        8 => Expr::atom(Atom::Sum, vec![self.expr(Shape::Vector(k), depth - 1)]),
                        9 => Expr::atom(Atom::SumSquares, vec![self.expr(Shape::Vector(k), depth - 1)]),
                        10 => Expr::atom(Atom::QuadOverIdentity, vec![self.expr(Shape::Vector(k), depth - 1)]),
                        _ => Expr::atom(Atom::Norm1, vec![self.expr(Shape::Vector(k), depth - 1)]),
                    }
                }
            }
        }

        fn constraint(&mut self) -> Constraint {
            let d = self.rng.random_range(1..=3);
            let rhs_shape = if self.rng.random_bool(0.3) { Shape::Vector(1) } else { Shape::Vector(d) };
            Constraint { lhs: self.expr(Shape::Vector(d), 3), rhs: self.expr(rhs_shape, 2) }
        }

        pub fn problem(&mut self) -> DppProblem {
            let objective = self.expr(Shape::Vector(1), 4);
            let ne = self.rng.random_range(0..=2);
            let ni = self.rng.random_range(0..=2);
            let eq_constraints = (0..ne).map(|_| self.constraint()).collect();
            let ineq_constraints = (0..ni).map(|_| self.constraint()).collect();
            DppProblem {
                variables: self.vars.clone(),
                parameters: self.params.clone(),
                objective,
                eq_constraints,
                ineq_constraints,
            }
        }
    }

    pub fn problem(seed: u64) -> DppProblem {
        Gen::new(seed).problem()
    }
}
