use std::collections::{BTreeMap, HashMap};

use super::lexer::{lex, Tok, Token};
use super::{DslError, ParsedProblem};
use crate::dpp::{Atom, Constraint, DppProblem, Expr, Shape};

const MAX_DEPTH: usize = 200;
const MAX_DIM: usize = 1 << 20;

pub const KEYWORDS: &[&str] = &["var", "param", "minimize", "subject", "to"];
pub const FUNCTIONS: &[&str] = &["sum", "sum_squares", "quad_over_identity", "norm1", "max"];

pub fn parse_problem(text: &str) -> Result<ParsedProblem, DslError> {
    let tokens = lex(text)?;
    Parser { tokens, pos: 0, depth: 0, vars: HashMap::new(), params: HashMap::new() }.program()
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    depth: usize,
    vars: HashMap<String, usize>,
    params: HashMap<String, Shape>,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.pos]
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.tokens[(self.pos + k).min(self.tokens.len() - 1)].tok
    }

    fn next(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn error_at(t: &Token, message: impl Into<String>) -> DslError {
        DslError::Parse { line: t.line, col: t.col, message: message.into() }
    }

    fn error(&self, message: impl Into<String>) -> DslError {
        Self::error_at(self.peek(), message)
    }

    fn expect(&mut self, tok: Tok) -> Result<Token, DslError> {
        if self.peek().tok == tok {
            Ok(self.next())
        } else {
            Err(self.error(format!("expected {}, found {}", tok.describe(), self.peek().tok.describe())))
        }
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(s) if s == kw)
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), DslError> {
        if self.is_keyword(kw) {
            self.next();
            Ok(())
        } else {
            Err(self.error(format!("expected '{kw}', found {}", self.peek().tok.describe())))
        }
    }

    fn integer(&mut self) -> Result<usize, DslError> {
        let t = self.next();
        match &t.tok {
            Tok::Number(_, s) => s
                .parse::<usize>()
                .ok()
                .filter(|&n| n <= MAX_DIM)
                .ok_or_else(|| Self::error_at(&t, format!("expected a nonnegative integer, found {s}"))),
            other => Err(Self::error_at(&t, format!("expected an integer, found {}", other.describe()))),
        }
    }

    fn program(mut self) -> Result<ParsedProblem, DslError> {
        let mut variables = Vec::new();
        let mut parameters = Vec::new();
        let mut values = BTreeMap::new();
        while self.is_keyword("var") || self.is_keyword("param") {
            let is_var = self.is_keyword("var");
            self.next();
            let name_tok = self.next();
            let name = match &name_tok.tok {
                Tok::Ident(s) if !KEYWORDS.contains(&s.as_str()) && !FUNCTIONS.contains(&s.as_str()) => s.clone(),
                other => return Err(Self::error_at(&name_tok, format!("expected a name, found {}", other.describe()))),
            };
            if self.vars.contains_key(&name) || self.params.contains_key(&name) {
                return Err(Self::error_at(&name_tok, format!("'{name}' is already declared")));
            }
            self.expect(Tok::LBracket)?;
            let first = self.integer()?;
            let shape = if self.peek().tok == Tok::Comma {
                self.next();
                let second = self.integer()?;
                Shape::Matrix(first, second)
            } else {
                Shape::Vector(first)
            };
            self.expect(Tok::RBracket)?;
            if shape.size() == 0 || shape.size() > MAX_DIM {
                return Err(Self::error_at(&name_tok, format!("'{name}' has an invalid size")));
            }
            if is_var {
                let Shape::Vector(d) = shape else {
                    return Err(Self::error_at(&name_tok, "variables must be vectors"));
                };
                self.vars.insert(name.clone(), d);
                variables.push((name, d));
            } else {
                if self.peek().tok == Tok::Assign {
                    let eq = self.next();
                    let (lit_shape, vals) = self.literal()?;
                    if lit_shape != shape && !(shape.size() == 1 && vals.len() == 1) {
                        return Err(Self::error_at(
                            &eq,
                            format!("value for '{name}' has shape {lit_shape:?}, declared {shape:?}"),
                        ));
                    }
                    values.insert(name.clone(), vals);
                }
                self.params.insert(name.clone(), shape);
                parameters.push((name, shape));
            }
        }
        let min_tok = self.peek().clone();
        self.expect_keyword("minimize")?;
        let objective = self.expr()?;
        let mut eq_constraints = Vec::new();
        let mut ineq_constraints = Vec::new();
        if self.is_keyword("subject") {
            self.next();
            self.expect_keyword("to")?;
            loop {
                let lhs = self.expr()?;
                let op = self.next();
                if !matches!(op.tok, Tok::EqEq | Tok::Le) {
                    return Err(Self::error_at(&op, format!("expected '==' or '<=', found {}", op.tok.describe())));
                }
                let rhs = self.expr()?;
                let (ls, rs) = (self.shape_of(&lhs, &op)?, self.shape_of(&rhs, &op)?);
                if crate::dpp::broadcast(ls, rs).is_none() {
                    return Err(Self::error_at(&op, format!("constraint sides have shapes {ls:?} and {rs:?}")));
                }
                if op.tok == Tok::EqEq {
                    eq_constraints.push(Constraint { lhs, rhs });
                } else {
                    ineq_constraints.push(Constraint { lhs, rhs });
                }
                if self.peek().tok == Tok::Eof {
                    break;
                }
            }
        }
        if self.peek().tok != Tok::Eof {
            return Err(self.error(format!("unexpected {}", self.peek().tok.describe())));
        }
        if !self.shape_of(&objective, &min_tok)?.is_scalar() {
            return Err(Self::error_at(&min_tok, "objective must be scalar"));
        }
        Ok(ParsedProblem {
            problem: DppProblem { variables, parameters, objective, eq_constraints, ineq_constraints },
            values,
        })
    }

    fn shape_of(&self, e: &Expr, at: &Token) -> Result<Shape, DslError> {
        e.shape().map_err(|err| Self::error_at(at, err.to_string()))
    }

    /// `[1, 2]`, `[[1, 2], [3, 4]]` or a signed scalar.
    fn literal(&mut self) -> Result<(Shape, Vec<f64>), DslError> {
        if self.peek().tok != Tok::LBracket {
            return Ok((Shape::Vector(1), vec![self.signed_number()?]));
        }
        self.next();
        if self.peek().tok == Tok::LBracket {
            let mut rows: Vec<Vec<f64>> = Vec::new();
            loop {
                let start = self.expect(Tok::LBracket)?;
                let row = self.number_list()?;
                if let Some(first) = rows.first() {
                    if first.len() != row.len() {
                        return Err(Self::error_at(&start, "matrix rows have different lengths"));
                    }
                }
                rows.push(row);
                if self.peek().tok == Tok::Comma {
                    self.next();
                } else {
                    break;
                }
            }
            self.expect(Tok::RBracket)?;
            let shape = Shape::Matrix(rows.len(), rows[0].len());
            Ok((shape, rows.concat()))
        } else {
            let v = self.number_list()?;
            Ok((Shape::Vector(v.len()), v))
        }
    }

    /// Comma-separated signed numbers followed by `]`.
    fn number_list(&mut self) -> Result<Vec<f64>, DslError> {
        let mut v = vec![self.signed_number()?];
        while self.peek().tok == Tok::Comma {
            self.next();
            v.push(self.signed_number()?);
        }
        self.expect(Tok::RBracket)?;
        if v.len() > MAX_DIM {
            return Err(self.error("literal too long"));
        }
        Ok(v)
    }

    fn signed_number(&mut self) -> Result<f64, DslError> {
        let neg = if self.peek().tok == Tok::Minus {
            self.next();
            true
        } else {
            false
        };
        let t = self.next();
        match &t.tok {
            Tok::Number(v, _) => Ok(if neg { -v } else { *v }),
            other => Err(Self::error_at(&t, format!("expected a number, found {}", other.describe()))),
        }
    }

    fn enter(&mut self) -> Result<(), DslError> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return Err(self.error("expression nested too deeply"));
        }
        Ok(())
    }

    fn expr(&mut self) -> Result<Expr, DslError> {
        self.enter()?;
        let mut left = self.term()?;
        loop {
            let op = self.peek().clone();
            // a sign opening a new line starts the next constraint
            if op.line > self.tokens[self.pos - 1].line {
                break;
            }
            let negate = match op.tok {
                Tok::Plus => false,
                Tok::Minus => true,
                _ => break,
            };
            self.next();
            let right = self.term()?;
            let right = if negate { Expr::neg(right) } else { right };
            left = Expr::add(left, right);
            self.shape_of(&left, &op)?;
        }
        self.depth -= 1;
        Ok(left)
    }

    fn term(&mut self) -> Result<Expr, DslError> {
        let (mut left, mut transposed) = self.unary()?;
        while self.peek().tok == Tok::Star {
            let op = self.next();
            let (right, right_t) = self.unary()?;
            if right_t {
                return Err(Self::error_at(&op, "transpose is only valid on the left of '*'"));
            }
            let product = if transposed {
                Expr::inner(left, right)
            } else {
                let ls = self.shape_of(&left, &op)?;
                let rs = self.shape_of(&right, &op)?;
                match (ls, rs) {
                    (Shape::Matrix(..), _) => Expr::matvec(left, right),
                    (l, _) if l.is_scalar() => Expr::scale(left, right),
                    (_, r) if r.is_scalar() => Expr::scale(right, left),
                    (l, r) => {
                        return Err(Self::error_at(
                            &op,
                            format!("cannot multiply {l:?} by {r:?}; use a' * b for inner products"),
                        ))
                    }
                }
            };
            self.shape_of(&product, &op)?;
            left = product;
            transposed = false;
        }
        if transposed {
            return Err(self.error("transpose must be followed by '*'"));
        }
        Ok(left)
    }

    /// Returns the expression and whether it carried a trailing `'`.
    fn unary(&mut self) -> Result<(Expr, bool), DslError> {
        self.enter()?;
        let out = if self.peek().tok == Tok::Minus {
            if let Tok::Number(v, _) = self.peek_at(1).clone() {
                self.next();
                self.next();
                self.postfix(Expr::scalar(-v))?
            } else {
                let op = self.next();
                let (inner, t) = self.unary()?;
                if t {
                    return Err(Self::error_at(&op, "transpose must be followed by '*'"));
                }
                (Expr::neg(inner), false)
            }
        } else {
            let p = self.primary()?;
            self.postfix(p)?
        };
        self.depth -= 1;
        Ok(out)
    }

    fn postfix(&mut self, mut e: Expr) -> Result<(Expr, bool), DslError> {
        loop {
            match self.peek().tok {
                Tok::LBracket if self.peek().line == self.tokens[self.pos - 1].line => {
                    let open = self.next();
                    let start = self.integer()?;
                    let end = if self.peek().tok == Tok::Colon {
                        self.next();
                        self.integer()?
                    } else {
                        start + 1
                    };
                    self.expect(Tok::RBracket)?;
                    e = Expr::atom(Atom::AffineIndex { start, end }, vec![e]);
                    self.shape_of(&e, &open)?;
                }
                Tok::Quote => {
                    self.next();
                    return Ok((e, true));
                }
                _ => return Ok((e, false)),
            }
        }
    }

    fn primary(&mut self) -> Result<Expr, DslError> {
        let t = self.peek().clone();
        match &t.tok {
            Tok::Number(v, _) => {
                self.next();
                Ok(Expr::scalar(*v))
            }
            Tok::LBracket => {
                let (shape, values) = self.literal()?;
                Ok(Expr::Constant { shape, values })
            }
            Tok::LParen => {
                self.next();
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Tok::Ident(name) if *self.peek_at(1) == Tok::LParen && FUNCTIONS.contains(&name.as_str()) => {
                self.next();
                self.next();
                let mut args = vec![self.expr()?];
                while self.peek().tok == Tok::Comma {
                    self.next();
                    args.push(self.expr()?);
                }
                self.expect(Tok::RParen)?;
                let atom = match name.as_str() {
                    "sum" => Atom::Sum,
                    "sum_squares" => Atom::SumSquares,
                    "quad_over_identity" => Atom::QuadOverIdentity,
                    "norm1" => Atom::Norm1,
                    _ => Atom::MaxElementwise,
                };
                if atom != Atom::MaxElementwise && args.len() != 1 {
                    return Err(DslError::Arity {
                        line: t.line,
                        col: t.col,
                        function: name.clone(),
                        expected: "1".into(),
                        found: args.len(),
                    });
                }
                let e = Expr::atom(atom, args);
                self.shape_of(&e, &t)?;
                Ok(e)
            }
            Tok::Ident(name) => {
                self.next();
                if let Some(&dim) = self.vars.get(name) {
                    Ok(Expr::var(name, dim))
                } else if let Some(&shape) = self.params.get(name) {
                    Ok(Expr::param(name, shape))
                } else {
                    Err(DslError::UndeclaredIdentifier { line: t.line, col: t.col, name: name.clone() })
                }
            }
            other => Err(Self::error_at(&t, format!("expected an expression, found {}", other.describe()))),
        }
    }
}
