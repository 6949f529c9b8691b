//! Sequential networks mixing affine maps, ReLUs and QP layers, with a
//! single-use reverse-mode tape.
//!
//! The QP constructions reproduce three expressivity results: ReLU as the
//! projection `min ‖z − v‖² s.t. z ≥ 0`, the maximum of affine functions as
//! `min z² s.t. aᵢᵀx ≤ z`, and scalar piecewise-linear maps
//! `Σᵢ wᵢ max(aᵢx + bᵢ, 0)` as `min ‖t‖² + ‖z − wᵀt‖² s.t. aᵢx + bᵢ ≤ tᵢ`.
//!
//! The max-affine construction returns `max(0, maxᵢ aᵢᵀx)`: when every
//! affine piece is negative the optimum is `z = 0`, not the maximum.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dpp::{asa_backward, asa_forward, canonicalize, AsaForm, DppError, Shape, SolveRecord};
use crate::dsl::{parse_problem, DslError};
use crate::qp::{solve_qp, validate_problem, QpError, QpProblem, QpSolution, SolveStatus, SolverConfig, ValidatedProblem};
use crate::qp_diff::{backward, fd_solver_config, BackwardSeeds, DiffError};

#[derive(Debug, Error)]
pub enum LayerError {
    #[error("layer {layer}: input has {found} entries, expected {expected}")]
    Dimension { layer: usize, expected: usize, found: usize },
    #[error("layer {layer}: invalid QP data: {source}")]
    Qp { layer: usize, source: QpError },
    #[error("layer {layer}: solver returned {status:?}")]
    Solver { layer: usize, status: SolveStatus },
    #[error("layer {layer}: {source}")]
    Diff { layer: usize, source: DiffError },
    #[error("layer {layer}: {source}")]
    Dpp { layer: usize, source: DppError },
    #[error("problem text: {0}")]
    Dsl(#[from] DslError),
    #[error("invalid layer: {0}")]
    Invalid(String),
    #[error("tape has {records} records but {layers} layers were given")]
    TapeMismatch { records: usize, layers: usize },
}

/// A QP layer whose data comes from a parametrized problem. The layer input
/// binds to the first declared parameter and `learned` to the rest, in
/// declaration order. The output is every variable, concatenated.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DppLayer {
    pub source: String,
    pub learned: DVector<f64>,
    #[serde(skip)]
    form: Option<Arc<AsaForm>>,
    #[serde(skip)]
    input_dim: usize,
}

impl DppLayer {
    pub fn new(source: &str, learned: DVector<f64>) -> Result<Self, LayerError> {
        let mut l = Self { source: source.to_string(), learned, form: None, input_dim: 0 };
        l.prepare()?;
        Ok(l)
    }

    /// Canonicalizes the source once; needed after deserialization.
    pub fn prepare(&mut self) -> Result<(), LayerError> {
        if self.form.is_some() {
            return Ok(());
        }
        let parsed = parse_problem(&self.source)?;
        let first = parsed
            .problem
            .parameters
            .first()
            .ok_or_else(|| LayerError::Invalid("problem declares no parameters".into()))?;
        let input_dim = match first.1 {
            Shape::Vector(d) => d,
            Shape::Matrix(..) => return Err(LayerError::Invalid("first parameter must be a vector".into())),
        };
        let form = canonicalize(&parsed.problem).map_err(|source| LayerError::Dpp { layer: 0, source })?;
        if form.n_params != input_dim + self.learned.len() {
            return Err(LayerError::Invalid(format!(
                "problem has {} parameter entries, input and learned values give {}",
                form.n_params,
                input_dim + self.learned.len()
            )));
        }
        self.input_dim = input_dim;
        self.form = Some(Arc::new(form));
        Ok(())
    }

    pub fn form(&self) -> Option<&AsaForm> {
        self.form.as_deref()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    Affine { w: DMatrix<f64>, bias: DVector<f64> },
    ReluExplicit { dim: usize },
    /// `min ‖z − v‖² s.t. z ≥ 0`.
    ReluQp { dim: usize },
    /// Rows of `a` are the affine pieces `aᵢ`.
    MaxAffine { a: DMatrix<f64> },
    /// Row `j` holds the `k` branches applied to input coordinate `j`.
    PiecewiseLinear { w: DMatrix<f64>, a: DMatrix<f64>, b: DMatrix<f64> },
    Dpp(DppLayer),
}

pub fn relu_as_qp(n: usize) -> Layer {
    Layer::ReluQp { dim: n }
}

pub fn max_affine_layer(a_list: &[DVector<f64>]) -> Result<Layer, LayerError> {
    let n = a_list.first().map(|a| a.len()).ok_or_else(|| LayerError::Invalid("need at least one piece".into()))?;
    if a_list.iter().any(|a| a.len() != n) {
        return Err(LayerError::Invalid("affine pieces differ in length".into()));
    }
    let a = DMatrix::from_fn(a_list.len(), n, |i, j| a_list[i][j]);
    Ok(Layer::MaxAffine { a })
}

/// Scalar piecewise-linear map with `k` branches.
pub fn piecewise_linear_layer(w: &[f64], a: &[f64], b: &[f64]) -> Result<Layer, LayerError> {
    let k = w.len();
    if k == 0 || a.len() != k || b.len() != k {
        return Err(LayerError::Invalid("w, a, b must have the same nonzero length".into()));
    }
    if w.iter().any(|&s| s != 1.0 && s != -1.0) {
        return Err(LayerError::Invalid("branch signs must be ±1".into()));
    }
    Ok(Layer::PiecewiseLinear {
        w: DMatrix::from_row_slice(1, k, w),
        a: DMatrix::from_row_slice(1, k, a),
        b: DMatrix::from_row_slice(1, k, b),
    })
}

/// Solver settings used by every QP layer.
pub fn layer_solver_config() -> SolverConfig {
    fd_solver_config()
}

impl Layer {
    pub fn input_dim(&self) -> usize {
        match self {
            Layer::Affine { w, .. } => w.ncols(),
            Layer::ReluExplicit { dim } | Layer::ReluQp { dim } => *dim,
            Layer::MaxAffine { a } => a.ncols(),
            Layer::PiecewiseLinear { w, .. } => w.nrows(),
            Layer::Dpp(d) => d.input_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Layer::Affine { w, .. } => w.nrows(),
            Layer::ReluExplicit { dim } | Layer::ReluQp { dim } => *dim,
            Layer::MaxAffine { .. } => 1,
            Layer::PiecewiseLinear { w, .. } => w.nrows(),
            Layer::Dpp(d) => d.form.as_ref().map_or(0, |f| f.retriever.index.len()),
        }
    }

    /// Learnable slots, in the order [`LayerGrad::slots`] reports them.
    pub fn slot_names(&self) -> &'static [&'static str] {
        match self {
            Layer::Affine { .. } => &["w", "bias"],
            Layer::ReluExplicit { .. } | Layer::ReluQp { .. } => &[],
            Layer::MaxAffine { .. } => &["a"],
            Layer::PiecewiseLinear { .. } => &["w", "a", "b"],
            Layer::Dpp(_) => &["learned"],
        }
    }

    /// Learnable values flattened column-major, slot after slot.
    pub fn params(&self) -> Vec<f64> {
        match self {
            Layer::Affine { w, bias } => w.iter().chain(bias.iter()).copied().collect(),
            Layer::ReluExplicit { .. } | Layer::ReluQp { .. } => vec![],
            Layer::MaxAffine { a } => a.iter().copied().collect(),
            Layer::PiecewiseLinear { w, a, b } => w.iter().chain(a.iter()).chain(b.iter()).copied().collect(),
            Layer::Dpp(d) => d.learned.iter().copied().collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().len()
    }

    pub fn set_params(&mut self, values: &[f64]) -> Result<(), LayerError> {
        if values.len() != self.param_count() {
            return Err(LayerError::Invalid(format!(
                "got {} values for {} parameters",
                values.len(),
                self.param_count()
            )));
        }
        let mut it = values.iter().copied();
        let mut fill = |m: &mut [f64]| m.iter_mut().for_each(|v| *v = it.next().unwrap_or(0.0));
        match self {
            Layer::Affine { w, bias } => {
                fill(w.as_mut_slice());
                fill(bias.as_mut_slice());
            }
            Layer::ReluExplicit { .. } | Layer::ReluQp { .. } => {}
            Layer::MaxAffine { a } => fill(a.as_mut_slice()),
            Layer::PiecewiseLinear { w, a, b } => {
                fill(w.as_mut_slice());
                fill(a.as_mut_slice());
                fill(b.as_mut_slice());
            }
            Layer::Dpp(d) => fill(d.learned.as_mut_slice()),
        }
        Ok(())
    }

    /// QP blocks for a given input, for the layers that solve one.
    pub fn qp_for_input(&self, x: &DVector<f64>) -> Option<QpProblem> {
        match self {
            Layer::ReluQp { dim } => {
                let n = *dim;
                Some(
                    QpProblem::unconstrained(DMatrix::identity(n, n) * 2.0, x * -2.0)
                        .with_inequalities(-DMatrix::identity(n, n), DVector::zeros(n)),
                )
            }
            Layer::MaxAffine { a } => {
                let k = a.nrows();
                Some(
                    QpProblem::unconstrained(DMatrix::from_element(1, 1, 2.0), DVector::zeros(1))
                        .with_inequalities(DMatrix::from_element(k, 1, -1.0), -(a * x)),
                )
            }
            Layer::PiecewiseLinear { w, a, b } => {
                let (n, k) = w.shape();
                let dim = n + n * k;
                let wm = spread(w);
                let mut p = DMatrix::zeros(dim, dim);
                p.view_mut((0, 0), (n, n)).fill_with_identity();
                p.view_mut((0, n), (n, n * k)).copy_from(&-&wm);
                p.view_mut((n, 0), (n * k, n)).copy_from(&-wm.transpose());
                let tt = DMatrix::identity(n * k, n * k) + wm.transpose() * &wm;
                p.view_mut((n, n), (n * k, n * k)).copy_from(&tt);
                let mut g = DMatrix::zeros(n * k, dim);
                let mut h = DVector::zeros(n * k);
                for j in 0..n {
                    for l in 0..k {
                        let r = j * k + l;
                        g[(r, n + r)] = -1.0;
                        h[r] = -(a[(j, l)] * x[j] + b[(j, l)]);
                    }
                }
                Some(QpProblem::unconstrained(p * 2.0, DVector::zeros(dim)).with_inequalities(g, h))
            }
            _ => None,
        }
    }
}

/// `n × nk` matrix whose row `j` carries `w[j, :]` in columns `jk..(j+1)k`.
fn spread(w: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, k) = w.shape();
    let mut m = DMatrix::zeros(n, n * k);
    for j in 0..n {
        for l in 0..k {
            m[(j, j * k + l)] = w[(j, l)];
        }
    }
    m
}

/// Closed form of the piecewise-linear layer, used as a reference.
pub fn piecewise_reference(w: &DMatrix<f64>, a: &DMatrix<f64>, b: &DMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(w.nrows(), |j, _| {
        (0..w.ncols()).map(|l| w[(j, l)] * (a[(j, l)] * x[j] + b[(j, l)]).max(0.0)).sum()
    })
}

#[derive(Debug, Clone)]
enum Solved {
    None,
    Qp { problem: ValidatedProblem, solution: QpSolution },
    Dpp(SolveRecord),
}

#[derive(Debug, Clone)]
struct Record {
    input: DVector<f64>,
    solved: Solved,
}

/// Forward records of one pass. [`tape_backward`] consumes it.
#[derive(Debug)]
pub struct Tape {
    records: Vec<Record>,
}

impl Tape {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Canonical or layer-level QP solutions, `None` for closed-form layers.
    pub fn solutions(&self) -> Vec<Option<&QpSolution>> {
        self.records
            .iter()
            .map(|r| match &r.solved {
                Solved::None => None,
                Solved::Qp { solution, .. } => Some(solution),
                Solved::Dpp(rec) => Some(&rec.solution),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    /// Gradient per learnable slot, flattened like [`Layer::params`].
    pub slots: Vec<(&'static str, DVector<f64>)>,
    /// Degenerate constraints of the layer's QP, if any.
    pub degenerate: Vec<usize>,
}

impl LayerGrad {
    pub fn flat(&self) -> Vec<f64> {
        self.slots.iter().flat_map(|(_, g)| g.iter().copied()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub input: DVector<f64>,
    pub layers: Vec<LayerGrad>,
}

fn forward_one(i: usize, layer: &Layer, x: &DVector<f64>, cfg: &SolverConfig) -> Result<(DVector<f64>, Solved), LayerError> {
    if x.len() != layer.input_dim() {
        return Err(LayerError::Dimension { layer: i, expected: layer.input_dim(), found: x.len() });
    }
    match layer {
        Layer::Affine { w, bias } => Ok((w * x + bias, Solved::None)),
        Layer::ReluExplicit { .. } => Ok((x.map(|v| v.max(0.0)), Solved::None)),
        Layer::Dpp(d) => {
            let form = d.form.as_ref().ok_or_else(|| LayerError::Invalid(format!("layer {i} is not prepared")))?;
            let theta = DVector::from_iterator(form.n_params, x.iter().chain(d.learned.iter()).copied());
            let (out, rec) = asa_forward(form, &theta, cfg).map_err(|source| LayerError::Dpp { layer: i, source })?;
            Ok((out, Solved::Dpp(rec)))
        }
        _ => {
            let qp = layer.qp_for_input(x).expect("QP layer");
            let problem = validate_problem(qp).map_err(|source| LayerError::Qp { layer: i, source })?;
            let solution = solve_qp(&problem, cfg).map_err(|source| LayerError::Qp { layer: i, source })?;
            if !solution.is_optimal() {
                return Err(LayerError::Solver { layer: i, status: solution.status });
            }
            let out = match layer {
                Layer::PiecewiseLinear { w, .. } => solution.z_star.rows(0, w.nrows()).into_owned(),
                _ => solution.z_star.clone(),
            };
            Ok((out, Solved::Qp { problem, solution }))
        }
    }
}

pub fn tape_forward(layers: &[Layer], input: &DVector<f64>) -> Result<(DVector<f64>, Tape), LayerError> {
    let cfg = layer_solver_config();
    let mut x = input.clone();
    let mut records = Vec::with_capacity(layers.len());
    for (i, layer) in layers.iter().enumerate() {
        let (out, solved) = forward_one(i, layer, &x, &cfg)?;
        records.push(Record { input: x, solved });
        x = out;
    }
    Ok((x, Tape { records }))
}

/// Forward pass without recording.
pub fn predict(layers: &[Layer], input: &DVector<f64>) -> Result<DVector<f64>, LayerError> {
    tape_forward(layers, input).map(|(y, _)| y)
}

pub fn tape_backward(tape: Tape, layers: &[Layer], dl_dout: &DVector<f64>) -> Result<Gradients, LayerError> {
    if tape.records.len() != layers.len() {
        return Err(LayerError::TapeMismatch { records: tape.records.len(), layers: layers.len() });
    }
    let mut g = dl_dout.clone();
    let mut grads = Vec::with_capacity(layers.len());
    for (i, (layer, rec)) in layers.iter().zip(tape.records).enumerate().rev() {
        if g.len() != layer.output_dim() {
            return Err(LayerError::Dimension { layer: i, expected: layer.output_dim(), found: g.len() });
        }
        let (g_in, lg) = backward_one(i, layer, rec, &g)?;
        grads.push(lg);
        g = g_in;
    }
    grads.reverse();
    Ok(Gradients { input: g, layers: grads })
}

fn backward_one(i: usize, layer: &Layer, rec: Record, g: &DVector<f64>) -> Result<(DVector<f64>, LayerGrad), LayerError> {
    let x = &rec.input;
    let plain = |slots| LayerGrad { slots, degenerate: vec![] };
    match (layer, rec.solved) {
        (Layer::Affine { w, .. }, _) => {
            let dw = g * x.transpose();
            Ok((w.transpose() * g, plain(vec![("w", DVector::from_column_slice(dw.as_slice())), ("bias", g.clone())])))
        }
        (Layer::ReluExplicit { .. }, _) => {
            Ok((g.zip_map(x, |gi, xi| if xi > 0.0 { gi } else { 0.0 }), plain(vec![])))
        }
        (Layer::Dpp(d), Solved::Dpp(sr)) => {
            let form = d.form.as_ref().ok_or_else(|| LayerError::Invalid(format!("layer {i} is not prepared")))?;
            let grad = asa_backward(form, &sr, g).map_err(|source| LayerError::Dpp { layer: i, source })?;
            let n_in = d.input_dim;
            let g_in = grad.theta.rows(0, n_in).into_owned();
            let g_learned = grad.theta.rows(n_in, form.n_params - n_in).into_owned();
            Ok((g_in, LayerGrad { slots: vec![("learned", g_learned)], degenerate: grad.degenerate }))
        }
        (_, Solved::Qp { problem, solution }) => {
            let mut seed = DVector::zeros(solution.z_star.len());
            seed.rows_mut(0, g.len()).copy_from(g);
            let (pg, triple) = backward(&problem, &solution, &BackwardSeeds::new(seed))
                .map_err(|source| LayerError::Diff { layer: i, source })?;
            let degenerate = triple.degenerate;
            match layer {
                Layer::ReluQp { .. } => Ok((pg.g_q * -2.0, LayerGrad { slots: vec![], degenerate })),
                Layer::MaxAffine { a } => {
                    // h = −A x
                    let g_in = -(a.transpose() * &pg.g_h);
                    let da = -(&pg.g_h * x.transpose());
                    Ok((g_in, LayerGrad { slots: vec![("a", DVector::from_column_slice(da.as_slice()))], degenerate }))
                }
                Layer::PiecewiseLinear { w, a, .. } => {
                    let (n, k) = w.shape();
                    let gp = &pg.g_p;
                    let wm = spread(w);
                    // P = 2 [[I, −W], [−Wᵀ, I + WᵀW]]
                    let g_zt = gp.view((0, n), (n, n * k));
                    let g_tz = gp.view((n, 0), (n * k, n));
                    let g_tt = gp.view((n, n), (n * k, n * k));
                    let dwm = (g_zt + g_tz.transpose()) * -2.0 + &wm * (g_tt + g_tt.transpose()) * 2.0;
                    let mut dw = DMatrix::zeros(n, k);
                    let mut da = DMatrix::zeros(n, k);
                    let mut db = DMatrix::zeros(n, k);
                    let mut g_in = DVector::zeros(n);
                    for j in 0..n {
                        for l in 0..k {
                            let r = j * k + l;
                            dw[(j, l)] = dwm[(j, r)];
                            da[(j, l)] = -pg.g_h[r] * x[j];
                            db[(j, l)] = -pg.g_h[r];
                            g_in[j] -= pg.g_h[r] * a[(j, l)];
                        }
                    }
                    let flat = |m: DMatrix<f64>| DVector::from_column_slice(m.as_slice());
                    Ok((g_in, LayerGrad { slots: vec![("w", flat(dw)), ("a", flat(da)), ("b", flat(db))], degenerate }))
                }
                _ => unreachable!("closed-form layers carry no QP"),
            }
        }
        _ => Err(LayerError::Invalid(format!("layer {i}: tape record does not match the layer"))),
    }
}

/// Reads a layer stack from JSON and prepares any problem-backed layers.
pub fn layers_from_json(text: &str) -> Result<Vec<Layer>, LayerError> {
    let mut layers: Vec<Layer> = serde_json::from_str(text).map_err(|e| LayerError::Invalid(e.to_string()))?;
    for (i, l) in layers.iter_mut().enumerate() {
        if let Layer::Dpp(d) = l {
            d.prepare().map_err(|e| match e {
                LayerError::Dpp { source, .. } => LayerError::Dpp { layer: i, source },
                other => other,
            })?;
        }
    }
    Ok(layers)
}

pub fn layers_to_json(layers: &[Layer]) -> String {
    serde_json::to_string_pretty(layers).expect("layers serialize")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(v)
    }

    #[test]
    fn relu_qp_projects() {
        let (z, _) = tape_forward(&[relu_as_qp(3)], &dv(&[1.0, -2.0, 0.0])).unwrap();
        assert!((z - dv(&[1.0, 0.0, 0.0])).amax() < 1e-8);
        let (z, tape) = tape_forward(&[relu_as_qp(2)], &dv(&[0.3, 2.0])).unwrap();
        assert!((z - dv(&[0.3, 2.0])).amax() < 1e-8);
        let s = tape.solutions()[0].unwrap();
        assert!(s.slack.iter().all(|&v| v > 0.1));
    }

    #[test]
    fn relu_qp_gradient() {
        let layers = [relu_as_qp(2)];
        let (_, tape) = tape_forward(&layers, &dv(&[1.0, -2.0])).unwrap();
        let g = tape_backward(tape, &layers, &dv(&[1.0, 1.0])).unwrap();
        assert!((g.input - dv(&[1.0, 0.0])).amax() < 1e-6);
    }

    #[test]
    fn max_affine_examples() {
        let layer = max_affine_layer(&[dv(&[1.0, 0.0]), dv(&[-1.0, 0.0]), dv(&[0.0, 0.0])]).unwrap();
        for (x, want) in [([1.0, 5.0], 1.0), ([0.0, 0.0], 0.0), ([-2.0, 0.0], 2.0)] {
            let z = predict(std::slice::from_ref(&layer), &dv(&x)).unwrap();
            assert!((z[0] - want).abs() < 1e-8, "{x:?}: {}", z[0]);
        }
        // every piece negative: the construction clamps at zero
        let neg = max_affine_layer(&[dv(&[1.0]), dv(&[2.0])]).unwrap();
        let z = predict(&[neg], &dv(&[-1.0])).unwrap();
        assert!(z[0].abs() < 1e-8);
    }

    #[test]
    fn piecewise_examples() {
        let relu = piecewise_linear_layer(&[1.0], &[1.0], &[0.0]).unwrap();
        for x in [-1.5, 0.7, 3.0] {
            let z = predict(std::slice::from_ref(&relu), &dv(&[x])).unwrap();
            assert!((z[0] - x.max(0.0)).abs() < 1e-8);
        }
        let ramp = piecewise_linear_layer(&[1.0, -1.0], &[1.0, 1.0], &[0.0, -1.0]).unwrap();
        for (x, want) in [(-1.0, 0.0), (0.5, 0.5), (2.0, 1.0)] {
            let z = predict(std::slice::from_ref(&ramp), &dv(&[x])).unwrap();
            assert!((z[0] - want).abs() < 1e-8, "{x}: {}", z[0]);
        }
        let (_, tape) = tape_forward(std::slice::from_ref(&ramp), &dv(&[-50.0])).unwrap();
        assert!(tape.solutions()[0].unwrap().z_star.amax() < 1e-8);
    }

    #[test]
    fn parameter_counts() {
        let w = DMatrix::from_element(3, 4, 1.0);
        assert_eq!(Layer::PiecewiseLinear { w: w.clone(), a: w.clone(), b: w }.param_count(), 3 * 3 * 4);
        assert_eq!(Layer::Affine { w: DMatrix::zeros(5, 2), bias: DVector::zeros(5) }.param_count(), 5 * 2 + 5);
        let a: Vec<_> = (0..4).map(|_| DVector::zeros(3)).collect();
        assert_eq!(max_affine_layer(&a).unwrap().param_count(), 12);
        assert_eq!(relu_as_qp(7).param_count(), 0);
    }

    #[test]
    fn affine_gradients_and_identity() {
        let layers = [Layer::Affine { w: DMatrix::identity(2, 2), bias: DVector::zeros(2) }];
        let x = dv(&[0.4, -0.9]);
        let (y, tape) = tape_forward(&layers, &x).unwrap();
        assert_eq!(y, x);
        let g = tape_backward(tape, &layers, &dv(&[1.0, 1.0])).unwrap();
        assert_eq!(g.layers[0].slots[1].1, dv(&[1.0, 1.0]));
        assert_eq!(g.layers[0].slots[0].1, dv(&[0.4, 0.4, -0.9, -0.9]));
        let (y, _) = tape_forward(&[], &x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn dimension_errors_name_the_layer() {
        let layers = [relu_as_qp(2), relu_as_qp(3)];
        match tape_forward(&layers, &dv(&[1.0, 2.0])) {
            Err(LayerError::Dimension { layer: 1, expected: 3, found: 2 }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dpp_layer_matches_relu() {
        let layer = DppLayer::new("var z[2]\nparam v[2]\nminimize quad_over_identity(z - v)\nsubject to\n  -z <= 0", DVector::zeros(0))
            .unwrap();
        let layers = [Layer::Dpp(layer)];
        let (z, tape) = tape_forward(&layers, &dv(&[1.0, -2.0])).unwrap();
        assert!((z - dv(&[1.0, 0.0])).amax() < 1e-8);
        let g = tape_backward(tape, &layers, &dv(&[1.0, 1.0])).unwrap();
        assert!((g.input - dv(&[1.0, 0.0])).amax() < 1e-6);
    }

    #[test]
    fn json_roundtrip() {
        let layers = vec![
            Layer::Affine { w: DMatrix::from_row_slice(1, 2, &[1.0, 2.0]), bias: dv(&[0.5]) },
            relu_as_qp(1),
            Layer::Dpp(DppLayer::new("var z[1] param v[1] minimize quad_over_identity(z - v)", DVector::zeros(0)).unwrap()),
        ];
        let back = layers_from_json(&layers_to_json(&layers)).unwrap();
        let x = dv(&[0.3, -0.1]);
        assert_eq!(predict(&layers, &x).unwrap(), predict(&back, &x).unwrap());
    }
}
