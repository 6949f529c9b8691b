//! Sparse coordinate tensors for affine expressions in `(x̃, θ̃)`.
//!
//! An expression with `d` rows is stored as entries `(row, col, slice)`;
//! row `i` evaluates to `Σ T[i, j, l] x̃_j θ̃_l` with `x̃ = (x, 1)` and
//! `θ̃ = (θ, 1)`. The constant column is [`CONST_COL`] until the canonical
//! variable count is known.

use std::collections::BTreeMap;

use super::DppError;

/// Placeholder for the `1` entry of `x̃`; sorts after every variable column.
pub const CONST_COL: usize = usize::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseTensor {
    pub rows: usize,
    /// Index of the constant slice (`p`).
    pub const_slice: usize,
    pub entries: BTreeMap<(usize, usize, usize), f64>,
}

impl SparseTensor {
    pub fn zeros(rows: usize, const_slice: usize) -> Self {
        Self { rows, const_slice, entries: BTreeMap::new() }
    }

    pub fn variable(offset: usize, dim: usize, const_slice: usize) -> Self {
        let mut t = Self::zeros(dim, const_slice);
        for i in 0..dim {
            t.entries.insert((i, offset + i, const_slice), 1.0);
        }
        t
    }

    pub fn parameter(offset: usize, size: usize, const_slice: usize) -> Self {
        let mut t = Self::zeros(size, const_slice);
        for i in 0..size {
            t.entries.insert((i, CONST_COL, offset + i), 1.0);
        }
        t
    }

    pub fn constant(values: &[f64], const_slice: usize) -> Self {
        let mut t = Self::zeros(values.len(), const_slice);
        for (i, &v) in values.iter().enumerate() {
            if v != 0.0 {
                t.entries.insert((i, CONST_COL, const_slice), v);
            }
        }
        t
    }

    fn accumulate(&mut self, key: (usize, usize, usize), v: f64) {
        let e = self.entries.entry(key).or_insert(0.0);
        *e += v;
        if *e == 0.0 {
            self.entries.remove(&key);
        }
    }

    pub fn is_variable_free(&self) -> bool {
        self.entries.keys().all(|&(_, c, _)| c == CONST_COL)
    }

    pub fn is_parameter_free(&self) -> bool {
        self.entries.keys().all(|&(_, _, l)| l == self.const_slice)
    }

    /// Repeats a single row `rows` times.
    pub fn broadcast(&self, rows: usize) -> Self {
        if self.rows == rows {
            return self.clone();
        }
        debug_assert_eq!(self.rows, 1);
        let mut t = Self::zeros(rows, self.const_slice);
        for i in 0..rows {
            for (&(_, c, l), &v) in &self.entries {
                t.entries.insert((i, c, l), v);
            }
        }
        t
    }

    /// Sum with scalar broadcasting.
    pub fn add(&self, other: &Self) -> Self {
        let rows = self.rows.max(other.rows);
        let mut out = self.broadcast(rows);
        for (&k, &v) in &other.broadcast(rows).entries {
            out.accumulate(k, v);
        }
        out
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut t = Self::zeros(self.rows, self.const_slice);
        if s != 0.0 {
            t.entries = self.entries.iter().map(|(&k, &v)| (k, s * v)).collect();
        }
        t
    }

    pub fn select_rows(&self, start: usize, end: usize) -> Self {
        let mut t = Self::zeros(end - start, self.const_slice);
        for (&(i, c, l), &v) in self.entries.range((start, 0, 0)..(end, 0, 0)) {
            t.entries.insert((i - start, c, l), v);
        }
        t
    }

    pub fn sum_rows(&self) -> Self {
        let mut t = Self::zeros(1, self.const_slice);
        for (&(_, c, l), &v) in &self.entries {
            t.accumulate((0, c, l), v);
        }
        t
    }

    /// Stacks rows of `others` below `self`.
    pub fn vstack(&self, other: &Self) -> Self {
        let mut t = self.clone();
        for (&(i, c, l), &v) in &other.entries {
            t.entries.insert((self.rows + i, c, l), v);
        }
        t.rows += other.rows;
        t
    }

    /// Per-row coefficients of a variable-free tensor: `(row, slice) → v`.
    pub fn coefficients(&self) -> BTreeMap<(usize, usize), f64> {
        self.entries.iter().map(|(&(i, _, l), &v)| ((i, l), v)).collect()
    }

    /// Value when every entry is constant.
    pub fn constant_values(&self) -> Option<Vec<f64>> {
        if !self.is_variable_free() || !self.is_parameter_free() {
            return None;
        }
        let mut out = vec![0.0; self.rows];
        for (&(i, _, _), &v) in &self.entries {
            out[i] = v;
        }
        Some(out)
    }

    /// Renames the constant column once the canonical variable count is
    /// fixed.
    pub fn with_const_col(&self, col: usize) -> Self {
        let mut t = Self::zeros(self.rows, self.const_slice);
        for (&(i, c, l), &v) in &self.entries {
            t.entries.insert((i, if c == CONST_COL { col } else { c }, l), v);
        }
        t
    }
}

/// The linear action of a node on one argument: `(out_row, arg_row, slice)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearAction {
    pub rows: usize,
    pub entries: BTreeMap<(usize, usize, usize), f64>,
}

impl LinearAction {
    pub fn new(rows: usize) -> Self {
        Self { rows, entries: BTreeMap::new() }
    }

    pub fn insert(&mut self, out_row: usize, arg_row: usize, slice: usize, v: f64) {
        if v != 0.0 {
            *self.entries.entry((out_row, arg_row, slice)).or_insert(0.0) += v;
        }
    }
}

/// `ψ(T, S)`: composes the linear action `T` with the argument tensor `S`.
///
/// If `T` lives only on the constant slice, every slice of `S` is mapped by
/// `T`'s constant slice; otherwise `S` must be parameter-free and every
/// slice of `T` is applied to `S`'s constant slice.
pub fn psi(t: &LinearAction, s: &SparseTensor) -> Result<SparseTensor, DppError> {
    let p = s.const_slice;
    let t_param_free = t.entries.keys().all(|&(_, _, l)| l == p);
    let mut by_row: BTreeMap<usize, Vec<(usize, usize, f64)>> = BTreeMap::new();
    for (&(k, c, l), &v) in &s.entries {
        by_row.entry(k).or_default().push((c, l, v));
    }
    let mut out = SparseTensor::zeros(t.rows, p);
    if t_param_free {
        for (&(i, k, _), &tv) in &t.entries {
            for &(c, l, sv) in by_row.get(&k).into_iter().flatten() {
                out.accumulate((i, c, l), tv * sv);
            }
        }
    } else {
        if !s.is_parameter_free() {
            return Err(DppError::NotDpp("both factors of a product depend on parameters".into()));
        }
        for (&(i, k, l), &tv) in &t.entries {
            for &(c, _, sv) in by_row.get(&k).into_iter().flatten() {
                out.accumulate((i, c, l), tv * sv);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaves() {
        let v = SparseTensor::variable(2, 2, 3);
        assert_eq!(v.entries.len(), 2);
        assert_eq!(v.entries[&(1, 3, 3)], 1.0);
        let p = SparseTensor::parameter(1, 2, 3);
        assert_eq!(p.entries[&(1, CONST_COL, 2)], 1.0);
        assert!(p.is_variable_free() && !p.is_parameter_free());
        let c = SparseTensor::constant(&[0.0, 4.0], 3);
        assert_eq!(c.constant_values(), Some(vec![0.0, 4.0]));
    }

    #[test]
    fn psi_parameter_times_variable() {
        // θ₀ · x₀ with p = 1
        let x = SparseTensor::variable(0, 1, 1);
        let mut t = LinearAction::new(1);
        t.insert(0, 0, 0, 1.0);
        let out = psi(&t, &x).unwrap();
        assert_eq!(out.entries.len(), 1);
        assert_eq!(out.entries[&(0, 0, 0)], 1.0);
    }

    #[test]
    fn psi_rejects_parameter_products() {
        let theta = SparseTensor::parameter(0, 1, 1);
        let mut t = LinearAction::new(1);
        t.insert(0, 0, 0, 1.0);
        assert!(psi(&t, &theta).is_err());
    }

    #[test]
    fn add_broadcasts_and_cancels() {
        let x = SparseTensor::variable(0, 2, 0);
        let one = SparseTensor::constant(&[1.0], 0);
        let s = x.add(&one);
        assert_eq!(s.rows, 2);
        assert_eq!(s.entries.len(), 4);
        let z = s.add(&s.scale(-1.0));
        assert!(z.entries.is_empty());
    }
}
