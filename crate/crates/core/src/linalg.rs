//! Dense double-precision vectors and row-major matrices.
//!
//! Only what the cell math needs: affine maps, transposed products for the
//! backward pass, rank-one accumulation, elementwise nonlinearities and
//! splicing. Every reduction runs left to right over the contracted index,
//! so results are bit-reproducible across runs and threads.

use std::ops::{Deref, DerefMut};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn zeros(len: usize) -> Self {
        Vector(vec![0.0; len])
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Vector(data)
    }

    /// Checked constructor: rejects empty or non-finite data.
    pub fn try_new(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::dim("Vector::try_new", "vector must be non-empty"));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("element {i} is not finite")));
        }
        Ok(Vector(data))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Deref for Vector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for Vector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for Vector {
    fn from(data: Vec<f64>) -> Self {
        Vector(data)
    }
}

impl From<&[f64]> for Vector {
    fn from(data: &[f64]) -> Self {
        Vector(data.to_vec())
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::dim(
                "Matrix::from_vec",
                format!("{rows}x{cols} needs {} elements, got {}", rows * cols, data.len()),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
            return Err(Error::dim(
                "Matrix::from_rows",
                format!("row {bad} has {} columns, expected {cols}", rows[bad].len()),
            ));
        }
        let data = rows.iter().flatten().copied().collect();
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rows `start..start + count` as a new matrix.
    pub fn row_block(&self, start: usize, count: usize) -> Result<Matrix> {
        if start + count > self.rows {
            return Err(Error::dim(
                "Matrix::row_block",
                format!("rows {start}..{} out of {}", start + count, self.rows),
            ));
        }
        Ok(Matrix {
            rows: count,
            cols: self.cols,
            data: self.data[start * self.cols..(start + count) * self.cols].to_vec(),
        })
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn hconcat(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::dim(
                "Matrix::hconcat",
                format!("row counts {} and {} differ", self.rows, other.rows),
            ));
        }
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        for i in 0..self.rows {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols + other.cols,
            data,
        })
    }

    /// Vertical concatenation of row blocks with equal column counts.
    pub fn vstack(blocks: &[&Matrix]) -> Result<Matrix> {
        let cols = blocks.first().map_or(0, |m| m.cols);
        let mut data = Vec::new();
        let mut rows = 0;
        for (k, b) in blocks.iter().enumerate() {
            if b.cols != cols {
                return Err(Error::dim(
                    "Matrix::vstack",
                    format!("block {k} has {} columns, expected {cols}", b.cols),
                ));
            }
            rows += b.rows;
            data.extend_from_slice(&b.data);
        }
        Ok(Matrix { rows, cols, data })
    }

    /// `self += a ⊗ b` (rank-one update, `a` indexes rows).
    pub fn add_outer(&mut self, a: &[f64], b: &[f64]) {
        debug_assert_eq!(a.len(), self.rows);
        debug_assert_eq!(b.len(), self.cols);
        for (i, &ai) in a.iter().enumerate() {
            if ai == 0.0 {
                continue;
            }
            let row = &mut self.data[i * self.cols..(i + 1) * self.cols];
            for (r, &bj) in row.iter_mut().zip(b) {
                *r += ai * bj;
            }
        }
    }
}

fn check_len(op: &'static str, what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::dim(op, format!("{what} has length {got}, expected {want}")));
    }
    Ok(())
}

/// `W·x + b`, each output summed left to right over the columns of `W`.
pub fn affine(w: &Matrix, x: &[f64], b: &[f64]) -> Result<Vector> {
    check_len("affine", "x", x.len(), w.cols)?;
    check_len("affine", "b", b.len(), w.rows)?;
    let out = (0..w.rows)
        .map(|i| {
            let mut acc = 0.0;
            for (wij, xj) in w.row(i).iter().zip(x) {
                acc += wij * xj;
            }
            acc + b[i]
        })
        .collect();
    Ok(Vector(out))
}

/// `W·x`.
pub fn matvec(w: &Matrix, x: &[f64]) -> Result<Vector> {
    check_len("matvec", "x", x.len(), w.cols)?;
    let out = (0..w.rows)
        .map(|i| {
            let mut acc = 0.0;
            for (wij, xj) in w.row(i).iter().zip(x) {
                acc += wij * xj;
            }
            acc
        })
        .collect();
    Ok(Vector(out))
}

/// `Wᵀ·v`, each output summed left to right over the rows of `W`.
pub fn matvec_t(w: &Matrix, v: &[f64]) -> Result<Vector> {
    check_len("matvec_t", "v", v.len(), w.rows)?;
    let mut out = vec![0.0; w.cols];
    for (i, &vi) in v.iter().enumerate() {
        for (o, wij) in out.iter_mut().zip(w.row(i)) {
            *o += wij * vi;
        }
    }
    Ok(Vector(out))
}

/// Logistic function in the sign-split form, which never evaluates `exp` of
/// a positive argument.
#[inline]
pub fn sigmoid_scalar(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(v: &[f64]) -> Vector {
    Vector(v.iter().map(|&u| sigmoid_scalar(u)).collect())
}

pub fn tanh_v(v: &[f64]) -> Vector {
    Vector(v.iter().map(|u| u.tanh()).collect())
}

pub fn hadamard(a: &[f64], b: &[f64]) -> Result<Vector> {
    check_len("hadamard", "b", b.len(), a.len())?;
    Ok(Vector(a.iter().zip(b).map(|(x, y)| x * y).collect()))
}

pub fn concat(a: &[f64], b: &[f64]) -> Vector {
    let mut out = Vec::with_capacity(a.len() + b.len());
    out.extend_from_slice(a);
    out.extend_from_slice(b);
    Vector(out)
}

/// First `k` elements of `v`; `1 <= k <= v.len()`.
pub fn slice_prefix(v: &[f64], k: usize) -> Result<Vector> {
    if k == 0 || k > v.len() {
        return Err(Error::dim(
            "slice_prefix",
            format!("prefix length {k} out of range 1..={}", v.len()),
        ));
    }
    Ok(Vector(v[..k].to_vec()))
}

/// Index of the largest element; ties go to the lowest index. Panics on an
/// empty slice.
pub fn argmax(v: &[f64]) -> usize {
    assert!(!v.is_empty(), "argmax of empty slice");
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// `acc += v` elementwise.
pub(crate) fn add_into(acc: &mut [f64], v: &[f64]) {
    debug_assert_eq!(acc.len(), v.len());
    for (a, x) in acc.iter_mut().zip(v) {
        *a += x;
    }
}
