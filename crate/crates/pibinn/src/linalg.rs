//! Minimal dense and block-diagonal linear algebra.
//!
//! Everything else in the crate computes through the types here: dense
//! row-major matrices, implicit block-diagonal operators (never
//! materialized), index sets for support-restricted submatrices, a power
//! iteration spectral norm, and the orthonormal DCT-II matrix.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::CounterRng;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("index {index} out of range for ambient dimension {ambient}")]
    IndexOutOfRange { index: usize, ambient: usize },
    #[error("power iteration did not converge after {iters} iterations (last estimate {estimate})")]
    NoConvergence { iters: usize, estimate: f64 },
    #[error("non-finite entry at position {0}")]
    NonFinite(usize),
}

/// Dense row-major matrix of 64-bit floats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            entries: vec![0.0; rows * cols],
        }
    }

    pub fn from_entries(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self, LinalgError> {
        if entries.len() != rows * cols {
            return Err(LinalgError::DimMismatch {
                context: "from_entries",
                expected: rows * cols,
                got: entries.len(),
            });
        }
        if let Some(pos) = entries.iter().position(|v| !v.is_finite()) {
            return Err(LinalgError::NonFinite(pos));
        }
        Ok(Self {
            rows,
            cols,
            entries,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.entries[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.entries[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.entries[i * self.cols..(i + 1) * self.cols]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [f64] {
        &mut self.entries
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn set_column(&mut self, j: usize, v: &[f64]) {
        debug_assert_eq!(v.len(), self.rows);
        for i in 0..self.rows {
            self.set(i, j, v[i]);
        }
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.entries[j * self.rows + i] = self.entries[i * self.cols + j];
            }
        }
        t
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            entries: self.entries.iter().map(|v| c * v).collect(),
        }
    }

    /// y = M x
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>, LinalgError> {
        if x.len() != self.cols {
            return Err(LinalgError::DimMismatch {
                context: "matvec",
                expected: self.cols,
                got: x.len(),
            });
        }
        let mut y = vec![0.0; self.rows];
        for i in 0..self.rows {
            let row = self.row(i);
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x.iter()) {
                acc += a * b;
            }
            y[i] = acc;
        }
        Ok(y)
    }

    /// y = Mᵀ x
    pub fn transpose_matvec(&self, x: &[f64]) -> Result<Vec<f64>, LinalgError> {
        if x.len() != self.rows {
            return Err(LinalgError::DimMismatch {
                context: "transpose_matvec",
                expected: self.rows,
                got: x.len(),
            });
        }
        let mut y = vec![0.0; self.cols];
        for i in 0..self.rows {
            let xi = x[i];
            if xi == 0.0 {
                continue;
            }
            let row = self.row(i);
            for (yj, a) in y.iter_mut().zip(row.iter()) {
                *yj += xi * a;
            }
        }
        Ok(y)
    }

    /// C = self · B
    pub fn matmul(&self, b: &DenseMatrix) -> Result<DenseMatrix, LinalgError> {
        if self.cols != b.rows {
            return Err(LinalgError::DimMismatch {
                context: "matmul",
                expected: self.cols,
                got: b.rows,
            });
        }
        let mut c = DenseMatrix::zeros(self.rows, b.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let c_row = c.row_mut(i);
            for (k, &aik) in a_row.iter().enumerate() {
                if aik == 0.0 {
                    continue;
                }
                let b_row = b.row(k);
                for (cij, &bkj) in c_row.iter_mut().zip(b_row.iter()) {
                    *cij += aik * bkj;
                }
            }
        }
        Ok(c)
    }

    /// C = selfᵀ · B
    pub fn matmul_tn(&self, b: &DenseMatrix) -> Result<DenseMatrix, LinalgError> {
        if self.rows != b.rows {
            return Err(LinalgError::DimMismatch {
                context: "matmul_tn",
                expected: self.rows,
                got: b.rows,
            });
        }
        let mut c = DenseMatrix::zeros(self.cols, b.cols);
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = b.row(k);
            for (i, &aki) in a_row.iter().enumerate() {
                if aki == 0.0 {
                    continue;
                }
                let c_row = c.row_mut(i);
                for (cij, &bkj) in c_row.iter_mut().zip(b_row.iter()) {
                    *cij += aki * bkj;
                }
            }
        }
        Ok(c)
    }

    /// C = self · Bᵀ
    pub fn matmul_nt(&self, b: &DenseMatrix) -> Result<DenseMatrix, LinalgError> {
        if self.cols != b.cols {
            return Err(LinalgError::DimMismatch {
                context: "matmul_nt",
                expected: self.cols,
                got: b.cols,
            });
        }
        let mut c = DenseMatrix::zeros(self.rows, b.rows);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let c_row = c.row_mut(i);
            for (j, cij) in c_row.iter_mut().enumerate() {
                let b_row = b.row(j);
                let mut acc = 0.0;
                for (x, y) in a_row.iter().zip(b_row.iter()) {
                    acc += x * y;
                }
                *cij = acc;
            }
        }
        Ok(c)
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// BlockDiag_u(block): u copies of a v×p block along the diagonal,
/// applied implicitly. The (v·u)×(p·u) dense equivalent is never formed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockDiagOperator {
    pub block: DenseMatrix,
    pub repeat: usize,
}

impl BlockDiagOperator {
    pub fn new(block: DenseMatrix, repeat: usize) -> Self {
        assert!(repeat >= 1, "repeat must be >= 1");
        Self { block, repeat }
    }

    pub fn rows(&self) -> usize {
        self.block.rows() * self.repeat
    }

    pub fn cols(&self) -> usize {
        self.block.cols() * self.repeat
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>, LinalgError> {
        if x.len() != self.cols() {
            return Err(LinalgError::DimMismatch {
                context: "block matvec",
                expected: self.cols(),
                got: x.len(),
            });
        }
        let p = self.block.cols();
        let mut y = Vec::with_capacity(self.rows());
        for b in 0..self.repeat {
            y.extend(self.block.matvec(&x[b * p..(b + 1) * p])?);
        }
        Ok(y)
    }

    pub fn transpose_matvec(&self, x: &[f64]) -> Result<Vec<f64>, LinalgError> {
        if x.len() != self.rows() {
            return Err(LinalgError::DimMismatch {
                context: "block transpose_matvec",
                expected: self.rows(),
                got: x.len(),
            });
        }
        let v = self.block.rows();
        let mut y = Vec::with_capacity(self.cols());
        for b in 0..self.repeat {
            y.extend(self.block.transpose_matvec(&x[b * v..(b + 1) * v])?);
        }
        Ok(y)
    }

    /// Batch product: X has one sample per column, shape (p·u)×N.
    pub fn matmul(&self, x: &DenseMatrix) -> Result<DenseMatrix, LinalgError> {
        if x.rows() != self.cols() {
            return Err(LinalgError::DimMismatch {
                context: "block matmul",
                expected: self.cols(),
                got: x.rows(),
            });
        }
        let p = self.block.cols();
        let v = self.block.rows();
        let mut y = DenseMatrix::zeros(self.rows(), x.cols());
        for b in 0..self.repeat {
            let seg = submatrix_rows_range(x, b * p, (b + 1) * p);
            let prod = self.block.matmul(&seg)?;
            copy_into_rows(&mut y, b * v, &prod);
        }
        Ok(y)
    }

    pub fn matmul_tn(&self, x: &DenseMatrix) -> Result<DenseMatrix, LinalgError> {
        if x.rows() != self.rows() {
            return Err(LinalgError::DimMismatch {
                context: "block matmul_tn",
                expected: self.rows(),
                got: x.rows(),
            });
        }
        let p = self.block.cols();
        let v = self.block.rows();
        let mut y = DenseMatrix::zeros(self.cols(), x.cols());
        for b in 0..self.repeat {
            let seg = submatrix_rows_range(x, b * v, (b + 1) * v);
            let prod = self.block.matmul_tn(&seg)?;
            copy_into_rows(&mut y, b * p, &prod);
        }
        Ok(y)
    }

    /// Dense equivalent; test-only helper for materialize-and-compare oracles.
    pub fn materialize(&self) -> DenseMatrix {
        let mut m = DenseMatrix::zeros(self.rows(), self.cols());
        let v = self.block.rows();
        let p = self.block.cols();
        for b in 0..self.repeat {
            for i in 0..v {
                for j in 0..p {
                    m.set(b * v + i, b * p + j, self.block.get(i, j));
                }
            }
        }
        m
    }
}

fn submatrix_rows_range(m: &DenseMatrix, start: usize, end: usize) -> DenseMatrix {
    let cols = m.cols();
    let entries = m.entries()[start * cols..end * cols].to_vec();
    DenseMatrix {
        rows: end - start,
        cols,
        entries,
    }
}

fn copy_into_rows(dst: &mut DenseMatrix, row_offset: usize, src: &DenseMatrix) {
    let cols = dst.cols();
    debug_assert_eq!(cols, src.cols());
    let start = row_offset * cols;
    dst.entries_mut()[start..start + src.entries().len()].copy_from_slice(src.entries());
}

/// Dense matrix or implicit block-diagonal operator; the sensing operator
/// shape shared by the plain and block-structured pipelines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Operator {
    Dense(DenseMatrix),
    Block(BlockDiagOperator),
}

impl Operator {
    pub fn rows(&self) -> usize {
        match self {
            Operator::Dense(m) => m.rows(),
            Operator::Block(b) => b.rows(),
        }
    }

    pub fn cols(&self) -> usize {
        match self {
            Operator::Dense(m) => m.cols(),
            Operator::Block(b) => b.cols(),
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>, LinalgError> {
        match self {
            Operator::Dense(m) => m.matvec(x),
            Operator::Block(b) => b.matvec(x),
        }
    }

    pub fn transpose_matvec(&self, x: &[f64]) -> Result<Vec<f64>, LinalgError> {
        match self {
            Operator::Dense(m) => m.transpose_matvec(x),
            Operator::Block(b) => b.transpose_matvec(x),
        }
    }

    pub fn matmul(&self, x: &DenseMatrix) -> Result<DenseMatrix, LinalgError> {
        match self {
            Operator::Dense(m) => m.matmul(x),
            Operator::Block(b) => b.matmul(x),
        }
    }

    pub fn matmul_tn(&self, x: &DenseMatrix) -> Result<DenseMatrix, LinalgError> {
        match self {
            Operator::Dense(m) => m.matmul_tn(x),
            Operator::Block(b) => b.matmul_tn(x),
        }
    }
}

/// Sorted distinct index positions within an ambient dimension; the support
/// set of a sparse target or a row/column selector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexSet {
    indices: Vec<usize>,
    ambient: usize,
}

impl IndexSet {
    pub fn new(mut indices: Vec<usize>, ambient: usize) -> Result<Self, LinalgError> {
        indices.sort_unstable();
        indices.dedup();
        if let Some(&bad) = indices.iter().find(|&&i| i >= ambient) {
            return Err(LinalgError::IndexOutOfRange {
                index: bad,
                ambient,
            });
        }
        Ok(Self { indices, ambient })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn ambient(&self) -> usize {
        self.ambient
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }
}

/// Row/column selection: pass `None` to keep an axis whole.
pub fn submatrix(
    m: &DenseMatrix,
    rows: Option<&IndexSet>,
    cols: Option<&IndexSet>,
) -> Result<DenseMatrix, LinalgError> {
    if let Some(r) = rows {
        if r.ambient() != m.rows() {
            return Err(LinalgError::DimMismatch {
                context: "submatrix rows",
                expected: m.rows(),
                got: r.ambient(),
            });
        }
    }
    if let Some(c) = cols {
        if c.ambient() != m.cols() {
            return Err(LinalgError::DimMismatch {
                context: "submatrix cols",
                expected: m.cols(),
                got: c.ambient(),
            });
        }
    }
    let row_idx: Vec<usize> = match rows {
        Some(r) => r.indices().to_vec(),
        None => (0..m.rows()).collect(),
    };
    let col_idx: Vec<usize> = match cols {
        Some(c) => c.indices().to_vec(),
        None => (0..m.cols()).collect(),
    };
    let mut out = DenseMatrix::zeros(row_idx.len(), col_idx.len());
    for (oi, &i) in row_idx.iter().enumerate() {
        for (oj, &j) in col_idx.iter().enumerate() {
            out.set(oi, oj, m.get(i, j));
        }
    }
    Ok(out)
}

pub const SPECTRAL_TOL_DEFAULT: f64 = 1e-9;
pub const SPECTRAL_MAX_ITER_DEFAULT: usize = 10_000;

/// Largest singular value via power iteration on MᵀM.
///
/// The start vector is a fixed-seed pseudo-random unit vector so repeated
/// calls are bit-identical.
pub fn spectral_norm(m: &DenseMatrix, tol: f64, max_iter: usize) -> Result<f64, LinalgError> {
    assert!(tol > 0.0, "tol must be positive");
    let n = m.cols();
    if n == 0 || m.rows() == 0 {
        return Ok(0.0);
    }
    let rng = CounterRng::new(POWER_ITER_SEED, 0);
    let mut v: Vec<f64> = (0..n).map(|i| rng.normal(i as u64)).collect();
    normalize(&mut v);
    let mut sigma = 0.0_f64;
    for it in 0..max_iter {
        let mv = m.matvec(&v)?;
        let mut w = m.transpose_matvec(&mv)?;
        let wn = norm2(&w);
        if wn == 0.0 {
            return Ok(0.0);
        }
        for x in &mut w {
            *x /= wn;
        }
        let new_sigma = norm2(&m.matvec(&w)?);
        let done = (new_sigma - sigma).abs() <= tol * new_sigma.max(1.0);
        sigma = new_sigma;
        v = w;
        if done && it > 0 {
            return Ok(sigma);
        }
    }
    Err(LinalgError::NoConvergence {
        iters: max_iter,
        estimate: sigma,
    })
}

// fixed seed for the power iteration start vector
const POWER_ITER_SEED: u64 = 0x9e37_79b9_7f4a_7c15;

pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn normalize(x: &mut [f64]) {
    let n = norm2(x);
    if n > 0.0 {
        for v in x.iter_mut() {
            *v /= n;
        }
    }
}

/// Orthonormal DCT-II matrix: DᵀD = I.
pub fn dct_matrix(n: usize) -> DenseMatrix {
    assert!(n >= 1);
    let mut d = DenseMatrix::zeros(n, n);
    let nf = n as f64;
    for k in 0..n {
        let c = if k == 0 {
            (1.0 / nf).sqrt()
        } else {
            (2.0 / nf).sqrt()
        };
        for j in 0..n {
            let angle = std::f64::consts::PI * (2.0 * j as f64 + 1.0) * k as f64 / (2.0 * nf);
            d.set(k, j, c * angle.cos());
        }
    }
    d
}
