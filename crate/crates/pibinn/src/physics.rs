//! Problem-driven structure: block-diagonal zero patterns imposed on the
//! network weights, structured parameter counting, and overlap analysis
//! between quantizer-induced and physics-driven zeros.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::DenseMatrix;

#[derive(Debug, Error)]
pub enum PhysicsError {
    #[error("mask shape mismatch: {a_rows}x{a_cols} vs {b_rows}x{b_cols}")]
    ShapeMismatch {
        a_rows: usize,
        a_cols: usize,
        b_rows: usize,
        b_cols: usize,
    },
    #[error("reference zero set is empty; overlap fraction is undefined")]
    EmptyReferenceZeroSet,
}

/// u diagonal blocks of v rows by p columns each.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockStructure {
    pub u: usize,
    pub v: usize,
    pub p: usize,
}

impl BlockStructure {
    pub fn new(u: usize, v: usize, p: usize) -> Self {
        assert!(u >= 1 && v >= 1 && p >= 1);
        Self { u, v, p }
    }

    pub fn rows(&self) -> usize {
        self.u * self.v
    }

    pub fn cols(&self) -> usize {
        self.u * self.p
    }
}

/// Positions allowed to be nonzero. Everything off the active set is a
/// structural zero: fixed before training and never updated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparsityMask {
    rows: usize,
    cols: usize,
    active: Vec<bool>, // row-major
}

impl SparsityMask {
    pub fn full(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            active: vec![true; rows * cols],
        }
    }

    pub fn empty(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            active: vec![false; rows * cols],
        }
    }

    pub fn from_coords(rows: usize, cols: usize, coords: &[(usize, usize)]) -> Self {
        let mut m = Self::empty(rows, cols);
        for &(i, j) in coords {
            assert!(i < rows && j < cols, "mask coordinate out of bounds");
            m.active[i * cols + j] = true;
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
    pub fn is_active(&self, i: usize, j: usize) -> bool {
        self.active[i * self.cols + j]
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    pub fn zero_count(&self) -> usize {
        self.rows * self.cols - self.active_count()
    }

    pub fn coords(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.rows {
            for j in 0..self.cols {
                if self.is_active(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

/// Active set = union of the u diagonal v×p blocks.
pub fn mask_from_block(structure: &BlockStructure) -> SparsityMask {
    let mut mask = SparsityMask::empty(structure.rows(), structure.cols());
    for b in 0..structure.u {
        for i in 0..structure.v {
            for j in 0..structure.p {
                let (r, c) = (b * structure.v + i, b * structure.p + j);
                mask.active[r * mask.cols + c] = true;
            }
        }
    }
    mask
}

/// Weight positions allowed nonzero wherever the sensing operator couples
/// them. The weight applies transposed to the residual, so the mask is the
/// transposed sensing pattern; for a sensing pattern with the same shape as
/// the weights (the usual case here) the two coincide entrywise in layout.
pub fn mask_from_sensing(pattern: &DenseMatrix, tol: f64) -> SparsityMask {
    assert!(tol >= 0.0);
    let mut mask = SparsityMask::empty(pattern.rows(), pattern.cols());
    for i in 0..pattern.rows() {
        for j in 0..pattern.cols() {
            if pattern.get(i, j).abs() > tol {
                mask.active[i * mask.cols + j] = true;
            }
        }
    }
    mask
}

/// Trainable parameter count with one shared v×p block per layer:
/// K·v·p weights + K thresholds + 1 global scale.
pub fn structured_param_count(structure: &BlockStructure, layers: usize) -> usize {
    layers * structure.v * structure.p + layers + 1
}

/// Weight-only part of [`structured_param_count`].
pub fn structured_weight_count(structure: &BlockStructure, layers: usize) -> usize {
    layers * structure.v * structure.p
}

/// |zeros(reference) ∩ zeros(other)| / |zeros(reference)|.
///
/// `reference` is the quantizer-induced zero set being measured against the
/// physics zeros in `other`.
pub fn overlap_fraction(
    reference: &SparsityMask,
    other: &SparsityMask,
) -> Result<f64, PhysicsError> {
    if reference.rows != other.rows || reference.cols != other.cols {
        return Err(PhysicsError::ShapeMismatch {
            a_rows: reference.rows,
            a_cols: reference.cols,
            b_rows: other.rows,
            b_cols: other.cols,
        });
    }
    let mut ref_zeros = 0usize;
    let mut both = 0usize;
    for (a, b) in reference.active.iter().zip(other.active.iter()) {
        if !a {
            ref_zeros += 1;
            if !b {
                both += 1;
            }
        }
    }
    if ref_zeros == 0 {
        return Err(PhysicsError::EmptyReferenceZeroSet);
    }
    Ok(both as f64 / ref_zeros as f64)
}

/// Zero out masked positions. Applied after every optimizer step and every
/// projection of a structured net.
pub fn apply_mask(w: &mut DenseMatrix, mask: &SparsityMask) {
    assert_eq!(w.rows(), mask.rows);
    assert_eq!(w.cols(), mask.cols);
    for i in 0..mask.rows {
        for j in 0..mask.cols {
            if !mask.is_active(i, j) {
                w.set(i, j, 0.0);
            }
        }
    }
}
