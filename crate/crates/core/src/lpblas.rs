//! Low-precision BLAS kernels built on vectorized rounding and pairwise summation.
//!
//! Every kernel rounds all of its elementwise products in one pass, then adds
//! the resulting blocks two at a time. Each stage of the pairwise tree is
//! rounded by one vectorized call, so a reduction over `k` blocks costs
//! `ceil(log2 k) + 1` rounding calls. The tree shape is fixed (adjacent pairs,
//! left to right, odd trailing block carried forward) which makes results
//! bit-reproducible.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::precision::{round_in_place, PrecisionFormat, RoundingMode};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LpError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("shape mismatch: {0}x{1} times {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("empty operand")]
    Empty,
}

const MODE: RoundingMode = RoundingMode::NearestEven;

/// Pairwise reduction of `blocks` contiguous blocks of length `len` stored
/// back to back in `data`. Returns the summed block.
fn pairwise_blocks(mut data: Vec<f64>, len: usize, fmt: &PrecisionFormat) -> Vec<f64> {
    let mut blocks = data.len().checked_div(len).unwrap_or(0);
    while blocks > 1 {
        let half = blocks / 2;
        let next_blocks = half + blocks % 2;
        let mut next = Vec::with_capacity(next_blocks * len);
        for pair in 0..half {
            let a = &data[2 * pair * len..(2 * pair + 1) * len];
            let b = &data[(2 * pair + 1) * len..(2 * pair + 2) * len];
            next.extend(a.iter().zip(b).map(|(x, y)| x + y));
        }
        if blocks % 2 == 1 {
            // Already representable, so the stage rounding leaves it untouched.
            next.extend_from_slice(&data[(blocks - 1) * len..blocks * len]);
        }
        round_in_place(&mut next, fmt, MODE);
        data = next;
        blocks = next_blocks;
    }
    data.truncate(len);
    data
}

/// Pairwise sum of values already representable in `fmt`.
pub fn pairwise_sum(z: &[f64], fmt: &PrecisionFormat) -> Result<f64, LpError> {
    if z.is_empty() {
        return Err(LpError::Empty);
    }
    Ok(pairwise_blocks(z.to_vec(), 1, fmt)[0])
}

/// Inner product: one rounding of all products, then a pairwise sum.
pub fn lp_dot(x: &[f64], y: &[f64], fmt: &PrecisionFormat) -> Result<f64, LpError> {
    if x.len() != y.len() {
        return Err(LpError::LengthMismatch(x.len(), y.len()));
    }
    if x.is_empty() {
        return Err(LpError::Empty);
    }
    let mut z: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    round_in_place(&mut z, fmt, MODE);
    Ok(pairwise_blocks(z, 1, fmt)[0])
}

/// `A v`: scale the columns of `A` by `v`, round once, then sum the columns pairwise.
pub fn lp_matvec(
    a: &DMatrix<f64>,
    v: &DVector<f64>,
    fmt: &PrecisionFormat,
) -> Result<DVector<f64>, LpError> {
    let (m, k) = a.shape();
    if k != v.len() {
        return Err(LpError::ShapeMismatch(m, k, v.len(), 1));
    }
    if m == 0 || k == 0 {
        return Err(LpError::Empty);
    }
    let mut scaled = Vec::with_capacity(m * k);
    for (j, col) in a.column_iter().enumerate() {
        scaled.extend(col.iter().map(|x| x * v[j]));
    }
    round_in_place(&mut scaled, fmt, MODE);
    Ok(DVector::from_vec(pairwise_blocks(scaled, m, fmt)))
}

/// `A B` as a pairwise sum of the rank-one terms `A(:,i) B(i,:)`.
pub fn lp_matmul(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    fmt: &PrecisionFormat,
) -> Result<DMatrix<f64>, LpError> {
    let (m, k) = a.shape();
    let (kb, n) = b.shape();
    if k != kb {
        return Err(LpError::ShapeMismatch(m, k, kb, n));
    }
    if m == 0 || k == 0 || n == 0 {
        return Err(LpError::Empty);
    }
    let block = m * n;
    let mut terms = Vec::with_capacity(k * block);
    for i in 0..k {
        let col = a.column(i);
        for j in 0..n {
            let bij = b[(i, j)];
            terms.extend(col.iter().map(|x| x * bij));
        }
    }
    round_in_place(&mut terms, fmt, MODE);
    Ok(DMatrix::from_vec(m, n, pairwise_blocks(terms, block, fmt)))
}

/// Number of vectorized rounding calls a reduction over `k` terms performs,
/// including the initial product rounding.
pub fn reduction_call_budget(k: usize) -> u64 {
    if k <= 1 {
        1
    } else {
        1 + (usize::BITS - (k - 1).leading_zeros()) as u64
    }
}
