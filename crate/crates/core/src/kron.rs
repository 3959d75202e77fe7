//! Kronecker-product algebra on column-stacked images.
//!
//! `vec` stacks the columns of an `n x n` matrix, so `(C ⊗ D) vec(Y) = vec(D Y Cᵀ)`
//! and no `n² x n²` matrix is ever formed outside [`KroneckerSum::densify`].

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KronError {
    #[error("vector of length {0} is not a perfect square")]
    NotSquareLength(usize),
    #[error("expected length {expected}, got {got}")]
    Length { expected: usize, got: usize },
    #[error("factor is {rows}x{cols}, expected {n}x{n}")]
    FactorShape { rows: usize, cols: usize, n: usize },
    #[error("a Kronecker sum needs at least one term")]
    NoTerms,
    #[error("refusing to densify n = {0} (limit {DENSIFY_LIMIT})")]
    TooLarge(usize),
    #[error("operator has zero Frobenius norm")]
    ZeroNorm,
}

/// Largest side length [`KroneckerSum::densify`] will expand.
pub const DENSIFY_LIMIT: usize = 64;

pub fn vec(y: &DMatrix<f64>) -> Vec<f64> {
    y.as_slice().to_vec()
}

pub fn unvec(y: &[f64], n: usize) -> Result<DMatrix<f64>, KronError> {
    if y.len() != n * n {
        return Err(KronError::Length {
            expected: n * n,
            got: y.len(),
        });
    }
    Ok(DMatrix::from_column_slice(n, n, y))
}

/// Side length of a square image stored as a vector.
pub fn side_length(len: usize) -> Result<usize, KronError> {
    let n = (len as f64).sqrt().round() as usize;
    if n * n == len {
        Ok(n)
    } else {
        Err(KronError::NotSquareLength(len))
    }
}

fn check_square(m: &DMatrix<f64>, n: usize) -> Result<(), KronError> {
    if m.nrows() != n || m.ncols() != n {
        return Err(KronError::FactorShape {
            rows: m.nrows(),
            cols: m.ncols(),
            n,
        });
    }
    Ok(())
}

/// `(C ⊗ D) y = vec(D Y Cᵀ)`.
pub fn kron_apply(c: &DMatrix<f64>, d: &DMatrix<f64>, y: &[f64]) -> Result<Vec<f64>, KronError> {
    let n = c.nrows();
    check_square(c, n)?;
    check_square(d, n)?;
    let y = unvec(y, n)?;
    Ok(vec(&(d * y * c.transpose())))
}

/// Explicit `C ⊗ D`; test oracle only.
pub fn kron_dense(c: &DMatrix<f64>, d: &DMatrix<f64>) -> DMatrix<f64> {
    c.kronecker(d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KronTerm {
    /// Left factor `A_r`, acting across image columns.
    pub row: DMatrix<f64>,
    /// Right factor `A_c`, acting down image columns.
    pub col: DMatrix<f64>,
}

/// `A = Σ_k A_r^(k) ⊗ A_c^(k)` with square `n x n` factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KroneckerSum {
    terms: Vec<KronTerm>,
    n: usize,
}

impl KroneckerSum {
    pub fn new(terms: Vec<KronTerm>) -> Result<Self, KronError> {
        let first = terms.first().ok_or(KronError::NoTerms)?;
        let n = first.row.nrows();
        for t in &terms {
            check_square(&t.row, n)?;
            check_square(&t.col, n)?;
        }
        Ok(Self { terms, n })
    }

    pub fn single(row: DMatrix<f64>, col: DMatrix<f64>) -> Result<Self, KronError> {
        Self::new(vec![KronTerm { row, col }])
    }

    pub fn identity(n: usize) -> Self {
        Self::single(DMatrix::identity(n, n), DMatrix::identity(n, n)).unwrap()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Operator dimension `N = n²`.
    pub fn dim(&self) -> usize {
        self.n * self.n
    }

    pub fn terms(&self) -> &[KronTerm] {
        &self.terms
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    fn apply_impl(&self, y: &[f64], transpose: bool) -> Result<Vec<f64>, KronError> {
        let n = self.n;
        let ymat = unvec(y, n)?;
        let mut acc = DMatrix::<f64>::zeros(n, n);
        for t in &self.terms {
            if transpose {
                // (A_r ⊗ A_c)ᵀ y = vec(A_cᵀ Y A_r)
                acc += t.col.tr_mul(&ymat) * &t.row;
            } else {
                acc += &t.col * &ymat * t.row.transpose();
            }
        }
        Ok(vec(&acc))
    }

    pub fn apply(&self, y: &[f64]) -> Result<Vec<f64>, KronError> {
        self.apply_impl(y, false)
    }

    pub fn apply_transpose(&self, y: &[f64]) -> Result<Vec<f64>, KronError> {
        self.apply_impl(y, true)
    }

    /// Explicit `N x N` matrix, guarded to `n <= DENSIFY_LIMIT`.
    pub fn densify(&self) -> Result<DMatrix<f64>, KronError> {
        if self.n > DENSIFY_LIMIT {
            return Err(KronError::TooLarge(self.n));
        }
        let dim = self.dim();
        let mut out = DMatrix::zeros(dim, dim);
        for t in &self.terms {
            out += kron_dense(&t.row, &t.col);
        }
        Ok(out)
    }

    /// Frobenius norm, evaluated without densifying.
    pub fn frobenius_norm(&self) -> f64 {
        signed_terms_norm(self.terms.iter().map(|t| (1.0, t)))
    }

    /// `‖self − other‖_F` without densifying.
    pub fn frobenius_distance(&self, other: &KroneckerSum) -> Result<f64, KronError> {
        if self.n != other.n {
            return Err(KronError::FactorShape {
                rows: other.n,
                cols: other.n,
                n: self.n,
            });
        }
        let signed = self
            .terms
            .iter()
            .map(|t| (1.0, t))
            .chain(other.terms.iter().map(|t| (-1.0, t)));
        Ok(signed_terms_norm(signed))
    }

    /// `‖self − other‖_F / ‖self‖_F`.
    pub fn relative_frobenius_distance(&self, other: &KroneckerSum) -> Result<f64, KronError> {
        let norm = self.frobenius_norm();
        if norm == 0.0 {
            return Err(KronError::ZeroNorm);
        }
        Ok(self.frobenius_distance(other)? / norm)
    }
}

pub fn kronsum_apply(k: &KroneckerSum, y: &[f64]) -> Result<Vec<f64>, KronError> {
    k.apply(y)
}

pub fn kronsum_apply_transpose(k: &KroneckerSum, y: &[f64]) -> Result<Vec<f64>, KronError> {
    k.apply_transpose(y)
}

pub fn kronsum_densify(k: &KroneckerSum) -> Result<DMatrix<f64>, KronError> {
    k.densify()
}

pub fn kronsum_frobenius_distance(k: &KroneckerSum, t: &KroneckerSum) -> Result<f64, KronError> {
    k.frobenius_distance(t)
}

/// Frobenius norm of `Σ_k w_k B_k ⊗ C_k`.
///
/// Rearranging each term to the outer product `vec(B_k) vec(C_k)ᵀ` gives
/// `‖Σ_k w_k B_k ⊗ C_k‖_F² = Σ_{k,l} w_k w_l ⟨B_k,B_l⟩ ⟨C_k,C_l⟩ = ‖P Qᵀ‖_F²`
/// with `P = [w_k vec(B_k)]` and `Q = [vec(C_k)]`. Expanding the Gram sum
/// directly loses half the digits when the terms nearly cancel, so the same
/// quantity is evaluated as `‖R_P R_Qᵀ‖_F` from thin QR factors of `P` and `Q`.
fn signed_terms_norm<'a>(terms: impl Iterator<Item = (f64, &'a KronTerm)>) -> f64 {
    let terms: Vec<(f64, &KronTerm)> = terms.collect();
    if terms.is_empty() {
        return 0.0;
    }
    let len = terms[0].1.row.len();
    let p = DMatrix::from_fn(len, terms.len(), |i, k| {
        terms[k].0 * terms[k].1.row.as_slice()[i]
    });
    let q = DMatrix::from_fn(len, terms.len(), |i, k| terms[k].1.col.as_slice()[i]);
    let rp = p.qr().r();
    let rq = q.qr().r();
    (rp * rq.transpose()).norm()
}
