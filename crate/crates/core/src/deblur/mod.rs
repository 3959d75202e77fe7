//! Test problems for zero-boundary, spatially invariant image deblurring.
//!
//! A PSF with SVD `P = Σ_k s_k u_k v_kᵀ` gives the blur operator exactly as
//! `A = Σ_k T(√s_k v_k, c_col) ⊗ T(√s_k u_k, c_row)`, where `T(w, c)` is the
//! banded Toeplitz matrix with `w_j` on diagonal offset `j - c`.

mod bundle;
pub mod pgm;
mod problem;
mod psf;

use nalgebra::DMatrix;
use thiserror::Error;

pub use bundle::{load_meta, load_problem, save_problem, ArrayInfo, BundleMeta, BUNDLE_SCHEMA};
pub use problem::{default_image, make_test_problem, make_test_problem_with_tol, TestProblem};
pub use psf::{make_psf, BlurKind, Psf};

use crate::factor::{svd_dense, FactorError};
use crate::kron::{KronError, KronTerm, KroneckerSum};

#[derive(Debug, Error)]
pub enum DeblurError {
    #[error("invalid blur parameters: {0}")]
    InvalidParams(String),
    #[error("invalid PSF: {0}")]
    InvalidPsf(String),
    #[error("image size {n} is smaller than the PSF size {np}")]
    ImageSmallerThanPsf { n: usize, np: usize },
    #[error("noise level must be finite and >= 0, got {0}")]
    InvalidNoiseLevel(f64),
    #[error("image is empty or not square")]
    BadImage,
    #[error("bundle: {0}")]
    Bundle(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Factor(#[from] FactorError),
    #[error(transparent)]
    Kron(#[from] KronError),
}

/// `n x n` banded Toeplitz matrix with `w[j]` on diagonal offset `j - c`
/// (row index minus column index). Entries falling outside the matrix are
/// dropped, which is the zero boundary condition.
pub fn toeplitz_band(w: &[f64], c: usize, n: usize) -> DMatrix<f64> {
    let mut t = DMatrix::zeros(n, n);
    for (j, &wj) in w.iter().enumerate() {
        let offset = j as isize - c as isize;
        for col in 0..n as isize {
            let row = col + offset;
            if (0..n as isize).contains(&row) {
                t[(row as usize, col as usize)] = wj;
            }
        }
    }
    t
}

/// Relative cutoff below which PSF singular values count as zero.
pub fn default_truncation_tol(np: usize) -> f64 {
    np as f64 * f64::EPSILON
}

/// Number of PSF singular values above `tol * s_1`.
pub fn numerical_rank(psf: &Psf, tol: f64) -> Result<usize, DeblurError> {
    let s = svd_dense(psf.values())?.s;
    Ok(s.iter().filter(|&&v| v > tol * s[0]).count())
}

/// Exact Kronecker-sum form of the zero-boundary blur by `psf` on `n x n`
/// images, keeping the PSF SVD terms with `s_k > truncation_tol * s_1`.
pub fn psf_to_kronsum(
    psf: &Psf,
    n: usize,
    truncation_tol: f64,
) -> Result<KroneckerSum, DeblurError> {
    let np = psf.size();
    if n < np {
        return Err(DeblurError::ImageSmallerThanPsf { n, np });
    }
    let svd = svd_dense(psf.values())?;
    let (cr, cc) = psf.center();
    let cutoff = truncation_tol * svd.s[0];
    let mut terms = Vec::new();
    for (k, &sk) in svd.s.iter().enumerate() {
        if sk <= cutoff || sk == 0.0 {
            break;
        }
        let scale = sk.sqrt();
        let u: Vec<f64> = svd.u.column(k).iter().map(|x| scale * x).collect();
        let v: Vec<f64> = svd.v.column(k).iter().map(|x| scale * x).collect();
        terms.push(KronTerm {
            row: toeplitz_band(&v, cc, n),
            col: toeplitz_band(&u, cr, n),
        });
    }
    Ok(KroneckerSum::new(terms)?)
}
