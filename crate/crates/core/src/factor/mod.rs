//! Factor SVDs, nearest Kronecker product selection and the half-precision
//! Kronecker SVD preconditioner.

mod nearest;
mod precond;
mod svd;

use thiserror::Error;

pub use nearest::{nearest_kron, Weighting};
pub use precond::{build_preconditioner, precond_solve, KronSvdPreconditioner, Spectrum};
pub use svd::{svd_dense, SvdTriple};

use crate::kron::KronError;
use crate::lpblas::LpError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FactorError {
    #[error("SVD needs a non-empty square matrix, got {0}x{1}")]
    NotSquare(usize, usize),
    #[error("PSF of size {np} does not fit in an image of size {n}")]
    PsfLargerThanImage { n: usize, np: usize },
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error("SVD did not converge")]
    SvdNoConvergence,
    #[error("regularization parameter must be finite and >= 0, got {0}")]
    InvalidLambda(f64),
    #[error("lambda = 0 with a singular approximation: preconditioner is not invertible")]
    Singular,
    #[error(transparent)]
    Kron(#[from] KronError),
    #[error(transparent)]
    Lp(#[from] LpError),
}
