use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{svd_dense, FactorError};
use crate::deblur::{toeplitz_band, Psf};

/// How PSF entries are weighted before taking the dominant SVD term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    /// Plain dominant term of the PSF array.
    Uniform,
    /// Each PSF entry weighted by how many times it appears in the banded
    /// Toeplitz blocks, which makes the term Frobenius-optimal for the
    /// zero-boundary operator.
    #[default]
    Toeplitz,
}

/// One-term approximation `A ≈ A_r ⊗ A_c` of the blur operator built from `psf`.
///
/// Entry `(k, l)` of the PSF multiplies a Kronecker product of two shifted
/// identities whose squared Frobenius norm is `(n - |k - c_r|)(n - |l - c_c|)`,
/// and those products are mutually orthogonal. The best rank-one term is
/// therefore the dominant SVD term of the PSF scaled by the square roots of
/// those counts, mapped back before building the Toeplitz factors.
pub fn nearest_kron(
    psf: &Psf,
    n: usize,
    weighting: Weighting,
) -> Result<(DMatrix<f64>, DMatrix<f64>), FactorError> {
    let np = psf.size();
    if n < np {
        return Err(FactorError::PsfLargerThanImage { n, np });
    }
    let (cr, cc) = psf.center();
    let weight = |idx: usize, c: usize| ((n - idx.abs_diff(c)) as f64).sqrt();
    let (dr, dc): (Vec<f64>, Vec<f64>) = match weighting {
        Weighting::Uniform => (vec![1.0; np], vec![1.0; np]),
        Weighting::Toeplitz => (
            (0..np).map(|i| weight(i, cr)).collect(),
            (0..np).map(|j| weight(j, cc)).collect(),
        ),
    };
    let weighted = DMatrix::from_fn(np, np, |i, j| dr[i] * psf.values()[(i, j)] * dc[j]);
    let svd = svd_dense(&weighted)?;
    let scale = svd.s[0].sqrt();
    let col_vec: Vec<f64> = (0..np).map(|i| scale * svd.u[(i, 0)] / dr[i]).collect();
    let row_vec: Vec<f64> = (0..np).map(|j| scale * svd.v[(j, 0)] / dc[j]).collect();
    Ok((
        toeplitz_band(&row_vec, cc, n),
        toeplitz_band(&col_vec, cr, n),
    ))
}
