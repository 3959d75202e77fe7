use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{default_truncation_tol, psf_to_kronsum, DeblurError, Psf};
use crate::kron::{vec, KroneckerSum};

/// `b = A x_true + noise`, with everything kept for later comparison.
#[derive(Debug, Clone)]
pub struct TestProblem {
    pub a: KroneckerSum,
    pub psf: Psf,
    pub x_true: Vec<f64>,
    pub b_true: Vec<f64>,
    pub noise: Vec<f64>,
    pub b: Vec<f64>,
    pub noise_level: f64,
    pub seed: u64,
    pub truncation_tol: f64,
}

impl TestProblem {
    /// Image side length.
    pub fn n(&self) -> usize {
        self.a.n()
    }

    pub fn noise_norm(&self) -> f64 {
        norm2(&self.noise)
    }
}

pub(crate) fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Piecewise-constant phantom: a bright rectangle and a brighter disk on a
/// dark background, values in `[0, 1]`.
pub fn default_image(n: usize) -> DMatrix<f64> {
    let nf = n as f64;
    let (dc_r, dc_c, rad) = (0.65 * nf, 0.62 * nf, 0.18 * nf);
    DMatrix::from_fn(n, n, |i, j| {
        let (fi, fj) = (i as f64 + 0.5, j as f64 + 0.5);
        let (di, dj) = (fi - dc_r, fj - dc_c);
        if di * di + dj * dj <= rad * rad {
            1.0
        } else if (0.15 * nf..0.5 * nf).contains(&fi) && (0.2 * nf..0.6 * nf).contains(&fj) {
            0.7
        } else {
            0.05
        }
    })
}

/// Blur `image` with `psf` (zero boundary) and add white noise scaled so
/// that `‖noise‖ / ‖b_true‖ = noise_level`.
pub fn make_test_problem(
    image: &DMatrix<f64>,
    psf: &Psf,
    noise_level: f64,
    seed: u64,
) -> Result<TestProblem, DeblurError> {
    make_test_problem_with_tol(
        image,
        psf,
        noise_level,
        seed,
        default_truncation_tol(psf.size()),
    )
}

pub fn make_test_problem_with_tol(
    image: &DMatrix<f64>,
    psf: &Psf,
    noise_level: f64,
    seed: u64,
    truncation_tol: f64,
) -> Result<TestProblem, DeblurError> {
    if image.is_empty() || !image.is_square() {
        return Err(DeblurError::BadImage);
    }
    if !noise_level.is_finite() || noise_level < 0.0 {
        return Err(DeblurError::InvalidNoiseLevel(noise_level));
    }
    let a = psf_to_kronsum(psf, image.nrows(), truncation_tol)?;
    let x_true = vec(image);
    let b_true = a.apply(&x_true)?;
    let noise = if noise_level == 0.0 {
        vec![0.0; b_true.len()]
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // keep the noise stream independent of any PSF randomness on the same seed
        rng.set_stream(1);
        let g: Vec<f64> = (0..b_true.len())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let scale = noise_level * norm2(&b_true) / norm2(&g);
        g.iter().map(|v| v * scale).collect()
    };
    let b = b_true.iter().zip(&noise).map(|(x, e)| x + e).collect();
    Ok(TestProblem {
        a,
        psf: psf.clone(),
        x_true,
        b_true,
        noise,
        b,
        noise_level,
        seed,
        truncation_tol,
    })
}
