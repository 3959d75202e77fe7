use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::DeblurError;

/// Blur model and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BlurKind {
    /// Identity blur: a single unit pixel at the center.
    Delta,
    Gaussian {
        sigma: f64,
    },
    /// Out-of-focus lens: uniform over a disk.
    Defocus {
        radius: f64,
    },
    /// Uniform along a straight segment through the center; `angle` in degrees.
    Motion {
        length: usize,
        angle: f64,
    },
    /// Rasterized random camera path.
    Shake {
        steps: usize,
    },
    /// Sum of randomly placed Gaussian blobs, a stand-in for turbulence.
    Speckle {
        blobs: usize,
        blob_sigma: f64,
    },
}

impl BlurKind {
    pub fn name(&self) -> &'static str {
        match self {
            BlurKind::Delta => "delta",
            BlurKind::Gaussian { .. } => "gaussian",
            BlurKind::Defocus { .. } => "defocus",
            BlurKind::Motion { .. } => "motion",
            BlurKind::Shake { .. } => "shake",
            BlurKind::Speckle { .. } => "speckle",
        }
    }

    /// Whether the PSF depends on the seed.
    pub fn is_random(&self) -> bool {
        matches!(self, BlurKind::Shake { .. } | BlurKind::Speckle { .. })
    }
}

/// Point spread function: nonnegative, sums to one, with the point-source
/// location at `center`.
#[derive(Debug, Clone, PartialEq)]
pub struct Psf {
    values: DMatrix<f64>,
    center: (usize, usize),
    kind: BlurKind,
    seed: u64,
}

const SUM_TOL: f64 = 1e-12;

impl Psf {
    pub fn new(
        values: DMatrix<f64>,
        center: (usize, usize),
        kind: BlurKind,
        seed: u64,
    ) -> Result<Self, DeblurError> {
        let (r, c) = values.shape();
        if r != c || r == 0 {
            return Err(DeblurError::InvalidPsf(format!(
                "PSF must be square, got {r}x{c}"
            )));
        }
        if center.0 >= r || center.1 >= c {
            return Err(DeblurError::InvalidPsf(format!(
                "center {center:?} outside {r}x{c}"
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(DeblurError::InvalidPsf(
                "entries must be finite and >= 0".into(),
            ));
        }
        let sum = values.sum();
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(DeblurError::InvalidPsf(format!(
                "entries sum to {sum}, not 1"
            )));
        }
        Ok(Self {
            values,
            center,
            kind,
            seed,
        })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn center(&self) -> (usize, usize) {
        self.center
    }

    pub fn kind(&self) -> &BlurKind {
        &self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Side length `n_p`.
    pub fn size(&self) -> usize {
        self.values.nrows()
    }
}

fn invalid(msg: impl Into<String>) -> DeblurError {
    DeblurError::InvalidParams(msg.into())
}

fn normalized(mut m: DMatrix<f64>) -> Result<DMatrix<f64>, DeblurError> {
    let total = m.sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(invalid("PSF has no mass inside the array"));
    }
    m /= total;
    // Fold the rounding residue of the division into the largest entry so the
    // sum is 1 to within a couple of ulps.
    let resid = 1.0 - m.sum();
    let imax = m.iamax_full();
    m[imax] += resid;
    Ok(m)
}

fn gaussian_1d(np: usize, c: f64, sigma: f64) -> Vec<f64> {
    (0..np)
        .map(|i| {
            let d = i as f64 - c;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect()
}

/// Build a PSF of side `np` (odd) centered at `(np / 2, np / 2)`.
pub fn make_psf(kind: &BlurKind, np: usize, seed: u64) -> Result<Psf, DeblurError> {
    if np == 0 || np % 2 == 0 {
        return Err(invalid(format!("PSF size must be odd, got {np}")));
    }
    let c = np / 2;
    let cf = c as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = match *kind {
        BlurKind::Delta => {
            let mut m = DMatrix::zeros(np, np);
            m[(c, c)] = 1.0;
            m
        }
        BlurKind::Gaussian { sigma } => {
            if !(sigma > 0.0) || !sigma.is_finite() {
                return Err(invalid(format!("gaussian sigma must be > 0, got {sigma}")));
            }
            // Normalize the 1-D profile first so the outer product is rank one
            // and already sums to one.
            let g = gaussian_1d(np, cf, sigma);
            let s: f64 = g.iter().sum();
            let g: Vec<f64> = g.iter().map(|v| v / s).collect();
            DMatrix::from_fn(np, np, |i, j| g[i] * g[j])
        }
        BlurKind::Defocus { radius } => {
            if !(radius > 0.0) || !radius.is_finite() {
                return Err(invalid(format!("defocus radius must be > 0, got {radius}")));
            }
            normalized(DMatrix::from_fn(np, np, |i, j| {
                let (di, dj) = (i as f64 - cf, j as f64 - cf);
                if di * di + dj * dj <= radius * radius {
                    1.0
                } else {
                    0.0
                }
            }))?
        }
        BlurKind::Motion { length, angle } => {
            if length == 0 || length > np {
                return Err(invalid(format!(
                    "motion length must be in 1..={np}, got {length}"
                )));
            }
            if !angle.is_finite() {
                return Err(invalid("motion angle must be finite"));
            }
            let mut m = DMatrix::zeros(np, np);
            let theta = angle.to_radians();
            let (dx, dy) = (theta.cos(), theta.sin());
            // step along the dominant axis one pixel at a time
            let scale = 1.0 / dx.abs().max(dy.abs());
            let start = -((length / 2) as f64);
            for k in 0..length {
                let t = (start + k as f64) * scale;
                let col = (cf + (t * dx).round()) as isize;
                // image rows grow downward
                let row = (cf - (t * dy).round()) as isize;
                if row < 0 || col < 0 || row >= np as isize || col >= np as isize {
                    return Err(invalid("motion segment leaves the PSF array"));
                }
                m[(row as usize, col as usize)] = 1.0;
            }
            normalized(m)?
        }
        BlurKind::Shake { steps } => {
            if steps == 0 {
                return Err(invalid("shake needs at least one step"));
            }
            let step = Normal::new(0.0, 0.75).unwrap();
            let mut m = DMatrix::zeros(np, np);
            let (mut x, mut y) = (cf, cf);
            let (mut vx, mut vy) = (0.0, 0.0);
            let max = (np - 1) as f64;
            m[(c, c)] += 1.0;
            for _ in 0..steps {
                // smoothed velocity so the path looks like a hand tremor
                vx = 0.6 * vx + step.sample(&mut rng);
                vy = 0.6 * vy + step.sample(&mut rng);
                x = (x + vx).clamp(0.0, max);
                y = (y + vy).clamp(0.0, max);
                m[(y.round() as usize, x.round() as usize)] += 1.0;
            }
            normalized(m)?
        }
        BlurKind::Speckle { blobs, blob_sigma } => {
            if blobs == 0 {
                return Err(invalid("speckle needs at least one blob"));
            }
            if !(blob_sigma > 0.0) || !blob_sigma.is_finite() {
                return Err(invalid(format!(
                    "speckle blob sigma must be > 0, got {blob_sigma}"
                )));
            }
            let spread = Normal::new(0.0, np as f64 / 6.0).unwrap();
            let max = (np - 1) as f64;
            let mut m = DMatrix::zeros(np, np);
            for _ in 0..blobs {
                let bi = (cf + spread.sample(&mut rng)).clamp(0.0, max);
                let bj = (cf + spread.sample(&mut rng)).clamp(0.0, max);
                let weight = rng.random_range(0.5..1.5);
                let gi = gaussian_1d(np, bi, blob_sigma);
                let gj = gaussian_1d(np, bj, blob_sigma);
                for j in 0..np {
                    for i in 0..np {
                        m[(i, j)] += weight * gi[i] * gj[j];
                    }
                }
            }
            normalized(m)?
        }
    };
    let values = values.map(|v: f64| v.max(0.0));
    Psf::new(values, (c, c), kind.clone(), seed)
}
