//! Regularization parameter selection from an (approximate) SVD spectrum.
//!
//! All selectors search `λ` over `[max(σ_min, 1e-10 σ_max), σ_max]` in log
//! scale. Minimizers first scan a coarse log grid to find the best cell (the
//! objectives are not guaranteed unimodal), then refine with golden-section
//! search inside the neighbouring cells.
//!
//! The GCV objective is used in its cancelled form
//! `n Σ (b̂_i / (σ_i² + λ²))² / (Σ 1 / (σ_i² + λ²))²`, which equals the weighted
//! form at `ω = 1` after dividing numerator and denominator by `λ⁴`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::factor::{FactorError, KronSvdPreconditioner};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegError {
    #[error("spectral data lengths differ: sigma {sigma}, b_hat {b_hat}, x_hat {x_hat:?}")]
    LengthMismatch {
        sigma: usize,
        b_hat: usize,
        x_hat: Option<usize>,
    },
    #[error("singular values must be finite, nonnegative and nonincreasing")]
    BadSpectrum,
    #[error("all singular values are zero")]
    ZeroSpectrum,
    #[error("x_hat is required for the optimal parameter")]
    MissingXHat,
    #[error("invalid interval [{0}, {1}]")]
    BadInterval(f64, f64),
    #[error("no sign change on [{0}, {1}]")]
    NoSignChange(f64, f64),
    #[error("objective is not finite anywhere on the bracket")]
    NonFinite,
    #[error("invalid weight omega = {0} (must be > 0)")]
    InvalidOmega(f64),
    #[error("invalid noise estimate: noise_norm = {noise_norm}, eta = {eta}")]
    InvalidNoise { noise_norm: f64, eta: f64 },
    #[error("no root; ε too large (residual at λ = {lambda_hi:e} is below the target)")]
    EpsilonTooLarge { lambda_hi: f64 },
    #[error("no root; ε too small (residual at λ = {lambda_lo:e} is above the target)")]
    EpsilonTooSmall { lambda_lo: f64 },
    #[error("lambda = 0 with a zero singular value")]
    DivisionByZero,
    #[error(transparent)]
    Factor(#[from] FactorError),
}

/// `σ̂`, `b̂` and optionally `x̂`, all in the same (nonincreasing `σ̂`) order.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralData {
    sigma: Vec<f64>,
    b_hat: Vec<f64>,
    x_hat: Option<Vec<f64>>,
}

impl SpectralData {
    pub fn new(
        sigma: Vec<f64>,
        b_hat: Vec<f64>,
        x_hat: Option<Vec<f64>>,
    ) -> Result<Self, RegError> {
        let mismatch = b_hat.len() != sigma.len()
            || x_hat.as_ref().is_some_and(|x| x.len() != sigma.len())
            || sigma.is_empty();
        if mismatch {
            return Err(RegError::LengthMismatch {
                sigma: sigma.len(),
                b_hat: b_hat.len(),
                x_hat: x_hat.as_ref().map(Vec::len),
            });
        }
        let ordered = sigma.windows(2).all(|w| w[0] >= w[1]);
        if !ordered || sigma.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(RegError::BadSpectrum);
        }
        if sigma[0] == 0.0 {
            return Err(RegError::ZeroSpectrum);
        }
        Ok(Self {
            sigma,
            b_hat,
            x_hat,
        })
    }

    /// Sorts triples by `σ̂` first; convenient for unordered input.
    pub fn from_unsorted(
        sigma: Vec<f64>,
        b_hat: Vec<f64>,
        x_hat: Option<Vec<f64>>,
    ) -> Result<Self, RegError> {
        if b_hat.len() != sigma.len() || x_hat.as_ref().is_some_and(|x| x.len() != sigma.len()) {
            return Err(RegError::LengthMismatch {
                sigma: sigma.len(),
                b_hat: b_hat.len(),
                x_hat: x_hat.as_ref().map(Vec::len),
            });
        }
        let mut idx: Vec<usize> = (0..sigma.len()).collect();
        idx.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]));
        let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Self::new(pick(&sigma), pick(&b_hat), x_hat.as_deref().map(pick))
    }

    /// Spectrum and projections of `b` (and `x_true`) through the Kronecker
    /// approximation held by `p`.
    pub fn from_preconditioner(
        p: &KronSvdPreconditioner,
        b: &[f64],
        x_true: Option<&[f64]>,
    ) -> Result<Self, RegError> {
        let x_hat = x_true.map(|x| p.project_x(x)).transpose()?;
        Self::new(p.approx_spectrum().sigma.clone(), p.project_b(b)?, x_hat)
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn b_hat(&self) -> &[f64] {
        &self.b_hat
    }

    pub fn x_hat(&self) -> Option<&[f64]> {
        self.x_hat.as_deref()
    }

    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    /// `[max(σ_min, 1e-10 σ_max), σ_max]`.
    pub fn bracket(&self) -> (f64, f64) {
        let hi = self.sigma[0];
        let lo = self.sigma[self.sigma.len() - 1].max(1e-10 * hi);
        (lo, hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum ParamMethod {
    Opt,
    Gcv,
    Wgcv { omega: f64 },
    Discrepancy { eta: f64, noise_norm: f64 },
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamChoice {
    pub lambda: f64,
    pub method: ParamMethod,
    pub objective_value: f64,
    pub bracket: (f64, f64),
    /// Set when the objective was numerically constant over the bracket; the
    /// reported λ is then the log-scale midpoint.
    pub flat: bool,
}

/// Golden-section minimization of `f` on `[lo, hi]`, stopping once the
/// interval is below `tol * (1 + |x|)`.
pub fn minimize_1d(
    f: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
    tol: f64,
) -> Result<(f64, f64), RegError> {
    if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(RegError::BadInterval(lo, hi));
    }
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a) > tol * (1.0 + c.abs().min(d.abs())) {
        if fc.is_nan() || fd.is_nan() {
            return Err(RegError::NonFinite);
        }
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    let fx = f(x);
    // keep whichever of the last probes is best
    let best = [(x, fx), (c, fc), (d, fd)]
        .into_iter()
        .filter(|(_, v)| !v.is_nan())
        .min_by(|p, q| p.1.total_cmp(&q.1))
        .ok_or(RegError::NonFinite)?;
    if !best.1.is_finite() {
        return Err(RegError::NonFinite);
    }
    Ok(best)
}

/// Bisection for a sign change of `f` on `[lo, hi]`.
pub fn find_root(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> Result<f64, RegError> {
    if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(RegError::BadInterval(lo, hi));
    }
    let (mut a, mut b) = (lo, hi);
    let (fa, fb) = (f(a), f(b));
    if !fa.is_finite() || !fb.is_finite() {
        return Err(RegError::NonFinite);
    }
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(RegError::NoSignChange(lo, hi));
    }
    let neg_at_a = fa < 0.0;
    while (b - a) > tol * (1.0 + (0.5 * (a + b)).abs()) {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let fm = f(m);
        if !fm.is_finite() {
            return Err(RegError::NonFinite);
        }
        if fm == 0.0 {
            return Ok(m);
        }
        if (fm < 0.0) == neg_at_a {
            a = m;
        } else {
            b = m;
        }
    }
    Ok(0.5 * (a + b))
}

/// `O(λ) = Σ (σ b̂ / (σ² + λ²) − x̂)²`.
pub fn opt_objective(sd: &SpectralData, x_hat: &[f64], lambda: f64) -> f64 {
    let l2 = lambda * lambda;
    sd.sigma
        .iter()
        .zip(&sd.b_hat)
        .zip(x_hat)
        .map(|((s, b), x)| {
            let r = s * b / (s * s + l2) - x;
            r * r
        })
        .sum()
}

/// `G(λ) = n Σ (b̂ / (σ² + λ²))² / (Σ 1 / (σ² + λ²))²`.
pub fn gcv_objective(sd: &SpectralData, lambda: f64) -> f64 {
    let l2 = lambda * lambda;
    let (mut num, mut den) = (0.0, 0.0);
    for (s, b) in sd.sigma.iter().zip(&sd.b_hat) {
        let d = s * s + l2;
        num += (b / d) * (b / d);
        den += 1.0 / d;
    }
    sd.len() as f64 * num / (den * den)
}

/// `G_ω(λ) = n Σ (λ² b̂ / (σ² + λ²))² / (Σ ((1 − ω) σ² + λ²) / (σ² + λ²))²`.
///
/// Returns `+∞` where the trace term `Σ (1 − ω φ_i)` is not positive; for
/// `ω > 1` that is the region left of the pole, where the residual degrees of
/// freedom are negative and the ratio is meaningless.
pub fn wgcv_objective(sd: &SpectralData, omega: f64, lambda: f64) -> f64 {
    let l2 = lambda * lambda;
    let (mut num, mut den) = (0.0, 0.0);
    for (s, b) in sd.sigma.iter().zip(&sd.b_hat) {
        let s2 = s * s;
        let d = s2 + l2;
        let r = l2 * b / d;
        num += r * r;
        den += ((1.0 - omega) * s2 + l2) / d;
    }
    if !(den > 0.0) {
        return f64::INFINITY;
    }
    sd.len() as f64 * num / (den * den)
}

/// `D(λ) = Σ (λ² b̂ / (σ² + λ²))² − ε²`.
pub fn discrepancy_function(sd: &SpectralData, epsilon: f64, lambda: f64) -> f64 {
    let l2 = lambda * lambda;
    let resid: f64 = sd
        .sigma
        .iter()
        .zip(&sd.b_hat)
        .map(|(s, b)| {
            let r = l2 * b / (s * s + l2);
            r * r
        })
        .sum();
    resid - epsilon * epsilon
}

const SCAN_POINTS: usize = 241;
const FLAT_TOL: f64 = 1e-14;
const LOG_TOL: f64 = 1e-11;

fn log_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..points)
        .map(|k| a + (b - a) * k as f64 / (points - 1) as f64)
        .collect()
}

/// Minimize `f(λ)` over the log bracket: coarse scan, then golden section.
fn minimize_log(
    f: impl Fn(f64) -> f64,
    bracket: (f64, f64),
    method: ParamMethod,
) -> Result<ParamChoice, RegError> {
    let (lo, hi) = bracket;
    let g = |t: f64| f(t.exp());
    let ts = log_grid(lo, hi, SCAN_POINTS);
    let vals: Vec<f64> = ts.iter().map(|&t| g(t)).collect();
    let finite: Vec<f64> = vals.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return Err(RegError::NonFinite);
    }
    let vmax = finite.iter().copied().fold(f64::MIN, f64::max);
    let vmin = finite.iter().copied().fold(f64::MAX, f64::min);
    if vmax - vmin <= FLAT_TOL * vmax.abs().max(vmin.abs()) {
        let mid = (0.5 * (lo.ln() + hi.ln())).exp();
        return Ok(ParamChoice {
            lambda: mid,
            method,
            objective_value: f(mid),
            bracket,
            flat: true,
        });
    }
    let k = vals
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(k, _)| k)
        .unwrap();
    let a = ts[k.saturating_sub(1)];
    let b = ts[(k + 1).min(ts.len() - 1)];
    let (mut t_best, mut v_best) = (ts[k], vals[k]);
    if let Ok((t, v)) = minimize_1d(g, a, b, LOG_TOL) {
        if v < v_best {
            t_best = t;
            v_best = v;
        }
    }
    Ok(ParamChoice {
        lambda: t_best.exp().clamp(lo, hi),
        method,
        objective_value: v_best,
        bracket,
        flat: false,
    })
}

/// λ minimizing the error against the known solution.
pub fn lambda_opt(sd: &SpectralData) -> Result<ParamChoice, RegError> {
    let x_hat = sd.x_hat().ok_or(RegError::MissingXHat)?;
    minimize_log(
        |l| opt_objective(sd, x_hat, l),
        sd.bracket(),
        ParamMethod::Opt,
    )
}

pub fn gcv(sd: &SpectralData) -> Result<ParamChoice, RegError> {
    minimize_log(|l| gcv_objective(sd, l), sd.bracket(), ParamMethod::Gcv)
}

pub fn wgcv(sd: &SpectralData, omega: f64) -> Result<ParamChoice, RegError> {
    if !(omega > 0.0) || !omega.is_finite() {
        return Err(RegError::InvalidOmega(omega));
    }
    let method = ParamMethod::Wgcv { omega };
    if omega == 1.0 {
        // the two forms differ in the last bits, enough to move a golden-section minimizer
        return minimize_log(|l| gcv_objective(sd, l), sd.bracket(), method);
    }
    minimize_log(|l| wgcv_objective(sd, omega, l), sd.bracket(), method)
}

/// Root of `D(λ)` with `ε = η ‖noise‖`. `D` is nondecreasing in `λ`, so the
/// bracket endpoints decide existence.
pub fn discrepancy(sd: &SpectralData, noise_norm: f64, eta: f64) -> Result<ParamChoice, RegError> {
    if !(noise_norm > 0.0) || !noise_norm.is_finite() || !(eta > 0.0) || !eta.is_finite() {
        return Err(RegError::InvalidNoise { noise_norm, eta });
    }
    let eps = eta * noise_norm;
    let (lo, hi) = sd.bracket();
    let d = |l: f64| discrepancy_function(sd, eps, l);
    if d(hi) < 0.0 {
        return Err(RegError::EpsilonTooLarge { lambda_hi: hi });
    }
    if d(lo) > 0.0 {
        return Err(RegError::EpsilonTooSmall { lambda_lo: lo });
    }
    let t = find_root(|t| d(t.exp()), lo.ln(), hi.ln(), LOG_TOL)?;
    let lambda = t.exp().clamp(lo, hi);
    Ok(ParamChoice {
        lambda,
        method: ParamMethod::Discrepancy { eta, noise_norm },
        objective_value: d(lambda),
        bracket: (lo, hi),
        flat: false,
    })
}

/// Tikhonov solution for the approximate operator:
/// `x = (V_r ⊗ V_c) diag(φ_i / σ_i) (U_r ⊗ U_c)ᵀ b`, `φ_i = σ_i² / (σ_i² + λ²)`.
pub fn filtered_solution(
    p: &KronSvdPreconditioner,
    b: &[f64],
    lambda: f64,
) -> Result<Vec<f64>, RegError> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(RegError::Factor(FactorError::InvalidLambda(lambda)));
    }
    if lambda == 0.0 && p.approx_spectrum().sigma.contains(&0.0) {
        return Err(RegError::DivisionByZero);
    }
    let l2 = lambda * lambda;
    Ok(p.spectral_apply(b, |s| if s == 0.0 { 0.0 } else { s / (s * s + l2) })?)
}
