//! Conjugate-gradient solvers for `(AᵀA + λ²I) x = Aᵀb`.
//!
//! All vector arithmetic here is in `f64`; only the preconditioner solve may
//! round. Work is counted in units of one structured matvec: 2 per iteration
//! for the `A`/`Aᵀ` pair, plus [`Preconditioner::work_units`] per solve.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::factor::{FactorError, KronSvdPreconditioner};
use crate::kron::{KronError, KroneckerSum};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KrylovError {
    #[error("vector of length {got} does not match operator dimension {expected}")]
    Length { expected: usize, got: usize },
    #[error("invalid solver options: {0}")]
    InvalidOptions(String),
    #[error("relative errors need x_true; the plateau is undefined without it")]
    MissingTruth,
    #[error(transparent)]
    Kron(#[from] KronError),
    #[error(transparent)]
    Factor(#[from] FactorError),
}

/// Anything that approximately inverts the normal-equations matrix.
pub trait Preconditioner {
    fn solve(&self, r: &[f64]) -> Result<Vec<f64>, FactorError>;

    /// Cost of one solve in matvec units.
    fn work_units(&self) -> f64 {
        0.25
    }
}

impl Preconditioner for KronSvdPreconditioner {
    fn solve(&self, r: &[f64]) -> Result<Vec<f64>, FactorError> {
        KronSvdPreconditioner::solve(self, r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub lambda: f64,
    pub max_iterations: usize,
    /// Stop once `‖r_k‖ / ‖Aᵀb‖` falls below this.
    pub rel_residual_tol: f64,
    pub x_true: Option<Vec<f64>>,
    pub track_search_direction_orthogonality: bool,
}

impl SolverOptions {
    pub fn new(lambda: f64, max_iterations: usize) -> Self {
        Self {
            lambda,
            max_iterations,
            rel_residual_tol: 1e-10,
            x_true: None,
            track_search_direction_orthogonality: false,
        }
    }

    pub fn with_truth(mut self, x_true: Vec<f64>) -> Self {
        self.x_true = Some(x_true);
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.rel_residual_tol = tol;
        self
    }

    fn validate(&self, dim: usize) -> Result<(), KrylovError> {
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(KrylovError::InvalidOptions(format!(
                "lambda = {}",
                self.lambda
            )));
        }
        if self.max_iterations == 0 {
            return Err(KrylovError::InvalidOptions(
                "max_iterations must be >= 1".into(),
            ));
        }
        if !(self.rel_residual_tol > 0.0) {
            return Err(KrylovError::InvalidOptions(format!(
                "rel_residual_tol = {}",
                self.rel_residual_tol
            )));
        }
        if let Some(x) = &self.x_true {
            check_len(dim, x.len())?;
            if norm(x) == 0.0 {
                return Err(KrylovError::InvalidOptions("x_true is zero".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SolverStatus {
    Converged,
    MaxIterations,
    /// Zero or negative curvature `pᵀ(AᵀA + λ²I)p`, or a vanishing `zᵀr`.
    Breakdown {
        iteration: usize,
    },
    /// The preconditioner produced NaN or infinity; the last finite iterate is kept.
    NonFinite {
        iteration: usize,
    },
}

impl SolverStatus {
    pub fn reason(&self) -> String {
        match self {
            SolverStatus::Converged => "converged".into(),
            SolverStatus::MaxIterations => "maximum iterations reached".into(),
            SolverStatus::Breakdown { iteration } => format!("breakdown at iteration {iteration}"),
            SolverStatus::NonFinite { iteration } => {
                format!("non-finite preconditioner output at iteration {iteration}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub relative_error: Option<f64>,
    pub residual_norm: f64,
    pub work_units: f64,
    /// `|p_kᵀ M p_{k-1}| / (‖p_k‖ ‖M p_{k-1}‖)`, when tracked.
    pub direction_orthogonality: Option<f64>,
}

/// Row 0 describes the starting guess `x_0 = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceHistory {
    pub records: Vec<IterationRecord>,
    pub status: SolverStatus,
    pub work_per_iteration: f64,
}

pub const DEFAULT_PLATEAU_TOL: f64 = 0.01;

impl ConvergenceHistory {
    pub fn iterations_used(&self) -> usize {
        self.records.len() - 1
    }

    pub fn converged(&self) -> bool {
        self.status == SolverStatus::Converged
    }

    pub fn relative_errors(&self) -> Option<Vec<f64>> {
        self.records.iter().map(|r| r.relative_error).collect()
    }

    pub fn final_relative_error(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.relative_error)
    }

    /// First iteration `k >= 1` whose relative error is within `rel_tol` of the
    /// smallest relative error over iterations `1..=m`.
    pub fn plateau_iteration(&self, rel_tol: f64) -> Option<usize> {
        let errs = self.relative_errors()?;
        let tail = errs.get(1..).filter(|t| !t.is_empty())?;
        let min = tail.iter().copied().fold(f64::INFINITY, f64::min);
        tail.iter()
            .position(|&e| e <= min * (1.0 + rel_tol))
            .map(|k| k + 1)
    }
}

fn check_len(expected: usize, got: usize) -> Result<(), KrylovError> {
    if expected != got {
        return Err(KrylovError::Length { expected, got });
    }
    Ok(())
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `Aᵀ(A p) + λ² p`.
pub fn normal_matvec(a: &KroneckerSum, lambda: f64, p: &[f64]) -> Result<Vec<f64>, KrylovError> {
    check_len(a.dim(), p.len())?;
    let ap = a.apply(p)?;
    let mut out = a.apply_transpose(&ap)?;
    axpy(lambda * lambda, p, &mut out);
    Ok(out)
}

struct Recorder<'a> {
    x_true: Option<&'a [f64]>,
    x_true_norm: f64,
    track: bool,
    work_per_iteration: f64,
    records: Vec<IterationRecord>,
}

impl<'a> Recorder<'a> {
    fn new(opts: &'a SolverOptions, work_per_iteration: f64) -> Self {
        let x_true = opts.x_true.as_deref();
        Self {
            x_true,
            x_true_norm: x_true.map(norm).unwrap_or(1.0),
            track: opts.track_search_direction_orthogonality,
            work_per_iteration,
            records: Vec::new(),
        }
    }

    fn push(&mut self, x: &[f64], residual_norm: f64, orth: Option<f64>) {
        let relative_error = self.x_true.map(|t| {
            let d: f64 = x.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum();
            d.sqrt() / self.x_true_norm
        });
        let k = self.records.len();
        self.records.push(IterationRecord {
            iteration: k,
            relative_error,
            residual_norm,
            work_units: k as f64 * self.work_per_iteration,
            direction_orthogonality: if self.track { orth } else { None },
        });
    }

    fn finish(self, status: SolverStatus) -> ConvergenceHistory {
        ConvergenceHistory {
            records: self.records,
            status,
            work_per_iteration: self.work_per_iteration,
        }
    }
}

fn orthogonality(p: &[f64], prev_mp: Option<&[f64]>) -> Option<f64> {
    let q = prev_mp?;
    let den = norm(p) * norm(q);
    Some(if den == 0.0 {
        0.0
    } else {
        dot(p, q).abs() / den
    })
}

/// CGLS on the stacked system `[A; λI] x ≈ [b; 0]`.
pub fn cgls(
    a: &KroneckerSum,
    b: &[f64],
    opts: &SolverOptions,
) -> Result<(Vec<f64>, ConvergenceHistory), KrylovError> {
    let dim = a.dim();
    check_len(dim, b.len())?;
    opts.validate(dim)?;
    let l2 = opts.lambda * opts.lambda;
    let mut rec = Recorder::new(opts, 2.0);

    let mut x = vec![0.0; dim];
    let mut r = b.to_vec();
    let mut s = a.apply_transpose(&r)?;
    let s0 = norm(&s);
    let mut p = s.clone();
    let mut gamma = dot(&s, &s);
    rec.push(&x, s0, None);
    if s0 == 0.0 {
        return Ok((x, rec.finish(SolverStatus::Converged)));
    }

    let mut prev_mp: Option<Vec<f64>> = None;
    let mut status = SolverStatus::MaxIterations;
    for k in 1..=opts.max_iterations {
        let orth = if rec.track {
            orthogonality(&p, prev_mp.as_deref())
        } else {
            None
        };
        let q = a.apply(&p)?;
        let delta = dot(&q, &q) + l2 * dot(&p, &p);
        if !(delta > 0.0) || !delta.is_finite() {
            status = SolverStatus::Breakdown { iteration: k };
            break;
        }
        let alpha = gamma / delta;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &q, &mut r);
        s = a.apply_transpose(&r)?;
        axpy(-l2, &x, &mut s);
        let s_norm = norm(&s);
        rec.push(&x, s_norm, orth);
        if s_norm <= opts.rel_residual_tol * s0 {
            status = SolverStatus::Converged;
            break;
        }
        if rec.track {
            let mut mp = a.apply_transpose(&q)?;
            axpy(l2, &p, &mut mp);
            prev_mp = Some(mp);
        }
        let gamma_new = dot(&s, &s);
        let beta = gamma_new / gamma;
        gamma = gamma_new;
        for (pi, si) in p.iter_mut().zip(&s) {
            *pi = si + beta * *pi;
        }
    }
    Ok((x, rec.finish(status)))
}

#[derive(Clone, Copy, PartialEq)]
enum BetaRule {
    FletcherReeves,
    PolakRibiere,
}

fn preconditioned_cg(
    a: &KroneckerSum,
    b: &[f64],
    m: &dyn Preconditioner,
    opts: &SolverOptions,
    rule: BetaRule,
) -> Result<(Vec<f64>, ConvergenceHistory), KrylovError> {
    let dim = a.dim();
    check_len(dim, b.len())?;
    opts.validate(dim)?;
    let lambda = opts.lambda;
    let mut rec = Recorder::new(opts, 2.0 + m.work_units());

    let mut x = vec![0.0; dim];
    let mut r = a.apply_transpose(b)?;
    let r0 = norm(&r);
    rec.push(&x, r0, None);
    if r0 == 0.0 {
        return Ok((x, rec.finish(SolverStatus::Converged)));
    }
    let mut z = m.solve(&r)?;
    if z.iter().any(|v| !v.is_finite()) {
        return Ok((x, rec.finish(SolverStatus::NonFinite { iteration: 1 })));
    }
    let mut rho = dot(&z, &r);
    if !(rho > 0.0) {
        return Ok((x, rec.finish(SolverStatus::Breakdown { iteration: 1 })));
    }
    let mut p = z.clone();
    let mut prev_q: Option<Vec<f64>> = None;
    let mut status = SolverStatus::MaxIterations;

    for k in 1..=opts.max_iterations {
        let orth = if rec.track {
            orthogonality(&p, prev_q.as_deref())
        } else {
            None
        };
        let q = normal_matvec(a, lambda, &p)?;
        let delta = dot(&p, &q);
        if !(delta > 0.0) || !delta.is_finite() {
            status = SolverStatus::Breakdown { iteration: k };
            break;
        }
        let alpha = rho / delta;
        let r_old = if rule == BetaRule::PolakRibiere {
            Some(r.clone())
        } else {
            None
        };
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &q, &mut r);
        let r_norm = norm(&r);
        rec.push(&x, r_norm, orth);
        if r_norm <= opts.rel_residual_tol * r0 {
            status = SolverStatus::Converged;
            break;
        }
        if k == opts.max_iterations {
            break;
        }
        z = m.solve(&r)?;
        if z.iter().any(|v| !v.is_finite()) {
            status = SolverStatus::NonFinite { iteration: k + 1 };
            break;
        }
        let rho_new = dot(&z, &r);
        let num = match &r_old {
            None => rho_new,
            Some(ro) => z
                .iter()
                .zip(&r)
                .zip(ro)
                .map(|((zi, ri), oi)| zi * (ri - oi))
                .sum(),
        };
        if !(rho_new > 0.0) || !num.is_finite() {
            status = SolverStatus::Breakdown { iteration: k + 1 };
            break;
        }
        let beta = num / rho;
        rho = rho_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
        if rec.track {
            prev_q = Some(q);
        }
    }
    Ok((x, rec.finish(status)))
}

/// Preconditioned CG with the Fletcher–Reeves `β`.
pub fn pcg(
    a: &KroneckerSum,
    b: &[f64],
    m: &dyn Preconditioner,
    opts: &SolverOptions,
) -> Result<(Vec<f64>, ConvergenceHistory), KrylovError> {
    preconditioned_cg(a, b, m, opts, BetaRule::FletcherReeves)
}

/// Flexible PCG: the Polak–Ribière `β = z_{k+1}ᵀ(r_{k+1} − r_k) / z_kᵀr_k`,
/// which tolerates a preconditioner that varies between iterations.
pub fn fpcg(
    a: &KroneckerSum,
    b: &[f64],
    m: &dyn Preconditioner,
    opts: &SolverOptions,
) -> Result<(Vec<f64>, ConvergenceHistory), KrylovError> {
    preconditioned_cg(a, b, m, opts, BetaRule::PolakRibiere)
}

/// Whether preconditioning is cheaper than the baseline to reach the error
/// plateau: `(2 + 1/4) m_P < 2 m_N`, i.e. `m_P < 8/9 m_N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkReport {
    pub m_p: usize,
    pub m_n: usize,
    pub threshold: f64,
    pub preconditioning_pays: bool,
    pub work_p: f64,
    pub work_n: f64,
    pub plateau_tol: f64,
}

impl WorkReport {
    pub fn from_iterations(m_p: usize, m_n: usize) -> Self {
        Self {
            m_p,
            m_n,
            threshold: 8.0 * m_n as f64 / 9.0,
            // integer form of m_p < 8/9 m_n, free of rounding at the boundary
            preconditioning_pays: 9 * m_p < 8 * m_n,
            work_p: 2.25 * m_p as f64,
            work_n: 2.0 * m_n as f64,
            plateau_tol: DEFAULT_PLATEAU_TOL,
        }
    }
}

pub fn work_report(
    h_precond: &ConvergenceHistory,
    h_baseline: &ConvergenceHistory,
) -> Result<WorkReport, KrylovError> {
    work_report_with_tol(h_precond, h_baseline, DEFAULT_PLATEAU_TOL)
}

pub fn work_report_with_tol(
    h_precond: &ConvergenceHistory,
    h_baseline: &ConvergenceHistory,
    plateau_tol: f64,
) -> Result<WorkReport, KrylovError> {
    let m_p = h_precond
        .plateau_iteration(plateau_tol)
        .ok_or(KrylovError::MissingTruth)?;
    let m_n = h_baseline
        .plateau_iteration(plateau_tol)
        .ok_or(KrylovError::MissingTruth)?;
    let mut rep = WorkReport::from_iterations(m_p, m_n);
    rep.work_p = m_p as f64 * h_precond.work_per_iteration;
    rep.work_n = m_n as f64 * h_baseline.work_per_iteration;
    rep.plateau_tol = plateau_tol;
    Ok(rep)
}
