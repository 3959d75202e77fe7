use nalgebra::DMatrix;

use super::{svd_dense, FactorError, SvdTriple};
use crate::kron::{unvec, vec, KroneckerSum};
use crate::lpblas::lp_matmul;
use crate::precision::{round_array, round_in_place, PrecisionFormat, RoundingMode};

const MODE: RoundingMode = RoundingMode::NearestEven;

/// Singular values of `A_r ⊗ A_c` in nonincreasing order.
///
/// `perm[k]` is the column-stacked Kronecker position `j * n + i` of the k-th
/// largest value `σ_r(j) σ_c(i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub sigma: Vec<f64>,
    pub perm: Vec<usize>,
}

/// `M = Âᵀ Â + λ² I` for `Â = A_r ⊗ A_c`, stored as `V_r`, `V_c` and the
/// weights `S(i, j) = 1 / ((σ_r(j) σ_c(i))² + λ²)`, with rounded copies of
/// all three used by [`KronSvdPreconditioner::solve`].
#[derive(Debug, Clone)]
pub struct KronSvdPreconditioner {
    a_r: DMatrix<f64>,
    a_c: DMatrix<f64>,
    svd_r: SvdTriple,
    svd_c: SvdTriple,
    lambda: f64,
    weights: DMatrix<f64>,
    fmt: PrecisionFormat,
    vr_lp: DMatrix<f64>,
    vr_t_lp: DMatrix<f64>,
    vc_lp: DMatrix<f64>,
    vc_t_lp: DMatrix<f64>,
    s_lp: DMatrix<f64>,
    spectrum: Spectrum,
}

fn round_matrix(m: &DMatrix<f64>, fmt: &PrecisionFormat) -> DMatrix<f64> {
    DMatrix::from_vec(m.nrows(), m.ncols(), round_array(m.as_slice(), fmt, MODE))
}

/// Factor SVDs are computed in working precision; only the stored
/// components are rounded to `fmt`.
pub fn build_preconditioner(
    a_r: DMatrix<f64>,
    a_c: DMatrix<f64>,
    lambda: f64,
    fmt: PrecisionFormat,
) -> Result<KronSvdPreconditioner, FactorError> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(FactorError::InvalidLambda(lambda));
    }
    // validates shapes
    KroneckerSum::single(a_r.clone(), a_c.clone())?;
    let svd_r = svd_dense(&a_r)?;
    let svd_c = svd_dense(&a_c)?;
    let n = a_r.nrows();
    let lambda2 = lambda * lambda;
    let mut weights = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            let sigma = svd_r.s[j] * svd_c.s[i];
            let denom = sigma * sigma + lambda2;
            if denom == 0.0 {
                return Err(FactorError::Singular);
            }
            weights[(i, j)] = 1.0 / denom;
        }
    }

    let mut order: Vec<usize> = (0..n * n).collect();
    let value = |p: usize| svd_r.s[p / n] * svd_c.s[p % n];
    order.sort_by(|&a, &b| value(b).total_cmp(&value(a)).then(a.cmp(&b)));
    let spectrum = Spectrum {
        sigma: order.iter().map(|&p| value(p)).collect(),
        perm: order,
    };

    let vr_lp = round_matrix(&svd_r.v, &fmt);
    let vc_lp = round_matrix(&svd_c.v, &fmt);
    let s_lp = round_matrix(&weights, &fmt);
    Ok(KronSvdPreconditioner {
        vr_t_lp: vr_lp.transpose(),
        vc_t_lp: vc_lp.transpose(),
        vr_lp,
        vc_lp,
        s_lp,
        a_r,
        a_c,
        svd_r,
        svd_c,
        lambda,
        weights,
        fmt,
        spectrum,
    })
}

impl KronSvdPreconditioner {
    pub fn n(&self) -> usize {
        self.a_r.nrows()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn format(&self) -> &PrecisionFormat {
        &self.fmt
    }

    pub fn factors(&self) -> (&DMatrix<f64>, &DMatrix<f64>) {
        (&self.a_r, &self.a_c)
    }

    pub fn svd_r(&self) -> &SvdTriple {
        &self.svd_r
    }

    pub fn svd_c(&self) -> &SvdTriple {
        &self.svd_c
    }

    /// Unrounded weights; `vec(S) = diag(D⁻¹)`.
    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    /// The rounded `(V_r, V_c, S)` actually used by [`Self::solve`].
    pub fn stored_components(&self) -> (&DMatrix<f64>, &DMatrix<f64>, &DMatrix<f64>) {
        (&self.vr_lp, &self.vc_lp, &self.s_lp)
    }

    /// `Â = A_r ⊗ A_c` as a one-term Kronecker sum.
    pub fn approximation(&self) -> KroneckerSum {
        KroneckerSum::single(self.a_r.clone(), self.a_c.clone()).unwrap()
    }

    /// `Â` with both factors rounded to the storage format.
    pub fn rounded_approximation(&self) -> KroneckerSum {
        KroneckerSum::single(
            round_matrix(&self.a_r, &self.fmt),
            round_matrix(&self.a_c, &self.fmt),
        )
        .unwrap()
    }

    /// `z = M⁻¹ r` via `Z = V_c (S .* (V_cᵀ R V_r)) V_rᵀ`, every product
    /// carried out in the storage format.
    pub fn solve(&self, r: &[f64]) -> Result<Vec<f64>, FactorError> {
        let n = self.n();
        let mut rr = r.to_vec();
        let expected = n * n;
        if rr.len() != expected {
            return Err(crate::kron::KronError::Length {
                expected,
                got: rr.len(),
            }
            .into());
        }
        round_in_place(&mut rr, &self.fmt, MODE);
        let rmat = unvec(&rr, n)?;
        let t = lp_matmul(&self.vc_t_lp, &rmat, &self.fmt)?;
        let t = lp_matmul(&t, &self.vr_lp, &self.fmt)?;
        let mut y = t.component_mul(&self.s_lp);
        round_in_place(y.as_mut_slice(), &self.fmt, MODE);
        let t = lp_matmul(&self.vc_lp, &y, &self.fmt)?;
        let z = lp_matmul(&t, &self.vr_t_lp, &self.fmt)?;
        Ok(vec(&z))
    }

    /// `M z = Âᵀ Â z + λ² z` in working precision.
    pub fn apply_system(&self, z: &[f64]) -> Result<Vec<f64>, FactorError> {
        let ahat = self.approximation();
        let az = ahat.apply(z)?;
        let mut out = ahat.apply_transpose(&az)?;
        let l2 = self.lambda * self.lambda;
        for (o, zi) in out.iter_mut().zip(z) {
            *o += l2 * zi;
        }
        Ok(out)
    }

    pub fn approx_spectrum(&self) -> &Spectrum {
        &self.spectrum
    }

    fn project(
        &self,
        left: &DMatrix<f64>,
        right: &DMatrix<f64>,
        y: &[f64],
    ) -> Result<Vec<f64>, FactorError> {
        let ymat = unvec(y, self.n())?;
        let proj = vec(&(left.tr_mul(&ymat) * right));
        Ok(self.spectrum.perm.iter().map(|&p| proj[p]).collect())
    }

    /// `b̂ = (U_r ⊗ U_c)ᵀ b`, in spectrum order.
    pub fn project_b(&self, b: &[f64]) -> Result<Vec<f64>, FactorError> {
        self.project(&self.svd_c.u, &self.svd_r.u, b)
    }

    /// `x̂ = (V_r ⊗ V_c)ᵀ x`, in spectrum order.
    pub fn project_x(&self, x: &[f64]) -> Result<Vec<f64>, FactorError> {
        self.project(&self.svd_c.v, &self.svd_r.v, x)
    }

    /// `x = (V_r ⊗ V_c) diag(f) (U_r ⊗ U_c)ᵀ b` where `f(i, j)` is supplied
    /// per Kronecker position `σ = σ_r(j) σ_c(i)`.
    pub fn spectral_apply(
        &self,
        b: &[f64],
        filter: impl Fn(f64) -> f64,
    ) -> Result<Vec<f64>, FactorError> {
        let n = self.n();
        let bmat = unvec(b, n)?;
        let bhat = self.svd_c.u.tr_mul(&bmat) * &self.svd_r.u;
        let scaled = DMatrix::from_fn(n, n, |i, j| {
            bhat[(i, j)] * filter(self.svd_r.s[j] * self.svd_c.s[i])
        });
        Ok(vec(&(&self.svd_c.v * scaled * self.svd_r.v.transpose())))
    }
}

pub fn precond_solve(p: &KronSvdPreconditioner, r: &[f64]) -> Result<Vec<f64>, FactorError> {
    p.solve(r)
}
