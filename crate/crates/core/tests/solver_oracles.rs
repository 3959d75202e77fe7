//! Parameter rules against grid scans, solvers against dense direct solves.

use kronprecon::deblur::{default_image, make_psf, make_test_problem, BlurKind};
use kronprecon::factor::{build_preconditioner, nearest_kron, Weighting};
use kronprecon::kron::{KronTerm, KroneckerSum};
use kronprecon::krylov::{cgls, fpcg, normal_matvec, pcg, SolverOptions, SolverStatus};
use kronprecon::precision::{PrecisionFormat, RoundingSession};
use kronprecon::regparam::{
    discrepancy, discrepancy_function, filtered_solution, gcv, gcv_objective, lambda_opt,
    opt_objective, wgcv, wgcv_objective, SpectralData,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const GRID: usize = 10_000;

fn log_grid(lo: f64, hi: f64) -> Vec<f64> {
    (0..GRID)
        .map(|k| (lo.ln() + (hi.ln() - lo.ln()) * k as f64 / (GRID - 1) as f64).exp())
        .collect()
}

fn cell(lo: f64, hi: f64) -> f64 {
    (hi.ln() - lo.ln()) / (GRID - 1) as f64
}

fn grid_argmin(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
    log_grid(lo, hi)
        .into_iter()
        .map(|l| (l, f(l)))
        .filter(|(_, v)| v.is_finite())
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap()
        .0
}

fn random_spectrum(rng: &mut ChaCha8Rng, len: usize) -> SpectralData {
    let mut sigma: Vec<f64> = (0..len)
        .map(|i| 10f64.powf(-4.0 * i as f64 / (len - 1) as f64) * rng.random_range(0.5..1.5))
        .collect();
    sigma.sort_by(|a, b| b.total_cmp(a));
    let x: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
    let b: Vec<f64> = sigma
        .iter()
        .zip(&x)
        .map(|(s, xi)| s * xi + 1e-3 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    SpectralData::new(sigma, b, Some(x)).unwrap()
}

#[test]
fn minimizers_match_grid_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for case in 0..20 {
        let sd = random_spectrum(&mut rng, 20);
        let (lo, hi) = sd.bracket();
        let x_hat = sd.x_hat().unwrap().to_vec();
        let checks: [(&str, f64, f64); 3] = [
            (
                "opt",
                lambda_opt(&sd).unwrap().lambda,
                grid_argmin(|l| opt_objective(&sd, &x_hat, l), lo, hi),
            ),
            (
                "gcv",
                gcv(&sd).unwrap().lambda,
                grid_argmin(|l| gcv_objective(&sd, l), lo, hi),
            ),
            (
                "wgcv",
                wgcv(&sd, 3.0).unwrap().lambda,
                grid_argmin(|l| wgcv_objective(&sd, 3.0, l), lo, hi),
            ),
        ];
        for (name, got, grid) in checks {
            assert!((lo..=hi).contains(&got));
            assert!(
                (got.ln() - grid.ln()).abs() <= cell(lo, hi),
                "case {case} {name}: {got:e} vs grid {grid:e}"
            );
        }
    }
}

#[test]
fn gcv_two_values() {
    let sd = SpectralData::new(vec![2.0, 1.0], vec![1.0, 1.0], None).unwrap();
    let (lo, hi) = sd.bracket();
    let got = gcv(&sd).unwrap().lambda;
    let grid = grid_argmin(|l| gcv_objective(&sd, l), lo, hi);
    assert!((got.ln() - grid.ln()).abs() <= cell(lo, hi));
    for l in [0.1f64, 1.0, 10.0] {
        // the uncancelled form, with λ² in numerator and denominator
        let l2 = l * l;
        let num: f64 = [(2.0f64, 1.0f64), (1.0, 1.0)]
            .iter()
            .map(|(s, b)| (l2 * b / (s * s + l2)).powi(2))
            .sum();
        let den: f64 = [2.0f64, 1.0].iter().map(|s| l2 / (s * s + l2)).sum();
        let direct = 2.0 * num / (den * den);
        assert!((gcv_objective(&sd, l) - direct).abs() <= 1e-12 * direct);
    }
}

#[test]
fn opt_closed_form() {
    // a single component with x̂ = 1/2: 1/(1+λ²) = 1/2 at λ = 1
    let sd = SpectralData::new(
        vec![4.0, 1.0, 0.25],
        vec![0.0, 1.0, 0.0],
        Some(vec![0.0, 0.5, 0.0]),
    )
    .unwrap();
    assert!((lambda_opt(&sd).unwrap().lambda - 1.0).abs() < 1e-6);
}

#[test]
fn discrepancy_matches_grid_bisection() {
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    for case in 0..20 {
        let sd = random_spectrum(&mut rng, 20);
        let (lo, hi) = sd.bracket();
        let total: f64 = sd.b_hat().iter().map(|b| b * b).sum::<f64>().sqrt();
        let eps = total * rng.random_range(0.05..0.5);
        let choice = discrepancy(&sd, eps, 1.0).unwrap();
        let grid = log_grid(lo, hi);
        let k = grid
            .iter()
            .position(|&l| discrepancy_function(&sd, eps, l) >= 0.0)
            .unwrap();
        assert!(k > 0, "case {case}: root below the bracket");
        assert!(
            choice.lambda >= grid[k - 1] * (1.0 - 1e-12)
                && choice.lambda <= grid[k] * (1.0 + 1e-12),
            "case {case}: {} not in [{}, {}]",
            choice.lambda,
            grid[k - 1],
            grid[k]
        );
        let mut prev = f64::NEG_INFINITY;
        for l in grid.iter().step_by(97) {
            let d = discrepancy_function(&sd, eps, *l);
            assert!(d >= prev - 1e-14 * d.abs().max(1.0));
            prev = d;
        }
    }
}

#[test]
fn discrepancy_single_value() {
    let sd = SpectralData::new(vec![1.0, 0.5], vec![2.0, 0.0], None).unwrap();
    // D(λ) = (2λ²/(1+λ²))² − 1 vanishes at λ = 1
    let c = discrepancy(&sd, 1.0, 1.0).unwrap();
    assert!((c.lambda - 1.0).abs() < 1e-9);
    assert!(discrepancy(&sd, 2.5, 1.0)
        .unwrap_err()
        .to_string()
        .contains("too large"));
}

#[test]
fn wgcv_one_is_gcv_pointwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(79);
    let sd = random_spectrum(&mut rng, 30);
    for l in log_grid(1e-5, 2.0).into_iter().step_by(101) {
        let (g, w) = (gcv_objective(&sd, l), wgcv_objective(&sd, 1.0, l));
        assert!((g - w).abs() <= 1e-12 * g);
    }
    assert_eq!(gcv(&sd).unwrap().lambda, wgcv(&sd, 1.0).unwrap().lambda);
}

fn rand_factor(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    DMatrix::identity(n, n) + DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.3..0.3))
}

#[test]
fn filtered_solution_matches_dense_normal_equations() {
    let mut rng = ChaCha8Rng::seed_from_u64(80);
    let n = 8;
    for lambda in [0.05, 0.3, 2.0] {
        let (ar, ac) = (rand_factor(&mut rng, n), rand_factor(&mut rng, n));
        let p =
            build_preconditioner(ar.clone(), ac.clone(), lambda, PrecisionFormat::fp64()).unwrap();
        let b: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = KroneckerSum::single(ar, ac).unwrap().densify().unwrap();
        let lhs = a.transpose() * &a + DMatrix::identity(n * n, n * n) * (lambda * lambda);
        let rhs = a.transpose() * DVector::from_vec(b.clone());
        let want = lhs.lu().solve(&rhs).unwrap();
        let got = filtered_solution(&p, &b, lambda).unwrap();
        let err = (DVector::from_vec(got) - &want).norm() / want.norm();
        assert!(err < 1e-10, "λ = {lambda}: {err}");
    }
}

#[test]
fn filtered_solution_with_identity() {
    let p = build_preconditioner(
        DMatrix::identity(3, 3),
        DMatrix::identity(3, 3),
        1.0,
        PrecisionFormat::fp64(),
    )
    .unwrap();
    let b: Vec<f64> = (0..9).map(|i| i as f64 - 4.0).collect();
    let x0 = filtered_solution(&p, &b, 0.0).unwrap();
    let x1 = filtered_solution(&p, &b, 1.0).unwrap();
    for i in 0..9 {
        assert!((x0[i] - b[i]).abs() < 1e-15);
        assert!((x1[i] - b[i] / 2.0).abs() < 1e-15);
    }
}

fn rand_sum(rng: &mut ChaCha8Rng, n: usize, terms: usize) -> KroneckerSum {
    KroneckerSum::new(
        (0..terms)
            .map(|_| KronTerm {
                row: rand_factor(rng, n),
                col: rand_factor(rng, n),
            })
            .collect(),
    )
    .unwrap()
}

fn dense_normal(a: &KroneckerSum, lambda: f64) -> DMatrix<f64> {
    let d = a.densify().unwrap();
    let dim = d.ncols();
    d.transpose() * &d + DMatrix::identity(dim, dim) * (lambda * lambda)
}

/// Plain CG on the dense normal equations, returning every iterate.
fn dense_cg(m: &DMatrix<f64>, rhs: &DVector<f64>, iters: usize) -> Vec<DVector<f64>> {
    let mut x = DVector::zeros(rhs.len());
    let mut r = rhs.clone();
    let mut p = r.clone();
    let mut out = vec![];
    for _ in 0..iters {
        let q = m * &p;
        let alpha = r.dot(&r) / p.dot(&q);
        x += alpha * &p;
        let r_new = &r - alpha * &q;
        let beta = r_new.dot(&r_new) / r.dot(&r);
        p = &r_new + beta * &p;
        r = r_new;
        out.push(x.clone());
    }
    out
}

#[test]
fn normal_matvec_matches_dense() {
    let mut rng = ChaCha8Rng::seed_from_u64(81);
    let a = rand_sum(&mut rng, 4, 2);
    let p: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
    let want = dense_normal(&a, 0.7) * DVector::from_vec(p.clone());
    let got = normal_matvec(&a, 0.7, &p).unwrap();
    assert!((DVector::from_vec(got) - &want).norm() <= 1e-12 * want.norm());
}

#[test]
fn solvers_match_dense_direct_solve() {
    let mut rng = ChaCha8Rng::seed_from_u64(82);
    for n in [2usize, 4, 6, 8] {
        let a = rand_sum(&mut rng, n, 2);
        let lambda = 0.1;
        let b: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rhs = a.densify().unwrap().transpose() * DVector::from_vec(b.clone());
        let want = dense_normal(&a, lambda).lu().solve(&rhs).unwrap();
        let opts = SolverOptions::new(lambda, n * n).with_tol(1e-12);
        let m = build_preconditioner(
            DMatrix::identity(n, n),
            DMatrix::identity(n, n),
            1.0,
            PrecisionFormat::fp64(),
        )
        .unwrap();
        for (name, (x, h)) in [
            ("cgls", cgls(&a, &b, &opts).unwrap()),
            ("pcg", pcg(&a, &b, &m, &opts).unwrap()),
        ] {
            let err = (DVector::from_vec(x) - &want).norm() / want.norm();
            assert!(err < 1e-8, "{name} n = {n}: {err}");
            assert!(h.iterations_used() <= n * n);
            let last = h.records.last().unwrap().residual_norm;
            assert!(last <= 1e-8 * h.records[0].residual_norm, "{name} n = {n}");
        }
    }
}

#[test]
fn scalar_preconditioner_reproduces_cg_iterates() {
    let mut rng = ChaCha8Rng::seed_from_u64(83);
    let n = 5;
    let a = rand_sum(&mut rng, n, 2);
    let lambda = 0.2;
    let b: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let rhs = a.densify().unwrap().transpose() * DVector::from_vec(b.clone());
    let reference = dense_cg(&dense_normal(&a, lambda), &rhs, 6);
    let m = build_preconditioner(
        DMatrix::identity(n, n),
        DMatrix::identity(n, n),
        1.0,
        PrecisionFormat::fp64(),
    )
    .unwrap();
    for (k, want) in reference.iter().enumerate() {
        let opts = SolverOptions::new(lambda, k + 1).with_tol(1e-300);
        for x in [
            pcg(&a, &b, &m, &opts).unwrap().0,
            fpcg(&a, &b, &m, &opts).unwrap().0,
            cgls(&a, &b, &opts).unwrap().0,
        ] {
            let err = (DVector::from_vec(x) - want).norm() / want.norm();
            assert!(err < 1e-10, "iteration {}: {err}", k + 1);
        }
    }
}

#[test]
fn exact_inverse_converges_in_one_step() {
    let psf = make_psf(&BlurKind::Gaussian { sigma: 1.5 }, 7, 0).unwrap();
    let tp = make_test_problem(&default_image(16), &psf, 0.01, 1).unwrap();
    assert_eq!(tp.a.num_terms(), 1);
    let (ar, ac) = nearest_kron(&psf, 16, Weighting::Toeplitz).unwrap();
    let lambda = 0.05;
    let m = build_preconditioner(ar, ac, lambda, PrecisionFormat::fp64()).unwrap();
    let (_, h) = pcg(
        &tp.a,
        &tp.b,
        &m,
        &SolverOptions::new(lambda, 10).with_tol(1e-8),
    )
    .unwrap();
    assert_eq!(h.status, SolverStatus::Converged);
    assert_eq!(h.iterations_used(), 1);
}

#[test]
fn heavy_damping_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(84);
    let a = rand_sum(&mut rng, 4, 2);
    let sigma_max = a.densify().unwrap().singular_values().max();
    let lambda = 10.0 * sigma_max;
    let b: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
    let atb = a.apply_transpose(&b).unwrap();
    let bound = atb.iter().map(|v| v * v).sum::<f64>().sqrt() / (lambda * lambda);
    let (x, _) = cgls(&a, &b, &SolverOptions::new(lambda, 16)).unwrap();
    assert!(x.iter().map(|v| v * v).sum::<f64>().sqrt() <= bound * (1.0 + 1e-10));
}

#[test]
fn pcg_error_energy_norm_is_monotone() {
    let psf = make_psf(&BlurKind::Defocus { radius: 2.0 }, 7, 0).unwrap();
    let tp = make_test_problem(&default_image(12), &psf, 0.01, 2).unwrap();
    let lambda = 0.05;
    let mat = dense_normal(&tp.a, lambda);
    let rhs = DVector::from_vec(tp.a.apply_transpose(&tp.b).unwrap());
    let xstar = mat.clone().lu().solve(&rhs).unwrap();
    let (ar, ac) = nearest_kron(&psf, 12, Weighting::Toeplitz).unwrap();
    let m = build_preconditioner(ar, ac, lambda, PrecisionFormat::fp64()).unwrap();
    let energy = |x: &[f64]| {
        let e = DVector::from_column_slice(x) - &xstar;
        e.dot(&(&mat * &e)).sqrt()
    };
    let mut prev = energy(&vec![0.0; 144]);
    for k in 1..=12 {
        let (x, _) = pcg(
            &tp.a,
            &tp.b,
            &m,
            &SolverOptions::new(lambda, k).with_tol(1e-300),
        )
        .unwrap();
        let e = energy(&x);
        assert!(
            e <= prev * (1.0 + 1e-12) + 1e-12,
            "iteration {k}: {e} > {prev}"
        );
        prev = e;
    }
}

#[test]
fn rounding_happens_only_in_preconditioner_solves() {
    let psf = make_psf(&BlurKind::Gaussian { sigma: 1.5 }, 7, 0).unwrap();
    let tp = make_test_problem(&default_image(16), &psf, 0.01, 1).unwrap();
    let (ar, ac) = nearest_kron(&psf, 16, Weighting::Toeplitz).unwrap();
    let m = build_preconditioner(ar, ac, 0.05, PrecisionFormat::fp16()).unwrap();
    let per_solve = {
        let s = RoundingSession::start();
        m.solve(&tp.b).unwrap();
        s.calls()
    };
    let s = RoundingSession::start();
    let (_, h) = pcg(
        &tp.a,
        &tp.b,
        &m,
        &SolverOptions::new(0.05, 4).with_tol(1e-300),
    )
    .unwrap();
    assert_eq!(h.status, SolverStatus::MaxIterations);
    assert_eq!(s.calls(), 4 * per_solve);
    let s = RoundingSession::start();
    cgls(&tp.a, &tp.b, &SolverOptions::new(0.05, 4)).unwrap();
    assert_eq!(s.calls(), 0);
}
