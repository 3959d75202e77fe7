use std::fs;
use std::path::{Path, PathBuf};

use kronprecon::deblur::pgm::write_pgm;
use kronprecon::deblur::{
    default_image, default_truncation_tol, load_problem, make_psf, make_test_problem_with_tol,
    save_problem, TestProblem,
};
use kronprecon::factor::{build_preconditioner, nearest_kron, KronSvdPreconditioner, Weighting};
use kronprecon::kron::{unvec, KroneckerSum};
use kronprecon::krylov::{
    cgls, fpcg, pcg, work_report_with_tol, ConvergenceHistory, SolverOptions, WorkReport,
};
use kronprecon::precision::{round_value, PrecisionFormat, RoundingMode};
use kronprecon::regparam::{
    discrepancy, gcv, lambda_opt, wgcv, ParamChoice, ParamMethod, RegError, SpectralData,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{ExperimentConfig, ParamKind, RawConfig, SolverKind, SweepSpec};
use crate::output::{
    num, opt_num, read_summary, write_csv, write_json, COMPARISON_SCHEMA, CONVERGENCE_SCHEMA,
    DECOMPOSE_SCHEMA, SUMMARY_SCHEMA, SWEEP_SCHEMA, WORK_REPORT_SCHEMA,
};
use crate::CliError;

fn prepare_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))
}

/// Build the configured problem, or load it from `bundle`.
pub fn build_problem(cfg: &ExperimentConfig) -> Result<TestProblem, CliError> {
    if let Some(dir) = &cfg.bundle {
        return Ok(load_problem(dir)?);
    }
    let psf = make_psf(&cfg.blur, cfg.psf_size, cfg.seed)?;
    let tol = cfg
        .truncation_tol
        .unwrap_or_else(|| default_truncation_tol(cfg.psf_size));
    Ok(make_test_problem_with_tol(
        &default_image(cfg.n),
        &psf,
        cfg.noise,
        cfg.seed,
        tol,
    )?)
}

fn write_image(v: &[f64], n: usize, path: &Path) -> Result<(), CliError> {
    let img = unvec(v, n).map_err(|e| CliError::Numerical(e.to_string()))?;
    write_pgm(&img, path)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemInfo {
    pub n: usize,
    pub psf_size: usize,
    pub terms: usize,
    pub noise_level: f64,
    pub noise_norm: f64,
    pub seed: u64,
}

fn problem_info(tp: &TestProblem) -> ProblemInfo {
    ProblemInfo {
        n: tp.n(),
        psf_size: tp.psf.size(),
        terms: tp.a.num_terms(),
        noise_level: tp.noise_level,
        noise_norm: tp.noise_norm(),
        seed: tp.seed,
    }
}

/// Writes `bundle/` plus PGM previews of `x_true`, `b_true` and `b`.
pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<ProblemInfo, CliError> {
    let tp = build_problem(cfg)?;
    prepare_out(&cfg.out)?;
    save_problem(&tp, &cfg.out.join("bundle"))?;
    let n = tp.n();
    write_image(&tp.x_true, n, &cfg.out.join("xtrue.pgm"))?;
    write_image(&tp.b_true, n, &cfg.out.join("btrue.pgm"))?;
    write_image(&tp.b, n, &cfg.out.join("b.pgm"))?;
    let info = problem_info(&tp);
    write_json(
        &cfg.out.join("summary.json"),
        &json!({ "schema": SUMMARY_SCHEMA, "verb": "generate", "config": cfg, "problem": info }),
    )?;
    Ok(info)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecomposeRow {
    pub blur: String,
    pub n: usize,
    pub psf_size: usize,
    pub terms: usize,
    pub fmt: String,
    pub rel_error_unrounded: f64,
    pub rel_error_rounded: f64,
}

fn nearest(tp: &TestProblem) -> Result<(KroneckerSum, KroneckerSum), CliError> {
    let (ar, ac) = nearest_kron(&tp.psf, tp.n(), Weighting::Toeplitz)?;
    let single = KroneckerSum::single(ar, ac).map_err(|e| CliError::Numerical(e.to_string()))?;
    Ok((tp.a.clone(), single))
}

fn round_sum(k: &KroneckerSum, fmt: &PrecisionFormat) -> KroneckerSum {
    let r = |v: f64| round_value(v, fmt, RoundingMode::NearestEven);
    let t = &k.terms()[0];
    KroneckerSum::single(t.row.map(r), t.col.map(r)).expect("same shape as the input")
}

/// Number of Kronecker terms in `A` and the relative Frobenius distance to
/// its nearest single Kronecker product, unrounded and with factors rounded
/// to the configured format.
pub fn cmd_decompose(cfg: &ExperimentConfig) -> Result<DecomposeRow, CliError> {
    let tp = build_problem(cfg)?;
    let (a, ahat) = nearest(&tp)?;
    let fmt = cfg.format();
    let numerr = |e: kronprecon::kron::KronError| CliError::Numerical(e.to_string());
    let row = DecomposeRow {
        blur: tp.psf.kind().name().to_string(),
        n: tp.n(),
        psf_size: tp.psf.size(),
        terms: a.num_terms(),
        fmt: fmt.name.clone(),
        rel_error_unrounded: a.relative_frobenius_distance(&ahat).map_err(numerr)?,
        rel_error_rounded: a
            .relative_frobenius_distance(&round_sum(&ahat, &fmt))
            .map_err(numerr)?,
    };
    prepare_out(&cfg.out)?;
    write_csv(
        &cfg.out.join("decompose.csv"),
        DECOMPOSE_SCHEMA,
        &[
            "blur",
            "n",
            "psf_size",
            "terms",
            "fmt",
            "rel_error_unrounded",
            "rel_error_rounded",
        ],
        &[vec![
            row.blur.clone(),
            row.n.to_string(),
            row.psf_size.to_string(),
            row.terms.to_string(),
            row.fmt.clone(),
            num(row.rel_error_unrounded),
            num(row.rel_error_rounded),
        ]],
    )?;
    write_json(
        &cfg.out.join("decompose.json"),
        &json!({ "schema": DECOMPOSE_SCHEMA, "config": cfg, "row": row }),
    )?;
    Ok(row)
}

/// Everything downstream of the problem: factors, spectrum and the chosen λ.
struct Setup {
    tp: TestProblem,
    factors: (kronprecon::kron::KronTerm, PrecisionFormat),
    spectral: SpectralData,
}

fn setup(cfg: &ExperimentConfig) -> Result<Setup, CliError> {
    let tp = build_problem(cfg)?;
    let (ar, ac) = nearest_kron(&tp.psf, tp.n(), Weighting::Toeplitz)?;
    // the spectrum and projections do not depend on λ or the storage format
    let probe = build_preconditioner(ar.clone(), ac.clone(), 1.0, PrecisionFormat::fp64())?;
    let spectral = SpectralData::from_preconditioner(&probe, &tp.b, Some(&tp.x_true))
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    Ok(Setup {
        tp,
        factors: (
            kronprecon::kron::KronTerm { row: ar, col: ac },
            cfg.format(),
        ),
        spectral,
    })
}

fn choose_lambda(cfg: &ExperimentConfig, s: &Setup) -> Result<ParamChoice, RegError> {
    let sd = &s.spectral;
    match cfg.param {
        ParamKind::Opt => lambda_opt(sd),
        ParamKind::Gcv => gcv(sd),
        ParamKind::Wgcv => wgcv(sd, cfg.omega),
        ParamKind::Discrepancy => discrepancy(sd, s.tp.noise_norm(), cfg.eta),
        ParamKind::Fixed => {
            let lambda = cfg.lambda.expect("validated in from_raw");
            Ok(ParamChoice {
                lambda,
                method: ParamMethod::Fixed,
                objective_value: 0.0,
                bracket: (lambda, lambda),
                flat: false,
            })
        }
    }
}

fn preconditioner(s: &Setup, lambda: f64) -> Result<KronSvdPreconditioner, CliError> {
    let (t, fmt) = &s.factors;
    Ok(build_preconditioner(
        t.row.clone(),
        t.col.clone(),
        lambda,
        fmt.clone(),
    )?)
}

fn run_solver(
    kind: SolverKind,
    s: &Setup,
    m: Option<&KronSvdPreconditioner>,
    opts: &SolverOptions,
) -> Result<(Vec<f64>, ConvergenceHistory), CliError> {
    let (a, b) = (&s.tp.a, &s.tp.b);
    Ok(match (kind, m) {
        (SolverKind::Cgls, _) => cgls(a, b, opts)?,
        (SolverKind::Pcg, Some(m)) => pcg(a, b, m, opts)?,
        (SolverKind::Fpcg, Some(m)) => fpcg(a, b, m, opts)?,
        (_, None) => unreachable!("preconditioned solvers always get a preconditioner"),
    })
}

fn options(cfg: &ExperimentConfig, s: &Setup, lambda: f64) -> SolverOptions {
    SolverOptions::new(lambda, cfg.maxit)
        .with_tol(cfg.tol)
        .with_truth(s.tp.x_true.clone())
}

fn history_rows(h: &ConvergenceHistory, prefix: Option<&str>) -> Vec<Vec<String>> {
    h.records
        .iter()
        .map(|r| {
            let mut row: Vec<String> = prefix.map(|p| vec![p.to_string()]).unwrap_or_default();
            row.extend([
                r.iteration.to_string(),
                opt_num(r.relative_error),
                num(r.residual_norm),
                num(r.work_units),
            ]);
            row
        })
        .collect()
}

const HISTORY_HEADER: [&str; 4] = [
    "iteration",
    "relative_error",
    "residual_norm",
    "cumulative_work_units",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub solver: SolverKind,
    pub iterations: usize,
    pub plateau_iteration: Option<usize>,
    pub converged: bool,
    pub status: String,
    pub final_relative_error: Option<f64>,
    pub final_residual_norm: f64,
    pub work_units: f64,
}

fn outcome(kind: SolverKind, h: &ConvergenceHistory, plateau_tol: f64) -> RunOutcome {
    let last = h.records.last().expect("history has the starting row");
    RunOutcome {
        solver: kind,
        iterations: h.iterations_used(),
        plateau_iteration: h.plateau_iteration(plateau_tol),
        converged: h.converged(),
        status: h.status.reason(),
        final_relative_error: last.relative_error,
        final_residual_norm: last.residual_norm,
        work_units: last.work_units,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub schema: String,
    pub verb: String,
    pub config: ExperimentConfig,
    pub problem: ProblemInfo,
    pub lambda: Option<f64>,
    pub precond_lambda: Option<f64>,
    pub param: Option<ParamChoice>,
    pub param_error: Option<String>,
    pub run: Option<RunOutcome>,
    pub converged: bool,
    pub work_report: Option<WorkReport>,
}

fn baseline_report(
    cfg: &ExperimentConfig,
    run: &RunOutcome,
) -> Result<Option<WorkReport>, CliError> {
    let Some(dir) = &cfg.baseline else {
        return Ok(None);
    };
    let path = if dir.is_dir() {
        dir.join("summary.json")
    } else {
        dir.clone()
    };
    let base = read_summary(&path, SUMMARY_SCHEMA)?;
    let m_n = base["run"]["plateau_iteration"].as_u64().ok_or_else(|| {
        CliError::Io(format!(
            "{}: baseline has no plateau iteration",
            path.display()
        ))
    })?;
    let Some(m_p) = run.plateau_iteration else {
        return Ok(None);
    };
    let mut rep = WorkReport::from_iterations(m_p, m_n as usize);
    rep.plateau_tol = cfg.plateau_tol;
    Ok(Some(rep))
}

/// One solver run: `convergence.csv`, `summary.json`, `reconstruction.pgm`.
pub fn cmd_solve(cfg: &ExperimentConfig) -> Result<SolveSummary, CliError> {
    let s = setup(cfg)?;
    prepare_out(&cfg.out)?;
    let mut summary = SolveSummary {
        schema: SUMMARY_SCHEMA.to_string(),
        verb: "solve".to_string(),
        config: cfg.clone(),
        problem: problem_info(&s.tp),
        lambda: None,
        precond_lambda: None,
        param: None,
        param_error: None,
        run: None,
        converged: false,
        work_report: None,
    };
    let choice = match choose_lambda(cfg, &s) {
        Ok(c) => c,
        Err(e) => {
            summary.param_error = Some(e.to_string());
            write_json(&cfg.out.join("summary.json"), &summary)?;
            return Ok(summary);
        }
    };
    let lambda = choice.lambda;
    summary.lambda = Some(lambda);
    summary.param = Some(choice);

    let m = match cfg.solver {
        SolverKind::Cgls => None,
        _ => {
            let pl = cfg.precond_lambda.unwrap_or(lambda);
            summary.precond_lambda = Some(pl);
            Some(preconditioner(&s, pl)?)
        }
    };
    let (x, h) = run_solver(cfg.solver, &s, m.as_ref(), &options(cfg, &s, lambda))?;
    let run = outcome(cfg.solver, &h, cfg.plateau_tol);
    summary.converged = run.converged;
    summary.work_report = baseline_report(cfg, &run)?;
    summary.run = Some(run);

    write_csv(
        &cfg.out.join("convergence.csv"),
        CONVERGENCE_SCHEMA,
        &HISTORY_HEADER,
        &history_rows(&h, None),
    )?;
    write_image(&x, s.tp.n(), &cfg.out.join("reconstruction.pgm"))?;
    write_json(&cfg.out.join("summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub schema: String,
    pub config: ExperimentConfig,
    pub problem: ProblemInfo,
    pub lambda: Option<f64>,
    pub precond_lambda: Option<f64>,
    pub param: Option<ParamChoice>,
    pub param_error: Option<String>,
    pub runs: Vec<RunOutcome>,
    pub work_report: Option<WorkReport>,
    pub work_report_error: Option<String>,
}

/// CGLS baseline against PCG (and FPCG) on the same problem and λ.
pub fn cmd_compare(cfg: &ExperimentConfig) -> Result<CompareReport, CliError> {
    let s = setup(cfg)?;
    prepare_out(&cfg.out)?;
    let mut report = CompareReport {
        schema: WORK_REPORT_SCHEMA.to_string(),
        config: cfg.clone(),
        problem: problem_info(&s.tp),
        lambda: None,
        precond_lambda: None,
        param: None,
        param_error: None,
        runs: Vec::new(),
        work_report: None,
        work_report_error: None,
    };
    let choice = match choose_lambda(cfg, &s) {
        Ok(c) => c,
        Err(e) => {
            report.param_error = Some(e.to_string());
            write_json(&cfg.out.join("work_report.json"), &report)?;
            return Ok(report);
        }
    };
    let lambda = choice.lambda;
    let pl = cfg.precond_lambda.unwrap_or(lambda);
    report.lambda = Some(lambda);
    report.precond_lambda = Some(pl);
    report.param = Some(choice);

    let m = preconditioner(&s, pl)?;
    let opts = options(cfg, &s, lambda);
    let mut kinds = vec![SolverKind::Cgls, SolverKind::Pcg];
    if cfg.include_fpcg {
        kinds.push(SolverKind::Fpcg);
    }
    let mut rows = Vec::new();
    let mut histories = Vec::new();
    for kind in kinds {
        let (_, h) = run_solver(kind, &s, Some(&m), &opts)?;
        rows.extend(history_rows(&h, Some(&kind.to_string())));
        report.runs.push(outcome(kind, &h, cfg.plateau_tol));
        histories.push(h);
    }
    match work_report_with_tol(&histories[1], &histories[0], cfg.plateau_tol) {
        Ok(r) => report.work_report = Some(r),
        Err(e) => report.work_report_error = Some(e.to_string()),
    }
    let mut header = vec!["solver"];
    header.extend(HISTORY_HEADER);
    write_csv(
        &cfg.out.join("comparison.csv"),
        COMPARISON_SCHEMA,
        &header,
        &rows,
    )?;
    write_json(&cfg.out.join("work_report.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: String,
    pub lambda: Option<f64>,
    pub final_relative_error: Option<f64>,
    pub iterations: Option<usize>,
    pub plateau_iteration: Option<usize>,
    pub converged: bool,
    pub error: Option<String>,
}

fn sweep_one(raw: &RawConfig, spec: &SweepSpec, k: usize, value: &str, out: &Path) -> SweepRow {
    let mut row = SweepRow {
        value: value.to_string(),
        lambda: None,
        final_relative_error: None,
        iterations: None,
        plateau_iteration: None,
        converged: false,
        error: None,
    };
    let run = || -> Result<SolveSummary, CliError> {
        let mut raw = raw.clone();
        raw.set(&spec.field, value)?;
        let run_dir: PathBuf = out.join(format!("run_{k:03}"));
        raw.set("out", &run_dir.to_string_lossy())?;
        cmd_solve(&ExperimentConfig::from_raw(&raw)?)
    };
    match run() {
        Ok(s) => {
            row.lambda = s.lambda;
            row.converged = s.converged;
            row.error = s.param_error;
            if let Some(r) = s.run {
                row.final_relative_error = r.final_relative_error;
                row.iterations = Some(r.iterations);
                row.plateau_iteration = r.plateau_iteration;
                if row.error.is_none() && !r.converged && r.status != "maximum iterations reached" {
                    row.error = Some(r.status);
                }
            }
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

/// One `cmd_solve` per value of the swept field, run concurrently, each in
/// its own `run_NNN` directory; `sweep.csv` keeps the order of the values.
pub fn cmd_sweep(raw: &RawConfig) -> Result<Vec<SweepRow>, CliError> {
    let spec = SweepSpec::from_raw(raw)?;
    let base = ExperimentConfig::from_raw(raw)?;
    prepare_out(&base.out)?;
    let rows: Vec<SweepRow> = spec
        .values
        .par_iter()
        .enumerate()
        .map(|(k, v)| sweep_one(raw, &spec, k, v, &base.out))
        .collect();
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                spec.field.clone(),
                r.value.clone(),
                opt_num(r.lambda),
                opt_num(r.final_relative_error),
                r.iterations.map(|m| m.to_string()).unwrap_or_default(),
                r.plateau_iteration
                    .map(|m| m.to_string())
                    .unwrap_or_default(),
                r.converged.to_string(),
                r.error.clone().unwrap_or_default(),
            ]
        })
        .collect();
    write_csv(
        &base.out.join("sweep.csv"),
        SWEEP_SCHEMA,
        &[
            "field",
            "value",
            "lambda",
            "final_relative_error",
            "iterations",
            "plateau_iteration",
            "converged",
            "error",
        ],
        &table,
    )?;
    Ok(rows)
}
