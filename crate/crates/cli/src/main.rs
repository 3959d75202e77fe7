use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kronprecon_cli::{
    cmd_compare, cmd_decompose, cmd_generate, cmd_solve, cmd_sweep, CliError, ExperimentConfig,
    RawConfig,
};

#[derive(Parser)]
#[command(
    name = "kronprecon",
    version,
    about = "Kronecker-preconditioned Tikhonov deblurring experiments"
)]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Subcommand)]
enum Verb {
    /// Generate a test problem bundle and PGM previews.
    Generate(Flags),
    /// Report Kronecker terms and the single-term approximation error.
    Decompose(Flags),
    /// Choose λ and run one solver.
    Solve(Flags),
    /// Run CGLS, PCG and FPCG on the same problem and report the work comparison.
    Compare(Flags),
    /// Repeat `solve` over a list of values for one field.
    Sweep(Flags),
}

/// Every value is kept as text and validated with the config file entries,
/// so command-line and file values share one set of error messages.
#[derive(Args)]
struct Flags {
    /// Flat `key = value` config file; flags given here override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    blur: Option<String>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    noise: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    fmt: Option<String>,
    #[arg(long)]
    solver: Option<String>,
    #[arg(long)]
    param: Option<String>,
    #[arg(long)]
    omega: Option<String>,
    #[arg(long)]
    eta: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    maxit: Option<String>,
    #[arg(long)]
    precond_lambda: Option<String>,
    #[arg(long)]
    sigma: Option<String>,
    #[arg(long)]
    radius: Option<String>,
    #[arg(long)]
    length: Option<String>,
    #[arg(long)]
    angle: Option<String>,
    #[arg(long)]
    steps: Option<String>,
    #[arg(long)]
    blobs: Option<String>,
    #[arg(long)]
    blob_sigma: Option<String>,
    #[arg(long)]
    psf_size: Option<String>,
    #[arg(long)]
    truncation_tol: Option<String>,
    #[arg(long)]
    bundle: Option<String>,
    #[arg(long)]
    tol: Option<String>,
    #[arg(long)]
    plateau_tol: Option<String>,
    #[arg(long)]
    include_fpcg: Option<String>,
    #[arg(long)]
    baseline: Option<String>,
    /// Field to sweep (sweep only).
    #[arg(long)]
    vary: Option<String>,
    /// Comma-separated values for the swept field.
    #[arg(long)]
    values: Option<String>,
}

impl Flags {
    fn into_raw(self) -> Result<RawConfig, CliError> {
        let mut raw = RawConfig::new();
        if let Some(path) = &self.config {
            raw.merge_file(path)?;
        }
        let pairs = [
            ("out", self.out),
            ("blur", self.blur),
            ("n", self.n),
            ("noise", self.noise),
            ("seed", self.seed),
            ("fmt", self.fmt),
            ("solver", self.solver),
            ("param", self.param),
            ("omega", self.omega),
            ("eta", self.eta),
            ("lambda", self.lambda),
            ("maxit", self.maxit),
            ("precond_lambda", self.precond_lambda),
            ("sigma", self.sigma),
            ("radius", self.radius),
            ("length", self.length),
            ("angle", self.angle),
            ("steps", self.steps),
            ("blobs", self.blobs),
            ("blob_sigma", self.blob_sigma),
            ("psf_size", self.psf_size),
            ("truncation_tol", self.truncation_tol),
            ("bundle", self.bundle),
            ("tol", self.tol),
            ("plateau_tol", self.plateau_tol),
            ("include_fpcg", self.include_fpcg),
            ("baseline", self.baseline),
            ("vary", self.vary),
            ("values", self.values),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                raw.set(key, &v)?;
            }
        }
        Ok(raw)
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.verb {
        Verb::Generate(f) => {
            let cfg = ExperimentConfig::from_raw(&f.into_raw()?)?;
            let info = cmd_generate(&cfg)?;
            println!(
                "wrote {} (n = {}, {} Kronecker terms, noise norm {:e})",
                cfg.out.display(),
                info.n,
                info.terms,
                info.noise_norm
            );
        }
        Verb::Decompose(f) => {
            let cfg = ExperimentConfig::from_raw(&f.into_raw()?)?;
            let r = cmd_decompose(&cfg)?;
            println!("blur,n,terms,fmt,rel_error_unrounded,rel_error_rounded");
            println!(
                "{},{},{},{},{:e},{:e}",
                r.blur, r.n, r.terms, r.fmt, r.rel_error_unrounded, r.rel_error_rounded
            );
        }
        Verb::Solve(f) => {
            let cfg = ExperimentConfig::from_raw(&f.into_raw()?)?;
            let s = cmd_solve(&cfg)?;
            match (&s.param_error, &s.run) {
                (Some(e), _) => println!("parameter selection failed: {e}"),
                (None, Some(r)) => println!(
                    "{}: λ = {:e}, {} iterations, plateau at {}, final relative error {}, {}",
                    r.solver,
                    s.lambda.unwrap_or(f64::NAN),
                    r.iterations,
                    r.plateau_iteration.map_or("-".into(), |k| k.to_string()),
                    r.final_relative_error
                        .map_or("-".into(), |e| format!("{e:.4}")),
                    r.status
                ),
                (None, None) => {}
            }
        }
        Verb::Compare(f) => {
            let cfg = ExperimentConfig::from_raw(&f.into_raw()?)?;
            let rep = cmd_compare(&cfg)?;
            if let Some(e) = &rep.param_error {
                println!("parameter selection failed: {e}");
            }
            for r in &rep.runs {
                println!(
                    "{:>5}: plateau at {}, final relative error {}",
                    r.solver.to_string(),
                    r.plateau_iteration.map_or("-".into(), |k| k.to_string()),
                    r.final_relative_error
                        .map_or("-".into(), |e| format!("{e:.4}"))
                );
            }
            if let Some(w) = &rep.work_report {
                println!(
                    "m_P = {}, m_N = {}, threshold {:.3}: preconditioning {}",
                    w.m_p,
                    w.m_n,
                    w.threshold,
                    if w.preconditioning_pays {
                        "pays"
                    } else {
                        "does not pay"
                    }
                );
            }
        }
        Verb::Sweep(f) => {
            let raw = f.into_raw()?;
            for r in cmd_sweep(&raw)? {
                println!(
                    "{}: λ = {}, final relative error {}{}",
                    r.value,
                    r.lambda.map_or("-".into(), |l| format!("{l:e}")),
                    r.final_relative_error
                        .map_or("-".into(), |e| format!("{e:.4}")),
                    r.error.map(|e| format!(" ({e})")).unwrap_or_default()
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
