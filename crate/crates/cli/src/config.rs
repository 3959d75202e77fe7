//! Experiment configuration: a flat `key = value` file plus command-line
//! overrides. Later writers win; unknown keys are rejected.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use kronprecon::deblur::{make_psf, BlurKind};
use kronprecon::precision::PrecisionFormat;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Every key accepted in a config file or as `--key value`.
pub const KEYS: &[&str] = &[
    "blur",
    "sigma",
    "radius",
    "length",
    "angle",
    "steps",
    "blobs",
    "blob_sigma",
    "psf_size",
    "n",
    "noise",
    "seed",
    "truncation_tol",
    "bundle",
    "fmt",
    "solver",
    "param",
    "omega",
    "eta",
    "lambda",
    "precond_lambda",
    "maxit",
    "tol",
    "plateau_tol",
    "include_fpcg",
    "baseline",
    "out",
    "vary",
    "values",
];

/// Raw string values in insertion order of precedence.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    values: BTreeMap<String, String>,
}

fn normalize_key(key: &str) -> String {
    key.trim().trim_start_matches("--").replace('-', "_")
}

impl RawConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let key = normalize_key(key);
        if !KEYS.contains(&key.as_str()) {
            return Err(CliError::Config(format!("unknown config key `{key}`")));
        }
        self.values.insert(key, value.trim().to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Merge `key = value` lines; `#` starts a comment line.
    pub fn merge_text(&mut self, text: &str) -> Result<(), CliError> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!(
                    "line {}: expected `key = value`, got `{line}`",
                    lineno + 1
                ))
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("reading config {}: {e}", path.display())))?;
        self.merge_text(&text)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Cgls,
    Pcg,
    Fpcg,
}

impl FromStr for SolverKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cgls" => Ok(Self::Cgls),
            "pcg" => Ok(Self::Pcg),
            "fpcg" => Ok(Self::Fpcg),
            _ => Err(format!("unknown solver `{s}` (expected cgls, pcg or fpcg)")),
        }
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Cgls => "cgls",
            Self::Pcg => "pcg",
            Self::Fpcg => "fpcg",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Opt,
    Gcv,
    Wgcv,
    Discrepancy,
    Fixed,
}

impl FromStr for ParamKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "opt" => Ok(Self::Opt),
            "gcv" => Ok(Self::Gcv),
            "wgcv" => Ok(Self::Wgcv),
            "discrepancy" => Ok(Self::Discrepancy),
            "fixed" => Ok(Self::Fixed),
            _ => Err(format!(
                "unknown parameter method `{s}` (expected opt, gcv, wgcv, discrepancy or fixed)"
            )),
        }
    }
}

/// Validated, typed configuration. Serialized verbatim into every summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub blur: BlurKind,
    pub psf_size: usize,
    pub n: usize,
    pub noise: f64,
    pub seed: u64,
    pub truncation_tol: Option<f64>,
    pub bundle: Option<PathBuf>,
    pub fmt: String,
    pub solver: SolverKind,
    pub param: ParamKind,
    pub omega: f64,
    pub eta: f64,
    pub lambda: Option<f64>,
    pub precond_lambda: Option<f64>,
    pub maxit: usize,
    pub tol: f64,
    pub plateau_tol: f64,
    pub include_fpcg: bool,
    pub baseline: Option<PathBuf>,
    pub out: PathBuf,
}

/// Largest odd size not exceeding `n / 2`.
pub fn default_psf_size(n: usize) -> usize {
    let half = (n / 2).max(1);
    if half % 2 == 1 {
        half
    } else {
        half - 1
    }
}

fn field<T: FromStr>(raw: &RawConfig, key: &str, default: T) -> Result<T, CliError>
where
    T::Err: fmt::Display,
{
    match raw.get(key) {
        None => Ok(default),
        Some(s) => s
            .parse()
            .map_err(|e| CliError::Config(format!("invalid value for `{key}`: `{s}` ({e})"))),
    }
}

fn optional<T: FromStr>(raw: &RawConfig, key: &str) -> Result<Option<T>, CliError>
where
    T::Err: fmt::Display,
{
    raw.get(key)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|e| CliError::Config(format!("invalid value for `{key}`: `{s}` ({e})")))
        })
        .transpose()
}

fn bad(key: &str, msg: impl fmt::Display) -> CliError {
    CliError::Config(format!("invalid value for `{key}`: {msg}"))
}

fn parse_blur(raw: &RawConfig) -> Result<BlurKind, CliError> {
    let name = raw.get("blur").unwrap_or("gaussian");
    Ok(match name {
        "delta" => BlurKind::Delta,
        "gaussian" | "gauss" => BlurKind::Gaussian {
            sigma: field(raw, "sigma", 2.0)?,
        },
        "defocus" => BlurKind::Defocus {
            radius: field(raw, "radius", 3.0)?,
        },
        "motion" => BlurKind::Motion {
            length: field(raw, "length", 9)?,
            angle: field(raw, "angle", 45.0)?,
        },
        "shake" => BlurKind::Shake {
            steps: field(raw, "steps", 40)?,
        },
        "speckle" => BlurKind::Speckle {
            blobs: field(raw, "blobs", 6)?,
            blob_sigma: field(raw, "blob_sigma", 1.5)?,
        },
        other => {
            return Err(bad(
                "blur",
                format!("unknown blur `{other}` (expected delta, gaussian, defocus, motion, shake or speckle)"),
            ))
        }
    })
}

impl ExperimentConfig {
    pub fn from_raw(raw: &RawConfig) -> Result<Self, CliError> {
        let blur = parse_blur(raw)?;
        let n: usize = field(raw, "n", 32)?;
        if n == 0 {
            return Err(bad("n", "must be >= 1"));
        }
        let psf_size: usize = field(raw, "psf_size", default_psf_size(n))?;
        if psf_size % 2 == 0 || psf_size > n {
            return Err(bad(
                "psf_size",
                format!("{psf_size} must be odd and at most n = {n}"),
            ));
        }
        let noise: f64 = field(raw, "noise", 0.01)?;
        if !noise.is_finite() || noise < 0.0 {
            return Err(bad("noise", format!("{noise} must be finite and >= 0")));
        }
        let seed = field(raw, "seed", 7)?;
        make_psf(&blur, psf_size, seed).map_err(|e| bad("blur", e))?;

        let truncation_tol: Option<f64> = optional(raw, "truncation_tol")?;
        if truncation_tol.is_some_and(|t| !t.is_finite() || t < 0.0) {
            return Err(bad("truncation_tol", "must be finite and >= 0"));
        }
        let fmt: String = field(raw, "fmt", "fp16".to_string())?;
        PrecisionFormat::from_str(&fmt).map_err(|e| bad("fmt", e))?;

        let param: ParamKind = field(raw, "param", ParamKind::Opt)?;
        let omega: f64 = field(raw, "omega", 3.0)?;
        if !(omega > 0.0) || !omega.is_finite() {
            return Err(bad("omega", format!("{omega} must be > 0")));
        }
        let eta: f64 = field(raw, "eta", 2.0)?;
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(bad("eta", format!("{eta} must be > 0")));
        }
        let lambda: Option<f64> = optional(raw, "lambda")?;
        let precond_lambda: Option<f64> = optional(raw, "precond_lambda")?;
        for (key, v) in [("lambda", lambda), ("precond_lambda", precond_lambda)] {
            if v.is_some_and(|l| !l.is_finite() || l < 0.0) {
                return Err(bad(key, "must be finite and >= 0"));
            }
        }
        if param == ParamKind::Fixed && lambda.is_none() {
            return Err(bad("lambda", "param = fixed needs a value for lambda"));
        }
        let maxit: usize = field(raw, "maxit", 50)?;
        if maxit == 0 {
            return Err(bad("maxit", "must be >= 1"));
        }
        let tol: f64 = field(raw, "tol", 1e-10)?;
        if !(tol > 0.0) {
            return Err(bad("tol", "must be > 0"));
        }
        let plateau_tol: f64 = field(raw, "plateau_tol", 0.01)?;
        if !(plateau_tol >= 0.0) {
            return Err(bad("plateau_tol", "must be >= 0"));
        }

        Ok(Self {
            blur,
            psf_size,
            n,
            noise,
            seed,
            truncation_tol,
            bundle: optional(raw, "bundle")?,
            fmt,
            solver: field(raw, "solver", SolverKind::Pcg)?,
            param,
            omega,
            eta,
            lambda,
            precond_lambda,
            maxit,
            tol,
            plateau_tol,
            include_fpcg: field(raw, "include_fpcg", true)?,
            baseline: optional(raw, "baseline")?,
            out: field(raw, "out", PathBuf::from("out"))?,
        })
    }

    pub fn format(&self) -> PrecisionFormat {
        PrecisionFormat::from_str(&self.fmt).expect("validated in from_raw")
    }
}

/// `--vary FIELD --values a,b,c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub field: String,
    pub values: Vec<String>,
}

impl SweepSpec {
    pub fn from_raw(raw: &RawConfig) -> Result<Self, CliError> {
        let field = raw
            .get("vary")
            .filter(|s| !s.is_empty())
            .ok_or_else(|| bad("vary", "sweep needs a field to vary"))?;
        let field = normalize_key(field);
        if !KEYS.contains(&field.as_str())
            || ["out", "vary", "values", "bundle", "baseline"].contains(&field.as_str())
        {
            return Err(bad("vary", format!("`{field}` cannot be swept")));
        }
        let values: Vec<String> = raw
            .get("values")
            .unwrap_or("")
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect();
        if values.is_empty() {
            return Err(bad("values", "sweep needs at least one value"));
        }
        Ok(Self { field, values })
    }
}
