//! Problem bundles: `meta.json` plus raw little-endian `f64` arrays in
//! column-major order. The operator itself is not stored; it is rebuilt from
//! the saved PSF.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{make_psf, psf_to_kronsum, BlurKind, DeblurError, Psf, TestProblem};
use crate::schema::check_schema;

pub const BUNDLE_SCHEMA: &str = "kronprecon.bundle/1.0";

const ARRAYS: [&str; 5] = ["psf.f64", "xtrue.f64", "btrue.f64", "noise.f64", "b.f64"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayInfo {
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub schema: String,
    pub blur: BlurKind,
    pub psf_size: usize,
    pub psf_center: (usize, usize),
    pub n: usize,
    pub seed: u64,
    pub noise_level: f64,
    pub truncation_tol: f64,
    pub terms: usize,
    pub arrays: BTreeMap<String, ArrayInfo>,
}

impl BundleMeta {
    /// Regenerate the PSF from the recorded blur parameters and seed.
    pub fn regenerate_psf(&self) -> Result<Psf, DeblurError> {
        make_psf(&self.blur, self.psf_size, self.seed)
    }
}

fn to_bytes(xs: &[f64]) -> Vec<u8> {
    xs.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn from_bytes(bytes: &[u8]) -> Vec<f64> {
    bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn corrupt(msg: impl Into<String>) -> DeblurError {
    DeblurError::Bundle(msg.into())
}

pub fn save_problem(tp: &TestProblem, dir: &Path) -> Result<(), DeblurError> {
    fs::create_dir_all(dir)?;
    let payloads: [&[f64]; 5] = [
        tp.psf.values().as_slice(),
        &tp.x_true,
        &tp.b_true,
        &tp.noise,
        &tp.b,
    ];
    let mut arrays = BTreeMap::new();
    for (name, data) in ARRAYS.iter().zip(payloads) {
        let bytes = to_bytes(data);
        arrays.insert(
            name.to_string(),
            ArrayInfo {
                bytes: bytes.len(),
                sha256: digest(&bytes),
            },
        );
        fs::write(dir.join(name), &bytes)?;
    }
    let meta = BundleMeta {
        schema: BUNDLE_SCHEMA.to_string(),
        blur: tp.psf.kind().clone(),
        psf_size: tp.psf.size(),
        psf_center: tp.psf.center(),
        n: tp.n(),
        seed: tp.seed,
        noise_level: tp.noise_level,
        truncation_tol: tp.truncation_tol,
        terms: tp.a.num_terms(),
        arrays,
    };
    let json = serde_json::to_string_pretty(&meta).map_err(|e| corrupt(e.to_string()))?;
    fs::write(dir.join("meta.json"), json + "\n")?;
    Ok(())
}

pub fn load_meta(dir: &Path) -> Result<BundleMeta, DeblurError> {
    let text = fs::read_to_string(dir.join("meta.json"))?;
    let meta: BundleMeta =
        serde_json::from_str(&text).map_err(|e| corrupt(format!("meta.json: {e}")))?;
    check_schema(&meta.schema, BUNDLE_SCHEMA).map_err(|e| corrupt(e.to_string()))?;
    Ok(meta)
}

fn read_array(
    dir: &Path,
    meta: &BundleMeta,
    name: &str,
    len: usize,
) -> Result<Vec<f64>, DeblurError> {
    let info = meta
        .arrays
        .get(name)
        .ok_or_else(|| corrupt(format!("meta.json does not list {name}")))?;
    let bytes = fs::read(dir.join(name))?;
    if bytes.len() != info.bytes || bytes.len() != 8 * len {
        return Err(corrupt(format!(
            "{name}: {} bytes on disk, meta says {}, expected {}",
            bytes.len(),
            info.bytes,
            8 * len
        )));
    }
    if digest(&bytes) != info.sha256 {
        return Err(corrupt(format!("{name}: checksum mismatch")));
    }
    Ok(from_bytes(&bytes))
}

pub fn load_problem(dir: &Path) -> Result<TestProblem, DeblurError> {
    let meta = load_meta(dir)?;
    let np = meta.psf_size;
    let big = meta.n * meta.n;
    let psf_values = read_array(dir, &meta, "psf.f64", np * np)?;
    let psf = Psf::new(
        DMatrix::from_vec(np, np, psf_values),
        meta.psf_center,
        meta.blur.clone(),
        meta.seed,
    )?;
    let a = psf_to_kronsum(&psf, meta.n, meta.truncation_tol)?;
    Ok(TestProblem {
        a,
        psf,
        x_true: read_array(dir, &meta, "xtrue.f64", big)?,
        b_true: read_array(dir, &meta, "btrue.f64", big)?,
        noise: read_array(dir, &meta, "noise.f64", big)?,
        b: read_array(dir, &meta, "b.f64", big)?,
        noise_level: meta.noise_level,
        seed: meta.seed,
        truncation_tol: meta.truncation_tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deblur::{default_image, make_test_problem};

    fn problem() -> TestProblem {
        let psf = make_psf(
            &BlurKind::Speckle {
                blobs: 4,
                blob_sigma: 1.0,
            },
            7,
            5,
        )
        .unwrap();
        make_test_problem(&default_image(12), &psf, 0.02, 5).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let tp = problem();
        save_problem(&tp, dir.path()).unwrap();
        let back = load_problem(dir.path()).unwrap();
        assert_eq!(back.b, tp.b);
        assert_eq!(back.x_true, tp.x_true);
        assert_eq!(back.noise, tp.noise);
        assert_eq!(back.a, tp.a);

        let meta = load_meta(dir.path()).unwrap();
        let regen =
            psf_to_kronsum(&meta.regenerate_psf().unwrap(), meta.n, meta.truncation_tol).unwrap();
        assert_eq!(regen, back.a);
    }

    #[test]
    fn truncated_array_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_problem(&problem(), dir.path()).unwrap();
        let path = dir.path().join("b.f64");
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(
            load_problem(dir.path()),
            Err(DeblurError::Bundle(_))
        ));
    }

    #[test]
    fn flipped_byte_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_problem(&problem(), dir.path()).unwrap();
        let path = dir.path().join("xtrue.f64");
        let mut bytes = fs::read(&path).unwrap();
        bytes[3] ^= 0x10;
        fs::write(&path, &bytes).unwrap();
        let err = load_problem(dir.path()).unwrap_err();
        assert!(err.to_string().contains("checksum"), "{err}");
    }

    #[test]
    fn missing_dir_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_problem(&dir.path().join("nope")),
            Err(DeblurError::Io(_))
        ));
    }
}
