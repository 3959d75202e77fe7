//! Emulated low-precision floating point.
//!
//! Values are rounded from `f64` to a target binary format and carried back in
//! an `f64` whose trailing significand bits are zero. Every vectorized rounding
//! (`round_array`, `round_in_place`) bumps a thread-local counter so callers can
//! audit how many rounding passes a kernel performs.

use std::cell::Cell;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormatError {
    #[error("significand bits must be in 2..=53, got {0}")]
    SignificandBits(u32),
    #[error("max exponent must be in 1..=1023, got {0}")]
    MaxExponent(i32),
    #[error("unknown precision format `{0}` (expected fp16, bfloat16, fp32, fp64 or custom:t=T,emax=E,subnormals=0|1)")]
    Unknown(String),
    #[error("malformed custom format `{0}`")]
    MalformedCustom(String),
}

/// Rounding rule applied by [`round_value`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[non_exhaustive]
pub enum RoundingMode {
    #[default]
    NearestEven,
}

/// A binary floating-point format described by its significand width `t`
/// (including the implicit bit) and largest exponent `emax`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrecisionFormat {
    pub name: String,
    pub significand_bits: u32,
    pub max_exponent: i32,
    pub subnormals_enabled: bool,
}

impl PrecisionFormat {
    pub fn new(
        name: impl Into<String>,
        significand_bits: u32,
        max_exponent: i32,
        subnormals_enabled: bool,
    ) -> Result<Self, FormatError> {
        if !(2..=53).contains(&significand_bits) {
            return Err(FormatError::SignificandBits(significand_bits));
        }
        if !(1..=1023).contains(&max_exponent) {
            return Err(FormatError::MaxExponent(max_exponent));
        }
        Ok(Self {
            name: name.into(),
            significand_bits,
            max_exponent,
            subnormals_enabled,
        })
    }

    /// IEEE binary16.
    pub fn fp16() -> Self {
        Self::new("fp16", 11, 15, true).unwrap()
    }

    pub fn bfloat16() -> Self {
        Self::new("bfloat16", 8, 127, true).unwrap()
    }

    pub fn fp32() -> Self {
        Self::new("fp32", 24, 127, true).unwrap()
    }

    /// The working precision itself; rounding to it is the identity.
    pub fn fp64() -> Self {
        Self::new("fp64", 53, 1023, true).unwrap()
    }

    /// Unit roundoff `2^-t`.
    pub fn unit_roundoff(&self) -> f64 {
        pow2(-(self.significand_bits as i32))
    }

    pub fn min_exponent(&self) -> i32 {
        1 - self.max_exponent
    }

    /// Smallest positive normal number `2^emin`.
    pub fn min_normal(&self) -> f64 {
        pow2(self.min_exponent())
    }

    /// Largest finite value `2^emax * (2 - 2^(1-t))`.
    pub fn max_finite(&self) -> f64 {
        let t = self.significand_bits as i32;
        // 2^emax * 2 can overflow f64 for emax = 1023, so build it from the ulp.
        let ulp = pow2(self.max_exponent - t + 1);
        ulp * (pow2(t) - 1.0)
    }

    /// True when rounding to this format is exactly the identity on `f64`.
    pub fn is_working_precision(&self) -> bool {
        self.significand_bits == 53 && self.max_exponent == 1023 && self.subnormals_enabled
    }
}

impl fmt::Display for PrecisionFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

impl FromStr for PrecisionFormat {
    type Err = FormatError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "fp16" | "half" => Ok(Self::fp16()),
            "bfloat16" | "bf16" => Ok(Self::bfloat16()),
            "fp32" | "single" => Ok(Self::fp32()),
            "fp64" | "double" => Ok(Self::fp64()),
            other => match other.strip_prefix("custom:") {
                Some(spec) => parse_custom(other, spec),
                None => Err(FormatError::Unknown(other.to_string())),
            },
        }
    }
}

fn parse_custom(full: &str, spec: &str) -> Result<PrecisionFormat, FormatError> {
    let bad = || FormatError::MalformedCustom(full.to_string());
    let (mut t, mut emax, mut sub) = (None, None, None);
    for part in spec.split(',') {
        let (key, value) = part.split_once('=').ok_or_else(bad)?;
        match key.trim() {
            "t" => t = Some(value.trim().parse::<u32>().map_err(|_| bad())?),
            "emax" => emax = Some(value.trim().parse::<i32>().map_err(|_| bad())?),
            "subnormals" => {
                sub = Some(match value.trim() {
                    "0" => false,
                    "1" => true,
                    _ => return Err(bad()),
                })
            }
            _ => return Err(bad()),
        }
    }
    PrecisionFormat::new(
        full,
        t.ok_or_else(bad)?,
        emax.ok_or_else(bad)?,
        sub.unwrap_or(true),
    )
}

/// Exact `2^k` for `k` in `[-1074, 1023]`.
pub(crate) fn pow2(k: i32) -> f64 {
    debug_assert!((-1074..=1023).contains(&k));
    if k >= -1022 {
        f64::from_bits(((k + 1023) as u64) << 52)
    } else {
        f64::from_bits(1u64 << (k + 1074))
    }
}

/// `floor(log2(x))` for finite positive `x`, including subnormal doubles.
fn exponent_of(x: f64) -> i32 {
    let bits = x.to_bits();
    let biased = ((bits >> 52) & 0x7ff) as i32;
    if biased == 0 {
        let mantissa = bits & ((1u64 << 52) - 1);
        -1074 + (63 - mantissa.leading_zeros() as i32)
    } else {
        biased - 1023
    }
}

/// Round one value to `fmt`, returning it as an `f64`.
pub fn round_value(x: f64, fmt: &PrecisionFormat, mode: RoundingMode) -> f64 {
    match mode {
        RoundingMode::NearestEven => round_nearest_even(x, fmt),
    }
}

#[inline]
fn round_nearest_even(x: f64, fmt: &PrecisionFormat) -> f64 {
    if !x.is_finite() || x == 0.0 || fmt.is_working_precision() {
        return x;
    }
    let ax = x.abs();
    let t = fmt.significand_bits as i32;
    let emin = fmt.min_exponent();
    let e = exponent_of(ax);
    if e > fmt.max_exponent {
        return f64::INFINITY.copysign(x);
    }
    let quantum_exp = if e < emin {
        if !fmt.subnormals_enabled {
            let xmin = fmt.min_normal();
            let flushed = if ax >= 0.5 * xmin { xmin } else { 0.0 };
            return flushed.copysign(x);
        }
        emin - t + 1
    } else {
        e - t + 1
    };
    let quantum = pow2(quantum_exp);
    let rounded = (ax / quantum).round_ties_even() * quantum;
    if rounded > fmt.max_finite() {
        f64::INFINITY.copysign(x)
    } else {
        rounded.copysign(x)
    }
}

thread_local! {
    static ROUND_CALLS: Cell<u64> = const { Cell::new(0) };
}

fn bump_call_count() {
    ROUND_CALLS.with(|c| c.set(c.get() + 1));
}

/// Counts vectorized rounding calls made on the current thread since it was
/// started. Sessions may nest; each reports its own delta.
#[derive(Debug)]
pub struct RoundingSession {
    start: u64,
}

impl RoundingSession {
    pub fn start() -> Self {
        Self {
            start: ROUND_CALLS.with(Cell::get),
        }
    }

    pub fn calls(&self) -> u64 {
        ROUND_CALLS.with(Cell::get) - self.start
    }
}

pub fn round_call_count(session: &RoundingSession) -> u64 {
    session.calls()
}

/// Elementwise rounding; counts as a single vectorized call.
pub fn round_array(xs: &[f64], fmt: &PrecisionFormat, mode: RoundingMode) -> Vec<f64> {
    let mut out = xs.to_vec();
    round_in_place(&mut out, fmt, mode);
    out
}

/// In-place variant of [`round_array`]; also one call.
pub fn round_in_place(xs: &mut [f64], fmt: &PrecisionFormat, mode: RoundingMode) {
    bump_call_count();
    if fmt.is_working_precision() {
        return;
    }
    for x in xs.iter_mut() {
        *x = round_value(*x, fmt, mode);
    }
}
