//! Reduced floating-point formats and software rounding emulation.
//!
//! Every value is stored as a native `f64`. A [`PrecisionFormat`] describes a
//! binary format by its significand width `t` (including the implicit bit)
//! and its exponent range `[e_min, e_max]`; [`round_scalar`] maps a double
//! onto the nearest representable value of that format using
//! round-to-nearest, ties-to-even, with gradual underflow and overflow to
//! infinity.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Tag naming one of the supported formats.
///
/// Serialized as the lowercase strings `"q52"`, `"bf16"`, `"fp16"`,
/// `"tf32"`, `"fp32"` and `"fp64"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Q52,
    Bf16,
    Fp16,
    Tf32,
    Fp32,
    Fp64,
}

impl Precision {
    pub const ALL: [Precision; 6] = [
        Precision::Q52,
        Precision::Bf16,
        Precision::Fp16,
        Precision::Tf32,
        Precision::Fp32,
        Precision::Fp64,
    ];

    /// The five formats the solver experiments choose from, cheapest first.
    pub const EXPERIMENT_SET: [Precision; 5] = [
        Precision::Bf16,
        Precision::Fp16,
        Precision::Tf32,
        Precision::Fp32,
        Precision::Fp64,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Precision::Q52 => "q52",
            Precision::Bf16 => "bf16",
            Precision::Fp16 => "fp16",
            Precision::Tf32 => "tf32",
            Precision::Fp32 => "fp32",
            Precision::Fp64 => "fp64",
        }
    }

    pub fn format(self) -> PrecisionFormat {
        format_of(self)
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown precision format `{0}`")]
pub struct UnknownPrecision(pub String);

impl FromStr for Precision {
    type Err = UnknownPrecision;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Precision::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| UnknownPrecision(s.to_string()))
    }
}

/// How reduced precision is applied inside a kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmulationMode {
    /// Every product and every partial sum is rounded to the target format.
    #[default]
    Strict,
    /// Operands and the final result are rounded; the kernel runs in `f64`.
    Fast,
}

impl fmt::Display for EmulationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmulationMode::Strict => "strict",
            EmulationMode::Fast => "fast",
        })
    }
}

impl FromStr for EmulationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "strict" => Ok(EmulationMode::Strict),
            "fast" => Ok(EmulationMode::Fast),
            other => Err(format!("unknown emulation mode `{other}`")),
        }
    }
}

/// Parameters of a binary floating-point format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrecisionFormat {
    pub tag: Precision,
    /// Significand digits, implicit bit included.
    pub t: u32,
    pub e_min: i32,
    pub e_max: i32,
}

/// Exact power of two for exponents inside the normal `f64` range.
#[inline]
fn pow2(k: i32) -> f64 {
    debug_assert!((-1022..=1023).contains(&k));
    f64::from_bits(((k + 1023) as u64) << 52)
}

impl PrecisionFormat {
    /// `2^-t`, half the spacing of the format just above 1.
    pub fn unit_roundoff(&self) -> f64 {
        pow2(-(self.t as i32))
    }

    /// Smallest positive normalized value, `2^e_min`.
    pub fn x_min(&self) -> f64 {
        pow2(self.e_min)
    }

    /// Largest finite value, `2^e_max * (2 - 2^(1-t))`.
    pub fn x_max(&self) -> f64 {
        if self.tag == Precision::Fp64 {
            return f64::MAX;
        }
        pow2(self.e_max) * (2.0 - pow2(1 - self.t as i32))
    }

    /// Smallest positive subnormal, `2^(e_min + 1 - t)`.
    pub fn x_min_subnormal(&self) -> f64 {
        if self.tag == Precision::Fp64 {
            return f64::from_bits(1);
        }
        pow2(self.e_min + 1 - self.t as i32)
    }

    #[inline]
    pub fn round(&self, x: f64) -> f64 {
        match self.tag {
            Precision::Fp64 => x,
            Precision::Fp32 => x as f32 as f64,
            _ => self.round_generic(x),
        }
    }

    fn round_generic(&self, x: f64) -> f64 {
        if !x.is_finite() || x == 0.0 {
            return x;
        }
        let bits = x.to_bits();
        let biased = ((bits >> 52) & 0x7ff) as i32;
        // f64 subnormals sit far below every supported reduced format's
        // subnormal range, so treating their exponent as -1023 is enough.
        let exp = biased - 1023;
        let rounded = if exp >= self.e_min {
            // Normal range: clear the low 53 - t fraction bits with RNE.
            let drop = 53 - self.t;
            let mask = (1u64 << drop) - 1;
            let lsb = (bits >> drop) & 1;
            let r = bits.wrapping_add((1u64 << (drop - 1)) - 1 + lsb) & !mask;
            f64::from_bits(r)
        } else {
            // Subnormal range: fixed quantum 2^(e_min + 1 - t).
            let q = self.e_min + 1 - self.t as i32;
            (x * pow2(-q)).round_ties_even() * pow2(q)
        };
        if rounded.abs() > self.x_max() {
            f64::INFINITY.copysign(x)
        } else {
            rounded
        }
    }
}

/// Format parameters for a tag.
///
/// `tf32` uses 11 significand bits with the `fp32` exponent range.
pub fn format_of(tag: Precision) -> PrecisionFormat {
    let (t, e_min, e_max) = match tag {
        Precision::Q52 => (3, -14, 15),
        Precision::Bf16 => (8, -126, 127),
        Precision::Fp16 => (11, -14, 15),
        Precision::Tf32 => (11, -126, 127),
        Precision::Fp32 => (24, -126, 127),
        Precision::Fp64 => (53, -1022, 1023),
    };
    PrecisionFormat { tag, t, e_min, e_max }
}

/// Round `x` to the nearest value of `fmt` (ties to even).
#[inline]
pub fn round_scalar(x: f64, fmt: &PrecisionFormat) -> f64 {
    fmt.round(x)
}

pub fn round_vector(v: &[f64], fmt: &PrecisionFormat) -> Vec<f64> {
    v.iter().map(|&x| fmt.round(x)).collect()
}

/// In-place variant of [`round_vector`].
pub fn round_in_place(v: &mut [f64], fmt: &PrecisionFormat) {
    if fmt.tag == Precision::Fp64 {
        return;
    }
    for x in v {
        *x = fmt.round(*x);
    }
}
