//! Bit-exact software FP8 (E4M3, E5M2) and E8M0 codecs.
//!
//! E4M3 follows the OFP8 layout: no infinities, `S.1111.111` is NaN, so the
//! largest finite magnitude is `1.75 × 2^8 = 448`. E5M2 is IEEE-like with
//! `S.11111.00` = ±Inf and the remaining all-ones exponents NaN; its largest
//! finite magnitude is `1.75 × 2^15 = 57344`.
//!
//! Encoding rounds to nearest, ties to even, and saturates out-of-range
//! finite inputs to ±`delta_max`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fp8Format {
    E4M3,
    E5M2,
}

impl Fp8Format {
    pub const ALL: [Fp8Format; 2] = [Fp8Format::E4M3, Fp8Format::E5M2];

    pub const fn exponent_bits(self) -> u32 {
        match self {
            Fp8Format::E4M3 => 4,
            Fp8Format::E5M2 => 5,
        }
    }

    pub const fn mantissa_bits(self) -> u32 {
        match self {
            Fp8Format::E4M3 => 3,
            Fp8Format::E5M2 => 2,
        }
    }

    pub const fn bias(self) -> i32 {
        match self {
            Fp8Format::E4M3 => 7,
            Fp8Format::E5M2 => 15,
        }
    }

    /// Largest finite magnitude.
    pub const fn delta_max(self) -> f32 {
        match self {
            Fp8Format::E4M3 => 448.0,
            Fp8Format::E5M2 => 57344.0,
        }
    }

    pub const fn has_infinity(self) -> bool {
        matches!(self, Fp8Format::E5M2)
    }

    pub fn name(self) -> &'static str {
        match self {
            Fp8Format::E4M3 => "e4m3",
            Fp8Format::E5M2 => "e5m2",
        }
    }

    /// Code of the largest positive finite value.
    pub const fn max_code(self) -> u8 {
        match self {
            Fp8Format::E4M3 => 0x7E,
            Fp8Format::E5M2 => 0x7B,
        }
    }

    fn fields(self, bits: u8) -> (bool, u32, u32) {
        let m = self.mantissa_bits();
        let sign = bits & 0x80 != 0;
        let exp = ((bits & 0x7F) >> m) as u32;
        let mant = (bits as u32) & ((1 << m) - 1);
        (sign, exp, mant)
    }

    /// True for NaN and infinity patterns.
    pub fn is_special(self, bits: u8) -> bool {
        let (_, exp, mant) = self.fields(bits);
        let exp_max = (1 << self.exponent_bits()) - 1;
        match self {
            Fp8Format::E4M3 => exp == exp_max && mant == (1 << self.mantissa_bits()) - 1,
            Fp8Format::E5M2 => exp == exp_max,
        }
    }

    pub fn is_nan(self, bits: u8) -> bool {
        let (_, _, mant) = self.fields(bits);
        self.is_special(bits) && !(self.has_infinity() && mant == 0)
    }

    /// Decodes a code. NaN patterns decode to `f32::NAN` and E5M2
    /// infinities to `±f32::INFINITY`; check [`Self::is_special`] or use
    /// [`Self::decode_finite`] when that matters.
    pub fn decode(self, bits: u8) -> f32 {
        let (sign, exp, mant) = self.fields(bits);
        let m = self.mantissa_bits() as i32;
        let mag = if self.is_nan(bits) {
            return f32::NAN;
        } else if self.is_special(bits) {
            f32::INFINITY
        } else if exp == 0 {
            mant as f32 * exp2(1 - self.bias() - m)
        } else {
            ((1 << m) + mant) as f32 * exp2(exp as i32 - self.bias() - m)
        };
        if sign {
            -mag
        } else {
            mag
        }
    }

    pub fn decode_finite(self, bits: u8) -> Result<f32> {
        if self.is_special(bits) {
            return Err(Error::InvalidValue(format!(
                "{} code {bits:#04x} is not finite",
                self.name()
            )));
        }
        Ok(self.decode(bits))
    }

    /// Round-to-nearest-even encode with saturation.
    pub fn encode(self, x: f32) -> Result<u8> {
        if !x.is_finite() {
            return Err(Error::InvalidValue(format!("cannot encode non-finite {x}")));
        }
        Ok(self.encode_finite(x))
    }

    /// Encode assuming `x` is finite. Callers must have validated input.
    pub(crate) fn encode_finite(self, x: f32) -> u8 {
        let sign: u8 = if x.is_sign_negative() { 0x80 } else { 0 };
        let a = x.abs() as f64;
        if a >= self.delta_max() as f64 {
            return sign | self.max_code();
        }
        let m = self.mantissa_bits() as i32;
        let min_normal_exp = 1 - self.bias();
        let e = if a == 0.0 { min_normal_exp } else { floor_log2(a).max(min_normal_exp) };
        // Codes are monotone integers: subnormal codes equal their integer
        // mantissa, and a mantissa carry rolls into the next binade.
        let quantum = exp2_f64(e - m);
        let q = (a / quantum).round_ties_even() as u32;
        let base = if e == min_normal_exp { 0 } else { ((e + self.bias()) as u32) << m };
        let offset = if e == min_normal_exp { 0 } else { 1 << m };
        let code = base + q - offset;
        sign | code.min(self.max_code() as u32) as u8
    }

    pub fn code(self, x: f32) -> Result<Fp8Code> {
        Ok(Fp8Code { bits: self.encode(x)?, format: self })
    }
}

/// An 8-bit code tagged with its format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fp8Code {
    pub bits: u8,
    pub format: Fp8Format,
}

impl Fp8Code {
    pub fn value(self) -> f32 {
        self.format.decode(self.bits)
    }
}

fn exp2(e: i32) -> f32 {
    exp2_f64(e) as f32
}

fn exp2_f64(e: i32) -> f64 {
    2f64.powi(e)
}

/// Exact `floor(log2(a))` for positive finite `a`.
fn floor_log2(a: f64) -> i32 {
    let bits = a.to_bits();
    let biased = ((bits >> 52) & 0x7FF) as i32;
    if biased == 0 {
        // f64 subnormal; cannot come from an f32 input
        (a * 2f64.powi(64)).log2().floor() as i32 - 64
    } else {
        biased - 1023
    }
}

/// How a positive ratio is mapped to a power of two.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum E8m0Rounding {
    /// Smallest power of two `>= r`. Never shrinks the scale, so scaled
    /// values cannot overflow.
    #[default]
    CeilPow2,
    /// `2^round(log2 r)`.
    NearestLog2,
}

/// Power-of-two scale code: value `2^(bits - 127)`, `bits = 255` invalid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct E8m0Code(u8);

impl E8m0Code {
    pub const ONE: E8m0Code = E8m0Code(127);

    pub fn from_bits(bits: u8) -> Result<Self> {
        if bits == 255 {
            return Err(Error::InvalidValue("E8M0 code 255 is reserved".into()));
        }
        Ok(E8m0Code(bits))
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn exponent(self) -> i32 {
        self.0 as i32 - 127
    }

    pub fn value(self) -> f32 {
        exp2(self.exponent())
    }

    pub fn from_exponent(e: i32) -> Result<Self> {
        if e > 127 {
            return Err(Error::ScaleOverflow(2f64.powi(e)));
        }
        Ok(E8m0Code((e.max(-127) + 127) as u8))
    }

    /// Encodes a positive ratio. Results below `2^-127` clamp to the
    /// smallest code.
    pub fn encode(r: f32, rounding: E8m0Rounding) -> Result<Self> {
        if !r.is_finite() || r <= 0.0 {
            return Err(Error::InvalidValue(format!("E8M0 input must be positive and finite, got {r}")));
        }
        let r = r as f64;
        if r > 2f64.powi(127) {
            return Err(Error::ScaleOverflow(r));
        }
        let lo = floor_log2(r);
        let exact = r == exp2_f64(lo);
        let e = match rounding {
            E8m0Rounding::CeilPow2 => {
                if exact {
                    lo
                } else {
                    lo + 1
                }
            }
            // log2 r < lo + 1/2  <=>  r^2 < 2^(2 lo + 1); exact in f64 for
            // f32 inputs, and ties cannot occur.
            E8m0Rounding::NearestLog2 => {
                if r * r < exp2_f64(2 * lo + 1) {
                    lo
                } else {
                    lo + 1
                }
            }
        };
        Self::from_exponent(e.min(127))
    }
}
