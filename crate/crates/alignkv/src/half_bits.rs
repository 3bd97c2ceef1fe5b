//! Bit-level model of IEEE 754 binary16 words.
//!
//! Layout (MSB first): 1 sign bit, 5 exponent bits (bias 15), 10 mantissa bits.
//! A word is split into an 8-bit head (sign, exponent, top two mantissa bits)
//! and two 4-bit tails so that the first 8, 12 or 16 bits can be read on
//! their own. Missing low bits are filled with `100...0`, the midpoint of the
//! truncation interval.

use std::fmt;

use crate::error::{Error, Result};

pub const MANTISSA_BITS: u32 = 10;
pub const EXPONENT_BIAS: i32 = 15;
const EXP_MASK: u16 = 0x7C00;
const MANT_MASK: u16 = 0x03FF;

/// A binary16 value held as its raw bit pattern.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash)]
#[repr(transparent)]
pub struct HalfWord(u16);

impl fmt::Debug for HalfWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "HalfWord(0x{:04X} = {})", self.0, self.decode())
    }
}

impl HalfWord {
    pub const ZERO: HalfWord = HalfWord(0x0000);
    pub const ONE: HalfWord = HalfWord(0x3C00);
    pub const MAX: HalfWord = HalfWord(0x7BFF);

    #[inline]
    pub const fn from_bits(bits: u16) -> Self {
        HalfWord(bits)
    }

    #[inline]
    pub const fn bits(self) -> u16 {
        self.0
    }

    #[inline]
    pub const fn sign(self) -> u16 {
        self.0 >> 15
    }

    #[inline]
    pub const fn biased_exponent(self) -> u16 {
        (self.0 & EXP_MASK) >> 10
    }

    #[inline]
    pub const fn mantissa(self) -> u16 {
        self.0 & MANT_MASK
    }

    #[inline]
    pub const fn is_finite(self) -> bool {
        self.biased_exponent() != 31
    }

    /// True for both signed zeros.
    #[inline]
    pub const fn is_zero(self) -> bool {
        self.0 & 0x7FFF == 0
    }

    #[inline]
    pub const fn abs(self) -> Self {
        HalfWord(self.0 & 0x7FFF)
    }

    /// Exact value of the pattern. Infinities and NaNs map to the
    /// corresponding `f64` sentinels.
    pub fn decode(self) -> f64 {
        let sign = if self.sign() == 1 { -1.0 } else { 1.0 };
        let be = self.biased_exponent() as i32;
        let m = self.mantissa() as f64;
        match be {
            0 => sign * m * 2f64.powi(-24),
            31 if self.mantissa() == 0 => sign * f64::INFINITY,
            31 => f64::NAN,
            _ => sign * (1024.0 + m) * 2f64.powi(be - 25),
        }
    }

    /// Round-to-nearest-even conversion. Values beyond the half range
    /// saturate to signed infinity.
    pub fn encode(x: f64) -> Self {
        if x.is_nan() {
            return HalfWord(0x7E00);
        }
        let sign: u16 = if x.is_sign_negative() { 0x8000 } else { 0 };
        let a = x.abs();
        if a < 2f64.powi(-14) {
            // Subnormal range: count units of 2^-24. A carry to 1024 lands on
            // the smallest normal, which has the same bit pattern.
            let m = (a * 2f64.powi(24)).round_ties_even() as u16;
            return HalfWord(sign | m);
        }
        if a.is_infinite() {
            return HalfWord(sign | EXP_MASK);
        }
        let e = f64_exponent(a);
        if e > 15 {
            return HalfWord(sign | EXP_MASK);
        }
        let m = (a * 2f64.powi(10 - e)).round_ties_even() as u32;
        // m in [1024, 2048]; 2048 carries into the exponent field.
        let bits = (((e + EXPONENT_BIAS) as u32) << 10) + (m - 1024);
        HalfWord(sign | bits.min(EXP_MASK as u32) as u16)
    }

    /// Exponent `u` such that the spacing of representable values around
    /// this word is `2^u`. Zero and subnormals share the fixed spacing
    /// `2^-24`.
    pub fn ulp_exponent(self) -> Result<i32> {
        if !self.is_finite() {
            return Err(Error::NonFinite(self.0));
        }
        Ok(self.magnitude_exponent() - MANTISSA_BITS as i32)
    }

    /// Unbiased exponent `e` with `|x| < 2^(e+1)`. Subnormals and zero
    /// report the subnormal floor `-14`, which is still an upper bound.
    #[inline]
    pub fn magnitude_exponent(self) -> i32 {
        (self.biased_exponent().max(1) as i32) - EXPONENT_BIAS
    }

    /// Keeps the top `kept` mantissa bits and replaces the rest with a one
    /// followed by zeros. `kept == 10` is the identity. Sign and exponent are
    /// never touched.
    pub fn truncate_fill(self, kept: u32) -> Result<Self> {
        if kept > MANTISSA_BITS {
            return Err(Error::KeptBitsOutOfRange(kept as i32));
        }
        if !self.is_finite() {
            return Err(Error::NonFinite(self.0));
        }
        Ok(self.truncate_fill_unchecked(kept))
    }

    #[inline]
    pub(crate) fn truncate_fill_unchecked(self, kept: u32) -> Self {
        if kept >= MANTISSA_BITS {
            return self;
        }
        let dropped = MANTISSA_BITS - kept;
        let keep_mask: u16 = !((1u16 << dropped) - 1);
        HalfWord((self.0 & keep_mask) | (1u16 << (dropped - 1)))
    }

    #[inline]
    pub fn split(self) -> ChunkTriple {
        ChunkTriple {
            head: (self.0 >> 8) as u8,
            mid: ((self.0 >> 4) & 0xF) as u8,
            low: (self.0 & 0xF) as u8,
        }
    }
}

/// A half word cut into the 8-bit head and two 4-bit nibbles.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChunkTriple {
    /// sign, 5 exponent bits, mantissa bits 1-2
    pub head: u8,
    /// mantissa bits 3-6
    pub mid: u8,
    /// mantissa bits 7-10
    pub low: u8,
}

impl ChunkTriple {
    pub fn merge(self) -> HalfWord {
        merge_parts(self.head, self.mid, self.low)
    }
}

#[inline]
fn merge_parts(head: u8, mid: u8, low: u8) -> HalfWord {
    HalfWord(((head as u16) << 8) | (((mid & 0xF) as u16) << 4) | (low & 0xF) as u16)
}

/// Rebuilds a word from a prefix of its chunks. Absent trailing bits take
/// the midpoint fill.
pub fn merge_chunks(head: u8, mid: Option<u8>, low: Option<u8>) -> Result<HalfWord> {
    match (mid, low) {
        (Some(m), Some(l)) => Ok(merge_parts(head, m, l)),
        (Some(m), None) => Ok(merge_parts(head, m, 0x8)),
        (None, None) => Ok(merge_parts(head, 0x8, 0x0)),
        (None, Some(_)) => Err(Error::NonPrefixTier),
    }
}

/// Exponent of a finite, positive, normal `f64`.
#[inline]
pub(crate) fn f64_exponent(a: f64) -> i32 {
    debug_assert!(a.is_finite() && a > 0.0);
    let be = ((a.to_bits() >> 52) & 0x7FF) as i32;
    if be == 0 {
        // f64 subnormal
        a.log2().floor() as i32
    } else {
        be - 1023
    }
}
