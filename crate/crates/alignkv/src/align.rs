//! Precision alignment: choosing how many mantissa bits each cached operand
//! needs so that no addend of a dot product is more precise than the
//! coarsest one (addend alignment) or than the result itself (result
//! alignment).
//!
//! All reasoning is in powers of two. A product `q * k` with
//! `|q| < 2^(e_q+1)` and `|k| < 2^(e_k+1)` is bounded by `2^(e_q+e_k+2)`;
//! we carry `p = e_q + e_k + 1` as the product's exponent upper bound.
//! Truncating `k` to `t` kept mantissa bits with midpoint fill costs at most
//! `2^(e_k-1-t)`, so the product error stays below `2^(p-1-t)`. Choosing
//! `t = p - u - 1` therefore keeps every addend's error under `2^u`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::half_bits::{f64_exponent, HalfWord, MANTISSA_BITS};

/// A target precision `2^u` in absolute value units.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UlpExponent(pub i32);

/// Read width of a stored half word.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tier {
    T8,
    T12,
    T16,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::T8, Tier::T12, Tier::T16];

    pub const fn kept_mantissa_bits(self) -> u32 {
        match self {
            Tier::T8 => 2,
            Tier::T12 => 6,
            Tier::T16 => 10,
        }
    }

    pub const fn read_bits(self) -> u64 {
        match self {
            Tier::T8 => 8,
            Tier::T12 => 12,
            Tier::T16 => 16,
        }
    }

    pub fn from_read_bits(bits: u32) -> Option<Tier> {
        Tier::ALL.into_iter().find(|t| t.read_bits() == bits as u64)
    }
}

/// What a read plan asks of one element or channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ReadTier {
    /// The product is known to be exactly zero; nothing is fetched.
    Skip,
    Read(Tier),
}

impl ReadTier {
    pub const fn read_bits(self) -> u64 {
        match self {
            ReadTier::Skip => 0,
            ReadTier::Read(t) => t.read_bits(),
        }
    }
}

impl From<Tier> for ReadTier {
    fn from(t: Tier) -> Self {
        ReadTier::Read(t)
    }
}

/// Largest kept-bit requirement served by each of the two truncated tiers.
///
/// Thresholds may only be lowered from the defaults: a tier must keep at
/// least as many bits as the requirements routed to it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierThresholds {
    pub t8_max: i32,
    pub t12_max: i32,
}

impl Default for TierThresholds {
    fn default() -> Self {
        TierThresholds {
            t8_max: 2,
            t12_max: 6,
        }
    }
}

impl TierThresholds {
    pub fn validate(&self) -> Result<()> {
        let ok = (-1..=Tier::T8.kept_mantissa_bits() as i32).contains(&self.t8_max)
            && (self.t8_max..=Tier::T12.kept_mantissa_bits() as i32).contains(&self.t12_max);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!(
                "tier thresholds need -1 <= t8_max <= 2 and t8_max <= t12_max <= 6, got {}/{}",
                self.t8_max, self.t12_max
            )))
        }
    }

    pub fn tier_for_bits(&self, kept: i32) -> Result<Tier> {
        if !(0..=MANTISSA_BITS as i32).contains(&kept) {
            return Err(Error::KeptBitsOutOfRange(kept));
        }
        Ok(self.tier_for_valid(kept as u32))
    }

    #[inline]
    fn tier_for_valid(&self, kept: u32) -> Tier {
        let kept = kept as i32;
        if kept <= self.t8_max {
            Tier::T8
        } else if kept <= self.t12_max {
            Tier::T12
        } else {
            Tier::T16
        }
    }
}

/// Smallest tier that keeps at least `kept` mantissa bits.
pub fn tier_for_bits(kept: i32) -> Result<Tier> {
    TierThresholds::default().tier_for_bits(kept)
}

/// Guard band applied by default. A dot product sums many truncated addends
/// whose errors grow roughly like `sqrt(d)`; four bits cover `d = 128` to 256.
pub const DEFAULT_MARGIN_BITS: i32 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignConfig {
    /// Extra bits kept beyond the aligned requirement (may be negative).
    pub margin_bits: i32,
    /// Skip reads whose product is known to be exactly zero.
    pub zero_skip: bool,
    pub thresholds: TierThresholds,
    /// Read everything at one tier, bypassing alignment.
    pub force_tier: Option<Tier>,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            margin_bits: DEFAULT_MARGIN_BITS,
            zero_skip: true,
            thresholds: TierThresholds::default(),
            force_tier: None,
        }
    }
}

impl AlignConfig {
    pub fn forced(tier: Tier) -> Self {
        AlignConfig {
            force_tier: Some(tier),
            ..AlignConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(-2..=4).contains(&self.margin_bits) {
            return Err(Error::InvalidConfig(format!(
                "margin_bits {} outside [-2, 4]",
                self.margin_bits
            )));
        }
        self.thresholds.validate()
    }

    #[inline]
    pub fn tier_for_requirement(&self, product_exp_ub: i32, target: UlpExponent) -> Tier {
        if let Some(t) = self.force_tier {
            return t;
        }
        self.thresholds
            .tier_for_valid(required_mantissa_bits(product_exp_ub, target, self))
    }
}

/// Mantissa bits an operand must keep so that its product, whose exponent is
/// bounded by `product_exp_ub`, carries error below `2^target`.
#[inline]
pub fn required_mantissa_bits(product_exp_ub: i32, target: UlpExponent, cfg: &AlignConfig) -> u32 {
    (product_exp_ub - target.0 - 1 + cfg.margin_bits).clamp(0, MANTISSA_BITS as i32) as u32
}

#[inline]
fn product_exp_ub(a: HalfWord, b: HalfWord) -> i32 {
    a.magnitude_exponent() + b.magnitude_exponent() + 1
}

fn check_pair(q: &[HalfWord], colmax: &[HalfWord]) -> Result<()> {
    if q.len() != colmax.len() {
        return Err(Error::LengthMismatch {
            expected: q.len(),
            found: colmax.len(),
        });
    }
    if let Some(bad) = q.iter().chain(colmax).find(|h| !h.is_finite()) {
        return Err(Error::NonFinite(bad.bits()));
    }
    Ok(())
}

/// Addend alignment for `q . k`: the coarsest ulp among the bounded
/// products, taken over channels where neither side is zero.
pub fn rule1_target(q: &[HalfWord], colmax: &[HalfWord]) -> Result<UlpExponent> {
    check_pair(q, colmax)?;
    q.iter()
        .zip(colmax)
        .filter(|(a, b)| !a.is_zero() && !b.is_zero())
        .map(|(&a, &b)| product_exp_ub(a, b) - MANTISSA_BITS as i32)
        .max()
        .map(UlpExponent)
        .ok_or(Error::DegenerateDotProduct)
}

/// Result alignment: the ulp of each estimated output, or `None` where the
/// estimate is zero and nothing can be inferred.
pub fn rule2_targets(o_est: &[f64]) -> Vec<Option<UlpExponent>> {
    o_est
        .iter()
        .map(|&x| {
            if x == 0.0 || !x.is_finite() {
                None
            } else {
                Some(UlpExponent(f64_exponent(x.abs()) - MANTISSA_BITS as i32))
            }
        })
        .collect()
}

/// Read tier for every K channel given the query and the column bounds.
pub fn k_channel_tiers(
    q: &[HalfWord],
    colmax: &[HalfWord],
    cfg: &AlignConfig,
) -> Result<Vec<ReadTier>> {
    if let Some(t) = cfg.force_tier {
        check_pair(q, colmax)?;
        return Ok(vec![ReadTier::Read(t); q.len()]);
    }
    let target = rule1_target(q, colmax)?;
    Ok(q.iter()
        .zip(colmax)
        .map(|(&a, &b)| {
            if cfg.zero_skip && (a.is_zero() || b.is_zero()) {
                ReadTier::Skip
            } else {
                ReadTier::Read(cfg.tier_for_requirement(product_exp_ub(a, b), target))
            }
        })
        .collect())
}
