//! Decode-phase attention for one query over a [`KvStore`].
//!
//! The aligned path plans K reads per channel from the query and the column
//! bounds, and V reads per element (or per row) from a cheap estimate of the
//! output built from the highest-probability tokens. All dot products
//! accumulate in `f64`; products of two half values are exact there, so the
//! only error the aligned path adds is the truncation it chose.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::align::{self, AlignConfig, ReadTier, Tier, UlpExponent};
use crate::data_io::HalfTensor;
use crate::error::{Error, Result};
use crate::half_bits::{f64_exponent, HalfWord, EXPONENT_BIAS};
use crate::kv_store::{AccessCounter, KvStore};

/// How V read widths are chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VStrategy {
    /// Read every head, then extend each element as far as its own exponent
    /// requires.
    #[default]
    Element,
    /// One tier per token from the row bound, before touching the row.
    Row,
}

impl std::fmt::Display for VStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            VStrategy::Element => "element",
            VStrategy::Row => "row",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub align: AlignConfig,
    pub strategy: VStrategy,
    /// Tokens with `p >= max(p) * 2^-topk_shift` qualify for the estimate.
    pub topk_shift: u32,
    /// At most this many qualifying tokens are kept.
    pub topk_cap: usize,
}

impl Default for AttentionConfig {
    fn default() -> Self {
        AttentionConfig {
            align: AlignConfig::default(),
            strategy: VStrategy::Element,
            topk_shift: 5,
            topk_cap: 32,
        }
    }
}

impl AttentionConfig {
    /// Everything read at full width with no estimate: the lossless path.
    pub fn lossless() -> Self {
        AttentionConfig {
            align: AlignConfig::forced(Tier::T16),
            ..AttentionConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.align.validate()?;
        if self.topk_cap == 0 {
            return Err(Error::InvalidConfig("top-k cap must be at least 1".into()));
        }
        if self.topk_shift > 60 {
            return Err(Error::InvalidConfig(format!(
                "top-k threshold shift {} exceeds 60",
                self.topk_shift
            )));
        }
        Ok(())
    }
}

/// Raw scores `q . k_t / sqrt(d)` and what it cost to compute them.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreResult {
    pub scores: Vec<f64>,
    pub channel_tiers: Vec<ReadTier>,
    /// `None` when tiers were forced.
    pub target: Option<UlpExponent>,
    pub stats: AccessCounter,
}

pub fn scores_aligned(q: &[HalfWord], store: &KvStore, cfg: &AlignConfig) -> Result<ScoreResult> {
    let (n, d) = (store.n_tokens(), store.n_dims());
    if n == 0 {
        return Err(Error::EmptyContext);
    }
    if q.len() != d {
        return Err(Error::LengthMismatch {
            expected: d,
            found: q.len(),
        });
    }
    let target = match cfg.force_tier {
        Some(_) => None,
        None => Some(align::rule1_target(q, store.colmax())?),
    };
    let channel_tiers = align::k_channel_tiers(q, store.colmax(), cfg)?;
    let mut stats = AccessCounter::default();
    let mut columns: Vec<Option<Vec<HalfWord>>> = Vec::with_capacity(d);
    for (c, &tier) in channel_tiers.iter().enumerate() {
        let col = store.k().read_channel(c, tier, &mut stats)?;
        columns.push((tier != ReadTier::Skip).then_some(col));
    }
    let qf: Vec<f64> = q.iter().map(|h| h.decode()).collect();
    let scale = (d as f64).sqrt();
    let scores = (0..n)
        .map(|t| {
            let mut acc = 0.0f64;
            for (c, col) in columns.iter().enumerate() {
                if let Some(col) = col {
                    acc += qf[c] * col[t].decode();
                }
            }
            acc / scale
        })
        .collect();
    Ok(ScoreResult {
        scores,
        channel_tiers,
        target,
        stats,
    })
}

/// Numerically stable softmax (the maximum is subtracted first).
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let Some(max) = scores.iter().copied().reduce(f64::max) else {
        return Vec::new();
    };
    let exps: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[derive(Clone, Copy, PartialEq)]
struct Candidate {
    p: f64,
    token: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    // Reversed so the heap top is the weakest kept candidate: smallest p,
    // and among equals the later token.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .p
            .total_cmp(&self.p)
            .then_with(|| self.token.cmp(&other.token))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Approximate top-k over probabilities: threshold at `max * 2^-shift`,
/// then keep the `cap` largest in one pass. Returned in token order.
pub fn select_top(p: &[f64], shift: u32, cap: usize) -> Vec<usize> {
    let Some(max) = p.iter().copied().reduce(f64::max) else {
        return Vec::new();
    };
    let threshold = max * 2f64.powi(-(shift as i32));
    let mut heap: BinaryHeap<Candidate> = BinaryHeap::with_capacity(cap + 1);
    for (token, &pt) in p.iter().enumerate() {
        if pt < threshold {
            continue;
        }
        heap.push(Candidate { p: pt, token });
        if heap.len() > cap {
            heap.pop();
        }
    }
    let mut picked: Vec<usize> = heap.into_iter().map(|c| c.token).collect();
    picked.sort_unstable();
    picked
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputEstimate {
    pub o_est: Vec<f64>,
    /// Selected tokens in ascending order.
    pub selected: Vec<usize>,
    /// Full-width V rows of the selected tokens, parallel to `selected`.
    pub rows: Vec<Vec<HalfWord>>,
    pub stats: AccessCounter,
}

impl OutputEstimate {
    fn row_for(&self, token: usize) -> Option<&[HalfWord]> {
        self.selected
            .binary_search(&token)
            .ok()
            .map(|i| self.rows[i].as_slice())
    }
}

pub fn estimate_output(
    p: &[f64],
    store: &KvStore,
    shift: u32,
    cap: usize,
) -> Result<OutputEstimate> {
    if p.len() != store.n_tokens() {
        return Err(Error::LengthMismatch {
            expected: store.n_tokens(),
            found: p.len(),
        });
    }
    if p.is_empty() {
        return Err(Error::EmptyContext);
    }
    let selected = select_top(p, shift, cap);
    let mut stats = AccessCounter::default();
    let mut o_est = vec![0.0f64; store.n_dims()];
    let mut rows = Vec::with_capacity(selected.len());
    for &t in &selected {
        let row = store
            .v()
            .read_row(t, ReadTier::Read(Tier::T16), &mut stats)?;
        for (o, v) in o_est.iter_mut().zip(&row) {
            *o += p[t] * v.decode();
        }
        rows.push(row);
    }
    Ok(OutputEstimate {
        o_est,
        selected,
        rows,
        stats,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputResult {
    pub output: Vec<f64>,
    /// Tier used for every V element, row-major. Tokens taken from the
    /// estimate are recorded as `T16`.
    pub tiers: Vec<ReadTier>,
    /// Reads issued here; estimate reads are not included.
    pub stats: AccessCounter,
}

#[inline]
fn head_exponent(head: u8) -> i32 {
    (((head >> 2) & 0x1F).max(1) as i32) - EXPONENT_BIAS
}

pub fn output_aligned(
    p: &[f64],
    store: &KvStore,
    estimate: Option<&OutputEstimate>,
    cfg: &AttentionConfig,
) -> Result<OutputResult> {
    let (n, d) = (store.n_tokens(), store.n_dims());
    if p.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            found: p.len(),
        });
    }
    let align = &cfg.align;
    let targets = match (align.force_tier, estimate) {
        (Some(_), _) => Vec::new(),
        (None, Some(est)) => align::rule2_targets(&est.o_est),
        (None, None) => return Err(Error::MissingEstimate),
    };
    let finest = targets
        .iter()
        .copied()
        .collect::<Option<Vec<_>>>()
        .and_then(|t| t.into_iter().min());
    let v = store.v();
    let mut stats = AccessCounter::default();
    let mut tiers = Vec::with_capacity(n * d);
    let mut output = vec![0.0f64; d];
    let mut row = vec![HalfWord::ZERO; d];
    for (t, &pt) in p.iter().enumerate() {
        if let Some(exact) = estimate.and_then(|e| e.row_for(t)) {
            row.copy_from_slice(exact);
            tiers.extend(std::iter::repeat_n(ReadTier::Read(Tier::T16), d));
        } else if let Some(forced) = align.force_tier {
            row = v.read_row(t, ReadTier::Read(forced), &mut stats)?;
            tiers.extend(std::iter::repeat_n(ReadTier::Read(forced), d));
        } else if align.zero_skip && pt == 0.0 {
            row = v.read_row(t, ReadTier::Skip, &mut stats)?;
            tiers.extend(std::iter::repeat_n(ReadTier::Skip, d));
        } else {
            let e_p = f64_exponent(pt);
            match cfg.strategy {
                VStrategy::Element => {
                    for r in 0..d {
                        let tier = match targets[r] {
                            None => Tier::T16,
                            Some(u) => {
                                let e_v = head_exponent(v.head(t, r)?);
                                align.tier_for_requirement(e_p + e_v + 1, u)
                            }
                        };
                        row[r] = v.read_element(t, r, tier.into(), &mut stats)?;
                        tiers.push(tier.into());
                    }
                }
                VStrategy::Row => {
                    let bound = store.rowmax()[t];
                    let tier = if align.zero_skip && bound.is_zero() {
                        ReadTier::Skip
                    } else {
                        match finest {
                            None => ReadTier::Read(Tier::T16),
                            Some(u) => align
                                .tier_for_requirement(e_p + bound.magnitude_exponent() + 1, u)
                                .into(),
                        }
                    };
                    row = v.read_row(t, tier, &mut stats)?;
                    tiers.extend(std::iter::repeat_n(tier, d));
                }
            }
        }
        for (o, w) in output.iter_mut().zip(&row) {
            *o += pt * w.decode();
        }
    }
    Ok(OutputResult {
        output,
        tiers,
        stats,
    })
}

/// Full-width `q . k_t / sqrt(d)` for every row of `k` (`[n, d]`).
pub fn reference_scores(q: &[HalfWord], k: &HalfTensor) -> Result<Vec<f64>> {
    let (n, d) = k.as_matrix()?;
    if q.len() != d {
        return Err(Error::LengthMismatch {
            expected: d,
            found: q.len(),
        });
    }
    let qf: Vec<f64> = q.iter().map(|h| h.decode()).collect();
    let scale = (d as f64).sqrt();
    Ok((0..n)
        .map(|t| {
            let mut acc = 0.0f64;
            for (qc, kc) in qf.iter().zip(k.row(t)) {
                acc += qc * kc.decode();
            }
            acc / scale
        })
        .collect())
}

/// Full-width `sum_t p_t * v_t` over the rows of `v` (`[n, d]`).
pub fn reference_output(p: &[f64], v: &HalfTensor) -> Result<Vec<f64>> {
    let (n, d) = v.as_matrix()?;
    if p.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            found: p.len(),
        });
    }
    let mut out = vec![0.0f64; d];
    for (t, &pt) in p.iter().enumerate() {
        for (o, w) in out.iter_mut().zip(v.row(t)) {
            *o += pt * w.decode();
        }
    }
    Ok(out)
}

fn truncate_tensor(t: &HalfTensor, kept: u32) -> Result<HalfTensor> {
    let data = t
        .data()
        .iter()
        .map(|h| h.truncate_fill(kept))
        .collect::<Result<Vec<_>>>()?;
    HalfTensor::new(t.dims().to_vec(), data)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineResult {
    pub bits: u32,
    pub scores: Vec<f64>,
    pub output: Vec<f64>,
}

/// Uniform truncation: every K and V element keeps `bits - 6` mantissa bits.
pub fn baseline_truncated(
    q: &[HalfWord],
    k: &HalfTensor,
    p: &[f64],
    v: &HalfTensor,
    bits: u32,
) -> Result<BaselineResult> {
    if !(8..=16).contains(&bits) {
        return Err(Error::InvalidConfig(format!(
            "baseline bits {bits} outside [8, 16]"
        )));
    }
    let kept = bits - 6;
    Ok(BaselineResult {
        bits,
        scores: reference_scores(q, &truncate_tensor(k, kept)?)?,
        output: reference_output(p, &truncate_tensor(v, kept)?)?,
    })
}

/// One full decode step.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionResult {
    pub scores: Vec<f64>,
    pub probs: Vec<f64>,
    pub output: Vec<f64>,
    pub k_tiers: Vec<ReadTier>,
    pub v_tiers: Vec<ReadTier>,
    pub k_target: Option<UlpExponent>,
    pub estimate: Option<OutputEstimate>,
    pub k_stats: AccessCounter,
    /// Includes the estimate's reads.
    pub v_stats: AccessCounter,
}

impl AttentionResult {
    pub fn total_stats(&self) -> AccessCounter {
        self.k_stats.merged(&self.v_stats)
    }
}

/// Scores, softmax, estimate and output with aligned reads throughout.
/// Forcing a tier disables the estimate.
pub fn decode(q: &[HalfWord], store: &KvStore, cfg: &AttentionConfig) -> Result<AttentionResult> {
    cfg.validate()?;
    let s = scores_aligned(q, store, &cfg.align)?;
    let probs = softmax(&s.scores);
    let estimate = match cfg.align.force_tier {
        Some(_) => None,
        None => Some(estimate_output(
            &probs,
            store,
            cfg.topk_shift,
            cfg.topk_cap,
        )?),
    };
    let out = output_aligned(&probs, store, estimate.as_ref(), cfg)?;
    let v_stats = match &estimate {
        Some(e) => out.stats.merged(&e.stats),
        None => out.stats,
    };
    Ok(AttentionResult {
        scores: s.scores,
        probs,
        output: out.output,
        k_tiers: s.channel_tiers,
        v_tiers: out.tiers,
        k_target: s.target,
        estimate,
        k_stats: s.stats,
        v_stats,
    })
}
