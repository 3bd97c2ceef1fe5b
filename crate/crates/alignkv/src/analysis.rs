//! Error histograms, bit-width sweeps and the brute-force optimality check.

use serde::{Deserialize, Serialize};

use crate::align::{required_mantissa_bits, AlignConfig, UlpExponent};
use crate::attention::{self, AttentionConfig};
use crate::data_io::{self, HalfTensor, StatsRow, StatsTable, SynthConfig};
use crate::error::{Error, Result};
use crate::half_bits::{HalfWord, MANTISSA_BITS};
use crate::kv_store::{AccessCounter, KvStore};

pub const BUCKET_LABELS: [&str; 6] = [
    "0",
    "(0,1/1024)",
    "[1/1024,1/512)",
    "[1/512,1/256)",
    "[1/256,1/128)",
    "[1/128,inf)",
];

/// Relative-error distribution over six fixed ranges.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorHistogram {
    pub counts: [u64; 6],
}

impl ErrorHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn fractions(&self) -> [f64; 6] {
        let total = self.total();
        if total == 0 {
            return [0.0; 6];
        }
        self.counts.map(|c| c as f64 / total as f64)
    }

    pub fn merge(&mut self, other: &ErrorHistogram) {
        for (a, b) in self.counts.iter_mut().zip(other.counts) {
            *a += b;
        }
    }
}

/// Bucket index for one value against its reference.
pub fn bucket_of(test: f64, reference: f64) -> usize {
    if test == reference {
        return 0;
    }
    if reference == 0.0 {
        return 5;
    }
    let rel = (test - reference).abs() / reference.abs();
    if rel < 1.0 / 1024.0 {
        1
    } else if rel < 1.0 / 512.0 {
        2
    } else if rel < 1.0 / 256.0 {
        3
    } else if rel < 1.0 / 128.0 {
        4
    } else {
        5
    }
}

pub fn relative_error_histogram(test: &[f64], reference: &[f64]) -> Result<ErrorHistogram> {
    if test.len() != reference.len() {
        return Err(Error::LengthMismatch {
            expected: reference.len(),
            found: test.len(),
        });
    }
    let mut h = ErrorHistogram::default();
    for (&t, &r) in test.iter().zip(reference) {
        h.counts[bucket_of(t, r)] += 1;
    }
    Ok(h)
}

/// Precision at which results are compared.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HistogramBasis {
    /// Round both sides to binary16 first, as a half-output kernel would.
    #[default]
    Half,
    /// Compare the `f64` accumulator values directly.
    Wide,
}

impl HistogramBasis {
    pub fn apply(self, xs: &[f64]) -> Vec<f64> {
        match self {
            HistogramBasis::Half => xs.iter().map(|&x| HalfWord::encode(x).decode()).collect(),
            HistogramBasis::Wide => xs.to_vec(),
        }
    }

    pub fn histogram(self, test: &[f64], reference: &[f64]) -> Result<ErrorHistogram> {
        relative_error_histogram(&self.apply(test), &self.apply(reference))
    }
}

/// Worst error of keeping `kept` mantissa bits, in units of the binade's
/// leading power of two. Truncated widths are measured by enumerating every
/// mantissa of one binade; at full width the stored value itself is only
/// known to half an ulp.
fn worst_relative_truncation(kept: u32) -> f64 {
    if kept >= MANTISSA_BITS {
        return 2f64.powi(-(MANTISSA_BITS as i32) - 1);
    }
    (0..1024u16)
        .map(|m| {
            let w = HalfWord::from_bits(0x3C00 | m);
            (w.truncate_fill_unchecked(kept).decode() - w.decode()).abs()
        })
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BruteForceOutcome {
    /// Aligned kept bits per product, capped at the mantissa width.
    pub aligned: Vec<u32>,
    pub aligned_total: u32,
    /// Smallest feasible total over every assignment, or `None` when no
    /// assignment within half precision meets the target.
    pub min_total: Option<u32>,
}

impl BruteForceOutcome {
    pub fn feasible(&self) -> bool {
        self.min_total.is_some()
    }

    /// Aligned assignment reaches the exhaustive minimum (ties allowed).
    pub fn aligned_is_optimal(&self) -> bool {
        self.min_total == Some(self.aligned_total)
    }
}

/// Enumerates every kept-bit assignment `t_i in [0, 10]` for up to four
/// products with exponent bounds `products` and finds the cheapest one whose
/// per-product errors all stay within `2^target`.
pub fn alignment_bruteforce(products: &[i32], target: UlpExponent) -> Result<BruteForceOutcome> {
    if products.is_empty() || products.len() > 4 {
        return Err(Error::InvalidConfig(format!(
            "brute force takes 1 to 4 products, got {}",
            products.len()
        )));
    }
    let widths = MANTISSA_BITS + 1;
    let worst: Vec<f64> = (0..widths).map(worst_relative_truncation).collect();
    let budget = 2f64.powi(target.0);
    let meets = |p: i32, t: u32| 2f64.powi(p) * worst[t as usize] <= budget;

    let k = products.len() as u32;
    let mut min_total: Option<u32> = None;
    let mut assignment = vec![0u32; products.len()];
    for code in 0..widths.pow(k) {
        let mut c = code;
        for a in assignment.iter_mut() {
            *a = c % widths;
            c /= widths;
        }
        if products.iter().zip(&assignment).all(|(&p, &t)| meets(p, t)) {
            let total = assignment.iter().sum();
            min_total = Some(min_total.map_or(total, |m: u32| m.min(total)));
        }
    }
    // The bare bound, without guard band.
    let cfg = AlignConfig {
        margin_bits: 0,
        ..AlignConfig::default()
    };
    let aligned: Vec<u32> = products
        .iter()
        .map(|&p| required_mantissa_bits(p, target, &cfg))
        .collect();
    Ok(BruteForceOutcome {
        aligned_total: aligned.iter().sum(),
        aligned,
        min_total,
    })
}

/// Where sweep inputs come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    /// Generated on the fly; `n_tokens` is ignored and set per point.
    Synthetic(SynthConfig),
    /// Loaded tensors: K and V `[n, d]`, query `[d]`. Points use prefixes.
    Tensors {
        k: HalfTensor,
        v: HalfTensor,
        q: HalfTensor,
    },
}

impl DataSource {
    fn max_tokens(&self) -> Option<usize> {
        match self {
            DataSource::Synthetic(_) => None,
            DataSource::Tensors { k, .. } => k.as_matrix().ok().map(|(n, _)| n),
        }
    }

    fn load(&self, n: usize) -> Result<(KvStore, Vec<HalfWord>)> {
        match self {
            DataSource::Synthetic(base) => {
                let cfg = SynthConfig {
                    n_tokens: n,
                    ..base.clone()
                };
                let data = data_io::generate(&cfg)?;
                Ok((
                    KvStore::from_tensors(&data.k, &data.v)?,
                    data.q.data().to_vec(),
                ))
            }
            DataSource::Tensors { k, v, q } => {
                let (total, d) = k.as_matrix()?;
                if n > total {
                    return Err(Error::InvalidConfig(format!(
                        "context length {n} exceeds the {total} stored tokens"
                    )));
                }
                let prefix =
                    |t: &HalfTensor| HalfTensor::new(vec![n, d], t.data()[..n * d].to_vec());
                let store = KvStore::from_tensors(&prefix(k)?, &prefix(v)?)?;
                Ok((store, q.data().to_vec()))
            }
        }
    }
}

/// Outputs of the two GEMMs of one decode step.
#[derive(Clone, Debug, PartialEq)]
pub struct GemmResults {
    pub scores: Vec<f64>,
    pub output: Vec<f64>,
    /// Mean bits loaded per K and per V element, when metered.
    pub avg_bits_k: f64,
    pub avg_bits_v: f64,
}

/// Reference, aligned and baseline results for one step, with each GEMM fed
/// identical inputs: the aligned SV uses the reference probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct StepEvaluation {
    pub reference: GemmResults,
    pub aligned: GemmResults,
    pub baseline: GemmResults,
    pub k_stats: AccessCounter,
    pub v_stats: AccessCounter,
}

pub fn evaluate_step(
    q: &[HalfWord],
    store: &KvStore,
    cfg: &AttentionConfig,
    baseline_bits: u32,
) -> Result<StepEvaluation> {
    cfg.validate()?;
    let k = store.k().to_tensor();
    let v = store.v().to_tensor();
    let ref_scores = attention::reference_scores(q, &k)?;
    let p_ref = attention::softmax(&ref_scores);
    let ref_output = attention::reference_output(&p_ref, &v)?;

    let s = attention::scores_aligned(q, store, &cfg.align)?;
    let estimate = match cfg.align.force_tier {
        Some(_) => None,
        None => Some(attention::estimate_output(
            &p_ref,
            store,
            cfg.topk_shift,
            cfg.topk_cap,
        )?),
    };
    let out = attention::output_aligned(&p_ref, store, estimate.as_ref(), cfg)?;
    let v_stats = match &estimate {
        Some(e) => out.stats.merged(&e.stats),
        None => out.stats,
    };
    let base = attention::baseline_truncated(q, &k, &p_ref, &v, baseline_bits)?;
    let avg = |c: &AccessCounter| c.average_bit_width().unwrap_or(0.0);
    Ok(StepEvaluation {
        reference: GemmResults {
            scores: ref_scores,
            output: ref_output,
            avg_bits_k: 16.0,
            avg_bits_v: 16.0,
        },
        aligned: GemmResults {
            scores: s.scores,
            output: out.output,
            avg_bits_k: avg(&s.stats),
            avg_bits_v: avg(&v_stats),
        },
        baseline: GemmResults {
            scores: base.scores,
            output: base.output,
            avg_bits_k: baseline_bits as f64,
            avg_bits_v: baseline_bits as f64,
        },
        k_stats: s.stats,
        v_stats,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GemmKind {
    #[serde(rename = "QK^T")]
    Scores,
    #[serde(rename = "SV")]
    Output,
}

impl std::fmt::Display for GemmKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GemmKind::Scores => "QK^T",
            GemmKind::Output => "SV",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub gemm: GemmKind,
    pub method: String,
    pub avg_bits: f64,
    pub histogram: ErrorHistogram,
    pub fractions: [f64; 6],
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub rows: Vec<CompareRow>,
}

impl CompareReport {
    pub fn row(&self, gemm: GemmKind, method: &str) -> Option<&CompareRow> {
        self.rows
            .iter()
            .find(|r| r.gemm == gemm && r.method == method)
    }

    pub fn merge(&mut self, other: &CompareReport) {
        if self.rows.is_empty() {
            self.rows = other.rows.clone();
            return;
        }
        for (a, b) in self.rows.iter_mut().zip(&other.rows) {
            let (na, nb) = (a.histogram.total() as f64, b.histogram.total() as f64);
            a.avg_bits = (a.avg_bits * na + b.avg_bits * nb) / (na + nb).max(1.0);
            a.histogram.merge(&b.histogram);
            a.fractions = a.histogram.fractions();
        }
    }
}

/// Side-by-side histograms of two methods against a reference, per GEMM.
pub fn compare_report(
    aligned: (&str, &GemmResults),
    baseline: (&str, &GemmResults),
    reference: &GemmResults,
    basis: HistogramBasis,
) -> Result<CompareReport> {
    let mut rows = Vec::with_capacity(4);
    for gemm in [GemmKind::Scores, GemmKind::Output] {
        for (method, r) in [aligned, baseline] {
            let (test, refv, bits) = match gemm {
                GemmKind::Scores => (&r.scores, &reference.scores, r.avg_bits_k),
                GemmKind::Output => (&r.output, &reference.output, r.avg_bits_v),
            };
            let histogram = basis.histogram(test, refv)?;
            rows.push(CompareRow {
                gemm,
                method: method.to_string(),
                avg_bits: bits,
                fractions: histogram.fractions(),
                histogram,
            });
        }
    }
    Ok(CompareReport { rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub attention: AttentionConfig,
    pub basis: HistogramBasis,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            attention: AttentionConfig::default(),
            basis: HistogramBasis::Half,
            threads: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub context_length: usize,
    pub avg_bits: f64,
    pub avg_bits_k: f64,
    pub avg_bits_v: f64,
    pub k_stats: AccessCounter,
    pub v_stats: AccessCounter,
    /// V bits spent building the output estimate (already in `v_stats`).
    pub estimate_bits: u64,
    pub qk_hist: ErrorHistogram,
    pub sv_hist: ErrorHistogram,
}

impl SweepPoint {
    /// Pooled histogram over both GEMMs.
    pub fn pooled_hist(&self) -> ErrorHistogram {
        let mut h = self.qk_hist;
        h.merge(&self.sv_hist);
        h
    }

    pub fn stats_row(&self) -> StatsRow {
        let f = self.pooled_hist().fractions();
        StatsRow {
            context_length: self.context_length,
            avg_bits: self.avg_bits,
            avg_bits_k: self.avg_bits_k,
            avg_bits_v: self.avg_bits_v,
            bucket0: f[0],
            bucket1: f[1],
            bucket2: f[2],
            bucket3: f[3],
            bucket4: f[4],
            bucket5: f[5],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BitWidthCurve {
    pub points: Vec<SweepPoint>,
}

impl BitWidthCurve {
    pub fn to_table(&self) -> StatsTable {
        StatsTable {
            metadata: Default::default(),
            rows: self.points.iter().map(SweepPoint::stats_row).collect(),
        }
    }
}

fn sweep_point(source: &DataSource, n: usize, cfg: &SweepConfig) -> Result<SweepPoint> {
    let (store, q) = source.load(n)?;
    let step = attention::decode(&q, &store, &cfg.attention)?;
    let eval = evaluate_step(&q, &store, &cfg.attention, 16)?;
    let total = step.total_stats();
    Ok(SweepPoint {
        context_length: n,
        avg_bits: total.average_bit_width()?,
        avg_bits_k: step.k_stats.average_bit_width()?,
        avg_bits_v: step.v_stats.average_bit_width()?,
        k_stats: step.k_stats,
        v_stats: step.v_stats,
        estimate_bits: step.estimate.as_ref().map_or(0, |e| e.stats.bits_read),
        qk_hist: cfg
            .basis
            .histogram(&eval.aligned.scores, &eval.reference.scores)?,
        sv_hist: cfg
            .basis
            .histogram(&eval.aligned.output, &eval.reference.output)?,
    })
}

/// Average loaded bit width per context length. Points run in parallel and
/// come back in input order; the result does not depend on the thread count.
pub fn bitwidth_sweep(
    source: &DataSource,
    lengths: &[usize],
    cfg: &SweepConfig,
) -> Result<BitWidthCurve> {
    use rayon::prelude::*;

    if lengths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig(
            "context lengths must be strictly increasing".into(),
        ));
    }
    if lengths.first() == Some(&0) {
        return Err(Error::InvalidConfig("context length 0".into()));
    }
    if let (Some(max), Some(&last)) = (source.max_tokens(), lengths.last()) {
        if last > max {
            return Err(Error::InvalidConfig(format!(
                "context length {last} exceeds the {max} stored tokens"
            )));
        }
    }
    cfg.attention.validate()?;
    let run = || -> Result<Vec<SweepPoint>> {
        lengths
            .par_iter()
            .map(|&n| sweep_point(source, n, cfg))
            .collect()
    };
    let points = match cfg.threads {
        None => run()?,
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?
            .install(run)?,
    };
    Ok(BitWidthCurve { points })
}
