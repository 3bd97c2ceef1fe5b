//! Tensor files, synthetic data and stat export.
//!
//! # AKV tensor files
//!
//! All integers are little-endian.
//!
//! | offset      | size       | field                         |
//! |-------------|------------|-------------------------------|
//! | 0           | 4          | magic `AKV1`                  |
//! | 4           | 1          | version (1)                   |
//! | 5           | 1          | dtype (1 = binary16)          |
//! | 6           | 2          | reserved (0)                  |
//! | 8           | 4          | `ndim`                        |
//! | 12          | 4 * `ndim` | dims                          |
//! | 12 + 4*ndim | 2 * prod   | row-major half words          |
//!
//! # Synthetic data
//!
//! The generator is ChaCha8 (`rand_chacha::ChaCha8Rng::seed_from_u64`) with
//! normals drawn by `rand_distr::StandardNormal`. Draw order is fixed:
//! `d` channel-scale exponents, then the `d` query entries, then for each
//! token its K row followed by its V row. A shorter context is therefore an
//! exact prefix of a longer one with the same seed.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::half_bits::HalfWord;

pub const MAGIC: [u8; 4] = *b"AKV1";
pub const VERSION: u8 = 1;
pub const DTYPE_HALF: u8 = 1;

/// A dense row-major tensor of half words.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HalfTensor {
    dims: Vec<usize>,
    data: Vec<HalfWord>,
}

impl HalfTensor {
    pub fn new(dims: Vec<usize>, data: Vec<HalfWord>) -> Result<Self> {
        let expected: usize = dims.iter().product();
        if expected != data.len() {
            return Err(Error::LengthMismatch {
                expected,
                found: data.len(),
            });
        }
        Ok(HalfTensor { dims, data })
    }

    pub fn from_f64(dims: Vec<usize>, values: &[f64]) -> Result<Self> {
        HalfTensor::new(dims, values.iter().map(|&x| HalfWord::encode(x)).collect())
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[HalfWord] {
        &self.data
    }

    /// Interprets the tensor as `[rows, cols]`; a 1-D tensor is one row.
    pub fn as_matrix(&self) -> Result<(usize, usize)> {
        match *self.dims.as_slice() {
            [n] => Ok((1, n)),
            [r, c] => Ok((r, c)),
            _ => Err(Error::InvalidConfig(format!(
                "expected a 1-D or 2-D tensor, got dims {:?}",
                self.dims
            ))),
        }
    }

    pub fn row(&self, r: usize) -> &[HalfWord] {
        let cols = *self.dims.last().unwrap_or(&0);
        &self.data[r * cols..(r + 1) * cols]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.dims.len() + 2 * self.data.len());
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(DTYPE_HALF);
        out.extend_from_slice(&[0, 0]);
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for h in &self.data {
            out.extend_from_slice(&h.bits().to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let need = |expected: usize| {
            if bytes.len() < expected {
                Err(Error::Truncated {
                    expected,
                    found: bytes.len(),
                })
            } else {
                Ok(())
            }
        };
        need(4)?;
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        need(12)?;
        if bytes[4] != VERSION {
            return Err(Error::UnsupportedVersion(bytes[4]));
        }
        if bytes[5] != DTYPE_HALF {
            return Err(Error::UnsupportedDtype(bytes[5]));
        }
        let ndim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header = 12usize.saturating_add(ndim.checked_mul(4).ok_or(Error::Truncated {
            expected: usize::MAX,
            found: bytes.len(),
        })?);
        need(header)?;
        let dims: Vec<usize> = bytes[12..header]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .unwrap_or(usize::MAX);
        let total = count
            .checked_mul(2)
            .and_then(|p| p.checked_add(header))
            .unwrap_or(usize::MAX);
        need(total)?;
        if bytes.len() > total {
            return Err(Error::TrailingBytes {
                expected: total,
                found: bytes.len(),
            });
        }
        let data = bytes[header..]
            .chunks_exact(2)
            .map(|c| HalfWord::from_bits(u16::from_le_bytes([c[0], c[1]])))
            .collect();
        Ok(HalfTensor { dims, data })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        HalfTensor::from_bytes(&bytes)
    }
}

/// Writes to a temporary file in the destination directory, then renames it
/// into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Keeps synthetic softmax spread over tens of tokens rather than one.
pub const DEFAULT_Q_GAIN_EXP: i32 = -4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_tokens: usize,
    pub d: usize,
    /// Channel scales are `2^u` with `u` uniform on this interval.
    pub scale_exp_range: (f64, f64),
    /// The query is a K-like row multiplied by `2^q_gain_exp`.
    pub q_gain_exp: i32,
    pub seed: u64,
}

impl SynthConfig {
    pub fn new(n_tokens: usize, d: usize, seed: u64) -> Self {
        SynthConfig {
            n_tokens,
            d,
            scale_exp_range: (-4.0, 4.0),
            q_gain_exp: DEFAULT_Q_GAIN_EXP,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_tokens == 0 || self.d == 0 {
            return Err(Error::InvalidConfig(
                "n_tokens and d must both be at least 1".into(),
            ));
        }
        let (lo, hi) = self.scale_exp_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::InvalidConfig(format!(
                "bad scale exponent range ({lo}, {hi})"
            )));
        }
        Ok(())
    }
}

/// Generated K `[n, d]`, V `[n, d]` and query `[d]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SynthData {
    pub k: HalfTensor,
    pub v: HalfTensor,
    pub q: HalfTensor,
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let (n, d) = (cfg.n_tokens, cfg.d);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (lo, hi) = cfg.scale_exp_range;
    let scales: Vec<f64> = (0..d)
        .map(|_| {
            let unit: f64 = rng.random();
            (lo + (hi - lo) * unit).exp2()
        })
        .collect();
    let mut normal = move || -> f64 { rng.sample(StandardNormal) };
    let gain = 2f64.powi(cfg.q_gain_exp);
    let q: Vec<HalfWord> = scales
        .iter()
        .map(|s| HalfWord::encode(gain * s * normal()))
        .collect();
    let mut k = Vec::with_capacity(n * d);
    let mut v = Vec::with_capacity(n * d);
    for _ in 0..n {
        k.extend(scales.iter().map(|s| HalfWord::encode(s * normal())));
        v.extend((0..d).map(|_| HalfWord::encode(normal())));
    }
    Ok(SynthData {
        k: HalfTensor::new(vec![n, d], k)?,
        v: HalfTensor::new(vec![n, d], v)?,
        q: HalfTensor::new(vec![d], q)?,
    })
}

/// One row of the exported sweep table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub context_length: usize,
    pub avg_bits: f64,
    pub avg_bits_k: f64,
    pub avg_bits_v: f64,
    pub bucket0: f64,
    pub bucket1: f64,
    pub bucket2: f64,
    pub bucket3: f64,
    pub bucket4: f64,
    pub bucket5: f64,
}

pub const STATS_HEADER: [&str; 10] = [
    "context_length",
    "avg_bits",
    "avg_bits_k",
    "avg_bits_v",
    "bucket0",
    "bucket1",
    "bucket2",
    "bucket3",
    "bucket4",
    "bucket5",
];

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StatsTable {
    pub metadata: BTreeMap<String, String>,
    pub rows: Vec<StatsRow>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StatsFormat {
    Csv,
    Json,
}

pub fn stats_to_csv(table: &StatsTable) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record(STATS_HEADER)?;
    for row in &table.rows {
        w.serialize(row)?;
    }
    w.into_inner()
        .map_err(|e| Error::io("<csv buffer>", e.into_error()))
}

pub fn stats_from_csv(bytes: &[u8]) -> Result<Vec<StatsRow>> {
    let mut r = csv::Reader::from_reader(bytes);
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

pub fn export_stats(table: &StatsTable, path: impl AsRef<Path>, format: StatsFormat) -> Result<()> {
    let bytes = match format {
        StatsFormat::Csv => stats_to_csv(table)?,
        StatsFormat::Json => {
            let mut b = serde_json::to_vec_pretty(table)?;
            b.push(b'\n');
            b
        }
    };
    write_atomic(path.as_ref(), &bytes)
}
