//! Plane-packed K/V storage with metered prefix reads.
//!
//! Each tensor keeps three planes in row-major element order: one byte per
//! element for the 8-bit head, and two nibble planes for mantissa bits 3-6
//! and 7-10. Nibble planes pack two consecutive elements per byte, low
//! nibble first. Reading a tier touches a prefix of the planes only.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::align::{ReadTier, Tier};
use crate::data_io::HalfTensor;
use crate::error::{Error, Result};
use crate::half_bits::{merge_chunks, HalfWord};

/// Running totals of metered reads.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessCounter {
    pub bits_read: u64,
    pub elements_read: u64,
    /// Reads per tier, indexed T8, T12, T16.
    pub tier_counts: [u64; 3],
    pub skipped: u64,
}

impl AccessCounter {
    #[inline]
    pub fn record(&mut self, tier: ReadTier, count: u64) {
        match tier {
            ReadTier::Skip => self.skipped += count,
            ReadTier::Read(t) => {
                self.tier_counts[t as usize] += count;
                self.elements_read += count;
                self.bits_read += t.read_bits() * count;
            }
        }
    }

    pub fn merge(&mut self, other: &AccessCounter) {
        self.bits_read += other.bits_read;
        self.elements_read += other.elements_read;
        self.skipped += other.skipped;
        for (a, b) in self.tier_counts.iter_mut().zip(other.tier_counts) {
            *a += b;
        }
    }

    pub fn merged(mut self, other: &AccessCounter) -> Self {
        self.merge(other);
        self
    }

    pub fn count(&self, tier: Tier) -> u64 {
        self.tier_counts[tier as usize]
    }

    /// Mean bits per element actually read; skipped elements do not count.
    pub fn average_bit_width(&self) -> Result<f64> {
        if self.elements_read == 0 {
            return Err(Error::NoReads);
        }
        Ok(self.bits_read as f64 / self.elements_read as f64)
    }

    /// Checks that the totals agree with the per-tier counts.
    pub fn is_consistent(&self) -> bool {
        let bits: u64 = Tier::ALL
            .iter()
            .map(|&t| t.read_bits() * self.count(t))
            .sum();
        bits == self.bits_read && self.tier_counts.iter().sum::<u64>() == self.elements_read
    }
}

/// A 2-D tensor of half words stored as a head plane and two nibble planes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlaneTensor {
    n_tokens: usize,
    n_dims: usize,
    heads: Vec<u8>,
    mids: Vec<u8>,
    lows: Vec<u8>,
}

#[inline]
fn push_nibble(plane: &mut Vec<u8>, index: usize, nibble: u8) {
    if index.is_multiple_of(2) {
        plane.push(nibble & 0xF);
    } else {
        *plane.last_mut().expect("odd nibble follows an even one") |= (nibble & 0xF) << 4;
    }
}

#[inline]
fn get_nibble(plane: &[u8], index: usize) -> u8 {
    let b = plane[index / 2];
    if index.is_multiple_of(2) {
        b & 0xF
    } else {
        b >> 4
    }
}

impl PlaneTensor {
    pub fn new(n_dims: usize) -> Self {
        PlaneTensor {
            n_tokens: 0,
            n_dims,
            heads: Vec::new(),
            mids: Vec::new(),
            lows: Vec::new(),
        }
    }

    pub fn n_tokens(&self) -> usize {
        self.n_tokens
    }

    pub fn n_dims(&self) -> usize {
        self.n_dims
    }

    /// Bytes held by the three planes.
    pub fn storage_bytes(&self) -> usize {
        self.heads.len() + self.mids.len() + self.lows.len()
    }

    fn push_row(&mut self, row: &[HalfWord]) {
        debug_assert_eq!(row.len(), self.n_dims);
        let base = self.heads.len();
        for (i, h) in row.iter().enumerate() {
            let c = h.split();
            self.heads.push(c.head);
            push_nibble(&mut self.mids, base + i, c.mid);
            push_nibble(&mut self.lows, base + i, c.low);
        }
        self.n_tokens += 1;
    }

    #[inline]
    fn index(&self, token: usize, channel: usize) -> Result<usize> {
        if token >= self.n_tokens || channel >= self.n_dims {
            return Err(Error::OutOfRange {
                token,
                channel,
                n_tokens: self.n_tokens,
                n_dims: self.n_dims,
            });
        }
        Ok(token * self.n_dims + channel)
    }

    /// The 8-bit head of an element, unmetered. It carries the sign and the
    /// exact exponent.
    pub fn head(&self, token: usize, channel: usize) -> Result<u8> {
        Ok(self.heads[self.index(token, channel)?])
    }

    /// Full-width value, unmetered.
    pub fn get(&self, token: usize, channel: usize) -> Result<HalfWord> {
        let i = self.index(token, channel)?;
        Ok(self.assemble(i, Tier::T16))
    }

    #[inline]
    fn assemble(&self, i: usize, tier: Tier) -> HalfWord {
        let head = self.heads[i];
        let (mid, low) = match tier {
            Tier::T8 => (None, None),
            Tier::T12 => (Some(get_nibble(&self.mids, i)), None),
            Tier::T16 => (
                Some(get_nibble(&self.mids, i)),
                Some(get_nibble(&self.lows, i)),
            ),
        };
        merge_chunks(head, mid, low).expect("tier reads are prefixes")
    }

    /// Reads one element at `tier` and meters it. Skipped reads return zero.
    pub fn read_element(
        &self,
        token: usize,
        channel: usize,
        tier: ReadTier,
        counter: &mut AccessCounter,
    ) -> Result<HalfWord> {
        let i = self.index(token, channel)?;
        counter.record(tier, 1);
        Ok(match tier {
            ReadTier::Skip => HalfWord::ZERO,
            ReadTier::Read(t) => self.assemble(i, t),
        })
    }

    /// One channel over all tokens at a single tier.
    pub fn read_channel(
        &self,
        channel: usize,
        tier: ReadTier,
        counter: &mut AccessCounter,
    ) -> Result<Vec<HalfWord>> {
        if channel >= self.n_dims {
            return Err(Error::OutOfRange {
                token: 0,
                channel,
                n_tokens: self.n_tokens,
                n_dims: self.n_dims,
            });
        }
        counter.record(tier, self.n_tokens as u64);
        Ok((0..self.n_tokens)
            .map(|t| match tier {
                ReadTier::Skip => HalfWord::ZERO,
                ReadTier::Read(tr) => self.assemble(t * self.n_dims + channel, tr),
            })
            .collect())
    }

    /// One token's row at a single tier.
    pub fn read_row(
        &self,
        token: usize,
        tier: ReadTier,
        counter: &mut AccessCounter,
    ) -> Result<Vec<HalfWord>> {
        let base = self.index(token, 0).or_else(|e| {
            if self.n_dims == 0 && token < self.n_tokens {
                Ok(0)
            } else {
                Err(e)
            }
        })?;
        counter.record(tier, self.n_dims as u64);
        Ok((base..base + self.n_dims)
            .map(|i| match tier {
                ReadTier::Skip => HalfWord::ZERO,
                ReadTier::Read(t) => self.assemble(i, t),
            })
            .collect())
    }

    /// Unmetered copy of the whole tensor.
    pub fn to_tensor(&self) -> HalfTensor {
        let data = (0..self.heads.len())
            .map(|i| self.assemble(i, Tier::T16))
            .collect();
        HalfTensor::new(vec![self.n_tokens, self.n_dims], data).expect("shape matches planes")
    }
}

/// Append-only K/V cache for one attention head.
///
/// Readers take `&self` and meter into their own [`AccessCounter`], so any
/// number of them can run between appends and merge their totals afterwards.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KvStore {
    k: PlaneTensor,
    v: PlaneTensor,
    colmax: Vec<HalfWord>,
    rowmax: Vec<HalfWord>,
}

#[inline]
fn max_abs(a: HalfWord, b: HalfWord) -> HalfWord {
    // Finite magnitudes order the same way as their bit patterns.
    if b.abs().bits() > a.bits() {
        b.abs()
    } else {
        a
    }
}

impl KvStore {
    pub fn new(n_dims: usize) -> Self {
        KvStore {
            k: PlaneTensor::new(n_dims),
            v: PlaneTensor::new(n_dims),
            colmax: vec![HalfWord::ZERO; n_dims],
            rowmax: Vec::new(),
        }
    }

    pub fn n_tokens(&self) -> usize {
        self.k.n_tokens
    }

    pub fn n_dims(&self) -> usize {
        self.k.n_dims
    }

    pub fn k(&self) -> &PlaneTensor {
        &self.k
    }

    pub fn v(&self) -> &PlaneTensor {
        &self.v
    }

    /// Per-channel maximum of `|K|`.
    pub fn colmax(&self) -> &[HalfWord] {
        &self.colmax
    }

    /// Per-token maximum of `|V|`.
    pub fn rowmax(&self) -> &[HalfWord] {
        &self.rowmax
    }

    pub fn append_token(&mut self, k_row: &[HalfWord], v_row: &[HalfWord]) -> Result<()> {
        let d = self.n_dims();
        for row in [k_row, v_row] {
            if row.len() != d {
                return Err(Error::LengthMismatch {
                    expected: d,
                    found: row.len(),
                });
            }
        }
        let token = self.n_tokens();
        for (side, row) in [("K", k_row), ("V", v_row)] {
            if let Some(channel) = row.iter().position(|h| !h.is_finite()) {
                return Err(Error::NonFiniteAppend {
                    side,
                    token,
                    channel,
                });
            }
        }
        for (m, &k) in self.colmax.iter_mut().zip(k_row) {
            *m = max_abs(*m, k);
        }
        self.rowmax
            .push(v_row.iter().fold(HalfWord::ZERO, |m, &v| max_abs(m, v)));
        self.k.push_row(k_row);
        self.v.push_row(v_row);
        Ok(())
    }

    /// Builds a store from `[n, d]` K and V tensors.
    pub fn from_tensors(k: &HalfTensor, v: &HalfTensor) -> Result<Self> {
        let (n, d) = k.as_matrix()?;
        let (nv, dv) = v.as_matrix()?;
        if (n, d) != (nv, dv) {
            return Err(Error::LengthMismatch {
                expected: n * d,
                found: nv * dv,
            });
        }
        let mut store = KvStore::new(d);
        for t in 0..n {
            store.append_token(k.row(t), v.row(t))?;
        }
        Ok(store)
    }

    /// Writes `k.akv`, `v.akv` and the `k_colmax.akv` / `v_rowmax.akv`
    /// sidecars into `dir`.
    pub fn save_snapshot(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        self.k.to_tensor().save(dir.join("k.akv"))?;
        self.v.to_tensor().save(dir.join("v.akv"))?;
        HalfTensor::new(vec![self.n_dims()], self.colmax.clone())?
            .save(dir.join("k_colmax.akv"))?;
        HalfTensor::new(vec![self.n_tokens()], self.rowmax.clone())?
            .save(dir.join("v_rowmax.akv"))?;
        Ok(())
    }

    pub fn load_snapshot(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let k = HalfTensor::load(dir.join("k.akv"))?;
        let v = HalfTensor::load(dir.join("v.akv"))?;
        let store = KvStore::from_tensors(&k, &v)?;
        let colmax = HalfTensor::load(dir.join("k_colmax.akv"))?;
        if colmax.data() != store.colmax() {
            return Err(Error::SidecarMismatch("k_colmax"));
        }
        let rowmax = HalfTensor::load(dir.join("v_rowmax.akv"))?;
        if rowmax.data() != store.rowmax() {
            return Err(Error::SidecarMismatch("v_rowmax"));
        }
        Ok(store)
    }
}
