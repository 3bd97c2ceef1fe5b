//! Precision-aligned dynamic truncation of half-precision KV caches.
//!
//! Every cached value is a binary16 word stored as three bit planes (an 8-bit
//! head and two 4-bit tails). During a decode step the required number of
//! mantissa bits is worked out per element from magnitude bounds alone, and
//! only that prefix of each word is read. Dropped bits are reconstructed with
//! a midpoint fill.
//!
//! The runnable programs under `examples/` walk through each capability:
//!
//! ```bash
//! cargo run -p alignkv --example half_bits
//! cargo run -p alignkv --example decode_attention
//! cargo run -p alignkv --release --example bitwidth_sweep
//! ```

pub mod align;
pub mod analysis;
pub mod attention;
pub mod cli;
pub mod data_io;
mod error;
pub mod half_bits;
pub mod kv_store;

pub use align::{AlignConfig, ReadTier, Tier, TierThresholds, UlpExponent};
pub use attention::{AttentionConfig, AttentionResult, VStrategy};
pub use error::{Error, Result};
pub use half_bits::{ChunkTriple, HalfWord};
pub use kv_store::{AccessCounter, KvStore, PlaneTensor};
