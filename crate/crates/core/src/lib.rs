//! Byte latent transformer toolkit.
//!
//! Raw bytes are grouped into variable-length patches (strided, space-delimited or
//! entropy-driven), embedded with hash n-gram features, pooled into patch
//! representations by a small local encoder, modelled by a latent transformer over
//! patches, and decoded back to next-byte predictions by a local decoder.
//!
//! Module map:
//!
//! - [`corpus`]: document loading, character-level noising, byte-budget batching.
//! - [`entropy`]: lookup-table byte LM and per-position next-byte entropies.
//! - [`patcher`]: patching functions, threshold calibration, incrementality checks, toy BPE.
//! - [`ngram`]: rolling polynomial hashing and n-gram embedding tables.
//! - [`tensor`]: a small reverse-mode autodiff over row-major matrices.
//! - [`model`]: encoder / latent transformer / decoder with patch-aware masks.
//! - [`train`]: AdamW with warmup-cosine schedule, patch-packed training, bits-per-byte eval.
//! - [`flops`]: forward FLOPs-per-byte accounting and FLOP-matched model sizing.

mod codec;
pub mod corpus;
pub mod entropy;
pub mod error;
pub mod exec;
pub mod flops;
pub mod model;
pub mod ngram;
pub mod patcher;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
