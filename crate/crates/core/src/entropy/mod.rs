//! Lookup-table byte language model used to place entropy patch boundaries.
//!
//! Counts of `(context, next byte)` pairs are kept for every context length
//! `1..=order`. Distributions are interpolated from the uniform distribution
//! upwards:
//!
//! ```text
//! p_0(v)     = (N(v) + beta / 256) / (N + beta)
//! p_k(v | c) = (N(c, v) + beta * p_{k-1}(v | c')) / (N(c) + beta)
//! ```
//!
//! where `c'` drops the oldest byte of `c` and `beta = 256 * alpha`. A context never
//! seen in training contributes nothing, so the distribution falls back exactly to
//! the next shorter context.

mod trace;

pub use trace::{entropy, entropy_trace, entropy_traces, export_trace, EntropyTrace};

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codec::{put_u32, put_u64, ByteCursor};
use crate::corpus::Document;
use crate::{Error, Result};

pub const MAX_ORDER: usize = 8;
const MAGIC: &[u8; 8] = b"BLTENTR\0";
const FORMAT_VERSION: u32 = 1;

/// Anything that yields a next-byte distribution from a bounded causal context.
pub trait NextByteModel: Sync {
    /// Number of trailing context bytes the model can see.
    fn receptive_field(&self) -> usize;

    /// Distribution of the byte following `context`. Only the last
    /// `receptive_field()` bytes of `context` may influence the result.
    fn next_byte_distribution(&self, context: &[u8]) -> [f64; 256];
}

/// The uniform distribution over all 256 bytes.
#[derive(Clone, Copy, Debug, Default)]
pub struct UniformModel;

impl NextByteModel for UniformModel {
    fn receptive_field(&self) -> usize {
        0
    }

    fn next_byte_distribution(&self, _context: &[u8]) -> [f64; 256] {
        [1.0 / 256.0; 256]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Smoothing {
    /// Pseudo-count added per symbol at each order.
    pub alpha: f64,
}

impl Default for Smoothing {
    fn default() -> Self {
        Smoothing { alpha: 0.01 }
    }
}

impl Smoothing {
    fn beta(&self) -> f64 {
        self.alpha * 256.0
    }
}

/// Counts for one context length, sorted by packed context key.
#[derive(Clone, Debug, Default, PartialEq)]
struct OrderTable {
    keys: Vec<u64>,
    totals: Vec<u64>,
    /// `offsets[c]..offsets[c + 1]` indexes `next`/`counts` for context `c`.
    offsets: Vec<u32>,
    next: Vec<u8>,
    counts: Vec<u32>,
}

impl OrderTable {
    fn find(&self, key: u64) -> Option<usize> {
        self.keys.binary_search(&key).ok()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EntropyModel {
    order: usize,
    smoothing: Smoothing,
    unigram: [u64; 256],
    unigram_total: u64,
    /// `tables[k - 1]` holds contexts of length `k`.
    tables: Vec<OrderTable>,
}

/// Conservative upper estimate of training memory for an order-`order` model.
pub fn estimate_training_bytes(total_bytes: usize, order: usize) -> u64 {
    // Hash-map entry for a (context, byte) pair plus its share of the final sorted layout.
    const PER_PAIR: u64 = 48;
    (1..=order)
        .map(|k| {
            let possible = 256u128.pow(k as u32 + 1);
            (total_bytes as u128).min(possible) as u64 * PER_PAIR
        })
        .sum()
}

/// Default memory budget for table training.
pub const DEFAULT_MEMORY_BUDGET: u64 = 2 << 30;

fn pack(ctx: &[u8]) -> u64 {
    ctx.iter().fold(0u64, |k, &b| (k << 8) | b as u64)
}

impl EntropyModel {
    /// Count all `(context, next byte)` pairs that lie inside a document.
    pub fn train(docs: &[Document], order: usize, smoothing: Smoothing) -> Result<Self> {
        Self::train_with_budget(docs, order, smoothing, DEFAULT_MEMORY_BUDGET)
    }

    pub fn train_with_budget(docs: &[Document], order: usize, smoothing: Smoothing, budget_bytes: u64) -> Result<Self> {
        if !(1..=MAX_ORDER).contains(&order) {
            return Err(Error::Config(format!("order {order} outside [1, {MAX_ORDER}]")));
        }
        if !(smoothing.alpha.is_finite() && smoothing.alpha > 0.0) {
            return Err(Error::Config(format!("smoothing alpha must be positive, got {}", smoothing.alpha)));
        }
        let total: usize = docs.iter().map(Document::len).sum();
        if total == 0 {
            return Err(Error::Empty("entropy model training corpus".into()));
        }
        let estimate = estimate_training_bytes(total, order);
        if estimate > budget_bytes {
            return Err(Error::MemoryBudget {
                order,
                estimate_bytes: estimate,
                budget_bytes,
            });
        }

        let mut unigram = [0u64; 256];
        for doc in docs {
            for &b in &doc.bytes {
                unigram[b as usize] += 1;
            }
        }
        let tables = (1..=order)
            .map(|k| {
                let mut pairs: HashMap<(u64, u8), u32> = HashMap::new();
                for doc in docs {
                    for w in doc.bytes.windows(k + 1) {
                        *pairs.entry((pack(&w[..k]), w[k])).or_default() += 1;
                    }
                }
                let mut sorted: Vec<((u64, u8), u32)> = pairs.into_iter().collect();
                sorted.sort_unstable_by_key(|e| e.0);
                let mut t = OrderTable::default();
                for ((key, next), count) in sorted {
                    if t.keys.last() != Some(&key) {
                        t.keys.push(key);
                        t.totals.push(0);
                        t.offsets.push(t.next.len() as u32);
                    }
                    *t.totals.last_mut().unwrap() += count as u64;
                    t.next.push(next);
                    t.counts.push(count);
                }
                t.offsets.push(t.next.len() as u32);
                t
            })
            .collect();
        Ok(EntropyModel {
            order,
            smoothing,
            unigram,
            unigram_total: total as u64,
            tables,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn smoothing(&self) -> Smoothing {
        self.smoothing
    }

    /// Number of distinct stored contexts per context length.
    pub fn context_counts(&self) -> Vec<usize> {
        self.tables.iter().map(|t| t.keys.len()).collect()
    }

    /// Smoothed distribution after `context`; only its last `order` bytes are used.
    pub fn distribution(&self, context: &[u8]) -> [f64; 256] {
        let beta = self.smoothing.beta();
        let mut p = [0.0; 256];
        let denom = self.unigram_total as f64 + beta;
        for (v, slot) in p.iter_mut().enumerate() {
            *slot = (self.unigram[v] as f64 + beta / 256.0) / denom;
        }
        let usable = context.len().min(self.order);
        for k in 1..=usable {
            let t = &self.tables[k - 1];
            let Some(c) = t.find(pack(&context[context.len() - k..])) else {
                continue;
            };
            let denom = t.totals[c] as f64 + beta;
            for slot in p.iter_mut() {
                *slot = beta * *slot / denom;
            }
            let (lo, hi) = (t.offsets[c] as usize, t.offsets[c + 1] as usize);
            for j in lo..hi {
                p[t.next[j] as usize] += t.counts[j] as f64 / denom;
            }
        }
        p
    }

    /// Order-major binary layout followed by a SHA-256 of everything before it.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        put_u32(&mut out, self.order as u32);
        out.extend_from_slice(&self.smoothing.alpha.to_le_bytes());
        put_u64(&mut out, self.unigram_total);
        for &c in &self.unigram {
            put_u64(&mut out, c);
        }
        for t in &self.tables {
            put_u64(&mut out, t.keys.len() as u64);
            put_u64(&mut out, t.next.len() as u64);
            for i in 0..t.keys.len() {
                put_u64(&mut out, t.keys[i]);
                put_u64(&mut out, t.totals[i]);
                put_u32(&mut out, t.offsets[i]);
            }
            for j in 0..t.next.len() {
                out.push(t.next[j]);
                put_u32(&mut out, t.counts[j]);
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < 32 {
            return Err(Error::Format("entropy model file too short".into()));
        }
        let (body, digest) = buf.split_at(buf.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Format("entropy model checksum mismatch".into()));
        }
        let mut cur = ByteCursor::new(body);
        if cur.take(8)? != MAGIC {
            return Err(Error::Format("not an entropy model file".into()));
        }
        let version = cur.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported entropy model version {version}")));
        }
        let order = cur.u32()? as usize;
        if !(1..=MAX_ORDER).contains(&order) {
            return Err(Error::Format(format!("order {order} out of range")));
        }
        let alpha = cur.f64()?;
        let unigram_total = cur.u64()?;
        let mut unigram = [0u64; 256];
        for c in unigram.iter_mut() {
            *c = cur.u64()?;
        }
        let mut tables = Vec::with_capacity(order);
        for _ in 0..order {
            let n_ctx = cur.u64()? as usize;
            let n_pairs = cur.u64()? as usize;
            if n_ctx.saturating_mul(20) > cur.remaining() || n_pairs.saturating_mul(5) > cur.remaining() {
                return Err(Error::Format("table sizes exceed file length".into()));
            }
            let mut t = OrderTable::default();
            for _ in 0..n_ctx {
                t.keys.push(cur.u64()?);
                t.totals.push(cur.u64()?);
                t.offsets.push(cur.u32()?);
            }
            t.offsets.push(n_pairs as u32);
            for _ in 0..n_pairs {
                t.next.push(cur.u8()?);
                t.counts.push(cur.u32()?);
            }
            tables.push(t);
        }
        cur.finish()?;
        Ok(EntropyModel {
            order,
            smoothing: Smoothing { alpha },
            unigram,
            unigram_total,
            tables,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }
}

impl NextByteModel for EntropyModel {
    fn receptive_field(&self) -> usize {
        self.order
    }

    fn next_byte_distribution(&self, context: &[u8]) -> [f64; 256] {
        self.distribution(context)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::entropy_trace;
    use rand::RngCore;

    fn doc(s: &str) -> Vec<Document> {
        vec![Document::from_text("d", s)]
    }

    fn argmax(p: &[f64; 256]) -> usize {
        (0..256).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap()
    }

    #[test]
    fn alternation_is_learned() {
        let m = EntropyModel::train(&doc(&"ab".repeat(5000)), 1, Smoothing::default()).unwrap();
        let pa = m.distribution(b"a");
        let pb = m.distribution(b"b");
        assert_eq!(argmax(&pa), b'b' as usize);
        assert!(pa[b'b' as usize] > 0.999);
        assert!(pb[b'a' as usize] > 0.999);
    }

    #[test]
    fn constant_corpus_has_low_entropy_after_a() {
        let m = EntropyModel::train(&doc(&"a".repeat(10_000)), 2, Smoothing::default()).unwrap();
        let p = m.distribution(b"a");
        // Independent evaluation of the interpolation: uniform -> unigram -> order 1.
        let beta = 2.56;
        let n = 10_000.0;
        let uni_a = (n + beta / 256.0) / (n + beta);
        let uni_other = (beta / 256.0) / (n + beta);
        let n1 = 9_999.0;
        let pa = (n1 + beta * uni_a) / (n1 + beta);
        let po = beta * uni_other / (n1 + beta);
        assert!((p[b'a' as usize] - pa).abs() < 1e-12);
        assert!((p[0] - po).abs() < 1e-15);
        let h = -(pa * pa.ln() + 255.0 * po * po.ln());
        assert!((entropy(&p) - h).abs() < 1e-12);
        assert!(h < 0.1);
    }

    #[test]
    fn uniform_random_bytes_approach_max_entropy() {
        let mut r = crate::rng::seeded(0);
        let mut bytes = vec![0u8; 2_000_000];
        r.fill_bytes(&mut bytes);
        let mean_entropy = |n: usize| {
            let m = EntropyModel::train(&[Document::new("r", bytes[..n].to_vec())], 2, Smoothing::default()).unwrap();
            let probe = &bytes[n - 2000..n];
            let t = entropy_trace(&m, probe, false);
            t.values[2..].iter().sum::<f64>() / (t.len() - 2) as f64
        };
        let gaps: Vec<f64> = [20_000, 200_000, 2_000_000].iter().map(|&n| 256f64.ln() - mean_entropy(n)).collect();
        assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2] && gaps[2] > 0.0, "{gaps:?}");
        let m1 = EntropyModel::train(&[Document::new("r", bytes.clone())], 1, Smoothing::default()).unwrap();
        assert!(256f64.ln() - entropy(&m1.distribution(b"x")) < 0.1);
    }

    #[test]
    fn distributions_are_normalized_and_positive() {
        let m = EntropyModel::train(&doc("the quick brown fox jumps over the lazy dog"), 3, Smoothing::default()).unwrap();
        for ctx in [&b""[..], b"t", b"th", b"the", b"zzz", b"e q"] {
            let p = m.distribution(ctx);
            assert!(p.iter().all(|&v| v > 0.0));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn unseen_context_backs_off_to_unigram() {
        let m = EntropyModel::train(&doc("abcabc"), 2, Smoothing::default()).unwrap();
        assert_eq!(m.distribution(b"zz"), m.distribution(b""));
        assert_eq!(m.distribution(b"za"), m.distribution(b"a"));
    }

    #[test]
    fn long_context_equals_truncated() {
        let m = EntropyModel::train(&doc("mississippi river"), 3, Smoothing::default()).unwrap();
        assert_eq!(m.distribution(b"xxxxssi"), m.distribution(b"ssi"));
    }

    #[test]
    fn contexts_do_not_cross_documents() {
        let docs = vec![Document::from_text("a", "xa"), Document::from_text("b", "by")];
        let m = EntropyModel::train(&docs, 1, Smoothing::default()).unwrap();
        assert_eq!(m.distribution(b"a"), m.distribution(b""));
    }

    #[test]
    fn serialization_roundtrip_and_checksum() {
        let m = EntropyModel::train(&doc("hello hello world"), 3, Smoothing::default()).unwrap();
        let bytes = m.to_bytes();
        assert_eq!(EntropyModel::from_bytes(&bytes).unwrap(), m);
        let again = EntropyModel::train(&doc("hello hello world"), 3, Smoothing::default()).unwrap();
        assert_eq!(again.to_bytes(), bytes);
        let mut bad = bytes.clone();
        bad[40] ^= 0xFF;
        assert!(matches!(EntropyModel::from_bytes(&bad), Err(Error::Format(_))));
    }

    #[test]
    fn bad_orders_and_budget() {
        let d = doc("abc");
        assert!(EntropyModel::train(&d, 0, Smoothing::default()).is_err());
        assert!(EntropyModel::train(&d, 9, Smoothing::default()).is_err());
        assert!(matches!(
            EntropyModel::train_with_budget(&d, 3, Smoothing::default(), 10),
            Err(Error::MemoryBudget { order: 3, .. })
        ));
        assert!(EntropyModel::train(&[], 2, Smoothing::default()).is_err());
    }
}
