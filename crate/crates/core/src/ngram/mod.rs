//! Hash n-gram byte features.
//!
//! Every byte position `i` gets, for each configured size `n`, the trailing gram
//! `b[i-n+1..=i]` hashed with a polynomial rolling hash and reduced to a bucket of
//! a per-size embedding table. Grams that would reach before the start of the
//! sequence are omitted.

mod freq;

pub use freq::FrequencyNgramTables;

use std::io::{Read, Write};

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::{rng, Error, Result};

/// A 10-digit prime; the default hash multiplier.
pub const DEFAULT_PRIME: u64 = 1_000_000_007;

/// Largest supported gram length.
pub const MAX_GRAM: usize = 8;

/// Polynomial hash `sum_{j=1..n} b[n-j] * a^(j-1)` in wrapping 64-bit arithmetic.
///
/// The last byte of the gram carries weight `a^0`.
pub fn roll_poly_hash(gram: &[u8], a: u64) -> u64 {
    gram.iter()
        .fold(0u64, |h, &b| h.wrapping_mul(a).wrapping_add(b as u64))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NgramConfig {
    pub sizes: Vec<usize>,
    pub per_n_vocab: usize,
    #[serde(default = "default_prime")]
    pub prime: u64,
}

fn default_prime() -> u64 {
    DEFAULT_PRIME
}

impl Default for NgramConfig {
    fn default() -> Self {
        NgramConfig {
            sizes: (3..=8).collect(),
            per_n_vocab: 500_000,
            prime: DEFAULT_PRIME,
        }
    }
}

impl NgramConfig {
    pub fn validate(&self) -> Result<()> {
        if self.per_n_vocab == 0 {
            return Err(Error::Config("per_n_vocab must be positive".into()));
        }
        for &n in &self.sizes {
            if !(1..=MAX_GRAM).contains(&n) {
                return Err(Error::Config(format!("n-gram size {n} outside [1, {MAX_GRAM}]")));
            }
        }
        let mut sorted = self.sizes.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.sizes.len() {
            return Err(Error::Config("duplicate n-gram sizes".into()));
        }
        if !is_ten_digit_prime(self.prime) {
            return Err(Error::Config(format!("hash multiplier {} is not a 10-digit prime", self.prime)));
        }
        Ok(())
    }
}

/// Deterministic trial division; 10-digit inputs need at most ~50k divisions.
pub fn is_ten_digit_prime(a: u64) -> bool {
    if !(1_000_000_000..10_000_000_000).contains(&a) || a % 2 == 0 {
        return false;
    }
    let mut d = 3u64;
    while d * d <= a {
        if a % d == 0 {
            return false;
        }
        d += 2;
    }
    true
}

/// Bucket ids per position: `ids[i][s]` is the bucket of the gram of size `sizes[s]`
/// ending at `i`, or `None` when `i < sizes[s] - 1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NgramIds {
    pub sizes: Vec<usize>,
    pub ids: Vec<Vec<Option<usize>>>,
}

impl NgramIds {
    /// Number of gram sizes present at position `i`.
    pub fn available(&self, i: usize) -> usize {
        self.ids[i].iter().flatten().count()
    }
}

/// Compute bucket ids for every position and configured size.
pub fn hash_ngram_ids(bytes: &[u8], cfg: &NgramConfig) -> NgramIds {
    let ids = (0..bytes.len())
        .map(|i| {
            cfg.sizes
                .iter()
                .map(|&n| {
                    (i + 1 >= n).then(|| {
                        (roll_poly_hash(&bytes[i + 1 - n..=i], cfg.prime) % cfg.per_n_vocab as u64) as usize
                    })
                })
                .collect()
        })
        .collect();
    NgramIds {
        sizes: cfg.sizes.clone(),
        ids,
    }
}

/// Hash-bucket embedding tables, one `per_n_vocab x dim` row-major table per size.
#[derive(Clone, Debug, PartialEq)]
pub struct HashNgramTables {
    pub config: NgramConfig,
    pub dim: usize,
    pub tables: Vec<Vec<f64>>,
}

const TABLE_MAGIC: &[u8; 8] = b"BLTNGRM\0";
const TABLE_VERSION: u32 = 1;

impl HashNgramTables {
    pub fn zeros(config: NgramConfig, dim: usize) -> Result<Self> {
        config.validate()?;
        let tables = vec![vec![0.0; config.per_n_vocab * dim]; config.sizes.len()];
        Ok(HashNgramTables { config, dim, tables })
    }

    pub fn random(config: NgramConfig, dim: usize, std: f64, seed: u64) -> Result<Self> {
        let mut t = Self::zeros(config, dim)?;
        let normal = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
        let mut r = rng::seeded(seed);
        for table in &mut t.tables {
            for v in table.iter_mut() {
                *v = normal.sample(&mut r);
            }
        }
        Ok(t)
    }

    pub fn row(&self, size_index: usize, bucket: usize) -> &[f64] {
        &self.tables[size_index][bucket * self.dim..(bucket + 1) * self.dim]
    }

    /// Row for the gram `gram`, whose length must be one of the configured sizes.
    pub fn row_for_gram(&self, gram: &[u8]) -> Option<&[f64]> {
        let s = self.config.sizes.iter().position(|&n| n == gram.len())?;
        let bucket = (roll_poly_hash(gram, self.config.prime) % self.config.per_n_vocab as u64) as usize;
        Some(self.row(s, bucket))
    }

    /// `e_i = (x_i + sum of available gram rows) / (available + 1)` for every position.
    ///
    /// `byte_embeds` is `bytes.len() x dim` row-major.
    pub fn augment_embeddings(&self, byte_embeds: &[f64], bytes: &[u8]) -> Result<Vec<f64>> {
        if byte_embeds.len() != bytes.len() * self.dim {
            return Err(Error::Shape(format!(
                "byte embeddings hold {} values, expected {} x {}",
                byte_embeds.len(),
                bytes.len(),
                self.dim
            )));
        }
        let ids = hash_ngram_ids(bytes, &self.config);
        let d = self.dim;
        let mut out = byte_embeds.to_vec();
        for (i, row) in out.chunks_mut(d).enumerate() {
            for (s, id) in ids.ids[i].iter().enumerate() {
                if let Some(b) = id {
                    for (o, v) in row.iter_mut().zip(self.row(s, *b)) {
                        *o += v;
                    }
                }
            }
            let scale = 1.0 / (ids.available(i) + 1) as f64;
            row.iter_mut().for_each(|v| *v *= scale);
        }
        Ok(out)
    }

    /// Versioned binary: magic, version, sizes, vocab, dim, prime, then f64 tables.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(TABLE_MAGIC)?;
        w.write_all(&TABLE_VERSION.to_le_bytes())?;
        w.write_all(&(self.config.sizes.len() as u32).to_le_bytes())?;
        for &n in &self.config.sizes {
            w.write_all(&(n as u32).to_le_bytes())?;
        }
        w.write_all(&(self.config.per_n_vocab as u64).to_le_bytes())?;
        w.write_all(&(self.dim as u64).to_le_bytes())?;
        w.write_all(&self.config.prime.to_le_bytes())?;
        for table in &self.tables {
            for v in table {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf).map_err(|e| Error::io("n-gram table", e))?;
        let mut cur = crate::codec::ByteCursor::new(&buf);
        if cur.take(8)? != TABLE_MAGIC {
            return Err(Error::Format("not an n-gram table file".into()));
        }
        let version = cur.u32()?;
        if version != TABLE_VERSION {
            return Err(Error::Format(format!("unsupported n-gram table version {version}")));
        }
        let n_sizes = cur.u32()? as usize;
        let sizes = (0..n_sizes).map(|_| cur.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let per_n_vocab = cur.u64()? as usize;
        let dim = cur.u64()? as usize;
        let prime = cur.u64()?;
        let config = NgramConfig {
            sizes,
            per_n_vocab,
            prime,
        };
        config.validate()?;
        let mut tables = Vec::with_capacity(n_sizes);
        for _ in 0..n_sizes {
            let table = (0..per_n_vocab * dim).map(|_| cur.f64()).collect::<Result<Vec<_>>>()?;
            tables.push(table);
        }
        cur.finish()?;
        Ok(HashNgramTables { config, dim, tables })
    }
}

/// Draw `count` random grams with lengths uniform in `sizes` and report
/// `(max bucket load, mean bucket load)` for a table of `vocab` buckets.
pub fn bucket_load(count: usize, sizes: &[usize], vocab: usize, prime: u64, seed: u64) -> (usize, f64) {
    let mut r = rng::seeded(seed);
    let mut loads = vec![0usize; vocab];
    let mut gram = [0u8; MAX_GRAM];
    for _ in 0..count {
        let n = sizes[r.random_range(0..sizes.len())];
        r.fill(&mut gram[..n]);
        loads[(roll_poly_hash(&gram[..n], prime) % vocab as u64) as usize] += 1;
    }
    let max = loads.iter().copied().max().unwrap_or(0);
    (max, count as f64 / vocab as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_byte_gram_is_the_byte() {
        assert_eq!(roll_poly_hash(&[200], DEFAULT_PRIME), 200);
        assert_eq!(roll_poly_hash(&[7], 12345), 7);
    }

    #[test]
    fn two_byte_gram_weights_last_byte_by_one() {
        let a = DEFAULT_PRIME;
        assert_eq!(roll_poly_hash(&[3, 9], a), 9 + 3 * a);
    }

    #[test]
    fn default_prime_has_ten_digits() {
        assert!(is_ten_digit_prime(DEFAULT_PRIME));
        assert!(!is_ten_digit_prime(1_000_000_008));
        assert!(!is_ten_digit_prime(999_999_937));
    }

    #[test]
    fn omission_rule_at_sequence_start() {
        let ids = hash_ngram_ids(b"abcdefghij", &NgramConfig::default());
        assert_eq!(ids.available(0), 0);
        assert_eq!(ids.available(1), 0);
        assert_eq!(ids.available(2), 1);
        assert_eq!(ids.available(7), 6);
        assert!(ids.ids[4][2].is_some() && ids.ids[3][2].is_none());
    }

    #[test]
    fn single_bucket_vocab_maps_everything_to_zero() {
        let cfg = NgramConfig {
            per_n_vocab: 1,
            ..NgramConfig::default()
        };
        let ids = hash_ngram_ids(b"hello world", &cfg);
        assert!(ids.ids.iter().flatten().flatten().all(|&b| b == 0));
    }

    #[test]
    fn zero_tables_divide_by_available_plus_one() {
        let cfg = NgramConfig {
            per_n_vocab: 16,
            ..NgramConfig::default()
        };
        let t = HashNgramTables::zeros(cfg, 2).unwrap();
        let bytes = b"abcdefghi";
        let x: Vec<f64> = (0..bytes.len() * 2).map(|v| v as f64 + 1.0).collect();
        let e = t.augment_embeddings(&x, bytes).unwrap();
        assert_eq!(&e[0..2], &x[0..2]);
        let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
        assert!(close(e[2 * 2], x[2 * 2] / 2.0));
        assert!(close(e[2 * 3], x[2 * 3] / 3.0));
        assert!(close(e[2 * 8], x[2 * 8] / 7.0));
    }

    #[test]
    fn augment_is_linear_in_a_table_row() {
        let cfg = NgramConfig {
            sizes: vec![3],
            per_n_vocab: 8,
            prime: DEFAULT_PRIME,
        };
        let mut t = HashNgramTables::random(cfg, 3, 1.0, 4).unwrap();
        let bytes = b"xyz";
        let x = vec![0.0; 9];
        let bucket = hash_ngram_ids(bytes, &t.config).ids[2][0].unwrap();
        let before = t.augment_embeddings(&x, bytes).unwrap();
        t.tables[0][bucket * 3..bucket * 3 + 3].iter_mut().for_each(|v| *v *= 3.0);
        let after = t.augment_embeddings(&x, bytes).unwrap();
        for c in 6..9 {
            assert!((after[c] - 3.0 * before[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let t = HashNgramTables::zeros(
            NgramConfig {
                per_n_vocab: 4,
                ..NgramConfig::default()
            },
            4,
        )
        .unwrap();
        assert!(matches!(t.augment_embeddings(&[0.0; 3], b"ab"), Err(Error::Shape(_))));
    }

    #[test]
    fn table_file_roundtrip() {
        let cfg = NgramConfig {
            sizes: vec![3, 5],
            per_n_vocab: 5,
            prime: DEFAULT_PRIME,
        };
        let t = HashNgramTables::random(cfg, 3, 0.1, 1).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        assert_eq!(HashNgramTables::read_from(&buf[..]).unwrap(), t);
        buf[0] ^= 1;
        assert!(HashNgramTables::read_from(&buf[..]).is_err());
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = NgramConfig::default();
        cfg.sizes = vec![9];
        assert!(cfg.validate().is_err());
        cfg.sizes = vec![3, 3];
        assert!(cfg.validate().is_err());
        cfg.sizes = vec![3];
        cfg.prime = 101;
        assert!(cfg.validate().is_err());
    }
}
