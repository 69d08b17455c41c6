use std::collections::HashMap;

use super::{HashNgramTables, MAX_GRAM};
use crate::corpus::Document;
use crate::{Error, Result};

/// Exact-gram embedding rows for the `K` most frequent grams of each size.
#[derive(Clone, Debug)]
pub struct FrequencyNgramTables {
    pub sizes: Vec<usize>,
    pub top_k: usize,
    pub dim: usize,
    /// Per size: gram -> row index, ranked by (count desc, bytes asc).
    index: Vec<HashMap<Vec<u8>, usize>>,
    ranked: Vec<Vec<(Vec<u8>, u64)>>,
    rows: Vec<Vec<f64>>,
}

fn pack(gram: &[u8]) -> u64 {
    gram.iter().fold(0u64, |k, &b| (k << 8) | b as u64)
}

fn unpack(key: u64, n: usize) -> Vec<u8> {
    (0..n).rev().map(|s| (key >> (8 * s)) as u8).collect()
}

impl FrequencyNgramTables {
    /// Count every gram inside each document and keep the exact top-K per size.
    /// Ties are broken by lexicographic order of the gram bytes. Rows start at zero.
    pub fn build(docs: &[Document], sizes: &[usize], top_k: usize, dim: usize) -> Result<Self> {
        if docs.iter().all(Document::is_empty) {
            return Err(Error::Empty("frequency tables need a non-empty corpus".into()));
        }
        let mut index = Vec::new();
        let mut ranked = Vec::new();
        for &n in sizes {
            if !(1..=MAX_GRAM).contains(&n) {
                return Err(Error::Config(format!("n-gram size {n} outside [1, {MAX_GRAM}]")));
            }
            let mut counts: HashMap<u64, u64> = HashMap::new();
            for doc in docs {
                for w in doc.bytes.windows(n) {
                    *counts.entry(pack(w)).or_default() += 1;
                }
            }
            // With equal length, big-endian packing orders keys like the gram bytes.
            let mut all: Vec<(u64, u64)> = counts.into_iter().collect();
            all.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            all.truncate(top_k);
            let top: Vec<(Vec<u8>, u64)> = all.into_iter().map(|(k, c)| (unpack(k, n), c)).collect();
            index.push(top.iter().enumerate().map(|(i, (g, _))| (g.clone(), i)).collect());
            ranked.push(top);
        }
        let rows = ranked.iter().map(|r| vec![0.0; r.len() * dim]).collect();
        Ok(FrequencyNgramTables {
            sizes: sizes.to_vec(),
            top_k,
            dim,
            index,
            ranked,
            rows,
        })
    }

    /// Ranked `(gram, count)` entries for size `n`.
    pub fn entries(&self, n: usize) -> &[(Vec<u8>, u64)] {
        self.sizes
            .iter()
            .position(|&s| s == n)
            .map(|s| self.ranked[s].as_slice())
            .unwrap_or(&[])
    }

    pub fn contains(&self, gram: &[u8]) -> bool {
        self.slot(gram).is_some()
    }

    fn slot(&self, gram: &[u8]) -> Option<(usize, usize)> {
        let s = self.sizes.iter().position(|&n| n == gram.len())?;
        self.index[s].get(gram).map(|&row| (s, row))
    }

    pub fn row_mut(&mut self, gram: &[u8]) -> Option<&mut [f64]> {
        let (s, row) = self.slot(gram)?;
        let d = self.dim;
        Some(&mut self.rows[s][row * d..(row + 1) * d])
    }

    /// The frequency row when the gram is stored, otherwise the hash-table row.
    pub fn lookup_with_fallback<'a>(&'a self, gram: &[u8], hash: &'a HashNgramTables) -> Option<&'a [f64]> {
        match self.slot(gram) {
            Some((s, row)) => Some(&self.rows[s][row * self.dim..(row + 1) * self.dim]),
            None => hash.row_for_gram(gram),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::NgramConfig;
    use super::*;

    #[test]
    fn aaaa_bigram_table() {
        let docs = vec![Document::from_text("d", "aaaa")];
        let t = FrequencyNgramTables::build(&docs, &[2], 1, 4).unwrap();
        assert_eq!(t.entries(2), &[(b"aa".to_vec(), 3)]);
    }

    #[test]
    fn ties_break_lexicographically() {
        let docs = vec![Document::from_text("d", "ba"), Document::from_text("e", "ab")];
        let t = FrequencyNgramTables::build(&docs, &[2], 1, 1).unwrap();
        assert_eq!(t.entries(2)[0].0, b"ab".to_vec());
    }

    #[test]
    fn unseen_gram_falls_back_to_hash_row() {
        let docs = vec![Document::from_text("d", "abcabc")];
        let mut f = FrequencyNgramTables::build(&docs, &[3], 10, 2).unwrap();
        f.row_mut(b"abc").unwrap().copy_from_slice(&[5.0, 6.0]);
        let cfg = NgramConfig {
            sizes: vec![3],
            per_n_vocab: 7,
            ..NgramConfig::default()
        };
        let h = HashNgramTables::random(cfg, 2, 1.0, 0).unwrap();
        assert_eq!(f.lookup_with_fallback(b"abc", &h).unwrap(), &[5.0, 6.0]);
        assert_eq!(f.lookup_with_fallback(b"zzz", &h).unwrap(), h.row_for_gram(b"zzz").unwrap());
    }

    #[test]
    fn size_is_min_of_k_and_distinct() {
        let docs = vec![Document::from_text("d", "abcd")];
        let t = FrequencyNgramTables::build(&docs, &[2, 3], 100, 1).unwrap();
        assert_eq!(t.entries(2).len(), 3);
        assert_eq!(t.entries(3).len(), 2);
    }
}
