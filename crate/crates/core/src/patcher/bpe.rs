//! Minimal byte-level BPE: greedy merge training and rank-ordered encoding.

use std::collections::{BTreeMap, HashMap};

use super::PatchBoundaries;
use crate::corpus::Document;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bpe {
    /// Byte strings of every symbol; ids below 256 are single bytes.
    vocab: Vec<Vec<u8>>,
    /// Merge rules in rank order: `(left, right) -> merged`.
    merges: Vec<(u32, u32, u32)>,
    ranks: HashMap<(u32, u32), (usize, u32)>,
}

/// Pre-tokens begin at the start of the text and before every whitespace byte.
fn pretokenize(bytes: &[u8]) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..bytes.len() {
        if bytes[i].is_ascii_whitespace() {
            out.push(start..i);
            start = i;
        }
    }
    if !bytes.is_empty() {
        out.push(start..bytes.len());
    }
    out
}

fn merge_pair(symbols: &mut Vec<u32>, left: u32, right: u32, merged: u32) {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == left && symbols[i + 1] == right {
            out.push(merged);
            i += 2;
        } else {
            out.push(symbols[i]);
            i += 1;
        }
    }
    *symbols = out;
}

impl Bpe {
    /// No merges: every byte is its own token.
    pub fn identity() -> Self {
        Bpe {
            vocab: (0..=255u8).map(|b| vec![b]).collect(),
            merges: Vec::new(),
            ranks: HashMap::new(),
        }
    }

    /// Build from explicit merge rules given as byte strings, in rank order.
    pub fn from_merges(rules: &[(&[u8], &[u8])]) -> Self {
        let mut bpe = Bpe::identity();
        for (l, r) in rules {
            let id = |bpe: &Bpe, s: &[u8]| {
                bpe.vocab
                    .iter()
                    .position(|v| v == s)
                    .unwrap_or_else(|| panic!("merge operand {s:?} is not in the vocabulary")) as u32
            };
            let (a, b) = (id(&bpe, l), id(&bpe, r));
            bpe.push_merge(a, b);
        }
        bpe
    }

    fn push_merge(&mut self, a: u32, b: u32) -> u32 {
        let merged = self.vocab.len() as u32;
        let mut bytes = self.vocab[a as usize].clone();
        bytes.extend_from_slice(&self.vocab[b as usize]);
        self.vocab.push(bytes);
        self.ranks.insert((a, b), (self.merges.len(), merged));
        self.merges.push((a, b, merged));
        merged
    }

    /// Learn up to `n_merges` rules, always merging the most frequent adjacent pair
    /// (ties: smallest pair of byte strings). Stops early when no pair occurs twice.
    pub fn train(docs: &[Document], n_merges: usize) -> Self {
        let mut bpe = Bpe::identity();
        let mut counts: BTreeMap<&[u8], u64> = BTreeMap::new();
        for doc in docs {
            for r in pretokenize(&doc.bytes) {
                *counts.entry(&doc.bytes[r]).or_default() += 1;
            }
        }
        let mut words: Vec<(Vec<u32>, u64)> = counts
            .into_iter()
            .map(|(w, c)| (w.iter().map(|&b| b as u32).collect(), c))
            .collect();
        for _ in 0..n_merges {
            let mut pairs: HashMap<(u32, u32), u64> = HashMap::new();
            for (w, c) in &words {
                for p in w.windows(2) {
                    *pairs.entry((p[0], p[1])).or_default() += c;
                }
            }
            let best = pairs.into_iter().max_by(|x, y| {
                x.1.cmp(&y.1).then_with(|| {
                    let kx = (&bpe.vocab[x.0 .0 as usize], &bpe.vocab[x.0 .1 as usize]);
                    let ky = (&bpe.vocab[y.0 .0 as usize], &bpe.vocab[y.0 .1 as usize]);
                    ky.cmp(&kx)
                })
            });
            let Some(((a, b), count)) = best else { break };
            if count < 2 {
                break;
            }
            let merged = bpe.push_merge(a, b);
            for (w, _) in &mut words {
                if w.len() > 1 {
                    merge_pair(w, a, b, merged);
                }
            }
        }
        bpe
    }

    pub fn n_merges(&self) -> usize {
        self.merges.len()
    }

    /// Byte strings of the merged symbols, in rank order.
    pub fn merged_tokens(&self) -> impl Iterator<Item = &[u8]> {
        self.merges.iter().map(|m| self.vocab[m.2 as usize].as_slice())
    }

    /// Token byte strings of `bytes`.
    pub fn encode(&self, bytes: &[u8]) -> Vec<Vec<u8>> {
        let mut out = Vec::new();
        for r in pretokenize(bytes) {
            let mut symbols: Vec<u32> = bytes[r].iter().map(|&b| b as u32).collect();
            loop {
                let best = symbols
                    .windows(2)
                    .filter_map(|p| self.ranks.get(&(p[0], p[1])).map(|&(rank, m)| (rank, p[0], p[1], m)))
                    .min();
                let Some((_, a, b, m)) = best else { break };
                merge_pair(&mut symbols, a, b, m);
            }
            out.extend(symbols.iter().map(|&s| self.vocab[s as usize].clone()));
        }
        out
    }

    /// Token starts of `bytes` as patch boundaries.
    pub fn patch(&self, bytes: &[u8]) -> PatchBoundaries {
        let mut starts = Vec::new();
        let mut pos = 0;
        for t in self.encode(bytes) {
            starts.push(pos);
            pos += t.len();
        }
        PatchBoundaries::new(starts, bytes.len()).expect("tokens partition the input")
    }

    /// The `n` most common bytes among the merge operands, for witness searches.
    pub fn alphabet_hint(&self, n: usize) -> Vec<u8> {
        let mut freq: BTreeMap<u8, usize> = BTreeMap::new();
        for tok in self.merged_tokens().take(200) {
            for &b in tok {
                *freq.entry(b).or_default() += 1;
            }
        }
        let mut v: Vec<(u8, usize)> = freq.into_iter().collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        v.into_iter().take(n).map(|(b, _)| b).collect()
    }
}

/// Exhaustively search strings over `alphabet` of length `2..=max_len` for a
/// prefix `x_<i` whose tokenization differs from the tokenization of `x` cut at `i`.
pub fn find_incrementality_witness(bpe: &Bpe, alphabet: &[u8], max_len: usize) -> Option<(Vec<u8>, usize)> {
    for len in 2..=max_len {
        let total = alphabet.len().checked_pow(len as u32)?;
        for mut code in 0..total {
            let x: Vec<u8> = (0..len)
                .map(|_| {
                    let b = alphabet[code % alphabet.len()];
                    code /= alphabet.len();
                    b
                })
                .collect();
            let full = bpe.patch(&x);
            for cut in 1..len {
                if bpe.patch(&x[..cut]) != full.truncate(cut) {
                    return Some((x, cut));
                }
            }
        }
    }
    None
}
