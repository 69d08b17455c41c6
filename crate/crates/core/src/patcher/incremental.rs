use rand::Rng;
use serde::Serialize;

use super::PatchBoundaries;
use crate::corpus::Document;
use crate::exec::Exec;
use crate::rng;

/// A prefix whose patching disagrees with the patching of the full sequence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub doc: usize,
    pub cut: usize,
    /// Positions `< cut` whose start flag differs between `f(x_<cut)` and `f(x)_<cut`.
    pub positions: Vec<usize>,
}

fn compare(doc: usize, prefix: &PatchBoundaries, full: &PatchBoundaries, cut: usize) -> Option<Violation> {
    let truncated = full.truncate(cut);
    if *prefix == truncated {
        return None;
    }
    let mut flags = vec![0u8; cut];
    for &s in prefix.starts() {
        flags[s] ^= 1;
    }
    for &s in truncated.starts() {
        flags[s] ^= 2;
    }
    Some(Violation {
        doc,
        cut,
        positions: (0..cut).filter(|&i| flags[i] == 1 || flags[i] == 2).collect(),
    })
}

/// Compare `f(x_<i)` with `f(x)_<i` at `n_prefixes` random cut points `i` in `1..len`.
pub fn check_incrementality<F>(patcher: F, bytes: &[u8], n_prefixes: usize, seed: u64) -> Vec<Violation>
where
    F: Fn(&[u8]) -> PatchBoundaries,
{
    if bytes.len() < 2 {
        return Vec::new();
    }
    let full = patcher(bytes);
    let mut r = rng::seeded(seed);
    (0..n_prefixes)
        .filter_map(|_| {
            let cut = r.random_range(1..bytes.len());
            compare(0, &patcher(&bytes[..cut]), &full, cut)
        })
        .collect()
}

/// Draw `n_prefixes` random `(document, cut)` pairs and check each in parallel.
pub fn check_incrementality_corpus<F>(patcher: F, docs: &[Document], n_prefixes: usize, seed: u64, exec: Exec) -> Vec<Violation>
where
    F: Fn(&[u8]) -> PatchBoundaries + Sync + Send,
{
    let eligible: Vec<usize> = (0..docs.len()).filter(|&d| docs[d].len() >= 2).collect();
    if eligible.is_empty() {
        return Vec::new();
    }
    let mut r = rng::seeded(seed);
    let picks: Vec<(usize, usize)> = (0..n_prefixes)
        .map(|_| {
            let d = eligible[r.random_range(0..eligible.len())];
            (d, r.random_range(1..docs[d].len()))
        })
        .collect();
    exec.map(&picks, |&(d, cut)| {
        let bytes = &docs[d].bytes;
        compare(d, &patcher(&bytes[..cut]), &patcher(bytes), cut)
    })
    .into_iter()
    .flatten()
    .collect()
}
