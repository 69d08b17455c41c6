//! Attention masks as one contiguous key span per query.

use std::ops::Range;

use crate::patcher::{BoundaryTiming, PatchBoundaries};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum MaskKind {
    /// Keys `j <= i` with `i - j < window`, same document.
    LocalBlockCausal { window: usize },
    /// Patches up to and including the current one, same document.
    BlockCausalPatches,
    /// Patch query rows see exactly the bytes of their patch.
    PatchMembership,
    /// Bytes see the start vector plus patches already complete before them.
    CompletedPatchCausal { timing: BoundaryTiming },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    pub kind: MaskKind,
    pub n_keys: usize,
    /// Query `i` may attend keys `spans[i].0..spans[i].1`.
    pub spans: Vec<(usize, usize)>,
}

impl AttentionMask {
    pub fn n_queries(&self) -> usize {
        self.spans.len()
    }

    pub fn allows(&self, q: usize, k: usize) -> bool {
        let (lo, hi) = self.spans[q];
        lo <= k && k < hi
    }

    pub fn to_dense(&self) -> Vec<Vec<bool>> {
        (0..self.n_queries())
            .map(|q| (0..self.n_keys).map(|k| self.allows(q, k)).collect())
            .collect()
    }
}

/// Causal sliding-window mask over a concatenation of documents.
/// `doc_starts` holds the first index of every document, beginning with 0.
pub fn local_block_causal_mask(n: usize, window: usize, doc_starts: &[usize]) -> AttentionMask {
    assert!(window >= 1, "window must be at least 1");
    let mut spans = Vec::with_capacity(n);
    let mut d = 0;
    for i in 0..n {
        while d + 1 < doc_starts.len() && doc_starts[d + 1] <= i {
            d += 1;
        }
        let lo = doc_starts.get(d).copied().unwrap_or(0).max((i + 1).saturating_sub(window));
        spans.push((lo, i + 1));
    }
    AttentionMask {
        kind: MaskKind::LocalBlockCausal { window },
        n_keys: n,
        spans,
    }
}

/// Causal mask over patches, restarting at each document's first patch.
pub fn block_causal_patch_mask(n_patches: usize, doc_first_patch: &[usize]) -> AttentionMask {
    let mut m = local_block_causal_mask(n_patches, usize::MAX, doc_first_patch);
    m.kind = MaskKind::BlockCausalPatches;
    m
}

/// `k` query rows per patch, each attending exactly that patch's bytes.
pub fn patch_membership_mask(patch_spans: &[Range<usize>], k: usize, n_bytes: usize) -> AttentionMask {
    let spans = patch_spans
        .iter()
        .flat_map(|r| std::iter::repeat_n((r.start, r.end), k))
        .collect();
    AttentionMask {
        kind: MaskKind::PatchMembership,
        n_keys: n_bytes,
        spans,
    }
}

/// Number of patches a byte at local position `t` may attend.
pub fn completed_patches(b: &PatchBoundaries, t: usize, timing: BoundaryTiming) -> usize {
    b.spans()
        .take_while(|s| match timing {
            BoundaryTiming::Predictive => s.end - 1 <= t,
            BoundaryTiming::Reactive => s.end - 1 < t,
        })
        .count()
}

/// Decoder mask. Key rows are laid out per document as `k` rows of the start
/// vector followed by `k` rows for each of the document's patches.
pub fn completed_patch_mask(docs: &[&PatchBoundaries], k: usize, timing: BoundaryTiming) -> AttentionMask {
    let mut spans = Vec::new();
    let mut base = 0;
    for b in docs {
        let mut done = 0;
        for t in 0..b.n_bytes() {
            // Monotone in t, so advance incrementally instead of recounting.
            while done < b.n_patches() && {
                let end = b.span(done).end - 1;
                match timing {
                    BoundaryTiming::Predictive => end <= t,
                    BoundaryTiming::Reactive => end < t,
                }
            } {
                done += 1;
            }
            spans.push((base * k, (base + 1 + done) * k));
        }
        base += 1 + b.n_patches();
    }
    AttentionMask {
        kind: MaskKind::CompletedPatchCausal { timing },
        n_keys: base * k,
        spans,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patcher::patch_strided;

    #[test]
    fn window_one_is_diagonal() {
        let m = local_block_causal_mask(5, 1, &[0]);
        for q in 0..5 {
            for k in 0..5 {
                assert_eq!(m.allows(q, k), q == k);
            }
        }
    }

    #[test]
    fn wide_window_single_doc_is_full_causal() {
        let m = local_block_causal_mask(6, 100, &[0]);
        for q in 0..6 {
            for k in 0..6 {
                assert_eq!(m.allows(q, k), k <= q);
            }
        }
    }

    #[test]
    fn document_boundary_blocks_attention() {
        let m = local_block_causal_mask(8, 10, &[0, 5]);
        assert!(!m.allows(6, 4));
        assert!(m.allows(6, 5));
    }

    #[test]
    fn exhaustive_local_predicate() {
        let starts = [0, 3, 4, 9];
        let m = local_block_causal_mask(12, 3, &starts);
        let doc = |i: usize| starts.iter().rposition(|&s| s <= i).unwrap();
        for q in 0..12 {
            for k in 0..12 {
                assert_eq!(m.allows(q, k), k <= q && q - k < 3 && doc(q) == doc(k));
            }
        }
    }

    #[test]
    fn exhaustive_decoder_predicate() {
        let b1 = PatchBoundaries::new(vec![0, 2, 3], 6).unwrap();
        let b2 = patch_strided(5, 2);
        let k = 2;
        for timing in [BoundaryTiming::Predictive, BoundaryTiming::Reactive] {
            let m = completed_patch_mask(&[&b1, &b2], k, timing);
            let mut q = 0;
            let mut base = 0;
            for b in [&b1, &b2] {
                let rows = (1 + b.n_patches()) * k;
                for t in 0..b.n_bytes() {
                    for key in 0..m.n_keys {
                        let local = key as isize - (base * k) as isize;
                        let expected = if local < 0 || local >= rows as isize {
                            false
                        } else {
                            let slot = local as usize / k;
                            slot == 0 || {
                                let end = b.span(slot - 1).end - 1;
                                match timing {
                                    BoundaryTiming::Predictive => end <= t,
                                    BoundaryTiming::Reactive => end < t,
                                }
                            }
                        };
                        assert_eq!(m.allows(q, key), expected, "{timing:?} q={q} key={key}");
                    }
                    assert_eq!(
                        (m.spans[q].1 - m.spans[q].0) / k - 1,
                        completed_patches(b, t, timing)
                    );
                    q += 1;
                }
                base += 1 + b.n_patches();
            }
        }
    }

    #[test]
    fn membership_rows_cover_own_patch_only() {
        let b = PatchBoundaries::new(vec![0, 3], 5).unwrap();
        let spans: Vec<_> = b.spans().collect();
        let m = patch_membership_mask(&spans, 2, 5);
        assert_eq!(m.n_queries(), 4);
        for q in 0..4 {
            for key in 0..5 {
                assert_eq!(m.allows(q, key), spans[q / 2].contains(&key));
            }
        }
    }
}
