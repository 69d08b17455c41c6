use std::ops::Range;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::exec::Exec;
use crate::model::{BltInput, ModelConfig};
use crate::patcher::{BoundaryTiming, PatchBoundaries, PatchStats, Patcher};
use crate::rng::{self, RngState};
use crate::{Error, Result};

/// Documents with their patch boundaries, computed once before training.
#[derive(Clone, Debug)]
pub struct PatchedCorpus {
    pub docs: Vec<Vec<u8>>,
    pub boundaries: Vec<PatchBoundaries>,
    pub timing: BoundaryTiming,
    /// Patches shortened by the maximum-patch-size cap.
    pub cap_hits: usize,
}

impl PatchedCorpus {
    pub fn build(docs: &[Document], patcher: &Patcher<'_>, exec: Exec) -> Result<Self> {
        patcher.validate()?;
        let docs: Vec<&Document> = docs.iter().filter(|d| !d.is_empty()).collect();
        if docs.is_empty() {
            return Err(Error::Empty("training corpus has no non-empty documents".into()));
        }
        let patched = exec.map(&docs, |d| patcher.patch(&d.bytes));
        Ok(PatchedCorpus {
            docs: docs.iter().map(|d| d.bytes.clone()).collect(),
            cap_hits: patched.iter().map(|p| p.cap_hits).sum(),
            boundaries: patched.into_iter().map(|p| p.boundaries).collect(),
            timing: patcher.timing(),
        })
    }

    pub fn n_bytes(&self) -> usize {
        self.docs.iter().map(Vec::len).sum()
    }

    pub fn n_patches(&self) -> usize {
        self.boundaries.iter().map(PatchBoundaries::n_patches).sum()
    }

    pub fn stats(&self) -> PatchStats {
        crate::patcher::corpus_patch_stats(&self.boundaries)
    }
}

/// A run of consecutive patches from one document.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub doc: usize,
    pub patches: Range<usize>,
}

/// Segments holding exactly the configured number of patches.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchBatch {
    pub segments: Vec<Segment>,
}

impl PatchBatch {
    pub fn n_patches(&self) -> usize {
        self.segments.iter().map(|s| s.patches.len()).sum()
    }

    /// Byte ranges and patch boundaries of each segment.
    pub fn pieces<'c>(&self, corpus: &'c PatchedCorpus) -> Vec<(&'c [u8], PatchBoundaries)> {
        self.segments
            .iter()
            .map(|s| {
                let b = &corpus.boundaries[s.doc];
                let lo = b.starts()[s.patches.start];
                let hi = b.span(s.patches.end - 1).end;
                let starts = b.starts()[s.patches.clone()].iter().map(|&x| x - lo).collect();
                let local = PatchBoundaries::new(starts, hi - lo).expect("sub-range of valid boundaries");
                (&corpus.docs[s.doc][lo..hi], local)
            })
            .collect()
    }

    pub fn n_bytes(&self, corpus: &PatchedCorpus) -> usize {
        self.pieces(corpus).iter().map(|p| p.0.len()).sum()
    }

    pub fn to_input(&self, corpus: &PatchedCorpus, cfg: &ModelConfig) -> Result<BltInput> {
        let pieces = self.pieces(corpus);
        let docs: Vec<&[u8]> = pieces.iter().map(|p| p.0).collect();
        let boundaries = pieces.into_iter().map(|p| p.1).collect();
        BltInput::new(cfg, &docs, boundaries, corpus.timing)
    }
}

/// Position of a [`PatchStream`], enough to resume it exactly.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamCursor {
    pub epoch: u64,
    /// Generator state before the current epoch's shuffle.
    pub epoch_rng: RngState,
    /// Index into the current epoch's document order.
    pub pos: usize,
    /// First unconsumed patch of the current document.
    pub patch_offset: usize,
}

/// Endless stream of fixed-patch-count batches.
///
/// Documents are visited in a fresh shuffled order every epoch. A batch is filled
/// greedily; when a document has more patches than the batch still needs, it is
/// split at a patch boundary and the remainder opens the next batch.
pub struct PatchStream<'c> {
    corpus: &'c PatchedCorpus,
    patches_per_batch: usize,
    order: Vec<usize>,
    rng: rng::Rng,
    cursor: StreamCursor,
}

impl<'c> PatchStream<'c> {
    pub fn new(corpus: &'c PatchedCorpus, patches_per_batch: usize, seed: u64) -> Result<Self> {
        let start = StreamCursor {
            epoch: 0,
            epoch_rng: RngState::capture(&rng::stream(seed, 0xDA7A)),
            pos: 0,
            patch_offset: 0,
        };
        Self::resume(corpus, patches_per_batch, start)
    }

    pub fn resume(corpus: &'c PatchedCorpus, patches_per_batch: usize, cursor: StreamCursor) -> Result<Self> {
        if patches_per_batch == 0 {
            return Err(Error::Config("patches_per_batch must be positive".into()));
        }
        if corpus.docs.is_empty() {
            return Err(Error::Empty("patched corpus is empty".into()));
        }
        let mut rng = cursor.epoch_rng.restore();
        let mut order: Vec<usize> = (0..corpus.docs.len()).collect();
        order.shuffle(&mut rng);
        if cursor.pos >= order.len() {
            return Err(Error::Format(format!("stream cursor position {} out of range", cursor.pos)));
        }
        Ok(PatchStream {
            corpus,
            patches_per_batch,
            order,
            rng,
            cursor,
        })
    }

    pub fn cursor(&self) -> StreamCursor {
        self.cursor
    }

    pub fn next_batch(&mut self) -> PatchBatch {
        let mut need = self.patches_per_batch;
        let mut segments = Vec::new();
        while need > 0 {
            let doc = self.order[self.cursor.pos];
            let total = self.corpus.boundaries[doc].n_patches();
            let take = need.min(total - self.cursor.patch_offset);
            segments.push(Segment {
                doc,
                patches: self.cursor.patch_offset..self.cursor.patch_offset + take,
            });
            need -= take;
            self.cursor.patch_offset += take;
            if self.cursor.patch_offset == total {
                self.advance_doc();
            }
        }
        PatchBatch { segments }
    }

    fn advance_doc(&mut self) {
        self.cursor.patch_offset = 0;
        self.cursor.pos += 1;
        if self.cursor.pos == self.order.len() {
            self.cursor.pos = 0;
            self.cursor.epoch += 1;
            self.cursor.epoch_rng = RngState::capture(&self.rng);
            self.order.sort_unstable();
            self.order.shuffle(&mut self.rng);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patcher::{PatchScheme, PatchingConfig};

    fn corpus(texts: &[&str], k: usize) -> PatchedCorpus {
        let docs: Vec<Document> = texts.iter().enumerate().map(|(i, t)| Document::from_text(i.to_string(), t)).collect();
        let cfg = PatchingConfig::new(PatchScheme::Strided { k });
        PatchedCorpus::build(&docs, &Patcher::new(&cfg), Exec::Sequential).unwrap()
    }

    #[test]
    fn every_batch_has_the_configured_patch_count() {
        let c = corpus(&["abcdefghij", "xy", "0123456789012345678901234567", "q"], 3);
        let mut s = PatchStream::new(&c, 5, 1).unwrap();
        let mut seen = 0;
        for _ in 0..40 {
            let b = s.next_batch();
            assert_eq!(b.n_patches(), 5);
            let input = b.to_input(&c, &ModelConfig::micro()).unwrap();
            assert_eq!(input.n_patches(), 5);
            seen += b.n_patches();
        }
        assert_eq!(seen, 200);
    }

    #[test]
    fn one_epoch_covers_every_patch_once() {
        let c = corpus(&["abcdefghij", "xy", "0123456789012345678901234567", "q"], 3);
        let total = c.n_patches();
        let mut s = PatchStream::new(&c, total, 9).unwrap();
        let b = s.next_batch();
        let mut covered: Vec<(usize, usize)> = b.segments.iter().flat_map(|s| s.patches.clone().map(move |p| (s.doc, p))).collect();
        covered.sort_unstable();
        let expected: Vec<(usize, usize)> = (0..c.docs.len()).flat_map(|d| (0..c.boundaries[d].n_patches()).map(move |p| (d, p))).collect();
        assert_eq!(covered, expected);
        assert_eq!(b.n_bytes(&c), c.n_bytes());
        assert_eq!(s.cursor().epoch, 1);
    }

    #[test]
    fn resuming_from_a_cursor_continues_identically() {
        let c = corpus(&["abcdefghij", "xy", "0123456789012345678901234567", "q", "hello world"], 2);
        let mut a = PatchStream::new(&c, 7, 3).unwrap();
        for _ in 0..11 {
            a.next_batch();
        }
        let mut b = PatchStream::resume(&c, 7, a.cursor()).unwrap();
        for _ in 0..30 {
            assert_eq!(a.next_batch(), b.next_batch());
        }
    }

    #[test]
    fn split_segments_keep_local_boundaries() {
        let c = corpus(&["abcdefghij"], 3);
        let mut s = PatchStream::new(&c, 3, 0).unwrap();
        let b = s.next_batch();
        let pieces = b.pieces(&c);
        assert_eq!(pieces[0].0, b"abcdefghi");
        assert_eq!(pieces[0].1.starts(), &[0, 3, 6]);
        let b = s.next_batch();
        let pieces = b.pieces(&c);
        assert_eq!(pieces[0].0, b"j");
        assert_eq!(pieces[1].0, b"abcdef");
    }
}
