use std::ops::Range;

use super::mask::{
    block_causal_patch_mask, completed_patch_mask, local_block_causal_mask, patch_membership_mask, AttentionMask,
};
use super::ModelConfig;
use crate::ngram::hash_ngram_ids;
use crate::patcher::{BoundaryTiming, PatchBoundaries, Patcher};
use crate::{Error, Result};

/// Documents packed into one model call, with every index the forward pass needs.
///
/// Documents never see each other: every mask is block-diagonal over documents.
#[derive(Clone, Debug)]
pub struct BltInput {
    pub bytes: Vec<u8>,
    pub doc_ranges: Vec<Range<usize>>,
    pub boundaries: Vec<PatchBoundaries>,
    pub timing: BoundaryTiming,
    /// Byte position inside its document (rotary positions of the local blocks).
    pub positions: Vec<usize>,
    /// `ngram_ids[s][i]`: bucket of the size-`s` gram ending at byte `i`.
    pub ngram_ids: Vec<Vec<Option<usize>>>,
    /// `1 / (available gram sizes + 1)` per byte.
    pub ngram_scale: Vec<f64>,
    /// Global byte range of every patch, documents in order.
    pub patch_spans: Vec<Range<usize>>,
    /// Patch index inside its document (rotary positions of the global block).
    pub patch_positions: Vec<usize>,
    pub enc_local: AttentionMask,
    pub enc_cross: AttentionMask,
    pub global: AttentionMask,
    pub dec_local: AttentionMask,
    pub dec_cross: AttentionMask,
    /// Rows of `[start; latents]` forming the decoder key/value source, per document
    /// the start row followed by that document's patches.
    pub dec_rows: Vec<usize>,
    /// Next byte within the same document; `None` for each document's last byte.
    pub targets: Vec<Option<u8>>,
}

impl BltInput {
    pub fn new(cfg: &ModelConfig, docs: &[&[u8]], boundaries: Vec<PatchBoundaries>, timing: BoundaryTiming) -> Result<Self> {
        if docs.is_empty() {
            return Err(Error::Empty("model input has no documents".into()));
        }
        if boundaries.len() != docs.len() {
            return Err(Error::Shape(format!("{} documents but {} boundary sets", docs.len(), boundaries.len())));
        }
        let mut bytes = Vec::new();
        let mut doc_ranges = Vec::new();
        let mut positions = Vec::new();
        let mut ngram_ids = vec![Vec::new(); cfg.ngram.sizes.len()];
        let mut ngram_scale = Vec::new();
        let mut patch_spans = Vec::new();
        let mut patch_positions = Vec::new();
        let mut doc_first_patch = Vec::new();
        let mut dec_rows = Vec::new();
        let mut targets = Vec::new();
        for (doc, b) in docs.iter().zip(&boundaries) {
            if doc.is_empty() {
                return Err(Error::Empty("documents must contain at least one byte".into()));
            }
            if b.n_bytes() != doc.len() {
                return Err(Error::Boundaries(format!("boundaries cover {} bytes, document has {}", b.n_bytes(), doc.len())));
            }
            if let Some(big) = b.sizes().into_iter().find(|&s| s > cfg.max_patch_size) {
                return Err(Error::Boundaries(format!("patch of {big} bytes exceeds max_patch_size {}", cfg.max_patch_size)));
            }
            let off = bytes.len();
            doc_ranges.push(off..off + doc.len());
            bytes.extend_from_slice(doc);
            positions.extend(0..doc.len());
            let ids = hash_ngram_ids(doc, &cfg.ngram);
            for (i, row) in ids.ids.iter().enumerate() {
                for (s, id) in row.iter().enumerate() {
                    ngram_ids[s].push(*id);
                }
                ngram_scale.push(1.0 / (ids.available(i) + 1) as f64);
            }
            doc_first_patch.push(patch_spans.len());
            dec_rows.push(0);
            for (j, r) in b.spans().enumerate() {
                dec_rows.push(1 + patch_spans.len());
                patch_spans.push(off + r.start..off + r.end);
                patch_positions.push(j);
            }
            targets.extend(doc[1..].iter().map(|&x| Some(x)));
            targets.push(None);
        }
        let doc_starts: Vec<usize> = doc_ranges.iter().map(|r| r.start).collect();
        let n = bytes.len();
        let refs: Vec<&PatchBoundaries> = boundaries.iter().collect();
        Ok(BltInput {
            enc_local: local_block_causal_mask(n, cfg.w_e, &doc_starts),
            enc_cross: patch_membership_mask(&patch_spans, cfg.k, n),
            global: block_causal_patch_mask(patch_spans.len(), &doc_first_patch),
            dec_local: local_block_causal_mask(n, cfg.w_d, &doc_starts),
            dec_cross: completed_patch_mask(&refs, cfg.k, timing),
            bytes,
            doc_ranges,
            boundaries,
            timing,
            positions,
            ngram_ids,
            ngram_scale,
            patch_spans,
            patch_positions,
            dec_rows,
            targets,
        })
    }

    /// Patch every document with `patcher` and pack the result.
    pub fn from_patcher(cfg: &ModelConfig, docs: &[&[u8]], patcher: &Patcher<'_>) -> Result<Self> {
        let boundaries = docs.iter().map(|d| patcher.boundaries(d)).collect();
        Self::new(cfg, docs, boundaries, patcher.timing())
    }

    pub fn n_bytes(&self) -> usize {
        self.bytes.len()
    }

    pub fn n_patches(&self) -> usize {
        self.patch_spans.len()
    }

    /// Number of bytes that carry a prediction target.
    pub fn n_predicted(&self) -> usize {
        self.targets.iter().filter(|t| t.is_some()).count()
    }
}
