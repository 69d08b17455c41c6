use std::collections::HashSet;
use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::exec::Exec;
use crate::model::{Blt, BltInput};
use crate::patcher::Patcher;
use crate::{Error, Result};

/// Summed next-byte loss in nats over `n_bytes` scored bytes.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ScoreSum {
    pub loss_nats: f64,
    pub n_bytes: usize,
}

impl ScoreSum {
    pub fn add(&mut self, other: ScoreSum) {
        self.loss_nats += other.loss_nats;
        self.n_bytes += other.n_bytes;
    }
}

/// Anything that assigns next-byte probabilities to documents.
///
/// A document of `n` bytes contributes `n - 1` scored bytes: every byte that has a
/// predecessor in the same document.
pub trait ByteScorer: Sync {
    /// One [`ScoreSum`] per document, in input order.
    fn score(&self, docs: &[&[u8]]) -> Result<Vec<ScoreSum>>;
}

/// Assigns probability 1/256 to every byte.
#[derive(Clone, Copy, Debug, Default)]
pub struct UniformScorer;

impl ByteScorer for UniformScorer {
    fn score(&self, docs: &[&[u8]]) -> Result<Vec<ScoreSum>> {
        Ok(docs
            .iter()
            .map(|d| {
                let n = d.len().saturating_sub(1);
                ScoreSum {
                    loss_nats: n as f64 * 256f64.ln(),
                    n_bytes: n,
                }
            })
            .collect())
    }
}

/// Scores with a model, patching each document in full first.
pub struct BltScorer<'a> {
    pub model: &'a Blt,
    pub patcher: &'a Patcher<'a>,
    pub exec: Exec,
    /// Documents are grouped into model calls of at most this many bytes.
    pub max_call_bytes: usize,
}

impl<'a> BltScorer<'a> {
    pub fn new(model: &'a Blt, patcher: &'a Patcher<'a>, exec: Exec) -> Self {
        BltScorer {
            model,
            patcher,
            exec,
            max_call_bytes: 8192,
        }
    }
}

/// Log-softmax loss of `target` under a row of logits.
fn row_loss(row: &[f64], target: u8) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    lse - row[target as usize]
}

impl ByteScorer for BltScorer<'_> {
    fn score(&self, docs: &[&[u8]]) -> Result<Vec<ScoreSum>> {
        let mut out = Vec::with_capacity(docs.len());
        let mut i = 0;
        while i < docs.len() {
            let mut j = i;
            let mut bytes = 0;
            while j < docs.len() && (j == i || bytes + docs[j].len() <= self.max_call_bytes) {
                bytes += docs[j].len();
                j += 1;
            }
            let group = &docs[i..j];
            let boundaries = group.iter().map(|d| self.patcher.boundaries(d)).collect();
            let input = BltInput::new(&self.model.config, group, boundaries, self.patcher.timing())?;
            let logits = self.model.logits(&input, self.exec);
            for range in &input.doc_ranges {
                let mut s = ScoreSum::default();
                for r in range.start..range.end - 1 {
                    s.loss_nats += row_loss(logits.row(r), input.bytes[r + 1]);
                    s.n_bytes += 1;
                }
                out.push(s);
            }
            i = j;
        }
        Ok(out)
    }
}

/// Bits per byte of a loss sum: `loss_nats / (ln 2 * n_bytes)`.
pub fn bits_per_byte(loss_nats: f64, n_bytes: usize) -> f64 {
    loss_nats / (LN_2 * n_bytes as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceReport {
    pub name: String,
    pub bpb: f64,
    /// Mean loss per scored byte in nats.
    pub loss_nats: f64,
    pub loss_sum_nats: f64,
    pub n_bytes: usize,
    pub n_docs: usize,
}

/// Evaluation results at one training step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub step: usize,
    pub slices: Vec<SliceReport>,
    /// Mean patch size realized on the training data.
    pub mean_patch_size: Option<f64>,
    /// Estimated training FLOPs spent so far.
    pub train_flops: Option<f64>,
}

pub struct EvalSlice<'a> {
    pub name: String,
    pub docs: &'a [Document],
}

/// Fails when any evaluation document also occurs in the training data.
pub fn check_disjoint(train_hashes: &HashSet<[u8; 32]>, eval: &[Document]) -> Result<()> {
    let shared = eval.iter().filter(|d| train_hashes.contains(&d.content_hash())).count();
    if shared > 0 {
        return Err(Error::Leakage(shared));
    }
    Ok(())
}

pub fn content_hashes(docs: &[Document]) -> HashSet<[u8; 32]> {
    docs.iter().map(Document::content_hash).collect()
}

/// Bits per byte of `scorer` on each slice. When `train_hashes` is given, every
/// slice must be disjoint from the training documents.
pub fn eval_bpb(scorer: &dyn ByteScorer, slices: &[EvalSlice<'_>], train_hashes: Option<&HashSet<[u8; 32]>>) -> Result<Vec<SliceReport>> {
    let mut out = Vec::new();
    for slice in slices {
        if let Some(h) = train_hashes {
            check_disjoint(h, slice.docs)?;
        }
        let docs: Vec<&[u8]> = slice.docs.iter().map(|d| d.bytes.as_slice()).filter(|d| !d.is_empty()).collect();
        let mut total = ScoreSum::default();
        for s in scorer.score(&docs)? {
            total.add(s);
        }
        if total.n_bytes == 0 {
            return Err(Error::Empty(format!("evaluation slice '{}' has no scorable bytes", slice.name)));
        }
        out.push(SliceReport {
            name: slice.name.clone(),
            bpb: bits_per_byte(total.loss_nats, total.n_bytes),
            loss_nats: total.loss_nats / total.n_bytes as f64,
            loss_sum_nats: total.loss_nats,
            n_bytes: total.n_bytes,
            n_docs: docs.len(),
        });
    }
    Ok(out)
}
