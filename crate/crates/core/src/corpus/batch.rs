//! Byte-budget batching: one document per sequence, truncated, greedily packed so
//! every batch carries (close to) the same number of real bytes.

use std::collections::VecDeque;
use std::io::{Read, Write};

use rand::seq::SliceRandom;

use super::Document;
use crate::{rng, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PositionFlag {
    /// First byte of a document; attention may not look behind it.
    DocStart,
    Inside,
    /// Padding; excluded from attention and loss.
    Pad,
}

#[derive(Clone, Debug)]
pub struct Batch {
    /// Sequences padded with `pad_value` to `max_bytes`.
    pub sequences: Vec<Vec<u8>>,
    /// Number of real (non-pad) bytes in each sequence.
    pub lengths: Vec<usize>,
    pub pad_value: u8,
    pub max_bytes: usize,
    pub doc_boundary_mask: Vec<Vec<PositionFlag>>,
}

impl Batch {
    pub fn realized_bytes(&self) -> usize {
        self.lengths.iter().sum()
    }

    /// Unpadded contents of sequence `i`.
    pub fn sequence(&self, i: usize) -> &[u8] {
        &self.sequences[i][..self.lengths[i]]
    }
}

#[derive(Clone, Debug)]
pub struct PackOptions {
    pub byte_budget: usize,
    pub trunc_len: usize,
    pub seed: u64,
    /// How many upcoming documents the packer may scan to fill a batch.
    pub lookahead: usize,
    /// Drop the final, possibly underfull, batch.
    pub drop_remainder: bool,
}

impl PackOptions {
    pub fn new(byte_budget: usize, trunc_len: usize, seed: u64) -> Self {
        PackOptions {
            byte_budget,
            trunc_len,
            seed,
            lookahead: 64,
            drop_remainder: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PackStats {
    pub batches: usize,
    pub truncated: usize,
    pub realized_bytes: usize,
    pub skipped_empty: usize,
}

/// Stream of [`Batch`]es over a shuffled document set.
pub struct BatchPacker<'a> {
    docs: &'a [Document],
    opts: PackOptions,
    order: VecDeque<usize>,
    window: Vec<usize>,
    stats: PackStats,
}

impl<'a> BatchPacker<'a> {
    pub fn new(docs: &'a [Document], opts: PackOptions) -> Result<Self> {
        if opts.trunc_len == 0 || opts.byte_budget < opts.trunc_len {
            return Err(Error::Config(format!(
                "need byte_budget >= trunc_len >= 1 (got {} and {})",
                opts.byte_budget, opts.trunc_len
            )));
        }
        let mut order: Vec<usize> = (0..docs.len()).collect();
        order.shuffle(&mut rng::seeded(opts.seed));
        Ok(BatchPacker {
            docs,
            order: order.into(),
            window: Vec::new(),
            stats: PackStats::default(),
            opts,
        })
    }

    pub fn stats(&self) -> &PackStats {
        &self.stats
    }

    fn refill(&mut self) {
        while self.window.len() < self.opts.lookahead.max(1) {
            let Some(i) = self.order.pop_front() else { break };
            if self.docs[i].is_empty() {
                self.stats.skipped_empty += 1;
                continue;
            }
            self.window.push(i);
        }
    }

    fn len_of(&self, i: usize) -> usize {
        self.docs[i].len().min(self.opts.trunc_len)
    }
}

impl Iterator for BatchPacker<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        let mut picked = Vec::new();
        let mut used = 0;
        loop {
            self.refill();
            let budget = self.opts.byte_budget - used;
            match self.window.iter().position(|&i| self.len_of(i) <= budget) {
                Some(pos) => {
                    let i = self.window.remove(pos);
                    used += self.len_of(i);
                    picked.push(i);
                    if used == self.opts.byte_budget {
                        break;
                    }
                }
                None => break,
            }
        }
        if picked.is_empty() {
            return None;
        }
        let exhausted = self.window.is_empty() && self.order.is_empty();
        if exhausted && self.opts.drop_remainder && used < self.opts.byte_budget {
            return None;
        }

        let max_bytes = picked.iter().map(|&i| self.len_of(i)).max().unwrap_or(0);
        let mut batch = Batch {
            sequences: Vec::with_capacity(picked.len()),
            lengths: Vec::with_capacity(picked.len()),
            pad_value: 0x00,
            max_bytes,
            doc_boundary_mask: Vec::with_capacity(picked.len()),
        };
        for i in picked {
            let doc = &self.docs[i];
            let len = self.len_of(i);
            if doc.len() > len {
                self.stats.truncated += 1;
            }
            let mut seq = doc.bytes[..len].to_vec();
            seq.resize(max_bytes, batch.pad_value);
            let mut mask = vec![PositionFlag::Inside; max_bytes];
            mask[0] = PositionFlag::DocStart;
            mask[len..].fill(PositionFlag::Pad);
            batch.sequences.push(seq);
            batch.lengths.push(len);
            batch.doc_boundary_mask.push(mask);
        }
        self.stats.batches += 1;
        self.stats.realized_bytes += used;
        Some(batch)
    }
}

/// Write each sequence of `batch` as a `u32` little-endian length followed by its raw bytes.
pub fn write_batch_dump(mut w: impl Write, batch: &Batch) -> std::io::Result<()> {
    for i in 0..batch.sequences.len() {
        let seq = batch.sequence(i);
        w.write_all(&(seq.len() as u32).to_le_bytes())?;
        w.write_all(seq)?;
    }
    Ok(())
}

/// Read back every length-prefixed record of a dump.
pub fn read_batch_dump(mut r: impl Read) -> Result<Vec<Vec<u8>>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf).map_err(|e| Error::io("batch dump", e))?;
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < buf.len() {
        let header = buf
            .get(pos..pos + 4)
            .ok_or_else(|| Error::Format(format!("truncated length prefix at offset {pos}")))?;
        let len = u32::from_le_bytes(header.try_into().unwrap()) as usize;
        pos += 4;
        let body = buf
            .get(pos..pos + len)
            .ok_or_else(|| Error::Format(format!("record at offset {} overruns the dump", pos - 4)))?;
        out.push(body.to_vec());
        pos += len;
    }
    Ok(out)
}
