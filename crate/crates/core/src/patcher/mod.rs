//! Patching functions: strided, space-delimited, entropy-driven and BPE-backed.
//!
//! A patching maps every byte to a patch; it is represented by the sorted list of
//! patch start indices ([`PatchBoundaries`]).

mod bpe;
mod calibrate;
mod incremental;

pub use bpe::{find_incrementality_witness, Bpe};
pub use calibrate::{calibrate_on_traces, calibrate_threshold, measure_mean_patch_size, Calibration, ThresholdKind};
pub use incremental::{check_incrementality, check_incrementality_corpus, Violation};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::entropy::{entropy_trace, EntropyModel, EntropyTrace};
use crate::{Error, Result};

/// Default cap on patch length.
pub const DEFAULT_MAX_PATCH: usize = 512;

/// Sorted patch starts of an `n_bytes`-long sequence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchBoundaries {
    starts: Vec<usize>,
    n_bytes: usize,
}

impl PatchBoundaries {
    /// Validate `starts` against the boundary invariants.
    pub fn new(starts: Vec<usize>, n_bytes: usize) -> Result<Self> {
        if n_bytes == 0 {
            if !starts.is_empty() {
                return Err(Error::Boundaries("empty sequence cannot have patch starts".into()));
            }
            return Ok(PatchBoundaries { starts, n_bytes });
        }
        if starts.first() != Some(&0) {
            return Err(Error::Boundaries("first patch must start at byte 0".into()));
        }
        if starts.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Boundaries("patch starts must be strictly increasing".into()));
        }
        if *starts.last().unwrap() >= n_bytes {
            return Err(Error::Boundaries(format!("patch start beyond sequence of {n_bytes} bytes")));
        }
        Ok(PatchBoundaries { starts, n_bytes })
    }

    /// Boundaries from per-byte start flags; position 0 is always a start.
    pub fn from_flags(flags: impl IntoIterator<Item = bool>) -> Self {
        let mut starts = Vec::new();
        let mut n = 0;
        for (i, f) in flags.into_iter().enumerate() {
            if i == 0 || f {
                starts.push(i);
            }
            n = i + 1;
        }
        PatchBoundaries { starts, n_bytes: n }
    }

    /// One patch covering the whole sequence.
    pub fn single(n_bytes: usize) -> Self {
        PatchBoundaries {
            starts: if n_bytes == 0 { vec![] } else { vec![0] },
            n_bytes,
        }
    }

    pub fn starts(&self) -> &[usize] {
        &self.starts
    }

    pub fn n_bytes(&self) -> usize {
        self.n_bytes
    }

    pub fn n_patches(&self) -> usize {
        self.starts.len()
    }

    /// Byte range of patch `j`.
    pub fn span(&self, j: usize) -> Range<usize> {
        let end = self.starts.get(j + 1).copied().unwrap_or(self.n_bytes);
        self.starts[j]..end
    }

    pub fn spans(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        (0..self.n_patches()).map(|j| self.span(j))
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.spans().map(|r| r.len()).collect()
    }

    /// Patch index of every byte.
    pub fn patch_index(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.n_bytes);
        for (j, r) in self.spans().enumerate() {
            out.extend(std::iter::repeat_n(j, r.len()));
        }
        out
    }

    /// Boundaries of the first `len` bytes, i.e. `f(x)_<len`.
    pub fn truncate(&self, len: usize) -> Self {
        let len = len.min(self.n_bytes);
        PatchBoundaries {
            starts: self.starts.iter().copied().take_while(|&s| s < len).collect(),
            n_bytes: len,
        }
    }
}

/// Exact patch-size statistics.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PatchStats {
    pub n_bytes: usize,
    pub n_patches: usize,
    pub mean_patch_size: f64,
    pub histogram: BTreeMap<usize, usize>,
}

pub fn patch_stats(b: &PatchBoundaries) -> PatchStats {
    let mut histogram = BTreeMap::new();
    for s in b.sizes() {
        *histogram.entry(s).or_insert(0) += 1;
    }
    PatchStats {
        n_bytes: b.n_bytes,
        n_patches: b.n_patches(),
        mean_patch_size: if b.n_patches() == 0 {
            0.0
        } else {
            b.n_bytes as f64 / b.n_patches() as f64
        },
        histogram,
    }
}

/// Pooled statistics over many sequences.
pub fn corpus_patch_stats<'a>(all: impl IntoIterator<Item = &'a PatchBoundaries>) -> PatchStats {
    let mut acc = PatchStats {
        n_bytes: 0,
        n_patches: 0,
        mean_patch_size: 0.0,
        histogram: BTreeMap::new(),
    };
    for b in all {
        acc.n_bytes += b.n_bytes;
        acc.n_patches += b.n_patches();
        for s in b.sizes() {
            *acc.histogram.entry(s).or_insert(0) += 1;
        }
    }
    if acc.n_patches > 0 {
        acc.mean_patch_size = acc.n_bytes as f64 / acc.n_patches as f64;
    }
    acc
}

/// Fixed-size patches of `k` bytes.
pub fn patch_strided(n_bytes: usize, k: usize) -> PatchBoundaries {
    assert!(k >= 1, "stride must be at least 1");
    PatchBoundaries {
        starts: (0..n_bytes).step_by(k).collect(),
        n_bytes,
    }
}

/// Anything except an ASCII letter, an ASCII digit or a UTF-8 continuation byte.
pub fn is_space_like(b: u8) -> bool {
    !(b.is_ascii_alphanumeric() || (0x80..=0xBF).contains(&b))
}

/// A new patch begins at each non-space-like byte that follows a space-like byte.
pub fn patch_space(bytes: &[u8]) -> PatchBoundaries {
    PatchBoundaries::from_flags(
        (0..bytes.len()).map(|i| i > 0 && is_space_like(bytes[i - 1]) && !is_space_like(bytes[i])),
    )
}

/// Whether every byte is space-like, in which case space patching is degenerate.
pub fn is_degenerate_for_space(bytes: &[u8]) -> bool {
    bytes.iter().all(|&b| is_space_like(b))
}

/// A new patch begins wherever the entropy exceeds `theta`.
pub fn patch_entropy_global(trace: &EntropyTrace, theta: f64) -> PatchBoundaries {
    PatchBoundaries::from_flags(trace.values.iter().map(|&h| h > theta))
}

/// A new patch begins wherever the entropy rises by more than `theta` over the previous byte.
pub fn patch_entropy_monotonic(trace: &EntropyTrace, theta: f64) -> PatchBoundaries {
    let v = &trace.values;
    PatchBoundaries::from_flags((0..v.len()).map(|i| i > 0 && v[i] - v[i - 1] > theta))
}

/// Either constraint triggers a boundary.
pub fn patch_entropy_combined(trace: &EntropyTrace, global: f64, relative: f64) -> PatchBoundaries {
    let v = &trace.values;
    PatchBoundaries::from_flags((0..v.len()).map(|i| v[i] > global || (i > 0 && v[i] - v[i - 1] > relative)))
}

/// Split every patch longer than `cap` into `cap`-sized pieces. Returns the
/// number of splits made.
pub fn apply_max_patch(b: &PatchBoundaries, cap: usize) -> (PatchBoundaries, usize) {
    assert!(cap >= 1, "max patch size must be at least 1");
    let mut starts = Vec::with_capacity(b.starts.len());
    let mut hits = 0;
    for r in b.spans() {
        let mut s = r.start;
        starts.push(s);
        while r.end - s > cap {
            s += cap;
            starts.push(s);
            hits += 1;
        }
    }
    (
        PatchBoundaries {
            starts,
            n_bytes: b.n_bytes,
        },
        hits,
    )
}

/// Wrap externally computed token starts as patch boundaries.
pub fn bpe_adapter(token_starts: Vec<usize>, n_bytes: usize) -> Result<PatchBoundaries> {
    PatchBoundaries::new(token_starts, n_bytes)
}

/// When the decision "a patch starts at byte `i`" becomes known.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryTiming {
    /// Decided from `x_<i` (strided and entropy schemes).
    Predictive,
    /// Needs `x_i` itself (space and BPE schemes).
    Reactive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PatchScheme {
    Strided { k: usize },
    Space,
    EntropyGlobal { theta: f64 },
    EntropyMonotonic { theta: f64 },
    /// Boundary when either the global or the monotonic constraint fires.
    EntropyCombined { global: f64, relative: f64 },
    Bpe,
}

impl PatchScheme {
    pub fn timing(&self) -> BoundaryTiming {
        match self {
            PatchScheme::Space | PatchScheme::Bpe => BoundaryTiming::Reactive,
            _ => BoundaryTiming::Predictive,
        }
    }

    pub fn needs_entropy(&self) -> bool {
        matches!(
            self,
            PatchScheme::EntropyGlobal { .. } | PatchScheme::EntropyMonotonic { .. } | PatchScheme::EntropyCombined { .. }
        )
    }

    pub fn name(&self) -> &'static str {
        match self {
            PatchScheme::Strided { .. } => "strided",
            PatchScheme::Space => "space",
            PatchScheme::EntropyGlobal { .. } => "entropy",
            PatchScheme::EntropyMonotonic { .. } => "entropy-monotonic",
            PatchScheme::EntropyCombined { .. } => "entropy-combined",
            PatchScheme::Bpe => "bpe",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |t: f64| t.is_finite() && t >= 0.0 || t == f64::INFINITY;
        match *self {
            PatchScheme::Strided { k } if k == 0 => Err(Error::Config("stride k must be at least 1".into())),
            PatchScheme::EntropyGlobal { theta } | PatchScheme::EntropyMonotonic { theta } if !ok(theta) => {
                Err(Error::Config(format!("threshold must be nonnegative, got {theta}")))
            }
            PatchScheme::EntropyCombined { global, relative } if !ok(global) || !ok(relative) => {
                Err(Error::Config("thresholds must be nonnegative".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchingConfig {
    pub scheme: PatchScheme,
    #[serde(default)]
    pub reset_on_newline: bool,
    /// Longest allowed patch; longer patches are split and counted.
    #[serde(default = "default_max_patch")]
    pub max_patch: Option<usize>,
}

fn default_max_patch() -> Option<usize> {
    Some(DEFAULT_MAX_PATCH)
}

impl PatchingConfig {
    pub fn new(scheme: PatchScheme) -> Self {
        PatchingConfig {
            scheme,
            reset_on_newline: false,
            max_patch: Some(DEFAULT_MAX_PATCH),
        }
    }
}

/// Result of patching one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Patched {
    pub boundaries: PatchBoundaries,
    pub cap_hits: usize,
    /// Space patching of a sequence with no non-space-like byte.
    pub degenerate: bool,
}

/// A patching configuration bound to the models it needs.
#[derive(Clone, Copy, Debug)]
pub struct Patcher<'a> {
    pub config: &'a PatchingConfig,
    pub entropy: Option<&'a EntropyModel>,
    pub bpe: Option<&'a Bpe>,
}

impl<'a> Patcher<'a> {
    pub fn new(config: &'a PatchingConfig) -> Self {
        Patcher {
            config,
            entropy: None,
            bpe: None,
        }
    }

    pub fn with_entropy(mut self, model: &'a EntropyModel) -> Self {
        self.entropy = Some(model);
        self
    }

    pub fn with_bpe(mut self, bpe: &'a Bpe) -> Self {
        self.bpe = Some(bpe);
        self
    }

    /// Check that every model the scheme needs is present.
    pub fn validate(&self) -> Result<()> {
        self.config.scheme.validate()?;
        if self.config.scheme.needs_entropy() && self.entropy.is_none() {
            return Err(Error::Config(format!("{} patching needs an entropy model", self.config.scheme.name())));
        }
        if self.config.scheme == PatchScheme::Bpe && self.bpe.is_none() {
            return Err(Error::Config("bpe patching needs merges".into()));
        }
        if self.config.max_patch == Some(0) {
            return Err(Error::Config("max_patch must be at least 1".into()));
        }
        Ok(())
    }

    pub fn timing(&self) -> BoundaryTiming {
        self.config.scheme.timing()
    }

    /// Patch `bytes`; panics if [`Patcher::validate`] would fail.
    pub fn patch(&self, bytes: &[u8]) -> Patched {
        let trace = || {
            let m = self.entropy.expect("entropy model required");
            entropy_trace(m, bytes, self.config.reset_on_newline)
        };
        let mut degenerate = false;
        let raw = match self.config.scheme {
            PatchScheme::Strided { k } => patch_strided(bytes.len(), k),
            PatchScheme::Space => {
                degenerate = !bytes.is_empty() && is_degenerate_for_space(bytes);
                patch_space(bytes)
            }
            PatchScheme::EntropyGlobal { theta } => patch_entropy_global(&trace(), theta),
            PatchScheme::EntropyMonotonic { theta } => patch_entropy_monotonic(&trace(), theta),
            PatchScheme::EntropyCombined { global, relative } => patch_entropy_combined(&trace(), global, relative),
            PatchScheme::Bpe => self.bpe.expect("bpe merges required").patch(bytes),
        };
        let (boundaries, cap_hits) = match self.config.max_patch {
            Some(cap) => apply_max_patch(&raw, cap),
            None => (raw, 0),
        };
        Patched {
            boundaries,
            cap_hits,
            degenerate,
        }
    }

    pub fn boundaries(&self, bytes: &[u8]) -> PatchBoundaries {
        self.patch(bytes).boundaries
    }
}

/// TSV with columns `doc_id, start_index`, one row per patch start.
pub fn export_boundaries<'a>(rows: impl IntoIterator<Item = (&'a str, &'a PatchBoundaries)>) -> String {
    let mut out = String::from("doc_id\tstart_index\n");
    for (id, b) in rows {
        for s in b.starts() {
            let _ = writeln!(out, "{id}\t{s}");
        }
    }
    out
}
