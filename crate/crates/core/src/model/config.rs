use serde::{Deserialize, Serialize};

use crate::ngram::NgramConfig;
use crate::tensor::PoolMode;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Max,
    Mean,
}

impl From<Pooling> for PoolMode {
    fn from(p: Pooling) -> Self {
        match p {
            Pooling::Max => PoolMode::Max,
            Pooling::Mean => PoolMode::Mean,
        }
    }
}

/// Architecture hyperparameters.
///
/// `h_g = k * h_e`: each patch is represented by `k` rows of width `h_e` in the
/// encoder cross-attention, concatenated into one `h_g`-wide latent vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub h_e: usize,
    pub h_g: usize,
    pub h_d: usize,
    pub l_e: usize,
    pub l_g: usize,
    pub l_d: usize,
    pub heads_e: usize,
    pub heads_g: usize,
    pub heads_d: usize,
    /// Local self-attention window of the encoder, in bytes.
    pub w_e: usize,
    /// Local self-attention window of the decoder, in bytes.
    pub w_d: usize,
    pub k: usize,
    pub ffn_mult: usize,
    pub rope_theta: f64,
    pub max_patch_size: usize,
    pub ngram: NgramConfig,
    pub pooling: Pooling,
    pub init_std: f64,
    pub norm_eps: f64,
}

impl ModelConfig {
    fn base(h_e: usize, k: usize, l_e: usize, l_g: usize, l_d: usize, heads: usize, per_n_vocab: usize) -> Self {
        ModelConfig {
            h_e,
            h_g: k * h_e,
            h_d: h_e,
            l_e,
            l_g,
            l_d,
            heads_e: heads,
            heads_g: heads,
            heads_d: heads,
            w_e: 128,
            w_d: 128,
            k,
            ffn_mult: 4,
            rope_theta: 500_000.0,
            max_patch_size: 512,
            ngram: NgramConfig {
                per_n_vocab,
                ..NgramConfig::default()
            },
            pooling: Pooling::Max,
            init_std: 0.02,
            norm_eps: 1e-6,
        }
    }

    /// `h_e = 64, h_g = 128, l_e = 1, l_g = 4, l_d = 2, 4 heads, k = 2`.
    pub fn tiny() -> Self {
        Self::base(64, 2, 1, 4, 2, 4, 8192)
    }

    /// `h_e = 128, h_g = 512, l_e = 1, l_g = 8, l_d = 4, k = 4`.
    pub fn small() -> Self {
        Self::base(128, 4, 1, 8, 4, 4, 32_768)
    }

    /// A cheaper model for laptop-scale training comparisons.
    pub fn micro() -> Self {
        let mut c = Self::base(32, 2, 1, 2, 1, 2, 4096);
        c.w_e = 64;
        c.w_d = 64;
        c
    }

    /// Minimal widths for exhaustive finite-difference checks.
    pub fn gradcheck() -> Self {
        let mut c = Self::base(8, 2, 1, 2, 1, 2, 16);
        c.w_e = 4;
        c.w_d = 4;
        c.ffn_mult = 2;
        c
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "tiny" => Ok(Self::tiny()),
            "small" => Ok(Self::small()),
            "micro" => Ok(Self::micro()),
            "gradcheck" => Ok(Self::gradcheck()),
            other => Err(Error::Config(format!("unknown model preset '{other}'"))),
        }
    }

    pub fn d_ff(&self, h: usize) -> usize {
        self.ffn_mult * h
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.h_g != self.k * self.h_e {
            return fail(format!("h_g ({}) must equal k * h_e ({} * {})", self.h_g, self.k, self.h_e));
        }
        if self.h_d != self.h_e {
            return fail(format!("h_d ({}) must equal h_e ({}) so decoder queries start from encoder states", self.h_d, self.h_e));
        }
        for (name, h, heads) in [("encoder", self.h_e, self.heads_e), ("global", self.h_g, self.heads_g), ("decoder", self.h_d, self.heads_d)] {
            if heads == 0 || h % heads != 0 || (h / heads) % 2 != 0 {
                return fail(format!("{name} width {h} must split into {heads} heads of even size"));
            }
        }
        if self.k == 0 || self.w_e == 0 || self.w_d == 0 || self.ffn_mult == 0 || self.max_patch_size == 0 {
            return fail("k, windows, ffn_mult and max_patch_size must be positive".into());
        }
        if !(self.init_std > 0.0 && self.norm_eps >= 0.0 && self.rope_theta > 0.0) {
            return fail("init_std and rope_theta must be positive".into());
        }
        self.ngram.validate()?;
        if self.l_e >= self.l_g.max(1) || self.l_d >= self.l_g.max(1) {
            log::warn!(
                "local blocks are usually much shallower than the global block (l_e={}, l_d={}, l_g={})",
                self.l_e,
                self.l_d,
                self.l_g
            );
        }
        Ok(())
    }
}
