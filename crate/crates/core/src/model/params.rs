use rand_distr::{Distribution, Normal};

use super::ModelConfig;
use crate::rng;
use crate::tensor::{Mat, ParamId, ParamKind, ParamStore};

/// Self-attention + SwiGLU feed-forward block.
#[derive(Clone, Debug)]
pub struct LayerIds {
    pub attn_norm: ParamId,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub ffn_norm: ParamId,
    pub w1: ParamId,
    pub w3: ParamId,
    pub w2: ParamId,
}

/// Cross-attention block with separate pre-norms for queries and keys/values.
#[derive(Clone, Debug)]
pub struct CrossIds {
    pub q_norm: ParamId,
    pub kv_norm: ParamId,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
}

#[derive(Clone, Debug)]
pub struct Layout {
    pub byte_emb: ParamId,
    pub hash: Vec<ParamId>,
    pub enc_layers: Vec<LayerIds>,
    pub enc_cross: Vec<CrossIds>,
    /// `h_e x (k * h_e)` projection of pooled patch queries.
    pub e_c: ParamId,
    pub glob_layers: Vec<LayerIds>,
    pub glob_norm: ParamId,
    /// `1 x h_g` latent seen by bytes that have no completed patch yet.
    pub start: ParamId,
    /// `h_g x (k * h_d)` map from latent patches to decoder key/value rows.
    pub d_c: ParamId,
    pub dec_cross: Vec<CrossIds>,
    pub dec_layers: Vec<LayerIds>,
    pub out_norm: ParamId,
    pub w_out: ParamId,
}

/// All model weights plus the names and roles needed to save and optimize them.
#[derive(Clone, Debug)]
pub struct BltParams {
    pub store: ParamStore,
    pub layout: Layout,
}

/// Human-readable description of the initialization, stored with checkpoints.
pub fn init_scheme(cfg: &ModelConfig) -> String {
    format!(
        "normal(0, {std}) for matrices and embeddings; residual-out projections (attention/cross-attention W_o, feed-forward W_2) use {std}/sqrt(2*depth) with depth the 1-based layer index in its block; norm gains 1",
        std = cfg.init_std
    )
}

struct Init<'a> {
    store: ParamStore,
    rng: rng::Rng,
    cfg: &'a ModelConfig,
}

impl Init<'_> {
    fn normal(&mut self, name: String, rows: usize, cols: usize, std: f64, kind: ParamKind) -> ParamId {
        let dist = Normal::new(0.0, std).expect("positive std");
        let data = (0..rows * cols).map(|_| dist.sample(&mut self.rng)).collect();
        self.store.add(name, Mat::from_vec(rows, cols, data), kind)
    }

    fn matrix(&mut self, name: String, rows: usize, cols: usize) -> ParamId {
        self.normal(name, rows, cols, self.cfg.init_std, ParamKind::Matrix)
    }

    fn residual_out(&mut self, name: String, rows: usize, cols: usize, depth: usize) -> ParamId {
        let std = self.cfg.init_std / (2.0 * depth as f64).sqrt();
        self.normal(name, rows, cols, std, ParamKind::Matrix)
    }

    fn gain(&mut self, name: String, width: usize) -> ParamId {
        self.store.add(name, Mat::filled(1, width, 1.0), ParamKind::Gain)
    }

    fn layer(&mut self, prefix: &str, h: usize, depth: usize) -> LayerIds {
        let d_ff = self.cfg.d_ff(h);
        LayerIds {
            attn_norm: self.gain(format!("{prefix}.attn_norm"), h),
            wq: self.matrix(format!("{prefix}.wq"), h, h),
            wk: self.matrix(format!("{prefix}.wk"), h, h),
            wv: self.matrix(format!("{prefix}.wv"), h, h),
            wo: self.residual_out(format!("{prefix}.wo"), h, h, depth),
            ffn_norm: self.gain(format!("{prefix}.ffn_norm"), h),
            w1: self.matrix(format!("{prefix}.w1"), h, d_ff),
            w3: self.matrix(format!("{prefix}.w3"), h, d_ff),
            w2: self.residual_out(format!("{prefix}.w2"), d_ff, h, depth),
        }
    }

    fn cross(&mut self, prefix: &str, h: usize, depth: usize) -> CrossIds {
        CrossIds {
            q_norm: self.gain(format!("{prefix}.q_norm"), h),
            kv_norm: self.gain(format!("{prefix}.kv_norm"), h),
            wq: self.matrix(format!("{prefix}.wq"), h, h),
            wk: self.matrix(format!("{prefix}.wk"), h, h),
            wv: self.matrix(format!("{prefix}.wv"), h, h),
            wo: self.residual_out(format!("{prefix}.wo"), h, h, depth),
        }
    }
}

impl BltParams {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut it = Init {
            store: ParamStore::new(),
            rng: rng::stream(seed, 0x5EED_0001),
            cfg,
        };
        let byte_emb = it.normal("byte_emb".into(), 256, cfg.h_e, cfg.init_std, ParamKind::Embedding);
        let hash = cfg
            .ngram
            .sizes
            .iter()
            .map(|n| it.normal(format!("hash_emb.{n}"), cfg.ngram.per_n_vocab, cfg.h_e, cfg.init_std, ParamKind::Embedding))
            .collect();
        let mut enc_layers = Vec::new();
        let mut enc_cross = Vec::new();
        for l in 0..cfg.l_e {
            enc_layers.push(it.layer(&format!("enc.{l}"), cfg.h_e, l + 1));
            enc_cross.push(it.cross(&format!("enc_cross.{l}"), cfg.h_e, l + 1));
        }
        let e_c = it.matrix("enc.e_c".into(), cfg.h_e, cfg.k * cfg.h_e);
        let glob_layers = (0..cfg.l_g).map(|l| it.layer(&format!("glob.{l}"), cfg.h_g, l + 1)).collect();
        let glob_norm = it.gain("glob.norm".into(), cfg.h_g);
        let start = it.normal("dec.start".into(), 1, cfg.h_g, cfg.init_std, ParamKind::Embedding);
        let d_c = it.matrix("dec.d_c".into(), cfg.h_g, cfg.k * cfg.h_d);
        let mut dec_cross = Vec::new();
        let mut dec_layers = Vec::new();
        for l in 0..cfg.l_d {
            dec_cross.push(it.cross(&format!("dec_cross.{l}"), cfg.h_d, l + 1));
            dec_layers.push(it.layer(&format!("dec.{l}"), cfg.h_d, l + 1));
        }
        let out_norm = it.gain("dec.out_norm".into(), cfg.h_d);
        let w_out = it.matrix("dec.w_out".into(), cfg.h_d, 256);
        BltParams {
            store: it.store,
            layout: Layout {
                byte_emb,
                hash,
                enc_layers,
                enc_cross,
                e_c,
                glob_layers,
                glob_norm,
                start,
                d_c,
                dec_cross,
                dec_layers,
                out_norm,
                w_out,
            },
        }
    }

    /// Scalars outside the byte and hash embedding tables.
    pub fn non_embedding_count(&self) -> usize {
        self.store
            .ids()
            .filter(|&id| id != self.layout.byte_emb && !self.layout.hash.contains(&id))
            .map(|id| self.store.value(id).len())
            .sum()
    }
}
