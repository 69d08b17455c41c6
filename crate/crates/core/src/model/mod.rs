//! Encoder / latent transformer / decoder network over patched bytes.
//!
//! 1. Byte embeddings are augmented with hash n-gram embeddings.
//! 2. The local encoder runs windowed self-attention over bytes; after each layer,
//!    patch queries (initialized by pooling their bytes and projecting into `k`
//!    rows of width `h_e`) cross-attend to the bytes of their own patch.
//! 3. The `k` rows of each patch are concatenated into one `h_g` vector and the
//!    latent transformer runs causally over patches.
//! 4. The local decoder starts from the encoder's byte states; before each layer
//!    every byte cross-attends to the latent outputs of the patches already
//!    complete at its position, and a final projection gives next-byte logits.

mod config;
mod gradcheck;
mod input;
pub mod mask;
mod params;

pub use config::{ModelConfig, Pooling};
pub use gradcheck::{grad_check, grad_check_fn, GradCheckReport, TensorCheck};
pub use input::BltInput;
pub use params::{init_scheme, BltParams, CrossIds, LayerIds, Layout};

use crate::exec::Exec;
use crate::tensor::{Graph, Mat, ParamGrads, Var};
use crate::Result;

/// Nodes of interest produced by [`Blt::forward`].
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    /// Encoder byte states after the last encoder layer (`n_bytes x h_e`).
    pub byte_states: Var,
    /// Patch representations entering the latent transformer (`n_patches x h_g`).
    pub patches: Var,
    /// Latent transformer outputs (`n_patches x h_g`).
    pub latents: Var,
    /// Next-byte logits (`n_bytes x 256`).
    pub logits: Var,
    /// Summed next-byte cross-entropy in nats (`1 x 1`).
    pub loss_sum: Var,
}

/// Summed loss and the number of predicted bytes it covers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub loss_sum: f64,
    pub n_predicted: usize,
}

impl LossReport {
    pub fn mean(&self) -> f64 {
        self.loss_sum / self.n_predicted.max(1) as f64
    }
}

#[derive(Clone, Debug)]
pub struct Blt {
    pub config: ModelConfig,
    pub params: BltParams,
}

impl Blt {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = BltParams::init(&config, seed);
        Ok(Blt { config, params })
    }

    pub fn forward(&self, g: &mut Graph<'_>, input: &BltInput) -> ForwardVars {
        let cfg = &self.config;
        let lay = &self.params.layout;
        let eps = cfg.norm_eps;

        let table = g.param(lay.byte_emb);
        let idx: Vec<usize> = input.bytes.iter().map(|&b| b as usize).collect();
        let mut e = g.gather_rows(table, &idx);
        for (s, &hid) in lay.hash.iter().enumerate() {
            let t = g.param(hid);
            let rows = g.gather_rows_opt(t, input.ngram_ids[s].clone());
            e = g.add(e, rows);
        }
        let e = g.scale_rows(e, input.ngram_scale.clone());

        let n_p = input.n_patches();
        let pooled = g.segment_pool(e, input.patch_spans.clone(), cfg.pooling.into());
        let e_c = g.param(lay.e_c);
        let proj = g.matmul(pooled, e_c);
        let mut queries = g.reshape(proj, n_p * cfg.k, cfg.h_e);
        let mut h = e;
        for (layer, cross) in lay.enc_layers.iter().zip(&lay.enc_cross) {
            let prev = h;
            h = self_layer(g, layer, h, &input.enc_local.spans, &input.positions, cfg.heads_e, cfg.rope_theta, eps);
            let upd = cross_attend(g, cross, queries, prev, &input.enc_cross.spans, cfg.heads_e, eps);
            queries = g.add(queries, upd);
        }
        let patches = g.reshape(queries, n_p, cfg.h_g);

        let mut o = patches;
        for layer in &lay.glob_layers {
            o = self_layer(g, layer, o, &input.global.spans, &input.patch_positions, cfg.heads_g, cfg.rope_theta, eps);
        }
        let gn = g.param(lay.glob_norm);
        let latents = g.rms_norm(o, gn, eps);

        let start = g.param(lay.start);
        let with_start = g.concat_rows(&[start, latents]);
        let source = g.gather_rows(with_start, &input.dec_rows);
        let d_c = g.param(lay.d_c);
        let kv = g.matmul(source, d_c);
        let kv = g.reshape(kv, input.dec_rows.len() * cfg.k, cfg.h_d);
        let mut d = h;
        for (cross, layer) in lay.dec_cross.iter().zip(&lay.dec_layers) {
            let upd = cross_attend(g, cross, d, kv, &input.dec_cross.spans, cfg.heads_d, eps);
            d = g.add(d, upd);
            d = self_layer(g, layer, d, &input.dec_local.spans, &input.positions, cfg.heads_d, cfg.rope_theta, eps);
        }
        let on = g.param(lay.out_norm);
        let dn = g.rms_norm(d, on, eps);
        let w_out = g.param(lay.w_out);
        let logits = g.matmul(dn, w_out);
        let loss_sum = g.cross_entropy(logits, input.targets.clone());
        ForwardVars {
            byte_states: h,
            patches,
            latents,
            logits,
            loss_sum,
        }
    }

    /// Summed loss without gradients.
    pub fn evaluate(&self, input: &BltInput, exec: Exec) -> LossReport {
        let mut g = Graph::new(&self.params.store, exec);
        let f = self.forward(&mut g, input);
        LossReport {
            loss_sum: g.scalar(f.loss_sum),
            n_predicted: input.n_predicted(),
        }
    }

    /// Summed loss and its gradient with respect to every parameter.
    pub fn loss_and_grads(&self, input: &BltInput, exec: Exec) -> (LossReport, ParamGrads) {
        let mut g = Graph::new(&self.params.store, exec);
        let f = self.forward(&mut g, input);
        let grads = g.backward(f.loss_sum);
        (
            LossReport {
                loss_sum: g.scalar(f.loss_sum),
                n_predicted: input.n_predicted(),
            },
            grads,
        )
    }

    pub fn logits(&self, input: &BltInput, exec: Exec) -> Mat {
        let mut g = Graph::new(&self.params.store, exec);
        let f = self.forward(&mut g, input);
        g.value(f.logits).clone()
    }
}

#[allow(clippy::too_many_arguments)]
fn self_layer(
    g: &mut Graph<'_>,
    ids: &LayerIds,
    x: Var,
    spans: &[(usize, usize)],
    positions: &[usize],
    heads: usize,
    theta: f64,
    eps: f64,
) -> Var {
    let gain = g.param(ids.attn_norm);
    let n = g.rms_norm(x, gain, eps);
    let (wq, wk, wv, wo) = (g.param(ids.wq), g.param(ids.wk), g.param(ids.wv), g.param(ids.wo));
    let q = g.matmul(n, wq);
    let q = g.rope(q, positions.to_vec(), heads, theta);
    let k = g.matmul(n, wk);
    let k = g.rope(k, positions.to_vec(), heads, theta);
    let v = g.matmul(n, wv);
    let a = g.attention(q, k, v, heads, spans.to_vec());
    let a = g.matmul(a, wo);
    let x = g.add(x, a);

    let gain = g.param(ids.ffn_norm);
    let n = g.rms_norm(x, gain, eps);
    let (w1, w3, w2) = (g.param(ids.w1), g.param(ids.w3), g.param(ids.w2));
    let a = g.matmul(n, w1);
    let b = g.matmul(n, w3);
    let s = g.swiglu(a, b);
    let f = g.matmul(s, w2);
    g.add(x, f)
}

/// Cross-attention update (without the residual), no positional encoding.
fn cross_attend(g: &mut Graph<'_>, ids: &CrossIds, queries: Var, source: Var, spans: &[(usize, usize)], heads: usize, eps: f64) -> Var {
    let qg = g.param(ids.q_norm);
    let kg = g.param(ids.kv_norm);
    let qn = g.rms_norm(queries, qg, eps);
    let sn = g.rms_norm(source, kg, eps);
    let (wq, wk, wv, wo) = (g.param(ids.wq), g.param(ids.wk), g.param(ids.wv), g.param(ids.wo));
    let q = g.matmul(qn, wq);
    let k = g.matmul(sn, wk);
    let v = g.matmul(sn, wv);
    let a = g.attention(q, k, v, heads, spans.to_vec());
    g.matmul(a, wo)
}
