//! Forward FLOPs-per-byte accounting and FLOP-matched model sizing.
//!
//! Every count is evaluated in exact rational arithmetic; floating point appears
//! only when a report is rendered. The primitives follow the usual per-token
//! transformer accounting:
//!
//! | operation | FLOPs per token |
//! |---|---|
//! | `attention(l, h_k, n_heads, m)` | `4 l h_k n_heads (m + 1) / 2` |
//! | `qkvo(l, h, r)` | `(2 r + 2) 2 l h^2` |
//! | `feed_forward(l, h, d_ff)` | `2 l 2 h d_ff h` with `d_ff` the width multiplier |
//! | `de_embedding(h, V)` | `2 h V` |
//! | `cross_attention(l, h_k, n_heads, p, r)` | `attention(l, h_k, n_heads, p) + qkvo(l, h_k n_heads, r)` |
//!
//! The byte-level total adds the latent transformer (amortized over the mean patch
//! size `n_p`), the two local transformers, and the two cross-attention blocks.
//! Cross-attention is called with a context `m` and query ratio `r`; `m` is passed
//! as the primitive's `p`, and `(h_k, n_heads)` come from the block's width and head
//! count. Input embeddings are lookups and cost nothing. Training costs three times
//! the forward pass.

use num_rational::Ratio;
use serde::Serialize;

use crate::model::ModelConfig;
use crate::{Error, Result};

pub type Q = Ratio<i128>;

fn q(v: usize) -> Q {
    Q::from_integer(v as i128)
}

/// Exact rational from a decimal string such as `"4.5"`, `"9/2"` or `"12"`.
pub fn parse_ratio(s: &str) -> Result<Q> {
    let bad = || Error::Config(format!("'{s}' is not a decimal or fraction"));
    let s = s.trim();
    if let Some((n, d)) = s.split_once('/') {
        let n: i128 = n.trim().parse().map_err(|_| bad())?;
        let d: i128 = d.trim().parse().map_err(|_| bad())?;
        if d == 0 {
            return Err(bad());
        }
        return Ok(Q::new(n, d));
    }
    let (int, frac) = s.split_once('.').unwrap_or((s, ""));
    if frac.len() > 18 || !frac.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad());
    }
    let scale = 10i128.pow(frac.len() as u32);
    let neg = int.starts_with('-');
    let whole: i128 = if int.is_empty() || int == "-" { 0 } else { int.parse().map_err(|_| bad())? };
    let part: i128 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| bad())? };
    let num = whole.abs() * scale + part;
    Ok(Q::new(if neg { -num } else { num }, scale))
}

/// Nearest rational with denominator `2^20`, for values that only exist as floats.
pub fn ratio_from_f64(x: f64) -> Q {
    const DEN: i128 = 1 << 20;
    Q::new((x * DEN as f64).round() as i128, DEN)
}

pub fn to_f64(x: Q) -> f64 {
    *x.numer() as f64 / *x.denom() as f64
}

pub fn attention(l: Q, h_k: Q, n_heads: Q, m: Q) -> Q {
    q(4) * l * h_k * n_heads * (m + q(1)) / q(2)
}

pub fn qkvo(l: Q, h: Q, r: Q) -> Q {
    (r * q(2) + q(2)) * q(2) * l * h * h
}

pub fn feed_forward(l: Q, h: Q, d_ff: Q) -> Q {
    q(2) * l * q(2) * h * d_ff * h
}

pub fn de_embedding(h: Q, vocab: Q) -> Q {
    q(2) * h * vocab
}

pub fn cross_attention(l: Q, h_k: Q, n_heads: Q, p: Q, r: Q) -> Q {
    attention(l, h_k, n_heads, p) + qkvo(l, h_k * n_heads, r)
}

/// Per-token forward FLOPs of a transformer stack.
pub fn transformer_flops_per_token(l: Q, h: Q, m: Q, n_heads: Q, h_k: Q, d_ff: Q, vocab: Q) -> Q {
    feed_forward(l, h, d_ff) + qkvo(l, h, q(1)) + attention(l, h_k, n_heads, m) + de_embedding(h, vocab)
}

/// Width, depth and head count of one transformer block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct BlockShape {
    pub h: Q,
    pub layers: Q,
    pub heads: Q,
}

impl BlockShape {
    pub fn new(h: usize, layers: usize, heads: usize) -> Self {
        BlockShape {
            h: q(h),
            layers: q(layers),
            heads: q(heads),
        }
    }

    fn head_dim(&self) -> Q {
        self.h / self.heads
    }

    fn transformer(&self, m: Q, d_ff: Q, vocab: Q) -> Q {
        transformer_flops_per_token(self.layers, self.h, m, self.heads, self.head_dim(), d_ff, vocab)
    }

    fn cross(&self, m: Q, r: Q) -> Q {
        cross_attention(self.layers, self.head_dim(), self.heads, m, r)
    }
}

/// The dimensions FLOP accounting needs, with rational entries so that a search
/// can move continuously along one axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct FlopsShape {
    pub encoder: BlockShape,
    pub global: BlockShape,
    pub decoder: BlockShape,
    pub w_e: Q,
    pub w_d: Q,
    pub k: Q,
    pub ffn_mult: Q,
}

impl From<&ModelConfig> for FlopsShape {
    fn from(c: &ModelConfig) -> Self {
        FlopsShape {
            encoder: BlockShape::new(c.h_e, c.l_e, c.heads_e),
            global: BlockShape::new(c.h_g, c.l_g, c.heads_g),
            decoder: BlockShape::new(c.h_d, c.l_d, c.heads_d),
            w_e: q(c.w_e),
            w_d: q(c.w_d),
            k: q(c.k),
            ffn_mult: q(c.ffn_mult),
        }
    }
}

/// Forward FLOPs per byte by component.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FlopsReport {
    pub global: Q,
    pub encoder_transformer: Q,
    pub decoder_transformer: Q,
    pub encoder_xattn: Q,
    pub decoder_xattn: Q,
}

impl FlopsReport {
    pub fn total_forward(&self) -> Q {
        self.global + self.encoder_transformer + self.decoder_transformer + self.encoder_xattn + self.decoder_xattn
    }

    pub fn total_train(&self) -> Q {
        self.total_forward() * q(3)
    }

    pub fn components(&self) -> [(&'static str, Q); 5] {
        [
            ("global", self.global),
            ("encoder_transformer", self.encoder_transformer),
            ("decoder_transformer", self.decoder_transformer),
            ("encoder_xattn", self.encoder_xattn),
            ("decoder_xattn", self.decoder_xattn),
        ]
    }

    /// Rendered view with the exact values as `p/q` strings alongside floats.
    pub fn to_json(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        let mut put = |name: &str, v: Q| {
            map.insert(
                name.to_string(),
                serde_json::json!({ "exact": v.to_string(), "value": to_f64(v) }),
            );
        };
        for (name, v) in self.components() {
            put(name, v);
        }
        put("total_forward", self.total_forward());
        put("total_train", self.total_train());
        serde_json::Value::Object(map)
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:<22} {:>16}\n", "component", "flops/byte");
        for (name, v) in self.components() {
            out.push_str(&format!("{name:<22} {:>16.6e}\n", to_f64(v)));
        }
        out.push_str(&format!("{:<22} {:>16.6e}\n", "total_forward", to_f64(self.total_forward())));
        out.push_str(&format!("{:<22} {:>16.6e}\n", "total_train", to_f64(self.total_train())));
        out
    }
}

fn check_patch_size(n_p: Q) -> Result<()> {
    if n_p <= q(0) {
        return Err(Error::Config(format!("mean patch size must be positive, got {n_p}")));
    }
    Ok(())
}

pub fn shape_flops_per_byte(s: &FlopsShape, n_ctx: Q, n_p: Q) -> Result<FlopsReport> {
    check_patch_size(n_p)?;
    let zero = q(0);
    Ok(FlopsReport {
        global: s.global.transformer(n_ctx / n_p, s.ffn_mult, zero) / n_p,
        encoder_transformer: s.encoder.transformer(s.w_e, s.ffn_mult, zero),
        decoder_transformer: s.decoder.transformer(s.w_d, s.ffn_mult, q(256)),
        encoder_xattn: s.encoder.cross(n_p, n_p / s.k) * s.k / n_p,
        decoder_xattn: s.decoder.cross(s.k, s.k / n_p),
    })
}

/// Forward FLOPs per byte of a model at context `n_ctx` bytes and mean patch size `n_p`.
pub fn blt_flops_per_byte(cfg: &ModelConfig, n_ctx: Q, n_p: Q) -> Result<FlopsReport> {
    shape_flops_per_byte(&FlopsShape::from(cfg), n_ctx, n_p)
}

/// Parameter counts matching the tensors [`crate::model::BltParams`] allocates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ParamCounts {
    pub encoder: usize,
    pub global: usize,
    pub decoder: usize,
    /// Byte and hash n-gram embedding tables.
    pub embedding: usize,
}

impl ParamCounts {
    pub fn non_embedding(&self) -> usize {
        self.encoder + self.global + self.decoder
    }

    pub fn total(&self) -> usize {
        self.non_embedding() + self.embedding
    }
}

pub fn param_counts(c: &ModelConfig) -> ParamCounts {
    let layer = |h: usize| 4 * h * h + 3 * h * c.d_ff(h) + 2 * h;
    let cross = |h: usize| 4 * h * h + 2 * h;
    ParamCounts {
        encoder: c.l_e * (layer(c.h_e) + cross(c.h_e)) + c.h_e * c.k * c.h_e,
        global: c.l_g * layer(c.h_g) + c.h_g,
        decoder: c.h_g + c.h_g * c.k * c.h_d + c.l_d * (layer(c.h_d) + cross(c.h_d)) + c.h_d + c.h_d * 256,
        embedding: 256 * c.h_e + c.ngram.sizes.len() * c.ngram.per_n_vocab * c.h_e,
    }
}

/// One-axis family for FLOP matching: the latent transformer's width is free,
/// its depth is tied to the width by a fixed aspect ratio, and its head
/// dimension stays fixed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SizeTemplate {
    pub base: FlopsShape,
    /// `h_g / l_g`.
    pub aspect: Q,
    pub head_dim: Q,
    pub min_h_g: Q,
    pub max_h_g: Q,
}

impl SizeTemplate {
    /// Family through `cfg` with width allowed to range over `[h_g / 64, 64 h_g]`.
    pub fn around(cfg: &ModelConfig) -> Self {
        let base = FlopsShape::from(cfg);
        SizeTemplate {
            base,
            aspect: base.global.h / base.global.layers,
            head_dim: base.global.h / base.global.heads,
            min_h_g: base.global.h / q(64),
            max_h_g: base.global.h * q(64),
        }
    }

    pub fn at(&self, h_g: Q) -> FlopsShape {
        let mut s = self.base;
        s.global = BlockShape {
            h: h_g,
            layers: h_g / self.aspect,
            heads: h_g / self.head_dim,
        };
        s
    }
}

/// Result of [`size_match`]: the continuous solution and its FLOPs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SizeMatch {
    pub shape: FlopsShape,
    pub flops_per_byte: Q,
    pub iterations: usize,
}

impl SizeMatch {
    /// Latent width rounded to a multiple of `multiple` and depth rounded to an
    /// integer, with the FLOPs of the rounded shape.
    pub fn rounded(&self, multiple: usize, n_ctx: Q, n_p: Q) -> Result<(FlopsShape, Q)> {
        let m = q(multiple.max(1));
        let mut s = self.shape;
        let h = ((s.global.h / m).round() * m).max(m);
        let head_dim = s.global.h / s.global.heads;
        s.global = BlockShape {
            h,
            layers: s.global.layers.round().max(q(1)),
            heads: (h / head_dim).round().max(q(1)),
        };
        let f = shape_flops_per_byte(&s, n_ctx, n_p)?.total_forward();
        Ok((s, f))
    }
}

/// Relative tolerance of [`size_match`].
pub const SIZE_MATCH_TOL: f64 = 0.005;

/// Bisect the template's latent width until total forward FLOPs per byte are within
/// [`SIZE_MATCH_TOL`] of `target`. Widths are quantized to 1/64 to keep the
/// rational arithmetic small.
pub fn size_match(target: Q, template: &SizeTemplate, n_ctx: Q, n_p: Q) -> Result<SizeMatch> {
    check_patch_size(n_p)?;
    let eval = |h: Q| shape_flops_per_byte(&template.at(h), n_ctx, n_p).map(|r| r.total_forward());
    let (low, high) = (eval(template.min_h_g)?, eval(template.max_h_g)?);
    if target < low || target > high {
        return Err(Error::FlopTarget {
            target: to_f64(target),
            low: to_f64(low),
            high: to_f64(high),
        });
    }
    let quant = q(64);
    let (mut lo, mut hi) = (template.min_h_g, template.max_h_g);
    for iterations in 1..=200 {
        let mid = (((lo + hi) / q(2)) * quant).round() / quant;
        let f = eval(mid)?;
        let rel = (to_f64(f) - to_f64(target)).abs() / to_f64(target);
        if rel < SIZE_MATCH_TOL {
            return Ok(SizeMatch {
                shape: template.at(mid),
                flops_per_byte: f,
                iterations,
            });
        }
        if mid == lo || mid == hi {
            break;
        }
        if f < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::FlopTarget {
        target: to_f64(target),
        low: to_f64(eval(lo)?),
        high: to_f64(eval(hi)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n(v: i128) -> Q {
        Q::from_integer(v)
    }

    #[test]
    fn primitives_match_hand_plugins() {
        assert_eq!(de_embedding(n(4096), n(256)), n(2_097_152));
        assert_eq!(de_embedding(n(4096), n(0)), n(0));
        let one = n(1);
        assert_eq!(feed_forward(one, one, n(4)), n(16));
        assert_eq!(qkvo(one, one, one), n(8));
        assert_eq!(attention(one, one, one, one), n(4));
        assert_eq!(transformer_flops_per_token(one, one, one, one, one, n(4), n(0)), n(28));
        assert_eq!(attention(n(3), n(5), n(7), n(0)), n(2 * 3 * 5 * 7));
        assert_eq!(
            cross_attention(n(2), n(8), n(2), n(6), n(3)),
            attention(n(2), n(8), n(2), n(6)) + qkvo(n(2), n(16), n(3))
        );
        assert_eq!(
            attention(n(2), n(8), n(4), n(9)),
            attention(n(2), n(8), n(2), n(9)) * n(2)
        );
        assert_eq!(qkvo(n(3), n(16), n(1)), n(4) * n(2) * n(3) * n(256));
    }

    #[test]
    fn strictly_increasing_in_each_argument() {
        let base = [n(2), n(16), n(10), n(4), n(4), n(4), n(256)];
        let f = |a: [Q; 7]| transformer_flops_per_token(a[0], a[1], a[2], a[3], a[4], a[5], a[6]);
        for &i in &[0usize, 1, 2, 6] {
            let mut up = base;
            up[i] += n(1);
            assert!(f(up) > f(base), "argument {i}");
        }
    }

    #[test]
    fn components_sum_and_train_ratio() {
        let cfg = ModelConfig::small();
        let r = blt_flops_per_byte(&cfg, n(1024), Q::new(9, 2)).unwrap();
        let sum: Q = r.components().iter().map(|c| c.1).sum();
        assert_eq!(sum, r.total_forward());
        assert_eq!(r.total_train(), r.total_forward() * n(3));
        assert!(r.components().iter().all(|c| c.1 >= n(0)));
    }

    #[test]
    fn global_only_when_local_blocks_are_empty() {
        let mut cfg = ModelConfig::small();
        cfg.l_e = 0;
        cfg.l_d = 0;
        let r = blt_flops_per_byte(&cfg, n(1024), n(4)).unwrap();
        assert_eq!(r.encoder_transformer, n(0));
        assert_eq!(r.encoder_xattn, n(0));
        assert_eq!(r.decoder_xattn, n(0));
        assert_eq!(r.decoder_transformer, de_embedding(n(cfg.h_d as i128), n(256)));
    }

    #[test]
    fn component_formulas_against_direct_evaluation() {
        let cfg = ModelConfig::tiny();
        let (n_ctx, n_p) = (n(512), n(4));
        let r = blt_flops_per_byte(&cfg, n_ctx, n_p).unwrap();
        let (he, hd) = (n(64), n(64));
        let dk = |h: Q, heads: i128| h / n(heads);
        let glob = 2 * 2 * 4 * 4 * 128 * 128 + 4 * 2 * 4 * 128 * 128 + 4 * 4 * 128 * (128 + 1) / 2;
        assert_eq!(r.global, n(glob) / n_p);
        let enc_x = attention(n(1), dk(he, 4), n(4), n_p) + qkvo(n(1), he, n_p / n(2));
        assert_eq!(r.encoder_xattn, enc_x * n(2) / n_p);
        let dec_x = attention(n(2), dk(hd, 4), n(4), n(2)) + qkvo(n(2), hd, n(2) / n_p);
        assert_eq!(r.decoder_xattn, dec_x);
    }

    #[test]
    fn global_component_halves_when_patch_size_doubles() {
        let mut cfg = ModelConfig::small();
        cfg.h_g = 4096;
        cfg.l_g = 32;
        cfg.heads_g = 32;
        let a = blt_flops_per_byte(&cfg, n(4096), n(6)).unwrap().global;
        let b = blt_flops_per_byte(&cfg, n(4096), n(12)).unwrap().global;
        let ratio = to_f64(a / b);
        assert!((ratio / 2.0 - 1.0).abs() < 0.01, "{ratio}");
    }

    #[test]
    fn param_counts_match_allocated_tensors() {
        for name in ["gradcheck", "micro", "tiny"] {
            let cfg = ModelConfig::preset(name).unwrap();
            let p = crate::model::BltParams::init(&cfg, 0);
            let counts = param_counts(&cfg);
            assert_eq!(counts.total(), p.store.n_scalars(), "{name}");
            assert_eq!(counts.non_embedding(), p.non_embedding_count(), "{name}");
        }
    }

    #[test]
    fn size_match_fixed_point_and_monotonicity() {
        let cfg = ModelConfig::small();
        let t = SizeTemplate::around(&cfg);
        let (n_ctx, n_p) = (n(2048), n(6));
        let own = blt_flops_per_byte(&cfg, n_ctx, n_p).unwrap().total_forward();
        let m = size_match(own, &t, n_ctx, n_p).unwrap();
        let (rounded, f) = m.rounded(64, n_ctx, n_p).unwrap();
        assert_eq!(rounded, FlopsShape::from(&cfg));
        assert_eq!(f, own);
        let bigger = size_match(own, &t, n_ctx, n(8)).unwrap();
        assert!(bigger.shape.global.h > m.shape.global.h);
        let direct = shape_flops_per_byte(&bigger.shape, n_ctx, n(8)).unwrap().total_forward();
        assert_eq!(direct, bigger.flops_per_byte);
        assert!((to_f64(direct) / to_f64(own) - 1.0).abs() < SIZE_MATCH_TOL);
    }

    #[test]
    fn infeasible_target_reports_bracket() {
        let t = SizeTemplate::around(&ModelConfig::small());
        let e = size_match(n(10), &t, n(2048), n(6)).unwrap_err();
        assert!(matches!(e, Error::FlopTarget { .. }));
    }

    #[test]
    fn ratio_parsing() {
        assert_eq!(parse_ratio("4.5").unwrap(), Q::new(9, 2));
        assert_eq!(parse_ratio("9/2").unwrap(), Q::new(9, 2));
        assert_eq!(parse_ratio("12").unwrap(), n(12));
        assert_eq!(parse_ratio("-0.25").unwrap(), Q::new(-1, 4));
        assert!(parse_ratio("abc").is_err());
        assert!(parse_ratio("1/0").is_err());
        assert_eq!(ratio_from_f64(0.5), Q::new(1, 2));
    }
}
