use super::{Graph, Mat, Var};

/// Rotate feature pairs `(t, t + dh/2)` of every head by `sign * pos * theta^(-2t/dh)`.
pub(super) fn rotate(m: &mut Mat, positions: &[usize], n_heads: usize, theta: f64, sign: f64) {
    let dh = m.cols / n_heads;
    let half = dh / 2;
    let freqs: Vec<f64> = (0..half).map(|t| theta.powf(-2.0 * t as f64 / dh as f64)).collect();
    for (i, &pos) in positions.iter().enumerate() {
        let row = m.row_mut(i);
        for (t, f) in freqs.iter().enumerate() {
            let (s, c) = (sign * pos as f64 * f).sin_cos();
            for h in 0..n_heads {
                let a = h * dh + t;
                let b = a + half;
                let (x1, x2) = (row[a], row[b]);
                row[a] = x1 * c - x2 * s;
                row[b] = x1 * s + x2 * c;
            }
        }
    }
}

pub(super) struct AttentionCache {
    pub q: Var,
    pub k: Var,
    pub v: Var,
    n_heads: usize,
    n_keys: usize,
    spans: Vec<(usize, usize)>,
    /// Start of each query's block in `probs`; the block holds `n_heads * span_len` weights.
    offsets: Vec<usize>,
    probs: Vec<f64>,
}

impl AttentionCache {
    fn block(&self, i: usize) -> &[f64] {
        &self.probs[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn dense_weights(&self) -> Vec<Mat> {
        let nq = self.spans.len();
        let mut out = vec![Mat::zeros(nq, self.n_keys); self.n_heads];
        for i in 0..nq {
            let (lo, hi) = self.spans[i];
            let len = hi - lo;
            let blk = self.block(i);
            for (h, m) in out.iter_mut().enumerate() {
                m.row_mut(i)[lo..hi].copy_from_slice(&blk[h * len..(h + 1) * len]);
            }
        }
        out
    }
}

pub(super) fn attention_forward(
    g: &Graph<'_>,
    q: Var,
    k: Var,
    v: Var,
    n_heads: usize,
    spans: Vec<(usize, usize)>,
) -> (Mat, AttentionCache) {
    let (qv, kv, vv) = (g.value(q), g.value(k), g.value(v));
    let d = qv.cols;
    assert!(kv.cols == d && vv.cols == d && kv.rows == vv.rows, "attention operand shapes differ");
    assert_eq!(spans.len(), qv.rows, "one key span per query");
    assert!(d % n_heads == 0, "width {d} not divisible by {n_heads} heads");
    for &(lo, hi) in &spans {
        assert!(lo < hi && hi <= kv.rows, "empty or out-of-range key span {lo}..{hi}");
    }
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let rows = g.exec().map_range(qv.rows, |i| {
        let (lo, hi) = spans[i];
        let len = hi - lo;
        let qi = qv.row(i);
        let mut out = vec![0.0; d];
        let mut p = vec![0.0; n_heads * len];
        for h in 0..n_heads {
            let hs = h * dh..(h + 1) * dh;
            let ph = &mut p[h * len..(h + 1) * len];
            for (j, s) in (lo..hi).zip(ph.iter_mut()) {
                *s = scale * dot(&qi[hs.clone()], &kv.row(j)[hs.clone()]);
            }
            softmax_in_place(ph);
            let oh = &mut out[hs.clone()];
            for (j, &w) in (lo..hi).zip(ph.iter()) {
                for (o, x) in oh.iter_mut().zip(&vv.row(j)[hs.clone()]) {
                    *o += w * x;
                }
            }
        }
        (out, p)
    });
    let mut out = Mat::zeros(qv.rows, d);
    let mut offsets = Vec::with_capacity(rows.len() + 1);
    let mut probs = Vec::new();
    offsets.push(0);
    for (i, (o, p)) in rows.into_iter().enumerate() {
        out.row_mut(i).copy_from_slice(&o);
        probs.extend_from_slice(&p);
        offsets.push(probs.len());
    }
    (
        out,
        AttentionCache {
            q,
            k,
            v,
            n_heads,
            n_keys: kv.rows,
            spans,
            offsets,
            probs,
        },
    )
}

pub(super) fn attention_backward(g: &Graph<'_>, c: &AttentionCache, dout: &Mat) -> (Mat, Mat, Mat) {
    let (qv, kv, vv) = (g.value(c.q), g.value(c.k), g.value(c.v));
    let d = qv.cols;
    let h_n = c.n_heads;
    let dh = d / h_n;
    let scale = 1.0 / (dh as f64).sqrt();
    let nq = qv.rows;

    // Per query: dq and the score gradients ds (same layout as probs).
    let per_query = g.exec().map_range(nq, |i| {
        let (lo, hi) = c.spans[i];
        let len = hi - lo;
        let p = c.block(i);
        let go = dout.row(i);
        let mut ds = vec![0.0; h_n * len];
        let mut dq = vec![0.0; d];
        for h in 0..h_n {
            let hs = h * dh..(h + 1) * dh;
            let ph = &p[h * len..(h + 1) * len];
            let dsh = &mut ds[h * len..(h + 1) * len];
            let mut acc = 0.0;
            for (j, slot) in (lo..hi).zip(dsh.iter_mut()) {
                *slot = dot(&go[hs.clone()], &vv.row(j)[hs.clone()]);
            }
            for (s, &w) in dsh.iter().zip(ph) {
                acc += s * w;
            }
            for (s, &w) in dsh.iter_mut().zip(ph) {
                *s = w * (*s - acc);
            }
            let dqh = &mut dq[hs.clone()];
            for (j, &s) in (lo..hi).zip(dsh.iter()) {
                for (o, x) in dqh.iter_mut().zip(&kv.row(j)[hs.clone()]) {
                    *o += scale * s * x;
                }
            }
        }
        (dq, ds)
    });
    let mut dq = Mat::zeros(nq, d);
    let mut ds_all = Vec::with_capacity(c.probs.len());
    for (i, (row, ds)) in per_query.into_iter().enumerate() {
        dq.row_mut(i).copy_from_slice(&row);
        ds_all.extend_from_slice(&ds);
    }

    // Per key: sum over the queries that see it, in ascending query order.
    let mut seen_by: Vec<Vec<usize>> = vec![Vec::new(); c.n_keys];
    for (i, &(lo, hi)) in c.spans.iter().enumerate() {
        for list in &mut seen_by[lo..hi] {
            list.push(i);
        }
    }
    let per_key = g.exec().map_range(c.n_keys, |j| {
        let mut dk = vec![0.0; d];
        let mut dv = vec![0.0; d];
        for &i in &seen_by[j] {
            let (lo, hi) = c.spans[i];
            let len = hi - lo;
            let base = c.offsets[i] + (j - lo);
            let qi = qv.row(i);
            let go = dout.row(i);
            for h in 0..h_n {
                let w = c.probs[base + h * len];
                let s = ds_all[base + h * len] * scale;
                for t in h * dh..(h + 1) * dh {
                    dk[t] += s * qi[t];
                    dv[t] += w * go[t];
                }
            }
        }
        (dk, dv)
    });
    let mut dk = Mat::zeros(c.n_keys, d);
    let mut dv = Mat::zeros(c.n_keys, d);
    for (j, (a, b)) in per_key.into_iter().enumerate() {
        dk.row_mut(j).copy_from_slice(&a);
        dv.row_mut(j).copy_from_slice(&b);
    }
    (dq, dk, dv)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softmax_in_place(v: &mut [f64]) {
    let mx = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for x in v.iter_mut() {
        *x = (*x - mx).exp();
        z += *x;
    }
    v.iter_mut().for_each(|x| *x /= z);
}
