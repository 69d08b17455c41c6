//! Reverse-mode automatic differentiation over row-major `f64` matrices.
//!
//! A [`Graph`] records every operation applied to its nodes; [`Graph::backward`]
//! walks the record in reverse and returns gradients for every parameter of the
//! [`ParamStore`] the graph was built over. The op set is exactly what the model
//! needs: matmul, elementwise add/scale, RMS norm, SwiGLU, rotary embedding, fused
//! span-masked attention, row gathers, segment pooling, reshapes and cross-entropy.

mod ops;
mod params;

pub use params::{ParamGrads, ParamId, ParamKind, ParamStore};

use crate::exec::Exec;

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length does not match {rows}x{cols}");
        Mat { rows, cols, data }
    }

    pub fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Mat {
            rows,
            cols,
            data: vec![v; rows * cols],
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn add_assign(&mut self, other: &Mat) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Row-block size used when splitting matrix work across threads.
const ROW_BLOCK: usize = 128;

/// `C = A B + beta C` for strided operands; `c` is dense `m x n`.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], rsa: isize, csa: isize, b: &[f64], rsb: isize, csb: isize, c: &mut [f64], beta: f64) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c[..m * n].iter_mut().for_each(|v| *v *= beta);
        return;
    }
    // SAFETY: callers pass slices that cover every strided access of the given
    // shapes (checked by the debug assertions in the op constructors), and `c` is
    // a distinct, dense m x n buffer.
    unsafe {
        matrixmultiply::dgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
    }
}

/// Dense `A (m x k)` times strided `B`, row blocks of the output computed in parallel.
#[allow(clippy::too_many_arguments)]
fn gemm_rows(exec: Exec, m: usize, k: usize, n: usize, a: &[f64], b: &[f64], rsb: isize, csb: isize, c: &mut [f64]) {
    if n == 0 {
        return;
    }
    exec.for_each_chunk(&mut c[..m * n], ROW_BLOCK * n, |blk, chunk| {
        let rows = chunk.len() / n;
        let a0 = blk * ROW_BLOCK * k;
        gemm(rows, k, n, &a[a0..a0 + rows * k], k as isize, 1, b, rsb, csb, chunk, 0.0);
    });
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolMode {
    Max,
    Mean,
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    MulScalar(Var, f64),
    ScaleRows(Var, Vec<f64>),
    RmsNorm { x: Var, gain: Var, inv_rms: Vec<f64> },
    SwiGlu(Var, Var),
    Rope { x: Var, positions: Vec<usize>, n_heads: usize, theta: f64 },
    Attention(Box<ops::AttentionCache>),
    Gather { table: Var, idx: Vec<Option<usize>> },
    Pool { x: Var, segments: Vec<std::ops::Range<usize>>, mode: PoolMode, argmax: Vec<usize> },
    Reshape(Var),
    ConcatRows(Vec<Var>),
    CrossEntropy { logits: Var, targets: Vec<Option<u8>>, probs: Mat },
}

struct Node {
    value: Option<Mat>,
    op: Op,
}

/// Tape of operations over a borrowed parameter store.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    exec: Exec,
    fault: Option<(ParamId, f64)>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore, exec: Exec) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
            exec,
            fault: None,
        }
    }

    pub fn exec(&self) -> Exec {
        self.exec
    }

    /// Scale the weight gradient of every matmul that consumes `id` by `factor`.
    /// Exists only to prove that gradient checking catches a broken backward pass.
    #[doc(hidden)]
    pub fn inject_backward_fault(&mut self, id: ParamId, factor: f64) {
        self.fault = Some((id, factor));
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value: Some(value), op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        match (&self.nodes[v.0].value, &self.nodes[v.0].op) {
            (Some(m), _) => m,
            (None, Op::Param(id)) => self.params.value(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let m = self.value(v);
        (m.rows, m.cols)
    }

    /// A constant input (no gradient is reported for it).
    pub fn input(&mut self, m: Mat) -> Var {
        self.push(m, Op::Leaf)
    }

    /// The node standing for parameter `id`; repeated calls share one node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dimensions differ: {m}x{k} * {k2}x{n}");
        let mut c = Mat::zeros(m, n);
        gemm_rows(self.exec, m, k, n, &self.value(a).data, &self.value(b).data, n as isize, 1, &mut c.data);
        self.push(c, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(out, Op::Add(a, b))
    }

    pub fn mul_scalar(&mut self, a: Var, s: f64) -> Var {
        let mut out = self.value(a).clone();
        out.data.iter_mut().for_each(|v| *v *= s);
        self.push(out, Op::MulScalar(a, s))
    }

    /// Multiply row `i` by `scales[i]`.
    pub fn scale_rows(&mut self, a: Var, scales: Vec<f64>) -> Var {
        let (r, c) = self.shape(a);
        assert_eq!(scales.len(), r, "one scale per row");
        let mut out = self.value(a).clone();
        for (i, row) in out.data.chunks_mut(c.max(1)).enumerate() {
            row.iter_mut().for_each(|v| *v *= scales[i]);
        }
        self.push(out, Op::ScaleRows(a, scales))
    }

    /// `y = x / rms(x) * gain` per row, with `gain` a `1 x cols` node.
    pub fn rms_norm(&mut self, x: Var, gain: Var, eps: f64) -> Var {
        let (r, c) = self.shape(x);
        assert_eq!(self.shape(gain), (1, c), "rms gain must be 1x{c}");
        let xv = self.value(x);
        let g = &self.value(gain).data;
        let mut out = Mat::zeros(r, c);
        let mut inv_rms = vec![0.0; r];
        for i in 0..r {
            let row = xv.row(i);
            let ms = row.iter().map(|v| v * v).sum::<f64>() / c as f64;
            let inv = 1.0 / (ms + eps).sqrt();
            inv_rms[i] = inv;
            for (j, o) in out.row_mut(i).iter_mut().enumerate() {
                *o = row[j] * inv * g[j];
            }
        }
        self.push(out, Op::RmsNorm { x, gain, inv_rms })
    }

    /// `silu(a) * b`.
    pub fn swiglu(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "swiglu shape mismatch");
        let (r, c) = self.shape(a);
        let data = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(&x, &y)| x * sigmoid(x) * y)
            .collect();
        self.push(Mat::from_vec(r, c, data), Op::SwiGlu(a, b))
    }

    /// Rotary position embedding over `n_heads` heads; row `i` is at `positions[i]`.
    pub fn rope(&mut self, x: Var, positions: Vec<usize>, n_heads: usize, theta: f64) -> Var {
        let (r, c) = self.shape(x);
        assert_eq!(positions.len(), r, "one position per row");
        assert!(c % n_heads == 0 && (c / n_heads) % 2 == 0, "head dim must be even");
        let mut out = self.value(x).clone();
        ops::rotate(&mut out, &positions, n_heads, theta, 1.0);
        self.push(out, Op::Rope { x, positions, n_heads, theta })
    }

    /// Multi-head softmax attention; query `i` attends keys `spans[i].0..spans[i].1`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, n_heads: usize, spans: Vec<(usize, usize)>) -> Var {
        let (out, cache) = ops::attention_forward(self, q, k, v, n_heads, spans);
        self.push(out, Op::Attention(Box::new(cache)))
    }

    /// Row `i` of the result is row `idx[i]` of `table`.
    pub fn gather_rows(&mut self, table: Var, idx: &[usize]) -> Var {
        self.gather_rows_opt(table, idx.iter().map(|&i| Some(i)).collect())
    }

    /// Like [`Graph::gather_rows`], with `None` producing a zero row.
    pub fn gather_rows_opt(&mut self, table: Var, idx: Vec<Option<usize>>) -> Var {
        let t = self.value(table);
        let c = t.cols;
        let mut out = Mat::zeros(idx.len(), c);
        for (i, id) in idx.iter().enumerate() {
            if let Some(r) = id {
                assert!(*r < t.rows, "gather index {r} out of {} rows", t.rows);
                out.row_mut(i).copy_from_slice(t.row(*r));
            }
        }
        self.push(out, Op::Gather { table, idx })
    }

    /// One output row per segment: the column-wise max or mean of its rows.
    pub fn segment_pool(&mut self, x: Var, segments: Vec<std::ops::Range<usize>>, mode: PoolMode) -> Var {
        let xv = self.value(x);
        let c = xv.cols;
        let mut out = Mat::zeros(segments.len(), c);
        let mut argmax = Vec::new();
        for (s, seg) in segments.iter().enumerate() {
            assert!(!seg.is_empty() && seg.end <= xv.rows, "invalid pooling segment {seg:?}");
            let row = out.row_mut(s);
            match mode {
                PoolMode::Max => {
                    for j in 0..c {
                        let mut best = seg.start;
                        for i in seg.clone() {
                            if xv.at(i, j) > xv.at(best, j) {
                                best = i;
                            }
                        }
                        row[j] = xv.at(best, j);
                        argmax.push(best);
                    }
                }
                PoolMode::Mean => {
                    let inv = 1.0 / seg.len() as f64;
                    for i in seg.clone() {
                        for (o, v) in row.iter_mut().zip(xv.row(i)) {
                            *o += v * inv;
                        }
                    }
                }
            }
        }
        self.push(out, Op::Pool { x, segments, mode, argmax })
    }

    /// Reinterpret the row-major data with a new shape.
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Var {
        let m = self.value(x);
        assert_eq!(m.len(), rows * cols, "reshape must keep the element count");
        let out = Mat::from_vec(rows, cols, m.data.clone());
        self.push(out, Op::Reshape(x))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.shape(parts[0]).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.cols, cols, "concat_rows column mismatch");
            data.extend_from_slice(&m.data);
            rows += m.rows;
        }
        self.push(Mat::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    /// Summed negative log-likelihood (nats) of `targets` under row-wise softmax of
    /// `logits`; rows with `None` are ignored. Returns a `1 x 1` node.
    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<Option<u8>>) -> Var {
        let l = self.value(logits);
        assert_eq!(l.rows, targets.len(), "one target per logits row");
        let mut probs = Mat::zeros(l.rows, l.cols);
        let mut total = 0.0;
        for (i, t) in targets.iter().enumerate() {
            let row = l.row(i);
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - mx).exp()).sum();
            for (p, v) in probs.row_mut(i).iter_mut().zip(row) {
                *p = (v - mx).exp() / z;
            }
            if let Some(t) = t {
                total += z.ln() + mx - row[*t as usize];
            }
        }
        self.push(Mat::from_vec(1, 1, vec![total]), Op::CrossEntropy { logits, targets, probs })
    }

    /// Softmax probabilities cached by a cross-entropy node.
    pub fn softmax_of(&self, ce: Var) -> Option<&Mat> {
        match &self.nodes[ce.0].op {
            Op::CrossEntropy { probs, .. } => Some(probs),
            _ => None,
        }
    }

    /// Dense per-head attention weights (`heads x queries x keys`) of an attention node.
    pub fn attention_weights(&self, att: Var) -> Option<Vec<Mat>> {
        match &self.nodes[att.0].op {
            Op::Attention(cache) => Some(cache.dense_weights()),
            _ => None,
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.len(), 1, "not a scalar node");
        m.data[0]
    }

    /// Gradients of the scalar node `loss` with respect to every parameter used.
    pub fn backward(&self, loss: Var) -> ParamGrads {
        assert_eq!(self.value(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::filled(1, 1, 1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            if let Op::Param(_) = self.nodes[idx].op {
                grads[idx] = Some(g);
                continue;
            }
            self.backprop(idx, &g, &mut grads);
        }
        let mut out = ParamGrads::empty(self.params);
        for (id, v) in self.param_vars.iter().enumerate() {
            if let Some(v) = v {
                if let Some(g) = grads[v.0].take() {
                    out.set(ParamId(id), g);
                }
            }
        }
        out
    }

    fn backprop(&self, idx: usize, g: &Mat, grads: &mut [Option<Mat>]) {
        let exec = self.exec;
        match &self.nodes[idx].op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.shape(*a);
                let n = self.shape(*b).1;
                if self.needs_grad(*a) {
                    let mut da = Mat::zeros(m, k);
                    // dA = dC B^T
                    gemm_rows(exec, m, n, k, &g.data, &self.value(*b).data, 1, n as isize, &mut da.data);
                    accumulate(grads, *a, da);
                }
                if self.needs_grad(*b) {
                    let mut db = Mat::zeros(k, n);
                    // dB = A^T dC
                    gemm(k, m, n, &self.value(*a).data, 1, k as isize, &g.data, n as isize, 1, &mut db.data, 0.0);
                    if let (Op::Param(id), Some((fid, f))) = (&self.nodes[b.0].op, self.fault) {
                        if *id == fid {
                            db.data.iter_mut().for_each(|v| *v *= f);
                        }
                    }
                    accumulate(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::MulScalar(a, s) => {
                let mut d = g.clone();
                d.data.iter_mut().for_each(|v| *v *= s);
                accumulate(grads, *a, d);
            }
            Op::ScaleRows(a, scales) => {
                let mut d = g.clone();
                let c = d.cols.max(1);
                for (i, row) in d.data.chunks_mut(c).enumerate() {
                    row.iter_mut().for_each(|v| *v *= scales[i]);
                }
                accumulate(grads, *a, d);
            }
            Op::RmsNorm { x, gain, inv_rms } => {
                let xv = self.value(*x);
                let gv = &self.value(*gain).data;
                let (r, c) = (xv.rows, xv.cols);
                let mut dx = Mat::zeros(r, c);
                let mut dg = Mat::zeros(1, c);
                for i in 0..r {
                    let inv = inv_rms[i];
                    let xr = xv.row(i);
                    let gr = g.row(i);
                    let mut dot = 0.0;
                    for j in 0..c {
                        let xhat = xr[j] * inv;
                        dg.data[j] += gr[j] * xhat;
                        dot += gr[j] * gv[j] * xhat;
                    }
                    let mean = dot / c as f64;
                    for (j, d) in dx.row_mut(i).iter_mut().enumerate() {
                        *d = inv * (gr[j] * gv[j] - xr[j] * inv * mean);
                    }
                }
                accumulate(grads, *x, dx);
                accumulate(grads, *gain, dg);
            }
            Op::SwiGlu(a, b) => {
                let av = &self.value(*a).data;
                let bv = &self.value(*b).data;
                let (r, c) = self.shape(*a);
                let mut da = Mat::zeros(r, c);
                let mut db = Mat::zeros(r, c);
                for i in 0..av.len() {
                    let s = sigmoid(av[i]);
                    da.data[i] = g.data[i] * bv[i] * s * (1.0 + av[i] * (1.0 - s));
                    db.data[i] = g.data[i] * av[i] * s;
                }
                accumulate(grads, *a, da);
                accumulate(grads, *b, db);
            }
            Op::Rope { x, positions, n_heads, theta } => {
                let mut d = g.clone();
                ops::rotate(&mut d, positions, *n_heads, *theta, -1.0);
                accumulate(grads, *x, d);
            }
            Op::Attention(cache) => {
                let (dq, dk, dv) = ops::attention_backward(self, cache, g);
                accumulate(grads, cache.q, dq);
                accumulate(grads, cache.k, dk);
                accumulate(grads, cache.v, dv);
            }
            Op::Gather { table, idx } => {
                let (tr, tc) = self.shape(*table);
                let mut d = Mat::zeros(tr, tc);
                for (i, id) in idx.iter().enumerate() {
                    if let Some(r) = id {
                        for (o, v) in d.row_mut(*r).iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                }
                accumulate(grads, *table, d);
            }
            Op::Pool { x, segments, mode, argmax } => {
                let (xr, c) = self.shape(*x);
                let mut d = Mat::zeros(xr, c);
                for (s, seg) in segments.iter().enumerate() {
                    match mode {
                        PoolMode::Max => {
                            for j in 0..c {
                                d.data[argmax[s * c + j] * c + j] += g.at(s, j);
                            }
                        }
                        PoolMode::Mean => {
                            let inv = 1.0 / seg.len() as f64;
                            for i in seg.clone() {
                                for (o, v) in d.row_mut(i).iter_mut().zip(g.row(s)) {
                                    *o += v * inv;
                                }
                            }
                        }
                    }
                }
                accumulate(grads, *x, d);
            }
            Op::Reshape(x) => {
                let (r, c) = self.shape(*x);
                accumulate(grads, *x, Mat::from_vec(r, c, g.data.clone()));
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let (r, c) = self.shape(p);
                    accumulate(grads, p, Mat::from_vec(r, c, g.data[off..off + r * c].to_vec()));
                    off += r * c;
                }
            }
            Op::CrossEntropy { logits, targets, probs } => {
                let scale = g.data[0];
                let mut d = Mat::zeros(probs.rows, probs.cols);
                for (i, t) in targets.iter().enumerate() {
                    if let Some(t) = t {
                        for (o, p) in d.row_mut(i).iter_mut().zip(probs.row(i)) {
                            *o = p * scale;
                        }
                        d.data[i * probs.cols + *t as usize] -= scale;
                    }
                }
                accumulate(grads, *logits, d);
            }
        }
    }

    /// Whether any parameter can be reached backwards from `v`.
    fn needs_grad(&self, v: Var) -> bool {
        !matches!(self.nodes[v.0].op, Op::Leaf)
    }
}

fn accumulate(grads: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[cfg(test)]
mod tests;
