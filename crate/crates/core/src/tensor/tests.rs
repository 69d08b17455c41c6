use super::*;
use rand::Rng;

fn rand_mat(r: &mut crate::rng::Rng, rows: usize, cols: usize) -> Mat {
    Mat::from_vec(rows, cols, (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect())
}

/// Reduce any node to a scalar with fixed pseudo-random weights.
fn weighted_sum(g: &mut Graph<'_>, v: Var) -> Var {
    let (r, c) = g.shape(v);
    let flat = g.reshape(v, 1, r * c);
    let w: Vec<f64> = (0..r * c).map(|i| ((i * 7919) % 13) as f64 / 13.0 - 0.4).collect();
    let w = g.input(Mat::from_vec(r * c, 1, w));
    g.matmul(flat, w)
}

/// Compare analytic and central-difference gradients for every scalar of every parameter.
fn check<F>(params: &ParamStore, build: F) -> f64
where
    F: Fn(&mut Graph<'_>) -> Var,
{
    let mut g = Graph::new(params, Exec::Sequential);
    let loss = build(&mut g);
    let grads = g.backward(loss);
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for id in params.ids() {
        let analytic = grads.dense(id);
        for e in 0..params.value(id).len() {
            let mut p = params.clone();
            p.value_mut(id).data[e] += eps;
            let up = {
                let mut g = Graph::new(&p, Exec::Sequential);
                let l = build(&mut g);
                g.scalar(l)
            };
            p.value_mut(id).data[e] -= 2.0 * eps;
            let down = {
                let mut g = Graph::new(&p, Exec::Sequential);
                let l = build(&mut g);
                g.scalar(l)
            };
            let num = (up - down) / (2.0 * eps);
            let a = analytic.data[e];
            let rel = (a - num).abs() / a.abs().max(num.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}

#[test]
fn matmul_add_scale_gradients() {
    let mut r = crate::rng::seeded(1);
    let mut ps = ParamStore::new();
    let a = ps.add("a", rand_mat(&mut r, 3, 4), ParamKind::Matrix);
    let b = ps.add("b", rand_mat(&mut r, 4, 2), ParamKind::Matrix);
    let c = ps.add("c", rand_mat(&mut r, 3, 2), ParamKind::Matrix);
    let err = check(&ps, |g| {
        let (a, b, c) = (g.param(a), g.param(b), g.param(c));
        let ab = g.matmul(a, b);
        let s = g.add(ab, c);
        let s = g.mul_scalar(s, 1.7);
        let s = g.scale_rows(s, vec![0.5, -2.0, 3.0]);
        weighted_sum(g, s)
    });
    assert!(err < 1e-6, "{err}");
}

#[test]
fn norm_swiglu_rope_gradients() {
    let mut r = crate::rng::seeded(2);
    let mut ps = ParamStore::new();
    let x = ps.add("x", rand_mat(&mut r, 3, 8), ParamKind::Matrix);
    let y = ps.add("y", rand_mat(&mut r, 3, 8), ParamKind::Matrix);
    let gain = ps.add("g", rand_mat(&mut r, 1, 8), ParamKind::Gain);
    let err = check(&ps, |g| {
        let (x, y, gain) = (g.param(x), g.param(y), g.param(gain));
        let n = g.rms_norm(x, gain, 1e-6);
        let s = g.swiglu(n, y);
        let rp = g.rope(s, vec![0, 5, 17], 2, 10_000.0);
        weighted_sum(g, rp)
    });
    assert!(err < 1e-6, "{err}");
}

#[test]
fn attention_gradients() {
    let mut r = crate::rng::seeded(3);
    let mut ps = ParamStore::new();
    let q = ps.add("q", rand_mat(&mut r, 4, 6), ParamKind::Matrix);
    let k = ps.add("k", rand_mat(&mut r, 5, 6), ParamKind::Matrix);
    let v = ps.add("v", rand_mat(&mut r, 5, 6), ParamKind::Matrix);
    let err = check(&ps, |g| {
        let (q, k, v) = (g.param(q), g.param(k), g.param(v));
        let o = g.attention(q, k, v, 2, vec![(0, 1), (0, 3), (2, 5), (4, 5)]);
        weighted_sum(g, o)
    });
    assert!(err < 1e-6, "{err}");
}

#[test]
fn gather_pool_concat_ce_gradients() {
    let mut r = crate::rng::seeded(4);
    let mut ps = ParamStore::new();
    let t = ps.add("t", rand_mat(&mut r, 5, 4), ParamKind::Embedding);
    let x = ps.add("x", rand_mat(&mut r, 6, 4), ParamKind::Matrix);
    let w = ps.add("w", rand_mat(&mut r, 4, 7), ParamKind::Matrix);
    for mode in [PoolMode::Max, PoolMode::Mean] {
        let err = check(&ps, |g| {
            let (t, x, w) = (g.param(t), g.param(x), g.param(w));
            let rows = g.gather_rows_opt(t, vec![Some(1), None, Some(1), Some(4)]);
            let pooled = g.segment_pool(x, vec![0..2, 2..3, 3..6], mode);
            let cat = g.concat_rows(&[rows, pooled]);
            let re = g.reshape(cat, 7, 4);
            let logits = g.matmul(re, w);
            g.cross_entropy(logits, vec![Some(1), None, Some(6), Some(0), Some(3), None, Some(2)])
        });
        assert!(err < 1e-6, "{mode:?}: {err}");
    }
}

#[test]
fn masked_pairs_get_exactly_zero_weight() {
    let mut r = crate::rng::seeded(5);
    let ps = ParamStore::new();
    let mut g = Graph::new(&ps, Exec::Sequential);
    let q = g.input(rand_mat(&mut r, 3, 4));
    let k = g.input(rand_mat(&mut r, 4, 4));
    let spans = vec![(0, 1), (1, 3), (0, 4)];
    let o = g.attention(q, k, k, 2, spans.clone());
    for w in g.attention_weights(o).unwrap() {
        for (i, &(lo, hi)) in spans.iter().enumerate() {
            for j in 0..4 {
                if j < lo || j >= hi {
                    assert_eq!(w.at(i, j), 0.0);
                }
            }
            let s: f64 = w.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn rms_norm_rows_have_unit_rms() {
    let mut r = crate::rng::seeded(6);
    let ps = ParamStore::new();
    let mut g = Graph::new(&ps, Exec::Sequential);
    let x = g.input(rand_mat(&mut r, 5, 16));
    let one = g.input(Mat::filled(1, 16, 1.0));
    let y = g.rms_norm(x, one, 0.0);
    for i in 0..5 {
        let rms = (g.value(y).row(i).iter().map(|v| v * v).sum::<f64>() / 16.0).sqrt();
        assert!((rms - 1.0).abs() < 1e-6);
    }
}

#[test]
fn sequential_and_parallel_are_bit_identical() {
    let mut r = crate::rng::seeded(7);
    let mut ps = ParamStore::new();
    let a = ps.add("a", rand_mat(&mut r, 300, 16), ParamKind::Matrix);
    let b = ps.add("b", rand_mat(&mut r, 16, 16), ParamKind::Matrix);
    let run = |exec| {
        let mut g = Graph::new(&ps, exec);
        let (a, b) = (g.param(a), g.param(b));
        let h = g.matmul(a, b);
        let spans: Vec<(usize, usize)> = (0..300usize).map(|i| (i.saturating_sub(20), i + 1)).collect();
        let o = g.attention(h, h, h, 4, spans);
        let l = weighted_sum(&mut g, o);
        let grads = g.backward(l);
        (g.scalar(l), grads)
    };
    let (l1, g1) = run(Exec::Sequential);
    let (l2, g2) = run(Exec::Parallel);
    assert_eq!(l1.to_bits(), l2.to_bits());
    assert_eq!(g1, g2);
}

#[test]
fn injected_fault_changes_only_that_gradient() {
    let mut r = crate::rng::seeded(8);
    let mut ps = ParamStore::new();
    let a = ps.add("a", rand_mat(&mut r, 2, 3), ParamKind::Matrix);
    let b = ps.add("b", rand_mat(&mut r, 3, 2), ParamKind::Matrix);
    let run = |fault: bool| {
        let mut g = Graph::new(&ps, Exec::Sequential);
        if fault {
            g.inject_backward_fault(b, 1.5);
        }
        let (av, bv) = (g.param(a), g.param(b));
        let o = g.matmul(av, bv);
        let l = weighted_sum(&mut g, o);
        g.backward(l)
    };
    let (clean, bad) = (run(false), run(true));
    assert_eq!(clean.get(a), bad.get(a));
    assert_ne!(clean.get(b), bad.get(b));
}
