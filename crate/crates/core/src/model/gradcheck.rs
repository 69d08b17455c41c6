use rand::seq::index::sample;
use rand::Rng;
use serde::Serialize;

use super::{Blt, BltInput};
use crate::exec::Exec;
use crate::rng;
use crate::tensor::{Graph, ParamGrads, ParamId, ParamStore};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub eps: f64,
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_err() < tol
    }
}

/// Relative error with a floor on the denominator so that two vanishing
/// gradients compare as equal.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compare `analytic` against central differences of `eval` on up to
/// `samples` entries per tensor. Half of the sampled entries are drawn from
/// those with a nonzero analytic gradient.
pub fn grad_check_fn<F>(store: &ParamStore, analytic: &ParamGrads, eval: F, eps: f64, samples: usize, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore) -> f64,
{
    let mut work = store.clone();
    let mut r = rng::seeded(seed);
    let mut tensors = Vec::new();
    for id in store.ids() {
        let grad = analytic.dense(id);
        let n = grad.len();
        let picks: Vec<usize> = if n <= samples {
            (0..n).collect()
        } else {
            let live: Vec<usize> = (0..n).filter(|&e| grad.data[e] != 0.0).collect();
            let half = (samples / 2).min(live.len());
            let mut p: Vec<usize> = sample(&mut r, live.len(), half).into_iter().map(|i| live[i]).collect();
            p.extend((0..samples - half).map(|_| r.random_range(0..n)));
            p
        };
        let mut check = TensorCheck {
            name: store.name(id).to_string(),
            checked: picks.len(),
            max_rel_err: 0.0,
            max_abs_err: 0.0,
        };
        for e in picks {
            let orig = work.value(id).data[e];
            work.value_mut(id).data[e] = orig + eps;
            let up = eval(&work);
            work.value_mut(id).data[e] = orig - eps;
            let down = eval(&work);
            work.value_mut(id).data[e] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = grad.data[e];
            if !(numeric.is_finite() && a.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {}[{e}]", store.name(id))));
            }
            check.max_rel_err = check.max_rel_err.max(relative_error(a, numeric));
            check.max_abs_err = check.max_abs_err.max((a - numeric).abs());
        }
        tensors.push(check);
    }
    Ok(GradCheckReport { eps, tensors })
}

/// Finite-difference check of the model's mean next-byte loss on `input`.
///
/// `fault` scales the backward pass of one weight matrix, as a negative control.
pub fn grad_check(
    model: &Blt,
    input: &BltInput,
    eps: f64,
    samples: usize,
    seed: u64,
    fault: Option<(ParamId, f64)>,
) -> Result<GradCheckReport> {
    let n = input.n_predicted().max(1) as f64;
    let mut g = Graph::new(&model.params.store, Exec::Sequential);
    if let Some((id, f)) = fault {
        g.inject_backward_fault(id, f);
    }
    let f = model.forward(&mut g, input);
    let loss = g.mul_scalar(f.loss_sum, 1.0 / n);
    if !g.scalar(loss).is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    let grads = g.backward(loss);
    if !grads.all_finite() {
        return Err(Error::NonFinite("analytic gradients".into()));
    }
    let eval = |store: &ParamStore| {
        let mut g = Graph::new(store, Exec::Sequential);
        let f = model.forward(&mut g, input);
        g.scalar(f.loss_sum) / n
    };
    grad_check_fn(&model.params.store, &grads, eval, eps, samples, seed)
}
