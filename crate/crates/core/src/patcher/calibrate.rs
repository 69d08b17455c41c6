use serde::Serialize;

use super::{apply_max_patch, patch_entropy_global, patch_entropy_monotonic};
use crate::corpus::Document;
use crate::entropy::{entropy_traces, EntropyModel, EntropyTrace};
use crate::exec::Exec;
use crate::{Error, Result};

/// Which entropy threshold is being solved for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdKind {
    Global,
    Monotonic,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Calibration {
    pub theta: f64,
    pub achieved_mean: f64,
    pub target: f64,
    pub iterations: usize,
    /// Whether the mean patch size was nondecreasing in theta at every probe.
    pub monotone_observed: bool,
}

/// Bytes-per-patch over all traces, counting the forced first boundary of each.
fn mean_patch_size(traces: &[EntropyTrace], kind: ThresholdKind, theta: f64, max_patch: Option<usize>) -> f64 {
    let (mut bytes, mut patches) = (0usize, 0usize);
    for t in traces {
        let b = match kind {
            ThresholdKind::Global => patch_entropy_global(t, theta),
            ThresholdKind::Monotonic => patch_entropy_monotonic(t, theta),
        };
        let b = match max_patch {
            Some(cap) => apply_max_patch(&b, cap).0,
            None => b,
        };
        bytes += b.n_bytes();
        patches += b.n_patches();
    }
    bytes as f64 / patches.max(1) as f64
}

/// Bisection on precomputed traces until the mean patch size is within `rel_tol` of `target`.
pub fn calibrate_on_traces(
    traces: &[EntropyTrace],
    target: f64,
    kind: ThresholdKind,
    max_patch: Option<usize>,
    rel_tol: f64,
) -> Result<Calibration> {
    if !(target > 1.0 && target <= 64.0) {
        return Err(Error::Config(format!("target patch size {target} outside (1, 64]")));
    }
    if traces.iter().all(|t| t.is_empty()) {
        return Err(Error::Empty("calibration sample".into()));
    }
    let top = traces
        .iter()
        .flat_map(|t| t.values.iter().copied())
        .fold(0.0f64, f64::max)
        + 1.0;
    let (mut lo, mut hi) = (0.0, top);
    let min = mean_patch_size(traces, kind, lo, max_patch);
    let max = mean_patch_size(traces, kind, hi, max_patch);
    if target < min * (1.0 - rel_tol) || target > max * (1.0 + rel_tol) {
        return Err(Error::UnreachableTarget { target, min, max });
    }
    let mut probes = vec![(lo, min), (hi, max)];
    let mut best = if (min - target).abs() <= (max - target).abs() { (lo, min) } else { (hi, max) };
    let mut iterations = 0;
    while (best.1 - target).abs() / target > rel_tol && iterations < 100 {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        let m = mean_patch_size(traces, kind, mid, max_patch);
        probes.push((mid, m));
        if (m - target).abs() < (best.1 - target).abs() {
            best = (mid, m);
        }
        if m < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    probes.sort_by(|a, b| a.0.total_cmp(&b.0));
    let monotone_observed = probes.windows(2).all(|w| w[0].1 <= w[1].1);
    if (best.1 - target).abs() / target > rel_tol {
        return Err(Error::UnreachableTarget { target, min, max });
    }
    Ok(Calibration {
        theta: best.0,
        achieved_mean: best.1,
        target,
        iterations,
        monotone_observed,
    })
}

/// Solve for the threshold that gives `target` bytes per patch on `sample`.
pub fn calibrate_threshold(
    model: &EntropyModel,
    sample: &[Document],
    target: f64,
    kind: ThresholdKind,
    reset_on_newline: bool,
    max_patch: Option<usize>,
    exec: Exec,
) -> Result<Calibration> {
    let bytes: usize = sample.iter().map(Document::len).sum();
    if bytes < 100_000 {
        log::warn!("calibration sample has only {bytes} bytes; thresholds may not transfer");
    }
    let traces = entropy_traces(model, sample, reset_on_newline, exec);
    calibrate_on_traces(&traces, target, kind, max_patch, 0.02)
}

/// Mean patch size of `traces` at a fixed threshold.
pub fn measure_mean_patch_size(traces: &[EntropyTrace], kind: ThresholdKind, theta: f64, max_patch: Option<usize>) -> f64 {
    mean_patch_size(traces, kind, theta, max_patch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_traces(seed: u64, n: usize, len: usize) -> Vec<EntropyTrace> {
        let mut r = crate::rng::seeded(seed);
        (0..n)
            .map(|_| EntropyTrace {
                values: (0..len).map(|_| r.random_range(0.0..5.0)).collect(),
                reset_positions: vec![],
            })
            .collect()
    }

    #[test]
    fn hits_target_within_tolerance() {
        let traces = random_traces(1, 200, 500);
        for target in [2.0, 4.5, 8.0] {
            let c = calibrate_on_traces(&traces, target, ThresholdKind::Global, None, 0.02).unwrap();
            assert!((c.achieved_mean - target).abs() / target <= 0.02);
            assert!(c.monotone_observed);
        }
    }

    #[test]
    fn infeasible_targets_report_range() {
        let traces = random_traces(2, 2, 10);
        assert!(matches!(calibrate_on_traces(&traces, 1.0, ThresholdKind::Global, None, 0.02), Err(Error::Config(_))));
        match calibrate_on_traces(&traces, 40.0, ThresholdKind::Global, None, 0.02) {
            Err(Error::UnreachableTarget { max, .. }) => assert_eq!(max, 10.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn whole_document_target_gives_single_patches() {
        let traces = random_traces(3, 1, 40);
        let c = calibrate_on_traces(&traces, 40.0, ThresholdKind::Global, None, 0.02).unwrap();
        assert_eq!(c.achieved_mean, 40.0);
        assert!(c.theta >= 5.0 - 1e-9);
    }

    #[test]
    fn monotonic_threshold_calibrates() {
        let traces = random_traces(4, 100, 400);
        let c = calibrate_on_traces(&traces, 3.0, ThresholdKind::Monotonic, None, 0.02).unwrap();
        assert!((c.achieved_mean - 3.0).abs() / 3.0 <= 0.02);
    }
}
