//! End-to-end acceptance suite: one PASS/FAIL line per criterion, written straight
//! to stdout so it shows up in `cargo test` output without `--nocapture`.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use blt_core::corpus::{apply_noise, load_corpus, split_alternating, take_bytes, total_bytes, Document, LoadOptions, NoiseSpec, NoiseStrategy};
use blt_core::entropy::{entropy_traces, EntropyModel, Smoothing};
use blt_core::exec::Exec;
use blt_core::flops::{blt_flops_per_byte, ratio_from_f64, to_f64, transformer_flops_per_token, Q};
use blt_core::model::{grad_check, Blt, BltInput, ModelConfig};
use blt_core::ngram::{roll_poly_hash, DEFAULT_PRIME};
use blt_core::patcher::{
    calibrate_threshold, check_incrementality_corpus, find_incrementality_witness, measure_mean_patch_size, patch_space,
    patch_strided, Bpe, BoundaryTiming, PatchScheme, Patcher, PatchingConfig, ThresholdKind,
};
use blt_core::rng;
use blt_core::tensor::ParamKind;
use blt_core::train::{
    eval_bpb, BltScorer, EvalSlice, JsonlLog, OptimSpec, PatchedCorpus, TrainConfig, Trainer, UniformScorer,
};
use num_bigint::BigUint;
use rand::{Rng, RngCore};
use sha2::{Digest, Sha256};

/// Criteria whose failure is expected and analysed in the project notes; they still
/// print FAIL but do not fail the test.
const KNOWN_UNATTAINED: &[u32] = &[];

const CAUSALITY_TRIALS: usize = 100;
const GRAD_TOL: f64 = 1e-4;
const GRAD_EPS: f64 = 1e-5;
const GRAD_SAMPLES: usize = 16;
const GRAD_WEIGHT_SCALE: f64 = 10.0;
const INCREMENTAL_PREFIXES: usize = 1000;
const INCREMENTAL_CORPUS_BYTES: usize = 1_000_000;
const CALIBRATION_TARGETS: [f64; 3] = [4.5, 6.0, 8.0];
const CALIBRATION_TOL: f64 = 0.05;
const CALIBRATION_SAMPLE_BYTES: usize = 2_000_000;
const HALVING_TOL: f64 = 0.01;
const MEMORIZE_STEPS: usize = 200;
const MEMORIZE_BPB: f64 = 0.15;
const ABLATION_SEEDS: [u64; 3] = [0, 1, 2];
const ABLATION_STEPS: usize = 500;
const ABLATION_BYTES_PER_STEP: usize = 4096;
const ABLATION_EVAL_BYTES: usize = 100_000;
const ABLATION_TIE: f64 = 0.01;
const ABLATION_FLOPS_SPREAD: f64 = 0.05;
const HASH_GRAMS: usize = 1_000_000;
const BUCKET_LOAD_RATIO: f64 = 3.0;
const BUCKETS: usize = 1 << 16;
const NOISE_STRINGS: usize = 10_000;
const REPRO_STEPS: usize = 500;

struct Fixture {
    train: Vec<Document>,
    holdout: Vec<Document>,
    /// Order-3 entropy model fitted on the first megabyte of `train`.
    entropy: EntropyModel,
    entropy_docs: usize,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/prose-5mb.txt.gz");
        let docs = load_corpus(path, &LoadOptions::default()).expect("fixture corpus").docs;
        let (mut train, mut holdout) = (Vec::new(), Vec::new());
        for (i, d) in docs.into_iter().enumerate() {
            if i % 20 == 19 {
                holdout.push(d);
            } else {
                train.push(d);
            }
        }
        let fit = take_bytes(&train, 1_000_000);
        let entropy = EntropyModel::train(&fit, 3, Smoothing::default()).expect("entropy model");
        Fixture {
            entropy_docs: fit.len(),
            train,
            holdout,
            entropy,
        }
    })
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

type Check = fn(&Fixture) -> Outcome;

fn patcher_config(scheme: PatchScheme) -> PatchingConfig {
    PatchingConfig::new(scheme)
}

fn causality(fx: &Fixture) -> Outcome {
    let cfg = ModelConfig::tiny();
    let model = Blt::new(cfg.clone(), 7).expect("model");
    let mut r = rng::seeded(101);
    let sources: Vec<&Document> = fx.holdout.iter().filter(|d| d.len() >= 128).collect();
    let schemes: [(&str, fn(&mut rng::Rng) -> PatchScheme); 4] = [
        ("strided", |r| PatchScheme::Strided { k: r.random_range(2..=6) }),
        ("space", |_| PatchScheme::Space),
        ("entropy-global", |r| PatchScheme::EntropyGlobal { theta: r.random_range(1.5..3.0) }),
        ("entropy-monotonic", |r| PatchScheme::EntropyMonotonic { theta: r.random_range(0.2..1.0) }),
    ];
    let mut failures = Vec::new();
    let mut shifted = 0;
    for (name, draw) in schemes {
        let mut bad = 0;
        for _ in 0..CAUSALITY_TRIALS {
            let pc = patcher_config(draw(&mut r));
            let patcher = Patcher::new(&pc).with_entropy(&fx.entropy);
            let src = &sources[r.random_range(0..sources.len())].bytes;
            let len = r.random_range(16..=96);
            let off = r.random_range(0..=src.len() - len);
            let original = src[off..off + len].to_vec();
            let other = &sources[r.random_range(0..sources.len())].bytes[..40];
            let pos = r.random_range(1..len);
            let mut perturbed = original.clone();
            perturbed[pos] = original[pos].wrapping_add(r.random_range(1..=255));
            let run = |x: &[u8]| {
                let input = BltInput::from_patcher(&cfg, &[x, other], &patcher).expect("input");
                model.logits(&input, Exec::Parallel)
            };
            let (a, b) = (run(&original), run(&perturbed));
            if patcher.boundaries(&original) != patcher.boundaries(&perturbed) {
                shifted += 1;
            }
            let same = |i: usize| a.row(i).iter().zip(b.row(i)).all(|(x, y)| x.to_bits() == y.to_bits());
            if !((0..pos).all(same) && (len..len + other.len()).all(same)) {
                bad += 1;
            }
        }
        if bad > 0 {
            failures.push(format!("{name}: {bad}"));
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "{} trials per scheme over 4 schemes, {shifted} with moved boundaries; leaking: [{}]",
            CAUSALITY_TRIALS,
            failures.join(", ")
        ),
    )
}

fn gradients(_: &Fixture) -> Outcome {
    let cfg = ModelConfig::tiny();
    let mut model = Blt::new(cfg.clone(), 11).expect("model");
    for id in model.params.store.ids().collect::<Vec<_>>() {
        if model.params.store.kind(id) != ParamKind::Gain {
            model.params.store.value_mut(id).data.iter_mut().for_each(|v| *v *= GRAD_WEIGHT_SCALE);
        }
    }
    let a = b"abcab cabd ab cd".to_vec();
    let b = b"xy zzq xyz".to_vec();
    let inputs = [
        BltInput::new(&cfg, &[&a, &b], vec![patch_space(&a), patch_strided(b.len(), 2)], BoundaryTiming::Reactive),
        BltInput::new(&cfg, &[&a, &b], vec![patch_strided(a.len(), 3), patch_strided(b.len(), 2)], BoundaryTiming::Predictive),
    ];
    let n_tensors = model.params.store.ids().count();
    let mut worst: HashMap<String, f64> = HashMap::new();
    for (i, input) in inputs.into_iter().enumerate() {
        let input = input.expect("input");
        let report = match grad_check(&model, &input, GRAD_EPS, GRAD_SAMPLES, i as u64, None) {
            Ok(r) => r,
            Err(e) => return outcome(false, e.to_string()),
        };
        for t in report.tensors {
            let w = worst.entry(t.name).or_insert(0.0);
            *w = w.max(t.max_rel_err);
        }
    }
    let (name, max) = worst
        .iter()
        .max_by(|x, y| x.1.total_cmp(y.1))
        .map(|(n, v)| (n.clone(), *v))
        .unwrap_or_default();
    outcome(
        worst.len() == n_tensors && max < GRAD_TOL,
        format!("{} of {n_tensors} tensors checked, max relative error {max:.2e} ({name}) < {GRAD_TOL:.0e}", worst.len()),
    )
}

fn incremental(fx: &Fixture) -> Outcome {
    let docs = take_bytes(&fx.train, INCREMENTAL_CORPUS_BYTES);
    let schemes = [
        ("strided", PatchScheme::Strided { k: 4 }),
        ("space", PatchScheme::Space),
        ("entropy-global", PatchScheme::EntropyGlobal { theta: 2.0 }),
        ("entropy-monotonic", PatchScheme::EntropyMonotonic { theta: 0.5 }),
    ];
    let mut counts = Vec::new();
    for (i, (name, scheme)) in schemes.into_iter().enumerate() {
        let pc = patcher_config(scheme);
        let patcher = Patcher::new(&pc).with_entropy(&fx.entropy);
        let v = check_incrementality_corpus(|x| patcher.boundaries(x), &docs, INCREMENTAL_PREFIXES, i as u64, Exec::Parallel);
        counts.push((name, v.len()));
    }
    let bpe = Bpe::train(&take_bytes(&docs, 200_000), 300);
    let witness = find_incrementality_witness(&bpe, &bpe.alphabet_hint(8), 5);
    let witness_ok = match &witness {
        Some((x, cut)) => bpe.patch(&x[..*cut]) != bpe.patch(x).truncate(*cut),
        None => false,
    };
    let clean = counts.iter().all(|c| c.1 == 0);
    let shown: Vec<String> = counts.iter().map(|(n, c)| format!("{n}={c}")).collect();
    let w = witness
        .as_ref()
        .map(|(x, cut)| format!("{:?} cut {cut}", String::from_utf8_lossy(x)))
        .unwrap_or_else(|| "none".into());
    outcome(
        clean && witness_ok,
        format!("{} MB, violations {}; BPE witness {w}", total_bytes(&docs) as f64 / 1e6, shown.join(" ")),
    )
}

fn calibration(fx: &Fixture) -> Outcome {
    let sample = take_bytes(&fx.train[fx.entropy_docs..], CALIBRATION_SAMPLE_BYTES);
    let (fit, held) = split_alternating(&sample);
    let held_traces = entropy_traces(&fx.entropy, &held, false, Exec::Parallel);
    let mut pass = total_bytes(&sample) >= 1_000_000;
    let mut shown = Vec::new();
    for target in CALIBRATION_TARGETS {
        match calibrate_threshold(&fx.entropy, &fit, target, ThresholdKind::Global, false, None, Exec::Parallel) {
            Ok(c) => {
                let got = measure_mean_patch_size(&held_traces, ThresholdKind::Global, c.theta, None);
                let err = (got - target).abs() / target;
                pass &= err < CALIBRATION_TOL;
                shown.push(format!("{target}->{got:.3} (theta {:.3}, {:.1}%)", c.theta, 100.0 * err));
            }
            Err(e) => {
                pass = false;
                shown.push(format!("{target}: {e}"));
            }
        }
    }
    outcome(
        pass,
        format!("held-out {:.2} MB: {}", total_bytes(&held) as f64 / 1e6, shown.join(", ")),
    )
}

fn flops(_: &Fixture) -> Outcome {
    let n = |v: i128| Q::from_integer(v);
    // 32 layers, width 4096, context 8192, 32 heads of 128, multiplier 4, vocab 128256:
    // feed-forward 2*32*2*4096*4*4096, QKVO 8*32*4096^2, attention 4*32*128*32*8193/2,
    // de-embedding 2*4096*128256.
    let hand: [(i128, i128, i128, i128, i128, i128, i128, i128); 3] = [
        (32, 4096, 8192, 32, 128, 4, 128_256, 8_589_934_592 + 4_294_967_296 + 2_147_745_792 + 1_050_673_152),
        (1, 1, 1, 1, 1, 4, 0, 28),
        (2, 64, 1023, 4, 16, 4, 256, 2 * 2 * 2 * 64 * 4 * 64 + 8 * 2 * 64 * 64 + 4 * 2 * 16 * 4 * 512 + 2 * 64 * 256),
    ];
    let mut exact = true;
    for (l, h, m, heads, hk, dff, v, want) in hand {
        exact &= transformer_flops_per_token(n(l), n(h), n(m), n(heads), n(hk), n(dff), n(v)) == n(want);
    }
    let mut cfg = ModelConfig::small();
    cfg.h_g = 4096;
    cfg.l_g = 32;
    cfg.heads_g = 32;
    let mut ratios = Vec::new();
    for (a, b) in [(Q::new(9, 2), n(9)), (n(6), n(12)), (n(8), n(16))] {
        let ga = blt_flops_per_byte(&cfg, n(4096), a).expect("flops").global;
        let gb = blt_flops_per_byte(&cfg, n(4096), b).expect("flops").global;
        ratios.push(to_f64(ga / gb));
    }
    let halving = ratios.iter().all(|r| (r / 2.0 - 1.0).abs() < HALVING_TOL);
    let shown: Vec<String> = ratios.iter().map(|r| format!("{r:.4}")).collect();
    outcome(
        exact && halving,
        format!("hand plug-ins exact: {exact}; global ratio on doubling n_p: {}", shown.join(", ")),
    )
}

fn bits_per_byte_anchor(fx: &Fixture) -> Outcome {
    let slice = take_bytes(&fx.holdout, 100_000);
    let uniform = eval_bpb(&UniformScorer, &[EvalSlice { name: "holdout".into(), docs: &slice }], None).expect("uniform");
    let shown = format!("{:.3}", uniform[0].bpb);
    let uniform_ok = shown == "8.000" && (uniform[0].bpb - 8.0).abs() < 1e-12;

    let doc = vec![fx.holdout.iter().find(|d| d.len() >= 300).expect("long document").clone()];
    let pc = patcher_config(PatchScheme::Space);
    let patcher = Patcher::new(&pc);
    let corpus = PatchedCorpus::build(&doc, &patcher, Exec::Parallel).expect("corpus");
    let config = TrainConfig {
        steps: MEMORIZE_STEPS,
        patches_per_batch: corpus.n_patches(),
        optim: OptimSpec {
            lr_peak: 3e-3,
            warmup_steps: 20,
            weight_decay: 0.0,
            ..OptimSpec::default()
        },
        ..TrainConfig::default()
    };
    let model = Blt::new(ModelConfig::micro(), 0).expect("model");
    let mut trainer = Trainer::new(model, config, &corpus, [0; 32], Exec::Parallel).expect("trainer");
    while !trainer.is_done() {
        if let Err(e) = trainer.step() {
            return outcome(false, e.to_string());
        }
    }
    let scorer = BltScorer::new(&trainer.model, &patcher, Exec::Parallel);
    let mem = eval_bpb(&scorer, &[EvalSlice { name: "doc".into(), docs: &doc }], None).expect("eval")[0].bpb;
    outcome(
        uniform_ok && mem < MEMORIZE_BPB,
        format!(
            "uniform {shown} bits/byte; {}-byte document memorized to {mem:.4} < {MEMORIZE_BPB} after {MEMORIZE_STEPS} steps",
            doc[0].len()
        ),
    )
}

fn ablation(fx: &Fixture) -> Outcome {
    let micro = ModelConfig::micro();
    let eval = take_bytes(&fx.holdout, ABLATION_EVAL_BYTES);
    let train = take_bytes(&fx.train, ABLATION_STEPS * ABLATION_BYTES_PER_STEP * 11 / 10);
    let space_cfg = patcher_config(PatchScheme::Space);
    let space_mean = PatchedCorpus::build(&train, &Patcher::new(&space_cfg), Exec::Parallel)
        .expect("corpus")
        .stats()
        .mean_patch_size;
    let cal = calibrate_threshold(&fx.entropy, &train, space_mean, ThresholdKind::Global, false, None, Exec::Parallel)
        .expect("calibration");
    let schemes = [
        ("entropy", PatchScheme::EntropyGlobal { theta: cal.theta }),
        ("space", PatchScheme::Space),
        ("strided", PatchScheme::Strided { k: space_mean.round() as usize }),
    ];
    let patches_per_batch = (ABLATION_BYTES_PER_STEP as f64 / space_mean).round() as usize;
    let mut medians = Vec::new();
    let mut flops = Vec::new();
    for (name, scheme) in schemes {
        let pc = patcher_config(scheme);
        let patcher = Patcher::new(&pc).with_entropy(&fx.entropy);
        let corpus = PatchedCorpus::build(&train, &patcher, Exec::Parallel).expect("corpus");
        let n_p = corpus.stats().mean_patch_size;
        flops.push(to_f64(blt_flops_per_byte(&micro, Q::from_integer(1024), ratio_from_f64(n_p)).expect("flops").total_forward()));
        let mut scores = Vec::new();
        for seed in ABLATION_SEEDS {
            let config = TrainConfig {
                steps: ABLATION_STEPS,
                patches_per_batch,
                optim: OptimSpec {
                    lr_peak: 3e-3,
                    warmup_steps: ABLATION_STEPS / 10,
                    ..OptimSpec::default()
                },
                seed,
                ..TrainConfig::default()
            };
            let model = Blt::new(micro.clone(), seed).expect("model");
            let mut trainer = Trainer::new(model, config, &corpus, [0; 32], Exec::Parallel).expect("trainer");
            while !trainer.is_done() {
                if let Err(e) = trainer.step() {
                    return outcome(false, format!("{name} seed {seed}: {e}"));
                }
            }
            let scorer = BltScorer::new(&trainer.model, &patcher, Exec::Parallel);
            scores.push(eval_bpb(&scorer, &[EvalSlice { name: "holdout".into(), docs: &eval }], None).expect("eval")[0].bpb);
        }
        scores.sort_by(f64::total_cmp);
        medians.push((name, n_p, scores[1], scores));
    }
    let spread = flops.iter().cloned().fold(f64::MIN, f64::max) / flops.iter().cloned().fold(f64::MAX, f64::min) - 1.0;
    let (entropy, space, strided) = (medians[0].2, medians[1].2, medians[2].2);
    let ordered = entropy <= space + ABLATION_TIE && space <= strided + ABLATION_TIE;
    let shown: Vec<String> = medians
        .iter()
        .map(|(n, p, m, s)| format!("{n} n_p {p:.2} median {m:.4} {s:.4?}"))
        .collect();
    outcome(
        ordered && spread <= ABLATION_FLOPS_SPREAD,
        format!("{}; FLOPs/byte spread {:.1}%", shown.join("; "), 100.0 * spread),
    )
}

/// `sum_j b[n-j] * a^(j-1) mod 2^64`, in arbitrary precision.
fn big_hash(gram: &[u8], a: u64) -> u64 {
    let a = BigUint::from(a);
    let mut power = BigUint::from(1u8);
    let mut sum = BigUint::from(0u8);
    for &b in gram.iter().rev() {
        sum += &power * BigUint::from(b);
        power *= &a;
    }
    let low: BigUint = sum % (BigUint::from(1u8) << 64u32);
    low.to_u64_digits().first().copied().unwrap_or(0)
}

fn hashing(_: &Fixture) -> Outcome {
    let mut r = rng::seeded(8);
    let mut gram = [0u8; 8];
    let mut mismatches = 0;
    for i in 0..HASH_GRAMS {
        let n = r.random_range(1..=8);
        r.fill_bytes(&mut gram[..n]);
        let a = if i % 2 == 0 { DEFAULT_PRIME } else { r.next_u64() };
        if roll_poly_hash(&gram[..n], a) != big_hash(&gram[..n], a) {
            mismatches += 1;
        }
    }
    let mut loads = vec![0usize; BUCKETS];
    for _ in 0..HASH_GRAMS {
        let n = r.random_range(3..=8);
        r.fill_bytes(&mut gram[..n]);
        loads[(roll_poly_hash(&gram[..n], DEFAULT_PRIME) % BUCKETS as u64) as usize] += 1;
    }
    let max = *loads.iter().max().unwrap_or(&0);
    let ratio = max as f64 * BUCKETS as f64 / HASH_GRAMS as f64;
    outcome(
        mismatches == 0 && ratio <= BUCKET_LOAD_RATIO,
        format!("{HASH_GRAMS} grams, {mismatches} mismatches; bucket max/mean {ratio:.2} over {BUCKETS} buckets"),
    )
}

fn random_string(r: &mut rng::Rng) -> String {
    let len = r.random_range(0..60);
    (0..len)
        .map(|_| match r.random_range(0..10) {
            0..=5 => r.random_range(b' '..=b'~') as char,
            6 => ['\t', '\n', ' '][r.random_range(0..3)],
            7 => ['é', 'ß', 'Ω', 'ж', 'ǅ', 'ﬁ', 'İ'][r.random_range(0..7)],
            _ => loop {
                if let Some(c) = char::from_u32(r.random_range(0..0x3_0000)) {
                    break c;
                }
            },
        })
        .collect()
}

fn noise(_: &Fixture) -> Outcome {
    let mut r = rng::seeded(9);
    let (mut drop_bad, mut ant_bad, mut upper_bad) = (0, 0, 0);
    for i in 0..NOISE_STRINGS {
        let s = random_string(&mut r);
        let n = s.chars().count();
        let dropped = apply_noise(&s, &NoiseSpec::new(NoiseStrategy::Drop, i as u64).with_rate(0.1));
        if n - dropped.chars().count() != n / 10 {
            drop_bad += 1;
        }
        let visible = s.chars().filter(|c| !c.is_whitespace()).count();
        let ant = apply_noise(&s, &NoiseSpec::new(NoiseStrategy::AntSpeak, i as u64));
        if ant.chars().count() != (2 * visible).saturating_sub(1) {
            ant_bad += 1;
        }
        let up = NoiseSpec::new(NoiseStrategy::UpperCase, i as u64);
        let once = apply_noise(&s, &up);
        if apply_noise(&once, &up) != once {
            upper_bad += 1;
        }
    }
    outcome(
        drop_bad + ant_bad + upper_bad == 0,
        format!("{NOISE_STRINGS} strings; violations drop={drop_bad} antspeak={ant_bad} uppercase={upper_bad}"),
    )
}

fn reproducibility(fx: &Fixture) -> Outcome {
    let docs = take_bytes(&fx.train, 300_000);
    let pc = patcher_config(PatchScheme::Space);
    let patcher = Patcher::new(&pc);
    let corpus = PatchedCorpus::build(&docs, &patcher, Exec::Parallel).expect("corpus");
    let config = TrainConfig {
        steps: REPRO_STEPS,
        patches_per_batch: 24,
        optim: OptimSpec {
            lr_peak: 2e-3,
            warmup_steps: 50,
            ..OptimSpec::default()
        },
        seed: 42,
        ..TrainConfig::default()
    };
    let hash = |c: &TrainConfig| -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&(ModelConfig::micro(), c, &pc)).expect("json"));
        h.finalize().into()
    };
    let run = || -> blt_core::Result<Vec<u8>> {
        let model = Blt::new(ModelConfig::micro(), 42)?;
        let mut trainer = Trainer::new(model, config.clone(), &corpus, hash(&config), Exec::Parallel)?;
        let mut log = JsonlLog {
            metrics: Vec::new(),
            throughput: std::io::sink(),
        };
        trainer.run(&mut log)?;
        Ok(log.metrics)
    };
    let (a, b) = match (run(), run()) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return outcome(false, e.to_string()),
    };
    let lines = a.iter().filter(|&&c| c == b'\n').count();
    outcome(
        a == b && lines == REPRO_STEPS,
        format!("{lines} metric lines per run, byte-identical: {}", a == b),
    )
}

#[test]
fn acceptance_criteria() {
    let criteria: [(u32, &str, Duration, Check); 10] = [
        (1, "causality", Duration::from_secs(120), causality),
        (2, "gradients", Duration::from_secs(300), gradients),
        (3, "incremental patching", Duration::from_secs(60), incremental),
        (4, "threshold calibration", Duration::from_secs(60), calibration),
        (5, "flop formulas", Duration::from_secs(10), flops),
        (6, "bits-per-byte anchor", Duration::from_secs(600), bits_per_byte_anchor),
        (7, "patching ablation", Duration::from_secs(7200), ablation),
        (8, "hash machinery", Duration::from_secs(60), hashing),
        (9, "noiser contracts", Duration::from_secs(10), noise),
        (10, "reproducibility", Duration::from_secs(600), reproducibility),
    ];
    let only: Option<Vec<u32>> = std::env::var("BLT_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let t = Instant::now();
    let fx = fixture();
    let mut out = std::io::stdout();
    let _ = writeln!(out, "\nacceptance: fixture loaded in {:.1}s", t.elapsed().as_secs_f64());
    let mut unexpected = Vec::new();
    for (id, name, budget, check) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let result = check(fx);
        let took = start.elapsed();
        let pass = result.pass && took <= budget;
        let _ = writeln!(
            out,
            "criterion {id:>2} {} {name}: {} [{:.1}s of {}s]",
            if pass { "PASS" } else { "FAIL" },
            result.detail,
            took.as_secs_f64(),
            budget.as_secs()
        );
        let _ = out.flush();
        if !pass && !KNOWN_UNATTAINED.contains(&id) {
            unexpected.push(id);
        }
    }
    assert!(unexpected.is_empty(), "failing criteria: {unexpected:?}");
}
