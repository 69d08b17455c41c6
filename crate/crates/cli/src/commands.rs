use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use blt_core::corpus::{apply_noise, load_corpus, take_bytes, total_bytes, Document, NoiseSpec};
use blt_core::entropy::{entropy_trace, entropy_traces, EntropyModel, Smoothing};
use blt_core::flops::{
    blt_flops_per_byte, param_counts, parse_ratio, size_match as solve_size_match, to_f64, SizeTemplate, Q,
};
use blt_core::model::Blt;
use blt_core::patcher::{
    calibrate_threshold, check_incrementality_corpus, corpus_patch_stats, export_boundaries,
    find_incrementality_witness, measure_mean_patch_size, Bpe, Calibration, PatchScheme, Patcher, PatchingConfig,
    ThresholdKind,
};
use blt_core::train::{
    check_disjoint, content_hashes, eval_bpb as score_slices, BltScorer, ByteScorer, Checkpoint, EvalReport,
    EvalSlice, PatchedCorpus, SliceReport, StepMetrics, Throughput, TrainObserver, Trainer, UniformScorer,
};
use blt_core::{Error, Result};
use serde_json::json;

use crate::config::RunConfig;
use crate::report::Report;
use crate::rundir::RunDir;

/// Held-out bytes scored at each evaluation during training.
const MAX_EVAL_BYTES: usize = 200_000;

pub struct Ctx<'a> {
    pub cfg: &'a RunConfig,
    pub dir: &'a RunDir,
}

fn io(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn load(ctx: &Ctx<'_>, path: &Path) -> Result<Vec<Document>> {
    let report = load_corpus(path, &ctx.cfg.data.load_options())?;
    for w in &report.warnings {
        log::warn!("{}: {w}", path.display());
    }
    if !report.skipped.is_empty() {
        log::warn!("{}: skipped {} malformed records", path.display(), report.skipped.len());
    }
    Ok(report.docs)
}

fn train_docs(ctx: &Ctx<'_>) -> Result<Vec<Document>> {
    let path = ctx
        .cfg
        .data
        .train
        .as_ref()
        .ok_or_else(|| Error::Config("no training corpus; pass --corpus or set data.train".into()))?;
    let docs = load(ctx, path)?;
    let docs = match ctx.cfg.data.max_train_bytes {
        Some(n) => take_bytes(&docs, n),
        None => docs,
    };
    if docs.iter().all(Document::is_empty) {
        return Err(Error::Empty(format!("corpus {} has no content", path.display())));
    }
    Ok(docs)
}

fn optional_train_docs(ctx: &Ctx<'_>) -> Result<Option<Vec<Document>>> {
    match ctx.cfg.data.train {
        Some(_) => train_docs(ctx).map(Some),
        None => Ok(None),
    }
}

/// Models and merges a patching scheme depends on.
struct Assets {
    patching: PatchingConfig,
    entropy: Option<EntropyModel>,
    bpe: Option<Bpe>,
    calibration: Option<Calibration>,
}

impl Assets {
    /// Load or fit everything the configured scheme needs. Models fitted here are
    /// trained on `fit` and also written into the run directory.
    fn prepare(ctx: &Ctx<'_>, fit: &[Document], force_entropy: bool) -> Result<Self> {
        let cfg = ctx.cfg;
        let mut patching = cfg.patching.clone();
        let entropy = if patching.scheme.needs_entropy() || force_entropy {
            Some(match &cfg.entropy.model_path {
                Some(p) => EntropyModel::load(p)?,
                None => {
                    let m = EntropyModel::train(fit, cfg.entropy.order, Smoothing { alpha: cfg.entropy.alpha })?;
                    m.save(ctx.dir.file("entropy.bin"))?;
                    m
                }
            })
        } else {
            None
        };
        let mut calibration = None;
        if let (Some(target), Some(model)) = (cfg.entropy.target_patch_size, &entropy) {
            let kind = match patching.scheme {
                PatchScheme::EntropyGlobal { .. } => ThresholdKind::Global,
                PatchScheme::EntropyMonotonic { .. } => ThresholdKind::Monotonic,
                _ => {
                    return Err(Error::Config(
                        "target_patch_size needs the entropy or entropy-monotonic scheme".into(),
                    ))
                }
            };
            let c = calibrate_threshold(model, fit, target, kind, patching.reset_on_newline, patching.max_patch, cfg.exec)?;
            patching.scheme = match kind {
                ThresholdKind::Global => PatchScheme::EntropyGlobal { theta: c.theta },
                ThresholdKind::Monotonic => PatchScheme::EntropyMonotonic { theta: c.theta },
            };
            calibration = Some(c);
        }
        let bpe = if patching.scheme == PatchScheme::Bpe {
            Some(Bpe::train(fit, cfg.bpe.merges))
        } else {
            None
        };
        Ok(Assets {
            patching,
            entropy,
            bpe,
            calibration,
        })
    }

    fn patcher(&self) -> Patcher<'_> {
        let mut p = Patcher::new(&self.patching);
        if let Some(e) = &self.entropy {
            p = p.with_entropy(e);
        }
        if let Some(b) = &self.bpe {
            p = p.with_bpe(b);
        }
        p
    }

    fn describe(&self, r: &mut Report) {
        r.row("scheme", self.patching.scheme.name());
        match self.patching.scheme {
            PatchScheme::Strided { k } => {
                r.row("k", k);
            }
            PatchScheme::EntropyGlobal { theta } | PatchScheme::EntropyMonotonic { theta } => {
                r.row("theta", theta);
            }
            PatchScheme::EntropyCombined { global, relative } => {
                r.row("theta", global).row("theta_relative", relative);
            }
            _ => {}
        }
        if let Some(c) = &self.calibration {
            r.row("calibrated_target", c.target).row("calibrated_mean", c.achieved_mean);
        }
    }
}

pub fn train_entropy(ctx: &Ctx<'_>) -> Result<Report> {
    let docs = train_docs(ctx)?;
    let e = &ctx.cfg.entropy;
    let model = EntropyModel::train(&docs, e.order, Smoothing { alpha: e.alpha })?;
    let path = ctx.dir.file("entropy.bin");
    model.save(&path)?;
    let size = std::fs::metadata(&path).map_err(|err| io(&path, err))?.len();
    let mut r = Report::new();
    r.row("order", e.order)
        .row("alpha", e.alpha)
        .row("docs", docs.len())
        .row("train_bytes", total_bytes(&docs))
        .row("contexts", json!(model.context_counts()))
        .row("model_file", path.display().to_string())
        .row("model_bytes", size);
    Ok(r)
}

pub fn calibrate(ctx: &Ctx<'_>, monotonic: bool) -> Result<Report> {
    let cfg = ctx.cfg;
    let target = cfg
        .entropy
        .target_patch_size
        .ok_or_else(|| Error::Config("calibrate needs --target-patch-size".into()))?;
    let docs = train_docs(ctx)?;
    let (fit, held): (Vec<Document>, Vec<Document>) = {
        let (a, b) = blt_core::corpus::split_alternating(&docs);
        (a, b)
    };
    let model = match &cfg.entropy.model_path {
        Some(p) => EntropyModel::load(p)?,
        None => {
            let m = EntropyModel::train(&fit, cfg.entropy.order, Smoothing { alpha: cfg.entropy.alpha })?;
            m.save(ctx.dir.file("entropy.bin"))?;
            m
        }
    };
    let kind = if monotonic { ThresholdKind::Monotonic } else { ThresholdKind::Global };
    let reset = cfg.patching.reset_on_newline;
    let c = calibrate_threshold(&model, &fit, target, kind, reset, cfg.patching.max_patch, cfg.exec)?;
    let held_traces = entropy_traces(&model, &held, reset, cfg.exec);
    let held_mean = measure_mean_patch_size(&held_traces, kind, c.theta, cfg.patching.max_patch);
    let mut r = Report::new();
    r.row("kind", if monotonic { "monotonic" } else { "global" })
        .row("target", target)
        .row("theta", c.theta)
        .row("fit_mean_patch_size", c.achieved_mean)
        .row("heldout_mean_patch_size", held_mean)
        .row("heldout_rel_error", (held_mean - target).abs() / target)
        .row("iterations", c.iterations)
        .row("monotone_observed", c.monotone_observed)
        .row("fit_bytes", total_bytes(&fit))
        .row("heldout_bytes", total_bytes(&held));
    ctx.dir.write("calibration.json", serde_json::to_string_pretty(&r.to_json()).expect("json"))?;
    Ok(r)
}

pub fn patch(ctx: &Ctx<'_>, input: &Path) -> Result<Report> {
    let docs = load(ctx, input)?;
    let fit = optional_train_docs(ctx)?.unwrap_or_else(|| docs.clone());
    let assets = Assets::prepare(ctx, &fit, false)?;
    let patcher = assets.patcher();
    let patched: Vec<_> = ctx.cfg.exec.map(&docs, |d| patcher.patch(&d.bytes));
    let tsv = export_boundaries(docs.iter().zip(&patched).map(|(d, p)| (d.id.as_str(), &p.boundaries)));
    ctx.dir.write("boundaries.tsv", &tsv)?;
    let stats = corpus_patch_stats(patched.iter().map(|p| &p.boundaries));
    let mut r = Report::new();
    assets.describe(&mut r);
    r.row("docs", docs.len())
        .row("bytes", stats.n_bytes)
        .row("patches", stats.n_patches)
        .row("mean_patch_size", stats.mean_patch_size)
        .row("cap_hits", patched.iter().map(|p| p.cap_hits).sum::<usize>())
        .row("degenerate_docs", patched.iter().filter(|p| p.degenerate).count());
    r.body = Some(tsv);
    Ok(r)
}

/// Split off held-out documents: the eval file when configured, otherwise every
/// `holdout_every`-th document. Held-out documents identical to a training
/// document are dropped so the two sets stay disjoint.
fn split_eval(ctx: &Ctx<'_>, docs: Vec<Document>) -> Result<(Vec<Document>, Vec<Document>)> {
    if let Some(p) = &ctx.cfg.data.eval {
        let eval = load(ctx, p)?;
        check_disjoint(&content_hashes(&docs), &eval)?;
        return Ok((docs, eval));
    }
    let n = ctx.cfg.data.holdout_every;
    let (mut train, mut eval) = (Vec::new(), Vec::new());
    for (i, d) in docs.into_iter().enumerate() {
        if i % n == n - 1 {
            eval.push(d);
        } else {
            train.push(d);
        }
    }
    let hashes = content_hashes(&train);
    let before = eval.len();
    eval.retain(|d| !hashes.contains(&d.content_hash()));
    if eval.len() < before {
        log::info!("dropped {} held-out documents duplicated in training data", before - eval.len());
    }
    Ok((train, eval))
}

struct RunLog<'a, 's> {
    metrics: BufWriter<File>,
    throughput: BufWriter<File>,
    evals: BufWriter<File>,
    dir: &'a RunDir,
    scorer: BltScorerParts<'s>,
    eval_docs: &'a [Document],
    last_eval: Option<EvalReport>,
}

struct BltScorerParts<'s> {
    patcher: Patcher<'s>,
    exec: blt_core::exec::Exec,
}

fn evaluate(trainer: &Trainer<'_>, parts: &BltScorerParts<'_>, docs: &[Document]) -> Result<EvalReport> {
    let slices = if docs.is_empty() {
        Vec::new()
    } else {
        let scorer = BltScorer::new(&trainer.model, &parts.patcher, parts.exec);
        score_slices(&scorer, &[EvalSlice { name: "heldout".into(), docs }], None)?
    };
    Ok(EvalReport {
        step: trainer.step_index(),
        slices,
        mean_patch_size: Some(trainer.corpus().stats().mean_patch_size),
        train_flops: Some(trainer.train_flops()?),
    })
}

impl RunLog<'_, '_> {
    fn record_eval(&mut self, trainer: &Trainer<'_>) -> Result<()> {
        let report = evaluate(trainer, &self.scorer, self.eval_docs)?;
        writeln!(self.evals, "{}", serde_json::to_string(&report).expect("json")).map_err(|e| io(&self.dir.file("eval.jsonl"), e))?;
        self.last_eval = Some(report);
        Ok(())
    }
}

impl TrainObserver for RunLog<'_, '_> {
    fn on_step(&mut self, trainer: &Trainer<'_>, m: &StepMetrics, t: &Throughput) -> Result<()> {
        let path = self.dir.file("metrics.jsonl");
        writeln!(self.metrics, "{}", serde_json::to_string(m).expect("json")).map_err(|e| io(&path, e))?;
        writeln!(self.throughput, "{}", serde_json::to_string(t).expect("json")).map_err(|e| io(&path, e))?;
        let every = |n: usize| n > 0 && m.step % n == 0 && !trainer.is_done();
        if every(trainer.config.eval_every) {
            self.record_eval(trainer)?;
        }
        if every(trainer.config.checkpoint_every) {
            trainer.checkpoint().save(self.dir.file("checkpoint.bin"))?;
        }
        Ok(())
    }
}

fn create(dir: &RunDir, name: &str) -> Result<BufWriter<File>> {
    let p = dir.file(name);
    File::create(&p).map(BufWriter::new).map_err(|e| io(&p, e))
}

pub fn train(ctx: &Ctx<'_>, resume: Option<&Path>) -> Result<Report> {
    let cfg = ctx.cfg;
    let model_cfg = cfg.model_config()?;
    let (train_set, eval_set) = split_eval(ctx, train_docs(ctx)?)?;
    let eval_set = take_bytes(&eval_set, MAX_EVAL_BYTES);
    let assets = Assets::prepare(ctx, &train_set, false)?;
    let patcher = assets.patcher();
    let corpus = PatchedCorpus::build(&train_set, &patcher, cfg.exec)?;
    let model = Blt::new(model_cfg, cfg.seed)?;
    let train_hash = cfg.hash("train");
    let mut trainer = match resume {
        Some(p) => {
            let ckpt = Checkpoint::load(p)?;
            if ckpt.config_hash != train_hash {
                return Err(Error::Config(format!(
                    "checkpoint {} was written by a different configuration",
                    p.display()
                )));
            }
            Trainer::resume(model, cfg.train.clone(), &corpus, &ckpt, cfg.exec)?
        }
        None => Trainer::new(model, cfg.train.clone(), &corpus, train_hash, cfg.exec)?,
    };
    let mut log = RunLog {
        metrics: create(ctx.dir, "metrics.jsonl")?,
        throughput: create(ctx.dir, "throughput.jsonl")?,
        evals: create(ctx.dir, "eval.jsonl")?,
        dir: ctx.dir,
        scorer: BltScorerParts {
            patcher: assets.patcher(),
            exec: cfg.exec,
        },
        eval_docs: &eval_set,
        last_eval: None,
    };
    if trainer.step_index() == 0 {
        log.record_eval(&trainer)?;
    }
    let outcome = trainer.run(&mut log);
    let flush = |w: &mut BufWriter<File>| w.flush().map_err(|e| io(&ctx.dir.path, e));
    flush(&mut log.metrics)?;
    flush(&mut log.throughput)?;
    outcome?;
    trainer.checkpoint().save(ctx.dir.file("checkpoint.bin"))?;
    if trainer.step_index() > 0 {
        log.record_eval(&trainer)?;
    }
    flush(&mut log.evals)?;
    let stats = corpus.stats();
    let mut r = Report::new();
    assets.describe(&mut r);
    r.row("steps", trainer.step_index())
        .row("skipped_steps", trainer.skipped_steps())
        .row("train_docs", train_set.len())
        .row("train_bytes", corpus.n_bytes())
        .row("eval_docs", eval_set.len())
        .row("mean_patch_size", stats.mean_patch_size)
        .row("cap_hits", corpus.cap_hits)
        .row("bytes_seen", trainer.bytes_seen())
        .row("train_flops", trainer.train_flops()?)
        .row("threads", cfg.exec.threads());
    if let Some(s) = log.last_eval.as_ref().and_then(|e| e.slices.first()) {
        r.row("eval_bpb", s.bpb).row("eval_loss_nats", s.loss_nats);
    }
    r.row("checkpoint", ctx.dir.file("checkpoint.bin").display().to_string());
    Ok(r)
}

fn slice_rows(r: &mut Report, slices: &[SliceReport]) {
    for s in slices {
        let p = if slices.len() == 1 { String::new() } else { format!("{}.", s.name) };
        r.row(&format!("{p}bpb"), s.bpb)
            .row(&format!("{p}loss_nats"), s.loss_nats)
            .row(&format!("{p}bytes"), s.n_bytes)
            .row(&format!("{p}docs"), s.n_docs);
    }
}

pub fn eval_bpb(ctx: &Ctx<'_>, checkpoint: Option<&Path>, uniform: bool) -> Result<Report> {
    let cfg = ctx.cfg;
    let (name, docs) = match (&cfg.data.eval, &cfg.data.train) {
        (Some(p), _) => (p.clone(), load(ctx, p)?),
        (None, Some(p)) => (p.clone(), train_docs(ctx)?),
        (None, None) => return Err(Error::Config("no evaluation corpus; pass --eval or --corpus".into())),
    };
    let slice_name = name.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let slices = [EvalSlice {
        name: slice_name,
        docs: &docs,
    }];
    let mut r = Report::new();
    let reports = if uniform || checkpoint.is_none() {
        r.row("scorer", "uniform");
        score_slices(&UniformScorer, &slices, None)?
    } else {
        let ckpt = Checkpoint::load(checkpoint.expect("checked"))?;
        let mut model = Blt::new(cfg.model_config()?, 0)?;
        ckpt.restore_params(&mut model)?;
        let fit = optional_train_docs(ctx)?.unwrap_or_else(|| docs.clone());
        let assets = Assets::prepare(ctx, &fit, false)?;
        let patcher = assets.patcher();
        r.row("scorer", "model").row("checkpoint_step", ckpt.step);
        assets.describe(&mut r);
        let scorer: &dyn ByteScorer = &BltScorer::new(&model, &patcher, cfg.exec);
        score_slices(scorer, &slices, None)?
    };
    slice_rows(&mut r, &reports);
    Ok(r)
}

fn patch_size(ctx: &Ctx<'_>) -> Result<Q> {
    parse_ratio(&ctx.cfg.flops.patch_size)
}

pub fn flops(ctx: &Ctx<'_>) -> Result<Report> {
    let model = ctx.cfg.model_config()?;
    let n_p = patch_size(ctx)?;
    let n_ctx = Q::from_integer(ctx.cfg.flops.n_ctx as i128);
    let rep = blt_flops_per_byte(&model, n_ctx, n_p)?;
    let params = param_counts(&model);
    let mut r = Report::new();
    r.row("n_ctx", ctx.cfg.flops.n_ctx).row("patch_size", n_p.to_string());
    for (name, v) in rep.components() {
        r.row(name, to_f64(v));
    }
    r.row("total_forward", to_f64(rep.total_forward()))
        .row("total_train", to_f64(rep.total_train()))
        .row("exact", rep.to_json())
        .row("params_non_embedding", params.non_embedding())
        .row("params_embedding", params.embedding)
        .row("params_total", params.total());
    Ok(r)
}

pub fn size_match(ctx: &Ctx<'_>, reference_patch_size: &str) -> Result<Report> {
    let model = ctx.cfg.model_config()?;
    let n_p = patch_size(ctx)?;
    let n_ctx = Q::from_integer(ctx.cfg.flops.n_ctx as i128);
    let target = match ctx.cfg.flops.target {
        Some(t) => blt_core::flops::ratio_from_f64(t),
        None => blt_flops_per_byte(&model, n_ctx, parse_ratio(reference_patch_size)?)?.total_forward(),
    };
    let template = SizeTemplate::around(&model);
    let m = solve_size_match(target, &template, n_ctx, n_p)?;
    let (rounded, rounded_flops) = m.rounded(ctx.cfg.flops.width_multiple, n_ctx, n_p)?;
    let mut r = Report::new();
    r.row("target", to_f64(target))
        .row("patch_size", n_p.to_string())
        .row("h_g", to_f64(m.shape.global.h))
        .row("l_g", to_f64(m.shape.global.layers))
        .row("flops_per_byte", to_f64(m.flops_per_byte))
        .row("iterations", m.iterations)
        .row("rounded_h_g", to_f64(rounded.global.h))
        .row("rounded_l_g", to_f64(rounded.global.layers))
        .row("rounded_heads_g", to_f64(rounded.global.heads))
        .row("rounded_flops_per_byte", to_f64(rounded_flops));
    Ok(r)
}

pub fn noise(ctx: &Ctx<'_>, input: &Path) -> Result<Report> {
    let text = std::fs::read_to_string(input).map_err(|e| io(input, e))?;
    let n = &ctx.cfg.noise;
    let base = NoiseSpec::new(n.strategy, ctx.cfg.seed);
    let spec = NoiseSpec {
        rate: n.rate.unwrap_or(base.rate),
        target: n.target,
        ..base
    };
    spec.validate()?;
    let mut out = String::new();
    let mut chars_in = 0;
    let mut chars_out = 0;
    for (i, line) in text.lines().enumerate() {
        let noised = apply_noise(line, &NoiseSpec { seed: spec.seed.wrapping_add(i as u64), ..spec });
        chars_in += line.chars().count();
        chars_out += noised.chars().count();
        out.push_str(&noised);
        out.push('\n');
    }
    ctx.dir.write("noised.txt", &out)?;
    let mut r = Report::new();
    r.row("strategy", serde_json::to_value(spec.strategy).expect("json"))
        .row("rate", spec.rate)
        .row("lines", text.lines().count())
        .row("chars_in", chars_in)
        .row("chars_out", chars_out);
    r.body = Some(out);
    Ok(r)
}

pub fn check_incremental(ctx: &Ctx<'_>, prefixes: usize) -> Result<Report> {
    let docs = train_docs(ctx)?;
    let assets = Assets::prepare(ctx, &docs, false)?;
    let patcher = assets.patcher();
    let violations = check_incrementality_corpus(|b| patcher.boundaries(b), &docs, prefixes, ctx.cfg.seed, ctx.cfg.exec);
    let mut r = Report::new();
    assets.describe(&mut r);
    r.row("prefixes", prefixes).row("violations", violations.len());
    if let Some(v) = violations.first() {
        let doc = &docs[v.doc];
        r.row("first_violation_doc", doc.id.clone())
            .row("first_violation_cut", v.cut)
            .row("first_violation_positions", json!(v.positions));
    }
    if let Some(bpe) = &assets.bpe {
        match find_incrementality_witness(bpe, &bpe.alphabet_hint(8), 5) {
            Some((w, cut)) => {
                r.row("witness", String::from_utf8_lossy(&w).into_owned()).row("witness_cut", cut);
            }
            None => {
                r.row("witness", serde_json::Value::Null);
            }
        }
    }
    let rows: Vec<_> = violations
        .iter()
        .map(|v| json!({ "doc": docs[v.doc].id, "cut": v.cut, "positions": v.positions }))
        .collect();
    ctx.dir.write("violations.json", serde_json::to_string_pretty(&rows).expect("json"))?;
    Ok(r)
}

pub fn trace(ctx: &Ctx<'_>, input: &Path, doc: usize) -> Result<Report> {
    let docs = load(ctx, input)?;
    let target = docs
        .get(doc)
        .ok_or_else(|| Error::Empty(format!("{} has no document {doc}", input.display())))?;
    let fit = optional_train_docs(ctx)?.unwrap_or_else(|| docs.clone());
    let assets = Assets::prepare(ctx, &fit, true)?;
    let model = assets.entropy.as_ref().expect("entropy model forced");
    let t = entropy_trace(model, &target.bytes, ctx.cfg.patching.reset_on_newline);
    let b = assets.patcher().boundaries(&target.bytes);
    let tsv = blt_core::entropy::export_trace(&t, &target.bytes, b.starts());
    ctx.dir.write("trace.tsv", &tsv)?;
    let mean = if t.values.is_empty() { 0.0 } else { t.values.iter().sum::<f64>() / t.values.len() as f64 };
    let mut r = Report::new();
    assets.describe(&mut r);
    r.row("doc", target.id.clone())
        .row("bytes", target.bytes.len())
        .row("patches", b.n_patches())
        .row("mean_entropy_nats", mean);
    r.body = Some(tsv);
    Ok(r)
}
