//! `blt`: batch command-line harness for the byte latent transformer toolkit.
//!
//! Every command resolves one [`config::RunConfig`] (file plus flag overrides),
//! writes it with its artifacts into a fresh run directory named by the
//! configuration hash, and prints a text table or, with `--json`, a JSON report.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.

mod commands;
mod config;
mod report;
mod rundir;

use std::path::PathBuf;
use std::process::ExitCode;

use blt_core::exec::Exec;
use blt_core::patcher::PatchScheme;
use blt_core::Error;
use clap::{Args, Parser, Subcommand};

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "blt", version, about = "Byte latent transformer toolkit")]
struct Cli {
    /// TOML run configuration; flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print the report as JSON.
    #[arg(long, global = true)]
    json: bool,
    /// Replace an earlier run directory with the same configuration hash.
    #[arg(long, global = true)]
    overwrite: bool,
    /// Root directory for run directories.
    #[arg(long, global = true, env = "BLT_RUN_ROOT", default_value = "runs")]
    run_root: PathBuf,
    /// Run single-threaded.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default, Clone)]
struct DataArgs {
    /// Training corpus (plain text one document per line, or JSONL; `.gz` accepted).
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Held-out corpus.
    #[arg(long)]
    eval: Option<PathBuf>,
    /// `plain` or `jsonl`.
    #[arg(long)]
    format: Option<String>,
    /// Use at most this many bytes of the training corpus.
    #[arg(long)]
    max_bytes: Option<usize>,
}

#[derive(Args, Debug, Default, Clone)]
struct SchemeArgs {
    /// strided, space, entropy, entropy-monotonic, entropy-combined or bpe.
    #[arg(long)]
    scheme: Option<String>,
    /// Stride of the strided scheme.
    #[arg(long)]
    k: Option<usize>,
    /// Entropy threshold in nats (global threshold for entropy-combined).
    #[arg(long)]
    theta: Option<f64>,
    /// Relative threshold of entropy-combined.
    #[arg(long)]
    theta_relative: Option<f64>,
    /// Calibrate the entropy threshold to this mean patch size.
    #[arg(long)]
    target_patch_size: Option<f64>,
    /// Trained entropy model file.
    #[arg(long)]
    entropy_model: Option<PathBuf>,
    /// Context order of an entropy model trained on the fly.
    #[arg(long)]
    order: Option<usize>,
    #[arg(long)]
    reset_newline: bool,
    /// Longest allowed patch in bytes (0 disables the cap).
    #[arg(long)]
    max_patch: Option<usize>,
    /// Merges of a BPE trained on the fly.
    #[arg(long)]
    bpe_merges: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the lookup-table entropy model.
    TrainEntropy {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        order: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Find the entropy threshold reaching a target mean patch size.
    Calibrate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        scheme: SchemeArgs,
        /// Calibrate the monotonic (jump) threshold instead of the global one.
        #[arg(long)]
        monotonic: bool,
    },
    /// Patch a corpus and export the boundaries.
    Patch {
        /// File to patch (one document per line).
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        scheme: SchemeArgs,
    },
    /// Train a model.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        scheme: SchemeArgs,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        model_preset: Option<String>,
        /// Continue from a checkpoint file.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Bits per byte of a checkpoint or the uniform predictor.
    EvalBpb {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        scheme: SchemeArgs,
        #[arg(long, conflicts_with = "uniform")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        uniform: bool,
        #[arg(long)]
        model_preset: Option<String>,
    },
    /// Forward FLOPs per byte of the configured model.
    Flops {
        #[arg(long)]
        model_preset: Option<String>,
        #[arg(long)]
        n_ctx: Option<usize>,
        #[arg(long)]
        patch_size: Option<String>,
    },
    /// Latent width matching a FLOPs-per-byte target.
    SizeMatch {
        #[arg(long)]
        model_preset: Option<String>,
        #[arg(long)]
        n_ctx: Option<usize>,
        /// Mean patch size of the solution.
        #[arg(long)]
        patch_size: Option<String>,
        /// Target forward FLOPs per byte; defaults to the configured model at `--reference-patch-size`.
        #[arg(long)]
        target: Option<f64>,
        #[arg(long, default_value = "4.5")]
        reference_patch_size: String,
    },
    /// Apply character-level noise to each line of a file.
    Noise {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        strategy: Option<String>,
        #[arg(long)]
        rate: Option<f64>,
    },
    /// Count incremental-patching violations over random prefixes.
    CheckIncremental {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        scheme: SchemeArgs,
        #[arg(long, default_value_t = 1000)]
        prefixes: usize,
    },
    /// Per-byte entropies and patch starts of one document.
    Trace {
        /// File whose document is traced.
        #[arg(long)]
        input: PathBuf,
        /// Index of the document within `--input`.
        #[arg(long, default_value_t = 0)]
        doc: usize,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        scheme: SchemeArgs,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::TrainEntropy { .. } => "train-entropy",
            Command::Calibrate { .. } => "calibrate",
            Command::Patch { .. } => "patch",
            Command::Train { resume: Some(_), .. } => "train-resume",
            Command::Train { .. } => "train",
            Command::EvalBpb { .. } => "eval-bpb",
            Command::Flops { .. } => "flops",
            Command::SizeMatch { .. } => "size-match",
            Command::Noise { .. } => "noise",
            Command::CheckIncremental { .. } => "check-incremental",
            Command::Trace { .. } => "trace",
        }
    }
}

fn apply_data(cfg: &mut RunConfig, d: &DataArgs) -> blt_core::Result<()> {
    if let Some(p) = &d.corpus {
        cfg.data.train = Some(p.clone());
    }
    if let Some(p) = &d.eval {
        cfg.data.eval = Some(p.clone());
    }
    if let Some(f) = &d.format {
        cfg.data.format = f.parse()?;
    }
    if let Some(n) = d.max_bytes {
        cfg.data.max_train_bytes = Some(n);
    }
    Ok(())
}

fn apply_scheme(cfg: &mut RunConfig, s: &SchemeArgs) -> blt_core::Result<()> {
    let current_theta = match cfg.patching.scheme {
        PatchScheme::EntropyGlobal { theta } | PatchScheme::EntropyMonotonic { theta } => theta,
        PatchScheme::EntropyCombined { global, .. } => global,
        _ => 1.0,
    };
    let theta = s.theta.unwrap_or(current_theta);
    if let Some(name) = &s.scheme {
        cfg.patching.scheme = match name.as_str() {
            "strided" => PatchScheme::Strided { k: s.k.unwrap_or(4) },
            "space" => PatchScheme::Space,
            "entropy" | "entropy-global" => PatchScheme::EntropyGlobal { theta },
            "entropy-monotonic" => PatchScheme::EntropyMonotonic { theta },
            "entropy-combined" => PatchScheme::EntropyCombined {
                global: theta,
                relative: s.theta_relative.unwrap_or(theta),
            },
            "bpe" => PatchScheme::Bpe,
            other => return Err(Error::Config(format!("unknown patching scheme '{other}'"))),
        };
    } else {
        match &mut cfg.patching.scheme {
            PatchScheme::Strided { k } => *k = s.k.unwrap_or(*k),
            PatchScheme::EntropyGlobal { theta: t } | PatchScheme::EntropyMonotonic { theta: t } => *t = theta,
            PatchScheme::EntropyCombined { global, relative } => {
                *global = theta;
                *relative = s.theta_relative.unwrap_or(*relative);
            }
            _ => {}
        }
    }
    if let Some(t) = s.target_patch_size {
        cfg.entropy.target_patch_size = Some(t);
    }
    if let Some(p) = &s.entropy_model {
        cfg.entropy.model_path = Some(p.clone());
    }
    if let Some(o) = s.order {
        cfg.entropy.order = o;
    }
    if s.reset_newline {
        cfg.patching.reset_on_newline = true;
    }
    if let Some(m) = s.max_patch {
        cfg.patching.max_patch = (m > 0).then_some(m);
    }
    if let Some(m) = s.bpe_merges {
        cfg.bpe.merges = m;
    }
    Ok(())
}

fn set_preset(cfg: &mut RunConfig, preset: &Option<String>) {
    if let Some(p) = preset {
        cfg.model_preset = p.clone();
        cfg.model = None;
    }
}

fn resolve(cli: &Cli) -> blt_core::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
        cfg.train.seed = s;
    }
    if cli.sequential {
        cfg.exec = Exec::Sequential;
    }
    match &cli.command {
        Command::TrainEntropy { data, order, alpha } => {
            apply_data(&mut cfg, data)?;
            cfg.entropy.order = order.unwrap_or(cfg.entropy.order);
            cfg.entropy.alpha = alpha.unwrap_or(cfg.entropy.alpha);
        }
        Command::Calibrate { data, scheme, monotonic } => {
            apply_data(&mut cfg, data)?;
            apply_scheme(&mut cfg, scheme)?;
            let theta = 1.0;
            cfg.patching.scheme = if *monotonic {
                PatchScheme::EntropyMonotonic { theta }
            } else {
                PatchScheme::EntropyGlobal { theta }
            };
        }
        Command::Patch { data, scheme, .. }
        | Command::CheckIncremental { data, scheme, .. }
        | Command::Trace { data, scheme, .. } => {
            apply_data(&mut cfg, data)?;
            apply_scheme(&mut cfg, scheme)?;
        }
        Command::Train {
            data,
            scheme,
            steps,
            model_preset,
            ..
        } => {
            apply_data(&mut cfg, data)?;
            apply_scheme(&mut cfg, scheme)?;
            set_preset(&mut cfg, model_preset);
            cfg.train.steps = steps.unwrap_or(cfg.train.steps);
        }
        Command::EvalBpb {
            data,
            scheme,
            model_preset,
            ..
        } => {
            apply_data(&mut cfg, data)?;
            apply_scheme(&mut cfg, scheme)?;
            set_preset(&mut cfg, model_preset);
        }
        Command::Flops {
            model_preset,
            n_ctx,
            patch_size,
        }
        | Command::SizeMatch {
            model_preset,
            n_ctx,
            patch_size,
            ..
        } => {
            set_preset(&mut cfg, model_preset);
            cfg.flops.n_ctx = n_ctx.unwrap_or(cfg.flops.n_ctx);
            if let Some(p) = patch_size {
                cfg.flops.patch_size = p.clone();
            }
            if let Command::SizeMatch { target: Some(t), .. } = &cli.command {
                cfg.flops.target = Some(*t);
            }
        }
        Command::Noise { strategy, rate, .. } => {
            if let Some(s) = strategy {
                cfg.noise.strategy = s.parse()?;
            }
            if let Some(r) = rate {
                cfg.noise.rate = Some(*r);
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::MalformedRecord { .. } | Error::Format(_) | Error::Empty(_) | Error::Leakage(_) => 3,
        Error::Diverged { .. } | Error::NonFinite(_) => 4,
        _ => 2,
    }
}

fn run(cli: &Cli) -> blt_core::Result<report::Report> {
    let cfg = resolve(cli)?;
    let name = cli.command.name();
    let hash = config::hex(&cfg.hash(&format!("{name}\0{:?}", cli.command)));
    let dir = rundir::RunDir::create(&cli.run_root, name, &hash, cli.overwrite)?;
    dir.write("config.toml", cfg.to_toml())?;
    let ctx = commands::Ctx { cfg: &cfg, dir: &dir };
    let mut report = match &cli.command {
        Command::TrainEntropy { .. } => commands::train_entropy(&ctx),
        Command::Calibrate { monotonic, .. } => commands::calibrate(&ctx, *monotonic),
        Command::Patch { input, .. } => commands::patch(&ctx, input),
        Command::Train { resume, .. } => commands::train(&ctx, resume.as_deref()),
        Command::EvalBpb { checkpoint, uniform, .. } => commands::eval_bpb(&ctx, checkpoint.as_deref(), *uniform),
        Command::Flops { .. } => commands::flops(&ctx),
        Command::SizeMatch { reference_patch_size, .. } => commands::size_match(&ctx, reference_patch_size),
        Command::Noise { input, .. } => commands::noise(&ctx, input),
        Command::CheckIncremental { prefixes, .. } => commands::check_incremental(&ctx, *prefixes),
        Command::Trace { input, doc, .. } => commands::trace(&ctx, input, *doc),
    }?;
    report.row("config_hash", hash.clone()).row("run_dir", dir.path.display().to_string());
    dir.write("report.json", serde_json::to_string_pretty(&report.to_json()).expect("json"))?;
    Ok(report)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(report) => {
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&report.to_json()).expect("json"));
            } else {
                print!("{}", report.to_text());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
