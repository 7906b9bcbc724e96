use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use saqm::data::synth;
use saqm::error::CheckpointError;
use saqm::eval::{evaluate, render_csv, render_report, EvalSplit};
use saqm::model::checkpoint;
use saqm::train::{parse_kv, train_prepared, TrainData};
use saqm::{ConfigId, Domain, Manifest, SaqmParams, SynthSpec, TrainConfig};

#[derive(Parser)]
#[command(name = "saqm", version, about = "Self-attention quality metric: synthesis, training, scoring, evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with a manifest.
    Synth(SynthArgs),
    /// Train a model under configuration 1-4.
    Train(TrainArgs),
    /// Score images with a trained checkpoint.
    Score(ScoreArgs),
    /// Correlate predictions with MOS on one or more manifests.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum DomainArg {
    Source,
    Target,
    Both,
}

#[derive(clap::Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 25)]
    references: usize,
    /// Distorted versions per reference.
    #[arg(long, default_value_t = 5)]
    levels: usize,
    #[arg(long, default_value_t = 64)]
    size: usize,
    /// Defaults to $SAQM_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value = "source")]
    domain: DomainArg,
    #[arg(long, default_value_t = 0.25)]
    test_fraction: f64,
}

#[derive(clap::Args)]
struct TrainArgs {
    /// Configuration id 1-4 (may come from --config-file instead).
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    config: Option<u8>,
    #[arg(long)]
    source: Option<PathBuf>,
    #[arg(long)]
    target: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    /// Domain-loss weight.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    lambda_grl: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    labeled_fraction: Option<f64>,
    #[arg(long)]
    stride: Option<usize>,
    /// Trunk width (multiple of 8).
    #[arg(long)]
    channels: Option<usize>,
    /// `key = value` file; flags override its values.
    #[arg(long)]
    config_file: Option<PathBuf>,
    /// Run-log CSV; defaults to `<out>.log.csv`.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(clap::Args)]
struct ScoreArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long, required = true)]
    image: Vec<PathBuf>,
    #[arg(long, default_value_t = 32)]
    stride: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Test,
    Full,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long, required = true)]
    ckpt: Vec<PathBuf>,
    #[arg(long, required = true)]
    manifest: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    #[arg(long, default_value_t = 32)]
    stride: usize,
    /// Configuration id shown in the report, one per checkpoint.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    config: Vec<u8>,
    /// Writes `<PREFIX>.txt` and `<PREFIX>.csv`; a trailing `.txt` is dropped
    /// from PREFIX.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var("SAQM_SEED") {
        Ok(v) => Ok(Some(v.trim().parse().map_err(|_| saqm::Error::Config(format!("SAQM_SEED={v:?} is not an integer")))?)),
        Err(_) => Ok(None),
    }
}

fn synth_cmd(args: SynthArgs) -> Result<()> {
    let seed = match args.seed {
        Some(s) => s,
        None => env_seed()?.unwrap_or(0),
    };
    let spec = |domain| SynthSpec {
        test_fraction: args.test_fraction,
        ..SynthSpec::new(args.references, args.levels, args.size, seed, domain)
    };
    let jobs: Vec<(SynthSpec, PathBuf)> = match args.domain {
        DomainArg::Source => vec![(spec(Domain::Source), args.out.clone())],
        DomainArg::Target => vec![(spec(Domain::Target), args.out.clone())],
        DomainArg::Both => vec![
            (spec(Domain::Source), args.out.join("source")),
            (spec(Domain::Target), args.out.join("target")),
        ],
    };
    // Validate everything before touching the filesystem.
    for (s, _) in &jobs {
        s.validate()?;
    }
    for (s, dir) in &jobs {
        eprintln!("synth: {} domain, seed {seed}, {} references x {} levels -> {}", s.domain, s.n_references, s.levels, dir.display());
        let manifest = synth::write_dataset(s, dir)?;
        println!("{}\t{}", dir.join("manifest.csv").display(), manifest.rows.len());
    }
    Ok(())
}

fn build_config(args: &TrainArgs) -> Result<TrainConfig> {
    let file = match &args.config_file {
        Some(p) => parse_kv(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => Vec::new(),
    };
    let file_config = file.iter().find(|(k, _)| k == "config").map(|(_, v)| v.clone());
    let id = match (args.config, file_config) {
        (Some(n), _) => n,
        (None, Some(v)) => v.parse().map_err(|_| saqm::Error::Config(format!("invalid config id {v:?}")))?,
        (None, None) => return Err(saqm::Error::Config("no configuration id: pass --config or set it in --config-file".into()).into()),
    };
    let mut cfg = TrainConfig::new(ConfigId::from_number(id)?);
    if let Some(seed) = env_seed()? {
        cfg.seed = seed;
    }
    for (k, v) in file.iter().filter(|(k, _)| k != "config") {
        cfg.set(k, v)?;
    }
    let flags: [(&str, Option<String>); 9] = [
        ("lr", args.lr.map(|v| v.to_string())),
        ("epochs", args.epochs.map(|v| v.to_string())),
        ("batch_size", args.batch.map(|v| v.to_string())),
        ("lambda_domain", args.lambda.map(|v| v.to_string())),
        ("lambda_grl", args.lambda_grl.map(|v| v.to_string())),
        ("seed", args.seed.map(|v| v.to_string())),
        ("labeled_target_fraction", args.labeled_fraction.map(|v| v.to_string())),
        ("stride", args.stride.map(|v| v.to_string())),
        ("channels", args.channels.map(|v| v.to_string())),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            cfg.set(k, &v)?;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_all(path: &Path) -> Result<Vec<saqm::Sample<f32>>> {
    let manifest = Manifest::read(path).with_context(|| format!("reading manifest {}", path.display()))?;
    Ok(manifest.load_samples(|_| true)?)
}

fn train_cmd(args: TrainArgs) -> Result<()> {
    let cfg = build_config(&args)?;
    eprintln!("train: config {} seed {} lr {} epochs {} batch {} channels {}", cfg.config, cfg.seed, cfg.lr, cfg.epochs, cfg.batch_size, cfg.channels);
    let source = args.source.as_deref().map(load_all).transpose()?;
    let target = args.target.as_deref().map(load_all).transpose()?;
    let data = TrainData::prepare(&cfg, source.as_deref(), target.as_deref())?;
    eprintln!("train: {} source patches, {} target patches", data.source.len(), data.target.len());

    let mut model = SaqmParams::<f32>::build(cfg.seed, cfg.channels)?;
    let epochs = cfg.epochs;
    let log = train_prepared(&cfg, &data, &mut model, |e| {
        let domain = match (e.loss_d, e.domain_acc) {
            (Some(d), Some(a)) => format!(" loss_d {d:.4} domain_acc {a:.3}"),
            _ => String::new(),
        };
        eprintln!("epoch {}/{epochs} loss_q {:.4}{domain} ({:.1}s)", e.epoch, e.loss_q, e.seconds);
    })?;
    if model.tensors().iter().any(|t| !t.is_finite()) {
        bail!("training diverged: non-finite parameters after {epochs} epochs");
    }
    checkpoint::save(&model, &args.out)?;
    let log_path = args.log.clone().unwrap_or_else(|| {
        let mut p = args.out.clone().into_os_string();
        p.push(".log.csv");
        PathBuf::from(p)
    });
    fs::write(&log_path, log.to_csv()).with_context(|| format!("writing {}", log_path.display()))?;
    eprintln!("train: wrote {} and {}", args.out.display(), log_path.display());
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<SaqmParams<f32>> {
    checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn score_cmd(args: ScoreArgs) -> Result<()> {
    let model = load_checkpoint(&args.ckpt)?;
    for path in &args.image {
        let image = saqm::data::load_image::<f32>(path)?;
        let score = model.image_score(&image, args.stride)?;
        println!("{}\t{score:.6}", path.display());
    }
    Ok(())
}

fn dataset_name(manifest: &Path) -> String {
    let stem = manifest.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    if stem != "manifest" {
        return stem;
    }
    manifest
        .canonicalize()
        .ok()
        .and_then(|p| p.parent().and_then(|d| d.file_name()).map(|n| n.to_string_lossy().into_owned()))
        .unwrap_or(stem)
}

fn eval_cmd(args: EvalArgs) -> Result<()> {
    if !args.config.is_empty() && args.config.len() != args.ckpt.len() {
        return Err(saqm::Error::Config(format!("{} --config values for {} checkpoints", args.config.len(), args.ckpt.len())).into());
    }
    let split = match args.split {
        SplitArg::Test => EvalSplit::Test,
        SplitArg::Full => EvalSplit::Full,
    };
    let mut datasets = Vec::new();
    for path in &args.manifest {
        let manifest = Manifest::read(path).with_context(|| format!("reading manifest {}", path.display()))?;
        let samples = manifest
            .load_samples::<f32>(|r| r.raw_mos.is_some() && (split == EvalSplit::Full || r.split == saqm::Split::Test))?;
        datasets.push((dataset_name(path), samples));
    }
    let mut reports = Vec::new();
    for (i, ckpt) in args.ckpt.iter().enumerate() {
        let model = load_checkpoint(ckpt)?;
        for (name, samples) in &datasets {
            eprintln!("eval: {} on {name} ({} images)", ckpt.display(), samples.len());
            let mut report = evaluate(&model, name, samples, split, args.stride)?;
            report.config = args.config.get(i).copied();
            report.checkpoint = ckpt.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            reports.push(report);
        }
    }
    let table = render_report(&reports);
    print!("{table}");
    if let Some(prefix) = &args.out {
        // `--out report.txt` and `--out report` name the same pair.
        let prefix = if prefix.extension().is_some_and(|e| e == "txt") { prefix.with_extension("") } else { prefix.clone() };
        let with_ext = |ext: &str| {
            let mut p = prefix.clone().into_os_string();
            p.push(ext);
            PathBuf::from(p)
        };
        fs::write(with_ext(".txt"), &table)?;
        fs::write(with_ext(".csv"), render_csv(&reports))?;
    }
    Ok(())
}

/// 2 for usage and contract errors (bad input, missing files), 1 for
/// failures while running.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<saqm::Error>() {
            return match e {
                saqm::Error::UndefinedCorrelation(_) => 1,
                _ => 2,
            };
        }
        if cause.is::<CheckpointError>() || cause.is::<std::io::Error>() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::Score(a) => score_cmd(a),
        Command::Eval(a) => eval_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

