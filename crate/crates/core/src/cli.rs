//! Command-line front end. Every subcommand is a thin wrapper over library
//! calls.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::Checkpoint;
use crate::data::format::{read_features, write_features, MAGIC};
use crate::data::{gen_synth, FeatureSet, SynthSpec};
use crate::error::{Error, Result};
use crate::eval::{evaluate, format_predictions, parse_predictions};
use crate::model::zero_shot;
use crate::ndgrad::Tensor2;
use crate::trainer::{infer, train, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;

/// Caps worker threads; `0` (the default) is the single-threaded reference
/// mode.
pub const THREADS_ENV: &str = "UNIMOS_THREADS";

#[derive(Debug, Parser)]
#[command(name = "unimos", version, about = "Unsupervised domain adaptation over pre-extracted vision/text features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train on labelled source and unlabelled target features.
    Train(TrainArgs),
    /// Predict target classes with a trained checkpoint.
    Infer(InferArgs),
    /// Nearest-text-feature predictions on raw features.
    Zeroshot(ZeroshotArgs),
    /// Write a synthetic source/target/text benchmark.
    GenSynth(GenSynthArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    text: PathBuf,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Write the report here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Target ground truth, used only for per-epoch accuracy reporting.
    #[arg(long)]
    target_truth: Option<PathBuf>,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    #[arg(long, default_value_t = 0.01)]
    gamma: f64,
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    /// Momentum of the prediction-prior estimate.
    #[arg(long, default_value_t = 0.99)]
    momentum: f64,
    #[arg(long, default_value_t = 0.3)]
    lambda: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 3e-3)]
    lr0: f64,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 0.9)]
    sgd_momentum: f64,
    #[arg(long, default_value_t = 0.0)]
    weight_decay: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Logit temperature of the vision-language model.
    #[arg(long, default_value_t = 0.01)]
    temperature: f64,
    #[arg(long, default_value_t = 256)]
    bottleneck: usize,
    #[arg(long, default_value_t = 256)]
    hidden: usize,
    #[arg(long, default_value_t = 1)]
    cluster_rounds: usize,
    #[arg(long)]
    no_debias: bool,
    #[arg(long)]
    no_ortho: bool,
    #[arg(long)]
    no_im: bool,
    #[arg(long)]
    no_distill: bool,
    /// Fix the ensemble weight at 0.5.
    #[arg(long)]
    fixed_w: bool,
    #[arg(long)]
    no_discriminator: bool,
    #[arg(long)]
    reset_wgen_half: bool,
    #[arg(long)]
    bce_sep_on_source: bool,
}

impl ConfigArgs {
    fn to_config(&self) -> TrainConfig {
        TrainConfig {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            tau: self.tau,
            momentum: self.momentum,
            lambda: self.lambda,
            batch_size: self.batch_size,
            lr0: self.lr0,
            epochs: self.epochs,
            sgd_momentum: self.sgd_momentum,
            weight_decay: self.weight_decay,
            seed: self.seed,
            temperature: self.temperature,
            bottleneck: self.bottleneck,
            hidden: self.hidden,
            cluster_rounds: self.cluster_rounds,
            enable_debias: !self.no_debias,
            enable_ortho: !self.no_ortho,
            enable_im: !self.no_im,
            enable_distill: !self.no_distill,
            learnable_w: !self.fixed_w,
            enable_discriminator: !self.no_discriminator,
            reset_wgen_half: self.reset_wgen_half,
            bce_sep_on_source: self.bce_sep_on_source,
        }
    }
}

#[derive(Debug, Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    features: PathBuf,
    /// Predictions file, one class index per line.
    #[arg(long)]
    out: PathBuf,
    /// Override the checkpoint's mixup weight.
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Debug, Args)]
struct ZeroshotArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    text: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GenSynthArgs {
    /// Writes `<prefix>.source.umfs`, `<prefix>.target.umfs`,
    /// `<prefix>.text.umfs` and `<prefix>.truth.txt`.
    #[arg(long)]
    prefix: PathBuf,
    #[arg(long, default_value_t = SynthSpec::default().classes)]
    classes: usize,
    #[arg(long, default_value_t = SynthSpec::default().dim)]
    dim: usize,
    #[arg(long, default_value_t = SynthSpec::default().per_domain)]
    per_domain: usize,
    #[arg(long, default_value_t = SynthSpec::default().proto_scale)]
    proto_scale: f64,
    #[arg(long, default_value_t = SynthSpec::default().noise)]
    noise: f64,
    #[arg(long, default_value_t = SynthSpec::default().rotation)]
    rotation: f64,
    #[arg(long, default_value_t = SynthSpec::default().translation)]
    translation: f64,
    #[arg(long, default_value_t = SynthSpec::default().gap)]
    gap: f64,
    /// Keep raw row norms instead of scaling vision rows to unit length.
    #[arg(long)]
    raw_rows: bool,
    #[arg(long, default_value_t = SynthSpec::default().seed)]
    seed: u64,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Predictions file, one class index per line.
    #[arg(long)]
    pred: PathBuf,
    /// Truth as a text file or a labelled feature file.
    #[arg(long)]
    truth: PathBuf,
    /// Class count; inferred from the truth when omitted.
    #[arg(long)]
    classes: Option<usize>,
}

/// Runs the CLI on `argv` (including the program name) and returns the
/// process exit code.
pub fn cli_main<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    if let Err(msg) = worker_threads() {
        eprintln!("error: {msg}");
        return EXIT_USAGE;
    }
    match run(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Divergence { .. } => EXIT_DIVERGENCE,
        _ => EXIT_DATA,
    }
}

/// Parses the thread cap. Every code path is currently sequential, so any
/// valid value yields the reference results.
pub fn worker_threads() -> std::result::Result<usize, String> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(0),
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| format!("{THREADS_ENV} must be a non-negative integer, got `{v}`")),
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Train(a) => cmd_train(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Zeroshot(a) => cmd_zeroshot(a),
        Command::GenSynth(a) => cmd_gen_synth(a),
        Command::Eval(a) => cmd_eval(a),
    }
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cfg = a.cfg.to_config();
    let source = read_features(&a.source)?;
    let target = read_features(&a.target)?;
    let text = read_text(&a.text)?;
    let truth = a.target_truth.as_deref().map(read_truth).transpose()?;
    let outcome = train(&source, &target, &text, &cfg, truth.as_deref())?;
    outcome.checkpoint(&cfg).save(&a.out)?;
    let report = outcome.report.to_string();
    match &a.report {
        Some(p) => write_text(p, &report),
        None => {
            print!("{report}");
            Ok(())
        }
    }
}

fn cmd_infer(a: InferArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let features = read_features(&a.features)?;
    let lambda = a.lambda.unwrap_or(ckpt.lambda);
    let out = infer(&ckpt.model, &features.features, &ckpt.debias, lambda)?;
    write_text(&a.out, &format_predictions(&out.predictions))
}

fn cmd_zeroshot(a: ZeroshotArgs) -> Result<()> {
    let features = read_features(&a.features)?;
    let text = read_text(&a.text)?;
    if features.dim() != text.cols() {
        return Err(Error::dim("zeroshot feature width", text.cols(), features.dim()));
    }
    let pred = zero_shot(&features.features, &text)?;
    write_text(&a.out, &format_predictions(&pred))
}

fn cmd_gen_synth(a: GenSynthArgs) -> Result<()> {
    let spec = SynthSpec {
        classes: a.classes,
        dim: a.dim,
        per_domain: a.per_domain,
        proto_scale: a.proto_scale,
        noise: a.noise,
        rotation: a.rotation,
        translation: a.translation,
        gap: a.gap,
        unit_rows: !a.raw_rows,
        seed: a.seed,
    };
    let data = gen_synth(&spec)?;
    let p = a.prefix.to_string_lossy().into_owned();
    write_features(&data.source, format!("{p}.source.umfs"))?;
    write_features(&data.target, format!("{p}.target.umfs"))?;
    write_features(&FeatureSet::text(data.text)?, format!("{p}.text.umfs"))?;
    write_text(Path::new(&format!("{p}.truth.txt")), &format_predictions(&data.target_truth))
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let pred = parse_predictions(&read_text_file(&a.pred)?)?;
    let (truth, file_classes) = read_truth_with_classes(&a.truth)?;
    let classes = a
        .classes
        .or(file_classes)
        .unwrap_or_else(|| truth.iter().chain(&pred).max().map_or(1, |m| m + 1));
    let metrics = evaluate(&pred, &truth, classes)?;
    let mut out = std::io::stdout().lock();
    write!(out, "{metrics}").map_err(|e| Error::io("<stdout>", e))
}

/// Text features: a feature file with one row per class.
pub fn read_text(path: &Path) -> Result<Tensor2> {
    let set = read_features(path)?;
    if set.len() != set.classes {
        return Err(Error::contract(
            "text features",
            format!("expected one row per class, found {} rows for {} classes", set.len(), set.classes),
        ));
    }
    Ok(set.features)
}

/// Ground truth from a text file or a labelled feature file.
pub fn read_truth(path: &Path) -> Result<Vec<usize>> {
    Ok(read_truth_with_classes(path)?.0)
}

fn read_truth_with_classes(path: &Path) -> Result<(Vec<usize>, Option<usize>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(&MAGIC) {
        let set = crate::data::format::decode_features(&bytes)?;
        let labels = set
            .labels
            .ok_or_else(|| Error::contract("truth", format!("{} carries no labels", path.display())))?;
        return Ok((labels, Some(set.classes)));
    }
    let text = String::from_utf8(bytes).map_err(|_| Error::Malformed(format!("{} is neither UTF-8 nor a feature file", path.display())))?;
    Ok((parse_predictions(&text)?, None))
}

fn read_text_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
