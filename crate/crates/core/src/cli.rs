//! Command-line front end. Every subcommand parses flags, calls into the
//! library and prints the result; no numerics live here.
//!
//! Exit codes: 0 success, 1 a check failed, 2 usage or I/O error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::attributes::{describe_video, SentenceEncoder, DEFAULT_K_ATTRIBUTES, DEFAULT_PREFIX};
use crate::concept_spotting::{temporal_saliency, Aggregation, DEFAULT_TAU_VCS};
use crate::distributed::{distributed_loss, single_node_loss, Execution, PositiveMode};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::objective::{finite_diff_check, random_batch, RandomBatchSpec};
use crate::recognition::{evaluate, half_class_eval, AttributeBranch, FusionConfig, DEFAULT_LAMBDA};
use crate::store::{load_dataset, load_lexicon, read_bemb, write_bemb, write_json};
use crate::synthetic::{gen_synthetic, write_synthetic, SyntheticParams, DEFAULT_ENCODER_SEED, LEXICON_FILE};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Largest |distributed - single-node| accepted by `dist-check`.
pub const DIST_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Parser)]
#[command(name = "bike", version, about = "Bidirectional cross-modal video recognition over precomputed embeddings")]
pub struct Cli {
    /// Print machine-readable JSON instead of tables.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Per-frame saliency of each video w.r.t. category words.
    Spot(SpotArgs),
    /// Retrieve lexicon attributes and build attribute sentences.
    Attrs(AttrsArgs),
    /// Classify a dataset and report top-1 / top-5 accuracy.
    Eval(EvalArgs),
    /// Compare analytic loss gradients with central finite differences.
    LossCheck(LossCheckArgs),
    /// Check that sharded InfoNCE with batch gathering matches the single-node loss.
    DistCheck(DistCheckArgs),
    /// Write a seeded synthetic dataset and lexicon.
    GenSynthetic(GenArgs),
    /// Inspect or convert BEMB embedding files.
    #[command(subcommand)]
    Bemb(BembCommand),
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
pub enum AggArg {
    Mean,
    Vcs,
}

impl From<AggArg> for Aggregation {
    fn from(a: AggArg) -> Self {
        match a {
            AggArg::Mean => Aggregation::MeanPool,
            AggArg::Vcs => Aggregation::ConceptSpotting,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, PartialEq, Eq)]
pub enum Toggle {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Multi,
    Diagonal,
}

#[derive(Debug, Args)]
pub struct SpotArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TAU_VCS)]
    pub tau: f64,
    /// Saliency for every category rather than only the ground-truth one.
    #[arg(long)]
    pub all_categories: bool,
}

#[derive(Debug, Args)]
pub struct PromptArgs {
    /// Prompt template; `{}` marks where the phrases go.
    #[arg(long, default_value = DEFAULT_PREFIX)]
    pub prefix: String,
    #[arg(long)]
    pub no_prompt: bool,
    #[arg(long, default_value_t = DEFAULT_ENCODER_SEED)]
    pub encoder_seed: u64,
}

impl PromptArgs {
    fn template(&self) -> Option<String> {
        (!self.no_prompt).then(|| self.prefix.clone())
    }
}

#[derive(Debug, Args)]
pub struct AttrsArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Lexicon manifest; defaults to lexicon.json beside the dataset manifest.
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_K_ATTRIBUTES)]
    pub k: usize,
    #[command(flatten)]
    pub prompt: PromptArgs,
    /// Write one attribute embedding row per video to this BEMB file.
    #[arg(long)]
    pub emit_bemb: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long = "lambda", default_value_t = DEFAULT_LAMBDA)]
    pub lambda: f64,
    /// Temperature of the frame saliency softmax.
    #[arg(long, default_value_t = DEFAULT_TAU_VCS)]
    pub tau: f64,
    #[arg(long, value_enum, default_value_t = AggArg::Vcs)]
    pub agg: AggArg,
    #[arg(long, value_enum, default_value_t = Toggle::Off)]
    pub attrs: Toggle,
    #[arg(long)]
    pub lexicon: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_K_ATTRIBUTES)]
    pub k: usize,
    #[command(flatten)]
    pub prompt: PromptArgs,
    #[arg(long)]
    pub half_class: bool,
    #[arg(long, default_value_t = 10)]
    pub repeats: usize,
    #[arg(long, env = "BIKE_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Also write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LossCheckArgs {
    #[arg(long, default_value_t = 50)]
    pub batches: usize,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value_t = 1.0)]
    pub tau: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub epsilon: f64,
    /// Defaults to 1e-5 for tau >= 0.1 and 1e-4 below.
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Leave out the attribute branch.
    #[arg(long)]
    pub no_attrs: bool,
    #[arg(long, env = "BIKE_SEED", default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct DistCheckArgs {
    #[arg(long)]
    pub batch: usize,
    #[arg(long)]
    pub workers: usize,
    #[arg(long)]
    pub dim: usize,
    #[arg(long, env = "BIKE_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = crate::objective::DEFAULT_TAU)]
    pub tau: f64,
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Multi)]
    pub mode: ModeArg,
    /// Run workers on threads.
    #[arg(long)]
    pub threaded: bool,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub classes: usize,
    #[arg(long)]
    pub videos: usize,
    #[arg(long)]
    pub frames: usize,
    #[arg(long)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub noise_frames: usize,
    #[arg(long, env = "BIKE_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_ENCODER_SEED)]
    pub encoder_seed: u64,
    #[arg(long, default_value_t = 0.05)]
    pub word_noise: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum BembCommand {
    /// Print shape and summary statistics.
    Inspect { path: PathBuf },
    /// Convert between BEMB and CSV, chosen by the output extension.
    Convert { input: PathBuf, output: PathBuf },
}

/// Parses `argv` and runs, writing to the process's stdout and stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let (mut out, mut err) = (std::io::stdout().lock(), std::io::stderr().lock());
    run_with(argv, &mut out, &mut err)
}

pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let sink: &mut dyn Write = if e.use_stderr() { err } else { out };
            let _ = sink.write_all(text.as_bytes());
            return code;
        }
    };
    match dispatch(&cli, out) {
        Ok(code) => code,
        // reader went away (`bike spot | head`); nothing left to report
        Err(Error::Io { source, .. }) if source.kind() == std::io::ErrorKind::BrokenPipe => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_USAGE
        }
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

fn emit<T: Serialize>(out: &mut dyn Write, value: &T) -> Result<()> {
    writeln!(out, "{}", serde_json::to_string_pretty(value)?).map_err(io_err)
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<i32> {
    match &cli.command {
        Command::Spot(a) => spot(a, cli.json, out),
        Command::Attrs(a) => attrs(a, cli.json, out),
        Command::Eval(a) => eval(a, cli.json, out),
        Command::LossCheck(a) => loss_check(a, cli.json, out),
        Command::DistCheck(a) => dist_check(a, cli.json, out),
        Command::GenSynthetic(a) => gen(a, cli.json, out),
        Command::Bemb(b) => bemb(b, cli.json, out),
    }
}

fn default_lexicon(manifest: &Path, explicit: &Option<PathBuf>) -> PathBuf {
    explicit.clone().unwrap_or_else(|| manifest.parent().unwrap_or(Path::new(".")).join(LEXICON_FILE))
}

fn spot(a: &SpotArgs, json: bool, out: &mut dyn Write) -> Result<i32> {
    let ds = load_dataset(&a.manifest)?;
    let mut rows = Vec::new();
    for v in ds.videos() {
        let cats: Vec<_> = if a.all_categories { ds.categories().iter().collect() } else { vec![&ds.categories()[v.label]] };
        for c in cats {
            let s = temporal_saliency(&v.frames, c.word_embeddings(), a.tau)?;
            rows.push(json!({
                "video_id": v.frames.video_id,
                "category": c.name,
                "weights": s.weights,
            }));
        }
    }
    if json {
        emit(
            out,
            &json!({ "config": { "manifest": a.manifest, "tau_vcs": a.tau, "all_categories": a.all_categories }, "saliency": rows }),
        )?;
    } else {
        writeln!(out, "# tau_vcs = {}", a.tau).map_err(io_err)?;
        for r in &rows {
            let weights: Vec<String> = r["weights"]
                .as_array()
                .expect("weights array")
                .iter()
                .map(|w| format!("{:.16e}", w.as_f64().expect("finite weight")))
                .collect();
            writeln!(
                out,
                "{}\t{}\t{}",
                r["video_id"].as_str().unwrap_or_default(),
                r["category"].as_str().unwrap_or_default(),
                weights.join(" ")
            )
            .map_err(io_err)?;
        }
    }
    Ok(EXIT_OK)
}

fn attrs(a: &AttrsArgs, json: bool, out: &mut dyn Write) -> Result<i32> {
    let ds = load_dataset(&a.manifest)?;
    let lex_path = default_lexicon(&a.manifest, &a.lexicon);
    let lexicon = load_lexicon(&lex_path)?;
    let template = a.prompt.template().unwrap_or_else(|| "{}".to_string());
    let encoder = SentenceEncoder::Surrogate { seed: a.prompt.encoder_seed };
    let mut records = Vec::new();
    let mut embeddings = Vec::new();
    for v in ds.videos() {
        let (set, sentence) = describe_video(&v.frames, &lexicon, a.k, &template, &encoder)?;
        embeddings.push(sentence.embedding.as_slice().to_vec());
        records.push(json!({ "video_id": v.frames.video_id, "attributes": set.phrases, "sentence": sentence.text }));
    }
    if let Some(path) = &a.emit_bemb {
        write_bemb(path, &Matrix::from_rows(&embeddings)?)?;
    }
    if json {
        let config = json!({
            "manifest": a.manifest, "lexicon": lex_path, "k": a.k,
            "prefix": a.prompt.template(), "encoder_seed": a.prompt.encoder_seed,
        });
        emit(out, &json!({ "config": config, "videos": records }))?;
    } else {
        for (r, v) in records.iter().zip(ds.videos()) {
            writeln!(out, "{}", v.frames.video_id).map_err(io_err)?;
            for p in r["attributes"].as_array().expect("attribute array") {
                writeln!(out, "  {:>10.6}  {}", p["score"].as_f64().unwrap_or(f64::NAN), p["phrase"].as_str().unwrap_or_default())
                    .map_err(io_err)?;
            }
            writeln!(out, "  => {}", r["sentence"].as_str().unwrap_or_default()).map_err(io_err)?;
        }
    }
    Ok(EXIT_OK)
}

fn eval(a: &EvalArgs, json: bool, out: &mut dyn Write) -> Result<i32> {
    let ds = load_dataset(&a.manifest)?;
    let cfg = FusionConfig { lambda: a.lambda, tau_vcs: a.tau, k_attributes: a.k, prefix: a.prompt.template(), aggregation: a.agg.into() };
    cfg.validate()?;
    let lexicon = match a.attrs {
        Toggle::On => Some(load_lexicon(default_lexicon(&a.manifest, &a.lexicon))?),
        Toggle::Off => None,
    };
    let branch =
        lexicon.as_ref().map(|lexicon| AttributeBranch { lexicon, encoder: SentenceEncoder::Surrogate { seed: a.prompt.encoder_seed } });
    let report = if a.half_class {
        let r = half_class_eval(&ds, &cfg, branch.as_ref(), a.repeats, a.seed)?;
        if !json {
            writeln!(out, "half-class top1: {:.4} +/- {:.4} over {} repeats (seed {})", r.mean, r.std, a.repeats, a.seed)
                .map_err(io_err)?;
            writeln!(out, "config {}", serde_json::to_string(&r.config)?).map_err(io_err)?;
        }
        serde_json::to_value(r)?
    } else {
        let r = evaluate(&ds, &cfg, branch.as_ref())?;
        if !json {
            writeln!(out, "videos {}  classes {}", r.num_videos, r.num_classes).map_err(io_err)?;
            writeln!(out, "top1   {:.4}", r.top1).map_err(io_err)?;
            writeln!(out, "top5   {:.4}", r.top5).map_err(io_err)?;
            writeln!(out, "config {}", serde_json::to_string(&r.config)?).map_err(io_err)?;
        }
        serde_json::to_value(r)?
    };
    if json {
        emit(out, &report)?;
    }
    if let Some(path) = &a.out {
        write_json(path, &report)?;
    }
    Ok(EXIT_OK)
}

fn loss_check(a: &LossCheckArgs, json: bool, out: &mut dyn Write) -> Result<i32> {
    let tolerance = a.tolerance.unwrap_or(if a.tau >= 0.1 { 1e-5 } else { 1e-4 });
    let spec = RandomBatchSpec { batch: a.batch, dim: a.dim, classes: a.classes, tau: a.tau, with_attributes: !a.no_attrs };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut worst: f64 = 0.0;
    for _ in 0..a.batches {
        let batch = random_batch(&mut rng, spec)?;
        worst = worst.max(finite_diff_check(&batch, a.epsilon)?);
    }
    let pass = worst < tolerance;
    if json {
        emit(
            out,
            &json!({ "config": { "batch_spec": spec, "batches": a.batches, "epsilon": a.epsilon, "seed": a.seed, "tolerance": tolerance }, "max_relative_error": worst, "pass": pass }),
        )?;
    } else {
        writeln!(
            out,
            "max relative error {worst:.3e} (tolerance {tolerance:.0e}) over {} batches: {}",
            a.batches,
            if pass { "PASS" } else { "FAIL" }
        )
        .map_err(io_err)?;
    }
    Ok(if pass { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn dist_check(a: &DistCheckArgs, json: bool, out: &mut dyn Write) -> Result<i32> {
    let spec = RandomBatchSpec { batch: a.batch, dim: a.dim, classes: a.classes, tau: a.tau, with_attributes: false };
    let batch = random_batch(&mut ChaCha8Rng::seed_from_u64(a.seed), spec)?;
    let mode = match a.mode {
        ModeArg::Multi => PositiveMode::MultiPositive,
        ModeArg::Diagonal => PositiveMode::Diagonal,
    };
    let execution = if a.threaded { Execution::Threaded } else { Execution::Sequential };
    let single = single_node_loss(&batch, mode);
    let dist = distributed_loss(&batch, a.workers, mode, execution)?;
    let diff = (dist.loss - single).abs();
    let pass = diff <= DIST_TOLERANCE;
    if json {
        emit(
            out,
            &json!({
                "config": { "batch": a.batch, "workers": a.workers, "dim": a.dim, "seed": a.seed, "tau": a.tau, "classes": a.classes, "mode": mode, "execution": execution },
                "single_node_loss": single, "distributed_loss": dist.loss, "per_worker": dist.per_worker,
                "abs_difference": diff, "pass": pass,
            }),
        )?;
    } else {
        writeln!(out, "single-node loss  {single:.17e}").map_err(io_err)?;
        writeln!(out, "distributed loss  {:.17e}", dist.loss).map_err(io_err)?;
        writeln!(out, "abs difference    {diff:.3e}").map_err(io_err)?;
    }
    Ok(if pass { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn gen(a: &GenArgs, json: bool, out: &mut dyn Write) -> Result<i32> {
    let params = SyntheticParams {
        classes: a.classes,
        videos: a.videos,
        frames: a.frames,
        dim: a.dim,
        noise_frames: a.noise_frames,
        seed: a.seed,
        encoder_seed: a.encoder_seed,
        word_noise: a.word_noise,
    };
    let set = gen_synthetic(&params)?;
    let manifest = write_synthetic(&set, &a.out)?;
    if json {
        emit(out, &json!({ "config": params, "dataset": manifest, "lexicon": a.out.join(LEXICON_FILE) }))?;
    } else {
        writeln!(out, "wrote {}", manifest.display()).map_err(io_err)?;
    }
    Ok(EXIT_OK)
}

fn bemb(cmd: &BembCommand, json: bool, out: &mut dyn Write) -> Result<i32> {
    match cmd {
        BembCommand::Inspect { path } => {
            let m = read_bemb(path)?;
            let norms: Vec<f64> = m.iter_rows().map(crate::numerics::norm).collect();
            let min = norms.iter().copied().fold(f64::INFINITY, f64::min);
            let max = norms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if json {
                emit(out, &json!({ "path": path, "rows": m.rows(), "cols": m.cols(), "min_row_norm": min, "max_row_norm": max }))?;
            } else {
                writeln!(out, "{}: {} x {}, row norms in [{min:.6}, {max:.6}]", path.display(), m.rows(), m.cols()).map_err(io_err)?;
            }
        }
        BembCommand::Convert { input, output } => {
            let to_csv = output.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
            if to_csv {
                let m = read_bemb(input)?;
                let mut w = csv::WriterBuilder::new().has_headers(false).from_path(output).map_err(|e| csv_err(output, e))?;
                for row in m.iter_rows() {
                    w.write_record(row.iter().map(|v| format!("{}", *v as f32))).map_err(|e| csv_err(output, e))?;
                }
                w.flush().map_err(|e| Error::io(output, e))?;
            } else {
                let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(input).map_err(|e| csv_err(input, e))?;
                let mut rows: Vec<Vec<f64>> = Vec::new();
                for rec in r.records() {
                    let rec = rec.map_err(|e| csv_err(input, e))?;
                    let row = rec
                        .iter()
                        .map(|f| f.trim().parse::<f64>().map_err(|e| Error::InvalidArgument(format!("{}: {e}", input.display()))))
                        .collect::<Result<Vec<_>>>()?;
                    rows.push(row);
                }
                write_bemb(output, &Matrix::from_rows(&rows)?)?;
            }
            if !json {
                writeln!(out, "wrote {}", output.display()).map_err(io_err)?;
            }
        }
    }
    Ok(EXIT_OK)
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}
