//! `oct-triage` command line: phantom generation, training, inference,
//! evaluation and reporting. Each subcommand's output is a valid input of
//! the next one.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use thiserror::Error;

use oct_triage::domain::{GroundTruthLabel, ModelTask, Thresholds};
use oct_triage::error::{IngestError, MetricsError, ModelError, PipelineError};
use oct_triage::ingest::{
    generate_phantom_dataset, load_dataset, parse_manifest, read_truth, truth_for, BScanTruth, PhantomConfig,
    SiteProfile, TRUTH_FILE,
};
use oct_triage::metrics::{evaluate_dataset, render_report, EvaluationReport, ReportFormat};
use oct_triage::model::{build_model, save_weights, train, ModelConfig, Preset, TrainConfig};
use oct_triage::pipeline::{read_predictions, score_volume, write_predictions, AggregationPolicy, ModelBank, ScoringOptions};
use oct_triage::preprocess::AugmentParams;
use oct_triage::training::{assemble, stratified_split, LabelledVolume};

/// Fallback seed source when `--seed` is absent.
pub const SEED_ENV: &str = "OCT_TRIAGE_SEED";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Internal(_) => 3,
        }
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::InvalidConfig(m) => CliError::Usage(m),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::ConfigError(_) | ModelError::TrainConfig(_) => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Model(m) => m.into(),
            PipelineError::Policy(_) => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Data(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "oct-triage", version, about = "Macular OCT triage: train, score and evaluate")]
pub struct Cli {
    /// Base seed; falls back to $OCT_TRIAGE_SEED, then 0.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for volume-level inference and loading.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Debug-level logging.
    #[arg(long, short, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic cohort (images, manifest.json, truth.json).
    GenPhantoms(GenArgs),
    /// Train one binary classifier.
    Train(TrainArgs),
    /// Score every volume of a manifest. Labels are never read.
    Infer(InferArgs),
    /// Compare predictions with ground truth.
    Evaluate(EvaluateArgs),
    /// Render one or more evaluation reports.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub per_class: usize,
    #[arg(long, default_value_t = 8)]
    pub bscans: usize,
    /// HxW in pixels.
    #[arg(long, default_value = "64x64", value_parser = parse_size)]
    pub size: (usize, usize),
    #[arg(long, default_value = "clean", value_parser = parse_profile)]
    pub site_profile: SiteProfile,
    #[arg(long, default_value_t = 0.0)]
    pub ungradable_frac: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lesion_scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PresetArg {
    Toy,
    Vgg16,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, value_parser = parse_task)]
    pub task: ModelTask,
    #[arg(long, value_enum, default_value_t = PresetArg::Toy)]
    pub preset: PresetArg,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 5)]
    pub patience: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Canonical HxW the model consumes.
    #[arg(long, default_value = "224x224", value_parser = parse_size)]
    pub input_size: (usize, usize),
    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.0)]
    pub min_delta: f64,
    /// Fraction of volumes (per label) held out for early stopping.
    #[arg(long, default_value_t = 0.2)]
    pub val_frac: f64,
    /// Disable training-time augmentation.
    #[arg(long)]
    pub no_augment: bool,
    /// Generator sidecar; defaults to truth.json beside the manifest when present.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory holding anomaly/dry/wet/dme/quality .poct files.
    #[arg(long)]
    pub models: PathBuf,
    #[arg(long, default_value = "max", value_parser = parse_policy)]
    pub agg: AggregationPolicy,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, value_enum, default_value_t = Toggle::Off)]
    pub gate_quality: Toggle,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub preds: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Comma-separated report.json paths.
    #[arg(long = "in", value_delimiter = ',', required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, default_value = "md", value_parser = parse_format)]
    pub format: ReportFormat,
    /// Write here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(|| format!("`{s}` is not HxW"))?;
    let h = h.trim().parse::<usize>().map_err(|e| format!("height: {e}"))?;
    let w = w.trim().parse::<usize>().map_err(|e| format!("width: {e}"))?;
    if h == 0 || w == 0 {
        return Err("sizes must be positive".into());
    }
    Ok((h, w))
}

fn parse_profile(s: &str) -> Result<SiteProfile, String> {
    s.parse()
}

fn parse_task(s: &str) -> Result<ModelTask, String> {
    s.parse::<ModelTask>().map_err(|_| format!("`{s}` (expected anomaly, dry, wet, dme or quality)"))
}

fn parse_policy(s: &str) -> Result<AggregationPolicy, String> {
    s.parse::<AggregationPolicy>().map_err(|e| e.to_string())
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    s.parse()
}

fn resolve_seed(flag: Option<u64>) -> Result<u64, CliError> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("${SEED_ENV} = `{v}` is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

fn thresholds(t: f64) -> Result<Thresholds, CliError> {
    Thresholds::uniform(t).map_err(|e| CliError::Usage(e.to_string()))
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    fs::File::create(path).map(BufWriter::new).map_err(|e| io_error(path, e))
}

/// Parses `argv` (including the program name) and runs the subcommand.
/// Returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    init_logging(cli.verbose);
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn init_logging(verbose: bool) {
    let level = if verbose { "debug" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .try_init();
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    let seed = resolve_seed(cli.seed)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|e| CliError::Internal(e.to_string()))?;
    log::info!("resolved configuration: seed={seed} threads={:?} command={:?}", cli.threads, cli.command);
    pool.install(|| match cli.command {
        Command::GenPhantoms(a) => gen_phantoms(a, seed),
        Command::Train(a) => train_cmd(a, seed),
        Command::Infer(a) => infer_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Report(a) => report_cmd(a),
    })
}

fn gen_phantoms(a: GenArgs, seed: u64) -> Result<(), CliError> {
    let config = PhantomConfig {
        n_volumes_per_class: a.per_class,
        bscans_per_volume: a.bscans,
        image_height: a.size.0,
        image_width: a.size.1,
        site_profile: a.site_profile,
        lesion_intensity_scale: a.lesion_scale,
        ungradable_fraction: a.ungradable_frac,
        seed,
    };
    let manifest = generate_phantom_dataset(&config, &a.out)?;
    log::info!(
        "wrote {} volumes ({} B-scans) to {}",
        manifest.entries.len(),
        manifest.n_bscans(),
        a.out.display()
    );
    Ok(())
}

fn train_cmd(a: TrainArgs, seed: u64) -> Result<(), CliError> {
    if !(a.val_frac > 0.0 && a.val_frac < 1.0) {
        return Err(CliError::Usage("--val-frac must lie strictly between 0 and 1".into()));
    }
    let manifest = parse_manifest(&a.manifest)?;
    let truth_path = a.truth.clone().or_else(|| {
        let p = manifest.base_dir.join(TRUTH_FILE);
        p.is_file().then_some(p)
    });
    let sidecar = truth_path.as_deref().map(read_truth).transpose()?;
    if a.task == ModelTask::Quality && sidecar.is_none() {
        return Err(CliError::Data(format!(
            "training the quality model needs gradability truth; none found beside {}",
            a.manifest.display()
        )));
    }
    let volumes = load_dataset(&manifest)?;

    let labels: Vec<Vec<GroundTruthLabel>> = manifest
        .entries
        .iter()
        .map(|e| (0..e.bscan_paths.len()).map(|i| e.bscan_label(i)).collect())
        .collect();
    let truths: Vec<Option<Vec<BScanTruth>>> = manifest
        .entries
        .iter()
        .map(|e| {
            sidecar.as_ref().map(|s| {
                e.bscan_paths
                    .iter()
                    .map(|p| {
                        truth_for(s, p).cloned().ok_or_else(|| {
                            CliError::Data(format!("no sidecar record for {} in {}", p.display(), TRUTH_FILE))
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()
            })
            .transpose()
        })
        .collect::<Result<_, _>>()?;
    let lv: Vec<LabelledVolume<'_>> = volumes
        .iter()
        .zip(&labels)
        .zip(&truths)
        .map(|((v, l), t)| LabelledVolume { volume: v, labels: l, truth: t.as_deref() })
        .collect();

    let keys: Vec<GroundTruthLabel> = manifest.entries.iter().map(|e| e.volume_label()).collect();
    let (train_idx, val_idx) = stratified_split(&keys, a.val_frac, seed);
    let pick = |idx: &[usize]| idx.iter().map(|&i| lv[i]).collect::<Vec<_>>();
    let train_items = assemble(&pick(&train_idx), a.task, a.input_size);
    let val_items = assemble(&pick(&val_idx), a.task, a.input_size);

    let preset = match a.preset {
        PresetArg::Toy => Preset::Toy,
        PresetArg::Vgg16 => Preset::Vgg16,
    };
    let model_seed = oct_triage::rng::derive_seed(seed, &[u64::from(a.task.code())]);
    let config = ModelConfig::preset(preset, a.input_size, model_seed);
    let tc = TrainConfig {
        max_epochs: a.epochs,
        patience: a.patience,
        learning_rate: a.lr,
        batch_size: a.batch_size,
        min_delta: a.min_delta,
        augment: if a.no_augment { AugmentParams::NONE } else { AugmentParams::default() },
        seed: oct_triage::rng::derive_seed(seed, &[0x7A1, u64::from(a.task.code())]),
    };
    log::info!(
        "training {} on {} images ({} validation), config {config:?}, {tc:?}",
        a.task,
        train_items.len(),
        val_items.len()
    );
    let model = build_model(&config, a.task)?;
    let trained = train(&model, &train_items, &val_items, &tc)?;
    if let (Some(best), Some(rec)) = (trained.best_epoch(), trained.best_epoch().and_then(|b| trained.history().get(b))) {
        log::info!(
            "stopped after {} epochs; kept epoch {} (validation loss {:.5})",
            trained.history().len(),
            best + 1,
            rec.val_loss
        );
    }
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    save_weights(&trained, &a.out)?;
    Ok(())
}

fn infer_cmd(a: InferArgs) -> Result<(), CliError> {
    let t = thresholds(a.threshold)?;
    let manifest = parse_manifest(&a.manifest)?;
    let bank = ModelBank::load_dir(&a.models)?;
    let opts = ScoringOptions { policy: a.agg, gate_quality: a.gate_quality == Toggle::On, ..Default::default() };
    let preds = manifest
        .entries
        .par_iter()
        .map(|entry| -> Result<_, CliError> {
            let volume = oct_triage::ingest::load_volume(entry, &manifest.base_dir, &manifest.scanner_id)?;
            Ok(score_volume(&bank, &volume, &manifest.dataset_id, &opts, &t)?)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let out = create(&a.out)?;
    write_predictions(out, &preds).map_err(|e| io_error(&a.out, e))?;
    log::info!("scored {} volumes into {}", preds.len(), a.out.display());
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<(), CliError> {
    let t = thresholds(a.threshold)?;
    let manifest = parse_manifest(&a.manifest)?;
    let file = fs::File::open(&a.preds).map_err(|e| io_error(&a.preds, e))?;
    let preds = read_predictions(BufReader::new(file))
        .map_err(|(line, e)| CliError::Data(format!("{}:{line}: {e}", a.preds.display())))?;
    let report = evaluate_dataset(&preds, &manifest, &t)?;
    let mut out = create(&a.out)?;
    let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Internal(e.to_string()))?;
    out.write_all(text.as_bytes())
        .and_then(|_| out.write_all(b"\n"))
        .and_then(|_| out.flush())
        .map_err(|e| io_error(&a.out, e))?;
    Ok(())
}

/// A report file holds one report object or an array of them.
pub fn read_reports(path: &Path) -> Result<Vec<EvaluationReport>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| io_error(path, e))?;
    let reports = if value.is_array() {
        serde_json::from_value(value)
    } else {
        serde_json::from_value(value).map(|r| vec![r])
    };
    reports.map_err(|e| io_error(path, e))
}

fn report_cmd(a: ReportArgs) -> Result<(), CliError> {
    let mut reports = Vec::new();
    for path in &a.inputs {
        reports.extend(read_reports(path)?);
    }
    if reports.is_empty() {
        return Err(CliError::Data("no reports to render".into()));
    }
    let doc = render_report(&reports, a.format);
    match &a.out {
        Some(path) => {
            let mut out = create(path)?;
            out.write_all(doc.as_bytes()).and_then(|_| out.flush()).map_err(|e| io_error(path, e))?;
        }
        None => print!("{doc}"),
    }
    Ok(())
}
