//! The `dataless` command line. Each command locks its output directory,
//! writes its artifacts there and finishes with a `manifest.json` that lists
//! every artifact with its SHA-256.

use std::ffi::OsString;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::bias::{
    audit, read_prediction_log, write_prediction_log, write_table2_csv, AuditRowKey, BiasReport,
};
use crate::detector::{
    finetune, train, write_history_csv, ArchitectureRegistry, DetectorConfig, DetectorModel,
    OptimizerKind,
};
use crate::error::{Error, Result};
use crate::evaluation::{cross_modal_matrix, prediction_records, TrainKey};
use crate::generator::{generate_batch, generator_from_name, SpecStream};
use crate::image::Image;
use crate::interpret::{occlusion_map, render_heatmap, saliency_map, OcclusionParams};
use crate::label::Class;
use crate::persist::{
    ingest_dataset, read_demographics, read_to_string, write_demographics, write_json,
    DatasetManifest, ResizePolicy, RunLock, RunManifest, Split, DEMOGRAPHICS_FILE,
};
use crate::swapper::{backend_from_name, pair_swap_images, SwapBackend};

const AFTER_HELP: &str = "\
Exit codes:
  0  success
  2  usage error (unknown flag, missing or malformed argument)
  3  invalid input
  4  invalid configuration (unknown architecture, backend or generator)
  5  I/O or file format error
  6  adapter or swap backend failure
  7  training aborted (non-finite loss or gradient)
  8  output directory locked by another command
  9  capability missing (model has no input gradient)

Failures print one JSON object on stderr:
  {\"error\": {\"kind\": \"...\", \"message\": \"...\", \"exit_code\": N}}

Environment:
  DATALESS_ADAPTER_PATH  directories searched for ext:<command> adapters before PATH";

#[derive(Debug, Parser)]
#[command(
    name = "dataless",
    version,
    about = "Train and audit face-swap detectors on synthetic faces",
    after_help = AFTER_HELP
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render seeded batches of faces into a dataset directory.
    Generate(GenerateArgs),
    /// Consecutive-pair swaps of a dataset directory.
    Swap(SwapArgs),
    /// Train a detector from scratch on generated faces.
    Train(TrainArgs),
    /// Continue training a checkpoint on a directory of real faces.
    Finetune(FinetuneArgs),
    /// Accuracy matrix over models, swap backends and datasets.
    Evaluate(EvaluateArgs),
    /// Demographic disparity report from prediction logs.
    AuditBias(AuditArgs),
    /// Saliency or occlusion heatmap for one image.
    Explain(ExplainArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// toy, toy-shifted or ext:<command>.
    #[arg(long, default_value = "toy")]
    pub generator: String,
    /// Seed of the batch-seed stream.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Images per batch.
    #[arg(long, default_value_t = 12)]
    pub count: usize,
    #[arg(long, default_value_t = 1)]
    pub batches: usize,
    /// Fixed truncation value; drawn per batch when omitted.
    #[arg(long)]
    pub psi: Option<f64>,
    #[arg(long, default_value_t = 64)]
    pub resolution: usize,
}

#[derive(Debug, Args)]
pub struct SwapArgs {
    /// Dataset directory; images are paired in lexicographic order.
    #[arg(long)]
    pub input: PathBuf,
    /// blend, recolor or ext:<command>.
    #[arg(long, default_value = "blend")]
    pub backend: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Square working size. Defaults to the first image's size.
    #[arg(long)]
    pub resolution: Option<usize>,
}

/// `train` settings. A `--config` file may set any subset; flags win.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub architecture_id: String,
    pub input_resolution: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps_per_epoch: usize,
    pub epochs: usize,
    pub optimizer_seed: u64,
    pub optimizer: OptimizerKind,
    pub momentum: f64,
    pub data_seed: u64,
    pub generator: String,
    pub backend: String,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let c = DetectorConfig::toy_reference();
        TrainSettings {
            architecture_id: c.architecture_id,
            input_resolution: c.input_resolution,
            learning_rate: c.learning_rate,
            batch_size: c.batch_size,
            steps_per_epoch: c.steps_per_epoch,
            epochs: c.epochs,
            optimizer_seed: c.optimizer_seed,
            optimizer: c.optimizer,
            momentum: c.momentum,
            data_seed: 1,
            generator: "toy".into(),
            backend: "blend".into(),
        }
    }
}

impl TrainSettings {
    pub fn detector_config(&self) -> DetectorConfig {
        DetectorConfig {
            architecture_id: self.architecture_id.clone(),
            input_resolution: self.input_resolution,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            steps_per_epoch: self.steps_per_epoch,
            epochs: self.epochs,
            optimizer_seed: self.optimizer_seed,
            momentum: self.momentum,
            optimizer: self.optimizer,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum OptimizerArg {
    Sgd,
    Adam,
}

impl From<OptimizerArg> for OptimizerKind {
    fn from(o: OptimizerArg) -> Self {
        match o {
            OptimizerArg::Sgd => OptimizerKind::Sgd,
            OptimizerArg::Adam => OptimizerKind::Adam,
        }
    }
}

/// Optimization flags shared by `train` and `finetune`.
#[derive(Debug, Default, Args)]
pub struct OptimFlags {
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub optimizer_seed: Option<u64>,
    #[arg(long, value_enum)]
    pub optimizer: Option<OptimizerArg>,
    #[arg(long)]
    pub momentum: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON file with any subset of the train settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub architecture: Option<String>,
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long)]
    pub data_seed: Option<u64>,
    /// toy, toy-shifted or ext:<command>.
    #[arg(long)]
    pub generator: Option<String>,
    /// blend, recolor or ext:<command>.
    #[arg(long)]
    pub backend: Option<String>,
    #[command(flatten)]
    pub optim: OptimFlags,
}

impl TrainArgs {
    /// File values, then flags.
    pub fn resolve(&self) -> Result<TrainSettings> {
        let mut s: TrainSettings = match &self.config {
            Some(p) => serde_json::from_str(&read_to_string(p)?)
                .map_err(|e| Error::config(format!("{}: {e}", p.display())))?,
            None => TrainSettings::default(),
        };
        let o = &self.optim;
        set(&mut s.architecture_id, self.architecture.clone());
        set(&mut s.input_resolution, self.resolution);
        set(&mut s.data_seed, self.data_seed);
        set(&mut s.generator, self.generator.clone());
        set(&mut s.backend, self.backend.clone());
        set(&mut s.learning_rate, o.lr);
        set(&mut s.batch_size, o.batch_size);
        set(&mut s.steps_per_epoch, o.steps);
        set(&mut s.epochs, o.epochs);
        set(&mut s.optimizer_seed, o.optimizer_seed);
        set(&mut s.optimizer, o.optimizer.map(Into::into));
        set(&mut s.momentum, o.momentum);
        Ok(s)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// `finetune` settings; architecture and resolution come from the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneSettings {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps_per_epoch: usize,
    pub epochs: usize,
    pub optimizer_seed: u64,
    pub optimizer: OptimizerKind,
    pub momentum: f64,
    pub n_images: usize,
    pub backend: String,
}

impl Default for FinetuneSettings {
    fn default() -> Self {
        let c = DetectorConfig::toy_finetune();
        FinetuneSettings {
            learning_rate: c.learning_rate,
            batch_size: c.batch_size,
            steps_per_epoch: c.steps_per_epoch,
            epochs: c.epochs,
            optimizer_seed: c.optimizer_seed,
            optimizer: c.optimizer,
            momentum: c.momentum,
            n_images: 500,
            backend: "blend".into(),
        }
    }
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    /// Detector checkpoint to start from.
    #[arg(long)]
    pub model: PathBuf,
    /// Directory of real faces. Its train split is used when present.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub n_images: Option<usize>,
    #[arg(long)]
    pub backend: Option<String>,
    #[command(flatten)]
    pub optim: OptimFlags,
}

impl FinetuneArgs {
    pub fn resolve(&self) -> Result<FinetuneSettings> {
        let mut s: FinetuneSettings = match &self.config {
            Some(p) => serde_json::from_str(&read_to_string(p)?)
                .map_err(|e| Error::config(format!("{}: {e}", p.display())))?,
            None => FinetuneSettings::default(),
        };
        let o = &self.optim;
        set(&mut s.n_images, self.n_images);
        set(&mut s.backend, self.backend.clone());
        set(&mut s.learning_rate, o.lr);
        set(&mut s.batch_size, o.batch_size);
        set(&mut s.steps_per_epoch, o.steps);
        set(&mut s.epochs, o.epochs);
        set(&mut s.optimizer_seed, o.optimizer_seed);
        set(&mut s.optimizer, o.optimizer.map(Into::into));
        set(&mut s.momentum, o.momentum);
        Ok(s)
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Comma-separated checkpoint paths.
    #[arg(long, value_delimiter = ',', required = true)]
    pub models: Vec<PathBuf>,
    /// Comma-separated swap backends.
    #[arg(long, value_delimiter = ',', required = true)]
    pub backends: Vec<String>,
    /// Comma-separated dataset directories. The test split is used.
    #[arg(long, value_delimiter = ',', required = true)]
    pub datasets: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Use at most this many images per dataset.
    #[arg(long)]
    pub max_images: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    /// Comma-separated prediction logs. A file named
    /// `<train_type>__<train_swap>__<test_swap>[__<dataset>].csv` supplies its
    /// own row key; other files use the key flags.
    #[arg(long, value_delimiter = ',', required = true)]
    pub predictions: Vec<PathBuf>,
    /// Facets with at most this many examples are flagged and left out of
    /// the filtered table.
    #[arg(long, default_value_t = crate::bias::DEFAULT_MIN_SAMPLES)]
    pub min_samples: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "unknown")]
    pub train_type: String,
    #[arg(long, default_value = "unknown")]
    pub train_swap: String,
    #[arg(long, default_value = "unknown")]
    pub test_swap: String,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum MethodArg {
    Saliency,
    Occlusion,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Image to explain; resized to the model input.
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, value_enum, default_value = "saliency")]
    pub method: MethodArg,
    /// real or fake.
    #[arg(long, default_value = "fake")]
    pub target_class: Class,
    /// Occlusion window side. Defaults to an eighth of the input side.
    #[arg(long)]
    pub window: Option<usize>,
    /// Occlusion stride. Defaults to half the window.
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    pub fill: f64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Exit status for an error, as listed in `--help`.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Validation(_) => 3,
        Error::Config(_) => 4,
        Error::Io(_) | Error::Image(_) | Error::Json(_) | Error::Csv(_) => 5,
        Error::Adapter { .. } | Error::Swap { .. } => 6,
        Error::Training { .. } => 7,
        Error::Locked(_) => 8,
        Error::Capability(_) => 9,
    }
}

fn error_json(kind: &str, message: &str, code: i32) -> String {
    serde_json::json!({"error": {"kind": kind, "message": message, "exit_code": code}}).to_string()
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = e.print();
                    0
                }
                _ => {
                    eprintln!("{}", error_json("usage", e.to_string().trim(), 2));
                    2
                }
            };
        }
    };
    match run(cli.command) {
        Ok(manifest) => {
            println!("{}", serde_json::json!({"manifest": manifest}));
            0
        }
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("{}", error_json(e.kind(), &e.to_string(), code));
            code
        }
    }
}

pub fn main() -> std::process::ExitCode {
    let code = run_from(std::env::args_os());
    std::process::ExitCode::from(code as u8)
}

/// Runs one command and returns the path of its manifest.
pub fn run(command: Command) -> Result<PathBuf> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match command {
        Command::Generate(a) => cmd_generate(&a, args),
        Command::Swap(a) => cmd_swap(&a, args),
        Command::Train(a) => cmd_train(&a, args),
        Command::Finetune(a) => cmd_finetune(&a, args),
        Command::Evaluate(a) => cmd_evaluate(&a, args),
        Command::AuditBias(a) => cmd_audit(&a, args),
        Command::Explain(a) => cmd_explain(&a, args),
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

fn finish(mut manifest: RunManifest, out: &Path, artifacts: &[String]) -> Result<PathBuf> {
    for a in artifacts {
        manifest.record_artifact(out, a)?;
    }
    manifest.finish(out)
}

fn cmd_generate(a: &GenerateArgs, args: Vec<String>) -> Result<PathBuf> {
    if let Some(psi) = a.psi {
        if !(0.0..=1.0).contains(&psi) {
            return Err(Error::validation(format!("psi {psi} outside [0, 1]")));
        }
    }
    let generator = generator_from_name(&a.generator)?;
    let _lock = RunLock::acquire(&a.out)?;
    let config = serde_json::json!({
        "generator": a.generator, "seed": a.seed, "count": a.count,
        "batches": a.batches, "psi": a.psi, "resolution": a.resolution,
    });
    let mut manifest = RunManifest::new("generate", args, &config)?;
    manifest.adapter("generator", generator.id());
    let specs: Vec<_> = SpecStream::new(a.seed, a.count, a.resolution)
        .take(a.batches)
        .map(|mut s| {
            if let Some(psi) = a.psi {
                s.truncation_psi = psi;
            }
            s
        })
        .collect();
    let mut artifacts = Vec::new();
    let mut demographics = Some(Vec::new());
    for (k, spec) in specs.iter().enumerate() {
        let batch = generate_batch(spec, generator.as_ref())?;
        let names: Vec<String> = (0..batch.images.len())
            .map(|i| format!("b{k:04}_{i:03}.png"))
            .collect();
        for (img, name) in batch.images.iter().zip(&names) {
            img.save_png(a.out.join(name))?;
        }
        match (&mut demographics, batch.ground_truth_demographics) {
            (Some(rows), Some(profiles)) => rows.extend(names.iter().cloned().zip(profiles)),
            _ => demographics = None,
        }
        artifacts.extend(names);
    }
    if let Some(rows) = demographics {
        write_demographics(create(&a.out.join(DEMOGRAPHICS_FILE))?, &rows)?;
        artifacts.push(DEMOGRAPHICS_FILE.into());
    }
    manifest.seed("data_seed", a.seed)?;
    manifest.seed(
        "batch_seeds",
        specs.iter().map(|s| s.batch_seed).collect::<Vec<_>>(),
    )?;
    manifest.seed(
        "truncation_psi",
        specs.iter().map(|s| s.truncation_psi).collect::<Vec<_>>(),
    )?;
    finish(manifest, &a.out, &artifacts)
}

fn ingest_at(root: &Path, side: Option<usize>) -> Result<DatasetManifest> {
    let probe = ingest_dataset(root, ResizePolicy::square(1))?;
    let side = side.unwrap_or(probe.entries[0].source_width as usize);
    Ok(DatasetManifest {
        resize: ResizePolicy::square(side),
        ..probe
    })
}

fn cmd_swap(a: &SwapArgs, args: Vec<String>) -> Result<PathBuf> {
    let backend = backend_from_name(&a.backend)?;
    let dataset = ingest_at(&a.input, a.resolution)?;
    let _lock = RunLock::acquire(&a.out)?;
    let mut manifest = RunManifest::new(
        "swap",
        args,
        &serde_json::json!({
            "input": a.input, "backend": a.backend, "resolution": dataset.resize.width,
        }),
    )?;
    manifest.adapter("swap_backend", backend.id());
    let (ids, images): (Vec<String>, Vec<Image>) = dataset.load_split(None)?.into_iter().unzip();
    let (swapped, provenance) = pair_swap_images(&images, backend.as_ref())?;
    let mut artifacts = Vec::new();
    let mut records = Vec::new();
    for (i, img) in swapped.iter().enumerate() {
        let name = format!("swap_{i:04}.png");
        img.save_png(a.out.join(&name))?;
        records.push(serde_json::json!({
            "image_id": name, "source": ids[provenance[i].source_index],
            "target": ids[provenance[i].target_index],
        }));
        artifacts.push(name);
    }
    write_json(a.out.join("provenance.json"), &records)?;
    artifacts.push("provenance.json".into());
    let demo_path = a.input.join(DEMOGRAPHICS_FILE);
    if demo_path.is_file() {
        let demo = read_demographics(&demo_path)?;
        let rows: Option<Vec<_>> = provenance
            .iter()
            .enumerate()
            .map(|(i, p)| {
                demo.get(&ids[p.source_index])
                    .map(|(prof, _)| (format!("swap_{i:04}.png"), *prof))
            })
            .collect();
        if let Some(rows) = rows {
            write_demographics(create(&a.out.join(DEMOGRAPHICS_FILE))?, &rows)?;
            artifacts.push(DEMOGRAPHICS_FILE.into());
        }
    }
    if !dataset.errors.is_empty() {
        write_json(a.out.join("ingest_errors.json"), &dataset.errors)?;
        artifacts.push("ingest_errors.json".into());
    }
    finish(manifest, &a.out, &artifacts)
}

fn write_training_outputs(model: &DetectorModel, out: &Path) -> Result<Vec<String>> {
    model.save(out.join("checkpoint.json"))?;
    let mut w = create(&out.join("loss_history.csv"))?;
    write_history_csv(&mut w, &model.history)?;
    w.flush()?;
    Ok(vec!["checkpoint.json".into(), "loss_history.csv".into()])
}

fn cmd_train(a: &TrainArgs, args: Vec<String>) -> Result<PathBuf> {
    let settings = a.resolve()?;
    let config = settings.detector_config();
    config.validate()?;
    let registry = ArchitectureRegistry::default();
    registry.get(&config.architecture_id)?;
    let generator = generator_from_name(&settings.generator)?;
    let backend = backend_from_name(&settings.backend)?;
    let _lock = RunLock::acquire(&a.out)?;
    let mut manifest = RunManifest::new("train", args, &settings)?;
    manifest.adapter("generator", generator.id());
    manifest.adapter("swap_backend", backend.id());
    let specs = SpecStream::new(
        settings.data_seed,
        config.batch_size,
        config.input_resolution,
    );
    let model = train(
        specs,
        generator.as_ref(),
        backend.as_ref(),
        &config,
        &registry,
    )?;
    let artifacts = write_training_outputs(&model, &a.out)?;
    manifest.seed("data_seed", settings.data_seed)?;
    manifest.seed("optimizer_seed", config.optimizer_seed)?;
    manifest.seed(
        "batch_seeds",
        model
            .history
            .iter()
            .filter_map(|r| r.batch_seed)
            .collect::<Vec<_>>(),
    )?;
    finish(manifest, &a.out, &artifacts)
}

fn cmd_finetune(a: &FinetuneArgs, args: Vec<String>) -> Result<PathBuf> {
    let settings = a.resolve()?;
    let registry = ArchitectureRegistry::default();
    let base = DetectorModel::load(&a.model, &registry)?;
    let config = DetectorConfig {
        learning_rate: settings.learning_rate,
        batch_size: settings.batch_size,
        steps_per_epoch: settings.steps_per_epoch,
        epochs: settings.epochs,
        optimizer_seed: settings.optimizer_seed,
        optimizer: settings.optimizer,
        momentum: settings.momentum,
        ..base.config.clone()
    };
    config.validate()?;
    let backend = backend_from_name(&settings.backend)?;
    let dataset = ingest_at(&a.dataset, Some(base.input_resolution))?;
    let split = dataset
        .entries
        .iter()
        .any(|e| e.split == Split::Train)
        .then_some(Split::Train);
    let images: Vec<Image> = dataset
        .load_split(split)?
        .into_iter()
        .map(|(_, i)| i)
        .collect();
    let _lock = RunLock::acquire(&a.out)?;
    let mut manifest = RunManifest::new(
        "finetune",
        args,
        &serde_json::json!({
            "settings": settings, "resolved": config, "base_model": a.model, "dataset": a.dataset,
        }),
    )?;
    manifest.adapter("swap_backend", backend.id());
    let model = finetune(&base, &images, backend.as_ref(), settings.n_images, &config)?;
    let artifacts = write_training_outputs(&model, &a.out)?;
    manifest.seed("optimizer_seed", config.optimizer_seed)?;
    finish(manifest, &a.out, &artifacts)
}

fn file_stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn cmd_evaluate(a: &EvaluateArgs, args: Vec<String>) -> Result<PathBuf> {
    let registry = ArchitectureRegistry::default();
    let models = a
        .models
        .iter()
        .map(|p| DetectorModel::load(p, &registry))
        .collect::<Result<Vec<_>>>()?;
    let res = models[0].input_resolution;
    if models.iter().any(|m| m.input_resolution != res) {
        return Err(Error::validation(
            "all models must share one input resolution",
        ));
    }
    let backends = a
        .backends
        .iter()
        .map(|b| backend_from_name(b))
        .collect::<Result<Vec<_>>>()?;
    let mut datasets = Vec::new();
    let mut demographics = Vec::new();
    for root in &a.datasets {
        let m = ingest_at(root, Some(res))?;
        let split = m
            .entries
            .iter()
            .any(|e| e.split == Split::Test)
            .then_some(Split::Test);
        let mut loaded = m.load_split(split)?;
        if let Some(n) = a.max_images {
            loaded.truncate(n);
        }
        let demo_path = root.join(DEMOGRAPHICS_FILE);
        demographics.push(if demo_path.is_file() {
            Some(read_demographics(&demo_path)?)
        } else {
            None
        });
        datasets.push((m.dataset_id.clone(), loaded));
    }
    let _lock = RunLock::acquire(&a.out)?;
    let mut manifest = RunManifest::new(
        "evaluate",
        args,
        &serde_json::json!({
            "models": a.models, "backends": a.backends, "datasets": a.datasets, "max_images": a.max_images,
        }),
    )?;
    for b in &backends {
        manifest.adapter(&format!("swap_backend:{}", b.id()), b.id());
    }
    let keyed: Vec<(TrainKey, &DetectorModel)> =
        models.iter().map(|m| (TrainKey::of(m), m)).collect();
    let backend_refs: Vec<&dyn SwapBackend> = backends.iter().map(|b| b.as_ref()).collect();
    let image_sets: Vec<(String, Vec<Image>)> = datasets
        .iter()
        .map(|(id, imgs)| (id.clone(), imgs.iter().map(|(_, i)| i.clone()).collect()))
        .collect();
    let matrix = cross_modal_matrix(&keyed, &backend_refs, &image_sets)?;
    matrix.write_csv(create(&a.out.join("matrix.csv"))?)?;
    matrix.write_table1_csv(create(&a.out.join("table1.csv"))?)?;
    write_json(a.out.join("matrix.json"), &matrix)?;
    let mut artifacts: Vec<String> = vec![
        "matrix.csv".into(),
        "table1.csv".into(),
        "matrix.json".into(),
    ];

    for ((id, loaded), demo) in datasets.iter().zip(&demographics) {
        let Some(demo) = demo else { continue };
        let ids: Vec<String> = loaded.iter().map(|(i, _)| i.clone()).collect();
        let Some(profiles) = ids
            .iter()
            .map(|i| demo.get(i).copied())
            .collect::<Option<Vec<_>>>()
        else {
            continue;
        };
        let images: Vec<Image> = loaded.iter().map(|(_, i)| i.clone()).collect();
        fs::create_dir_all(a.out.join("predictions"))?;
        for (key, model) in &keyed {
            for b in &backends {
                let records = prediction_records(model, &images, &ids, &profiles, b.as_ref())?;
                let name = format!(
                    "predictions/{}__{}__{}__{}.csv",
                    key.train_type,
                    key.train_swap,
                    b.id(),
                    id
                );
                write_prediction_log(create(&a.out.join(&name))?, &records)?;
                artifacts.push(name);
            }
        }
    }
    finish(manifest, &a.out, &artifacts)
}

/// Row key from a `<train_type>__<train_swap>__<test_swap>[__<dataset>]` stem.
fn key_from_stem(stem: &str) -> Option<AuditRowKey> {
    let parts: Vec<&str> = stem.split("__").collect();
    (3..=4).contains(&parts.len()).then(|| AuditRowKey {
        train_type: parts[0].into(),
        train_swap: parts[1].into(),
        test_swap: parts[2].into(),
    })
}

#[derive(Serialize)]
struct AuditEntry<'a> {
    source: &'a Path,
    train_type: &'a str,
    train_swap: &'a str,
    test_swap: &'a str,
    report: &'a BiasReport,
}

fn cmd_audit(a: &AuditArgs, args: Vec<String>) -> Result<PathBuf> {
    let mut rows = Vec::new();
    for path in &a.predictions {
        let records = read_prediction_log(read_to_string(path)?.as_bytes())?;
        if records.is_empty() {
            return Err(Error::validation(format!(
                "{} has no predictions",
                path.display()
            )));
        }
        let preds: Vec<Class> = records.iter().map(|r| r.prediction).collect();
        let truths: Vec<Class> = records.iter().map(|r| r.truth).collect();
        let profiles: Vec<_> = records.iter().map(|r| r.profile).collect();
        let report = audit(&preds, &truths, &profiles, a.min_samples)?;
        let key = key_from_stem(&file_stem(path)).unwrap_or_else(|| AuditRowKey {
            train_type: a.train_type.clone(),
            train_swap: a.train_swap.clone(),
            test_swap: a.test_swap.clone(),
        });
        rows.push((path.clone(), key, report));
    }
    let _lock = RunLock::acquire(&a.out)?;
    let manifest = RunManifest::new(
        "audit-bias",
        args,
        &serde_json::json!({
            "predictions": a.predictions, "min_samples": a.min_samples,
        }),
    )?;
    let entries: Vec<AuditEntry> = rows
        .iter()
        .map(|(p, k, r)| AuditEntry {
            source: p,
            train_type: &k.train_type,
            train_swap: &k.train_swap,
            test_swap: &k.test_swap,
            report: r,
        })
        .collect();
    write_json(a.out.join("bias_report.json"), &entries)?;
    let table: Vec<(AuditRowKey, &BiasReport)> =
        rows.iter().map(|(_, k, r)| (k.clone(), r)).collect();
    write_table2_csv(create(&a.out.join("table2.csv"))?, &table, false)?;
    write_table2_csv(create(&a.out.join("table2_filtered.csv"))?, &table, true)?;
    finish(
        manifest,
        &a.out,
        &[
            "bias_report.json".into(),
            "table2.csv".into(),
            "table2_filtered.csv".into(),
        ],
    )
}

fn cmd_explain(a: &ExplainArgs, args: Vec<String>) -> Result<PathBuf> {
    let registry = ArchitectureRegistry::default();
    let model = DetectorModel::load(&a.model, &registry)?;
    let r = model.input_resolution;
    let raw = image::open(&a.image)?.to_rgb8();
    let img = Image::from_rgb8(&crate::image::resize_rgb8(&raw, r, r));
    let class = a.target_class.index();
    let map = match a.method {
        MethodArg::Saliency => saliency_map(&model, &img, class)?,
        MethodArg::Occlusion => {
            let d = OcclusionParams::for_resolution(r);
            let window = a.window.unwrap_or(d.window);
            let params = OcclusionParams {
                window,
                stride: a.stride.unwrap_or((window / 2).max(1)),
                fill_value: a.fill,
            };
            occlusion_map(&model, &img, class, params)?
        }
    };
    let _lock = RunLock::acquire(&a.out)?;
    let manifest = RunManifest::new(
        "explain",
        args,
        &serde_json::json!({
            "model": a.model, "image": a.image, "method": map.method,
            "target_class": a.target_class, "occlusion": map.occlusion,
        }),
    )?;
    render_heatmap(&map, &img, a.out.join("heatmap.png"))?;
    map.save_sidecar(a.out.join("heatmap.json"))?;
    finish(
        manifest,
        &a.out,
        &["heatmap.png".into(), "heatmap.json".into()],
    )
}
