//! The `chronocheck` command line: one subcommand per experiment.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

use std::collections::{BTreeMap, HashMap};
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use chronocheck_core::eval::{exchange_tuples, metrics, predict_consistency, roc_auc};
use chronocheck_core::explain::{attribute_report, mi_ranking, occlusion_map, scaled_patches};
use chronocheck_core::split::{split, Split, SplitMode, SplitSpec};
use chronocheck_core::studies::{consistency_curve, location_noise_eval, shift_grid_eval, time_estimation_heatmap, SweepAxis};
use chronocheck_core::tamper::JitterSchedule;
use chronocheck_core::train::{train, EpochLog, TamperMode, TamperSchedule, TrainConfig, TrainError, Validation};
use chronocheck_core::types::{Label, Sample, Timestamp, VerificationTuple};
use chronocheck_core::world::{DatasetParams, GeneratedDataset, World};
use chronocheck_core::{Model, ModalitySet, ModelConfig};

use crate::checkpoint::{self, CheckpointError};
use crate::manifest::{read_manifest, write_manifest, ManifestError};
use crate::plot::{self, Chart};
use crate::report::{Reporter, RunConfig};
use crate::settings::{Settings, SettingsError};
use crate::tables::{export_tampered, import_external_scores, import_tampered, join_scores, write_training_log, TableError};

/// Name of the file describing a generated dataset's world.
pub const WORLD_FILE: &str = "world.json";
pub const SPLIT_FILE: &str = "split.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOG_FILE: &str = "train_log.csv";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<SettingsError> for CliError {
    fn from(e: SettingsError) -> Self {
        match e {
            SettingsError::File { .. } => CliError::Data(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

macro_rules! data_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Data(e.to_string())
            }
        }
    )*};
}
data_error!(ManifestError, CheckpointError, TableError, crate::report::ReportError, std::io::Error, serde_json::Error);

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diverged { .. } => CliError::Numeric(e.to_string()),
            TrainError::BatchSize(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

fn data(e: impl ToString) -> CliError {
    CliError::Data(e.to_string())
}

fn usage(e: impl ToString) -> CliError {
    CliError::Usage(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "chronocheck", version = crate::report::VERSION, about = "Verify alleged capture times of outdoor images against their content")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Key-value config file; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed (default 7, or CHRONOCHECK_SEED).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for image IO (0 = one per core).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Root directory for reports.
    #[arg(long, global = true)]
    pub report_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset and write its manifest.
    Generate(GenerateArgs),
    /// Split a dataset and train a model on the training side.
    Train(TrainArgs),
    /// Accuracy, AUC and ROC on the test split; optionally compare external scores.
    Evaluate(EvaluateArgs),
    /// Detection rate over a grid of month and hour shifts.
    ShiftGrid(ShiftGridArgs),
    /// Accuracy under test-time location noise.
    LocationNoise(LocationNoiseArgs),
    /// Consistency for every alleged month and hour of one sample.
    Heatmap(SampleArgs),
    /// Consistency while the scene's true time sweeps and the alleged time is fixed.
    Curve(CurveArgs),
    /// Occlusion sensitivity map of one sample.
    Occlude(SampleArgs),
    /// Most divergent transient attributes of one sample.
    Explain(ExplainArgs),
    /// Rank attributes by the change in ground/satellite mutual information.
    MiRank(MiRankArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub cameras: Option<usize>,
    #[arg(long)]
    pub per_camera: Option<usize>,
    #[arg(long)]
    pub image_size: Option<usize>,
    /// Output directory for the manifest and images.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Run directory for the checkpoint, log and split.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// shared-camera or cross-camera.
    #[arg(long)]
    pub split: Option<String>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// Comma-separated subset of G,t,l,S; must include G and t.
    #[arg(long)]
    pub modalities: Option<ModalitySet>,
    /// Add the transient-attribute branches.
    #[arg(long)]
    pub ta: bool,
    /// Architecture preset: desk, compact or paper.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub l2: Option<f64>,
    /// exchange or subtle.
    #[arg(long)]
    pub tamper: Option<String>,
    /// per-epoch or once.
    #[arg(long)]
    pub tamper_schedule: Option<String>,
    /// Jitter half of every batch's locations (needs a generated dataset).
    #[arg(long)]
    pub augment_locations: bool,
    /// Start from this checkpoint instead of fresh weights.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Also save a checkpoint every N epochs (0 = final only).
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Evaluate on the test split after every epoch.
    #[arg(long)]
    pub validate: bool,
}

#[derive(Debug, Args)]
pub struct ModelInputs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Split file written by `train` (default: next to the checkpoint).
    #[arg(long)]
    pub split_file: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub inputs: ModelInputs,
    /// Tampered test-set CSV to evaluate instead of fresh exchange tuples.
    #[arg(long)]
    pub tuples: Option<PathBuf>,
    /// External `id,score` CSV (higher = more likely tampered) to compare.
    #[arg(long)]
    pub scores: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ShiftGridArgs {
    #[command(flatten)]
    pub inputs: ModelInputs,
    /// Month shifts, inclusive range `a..b`.
    #[arg(long)]
    pub dm: Option<String>,
    /// Hour shifts, inclusive range `a..b`.
    #[arg(long)]
    pub dh: Option<String>,
}

#[derive(Debug, Args)]
pub struct LocationNoiseArgs {
    #[command(flatten)]
    pub inputs: ModelInputs,
    /// Comma-separated noise magnitudes in degrees.
    #[arg(long)]
    pub deltas: Option<String>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub inputs: ModelInputs,
    #[arg(long)]
    pub sample: Option<String>,
    /// Alleged time `month:hour` (default: the true time).
    #[arg(long)]
    pub alleged: Option<String>,
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    #[command(flatten)]
    pub sample: SampleArgs,
    /// hour or month.
    #[arg(long)]
    pub axis: Option<String>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub sample: SampleArgs,
    #[arg(long)]
    pub top: Option<usize>,
}

#[derive(Debug, Args)]
pub struct MiRankArgs {
    #[command(flatten)]
    pub inputs: ModelInputs,
    #[arg(long)]
    pub bins: Option<usize>,
    #[arg(long)]
    pub min_confidence: Option<f64>,
}

/// Split membership as saved next to a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFile {
    pub spec: SplitSpec,
    #[serde(flatten)]
    pub split: Split,
}

/// Parse a kebab-case enum through its serde representation.
pub fn parse_enum<T: DeserializeOwned>(key: &str, s: &str) -> Result<T, CliError> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| usage(format!("invalid value `{s}` for `{key}`")))
}

/// `a..b` (inclusive) or a single number.
pub fn parse_range(key: &str, s: &str) -> Result<std::ops::RangeInclusive<u32>, CliError> {
    let bad = || usage(format!("invalid range `{s}` for `{key}` (expected a..b)"));
    let (a, b) = match s.split_once("..") {
        Some((a, b)) => (a.trim().parse().map_err(|_| bad())?, b.trim().trim_start_matches('=').parse().map_err(|_| bad())?),
        None => {
            let v = s.trim().parse().map_err(|_| bad())?;
            (v, v)
        }
    };
    if a > b {
        return Err(bad());
    }
    Ok(a..=b)
}

/// `month:hour`, e.g. `12:11` for December, 11h.
pub fn parse_timestamp(s: &str) -> Result<Timestamp, CliError> {
    let bad = || usage(format!("invalid time `{s}` (expected month:hour)"));
    let (m, h) = s.split_once(':').ok_or_else(bad)?;
    Timestamp::new(m.trim().parse().map_err(|_| bad())?, h.trim().parse().map_err(|_| bad())?).map_err(usage)
}

fn required<T>(v: Option<T>, key: &str) -> Result<T, CliError> {
    v.ok_or_else(|| usage(format!("missing required setting `{key}`")))
}

/// Settings shared by every command, plus the resolved report root.
struct Context {
    settings: Settings,
    seed: u64,
    report_dir: PathBuf,
    records: BTreeMap<String, serde_json::Value>,
    command: &'static str,
}

impl Context {
    fn new(common: &Common, command: &'static str) -> Result<Self, CliError> {
        let mut settings = Settings::load(common.config.as_deref())?;
        let seed = settings.seed(common.seed, 7)?;
        let jobs = settings.get("jobs", common.jobs, 0usize)?;
        // Repeated invocations in one process keep the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
        let report_dir = PathBuf::from(settings.get("report-dir", common.report_dir.as_ref().map(|p| p.display().to_string()), "report".to_string())?);
        Ok(Self {
            settings,
            seed,
            report_dir,
            records: BTreeMap::new(),
            command,
        })
    }

    fn path(&mut self, key: &str, flag: &Option<PathBuf>) -> Result<Option<PathBuf>, CliError> {
        Ok(self.settings.get_opt(key, flag.as_ref().map(|p| p.display().to_string()))?.map(PathBuf::from))
    }

    fn record<T: Serialize>(&mut self, key: &str, v: &T) {
        self.records.insert(key.to_string(), serde_json::to_value(v).expect("records serialize"));
    }

    /// Fail on unused config keys and print the resolved settings.
    fn start(&self) -> Result<(), CliError> {
        self.settings.finish()?;
        eprint!("chronocheck {} {}\n{}", crate::report::VERSION, self.command, self.settings.summary());
        Ok(())
    }

    fn run_config(&self) -> RunConfig {
        RunConfig {
            command: self.command.to_string(),
            settings: self.settings.resolved().clone(),
            records: self.records.clone(),
        }
    }

    fn reporter(&self, experiment: &str) -> Result<Reporter, CliError> {
        Ok(Reporter::new(&self.report_dir, experiment, self.run_config())?)
    }
}

/// A loaded model with its test split.
struct Loaded {
    model: Model,
    test: Vec<Sample>,
    manifest: PathBuf,
}

fn load_inputs(ctx: &mut Context, inputs: &ModelInputs) -> Result<Loaded, CliError> {
    let ckpt = required(ctx.path("checkpoint", &inputs.checkpoint)?, "checkpoint")?;
    let manifest = required(ctx.path("manifest", &inputs.manifest)?, "manifest")?;
    let split_path = match ctx.path("split-file", &inputs.split_file)? {
        Some(p) => p,
        None => ckpt.parent().unwrap_or(Path::new(".")).join(SPLIT_FILE),
    };
    Ok(Loaded {
        model: load_model(&ckpt)?,
        test: load_test(&split_path, &manifest)?,
        manifest,
    })
}

fn load_model(path: &Path) -> Result<Model, CliError> {
    checkpoint::load(path).map_err(|e| data(format!("checkpoint {}: {e}", path.display())))
}

fn load_test(split_path: &Path, manifest: &Path) -> Result<Vec<Sample>, CliError> {
    let text = fs::read_to_string(split_path).map_err(|e| data(format!("missing test split {}: {e}", split_path.display())))?;
    let sf: SplitFile = serde_json::from_str(&text).map_err(|e| data(format!("{}: {e}", split_path.display())))?;
    select(read_manifest(manifest)?, &sf.split.test)
}

/// The samples with the given ids, in id order.
fn select(samples: Vec<Sample>, ids: &[String]) -> Result<Vec<Sample>, CliError> {
    let mut by_id: HashMap<String, Sample> = samples.into_iter().map(|s| (s.id.clone(), s)).collect();
    let missing: Vec<&str> = ids.iter().filter(|id| !by_id.contains_key(*id)).map(String::as_str).collect();
    if !missing.is_empty() {
        return Err(data(format!("split ids not in the manifest: {}", missing.join(", "))));
    }
    Ok(ids.iter().map(|id| by_id.remove(id).expect("checked")).collect())
}

fn check_image_size(model: &Model, samples: &[Sample]) -> Result<(), CliError> {
    let size = model.config().image_size;
    match samples.iter().find(|s| s.ground.height() != size || s.ground.width() != size) {
        Some(s) => Err(data(format!("checkpoint expects {size}-pixel images but {} is {}x{}", s.id, s.ground.height(), s.ground.width()))),
        None => Ok(()),
    }
}

fn world_of(manifest: &Path) -> Result<(World, DatasetParams), CliError> {
    let p = manifest.parent().unwrap_or(Path::new(".")).join(WORLD_FILE);
    let text = fs::read_to_string(&p).map_err(|e| data(format!("{}: {e} (only datasets made by `generate` can re-render tiles)", p.display())))?;
    let params: DatasetParams = serde_json::from_str(&text).map_err(|e| data(format!("{}: {e}", p.display())))?;
    Ok((World::new(params.seed), params))
}

fn find_sample<'a>(samples: &'a [Sample], id: &str) -> Result<&'a Sample, CliError> {
    samples.iter().find(|s| s.id == id).ok_or_else(|| data(format!("sample {id} is not in the test split")))
}

fn f(v: f64) -> String {
    format!("{v}")
}

pub fn cmd_generate(common: &Common, a: &GenerateArgs) -> Result<PathBuf, CliError> {
    let mut ctx = Context::new(common, "generate")?;
    let n_cameras = ctx.settings.get("cameras", a.cameras, 40usize)?;
    let per_camera = ctx.settings.get("per-camera", a.per_camera, 150usize)?;
    let image_size = ctx.settings.get("image-size", a.image_size, 32usize)?;
    let out = required(ctx.path("out", &a.out)?, "out")?;
    ctx.start()?;
    if n_cameras == 0 || per_camera == 0 {
        return Err(usage("--cameras and --per-camera must be positive"));
    }
    if image_size < 4 {
        return Err(usage("--image-size must be at least 4"));
    }
    let params = DatasetParams {
        n_cameras,
        samples_per_camera: per_camera,
        seed: ctx.seed,
        image_size,
    };
    let ds = GeneratedDataset::generate(params);
    let path = write_manifest(&ds.samples, &out)?;
    fs::write(out.join(WORLD_FILE), serde_json::to_string_pretty(&params)? + "\n")?;
    eprintln!("wrote {} records to {}", ds.samples.len(), path.display());
    Ok(path)
}

pub fn cmd_train(common: &Common, a: &TrainArgs) -> Result<PathBuf, CliError> {
    let mut ctx = Context::new(common, "train")?;
    let manifest = required(ctx.path("manifest", &a.manifest)?, "manifest")?;
    let out = required(ctx.path("out", &a.out)?, "out")?;
    let mode: SplitMode = parse_enum("split", &ctx.settings.get("split", a.split.clone(), "shared-camera".to_string())?)?;
    let train_fraction = ctx.settings.get("train-fraction", a.train_fraction, 0.8)?;
    let modalities = ctx.settings.get("modalities", a.modalities, ModalitySet::FULL)?;
    let ta = ctx.settings.switch("ta", a.ta)?;
    let preset = ctx.settings.get("preset", a.preset.clone(), "desk".to_string())?;
    let defaults = TrainConfig::desk();
    let epochs = ctx.settings.get("epochs", a.epochs, defaults.epochs)?;
    let batch_size = ctx.settings.get("batch-size", a.batch_size, defaults.batch_size)?;
    let learning_rate = ctx.settings.get("learning-rate", a.learning_rate, defaults.learning_rate)?;
    let l2_lambda = ctx.settings.get("l2", a.l2, defaults.l2_lambda)?;
    let tamper_mode: TamperMode = parse_enum("tamper", &ctx.settings.get("tamper", a.tamper.clone(), "exchange".to_string())?)?;
    let tamper_schedule: TamperSchedule = parse_enum("tamper-schedule", &ctx.settings.get("tamper-schedule", a.tamper_schedule.clone(), "per-epoch".to_string())?)?;
    let augment = ctx.settings.switch("augment-locations", a.augment_locations)?;
    let init = ctx.path("init", &a.init)?;
    let every = ctx.settings.get("checkpoint-every", a.checkpoint_every, 0usize)?;
    let validate = ctx.settings.switch("validate", a.validate)?;

    let samples = read_manifest(&manifest)?;
    let image_size = samples.first().map(|s| s.ground.height()).ok_or_else(|| data("manifest is empty"))?;
    let model_cfg = match init {
        Some(_) => None,
        None => {
            let base = match preset.as_str() {
                "desk" => ModelConfig::desk(),
                "compact" => ModelConfig::compact(),
                "paper" => ModelConfig::paper(),
                other => return Err(usage(format!("unknown preset `{other}` (desk, compact, paper)"))),
            };
            let cfg = ModelConfig {
                modalities,
                ta_branches: ta,
                image_size,
                seed: ctx.seed,
                ..base
            };
            cfg.validate().map_err(usage)?;
            Some(cfg)
        }
    };
    let cfg = TrainConfig {
        learning_rate,
        batch_size,
        epochs,
        l2_lambda,
        seed: ctx.seed,
        tamper_mode,
        tamper_schedule,
        location_augmentation: augment.then(JitterSchedule::standard),
        ..defaults
    };
    let spec = SplitSpec {
        mode,
        train_fraction,
        seed: ctx.seed,
    };
    if let Some(m) = &model_cfg {
        ctx.record("model", m);
    }
    ctx.record("train", &cfg);
    ctx.start()?;

    let mut model = match (&init, model_cfg) {
        (Some(p), _) => load_model(p)?,
        (None, Some(c)) => Model::new(c).map_err(usage)?,
        (None, None) => unreachable!("a config exists without --init"),
    };
    check_image_size(&model, &samples)?;
    let sp = split(&samples, &spec).map_err(data)?;
    let split_file = SplitFile { spec, split: sp };
    fs::create_dir_all(&out)?;
    fs::write(out.join(SPLIT_FILE), serde_json::to_string_pretty(&split_file)? + "\n")?;
    let train_set = select(samples.clone(), &split_file.split.train)?;
    let test_set = select(samples, &split_file.split.test)?;
    let val_tuples = if validate { exchange_tuples(&test_set, ctx.seed).map_err(data)? } else { Vec::new() };
    let validation = validate.then(|| Validation {
        samples: &test_set,
        tuples: &val_tuples,
    });
    let world = if augment { Some(world_of(&manifest)?.0) } else { None };
    let tiles = world.as_ref().map(|w| w as &dyn chronocheck_core::tamper::TileSource);

    let mut save_error = None;
    let logs: Vec<EpochLog> = train(&mut model, &train_set, &cfg, validation, tiles, |log, m| {
        match log.val {
            Some(v) => eprintln!("epoch {:>3}  loss {:.5}  val acc {:.4}  auc {:.4}", log.epoch, log.train_loss, v.accuracy, v.auc),
            None => eprintln!("epoch {:>3}  loss {:.5}", log.epoch, log.train_loss),
        }
        if every > 0 && log.epoch % every == 0 {
            if let Err(e) = checkpoint::save(m, &out.join(format!("model-epoch{:03}.ckpt", log.epoch))) {
                save_error.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = save_error {
        return Err(e.into());
    }
    write_training_log(&out.join(LOG_FILE), &logs)?;
    let ckpt = out.join(CHECKPOINT_FILE);
    checkpoint::save(&model, &ckpt)?;
    let mut r = Reporter::new(&out, "", ctx.run_config())?;
    r.json("run", &serde_json::json!({ "epochs": logs }))?;
    eprintln!("saved {}", ckpt.display());
    Ok(ckpt)
}

#[derive(Debug, Serialize)]
struct EvaluationReport {
    accuracy: f64,
    auc: f64,
    count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    external: Option<ExternalComparison>,
}

#[derive(Debug, Serialize)]
struct ExternalComparison {
    auc: f64,
    /// AUC of the model on the same tuples.
    model_auc: f64,
}

pub fn cmd_evaluate(common: &Common, a: &EvaluateArgs) -> Result<PathBuf, CliError> {
    let mut ctx = Context::new(common, "evaluate")?;
    let tuples_path = ctx.path("tuples", &a.tuples)?;
    let scores_path = ctx.path("scores", &a.scores)?;
    let l = load_inputs(&mut ctx, &a.inputs)?;
    ctx.start()?;
    check_image_size(&l.model, &l.test)?;
    let tuples = match &tuples_path {
        Some(p) => import_tampered(p, &l.test)?,
        None => exchange_tuples(&l.test, ctx.seed).map_err(data)?,
    };
    let preds = predict_consistency(&l.model, &l.test, &tuples).map_err(data)?;
    let labels: Vec<Label> = tuples.iter().map(|t| t.label).collect();
    let m = metrics(&preds, &labels).map_err(data)?;
    let scores: Vec<f64> = preds.iter().map(|p| p.p_inconsistent()).collect();
    let roc = roc_auc(&scores, &labels).map_err(data)?;
    let ids: Vec<String> = tuples.iter().map(|t| t.id(&l.test)).collect();
    let external = match &scores_path {
        Some(p) => {
            let ext = join_scores(&import_external_scores(p)?, &ids)?;
            Some(ExternalComparison {
                auc: roc_auc(&ext, &labels).map_err(data)?.auc,
                model_auc: roc.auc,
            })
        }
        None => None,
    };
    let mut r = ctx.reporter("evaluate")?;
    let out = r.json(
        "metrics",
        &EvaluationReport {
            accuracy: m.accuracy,
            auc: m.auc,
            count: m.count,
            external,
        },
    )?;
    r.csv("roc", &["false_positive_rate", "true_positive_rate"], roc.points.iter().map(|&(x, y)| vec![f(x), f(y)]))?;
    r.csv("scores", &["id", "score"], ids.iter().zip(&scores).map(|(id, s)| vec![id.clone(), f(*s)]))?;
    let tampered = r.dir().join("tampered.csv");
    export_tampered(&tampered, &l.test, &tuples)?;
    let chart = Chart {
        x_range: (0.0, 1.0),
        y_range: (0.0, 1.0),
        width: 320,
        height: 320,
    };
    r.png("roc", &chart.render(&[&roc.points, &[(0.0, 0.0), (1.0, 1.0)]]))?;
    println!("accuracy {:.4}  auc {:.4}  tuples {}", m.accuracy, m.auc, m.count);
    Ok(out)
}

pub fn cmd_shift_grid(common: &Common, a: &ShiftGridArgs) -> Result<PathBuf, CliError> {
    let mut ctx = Context::new(common, "shift-grid")?;
    let dm = parse_range("dm", &ctx.settings.get("dm", a.dm.clone(), "0..6".to_string())?)?;
    let dh = parse_range("dh", &ctx.settings.get("dh", a.dh.clone(), "0..12".to_string())?)?;
    if *dm.end() > 6 || *dh.end() > 12 {
        return Err(usage("shifts are limited to 6 months and 12 hours"));
    }
    let l = load_inputs(&mut ctx, &a.inputs)?;
    ctx.start()?;
    check_image_size(&l.model, &l.test)?;
    let g = shift_grid_eval(&l.model, &l.test, dm, dh).map_err(data)?;
    let mut r = ctx.reporter("shift-grid")?;
    r.csv("grid", &["months", "hours", "rate", "count"], g.cells.iter().map(|c| vec![c.months.to_string(), c.hours.to_string(), f(c.rate), c.count.to_string()]))?;
    let values: Vec<Option<f64>> = g.months.iter().flat_map(|&m| g.hours.iter().map(move |&h| (m, h))).map(|(m, h)| g.cell(m, h).map(|c| c.rate)).collect();
    r.png("grid", &plot::heatmap(g.months.len(), g.hours.len(), &values, 0.0, 1.0, 24))?;
    let rho = g.difficulty_correlation();
    println!("{} cells, spearman(Δm+Δh, rate) = {rho:.3}", g.cells.len());
    Ok(r.json("grid", &serde_json::json!({ "grid": g, "spearman": rho }))?)
}

pub fn cmd_location_noise(common: &Common, a: &LocationNoiseArgs) -> Result<PathBuf, CliError> {
    let mut ctx = Context::new(common, "location-noise")?;
    let text = ctx.settings.get("deltas", a.deltas.clone(), "0,0.05,0.1,0.25,0.5,1,5,10,15".to_string())?;
    let deltas = text
        .split(',')
        .map(|s| s.trim().parse::<f64>().ok().filter(|v| *v >= 0.0))
        .collect::<Option<Vec<f64>>>()
        .ok_or_else(|| usage(format!("invalid deltas `{text}`")))?;
    let l = load_inputs(&mut ctx, &a.inputs)?;
    ctx.start()?;
    check_image_size(&l.model, &l.test)?;
    if !l.model.config().modalities.location {
        return Err(usage("the model does not use locations"));
    }
    let (world, _) = world_of(&l.manifest)?;
    let tuples = exchange_tuples(&l.test, ctx.seed).map_err(data)?;
    let rows = location_noise_eval(&l.model, &l.test, &tuples, &deltas, &world, ctx.seed).map_err(data)?;
    let mut r = ctx.reporter("location-noise")?;
    r.csv("location_noise", &["delta", "accuracy", "auc"], rows.iter().map(|x| vec![f(x.delta), f(x.metrics.accuracy), f(x.metrics.auc)]))?;
    for x in &rows {
        println!("Δl {:>6}  accuracy {:.4}  auc {:.4}", x.delta, x.metrics.accuracy, x.metrics.auc);
    }
    Ok(r.json("location_noise", &rows)?)
}

fn sample_and_time(ctx: &mut Context, a: &SampleArgs, l: &Loaded) -> Result<(Sample, Timestamp), CliError> {
    let id = required(ctx.settings.get_opt("sample", a.sample.clone())?, "sample")?;
    let alleged = ctx.settings.get_opt("alleged", a.alleged.clone())?;
    let s = find_sample(&l.test, &id)?.clone();
    let t = match alleged {
        Some(text) => parse_timestamp(&text)?,
        None => s.timestamp,
    };
    Ok((s, t))
}

pub fn cmd_heatmap(common: &Common, a: &SampleArgs) -> Result<PathBuf, CliError> {
    let mut ctx = Context::new(common, "heatmap")?;
    let l = load_inputs(&mut ctx, &a.inputs)?;
    let (s, _) = sample_and_time(&mut ctx, a, &l)?;
    ctx.start()?;
    check_image_size(&l.model, &l.test)?;
    let h = time_estimation_heatmap(&l.model, &s).map_err(data)?;
    let mut r = ctx.reporter("heatmap")?;
    let mut header = vec!["month".to_string()];
    header.extend((0..24).map(|h| format!("h{h:02}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    r.csv(&s.id, &header, (1..=12).map(|m| std::iter::once(m.to_string()).chain((0..24).map(|hr| f(h.grid[(m - 1) * 24 + hr]))).collect::<Vec<_>>()))?;
    let mut img = plot::heatmap(12, 24, &h.grid.iter().map(|&v| Some(v)).collect::<Vec<_>>(), 0.0, 1.0, 16);
    let t = s.timestamp;
    plot::mark_cell(&mut img, t.month() as usize - 1, t.hour() as usize, 16, image::Rgb([255, 0, 0]));
    r.png(&s.id, &img)?;
    let best = h.argmax();
    println!("true {}:{}  argmax {}:{}", t.month(), t.hour(), best.month(), best.hour());
    Ok(r.json(&s.id, &serde_json::json!({ "heatmap": h, "argmax": best }))?)
}

pub fn cmd_curve(common: &Common, a: &CurveArgs) -> Result<PathBuf, CliError> {
    let mut ctx = Context::new(common, "curve")?;
    let axis: SweepAxis = parse_enum("axis", &ctx.settings.get("axis", a.axis.clone(), "hour".to_string())?)?;
    let l = load_inputs(&mut ctx, &a.sample.inputs)?;
    let (s, alleged) = sample_and_time(&mut ctx, &a.sample, &l)?;
    ctx.start()?;
    let (world, _) = world_of(&l.manifest)?;
    let cam = world.camera_at(s.camera_id.clone(), s.location);
    let c = consistency_curve(&l.model, &cam, alleged, axis, ctx.seed).map_err(data)?;
    let name = format!("{}-{}", s.id, match axis {
        SweepAxis::Hour => "hour",
        SweepAxis::Month => "month",
    });
    let mut r = ctx.reporter("curve")?;
    r.csv(&name, &["true_month", "true_hour", "p_consistent"], c.points.iter().map(|(t, p)| vec![t.month().to_string(), t.hour().to_string(), f(*p)]))?;
    let pts: Vec<(f64, f64)> = c
        .points
        .iter()
        .map(|(t, p)| (if axis == SweepAxis::Hour { t.hour() as f64 } else { t.month() as f64 }, *p))
        .collect();
    let xr = if axis == SweepAxis::Hour { (0.0, 24.0) } else { (0.0, 12.0) };
    let chart = Chart {
        x_range: xr,
        y_range: (0.0, 1.0),
        width: 420,
        height: 260,
    };
    r.png(&name, &chart.render(&[&pts]))?;
    Ok(r.json(&name, &c)?)
}

pub fn cmd_occlude(common: &Common, a: &SampleArgs) -> Result<PathBuf, CliError> {
    let mut ctx = Context::new(common, "occlude")?;
    let l = load_inputs(&mut ctx, &a.inputs)?;
    let (s, alleged) = sample_and_time(&mut ctx, a, &l)?;
    ctx.start()?;
    check_image_size(&l.model, &l.test)?;
    let size = l.model.config().image_size;
    let map = occlusion_map(&l.model, &s, alleged, &scaled_patches(size)).map_err(data)?;
    let mut r = ctx.reporter("explain")?;
    let name = format!("occlusion-{}", s.id);
    r.csv(&name, &["y", "x", "delta_p_consistent"], (0..map.height).flat_map(|y| (0..map.width).map(move |x| (y, x))).map(|(y, x)| vec![y.to_string(), x.to_string(), f(map.get(y, x))]))?;
    let limit = map.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    r.png(&name, &plot::occlusion_overlay(&s.ground, &map.values, limit, (256 / size.max(1)).max(1) as u32))?;
    Ok(r.json(&name, &map)?)
}

pub fn cmd_explain(common: &Common, a: &ExplainArgs) -> Result<PathBuf, CliError> {
    let mut ctx = Context::new(common, "explain")?;
    let top = ctx.settings.get("top", a.top, 10usize)?;
    let l = load_inputs(&mut ctx, &a.sample.inputs)?;
    let (s, alleged) = sample_and_time(&mut ctx, &a.sample, &l)?;
    ctx.start()?;
    check_image_size(&l.model, &l.test)?;
    let rep = attribute_report(&l.model, &s, alleged).map_err(usage)?;
    let mut r = ctx.reporter("explain")?;
    let name = format!("attributes-{}", s.id);
    r.csv(&name, &["attribute", "ground", "satellite", "divergence"], rep.top(top).iter().map(|e| vec![e.name.clone(), f(e.ground), f(e.satellite), f(e.divergence)]))?;
    for e in rep.top(top) {
        println!("{:<16} ground {:.3}  satellite {:.3}  |Δ| {:.3}", e.name, e.ground, e.satellite, e.divergence);
    }
    Ok(r.json(&name, &rep)?)
}

pub fn cmd_mi_rank(common: &Common, a: &MiRankArgs) -> Result<PathBuf, CliError> {
    let mut ctx = Context::new(common, "mi-rank")?;
    let bins = ctx.settings.get("bins", a.bins, 10usize)?;
    let min_confidence = ctx.settings.get("min-confidence", a.min_confidence, 0.9)?;
    let l = load_inputs(&mut ctx, &a.inputs)?;
    ctx.start()?;
    check_image_size(&l.model, &l.test)?;
    let tuples: Vec<VerificationTuple> = exchange_tuples(&l.test, ctx.seed).map_err(data)?;
    let rank = mi_ranking(&l.model, &l.test, &tuples, bins, min_confidence).map_err(|e| match e {
        chronocheck_core::explain::ExplainError::NoAttributeBranches | chronocheck_core::explain::ExplainError::Bins => usage(e),
        _ => data(e),
    })?;
    let mut r = ctx.reporter("explain")?;
    r.csv("mi_ranking", &["rank", "attribute", "mi_consistent", "mi_inconsistent", "delta_mi"], rank.attributes.iter().enumerate().map(|(i, x)| vec![(i + 1).to_string(), x.name.clone(), f(x.mi_consistent), f(x.mi_inconsistent), f(x.delta)]))?;
    r.csv(
        "mi_divergence",
        &["attribute", "label", "bin", "count"],
        rank.attributes.iter().flat_map(|x| {
            let rows = |label: u8, h: &[u64]| h.iter().enumerate().map(move |(b, c)| vec![x.name.clone(), label.to_string(), b.to_string(), c.to_string()]).collect::<Vec<_>>();
            let mut v = rows(0, &x.divergence_consistent);
            v.extend(rows(1, &x.divergence_inconsistent));
            v
        }),
    )?;
    for (i, x) in rank.attributes.iter().take(10).enumerate() {
        println!("{:>2} {:<16} ΔMI {:+.4}", i + 1, x.name, x.delta);
    }
    Ok(r.json("mi_ranking", &rank)?)
}

pub fn dispatch(cli: &Cli) -> Result<PathBuf, CliError> {
    let c = &cli.common;
    match &cli.command {
        Command::Generate(a) => cmd_generate(c, a),
        Command::Train(a) => cmd_train(c, a),
        Command::Evaluate(a) => cmd_evaluate(c, a),
        Command::ShiftGrid(a) => cmd_shift_grid(c, a),
        Command::LocationNoise(a) => cmd_location_noise(c, a),
        Command::Heatmap(a) => cmd_heatmap(c, a),
        Command::Curve(a) => cmd_curve(c, a),
        Command::Occlude(a) => cmd_occlude(c, a),
        Command::Explain(a) => cmd_explain(c, a),
        Command::MiRank(a) => cmd_mi_rank(c, a),
    }
}

/// Parse arguments, run, and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parsers() {
        assert_eq!(parse_range("dm", "0..6").unwrap(), 0..=6);
        assert_eq!(parse_range("dm", "0..=6").unwrap(), 0..=6);
        assert_eq!(parse_range("dm", "3").unwrap(), 3..=3);
        assert!(parse_range("dm", "6..0").is_err());
        assert_eq!(parse_timestamp("12:11").unwrap(), Timestamp::new(12, 11).unwrap());
        assert!(parse_timestamp("13:0").is_err());
        assert_eq!(parse_enum::<SplitMode>("split", "cross-camera").unwrap(), SplitMode::CrossCamera);
        assert!(parse_enum::<SplitMode>("split", "nope").is_err());
        assert_eq!(parse_enum::<SweepAxis>("axis", "month").unwrap(), SweepAxis::Month);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Usage(String::new()).exit_code(), 1);
        assert_eq!(CliError::Data(String::new()).exit_code(), 2);
        assert_eq!(CliError::Numeric(String::new()).exit_code(), 3);
        assert_eq!(run(["chronocheck", "bogus"]), 1);
        assert_eq!(run(["chronocheck", "--help"]), 0);
    }
}
