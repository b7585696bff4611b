//! Command-line front end. Exit codes: 0 success, 1 usage or run failure,
//! 2 missing input, 3 incompatible checkpoint or settings.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::builder::BoolishValueParser;
use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::config::{ConfigError, RunConfig, TaskSelection};
use crate::dataset::{DatasetError, DatasetManifest, Task, NUM_FEATURES};
use crate::detection::{self, DetectionError, RoiPlan};
use crate::evaluate::{EvalError, ScoreTable};
use crate::preprocess::{self, write_ppm, PreprocessError, RoiBox};
use crate::synth;
use crate::train::{self, ClassifierBank, TrainError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("missing input: {0}")]
    Missing(String),
    #[error("incompatible: {0}")]
    Incompatible(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Failed(_) => 1,
            CliError::Missing(_) => 2,
            CliError::Incompatible(_) => 3,
        }
    }
}

fn missing(p: &Path) -> CliError {
    CliError::Missing(p.display().to_string())
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Missing(p) => missing(&p),
            e => CliError::Usage(e.to_string()),
        }
    }
}

impl From<PreprocessError> for CliError {
    fn from(e: PreprocessError) -> Self {
        match &e {
            PreprocessError::Image { .. } => CliError::Missing(e.to_string()),
            _ => CliError::Failed(e.to_string()),
        }
    }
}

impl From<DetectionError> for CliError {
    fn from(e: DetectionError) -> Self {
        match &e {
            DetectionError::Io { .. } => CliError::Missing(e.to_string()),
            _ => CliError::Failed(e.to_string()),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::Missing(p) => missing(&p),
            DatasetError::Image(e) => e.into(),
            DatasetError::Detection(e) => e.into(),
            e => CliError::Failed(e.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Missing(p) => missing(&p),
            CheckpointError::Io { .. } => CliError::Failed(e.to_string()),
            e => CliError::Incompatible(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Preprocess(e) => e.into(),
            e => CliError::Failed(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::NoGlaucomaModel => CliError::Incompatible(e.to_string()),
            e => CliError::Failed(e.to_string()),
        }
    }
}

fn io_failed(p: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Failed(format!("{}: {e}", p.display()))
}

#[derive(Debug, Parser)]
#[command(name = "brighteye", version, about = "Glaucoma screening from fundus photographs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every verb; each overrides the matching config value.
#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// Run configuration file (TOML)
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Crop around the detected optic disc
    #[arg(long, value_name = "BOOL", value_parser = BoolishValueParser::new())]
    pub od_crop: Option<bool>,
    /// Zero the near-black surround
    #[arg(long, value_name = "BOOL", value_parser = BoolishValueParser::new())]
    pub bg_removal: Option<bool>,
    /// glaucoma, feature1..feature10 or bank
    #[arg(long)]
    pub task: Option<TaskSelection>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset
    Synth {
        #[command(flatten)]
        common: Common,
        /// Number of images
        #[arg(long)]
        n: Option<usize>,
    },
    /// Write model-sized preprocessed images for a manifest
    Preprocess {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Train one classifier or the full bank
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Score a manifest and write a screening report
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Checkpoint file or bank directory
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Print probabilities for one image
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        image: PathBuf,
        /// Detector output for the image
        #[arg(long)]
        detection: Option<PathBuf>,
    },
}

fn effective_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.train.seed = s;
        cfg.synth.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.paths.out = Some(o.clone());
    }
    if let Some(v) = common.od_crop {
        cfg.preprocess.od_crop = v;
    }
    if let Some(v) = common.bg_removal {
        cfg.preprocess.bg_removal = v;
    }
    if let Some(t) = common.task {
        cfg.task = t;
    }
    Ok(cfg)
}

fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, CliError> {
    p.as_deref()
        .ok_or_else(|| CliError::Usage(format!("no {what} given (flag or config)")))
}

fn create_dir(p: &Path) -> Result<(), CliError> {
    fs::create_dir_all(p).map_err(io_failed(p))
}

fn write_file(p: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(p, contents).map_err(io_failed(p))
}

fn load_manifest(cfg: &RunConfig) -> Result<DatasetManifest, CliError> {
    let path = required(&cfg.paths.manifest, "manifest")?;
    let m = DatasetManifest::load(path)?;
    m.check_paths()?;
    Ok(m)
}

/// Loads a bank directory, or wraps a single checkpoint file as a bank.
pub fn load_classifiers(path: &Path) -> Result<ClassifierBank, CliError> {
    if path.is_dir() {
        Ok(ClassifierBank::load(path)?)
    } else {
        let ck = Checkpoint::load(path)?;
        Ok(ClassifierBank {
            config: ck.model.config().clone(),
            preprocess: ck.preprocess,
            models: [(ck.task, ck.model)].into_iter().collect(),
            skipped: Vec::new(),
        })
    }
}

/// Rejects explicit settings that disagree with what the classifiers were
/// trained with.
fn check_compatible(bank: &ClassifierBank, cfg: &RunConfig, common: &Common) -> Result<(), CliError> {
    if cfg.model_given && cfg.model != bank.config {
        return Err(CliError::Incompatible(
            "model settings in the config differ from the checkpoint".into(),
        ));
    }
    for (name, flag, trained) in [
        ("od-crop", common.od_crop, bank.preprocess.od_crop),
        ("bg-removal", common.bg_removal, bank.preprocess.bg_removal),
    ] {
        if flag.is_some_and(|v| v != trained) {
            return Err(CliError::Incompatible(format!(
                "--{name} {} but the checkpoint was trained with {trained}",
                flag.unwrap_or_default()
            )));
        }
    }
    Ok(())
}

fn cmd_synth(common: &Common, n: Option<usize>, out: &mut dyn Write) -> Result<(), CliError> {
    let mut cfg = effective_config(common)?;
    if let Some(n) = n {
        cfg.synth.n = n;
    }
    let dir = required(&cfg.paths.out, "output directory")?;
    let samples = synth::generate(&cfg.synth);
    synth::write_dataset(dir, &samples)?;
    let rg = samples.iter().filter(|s| s.sample.rg).count();
    let _ = writeln!(out, "wrote {} images ({rg} referable) to {}", samples.len(), dir.display());
    Ok(())
}

fn cmd_preprocess(common: &Common, manifest: &Option<PathBuf>, out: &mut dyn Write) -> Result<(), CliError> {
    let mut cfg = effective_config(common)?;
    if manifest.is_some() {
        cfg.paths.manifest = manifest.clone();
    }
    let dir = required(&cfg.paths.out, "output directory")?.to_path_buf();
    let samples = load_manifest(&cfg)?.load_samples()?;
    let data = train::prepare_samples(&samples, &cfg.preprocess, &cfg.model)?;
    create_dir(&dir)?;
    let mut plans = String::from("id,plan,cx,cy,side\n");
    for s in &data {
        write_ppm(&dir.join(format!("{}.ppm", s.id)), &s.image)?;
        match &s.plan {
            RoiPlan::CropDisc(d) => {
                let roi = RoiBox::from_detection(d)?;
                plans.push_str(&format!("{},crop,{},{},{}\n", s.id, roi.cx, roi.cy, roi.side));
            }
            RoiPlan::FullImage => plans.push_str(&format!("{},full,,,\n", s.id)),
        }
    }
    write_file(&dir.join("plans.csv"), plans)?;
    let _ = writeln!(out, "preprocessed {} images into {}", data.len(), dir.display());
    Ok(())
}

fn cmd_train(common: &Common, manifest: &Option<PathBuf>, out: &mut dyn Write) -> Result<(), CliError> {
    let mut cfg = effective_config(common)?;
    if manifest.is_some() {
        cfg.paths.manifest = manifest.clone();
    }
    let dir = required(&cfg.paths.out, "output directory")?.to_path_buf();
    let samples = load_manifest(&cfg)?.load_samples()?;
    create_dir(&dir)?;
    write_file(&dir.join("run_config.toml"), cfg.to_toml())?;
    match cfg.task {
        TaskSelection::Single(task) => {
            let outcome = train::train_task(&cfg.model, &cfg.train, &cfg.augment, &cfg.preprocess, task, &samples)?;
            Checkpoint {
                task,
                preprocess: cfg.preprocess.clone(),
                model: outcome.model,
            }
            .save(&dir.join(crate::checkpoint::checkpoint_file_name(task)))?;
            write_file(&dir.join(format!("{task}.log.jsonl")), outcome.log.to_jsonl())?;
            let _ = writeln!(out, "{task}: selected epoch {:?}", outcome.log.best_epoch);
        }
        TaskSelection::Bank => {
            let outcome = train::train_bank(&cfg.model, &cfg.train, &cfg.augment, &cfg.preprocess, &samples)?;
            outcome.bank.save(&dir)?;
            for (task, log) in &outcome.logs {
                write_file(&dir.join(format!("{task}.log.jsonl")), log.to_jsonl())?;
                let _ = writeln!(out, "{task}: selected epoch {:?}", log.best_epoch);
            }
            let mut skips = String::new();
            for s in &outcome.bank.skipped {
                let rec = serde_json::json!({"kind": "skipped", "task": s.task.to_string(), "reason": s.reason});
                skips.push_str(&rec.to_string());
                skips.push('\n');
                let _ = writeln!(out, "{}: skipped ({})", s.task, s.reason);
            }
            write_file(&dir.join("bank.log.jsonl"), skips)?;
        }
    }
    Ok(())
}

fn cmd_eval(
    common: &Common,
    manifest: &Option<PathBuf>,
    checkpoint: &Option<PathBuf>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let mut cfg = effective_config(common)?;
    if manifest.is_some() {
        cfg.paths.manifest = manifest.clone();
    }
    if checkpoint.is_some() {
        cfg.paths.checkpoint = checkpoint.clone();
    }
    let bank = load_classifiers(required(&cfg.paths.checkpoint, "checkpoint")?)?;
    check_compatible(&bank, &cfg, common)?;
    let samples = load_manifest(&cfg)?.load_samples()?;
    let data = train::prepare_samples(&samples, &bank.preprocess, &bank.config)?;
    let table = ScoreTable::score_bank(&bank, &data).map_err(|e| CliError::Failed(e.to_string()))?;
    let report = table.report(cfg.train.feature_threshold)?;
    let text = report.to_kv_text();
    if let Some(dir) = &cfg.paths.out {
        create_dir(dir)?;
        write_file(&dir.join("report.txt"), &text)?;
        write_file(&dir.join("scores.csv"), table.to_csv())?;
        write_file(&dir.join("roc.csv"), report.roc_table_csv())?;
    }
    let _ = write!(out, "{text}");
    Ok(())
}

fn cmd_infer(
    common: &Common,
    checkpoint: &Option<PathBuf>,
    image: &Path,
    detection_file: &Option<PathBuf>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let mut cfg = effective_config(common)?;
    if checkpoint.is_some() {
        cfg.paths.checkpoint = checkpoint.clone();
    }
    let bank = load_classifiers(required(&cfg.paths.checkpoint, "checkpoint")?)?;
    check_compatible(&bank, &cfg, common)?;
    if !image.is_file() {
        return Err(missing(image));
    }
    let img = preprocess::read_image(image)?;
    let detections = match detection_file {
        Some(p) if !p.is_file() => return Err(missing(p)),
        Some(p) => detection::load_detection_file(p, img.width(), img.height())?,
        None => Vec::new(),
    };
    let c = &bank.config;
    let (prepared, plan) = preprocess::prepare_image(
        &img,
        &detections,
        &bank.preprocess,
        c.image_width as u32,
        c.image_height as u32,
    )?;
    if bank.preprocess.od_crop && plan == RoiPlan::FullImage {
        log::info!("fallback: full image");
    }
    let pixels = preprocess::to_unit_pixels(&prepared);
    let tasks: Vec<Task> = if bank.models.contains_key(&Task::Glaucoma) && bank.models.len() + bank.skipped.len() > 1 {
        std::iter::once(Task::Glaucoma)
            .chain((1..=NUM_FEATURES as u8).map(Task::Feature))
            .collect()
    } else {
        bank.models.keys().copied().collect()
    };
    for task in tasks {
        match bank.models.get(&task) {
            Some(model) => {
                let p = model.predict(&pixels).map_err(|e| CliError::Failed(e.to_string()))?;
                let _ = writeln!(out, "{task} {:.6}", p);
            }
            None => {
                let _ = writeln!(out, "{task} na");
            }
        }
    }
    Ok(())
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Synth { common, n } => cmd_synth(common, *n, out),
        Command::Preprocess { common, manifest } => cmd_preprocess(common, manifest, out),
        Command::Train { common, manifest } => cmd_train(common, manifest, out),
        Command::Eval {
            common,
            manifest,
            checkpoint,
        } => cmd_eval(common, manifest, checkpoint, out),
        Command::Infer {
            common,
            checkpoint,
            image,
            detection,
        } => cmd_infer(common, checkpoint, image, detection, out),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Errors go to standard error.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
