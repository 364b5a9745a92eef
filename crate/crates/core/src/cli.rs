//! `odseg` command line: audit, train, eval, predict, overlay and report.
//!
//! Exit codes: 0 success, 1 failed check (audit mismatch, sanity gate,
//! divergence), 2 usage or configuration error, 3 dataset or input error,
//! 4 checkpoint incompatibility.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arch::{
    audit_against_tables, default_network_spec, infer_shapes, NetworkSpec, SkipMode, TensorShape,
};
use crate::data::{
    load_dataset, load_sample, resize_sample, split, DataError, DatasetKind, DatasetManifest,
    FundusSample, SampleCache, SampleRecord, Split, SplitRatios, NUM_CLASSES,
};
use crate::engine::{
    evaluate, overfit_single, predict, render_overlay, train, Checkpoint, EngineError,
    NetworkSegmenter, TrainConfig,
};
use crate::nn::NnError;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_COMPAT: i32 = 4;

/// Split used when a dataset ships without one.
const DEFAULT_RATIOS: (f64, f64, f64) = (0.7, 0.0, 0.3);
const OVERFIT_OD_TARGET: f64 = 0.95;
const OVERFIT_OC_TARGET: f64 = 0.90;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        let code = match e {
            DataError::InvalidRatios(_)
            | DataError::InvalidThreshold(_)
            | DataError::InvalidSide(_)
            | DataError::UnsupportedOp(_)
            | DataError::UnknownDataset(_) => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        Self::new(code, e.to_string())
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        let code = match &e {
            EngineError::Arch(_) | EngineError::Config(_) => EXIT_USAGE,
            EngineError::Nn(NnError::Arch(_)) => EXIT_USAGE,
            EngineError::Nn(_) | EngineError::Incompatible(_) | EngineError::Format(_) => {
                EXIT_COMPAT
            }
            EngineError::Data(_)
            | EngineError::SampleShape { .. }
            | EngineError::EmptySet(_)
            | EngineError::Io(_) => EXIT_DATA,
            EngineError::Diverged { .. } | EngineError::Loss(_) | EngineError::Metrics(_) => {
                EXIT_CHECK
            }
        };
        Self::new(code, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::new(EXIT_DATA, e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "odseg", version, about = "Optic disc and cup segmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compare per-layer parameter counts with the published tables and print the shape trace.
    Audit(AuditArgs),
    /// Train a network, or run the single-image overfit sanity check.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split of a dataset.
    Eval(EvalArgs),
    /// Segment one image and report its cup-to-disc ratio.
    Predict(PredictArgs),
    /// Write original | ground truth | prediction panels for selected samples.
    Overlay(OverlayArgs),
    /// Print the aggregate rows of saved evaluation reports.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    /// Network spec in TOML; defaults to the published layout.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, value_parser = parse_skip_mode, default_value = "add")]
    pub skip_mode: SkipMode,
    /// Input side for the default layout.
    #[arg(long, default_value_t = 640)]
    pub side: usize,
    /// Directory for audit.csv and spec.toml.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    #[arg(long)]
    pub dataset_root: PathBuf,
    /// drishti or rimone; detected from the layout when omitted.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Saved manifest to use instead of scanning the dataset root.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Directory for resized samples.
    #[arg(long)]
    pub cache: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    /// Flat key = value TOML with training settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "runs/train")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = parse_skip_mode)]
    pub skip_mode: Option<SkipMode>,
    #[arg(long)]
    pub side: Option<u32>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Run the overfit sanity check on this sample id instead of training.
    #[arg(long)]
    pub overfit_one: Option<String>,
    /// Iterations for --overfit-one.
    #[arg(long, default_value_t = 200)]
    pub iterations: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_parser = parse_split, default_value = "test")]
    pub split: Split,
    #[arg(long, default_value = "runs/eval")]
    pub out: PathBuf,
    /// Seed for datasets without a shipped split; defaults to the checkpoint's.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct OverlayArgs {
    #[command(flatten)]
    pub data: DatasetArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Comma-separated sample ids.
    #[arg(long, value_delimiter = ',', required = true)]
    pub ids: Vec<String>,
    #[arg(long, default_value = "runs/overlay")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Evaluation JSON documents written by `eval`.
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
}

fn parse_skip_mode(s: &str) -> Result<SkipMode, String> {
    s.parse::<SkipMode>().map_err(|e| e.to_string())
}

fn parse_split(s: &str) -> Result<Split, String> {
    s.parse::<Split>().map_err(|e| e.to_string())
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub fn execute(command: &Command) -> Result<i32, CliError> {
    match command {
        Command::Audit(a) => cmd_audit(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Overlay(a) => cmd_overlay(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn square_spec(side: usize, mode: SkipMode) -> Result<NetworkSpec, CliError> {
    default_network_spec(TensorShape::new(side, side, 3), NUM_CLASSES, mode)
        .map_err(|e| CliError::new(EXIT_USAGE, e.to_string()))
}

pub fn cmd_audit(a: &AuditArgs) -> Result<i32, CliError> {
    let spec = match &a.spec {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::new(EXIT_USAGE, format!("{}: {e}", path.display())))?;
            NetworkSpec::from_toml(&text)
                .map_err(|e| CliError::new(EXIT_USAGE, format!("{}: {e}", path.display())))?
        }
        None => square_spec(a.side, a.skip_mode)?,
    };
    let audit = audit_against_tables(&spec);
    print!("{}", audit.to_table());
    if let Ok(trace) = infer_shapes(&spec, spec.input) {
        println!("shape trace:");
        for e in &trace.entries {
            println!(
                "  {:<24} {:<12} {}",
                e.name,
                format!("{:?}", e.kind),
                e.shape
            );
        }
    }
    if let Some(out) = &a.out {
        fs::create_dir_all(out)?;
        fs::write(out.join("audit.csv"), audit.to_csv())?;
        fs::write(out.join("spec.toml"), spec.to_toml())?;
    }
    Ok(if audit.is_clean() {
        EXIT_OK
    } else {
        EXIT_CHECK
    })
}

fn detect_dataset(root: &Path) -> Result<DatasetKind, CliError> {
    if root.join("Training").is_dir() || root.join("Drishti-GS1_files").is_dir() {
        Ok(DatasetKind::Drishti)
    } else if root.join("Healthy").is_dir() || root.join("Glaucoma and suspects").is_dir() {
        Ok(DatasetKind::Rimone)
    } else {
        Err(DataError::NotFound(root.to_path_buf()).into())
    }
}

/// Scans (or reads) the manifest and assigns a seeded split where the dataset has none.
fn open_manifest(d: &DatasetArgs, seed: u64) -> Result<DatasetManifest, CliError> {
    let manifest = match &d.manifest {
        Some(path) => DatasetManifest::load(path)?,
        None => {
            let kind = match &d.dataset {
                Some(name) => name.parse::<DatasetKind>()?,
                None => detect_dataset(&d.dataset_root)?,
            };
            load_dataset(kind, &d.dataset_root)?
        }
    };
    for r in &manifest.rejected {
        eprintln!("warning: skipped sample `{}`: {}", r.id, r.reason);
    }
    if manifest.records.iter().all(|r| r.split.is_some()) {
        return Ok(manifest);
    }
    let (t, v, s) = DEFAULT_RATIOS;
    Ok(split(&manifest, SplitRatios::new(t, v, s)?, seed)?)
}

fn load_samples(
    manifest: &DatasetManifest,
    records: &[&SampleRecord],
    side: u32,
    threshold: f64,
    cache: Option<&SampleCache>,
) -> Result<Vec<FundusSample>, CliError> {
    records
        .iter()
        .map(|r| match cache {
            Some(c) => c.get(manifest, r, side, threshold).map_err(CliError::from),
            None => Ok(resize_sample(&load_sample(manifest, r, threshold)?, side)?),
        })
        .collect()
}

fn resolve_config(a: &TrainArgs) -> Result<TrainConfig, CliError> {
    let mut cfg = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::new(EXIT_USAGE, format!("{}: {e}", path.display())))?;
            TrainConfig::from_toml(&text)?
        }
        None => TrainConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(mode) = a.skip_mode {
        cfg.skip_mode = mode;
    }
    if let Some(side) = a.side {
        cfg.input_side = side;
    }
    if let Some(epochs) = a.epochs {
        cfg.epochs = epochs;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn cmd_train(a: &TrainArgs) -> Result<i32, CliError> {
    let cfg = resolve_config(a)?;
    let spec = square_spec(cfg.input_side as usize, cfg.skip_mode)?;
    let manifest = open_manifest(&a.data, cfg.seed)?;
    let cache = a.data.cache.as_ref().map(SampleCache::new).transpose()?;

    if let Some(id) = &a.overfit_one {
        let record = manifest
            .get(id)
            .ok_or_else(|| CliError::new(EXIT_DATA, format!("unknown sample id: {id}")))?;
        let sample = load_samples(
            &manifest,
            &[record],
            cfg.input_side,
            cfg.threshold,
            cache.as_ref(),
        )?
        .remove(0);
        let report = overfit_single(&spec, &sample, a.iterations, cfg.learning_rate, cfg.seed)?;
        fs::create_dir_all(&a.out)?;
        let mut csv = String::from("iteration,loss,dice_od,dice_oc\n");
        for i in 0..report.len() {
            csv.push_str(&format!(
                "{},{},{},{}\n",
                i + 1,
                report.loss[i],
                report.dice_od[i],
                report.dice_oc[i]
            ));
        }
        fs::write(a.out.join("overfit.csv"), csv)?;
        fs::write(a.out.join("config.toml"), cfg.to_toml())?;
        let (od, oc) = report.final_dice().expect("at least one iteration");
        println!(
            "overfit `{id}` after {} iterations: OD dice {od:.4}, OC dice {oc:.4}",
            report.len()
        );
        let pass = od >= OVERFIT_OD_TARGET && oc >= OVERFIT_OC_TARGET;
        println!(
            "sanity gate (OD >= {OVERFIT_OD_TARGET}, OC >= {OVERFIT_OC_TARGET}): {}",
            if pass { "pass" } else { "FAIL" }
        );
        return Ok(if pass { EXIT_OK } else { EXIT_CHECK });
    }

    let mut train_records = manifest.in_split(Split::Train);
    let mut val_records = manifest.in_split(Split::Val);
    if train_records.is_empty() {
        return Err(CliError::new(EXIT_DATA, "training split is empty"));
    }
    if val_records.is_empty() && cfg.val_fraction > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        train_records.shuffle(&mut rng);
        let n_val = ((train_records.len() as f64 * cfg.val_fraction).floor() as usize)
            .min(train_records.len() - 1);
        val_records = train_records.split_off(train_records.len() - n_val);
        train_records.sort_by(|x, y| x.id.cmp(&y.id));
        val_records.sort_by(|x, y| x.id.cmp(&y.id));
    }
    let train_set = load_samples(
        &manifest,
        &train_records,
        cfg.input_side,
        cfg.threshold,
        cache.as_ref(),
    )?;
    let val_set = load_samples(
        &manifest,
        &val_records,
        cfg.input_side,
        cfg.threshold,
        cache.as_ref(),
    )?;
    println!(
        "training on {} samples, validating on {} ({} parameters)",
        train_set.len(),
        val_set.len(),
        spec.total_parameters()
    );

    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("config.toml"), cfg.to_toml())?;
    fs::write(a.out.join("spec.toml"), spec.to_toml())?;
    manifest.save(&a.out.join("manifest.tsv"))?;
    let outcome = match train(&spec, &train_set, &val_set, &cfg) {
        Ok(o) => o,
        Err(EngineError::Diverged { epoch, last_good }) => {
            last_good.save(&a.out.join("checkpoint.ckpt"))?;
            return Err(CliError::new(
                EXIT_CHECK,
                format!("training diverged at epoch {epoch}; last good checkpoint written"),
            ));
        }
        Err(e) => return Err(e.into()),
    };
    outcome.history.save(&a.out.join("history.csv"))?;
    outcome.best.save(&a.out.join("checkpoint.ckpt"))?;
    outcome.last.save(&a.out.join("last.ckpt"))?;
    for r in &outcome.history.records {
        println!(
            "epoch {:>3}  loss {:.5}  val dice OD {:.4} OC {:.4}",
            r.epoch, r.train_loss, r.val_dice_od, r.val_dice_oc
        );
    }
    println!(
        "best epoch {} written to {}",
        outcome.best.meta.epoch,
        a.out.join("checkpoint.ckpt").display()
    );
    Ok(EXIT_OK)
}

fn side_of(ckpt: &Checkpoint) -> Result<u32, CliError> {
    let input = ckpt.meta.spec.input;
    if input.height != input.width {
        return Err(CliError::new(
            EXIT_COMPAT,
            "checkpoint network input is not square",
        ));
    }
    Ok(input.width as u32)
}

fn threshold_of(ckpt: &Checkpoint) -> f64 {
    ckpt.meta
        .config
        .as_ref()
        .map_or(crate::data::DEFAULT_THRESHOLD, |c| c.threshold)
}

pub fn cmd_eval(a: &EvalArgs) -> Result<i32, CliError> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let side = side_of(&ckpt)?;
    let seed = a.seed.unwrap_or(ckpt.meta.seed);
    let manifest = open_manifest(&a.data, seed)?;
    let records = manifest.in_split(a.split);
    if records.is_empty() {
        return Err(CliError::new(
            EXIT_DATA,
            format!("split `{}` is empty", a.split),
        ));
    }
    let cache = a.data.cache.as_ref().map(SampleCache::new).transpose()?;
    let samples = load_samples(
        &manifest,
        &records,
        side,
        threshold_of(&ckpt),
        cache.as_ref(),
    )?;
    let segmenter = NetworkSegmenter {
        net: ckpt.network()?,
    };
    let report = evaluate(&segmenter, &samples)?;
    fs::create_dir_all(&a.out)?;
    report.save(&a.out, &format!("eval_{}", a.split))?;
    println!("{} images ({} split)", report.rows.len(), a.split);
    println!("{}", report.summary());
    Ok(EXIT_OK)
}

pub fn cmd_predict(a: &PredictArgs) -> Result<i32, CliError> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let image = image::open(&a.image)
        .map_err(|e| CliError::new(EXIT_DATA, format!("{}: {e}", a.image.display())))?
        .to_rgb8();
    let segmenter = NetworkSegmenter {
        net: ckpt.network()?,
    };
    let p = predict(&segmenter, &image)?;
    fs::create_dir_all(&a.out)?;
    let stem = a
        .image
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("image");
    let mask_path = a.out.join(format!("{stem}_mask.png"));
    p.labels
        .to_image()
        .save(&mask_path)
        .map_err(|e| CliError::new(EXIT_DATA, e.to_string()))?;
    println!("mask: {}", mask_path.display());
    match p.cdr {
        Ok(c) => println!(
            "CDR {:.4} (cup {} px / disc {} px) screen_positive={}",
            c.cdr, c.cup_diameter, c.disc_diameter, c.screen_positive
        ),
        Err(e) => println!("CDR: {e}"),
    }
    Ok(EXIT_OK)
}

pub fn cmd_overlay(a: &OverlayArgs) -> Result<i32, CliError> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let manifest = open_manifest(&a.data, ckpt.meta.seed)?;
    let unknown: Vec<&str> = a
        .ids
        .iter()
        .filter(|id| manifest.get(id).is_none())
        .map(String::as_str)
        .collect();
    if !unknown.is_empty() {
        return Err(CliError::new(
            EXIT_DATA,
            format!("unknown sample ids: {}", unknown.join(", ")),
        ));
    }
    let segmenter = NetworkSegmenter {
        net: ckpt.network()?,
    };
    fs::create_dir_all(&a.out)?;
    for id in &a.ids {
        let record = manifest.get(id).expect("checked above");
        let sample = load_sample(&manifest, record, threshold_of(&ckpt))?;
        let p = predict(&segmenter, &sample.image)?;
        let panel = render_overlay(&sample.image, &sample.labels, &p.labels)?;
        let path = a.out.join(format!("overlay_{id}.png"));
        panel
            .save(&path)
            .map_err(|e| CliError::new(EXIT_DATA, e.to_string()))?;
        println!("{}", path.display());
    }
    Ok(EXIT_OK)
}

pub fn cmd_report(a: &ReportArgs) -> Result<i32, CliError> {
    println!(
        "{:<28} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}",
        "report",
        "OD DC",
        "OD JC",
        "OD Sen",
        "OD Sp",
        "OC DC",
        "OC JC",
        "OC Sen",
        "OC Sp",
        "OC E",
        "OC BA"
    );
    for path in &a.reports {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::new(EXIT_DATA, format!("{}: {e}", path.display())))?;
        let doc: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| CliError::new(EXIT_DATA, format!("{}: {e}", path.display())))?;
        let get = |group: &str, s: &str, f: &str| -> Result<f64, CliError> {
            doc[group][s][f].as_f64().ok_or_else(|| {
                CliError::new(
                    EXIT_DATA,
                    format!("{}: missing {group}.{s}.{f}", path.display()),
                )
            })
        };
        let mut cols = Vec::new();
        for s in ["OD", "OC"] {
            for f in ["DC", "JC", "Sen", "Sp"] {
                cols.push(format!("{:.2}", 100.0 * get("aggregate", s, f)?));
            }
        }
        cols.push(format!("{:.4}", get("error_accuracy", "OC", "E")?));
        cols.push(format!("{:.4}", get("error_accuracy", "OC", "BA")?));
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        println!(
            "{:<28} {}",
            name,
            cols.iter()
                .map(|c| format!("{c:>7}"))
                .collect::<Vec<_>>()
                .join(" ")
        );
    }
    Ok(EXIT_OK)
}
