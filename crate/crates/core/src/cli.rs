//! The `fexkit` command-line front end.
//!
//! Exit codes: 0 on success (and for `--help`), 1 for usage errors, 2 for
//! data and validation errors. Failures print one line to standard error
//! of the form `error: <code>: <message>`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::features::{
    bag_of_temporal_filters, baseline_normalize, fit_pca, lower_median, summarize_sessions, Band, Baseline,
    FeatureError, GrayImage, HogConfig, PcaModel, SummaryStat,
};
use crate::fexdata::{
    au_index, fex_csv_bytes, format_number, read_fex_csv, AuVector, FexError, FexTable, AU_NAMES, EMOTION_NAMES,
};
use crate::geometry::{FaceBox, GeometryError, LandmarkSet};
use crate::learn::{
    grid_search_cv, predict_proba, train, CvPlan, Grid, HyperParams, LearnError, ModelKind, TrainedModel,
};
use crate::metrics::{
    f1, landmark_nrmse, per_label_f1, pooled_average_precision, precision, recall, ConfusionCounts, LabelF1,
    MetricsError, TruthBox, DEFAULT_IOU_THRESHOLD,
};
use crate::pipeline::{extract_batch, replicate_goodnews, ExtractionConfig, PipelineError};
use crate::render::{
    au_to_landmarks, coefficient_faces, displacement_heat, plot_detections, render_face, FaceSketch, Overlay,
    RenderError,
};
use crate::stats::{isc, regress, ttest_ind, IscAxis, StatsError};

#[derive(Debug, Parser)]
#[command(name = "fexkit", version, about = "Facial expression features, classifiers, analysis and plots")]
pub struct Cli {
    /// Worker threads for per-image and per-fold work; results do not depend on it.
    #[arg(long, global = true, default_value_t = 1, value_parser = parse_jobs)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Align faces, compute HOG (and optional PCA) features and write a feature CSV.
    Extract(ExtractArgs),
    /// Cross-validate a grid of hyperparameters and fit the winner on all rows.
    Train(TrainArgs),
    /// Score a feature CSV with a trained model.
    Predict(PredictArgs),
    /// Compare predictions with ground truth.
    Benchmark(BenchmarkArgs),
    /// Baseline-correct, summarize or band-filter a Fex CSV.
    Preprocess(PreprocessArgs),
    /// Run a t-test, regression or intersubject correlation over a Fex CSV.
    Analyze(AnalyzeArgs),
    /// Draw SVG figures.
    #[command(subcommand)]
    Viz(VizCommand),
    /// Session-level two-condition comparison with leave-one-session-out classification.
    Replicate(ReplicateArgs),
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Directory holding the frame images.
    #[arg(long)]
    pub images: PathBuf,
    /// Fex CSV with one landmark row per image.
    #[arg(long)]
    pub landmarks: PathBuf,
    #[arg(long, default_value_t = 112)]
    pub crop: usize,
    /// HOG orientations,cell,block.
    #[arg(long, default_value = "8,8,2", value_parser = parse_hog)]
    pub hog: HogConfig,
    /// Model or PCA JSON whose projection is applied, or `none`.
    #[arg(long, default_value = "none")]
    pub pca: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Keep one row, then skip this many.
    #[arg(long, default_value_t = 0)]
    pub skip_frames: usize,
    /// Leave the aligned landmark coordinates out of the features.
    #[arg(long)]
    pub no_landmarks: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Task {
    Au,
    Emotion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelChoice {
    Logistic,
    Svm,
    Forest,
}

impl From<ModelChoice> for ModelKind {
    fn from(m: ModelChoice) -> Self {
        match m {
            ModelChoice::Logistic => ModelKind::Logistic,
            ModelChoice::Svm => ModelKind::Svm,
            ModelChoice::Forest => ModelKind::Forest,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub task: Task,
    #[arg(long, value_enum)]
    pub model: ModelChoice,
    #[arg(long)]
    pub features: PathBuf,
    /// CSV with a `label` column, row-aligned with the features.
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub folds: usize,
    /// JSON object mapping hyperparameter names to candidate lists.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Fit PCA on the HOG part of raw extractor features, keeping this variance fraction.
    #[arg(long)]
    pub pca_retain: Option<f64>,
    /// Crop the features were extracted at.
    #[arg(long, default_value_t = 112)]
    pub crop: usize,
    #[arg(long, default_value = "8,8,2", value_parser = parse_hog)]
    pub hog: HogConfig,
    /// The features carry no aligned landmark coordinates.
    #[arg(long)]
    pub no_landmarks: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BenchmarkTask {
    Facebox,
    Landmarks,
    Au,
    Emotion,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    #[arg(long, value_enum)]
    pub task: BenchmarkTask,
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, default_value_t = DEFAULT_IOU_THRESHOLD)]
    pub iou: f64,
    /// Activation threshold for AU scores.
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub fex: PathBuf,
    /// `median`, `none`, or a Fex CSV whose column medians are subtracted.
    #[arg(long, default_value = "none")]
    pub baseline: String,
    /// `mean`, `max`, `min` or `none`.
    #[arg(long, default_value = "none")]
    pub summary: String,
    /// Filter-bank JSON; writes per-session crossing counts instead of a Fex CSV.
    #[arg(long)]
    pub bands: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AnalyzeTest {
    Ttest,
    Regress,
    Isc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AxisChoice {
    Time,
    Features,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(value_enum)]
    pub test: AnalyzeTest,
    #[arg(long)]
    pub fex: PathBuf,
    /// Design matrix CSV for `regress`, one row per Fex row.
    #[arg(long)]
    pub design: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "time")]
    pub axis: AxisChoice,
    /// `session,condition` CSV for `ttest`.
    #[arg(long)]
    pub conditions: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum VizCommand {
    /// Landmark sketch predicted from AU activations.
    Aus(VizAusArgs),
    /// Facebox, landmarks and score bars for one Fex row.
    Detections(VizDetectionsArgs),
    /// Faces and bar chart for a binary linear model over the 20 AUs.
    Coefficients(VizCoefficientsArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OverlayChoice {
    None,
    Vectors,
    Heat,
}

#[derive(Debug, Args)]
pub struct VizAusArgs {
    /// Comma-separated `AUxx=value` pairs.
    #[arg(long)]
    pub au: String,
    #[arg(long)]
    pub vizmodel: PathBuf,
    #[arg(long, value_enum, default_value = "none")]
    pub overlay: OverlayChoice,
    #[arg(long, default_value_t = 256)]
    pub size: u32,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VizDetectionsArgs {
    #[arg(long)]
    pub fex: PathBuf,
    #[arg(long)]
    pub frame: u64,
    /// Restrict the frame lookup to one session.
    #[arg(long)]
    pub session: Option<String>,
    #[arg(long)]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VizCoefficientsArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub vizmodel: PathBuf,
    /// Multiplier applied to the weights before clamping to [0, 1].
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    /// Writes `<prefix>positive.svg`, `<prefix>negative.svg` and `<prefix>chart.svg`.
    #[arg(long)]
    pub out_prefix: String,
}

#[derive(Debug, Args)]
pub struct ReplicateArgs {
    #[arg(long)]
    pub fex: PathBuf,
    /// `session,condition` CSV naming exactly two conditions.
    #[arg(long)]
    pub conditions: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Also save the all-session classifier as a model JSON.
    #[arg(long)]
    pub model_out: Option<PathBuf>,
}

fn parse_jobs(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(format!("expected a positive integer, got `{s}`")),
    }
}

fn parse_hog(s: &str) -> Result<HogConfig, String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|_| format!("bad HOG setting `{s}`")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [orientations, cell, block] if orientations > 0 && cell > 0 && block > 0 => {
            Ok(HogConfig { orientations, cell, block, ..HogConfig::default() })
        }
        _ => Err(format!("expected orientations,cell,block as positive integers, got `{s}`")),
    }
}

#[derive(Debug)]
pub struct CliError {
    pub code: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(code: &'static str, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }

    fn usage(message: impl Into<String>) -> Self {
        Self::new("usage", message)
    }

    fn input(message: impl Into<String>) -> Self {
        Self::new("input", message)
    }

    fn io(path: &Path, e: impl fmt::Display) -> Self {
        Self::new("io", format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        if self.code == "usage" {
            1
        } else {
            2
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error: {}: {}", self.code, self.message)
    }
}

macro_rules! error_code {
    ($ty:ty, $code:literal) => {
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::new($code, e.to_string())
            }
        }
    };
}

error_code!(FexError, "fex");
error_code!(FeatureError, "feature");
error_code!(GeometryError, "geometry");
error_code!(LearnError, "model");
error_code!(MetricsError, "metrics");
error_code!(PipelineError, "pipeline");
error_code!(RenderError, "render");
error_code!(StatsError, "stats");
error_code!(csv::Error, "csv");
error_code!(serde_json::Error, "json");

type CliResult<T> = Result<T, CliError>;

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    0
                }
                ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    eprint!("{e}");
                    1
                }
                _ => {
                    let text = e.to_string();
                    let first = text.lines().next().unwrap_or("invalid arguments");
                    eprintln!("error: usage: {}", first.trim_start_matches("error: "));
                    1
                }
            };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}

/// Runs a parsed command on a pool of `cli.jobs` threads.
pub fn execute(cli: Cli) -> CliResult<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .map_err(|e| CliError::new("threads", e.to_string()))?;
    pool.install(|| match cli.command {
        Command::Extract(a) => extract(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Predict(a) => predict_cmd(&a),
        Command::Benchmark(a) => benchmark(&a),
        Command::Preprocess(a) => preprocess(&a),
        Command::Analyze(a) => analyze(&a),
        Command::Viz(VizCommand::Aus(a)) => viz_aus(&a),
        Command::Viz(VizCommand::Detections(a)) => viz_detections(&a),
        Command::Viz(VizCommand::Coefficients(a)) => viz_coefficients(&a),
        Command::Replicate(a) => replicate(&a),
    })
}

// ---------------------------------------------------------------------------
// file helpers

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_file(path, s.as_bytes())
}

fn load_fex(path: &Path) -> CliResult<FexTable> {
    Ok(read_fex_csv(path)?)
}

fn load_model(path: &Path) -> CliResult<TrainedModel> {
    Ok(TrainedModel::from_json(&read_text(path)?)?)
}

/// A headed CSV held as strings.
struct Records {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Records {
    fn read(path: &Path) -> CliResult<Self> {
        let text = read_text(path)?;
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let headers = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            rows.push(rec?.iter().map(str::to_string).collect());
        }
        Ok(Self { headers, rows })
    }

    fn column(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    fn require(&self, name: &str, path: &Path) -> CliResult<usize> {
        self.column(name).ok_or_else(|| CliError::input(format!("{}: missing column `{name}`", path.display())))
    }

    fn number(&self, row: usize, col: usize) -> CliResult<f64> {
        let cell = self.rows[row][col].trim();
        if cell.is_empty() {
            return Ok(f64::NAN);
        }
        cell.parse::<f64>().map_err(|_| {
            CliError::input(format!("row {}, column `{}`: malformed number `{cell}`", row + 1, self.headers[col]))
        })
    }
}

fn csv_bytes(headers: &[String], rows: &[Vec<String>]) -> CliResult<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(headers)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| CliError::new("csv", e.to_string()))
}

/// Reads the `f_0..f_{d-1}` columns of a feature CSV; other columns are ignored.
pub fn read_feature_csv(path: &Path) -> CliResult<DMatrix<f64>> {
    let rec = Records::read(path)?;
    let mut cols: Vec<(usize, usize)> = rec
        .headers
        .iter()
        .enumerate()
        .filter_map(|(c, h)| h.strip_prefix("f_").and_then(|i| i.parse::<usize>().ok()).map(|i| (i, c)))
        .collect();
    cols.sort_unstable();
    if cols.iter().enumerate().any(|(k, &(i, _))| k != i) {
        return Err(CliError::input(format!("{}: feature columns must be f_0..f_{{d-1}}", path.display())));
    }
    let mut m = DMatrix::zeros(rec.rows.len(), cols.len());
    for r in 0..rec.rows.len() {
        for (j, &(_, c)) in cols.iter().enumerate() {
            let v = rec.number(r, c)?;
            if !v.is_finite() {
                return Err(CliError::input(format!("{}: row {}, f_{j} is not finite", path.display(), r + 1)));
            }
            m[(r, j)] = v;
        }
    }
    Ok(m)
}

pub fn feature_csv_bytes(m: &DMatrix<f64>) -> CliResult<Vec<u8>> {
    let headers: Vec<String> = (0..m.ncols()).map(|j| format!("f_{j}")).collect();
    let rows: Vec<Vec<String>> = m.row_iter().map(|r| r.iter().map(|&v| format_number(v)).collect()).collect();
    csv_bytes(&headers, &rows)
}

fn read_conditions(path: &Path) -> CliResult<Vec<(String, String)>> {
    let rec = Records::read(path)?;
    let s = rec.require("session", path)?;
    let c = rec.require("condition", path)?;
    Ok(rec.rows.iter().map(|r| (r[s].clone(), r[c].clone())).collect())
}

// ---------------------------------------------------------------------------
// extract

const IMAGE_EXTENSIONS: [&str; 5] = ["png", "pgm", "ppm", "pnm", "pbm"];

fn image_paths(dir: &Path, table: &FexTable) -> CliResult<Vec<PathBuf>> {
    if let Some(names) = table.extra_column("image") {
        return Ok(names.into_iter().map(|n| dir.join(n)).collect());
    }
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let p = entry.map_err(|e| CliError::io(dir, e))?.path();
        let ext = p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            files.push(p);
        }
    }
    files.sort();
    if files.len() != table.len() {
        return Err(CliError::input(format!(
            "{} has {} images but the landmark file has {} rows",
            dir.display(),
            files.len(),
            table.len()
        )));
    }
    Ok(files)
}

fn load_pca(spec: &str, cfg: &ExtractionConfig) -> CliResult<Option<PcaModel>> {
    if spec == "none" {
        return Ok(None);
    }
    let path = Path::new(spec);
    let text = read_text(path)?;
    let pca = match TrainedModel::from_json(&text) {
        Ok(model) => {
            if let Some(meta) = model.hog {
                let theirs = ExtractionConfig::from_meta(&meta);
                if theirs.crop != cfg.crop || theirs.hog != cfg.hog {
                    return Err(PipelineError::ModelConfigMismatch(format!(
                        "{spec} was trained on crop {} with {:?}",
                        theirs.crop, theirs.hog
                    ))
                    .into());
                }
            }
            model.pca.ok_or_else(|| CliError::input(format!("{spec} carries no PCA stage")))?
        }
        Err(_) => serde_json::from_str::<PcaModel>(&text)?,
    };
    let hog_len = cfg.hog.feature_len(cfg.crop, cfg.crop)?;
    if pca.n_features() != hog_len {
        return Err(FeatureError::DimensionMismatch { expected: hog_len, got: pca.n_features() }.into());
    }
    Ok(Some(pca))
}

fn extract(a: &ExtractArgs) -> CliResult<()> {
    let cfg = ExtractionConfig { crop: a.crop, hog: a.hog, include_landmarks: !a.no_landmarks, ..Default::default() };
    cfg.validate()?;
    let table = load_fex(&a.landmarks)?;
    let paths = image_paths(&a.images, &table)?;
    let pca = load_pca(&a.pca, &cfg)?;
    let keep: Vec<usize> = (0..table.len()).step_by(a.skip_frames + 1).collect();
    let mut items_in = Vec::with_capacity(keep.len());
    for &i in &keep {
        let row = &table.rows()[i];
        let lm = row
            .landmarks
            .clone()
            .ok_or_else(|| CliError::input(format!("landmark row {} (frame {}) has no landmarks", i + 1, row.frame)))?;
        items_in.push((paths[i].clone(), lm));
    }
    eprintln!("extracting {} of {} frames", items_in.len(), table.len());
    let items: Vec<(GrayImage, LandmarkSet)> =
        items_in.par_iter().map(|(p, lm)| Ok((GrayImage::open(p)?, lm.clone()))).collect::<CliResult<_>>()?;
    let feats = extract_batch(&items, &cfg, pca.as_ref())?;
    let d = feats.first().map_or(0, |f| f.len());
    let m = DMatrix::from_fn(feats.len(), d, |i, j| feats[i].values[j]);
    write_file(&a.out, &feature_csv_bytes(&m)?)
}

// ---------------------------------------------------------------------------
// train / predict

fn read_labels(path: &Path, task: Task) -> CliResult<(Vec<usize>, Vec<String>)> {
    let rec = Records::read(path)?;
    let c = rec.require("label", path)?;
    let mut y = Vec::with_capacity(rec.rows.len());
    for (r, row) in rec.rows.iter().enumerate() {
        let cell = row[c].trim();
        let v = match task {
            Task::Au => match cell.parse::<f64>() {
                Ok(0.0) => 0,
                Ok(1.0) => 1,
                _ => return Err(CliError::input(format!("row {}: AU label must be 0 or 1, got `{cell}`", r + 1))),
            },
            Task::Emotion => EMOTION_NAMES
                .iter()
                .position(|&n| n == cell)
                .ok_or_else(|| CliError::input(format!("row {}: unknown emotion `{cell}`", r + 1)))?,
        };
        y.push(v);
    }
    let labels = match task {
        Task::Au => vec!["0".to_string(), "1".to_string()],
        Task::Emotion => EMOTION_NAMES.iter().map(|s| s.to_string()).collect(),
    };
    Ok((y, labels))
}

fn train_cmd(a: &TrainArgs) -> CliResult<()> {
    let x = read_feature_csv(&a.features)?;
    let (y, labels) = read_labels(&a.labels, a.task)?;
    if x.nrows() != y.len() {
        return Err(CliError::input(format!("{} feature rows but {} labels", x.nrows(), y.len())));
    }
    let kind = ModelKind::from(a.model);
    let cfg = ExtractionConfig { crop: a.crop, hog: a.hog, include_landmarks: !a.no_landmarks, ..Default::default() };
    cfg.validate()?;
    let hog_len = cfg.hog.feature_len(cfg.crop, cfg.crop)?;
    let raw_len = hog_len + if cfg.include_landmarks { 2 * crate::geometry::LANDMARK_COUNT } else { 0 };
    let meta = (x.ncols() == raw_len).then(|| cfg.meta());

    let (x, pca) = match a.pca_retain {
        None => (x, None),
        Some(_) if meta.is_none() => {
            return Err(CliError::input(format!(
                "--pca-retain needs raw extractor features with {raw_len} columns, got {}",
                x.ncols()
            )))
        }
        Some(retain) => {
            let hog_part = x.columns(0, hog_len).into_owned();
            let pca = fit_pca(&hog_part, retain)?;
            let z = pca.transform(&hog_part)?;
            let tail = x.ncols() - hog_len;
            let mut out = DMatrix::zeros(x.nrows(), z.ncols() + tail);
            out.columns_mut(0, z.ncols()).copy_from(&z);
            out.columns_mut(z.ncols(), tail).copy_from(&x.columns(hog_len, tail));
            eprintln!("pca: {} components from {hog_len} HOG features", pca.n_components());
            (out, Some(pca))
        }
    };

    let grid: Grid = match &a.grid {
        Some(p) => serde_json::from_str(&read_text(p)?)?,
        None => CvPlan::default_for(kind, a.seed).grid,
    };
    let plan = CvPlan::new(a.folds, grid, a.seed)?;
    let base = HyperParams { seed: a.seed, ..HyperParams::default() };
    let search = grid_search_cv(&x, &y, &labels, kind, &plan, &base)?;
    for (i, cell) in search.cells.iter().enumerate() {
        let mark = if i == search.best { "*" } else { " " };
        eprintln!("{mark} {:?} mean F1 {}", cell.params, format_number(cell.mean_f1));
    }
    let mut model = train(kind, &x, &y, &labels, &search.best_params)?;
    model.pca = pca;
    model.hog = meta;
    let mut json = model.to_json()?;
    json.push('\n');
    write_file(&a.out, json.as_bytes())
}

fn predict_cmd(a: &PredictArgs) -> CliResult<()> {
    let model = load_model(&a.model)?;
    let x = read_feature_csv(&a.features)?;
    let (headers, rows): (Vec<String>, Vec<Vec<String>>) = if model.kind == ModelKind::Pls {
        let y = model.regress(&x)?;
        let rows = y.row_iter().map(|r| r.iter().map(|&v| format_number(v)).collect()).collect();
        (model.labels.clone(), rows)
    } else {
        let p = predict_proba(&model, &x)?;
        let prefix = if model.kind == ModelKind::Svm { "score_" } else { "p_" };
        let mut headers: Vec<String> = model.labels.iter().map(|l| format!("{prefix}{l}")).collect();
        headers.push("label".into());
        let rows = p
            .row_iter()
            .map(|r| {
                let mut best = 0;
                for j in 1..r.len() {
                    if r[j] > r[best] {
                        best = j;
                    }
                }
                let mut out: Vec<String> = r.iter().map(|&v| format_number(v)).collect();
                out.push(model.labels[best].clone());
                out
            })
            .collect();
        (headers, rows)
    };
    write_file(&a.out, &csv_bytes(&headers, &rows)?)
}

// ---------------------------------------------------------------------------
// benchmark

#[derive(Serialize)]
struct ApBucket {
    bucket: String,
    truths: usize,
    ap: f64,
}

#[derive(Serialize)]
struct FaceboxReport {
    task: &'static str,
    iou: f64,
    images: usize,
    predictions: usize,
    truths: usize,
    ap: Vec<ApBucket>,
}

#[derive(Serialize)]
struct LandmarkReport {
    task: &'static str,
    rows: usize,
    scored: usize,
    mean_nrmse: Option<f64>,
    max_nrmse: Option<f64>,
    per_row: Vec<Option<f64>>,
}

#[derive(Serialize)]
struct AuScore {
    label: String,
    n: usize,
    precision: f64,
    recall: f64,
    f1: f64,
    counts: ConfusionCounts,
}

#[derive(Serialize)]
struct AuReport {
    task: &'static str,
    threshold: f64,
    per_label: Vec<AuScore>,
    average: f64,
}

#[derive(Serialize)]
struct EmotionReport {
    task: &'static str,
    rows: usize,
    accuracy: f64,
    per_label: Vec<LabelF1>,
    average: f64,
}

struct BoxRow {
    image: String,
    bbox: FaceBox,
    difficulty: Option<String>,
    ignore: bool,
}

fn read_boxes(path: &Path, with_score: bool) -> CliResult<Vec<BoxRow>> {
    let rec = Records::read(path)?;
    let img = rec.require("image", path)?;
    let cols: Vec<usize> =
        ["x", "y", "width", "height"].iter().map(|c| rec.require(c, path)).collect::<CliResult<_>>()?;
    let score = if with_score { Some(rec.require("score", path)?) } else { None };
    let difficulty = rec.column("difficulty");
    let ignore = rec.column("ignore");
    let mut out = Vec::with_capacity(rec.rows.len());
    for r in 0..rec.rows.len() {
        let v: Vec<f64> = cols.iter().map(|&c| rec.number(r, c)).collect::<CliResult<_>>()?;
        let s = match score {
            Some(c) => rec.number(r, c)?,
            None => f64::NAN,
        };
        let b = FaceBox::new(v[0], v[1], v[2], v[3], s)?;
        let ign = match ignore {
            Some(c) => rec.number(r, c)? != 0.0,
            None => false,
        };
        out.push(BoxRow {
            image: rec.rows[r][img].clone(),
            bbox: b,
            difficulty: difficulty.map(|c| rec.rows[r][c].clone()),
            ignore: ign,
        });
    }
    Ok(out)
}

fn benchmark_facebox(a: &BenchmarkArgs) -> CliResult<FaceboxReport> {
    let preds = read_boxes(&a.pred, true)?;
    let truths = read_boxes(&a.truth, false)?;
    let mut images: BTreeMap<&str, (Vec<FaceBox>, Vec<&BoxRow>)> = BTreeMap::new();
    for p in &preds {
        images.entry(&p.image).or_default().0.push(p.bbox);
    }
    for t in &truths {
        images.entry(&t.image).or_default().1.push(t);
    }
    let mut buckets: Vec<Option<&str>> = vec![None];
    let mut levels: Vec<&str> = truths.iter().filter_map(|t| t.difficulty.as_deref()).collect();
    levels.sort_unstable();
    levels.dedup();
    buckets.extend(levels.into_iter().map(Some));
    let ap = buckets
        .into_iter()
        .map(|bucket| {
            let mut counted = 0;
            let data: Vec<(Vec<FaceBox>, Vec<TruthBox>)> = images
                .values()
                .map(|(p, t)| {
                    let tb = t
                        .iter()
                        .map(|t| {
                            let ignore = t.ignore || bucket.is_some_and(|b| t.difficulty.as_deref() != Some(b));
                            counted += !ignore as usize;
                            TruthBox { bbox: t.bbox, ignore }
                        })
                        .collect();
                    (p.clone(), tb)
                })
                .collect();
            ApBucket {
                bucket: bucket.unwrap_or("all").to_string(),
                truths: counted,
                ap: pooled_average_precision(&data, a.iou),
            }
        })
        .collect();
    Ok(FaceboxReport {
        task: "facebox",
        iou: a.iou,
        images: images.len(),
        predictions: preds.len(),
        truths: truths.len(),
        ap,
    })
}

fn benchmark_landmarks(a: &BenchmarkArgs) -> CliResult<LandmarkReport> {
    let pred = load_fex(&a.pred)?;
    let truth = load_fex(&a.truth)?;
    if pred.len() != truth.len() {
        return Err(CliError::input(format!("{} prediction rows but {} truth rows", pred.len(), truth.len())));
    }
    let per_row: Vec<Option<f64>> = pred
        .rows()
        .iter()
        .zip(truth.rows())
        .map(|(p, t)| match (&p.landmarks, &t.landmarks) {
            (Some(p), Some(t)) => landmark_nrmse(p, t).map(Some),
            _ => Ok(None),
        })
        .collect::<Result<_, _>>()?;
    let scored: Vec<f64> = per_row.iter().flatten().copied().collect();
    Ok(LandmarkReport {
        task: "landmarks",
        rows: per_row.len(),
        scored: scored.len(),
        mean_nrmse: (!scored.is_empty()).then(|| scored.iter().sum::<f64>() / scored.len() as f64),
        max_nrmse: scored.iter().copied().reduce(f64::max),
        per_row,
    })
}

fn benchmark_au(a: &BenchmarkArgs) -> CliResult<AuReport> {
    let pred = Records::read(&a.pred)?;
    let truth = Records::read(&a.truth)?;
    if pred.rows.len() != truth.rows.len() {
        return Err(CliError::input(format!(
            "{} prediction rows but {} truth rows",
            pred.rows.len(),
            truth.rows.len()
        )));
    }
    let mut per_label = Vec::new();
    for name in AU_NAMES {
        let (Some(pc), Some(tc)) = (pred.column(name), truth.column(name)) else {
            continue;
        };
        let (mut p, mut t) = (Vec::new(), Vec::new());
        for r in 0..pred.rows.len() {
            let (pv, tv) = (pred.number(r, pc)?, truth.number(r, tc)?);
            if pv.is_finite() && tv.is_finite() {
                p.push(pv >= a.threshold);
                t.push(tv >= a.threshold);
            }
        }
        let counts = ConfusionCounts::tally(&p, &t, &true);
        per_label.push(AuScore {
            label: name.to_string(),
            n: p.len(),
            precision: precision(&counts),
            recall: recall(&counts),
            f1: f1(&counts),
            counts,
        });
    }
    if per_label.is_empty() {
        return Err(CliError::input("prediction and truth files share no AU columns"));
    }
    let average = per_label.iter().map(|s| s.f1).sum::<f64>() / per_label.len() as f64;
    Ok(AuReport { task: "au", threshold: a.threshold, per_label, average })
}

/// Row labels from a `label` column, else the argmax of the emotion columns.
fn emotion_labels(path: &Path) -> CliResult<Vec<String>> {
    let rec = Records::read(path)?;
    if let Some(c) = rec.column("label") {
        return Ok(rec.rows.iter().map(|r| r[c].trim().to_string()).collect());
    }
    let cols: Vec<usize> = EMOTION_NAMES.iter().map(|n| rec.require(n, path)).collect::<CliResult<_>>()?;
    (0..rec.rows.len())
        .map(|r| {
            let mut best: Option<(usize, f64)> = None;
            for (k, &c) in cols.iter().enumerate() {
                let v = rec.number(r, c)?;
                if !v.is_nan() && best.is_none_or(|(_, b)| v > b) {
                    best = Some((k, v));
                }
            }
            best.map(|(k, _)| EMOTION_NAMES[k].to_string())
                .ok_or_else(|| CliError::input(format!("{}: row {} has no emotion scores", path.display(), r + 1)))
        })
        .collect()
}

fn benchmark_emotion(a: &BenchmarkArgs) -> CliResult<EmotionReport> {
    let pred = emotion_labels(&a.pred)?;
    let truth = emotion_labels(&a.truth)?;
    let labels: Vec<String> = EMOTION_NAMES.iter().map(|s| s.to_string()).collect();
    let scores = per_label_f1(&pred, &truth, &labels)?;
    let correct = pred.iter().zip(&truth).filter(|(p, t)| p == t).count();
    Ok(EmotionReport {
        task: "emotion",
        rows: pred.len(),
        accuracy: if pred.is_empty() { 0.0 } else { correct as f64 / pred.len() as f64 },
        per_label: scores.per_label,
        average: scores.average,
    })
}

fn benchmark(a: &BenchmarkArgs) -> CliResult<()> {
    match a.task {
        BenchmarkTask::Facebox => write_json(&a.out, &benchmark_facebox(a)?),
        BenchmarkTask::Landmarks => write_json(&a.out, &benchmark_landmarks(a)?),
        BenchmarkTask::Au => write_json(&a.out, &benchmark_au(a)?),
        BenchmarkTask::Emotion => write_json(&a.out, &benchmark_emotion(a)?),
    }
}

// ---------------------------------------------------------------------------
// preprocess

/// Filter bank for `preprocess --bands`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandSpec {
    /// Sampling rate in Hz.
    pub rate: f64,
    pub bands: Vec<Band>,
    pub thresholds: Vec<f64>,
    /// AU or emotion columns to filter; all 20 AUs when omitted.
    #[serde(default)]
    pub columns: Option<Vec<String>>,
}

fn external_baseline(path: &Path) -> CliResult<Baseline> {
    let t = load_fex(path)?;
    let aus = std::array::from_fn(|j| lower_median(t.rows().iter().filter_map(|r| r.aus.map(|a| a.0[j]))));
    let emotions = std::array::from_fn(|j| lower_median(t.rows().iter().filter_map(|r| r.emotions.map(|e| e.0[j]))));
    Ok(Baseline::External { aus, emotions })
}

/// AU or emotion column by name, as a per-row reader.
#[derive(Clone, Copy)]
enum ScoreColumn {
    Au(usize),
    Emotion(usize),
}

impl ScoreColumn {
    fn parse(name: &str) -> Option<Self> {
        au_index(name)
            .map(ScoreColumn::Au)
            .or_else(|| EMOTION_NAMES.iter().position(|&n| n == name).map(ScoreColumn::Emotion))
    }

    fn get(self, r: &crate::fexdata::FexRow) -> f64 {
        match self {
            ScoreColumn::Au(j) => r.aus.map_or(f64::NAN, |a| a.0[j]),
            ScoreColumn::Emotion(j) => r.emotions.map_or(f64::NAN, |e| e.0[j]),
        }
    }
}

fn temporal_features(table: &FexTable, spec: &BandSpec) -> CliResult<Vec<u8>> {
    let columns: Vec<String> = spec.columns.clone().unwrap_or_else(|| AU_NAMES.iter().map(|s| s.to_string()).collect());
    let getters: Vec<_> = columns
        .iter()
        .map(|c| ScoreColumn::parse(c).ok_or_else(|| CliError::input(format!("unknown column `{c}` in band spec"))))
        .collect::<CliResult<_>>()?;
    let mut headers = vec!["session".to_string()];
    for c in &columns {
        for b in 0..spec.bands.len() {
            for t in 0..spec.thresholds.len() {
                headers.push(format!("{c}_band{b}_thr{t}"));
            }
        }
    }
    let mut rows = Vec::new();
    for (session, part) in table.group_by_session() {
        let mut row = vec![session.clone()];
        for (c, get) in columns.iter().zip(&getters) {
            let signal: Vec<f64> = part.rows().iter().map(|r| get.get(r)).collect();
            if signal.iter().any(|v| !v.is_finite()) {
                return Err(CliError::input(format!("session `{session}`: column {c} has missing values")));
            }
            let fv = bag_of_temporal_filters(&signal, spec.rate, &spec.bands, &spec.thresholds)?;
            row.extend(fv.values.iter().map(|&v| format_number(v)));
        }
        rows.push(row);
    }
    csv_bytes(&headers, &rows)
}

fn preprocess(a: &PreprocessArgs) -> CliResult<()> {
    let table = load_fex(&a.fex)?;
    let table = match a.baseline.as_str() {
        "none" => table,
        "median" => baseline_normalize(&table, &Baseline::Median)?,
        path => baseline_normalize(&table, &external_baseline(Path::new(path))?)?,
    };
    let summary = match a.summary.as_str() {
        "none" => None,
        s => Some(s.parse::<SummaryStat>().map_err(CliError::usage)?),
    };
    if let Some(bands) = &a.bands {
        if summary.is_some() {
            return Err(CliError::usage("--bands works on the full time series; use --summary none"));
        }
        let spec: BandSpec = serde_json::from_str(&read_text(bands)?)?;
        return write_file(&a.out, &temporal_features(&table, &spec)?);
    }
    let table = match summary {
        Some(stat) => summarize_sessions(&table, stat),
        None => table,
    };
    write_file(&a.out, &fex_csv_bytes(&table)?)
}

// ---------------------------------------------------------------------------
// analyze

#[derive(Serialize)]
struct TtestEntry {
    feature: String,
    n_positive: usize,
    n_negative: usize,
    t: Option<f64>,
    df: Option<f64>,
    p: Option<f64>,
    error: Option<String>,
}

#[derive(Serialize)]
struct TtestReport {
    test: &'static str,
    positive: String,
    negative: String,
    results: Vec<TtestEntry>,
}

#[derive(Serialize)]
struct RegressEntry {
    feature: String,
    n: usize,
    df: Option<usize>,
    beta: Vec<f64>,
    se: Vec<f64>,
    t: Vec<f64>,
    p: Vec<f64>,
    error: Option<String>,
}

#[derive(Serialize)]
struct RegressReport {
    test: &'static str,
    design: Vec<String>,
    results: Vec<RegressEntry>,
}

#[derive(Serialize)]
struct IscReport {
    test: &'static str,
    axis: &'static str,
    subjects: Vec<String>,
    /// Row-major; `null` where undefined.
    matrix: Vec<Vec<f64>>,
    constant: Vec<String>,
}

fn analyze_ttest(a: &AnalyzeArgs, table: &FexTable) -> CliResult<TtestReport> {
    let path = a.conditions.as_ref().ok_or_else(|| CliError::usage("ttest needs --conditions"))?;
    let cond: BTreeMap<String, String> = read_conditions(path)?.into_iter().collect();
    let mut names: Vec<&String> = cond.values().collect();
    names.sort_unstable();
    names.dedup();
    if names.len() != 2 {
        return Err(CliError::input(format!("expected exactly two conditions, found {}", names.len())));
    }
    let (neg, pos) = (names[0].clone(), names[1].clone());
    let means = summarize_sessions(table, SummaryStat::Mean);
    let mut results = Vec::new();
    for (j, name) in AU_NAMES.iter().enumerate() {
        let (mut xp, mut xn) = (Vec::new(), Vec::new());
        for row in means.rows() {
            let v = row.aus.map_or(f64::NAN, |au| au.0[j]);
            match cond.get(&row.session) {
                Some(c) if *c == pos => xp.push(v),
                Some(_) => xn.push(v),
                None => {}
            }
        }
        let r = ttest_ind(&xp, &xn);
        let count = |v: &[f64]| v.iter().filter(|x| !x.is_nan()).count();
        results.push(TtestEntry {
            feature: name.to_string(),
            n_positive: count(&xp),
            n_negative: count(&xn),
            t: r.as_ref().ok().map(|r| r.t),
            df: r.as_ref().ok().map(|r| r.df),
            p: r.as_ref().ok().map(|r| r.p),
            error: r.err().map(|e| e.to_string()),
        });
    }
    Ok(TtestReport { test: "ttest", positive: pos, negative: neg, results })
}

fn analyze_regress(a: &AnalyzeArgs, table: &FexTable) -> CliResult<RegressReport> {
    let path = a.design.as_ref().ok_or_else(|| CliError::usage("regress needs --design"))?;
    let rec = Records::read(path)?;
    if rec.rows.len() != table.len() {
        return Err(CliError::input(format!("design has {} rows, Fex table {}", rec.rows.len(), table.len())));
    }
    let k = rec.headers.len();
    let mut design = DMatrix::zeros(rec.rows.len(), k);
    for r in 0..rec.rows.len() {
        for c in 0..k {
            design[(r, c)] = rec.number(r, c)?;
        }
    }
    let mut results = Vec::new();
    for (j, name) in AU_NAMES.iter().enumerate() {
        let rows: Vec<usize> = (0..table.len())
            .filter(|&i| {
                let v = table.rows()[i].aus.map_or(f64::NAN, |au| au.0[j]);
                v.is_finite() && design.row(i).iter().all(|x| x.is_finite())
            })
            .collect();
        let x = DMatrix::from_fn(rows.len(), k, |i, c| design[(rows[i], c)]);
        let y = DMatrix::from_fn(rows.len(), 1, |i, _| table.rows()[rows[i]].aus.map_or(f64::NAN, |au| au.0[j]));
        let entry = match regress(&x, &y) {
            Ok(r) => RegressEntry {
                feature: name.to_string(),
                n: rows.len(),
                df: Some(r.df),
                beta: r.beta.column(0).iter().copied().collect(),
                se: r.se.column(0).iter().copied().collect(),
                t: r.t.column(0).iter().copied().collect(),
                p: r.p.column(0).iter().copied().collect(),
                error: None,
            },
            Err(e) => RegressEntry {
                feature: name.to_string(),
                n: rows.len(),
                df: None,
                beta: vec![],
                se: vec![],
                t: vec![],
                p: vec![],
                error: Some(e.to_string()),
            },
        };
        results.push(entry);
    }
    Ok(RegressReport { test: "regress", design: rec.headers.clone(), results })
}

fn analyze_isc(a: &AnalyzeArgs, table: &FexTable) -> CliResult<IscReport> {
    let parts = table.group_by_session();
    let subjects: Vec<DMatrix<f64>> = parts.iter().map(|(_, t)| t.select(crate::fexdata::ColumnGroup::Aus)).collect();
    let axis = match a.axis {
        AxisChoice::Time => IscAxis::Time,
        AxisChoice::Features => IscAxis::Features,
    };
    let r = isc(&subjects, axis)?;
    Ok(IscReport {
        test: "isc",
        axis: match a.axis {
            AxisChoice::Time => "time",
            AxisChoice::Features => "features",
        },
        subjects: parts.iter().map(|(s, _)| s.clone()).collect(),
        matrix: r.matrix.row_iter().map(|row| row.iter().copied().collect()).collect(),
        constant: r.constant.iter().map(|&i| parts[i].0.clone()).collect(),
    })
}

fn analyze(a: &AnalyzeArgs) -> CliResult<()> {
    let table = load_fex(&a.fex)?;
    match a.test {
        AnalyzeTest::Ttest => write_json(&a.out, &analyze_ttest(a, &table)?),
        AnalyzeTest::Regress => write_json(&a.out, &analyze_regress(a, &table)?),
        AnalyzeTest::Isc => write_json(&a.out, &analyze_isc(a, &table)?),
    }
}

// ---------------------------------------------------------------------------
// viz

/// Parses `AU12=1.0,AU17=0.5`; unnamed AUs are 0.
pub fn parse_au_spec(s: &str) -> CliResult<AuVector> {
    let mut v = AuVector::zeros();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (name, value) =
            part.split_once('=').ok_or_else(|| CliError::usage(format!("expected AUxx=value, got `{part}`")))?;
        let value: f64 = value.trim().parse().map_err(|_| CliError::usage(format!("bad value in `{part}`")))?;
        if !value.is_finite() {
            return Err(CliError::usage(format!("non-finite value in `{part}`")));
        }
        if !v.set(name.trim(), value) {
            return Err(CliError::usage(format!("unknown action unit `{}`", name.trim())));
        }
    }
    Ok(v)
}

fn viz_aus(a: &VizAusArgs) -> CliResult<()> {
    let aus = parse_au_spec(&a.au)?;
    let model = load_model(&a.vizmodel)?;
    let lm = au_to_landmarks(&model, &aus)?;
    let overlay = match a.overlay {
        OverlayChoice::None => Overlay::None,
        OverlayChoice::Vectors => Overlay::Vectors(au_to_landmarks(&model, &AuVector::zeros())?),
        OverlayChoice::Heat => Overlay::Heat(displacement_heat(&lm, &au_to_landmarks(&model, &AuVector::zeros())?)),
    };
    write_file(&a.out, render_face(&FaceSketch::new(lm), &overlay, a.size).as_bytes())
}

fn viz_detections(a: &VizDetectionsArgs) -> CliResult<()> {
    let table = load_fex(&a.fex)?;
    let row = table
        .rows()
        .iter()
        .find(|r| r.frame == a.frame && a.session.as_ref().is_none_or(|s| *s == r.session))
        .ok_or_else(|| CliError::input(format!("no row for frame {}", a.frame)))?;
    let image = a.image.as_ref().map(GrayImage::open).transpose()?;
    write_file(&a.out, plot_detections(row, image.as_ref())?.as_bytes())
}

fn viz_coefficients(a: &VizCoefficientsArgs) -> CliResult<()> {
    let classifier = load_model(&a.model)?;
    let viz = load_model(&a.vizmodel)?;
    let faces = coefficient_faces(&classifier, &viz, a.scale)?;
    write_file(Path::new(&format!("{}positive.svg", a.out_prefix)), faces.positive_svg.as_bytes())?;
    write_file(Path::new(&format!("{}negative.svg", a.out_prefix)), faces.negative_svg.as_bytes())?;
    write_file(Path::new(&format!("{}chart.svg", a.out_prefix)), faces.chart_svg.as_bytes())
}

// ---------------------------------------------------------------------------
// replicate

fn replicate(a: &ReplicateArgs) -> CliResult<()> {
    let table = load_fex(&a.fex)?;
    let conditions = read_conditions(&a.conditions)?;
    let report = replicate_goodnews(&table, &conditions, a.seed)?;
    eprintln!(
        "{} {} vs {} {} sessions, leave-one-session-out accuracy {}",
        report.sessions_positive,
        report.positive_condition,
        report.sessions_negative,
        report.negative_condition,
        format_number(report.logo_accuracy)
    );
    if let Some(p) = &a.model_out {
        let mut json = report.classifier().to_json()?;
        json.push('\n');
        write_file(p, json.as_bytes())?;
    }
    write_json(&a.out, &report)
}
