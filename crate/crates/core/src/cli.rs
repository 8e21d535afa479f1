//! The `cfc` command-line tool.
//!
//! Every numeric flag is range-checked before any input is read. Output is
//! byte-identical for identical inputs and flags regardless of `--threads`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::assignment::{assign_labels, AnchorAssignment, Label, MatchingConfig, Stage};
use crate::error::{Error, Result};
use crate::eval::{anchor_quality_stats, mean_ap, nms_per_image_class, AnchorQuality, ApVariant};
use crate::geometry::{rotated_iou, RotatedBox};
use crate::ingest::{
    self, parse_box_list, parse_dota, tile_annotations, ClassList, DumpImage, ImageAnnotation,
    SCHEMA_VERSION,
};
use crate::losses::{
    cls_loss_ms, reg_loss_ms, regression_pairs, total_loss, ClassProbs, LossConfig, LossReport,
    StageCounts,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_SCHEMA: i32 = 4;
pub const EXIT_RANGE: i32 = 5;

const EXIT_HELP: &str = "\
Exit codes:
  0  success
  1  internal error
  2  usage error (unknown flag, missing argument, malformed value)
  3  I/O error (missing input, unwritable output)
  4  schema or parse error in an input file
  5  numeric flag outside its documented range";

#[derive(Debug, Parser)]
#[command(name = "cfc", version, about = "Rotated-box assignment, evaluation and tiling tools", after_help = EXIT_HELP)]
pub struct Cli {
    /// Worker threads; defaults to the number of CPUs. Must be >= 1.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Seed for any randomized step. No current subcommand samples.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rotated IoU between the boxes of two files (one `cx cy w h theta` per line).
    Iou(IouArgs),
    /// Label assignment and loss report for an anchor dump.
    Assign(AssignArgs),
    /// Per-class AP and mAP of detections against annotations.
    Eval(EvalArgs),
    /// Split annotated images into overlapping square windows.
    Tile(TileArgs),
    /// Regression-quality statistics of positive and negative anchors.
    Analyze(AnalyzeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    Refinement,
    Detection,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::Refinement => Stage::Refinement,
            StageArg::Detection => Stage::Detection,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Voc07,
    Voc12,
}

impl From<VariantArg> for ApVariant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Voc07 => ApVariant::Voc07,
            VariantArg::Voc12 => ApVariant::Voc12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Csv,
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AnnotationFormat {
    Jsonl,
    Dota,
}

#[derive(Debug, Args)]
pub struct IouArgs {
    /// First box file.
    #[arg(long)]
    pub a: PathBuf,
    /// Second box file.
    #[arg(long)]
    pub b: PathBuf,
    /// Pair boxes line by line instead of writing the full matrix.
    #[arg(long)]
    pub zip: bool,
    /// Output file; stdout when omitted.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    /// Weight of the prior IoU in the matching degree, in [0, 1].
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// Exponent of the uncertainty penalty, > 0.
    #[arg(long, default_value_t = 4.0)]
    pub gamma: f64,
    /// Positive threshold for the refinement stage, in [0, 1].
    #[arg(long, default_value_t = 0.4)]
    pub ref_threshold: f64,
    /// Positive threshold for the detection stage, in [0, 1].
    #[arg(long, default_value_t = 0.6)]
    pub det_threshold: f64,
}

impl MatchArgs {
    fn config(&self, stage: Stage) -> MatchingConfig {
        MatchingConfig {
            alpha: self.alpha,
            gamma: self.gamma,
            pos_threshold: match stage {
                Stage::Refinement => self.ref_threshold,
                Stage::Detection => self.det_threshold,
            },
            stage,
        }
    }

    fn validate(&self) -> Result<()> {
        unit_interval("--ref-threshold", self.ref_threshold)?;
        unit_interval("--det-threshold", self.det_threshold)?;
        self.config(Stage::Refinement).validate()
    }
}

#[derive(Debug, Args)]
pub struct LossArgs {
    /// Focal-loss class balance, in [0, 1].
    #[arg(long, default_value_t = 0.25)]
    pub focal_alpha: f64,
    /// Focal-loss focusing exponent, >= 0.
    #[arg(long, default_value_t = 2.0)]
    pub focal_gamma: f64,
    /// Smooth-L1 transition point, > 0.
    #[arg(long, default_value_t = 1.0 / 9.0)]
    pub beta: f64,
    /// Weight of the refinement regression loss, >= 0.
    #[arg(long, default_value_t = 0.5)]
    pub lambda_ref: f64,
    /// Weight of the detection regression loss, >= 0.
    #[arg(long, default_value_t = 0.5)]
    pub lambda_reg: f64,
}

impl LossArgs {
    fn config(&self) -> LossConfig {
        LossConfig {
            focal_alpha: self.focal_alpha,
            focal_gamma: self.focal_gamma,
            smooth_l1_beta: self.beta,
            lambda_ref: self.lambda_ref,
            lambda_reg: self.lambda_reg,
        }
    }
}

#[derive(Debug, Args)]
pub struct AssignArgs {
    /// Anchor dump (JSON lines).
    #[arg(long)]
    pub dump: PathBuf,
    /// Assignment output (JSON lines).
    #[arg(long, short)]
    pub output: PathBuf,
    /// Loss report CSV; stdout when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Stage for images without refined boxes. Images with a "refined"
    /// field are always assigned in both stages.
    #[arg(long, value_enum, default_value_t = StageArg::Detection)]
    pub stage: StageArg,
    #[command(flatten)]
    pub matching: MatchArgs,
    #[command(flatten)]
    pub loss: LossArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Detections (JSON lines).
    #[arg(long)]
    pub detections: PathBuf,
    /// Annotations (JSON lines).
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long, value_enum, default_value_t = VariantArg::Voc07)]
    pub variant: VariantArg,
    /// IoU needed for a true positive, in (0, 1].
    #[arg(long, default_value_t = 0.5)]
    pub iou_threshold: f64,
    /// Per-image, per-class NMS IoU applied before matching, in (0, 1].
    #[arg(long, default_value_t = 0.5)]
    pub nms: f64,
    /// Evaluate detections as given, without NMS.
    #[arg(long)]
    pub no_nms: bool,
    /// Comma-separated class names; the 15 DOTA classes by default.
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<String>>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Csv)]
    pub format: ReportFormat,
    /// Output file; stdout when omitted.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TileArgs {
    /// Annotation input.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = AnnotationFormat::Jsonl)]
    pub format: AnnotationFormat,
    /// Image id for a DOTA label file; the file stem when omitted.
    #[arg(long)]
    pub image_id: Option<String>,
    /// Image width in pixels, required for DOTA input.
    #[arg(long)]
    pub width: Option<u32>,
    /// Image height in pixels, required for DOTA input.
    #[arg(long)]
    pub height: Option<u32>,
    /// Comma-separated class names; the 15 DOTA classes by default.
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<String>>,
    /// Window side in pixels, >= 1.
    #[arg(long, default_value_t = 800)]
    pub side: u32,
    /// Window stride in pixels, in [1, side].
    #[arg(long, default_value_t = 200)]
    pub stride: u32,
    /// Minimum share of a box's area inside a window to keep it, in (0, 1].
    #[arg(long, default_value_t = 0.5)]
    pub keep_fraction: f64,
    /// Warn about boxes centered further than this outside their image, >= 0.
    #[arg(long, default_value_t = 50.0)]
    pub margin: f64,
    /// Output annotations (JSON lines); stdout when omitted.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Anchor dump (JSON lines).
    #[arg(long)]
    pub dump: PathBuf,
    #[arg(long, value_enum, default_value_t = StageArg::Detection)]
    pub stage: StageArg,
    #[command(flatten)]
    pub matching: MatchArgs,
    /// Output IoU above which a regressed box counts as high quality, in [0, 1).
    #[arg(long, default_value_t = 0.5)]
    pub iou_out_threshold: f64,
    /// Per-anchor CSV of prior IoU, output IoU, matching degree and score.
    #[arg(long)]
    pub scatter: Option<PathBuf>,
    /// Summary CSV; stdout when omitted.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

/// Process exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } => EXIT_IO,
        Error::Config(_) => EXIT_RANGE,
        Error::Parse { .. }
        | Error::UnknownCategory { .. }
        | Error::Schema(_)
        | Error::InvalidBox(_)
        | Error::InvalidPolygon(_)
        | Error::Degenerate(_)
        | Error::Shape(_)
        | Error::LengthMismatch { .. } => EXIT_SCHEMA,
        Error::Internal(_) => EXIT_OTHER,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code. Diagnostics go to stderr as a single line.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("cfc: error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    validate(&cli.command)?;
    let pool = pool
        .build()
        .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Iou(a) => run_iou(a),
        Command::Assign(a) => run_assign(a),
        Command::Eval(a) => run_eval(a),
        Command::Tile(a) => run_tile(a),
        Command::Analyze(a) => run_analyze(a),
    })
}

fn unit_interval(flag: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Config(format!("{flag} must lie in [0, 1], got {v}")))
    }
}

fn open_unit_interval(flag: &str, v: f64) -> Result<()> {
    if v > 0.0 && v <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("{flag} must lie in (0, 1], got {v}")))
    }
}

fn validate(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Iou(_) => Ok(()),
        Command::Assign(a) => {
            a.matching.validate()?;
            a.loss.config().validate()
        }
        Command::Eval(a) => {
            open_unit_interval("--iou-threshold", a.iou_threshold)?;
            open_unit_interval("--nms", a.nms)
        }
        Command::Tile(a) => {
            if a.side == 0 {
                return Err(Error::Config("--side must be at least 1".into()));
            }
            if a.stride == 0 || a.stride > a.side {
                return Err(Error::Config(format!(
                    "--stride must lie in [1, {}], got {}",
                    a.side, a.stride
                )));
            }
            open_unit_interval("--keep-fraction", a.keep_fraction)?;
            if !(a.margin.is_finite() && a.margin >= 0.0) {
                return Err(Error::Config(format!(
                    "--margin must be >= 0, got {}",
                    a.margin
                )));
            }
            Ok(())
        }
        Command::Analyze(a) => {
            a.matching.validate()?;
            if !(0.0..1.0).contains(&a.iou_out_threshold) {
                return Err(Error::Config(format!(
                    "--iou-out-threshold must lie in [0, 1), got {}",
                    a.iou_out_threshold
                )));
            }
            Ok(())
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    fs::File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => fs::write(p, bytes).map_err(|e| Error::io(p, e)),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)
                .and_then(|_| out.flush())
                .map_err(|e| Error::io(Path::new("<stdout>"), e))
        }
    }
}

fn f(x: f64) -> String {
    format!("{x:?}")
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn class_list(names: &Option<Vec<String>>) -> Result<ClassList> {
    match names {
        Some(n) => ClassList::new(n.clone()),
        None => Ok(ClassList::dota()),
    }
}

fn run_iou(a: &IouArgs) -> Result<()> {
    let left = parse_box_list(&read_text(&a.a)?)?;
    let right = parse_box_list(&read_text(&a.b)?)?;
    let mut out = String::new();
    if a.zip {
        if left.len() != right.len() {
            return Err(Error::LengthMismatch {
                what: "box files",
                left: left.len(),
                right: right.len(),
            });
        }
        let ious: Vec<f64> = left
            .par_iter()
            .zip(&right)
            .map(|(x, y)| rotated_iou(x, y))
            .collect();
        out.push_str("index,iou\n");
        for (i, v) in ious.iter().enumerate() {
            let _ = writeln!(out, "{i},{}", f(*v));
        }
    } else {
        let rows: Vec<String> = left
            .par_iter()
            .map(|x| {
                right
                    .iter()
                    .map(|y| f(rotated_iou(x, y)))
                    .collect::<Vec<_>>()
                    .join(",")
            })
            .collect();
        for r in rows {
            out.push_str(&r);
            out.push('\n');
        }
    }
    emit(a.output.as_deref(), out.as_bytes())
}

/// Input and output boxes of a stage: the refinement stage regresses the
/// prior anchors, the detection stage regresses the refined boxes when the
/// dump has them.
fn stage_boxes(img: &DumpImage, stage: Stage) -> (&[RotatedBox], &[RotatedBox]) {
    match (stage, &img.refined) {
        (Stage::Refinement, Some(r)) => (&img.anchors, r),
        (Stage::Refinement, None) => (&img.anchors, &img.regressed),
        (Stage::Detection, Some(r)) => (r, &img.regressed),
        (Stage::Detection, None) => (&img.anchors, &img.regressed),
    }
}

#[derive(Debug, Serialize)]
struct StageRecord {
    stage: Stage,
    pos_threshold: f64,
    num_targets: usize,
    num_positive: usize,
    anchors: Vec<AnchorAssignment>,
}

#[derive(Debug, Serialize)]
struct AssignRecord<'a> {
    schema_version: u32,
    image_id: &'a str,
    stages: Vec<StageRecord>,
}

struct ImageLoss {
    report: LossReport,
    has_cls: bool,
}

fn assign_image<'a>(img: &'a DumpImage, a: &AssignArgs) -> Result<(AssignRecord<'a>, ImageLoss)> {
    let stages: Vec<Stage> = if img.refined.is_some() {
        vec![Stage::Refinement, Stage::Detection]
    } else {
        vec![a.stage.into()]
    };
    let loss_cfg = a.loss.config();
    let targets = img.target_boxes();
    let mut report = LossReport::default();
    let mut has_cls = false;
    let mut records = Vec::new();
    for stage in stages {
        let cfg = a.matching.config(stage);
        let (input, output) = stage_boxes(img, stage);
        let result = assign_labels(input, output, &targets, &cfg)?;
        let (pred, tgt) = regression_pairs(input, output, &targets, &result)?;
        let reg = reg_loss_ms(&pred, &tgt, &result, &loss_cfg)?;
        match stage {
            Stage::Refinement => {
                report.ref_loss = reg;
                report.refinement = StageCounts::from(&result);
            }
            Stage::Detection => {
                report.reg_loss = reg;
                report.detection = StageCounts::from(&result);
                if let Some(scores) = &img.scores {
                    let rows: Vec<Vec<f64>> =
                        scores.iter().map(|r| r.as_slice().to_vec()).collect();
                    let probs = ClassProbs::from_rows(&rows)?;
                    // a single score column is a class-agnostic objectness
                    let classes = if probs.num_classes() == 1 {
                        vec![0; targets.len()]
                    } else {
                        img.target_classes()
                    };
                    report.cls_loss = cls_loss_ms(&probs, &result, &classes, &loss_cfg)?;
                    has_cls = true;
                }
            }
        }
        records.push(StageRecord {
            stage,
            pos_threshold: cfg.pos_threshold,
            num_targets: result.num_targets,
            num_positive: result.num_positive(),
            anchors: result.anchors,
        });
    }
    report.total = total_loss(report.cls_loss, report.ref_loss, report.reg_loss, &loss_cfg);
    let record = AssignRecord {
        schema_version: SCHEMA_VERSION,
        image_id: &img.image_id,
        stages: records,
    };
    Ok((record, ImageLoss { report, has_cls }))
}

fn run_assign(a: &AssignArgs) -> Result<()> {
    let dump = ingest::read_dump(open(&a.dump)?)?;
    let results = dump
        .par_iter()
        .map(|img| assign_image(img, a))
        .collect::<Result<Vec<_>>>()?;

    let mut assignments = Vec::new();
    for (record, _) in &results {
        serde_json::to_writer(&mut assignments, record)
            .map_err(|e| Error::Internal(format!("serializing assignment: {e}")))?;
        assignments.push(b'\n');
    }

    let mut csv = String::from(
        "image_id,cls_loss,ref_loss,reg_loss,total,ref_positives,ref_negatives,det_positives,det_negatives\n",
    );
    let mut sums = [0.0f64; 4];
    let mut n_cls = 0usize;
    let mut counts = [0usize; 4];
    for ((record, loss), img) in results.iter().zip(&dump) {
        let r = &loss.report;
        let cls = if loss.has_cls {
            f(r.cls_loss)
        } else {
            String::new()
        };
        let _ = writeln!(
            csv,
            "{},{cls},{},{},{},{},{},{},{}",
            csv_field(record.image_id),
            f(r.ref_loss),
            f(r.reg_loss),
            f(r.total),
            r.refinement.positives,
            r.refinement.negatives,
            r.detection.positives,
            r.detection.negatives
        );
        debug_assert_eq!(record.image_id, img.image_id);
        if loss.has_cls {
            sums[0] += r.cls_loss;
            n_cls += 1;
        }
        sums[1] += r.ref_loss;
        sums[2] += r.reg_loss;
        sums[3] += r.total;
        counts[0] += r.refinement.positives;
        counts[1] += r.refinement.negatives;
        counts[2] += r.detection.positives;
        counts[3] += r.detection.negatives;
    }
    if !results.is_empty() {
        let n = results.len() as f64;
        let cls = if n_cls > 0 {
            f(sums[0] / n_cls as f64)
        } else {
            String::new()
        };
        let _ = writeln!(
            csv,
            "mean,{cls},{},{},{},{},{},{},{}",
            f(sums[1] / n),
            f(sums[2] / n),
            f(sums[3] / n),
            counts[0],
            counts[1],
            counts[2],
            counts[3]
        );
    }

    emit(Some(&a.output), &assignments)?;
    emit(a.report.as_deref(), csv.as_bytes())
}

fn run_eval(a: &EvalArgs) -> Result<()> {
    let classes = class_list(&a.classes)?;
    let mut dets = ingest::read_detections(open(&a.detections)?)?;
    let annotations = ingest::read_annotations(open(&a.annotations)?)?;
    let gts = ingest::ground_truth_records(&annotations);
    if !a.no_nms {
        dets = nms_per_image_class(&dets, a.nms);
    }
    let variant: ApVariant = a.variant.into();
    let report = mean_ap(&dets, &gts, a.iou_threshold, variant)?;

    let name = |id: usize| classes.name(id).unwrap_or("").to_string();
    let mut out = String::new();
    match a.format {
        ReportFormat::Csv => {
            out.push_str("class_id,class_name,n_positive,n_detections,n_true_positive,AP\n");
            for c in &report.per_class {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{}",
                    c.class_id,
                    csv_field(&name(c.class_id)),
                    c.n_positive,
                    c.n_detections,
                    c.n_true_positive,
                    f(c.ap)
                );
            }
            let _ = writeln!(out, "mAP,{}", f(report.map));
        }
        ReportFormat::Text => {
            let label = match variant {
                ApVariant::Voc07 => "VOC07 11-point",
                ApVariant::Voc12 => "VOC12 area",
            };
            let _ = writeln!(out, "{label} AP at IoU {}", f(a.iou_threshold));
            for c in &report.per_class {
                let _ = writeln!(
                    out,
                    "{:>4} {:<20} AP {:.4}  ({} tp / {} det / {} gt)",
                    c.class_id,
                    name(c.class_id),
                    c.ap,
                    c.n_true_positive,
                    c.n_detections,
                    c.n_positive
                );
            }
            let _ = writeln!(out, "mAP {:.4}", report.map);
        }
    }
    emit(a.output.as_deref(), out.as_bytes())
}

fn run_tile(a: &TileArgs) -> Result<()> {
    let set: Vec<ImageAnnotation> = match a.format {
        AnnotationFormat::Jsonl => ingest::read_annotations(open(&a.input)?)?,
        AnnotationFormat::Dota => {
            let (Some(w), Some(h)) = (a.width, a.height) else {
                return Err(Error::Config(
                    "DOTA input needs --width and --height".into(),
                ));
            };
            let id = match &a.image_id {
                Some(id) => id.clone(),
                None => a
                    .input
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default(),
            };
            let records = parse_dota(&read_text(&a.input)?, &id, &class_list(&a.classes)?)?;
            vec![ImageAnnotation::from_records(&id, w, h, &records)]
        }
    };
    for img in &set {
        for i in img.out_of_bounds(a.margin) {
            eprintln!(
                "cfc: warning: image {:?} object {i} is centered outside the image",
                img.image_id
            );
        }
    }
    let tiles = tile_annotations(&set, a.side, a.stride, a.keep_fraction)?;
    let mut out = Vec::new();
    ingest::write_annotations(&mut out, &tiles).map_err(|e| Error::Internal(e.to_string()))?;
    emit(a.output.as_deref(), &out)
}

fn run_analyze(a: &AnalyzeArgs) -> Result<()> {
    let dump = ingest::read_dump(open(&a.dump)?)?;
    let stage: Stage = a.stage.into();
    let cfg = a.matching.config(stage);
    let per_image = dump
        .par_iter()
        .map(|img| {
            let (input, output) = stage_boxes(img, stage);
            let targets = img.target_boxes();
            let q = anchor_quality_stats(input, output, &targets, &cfg, a.iou_out_threshold)?;
            let scatter = if a.scatter.is_some() {
                scatter_rows(img, input, output, &targets, &cfg)?
            } else {
                String::new()
            };
            Ok((q, scatter))
        })
        .collect::<Result<Vec<_>>>()?;

    let total = per_image
        .iter()
        .fold(AnchorQuality::default(), |acc, (q, _)| acc.merge(*q));
    let mut out = String::from("metric,value\n");
    let _ = writeln!(
        out,
        "positive_high_quality_ratio,{}",
        f(total.positive_high_quality_ratio)
    );
    let _ = writeln!(
        out,
        "high_quality_from_negative_ratio,{}",
        f(total.high_quality_from_negative_ratio)
    );
    let _ = writeln!(out, "positives,{}", total.positives);
    let _ = writeln!(
        out,
        "positives_high_quality,{}",
        total.positives_high_quality
    );
    let _ = writeln!(out, "high_quality,{}", total.high_quality);
    let _ = writeln!(out, "high_quality_negative,{}", total.high_quality_negative);

    if let Some(path) = &a.scatter {
        let mut s = String::from("image_id,anchor,label,iou_in,iou_out,md,score\n");
        for (_, rows) in &per_image {
            s.push_str(rows);
        }
        emit(Some(path), s.as_bytes())?;
    }
    emit(a.output.as_deref(), out.as_bytes())
}

fn scatter_rows(
    img: &DumpImage,
    input: &[RotatedBox],
    output: &[RotatedBox],
    targets: &[RotatedBox],
    cfg: &MatchingConfig,
) -> Result<String> {
    let result = assign_labels(input, output, targets, cfg)?;
    let mut s = String::new();
    let id = csv_field(&img.image_id);
    for (i, an) in result.anchors.iter().enumerate() {
        let label = match an.label {
            Label::Positive => "positive",
            Label::Negative => "negative",
        };
        let score = img
            .scores
            .as_ref()
            .map(|rows| {
                f(rows[i]
                    .as_slice()
                    .iter()
                    .copied()
                    .fold(f64::NEG_INFINITY, f64::max))
            })
            .unwrap_or_default();
        let _ = writeln!(
            s,
            "{id},{i},{label},{},{},{},{score}",
            f(an.iou_in),
            f(an.iou_out),
            f(an.md)
        );
    }
    Ok(s)
}
