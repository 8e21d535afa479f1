//! Annotation parsing, tiling of large images, and the line-delimited JSON
//! formats used by the command-line tools.
//!
//! Every JSON record carries `"schema_version": 1`. Boxes are arrays
//! `[cx, cy, w, h, theta]`. Floats are written as the shortest decimal that
//! round-trips, so a write/read cycle is lossless.

use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{DetectionRecord, GroundTruthRecord};
use crate::geometry::{convex_intersection, poly_to_rbox, ConvexPolygon, Point, RotatedBox};

pub const SCHEMA_VERSION: u32 = 1;

/// DOTA v1.0 categories, in the order PL, BD, BR, GTF, SV, LV, SH, TC, BC,
/// ST, SBF, RA, HA, SP, HC.
pub const DOTA_CLASSES: [&str; 15] = [
    "plane",
    "baseball-diamond",
    "bridge",
    "ground-track-field",
    "small-vehicle",
    "large-vehicle",
    "ship",
    "tennis-court",
    "basketball-court",
    "storage-tank",
    "soccer-ball-field",
    "roundabout",
    "harbor",
    "swimming-pool",
    "helicopter",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassList {
    names: Vec<String>,
}

impl ClassList {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Config("class list is empty".into()));
        }
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() || n.contains(char::is_whitespace) {
                return Err(Error::Config(format!("invalid class name {n:?}")));
            }
            if names[..i].contains(n) {
                return Err(Error::Config(format!("duplicate class name {n:?}")));
            }
        }
        Ok(Self { names })
    }

    pub fn dota() -> Self {
        Self {
            names: DOTA_CLASSES.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

impl Default for ClassList {
    fn default() -> Self {
        Self::dota()
    }
}

fn is_header(line: &str) -> bool {
    let first = line.split_whitespace().next().unwrap_or("");
    first.contains(':') && first.parse::<f64>().is_err()
}

/// Parses one DOTA label file: `x1 y1 x2 y2 x3 y3 x4 y4 category difficult`
/// per line. `imagesource:`/`gsd:` header lines and blank lines are skipped.
pub fn parse_dota(
    text: &str,
    image_id: &str,
    classes: &ClassList,
) -> Result<Vec<GroundTruthRecord>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || is_header(line) {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 10 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 10 fields, found {}", tokens.len()),
            });
        }
        let mut coords = [0.0f64; 8];
        for (k, tok) in tokens[..8].iter().enumerate() {
            coords[k] = tok.parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("bad coordinate {tok:?}"),
            })?;
        }
        let class_id = classes
            .index_of(tokens[8])
            .ok_or_else(|| Error::UnknownCategory {
                line: line_no,
                name: tokens[8].to_string(),
                known: classes.names().join(", "),
            })?;
        let difficult = match tokens[9] {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("difficult flag must be 0 or 1, got {other:?}"),
                })
            }
        };
        let quad = [
            Point::new(coords[0], coords[1]),
            Point::new(coords[2], coords[3]),
            Point::new(coords[4], coords[5]),
            Point::new(coords[6], coords[7]),
        ];
        let bbox = poly_to_rbox(&quad).map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        out.push(GroundTruthRecord {
            image_id: image_id.to_string(),
            bbox,
            class_id,
            difficult,
        });
    }
    Ok(out)
}

/// Writes records back as DOTA lines using box corners.
pub fn write_dota(records: &[GroundTruthRecord], classes: &ClassList) -> Result<String> {
    let mut s = String::new();
    for r in records {
        let name = classes
            .name(r.class_id)
            .ok_or_else(|| Error::Config(format!("class id {} has no name", r.class_id)))?;
        for p in r.bbox.corners() {
            s.push_str(&format!("{:?} {:?} ", p.x, p.y));
        }
        s.push_str(&format!("{name} {}\n", u8::from(r.difficult)));
    }
    Ok(s)
}

/// One box per line as `cx cy w h theta`, separated by whitespace or commas.
/// Blank lines and `#` comments are skipped.
pub fn parse_box_list(text: &str) -> Result<Vec<RotatedBox>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let vals: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .collect();
        if vals.len() != 5 {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("expected 5 numbers, found {}", vals.len()),
            });
        }
        let mut a = [0.0; 5];
        for (k, v) in vals.iter().enumerate() {
            a[k] = v.parse().map_err(|_| Error::Parse {
                line: i + 1,
                msg: format!("bad number {v:?}"),
            })?;
        }
        out.push(RotatedBox::try_from(a).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?);
    }
    Ok(out)
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectAnnotation {
    #[serde(rename = "box")]
    pub bbox: RotatedBox,
    #[serde(rename = "class")]
    pub class_id: usize,
    #[serde(default)]
    pub difficult: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageAnnotation {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub objects: Vec<ObjectAnnotation>,
}

impl ImageAnnotation {
    pub fn new(
        image_id: impl Into<String>,
        width: u32,
        height: u32,
        objects: Vec<ObjectAnnotation>,
    ) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            image_id: image_id.into(),
            width,
            height,
            objects,
        }
    }

    pub fn from_records(
        image_id: &str,
        width: u32,
        height: u32,
        records: &[GroundTruthRecord],
    ) -> Self {
        let objects = records
            .iter()
            .map(|r| ObjectAnnotation {
                bbox: r.bbox,
                class_id: r.class_id,
                difficult: r.difficult,
            })
            .collect();
        Self::new(image_id, width, height, objects)
    }

    pub fn records(&self) -> Vec<GroundTruthRecord> {
        self.objects
            .iter()
            .map(|o| GroundTruthRecord {
                image_id: self.image_id.clone(),
                bbox: o.bbox,
                class_id: o.class_id,
                difficult: o.difficult,
            })
            .collect()
    }

    /// Indices of objects whose center lies more than `margin` pixels
    /// outside the image.
    pub fn out_of_bounds(&self, margin: f64) -> Vec<usize> {
        let (w, h) = (f64::from(self.width), f64::from(self.height));
        self.objects
            .iter()
            .enumerate()
            .filter(|(_, o)| {
                let (x, y) = (o.bbox.cx(), o.bbox.cy());
                x < -margin || y < -margin || x > w + margin || y > h + margin
            })
            .map(|(i, _)| i)
            .collect()
    }
}

pub type AnnotationSet = Vec<ImageAnnotation>;

pub fn ground_truth_records(set: &[ImageAnnotation]) -> Vec<GroundTruthRecord> {
    set.iter().flat_map(ImageAnnotation::records).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScoreRow {
    Single(f64),
    PerClass(Vec<f64>),
}

impl ScoreRow {
    pub fn as_slice(&self) -> &[f64] {
        match self {
            ScoreRow::Single(p) => std::slice::from_ref(p),
            ScoreRow::PerClass(v) => v,
        }
    }
}

/// Per-image model outputs feeding assignment and analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpImage {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub image_id: String,
    /// Prior anchors.
    pub anchors: Vec<RotatedBox>,
    /// Refinement-stage output, when the model has one. Present means the
    /// detection stage is assigned against these boxes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refined: Option<Vec<RotatedBox>>,
    /// Final regressed boxes.
    pub regressed: Vec<RotatedBox>,
    pub targets: Vec<ObjectAnnotation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<ScoreRow>>,
    /// Optional anchor-by-target IoU matrices, informational only; the tools
    /// recompute them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iou_in: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iou_out: Option<Vec<Vec<f64>>>,
}

impl DumpImage {
    pub fn new(
        image_id: impl Into<String>,
        anchors: Vec<RotatedBox>,
        regressed: Vec<RotatedBox>,
        targets: Vec<ObjectAnnotation>,
    ) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            image_id: image_id.into(),
            anchors,
            refined: None,
            regressed,
            targets,
            scores: None,
            iou_in: None,
            iou_out: None,
        }
    }

    pub fn target_boxes(&self) -> Vec<RotatedBox> {
        self.targets.iter().map(|t| t.bbox).collect()
    }

    pub fn target_classes(&self) -> Vec<usize> {
        self.targets.iter().map(|t| t.class_id).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.anchors.len();
        let check = |what: &str, len: usize| {
            if len != n {
                Err(Error::Schema(format!(
                    "image {:?}: {what} has {len} entries for {n} anchors",
                    self.image_id
                )))
            } else {
                Ok(())
            }
        };
        check("regressed", self.regressed.len())?;
        if let Some(r) = &self.refined {
            check("refined", r.len())?;
        }
        if let Some(s) = &self.scores {
            check("scores", s.len())?;
            let k = s.first().map_or(0, |r| r.as_slice().len());
            if s.iter().any(|r| r.as_slice().len() != k || k == 0) {
                return Err(Error::Schema(format!(
                    "image {:?}: ragged score rows",
                    self.image_id
                )));
            }
        }
        for m in [&self.iou_in, &self.iou_out].into_iter().flatten() {
            check("IoU matrix", m.len())?;
            if m.iter().any(|row| row.len() != self.targets.len()) {
                return Err(Error::Schema(format!(
                    "image {:?}: IoU rows must have one entry per target",
                    self.image_id
                )));
            }
        }
        Ok(())
    }
}

pub type AnchorDump = Vec<DumpImage>;

trait Versioned {
    fn version(&self) -> u32;
}

impl Versioned for DumpImage {
    fn version(&self) -> u32 {
        self.schema_version
    }
}

impl Versioned for ImageAnnotation {
    fn version(&self) -> u32 {
        self.schema_version
    }
}

fn read_jsonl<T: DeserializeOwned>(reader: impl BufRead) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Schema(format!("line {}: {e}", i + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line)
            .map_err(|e| Error::Schema(format!("line {}: {e}", i + 1)))?;
        out.push(v);
    }
    Ok(out)
}

fn check_versions<T: Versioned>(items: &[T]) -> Result<()> {
    for (i, it) in items.iter().enumerate() {
        if it.version() != SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "record {}: unsupported schema_version {}",
                i + 1,
                it.version()
            )));
        }
    }
    Ok(())
}

fn write_jsonl<T: Serialize>(mut writer: impl Write, items: &[T]) -> std::io::Result<()> {
    for it in items {
        serde_json::to_writer(&mut writer, it)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn read_dump(reader: impl BufRead) -> Result<AnchorDump> {
    let dump: AnchorDump = read_jsonl(reader)?;
    check_versions(&dump)?;
    for img in &dump {
        img.validate()?;
    }
    Ok(dump)
}

pub fn write_dump(writer: impl Write, dump: &[DumpImage]) -> std::io::Result<()> {
    write_jsonl(writer, dump)
}

pub fn read_annotations(reader: impl BufRead) -> Result<AnnotationSet> {
    let set: AnnotationSet = read_jsonl(reader)?;
    check_versions(&set)?;
    Ok(set)
}

pub fn write_annotations(writer: impl Write, set: &[ImageAnnotation]) -> std::io::Result<()> {
    write_jsonl(writer, set)
}

pub fn read_detections(reader: impl BufRead) -> Result<Vec<DetectionRecord>> {
    let dets: Vec<DetectionRecord> = read_jsonl(reader)?;
    for (i, d) in dets.iter().enumerate() {
        if !(0.0..=1.0).contains(&d.score) {
            return Err(Error::Schema(format!(
                "detection {}: score {} outside [0, 1]",
                i + 1,
                d.score
            )));
        }
    }
    Ok(dets)
}

pub fn write_detections(writer: impl Write, dets: &[DetectionRecord]) -> std::io::Result<()> {
    write_jsonl(writer, dets)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TileWindow {
    pub x: u32,
    pub y: u32,
    pub side: u32,
}

impl TileWindow {
    pub fn polygon(&self) -> ConvexPolygon {
        let (x0, y0) = (f64::from(self.x), f64::from(self.y));
        let s = f64::from(self.side);
        ConvexPolygon::new(vec![
            Point::new(x0, y0),
            Point::new(x0 + s, y0),
            Point::new(x0 + s, y0 + s),
            Point::new(x0, y0 + s),
        ])
        .expect("square window")
    }

    pub fn image_id(&self, parent: &str) -> String {
        format!("{parent}__{}__{}", self.x, self.y)
    }
}

fn axis_origins(extent: u32, side: u32, stride: u32) -> Vec<u32> {
    let mut v = Vec::new();
    let mut o = 0u32;
    while u64::from(o) + u64::from(side) < u64::from(extent) {
        v.push(o);
        o += stride;
    }
    v.push(extent.saturating_sub(side));
    v.dedup();
    v
}

/// Square windows at multiples of `stride`; the last window on each axis is
/// pulled back to end at the image edge.
pub fn tile_windows(width: u32, height: u32, side: u32, stride: u32) -> Result<Vec<TileWindow>> {
    if side == 0 || stride == 0 {
        return Err(Error::Config(format!(
            "tile side and stride must be positive (side {side}, stride {stride})"
        )));
    }
    if stride > side {
        return Err(Error::Config(format!(
            "stride {stride} larger than side {side} would leave gaps"
        )));
    }
    let xs = axis_origins(width, side, stride);
    let ys = axis_origins(height, side, stride);
    Ok(ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| TileWindow { x, y, side }))
        .collect())
}

/// Keeps boxes with at least `keep_fraction` of their area inside the
/// window and shifts them into window coordinates. Sizes and angles are
/// untouched; boxes are not cut at the window border.
pub fn clip_boxes_to_window(
    boxes: &[GroundTruthRecord],
    win: &TileWindow,
    keep_fraction: f64,
) -> Vec<GroundTruthRecord> {
    let window = win.polygon();
    let (dx, dy) = (-f64::from(win.x), -f64::from(win.y));
    boxes
        .iter()
        .filter(|r| {
            let inside =
                convex_intersection(&r.bbox.to_polygon(), &window).map_or(0.0, |p| p.area());
            inside >= keep_fraction * r.bbox.area()
        })
        .map(|r| GroundTruthRecord {
            bbox: r.bbox.translated(dx, dy),
            ..r.clone()
        })
        .collect()
}

/// Splits every image into windows and returns one annotation per window,
/// named `<image>__<x>__<y>`.
pub fn tile_annotations(
    set: &[ImageAnnotation],
    side: u32,
    stride: u32,
    keep_fraction: f64,
) -> Result<AnnotationSet> {
    let mut out = Vec::new();
    for img in set {
        let records = img.records();
        for win in tile_windows(img.width, img.height, side, stride)? {
            let kept = clip_boxes_to_window(&records, &win, keep_fraction);
            out.push(ImageAnnotation::from_records(
                &win.image_id(&img.image_id),
                side,
                side,
                &kept,
            ));
        }
    }
    Ok(out)
}

/// Shifts window-local detections back into image coordinates.
pub fn untile(dets: &[DetectionRecord], win: &TileWindow, parent: &str) -> Vec<DetectionRecord> {
    dets.iter()
        .map(|d| DetectionRecord {
            image_id: parent.to_string(),
            bbox: d.bbox.translated(f64::from(win.x), f64::from(win.y)),
            ..d.clone()
        })
        .collect()
}
