//! Matching degree and dynamic anchor selection.
//!
//! Every anchor is scored against every target by
//! `md = alpha * iou_in + (1 - alpha) * iou_out - |iou_in - iou_out|^gamma`,
//! where `iou_in` uses the anchor before regression and `iou_out` the
//! regressed box. Anchors are matched to their best target, thresholded,
//! and any target left without a positive receives its best remaining
//! anchor. Positives are then weighted per target so the best one gets 1.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rotated_iou, RotatedBox};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Refinement,
    Detection,
}

impl Stage {
    pub fn default_threshold(self) -> f64 {
        match self {
            Stage::Refinement => 0.4,
            Stage::Detection => 0.6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchingConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub pos_threshold: f64,
    pub stage: Stage,
}

impl MatchingConfig {
    /// `alpha = 0.5`, `gamma = 4` and the stage's default threshold.
    pub fn for_stage(stage: Stage) -> Self {
        Self {
            alpha: 0.5,
            gamma: 4.0,
            pos_threshold: stage.default_threshold(),
            stage,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.gamma.is_finite() && self.gamma > 0.0) {
            return Err(Error::Config(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if !self.pos_threshold.is_finite() {
            return Err(Error::Config("positive threshold must be finite".into()));
        }
        Ok(())
    }
}

impl Default for MatchingConfig {
    fn default() -> Self {
        Self::for_stage(Stage::Detection)
    }
}

pub fn matching_degree(iou_in: f64, iou_out: f64, cfg: &MatchingConfig) -> f64 {
    let u = (iou_in - iou_out).abs();
    cfg.alpha * iou_in + (1.0 - cfg.alpha) * iou_out - u.powf(cfg.gamma)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
}

/// Per-anchor outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorAssignment {
    pub label: Label,
    /// Target this anchor is trained against; `None` for negatives.
    pub matched: Option<usize>,
    /// Matching degree against `matched` for positives, the best matching
    /// degree over targets for negatives (`0` when there are no targets).
    pub md: f64,
    /// Loss weight; `0` for negatives.
    pub weight: f64,
    pub iou_in: f64,
    pub iou_out: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentResult {
    pub anchors: Vec<AnchorAssignment>,
    pub num_targets: usize,
}

impl AssignmentResult {
    pub fn num_positive(&self) -> usize {
        self.anchors
            .iter()
            .filter(|a| a.label == Label::Positive)
            .count()
    }

    pub fn num_negative(&self) -> usize {
        self.anchors.len() - self.num_positive()
    }

    pub fn positives_of(&self, target: usize) -> impl Iterator<Item = usize> + '_ {
        self.anchors
            .iter()
            .enumerate()
            .filter(move |(_, a)| a.label == Label::Positive && a.matched == Some(target))
            .map(|(i, _)| i)
    }
}

/// IoU and matching-degree matrices, row per anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchTable {
    pub iou_in: Vec<Vec<f64>>,
    pub iou_out: Vec<Vec<f64>>,
    pub md: Vec<Vec<f64>>,
}

pub fn match_table(
    anchors: &[RotatedBox],
    regressed: &[RotatedBox],
    targets: &[RotatedBox],
    cfg: &MatchingConfig,
) -> Result<MatchTable> {
    if anchors.len() != regressed.len() {
        return Err(Error::LengthMismatch {
            what: "anchors and regressed boxes",
            left: anchors.len(),
            right: regressed.len(),
        });
    }
    let rows: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = anchors
        .par_iter()
        .zip(regressed.par_iter())
        .map(|(a, r)| {
            let iou_in: Vec<f64> = targets.iter().map(|t| rotated_iou(a, t)).collect();
            let iou_out: Vec<f64> = targets.iter().map(|t| rotated_iou(r, t)).collect();
            let md = iou_in
                .iter()
                .zip(&iou_out)
                .map(|(&i, &o)| matching_degree(i, o, cfg))
                .collect();
            (iou_in, iou_out, md)
        })
        .collect();
    let mut table = MatchTable {
        iou_in: Vec::with_capacity(rows.len()),
        iou_out: Vec::with_capacity(rows.len()),
        md: Vec::with_capacity(rows.len()),
    };
    for (i, o, m) in rows {
        table.iou_in.push(i);
        table.iou_out.push(o);
        table.md.push(m);
    }
    Ok(table)
}

/// First index of the maximum; NaN never wins.
fn argmax(values: impl Iterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.enumerate() {
        if best.map_or(!v.is_nan(), |(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

pub fn assign_labels(
    anchors: &[RotatedBox],
    regressed: &[RotatedBox],
    targets: &[RotatedBox],
    cfg: &MatchingConfig,
) -> Result<AssignmentResult> {
    cfg.validate()?;
    let table = match_table(anchors, regressed, targets, cfg)?;
    assign_from_table(&table, targets.len(), cfg)
}

/// Label assignment from a precomputed table.
///
/// Fallback runs over targets in index order. A target without a positive
/// takes its highest-md anchor among those that are free: negatives, or
/// positives whose current target keeps at least one other positive. This
/// guarantees coverage whenever there are at least as many anchors as
/// targets.
pub fn assign_from_table(
    table: &MatchTable,
    num_targets: usize,
    cfg: &MatchingConfig,
) -> Result<AssignmentResult> {
    let n = table.md.len();
    let mut out: Vec<AnchorAssignment> = (0..n)
        .map(|i| {
            let best = argmax(table.md[i].iter().copied());
            let (md, iou_in, iou_out) = best.map_or((0.0, 0.0, 0.0), |t| {
                (table.md[i][t], table.iou_in[i][t], table.iou_out[i][t])
            });
            let positive = best.is_some() && md >= cfg.pos_threshold;
            AnchorAssignment {
                label: if positive {
                    Label::Positive
                } else {
                    Label::Negative
                },
                matched: if positive { best } else { None },
                md,
                weight: 0.0,
                iou_in,
                iou_out,
            }
        })
        .collect();

    let mut per_target = vec![0usize; num_targets];
    for a in &out {
        if let Some(t) = a.matched {
            per_target[t] += 1;
        }
    }

    for g in 0..num_targets {
        if per_target[g] > 0 {
            continue;
        }
        let candidate = argmax((0..n).map(|i| {
            let free = match out[i].matched {
                None => true,
                Some(h) => per_target[h] >= 2,
            };
            if free {
                table.md[i][g]
            } else {
                f64::NAN
            }
        }));
        if let Some(i) = candidate {
            if let Some(h) = out[i].matched {
                per_target[h] -= 1;
            }
            out[i] = AnchorAssignment {
                label: Label::Positive,
                matched: Some(g),
                md: table.md[i][g],
                weight: 0.0,
                iou_in: table.iou_in[i][g],
                iou_out: table.iou_out[i][g],
            };
            per_target[g] = 1;
        }
    }

    let mut result = AssignmentResult {
        anchors: out,
        num_targets,
    };
    for g in 0..num_targets {
        let idx: Vec<usize> = result.positives_of(g).collect();
        if idx.is_empty() {
            continue;
        }
        let md: Vec<f64> = idx.iter().map(|&i| result.anchors[i].md).collect();
        for (i, w) in idx.into_iter().zip(positive_weights(&md)?) {
            result.anchors[i].weight = w;
        }
    }
    Ok(result)
}

/// Compensated weights for one target's positives: every matching degree
/// is shifted by `1 - max`, so the best positive gets exactly 1.
pub fn positive_weights(md_pos: &[f64]) -> Result<Vec<f64>> {
    let max = md_pos.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if md_pos.is_empty() || !max.is_finite() {
        return Err(Error::Internal("target has no positive anchors".into()));
    }
    let delta = 1.0 - max;
    Ok(md_pos
        .iter()
        .map(|&m| if m == max { 1.0 } else { (m + delta).min(1.0) })
        .collect())
}
