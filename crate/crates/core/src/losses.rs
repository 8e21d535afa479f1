//! Focal and smooth-L1 losses and their matching-sensitive combinations.
//!
//! Forward values only. Probabilities are one-vs-all per class.

use serde::{Deserialize, Serialize};

use crate::anchors::{encode_offsets, BoxOffsets};
use crate::assignment::{AssignmentResult, Label};
use crate::error::{Error, Result};
use crate::geometry::RotatedBox;

pub const PROB_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub smooth_l1_beta: f64,
    pub lambda_ref: f64,
    pub lambda_reg: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            focal_alpha: 0.25,
            focal_gamma: 2.0,
            smooth_l1_beta: 1.0 / 9.0,
            lambda_ref: 0.5,
            lambda_reg: 0.5,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.focal_alpha) {
            return Err(Error::Config(format!(
                "focal alpha must lie in [0, 1], got {}",
                self.focal_alpha
            )));
        }
        if !(self.focal_gamma.is_finite() && self.focal_gamma >= 0.0) {
            return Err(Error::Config(format!(
                "focal gamma must be >= 0, got {}",
                self.focal_gamma
            )));
        }
        if !(self.smooth_l1_beta.is_finite() && self.smooth_l1_beta > 0.0) {
            return Err(Error::Config(format!(
                "smooth-L1 beta must be > 0, got {}",
                self.smooth_l1_beta
            )));
        }
        for (name, v) in [("lambda1", self.lambda_ref), ("lambda2", self.lambda_reg)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageCounts {
    pub positives: usize,
    pub negatives: usize,
}

impl From<&AssignmentResult> for StageCounts {
    fn from(a: &AssignmentResult) -> Self {
        Self {
            positives: a.num_positive(),
            negatives: a.num_negative(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub cls_loss: f64,
    pub ref_loss: f64,
    pub reg_loss: f64,
    pub total: f64,
    pub refinement: StageCounts,
    pub detection: StageCounts,
}

pub fn focal_loss(p: f64, is_positive: bool, cfg: &LossConfig) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    if is_positive {
        -cfg.focal_alpha * (1.0 - p).powf(cfg.focal_gamma) * p.ln()
    } else {
        -(1.0 - cfg.focal_alpha) * p.powf(cfg.focal_gamma) * (1.0 - p).ln()
    }
}

pub fn smooth_l1(x: f64, beta: f64) -> f64 {
    let a = x.abs();
    if a < beta {
        0.5 * x * x / beta
    } else {
        a - 0.5 * beta
    }
}

/// Per-anchor class probabilities, `num_classes` per row.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProbs {
    num_classes: usize,
    data: Vec<f64>,
}

impl ClassProbs {
    pub fn new(num_classes: usize, data: Vec<f64>) -> Result<Self> {
        if num_classes == 0 || !data.len().is_multiple_of(num_classes) {
            return Err(Error::Shape(format!(
                "{} probabilities do not split into rows of {num_classes}",
                data.len()
            )));
        }
        if data.iter().any(|p| !p.is_finite()) {
            return Err(Error::Shape("probabilities must be finite".into()));
        }
        Ok(Self { num_classes, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.first().map_or(1, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Shape("ragged probability rows".into()));
        }
        Self::new(k, rows.concat())
    }

    pub fn num_anchors(&self) -> usize {
        self.data.len() / self.num_classes
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn row(&self, anchor: usize) -> &[f64] {
        &self.data[anchor * self.num_classes..(anchor + 1) * self.num_classes]
    }
}

/// Negatives average plain focal terms; positives average focal terms
/// scaled by `w + 1`. `target_classes[g]` is the class of target `g`.
pub fn cls_loss_ms(
    probs: &ClassProbs,
    assignment: &AssignmentResult,
    target_classes: &[usize],
    cfg: &LossConfig,
) -> Result<f64> {
    if probs.num_anchors() != assignment.anchors.len() {
        return Err(Error::LengthMismatch {
            what: "probability rows and assigned anchors",
            left: probs.num_anchors(),
            right: assignment.anchors.len(),
        });
    }
    let (mut neg_sum, mut pos_sum) = (0.0, 0.0);
    let (mut n_neg, mut n_pos) = (0usize, 0usize);
    for (i, a) in assignment.anchors.iter().enumerate() {
        let row = probs.row(i);
        match (a.label, a.matched) {
            (Label::Positive, Some(g)) => {
                let class = *target_classes
                    .get(g)
                    .ok_or_else(|| Error::Shape(format!("no class for target {g}")))?;
                if class >= probs.num_classes() {
                    return Err(Error::Shape(format!(
                        "class {class} outside {} probability columns",
                        probs.num_classes()
                    )));
                }
                let fl: f64 = row
                    .iter()
                    .enumerate()
                    .map(|(c, &p)| focal_loss(p, c == class, cfg))
                    .sum();
                pos_sum += (a.weight + 1.0) * fl;
                n_pos += 1;
            }
            _ => {
                neg_sum += row.iter().map(|&p| focal_loss(p, false, cfg)).sum::<f64>();
                n_neg += 1;
            }
        }
    }
    let neg = if n_neg > 0 {
        neg_sum / n_neg as f64
    } else {
        0.0
    };
    let pos = if n_pos > 0 {
        pos_sum / n_pos as f64
    } else {
        0.0
    };
    Ok(neg + pos)
}

/// Weighted mean over positives of the summed smooth-L1 over all five
/// offset components.
pub fn reg_loss_ms(
    pred: &[BoxOffsets],
    target: &[BoxOffsets],
    assignment: &AssignmentResult,
    cfg: &LossConfig,
) -> Result<f64> {
    let n = assignment.anchors.len();
    for (what, len) in [
        ("predicted offsets", pred.len()),
        ("target offsets", target.len()),
    ] {
        if len != n {
            return Err(Error::LengthMismatch {
                what,
                left: len,
                right: n,
            });
        }
    }
    let mut sum = 0.0;
    let mut n_pos = 0usize;
    for (i, a) in assignment.anchors.iter().enumerate() {
        if a.label != Label::Positive {
            continue;
        }
        let per_anchor: f64 = pred[i]
            .to_array()
            .iter()
            .zip(target[i].to_array())
            .map(|(p, t)| smooth_l1(p - t, cfg.smooth_l1_beta))
            .sum();
        sum += a.weight * per_anchor;
        n_pos += 1;
    }
    Ok(if n_pos > 0 { sum / n_pos as f64 } else { 0.0 })
}

pub fn total_loss(cls: f64, ref_loss: f64, reg: f64, cfg: &LossConfig) -> f64 {
    cls + cfg.lambda_ref * ref_loss + cfg.lambda_reg * reg
}

/// Predicted and target offsets for every positive; negatives get zeros on
/// both sides so they contribute nothing.
pub fn regression_pairs(
    anchors: &[RotatedBox],
    predicted: &[RotatedBox],
    targets: &[RotatedBox],
    assignment: &AssignmentResult,
) -> Result<(Vec<BoxOffsets>, Vec<BoxOffsets>)> {
    if anchors.len() != predicted.len() || anchors.len() != assignment.anchors.len() {
        return Err(Error::LengthMismatch {
            what: "anchors and predictions",
            left: anchors.len(),
            right: predicted.len(),
        });
    }
    let mut pred = Vec::with_capacity(anchors.len());
    let mut tgt = Vec::with_capacity(anchors.len());
    for (i, a) in assignment.anchors.iter().enumerate() {
        match a.matched {
            Some(g) if a.label == Label::Positive => {
                let t = targets
                    .get(g)
                    .ok_or_else(|| Error::Internal(format!("matched target {g} out of range")))?;
                pred.push(encode_offsets(&anchors[i], &predicted[i]));
                tgt.push(encode_offsets(&anchors[i], t));
            }
            _ => {
                pred.push(BoxOffsets::default());
                tgt.push(BoxOffsets::default());
            }
        }
    }
    Ok((pred, tgt))
}
