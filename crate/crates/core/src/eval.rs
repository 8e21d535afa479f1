//! Rotated NMS, detection matching and VOC-style average precision.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment::{assign_labels, Label, MatchingConfig};
use crate::error::{Error, Result};
use crate::geometry::{rotated_iou, RotatedBox};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub image_id: String,
    #[serde(rename = "box")]
    pub bbox: RotatedBox,
    #[serde(rename = "class")]
    pub class_id: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthRecord {
    pub image_id: String,
    #[serde(rename = "box")]
    pub bbox: RotatedBox,
    #[serde(rename = "class")]
    pub class_id: usize,
    #[serde(default)]
    pub difficult: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ApVariant {
    /// 11-point interpolated AP.
    Voc07,
    /// Area under the monotone precision envelope.
    Voc12,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatchOutcome {
    TruePositive,
    FalsePositive,
    Ignored,
}

/// Indices ordered by descending score, input order among equal scores.
fn score_order(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// Greedy suppression. Returns the indices of kept detections in
/// descending score order.
pub fn rotated_nms(dets: &[DetectionRecord], iou_threshold: f64) -> Vec<usize> {
    let scores: Vec<f64> = dets.iter().map(|d| d.score).collect();
    let mut kept: Vec<usize> = Vec::new();
    for i in score_order(&scores) {
        if kept
            .iter()
            .all(|&k| rotated_iou(&dets[k].bbox, &dets[i].bbox) < iou_threshold)
        {
            kept.push(i);
        }
    }
    kept
}

/// Class-aware NMS per image; returns the surviving records in a fixed
/// order (image id, class, descending score).
pub fn nms_per_image_class(dets: &[DetectionRecord], iou_threshold: f64) -> Vec<DetectionRecord> {
    let mut groups: BTreeMap<(&str, usize), Vec<usize>> = BTreeMap::new();
    for (i, d) in dets.iter().enumerate() {
        groups
            .entry((d.image_id.as_str(), d.class_id))
            .or_default()
            .push(i);
    }
    let groups: Vec<Vec<usize>> = groups.into_values().collect();
    groups
        .par_iter()
        .map(|idx| {
            let local: Vec<DetectionRecord> = idx.iter().map(|&i| dets[i].clone()).collect();
            rotated_nms(&local, iou_threshold)
                .into_iter()
                .map(|k| local[k].clone())
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

/// Matches detections of one image and class, given in descending score
/// order, against that image's ground truth.
///
/// Each detection claims the unclaimed ground truth of highest IoU at or
/// above the threshold. Difficult boxes are never claimed; a detection whose
/// best candidate is difficult is ignored.
pub fn match_detections(
    dets: &[&RotatedBox],
    gts: &[(&RotatedBox, bool)],
    iou_threshold: f64,
) -> Vec<MatchOutcome> {
    let mut claimed = vec![false; gts.len()];
    dets.iter()
        .map(|d| {
            let mut best: Option<(usize, f64)> = None;
            for (g, (gt, difficult)) in gts.iter().enumerate() {
                if claimed[g] && !difficult {
                    continue;
                }
                let iou = rotated_iou(d, gt);
                if iou >= iou_threshold && best.is_none_or(|(_, b)| iou > b) {
                    best = Some((g, iou));
                }
            }
            match best {
                Some((g, _)) if gts[g].1 => MatchOutcome::Ignored,
                Some((g, _)) => {
                    claimed[g] = true;
                    MatchOutcome::TruePositive
                }
                None => MatchOutcome::FalsePositive,
            }
        })
        .collect()
}

/// Precision/recall points for flags sorted by descending score.
pub fn precision_recall(tp: &[bool], n_positive: usize) -> Vec<(f64, f64)> {
    let mut ctp = 0usize;
    tp.iter()
        .enumerate()
        .map(|(i, &t)| {
            ctp += usize::from(t);
            let recall = if n_positive > 0 {
                ctp as f64 / n_positive as f64
            } else {
                0.0
            };
            (recall, ctp as f64 / (i + 1) as f64)
        })
        .collect()
}

/// AP from true-positive flags and their scores (ignored detections already
/// removed). Flags are reordered by descending score, ties by input order.
pub fn average_precision(
    tp: &[bool],
    scores: &[f64],
    n_positive: usize,
    variant: ApVariant,
) -> Result<f64> {
    if tp.len() != scores.len() {
        return Err(Error::LengthMismatch {
            what: "flags and scores",
            left: tp.len(),
            right: scores.len(),
        });
    }
    if n_positive == 0 {
        return Ok(0.0);
    }
    let sorted: Vec<bool> = score_order(scores).into_iter().map(|i| tp[i]).collect();
    let pr = precision_recall(&sorted, n_positive);
    let ap = match variant {
        ApVariant::Voc07 => {
            (0..=10)
                .map(|k| {
                    let t = f64::from(k) / 10.0;
                    pr.iter()
                        .filter(|(r, _)| *r >= t)
                        .map(|(_, p)| *p)
                        .fold(0.0, f64::max)
                })
                .sum::<f64>()
                / 11.0
        }
        ApVariant::Voc12 => {
            let mut rec = vec![0.0];
            let mut prec = vec![0.0];
            for &(r, p) in &pr {
                rec.push(r);
                prec.push(p);
            }
            rec.push(1.0);
            prec.push(0.0);
            for i in (0..prec.len() - 1).rev() {
                prec[i] = prec[i].max(prec[i + 1]);
            }
            (1..rec.len())
                .filter(|&i| rec[i] != rec[i - 1])
                .map(|i| (rec[i] - rec[i - 1]) * prec[i])
                .sum()
        }
    };
    Ok(ap.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAp {
    pub class_id: usize,
    pub ap: f64,
    pub n_positive: usize,
    pub n_detections: usize,
    pub n_true_positive: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapReport {
    pub per_class: Vec<ClassAp>,
    pub map: f64,
}

/// Per-class AP over classes with at least one non-difficult ground truth,
/// and their unweighted mean.
pub fn mean_ap(
    dets: &[DetectionRecord],
    gts: &[GroundTruthRecord],
    iou_threshold: f64,
    variant: ApVariant,
) -> Result<MapReport> {
    let classes: BTreeSet<usize> = gts
        .iter()
        .filter(|g| !g.difficult)
        .map(|g| g.class_id)
        .collect();
    let classes: Vec<usize> = classes.into_iter().collect();

    let per_class = classes
        .par_iter()
        .map(|&class| class_ap(dets, gts, class, iou_threshold, variant))
        .collect::<Result<Vec<_>>>()?;
    let map = if per_class.is_empty() {
        0.0
    } else {
        per_class.iter().map(|c| c.ap).sum::<f64>() / per_class.len() as f64
    };
    Ok(MapReport { per_class, map })
}

fn class_ap(
    dets: &[DetectionRecord],
    gts: &[GroundTruthRecord],
    class: usize,
    iou_threshold: f64,
    variant: ApVariant,
) -> Result<ClassAp> {
    let mut gt_by_image: HashMap<&str, Vec<(&RotatedBox, bool)>> = HashMap::new();
    let mut n_positive = 0;
    for g in gts.iter().filter(|g| g.class_id == class) {
        gt_by_image
            .entry(g.image_id.as_str())
            .or_default()
            .push((&g.bbox, g.difficult));
        n_positive += usize::from(!g.difficult);
    }

    let class_dets: Vec<&DetectionRecord> = dets.iter().filter(|d| d.class_id == class).collect();
    let scores: Vec<f64> = class_dets.iter().map(|d| d.score).collect();
    let order = score_order(&scores);

    // match image by image, keeping each detection's global rank
    let mut by_image: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for &i in &order {
        by_image
            .entry(class_dets[i].image_id.as_str())
            .or_default()
            .push(i);
    }
    let mut outcome = vec![MatchOutcome::FalsePositive; class_dets.len()];
    for (image, idx) in &by_image {
        let boxes: Vec<&RotatedBox> = idx.iter().map(|&i| &class_dets[i].bbox).collect();
        let gts = gt_by_image.get(image).map(Vec::as_slice).unwrap_or(&[]);
        for (&i, o) in idx.iter().zip(match_detections(&boxes, gts, iou_threshold)) {
            outcome[i] = o;
        }
    }

    let (mut tp, mut kept_scores) = (Vec::new(), Vec::new());
    for &i in &order {
        match outcome[i] {
            MatchOutcome::Ignored => {}
            o => {
                tp.push(o == MatchOutcome::TruePositive);
                kept_scores.push(scores[i]);
            }
        }
    }
    let n_true_positive = tp.iter().filter(|&&t| t).count();
    Ok(ClassAp {
        class_id: class,
        ap: average_precision(&tp, &kept_scores, n_positive, variant)?,
        n_positive,
        n_detections: tp.len(),
        n_true_positive,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AnchorQuality {
    /// Positives whose regressed box reaches the IoU threshold with their target.
    pub positive_high_quality_ratio: f64,
    /// Among all anchors whose regressed box reaches the threshold with some
    /// target, the share labeled negative.
    pub high_quality_from_negative_ratio: f64,
    pub positives: usize,
    pub positives_high_quality: usize,
    pub high_quality: usize,
    pub high_quality_negative: usize,
}

impl AnchorQuality {
    pub fn merge(self, o: Self) -> Self {
        let mut m = Self {
            positives: self.positives + o.positives,
            positives_high_quality: self.positives_high_quality + o.positives_high_quality,
            high_quality: self.high_quality + o.high_quality,
            high_quality_negative: self.high_quality_negative + o.high_quality_negative,
            ..Default::default()
        };
        m.fill_ratios();
        m
    }

    fn fill_ratios(&mut self) {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        self.positive_high_quality_ratio = ratio(self.positives_high_quality, self.positives);
        self.high_quality_from_negative_ratio =
            ratio(self.high_quality_negative, self.high_quality);
    }
}

/// Regression quality of positives versus negatives for one image.
/// "High quality" means output IoU strictly above `iou_out_threshold`.
pub fn anchor_quality_stats(
    anchors: &[RotatedBox],
    regressed: &[RotatedBox],
    targets: &[RotatedBox],
    cfg: &MatchingConfig,
    iou_out_threshold: f64,
) -> Result<AnchorQuality> {
    let assignment = assign_labels(anchors, regressed, targets, cfg)?;
    let mut q = AnchorQuality::default();
    for (i, a) in assignment.anchors.iter().enumerate() {
        let best_out = targets
            .iter()
            .map(|t| rotated_iou(&regressed[i], t))
            .fold(0.0, f64::max);
        if a.label == Label::Positive {
            q.positives += 1;
            if a.iou_out > iou_out_threshold {
                q.positives_high_quality += 1;
            }
        }
        if best_out > iou_out_threshold {
            q.high_quality += 1;
            if a.label == Label::Negative {
                q.high_quality_negative += 1;
            }
        }
    }
    q.fill_ratios();
    Ok(q)
}
