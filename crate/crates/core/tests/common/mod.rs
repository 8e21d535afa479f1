//! Independent reference implementations used by the integration and
//! acceptance tests. None of them call into the algorithm they check.

#![allow(dead_code, clippy::needless_range_loop)]

use std::f64::consts::FRAC_PI_2;

use cfcnet::assignment::MatchingConfig;
use cfcnet::eval::DetectionRecord;
use cfcnet::geometry::{rotated_iou, Point, RotatedBox};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_box(rng: &mut impl Rng, extent: f64, min_side: f64, max_side: f64) -> RotatedBox {
    RotatedBox::new(
        rng.gen_range(-extent..extent),
        rng.gen_range(-extent..extent),
        rng.gen_range(min_side..max_side),
        rng.gen_range(min_side..max_side),
        rng.gen_range(-FRAC_PI_2..FRAC_PI_2),
    )
    .unwrap()
}

/// A box near `base`, so that random pairs overlap most of the time.
pub fn nearby_box(rng: &mut impl Rng, base: &RotatedBox) -> RotatedBox {
    let s = base.max_side();
    RotatedBox::new(
        base.cx() + rng.gen_range(-0.6..0.6) * s,
        base.cy() + rng.gen_range(-0.6..0.6) * s,
        base.w() * rng.gen_range(0.5..1.6),
        base.h() * rng.gen_range(0.5..1.6),
        base.theta() + rng.gen_range(-1.0..1.0),
    )
    .unwrap()
}

/// Point membership through the box's own frame.
pub fn contains(b: &RotatedBox, x: f64, y: f64) -> bool {
    let (s, c) = b.theta().sin_cos();
    let (dx, dy) = (x - b.cx(), y - b.cy());
    let u = c * dx + s * dy;
    let v = -s * dx + c * dy;
    u.abs() <= b.w() / 2.0 && v.abs() <= b.h() / 2.0
}

/// Uniform sample inside a rotated box.
pub fn sample_in(rng: &mut impl Rng, b: &RotatedBox) -> (f64, f64) {
    let u = rng.gen_range(-0.5..0.5) * b.w();
    let v = rng.gen_range(-0.5..0.5) * b.h();
    let (s, c) = b.theta().sin_cos();
    (b.cx() + c * u - s * v, b.cy() + s * u + c * v)
}

/// Monte Carlo IoU. Points are drawn in the smaller box; the hit rate
/// times its area estimates the intersection.
pub fn monte_carlo_iou(rng: &mut impl Rng, a: &RotatedBox, b: &RotatedBox, samples: usize) -> f64 {
    let (small, other) = if a.area() <= b.area() { (a, b) } else { (b, a) };
    let hits = (0..samples)
        .filter(|_| {
            let (x, y) = sample_in(rng, small);
            contains(other, x, y)
        })
        .count();
    let inter = small.area() * hits as f64 / samples as f64;
    inter / (a.area() + b.area() - inter)
}

/// Smallest bounding-rectangle area over a fine sweep of orientations.
pub fn sweep_min_rect_area(points: &[Point], steps: usize) -> f64 {
    (0..steps)
        .map(|k| {
            let t = FRAC_PI_2 * k as f64 / steps as f64;
            let (s, c) = t.sin_cos();
            let (mut u0, mut u1, mut v0, mut v1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
            for p in points {
                let u = c * p.x + s * p.y;
                let v = -s * p.x + c * p.y;
                u0 = u0.min(u);
                u1 = u1.max(u);
                v0 = v0.min(v);
                v1 = v1.max(v);
            }
            (u1 - u0) * (v1 - v0)
        })
        .fold(f64::MAX, f64::min)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RefAssignment {
    pub positive: bool,
    pub matched: Option<usize>,
    pub md: f64,
    pub weight: f64,
}

/// Straight transcription of the selection procedure with plain loops.
pub fn reference_assign(
    anchors: &[RotatedBox],
    regressed: &[RotatedBox],
    targets: &[RotatedBox],
    cfg: &MatchingConfig,
) -> Vec<RefAssignment> {
    let n = anchors.len();
    let m = targets.len();
    let mut md = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let iin = rotated_iou(&anchors[i], &targets[j]);
            let iout = rotated_iou(&regressed[i], &targets[j]);
            let u = (iin - iout).abs();
            md[i][j] = cfg.alpha * iin + (1.0 - cfg.alpha) * iout - u.powf(cfg.gamma);
        }
    }

    let mut out = Vec::new();
    for i in 0..n {
        let mut best = None;
        let mut best_md = f64::NEG_INFINITY;
        for j in 0..m {
            if md[i][j] > best_md {
                best_md = md[i][j];
                best = Some(j);
            }
        }
        let positive = best.is_some() && best_md >= cfg.pos_threshold;
        out.push(RefAssignment {
            positive,
            matched: if positive { best } else { None },
            md: if best.is_some() { best_md } else { 0.0 },
            weight: 0.0,
        });
    }

    for j in 0..m {
        let mut count = 0;
        for a in &out {
            if a.matched == Some(j) {
                count += 1;
            }
        }
        if count > 0 {
            continue;
        }
        let mut pick = None;
        let mut pick_md = f64::NEG_INFINITY;
        for i in 0..n {
            let free = match out[i].matched {
                None => true,
                Some(h) => {
                    let mut others = 0;
                    for a in &out {
                        if a.matched == Some(h) {
                            others += 1;
                        }
                    }
                    others >= 2
                }
            };
            if free && md[i][j] > pick_md {
                pick_md = md[i][j];
                pick = Some(i);
            }
        }
        if let Some(i) = pick {
            out[i] = RefAssignment {
                positive: true,
                matched: Some(j),
                md: md[i][j],
                weight: 0.0,
            };
        }
    }

    for j in 0..m {
        let mut max = f64::NEG_INFINITY;
        for a in &out {
            if a.matched == Some(j) && a.md > max {
                max = a.md;
            }
        }
        for a in out.iter_mut() {
            if a.matched == Some(j) {
                a.weight = a.md + (1.0 - max);
            }
        }
    }
    out
}

/// Classic suppression formulation: visit by score, and every survivor
/// knocks out all lower-ranked boxes it overlaps.
pub fn reference_nms(dets: &[DetectionRecord], threshold: f64) -> Vec<usize> {
    let n = dets.len();
    let mut order: Vec<usize> = (0..n).collect();
    // stable sort keeps input order among equal scores
    order.sort_by(|&a, &b| dets[b].score.partial_cmp(&dets[a].score).unwrap());
    let mut suppressed = vec![false; n];
    let mut keep = Vec::new();
    for (rank, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        keep.push(i);
        for &j in &order[rank + 1..] {
            if rotated_iou(&dets[i].bbox, &dets[j].bbox) >= threshold {
                suppressed[j] = true;
            }
        }
    }
    keep
}

/// Clustered random detections so that suppression actually happens.
pub fn random_detections(rng: &mut impl Rng, max_n: usize) -> Vec<DetectionRecord> {
    let n = rng.gen_range(0..=max_n);
    let centers: Vec<RotatedBox> = (0..rng.gen_range(1..6))
        .map(|_| random_box(rng, 50.0, 5.0, 30.0))
        .collect();
    (0..n)
        .map(|_| {
            let c = &centers[rng.gen_range(0..centers.len())];
            DetectionRecord {
                image_id: "img".into(),
                bbox: nearby_box(rng, c),
                class_id: 0,
                // coarse scores so ties occur
                score: f64::from(rng.gen_range(0..20u32)) / 20.0,
            }
        })
        .collect()
}

pub struct DalInstance {
    pub anchors: Vec<RotatedBox>,
    pub regressed: Vec<RotatedBox>,
    pub targets: Vec<RotatedBox>,
}

/// Up to 5 targets and between max(1, #targets) and 20 anchors, scattered
/// around the targets so matching degrees spread over the whole range.
pub fn random_dal_instance(rng: &mut impl Rng) -> DalInstance {
    let m = rng.gen_range(0..=5);
    let targets: Vec<RotatedBox> = (0..m).map(|_| random_box(rng, 40.0, 4.0, 30.0)).collect();
    let n = rng.gen_range(m.max(1)..=20);
    let anchors: Vec<RotatedBox> = (0..n)
        .map(|_| {
            if targets.is_empty() || rng.gen_bool(0.2) {
                random_box(rng, 40.0, 4.0, 30.0)
            } else {
                let t = &targets[rng.gen_range(0..targets.len())];
                nearby_box(rng, t)
            }
        })
        .collect();
    let regressed = anchors
        .iter()
        .map(|a| {
            if !targets.is_empty() && rng.gen_bool(0.5) {
                let t = &targets[rng.gen_range(0..targets.len())];
                nearby_box(rng, t)
            } else {
                nearby_box(rng, a)
            }
        })
        .collect();
    DalInstance {
        anchors,
        regressed,
        targets,
    }
}
