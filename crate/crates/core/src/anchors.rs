//! One-anchor-per-cell grids and the box offset codec shared by the
//! refinement and detection stages.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{normalize_angle, RotatedBox};

/// Size deltas are clamped to this magnitude before `exp` so decoded sides
/// stay finite and positive.
const MAX_LOG_RATIO: f64 = 500.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PyramidLevel {
    pub level: u32,
    pub stride: u32,
    pub base_side: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PyramidSpec {
    levels: Vec<PyramidLevel>,
    image_width: u32,
    image_height: u32,
}

impl PyramidSpec {
    pub fn new(image_width: u32, image_height: u32, levels: Vec<PyramidLevel>) -> Result<Self> {
        for pair in levels.windows(2) {
            if pair[1].stride <= pair[0].stride {
                return Err(Error::Config(format!(
                    "strides must be strictly increasing ({} then {})",
                    pair[0].stride, pair[1].stride
                )));
            }
        }
        for l in &levels {
            if l.stride == 0 {
                return Err(Error::Config(format!("level {} has stride 0", l.level)));
            }
            if !(l.base_side.is_finite() && l.base_side > 0.0) {
                return Err(Error::Config(format!(
                    "level {} has non-positive base side {}",
                    l.level, l.base_side
                )));
            }
        }
        Ok(Self {
            levels,
            image_width,
            image_height,
        })
    }

    /// Levels with strides `2^k`, base side four strides.
    pub fn with_strides(image_width: u32, image_height: u32, strides: &[u32]) -> Result<Self> {
        let levels = strides
            .iter()
            .map(|&s| PyramidLevel {
                level: s.max(1).trailing_zeros(),
                stride: s,
                base_side: 4.0 * f64::from(s),
            })
            .collect();
        Self::new(image_width, image_height, levels)
    }

    /// The P3-P7 pyramid.
    pub fn p3_p7(image_width: u32, image_height: u32) -> Self {
        Self::with_strides(image_width, image_height, &[8, 16, 32, 64, 128])
            .expect("static pyramid is valid")
    }

    pub fn levels(&self) -> &[PyramidLevel] {
        &self.levels
    }

    pub fn image_size(&self) -> (u32, u32) {
        (self.image_width, self.image_height)
    }

    /// Cells per level, `ceil(width / stride) * ceil(height / stride)`.
    pub fn cells(&self, level: &PyramidLevel) -> (u32, u32) {
        (
            self.image_width.div_ceil(level.stride),
            self.image_height.div_ceil(level.stride),
        )
    }

    pub fn anchor_count(&self) -> usize {
        self.levels
            .iter()
            .map(|l| {
                let (nx, ny) = self.cells(l);
                nx as usize * ny as usize
            })
            .sum()
    }
}

/// Horizontal square anchors, level-major then row-major.
pub fn generate_grid(spec: &PyramidSpec) -> Vec<RotatedBox> {
    let mut out = Vec::with_capacity(spec.anchor_count());
    for level in spec.levels() {
        let (nx, ny) = spec.cells(level);
        let stride = f64::from(level.stride);
        for j in 0..ny {
            for i in 0..nx {
                let cx = (f64::from(i) + 0.5) * stride;
                let cy = (f64::from(j) + 0.5) * stride;
                out.push(
                    RotatedBox::new(cx, cy, level.base_side, level.base_side, 0.0)
                        .expect("validated pyramid level"),
                );
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BoxOffsets {
    pub tx: f64,
    pub ty: f64,
    pub tw: f64,
    pub th: f64,
    pub ttheta: f64,
}

impl BoxOffsets {
    pub fn to_array(&self) -> [f64; 5] {
        [self.tx, self.ty, self.tw, self.th, self.ttheta]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self {
            tx: a[0],
            ty: a[1],
            tw: a[2],
            th: a[3],
            ttheta: a[4],
        }
    }
}

pub fn encode_offsets(anchor: &RotatedBox, target: &RotatedBox) -> BoxOffsets {
    let dtheta = normalize_angle(target.theta() - anchor.theta());
    BoxOffsets {
        tx: (target.cx() - anchor.cx()) / anchor.w(),
        ty: (target.cy() - anchor.cy()) / anchor.h(),
        tw: (target.w() / anchor.w()).ln(),
        th: (target.h() / anchor.h()).ln(),
        ttheta: dtheta.tan(),
    }
}

pub fn decode_offsets(anchor: &RotatedBox, off: &BoxOffsets) -> RotatedBox {
    let cx = anchor.cx() + off.tx * anchor.w();
    let cy = anchor.cy() + off.ty * anchor.h();
    let w = anchor.w() * off.tw.clamp(-MAX_LOG_RATIO, MAX_LOG_RATIO).exp();
    let h = anchor.h() * off.th.clamp(-MAX_LOG_RATIO, MAX_LOG_RATIO).exp();
    let theta = anchor.theta() + off.ttheta.atan();
    RotatedBox::new(cx, cy, w, h, theta).expect("decoded box from finite offsets")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn rb(cx: f64, cy: f64, w: f64, h: f64, t: f64) -> RotatedBox {
        RotatedBox::new(cx, cy, w, h, t).unwrap()
    }

    #[test]
    fn small_grid() {
        let spec = PyramidSpec::new(
            16,
            16,
            vec![PyramidLevel {
                level: 3,
                stride: 8,
                base_side: 32.0,
            }],
        )
        .unwrap();
        let g = generate_grid(&spec);
        let centers: Vec<(f64, f64)> = g.iter().map(|b| (b.cx(), b.cy())).collect();
        assert_eq!(
            centers,
            vec![(4.0, 4.0), (12.0, 4.0), (4.0, 12.0), (12.0, 12.0)]
        );
        assert!(g
            .iter()
            .all(|b| b.w() == 32.0 && b.h() == 32.0 && b.theta() == 0.0));
    }

    #[test]
    fn grid_counts() {
        // ceil(800/s)^2 for s in 8..128
        let expected: usize = [8u32, 16, 32, 64, 128]
            .iter()
            .map(|&s| {
                let n = 800u32.div_ceil(s);
                (n * n) as usize
            })
            .sum();
        assert_eq!(expected, 13343);
        let spec = PyramidSpec::p3_p7(800, 800);
        assert_eq!(generate_grid(&spec).len(), expected);
        assert_eq!(spec.anchor_count(), expected);

        let tiny = PyramidSpec::with_strides(7, 7, &[8]).unwrap();
        let g = generate_grid(&tiny);
        assert_eq!(g.len(), 1);
        assert_eq!((g[0].cx(), g[0].cy(), g[0].w()), (4.0, 4.0, 32.0));

        let empty = PyramidSpec::with_strides(0, 10, &[8]).unwrap();
        assert!(generate_grid(&empty).is_empty());
    }

    #[test]
    fn pyramid_validation() {
        assert!(PyramidSpec::with_strides(64, 64, &[16, 8]).is_err());
        assert!(PyramidSpec::with_strides(64, 64, &[8, 8]).is_err());
        assert!(PyramidSpec::with_strides(64, 64, &[0]).is_err());
        let bad = PyramidLevel {
            level: 3,
            stride: 8,
            base_side: 0.0,
        };
        assert!(PyramidSpec::new(64, 64, vec![bad]).is_err());
    }

    #[test]
    fn encode_fixtures() {
        let a = rb(0.0, 0.0, 10.0, 10.0, 0.0);
        assert_eq!(encode_offsets(&a, &a), BoxOffsets::default());

        let t = rb(1.0, 2.0, 20.0, 5.0, 0.1);
        let o = encode_offsets(&a, &t);
        assert_abs_diff_eq!(o.tx, 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(o.ty, 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(o.tw, 2f64.ln(), epsilon = 1e-12);
        assert_abs_diff_eq!(o.th, -(2f64.ln()), epsilon = 1e-12);
        assert_abs_diff_eq!(o.ttheta, 0.1f64.tan(), epsilon = 1e-12);
        assert_abs_diff_eq!(o.ttheta, 0.1003, epsilon = 1e-4);

        let a2 = rb(5.0, 5.0, 4.0, 8.0, 0.2);
        let t2 = rb(5.0, 5.0, 4.0, 8.0, 0.2 - 0.3);
        let o2 = encode_offsets(&a2, &t2);
        assert_abs_diff_eq!(o2.ttheta, (-0.3f64).tan(), epsilon = 1e-12);
        assert_abs_diff_eq!(o2.ttheta, -0.3093, epsilon = 1e-4);
    }

    #[test]
    fn angle_delta_is_wrapped() {
        let a = rb(0.0, 0.0, 4.0, 4.0, 1.4);
        let t = rb(0.0, 0.0, 4.0, 4.0, -1.4);
        // raw delta -2.8 wraps to pi - 2.8
        let o = encode_offsets(&a, &t);
        assert_abs_diff_eq!(
            o.ttheta,
            (std::f64::consts::PI - 2.8).tan(),
            epsilon = 1e-12
        );
        let back = decode_offsets(&a, &o);
        assert_abs_diff_eq!(back.theta(), -1.4, epsilon = 1e-12);
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn decode_fixtures() {
        let a = rb(0.0, 0.0, 10.0, 10.0, 0.0);
        assert_eq!(decode_offsets(&a, &BoxOffsets::default()), a);
        let b = decode_offsets(
            &a,
            &BoxOffsets {
                tx: 0.1,
                ty: 0.2,
                tw: 0.6931,
                th: -0.6931,
                ttheta: 0.1003,
            },
        );
        // offsets are rounded to four places: absolute below 1, relative above
        for (got, want) in b.to_array().iter().zip([1.0, 2.0, 20.0, 5.0, 0.1]) {
            assert!(
                (got - want).abs() <= 1e-4 * want.max(1.0),
                "{got} vs {want}"
            );
        }
        assert_abs_diff_eq!(b.w(), 10.0 * 0.6931f64.exp(), epsilon = 1e-12);
    }

    #[test]
    fn decode_keeps_sides_positive() {
        let a = rb(0.0, 0.0, 10.0, 10.0, 0.0);
        for t in [-1e6, -800.0, 0.0, 800.0] {
            let b = decode_offsets(
                &a,
                &BoxOffsets {
                    tw: t,
                    th: -t,
                    ..Default::default()
                },
            );
            assert!(b.w() > 0.0 && b.h() > 0.0 && b.w().is_finite() && b.h().is_finite());
        }
    }
}
