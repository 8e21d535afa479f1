//! Exact rotated-rectangle geometry.
//!
//! Boxes are `(cx, cy, w, h, theta)` with `theta` the rotation of the box's
//! own x-axis (the side of length `w`) from the image x-axis, stored
//! normalized to `[-pi/2, pi/2)`. Because a rectangle is symmetric under a
//! half turn, `(cx, cy, w, h, theta)` and `(cx, cy, h, w, theta + pi/2)`
//! describe the same point set; every operation here depends only on the
//! point set.

use std::cmp::Ordering;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used for collinearity and containment tests, scaled by
/// the largest dimension of the shapes involved.
pub const REL_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }

    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }

    fn scale(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }

    fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }

    fn cross(self, o: Point) -> f64 {
        self.x * o.y - self.y * o.x
    }

    fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }
}

/// Wraps an angle into `[-pi/2, pi/2)`.
pub fn normalize_angle(theta: f64) -> f64 {
    let t = theta - PI * ((theta + FRAC_PI_2) / PI).floor();
    // floor() can land one period off when theta + pi/2 rounds onto a multiple of pi
    if t >= FRAC_PI_2 {
        t - PI
    } else if t < -FRAC_PI_2 {
        t + PI
    } else {
        t
    }
}

/// Oriented rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 5]", into = "[f64; 5]")]
pub struct RotatedBox {
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
    theta: f64,
}

impl RotatedBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64, theta: f64) -> Result<Self> {
        if !(cx.is_finite() && cy.is_finite() && theta.is_finite()) {
            return Err(Error::InvalidBox(format!(
                "non-finite center or angle ({cx}, {cy}, {theta})"
            )));
        }
        if !(w.is_finite() && h.is_finite() && w > 0.0 && h > 0.0) {
            return Err(Error::InvalidBox(format!(
                "sides must be finite and positive, got w={w}, h={h}"
            )));
        }
        Ok(Self {
            cx,
            cy,
            w,
            h,
            theta: normalize_angle(theta),
        })
    }

    pub fn cx(&self) -> f64 {
        self.cx
    }

    pub fn cy(&self) -> f64 {
        self.cy
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn center(&self) -> Point {
        Point::new(self.cx, self.cy)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn max_side(&self) -> f64 {
        self.w.max(self.h)
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.cx, self.cy, self.w, self.h, self.theta]
    }

    /// The other encoding of the same rectangle: sides swapped, angle
    /// advanced by a quarter turn.
    pub fn swapped(&self) -> Self {
        Self {
            cx: self.cx,
            cy: self.cy,
            w: self.h,
            h: self.w,
            theta: normalize_angle(self.theta + FRAC_PI_2),
        }
    }

    /// Equivalent encoding with `theta` in `[-pi/4, pi/4)`.
    pub fn canonical(&self) -> Self {
        if self.theta >= FRAC_PI_4 || self.theta < -FRAC_PI_4 {
            self.swapped()
        } else {
            *self
        }
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            cx: self.cx + dx,
            cy: self.cy + dy,
            ..*self
        }
    }

    /// Corners in counterclockwise order, starting at local `(+w/2, +h/2)`.
    pub fn corners(&self) -> [Point; 4] {
        let (s, c) = self.theta.sin_cos();
        let (hw, hh) = (0.5 * self.w, 0.5 * self.h);
        let at =
            |lx: f64, ly: f64| Point::new(self.cx + lx * c - ly * s, self.cy + lx * s + ly * c);
        [at(hw, hh), at(-hw, hh), at(-hw, -hh), at(hw, -hh)]
    }

    pub fn to_polygon(&self) -> ConvexPolygon {
        ConvexPolygon {
            vertices: self.corners().to_vec(),
        }
    }
}

impl TryFrom<[f64; 5]> for RotatedBox {
    type Error = Error;

    fn try_from(a: [f64; 5]) -> Result<Self> {
        RotatedBox::new(a[0], a[1], a[2], a[3], a[4])
    }
}

impl From<RotatedBox> for [f64; 5] {
    fn from(b: RotatedBox) -> Self {
        b.to_array()
    }
}

/// Convex polygon with counterclockwise vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexPolygon {
    vertices: Vec<Point>,
}

impl ConvexPolygon {
    /// Builds a polygon from vertices in either winding; clockwise input is
    /// reversed. Collinear runs are accepted.
    pub fn new(mut vertices: Vec<Point>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::InvalidPolygon(format!(
                "need at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        if vertices
            .iter()
            .any(|p| !(p.x.is_finite() && p.y.is_finite()))
        {
            return Err(Error::InvalidPolygon("non-finite vertex".into()));
        }
        if signed_area(&vertices) < 0.0 {
            vertices.reverse();
        }
        let tol = REL_TOLERANCE * extent(&vertices);
        let n = vertices.len();
        for i in 0..n {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            let c = vertices[(i + 2) % n];
            let e = b.sub(a);
            let len = e.norm();
            if len > 0.0 && e.cross(c.sub(b)) / len < -tol {
                return Err(Error::InvalidPolygon(format!(
                    "not convex at vertex {}",
                    (i + 1) % n
                )));
            }
        }
        Ok(Self { vertices })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn area(&self) -> f64 {
        polygon_area(self)
    }

    pub fn centroid(&self) -> Point {
        let n = self.vertices.len() as f64;
        let s = self
            .vertices
            .iter()
            .fold(Point::default(), |acc, p| acc.add(*p));
        s.scale(1.0 / n)
    }
}

fn signed_area(v: &[Point]) -> f64 {
    let n = v.len();
    let twice: f64 = (0..n).map(|i| v[i].cross(v[(i + 1) % n])).sum();
    0.5 * twice
}

fn extent(v: &[Point]) -> f64 {
    let (mut lo_x, mut hi_x, mut lo_y, mut hi_y) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in v {
        lo_x = lo_x.min(p.x);
        hi_x = hi_x.max(p.x);
        lo_y = lo_y.min(p.y);
        hi_y = hi_y.max(p.y);
    }
    (hi_x - lo_x).max(hi_y - lo_y)
}

/// Shoelace area, never negative.
pub fn polygon_area(p: &ConvexPolygon) -> f64 {
    signed_area(&p.vertices).max(0.0)
}

/// Intersection of two convex polygons by Sutherland-Hodgman clipping.
///
/// Returns `None` when the polygons are disjoint or only touch along an
/// edge or at a vertex.
pub fn convex_intersection(a: &ConvexPolygon, b: &ConvexPolygon) -> Option<ConvexPolygon> {
    let scale = extent(&a.vertices).max(extent(&b.vertices));
    let tol = REL_TOLERANCE * scale;

    let mut output = a.vertices.clone();
    let clip = &b.vertices;
    for i in 0..clip.len() {
        if output.is_empty() {
            return None;
        }
        let c0 = clip[i];
        let c1 = clip[(i + 1) % clip.len()];
        let edge = c1.sub(c0);
        let len = edge.norm();
        if len <= tol {
            continue;
        }
        // signed distance; positive is the inner side of a counterclockwise edge
        let side = |p: Point| edge.cross(p.sub(c0)) / len;

        let input = std::mem::take(&mut output);
        let mut prev = input[input.len() - 1];
        let mut prev_side = side(prev);
        for &cur in &input {
            let cur_side = side(cur);
            let cur_in = cur_side >= -tol;
            let prev_in = prev_side >= -tol;
            if cur_in != prev_in {
                let t = prev_side / (prev_side - cur_side);
                output.push(prev.add(cur.sub(prev).scale(t)));
            }
            if cur_in {
                output.push(cur);
            }
            prev = cur;
            prev_side = cur_side;
        }
    }

    output.dedup_by(|p, q| p.sub(*q).norm() <= tol);
    while output.len() > 1 && output[0].sub(output[output.len() - 1]).norm() <= tol {
        output.pop();
    }
    if output.len() < 3 {
        return None;
    }
    let area = signed_area(&output);
    if area <= tol * scale {
        return None;
    }
    Some(ConvexPolygon { vertices: output })
}

fn cmp_boxes(a: &RotatedBox, b: &RotatedBox) -> Ordering {
    a.to_array()
        .iter()
        .zip(b.to_array().iter())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Area of the intersection of two rotated boxes.
pub fn intersection_area(a: &RotatedBox, b: &RotatedBox) -> f64 {
    // fixed operand order makes the result exactly symmetric
    let (a, b) = match cmp_boxes(a, b) {
        Ordering::Greater => (b, a),
        _ => (a, b),
    };
    let reach = 0.5 * (a.w.hypot(a.h) + b.w.hypot(b.h));
    if (a.cx - b.cx).hypot(a.cy - b.cy) >= reach {
        return 0.0;
    }
    convex_intersection(&a.to_polygon(), &b.to_polygon())
        .map(|p| p.area())
        .unwrap_or(0.0)
}

/// Intersection over union of two rotated boxes, in `[0, 1]`.
pub fn rotated_iou(a: &RotatedBox, b: &RotatedBox) -> f64 {
    let inter = intersection_area(a, b);
    if inter <= 0.0 {
        return 0.0;
    }
    let (lo, hi) = if cmp_boxes(a, b) == Ordering::Greater {
        (b, a)
    } else {
        (a, b)
    };
    let union = lo.area() + hi.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Counterclockwise convex hull with collinear points removed.
fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &Point>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 {
                let a = hull[hull.len() - 2];
                let b = hull[hull.len() - 1];
                if b.sub(a).cross(p.sub(b)) <= 0.0 {
                    hull.pop();
                } else {
                    break;
                }
            }
            hull.push(p);
        }
        hull.pop();
    }
    hull
}

/// Minimum-area enclosing rectangle of a point set, found with rotating
/// calipers over the convex hull. The result is returned in canonical form
/// (`theta` in `[-pi/4, pi/4)`).
pub fn min_area_rect(points: &[Point]) -> Result<RotatedBox> {
    if points.iter().any(|p| !(p.x.is_finite() && p.y.is_finite())) {
        return Err(Error::Degenerate("non-finite coordinate".into()));
    }
    let hull = convex_hull(points);
    let n = hull.len();
    let scale = extent(points);
    if n < 3 || signed_area(&hull) <= 1e-12 * scale * scale {
        return Err(Error::Degenerate("points are collinear".into()));
    }

    let next = |i: usize| (i + 1) % n;
    let mut best: Option<(f64, RotatedBox)> = None;
    let (mut right, mut top, mut left) = (0usize, 0usize, 0usize);

    for i in 0..n {
        let origin = hull[i];
        let edge = hull[next(i)].sub(origin);
        let u = edge.scale(1.0 / edge.norm());
        let v = Point::new(-u.y, u.x);
        let along = |p: Point| p.sub(origin).dot(u);
        let across = |p: Point| p.sub(origin).dot(v);

        if i == 0 {
            right = (0..n)
                .max_by(|&a, &b| along(hull[a]).total_cmp(&along(hull[b])))
                .unwrap_or(0);
            top = (0..n)
                .max_by(|&a, &b| across(hull[a]).total_cmp(&across(hull[b])))
                .unwrap_or(0);
            left = (0..n)
                .min_by(|&a, &b| along(hull[a]).total_cmp(&along(hull[b])))
                .unwrap_or(0);
        } else {
            for _ in 0..n {
                if along(hull[next(right)]) >= along(hull[right]) {
                    right = next(right);
                } else {
                    break;
                }
            }
            for _ in 0..n {
                if across(hull[next(top)]) >= across(hull[top]) {
                    top = next(top);
                } else {
                    break;
                }
            }
            for _ in 0..n {
                if along(hull[next(left)]) <= along(hull[left]) {
                    left = next(left);
                } else {
                    break;
                }
            }
        }

        let (u_min, u_max) = (along(hull[left]), along(hull[right]));
        let v_max = across(hull[top]);
        let width = u_max - u_min;
        let height = v_max;
        let area = width * height;
        if best.as_ref().is_none_or(|(a, _)| area < *a) {
            let center = origin
                .add(u.scale(0.5 * (u_min + u_max)))
                .add(v.scale(0.5 * v_max));
            let rect = RotatedBox::new(center.x, center.y, width, height, u.y.atan2(u.x))?;
            best = Some((area, rect));
        }
    }

    best.map(|(_, b)| b.canonical())
        .ok_or_else(|| Error::Degenerate("empty hull".into()))
}

/// Converts an annotated quadrilateral into its minimum-area rotated box.
pub fn poly_to_rbox(quad: &[Point; 4]) -> Result<RotatedBox> {
    min_area_rect(quad)
}
