//! Rotated rectangles and the mask geometry behind product boxes.
//!
//! Masks use the pixel-center convention: pixel at row `i`, column `j`
//! is the point `(j + 0.5, i + 0.5)`. Image axes are x right, y down.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, PI};

use crate::error::{Error, Result};
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }
    pub fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
    pub fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
    pub fn scale(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }
    pub fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }
    pub fn cross(self, o: Point) -> f64 {
        self.x * o.y - self.y * o.x
    }
    pub fn norm(self) -> f64 {
        math::hypot(self.x, self.y)
    }
    pub fn dist(self, o: Point) -> f64 {
        self.sub(o).norm()
    }
}

/// Orientation of `c` relative to the directed line `a -> b`.
fn orient(a: Point, b: Point, c: Point) -> f64 {
    b.sub(a).cross(c.sub(a))
}

/// Oriented rectangle. `width` runs along `(cos angle, sin angle)`,
/// `height` along the perpendicular `(−sin angle, cos angle)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotatedRect {
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
    pub angle: f64,
}

impl RotatedRect {
    pub fn new(cx: f64, cy: f64, width: f64, height: f64, angle: f64) -> Result<Self> {
        let finite = [cx, cy, width, height, angle].iter().all(|v| v.is_finite());
        if !finite || width <= 0.0 || height <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "rotated rect needs finite fields and positive extent, got {width}x{height}"
            )));
        }
        Ok(RotatedRect {
            cx,
            cy,
            width,
            height,
            angle,
        })
    }

    pub fn center(&self) -> Point {
        Point::new(self.cx, self.cy)
    }

    /// Unit vectors along the width and height axes.
    pub fn axes(&self) -> (Point, Point) {
        let (s, c) = (math::sin(self.angle), math::cos(self.angle));
        (Point::new(c, s), Point::new(-s, c))
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    /// Corners in counterclockwise order (positive signed area).
    pub fn corners(&self) -> [Point; 4] {
        let (u, v) = self.axes();
        let c = self.center();
        let hu = u.scale(self.width / 2.0);
        let hv = v.scale(self.height / 2.0);
        [
            c.sub(hu).sub(hv),
            c.add(hu).sub(hv),
            c.add(hu).add(hv),
            c.sub(hu).add(hv),
        ]
    }

    pub fn contains(&self, p: Point, slack: f64) -> bool {
        let (u, v) = self.axes();
        let d = p.sub(self.center());
        math::abs(d.dot(u)) <= self.width / 2.0 + slack
            && math::abs(d.dot(v)) <= self.height / 2.0 + slack
    }

    /// Same rectangle with `width >= height` and angle in `[−π/2, π/2)`.
    pub fn canonical(&self) -> RotatedRect {
        let mut r = *self;
        if r.width < r.height {
            core::mem::swap(&mut r.width, &mut r.height);
            r.angle += FRAC_PI_2;
        }
        r.angle = wrap_half_turn(r.angle);
        r
    }

    /// Angle wrapped into `[−π, π)`, used for oriented box tracks.
    pub fn with_wrapped_angle(mut self) -> RotatedRect {
        self.angle = math::wrap_pi(self.angle);
        self
    }

    /// Extent along the rect axis closest to the image vertical divided by
    /// the other extent.
    pub fn upright_aspect(&self) -> f64 {
        let (u, _) = self.axes();
        if math::abs(u.y) > math::abs(u.x) {
            self.width / self.height
        } else {
            self.height / self.width
        }
    }
}

fn wrap_half_turn(a: f64) -> f64 {
    let r = a - PI * math::floor((a + FRAC_PI_2) / PI);
    if r >= FRAC_PI_2 {
        r - PI
    } else {
        r
    }
}

/// Binary mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    w: usize,
    h: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(w: usize, h: usize, bits: Vec<bool>) -> Result<Self> {
        if w == 0 || h == 0 || bits.len() != w * h {
            return Err(Error::InvalidArgument(format!(
                "mask {w}x{h} with {} bits",
                bits.len()
            )));
        }
        Ok(Mask { w, h, bits })
    }

    pub fn from_fn(w: usize, h: usize, f: impl Fn(usize, usize) -> bool) -> Result<Self> {
        let mut bits = Vec::with_capacity(w * h);
        for i in 0..h {
            for j in 0..w {
                bits.push(f(i, j));
            }
        }
        Mask::new(w, h, bits)
    }

    pub fn width(&self) -> usize {
        self.w
    }
    pub fn height(&self) -> usize {
        self.h
    }
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.w + col]
    }
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn set_pixel_centers(&self) -> Vec<Point> {
        let mut out = Vec::new();
        for i in 0..self.h {
            for j in 0..self.w {
                if self.get(i, j) {
                    out.push(Point::new(j as f64 + 0.5, i as f64 + 0.5));
                }
            }
        }
        out
    }

    /// Keeps only the largest 4-connected component (first in scan order on ties).
    pub fn largest_component(&self) -> Mask {
        let mut label = vec![usize::MAX; self.bits.len()];
        let mut best: Option<(usize, Vec<usize>)> = None;
        let mut queue = VecDeque::new();
        for start in 0..self.bits.len() {
            if !self.bits[start] || label[start] != usize::MAX {
                continue;
            }
            let mut members = Vec::new();
            label[start] = start;
            queue.push_back(start);
            while let Some(p) = queue.pop_front() {
                members.push(p);
                let (i, j) = (p / self.w, p % self.w);
                let mut visit = |q: usize| {
                    if self.bits[q] && label[q] == usize::MAX {
                        label[q] = start;
                        queue.push_back(q);
                    }
                };
                if i > 0 {
                    visit(p - self.w);
                }
                if i + 1 < self.h {
                    visit(p + self.w);
                }
                if j > 0 {
                    visit(p - 1);
                }
                if j + 1 < self.w {
                    visit(p + 1);
                }
            }
            if best.as_ref().is_none_or(|(n, _)| members.len() > *n) {
                best = Some((members.len(), members));
            }
        }
        let mut bits = vec![false; self.bits.len()];
        if let Some((_, members)) = best {
            for p in members {
                bits[p] = true;
            }
        }
        Mask {
            w: self.w,
            h: self.h,
            bits,
        }
    }
}

/// Counterclockwise convex hull (Andrew's monotone chain) with collinear
/// points dropped. All-collinear input yields its two extreme points; a
/// single distinct point yields itself.
pub fn convex_hull(points: &[Point]) -> Result<Vec<Point>> {
    if points.is_empty() {
        return Err(Error::EmptyInput("convex_hull"));
    }
    if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(Error::NonFinite("convex_hull"));
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return Ok(pts);
    }
    let mut lower: Vec<Point> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && orient(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && orient(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    Ok(lower)
}

/// Minimum-area rectangle enclosing `points`, searched over hull edge
/// directions. Returned in canonical form.
pub fn min_area_rect(points: &[Point]) -> Result<RotatedRect> {
    let hull = convex_hull(points).map_err(|_| Error::EmptyOrDegenerate)?;
    if hull.len() < 3 {
        return Err(Error::EmptyOrDegenerate);
    }
    let mut best: Option<(f64, RotatedRect)> = None;
    for i in 0..hull.len() {
        let edge = hull[(i + 1) % hull.len()].sub(hull[i]);
        let len = edge.norm();
        if len == 0.0 {
            continue;
        }
        let u = edge.scale(1.0 / len);
        let v = Point::new(-u.y, u.x);
        let (mut umin, mut umax, mut vmin, mut vmax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for p in &hull {
            let (a, b) = (p.dot(u), p.dot(v));
            umin = umin.min(a);
            umax = umax.max(a);
            vmin = vmin.min(b);
            vmax = vmax.max(b);
        }
        let area = (umax - umin) * (vmax - vmin);
        if best.as_ref().is_none_or(|(a, _)| area < *a) {
            let cu = (umin + umax) / 2.0;
            let cv = (vmin + vmax) / 2.0;
            let c = u.scale(cu).add(v.scale(cv));
            let rect = RotatedRect {
                cx: c.x,
                cy: c.y,
                width: umax - umin,
                height: vmax - vmin,
                angle: math::atan2(u.y, u.x),
            };
            best = Some((area, rect));
        }
    }
    match best {
        Some((area, rect)) if area > 0.0 => Ok(rect.canonical()),
        _ => Err(Error::EmptyOrDegenerate),
    }
}

/// Minimum rotated rectangle of a mask's set-pixel centers.
pub fn min_rotated_rect(mask: &Mask) -> Result<RotatedRect> {
    let pts = mask.set_pixel_centers();
    if pts.is_empty() {
        return Err(Error::EmptyOrDegenerate);
    }
    min_area_rect(&pts)
}

/// Which extent of a box is free to change when matching a product aspect.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expansion {
    /// Width fixed; the box grows along its height axis away from the
    /// bottom edge, which stays put.
    Up,
    /// Height fixed; width changes symmetrically about the center.
    LeftRight,
}

/// Resizes `rect` so `height / width == aspect_hw`, holding one extent fixed.
pub fn resize_with_fixed_dim(rect: &RotatedRect, dir: Expansion, aspect_hw: f64) -> Result<RotatedRect> {
    if !(aspect_hw > 0.0) || !aspect_hw.is_finite() {
        return Err(Error::InvalidArgument(format!("aspect must be positive, got {aspect_hw}")));
    }
    let mut out = *rect;
    match dir {
        Expansion::Up => {
            let (_, v) = rect.axes();
            // "bottom" is the +v side: image y grows downward at angle 0
            let bottom = rect.center().add(v.scale(rect.height / 2.0));
            out.height = rect.width * aspect_hw;
            let c = bottom.sub(v.scale(out.height / 2.0));
            out.cx = c.x;
            out.cy = c.y;
        }
        Expansion::LeftRight => {
            out.width = rect.height / aspect_hw;
        }
    }
    Ok(out)
}

/// Sutherland–Hodgman clip of a convex polygon by a counterclockwise convex clipper.
pub fn clip_convex(subject: &[Point], clipper: &[Point]) -> Vec<Point> {
    let mut output = subject.to_vec();
    for i in 0..clipper.len() {
        if output.is_empty() {
            break;
        }
        let a = clipper[i];
        let b = clipper[(i + 1) % clipper.len()];
        let input = core::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let cur_in = orient(a, b, cur) >= 0.0;
            let prev_in = orient(a, b, prev) >= 0.0;
            if cur_in {
                if !prev_in {
                    output.push(intersect(prev, cur, a, b));
                }
                output.push(cur);
            } else if prev_in {
                output.push(intersect(prev, cur, a, b));
            }
        }
    }
    output
}

fn intersect(p: Point, q: Point, a: Point, b: Point) -> Point {
    let d1 = orient(a, b, p);
    let d2 = orient(a, b, q);
    let t = d1 / (d1 - d2);
    p.add(q.sub(p).scale(t))
}

/// Shoelace area (absolute value).
pub fn polygon_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let twice: f64 = (0..n).map(|i| poly[i].cross(poly[(i + 1) % n])).sum();
    math::abs(twice) / 2.0
}

/// Intersection over union of two rotated rectangles.
pub fn rect_iou(a: &RotatedRect, b: &RotatedRect) -> f64 {
    let inter = polygon_area(&clip_convex(&a.corners(), &b.corners()));
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn area_by_sweep(points: &[Point]) -> f64 {
        // exhaustive 0.1° sweep over [0°, 90°)
        let mut best = f64::MAX;
        for k in 0..900 {
            let a = (k as f64) * 0.1 * PI / 180.0;
            let u = Point::new(math::cos(a), math::sin(a));
            let v = Point::new(-u.y, u.x);
            let (mut u0, mut u1, mut v0, mut v1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
            for p in points {
                u0 = u0.min(p.dot(u));
                u1 = u1.max(p.dot(u));
                v0 = v0.min(p.dot(v));
                v1 = v1.max(p.dot(v));
            }
            best = best.min((u1 - u0) * (v1 - v0));
        }
        best
    }

    #[test]
    fn hull_of_triangle() {
        let pts = [Point::new(0.0, 0.0), Point::new(2.0, 0.0), Point::new(1.0, 3.0)];
        let h = convex_hull(&pts).unwrap();
        assert_eq!(h.len(), 3);
        assert!(polygon_area(&h) == 3.0);
        for p in &pts {
            assert!(h.contains(p));
        }
    }

    #[test]
    fn hull_drops_interior_and_collinear() {
        let pts = [
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(0.0, 1.0),
            Point::new(0.5, 0.5),
            Point::new(0.5, 0.0),
        ];
        let h = convex_hull(&pts).unwrap();
        assert_eq!(h.len(), 4);
        assert!(!h.contains(&Point::new(0.5, 0.5)));
        assert!(!h.contains(&Point::new(0.5, 0.0)));
    }

    #[test]
    fn hull_collinear_gives_extremes() {
        let pts: Vec<Point> = (0..5).map(|i| Point::new(i as f64, 2.0 * i as f64)).collect();
        let h = convex_hull(&pts).unwrap();
        assert_eq!(h, vec![Point::new(0.0, 0.0), Point::new(4.0, 8.0)]);
        assert!(convex_hull(&[]).is_err());
    }

    #[test]
    fn hull_contains_random_points() {
        let mut r = rng::seeded(3);
        let pts: Vec<Point> = (0..500)
            .map(|_| Point::new(rng::uniform(&mut r, -10.0, 10.0), rng::uniform(&mut r, -5.0, 5.0)))
            .collect();
        let h = convex_hull(&pts).unwrap();
        for p in &pts {
            for i in 0..h.len() {
                assert!(orient(h[i], h[(i + 1) % h.len()], *p) >= -1e-9);
            }
        }
    }

    #[test]
    fn axis_aligned_block() {
        let m = Mask::from_fn(10, 8, |i, j| (2..5).contains(&i) && (1..6).contains(&j)).unwrap();
        let r = min_rotated_rect(&m).unwrap();
        assert_eq!((r.width, r.height, r.angle), (4.0, 2.0, 0.0));
        assert_eq!((r.cx, r.cy), (3.5, 3.5));
    }

    #[test]
    fn degenerate_masks_error() {
        let single = Mask::from_fn(4, 4, |i, j| i == 1 && j == 2).unwrap();
        assert_eq!(min_rotated_rect(&single), Err(Error::EmptyOrDegenerate));
        let line = Mask::from_fn(6, 6, |i, _| i == 3).unwrap();
        assert_eq!(min_rotated_rect(&line), Err(Error::EmptyOrDegenerate));
        let empty = Mask::from_fn(4, 4, |_, _| false).unwrap();
        assert_eq!(min_rotated_rect(&empty), Err(Error::EmptyOrDegenerate));
    }

    #[test]
    fn rotated_square_matches_sweep() {
        // diamond: |x−20| + |y−20| <= 10
        let m = Mask::from_fn(40, 40, |i, j| {
            (j as f64 + 0.5 - 20.0).abs() + (i as f64 + 0.5 - 20.0).abs() <= 10.0
        })
        .unwrap();
        let r = min_rotated_rect(&m).unwrap();
        let oracle = area_by_sweep(&m.set_pixel_centers());
        assert!((r.area() - oracle).abs() / oracle < 0.01);
        assert!(r.area() <= oracle + 1e-9);
        for p in m.set_pixel_centers() {
            assert!(r.contains(p, 1e-9));
        }
    }

    #[test]
    fn canonical_form() {
        let r = RotatedRect::new(0.0, 0.0, 2.0, 5.0, 0.3).unwrap().canonical();
        assert_eq!((r.width, r.height), (5.0, 2.0));
        assert!((r.angle - (0.3 + FRAC_PI_2 - PI)).abs() < 1e-12);
        assert!(RotatedRect::new(0.0, 0.0, 0.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn resize_up_keeps_bottom_edge() {
        let r = RotatedRect::new(50.0, 80.0, 100.0, 40.0, 0.0).unwrap();
        let out = resize_with_fixed_dim(&r, Expansion::Up, 2.0).unwrap();
        assert_eq!((out.width, out.height), (100.0, 200.0));
        assert_eq!(out.cy + out.height / 2.0, r.cy + r.height / 2.0);
        assert_eq!(out.cx, r.cx);
    }

    #[test]
    fn resize_left_right_keeps_center() {
        let r = RotatedRect::new(5.0, 6.0, 30.0, 50.0, 0.7).unwrap();
        let out = resize_with_fixed_dim(&r, Expansion::LeftRight, 0.5).unwrap();
        assert_eq!((out.width, out.height, out.cx, out.cy, out.angle), (100.0, 50.0, 5.0, 6.0, 0.7));
        assert!(resize_with_fixed_dim(&r, Expansion::Up, 0.0).is_err());
        assert!(resize_with_fixed_dim(&r, Expansion::Up, -1.0).is_err());
    }

    #[test]
    fn resize_with_own_aspect_is_identity() {
        let r = RotatedRect::new(12.0, -3.0, 7.0, 11.0, -1.1).unwrap();
        for dir in [Expansion::Up, Expansion::LeftRight] {
            let out = resize_with_fixed_dim(&r, dir, r.height / r.width).unwrap();
            for (a, b) in [(out.cx, r.cx), (out.cy, r.cy), (out.width, r.width), (out.height, r.height), (out.angle, r.angle)] {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn iou_basics() {
        let a = RotatedRect::new(3.0, 4.0, 2.0, 1.0, 0.4).unwrap();
        assert!((rect_iou(&a, &a) - 1.0).abs() < 1e-12);
        let far = RotatedRect::new(30.0, 4.0, 2.0, 1.0, 0.4).unwrap();
        assert_eq!(rect_iou(&a, &far), 0.0);
    }

    #[test]
    fn iou_offset_squares_vs_raster() {
        let a = RotatedRect::new(0.5, 0.5, 1.0, 1.0, 0.0).unwrap();
        let b = RotatedRect::new(1.0, 0.5, 1.0, 1.0, 0.0).unwrap();
        // 512x512 raster over [0, 1.5] x [0, 1.5]
        let n = 512;
        let step = 1.5 / n as f64;
        let (mut inter, mut uni) = (0usize, 0usize);
        for i in 0..n {
            for j in 0..n {
                let p = Point::new((j as f64 + 0.5) * step, (i as f64 + 0.5) * step);
                let (ia, ib) = (a.contains(p, 0.0), b.contains(p, 0.0));
                inter += (ia && ib) as usize;
                uni += (ia || ib) as usize;
            }
        }
        let oracle = inter as f64 / uni as f64;
        assert!((rect_iou(&a, &b) - oracle).abs() < 0.01);
        assert!((rect_iou(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn largest_component_picks_biggest_blob() {
        let m = Mask::from_fn(10, 10, |i, j| (i < 2 && j < 2) || (i >= 5 && j >= 5)).unwrap();
        let l = m.largest_component();
        assert_eq!(l.count(), 25);
        assert!(!l.get(0, 0));
    }
}
