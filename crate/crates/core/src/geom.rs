//! Planar geometry: vectors, angles and polyline queries.

use alloc::vec::Vec;
use core::f64::consts::PI;
use core::ops::{Add, AddAssign, Mul, Neg, Sub};
#[allow(unused_imports)]
use num_traits::Float;


#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_angle(theta: f64) -> Self {
        Self::new(theta.cos(), theta.sin())
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3d cross product.
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn dist(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    /// Unit vector in the same direction, or `None` for (near) zero vectors.
    pub fn normalized(self) -> Option<Vec2> {
        let n = self.norm();
        if n > 1e-12 {
            Some(Vec2::new(self.x / n, self.y / n))
        } else {
            None
        }
    }

    /// Counter-clockwise rotation by `theta`.
    pub fn rotate(self, theta: f64) -> Vec2 {
        let (s, c) = theta.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    /// Left-hand normal.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn lerp(self, o: Vec2, t: f64) -> Vec2 {
        self + (o - self) * t
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wraps an angle into (−π, π].
pub fn normalize_angle(theta: f64) -> f64 {
    let mut a = theta % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Absolute angular difference in [0, π].
pub fn angle_diff(a: f64, b: f64) -> f64 {
    normalize_angle(a - b).abs()
}

/// Closest point of a polyline to a query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolylineFoot {
    pub point: Vec2,
    /// Index of the segment holding the foot point.
    pub segment: usize,
    /// Arc length from the polyline start to the foot point.
    pub arc: f64,
    pub distance: f64,
    /// Signed offset, positive when the query is left of the polyline.
    pub lateral: f64,
}

/// Cumulative arc length at every vertex.
pub fn cumulative_lengths(pts: &[Vec2]) -> Vec<f64> {
    let mut out = Vec::with_capacity(pts.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in pts.windows(2) {
        acc += w[0].dist(w[1]);
        out.push(acc);
    }
    out
}

pub fn polyline_length(pts: &[Vec2]) -> f64 {
    pts.windows(2).map(|w| w[0].dist(w[1])).sum()
}

/// Closest point on segment `a`–`b` as (point, parameter in [0,1]).
pub fn closest_on_segment(p: Vec2, a: Vec2, b: Vec2) -> (Vec2, f64) {
    let d = b - a;
    let len2 = d.norm_sq();
    if len2 == 0.0 {
        return (a, 0.0);
    }
    let t = ((p - a).dot(d) / len2).clamp(0.0, 1.0);
    (a + d * t, t)
}

/// Orthogonal foot point of `p` on the polyline. Ties go to the earlier segment.
pub fn project_on_polyline(pts: &[Vec2], p: Vec2) -> Option<PolylineFoot> {
    if pts.len() < 2 {
        return None;
    }
    let mut best: Option<PolylineFoot> = None;
    let mut arc0 = 0.0;
    for (i, w) in pts.windows(2).enumerate() {
        let seg_len = w[0].dist(w[1]);
        let (q, t) = closest_on_segment(p, w[0], w[1]);
        let d = p.dist(q);
        if best.is_none_or(|b| d < b.distance) {
            let side = (w[1] - w[0]).cross(p - w[0]);
            let lateral = if side >= 0.0 { d } else { -d };
            best = Some(PolylineFoot {
                point: q,
                segment: i,
                arc: arc0 + t * seg_len,
                distance: d,
                lateral,
            });
        }
        arc0 += seg_len;
    }
    best
}

pub fn distance_to_polyline(pts: &[Vec2], p: Vec2) -> f64 {
    match pts.len() {
        0 => f64::INFINITY,
        1 => p.dist(pts[0]),
        _ => pts
            .windows(2)
            .map(|w| p.dist(closest_on_segment(p, w[0], w[1]).0))
            .fold(f64::INFINITY, f64::min),
    }
}

/// Point at arc length `s` (clamped to the polyline extent) and the index of
/// the segment it lies on.
pub fn point_at_arc(pts: &[Vec2], cum: &[f64], s: f64) -> (Vec2, usize) {
    let n = pts.len();
    debug_assert!(n >= 2 && cum.len() == n);
    let total = cum[n - 1];
    let s = s.clamp(0.0, total);
    // first segment whose end is at or beyond s
    let mut seg = match cum[1..].iter().position(|&c| c >= s) {
        Some(i) => i,
        None => n - 2,
    };
    // skip zero-length segments
    while seg + 2 < n && cum[seg + 1] - cum[seg] == 0.0 {
        seg += 1;
    }
    let len = cum[seg + 1] - cum[seg];
    let t = if len > 0.0 { (s - cum[seg]) / len } else { 0.0 };
    (pts[seg].lerp(pts[seg + 1], t), seg)
}

/// Cuts the polyline to the arc range `[s0, s1]`.
pub fn sub_polyline(pts: &[Vec2], cum: &[f64], s0: f64, s1: f64) -> Vec<Vec2> {
    let (start, seg0) = point_at_arc(pts, cum, s0);
    let (end, seg1) = point_at_arc(pts, cum, s1);
    let mut out = Vec::with_capacity(seg1.saturating_sub(seg0) + 2);
    out.push(start);
    for (i, &c) in cum.iter().enumerate().take(seg1 + 1).skip(seg0 + 1) {
        if c > s0 && c < s1 {
            out.push(pts[i]);
        }
    }
    if out.last().is_none_or(|&l| l != end) {
        out.push(end);
    }
    out
}

/// Intersection of segments p1–p2 and q1–q2 (closed). Returns the parameters
/// along each segment. Collinear overlaps are reported at their first shared
/// point along p.
pub fn segment_intersection(p1: Vec2, p2: Vec2, q1: Vec2, q2: Vec2) -> Option<(f64, f64)> {
    let r = p2 - p1;
    let s = q2 - q1;
    let denom = r.cross(s);
    let qp = q1 - p1;
    if denom.abs() < 1e-12 {
        if qp.cross(r).abs() > 1e-12 {
            return None;
        }
        let rr = r.norm_sq();
        if rr == 0.0 {
            return None;
        }
        let t0 = qp.dot(r) / rr;
        let t1 = t0 + s.dot(r) / rr;
        let (lo, hi) = if t0 <= t1 { (t0, t1) } else { (t1, t0) };
        if hi < 0.0 || lo > 1.0 {
            return None;
        }
        let t = lo.max(0.0);
        let p = p1 + r * t;
        let ss = s.norm_sq();
        let u = if ss > 0.0 { (p - q1).dot(s) / ss } else { 0.0 };
        return Some((t, u.clamp(0.0, 1.0)));
    }
    let t = qp.cross(s) / denom;
    let u = qp.cross(r) / denom;
    if (0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u) {
        Some((t, u))
    } else {
        None
    }
}

/// Even-odd point-in-polygon test. Points on the boundary count as inside.
pub fn point_in_polygon(poly: &[Vec2], p: Vec2) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if p.dist(closest_on_segment(p, a, b).0) < 1e-12 {
            return true;
        }
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if p.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Heading (radians) of each polyline vertex: the direction of the segment
/// leaving it, or arriving at it for the last vertex.
pub fn vertex_headings(pts: &[Vec2]) -> Vec<f64> {
    let n = pts.len();
    let mut out = Vec::with_capacity(n);
    let mut last = 0.0;
    for i in 0..n {
        let d = if i + 1 < n {
            pts[i + 1] - pts[i]
        } else if n >= 2 {
            pts[n - 1] - pts[n - 2]
        } else {
            Vec2::ZERO
        };
        if d.norm_sq() > 0.0 {
            last = d.angle();
        }
        out.push(last);
    }
    out
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec2,
    pub max: Vec2,
}

impl Aabb {
    pub fn of_points(pts: &[Vec2]) -> Option<Aabb> {
        let first = *pts.first()?;
        let mut bb = Aabb {
            min: first,
            max: first,
        };
        for p in &pts[1..] {
            bb.min.x = bb.min.x.min(p.x);
            bb.min.y = bb.min.y.min(p.y);
            bb.max.x = bb.max.x.max(p.x);
            bb.max.y = bb.max.y.max(p.y);
        }
        Some(bb)
    }

    pub fn inflate(self, r: f64) -> Aabb {
        Aabb {
            min: Vec2::new(self.min.x - r, self.min.y - r),
            max: Vec2::new(self.max.x + r, self.max.y + r),
        }
    }

    pub fn intersects(&self, o: &Aabb) -> bool {
        self.min.x <= o.max.x && o.min.x <= self.max.x && self.min.y <= o.max.y && o.min.y <= self.max.y
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn angle_wrapping() {
        assert_eq!(normalize_angle(PI), PI);
        assert!((normalize_angle(-PI) - PI).abs() < 1e-15);
        assert!((normalize_angle(3.0 * PI) - PI).abs() < 1e-12);
        assert!((normalize_angle(0.5 + 4.0 * PI) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn projection_on_polyline() {
        let pts = [Vec2::new(0.0, 0.0), Vec2::new(10.0, 0.0), Vec2::new(10.0, 10.0)];
        let f = project_on_polyline(&pts, Vec2::new(4.0, 2.0)).unwrap();
        assert_eq!(f.segment, 0);
        assert!((f.arc - 4.0).abs() < 1e-12);
        assert!((f.lateral - 2.0).abs() < 1e-12);
        let f = project_on_polyline(&pts, Vec2::new(12.0, 5.0)).unwrap();
        assert_eq!(f.segment, 1);
        assert!((f.arc - 15.0).abs() < 1e-12);
        assert!((f.lateral + 2.0).abs() < 1e-12);
    }

    #[test]
    fn sub_polyline_keeps_inner_vertices() {
        let pts = [Vec2::new(0.0, 0.0), Vec2::new(10.0, 0.0), Vec2::new(10.0, 10.0)];
        let cum = cumulative_lengths(&pts);
        let sub = sub_polyline(&pts, &cum, 5.0, 12.0);
        assert_eq!(sub, [Vec2::new(5.0, 0.0), Vec2::new(10.0, 0.0), Vec2::new(10.0, 2.0)]);
        assert!((polyline_length(&sub) - 7.0).abs() < 1e-12);
    }

    #[test]
    fn crossing_segments() {
        let hit = segment_intersection(
            Vec2::new(-1.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(0.0, -1.0),
            Vec2::new(0.0, 3.0),
        )
        .unwrap();
        assert!((hit.0 - 0.5).abs() < 1e-12 && (hit.1 - 0.25).abs() < 1e-12);
        assert!(segment_intersection(
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(0.0, 1.0),
            Vec2::new(1.0, 1.0)
        )
        .is_none());
    }

    #[test]
    fn polygon_containment() {
        let sq = [
            Vec2::new(0.0, 0.0),
            Vec2::new(2.0, 0.0),
            Vec2::new(2.0, 2.0),
            Vec2::new(0.0, 2.0),
        ];
        assert!(point_in_polygon(&sq, Vec2::new(1.0, 1.0)));
        assert!(point_in_polygon(&sq, Vec2::new(2.0, 1.0)));
        assert!(!point_in_polygon(&sq, Vec2::new(3.0, 1.0)));
    }
}
