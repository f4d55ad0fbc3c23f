//! Planar geometry: oriented boxes with separating-axis overlap tests,
//! simple-polygon containment, and polyline projection.
//!
//! All quantities are SI (meters, radians) in double precision. Every
//! function here is pure; callers may invoke them from any number of
//! threads.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tape::Real;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("degenerate polyline: fewer than 2 vertices or zero total length")]
    DegeneratePolyline,
    #[error("oriented box must have positive half extents, got ({0}, {1})")]
    DegenerateBox(f64, f64),
    #[error("polygon must have at least 3 vertices")]
    DegeneratePolygon,
}

/// 2D point / vector in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }

    pub fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }

    pub fn scale(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the cross product `self x o`.
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, o: Vec2) -> f64 {
        self.sub(o).norm()
    }
}

/// Agent footprint: a rectangle with arbitrary heading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub center: Vec2,
    pub heading: f64,
    pub half_length: f64,
    pub half_width: f64,
}

impl OrientedBox {
    pub fn new(
        center: Vec2,
        heading: f64,
        half_length: f64,
        half_width: f64,
    ) -> Result<Self, GeometryError> {
        if half_length <= 0.0 || half_width <= 0.0 {
            return Err(GeometryError::DegenerateBox(half_length, half_width));
        }
        Ok(OrientedBox {
            center,
            heading,
            half_length,
            half_width,
        })
    }

    /// Unit axes: (longitudinal, lateral).
    pub fn axes(&self) -> (Vec2, Vec2) {
        let (s, c) = self.heading.sin_cos();
        (Vec2::new(c, s), Vec2::new(-s, c))
    }

    /// Corners in counter-clockwise order.
    pub fn corners(&self) -> [Vec2; 4] {
        let (u, v) = self.axes();
        let l = u.scale(self.half_length);
        let w = v.scale(self.half_width);
        [
            self.center.add(l).add(w),
            self.center.sub(l).add(w),
            self.center.sub(l).sub(w),
            self.center.add(l).sub(w),
        ]
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let (u, v) = self.axes();
        let d = p.sub(self.center);
        d.dot(u).abs() <= self.half_length && d.dot(v).abs() <= self.half_width
    }
}

/// Closed-box intersection via the separating-axis test over the four
/// candidate axes. Symmetric in its arguments.
pub fn obb_overlap(a: &OrientedBox, b: &OrientedBox) -> bool {
    sat_gap(a, b) <= 0.0
}

/// Signed separation estimate from the same four axes `obb_overlap` uses:
/// positive = the largest axis gap when the boxes are disjoint, negative =
/// minus the smallest axis overlap when they intersect. Used by tests to
/// carve out a resolution band around touching configurations.
pub fn sat_gap(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let (au, av) = a.axes();
    let (bu, bv) = b.axes();
    let d = b.center.sub(a.center);
    let mut gap = f64::NEG_INFINITY;
    for axis in [au, av, bu, bv] {
        let ra = a.half_length * axis.dot(au).abs() + a.half_width * axis.dot(av).abs();
        let rb = b.half_length * axis.dot(bu).abs() + b.half_width * axis.dot(bv).abs();
        gap = gap.max(d.dot(axis).abs() - (ra + rb));
    }
    gap
}

/// Even-odd ray-casting containment test for a simple polygon.
/// Points exactly on the boundary may land on either side.
pub fn point_in_polygon(p: Vec2, poly: &[Vec2]) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if p.x < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn orient(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    b.sub(a).cross(c.sub(a))
}

/// Closed-segment intersection (touching counts).
pub fn segments_intersect(p1: Vec2, p2: Vec2, q1: Vec2, q2: Vec2) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on = |a: Vec2, b: Vec2, c: Vec2, d: f64| {
        d == 0.0
            && c.x <= a.x.max(b.x)
            && c.x >= a.x.min(b.x)
            && c.y <= a.y.max(b.y)
            && c.y >= a.y.min(b.y)
    };
    on(q1, q2, p1, d1) || on(q1, q2, p2, d2) || on(p1, p2, q1, d3) || on(p1, p2, q2, d4)
}

/// True iff the box and the polygon have nonempty intersection.
pub fn box_intersects_polygon(bx: &OrientedBox, poly: &[Vec2]) -> bool {
    let corners = bx.corners();
    if corners.iter().any(|&c| point_in_polygon(c, poly)) {
        return true;
    }
    if poly.iter().any(|&v| bx.contains(v)) {
        return true;
    }
    let n = poly.len();
    for i in 0..4 {
        let (p1, p2) = (corners[i], corners[(i + 1) % 4]);
        for j in 0..n {
            if segments_intersect(p1, p2, poly[j], poly[(j + 1) % n]) {
                return true;
            }
        }
    }
    false
}

/// Off-road test: an agent is off-road only once its bounding box no longer
/// intersects the road polygon at all. Straddling the boundary is on-road.
pub fn offroad_check(bx: &OrientedBox, road: &[Vec2]) -> bool {
    !box_intersects_polygon(bx, road)
}

/// Signed distance from a point to the polygon boundary, positive inside.
/// Generic so lane features can differentiate through it.
pub fn signed_distance_to_polygon<R: Real>(px: R, py: R, poly: &[Vec2]) -> R {
    let n = poly.len();
    let mut best_d2 = f64::INFINITY;
    let mut best = 0usize;
    // Pick the closest edge on values, then redo that one edge generically.
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        let d2 = point_segment_dist2(Vec2::new(px.value(), py.value()), a, b);
        if d2 < best_d2 {
            best_d2 = d2;
            best = i;
        }
    }
    let (a, b) = (poly[best], poly[(best + 1) % n]);
    let d = point_segment_distance_generic(px, py, a, b);
    if point_in_polygon(Vec2::new(px.value(), py.value()), poly) {
        d
    } else {
        -d
    }
}

fn point_segment_dist2(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    let ab = b.sub(a);
    let len2 = ab.dot(ab);
    let t = if len2 > 0.0 {
        (p.sub(a).dot(ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let foot = a.add(ab.scale(t));
    p.sub(foot).dot(p.sub(foot))
}

fn point_segment_distance_generic<R: Real>(px: R, py: R, a: Vec2, b: Vec2) -> R {
    let ab = b.sub(a);
    let len2 = ab.dot(ab);
    let dx = px - px.lit(a.x);
    let dy = py - py.lit(a.y);
    if len2 == 0.0 {
        return (dx * dx + dy * dy).sqrt();
    }
    let t = (dx * px.lit(ab.x / len2) + dy * py.lit(ab.y / len2)).clamp_c(0.0, 1.0);
    let fx = dx - t * px.lit(ab.x);
    let fy = dy - t * py.lit(ab.y);
    (fx * fx + fy * fy).sqrt()
}

/// Projection of a point onto a polyline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolylineProjection {
    /// Along-track coordinate from the polyline start, in `[0, total_len]`.
    pub arclength: f64,
    /// Signed perpendicular offset, left of travel positive.
    pub lateral: f64,
    /// True iff the unclamped foot point fell beyond either end.
    pub clamped: bool,
}

/// A polyline with precomputed cumulative arclengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polyline {
    pts: Vec<Vec2>,
    cum: Vec<f64>,
}

impl Polyline {
    pub fn new(pts: Vec<Vec2>) -> Result<Self, GeometryError> {
        if pts.len() < 2 {
            return Err(GeometryError::DegeneratePolyline);
        }
        let mut cum = Vec::with_capacity(pts.len());
        cum.push(0.0);
        for w in pts.windows(2) {
            cum.push(cum.last().unwrap() + w[0].dist(w[1]));
        }
        if *cum.last().unwrap() <= 0.0 {
            return Err(GeometryError::DegeneratePolyline);
        }
        Ok(Polyline { pts, cum })
    }

    pub fn points(&self) -> &[Vec2] {
        &self.pts
    }

    pub fn total_length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    pub fn cumulative(&self) -> &[f64] {
        &self.cum
    }

    /// Point at a given arclength (clamped to the extent).
    pub fn point_at(&self, s: f64) -> Vec2 {
        let s = s.clamp(0.0, self.total_length());
        let i = match self.cum.binary_search_by(|c| c.partial_cmp(&s).unwrap()) {
            Ok(i) => i.min(self.pts.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.pts.len() - 2),
        };
        let seg_len = self.cum[i + 1] - self.cum[i];
        let t = if seg_len > 0.0 {
            (s - self.cum[i]) / seg_len
        } else {
            0.0
        };
        self.pts[i].add(self.pts[i + 1].sub(self.pts[i]).scale(t))
    }

    /// Tangent direction (unit) at a given arclength.
    pub fn direction_at(&self, s: f64) -> Vec2 {
        let s = s.clamp(0.0, self.total_length());
        let i = self.segment_index_at(s);
        let d = self.pts[i + 1].sub(self.pts[i]);
        let n = d.norm();
        if n > 0.0 {
            d.scale(1.0 / n)
        } else {
            Vec2::new(1.0, 0.0)
        }
    }

    fn segment_index_at(&self, s: f64) -> usize {
        let mut i = 0;
        while i + 2 < self.pts.len() && self.cum[i + 1] <= s {
            i += 1;
        }
        i
    }

    pub fn project(&self, p: Vec2) -> PolylineProjection {
        let (arclength, lateral, _, clamped) =
            project_point_polyline(p.x, p.y, &self.pts, &self.cum);
        PolylineProjection {
            arclength,
            lateral,
            clamped,
        }
    }
}

/// Closest-point projection onto a polyline. Ties between segments break
/// toward the smallest arclength; feet beyond either end clamp to the end
/// vertex with `clamped = true`.
pub fn project_onto_polyline(p: Vec2, line: &Polyline) -> PolylineProjection {
    line.project(p)
}

/// Generic projection core. The winning segment is selected on plain values
/// and only its projection formula is evaluated in `R`, so a recorded tape
/// sees one smooth branch.
///
/// Returns (arclength, lateral, segment index, clamped).
pub fn project_point_polyline<R: Real>(
    px: R,
    py: R,
    pts: &[Vec2],
    cum: &[f64],
) -> (R, R, usize, bool) {
    debug_assert!(pts.len() >= 2);
    let pv = Vec2::new(px.value(), py.value());
    let nseg = pts.len() - 1;
    let mut best_d2 = f64::INFINITY;
    let mut best = usize::MAX;
    for i in 0..nseg {
        // Zero-length segments (repeated vertices, e.g. a stopped agent's
        // path) carry no direction; skip them.
        if pts[i + 1].sub(pts[i]).dot(pts[i + 1].sub(pts[i])) == 0.0 {
            continue;
        }
        let d2 = point_segment_dist2(pv, pts[i], pts[i + 1]);
        if d2 < best_d2 {
            best_d2 = d2;
            best = i;
        }
    }
    assert!(best != usize::MAX, "polyline has no non-degenerate segment");
    let a = pts[best];
    let b = pts[best + 1];
    let ab = b.sub(a);
    let len = ab.norm();
    let inv_len = 1.0 / len;
    let ux = ab.x * inv_len;
    let uy = ab.y * inv_len;
    let dx = px - px.lit(a.x);
    let dy = py - py.lit(a.y);
    let along_raw = dx * px.lit(ux) + dy * py.lit(uy);
    // Clamp to the segment; at interior vertices the neighbor segment always
    // wins the distance comparison, so clamping only bites at the ends.
    let raw = along_raw.value();
    let total = cum[cum.len() - 1];
    let clamped_lo = raw < 0.0 && cum[best] == 0.0;
    let clamped_hi = raw > len && cum[best] + len >= total;
    let along = along_raw.clamp_c(0.0, len);
    let arclength = along + px.lit(cum[best]);
    // Signed perpendicular component relative to the segment direction.
    let lateral = dy * px.lit(ux) - dx * px.lit(uy);
    (arclength, lateral, best, clamped_lo || clamped_hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn unit_box(cx: f64, cy: f64, heading: f64) -> OrientedBox {
        OrientedBox::new(Vec2::new(cx, cy), heading, 0.5, 0.5).unwrap()
    }

    /// Dense sampling oracle: a grid over each box (boundary inclusive);
    /// overlap iff any sample of one box lies in the other.
    pub(crate) fn sampling_overlap(a: &OrientedBox, b: &OrientedBox, n: usize) -> bool {
        let grid_hits = |src: &OrientedBox, dst: &OrientedBox| {
            let (u, v) = src.axes();
            for i in 0..n {
                for j in 0..n {
                    let s = -1.0 + 2.0 * i as f64 / (n - 1) as f64;
                    let t = -1.0 + 2.0 * j as f64 / (n - 1) as f64;
                    let p = src
                        .center
                        .add(u.scale(s * src.half_length))
                        .add(v.scale(t * src.half_width));
                    if dst.contains(p) {
                        return true;
                    }
                }
            }
            false
        };
        grid_hits(a, b) || grid_hits(b, a)
    }

    #[test]
    fn overlap_axis_aligned_squares() {
        assert!(obb_overlap(&unit_box(0.0, 0.0, 0.0), &unit_box(0.5, 0.0, 0.0)));
        assert!(!obb_overlap(&unit_box(0.0, 0.0, 0.0), &unit_box(10.0, 0.0, 0.0)));
    }

    #[test]
    fn overlap_rotated_square_matches_sampling_oracle() {
        let a = unit_box(0.0, 0.0, 0.0);
        let b = unit_box(1.2, 0.0, std::f64::consts::FRAC_PI_4);
        let expected = sampling_overlap(&a, &b, 100);
        assert_eq!(obb_overlap(&a, &b), expected);
        // Rotated square reaches sqrt(2)/2 ~ 0.707 toward the origin box,
        // so the pair overlaps.
        assert!(expected);
    }

    #[test]
    fn overlap_is_symmetric_on_random_pairs() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..500 {
            let a = OrientedBox::new(
                Vec2::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)),
                rng.gen_range(-3.2..3.2),
                rng.gen_range(0.3..1.2),
                rng.gen_range(0.3..1.2),
            )
            .unwrap();
            let b = OrientedBox::new(
                Vec2::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)),
                rng.gen_range(-3.2..3.2),
                rng.gen_range(0.3..1.2),
                rng.gen_range(0.3..1.2),
            )
            .unwrap();
            assert_eq!(obb_overlap(&a, &b), obb_overlap(&b, &a));
        }
    }

    #[test]
    fn degenerate_box_rejected() {
        assert!(OrientedBox::new(Vec2::new(0.0, 0.0), 0.0, 0.0, 1.0).is_err());
        assert!(OrientedBox::new(Vec2::new(0.0, 0.0), 0.0, 1.0, -0.1).is_err());
    }

    fn rect(w: f64, h: f64) -> Vec<Vec2> {
        vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(w, 0.0),
            Vec2::new(w, h),
            Vec2::new(0.0, h),
        ]
    }

    #[test]
    fn offroad_cases() {
        let road = rect(100.0, 10.0);
        let inside = unit_box(50.0, 5.0, 0.3);
        let outside = unit_box(50.0, 60.0, 0.0);
        let straddling = unit_box(50.0, 10.0, 0.0);
        assert!(!offroad_check(&inside, &road));
        assert!(offroad_check(&outside, &road));
        assert!(!offroad_check(&straddling, &road));
    }

    #[test]
    fn offroad_false_when_any_corner_inside() {
        let road = rect(100.0, 10.0);
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..500 {
            let bx = OrientedBox::new(
                Vec2::new(rng.gen_range(-5.0..105.0), rng.gen_range(-5.0..15.0)),
                rng.gen_range(-3.2..3.2),
                rng.gen_range(0.5..2.5),
                rng.gen_range(0.4..1.1),
            )
            .unwrap();
            if bx.corners().iter().any(|&c| point_in_polygon(c, &road)) {
                assert!(!offroad_check(&bx, &road));
            }
        }
    }

    #[test]
    fn projection_basic_cases() {
        let line = Polyline::new(vec![Vec2::new(0.0, 0.0), Vec2::new(10.0, 0.0)]).unwrap();
        let on = line.project(Vec2::new(3.0, 0.0));
        assert_eq!(on.lateral, 0.0);
        assert!(!on.clamped);

        let side = line.project(Vec2::new(1.0, 1.0));
        assert!((side.arclength - 1.0).abs() < 1e-12);
        assert!((side.lateral - 1.0).abs() < 1e-12);
        assert!(!side.clamped);

        let beyond = line.project(Vec2::new(12.0, 0.0));
        assert!((beyond.arclength - 10.0).abs() < 1e-12);
        assert!(beyond.clamped);
    }

    #[test]
    fn projection_right_side_is_negative() {
        let line = Polyline::new(vec![Vec2::new(0.0, 0.0), Vec2::new(10.0, 0.0)]).unwrap();
        let p = line.project(Vec2::new(5.0, -2.0));
        assert!((p.lateral + 2.0).abs() < 1e-12);
    }

    #[test]
    fn projection_is_global_minimum() {
        let mut rng = StdRng::seed_from_u64(3);
        let mut pts = vec![Vec2::new(0.0, 0.0)];
        for _ in 0..20 {
            let last = *pts.last().unwrap();
            pts.push(Vec2::new(
                last.x + rng.gen_range(0.5..3.0),
                last.y + rng.gen_range(-2.0..2.0),
            ));
        }
        let line = Polyline::new(pts.clone()).unwrap();
        for _ in 0..1000 {
            let p = Vec2::new(rng.gen_range(-5.0..60.0), rng.gen_range(-20.0..20.0));
            let proj = line.project(p);
            let foot = line.point_at(proj.arclength);
            let d = p.dist(foot);
            for &v in &pts {
                assert!(d <= p.dist(v) + 1e-9, "projection missed global minimum");
            }
        }
    }

    #[test]
    fn degenerate_polyline_rejected() {
        assert_eq!(
            Polyline::new(vec![Vec2::new(1.0, 1.0), Vec2::new(1.0, 1.0)]).unwrap_err(),
            GeometryError::DegeneratePolyline
        );
        assert!(Polyline::new(vec![Vec2::new(1.0, 1.0)]).is_err());
    }

    #[test]
    fn signed_distance_sign_convention() {
        let road = rect(100.0, 10.0);
        assert!(signed_distance_to_polygon(50.0, 5.0, &road) > 0.0);
        assert!(signed_distance_to_polygon(50.0, 12.0, &road) < 0.0);
        let d = signed_distance_to_polygon(50.0, 8.0, &road);
        assert!((d - 2.0).abs() < 1e-12);
    }
}
