//! Lane-graph map: centerlines discretized into lane segments with typed
//! adjacency (successor / predecessor / left / right), plus the road polygon
//! used for off-road checks.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{point_in_polygon, segments_intersect, Polyline, Vec2};

/// Maximum lane-segment length when discretizing centerlines.
pub const SEGMENT_SPACING: f64 = 10.0;

const NEIGHBOR_MAX_HEADING_DIFF: f64 = 30.0 * std::f64::consts::PI / 180.0;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("map has no lanes")]
    NoLanes,
    #[error("lane {0} centerline shorter than 1 m")]
    CenterlineTooShort(usize),
    #[error("lane {0} is missing a speed limit")]
    MissingSpeedLimit(usize),
    #[error("lane {0} has an invalid centerline: {1}")]
    BadCenterline(usize, crate::geometry::GeometryError),
    #[error("road polygon must be simple with at least 3 vertices")]
    BadRoadPolygon,
    #[error("lane segment {0} lies outside the road polygon")]
    NodeOutsideRoad(usize),
}

/// On-disk map description. Units: meters, radians, m/s.
///
/// Schema (JSON): `{ "version": 1, "lanes": [ { "centerline": [{"x":..,"y":..}, ..],
/// "width": .., "speed_limit": .. } ], "road_polygon": [{"x":..,"y":..}, ..] }`
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapSpec {
    pub version: u32,
    pub lanes: Vec<LaneSpec>,
    pub road_polygon: Vec<Vec2>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LaneSpec {
    pub centerline: Vec<Vec2>,
    pub width: f64,
    pub speed_limit: Option<f64>,
}

/// One lane segment (a lane-graph node).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LaneSegment {
    pub center: Vec2,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
    pub curvature: f64,
    pub speed_limit: f64,
    /// Owning lane and position within it.
    pub lane: usize,
    pub index_in_lane: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EdgeKind {
    Successor,
    Predecessor,
    LeftNeighbor,
    RightNeighbor,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LaneEdge {
    pub from: usize,
    pub to: usize,
    pub kind: EdgeKind,
}

/// Full lane metadata kept alongside the discrete graph; controllers and
/// features need the continuous centerline.
#[derive(Debug, Clone)]
pub struct Lane {
    pub centerline: Polyline,
    pub width: f64,
    pub speed_limit: f64,
    /// Half-open node index range `[start, end)` into `LaneGraph::nodes`.
    pub node_range: (usize, usize),
}

#[derive(Debug, Clone)]
pub struct LaneGraph {
    pub nodes: Vec<LaneSegment>,
    pub edges: Vec<LaneEdge>,
    pub road_polygon: Vec<Vec2>,
    pub lanes: Vec<Lane>,
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a % std::f64::consts::TAU;
    if a > std::f64::consts::PI {
        a -= std::f64::consts::TAU;
    } else if a < -std::f64::consts::PI {
        a += std::f64::consts::TAU;
    }
    a
}

fn polygon_is_simple(poly: &[Vec2]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        let (a1, a2) = (poly[i], poly[(i + 1) % n]);
        for j in i + 1..n {
            // Skip adjacent edges (they share a vertex).
            if j == i || (j + 1) % n == i || (i + 1) % n == j {
                continue;
            }
            let (b1, b2) = (poly[j], poly[(j + 1) % n]);
            if segments_intersect(a1, a2, b1, b2) {
                return false;
            }
        }
    }
    true
}

fn signed_area(poly: &[Vec2]) -> f64 {
    let n = poly.len();
    let mut s = 0.0;
    for i in 0..n {
        s += poly[i].cross(poly[(i + 1) % n]);
    }
    0.5 * s
}

/// Discretize a map description into a lane graph.
///
/// Centerlines become chains of segments at most [`SEGMENT_SPACING`] long;
/// left/right neighbor edges connect laterally adjacent lanes (offset within
/// `[0.5, 1.5]` lane widths, heading difference below 30 degrees).
pub fn build_lane_graph(spec: &MapSpec) -> Result<LaneGraph, MapError> {
    if spec.lanes.is_empty() {
        return Err(MapError::NoLanes);
    }
    let mut road_polygon = spec.road_polygon.clone();
    if !polygon_is_simple(&road_polygon) {
        return Err(MapError::BadRoadPolygon);
    }
    if signed_area(&road_polygon) < 0.0 {
        road_polygon.reverse();
    }

    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    let mut lanes = Vec::new();

    for (li, lane) in spec.lanes.iter().enumerate() {
        let speed_limit = match lane.speed_limit {
            Some(v) if v > 0.0 => v,
            _ => return Err(MapError::MissingSpeedLimit(li)),
        };
        let centerline =
            Polyline::new(lane.centerline.clone()).map_err(|e| MapError::BadCenterline(li, e))?;
        let total = centerline.total_length();
        if total < 1.0 {
            return Err(MapError::CenterlineTooShort(li));
        }
        let n_seg = (total / SEGMENT_SPACING).ceil() as usize;
        let seg_len = total / n_seg as f64;
        let start = nodes.len();
        for k in 0..n_seg {
            let s0 = k as f64 * seg_len;
            let s1 = s0 + seg_len;
            let mid = 0.5 * (s0 + s1);
            let dir0 = centerline.direction_at(s0 + 1e-6);
            let dir1 = centerline.direction_at(s1 - 1e-6);
            let h0 = dir0.y.atan2(dir0.x);
            let h1 = dir1.y.atan2(dir1.x);
            let dir_mid = centerline.direction_at(mid);
            nodes.push(LaneSegment {
                center: centerline.point_at(mid),
                heading: dir_mid.y.atan2(dir_mid.x),
                length: seg_len,
                width: lane.width,
                curvature: wrap_angle(h1 - h0) / seg_len,
                speed_limit,
                lane: li,
                index_in_lane: k,
            });
        }
        let end = nodes.len();
        for k in start..end.saturating_sub(1) {
            edges.push(LaneEdge {
                from: k,
                to: k + 1,
                kind: EdgeKind::Successor,
            });
            edges.push(LaneEdge {
                from: k + 1,
                to: k,
                kind: EdgeKind::Predecessor,
            });
        }
        lanes.push(Lane {
            centerline,
            width: lane.width,
            speed_limit,
            node_range: (start, end),
        });
    }

    // Lateral adjacency: nearest abreast node of each other lane.
    for u in 0..nodes.len() {
        for (li, lane) in lanes.iter().enumerate() {
            if li == nodes[u].lane {
                continue;
            }
            let (s, e) = lane.node_range;
            let mut best: Option<(usize, f64)> = None;
            for v in s..e {
                let d = nodes[u].center.dist(nodes[v].center);
                if best.map_or(true, |(_, bd)| d < bd) {
                    best = Some((v, d));
                }
            }
            if let Some((v, _)) = best {
                let (sh, ch) = nodes[u].heading.sin_cos();
                let dir = Vec2::new(ch, sh);
                let d = nodes[v].center.sub(nodes[u].center);
                let along = dir.dot(d);
                let lateral = dir.cross(d);
                let w = nodes[u].width;
                let heading_diff = wrap_angle(nodes[v].heading - nodes[u].heading).abs();
                if along.abs() <= nodes[u].length
                    && lateral.abs() >= 0.5 * w
                    && lateral.abs() <= 1.5 * w
                    && heading_diff < NEIGHBOR_MAX_HEADING_DIFF
                {
                    edges.push(LaneEdge {
                        from: u,
                        to: v,
                        kind: if lateral > 0.0 {
                            EdgeKind::LeftNeighbor
                        } else {
                            EdgeKind::RightNeighbor
                        },
                    });
                }
            }
        }
    }

    for (i, node) in nodes.iter().enumerate() {
        if !point_in_polygon(node.center, &road_polygon) {
            return Err(MapError::NodeOutsideRoad(i));
        }
    }

    Ok(LaneGraph {
        nodes,
        edges,
        road_polygon,
        lanes,
    })
}

impl LaneGraph {
    /// Lane whose centerline is closest to `p` among lanes roughly aligned
    /// with `heading` (within 90 degrees). Returns the lane index and the
    /// projection onto its centerline.
    pub fn assign_lane(
        &self,
        p: Vec2,
        heading: f64,
    ) -> Option<(usize, crate::geometry::PolylineProjection)> {
        let mut best: Option<(usize, crate::geometry::PolylineProjection, f64)> = None;
        for (li, lane) in self.lanes.iter().enumerate() {
            let proj = lane.centerline.project(p);
            let dir = lane.centerline.direction_at(proj.arclength);
            let lane_heading = dir.y.atan2(dir.x);
            if wrap_angle(lane_heading - heading).abs() > std::f64::consts::FRAC_PI_2 {
                continue;
            }
            let d = proj.lateral.abs();
            if best.map_or(true, |(_, _, bd)| d < bd) {
                best = Some((li, proj, d));
            }
        }
        best.map(|(li, proj, _)| (li, proj))
    }

    /// Nearest lane-graph node to a pose, heading-compatible.
    pub fn nearest_node(&self, p: Vec2, heading: f64) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, n) in self.nodes.iter().enumerate() {
            if wrap_angle(n.heading - heading).abs() > std::f64::consts::FRAC_PI_2 {
                continue;
            }
            let d = n.center.dist(p);
            if best.map_or(true, |(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best.map(|(i, _)| i)
    }

    pub fn lane(&self, idx: usize) -> &Lane {
        &self.lanes[idx]
    }
}

pub use crate::geometry::offroad_check;
