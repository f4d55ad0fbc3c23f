//! Hand-crafted per-agent features: pose history in the agent frame,
//! nearest-neighbor relative states, lane-relative channels, and a
//! hero-proximity flag. Everything is expressed relative to the agent's
//! current pose, so a rigid transform of the whole scene (map included)
//! leaves the vector unchanged.

use serde::{Deserialize, Serialize};

use crate::geometry::signed_distance_to_polygon;
use crate::lane_graph::LaneGraph;
use crate::tape::Real;

/// Distances and speeds are divided by this before entering the network.
const SCALE: f64 = 10.0;
/// Hero-proximity flag radius in meters.
const HERO_RADIUS: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// History horizon H in ticks (including the current tick).
    pub history_len: usize,
    /// Number of nearest-neighbor slots.
    pub neighbor_k: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            history_len: 10,
            neighbor_k: 4,
        }
    }
}

impl FeatureConfig {
    /// Per step: rel x, rel y, cos dtheta, sin dtheta, v.
    /// Per neighbor: rel x, rel y, cos dtheta, sin dtheta, v, present.
    /// Lane block: lateral, heading error, speed limit, curvature,
    /// boundary distance, on-map flag. Plus the hero-proximity flag.
    pub fn dim(&self) -> usize {
        self.history_len * 5 + self.neighbor_k * 6 + 6 + 1
    }
}

/// One agent as seen by the feature extractor. `history` is oldest-first
/// with exactly `history_len` entries of `(x, y, theta, v)`.
#[derive(Debug, Clone)]
pub struct AgentSnapshot<R: Real> {
    pub history: Vec<[R; 4]>,
    pub hero: bool,
    pub alive: bool,
}

impl<R: Real> AgentSnapshot<R> {
    pub fn current(&self) -> [R; 4] {
        *self.history.last().expect("empty agent history")
    }
}

/// Deterministic, viewpoint-invariant feature vector for one agent.
/// Neighbor slots are ordered by increasing distance, ties broken by agent
/// index; when the agent has no lane assignment the lane block is zeroed
/// with its flag cleared.
pub fn extract_features<R: Real>(
    agents: &[AgentSnapshot<R>],
    map: &LaneGraph,
    agent_index: usize,
    cfg: &FeatureConfig,
) -> Vec<R> {
    let me = &agents[agent_index];
    assert_eq!(me.history.len(), cfg.history_len, "history length mismatch");
    let [x, y, theta, _] = me.current();
    let cos_t = theta.cos();
    let sin_t = theta.sin();
    // Rotation into the agent frame: d_local = R(-theta) * d_world.
    let to_local = |dx: R, dy: R| -> (R, R) {
        (cos_t * dx + sin_t * dy, cos_t * dy - sin_t * dx)
    };

    let mut f: Vec<R> = Vec::with_capacity(cfg.dim());

    for step in &me.history {
        let (lx, ly) = to_local(step[0] - x, step[1] - y);
        let dth = step[2] - theta;
        f.push(lx * x.lit(1.0 / SCALE));
        f.push(ly * x.lit(1.0 / SCALE));
        f.push(dth.cos());
        f.push(dth.sin());
        f.push(step[3] * x.lit(1.0 / SCALE));
    }

    // k nearest alive neighbors by current center distance.
    let mut order: Vec<(usize, f64)> = agents
        .iter()
        .enumerate()
        .filter(|(i, a)| *i != agent_index && a.alive)
        .map(|(i, a)| {
            let [nx, ny, _, _] = a.current();
            let dx = nx.value() - x.value();
            let dy = ny.value() - y.value();
            (i, dx * dx + dy * dy)
        })
        .collect();
    order.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    let mut hero_nearby = false;
    for slot in 0..cfg.neighbor_k {
        if let Some(&(i, d2)) = order.get(slot) {
            let [nx, ny, nth, nv] = agents[i].current();
            let (lx, ly) = to_local(nx - x, ny - y);
            let dth = nth - theta;
            f.push(lx * x.lit(1.0 / SCALE));
            f.push(ly * x.lit(1.0 / SCALE));
            f.push(dth.cos());
            f.push(dth.sin());
            f.push(nv * x.lit(1.0 / SCALE));
            f.push(x.lit(1.0));
            if agents[i].hero && d2 <= HERO_RADIUS * HERO_RADIUS {
                hero_nearby = true;
            }
        } else {
            for _ in 0..6 {
                f.push(x.lit(0.0));
            }
        }
    }
    // Heroes beyond the k slots still count for the proximity flag.
    for &(i, d2) in order.iter().skip(cfg.neighbor_k) {
        if agents[i].hero && d2 <= HERO_RADIUS * HERO_RADIUS {
            hero_nearby = true;
        }
    }

    match map.assign_lane(
        crate::geometry::Vec2::new(x.value(), y.value()),
        theta.value(),
    ) {
        Some((lane_idx, _)) => {
            let lane = map.lane(lane_idx);
            let (_, lateral, _, _) = crate::geometry::project_point_polyline(
                x,
                y,
                lane.centerline.points(),
                lane.centerline.cumulative(),
            );
            let proj_val = lane
                .centerline
                .project(crate::geometry::Vec2::new(x.value(), y.value()));
            let dir = lane.centerline.direction_at(proj_val.arclength);
            let lane_heading = dir.y.atan2(dir.x);
            // Wrap the heading error into (-pi, pi] by a value-chosen shift.
            let raw = theta.value() - lane_heading;
            let shift =
                (raw / std::f64::consts::TAU).round() * std::f64::consts::TAU + lane_heading;
            let heading_err = theta - x.lit(shift);
            let node = map
                .nearest_node(
                    crate::geometry::Vec2::new(x.value(), y.value()),
                    theta.value(),
                )
                .expect("lane assigned but no node");
            let curvature = map.nodes[node].curvature;
            let boundary = box_boundary_distance(me, map);
            f.push(lateral);
            f.push(heading_err);
            f.push(x.lit(lane.speed_limit / SCALE));
            f.push(x.lit(curvature * SCALE));
            f.push(boundary * x.lit(1.0 / SCALE));
            f.push(x.lit(1.0));
        }
        None => {
            for _ in 0..5 {
                f.push(x.lit(0.0));
            }
            f.push(x.lit(0.0));
        }
    }

    f.push(x.lit(if hero_nearby { 1.0 } else { 0.0 }));
    debug_assert_eq!(f.len(), cfg.dim());
    f
}

/// Smallest signed distance from the agent's box corners to the road
/// boundary, positive inside the road polygon. Uses nominal car extents
/// around the rear axle; exact box geometry lives in the infraction checks.
fn box_boundary_distance<R: Real>(agent: &AgentSnapshot<R>, map: &LaneGraph) -> R {
    let [x, y, theta, _] = agent.current();
    let cos_t = theta.cos();
    let sin_t = theta.sin();
    // Half extents of a nominal box centered one half-wheelbase ahead.
    let (hl, hw, off) = (2.4, 1.0, 1.4);
    let cx = x + cos_t * x.lit(off);
    let cy = y + sin_t * x.lit(off);
    let mut best: Option<R> = None;
    for (sl, sw) in [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)] {
        let px = cx + cos_t * x.lit(sl * hl) - sin_t * x.lit(sw * hw);
        let py = cy + sin_t * x.lit(sl * hl) + cos_t * x.lit(sw * hw);
        let d = signed_distance_to_polygon(px, py, &map.road_polygon);
        best = Some(match best {
            Some(b) => Real::min(b, d),
            None => d,
        });
    }
    best.unwrap()
}
