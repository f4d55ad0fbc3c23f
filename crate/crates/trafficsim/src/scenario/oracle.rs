//! Scripted expert: intelligent-driver-model car following plus
//! pure-pursuit lane keeping. Stands in for recorded human demonstrations;
//! because the oracle generates the logs, expert actions are exactly known.

use serde::{Deserialize, Serialize};

use crate::dynamics::{ActionBounds, AgentAction, AgentKinematicState};
use crate::lane_graph::LaneGraph;

/// Lead-vehicle search horizon along the path, meters.
pub const LEAD_HORIZON: f64 = 100.0;
/// Lateral corridor half-width (in lane widths) for same-path leads.
const LEAD_LATERAL_FRAC: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdmParams {
    /// Maximum comfortable acceleration, m/s^2.
    pub a_max: f64,
    /// Comfortable braking, m/s^2 (positive).
    pub b_comfort: f64,
    /// Standstill jam distance, m.
    pub s0: f64,
    /// Desired time headway, s.
    pub t_headway: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        IdmParams {
            a_max: 1.5,
            b_comfort: 2.0,
            s0: 2.0,
            t_headway: 1.5,
        }
    }
}

/// IDM longitudinal acceleration. `lead` is `(net gap, closing speed)`;
/// with no lead the interaction term vanishes.
pub fn idm_accel(p: &IdmParams, v: f64, v0: f64, lead: Option<(f64, f64)>) -> f64 {
    let free = (v / v0).powi(4);
    let interaction = match lead {
        Some((gap, dv)) => {
            let s_star =
                p.s0 + (v * p.t_headway + v * dv / (2.0 * (p.a_max * p.b_comfort).sqrt())).max(0.0);
            let s = gap.max(0.1);
            (s_star / s).powi(2)
        }
        None => 0.0,
    };
    p.a_max * (1.0 - free - interaction)
}

/// Pure-pursuit steering toward a lookahead point on a path.
pub fn pure_pursuit_steer(
    state: &AgentKinematicState,
    path: &crate::geometry::Polyline,
    lookahead: f64,
) -> f64 {
    let proj = path.project(state.position());
    let target_s = (proj.arclength + lookahead).min(path.total_length());
    let target = path.point_at(target_s);
    let d = target.sub(state.position());
    let alpha = d.y.atan2(d.x) - state.theta;
    let ld = d.norm().max(1.0);
    (2.0 * state.wheelbase * alpha.sin() / ld).atan()
}

/// Nearest agent ahead of `agent` along its own lane path, within
/// [`LEAD_HORIZON`] and a lateral corridor of the lane. Returns the net
/// bumper gap and the closing speed. Merging traffic near the junction
/// projects onto the main path and is treated as a lead.
pub fn lead_vehicle(
    states: &[(AgentKinematicState, bool)],
    agent: usize,
    map: &LaneGraph,
) -> Option<(f64, f64)> {
    let me = &states[agent].0;
    let (lane_idx, my_proj) = map.assign_lane(me.position(), me.theta)?;
    let lane = map.lane(lane_idx);
    let mut best: Option<(f64, f64)> = None;
    for (i, (other, alive)) in states.iter().enumerate() {
        if i == agent || !alive {
            continue;
        }
        let proj = lane.centerline.project(other.position());
        if proj.lateral.abs() > LEAD_LATERAL_FRAC * lane.width {
            continue;
        }
        let ds = proj.arclength - my_proj.arclength;
        if ds <= 0.0 || ds > LEAD_HORIZON {
            continue;
        }
        let gap = ds - 0.5 * (me.box_length + other.box_length);
        if best.map_or(true, |(g, _)| gap < g) {
            best = Some((gap, me.v - other.v));
        }
    }
    best
}

/// Expert action for one agent: IDM against the current lead at the lane
/// speed limit, pure-pursuit steering along the lane centerline, clipped
/// to the action bounds.
pub fn expert_oracle_action(
    states: &[(AgentKinematicState, bool)],
    agent: usize,
    map: &LaneGraph,
    idm: &IdmParams,
    bounds: &ActionBounds,
) -> AgentAction {
    let me = &states[agent].0;
    let assignment = map.assign_lane(me.position(), me.theta);
    let (lane_idx, _) = match assignment {
        Some(a) => a,
        None => return AgentAction::ZERO,
    };
    let lane = map.lane(lane_idx);
    let lead = lead_vehicle(states, agent, map);
    let accel = idm_accel(idm, me.v, lane.speed_limit, lead);
    let lookahead = (0.8 * me.v).clamp(4.0, 20.0);
    let steer = pure_pursuit_steer(me, &lane.centerline, lookahead);
    bounds
        .clip(AgentAction { accel, steer })
        .0
}
