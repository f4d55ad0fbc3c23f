//! Scripted hero agents. Heroes are never learner-controlled; they execute
//! a deterministic maneuver (cut-in, hard brake, merge) once their trigger
//! fires, and hold speed with lane keeping before that.

use serde::{Deserialize, Serialize};

use crate::dynamics::{ActionBounds, AgentAction, AgentKinematicState};
use crate::lane_graph::LaneGraph;
use crate::scenario::maps::RAMP_BLEND_START;
use crate::scenario::oracle::{idm_accel, lead_vehicle, pure_pursuit_steer, IdmParams};
use crate::scenario::{HeroParams, ScenarioFamily, TriggerKind};

/// Speed-hold proportional gain, 1/s.
const SPEED_GAIN: f64 = 1.0;

/// Per-hero mutable state: triggers latch once fired so a maneuver never
/// un-triggers mid-execution.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct HeroRuntime {
    pub triggered: bool,
    pub triggered_tick: Option<usize>,
}

fn trigger_condition(
    params: &HeroParams,
    hero: &AgentKinematicState,
    target: &AgentKinematicState,
) -> bool {
    match params.family {
        // Positional trigger: the hero entered the merge approach.
        ScenarioFamily::Merge => hero.x >= RAMP_BLEND_START - params.trigger_distance,
        _ => {
            // Longitudinal gap along the hero's travel direction.
            let (s, c) = hero.theta.sin_cos();
            let gap = ((target.x - hero.x) * c + (target.y - hero.y) * s).abs();
            match params.trigger_kind {
                TriggerKind::Distance => gap < params.trigger_distance,
                TriggerKind::TimeToCollision => {
                    let closing = target.v - hero.v;
                    closing > 0.1 && gap / closing < params.trigger_ttc
                }
            }
        }
    }
}

/// Scripted hero action. Pre-trigger behavior is speed hold plus lane
/// keeping; post-trigger behavior depends on the family. If the hero has
/// lost its lane reference it holds zero action.
pub fn hero_action(
    hero_index: usize,
    states: &[(AgentKinematicState, bool)],
    params: &HeroParams,
    runtime: &mut HeroRuntime,
    tick: usize,
    map: &LaneGraph,
    idm: &IdmParams,
    bounds: &ActionBounds,
) -> AgentAction {
    let me = &states[hero_index].0;
    let target_state = states
        .get(params.target_agent)
        .map(|(s, _)| *s)
        .unwrap_or(*me);

    if !runtime.triggered && trigger_condition(params, me, &target_state) {
        runtime.triggered = true;
        runtime.triggered_tick = Some(tick);
    }

    let lane_of = |idx: usize| map.lane(idx);
    let on_map = map.assign_lane(me.position(), me.theta);
    if on_map.is_none() {
        return AgentAction::ZERO;
    }

    let speed_hold = |v_target: f64| (SPEED_GAIN * (v_target - me.v)).clamp(-bounds.max_accel, bounds.max_accel);

    let raw = if !runtime.triggered {
        // Cruise in the starting lane.
        let path = &lane_of(params.hero_lane).centerline;
        AgentAction {
            accel: speed_hold(params.cruise_speed),
            steer: pure_pursuit_steer(me, path, (0.8 * me.v).clamp(4.0, 20.0)),
        }
    } else {
        match params.family {
            ScenarioFamily::CutIn => {
                // Steer into the target lane; aggressiveness shortens the
                // lookahead, which raises the lateral rate.
                let path = &lane_of(params.target_lane).centerline;
                let lookahead =
                    (me.v * (1.6 - 1.25 * params.aggressiveness)).clamp(3.0, 40.0);
                AgentAction {
                    accel: speed_hold(params.cruise_speed),
                    steer: pure_pursuit_steer(me, path, lookahead),
                }
            }
            ScenarioFamily::HardBrake => {
                let path = &lane_of(params.hero_lane).centerline;
                let decel = 2.0 + 4.0 * params.aggressiveness;
                AgentAction {
                    accel: if me.v > 0.0 { -decel } else { 0.0 },
                    steer: pure_pursuit_steer(me, path, (0.8 * me.v).clamp(4.0, 20.0)),
                }
            }
            ScenarioFamily::Merge => {
                // Follow the ramp path onto the main lane; insertion is
                // IDM against whoever is ahead on the path, with gaps
                // shrunk by aggressiveness.
                let path = &lane_of(params.hero_lane).centerline;
                let mut tight = *idm;
                tight.s0 *= 1.0 - 0.7 * params.aggressiveness;
                tight.t_headway *= 1.0 - 0.7 * params.aggressiveness;
                let lead = lead_vehicle(states, hero_index, map);
                AgentAction {
                    accel: idm_accel(&tight, me.v, params.cruise_speed.max(1.0), lead),
                    steer: pure_pursuit_steer(me, path, (0.8 * me.v).clamp(4.0, 20.0)),
                }
            }
        }
    };
    bounds.clip(raw).0
}
