//! Concrete scenario sampling: draw theta uniformly from a logical
//! scenario's ranges, lay out hero and traffic agents for the family, and
//! validate the placement (pairwise non-overlapping boxes, everything
//! on-road and lane-assigned). Sampling is a pure function of
//! `(logical, seed)`.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dynamics::AgentKinematicState;
use crate::geometry::box_intersects_polygon;
use crate::lane_graph::{build_lane_graph, LaneGraph};
use crate::scenario::maps::{map_for_variant, variant_label, RAMP_BLEND_END, RAMP_BLEND_START};
use crate::scenario::{
    AgentInit, HeroParams, LogicalScenario, ParamRange, ScenarioError, ScenarioFamily,
    ScenarioSpec, TriggerKind,
};
use crate::seeds::stream_rng;

pub const CAR_WHEELBASE: f64 = 2.8;
pub const CAR_LENGTH: f64 = 4.8;
pub const CAR_WIDTH: f64 = 2.0;

const PLACEMENT_RETRIES: usize = 100;

/// History length (ticks, current included) written into generated specs.
pub const HISTORY_TICKS: usize = 10;

/// Constant-speed straight-line history ending at the given state; exact
/// under the bicycle model with zero action.
pub fn straight_history(
    x: f64,
    y: f64,
    theta: f64,
    v: f64,
    ticks: usize,
    dt: f64,
) -> Vec<AgentKinematicState> {
    let (s, c) = theta.sin_cos();
    (0..ticks)
        .map(|k| {
            let back = (ticks - 1 - k) as f64 * v * dt;
            AgentKinematicState {
                x: x - back * c,
                y: y - back * s,
                theta,
                v,
                wheelbase: CAR_WHEELBASE,
                box_length: CAR_LENGTH,
                box_width: CAR_WIDTH,
            }
        })
        .collect()
}

fn agent_init(x: f64, y: f64, theta: f64, v: f64, hero: bool, dt: f64) -> AgentInit {
    AgentInit {
        history: straight_history(x, y, theta, v, HISTORY_TICKS, dt),
        hero,
    }
}

fn placement_valid(agents: &[AgentInit], map: &LaneGraph) -> bool {
    let boxes: Vec<_> = agents
        .iter()
        .map(|a| a.history.last().unwrap().bounding_box())
        .collect();
    for i in 0..boxes.len() {
        if !box_intersects_polygon(&boxes[i], &map.road_polygon) {
            return false;
        }
        let s = agents[i].history.last().unwrap();
        if map.assign_lane(s.position(), s.theta).is_none() {
            return false;
        }
        for j in i + 1..boxes.len() {
            if crate::geometry::obb_overlap(&boxes[i], &boxes[j]) {
                return false;
            }
        }
    }
    true
}

struct Theta {
    trigger_distance: f64,
    trigger_ttc: f64,
    aggressiveness: f64,
    hero_speed: f64,
    traffic_speed: f64,
    initial_gap: f64,
    map_variant: u64,
}

fn draw_theta(logical: &LogicalScenario, rng: &mut ChaCha8Rng) -> Theta {
    Theta {
        trigger_distance: logical.trigger_distance.sample(rng),
        trigger_ttc: logical.trigger_ttc.sample(rng),
        aggressiveness: logical.aggressiveness.sample(rng),
        hero_speed: logical.hero_speed.sample(rng),
        traffic_speed: logical.traffic_speed.sample(rng),
        initial_gap: logical.initial_gap.sample(rng),
        map_variant: logical.map_variants[rng.gen_range(0..logical.map_variants.len())],
    }
}

/// Filler traffic behind the core actors; lane chosen at random, speeds
/// jittered around the traffic speed.
fn add_background(
    agents: &mut Vec<AgentInit>,
    n: usize,
    lanes: &[(usize, f64)],
    x_lo: f64,
    speed: f64,
    rng: &mut ChaCha8Rng,
    dt: f64,
) {
    for k in 0..n {
        let (_, y) = lanes[rng.gen_range(0..lanes.len())];
        let x = x_lo - 28.0 * k as f64 - rng.gen_range(0.0..14.0);
        let v = (speed + rng.gen_range(-2.0..2.0)).max(5.0);
        let lat = rng.gen_range(-0.5..0.5);
        let hdg = rng.gen_range(-0.02..0.02);
        agents.push(agent_init(x, y + lat, hdg, v, false, dt));
    }
}

/// Draw one concrete scenario. Long-tail scenarios carry no expert log.
pub fn sample_concrete_scenario(
    logical: &LogicalScenario,
    seed: u64,
    dt: f64,
) -> Result<ScenarioSpec, ScenarioError> {
    let mut rng = stream_rng(seed, "scenario-gen", 0);
    for _attempt in 0..PLACEMENT_RETRIES {
        let theta = draw_theta(logical, &mut rng);
        let map_spec = map_for_variant(theta.map_variant);
        let map = Arc::new(build_lane_graph(&map_spec)?);
        let lane_y: Vec<(usize, f64)> = map
            .lanes
            .iter()
            .enumerate()
            .take(if logical.family == ScenarioFamily::Merge {
                2
            } else {
                map.lanes.len()
            })
            .map(|(i, l)| (i, l.centerline.points()[0].y))
            .collect();

        let mut agents: Vec<AgentInit> = Vec::new();
        let mut hero_params: Vec<HeroParams> = Vec::new();

        match logical.family {
            ScenarioFamily::CutIn => {
                // Hero ahead in the adjacent lane, slower than the target so
                // the gap closes; it cuts into the target's lane on trigger.
                let target_lane = rng.gen_range(0..2usize);
                let hero_lane = 1 - target_lane;
                let x_t = 80.0 + rng.gen_range(0.0..40.0);
                let y_t = lane_y[target_lane].1;
                let y_h = lane_y[hero_lane].1;
                agents.push(agent_init(
                    x_t + theta.initial_gap,
                    y_h,
                    0.0,
                    theta.hero_speed,
                    true,
                    dt,
                ));
                agents.push(agent_init(x_t, y_t, 0.0, theta.traffic_speed, false, dt));
                hero_params.push(HeroParams {
                    family: logical.family,
                    trigger_kind: logical.trigger_kind,
                    trigger_distance: theta.trigger_distance,
                    trigger_ttc: theta.trigger_ttc,
                    aggressiveness: theta.aggressiveness,
                    cruise_speed: theta.hero_speed,
                    target_agent: 1,
                    hero_lane,
                    target_lane,
                });
                add_background(
                    &mut agents,
                    logical.traffic_count.saturating_sub(1),
                    &lane_y,
                    x_t - 30.0,
                    theta.traffic_speed,
                    &mut rng,
                    dt,
                );
            }
            ScenarioFamily::HardBrake => {
                // Hero directly ahead of the target in the same lane;
                // the target closes in until the trigger fires.
                let lane = rng.gen_range(0..lane_y.len());
                let y = lane_y[lane].1;
                let x_t = 70.0 + rng.gen_range(0.0..40.0);
                agents.push(agent_init(
                    x_t + theta.initial_gap,
                    y,
                    0.0,
                    theta.hero_speed,
                    true,
                    dt,
                ));
                agents.push(agent_init(x_t, y, 0.0, theta.traffic_speed, false, dt));
                hero_params.push(HeroParams {
                    family: logical.family,
                    trigger_kind: logical.trigger_kind,
                    trigger_distance: theta.trigger_distance,
                    trigger_ttc: theta.trigger_ttc,
                    aggressiveness: theta.aggressiveness,
                    cruise_speed: theta.hero_speed,
                    target_agent: 1,
                    hero_lane: lane_y[lane].0,
                    target_lane: lane_y[lane].0,
                });
                add_background(
                    &mut agents,
                    logical.traffic_count.saturating_sub(1),
                    &lane_y,
                    x_t - 30.0,
                    theta.traffic_speed,
                    &mut rng,
                    dt,
                );
            }
            ScenarioFamily::Merge => {
                // Hero approaches on the ramp; a main-lane agent is timed to
                // reach the merge zone at a conflicting moment.
                let x_h = RAMP_BLEND_START - theta.trigger_distance - rng.gen_range(0.0..20.0);
                let y_h = crate::scenario::maps::ramp_y(x_h);
                agents.push(agent_init(x_h, y_h, 0.0, theta.hero_speed, true, dt));
                let mid = 0.5 * (RAMP_BLEND_START + RAMP_BLEND_END);
                let t_arrive = (mid - x_h) / theta.hero_speed.max(1.0);
                let x_t = mid - theta.traffic_speed * t_arrive - (theta.initial_gap - 25.0);
                agents.push(agent_init(x_t, 0.0, 0.0, theta.traffic_speed, false, dt));
                hero_params.push(HeroParams {
                    family: logical.family,
                    trigger_kind: logical.trigger_kind,
                    trigger_distance: theta.trigger_distance,
                    trigger_ttc: theta.trigger_ttc,
                    aggressiveness: theta.aggressiveness,
                    cruise_speed: theta.hero_speed,
                    target_agent: 1,
                    hero_lane: 2,
                    target_lane: 0,
                });
                add_background(
                    &mut agents,
                    logical.traffic_count.saturating_sub(1),
                    &lane_y,
                    x_t - 30.0,
                    theta.traffic_speed,
                    &mut rng,
                    dt,
                );
            }
        }

        // Extra heroes beyond the first are background-style cruisers that
        // brake late; desk-scale families use hero_count = 1.
        for extra in 1..logical.hero_count {
            let y = lane_y[extra % lane_y.len()].1;
            let x = 150.0 + 40.0 * extra as f64;
            agents.push(agent_init(x, y, 0.0, theta.hero_speed, true, dt));
            hero_params.push(HeroParams {
                family: ScenarioFamily::HardBrake,
                trigger_kind: TriggerKind::Distance,
                trigger_distance: theta.trigger_distance,
                trigger_ttc: theta.trigger_ttc,
                aggressiveness: theta.aggressiveness,
                cruise_speed: theta.hero_speed,
                target_agent: 1,
                hero_lane: lane_y[extra % lane_y.len()].0,
                target_lane: lane_y[extra % lane_y.len()].0,
            });
        }

        if placement_valid(&agents, &map) {
            return Ok(ScenarioSpec {
                id: format!("{:?}-{seed}", logical.family).to_lowercase(),
                map_ref: format!("{}.json", variant_label(theta.map_variant)),
                map_spec,
                map,
                agents,
                hero_params,
                expert: None,
                seed,
            });
        }
    }
    Err(ScenarioError::PlacementFailed(PLACEMENT_RETRIES))
}

/// Nominal placement: lane-following traffic with jittered speeds, lateral
/// offsets, and headings. The expert log is attached by the dataset
/// builder after rolling the oracle.
pub fn place_nominal(
    map_variant: u64,
    n_agents: usize,
    seed: u64,
    dt: f64,
) -> Result<ScenarioSpec, ScenarioError> {
    let mut rng = stream_rng(seed, "nominal-gen", 0);
    let map_spec = map_for_variant(map_variant);
    let map = Arc::new(build_lane_graph(&map_spec)?);
    for _attempt in 0..PLACEMENT_RETRIES {
        let mut agents = Vec::with_capacity(n_agents);
        let n_lanes = map.lanes.len();
        let mut lane_front: Vec<f64> = vec![220.0; n_lanes];
        for k in 0..n_agents {
            let lane = k % n_lanes;
            let limit = map.lanes[lane].speed_limit;
            let v = (limit + rng.gen_range(-9.0..2.0)).max(8.0);
            let gap = rng.gen_range(28.0..65.0);
            let x = lane_front[lane] - gap;
            lane_front[lane] = x;
            let base = map.lanes[lane].centerline.project(
                // Lanes are x-aligned in the desk maps; recover y via point_at.
                crate::geometry::Vec2::new(x, 0.0),
            );
            let y = map.lanes[lane].centerline.point_at(base.arclength).y;
            let lat = rng.gen_range(-0.8..0.8);
            let hdg = rng.gen_range(-0.04..0.04);
            agents.push(agent_init(x, y + lat, hdg, v, false, dt));
        }
        if placement_valid(&agents, &map) {
            return Ok(ScenarioSpec {
                id: format!("nominal-{seed}"),
                map_ref: format!("{}.json", variant_label(map_variant)),
                map_spec: map_spec.clone(),
                map: map.clone(),
                agents,
                hero_params: Vec::new(),
                expert: None,
                seed,
            });
        }
    }
    Err(ScenarioError::PlacementFailed(PLACEMENT_RETRIES))
}

/// Initial-state mixture: with probability `alpha` draw a long-tail
/// scenario, otherwise a nominal one, uniformly within the set.
pub fn sample_initial_state<'a, R: Rng>(
    alpha: f64,
    nominal: &'a [ScenarioSpec],
    longtail: &'a [ScenarioSpec],
    rng: &mut R,
) -> Result<(&'a ScenarioSpec, bool), ScenarioError> {
    if !(0.0..=1.0).contains(&alpha) || !alpha.is_finite() {
        return Err(ScenarioError::AlphaOutOfRange(alpha));
    }
    let use_longtail = if alpha == 0.0 {
        false
    } else if alpha == 1.0 {
        true
    } else {
        if nominal.is_empty() || longtail.is_empty() {
            return Err(ScenarioError::EmptySet);
        }
        rng.gen_range(0.0..1.0) < alpha
    };
    let set = if use_longtail { longtail } else { nominal };
    if set.is_empty() {
        return Err(ScenarioError::EmptySet);
    }
    Ok((&set[rng.gen_range(0..set.len())], !use_longtail))
}

/// Desk-scale logical scenario families. Cut-in and hard-brake use straight
/// maps; merge uses the ramp map and is the held-out family for
/// out-of-distribution evaluation.
pub fn default_logical_scenarios() -> Vec<LogicalScenario> {
    vec![
        LogicalScenario {
            family: ScenarioFamily::CutIn,
            trigger_kind: TriggerKind::Distance,
            trigger_distance: ParamRange::new(8.0, 18.0),
            trigger_ttc: ParamRange::new(2.0, 4.0),
            aggressiveness: ParamRange::new(0.5, 1.0),
            hero_speed: ParamRange::new(16.0, 21.0),
            traffic_speed: ParamRange::new(26.0, 31.0),
            initial_gap: ParamRange::new(16.0, 28.0),
            map_variants: vec![0, 1],
            hero_count: 1,
            traffic_count: 3,
        },
        LogicalScenario {
            family: ScenarioFamily::HardBrake,
            trigger_kind: TriggerKind::TimeToCollision,
            trigger_distance: ParamRange::new(20.0, 35.0),
            trigger_ttc: ParamRange::new(2.5, 4.5),
            aggressiveness: ParamRange::new(0.5, 1.0),
            hero_speed: ParamRange::new(20.0, 25.0),
            traffic_speed: ParamRange::new(27.0, 32.0),
            initial_gap: ParamRange::new(24.0, 42.0),
            map_variants: vec![0, 2],
            hero_count: 1,
            traffic_count: 3,
        },
        LogicalScenario {
            family: ScenarioFamily::Merge,
            trigger_kind: TriggerKind::Distance,
            trigger_distance: ParamRange::new(30.0, 60.0),
            trigger_ttc: ParamRange::new(2.0, 4.0),
            aggressiveness: ParamRange::new(0.4, 1.0),
            hero_speed: ParamRange::new(18.0, 24.0),
            traffic_speed: ParamRange::new(26.0, 31.0),
            initial_gap: ParamRange::new(12.0, 38.0),
            map_variants: vec![3],
            hero_count: 1,
            traffic_count: 3,
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn theta_within_ranges_and_deterministic() {
        let logicals = default_logical_scenarios();
        for logical in &logicals {
            let a = sample_concrete_scenario(logical, 7, 0.5).unwrap();
            let b = sample_concrete_scenario(logical, 7, 0.5).unwrap();
            assert_eq!(a.agents.len(), b.agents.len());
            for (x, y) in a.agents.iter().zip(&b.agents) {
                assert_eq!(x.history, y.history);
                assert_eq!(x.hero, y.hero);
            }
            let hp = &a.hero_params[0];
            assert!(hp.aggressiveness >= logical.aggressiveness.lo);
            assert!(hp.aggressiveness <= logical.aggressiveness.hi);
            assert!(hp.trigger_distance >= logical.trigger_distance.lo);
            assert!(hp.trigger_distance <= logical.trigger_distance.hi);
        }
    }

    #[test]
    fn placements_are_valid() {
        let logicals = default_logical_scenarios();
        for logical in &logicals {
            for seed in 0..25 {
                let spec = sample_concrete_scenario(logical, seed, 0.5).unwrap();
                assert!(placement_valid(&spec.agents, &spec.map), "seed {seed}");
                assert_eq!(spec.hero_indices().len(), logical.hero_count);
                assert!(!spec.is_nominal());
            }
        }
    }

    #[test]
    fn uniform_sampling_mean_near_midpoint() {
        let range = ParamRange::new(3.0, 9.0);
        let mut rng = stream_rng(123, "test", 0);
        let n = 1000;
        let mean: f64 = (0..n).map(|_| range.sample(&mut rng)).sum::<f64>() / n as f64;
        // Standard error of a U(3,9) mean: (hi-lo)/sqrt(12 n)
        let se = 6.0 / (12.0f64 * n as f64).sqrt();
        assert!((mean - 6.0).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn mixture_degenerate_and_balanced() {
        let nominal = vec![place_nominal(0, 3, 1, 0.5).unwrap()];
        let longtail =
            vec![sample_concrete_scenario(&default_logical_scenarios()[0], 2, 0.5).unwrap()];
        let mut rng = stream_rng(9, "mix", 0);
        for _ in 0..50 {
            let (_, is_nominal) = sample_initial_state(0.0, &nominal, &longtail, &mut rng).unwrap();
            assert!(is_nominal);
            let (_, is_nominal) = sample_initial_state(1.0, &nominal, &longtail, &mut rng).unwrap();
            assert!(!is_nominal);
        }
        let mut hits = 0usize;
        let n = 10_000;
        for _ in 0..n {
            let (_, is_nominal) = sample_initial_state(0.5, &nominal, &longtail, &mut rng).unwrap();
            if !is_nominal {
                hits += 1;
            }
        }
        let frac = hits as f64 / n as f64;
        assert!((0.48..=0.52).contains(&frac), "long-tail fraction {frac}");
    }

    #[test]
    fn bad_alpha_rejected() {
        let mut rng = stream_rng(9, "mix", 1);
        assert!(matches!(
            sample_initial_state(1.5, &[], &[], &mut rng),
            Err(ScenarioError::AlphaOutOfRange(_))
        ));
    }

    #[test]
    fn nominal_placement_deterministic() {
        let a = place_nominal(0, 6, 42, 0.5).unwrap();
        let b = place_nominal(0, 6, 42, 0.5).unwrap();
        for (x, y) in a.agents.iter().zip(&b.agents) {
            assert_eq!(x.history, y.history);
        }
        assert_eq!(a.agents.len(), 6);
    }
}
