//! Procedural highway map variants: straight multi-lane segments and a
//! two-lane highway with an on-ramp merging into the rightmost lane.

use crate::geometry::Vec2;
use crate::lane_graph::{LaneSpec, MapSpec};

pub const LANE_WIDTH: f64 = 3.7;
pub const MAP_LENGTH: f64 = 500.0;
/// On-ramp lateral offset before the blend and the blend interval.
pub const RAMP_OFFSET: f64 = -7.0;
pub const RAMP_BLEND_START: f64 = 120.0;
pub const RAMP_BLEND_END: f64 = 220.0;

/// Deterministic desk-scale map family. Even ids are straight highways
/// (lane count and speed limit vary), odd ids alternate straight and merge
/// layouts; any u64 maps to a valid variant.
pub fn map_for_variant(id: u64) -> MapSpec {
    match id % 4 {
        0 => straight_map(2, 30.0),
        1 => straight_map(2, 27.0),
        2 => straight_map(3, 30.0),
        _ => merge_map(30.0),
    }
}

pub fn variant_label(id: u64) -> &'static str {
    match id % 4 {
        0 => "straight2_v30",
        1 => "straight2_v27",
        2 => "straight3_v30",
        _ => "merge_v30",
    }
}

fn line(y: f64, x0: f64, x1: f64, step: f64) -> Vec<Vec2> {
    let n = ((x1 - x0) / step).round() as usize;
    (0..=n).map(|i| Vec2::new(x0 + i as f64 * step, y)).collect()
}

pub fn straight_map(lanes: usize, speed_limit: f64) -> MapSpec {
    let lane_specs = (0..lanes)
        .map(|i| LaneSpec {
            centerline: line(i as f64 * LANE_WIDTH, 0.0, MAP_LENGTH, 5.0),
            width: LANE_WIDTH,
            speed_limit: Some(speed_limit),
        })
        .collect();
    let top = (lanes as f64 - 1.0) * LANE_WIDTH + 2.5;
    MapSpec {
        version: 1,
        lanes: lane_specs,
        road_polygon: vec![
            Vec2::new(-10.0, -2.5),
            Vec2::new(MAP_LENGTH + 10.0, -2.5),
            Vec2::new(MAP_LENGTH + 10.0, top),
            Vec2::new(-10.0, top),
        ],
    }
}

/// Ramp centerline height at longitudinal position `x`: offset before the
/// blend, cosine-eased to the main lane across the blend interval, zero
/// after.
pub fn ramp_y(x: f64) -> f64 {
    if x <= RAMP_BLEND_START {
        RAMP_OFFSET
    } else if x >= RAMP_BLEND_END {
        0.0
    } else {
        let t = (x - RAMP_BLEND_START) / (RAMP_BLEND_END - RAMP_BLEND_START);
        RAMP_OFFSET * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

/// Two main lanes plus an on-ramp whose centerline continues along the
/// rightmost main lane after the merge point, so ramp traffic has a
/// continuous path to follow.
pub fn merge_map(speed_limit: f64) -> MapSpec {
    let main0 = line(0.0, 0.0, MAP_LENGTH, 5.0);
    let main1 = line(LANE_WIDTH, 0.0, MAP_LENGTH, 5.0);
    let mut ramp: Vec<Vec2> = Vec::new();
    let mut x = 0.0;
    while x < RAMP_BLEND_END {
        ramp.push(Vec2::new(x, ramp_y(x)));
        x += 2.5;
    }
    let mut xi = RAMP_BLEND_END;
    while xi <= MAP_LENGTH {
        ramp.push(Vec2::new(xi, 0.0));
        xi += 5.0;
    }

    // Road polygon: main corridor plus the ramp pocket below it.
    let mut poly = vec![Vec2::new(-10.0, -2.5), Vec2::new(0.0, -2.5)];
    poly.push(Vec2::new(0.0, RAMP_OFFSET - 2.5));
    let mut x = RAMP_BLEND_START;
    while x < RAMP_BLEND_END {
        poly.push(Vec2::new(x, ramp_y(x) - 2.5));
        x += 10.0;
    }
    poly.push(Vec2::new(RAMP_BLEND_END + 5.0, -2.5));
    poly.push(Vec2::new(MAP_LENGTH + 10.0, -2.5));
    poly.push(Vec2::new(MAP_LENGTH + 10.0, LANE_WIDTH + 2.5));
    poly.push(Vec2::new(-10.0, LANE_WIDTH + 2.5));
    poly.reverse(); // clockwise as listed; builder normalizes to CCW anyway

    MapSpec {
        version: 1,
        lanes: vec![
            LaneSpec {
                centerline: main0,
                width: LANE_WIDTH,
                speed_limit: Some(speed_limit),
            },
            LaneSpec {
                centerline: main1,
                width: LANE_WIDTH,
                speed_limit: Some(speed_limit),
            },
            LaneSpec {
                centerline: ramp,
                width: LANE_WIDTH,
                speed_limit: Some(speed_limit),
            },
        ],
        road_polygon: poly,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lane_graph::build_lane_graph;

    #[test]
    fn all_variants_build() {
        for id in 0..8 {
            let spec = map_for_variant(id);
            let g = build_lane_graph(&spec).expect("variant should build");
            assert!(!g.nodes.is_empty());
        }
    }

    #[test]
    fn ramp_blends_smoothly_into_main_lane() {
        assert_eq!(ramp_y(0.0), RAMP_OFFSET);
        assert_eq!(ramp_y(RAMP_BLEND_END), 0.0);
        let mid = ramp_y(0.5 * (RAMP_BLEND_START + RAMP_BLEND_END));
        assert!((mid - 0.5 * RAMP_OFFSET).abs() < 1e-12);
        // Heading stays shallow across the blend.
        let mut x = RAMP_BLEND_START;
        while x < RAMP_BLEND_END {
            let slope = (ramp_y(x + 0.5) - ramp_y(x)) / 0.5;
            assert!(slope.abs() < 0.2, "slope {slope} at x {x}");
            x += 1.0;
        }
    }

    #[test]
    fn merge_map_assigns_ramp_traffic_to_ramp_lane() {
        let g = build_lane_graph(&merge_map(30.0)).unwrap();
        let (lane, _) = g
            .assign_lane(crate::geometry::Vec2::new(60.0, RAMP_OFFSET), 0.0)
            .unwrap();
        assert_eq!(lane, 2);
        let (lane, _) = g
            .assign_lane(crate::geometry::Vec2::new(60.0, 0.0), 0.0)
            .unwrap();
        assert_eq!(lane, 0);
    }
}
