//! Per-day ground-truth rasterization: each object's swept occupancy is
//! written into voxel cells; cells touched by more than one class within the
//! day become don't-care.

use std::collections::HashMap;

use super::world::{Shape, World};
use crate::perception::SemanticClass;
use crate::voxmap::{CellKey, GroundTruthMap};

/// Deterministic surface rasterization: walk each face on a grid three times
/// finer than the voxel resolution and record the touched cells.
pub fn rasterize_shape(
    shape: &Shape,
    center: [f64; 2],
    yaw: f64,
    resolution: f64,
    out: &mut impl FnMut(CellKey),
) {
    let step = resolution / 3.0;
    let (s, c) = yaw.sin_cos();
    let mut emit = |local: [f64; 3]| {
        let world = [
            center[0] + c * local[0] - s * local[1],
            center[1] + s * local[0] + c * local[1],
            local[2],
        ];
        out(CellKey::from_point(world, resolution));
    };
    match shape {
        Shape::BoxShell { half } => {
            let (hx, hy, hz) = (half[0], half[1], half[2]);
            let nx = (2.0 * hx / step).ceil() as usize + 1;
            let ny = (2.0 * hy / step).ceil() as usize + 1;
            let nz = (2.0 * hz / step).ceil() as usize + 1;
            for ix in 0..=nx {
                let x = -hx + 2.0 * hx * ix as f64 / nx as f64;
                for iz in 0..=nz {
                    let z = 2.0 * hz * iz as f64 / nz as f64;
                    emit([x, -hy, z]);
                    emit([x, hy, z]);
                }
                for iy in 0..=ny {
                    let y = -hy + 2.0 * hy * iy as f64 / ny as f64;
                    emit([x, y, 2.0 * hz]);
                }
            }
            for iy in 0..=ny {
                let y = -hy + 2.0 * hy * iy as f64 / ny as f64;
                for iz in 0..=nz {
                    let z = 2.0 * hz * iz as f64 / nz as f64;
                    emit([-hx, y, z]);
                    emit([hx, y, z]);
                }
            }
        }
        Shape::Cylinder { radius, height } => {
            let na = ((std::f64::consts::TAU * radius / step).ceil() as usize).max(8);
            let nz = (height / step).ceil() as usize + 1;
            for ia in 0..na {
                let a = std::f64::consts::TAU * ia as f64 / na as f64;
                let (x, y) = (radius * a.cos(), radius * a.sin());
                for iz in 0..=nz {
                    emit([x, y, height * iz as f64 / nz as f64]);
                }
            }
            let nr = (radius / step).ceil() as usize + 1;
            for ir in 0..=nr {
                let r = radius * ir as f64 / nr as f64;
                let na = ((std::f64::consts::TAU * r / step).ceil() as usize).max(4);
                for ia in 0..na {
                    let a = std::f64::consts::TAU * ia as f64 / na as f64;
                    emit([r * a.cos(), r * a.sin(), *height]);
                }
            }
        }
    }
}

fn class_bit(class: SemanticClass) -> u8 {
    1 << class.index().min(3)
}

/// Rasterize one day: static objects once, dynamic agents at every frame
/// they are active. Cells with one class keep it; multi-class cells become
/// don't-care.
pub fn build_ground_truth(world: &World, day: usize) -> GroundTruthMap {
    let cfg = &world.config;
    let resolution = cfg.resolution;
    let mut touched: HashMap<CellKey, u8> = HashMap::new();
    let day_seconds = cfg.day_seconds();
    let day_start = day as f64 * day_seconds;
    for obj in &world.objects {
        let bit = class_bit(obj.class);
        let mut mark = |key: CellKey| {
            *touched.entry(key).or_insert(0) |= bit;
        };
        if obj.is_dynamic() {
            for f in 0..cfg.frames_per_day {
                let t = day_start + f as f64 / cfg.frame_rate;
                if let Some((center, yaw)) = obj.pose_at(t, day) {
                    rasterize_shape(&obj.shape, center, yaw, resolution, &mut mark);
                }
            }
        } else if let Some((center, yaw)) = obj.pose_at(day_start, day) {
            rasterize_shape(&obj.shape, center, yaw, resolution, &mut mark);
        }
    }
    let mut gt = GroundTruthMap::new(resolution);
    for (key, bits) in touched {
        let label = if bits.count_ones() > 1 {
            SemanticClass::DontCare
        } else {
            match bits {
                0b0001 => SemanticClass::Background,
                0b0010 => SemanticClass::Car,
                0b0100 => SemanticClass::Pedestrian,
                _ => SemanticClass::Cyclist,
            }
        };
        gt.labels.insert(key, label);
    }
    gt
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::world::{generate_world, Motion, WorldObject};
    use crate::sim::ScenarioConfig;

    #[test]
    fn static_only_world_has_no_dontcare() {
        let mut cfg = ScenarioConfig::smoke(12);
        cfg.pedestrians_per_day = 0;
        cfg.cyclists_per_day = 0;
        let world = generate_world(&cfg).unwrap();
        let gt = build_ground_truth(&world, 0);
        assert!(!gt.labels.is_empty());
        // Cars can legitimately overlap walls only if slots touch them; the
        // layout keeps them apart, so nothing is mixed.
        assert!(gt.labels.values().all(|l| *l != SemanticClass::DontCare));
    }

    #[test]
    fn pedestrian_crossing_a_car_makes_dontcare_cells() {
        let mut cfg = ScenarioConfig::smoke(13);
        cfg.pedestrians_per_day = 0;
        cfg.cyclists_per_day = 0;
        let mut world = generate_world(&cfg).unwrap();
        // Find one parked car present on day 0 and march a pedestrian
        // straight through it.
        let car = world
            .objects
            .iter()
            .find(|o| {
                o.class == SemanticClass::Car
                    && o.pose_at(1.0, 0).is_some()
            })
            .expect("a parked car on day 0")
            .clone();
        let (center, _) = car.pose_at(1.0, 0).unwrap();
        world.objects.push(WorldObject {
            id: 999,
            class: SemanticClass::Pedestrian,
            shape: Shape::Cylinder {
                radius: 0.25,
                height: 1.7,
            },
            motion: Motion::Waypoints {
                times: vec![1.0, 10.0],
                positions: vec![[center[0] - 4.0, center[1]], [center[0] + 4.0, center[1]]],
            },
        });
        let gt = build_ground_truth(&world, 0);
        let dontcare = gt
            .labels
            .values()
            .filter(|l| **l == SemanticClass::DontCare)
            .count();
        assert!(dontcare > 0, "crossing must produce don't-care cells");
    }

    #[test]
    fn absent_car_leaves_no_cells_on_its_empty_day() {
        let cfg = ScenarioConfig::desk(21);
        let world = generate_world(&cfg).unwrap();
        // Find a slot occupied on one day and empty on another.
        let slot = world
            .slots
            .iter()
            .find(|s| s.occupied.contains(&true) && s.occupied.contains(&false))
            .expect("some slot changes occupancy");
        let day_on = slot.occupied.iter().position(|o| *o).unwrap();
        let day_off = slot.occupied.iter().position(|o| !*o).unwrap();
        let mut keys = Vec::new();
        rasterize_shape(
            &Shape::BoxShell {
                half: [0.9, 2.0, 0.75],
            },
            slot.center,
            slot.yaw,
            cfg.resolution,
            &mut |k| keys.push(k),
        );
        let gt_on = build_ground_truth(&world, day_on);
        let gt_off = build_ground_truth(&world, day_off);
        let on_hits = keys.iter().filter(|k| gt_on.labels.contains_key(k)).count();
        assert!(on_hits > keys.len() / 2);
        let off_car_hits = keys
            .iter()
            .filter(|k| gt_off.labels.get(k) == Some(&SemanticClass::Car))
            .count();
        assert_eq!(off_car_hits, 0, "empty slot must not carry car labels");
    }

    /// Brute-force oracle: rasterize every object at every frame of the day
    /// and union the class sets.
    fn frame_union_oracle(world: &World, day: usize) -> GroundTruthMap {
        let cfg = &world.config;
        let mut touched: HashMap<CellKey, u8> = HashMap::new();
        for f in 0..cfg.frames_per_day {
            let t = (day * cfg.frames_per_day + f) as f64 / cfg.frame_rate;
            for obj in &world.objects {
                if let Some((center, yaw)) = obj.pose_at(t, day) {
                    let bit = class_bit(obj.class);
                    rasterize_shape(&obj.shape, center, yaw, cfg.resolution, &mut |k| {
                        *touched.entry(k).or_insert(0) |= bit;
                    });
                }
            }
        }
        let mut gt = GroundTruthMap::new(cfg.resolution);
        for (key, bits) in touched {
            let label = if bits.count_ones() > 1 {
                SemanticClass::DontCare
            } else {
                match bits {
                    0b0001 => SemanticClass::Background,
                    0b0010 => SemanticClass::Car,
                    0b0100 => SemanticClass::Pedestrian,
                    _ => SemanticClass::Cyclist,
                }
            };
            gt.labels.insert(key, label);
        }
        gt
    }

    #[test]
    fn ground_truth_matches_frame_union_oracle() {
        let mut cfg = ScenarioConfig::smoke(14);
        cfg.frames_per_day = 40; // keep the oracle affordable
        cfg.robot_speed_max = 50.0;
        let world = generate_world(&cfg).unwrap();
        for day in 0..cfg.days {
            let fast = build_ground_truth(&world, day);
            let slow = frame_union_oracle(&world, day);
            assert_eq!(fast, slow, "day {day}");
        }
    }
}
