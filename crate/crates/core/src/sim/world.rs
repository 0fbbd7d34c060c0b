//! Deterministic world generation: static lot geometry, per-day parking
//! schedules, dynamic agents, and the daily patrol path.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::perception::{Point3, Pose, SemanticClass};
use crate::rng::stream_rng;

pub const STREAM_WORLD: u64 = 0x01;
pub const STREAM_RENDER: u64 = 0x02;
pub const STREAM_NOISE: u64 = 0x03;
pub const STREAM_DROPOUT: u64 = 0x04;
pub const STREAM_PROTO: u64 = 0x05;

/// Sensor height above ground, meters.
pub const SENSOR_HEIGHT: f64 = 0.6;

/// Surfaces points get sampled from. Boxes expose their four sides and top.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    /// Axis half-extents before yaw; the box stands on the ground.
    BoxShell { half: [f64; 3] },
    Cylinder { radius: f64, height: f64 },
}

impl Shape {
    /// Total sampled surface area (sides plus top).
    pub fn surface_area(&self) -> f64 {
        match self {
            Shape::BoxShell { half } => {
                let (hx, hy, hz) = (half[0], half[1], half[2]);
                2.0 * (2.0 * hx) * (2.0 * hz) + 2.0 * (2.0 * hy) * (2.0 * hz)
                    + (2.0 * hx) * (2.0 * hy)
            }
            Shape::Cylinder { radius, height } => {
                2.0 * std::f64::consts::PI * radius * height
                    + std::f64::consts::PI * radius * radius
            }
        }
    }

    /// Bounding radius in the horizontal plane.
    pub fn bound_radius(&self) -> f64 {
        match self {
            Shape::BoxShell { half } => (half[0] * half[0] + half[1] * half[1]).sqrt(),
            Shape::Cylinder { radius, .. } => *radius,
        }
    }

    pub fn height(&self) -> f64 {
        match self {
            Shape::BoxShell { half } => 2.0 * half[2],
            Shape::Cylinder { height, .. } => *height,
        }
    }
}

/// Where an object is over time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Motion {
    /// Fixed pose, present on the flagged days (cars) or always (fixtures).
    Static {
        center: [f64; 2],
        yaw: f64,
        /// Presence per day; empty means present every day.
        days: Vec<bool>,
    },
    /// Piecewise-linear waypoints traversed at constant speed, heading
    /// along the travel direction. Active between the first and last time.
    Waypoints { times: Vec<f64>, positions: Vec<[f64; 2]> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldObject {
    pub id: u32,
    pub class: SemanticClass,
    pub shape: Shape,
    pub motion: Motion,
}

impl WorldObject {
    /// Ground pose at `time` (seconds since scenario start), or `None` when
    /// absent (not its day / outside its lifetime).
    pub fn pose_at(&self, time: f64, day: usize) -> Option<([f64; 2], f64)> {
        match &self.motion {
            Motion::Static { center, yaw, days } => {
                if days.is_empty() || days.get(day).copied().unwrap_or(false) {
                    Some((*center, *yaw))
                } else {
                    None
                }
            }
            Motion::Waypoints { times, positions } => {
                let (first, last) = (*times.first()?, *times.last()?);
                if time < first || time > last {
                    return None;
                }
                let idx = match times.binary_search_by(|t| t.total_cmp(&time)) {
                    Ok(i) => i.min(times.len() - 2),
                    Err(i) => i.saturating_sub(1).min(times.len() - 2),
                };
                let (t0, t1) = (times[idx], times[idx + 1]);
                let (p0, p1) = (positions[idx], positions[idx + 1]);
                let a = if t1 > t0 { (time - t0) / (t1 - t0) } else { 0.0 };
                let pos = [p0[0] + a * (p1[0] - p0[0]), p0[1] + a * (p1[1] - p0[1])];
                let yaw = (p1[1] - p0[1]).atan2(p1[0] - p0[0]);
                Some((pos, yaw))
            }
        }
    }

    pub fn is_dynamic(&self) -> bool {
        matches!(self.motion, Motion::Waypoints { .. })
    }
}

/// One parking slot and its per-day occupancy schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarSlot {
    pub center: [f64; 2],
    pub yaw: f64,
    pub occupied: Vec<bool>,
}

/// Closed patrol loop traversed once per day at constant speed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatrolPath {
    waypoints: Vec<[f64; 2]>,
    cumulative: Vec<f64>,
    total_len: f64,
}

impl PatrolPath {
    pub fn new(mut waypoints: Vec<[f64; 2]>) -> Self {
        // Close the loop.
        if waypoints.first() != waypoints.last() {
            let first = waypoints[0];
            waypoints.push(first);
        }
        let mut cumulative = vec![0.0];
        for pair in waypoints.windows(2) {
            let d = ((pair[1][0] - pair[0][0]).powi(2) + (pair[1][1] - pair[0][1]).powi(2)).sqrt();
            cumulative.push(cumulative.last().unwrap() + d);
        }
        let total_len = *cumulative.last().unwrap();
        PatrolPath {
            waypoints,
            cumulative,
            total_len,
        }
    }

    pub fn total_len(&self) -> f64 {
        self.total_len
    }

    /// Position and heading at arc length `s` (wrapped around the loop).
    pub fn at(&self, s: f64) -> ([f64; 2], f64) {
        let s = s.rem_euclid(self.total_len);
        let idx = match self
            .cumulative
            .binary_search_by(|c| c.total_cmp(&s))
        {
            Ok(i) => i.min(self.waypoints.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.waypoints.len() - 2),
        };
        let seg = self.cumulative[idx + 1] - self.cumulative[idx];
        let a = if seg > 0.0 { (s - self.cumulative[idx]) / seg } else { 0.0 };
        let (p0, p1) = (self.waypoints[idx], self.waypoints[idx + 1]);
        let pos = [p0[0] + a * (p1[0] - p0[0]), p0[1] + a * (p1[1] - p0[1])];
        let yaw = (p1[1] - p0[1]).atan2(p1[0] - p0[0]);
        (pos, yaw)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub config: ScenarioConfig,
    pub objects: Vec<WorldObject>,
    pub slots: Vec<CarSlot>,
    pub path: PatrolPath,
    /// Patrol speed implied by path length and day duration.
    pub robot_speed: f64,
}

impl World {
    /// Sensor pose at a global frame index. The patrol repeats every day.
    pub fn sensor_pose(&self, frame: u64) -> Pose {
        let day_frames = self.config.frames_per_day as u64;
        let frame_in_day = (frame % day_frames) as f64;
        let s = self.robot_speed * frame_in_day / self.config.frame_rate;
        let (pos, yaw) = self.path.at(s);
        Pose::from_yaw([pos[0], pos[1], SENSOR_HEIGHT], yaw)
    }
}

fn car_shape() -> Shape {
    // Parked perpendicular: width along x, length along y.
    Shape::BoxShell {
        half: [0.9, 2.0, 0.75],
    }
}

fn pedestrian_shape() -> Shape {
    Shape::Cylinder {
        radius: 0.25,
        height: 1.7,
    }
}

fn cyclist_shape() -> Shape {
    Shape::BoxShell {
        half: [0.9, 0.3, 0.8],
    }
}

/// Build the complete deterministic world for a scenario.
pub fn generate_world(config: &ScenarioConfig) -> Result<World> {
    config.validate()?;
    let [ex, ey] = config.world_extent;
    let mut objects: Vec<WorldObject> = Vec::new();
    let mut next_id = 0u32;
    let mut push = |objects: &mut Vec<WorldObject>, class, shape, motion| {
        objects.push(WorldObject {
            id: next_id,
            class,
            shape,
            motion,
        });
        next_id += 1;
    };

    // Perimeter walls.
    let wall_h = 1.1;
    let walls = [
        ([ex / 2.0, 0.1], [ex / 2.0, 0.1, wall_h], 0.0),
        ([ex / 2.0, ey - 0.1], [ex / 2.0, 0.1, wall_h], 0.0),
        ([0.1, ey / 2.0], [0.1, ey / 2.0, wall_h], 0.0),
        ([ex - 0.1, ey / 2.0], [0.1, ey / 2.0, wall_h], 0.0),
    ];
    for (center, half, yaw) in walls {
        push(
            &mut objects,
            SemanticClass::Background,
            Shape::BoxShell { half },
            Motion::Static {
                center,
                yaw,
                days: Vec::new(),
            },
        );
    }

    // A few interior pillars.
    let mut rng = stream_rng(config.seed, &[STREAM_WORLD, 0]);
    let n_posts = 5.min((ex * ey / 200.0) as usize).max(2);
    for k in 0..n_posts {
        let fx = 0.25 + 0.5 * (k as f64 + 0.5) / n_posts as f64;
        let cx = ex * fx + rng.random_range(-1.0..1.0);
        let cy = ey * (0.5 + rng.random_range(-0.08..0.08));
        push(
            &mut objects,
            SemanticClass::Background,
            Shape::BoxShell {
                half: [0.2, 0.2, 1.25],
            },
            Motion::Static {
                center: [cx, cy],
                yaw: 0.0,
                days: Vec::new(),
            },
        );
    }

    // Parking slots: two inner rows visible from every patrol lap and two
    // outer rows near the walls, seen only on the daily outer lap.
    // Outer rows hug the walls but keep the car shells clear of them.
    let wall_clear = 0.2 + 2.0 + 0.4;
    let rows = [
        0.325 * ey,                      // inner south
        0.675 * ey,                      // inner north
        (0.07 * ey).max(wall_clear),     // outer south
        (0.93 * ey).min(ey - wall_clear), // outer north
    ];
    let per_row = config.car_slots.div_ceil(rows.len());
    let pitch = (ex - 16.0) / per_row.max(1) as f64;
    let mut slots = Vec::with_capacity(config.car_slots);
    let mut slot_rng = stream_rng(config.seed, &[STREAM_WORLD, 1]);
    for (r, &row_y) in rows.iter().enumerate() {
        for k in 0..per_row {
            if slots.len() >= config.car_slots {
                break;
            }
            let cx = 8.0 + pitch * (k as f64 + 0.5);
            // Per-slot day schedule: geometric stays, calibrated to the
            // target long-run occupancy.
            let p_occ = config.car_occupancy;
            let leave = 1.0 / config.car_stay_days.max(1.0);
            let arrive = leave * p_occ / (1.0 - p_occ).max(1e-6);
            let mut occupied = Vec::with_capacity(config.days);
            let mut state = slot_rng.random_range(0.0..1.0) < p_occ;
            for _ in 0..config.days {
                occupied.push(state);
                let flip = if state { leave } else { arrive.min(1.0) };
                if slot_rng.random_range(0.0..1.0) < flip {
                    state = !state;
                }
            }
            let _ = r;
            slots.push(CarSlot {
                center: [cx, row_y],
                yaw: 0.0,
                occupied,
            });
        }
    }
    for slot in &slots {
        push(
            &mut objects,
            SemanticClass::Car,
            car_shape(),
            Motion::Static {
                center: slot.center,
                yaw: slot.yaw,
                days: slot.occupied.clone(),
            },
        );
    }

    // Patrol path: three inner laps plus one outer lap per day.
    let inner = [
        [ex * 0.333, ey * 0.4],
        [ex * 0.667, ey * 0.4],
        [ex * 0.667, ey * 0.6],
        [ex * 0.333, ey * 0.6],
    ];
    let outer = [
        [ex * 0.108, ey * 0.163],
        [ex * 0.892, ey * 0.163],
        [ex * 0.892, ey * 0.837],
        [ex * 0.108, ey * 0.837],
    ];
    let mut waypoints = Vec::new();
    for _ in 0..3 {
        waypoints.extend_from_slice(&inner);
    }
    waypoints.push(inner[0]);
    waypoints.push([outer[0][0], outer[0][1]]);
    waypoints.extend_from_slice(&outer[1..]);
    waypoints.push(outer[0]);
    waypoints.push(inner[0]);
    let path = PatrolPath::new(waypoints);
    let robot_speed = path.total_len() / config.day_seconds();
    if robot_speed > config.robot_speed_max {
        return Err(Error::Config(format!(
            "patrol requires {robot_speed:.2} m/s, above the {} m/s bound; \
             increase frames_per_day or shrink the world",
            config.robot_speed_max
        )));
    }

    // Dynamic agents accompany the patrol so their tracks stay observable.
    let mut agent_rng = stream_rng(config.seed, &[STREAM_WORLD, 2]);
    let day_s = config.day_seconds();
    for day in 0..config.days {
        let day_start = day as f64 * day_s;
        for kind in 0..2 {
            let spread = (config.max_range * 0.45).min(4.5);
            let (count, speed, shape, class) = if kind == 0 {
                (
                    config.pedestrians_per_day,
                    config.pedestrian_speed,
                    pedestrian_shape(),
                    SemanticClass::Pedestrian,
                )
            } else {
                (
                    config.cyclists_per_day,
                    config.cyclist_speed,
                    cyclist_shape(),
                    SemanticClass::Cyclist,
                )
            };
            for _ in 0..count {
                let t0 = day_start + agent_rng.random_range(0.0..day_s * 0.85);
                let n_legs = agent_rng.random_range(2..3usize);
                // Anchor each waypoint near where the robot will be at the
                // agent's own arrival time, so the track stays in range.
                let mut times = vec![t0];
                let mut positions: Vec<[f64; 2]> = Vec::with_capacity(n_legs + 1);
                let mut t = t0;
                for _ in 0..=n_legs {
                    let s = robot_speed * (t - day_start);
                    let (anchor, _) = path.at(s);
                    let px = (anchor[0] + agent_rng.random_range(-spread..spread))
                        .clamp(2.0, ex - 2.0);
                    let py = (anchor[1] + agent_rng.random_range(-spread..spread))
                        .clamp(2.0, ey - 2.0);
                    if let Some(prev) = positions.last() {
                        let d = ((px - prev[0]).powi(2) + (py - prev[1]).powi(2)).sqrt();
                        if d < 0.5 {
                            continue; // degenerate leg, drop the waypoint
                        }
                        t += d / speed;
                        times.push(t);
                    }
                    positions.push([px, py]);
                }
                // Clamp lifetime to the day.
                if positions.len() < 2 || *times.last().unwrap() > day_start + day_s {
                    continue;
                }
                let motion = Motion::Waypoints {
                    times: times.clone(),
                    positions,
                };
                // Spawn only agents the patrol can actually watch: verify the
                // whole track stays inside sensor range, frame by frame.
                let probe = WorldObject {
                    id: u32::MAX,
                    class,
                    shape,
                    motion,
                };
                let first_frame = ((times[0] - day_start) * config.frame_rate).floor() as i64;
                let last_frame =
                    ((times[times.len() - 1] - day_start) * config.frame_rate).ceil() as i64;
                let mut visible = true;
                for f in first_frame.max(0)..=last_frame {
                    let t = day_start + f as f64 / config.frame_rate;
                    let Some((pos, _)) = probe.pose_at(t, day) else {
                        continue;
                    };
                    let s = robot_speed * (t - day_start);
                    let (robot, _) = path.at(s);
                    let d = ((pos[0] - robot[0]).powi(2) + (pos[1] - robot[1]).powi(2)).sqrt();
                    if d > 0.8 * config.max_range {
                        visible = false;
                        break;
                    }
                }
                if !visible {
                    continue;
                }
                push(&mut objects, class, shape, probe.motion);
            }
        }
    }

    Ok(World {
        config: config.clone(),
        objects,
        slots,
        path,
        robot_speed,
    })
}

/// World-frame surface point, before sensor noise.
pub fn surface_point(
    shape: &Shape,
    center: [f64; 2],
    yaw: f64,
    rng: &mut impl Rng,
) -> Point3 {
    match shape {
        Shape::BoxShell { half } => {
            let (hx, hy, hz) = (half[0], half[1], half[2]);
            let side_x = 2.0 * (2.0 * hx) * (2.0 * hz);
            let side_y = 2.0 * (2.0 * hy) * (2.0 * hz);
            let top = (2.0 * hx) * (2.0 * hy);
            let total = side_x + side_y + top;
            let pick = rng.random_range(0.0..total);
            let local = if pick < side_x {
                let sign = if rng.random_range(0.0..1.0) < 0.5 { -1.0 } else { 1.0 };
                [
                    rng.random_range(-hx..hx),
                    sign * hy,
                    rng.random_range(0.0..2.0 * hz),
                ]
            } else if pick < side_x + side_y {
                let sign = if rng.random_range(0.0..1.0) < 0.5 { -1.0 } else { 1.0 };
                [
                    sign * hx,
                    rng.random_range(-hy..hy),
                    rng.random_range(0.0..2.0 * hz),
                ]
            } else {
                [
                    rng.random_range(-hx..hx),
                    rng.random_range(-hy..hy),
                    2.0 * hz,
                ]
            };
            let (s, c) = yaw.sin_cos();
            [
                center[0] + c * local[0] - s * local[1],
                center[1] + s * local[0] + c * local[1],
                local[2],
            ]
        }
        Shape::Cylinder { radius, height } => {
            let side = 2.0 * std::f64::consts::PI * radius * height;
            let top = std::f64::consts::PI * radius * radius;
            if rng.random_range(0.0..side + top) < side {
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                [
                    center[0] + radius * a.cos(),
                    center[1] + radius * a.sin(),
                    rng.random_range(0.0..*height),
                ]
            } else {
                let a = rng.random_range(0.0..std::f64::consts::TAU);
                let r = radius * rng.random_range(0.0f64..1.0).sqrt();
                [center[0] + r * a.cos(), center[1] + r * a.sin(), *height]
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_gives_identical_world() {
        let cfg = ScenarioConfig::smoke(7);
        let a = generate_world(&cfg).unwrap();
        let b = generate_world(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_spawn_rates_make_a_static_world() {
        let mut cfg = ScenarioConfig::smoke(7);
        cfg.pedestrians_per_day = 0;
        cfg.cyclists_per_day = 0;
        let world = generate_world(&cfg).unwrap();
        assert!(world.objects.iter().all(|o| !o.is_dynamic()));
    }

    #[test]
    fn zero_extent_is_an_argument_error() {
        let mut cfg = ScenarioConfig::smoke(7);
        cfg.world_extent = [0.0, 0.0];
        assert!(generate_world(&cfg).is_err());
    }

    #[test]
    fn slot_schedule_controls_car_presence() {
        let cfg = ScenarioConfig::desk(3);
        let world = generate_world(&cfg).unwrap();
        for obj in world.objects.iter().filter(|o| o.class == SemanticClass::Car) {
            if let Motion::Static { days, .. } = &obj.motion {
                for (day, &present) in days.iter().enumerate() {
                    let t = day as f64 * cfg.day_seconds() + 1.0;
                    assert_eq!(obj.pose_at(t, day).is_some(), present);
                }
            }
        }
    }

    #[test]
    fn pose_stream_is_continuous() {
        let cfg = ScenarioConfig::desk(11);
        let world = generate_world(&cfg).unwrap();
        let bound = cfg.robot_speed_max / cfg.frame_rate + 1e-9;
        let mut prev = world.sensor_pose(0);
        for frame in 1..(2 * cfg.frames_per_day as u64 + 10) {
            let pose = world.sensor_pose(frame);
            let d = (0..3)
                .map(|k| (pose.translation[k] - prev.translation[k]).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(d <= bound, "frame {frame}: step {d}");
            prev = pose;
        }
    }

    #[test]
    fn agents_move_at_their_configured_speed() {
        let cfg = ScenarioConfig::smoke(5);
        let world = generate_world(&cfg).unwrap();
        for obj in world.objects.iter().filter(|o| o.is_dynamic()) {
            if let Motion::Waypoints { times, positions } = &obj.motion {
                let speed = if obj.class == SemanticClass::Pedestrian {
                    cfg.pedestrian_speed
                } else {
                    cfg.cyclist_speed
                };
                for (tw, pw) in times.windows(2).zip(positions.windows(2)) {
                    let d = ((pw[1][0] - pw[0][0]).powi(2) + (pw[1][1] - pw[0][1]).powi(2)).sqrt();
                    let dt = tw[1] - tw[0];
                    if dt > 1e-9 {
                        assert!((d / dt - speed).abs() < 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn surface_points_lie_on_the_box_shell() {
        let mut rng = stream_rng(1, &[0]);
        let shape = Shape::BoxShell {
            half: [2.0, 0.9, 0.75],
        };
        for _ in 0..500 {
            let p = surface_point(&shape, [10.0, 5.0], 0.0, &mut rng);
            let lx = (p[0] - 10.0).abs();
            let ly = (p[1] - 5.0).abs();
            let on_side_x = (ly - 0.9).abs() < 1e-12 && lx <= 2.0 + 1e-12;
            let on_side_y = (lx - 2.0).abs() < 1e-12 && ly <= 0.9 + 1e-12;
            let on_top = (p[2] - 1.5).abs() < 1e-12 && lx <= 2.0 + 1e-12 && ly <= 0.9 + 1e-12;
            assert!(
                on_side_x || on_side_y || on_top,
                "point {p:?} is off the shell"
            );
            assert!(p[2] >= -1e-12 && p[2] <= 1.5 + 1e-12);
        }
    }
}
