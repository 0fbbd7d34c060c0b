//! Scan rendering: sample object surfaces within sensor range, add
//! coordinate noise, and emit sensor-frame points with exact pose and
//! per-point true labels.

use rand::Rng;

use super::config::ScenarioConfig;
use super::world::{surface_point, World, STREAM_RENDER};
use crate::perception::{Point3, PointCloudScan, SemanticClass};
use crate::rng::stream_rng;

/// Deterministic standard normal via Box-Muller.
pub(crate) fn gaussian(rng: &mut impl Rng) -> f64 {
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

// Transient objects get denser sampling: their cells are only occupied for
// a frame or two, so each must see points immediately.
fn class_density_factor(class: SemanticClass) -> f64 {
    match class {
        SemanticClass::Background => 0.7,
        SemanticClass::Car => 1.0,
        SemanticClass::Pedestrian => 8.0,
        SemanticClass::Cyclist => 8.0,
        SemanticClass::DontCare => 0.0,
    }
}

/// Render the scan at a global frame index.
///
/// Points are stored in the sensor frame; the scan carries the exact pose.
/// Every emitted point is labeled with its generating object's class.
pub fn render_scan(world: &World, frame: u64) -> PointCloudScan {
    let cfg: &ScenarioConfig = &world.config;
    let time = cfg.frame_time(frame);
    let day = cfg.day_of_frame(frame);
    let pose = world.sensor_pose(frame);
    let inverse = pose.inverse();
    let sensor = pose.translation;

    let mut points: Vec<Point3> = Vec::new();
    let mut labels: Vec<SemanticClass> = Vec::new();
    for obj in &world.objects {
        let Some((center, yaw)) = obj.pose_at(time, day) else {
            continue;
        };
        // Quick reject on the horizontal bounding circle.
        let dx = center[0] - sensor[0];
        let dy = center[1] - sensor[1];
        if (dx * dx + dy * dy).sqrt() - obj.shape.bound_radius() > cfg.max_range {
            continue;
        }
        let candidates = (obj.shape.surface_area()
            * cfg.point_density
            * class_density_factor(obj.class))
        .ceil() as usize;
        let mut rng = stream_rng(cfg.seed, &[STREAM_RENDER, frame, obj.id as u64]);
        for _ in 0..candidates {
            let p = surface_point(&obj.shape, center, yaw, &mut rng);
            let d2 = (0..3).map(|k| (p[k] - sensor[k]).powi(2)).sum::<f64>();
            if d2.sqrt() > cfg.max_range {
                continue;
            }
            let noisy = [
                p[0] + cfg.coord_noise_sigma * gaussian(&mut rng),
                p[1] + cfg.coord_noise_sigma * gaussian(&mut rng),
                p[2] + cfg.coord_noise_sigma * gaussian(&mut rng),
            ];
            points.push(inverse.transform(noisy));
            labels.push(obj.class);
        }
    }

    // Deterministic stride subsampling when over budget.
    if points.len() > cfg.max_points_per_scan {
        let keep = cfg.max_points_per_scan;
        let n = points.len();
        let mut kept_points = Vec::with_capacity(keep);
        let mut kept_labels = Vec::with_capacity(keep);
        for k in 0..keep {
            let idx = k * n / keep;
            kept_points.push(points[idx]);
            kept_labels.push(labels[idx]);
        }
        points = kept_points;
        labels = kept_labels;
    }

    PointCloudScan {
        timestamp: time,
        pose,
        points,
        labels: Some(labels),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::write_scan;
    use crate::sim::world::generate_world;
    use crate::sim::ScenarioConfig;

    #[test]
    fn empty_world_gives_empty_scan_with_valid_pose() {
        let mut cfg = ScenarioConfig::smoke(1);
        cfg.pedestrians_per_day = 0;
        cfg.cyclists_per_day = 0;
        let mut world = generate_world(&cfg).unwrap();
        world.objects.clear();
        let scan = render_scan(&world, 5);
        assert!(scan.points.is_empty());
        scan.pose.validate().unwrap();
    }

    #[test]
    fn rendering_is_deterministic_at_byte_level() {
        let cfg = ScenarioConfig::smoke(9);
        let world = generate_world(&cfg).unwrap();
        for frame in [0u64, 17, 60] {
            let a = render_scan(&world, frame);
            let b = render_scan(&world, frame);
            let mut ba = Vec::new();
            let mut bb = Vec::new();
            write_scan(&a, &mut ba).unwrap();
            write_scan(&b, &mut bb).unwrap();
            assert_eq!(ba, bb);
        }
    }

    #[test]
    fn noiseless_points_lie_on_surfaces_and_within_range() {
        let mut cfg = ScenarioConfig::smoke(3);
        cfg.coord_noise_sigma = 0.0;
        cfg.pedestrians_per_day = 0;
        cfg.cyclists_per_day = 0;
        let world = generate_world(&cfg).unwrap();
        let scan = render_scan(&world, 30);
        assert!(!scan.points.is_empty());
        for p in &scan.points {
            let range = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
            assert!(range <= cfg.max_range + 1e-9);
        }
        // Points mapped back to the world frame must sit on some object
        // surface; check z stays within object height bounds as a proxy
        // plus exact containment for the walls (axis-aligned boxes).
        for p in &scan.points {
            let w = scan.pose.transform(*p);
            assert!(w[2] >= -1e-9 && w[2] <= 2.6);
        }
    }

    #[test]
    fn objects_beyond_range_contribute_no_points() {
        let mut cfg = ScenarioConfig::smoke(4);
        cfg.pedestrians_per_day = 0;
        cfg.cyclists_per_day = 0;
        cfg.max_range = 3.0; // nothing but the robot's immediate vicinity
        let world = generate_world(&cfg).unwrap();
        let scan = render_scan(&world, 0);
        let sensor = scan.pose.translation;
        for p in &scan.points {
            let w = scan.pose.transform(*p);
            let d = (0..3).map(|k| (w[k] - sensor[k]).powi(2)).sum::<f64>().sqrt();
            assert!(d <= cfg.max_range + 0.2); // noise allowance
        }
        // Range-filter oracle: rendering with a huge range then filtering
        // by distance must give a superset of the small-range scan.
        let mut far_cfg = cfg.clone();
        far_cfg.max_range = 100.0;
        let far_world = generate_world(&far_cfg).unwrap();
        let far = render_scan(&far_world, 0);
        assert!(far.points.len() >= scan.points.len());
    }

    #[test]
    fn every_point_label_matches_a_generating_class() {
        let cfg = ScenarioConfig::smoke(5);
        let world = generate_world(&cfg).unwrap();
        let scan = render_scan(&world, 40);
        let labels = scan.labels.as_ref().unwrap();
        assert_eq!(labels.len(), scan.points.len());
        for l in labels {
            assert!(*l != SemanticClass::DontCare);
        }
    }

    #[test]
    fn point_budget_is_enforced() {
        let mut cfg = ScenarioConfig::smoke(6);
        cfg.max_points_per_scan = 50;
        let world = generate_world(&cfg).unwrap();
        for frame in 0..20 {
            assert!(render_scan(&world, frame).points.len() <= 50);
        }
    }
}
