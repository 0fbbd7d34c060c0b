//! Synthetic-shapes corpus for training the single-scan classifier: isolated
//! cars, pedestrians, cyclists and wall patches scattered around the sensor.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::render::gaussian;
use super::world::{surface_point, Shape};
use crate::perception::{Point3, PointCloudScan, Pose, SemanticClass};
use crate::rng::stream_rng;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShapesCorpusConfig {
    pub scans: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub seed: u64,
    /// Points per square meter of surface.
    pub point_density: f64,
    pub noise_sigma: f64,
    /// Placement annulus around the sensor, meters.
    pub min_range: f64,
    pub max_range: f64,
}

impl Default for ShapesCorpusConfig {
    fn default() -> Self {
        ShapesCorpusConfig {
            scans: 160,
            min_objects: 4,
            max_objects: 8,
            seed: 0,
            point_density: 6.0,
            noise_sigma: 0.03,
            min_range: 4.0,
            max_range: 18.0,
        }
    }
}

fn class_shape(class: SemanticClass, rng: &mut impl Rng) -> Shape {
    let scale = |rng: &mut dyn rand::RngCore, lo: f64, hi: f64| {
        lo + (hi - lo) * (rng.next_u64() as f64 / u64::MAX as f64)
    };
    match class {
        SemanticClass::Car => Shape::BoxShell {
            half: [
                scale(rng, 1.8, 2.2),
                scale(rng, 0.8, 1.0),
                scale(rng, 0.65, 0.8),
            ],
        },
        SemanticClass::Pedestrian => Shape::Cylinder {
            radius: scale(rng, 0.2, 0.3),
            height: scale(rng, 1.5, 1.85),
        },
        SemanticClass::Cyclist => Shape::BoxShell {
            half: [
                scale(rng, 0.8, 1.0),
                scale(rng, 0.25, 0.35),
                scale(rng, 0.7, 0.85),
            ],
        },
        _ => Shape::BoxShell {
            // Wall patch: long, thin, tall.
            half: [
                scale(rng, 1.5, 2.2),
                scale(rng, 0.08, 0.15),
                scale(rng, 1.0, 1.3),
            ],
        },
    }
}

fn class_density_factor(class: SemanticClass) -> f64 {
    match class {
        SemanticClass::Pedestrian => 4.0,
        SemanticClass::Cyclist => 2.0,
        _ => 1.0,
    }
}

/// One labeled training scan of isolated objects. The sensor sits at the
/// origin with identity pose.
pub fn make_shapes_scan(cfg: &ShapesCorpusConfig, index: u64) -> PointCloudScan {
    let mut rng = stream_rng(cfg.seed, &[0x60, index]);
    let n_objects = rng.random_range(cfg.min_objects..=cfg.max_objects);
    let classes = [
        SemanticClass::Background,
        SemanticClass::Car,
        SemanticClass::Pedestrian,
        SemanticClass::Cyclist,
    ];
    let mut centers: Vec<[f64; 2]> = Vec::new();
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for _ in 0..n_objects {
        let class = classes[rng.random_range(0..classes.len())];
        let shape = class_shape(class, &mut rng);
        // Rejection-place with a clearance that keeps clusters separated.
        let mut center = [0.0, 0.0];
        let mut placed = false;
        for _ in 0..60 {
            let r = rng.random_range(cfg.min_range..cfg.max_range);
            let a = rng.random_range(0.0..std::f64::consts::TAU);
            center = [r * a.cos(), r * a.sin()];
            if centers
                .iter()
                .all(|c| ((c[0] - center[0]).powi(2) + (c[1] - center[1]).powi(2)).sqrt() > 6.0)
            {
                placed = true;
                break;
            }
        }
        if !placed {
            continue;
        }
        centers.push(center);
        let yaw = rng.random_range(0.0..std::f64::consts::TAU);
        let n_points = (shape.surface_area() * cfg.point_density * class_density_factor(class))
            .ceil() as usize;
        for _ in 0..n_points {
            let p = surface_point(&shape, center, yaw, &mut rng);
            points.push([
                p[0] + cfg.noise_sigma * gaussian(&mut rng),
                p[1] + cfg.noise_sigma * gaussian(&mut rng),
                p[2] + cfg.noise_sigma * gaussian(&mut rng),
            ]);
            labels.push(class);
        }
    }
    PointCloudScan {
        timestamp: index as f64,
        pose: Pose::identity(),
        points,
        labels: Some(labels),
    }
}

pub fn make_shapes_corpus(cfg: &ShapesCorpusConfig) -> Vec<PointCloudScan> {
    (0..cfg.scans as u64)
        .map(|i| make_shapes_scan(cfg, i))
        .collect()
}

/// Rough per-object diameter check used in tests.
pub fn horizontal_extent(points: &[Point3]) -> f64 {
    let mut min = [f64::INFINITY; 2];
    let mut max = [f64::NEG_INFINITY; 2];
    for p in points {
        for k in 0..2 {
            min[k] = min[k].min(p[k]);
            max[k] = max[k].max(p[k]);
        }
    }
    ((max[0] - min[0]).powi(2) + (max[1] - min[1]).powi(2)).sqrt()
}
