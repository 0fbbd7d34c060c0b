//! Scan-to-cell observation pipeline shared by training, evaluation and the
//! CLI: cluster a scan, attach per-object semantics (either synthesized from
//! ground truth through the noise model, or inferred by the trained
//! perception networks), propagate them to points, pool per voxel, and apply
//! observation dropout.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fusion::{apply_observation, BackendKind, ObservationEvent, ObservationPayload};
use crate::neural::{LstmParams, Matrix};
use crate::perception::{
    classify_object, cluster_objectness, extract_point_features, unclustered_points,
    ClusterConfig, PerceptionModel, PointCloudScan, N_CLASSES,
};
use crate::sim::{
    cell_observed, noise_rng, synthesize_observation, ClassPrototypes, Dataset, ScenarioConfig,
    World,
};
use crate::voxmap::{bucket_points, pool_cell_feature, to_map_frame, CellKey, VoxelMap};

/// Where per-object semantics come from.
#[derive(Debug, Clone)]
pub enum ObservationSource {
    /// True labels corrupted by the scenario's confusion matrix; features are
    /// class prototypes plus jitter, likelihoods a smoothed one-hot softmax.
    Oracle {
        confusion: [[f64; N_CLASSES]; N_CLASSES],
        peak: f64,
        prototypes: ClassPrototypes,
        jitter: f64,
    },
    /// The trained single-scan networks.
    Perception { model: PerceptionModel },
}

impl ObservationSource {
    pub fn oracle_from_config(cfg: &ScenarioConfig) -> Self {
        ObservationSource::Oracle {
            confusion: cfg.confusion,
            peak: cfg.oracle_peak,
            prototypes: ClassPrototypes::generate(cfg.seed, cfg.feature_dim),
            jitter: cfg.feature_jitter,
        }
    }

    /// Dimension of the per-point feature this source emits.
    pub fn feature_dim(&self) -> usize {
        match self {
            ObservationSource::Oracle { prototypes, .. } => prototypes.dim(),
            ObservationSource::Perception { model } => model.object_feature_dim(),
        }
    }
}

/// Partition a labeled scan into true objects: spatial linkage restricted
/// to points of the same label, keeping every point (no minimum size).
/// Returned in deterministic order (label, then smallest member index).
fn label_group_objects(
    scan: &PointCloudScan,
    labels: &[crate::perception::SemanticClass],
    cluster_cfg: &ClusterConfig,
) -> Result<Vec<(crate::perception::SemanticClass, Vec<usize>)>> {
    let mut out = Vec::new();
    let mut group_cfg = *cluster_cfg;
    group_cfg.min_points = 1;
    group_cfg.ground_clear = None;
    for class in crate::perception::SemanticClass::predictable() {
        let indices: Vec<usize> = (0..scan.points.len())
            .filter(|&i| labels[i] == class)
            .collect();
        if indices.is_empty() {
            continue;
        }
        let subset: Vec<_> = indices.iter().map(|&i| scan.points[i]).collect();
        for b in cluster_objectness(&subset, &group_cfg)? {
            let members: Vec<usize> = b.members.iter().map(|&j| indices[j]).collect();
            out.push((class, members));
        }
    }
    Ok(out)
}

/// One pooled cell observation for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CellObs {
    pub feature: Vec<f64>,
    pub likelihood: Vec<f64>,
}

/// All surviving cell observations of one frame, sorted by key.
pub type FrameObservations = Vec<(CellKey, CellObs)>;

/// Run the single-scan pipeline and pool its outputs per voxel.
pub fn scan_cell_observations(
    scan: &PointCloudScan,
    cluster_cfg: &ClusterConfig,
    source: &ObservationSource,
    seed: u64,
    frame: u64,
    resolution: f64,
    dropout: f64,
) -> Result<FrameObservations> {
    scan.validate()?;
    let n = scan.points.len();
    if n == 0 {
        return Ok(Vec::new());
    }

    let feature_dim = source.feature_dim();
    let mut features = Matrix::zeros(n, feature_dim);
    let mut likelihoods = Matrix::zeros(n, N_CLASSES);
    match source {
        ObservationSource::Oracle {
            confusion,
            peak,
            prototypes,
            jitter,
        } => {
            let labels = scan.labels.as_ref().ok_or_else(|| {
                Error::Argument(
                    "oracle observations need labeled scans (synthetic data only)".into(),
                )
            })?;
            // Noise injection is per object and frame. True object identity
            // is recovered by spatial linkage within each label group, so a
            // pedestrian next to a wall is still its own object.
            let objects = label_group_objects(scan, labels, cluster_cfg)?;
            for (obj_idx, (true_class, members)) in objects.iter().enumerate() {
                let mut rng = noise_rng(seed, frame, obj_idx as u64);
                let obs = synthesize_observation(
                    *true_class,
                    confusion,
                    *peak,
                    prototypes,
                    *jitter,
                    &mut rng,
                );
                for &i in members {
                    features.row_mut(i).copy_from_slice(&obs.feature);
                    likelihoods.row_mut(i).copy_from_slice(&obs.likelihood);
                }
            }
        }
        ObservationSource::Perception { model } => {
            // Model-free objectness clustering, exactly as deployed.
            let boxes = cluster_objectness(&scan.points, cluster_cfg)?;
            let rest = unclustered_points(n, &boxes);
            let mut objects: Vec<Vec<usize>> = boxes.into_iter().map(|b| b.members).collect();
            if !rest.is_empty() {
                objects.push(rest);
            }
            let point_features = extract_point_features(&model.point_mlp, &scan.points)?;
            for members in &objects {
                let c = classify_object(&model.object_mlp, &point_features, members)?;
                for &i in members {
                    features.row_mut(i).copy_from_slice(&c.object_feature);
                    likelihoods.row_mut(i).copy_from_slice(&c.class_probs);
                }
            }
        }
    }

    let world_points = to_map_frame(scan)?;
    let mut out = Vec::new();
    for (key, members) in bucket_points(&world_points, resolution) {
        if !cell_observed(seed, frame, key, dropout) {
            continue;
        }
        out.push((
            key,
            CellObs {
                feature: pool_cell_feature(&world_points, &features, &members),
                likelihood: pool_cell_feature(&world_points, &likelihoods, &members),
            },
        ));
    }
    Ok(out)
}

/// Apply one frame's observations to the map under the given backend:
/// fusion first (the nap gate must see the previous observation stamps),
/// then the occupancy/feature/stamp update.
pub fn apply_frame(
    map: &mut VoxelMap,
    observations: &FrameObservations,
    time: f64,
    frame: u64,
    backend: BackendKind,
    params: Option<&LstmParams>,
) -> Result<()> {
    for (key, obs) in observations {
        let event = ObservationEvent {
            frame,
            time_s: time,
            payload: ObservationPayload::Both {
                likelihood: obs.likelihood.clone(),
                feature: obs.feature.clone(),
            },
        };
        match map.cell_mut(key) {
            Some(cell) => {
                apply_observation(cell, &event, backend, params, N_CLASSES)?;
                map.apply_cell_observation(*key, obs.feature.clone(), time, frame);
            }
            None => {
                map.apply_cell_observation(*key, obs.feature.clone(), time, frame);
                let cell = map.cell_mut(key).expect("cell just created");
                apply_observation(cell, &event, backend, params, N_CLASSES)?;
            }
        }
    }
    Ok(())
}

/// A scan stream: rendered on the fly from a world, or loaded from disk.
pub enum ScanProvider<'a> {
    World(&'a World),
    Dataset(&'a Dataset),
}

impl ScanProvider<'_> {
    pub fn config(&self) -> &ScenarioConfig {
        match self {
            ScanProvider::World(w) => &w.config,
            ScanProvider::Dataset(d) => &d.config,
        }
    }

    pub fn scan(&self, frame: u64) -> Result<PointCloudScan> {
        match self {
            ScanProvider::World(w) => Ok(crate::sim::render_scan(w, frame)),
            ScanProvider::Dataset(d) => d.scan(frame),
        }
    }

    pub fn ground_truth(&self, day: usize) -> Result<crate::voxmap::GroundTruthMap> {
        match self {
            ScanProvider::World(w) => Ok(crate::sim::build_ground_truth(w, day)),
            ScanProvider::Dataset(d) => d.ground_truth(day),
        }
    }
}

/// Precompute observations for a contiguous frame range in parallel.
pub fn observations_for_frames(
    provider: &ScanProvider,
    source: &ObservationSource,
    cluster_cfg: &ClusterConfig,
    frames: std::ops::Range<u64>,
) -> Result<Vec<(u64, FrameObservations)>> {
    let cfg = provider.config();
    frames
        .collect::<Vec<u64>>()
        .par_iter()
        .map(|&frame| {
            let scan = provider.scan(frame)?;
            let obs = scan_cell_observations(
                &scan,
                cluster_cfg,
                source,
                cfg.seed,
                frame,
                cfg.resolution,
                cfg.dropout,
            )?;
            Ok((frame, obs))
        })
        .collect()
}
