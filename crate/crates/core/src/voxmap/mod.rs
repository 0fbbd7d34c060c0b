//! Sparse voxel map: occupancy log-odds, pooled semantic feature, recurrent
//! state, class probabilities and last-observation bookkeeping per cell.
//!
//! Storage is a flat hash map keyed by integer voxel coordinates. Occupancy
//! follows the usual log-odds hit/clamp scheme; cells unobserved longer than
//! the retention window are dropped entirely (occupancy, feature and
//! recurrent state).

pub mod snapshot;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::{LstmState, Matrix};
use crate::perception::{Point3, PointCloudScan, SemanticClass};

pub use snapshot::{load_map, save_map};

/// Integer voxel coordinates: `floor(world / resolution)` per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellKey {
    pub ix: i32,
    pub iy: i32,
    pub iz: i32,
}

impl CellKey {
    pub fn from_point(p: Point3, resolution: f64) -> Self {
        CellKey {
            ix: (p[0] / resolution).floor() as i32,
            iy: (p[1] / resolution).floor() as i32,
            iz: (p[2] / resolution).floor() as i32,
        }
    }

    /// Lower corner of the voxel's axis-aligned bounds.
    pub fn min_corner(&self, resolution: f64) -> Point3 {
        [
            self.ix as f64 * resolution,
            self.iy as f64 * resolution,
            self.iz as f64 * resolution,
        ]
    }

    pub fn center(&self, resolution: f64) -> Point3 {
        let c = self.min_corner(resolution);
        [
            c[0] + resolution / 2.0,
            c[1] + resolution / 2.0,
            c[2] + resolution / 2.0,
        ]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MapConfig {
    pub resolution: f64,
    /// Seconds a cell survives without observations.
    pub retention_window: f64,
    pub hit_logodds: f64,
    pub miss_logodds: f64,
    pub clamp_min: f64,
    pub clamp_max: f64,
    /// Decrement cells along sensor rays. Off by default; the fusion
    /// pipeline never consumes free-space occupancy.
    pub ray_updates: bool,
}

impl Default for MapConfig {
    fn default() -> Self {
        MapConfig {
            resolution: 0.4,
            retention_window: 300.0,
            hit_logodds: 0.85,
            miss_logodds: -0.4,
            clamp_min: -3.5,
            clamp_max: 3.5,
            ray_updates: false,
        }
    }
}

impl MapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolution <= 0.0 {
            return Err(Error::Config("resolution must be positive".into()));
        }
        if self.retention_window < 0.0 {
            return Err(Error::Config("retention window must be non-negative".into()));
        }
        if self.clamp_min >= self.clamp_max {
            return Err(Error::Config("occupancy clamp bounds are inverted".into()));
        }
        Ok(())
    }
}

/// One voxel's stored state.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub occupancy_logodds: f64,
    /// Mean of member-point features from the most recent observation.
    pub feature: Vec<f64>,
    /// Recurrent fusion state; `None` until a recurrent backend touches it.
    pub state: Option<LstmState>,
    /// Current class probabilities; empty until a fusion backend runs.
    pub prob: Vec<f64>,
    /// Accumulated per-class log evidence for the Bayesian backend; empty
    /// when unused. Kept unnormalized so chained updates floor each incoming
    /// factor exactly once.
    pub bayes_log: Vec<f64>,
    pub last_obs_time: f64,
    pub last_obs_frame: u64,
    pub gt_label: Option<SemanticClass>,
}

impl Cell {
    fn fresh(time: f64, frame: u64) -> Self {
        Cell {
            occupancy_logodds: 0.0,
            feature: Vec::new(),
            state: None,
            prob: Vec::new(),
            bayes_log: Vec::new(),
            last_obs_time: time,
            last_obs_frame: frame,
            gt_label: None,
        }
    }

    pub fn predicted_class(&self) -> Option<SemanticClass> {
        if self.prob.is_empty() {
            return None;
        }
        let idx = self
            .prob
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        SemanticClass::from_id(idx as u8).ok()
    }
}

#[derive(Debug, Clone)]
pub struct VoxelMap {
    pub config: MapConfig,
    cells: HashMap<CellKey, Cell>,
    latest_time: f64,
}

/// Map sensor-frame scan points into the map frame using the scan's pose.
///
/// The pose must carry an orthonormal rotation; the round trip through
/// `pose.inverse()` reproduces inputs to well below 1e-9 m.
pub fn to_map_frame(scan: &PointCloudScan) -> Result<Vec<Point3>> {
    scan.pose.validate()?;
    Ok(scan.points.iter().map(|p| scan.pose.transform(*p)).collect())
}

/// Group point indices by voxel key; returns keys in sorted order.
pub fn bucket_points(points: &[Point3], resolution: f64) -> Vec<(CellKey, Vec<usize>)> {
    let mut buckets: HashMap<CellKey, Vec<usize>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        buckets
            .entry(CellKey::from_point(*p, resolution))
            .or_default()
            .push(i);
    }
    let mut out: Vec<(CellKey, Vec<usize>)> = buckets.into_iter().collect();
    out.sort_by_key(|(k, _)| *k);
    out
}

/// Mean of the member rows, summed in a content-determined order so the
/// result is bitwise identical under any permutation of the scan's points.
pub fn pool_cell_feature(points: &[Point3], rows: &Matrix, members: &[usize]) -> Vec<f64> {
    let mut order: Vec<usize> = members.to_vec();
    order.sort_by(|&a, &b| {
        let ka = (
            points[a][0].to_bits(),
            points[a][1].to_bits(),
            points[a][2].to_bits(),
        );
        let kb = (
            points[b][0].to_bits(),
            points[b][1].to_bits(),
            points[b][2].to_bits(),
        );
        ka.cmp(&kb).then_with(|| {
            let ra = rows.row(a);
            let rb = rows.row(b);
            for (x, y) in ra.iter().zip(rb) {
                match x.to_bits().cmp(&y.to_bits()) {
                    std::cmp::Ordering::Equal => continue,
                    other => return other,
                }
            }
            std::cmp::Ordering::Equal
        })
    });
    let mut sum = vec![0.0; rows.cols()];
    for &i in &order {
        for (s, v) in sum.iter_mut().zip(rows.row(i)) {
            *s += v;
        }
    }
    let n = members.len() as f64;
    for s in &mut sum {
        *s /= n;
    }
    sum
}

impl VoxelMap {
    pub fn new(config: MapConfig) -> Self {
        VoxelMap {
            config,
            cells: HashMap::new(),
            latest_time: f64::NEG_INFINITY,
        }
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn latest_time(&self) -> f64 {
        self.latest_time
    }

    pub fn cell(&self, key: &CellKey) -> Option<&Cell> {
        self.cells.get(key)
    }

    pub fn cell_mut(&mut self, key: &CellKey) -> Option<&mut Cell> {
        self.cells.get_mut(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&CellKey, &Cell)> {
        self.cells.iter()
    }

    /// Cells in key order; use for serialization and content comparison.
    pub fn sorted_cells(&self) -> Vec<(&CellKey, &Cell)> {
        let mut v: Vec<_> = self.cells.iter().collect();
        v.sort_by_key(|(k, _)| **k);
        v
    }

    /// Equality of content regardless of hash iteration order.
    pub fn content_eq(&self, other: &VoxelMap) -> bool {
        self.len() == other.len()
            && self
                .sorted_cells()
                .into_iter()
                .zip(other.sorted_cells())
                .all(|((ka, ca), (kb, cb))| ka == kb && ca == cb)
    }

    /// Touch a cell with one pooled observation (the fusion layer updates
    /// `state`/`prob` separately). Creates the cell if needed.
    pub fn apply_cell_observation(
        &mut self,
        key: CellKey,
        feature: Vec<f64>,
        time: f64,
        frame: u64,
    ) -> &mut Cell {
        let cfg_hit = self.config.hit_logodds;
        let (lo, hi) = (self.config.clamp_min, self.config.clamp_max);
        let cell = self.cells.entry(key).or_insert_with(|| Cell::fresh(time, frame));
        cell.occupancy_logodds = (cell.occupancy_logodds + cfg_hit).clamp(lo, hi);
        cell.feature = feature;
        cell.last_obs_time = time;
        cell.last_obs_frame = frame;
        self.latest_time = self.latest_time.max(time);
        self.cells.get_mut(&key).expect("cell just inserted")
    }

    /// Insert one scan already transformed to the map frame.
    ///
    /// `features` carries one row per point (the propagated semantic
    /// features); each occupied cell receives their arithmetic mean, one
    /// occupancy hit, and an updated observation stamp.
    pub fn insert_scan(
        &mut self,
        points: &[Point3],
        features: &Matrix,
        time: f64,
        frame: u64,
    ) -> Result<()> {
        if features.rows() != points.len() {
            return Err(Error::Argument(format!(
                "{} points but {} feature rows",
                points.len(),
                features.rows()
            )));
        }
        if self.latest_time.is_finite() && time < self.latest_time {
            return Err(Error::Argument(format!(
                "stale scan timestamp {time} precedes map time {}",
                self.latest_time
            )));
        }
        for (key, members) in bucket_points(points, self.config.resolution) {
            let feature = pool_cell_feature(points, features, &members);
            self.apply_cell_observation(key, feature, time, frame);
        }
        Ok(())
    }

    /// Drop every cell unobserved for longer than the retention window.
    /// A cell exactly at the window boundary is retained.
    pub fn prune_expired(&mut self, now: f64) {
        let window = self.config.retention_window;
        self.cells
            .retain(|_, cell| now - cell.last_obs_time <= window);
    }
}

/// Per-day ground-truth labels in the same voxel indexing.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthMap {
    pub resolution: f64,
    pub labels: HashMap<CellKey, SemanticClass>,
}

impl GroundTruthMap {
    pub fn new(resolution: f64) -> Self {
        GroundTruthMap {
            resolution,
            labels: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Represent as a voxel map with only key and label populated, for the
    /// shared snapshot container.
    pub fn to_voxel_map(&self) -> VoxelMap {
        let mut map = VoxelMap::new(MapConfig {
            resolution: self.resolution,
            ..MapConfig::default()
        });
        for (key, label) in &self.labels {
            let mut cell = Cell::fresh(0.0, 0);
            cell.gt_label = Some(*label);
            map.cells.insert(*key, cell);
        }
        map
    }

    pub fn from_voxel_map(map: &VoxelMap) -> Self {
        let mut labels = HashMap::new();
        for (key, cell) in map.iter() {
            if let Some(label) = cell.gt_label {
                labels.insert(*key, label);
            }
        }
        GroundTruthMap {
            resolution: map.config.resolution,
            labels,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::Pose;
    use crate::rng::stream_rng;
    use rand::Rng;

    #[test]
    fn identity_pose_leaves_points_unchanged() {
        let scan = PointCloudScan {
            timestamp: 0.0,
            pose: Pose::identity(),
            points: vec![[1.0, 2.0, 3.0]],
            labels: None,
        };
        assert_eq!(to_map_frame(&scan).unwrap(), vec![[1.0, 2.0, 3.0]]);
    }

    #[test]
    fn pure_translation_moves_origin() {
        let scan = PointCloudScan {
            timestamp: 0.0,
            pose: Pose {
                rotation: [1.0, 0.0, 0.0, 0.0],
                translation: [1.0, 2.0, 3.0],
            },
            points: vec![[0.0, 0.0, 0.0]],
            labels: None,
        };
        assert_eq!(to_map_frame(&scan).unwrap(), vec![[1.0, 2.0, 3.0]]);
    }

    #[test]
    fn random_pose_roundtrip_under_1e9() {
        let mut rng = stream_rng(21, &[0]);
        for _ in 0..50 {
            let pose = Pose::from_yaw(
                [
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-2.0..2.0),
                ],
                rng.random_range(0.0..std::f64::consts::TAU),
            );
            let p = [
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
                rng.random_range(0.0..3.0),
            ];
            let there = pose.transform(p);
            let back = pose.inverse().transform(there);
            for k in 0..3 {
                assert!((p[k] - back[k]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn non_orthonormal_rotation_is_rejected() {
        let scan = PointCloudScan {
            timestamp: 0.0,
            pose: Pose {
                rotation: [1.0, 0.1, 0.0, 0.0],
                translation: [0.0; 3],
            },
            points: vec![],
            labels: None,
        };
        assert!(matches!(to_map_frame(&scan), Err(Error::Argument(_))));
    }

    #[test]
    fn identical_points_pool_to_their_feature() {
        let mut map = VoxelMap::new(MapConfig::default());
        let pts = vec![[0.1, 0.1, 0.1], [0.1, 0.1, 0.1]];
        let feats = Matrix::from_rows(&[vec![2.0, -3.0], vec![2.0, -3.0]]).unwrap();
        map.insert_scan(&pts, &feats, 0.0, 0).unwrap();
        let key = CellKey::from_point([0.1, 0.1, 0.1], 0.4);
        assert_eq!(map.cell(&key).unwrap().feature, vec![2.0, -3.0]);
    }

    #[test]
    fn two_features_average() {
        let mut map = VoxelMap::new(MapConfig::default());
        let pts = vec![[0.05, 0.0, 0.0], [0.15, 0.0, 0.0]];
        let feats = Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        map.insert_scan(&pts, &feats, 0.0, 0).unwrap();
        let key = CellKey::from_point([0.05, 0.0, 0.0], 0.4);
        assert_eq!(map.cell(&key).unwrap().feature, vec![0.5, 0.5]);
    }

    #[test]
    fn cell_means_match_group_by_oracle_and_permutation_is_bitwise() {
        let mut rng = stream_rng(31, &[0]);
        let n = 400;
        let pts: Vec<Point3> = (0..n)
            .map(|_| {
                [
                    rng.random_range(-5.0..5.0),
                    rng.random_range(-5.0..5.0),
                    rng.random_range(0.0..2.0),
                ]
            })
            .collect();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let feats = Matrix::from_rows(&rows).unwrap();
        let mut map = VoxelMap::new(MapConfig::default());
        map.insert_scan(&pts, &feats, 0.0, 0).unwrap();

        // Brute-force group-by oracle with exact mean bounds (1e-12 slack for
        // the different summation order).
        let mut groups: HashMap<CellKey, Vec<usize>> = HashMap::new();
        for (i, p) in pts.iter().enumerate() {
            groups.entry(CellKey::from_point(*p, 0.4)).or_default().push(i);
        }
        assert_eq!(groups.len(), map.len());
        for (key, members) in &groups {
            let mut mean = vec![0.0; 4];
            for &i in members {
                for (m, v) in mean.iter_mut().zip(&rows[i]) {
                    *m += v;
                }
            }
            for m in &mut mean {
                *m /= members.len() as f64;
            }
            let got = &map.cell(key).unwrap().feature;
            for (a, b) in got.iter().zip(&mean) {
                assert!((a - b).abs() < 1e-12);
            }
        }

        // Permuting the scan's points yields a bitwise-identical map.
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = rng.random_range(0..=i);
            perm.swap(i, j);
        }
        let pts2: Vec<Point3> = perm.iter().map(|&i| pts[i]).collect();
        let rows2: Vec<Vec<f64>> = perm.iter().map(|&i| rows[i].clone()).collect();
        let feats2 = Matrix::from_rows(&rows2).unwrap();
        let mut map2 = VoxelMap::new(MapConfig::default());
        map2.insert_scan(&pts2, &feats2, 0.0, 0).unwrap();
        assert!(map.content_eq(&map2));
    }

    #[test]
    fn occupancy_stays_clamped() {
        let mut map = VoxelMap::new(MapConfig::default());
        let pts = vec![[0.0, 0.0, 0.0]];
        let feats = Matrix::zeros(1, 1);
        for t in 0..10 {
            map.insert_scan(&pts, &feats, t as f64, t).unwrap();
        }
        let key = CellKey::from_point([0.0, 0.0, 0.0], 0.4);
        assert_eq!(map.cell(&key).unwrap().occupancy_logodds, 3.5);
    }

    #[test]
    fn stale_timestamp_is_rejected() {
        let mut map = VoxelMap::new(MapConfig::default());
        let pts = vec![[0.0, 0.0, 0.0]];
        let feats = Matrix::zeros(1, 1);
        map.insert_scan(&pts, &feats, 5.0, 0).unwrap();
        assert!(matches!(
            map.insert_scan(&pts, &feats, 4.0, 1),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn retention_boundary_is_inclusive() {
        let mut map = VoxelMap::new(MapConfig::default());
        let feats = Matrix::zeros(1, 1);
        map.insert_scan(&[[0.0, 0.0, 0.0]], &feats, 0.0, 0).unwrap();
        map.insert_scan(&[[10.0, 0.0, 0.0]], &feats, 1.0, 1).unwrap();
        // First cell last seen 300s ago exactly: retained. 301s: dropped.
        let mut at_300 = map.clone();
        at_300.prune_expired(300.0);
        assert_eq!(at_300.len(), 2);
        let mut at_301 = map.clone();
        at_301.prune_expired(301.0);
        assert_eq!(at_301.len(), 1);
        assert!(at_301
            .cell(&CellKey::from_point([10.0, 0.0, 0.0], 0.4))
            .is_some());
    }

    #[test]
    fn prune_matches_filter_oracle() {
        let mut rng = stream_rng(33, &[0]);
        let mut map = VoxelMap::new(MapConfig::default());
        let feats = Matrix::zeros(1, 1);
        let mut times = Vec::new();
        for i in 0..200 {
            let t = rng.random_range(0.0..1000.0);
            times.push(t);
            let p = [i as f64, 0.0, 0.0];
            map.apply_cell_observation(CellKey::from_point(p, 0.4), vec![0.0], t, i as u64);
        }
        let _ = feats;
        let now = 900.0;
        let expected: std::collections::HashSet<usize> = (0..200)
            .filter(|&i| now - times[i] <= 300.0)
            .collect();
        map.prune_expired(now);
        assert_eq!(map.len(), expected.len());
        for i in expected {
            let key = CellKey::from_point([i as f64, 0.0, 0.0], 0.4);
            assert!(map.cell(&key).is_some());
        }
    }

    #[test]
    fn storage_is_sparse_and_keys_are_floor_quantized() {
        let mut map = VoxelMap::new(MapConfig::default());
        let pts = vec![[-0.1, 0.39, 0.41], [3.0, -3.0, 0.0]];
        let feats = Matrix::zeros(2, 1);
        map.insert_scan(&pts, &feats, 0.0, 0).unwrap();
        assert_eq!(map.len(), 2);
        for p in pts {
            assert!(map.cell(&CellKey::from_point(p, 0.4)).is_some());
        }
        assert!(map.cell(&CellKey { ix: 50, iy: 50, iz: 50 }).is_none());
    }
}
