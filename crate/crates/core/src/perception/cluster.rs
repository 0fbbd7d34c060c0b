//! Model-free objectness detection: single-linkage Euclidean clustering with
//! a range-adaptive distance threshold.
//!
//! Two points link when their distance is at most `base + gain * r`, where
//! `r` is the sensor range of the nearer point. Sparse distant returns thus
//! cluster with a looser threshold than dense nearby ones.

use serde::{Deserialize, Serialize};

use super::scan::Point3;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ClusterConfig {
    /// Linkage threshold at zero range, meters.
    pub base_threshold: f64,
    /// Additional threshold per meter of range.
    pub range_gain: f64,
    /// Clusters smaller than this are discarded (their points stay
    /// unclustered).
    pub min_points: usize,
    /// Points below this height are discarded before clustering (crude
    /// ground removal); `None` keeps everything.
    pub ground_clear: Option<f64>,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            base_threshold: 0.3,
            range_gain: 0.01,
            min_points: 5,
            ground_clear: None,
        }
    }
}

/// An axis-aligned box around one cluster, with member point indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectnessBox {
    pub min: Point3,
    pub max: Point3,
    /// Indices into the scan's point list, ascending.
    pub members: Vec<usize>,
}

impl ObjectnessBox {
    pub fn contains(&self, p: Point3) -> bool {
        (0..3).all(|k| self.min[k] <= p[k] && p[k] <= self.max[k])
    }
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // Deterministic: smaller root wins.
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

#[inline]
fn dist2(a: Point3, b: Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[inline]
fn range(p: Point3) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

/// Pair linkage predicate shared with the brute-force oracle in tests.
#[inline]
pub fn linked(a: Point3, b: Point3, cfg: &ClusterConfig) -> bool {
    let threshold = cfg.base_threshold + cfg.range_gain * range(a).min(range(b));
    dist2(a, b) <= threshold * threshold
}

/// Partition `points` (sensor frame) into objectness boxes.
///
/// Returns the boxes ordered by their smallest member index. Points filtered
/// by `ground_clear` or belonging to clusters below `min_points` appear in no
/// box.
pub fn cluster_objectness(points: &[Point3], cfg: &ClusterConfig) -> Result<Vec<ObjectnessBox>> {
    if cfg.base_threshold <= 0.0 || cfg.range_gain < 0.0 {
        return Err(Error::Config(
            "cluster thresholds must be positive".into(),
        ));
    }
    let keep: Vec<usize> = (0..points.len())
        .filter(|&i| cfg.ground_clear.is_none_or(|h| points[i][2] >= h))
        .collect();
    if keep.is_empty() {
        return Ok(Vec::new());
    }
    // The linkage radius is bounded by the threshold at the maximum range.
    let max_range = keep.iter().map(|&i| range(points[i])).fold(0.0, f64::max);
    let cell = cfg.base_threshold + cfg.range_gain * max_range;
    let key = |p: Point3| -> (i64, i64, i64) {
        (
            (p[0] / cell).floor() as i64,
            (p[1] / cell).floor() as i64,
            (p[2] / cell).floor() as i64,
        )
    };
    let mut grid: std::collections::HashMap<(i64, i64, i64), Vec<usize>> =
        std::collections::HashMap::new();
    for (slot, &i) in keep.iter().enumerate() {
        grid.entry(key(points[i])).or_default().push(slot);
    }
    let mut dsu = DisjointSet::new(keep.len());
    for (slot, &i) in keep.iter().enumerate() {
        let (kx, ky, kz) = key(points[i]);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(bucket) = grid.get(&(kx + dx, ky + dy, kz + dz)) else {
                        continue;
                    };
                    for &other in bucket {
                        if other <= slot {
                            continue;
                        }
                        if linked(points[i], points[keep[other]], cfg) {
                            dsu.union(slot, other);
                        }
                    }
                }
            }
        }
    }
    let mut groups: std::collections::HashMap<usize, Vec<usize>> = std::collections::HashMap::new();
    for slot in 0..keep.len() {
        let root = dsu.find(slot);
        groups.entry(root).or_default().push(keep[slot]);
    }
    let mut boxes: Vec<ObjectnessBox> = groups
        .into_values()
        .filter(|members| members.len() >= cfg.min_points)
        .map(|mut members| {
            members.sort_unstable();
            let mut min = [f64::INFINITY; 3];
            let mut max = [f64::NEG_INFINITY; 3];
            for &i in &members {
                for k in 0..3 {
                    min[k] = min[k].min(points[i][k]);
                    max[k] = max[k].max(points[i][k]);
                }
            }
            ObjectnessBox { min, max, members }
        })
        .collect();
    boxes.sort_by_key(|b| b.members[0]);
    Ok(boxes)
}

/// Indices of points that ended up in no box.
pub fn unclustered_points(n_points: usize, boxes: &[ObjectnessBox]) -> Vec<usize> {
    let mut in_box = vec![false; n_points];
    for b in boxes {
        for &i in &b.members {
            in_box[i] = true;
        }
    }
    (0..n_points).filter(|&i| !in_box[i]).collect()
}
