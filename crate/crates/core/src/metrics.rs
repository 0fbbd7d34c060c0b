//! Voxel-level evaluation: confusion accumulation against ground truth and
//! the three derived metrics (overall accuracy, mean accuracy, mean IoU).
//!
//! Don't-care ground-truth cells are excluded; ground-truth cells missing
//! from the predicted map count as background predictions; classes with zero
//! ground-truth support are excluded from the per-class means.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::perception::{SemanticClass, N_CLASSES};
use crate::voxmap::{GroundTruthMap, VoxelMap};

/// Counts `n[i][j]`: voxels of true class `i` predicted as class `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    n_cl: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n_cl: usize) -> Self {
        ConfusionMatrix {
            n_cl,
            counts: vec![0; n_cl * n_cl],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.n_cl
    }

    pub fn count(&self, true_class: usize, predicted: usize) -> u64 {
        self.counts[true_class * self.n_cl + predicted]
    }

    pub fn add(&mut self, true_class: usize, predicted: usize) {
        self.counts[true_class * self.n_cl + predicted] += 1;
    }

    /// Total ground-truth voxels of class `i`.
    pub fn support(&self, true_class: usize) -> u64 {
        (0..self.n_cl).map(|j| self.count(true_class, j)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Elementwise merge of partial matrices.
    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.n_cl, other.n_cl);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        (0..self.n_cl)
            .map(|i| (0..self.n_cl).map(|j| self.count(i, j)).collect())
            .collect()
    }
}

/// Compare a predicted map against one day's ground truth.
///
/// For every ground-truth cell that is not don't-care: if the predicted map
/// holds the cell (with probabilities), its argmax class is counted;
/// otherwise the cell counts as a background prediction.
pub fn accumulate(
    cm: &mut ConfusionMatrix,
    predicted: &VoxelMap,
    gt: &GroundTruthMap,
) -> Result<()> {
    if (predicted.config.resolution - gt.resolution).abs() > 1e-12 {
        return Err(Error::Argument(format!(
            "resolution mismatch: predicted {} vs ground truth {}",
            predicted.config.resolution, gt.resolution
        )));
    }
    if cm.n_cl != N_CLASSES {
        return Err(Error::Argument(format!(
            "confusion matrix has {} classes, expected {}",
            cm.n_cl, N_CLASSES
        )));
    }
    for (key, label) in &gt.labels {
        if *label == SemanticClass::DontCare {
            continue;
        }
        let predicted_class = predicted
            .cell(key)
            .and_then(|c| c.predicted_class())
            .unwrap_or(SemanticClass::Background);
        cm.add(label.index(), predicted_class.index());
    }
    Ok(())
}

/// All three metrics of one confusion matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub overall_accuracy: f64,
    pub mean_accuracy: f64,
    pub mean_iou: f64,
}

pub fn overall_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::UndefinedMetric(
            "overall accuracy of an empty confusion matrix".into(),
        ));
    }
    let diag: u64 = (0..cm.n_cl).map(|i| cm.count(i, i)).sum();
    Ok(diag as f64 / total as f64)
}

/// Mean of per-class recall over classes with nonzero support.
pub fn mean_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let mut sum = 0.0;
    let mut classes = 0usize;
    for i in 0..cm.n_cl {
        let support = cm.support(i);
        if support == 0 {
            continue;
        }
        sum += cm.count(i, i) as f64 / support as f64;
        classes += 1;
    }
    if classes == 0 {
        return Err(Error::UndefinedMetric(
            "mean accuracy of an empty confusion matrix".into(),
        ));
    }
    Ok(sum / classes as f64)
}

/// Mean intersection-over-union over classes with nonzero support.
pub fn mean_iou(cm: &ConfusionMatrix) -> Result<f64> {
    let mut sum = 0.0;
    let mut classes = 0usize;
    for i in 0..cm.n_cl {
        let support = cm.support(i);
        if support == 0 {
            continue;
        }
        let predicted_as_i: u64 = (0..cm.n_cl).map(|j| cm.count(j, i)).sum();
        let diag = cm.count(i, i);
        let union = support + predicted_as_i - diag;
        sum += diag as f64 / union as f64;
        classes += 1;
    }
    if classes == 0 {
        return Err(Error::UndefinedMetric(
            "mean IoU of an empty confusion matrix".into(),
        ));
    }
    Ok(sum / classes as f64)
}

pub fn report(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    Ok(MetricsReport {
        overall_accuracy: overall_accuracy(cm)?,
        mean_accuracy: mean_accuracy(cm)?,
        mean_iou: mean_iou(cm)?,
    })
}

/// One evaluation row: day, backend tag, MNTD tag, metrics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsRow {
    pub day: usize,
    pub backend: String,
    pub mntd: String,
    pub metrics: MetricsReport,
}

/// CSV report: one row per (day, backend, MNTD).
pub fn write_metrics_csv(out: &mut dyn std::io::Write, rows: &[MetricsRow]) -> Result<()> {
    let io_err = |e: std::io::Error| Error::io("<metrics csv>", e);
    writeln!(out, "day,backend,mntd,overall_accuracy,mean_accuracy,mean_iou").map_err(io_err)?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.day,
            r.backend,
            r.mntd,
            r.metrics.overall_accuracy,
            r.metrics.mean_accuracy,
            r.metrics.mean_iou
        )
        .map_err(io_err)?;
    }
    Ok(())
}

/// JSON variant carrying the full confusion matrix per row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsJsonRow {
    pub day: usize,
    pub backend: String,
    pub mntd: String,
    pub metrics: MetricsReport,
    pub confusion: Vec<Vec<u64>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use crate::voxmap::{CellKey, MapConfig};
    use rand::Rng;

    fn from_rows(rows: &[[u64; 2]]) -> ConfusionMatrix {
        let mut cm = ConfusionMatrix::new(2);
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                for _ in 0..v {
                    cm.add(i, j);
                }
            }
        }
        cm
    }

    #[test]
    fn diagonal_matrix_scores_one_everywhere() {
        let mut cm = ConfusionMatrix::new(4);
        for i in 0..4 {
            for _ in 0..(i + 1) * 3 {
                cm.add(i, i);
            }
        }
        let r = report(&cm).unwrap();
        assert_eq!(r.overall_accuracy, 1.0);
        assert_eq!(r.mean_accuracy, 1.0);
        assert_eq!(r.mean_iou, 1.0);
    }

    #[test]
    fn two_class_fixture_matches_exact_rationals() {
        // counts [[3,1],[1,5]]: overall 8/10, mean (3/4 + 5/6)/2,
        // mIoU (3/5 + 5/7)/2.
        let cm = from_rows(&[[3, 1], [1, 5]]);
        let r = report(&cm).unwrap();
        assert!((r.overall_accuracy - 0.8).abs() < 1e-15);
        assert!((r.mean_accuracy - (3.0 / 4.0 + 5.0 / 6.0) / 2.0).abs() < 1e-15);
        assert!((r.mean_iou - (3.0 / 5.0 + 5.0 / 7.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn zero_support_classes_are_excluded_from_means() {
        let mut cm = ConfusionMatrix::new(3);
        cm.add(0, 0);
        cm.add(0, 0);
        cm.add(1, 0);
        cm.add(1, 1);
        // class 2 has no ground-truth voxels
        let mean = mean_accuracy(&cm).unwrap();
        assert!((mean - (1.0 + 0.5) / 2.0).abs() < 1e-15);
        let iou = mean_iou(&cm).unwrap();
        assert!((iou - (2.0 / 3.0 + 1.0 / 2.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn empty_matrix_is_undefined() {
        let cm = ConfusionMatrix::new(4);
        assert!(matches!(
            overall_accuracy(&cm),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn metrics_are_invariant_under_class_permutation() {
        let mut rng = stream_rng(81, &[0]);
        for _ in 0..100 {
            let mut cm = ConfusionMatrix::new(4);
            for i in 0..4 {
                for j in 0..4 {
                    let v = rng.random_range(0..20u64);
                    for _ in 0..v {
                        cm.add(i, j);
                    }
                }
            }
            let mut perm: Vec<usize> = (0..4).collect();
            for i in (1..4).rev() {
                let j = rng.random_range(0..=i);
                perm.swap(i, j);
            }
            let mut permuted = ConfusionMatrix::new(4);
            for i in 0..4 {
                for j in 0..4 {
                    for _ in 0..cm.count(i, j) {
                        permuted.add(perm[i], perm[j]);
                    }
                }
            }
            if cm.total() == 0 {
                continue;
            }
            let a = report(&cm).unwrap();
            let b = report(&permuted).unwrap();
            assert!((a.overall_accuracy - b.overall_accuracy).abs() < 1e-12);
            assert!((a.mean_accuracy - b.mean_accuracy).abs() < 1e-12);
            assert!((a.mean_iou - b.mean_iou).abs() < 1e-12);
        }
    }

    #[test]
    fn miou_is_bounded_by_mean_accuracy() {
        let mut rng = stream_rng(82, &[0]);
        for _ in 0..10_000 {
            let mut cm = ConfusionMatrix::new(4);
            let mut any = false;
            for i in 0..4 {
                for j in 0..4 {
                    let v = rng.random_range(0..6u64);
                    any |= v > 0;
                    for _ in 0..v {
                        cm.add(i, j);
                    }
                }
            }
            if !any {
                continue;
            }
            let r = report(&cm).unwrap();
            assert!(r.mean_iou <= r.mean_accuracy + 1e-12);
            assert!(r.mean_accuracy <= 1.0 + 1e-12);
            assert!(r.overall_accuracy <= 1.0 + 1e-12);
            assert!(r.mean_iou >= 0.0);
        }
    }

    #[test]
    fn accumulate_is_additive_over_map_pairs() {
        let mut rng = stream_rng(83, &[0]);
        let build = |seed: u64| {
            let mut rng = stream_rng(seed, &[1]);
            let mut map = VoxelMap::new(MapConfig::default());
            let mut gt = GroundTruthMap::new(0.4);
            for i in 0..60 {
                let key = CellKey { ix: i, iy: 0, iz: 0 };
                let label = SemanticClass::from_id(rng.random_range(0..5u8)).unwrap();
                gt.labels.insert(key, label);
                if rng.random_range(0.0..1.0) < 0.8 {
                    let cell = map.apply_cell_observation(key, vec![], 0.0, 0);
                    let mut prob = vec![0.0; 4];
                    prob[rng.random_range(0..4usize)] = 1.0;
                    cell.prob = prob;
                }
            }
            (map, gt)
        };
        let (m1, g1) = build(rng.random());
        let (m2, g2) = build(rng.random());
        let mut joint = ConfusionMatrix::new(4);
        accumulate(&mut joint, &m1, &g1).unwrap();
        accumulate(&mut joint, &m2, &g2).unwrap();
        let mut a = ConfusionMatrix::new(4);
        accumulate(&mut a, &m1, &g1).unwrap();
        let mut b = ConfusionMatrix::new(4);
        accumulate(&mut b, &m2, &g2).unwrap();
        a.merge(&b);
        assert_eq!(joint, a);
    }

    #[test]
    fn accumulate_matches_double_loop_oracle() {
        let mut rng = stream_rng(84, &[0]);
        let mut map = VoxelMap::new(MapConfig::default());
        let mut gt = GroundTruthMap::new(0.4);
        let mut cells = Vec::new();
        for i in 0..100 {
            let key = CellKey {
                ix: i % 10,
                iy: i / 10,
                iz: 0,
            };
            let label = SemanticClass::from_id(rng.random_range(0..5u8)).unwrap();
            gt.labels.insert(key, label);
            let predicted = if rng.random_range(0.0..1.0) < 0.7 {
                let cell = map.apply_cell_observation(key, vec![], 0.0, 0);
                let mut prob = vec![0.05; 4];
                let c = rng.random_range(0..4usize);
                prob[c] = 0.85;
                cell.prob = prob;
                Some(SemanticClass::from_id(c as u8).unwrap())
            } else {
                None
            };
            cells.push((key, label, predicted));
        }
        let mut cm = ConfusionMatrix::new(4);
        accumulate(&mut cm, &map, &gt).unwrap();
        let mut oracle = ConfusionMatrix::new(4);
        for (_, label, predicted) in cells {
            if label == SemanticClass::DontCare {
                continue;
            }
            let p = predicted.unwrap_or(SemanticClass::Background);
            oracle.add(label.index(), p.index());
        }
        assert_eq!(cm, oracle);
    }

    #[test]
    fn all_dontcare_ground_truth_yields_zero_matrix() {
        let map = VoxelMap::new(MapConfig::default());
        let mut gt = GroundTruthMap::new(0.4);
        for i in 0..10 {
            gt.labels
                .insert(CellKey { ix: i, iy: 0, iz: 0 }, SemanticClass::DontCare);
        }
        let mut cm = ConfusionMatrix::new(4);
        accumulate(&mut cm, &map, &gt).unwrap();
        assert_eq!(cm.total(), 0);
    }

    #[test]
    fn resolution_mismatch_is_rejected() {
        let map = VoxelMap::new(MapConfig::default());
        let gt = GroundTruthMap::new(0.5);
        let mut cm = ConfusionMatrix::new(4);
        assert!(matches!(
            accumulate(&mut cm, &map, &gt),
            Err(Error::Argument(_))
        ));
    }
}
