//! Joint training of the point and object networks on labeled scans.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::cluster::{cluster_objectness, unclustered_points, ClusterConfig};
use super::features::{classify_object, PerceptionModel, PerceptionNetConfig};
use super::scan::{Point3, PointCloudScan, SemanticClass, N_CLASSES};
use crate::error::{Error, Result};
use crate::neural::{
    mlp_backward, mlp_forward, nll_loss, nll_softmax_grad, Matrix, MlpGradients, MlpParams,
    OptimizerState, SgdConfig,
};
use crate::rng::stream_rng;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerceptionTrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    pub decay: f64,
    pub seed: u64,
    /// Random yaw rotation of each scan per epoch.
    pub augment_yaw: bool,
    pub cluster: ClusterConfig,
    pub net: PerceptionNetConfig,
}

impl Default for PerceptionTrainConfig {
    fn default() -> Self {
        PerceptionTrainConfig {
            epochs: 30,
            base_lr: 0.005,
            decay: 0.95,
            seed: 0,
            augment_yaw: true,
            cluster: ClusterConfig::default(),
            net: PerceptionNetConfig::desk(),
        }
    }
}

/// Majority vote over member point labels; ties resolve toward the earliest
/// class in id order, i.e. toward `Background`.
pub fn majority_label(labels: &[SemanticClass], members: &[usize]) -> SemanticClass {
    let mut counts = [0usize; 5];
    for &i in members {
        counts[labels[i].index()] += 1;
    }
    let mut best = SemanticClass::Background;
    let mut best_count = 0;
    for class in [
        SemanticClass::Background,
        SemanticClass::Car,
        SemanticClass::Pedestrian,
        SemanticClass::Cyclist,
        SemanticClass::DontCare,
    ] {
        if counts[class.index()] > best_count {
            best_count = counts[class.index()];
            best = class;
        }
    }
    best
}

/// Rotate points by `yaw` radians about the sensor z axis.
pub fn yaw_rotate_points(points: &[Point3], yaw: f64) -> Vec<Point3> {
    let (s, c) = yaw.sin_cos();
    points
        .iter()
        .map(|p| [c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]])
        .collect()
}

/// Extract training objects (member indices plus majority label) of a scan.
fn scan_objects(
    points: &[Point3],
    labels: &[SemanticClass],
    cluster: &ClusterConfig,
) -> Result<Vec<(Vec<usize>, SemanticClass)>> {
    let boxes = cluster_objectness(points, cluster)?;
    let rest = unclustered_points(points.len(), &boxes);
    let mut objects: Vec<(Vec<usize>, SemanticClass)> = boxes
        .into_iter()
        .map(|b| {
            let label = majority_label(labels, &b.members);
            (b.members, label)
        })
        .collect();
    if !rest.is_empty() {
        let label = majority_label(labels, &rest);
        objects.push((rest, label));
    }
    // Ground-truth ties resolved; DontCare-labeled objects carry no signal.
    objects.retain(|(_, label)| *label != SemanticClass::DontCare);
    Ok(objects)
}

pub struct TrainedPerception {
    pub model: PerceptionModel,
    /// Mean object NLL per epoch.
    pub loss_curve: Vec<f64>,
}

fn mlp_tensors_mut(m: &mut MlpParams) -> Vec<&mut [f64]> {
    let mut out = Vec::with_capacity(2 * m.layers.len());
    for l in &mut m.layers {
        out.push(l.weight.data_mut());
        out.push(l.bias.as_mut_slice());
    }
    out
}

fn mlp_grad_tensors(g: &MlpGradients) -> Vec<&[f64]> {
    let mut out = Vec::with_capacity(2 * g.weights.len());
    for (w, b) in g.weights.iter().zip(&g.biases) {
        out.push(w.data());
        out.push(b.as_slice());
    }
    out
}

/// One gradient step on a single labeled scan; returns the mean object loss.
fn train_scan_step(
    model: &mut PerceptionModel,
    points: &[Point3],
    labels: &[SemanticClass],
    cluster: &ClusterConfig,
    opt: &mut OptimizerState,
) -> Result<f64> {
    let objects = scan_objects(points, labels, cluster)?;
    if objects.is_empty() {
        return Ok(0.0);
    }
    let mut input = Matrix::zeros(points.len(), 3);
    for (r, p) in points.iter().enumerate() {
        input.row_mut(r).copy_from_slice(p);
    }
    let point_cache = mlp_forward(&model.point_mlp, &input)?;
    let features = point_cache.output();

    let scale = 1.0 / objects.len() as f64;
    let mut grads_o = MlpGradients::zeros_like(&model.object_mlp);
    let mut d_features = Matrix::zeros(points.len(), features.cols());
    let mut total_loss = 0.0;
    for (members, label) in &objects {
        let c = classify_object(&model.object_mlp, features, members)?;
        total_loss += nll_loss(&c.class_probs, label.index())?;
        let dlogits = nll_softmax_grad(&c.class_probs, label.index(), scale);
        let dlogits = Matrix::from_vec(1, dlogits.len(), dlogits)?;
        let (g, d_pooled) = mlp_backward(&model.object_mlp, &c.cache, &dlogits);
        grads_o.add_assign(&g);
        // Max pooling routes each feature's gradient to the point that
        // supplied the maximum.
        for (col, &row) in c.pool_argmax.iter().enumerate() {
            let v = d_features.get(row, col) + d_pooled.get(0, col);
            d_features.set(row, col, v);
        }
    }
    let (grads_p, _) = mlp_backward(&model.point_mlp, &point_cache, &d_features);

    let mut tensors = mlp_tensors_mut(&mut model.point_mlp);
    tensors.extend(mlp_tensors_mut(&mut model.object_mlp));
    let mut grad_slices = mlp_grad_tensors(&grads_p);
    grad_slices.extend(mlp_grad_tensors(&grads_o));
    opt.step(&mut tensors, &grad_slices)?;
    Ok(total_loss * scale)
}

/// Train the two networks to minimize the mean object NLL over the corpus.
pub fn train_perception(
    scans: &[PointCloudScan],
    cfg: &PerceptionTrainConfig,
) -> Result<TrainedPerception> {
    if scans.is_empty() {
        return Err(Error::Argument("training corpus is empty".into()));
    }
    for s in scans {
        if s.labels.is_none() {
            return Err(Error::Argument(
                "perception training needs labeled scans".into(),
            ));
        }
    }
    let mut init_rng = stream_rng(cfg.seed, &[0x70]);
    let mut model = PerceptionModel::init(&cfg.net, &mut init_rng)?;
    let mut opt = OptimizerState::new(SgdConfig::new(cfg.base_lr, cfg.decay))?;
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..scans.len()).collect();
        let mut epoch_rng = stream_rng(cfg.seed, &[0x71, epoch as u64]);
        for i in (1..order.len()).rev() {
            let j = epoch_rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        for &idx in &order {
            let scan = &scans[idx];
            let labels = scan.labels.as_ref().unwrap();
            let points = if cfg.augment_yaw {
                let yaw = epoch_rng.random_range(0.0..std::f64::consts::TAU);
                yaw_rotate_points(&scan.points, yaw)
            } else {
                scan.points.clone()
            };
            epoch_loss += train_scan_step(&mut model, &points, labels, &cfg.cluster, &mut opt)?;
        }
        loss_curve.push(epoch_loss / scans.len() as f64);
        opt.advance_epoch();
    }
    Ok(TrainedPerception { model, loss_curve })
}

/// Classify every object of every scan; returns (predicted, true) pairs.
pub fn classify_corpus(
    model: &PerceptionModel,
    scans: &[PointCloudScan],
    cluster: &ClusterConfig,
) -> Result<Vec<(SemanticClass, SemanticClass)>> {
    let mut pairs = Vec::new();
    for scan in scans {
        let labels = scan
            .labels
            .as_ref()
            .ok_or_else(|| Error::Argument("evaluation scans must be labeled".into()))?;
        let objects = scan_objects(&scan.points, labels, cluster)?;
        let mut input = Matrix::zeros(scan.points.len(), 3);
        for (r, p) in scan.points.iter().enumerate() {
            input.row_mut(r).copy_from_slice(p);
        }
        let features = mlp_forward(&model.point_mlp, &input)?;
        for (members, label) in objects {
            let c = classify_object(&model.object_mlp, features.output(), &members)?;
            let pred = c
                .class_probs
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(i, _)| i)
                .unwrap_or(0);
            pairs.push((
                SemanticClass::from_id(pred.min(N_CLASSES - 1) as u8)?,
                label,
            ));
        }
    }
    Ok(pairs)
}

/// Fraction of held-out objects classified correctly.
pub fn object_accuracy(
    model: &PerceptionModel,
    scans: &[PointCloudScan],
    cluster: &ClusterConfig,
) -> Result<f64> {
    let pairs = classify_corpus(model, scans, cluster)?;
    if pairs.is_empty() {
        return Err(Error::Argument("no objects in evaluation corpus".into()));
    }
    let correct = pairs.iter().filter(|(p, t)| p == t).count();
    Ok(correct as f64 / pairs.len() as f64)
}

/// Fraction of objects whose prediction is unchanged under 90/180/270 degree
/// yaw rotations of the whole scan.
pub fn yaw_robustness(
    model: &PerceptionModel,
    scans: &[PointCloudScan],
    cluster: &ClusterConfig,
) -> Result<f64> {
    let mut stable = 0usize;
    let mut total = 0usize;
    for scan in scans {
        let base = classify_corpus(model, std::slice::from_ref(scan), cluster)?;
        let mut rotated_preds = Vec::new();
        for quarter in 1..4 {
            let yaw = std::f64::consts::FRAC_PI_2 * quarter as f64;
            let turned = PointCloudScan {
                timestamp: scan.timestamp,
                pose: scan.pose,
                points: yaw_rotate_points(&scan.points, yaw),
                labels: scan.labels.clone(),
            };
            rotated_preds.push(classify_corpus(model, &[turned], cluster)?);
        }
        for (i, (pred, _)) in base.iter().enumerate() {
            // Rotation about the sensor preserves distances and ranges, so
            // the cluster list (ordered by smallest member index) lines up.
            if rotated_preds.iter().all(|r| r.get(i).map(|(p, _)| p) == Some(pred)) {
                stable += 1;
            }
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::Argument("no objects in robustness corpus".into()));
    }
    Ok(stable as f64 / total as f64)
}
