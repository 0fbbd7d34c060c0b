//! Point-level features, objectness pooling, object classification, and
//! propagation of object features back to member points.

use serde::{Deserialize, Serialize};

use super::cluster::{cluster_objectness, unclustered_points, ClusterConfig, ObjectnessBox};
use super::scan::Point3;
use crate::error::{Error, Result};
use crate::neural::{mlp_forward, softmax, Activation, Matrix, MlpForward, MlpParams};
use rand_chacha::ChaCha8Rng;

/// Network sizes for the two perception MLPs.
///
/// `point_hidden` are the hidden/output widths of the point network (input is
/// always 3 coordinates); `object_hidden` the hidden widths of the object
/// network, which ends in a linear layer over the classes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerceptionNetConfig {
    pub point_hidden: Vec<usize>,
    pub object_hidden: Vec<usize>,
    pub n_classes: usize,
}

impl PerceptionNetConfig {
    /// Desk-scale defaults small enough to train on a CPU in seconds.
    pub fn desk() -> Self {
        PerceptionNetConfig {
            point_hidden: vec![32, 32, 64],
            object_hidden: vec![64, 32],
            n_classes: crate::perception::N_CLASSES,
        }
    }

    /// Full-scale sizes: point net 64, 64, 64, 128, 1024; object net 512, 256.
    pub fn full() -> Self {
        PerceptionNetConfig {
            point_hidden: vec![64, 64, 64, 128, 1024],
            object_hidden: vec![512, 256],
            n_classes: crate::perception::N_CLASSES,
        }
    }
}

/// The two trained perception networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceptionModel {
    pub point_mlp: MlpParams,
    pub object_mlp: MlpParams,
}

impl PerceptionModel {
    pub fn init(cfg: &PerceptionNetConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut point_dims = vec![3];
        point_dims.extend_from_slice(&cfg.point_hidden);
        let mut point_acts = vec![Activation::Relu; cfg.point_hidden.len()];
        // Linear feature layer so pooled maxima keep signed coordinates.
        *point_acts.last_mut().unwrap() = Activation::Identity;

        let feat_dim = *cfg.point_hidden.last().unwrap();
        let mut object_dims = vec![feat_dim];
        object_dims.extend_from_slice(&cfg.object_hidden);
        object_dims.push(cfg.n_classes);
        let mut object_acts = vec![Activation::Relu; cfg.object_hidden.len()];
        object_acts.push(Activation::Identity); // logits

        Ok(PerceptionModel {
            point_mlp: MlpParams::init(&point_dims, &point_acts, rng)?,
            object_mlp: MlpParams::init(&object_dims, &object_acts, rng)?,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.point_mlp.output_dim()
    }

    /// Dimension of the object feature propagated to points (the activation
    /// feeding the final class layer).
    pub fn object_feature_dim(&self) -> usize {
        let n = self.object_mlp.layers.len();
        self.object_mlp.layers[n - 1].in_dim()
    }

    pub fn n_classes(&self) -> usize {
        self.object_mlp.output_dim()
    }
}

/// Per-point feature vectors plus the propagated object feature and class
/// probabilities for every point of one scan.
#[derive(Debug, Clone)]
pub struct PointFeatureSet {
    /// One row per point, output of the point network.
    pub point_features: Matrix,
    /// One row per point, the object feature of the box containing it.
    pub propagated: Matrix,
    /// One row per point, the class probabilities of its object.
    pub class_probs: Matrix,
}

/// Run the point network on every point of a scan.
pub fn extract_point_features(point_mlp: &MlpParams, points: &[Point3]) -> Result<Matrix> {
    if point_mlp.input_dim() != 3 {
        return Err(Error::Config(format!(
            "point network expects input dim 3, has {}",
            point_mlp.input_dim()
        )));
    }
    let mut input = Matrix::zeros(points.len(), 3);
    for (r, p) in points.iter().enumerate() {
        input.row_mut(r).copy_from_slice(p);
    }
    Ok(mlp_forward(point_mlp, &input)?.output().clone())
}

/// Elementwise max over the member rows, tracking which row supplied each
/// maximum (needed to route gradients in training).
pub fn max_pool(features: &Matrix, members: &[usize]) -> Result<(Vec<f64>, Vec<usize>)> {
    if members.is_empty() {
        return Err(Error::Argument("cannot pool an empty box".into()));
    }
    let d = features.cols();
    let mut pooled = vec![f64::NEG_INFINITY; d];
    let mut argmax = vec![0usize; d];
    for &i in members {
        let row = features.row(i);
        for c in 0..d {
            if row[c] > pooled[c] {
                pooled[c] = row[c];
                argmax[c] = i;
            }
        }
    }
    Ok((pooled, argmax))
}

/// Result of classifying one objectness box.
pub struct ObjectClassification {
    /// Activation feeding the final class layer; this is the feature
    /// propagated to member points.
    pub object_feature: Vec<f64>,
    pub class_probs: Vec<f64>,
    /// Forward cache of the object network (training only).
    pub cache: MlpForward,
    /// Row index that supplied each pooled maximum (training only).
    pub pool_argmax: Vec<usize>,
}

/// Max-pool the member features and classify through the object network.
pub fn classify_object(
    object_mlp: &MlpParams,
    features: &Matrix,
    members: &[usize],
) -> Result<ObjectClassification> {
    let (pooled, pool_argmax) = max_pool(features, members)?;
    let input = Matrix::from_vec(1, pooled.len(), pooled)?;
    let cache = mlp_forward(object_mlp, &input)?;
    let n_layers = cache.post.len();
    let object_feature = cache.post[n_layers - 2].row(0).to_vec();
    let class_probs = softmax(cache.output().row(0));
    Ok(ObjectClassification {
        object_feature,
        class_probs,
        cache,
        pool_argmax,
    })
}

/// Write one object's feature and probabilities into its member rows.
pub fn propagate_to_points(
    object_feature: &[f64],
    class_probs: &[f64],
    members: &[usize],
    set: &mut PointFeatureSet,
) {
    for &i in members {
        set.propagated.row_mut(i).copy_from_slice(object_feature);
        set.class_probs.row_mut(i).copy_from_slice(class_probs);
    }
}

/// One detected object of a scan (a clustered box, or the virtual background
/// grouping of all unclustered points).
pub struct ScanObject {
    pub bounds: Option<ObjectnessBox>,
    pub members: Vec<usize>,
    pub object_feature: Vec<f64>,
    pub class_probs: Vec<f64>,
}

/// Full single-scan pipeline output.
pub struct ScanPerception {
    pub objects: Vec<ScanObject>,
    pub features: PointFeatureSet,
}

/// Cluster a scan, classify every box, and propagate object features to all
/// points. Unclustered points form one virtual background object so that
/// every point carries a feature.
pub fn perceive_scan(
    model: &PerceptionModel,
    points: &[Point3],
    cluster_cfg: &ClusterConfig,
) -> Result<ScanPerception> {
    let n = points.len();
    let point_features = extract_point_features(&model.point_mlp, points)?;
    let mut set = PointFeatureSet {
        propagated: Matrix::zeros(n, model.object_feature_dim()),
        class_probs: Matrix::zeros(n, model.n_classes()),
        point_features,
    };
    let boxes = cluster_objectness(points, cluster_cfg)?;
    let rest = unclustered_points(n, &boxes);
    let mut objects = Vec::with_capacity(boxes.len() + 1);
    for b in boxes {
        let c = classify_object(&model.object_mlp, &set.point_features, &b.members)?;
        propagate_to_points(&c.object_feature, &c.class_probs, &b.members, &mut set);
        objects.push(ScanObject {
            members: b.members.clone(),
            bounds: Some(b),
            object_feature: c.object_feature,
            class_probs: c.class_probs,
        });
    }
    if !rest.is_empty() {
        let c = classify_object(&model.object_mlp, &set.point_features, &rest)?;
        propagate_to_points(&c.object_feature, &c.class_probs, &rest, &mut set);
        objects.push(ScanObject {
            bounds: None,
            members: rest,
            object_feature: c.object_feature,
            class_probs: c.class_probs,
        });
    }
    Ok(ScanPerception {
        objects,
        features: set,
    })
}
