//! Single-scan semantic understanding: model-free objectness clustering,
//! point-level features, objectness max-pooling, object classification, and
//! propagation of object features back to member points.

pub mod cluster;
pub mod features;
pub mod scan;
pub mod train;

pub use cluster::{cluster_objectness, linked, unclustered_points, ClusterConfig, ObjectnessBox};
pub use features::{
    classify_object, extract_point_features, max_pool, perceive_scan, propagate_to_points,
    ObjectClassification, PerceptionModel, PerceptionNetConfig, PointFeatureSet, ScanObject,
    ScanPerception,
};
pub use scan::{
    load_scan, read_scan, save_scan, write_scan, Point3, PointCloudScan, Pose, SemanticClass,
    N_CLASSES,
};
pub use train::{
    classify_corpus, majority_label, object_accuracy, train_perception, yaw_robustness,
    yaw_rotate_points, PerceptionTrainConfig, TrainedPerception,
};
