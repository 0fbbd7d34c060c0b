//! Deterministic synthetic stand-in for a long-term outdoor dataset: a
//! multi-day parking-lot world with static walls and posts, cars that park
//! and leave across days, pedestrians and cyclists accompanying a patrolling
//! sensor, per-point ground-truth labels, controllable observation dropout
//! and classifier-noise injection.

pub mod config;
pub mod dataset;
pub mod ground_truth;
pub mod noise;
pub mod render;
pub mod shapes;
pub mod world;

pub use config::{default_confusion, identity_confusion, ScenarioConfig};
pub use dataset::{write_dataset, Dataset, DatasetManifest};
pub use ground_truth::{build_ground_truth, rasterize_shape};
pub use noise::{
    cell_observed, corrupt_class, inject_observation_noise, noise_rng, synthesize_observation,
    validate_confusion, ClassPrototypes, SyntheticObservation,
};
pub use render::render_scan;
pub use shapes::{make_shapes_corpus, make_shapes_scan, ShapesCorpusConfig};
pub use world::{generate_world, CarSlot, Motion, PatrolPath, Shape, World, WorldObject};
