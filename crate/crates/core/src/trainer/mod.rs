//! Training orchestration for the fusion cell and the evaluation protocols
//! (backend comparison and the napping-duration sweep).

pub mod eval;
pub mod sequences;
pub mod train;

pub use eval::{
    comparison_specs, evaluate_backends, sweep_grid, sweep_specs, BackendSpec, EvalResult,
};
pub use sequences::{build_sequences, sample_batch, subsample_sequences, CellSequence, SeqStep, Segment};
pub use train::{
    class_weights, train_fusion, write_training_log, EpochStats, LossPlacement, TrainConfig,
    TrainedFusion,
};
