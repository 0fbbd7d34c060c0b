//! Minimal dense neural kernel: matrices, MLP layers, a stacked LSTM cell
//! with exact truncated-BPTT gradients, losses, and SGD.
//!
//! Everything is `f64` and hand-derived; there is no general autodiff. The
//! perception and fusion stages train exclusively through this module.

pub mod cells;
pub mod io;
pub mod loss;
pub mod lstm;
pub mod matrix;
pub mod mlp;
pub mod optim;

pub use io::{decode_model, encode_model, export_json, import_json, load_model, save_model, ModelWeights};
pub use loss::{decode, nll_loss, nll_softmax_grad, softmax, PROB_FLOOR};
pub use lstm::{
    bptt_backward, decode_backward, decode_probs, lstm_step, lstm_step_cached, LayerState,
    LstmGradients, LstmLayerParams, LstmParams, LstmState, StepCache,
};
pub use matrix::Matrix;
pub use mlp::{mlp_backward, mlp_forward, Activation, DenseLayer, MlpForward, MlpGradients, MlpParams};
pub use optim::{OptimizerState, SgdConfig};
