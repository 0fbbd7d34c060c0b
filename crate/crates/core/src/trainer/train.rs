//! Mini-batch truncated-BPTT training of the shared fusion cell.
//!
//! Segments are sampled from arbitrary start points; within a segment the
//! state never reinitializes regardless of frame gaps (napping with an
//! unbounded duration), matching how the trained cell is deployed.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sequences::{sample_batch, subsample_sequences, CellSequence, Segment};
use crate::error::{Error, Result};
use crate::neural::{
    bptt_backward, decode_backward, decode_probs, lstm_step_cached, nll_loss, nll_softmax_grad,
    LstmGradients, LstmParams, LstmState, OptimizerState, SgdConfig,
};
use crate::perception::N_CLASSES;
use crate::rng::stream_rng;

const STREAM_TRAIN_INIT: u64 = 0x40;
const STREAM_TRAIN_BATCH: u64 = 0x41;
const STREAM_TRAIN_SUBSAMPLE: u64 = 0x42;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossPlacement {
    /// Loss at every labeled step of the segment.
    EveryStep,
    /// Loss only at the segment's final step.
    FinalStep,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub base_lr: f64,
    pub decay: f64,
    /// Gradients flow back at most this many steps.
    pub truncation: usize,
    /// Sampled segments are cut to this many steps.
    pub segment_cap: usize,
    pub loss_placement: LossPlacement,
    /// Inverse-frequency class weights on the loss.
    pub class_weights: bool,
    /// Training uses at most this many cell sequences (seeded subsample).
    pub max_sequences: usize,
    /// Optional SGD momentum coefficient.
    pub momentum: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            hidden_dim: 32,
            num_layers: 2,
            epochs: 30,
            batches_per_epoch: 50,
            base_lr: 0.001,
            decay: 0.95,
            truncation: 200,
            segment_cap: 200,
            loss_placement: LossPlacement::EveryStep,
            class_weights: true,
            max_sequences: 3000,
            momentum: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Full-scale settings (hidden size 128, 100 epochs).
    pub fn paper(seed: u64) -> Self {
        TrainConfig {
            hidden_dim: 128,
            epochs: 100,
            seed,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0
            || self.hidden_dim == 0
            || self.num_layers == 0
            || self.epochs == 0
            || self.batches_per_epoch == 0
            || self.truncation == 0
            || self.segment_cap == 0
            || self.max_sequences == 0
        {
            return Err(Error::Config("training sizes must be positive".into()));
        }
        if self.base_lr <= 0.0 || self.decay <= 0.0 {
            return Err(Error::Config("learning rate and decay must be positive".into()));
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedFusion {
    pub params: LstmParams,
    pub curve: Vec<EpochStats>,
}

/// Inverse-frequency class weights over the labeled steps, normalized to
/// mean 1 across present classes and clipped to `[0.25, 8]`.
///
/// The clip matters: raw inverse frequencies reach 30x and up for sparse
/// transient classes, which makes every short-context decode collapse into
/// them and destroys the majority classes.
pub fn class_weights(sequences: &[CellSequence]) -> [f64; N_CLASSES] {
    let mut counts = [0u64; N_CLASSES];
    for s in sequences {
        for step in &s.steps {
            counts[step.label.index().min(N_CLASSES - 1)] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    let present = counts.iter().filter(|c| **c > 0).count().max(1);
    let mut weights = [1.0; N_CLASSES];
    if total == 0 {
        return weights;
    }
    for (w, &c) in weights.iter_mut().zip(&counts) {
        if c > 0 {
            *w = (total as f64 / (present as f64 * c as f64)).clamp(0.25, 8.0);
        }
    }
    weights
}

/// Forward/backward over one segment. Returns gradients, the summed
/// weighted loss, and the summed loss weights.
fn segment_pass(
    params: &LstmParams,
    seq: &CellSequence,
    segment: Segment,
    placement: LossPlacement,
    weights: &[f64; N_CLASSES],
    truncation: usize,
) -> Result<(LstmGradients, f64, f64)> {
    let steps = &seq.steps[segment.start..segment.start + segment.len];
    let mut grads = LstmGradients::zeros_like(params);
    let mut state = LstmState::zeros_like(params);
    let mut caches = Vec::with_capacity(steps.len());
    let mut dh_top = Vec::with_capacity(steps.len());
    let mut loss_sum = 0.0;
    let mut weight_sum = 0.0;
    for (t, step) in steps.iter().enumerate() {
        let (next, cache) = lstm_step_cached(params, &step.feature, &state)?;
        let labeled = match placement {
            LossPlacement::EveryStep => true,
            LossPlacement::FinalStep => t + 1 == steps.len(),
        };
        if labeled {
            let probs = decode_probs(params, next.top_hidden());
            let w = weights[step.label.index().min(N_CLASSES - 1)];
            loss_sum += w * nll_loss(&probs, step.label.index())?;
            weight_sum += w;
            let dlogits = nll_softmax_grad(&probs, step.label.index(), w);
            dh_top.push(decode_backward(params, next.top_hidden(), &dlogits, &mut grads));
        } else {
            dh_top.push(vec![0.0; params.hidden_dim]);
        }
        caches.push(cache);
        state = next;
    }
    let resets = vec![false; steps.len()];
    let rec = bptt_backward(params, &caches, &resets, &dh_top, truncation)?;
    grads.add_assign(&rec);
    Ok((grads, loss_sum, weight_sum))
}

/// Train the shared fusion cell on labeled cell sequences.
pub fn train_fusion(
    sequences: Vec<CellSequence>,
    input_dim: usize,
    cfg: &TrainConfig,
) -> Result<TrainedFusion> {
    cfg.validate()?;
    if sequences.is_empty() {
        return Err(Error::Argument("no training sequences".into()));
    }
    for s in &sequences {
        for step in &s.steps {
            if step.feature.len() != input_dim {
                return Err(Error::Config(format!(
                    "sequence feature dim {} does not match input dim {input_dim}",
                    step.feature.len()
                )));
            }
        }
    }
    let mut sub_rng = stream_rng(cfg.seed, &[STREAM_TRAIN_SUBSAMPLE]);
    let sequences = subsample_sequences(sequences, cfg.max_sequences, &mut sub_rng);
    let weights = if cfg.class_weights {
        class_weights(&sequences)
    } else {
        [1.0; N_CLASSES]
    };

    let mut init_rng = stream_rng(cfg.seed, &[STREAM_TRAIN_INIT]);
    let mut params = LstmParams::init(
        input_dim,
        cfg.hidden_dim,
        cfg.num_layers,
        N_CLASSES,
        &mut init_rng,
    )?;
    let mut opt = OptimizerState::new(SgdConfig {
        base_lr: cfg.base_lr,
        decay: cfg.decay,
        momentum: cfg.momentum,
    })?;
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut epoch_loss = 0.0;
        let mut epoch_weight = 0.0;
        for batch in 0..cfg.batches_per_epoch {
            let mut rng = stream_rng(cfg.seed, &[STREAM_TRAIN_BATCH, epoch as u64, batch as u64]);
            let segments = sample_batch(&sequences, cfg.batch_size, cfg.segment_cap, &mut rng)?;
            // Per-segment passes run in parallel; the reduction below walks
            // them in sampled order, so results do not depend on thread count.
            let passes: Vec<Result<(LstmGradients, f64, f64)>> = segments
                .par_iter()
                .map(|seg| {
                    segment_pass(
                        &params,
                        &sequences[seg.seq],
                        *seg,
                        cfg.loss_placement,
                        &weights,
                        cfg.truncation,
                    )
                })
                .collect();
            let mut total = LstmGradients::zeros_like(&params);
            let mut loss_sum = 0.0;
            let mut weight_sum = 0.0;
            for (i, pass) in passes.into_iter().enumerate() {
                let (g, l, w) = pass?;
                if !l.is_finite() {
                    let seg = segments[i];
                    return Err(Error::Numeric(format!(
                        "loss became non-finite at epoch {epoch}, batch {batch}, \
                         cell {:?} (start {}, len {})",
                        sequences[seg.seq].key, seg.start, seg.len
                    )));
                }
                total.add_assign(&g);
                loss_sum += l;
                weight_sum += w;
            }
            if weight_sum > 0.0 {
                total.scale(1.0 / weight_sum);
                opt.step(&mut params.tensors_mut(), &total.tensors())?;
            }
            epoch_loss += loss_sum;
            epoch_weight += weight_sum;
        }
        let mean_loss = if epoch_weight > 0.0 {
            epoch_loss / epoch_weight
        } else {
            0.0
        };
        curve.push(EpochStats {
            epoch,
            mean_loss,
            lr: opt.effective_lr(),
        });
        opt.advance_epoch();
    }
    Ok(TrainedFusion { params, curve })
}

/// Write the training log CSV (`epoch,mean_loss,lr`).
pub fn write_training_log(out: &mut dyn std::io::Write, curve: &[EpochStats]) -> Result<()> {
    let io_err = |e: std::io::Error| Error::io("<training log>", e);
    writeln!(out, "epoch,mean_loss,lr").map_err(io_err)?;
    for row in curve {
        writeln!(out, "{},{},{}", row.epoch, row.mean_loss, row.lr).map_err(io_err)?;
    }
    Ok(())
}
