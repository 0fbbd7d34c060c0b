//! Stacked LSTM cell with a class decoder and exact truncated-BPTT gradients.
//!
//! Gate blocks are stored in the order input, forget, output, candidate.
//! The update per layer is the standard formulation without peepholes:
//!
//! ```text
//! i = sigmoid(Wx_i x + Wh_i h + b_i)      f = sigmoid(Wx_f x + Wh_f h + b_f)
//! o = sigmoid(Wx_o x + Wh_o h + b_o)      g = tanh   (Wx_g x + Wh_g h + b_g)
//! cell' = f ⊙ cell + i ⊙ g                hidden' = o ⊙ tanh(cell')
//! ```
//!
//! Layer k's hidden output feeds layer k+1; the top hidden vector is decoded
//! to class probabilities by a dense layer plus softmax.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{decode, softmax};
use super::matrix::Matrix;
use crate::error::{Error, Result};

const GATE_NAMES: [&str; 4] = ["input", "forget", "output", "candidate"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmLayerParams {
    /// Shape `(4*hidden, layer_input_dim)`, gate blocks stacked i, f, o, g.
    pub w_input: Matrix,
    /// Shape `(4*hidden, hidden)`.
    pub w_hidden: Matrix,
    /// Length `4*hidden`.
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams {
    pub layers: Vec<LstmLayerParams>,
    /// Decoder weight, shape `(n_classes, hidden)`.
    pub decoder_weight: Matrix,
    pub decoder_bias: Vec<f64>,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub n_classes: usize,
}

impl LstmParams {
    /// Uniform ±1/sqrt(fan_in) weights, zero biases except the forget-gate
    /// block which starts at 1.0.
    pub fn init(
        input_dim: usize,
        hidden_dim: usize,
        num_layers: usize,
        n_classes: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 || num_layers == 0 || n_classes == 0 {
            return Err(Error::Config("lstm dimensions must be positive".into()));
        }
        let mut layers = Vec::with_capacity(num_layers);
        for l in 0..num_layers {
            let in_dim = if l == 0 { input_dim } else { hidden_dim };
            let mut w_input = Matrix::zeros(4 * hidden_dim, in_dim);
            let bound = 1.0 / (in_dim as f64).sqrt();
            for v in w_input.data_mut() {
                *v = rng.random_range(-bound..bound);
            }
            let mut w_hidden = Matrix::zeros(4 * hidden_dim, hidden_dim);
            let bound = 1.0 / (hidden_dim as f64).sqrt();
            for v in w_hidden.data_mut() {
                *v = rng.random_range(-bound..bound);
            }
            let mut bias = vec![0.0; 4 * hidden_dim];
            for b in bias[hidden_dim..2 * hidden_dim].iter_mut() {
                *b = 1.0;
            }
            layers.push(LstmLayerParams {
                w_input,
                w_hidden,
                bias,
            });
        }
        let mut decoder_weight = Matrix::zeros(n_classes, hidden_dim);
        let bound = 1.0 / (hidden_dim as f64).sqrt();
        for v in decoder_weight.data_mut() {
            *v = rng.random_range(-bound..bound);
        }
        Ok(LstmParams {
            layers,
            decoder_weight,
            decoder_bias: vec![0.0; n_classes],
            input_dim,
            hidden_dim,
            n_classes,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.hidden_dim;
        for (l, layer) in self.layers.iter().enumerate() {
            let in_dim = if l == 0 { self.input_dim } else { h };
            if layer.w_input.rows() != 4 * h || layer.w_input.cols() != in_dim {
                return Err(Error::Config(format!("layer {l} input weight shape mismatch")));
            }
            if layer.w_hidden.rows() != 4 * h || layer.w_hidden.cols() != h {
                return Err(Error::Config(format!("layer {l} recurrent weight shape mismatch")));
            }
            if layer.bias.len() != 4 * h {
                return Err(Error::Config(format!("layer {l} bias length mismatch")));
            }
            if !layer.w_input.is_finite()
                || !layer.w_hidden.is_finite()
                || !layer.bias.iter().all(|v| v.is_finite())
            {
                return Err(Error::Numeric(format!("layer {l} has non-finite weights")));
            }
        }
        if self.decoder_weight.rows() != self.n_classes || self.decoder_weight.cols() != h {
            return Err(Error::Config("decoder weight shape mismatch".into()));
        }
        if self.decoder_bias.len() != self.n_classes {
            return Err(Error::Config("decoder bias length mismatch".into()));
        }
        Ok(())
    }

    /// Decode the top-layer hidden vector to class probabilities.
    pub fn decode_hidden(&self, hidden: &[f64]) -> Vec<f64> {
        decode(&self.decoder_weight, &self.decoder_bias, hidden)
    }

    /// All trainable tensors as flat slices, in the fixed declared order
    /// (matching [`LstmGradients::tensors`]).
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(3 * self.layers.len() + 2);
        for l in &mut self.layers {
            out.push(l.w_input.data_mut());
            out.push(l.w_hidden.data_mut());
            out.push(l.bias.as_mut_slice());
        }
        out.push(self.decoder_weight.data_mut());
        out.push(self.decoder_bias.as_mut_slice());
        out
    }
}

/// Per-layer recurrent state: cell vector `S` and hidden vector `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerState {
    pub cell: Vec<f64>,
    pub hidden: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmState {
    pub layers: Vec<LayerState>,
}

impl LstmState {
    pub fn zeros(hidden_dim: usize, num_layers: usize) -> Self {
        LstmState {
            layers: (0..num_layers)
                .map(|_| LayerState {
                    cell: vec![0.0; hidden_dim],
                    hidden: vec![0.0; hidden_dim],
                })
                .collect(),
        }
    }

    pub fn zeros_like(params: &LstmParams) -> Self {
        Self::zeros(params.hidden_dim, params.num_layers())
    }

    pub fn top_hidden(&self) -> &[f64] {
        &self.layers.last().expect("state has at least one layer").hidden
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.cell.iter().all(|v| *v == 0.0) && l.hidden.iter().all(|v| *v == 0.0))
    }
}

/// Intermediates of one layer at one step, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LayerStepCache {
    pub layer_input: Vec<f64>,
    pub cell_prev: Vec<f64>,
    pub hidden_prev: Vec<f64>,
    pub gate_i: Vec<f64>,
    pub gate_f: Vec<f64>,
    pub gate_o: Vec<f64>,
    pub gate_g: Vec<f64>,
    pub tanh_cell: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct StepCache {
    pub layers: Vec<LayerStepCache>,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn step_layer(
    layer: &LstmLayerParams,
    layer_idx: usize,
    x: &[f64],
    prev: &LayerState,
    hidden_dim: usize,
    cache: Option<&mut Vec<LayerStepCache>>,
) -> Result<LayerState> {
    let mut z = layer.w_input.mul_vec(x);
    let zh = layer.w_hidden.mul_vec(&prev.hidden);
    for ((zv, zhv), b) in z.iter_mut().zip(zh).zip(&layer.bias) {
        *zv += zhv + b;
    }
    for (block, name) in GATE_NAMES.iter().enumerate() {
        let slice = &z[block * hidden_dim..(block + 1) * hidden_dim];
        if !slice.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite pre-activation in {name} gate of layer {layer_idx}"
            )));
        }
    }
    let mut gate_i = vec![0.0; hidden_dim];
    let mut gate_f = vec![0.0; hidden_dim];
    let mut gate_o = vec![0.0; hidden_dim];
    let mut gate_g = vec![0.0; hidden_dim];
    let mut cell = vec![0.0; hidden_dim];
    let mut tanh_cell = vec![0.0; hidden_dim];
    let mut hidden = vec![0.0; hidden_dim];
    for j in 0..hidden_dim {
        gate_i[j] = sigmoid(z[j]);
        gate_f[j] = sigmoid(z[hidden_dim + j]);
        gate_o[j] = sigmoid(z[2 * hidden_dim + j]);
        gate_g[j] = z[3 * hidden_dim + j].tanh();
        cell[j] = gate_f[j] * prev.cell[j] + gate_i[j] * gate_g[j];
        tanh_cell[j] = cell[j].tanh();
        hidden[j] = gate_o[j] * tanh_cell[j];
    }
    if let Some(caches) = cache {
        caches.push(LayerStepCache {
            layer_input: x.to_vec(),
            cell_prev: prev.cell.clone(),
            hidden_prev: prev.hidden.clone(),
            gate_i,
            gate_f,
            gate_o,
            gate_g,
            tanh_cell,
        });
    }
    Ok(LayerState { cell, hidden })
}

fn step_impl(
    params: &LstmParams,
    x: &[f64],
    state: &LstmState,
    mut cache: Option<&mut Vec<LayerStepCache>>,
) -> Result<LstmState> {
    if x.len() != params.input_dim {
        return Err(Error::Config(format!(
            "input dim {} does not match lstm input_dim {}",
            x.len(),
            params.input_dim
        )));
    }
    if state.layers.len() != params.num_layers() {
        return Err(Error::Config("state layer count mismatch".into()));
    }
    let mut layers = Vec::with_capacity(params.num_layers());
    let mut layer_input: Vec<f64> = x.to_vec();
    for (l, layer) in params.layers.iter().enumerate() {
        if state.layers[l].cell.len() != params.hidden_dim
            || state.layers[l].hidden.len() != params.hidden_dim
        {
            return Err(Error::Config(format!("layer {l} state dim mismatch")));
        }
        let new = step_layer(
            layer,
            l,
            &layer_input,
            &state.layers[l],
            params.hidden_dim,
            cache.as_deref_mut(),
        )?;
        layer_input = new.hidden.clone();
        layers.push(new);
    }
    Ok(LstmState { layers })
}

/// Advance all layers by one observation. No intermediates are retained.
pub fn lstm_step(params: &LstmParams, x: &[f64], state: &LstmState) -> Result<LstmState> {
    step_impl(params, x, state, None)
}

/// As [`lstm_step`] but also returns the cache required by [`bptt_backward`].
pub fn lstm_step_cached(
    params: &LstmParams,
    x: &[f64],
    state: &LstmState,
) -> Result<(LstmState, StepCache)> {
    let mut layers = Vec::with_capacity(params.num_layers());
    let new = step_impl(params, x, state, Some(&mut layers))?;
    Ok((new, StepCache { layers }))
}

#[derive(Debug, Clone)]
pub struct LstmLayerGrads {
    pub w_input: Matrix,
    pub w_hidden: Matrix,
    pub bias: Vec<f64>,
}

/// Gradients shaped like [`LstmParams`].
#[derive(Debug, Clone)]
pub struct LstmGradients {
    pub layers: Vec<LstmLayerGrads>,
    pub decoder_weight: Matrix,
    pub decoder_bias: Vec<f64>,
}

impl LstmGradients {
    pub fn zeros_like(params: &LstmParams) -> Self {
        LstmGradients {
            layers: params
                .layers
                .iter()
                .map(|l| LstmLayerGrads {
                    w_input: Matrix::zeros(l.w_input.rows(), l.w_input.cols()),
                    w_hidden: Matrix::zeros(l.w_hidden.rows(), l.w_hidden.cols()),
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
            decoder_weight: Matrix::zeros(params.decoder_weight.rows(), params.decoder_weight.cols()),
            decoder_bias: vec![0.0; params.decoder_bias.len()],
        }
    }

    pub fn add_assign(&mut self, other: &LstmGradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.w_input.add_assign(&b.w_input);
            a.w_hidden.add_assign(&b.w_hidden);
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
        self.decoder_weight.add_assign(&other.decoder_weight);
        for (x, y) in self.decoder_bias.iter_mut().zip(&other.decoder_bias) {
            *x += y;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.w_input.scale(factor);
            l.w_hidden.scale(factor);
            for v in &mut l.bias {
                *v *= factor;
            }
        }
        self.decoder_weight.scale(factor);
        for v in &mut self.decoder_bias {
            *v *= factor;
        }
    }

    /// Flat gradient slices in the same order as [`LstmParams::tensors_mut`].
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(3 * self.layers.len() + 2);
        for l in &self.layers {
            out.push(l.w_input.data());
            out.push(l.w_hidden.data());
            out.push(l.bias.as_slice());
        }
        out.push(self.decoder_weight.data());
        out.push(self.decoder_bias.as_slice());
        out
    }
}

/// Backpropagate through a cached sequence.
///
/// * `caches[t]` is the cache from step `t`; `reset_before[t]` marks steps
///   whose incoming state was reinitialized to zeros (a constant), so no
///   gradient flows across that boundary.
/// * `grad_top_hidden[t]` is dL/d(top-layer hidden at step t); pass zeros for
///   steps without a loss.
/// * Gradients flow backwards at most `truncation` steps: the sequence is
///   treated as consecutive windows of that length with the carried state
///   detached at window boundaries, matching the unrolled training scheme.
pub fn bptt_backward(
    params: &LstmParams,
    caches: &[StepCache],
    reset_before: &[bool],
    grad_top_hidden: &[Vec<f64>],
    truncation: usize,
) -> Result<LstmGradients> {
    let steps = caches.len();
    if truncation == 0 {
        return Err(Error::Argument("truncation length must be at least 1".into()));
    }
    if reset_before.len() != steps || grad_top_hidden.len() != steps {
        return Err(Error::Internal(
            "bptt inputs disagree on sequence length".into(),
        ));
    }
    let h = params.hidden_dim;
    let num_layers = params.num_layers();
    let mut grads = LstmGradients::zeros_like(params);
    // Carries flowing from step t to step t-1, per layer.
    let mut carry_dh = vec![vec![0.0; h]; num_layers];
    let mut carry_dc = vec![vec![0.0; h]; num_layers];

    for t in (0..steps).rev() {
        let cache = &caches[t];
        if cache.layers.len() != num_layers {
            return Err(Error::Internal(format!("missing layer cache at step {t}")));
        }
        // Gradient flowing into each layer's hidden output at this step.
        let mut from_above: Vec<f64> = grad_top_hidden[t].clone();
        if from_above.len() != h {
            return Err(Error::Internal(format!("bad upstream gradient size at step {t}")));
        }
        for l in (0..num_layers).rev() {
            let lc = &cache.layers[l];
            let mut dh = from_above.clone();
            for j in 0..h {
                dh[j] += carry_dh[l][j];
            }
            let mut dz = vec![0.0; 4 * h];
            let mut dc = vec![0.0; h];
            for j in 0..h {
                let d_tanh = dh[j] * lc.gate_o[j];
                dc[j] = d_tanh * (1.0 - lc.tanh_cell[j] * lc.tanh_cell[j]) + carry_dc[l][j];
                dz[j] = dc[j] * lc.gate_g[j] * lc.gate_i[j] * (1.0 - lc.gate_i[j]);
                dz[h + j] = dc[j] * lc.cell_prev[j] * lc.gate_f[j] * (1.0 - lc.gate_f[j]);
                dz[2 * h + j] = dh[j] * lc.tanh_cell[j] * lc.gate_o[j] * (1.0 - lc.gate_o[j]);
                dz[3 * h + j] = dc[j] * lc.gate_i[j] * (1.0 - lc.gate_g[j] * lc.gate_g[j]);
            }
            let lg = &mut grads.layers[l];
            lg.w_input.add_outer(&dz, &lc.layer_input);
            lg.w_hidden.add_outer(&dz, &lc.hidden_prev);
            for (b, d) in lg.bias.iter_mut().zip(&dz) {
                *b += d;
            }
            // Carries to step t-1 for this layer.
            carry_dh[l] = params.layers[l].w_hidden.mul_vec_transposed(&dz);
            for j in 0..h {
                carry_dc[l][j] = dc[j] * lc.gate_f[j];
            }
            // Gradient w.r.t. this layer's input feeds the layer below.
            from_above = params.layers[l].w_input.mul_vec_transposed(&dz);
        }
        // State entering this step was a constant (zero reset or window
        // boundary): nothing flows further back.
        let window_boundary = t % truncation == 0;
        if reset_before[t] || window_boundary {
            for l in 0..num_layers {
                carry_dh[l].iter_mut().for_each(|v| *v = 0.0);
                carry_dc[l].iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }
    Ok(grads)
}

/// Decoder forward on a hidden vector: returns class probabilities.
pub fn decode_probs(params: &LstmParams, hidden: &[f64]) -> Vec<f64> {
    let mut logits = params.decoder_weight.mul_vec(hidden);
    for (l, b) in logits.iter_mut().zip(&params.decoder_bias) {
        *l += b;
    }
    softmax(&logits)
}

/// Accumulate decoder gradients for one labeled step and return
/// dL/d(top hidden), given `dlogits = weight_factor * (probs − onehot)`.
pub fn decode_backward(
    params: &LstmParams,
    hidden: &[f64],
    dlogits: &[f64],
    grads: &mut LstmGradients,
) -> Vec<f64> {
    grads.decoder_weight.add_outer(dlogits, hidden);
    for (b, d) in grads.decoder_bias.iter_mut().zip(dlogits) {
        *b += d;
    }
    params.decoder_weight.mul_vec_transposed(dlogits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::loss::{nll_loss, nll_softmax_grad};
    use crate::rng::stream_rng;
    use rand::Rng;

    fn zero_params(input_dim: usize, hidden_dim: usize, layers: usize) -> LstmParams {
        LstmParams {
            layers: (0..layers)
                .map(|l| {
                    let in_dim = if l == 0 { input_dim } else { hidden_dim };
                    LstmLayerParams {
                        w_input: Matrix::zeros(4 * hidden_dim, in_dim),
                        w_hidden: Matrix::zeros(4 * hidden_dim, hidden_dim),
                        bias: vec![0.0; 4 * hidden_dim],
                    }
                })
                .collect(),
            decoder_weight: Matrix::zeros(4, hidden_dim),
            decoder_bias: vec![0.0; 4],
            input_dim,
            hidden_dim,
            n_classes: 4,
        }
    }

    #[test]
    fn zero_weights_zero_state_stay_zero() {
        let params = zero_params(3, 4, 2);
        let state = LstmState::zeros_like(&params);
        let next = lstm_step(&params, &[1.0, -2.0, 0.5], &state).unwrap();
        assert!(next.is_zero());
    }

    #[test]
    fn zero_weights_halve_previous_cell() {
        // With all-zero weights every gate is 0.5 and the candidate is 0, so
        // cell' = 0.5*cell and hidden' = 0.5*tanh(0.5*cell).
        let params = zero_params(2, 3, 1);
        let mut state = LstmState::zeros_like(&params);
        state.layers[0].cell = vec![0.8, -1.2, 2.0];
        let next = lstm_step(&params, &[0.0, 0.0], &state).unwrap();
        for j in 0..3 {
            let s = state.layers[0].cell[j];
            assert!((next.layers[0].cell[j] - 0.5 * s).abs() < 1e-15);
            assert!((next.layers[0].hidden[j] - 0.5 * (0.5 * s).tanh()).abs() < 1e-15);
        }
    }

    /// Independent scalar-loop oracle for a stacked LSTM step.
    fn oracle_step(params: &LstmParams, x: &[f64], state: &LstmState) -> LstmState {
        let h = params.hidden_dim;
        let mut input = x.to_vec();
        let mut out_layers = Vec::new();
        for (l, lp) in params.layers.iter().enumerate() {
            let sigmoid = |v: f64| 1.0 / (1.0 + (-v).exp());
            let mut cell = vec![0.0; h];
            let mut hidden = vec![0.0; h];
            for j in 0..h {
                let mut pre = [0.0; 4];
                for (block, p) in pre.iter_mut().enumerate() {
                    let row = block * h + j;
                    let mut acc = lp.bias[row];
                    for (c, xv) in input.iter().enumerate() {
                        acc += lp.w_input.get(row, c) * xv;
                    }
                    for c in 0..h {
                        acc += lp.w_hidden.get(row, c) * state.layers[l].hidden[c];
                    }
                    *p = acc;
                }
                let gi = sigmoid(pre[0]);
                let gf = sigmoid(pre[1]);
                let go = sigmoid(pre[2]);
                let gg = pre[3].tanh();
                cell[j] = gf * state.layers[l].cell[j] + gi * gg;
                hidden[j] = go * cell[j].tanh();
            }
            input = hidden.clone();
            out_layers.push(LayerState { cell, hidden });
        }
        LstmState { layers: out_layers }
    }

    #[test]
    fn random_step_matches_scalar_oracle() {
        let mut rng = stream_rng(41, &[0]);
        let params = LstmParams::init(3, 5, 2, 4, &mut rng).unwrap();
        let mut state = LstmState::zeros_like(&params);
        for l in &mut state.layers {
            for v in l.cell.iter_mut().chain(l.hidden.iter_mut()) {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fast = lstm_step(&params, &x, &state).unwrap();
        let slow = oracle_step(&params, &x, &state);
        for (a, b) in fast.layers.iter().zip(&slow.layers) {
            for (x, y) in a.cell.iter().zip(&b.cell) {
                assert!((x - y).abs() < 1e-12);
            }
            for (x, y) in a.hidden.iter().zip(&b.hidden) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn step_is_bitwise_deterministic() {
        let mut rng = stream_rng(5, &[1]);
        let params = LstmParams::init(4, 6, 2, 4, &mut rng).unwrap();
        let state = LstmState::zeros_like(&params);
        let x = [0.3, -0.7, 1.1, 0.0];
        let a = lstm_step(&params, &x, &state).unwrap();
        let b = lstm_step(&params, &x, &state).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn non_finite_weight_names_the_gate() {
        let mut params = zero_params(2, 2, 1);
        // Poison the forget-gate block of the input weights.
        params.layers[0].w_input.set(2, 0, f64::INFINITY);
        let state = LstmState::zeros_like(&params);
        let err = lstm_step(&params, &[1.0, 1.0], &state).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("forget"), "unexpected message: {msg}");
    }

    #[test]
    fn cached_and_plain_step_agree() {
        let mut rng = stream_rng(6, &[2]);
        let params = LstmParams::init(3, 4, 2, 4, &mut rng).unwrap();
        let state = LstmState::zeros_like(&params);
        let x = [0.5, -0.25, 0.75];
        let plain = lstm_step(&params, &x, &state).unwrap();
        let (cached, _) = lstm_step_cached(&params, &x, &state).unwrap();
        assert_eq!(plain, cached);
    }

    #[test]
    fn zero_upstream_gradients_give_zero_parameter_gradients() {
        let mut rng = stream_rng(7, &[3]);
        let params = LstmParams::init(2, 3, 1, 4, &mut rng).unwrap();
        let mut state = LstmState::zeros_like(&params);
        let mut caches = Vec::new();
        for t in 0..4 {
            let x = [t as f64 * 0.1, -0.2];
            let (next, cache) = lstm_step_cached(&params, &x, &state).unwrap();
            caches.push(cache);
            state = next;
        }
        let zeros = vec![vec![0.0; 3]; 4];
        let grads = bptt_backward(&params, &caches, &[false; 4], &zeros, 10).unwrap();
        for l in &grads.layers {
            assert!(l.w_input.data().iter().all(|v| *v == 0.0));
            assert!(l.w_hidden.data().iter().all(|v| *v == 0.0));
            assert!(l.bias.iter().all(|v| *v == 0.0));
        }
    }

    /// Run a forward pass and compute the total decoded NLL plus the analytic
    /// gradients, honoring the given reset pattern.
    fn loss_and_grads(
        params: &LstmParams,
        inputs: &[Vec<f64>],
        labels: &[usize],
        resets: &[bool],
        truncation: usize,
    ) -> (f64, LstmGradients) {
        let mut state = LstmState::zeros_like(params);
        let mut caches = Vec::new();
        let mut grads = LstmGradients::zeros_like(params);
        let mut dh_top = Vec::new();
        let mut total = 0.0;
        for (t, x) in inputs.iter().enumerate() {
            if resets[t] {
                state = LstmState::zeros_like(params);
            }
            let (next, cache) = lstm_step_cached(params, x, &state).unwrap();
            let probs = decode_probs(params, next.top_hidden());
            total += nll_loss(&probs, labels[t]).unwrap();
            let dlogits = nll_softmax_grad(&probs, labels[t], 1.0);
            dh_top.push(decode_backward(params, next.top_hidden(), &dlogits, &mut grads));
            caches.push(cache);
            state = next;
        }
        let rec = bptt_backward(params, &caches, resets, &dh_top, truncation).unwrap();
        grads.add_assign(&rec);
        (total, grads)
    }

    fn forward_loss(
        params: &LstmParams,
        inputs: &[Vec<f64>],
        labels: &[usize],
        resets: &[bool],
    ) -> f64 {
        let mut state = LstmState::zeros_like(params);
        let mut total = 0.0;
        for (t, x) in inputs.iter().enumerate() {
            if resets[t] {
                state = LstmState::zeros_like(params);
            }
            state = lstm_step(params, x, &state).unwrap();
            let probs = decode_probs(params, state.top_hidden());
            total += nll_loss(&probs, labels[t]).unwrap();
        }
        total
    }

    fn finite_difference_check(resets: &[bool], seed: u64) {
        let mut rng = stream_rng(seed, &[4]);
        let mut params = LstmParams::init(3, 4, 2, 4, &mut rng).unwrap();
        let steps = resets.len();
        let inputs: Vec<Vec<f64>> = (0..steps)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let labels: Vec<usize> = (0..steps).map(|_| rng.random_range(0..4)).collect();
        let (_, grads) = loss_and_grads(&params, &inputs, &labels, resets, steps);

        let eps = 1e-5;
        let mut max_rel = 0.0f64;
        let mut check = |analytic: f64, perturb: &mut dyn FnMut(&mut LstmParams, f64)| {
            let mut up = params.clone();
            perturb(&mut up, eps);
            let mut down = params.clone();
            perturb(&mut down, -eps);
            let fd = (forward_loss(&up, &inputs, &labels, resets)
                - forward_loss(&down, &inputs, &labels, resets))
                / (2.0 * eps);
            let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-6);
            max_rel = max_rel.max(rel);
        };
        for l in 0..params.layers.len() {
            for i in 0..params.layers[l].w_input.data().len() {
                check(grads.layers[l].w_input.data()[i], &mut |p, e| {
                    p.layers[l].w_input.data_mut()[i] += e
                });
            }
            for i in 0..params.layers[l].w_hidden.data().len() {
                check(grads.layers[l].w_hidden.data()[i], &mut |p, e| {
                    p.layers[l].w_hidden.data_mut()[i] += e
                });
            }
            for i in 0..params.layers[l].bias.len() {
                check(grads.layers[l].bias[i], &mut |p, e| p.layers[l].bias[i] += e);
            }
        }
        for i in 0..params.decoder_weight.data().len() {
            check(grads.decoder_weight.data()[i], &mut |p, e| {
                p.decoder_weight.data_mut()[i] += e
            });
        }
        for i in 0..params.decoder_bias.len() {
            check(grads.decoder_bias[i], &mut |p, e| p.decoder_bias[i] += e);
        }
        // Touch params once more so the closure borrow ends cleanly.
        params.decoder_bias[0] += 0.0;
        assert!(max_rel < 1e-4, "max relative error {max_rel}");
    }

    #[test]
    fn bptt_matches_finite_differences_on_random_sequence() {
        finite_difference_check(&[false; 5], 101);
    }

    #[test]
    fn bptt_matches_finite_differences_with_reset_boundary() {
        finite_difference_check(&[false, false, true, false, false, false], 103);
    }

    #[test]
    fn reset_boundary_splits_sequence_into_independent_segments() {
        let mut rng = stream_rng(77, &[5]);
        let params = LstmParams::init(2, 3, 1, 4, &mut rng).unwrap();
        let inputs: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..2).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let labels: Vec<usize> = (0..6).map(|_| rng.random_range(0..4)).collect();
        let resets = [false, false, false, true, false, false];
        let (_, whole) = loss_and_grads(&params, &inputs, &labels, &resets, 100);
        let (_, first) =
            loss_and_grads(&params, &inputs[..3], &labels[..3], &[false; 3], 100);
        let (_, second) =
            loss_and_grads(&params, &inputs[3..], &labels[3..], &[false; 3], 100);
        let mut combined = first;
        combined.add_assign(&second);
        for (a, b) in whole.layers.iter().zip(&combined.layers) {
            for (x, y) in a.w_input.data().iter().zip(b.w_input.data()) {
                assert!((x - y).abs() < 1e-12);
            }
            for (x, y) in a.w_hidden.data().iter().zip(b.w_hidden.data()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn truncation_detaches_windows() {
        // With truncation 2, a 4-step sequence must produce the same gradients
        // as two independent 2-step halves whose initial states are carried
        // forward but detached.
        let mut rng = stream_rng(78, &[6]);
        let params = LstmParams::init(2, 3, 1, 4, &mut rng).unwrap();
        let inputs: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..2).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let labels = [0usize, 1, 2, 3];
        let (_, truncated) = loss_and_grads(&params, &inputs, &labels, &[false; 4], 2);

        // Manual two-window computation.
        let mut state = LstmState::zeros_like(&params);
        let mut manual = LstmGradients::zeros_like(&params);
        for w in 0..2 {
            let mut caches = Vec::new();
            let mut dh = Vec::new();
            let mut s = state.clone();
            for t in 2 * w..2 * w + 2 {
                let (next, cache) = lstm_step_cached(&params, &inputs[t], &s).unwrap();
                let probs = decode_probs(&params, next.top_hidden());
                let dlogits = nll_softmax_grad(&probs, labels[t], 1.0);
                dh.push(decode_backward(&params, next.top_hidden(), &dlogits, &mut manual));
                caches.push(cache);
                s = next;
            }
            let g = bptt_backward(&params, &caches, &[false; 2], &dh, 2).unwrap();
            manual.add_assign(&g);
            state = s;
        }
        for (a, b) in truncated.layers.iter().zip(&manual.layers) {
            for (x, y) in a.w_input.data().iter().zip(b.w_input.data()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
