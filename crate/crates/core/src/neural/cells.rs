//! Alternative recurrent cells (GRU, basic RNN) behind the same step shape
//! as the LSTM. Provided for comparison experiments; the mapping pipeline
//! itself always uses the LSTM cell.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Single-layer GRU: `z, r` gates plus candidate `n`.
///
/// ```text
/// z = sigmoid(Wz x + Uz h + bz)
/// r = sigmoid(Wr x + Ur h + br)
/// n = tanh  (Wn x + Un (r ⊙ h) + bn)
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruParams {
    /// Shape `(3*hidden, input_dim)`, blocks stacked z, r, n.
    pub w_input: Matrix,
    /// Shape `(3*hidden, hidden)`.
    pub w_hidden: Matrix,
    pub bias: Vec<f64>,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl GruParams {
    pub fn init(input_dim: usize, hidden_dim: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 {
            return Err(Error::Config("gru dimensions must be positive".into()));
        }
        let mut w_input = Matrix::zeros(3 * hidden_dim, input_dim);
        let bound = 1.0 / (input_dim as f64).sqrt();
        for v in w_input.data_mut() {
            *v = rng.random_range(-bound..bound);
        }
        let mut w_hidden = Matrix::zeros(3 * hidden_dim, hidden_dim);
        let bound = 1.0 / (hidden_dim as f64).sqrt();
        for v in w_hidden.data_mut() {
            *v = rng.random_range(-bound..bound);
        }
        Ok(GruParams {
            w_input,
            w_hidden,
            bias: vec![0.0; 3 * hidden_dim],
            input_dim,
            hidden_dim,
        })
    }
}

#[derive(Debug, Clone)]
pub struct GruStepCache {
    pub x: Vec<f64>,
    pub h_prev: Vec<f64>,
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    pub n: Vec<f64>,
}

pub fn gru_step(
    params: &GruParams,
    x: &[f64],
    h_prev: &[f64],
) -> Result<(Vec<f64>, GruStepCache)> {
    if x.len() != params.input_dim || h_prev.len() != params.hidden_dim {
        return Err(Error::Config("gru step dimension mismatch".into()));
    }
    let h = params.hidden_dim;
    let zx = params.w_input.mul_vec(x);
    let zh = params.w_hidden.mul_vec(h_prev);
    let mut z = vec![0.0; h];
    let mut r = vec![0.0; h];
    for j in 0..h {
        z[j] = sigmoid(zx[j] + zh[j] + params.bias[j]);
        r[j] = sigmoid(zx[h + j] + zh[h + j] + params.bias[h + j]);
    }
    // Candidate uses the reset-gated hidden; recompute its recurrent part.
    let rh: Vec<f64> = r.iter().zip(h_prev).map(|(rv, hv)| rv * hv).collect();
    let mut n = vec![0.0; h];
    for j in 0..h {
        let row = 2 * h + j;
        let mut acc = params.bias[row] + zx[row];
        for c in 0..h {
            acc += params.w_hidden.get(row, c) * rh[c];
        }
        n[j] = acc.tanh();
    }
    let mut h_new = vec![0.0; h];
    for j in 0..h {
        h_new[j] = (1.0 - z[j]) * n[j] + z[j] * h_prev[j];
    }
    if !h_new.iter().all(|v| v.is_finite()) {
        return Err(Error::Numeric("non-finite gru hidden state".into()));
    }
    Ok((
        h_new,
        GruStepCache {
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            z,
            r,
            n,
        },
    ))
}

#[derive(Debug, Clone)]
pub struct GruGradients {
    pub w_input: Matrix,
    pub w_hidden: Matrix,
    pub bias: Vec<f64>,
}

impl GruGradients {
    pub fn zeros_like(p: &GruParams) -> Self {
        GruGradients {
            w_input: Matrix::zeros(p.w_input.rows(), p.w_input.cols()),
            w_hidden: Matrix::zeros(p.w_hidden.rows(), p.w_hidden.cols()),
            bias: vec![0.0; p.bias.len()],
        }
    }
}

/// Backpropagate a GRU sequence; `grad_hidden[t]` is dL/dh at step t.
pub fn gru_backward(
    params: &GruParams,
    caches: &[GruStepCache],
    grad_hidden: &[Vec<f64>],
) -> Result<GruGradients> {
    if caches.len() != grad_hidden.len() {
        return Err(Error::Internal("gru backward length mismatch".into()));
    }
    let h = params.hidden_dim;
    let mut grads = GruGradients::zeros_like(params);
    let mut carry = vec![0.0; h];
    for t in (0..caches.len()).rev() {
        let c = &caches[t];
        let mut dh = grad_hidden[t].clone();
        for j in 0..h {
            dh[j] += carry[j];
        }
        let mut dz_pre = vec![0.0; h];
        let mut dn_pre = vec![0.0; h];
        for j in 0..h {
            let dn = dh[j] * (1.0 - c.z[j]);
            let dz = dh[j] * (c.h_prev[j] - c.n[j]);
            dn_pre[j] = dn * (1.0 - c.n[j] * c.n[j]);
            dz_pre[j] = dz * c.z[j] * (1.0 - c.z[j]);
        }
        // d(r ⊙ h_prev) through the candidate's recurrent matrix.
        let mut drh = vec![0.0; h];
        for j in 0..h {
            for k in 0..h {
                drh[k] += params.w_hidden.get(2 * h + j, k) * dn_pre[j];
            }
        }
        let mut dr_pre = vec![0.0; h];
        for j in 0..h {
            dr_pre[j] = drh[j] * c.h_prev[j] * c.r[j] * (1.0 - c.r[j]);
        }
        // Assemble the stacked pre-activation gradient [z, r, n].
        let mut dpre = vec![0.0; 3 * h];
        dpre[..h].copy_from_slice(&dz_pre);
        dpre[h..2 * h].copy_from_slice(&dr_pre);
        dpre[2 * h..].copy_from_slice(&dn_pre);
        grads.w_input.add_outer(&dpre, &c.x);
        for (b, d) in grads.bias.iter_mut().zip(&dpre) {
            *b += d;
        }
        // Recurrent weight gradient: z and r rows see h_prev, n rows see r ⊙ h_prev.
        let rh: Vec<f64> = c.r.iter().zip(&c.h_prev).map(|(r, hp)| r * hp).collect();
        for j in 0..h {
            for k in 0..h {
                let g0 = grads.w_hidden.get(j, k) + dz_pre[j] * c.h_prev[k];
                grads.w_hidden.set(j, k, g0);
                let g1 = grads.w_hidden.get(h + j, k) + dr_pre[j] * c.h_prev[k];
                grads.w_hidden.set(h + j, k, g1);
                let g2 = grads.w_hidden.get(2 * h + j, k) + dn_pre[j] * rh[k];
                grads.w_hidden.set(2 * h + j, k, g2);
            }
        }
        // Carry to h_prev: direct z-path plus all gate paths.
        let mut next = vec![0.0; h];
        for j in 0..h {
            next[j] = dh[j] * c.z[j] + drh[j] * c.r[j];
        }
        for j in 0..h {
            for k in 0..h {
                next[k] += params.w_hidden.get(j, k) * dz_pre[j];
                next[k] += params.w_hidden.get(h + j, k) * dr_pre[j];
            }
        }
        carry = next;
    }
    Ok(grads)
}

/// Single-layer Elman RNN: `h' = tanh(W x + U h + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasicRnnParams {
    pub w_input: Matrix,
    pub w_hidden: Matrix,
    pub bias: Vec<f64>,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl BasicRnnParams {
    pub fn init(input_dim: usize, hidden_dim: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 {
            return Err(Error::Config("rnn dimensions must be positive".into()));
        }
        let mut w_input = Matrix::zeros(hidden_dim, input_dim);
        let bound = 1.0 / (input_dim as f64).sqrt();
        for v in w_input.data_mut() {
            *v = rng.random_range(-bound..bound);
        }
        let mut w_hidden = Matrix::zeros(hidden_dim, hidden_dim);
        let bound = 1.0 / (hidden_dim as f64).sqrt();
        for v in w_hidden.data_mut() {
            *v = rng.random_range(-bound..bound);
        }
        Ok(BasicRnnParams {
            w_input,
            w_hidden,
            bias: vec![0.0; hidden_dim],
            input_dim,
            hidden_dim,
        })
    }
}

pub fn basic_rnn_step(params: &BasicRnnParams, x: &[f64], h_prev: &[f64]) -> Result<Vec<f64>> {
    if x.len() != params.input_dim || h_prev.len() != params.hidden_dim {
        return Err(Error::Config("rnn step dimension mismatch".into()));
    }
    let mut z = params.w_input.mul_vec(x);
    let zh = params.w_hidden.mul_vec(h_prev);
    for ((zv, zhv), b) in z.iter_mut().zip(zh).zip(&params.bias) {
        *zv = (*zv + zhv + b).tanh();
    }
    Ok(z)
}
