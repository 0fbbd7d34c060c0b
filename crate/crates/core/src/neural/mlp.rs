//! Dense feed-forward layers with hand-derived gradients.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Identity => v,
        }
    }

    /// Derivative expressed in terms of the pre-activation value.
    #[inline]
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// One dense layer: `y = act(W x + b)`, weight shape `(out_dim, in_dim)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// A stack of dense layers with chained dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<DenseLayer>,
}

impl MlpParams {
    /// Initialize with uniform weights in ±1/sqrt(fan_in) and zero biases.
    ///
    /// `dims` lists the full dimension chain, e.g. `[3, 32, 32, 64]`;
    /// `activations` has one entry per layer.
    pub fn init(dims: &[usize], activations: &[Activation], rng: &mut ChaCha8Rng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Config("mlp needs at least one layer".into()));
        }
        if activations.len() != dims.len() - 1 {
            return Err(Error::Config(format!(
                "mlp has {} layers but {} activations",
                dims.len() - 1,
                activations.len()
            )));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for (k, act) in activations.iter().enumerate() {
            let (fan_in, fan_out) = (dims[k], dims[k + 1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut weight = Matrix::zeros(fan_out, fan_in);
            for v in weight.data_mut() {
                *v = rng.random_range(-bound..bound);
            }
            layers.push(DenseLayer {
                weight,
                bias: vec![0.0; fan_out],
                activation: *act,
            });
        }
        Ok(MlpParams { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim())
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim())
    }

    /// Verify the layer dimension chain.
    pub fn validate(&self) -> Result<()> {
        for (k, pair) in self.layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Config(format!(
                    "layer {} output dim {} does not chain into layer {} input dim {}",
                    k,
                    pair[0].out_dim(),
                    k + 1,
                    pair[1].in_dim()
                )));
            }
        }
        for (k, l) in self.layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(Error::Config(format!("layer {k} bias length mismatch")));
            }
            if !l.weight.is_finite() || !l.bias.iter().all(|v| v.is_finite()) {
                return Err(Error::Numeric(format!("layer {k} has non-finite weights")));
            }
        }
        Ok(())
    }
}

/// Cached activations from a forward pass, needed by [`mlp_backward`].
#[derive(Debug, Clone)]
pub struct MlpForward {
    /// `pre[k]` are the pre-activation values of layer k, one row per sample.
    pub pre: Vec<Matrix>,
    /// `post[0]` is the input; `post[k+1]` the post-activation of layer k.
    pub post: Vec<Matrix>,
}

impl MlpForward {
    pub fn output(&self) -> &Matrix {
        self.post.last().expect("forward cache has at least the input")
    }
}

/// Gradients shaped like [`MlpParams`], plus the gradient w.r.t. the input.
#[derive(Debug, Clone)]
pub struct MlpGradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpGradients {
    pub fn zeros_like(params: &MlpParams) -> Self {
        MlpGradients {
            weights: params
                .layers
                .iter()
                .map(|l| Matrix::zeros(l.out_dim(), l.in_dim()))
                .collect(),
            biases: params.layers.iter().map(|l| vec![0.0; l.out_dim()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &MlpGradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.add_assign(b);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for w in &mut self.weights {
            w.scale(factor);
        }
        for b in &mut self.biases {
            for v in b {
                *v *= factor;
            }
        }
    }
}

/// Run the network on `input` (one sample per row), caching activations.
pub fn mlp_forward(params: &MlpParams, input: &Matrix) -> Result<MlpForward> {
    if input.cols() != params.input_dim() {
        return Err(Error::Config(format!(
            "input has {} columns, first layer expects {}",
            input.cols(),
            params.input_dim()
        )));
    }
    let n = input.rows();
    let mut pre = Vec::with_capacity(params.layers.len());
    let mut post = Vec::with_capacity(params.layers.len() + 1);
    post.push(input.clone());
    for layer in &params.layers {
        let x = post.last().unwrap();
        let mut z = Matrix::zeros(n, layer.out_dim());
        for r in 0..n {
            let zr = layer.weight.mul_vec(x.row(r));
            let row = z.row_mut(r);
            for (c, v) in zr.into_iter().enumerate() {
                row[c] = v + layer.bias[c];
            }
        }
        let mut a = z.clone();
        for v in a.data_mut() {
            *v = layer.activation.apply(*v);
        }
        pre.push(z);
        post.push(a);
    }
    Ok(MlpForward { pre, post })
}

/// Backpropagate `grad_output` (dL/d output, one row per sample).
///
/// Returns parameter gradients and the gradient w.r.t. the input rows.
pub fn mlp_backward(
    params: &MlpParams,
    cache: &MlpForward,
    grad_output: &Matrix,
) -> (MlpGradients, Matrix) {
    let n = grad_output.rows();
    let mut grads = MlpGradients::zeros_like(params);
    let mut upstream = grad_output.clone();
    for (k, layer) in params.layers.iter().enumerate().rev() {
        let pre = &cache.pre[k];
        let below = &cache.post[k];
        let mut next_upstream = Matrix::zeros(n, layer.in_dim());
        for r in 0..n {
            // dL/dz = dL/da * act'(z)
            let mut dz = upstream.row(r).to_vec();
            for (c, v) in dz.iter_mut().enumerate() {
                *v *= layer.activation.derivative(pre.get(r, c));
            }
            grads.weights[k].add_outer(&dz, below.row(r));
            for (c, v) in dz.iter().enumerate() {
                grads.biases[k][c] += v;
            }
            let dx = layer.weight.mul_vec_transposed(&dz);
            next_upstream.row_mut(r).copy_from_slice(&dx);
        }
        upstream = next_upstream;
    }
    (grads, upstream)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    /// Straight-line re-implementation of the forward pass, kept deliberately
    /// separate from the production code path.
    fn naive_forward(params: &MlpParams, input: &[Vec<f64>]) -> Vec<Vec<f64>> {
        input
            .iter()
            .map(|row| {
                let mut x = row.clone();
                for layer in &params.layers {
                    let mut y = vec![0.0; layer.out_dim()];
                    for r in 0..layer.out_dim() {
                        let mut acc = layer.bias[r];
                        for c in 0..layer.in_dim() {
                            acc += layer.weight.get(r, c) * x[c];
                        }
                        y[r] = match layer.activation {
                            Activation::Relu => acc.max(0.0),
                            Activation::Identity => acc,
                        };
                    }
                    x = y;
                }
                x
            })
            .collect()
    }

    #[test]
    fn identity_weights_relu_clamps_negatives() {
        let params = MlpParams {
            layers: vec![DenseLayer {
                weight: Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap(),
                bias: vec![0.0, 0.0],
                activation: Activation::Relu,
            }],
        };
        let input = Matrix::from_vec(1, 2, vec![-1.0, 2.0]).unwrap();
        let out = mlp_forward(&params, &input).unwrap();
        assert_eq!(out.output().data(), &[0.0, 2.0]);
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let params = MlpParams {
            layers: vec![DenseLayer {
                weight: Matrix::zeros(3, 2),
                bias: vec![0.0; 3],
                activation: Activation::Relu,
            }],
        };
        let input = Matrix::from_vec(2, 2, vec![1.0, -4.0, 2.5, 0.3]).unwrap();
        let out = mlp_forward(&params, &input).unwrap();
        assert!(out.output().data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn random_three_layer_net_matches_naive_oracle() {
        let mut rng = stream_rng(11, &[0]);
        let params = MlpParams::init(
            &[3, 5, 4, 2],
            &[Activation::Relu, Activation::Relu, Activation::Identity],
            &mut rng,
        )
        .unwrap();
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let input = Matrix::from_rows(&rows).unwrap();
        let out = mlp_forward(&params, &input).unwrap();
        let oracle = naive_forward(&params, &rows);
        for r in 0..6 {
            for c in 0..2 {
                assert!(
                    (out.output().get(r, c) - oracle[r][c]).abs() < 1e-12,
                    "mismatch at ({r},{c})"
                );
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let mut rng = stream_rng(1, &[0]);
        let params = MlpParams::init(&[3, 4], &[Activation::Relu], &mut rng).unwrap();
        let input = Matrix::zeros(1, 5);
        assert!(matches!(
            mlp_forward(&params, &input),
            Err(crate::error::Error::Config(_))
        ));
    }

    #[test]
    fn backward_matches_central_finite_differences() {
        let mut rng = stream_rng(23, &[0]);
        let mut params = MlpParams::init(
            &[4, 6, 3],
            &[Activation::Relu, Activation::Identity],
            &mut rng,
        )
        .unwrap();
        let rows: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let input = Matrix::from_rows(&rows).unwrap();

        // Loss: sum of squares of outputs.
        let loss = |p: &MlpParams| -> f64 {
            let out = mlp_forward(p, &input).unwrap();
            out.output().data().iter().map(|v| v * v).sum::<f64>()
        };
        let cache = mlp_forward(&params, &input).unwrap();
        let mut grad_out = cache.output().clone();
        grad_out.scale(2.0);
        let (grads, _) = mlp_backward(&params, &cache, &grad_out);

        let eps = 1e-5;
        let mut max_rel = 0.0f64;
        for k in 0..params.layers.len() {
            for i in 0..grads.weights[k].data().len() {
                let orig = params.layers[k].weight.data()[i];
                params.layers[k].weight.data_mut()[i] = orig + eps;
                let up = loss(&params);
                params.layers[k].weight.data_mut()[i] = orig - eps;
                let down = loss(&params);
                params.layers[k].weight.data_mut()[i] = orig;
                let fd = (up - down) / (2.0 * eps);
                let an = grads.weights[k].data()[i];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
                max_rel = max_rel.max(rel);
            }
        }
        assert!(max_rel < 1e-4, "max relative error {max_rel}");
    }
}
