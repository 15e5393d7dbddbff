//! Network storage, forward pass, and reverse-mode gradients.

use ndarray::{Array1, Array2, Axis};
use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::MlpConfig;
use crate::{Error, Result};

/// `x * sigmoid(x)`.
pub fn swish(x: f64) -> f64 {
    x * sigmoid(x)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `sigma(x) + x * sigma(x) * (1 - sigma(x))`.
fn swish_prime(x: f64) -> f64 {
    let s = sigmoid(x);
    s + x * s * (1.0 - s)
}

/// Whether batch statistics (training) or running statistics (inference)
/// normalize the batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A pre-linear batch normalization site.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    gamma_buf: Array1<f64>,
    beta_buf: Array1<f64>,
}

impl BatchNorm {
    fn new(dim: usize) -> Self {
        BatchNorm {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
            running_mean: Array1::zeros(dim),
            running_var: Array1::ones(dim),
            gamma_buf: Array1::zeros(dim),
            beta_buf: Array1::zeros(dim),
        }
    }
}

/// One linear layer with its optional pre-norm site.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub norm: Option<BatchNorm>,
    /// Row-major `[in, out]` so a batch multiplies on the left.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    /// Swish after the linear map; false only on the output layer.
    pub activated: bool,
    weight_buf: Array2<f64>,
    bias_buf: Array1<f64>,
}

/// The full network: layer stack plus per-parameter momentum buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub config: MlpConfig,
    pub layers: Vec<Layer>,
}

/// Per-layer intermediates needed for the backward pass.
pub struct LayerCache {
    /// Input to the linear map (post-norm when a norm site exists).
    linear_input: Array2<f64>,
    /// Pre-activation output of the linear map.
    z: Array2<f64>,
    /// Normalized input, `(x - mean) / sqrt(var + eps)`.
    x_hat: Option<Array2<f64>>,
    inv_std: Option<Array1<f64>>,
    batch_mean: Option<Array1<f64>>,
    batch_var: Option<Array1<f64>>,
}

/// Everything the backward pass and the running-statistics update need.
pub struct ForwardCache {
    layers: Vec<LayerCache>,
    pub output: Array2<f64>,
}

/// Gradients in the same order as the network's layers.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
}

#[derive(Debug, Clone)]
pub struct LayerGrads {
    pub d_weight: Array2<f64>,
    pub d_bias: Array1<f64>,
    pub d_gamma: Option<Array1<f64>>,
    pub d_beta: Option<Array1<f64>>,
}

impl Network {
    /// Initialize with fan-scaled uniform weights (bound
    /// `sqrt(6 / (fan_in + fan_out))`), zero biases, unit gamma, zero
    /// beta, and running statistics (0, 1). Deterministic for a seed.
    pub fn init(config: &MlpConfig, seed: u64) -> Result<Network> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut prev = config.input_dim;
        let push = |layers: &mut Vec<Layer>, inp: usize, out: usize, norm: bool, act: bool,
                    rng: &mut ChaCha8Rng| {
            let bound = (6.0 / (inp + out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            layers.push(Layer {
                norm: norm.then(|| BatchNorm::new(inp)),
                weight: Array2::from_shape_fn((inp, out), |_| dist.sample(rng)),
                bias: Array1::zeros(out),
                activated: act,
                weight_buf: Array2::zeros((inp, out)),
                bias_buf: Array1::zeros(out),
            });
        };
        // Plain input layer, then repeated pre-norm blocks, then the bare
        // output layer.
        push(&mut layers, prev, config.layer_dims[0], false, true, &mut rng);
        prev = config.layer_dims[0];
        for &dim in &config.layer_dims[1..] {
            for _ in 0..config.block_repeat {
                push(&mut layers, prev, dim, true, true, &mut rng);
                prev = dim;
            }
        }
        push(&mut layers, prev, config.output_dim, false, false, &mut rng);
        Ok(Network { config: config.clone(), layers })
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| {
                l.weight.len()
                    + l.bias.len()
                    + l.norm.as_ref().map_or(0, |n| n.gamma.len() + n.beta.len())
            })
            .sum()
    }

    fn check_batch(&self, batch: &Array2<f64>, mode: Mode) -> Result<()> {
        if batch.ncols() != self.config.input_dim {
            return Err(Error::InvalidInput(format!(
                "batch has {} columns, network expects {}",
                batch.ncols(),
                self.config.input_dim
            )));
        }
        if batch.nrows() == 0 || (mode == Mode::Train && batch.nrows() < 2) {
            return Err(Error::InvalidInput(
                "training batches need at least 2 rows for batch statistics".to_string(),
            ));
        }
        Ok(())
    }

    /// Side-effect-free forward pass. Train mode normalizes with batch
    /// statistics, eval mode with running statistics; neither touches the
    /// stored running statistics (the training loop does that through
    /// [`Network::forward_training`]).
    pub fn forward(&self, batch: &Array2<f64>, mode: Mode) -> Result<Array2<f64>> {
        Ok(self.forward_cached(batch, mode)?.output)
    }

    /// Forward pass that keeps every intermediate for [`Network::backward`].
    pub fn forward_cached(&self, batch: &Array2<f64>, mode: Mode) -> Result<ForwardCache> {
        self.check_batch(batch, mode)?;
        let eps = self.config.bn_epsilon;
        let mut x = batch.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (linear_input, x_hat, inv_std, batch_mean, batch_var) = match &layer.norm {
                None => (x, None, None, None, None),
                Some(bn) => {
                    let (mean, var) = match mode {
                        Mode::Train => {
                            let mean = x.mean_axis(Axis(0)).expect("non-empty batch");
                            let centered = &x - &mean;
                            let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).unwrap();
                            (mean, var)
                        }
                        Mode::Eval => (bn.running_mean.clone(), bn.running_var.clone()),
                    };
                    let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
                    let x_hat = (&x - &mean) * &inv_std;
                    let u = &x_hat * &bn.gamma + &bn.beta;
                    let (bm, bv) = match mode {
                        Mode::Train => (Some(mean), Some(var)),
                        Mode::Eval => (None, None),
                    };
                    (u, Some(x_hat), Some(inv_std), bm, bv)
                }
            };
            let z = linear_input.dot(&layer.weight) + &layer.bias;
            x = if layer.activated { z.mapv(swish) } else { z.clone() };
            caches.push(LayerCache { linear_input, z, x_hat, inv_std, batch_mean, batch_var });
        }
        Ok(ForwardCache { layers: caches, output: x })
    }

    /// Training-path forward: batch statistics normalize the batch and the
    /// running statistics absorb them through the exponential moving
    /// average `running <- m * running + (1 - m) * batch`.
    pub fn forward_training(&mut self, batch: &Array2<f64>) -> Result<ForwardCache> {
        let cache = self.forward_cached(batch, Mode::Train)?;
        let m = self.config.bn_momentum;
        for (layer, lc) in self.layers.iter_mut().zip(cache.layers.iter()) {
            if let Some(bn) = layer.norm.as_mut() {
                let mean = lc.batch_mean.as_ref().expect("train cache has batch stats");
                let var = lc.batch_var.as_ref().expect("train cache has batch stats");
                bn.running_mean = &bn.running_mean * m + &(mean * (1.0 - m));
                bn.running_var = &bn.running_var * m + &(var * (1.0 - m));
            }
        }
        Ok(cache)
    }

    /// Exact gradients of the mean-squared-error loss with respect to
    /// every weight, bias, gamma, and beta, given a train-mode cache.
    pub fn backward(&self, cache: &ForwardCache, labels: &Array2<f64>) -> Result<Gradients> {
        if labels.dim() != cache.output.dim() {
            return Err(Error::InvalidInput(format!(
                "labels {:?} do not match predictions {:?}",
                labels.dim(),
                cache.output.dim()
            )));
        }
        let batch = cache.output.nrows() as f64;
        // d(mean squared error)/d(pred), averaged over every element.
        let mut d = (&cache.output - labels) * (2.0 / (batch * cache.output.ncols() as f64));
        let mut grads = vec![None; self.layers.len()];
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let lc = &cache.layers[i];
            let dz = if layer.activated { &d * &lc.z.mapv(swish_prime) } else { d };
            let d_weight = lc.linear_input.t().dot(&dz);
            let d_bias = dz.sum_axis(Axis(0));
            let du = dz.dot(&layer.weight.t());
            let (d_gamma, d_beta, dx) = match (&layer.norm, &lc.x_hat, &lc.inv_std) {
                (Some(bn), Some(x_hat), Some(inv_std)) => {
                    let d_beta = du.sum_axis(Axis(0));
                    let d_gamma = (&du * x_hat).sum_axis(Axis(0));
                    // Full batch-statistics Jacobian: both the mean and the
                    // variance depend on every row of the batch.
                    let n = du.nrows() as f64;
                    let term = &du * n - &d_beta - &(x_hat * &d_gamma);
                    let dx = term * &(&bn.gamma * inv_std.mapv(|v| v / n));
                    (Some(d_gamma), Some(d_beta), dx)
                }
                _ => (None, None, du),
            };
            grads[i] = Some(LayerGrads { d_weight, d_bias, d_gamma, d_beta });
            d = dx;
        }
        Ok(Gradients { layers: grads.into_iter().map(|g| g.expect("filled in reverse")).collect() })
    }

    /// Heavy-ball update: `buffer <- momentum * buffer + grad;
    /// param <- param - lr * buffer`.
    pub fn sgd_momentum_update(&mut self, grads: &Gradients, lr: f64, momentum: f64) {
        for (layer, g) in self.layers.iter_mut().zip(grads.layers.iter()) {
            layer.weight_buf.zip_mut_with(&g.d_weight, |b, &g| *b = momentum * *b + g);
            layer.weight.zip_mut_with(&layer.weight_buf, |w, &b| *w -= lr * b);
            layer.bias_buf.zip_mut_with(&g.d_bias, |b, &g| *b = momentum * *b + g);
            layer.bias.zip_mut_with(&layer.bias_buf, |w, &b| *w -= lr * b);
            if let Some(bn) = layer.norm.as_mut() {
                let dg = g.d_gamma.as_ref().expect("norm site has gamma grad");
                let db = g.d_beta.as_ref().expect("norm site has beta grad");
                bn.gamma_buf.zip_mut_with(dg, |b, &g| *b = momentum * *b + g);
                bn.gamma.zip_mut_with(&bn.gamma_buf, |w, &b| *w -= lr * b);
                bn.beta_buf.zip_mut_with(db, |b, &g| *b = momentum * *b + g);
                bn.beta.zip_mut_with(&bn.beta_buf, |w, &b| *w -= lr * b);
            }
        }
    }

    /// Flatten every trainable parameter in canonical order: per layer,
    /// gamma, beta, weight (row-major), bias. Mirrors [`Gradients::flatten`]
    /// and the model file's parameter order.
    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for layer in &self.layers {
            if let Some(bn) = &layer.norm {
                out.extend(bn.gamma.iter());
                out.extend(bn.beta.iter());
            }
            out.extend(layer.weight.iter());
            out.extend(layer.bias.iter());
        }
        out
    }

    /// Inverse of [`Network::flatten_params`].
    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.parameter_count() {
            return Err(Error::InvalidInput(format!(
                "expected {} parameters, got {}",
                self.parameter_count(),
                flat.len()
            )));
        }
        let mut it = flat.iter().copied();
        for layer in &mut self.layers {
            if let Some(bn) = layer.norm.as_mut() {
                bn.gamma.iter_mut().for_each(|v| *v = it.next().unwrap());
                bn.beta.iter_mut().for_each(|v| *v = it.next().unwrap());
            }
            layer.weight.iter_mut().for_each(|v| *v = it.next().unwrap());
            layer.bias.iter_mut().for_each(|v| *v = it.next().unwrap());
        }
        Ok(())
    }
}

impl Gradients {
    /// Same ordering as [`Network::flatten_params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for g in &self.layers {
            if let Some(dg) = &g.d_gamma {
                out.extend(dg.iter());
            }
            if let Some(db) = &g.d_beta {
                out.extend(db.iter());
            }
            out.extend(g.d_weight.iter());
            out.extend(g.d_bias.iter());
        }
        out
    }
}

/// Mean over the batch (and output columns) of the squared differences.
pub fn loss_mse(pred: &Array2<f64>, labels: &Array2<f64>) -> Result<f64> {
    if pred.dim() != labels.dim() {
        return Err(Error::InvalidInput(format!(
            "prediction shape {:?} does not match labels {:?}",
            pred.dim(),
            labels.dim()
        )));
    }
    let diff = pred - labels;
    Ok(diff.mapv(|v| v * v).mean().expect("non-empty"))
}
