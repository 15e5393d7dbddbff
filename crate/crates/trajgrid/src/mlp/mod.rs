//! A from-scratch multilayer perceptron: swish activation, pre-norm batch
//! normalization, MSE loss, SGD with momentum, plateau learning-rate
//! reduction, and early stopping.
//!
//! The stack is: a plain input layer (no normalization), then one block
//! per hidden width -- batch norm, linear, swish -- each block repeated
//! `block_repeat` times, then a bare linear output layer with no
//! normalization or activation.

mod network;
mod train;

pub use network::{loss_mse, swish, ForwardCache, Gradients, Mode, Network};
pub use train::{dataset_arrays, gradient_check, train, EpochStats, TrainingHistory};

use crate::{Error, Result};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpConfig {
    /// Hidden widths; the first entry is the plain input layer's width.
    pub layer_dims: Vec<usize>,
    /// How many times each hidden block (past the first layer) repeats.
    pub block_repeat: usize,
    /// Append a 8192-wide block when the angular density exceeds 4096.
    pub append_8192_when_density_exceeds_4096: bool,
    pub input_dim: usize,
    pub output_dim: usize,
    pub bn_epsilon: f64,
    /// Exponential moving average factor for the running statistics.
    pub bn_momentum: f64,
}

impl MlpConfig {
    /// The full published stack: widths 32..4096, each block repeated 6x.
    pub fn paper() -> Self {
        MlpConfig {
            layer_dims: vec![32, 64, 128, 256, 512, 864, 1024, 2048, 4096],
            block_repeat: 6,
            append_8192_when_density_exceeds_4096: true,
            input_dim: 6,
            output_dim: 1,
            bn_epsilon: 1e-5,
            bn_momentum: 0.99,
        }
    }

    /// A desktop-sized stack that trains in minutes on a CPU.
    pub fn desk() -> Self {
        MlpConfig { layer_dims: vec![32, 64, 128, 256], block_repeat: 2, ..Self::paper() }
    }

    /// Apply the density-driven width rule, returning the config to
    /// actually instantiate.
    pub fn for_density(&self, density: u32) -> MlpConfig {
        let mut cfg = self.clone();
        if cfg.append_8192_when_density_exceeds_4096
            && density > 4096
            && cfg.layer_dims.last() != Some(&8192)
        {
            cfg.layer_dims.push(8192);
        }
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.is_empty() || self.layer_dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidConfig("layer_dims must be non-empty and positive".to_string()));
        }
        if self.block_repeat == 0 {
            return Err(Error::InvalidConfig("block_repeat must be >= 1".to_string()));
        }
        if self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::InvalidConfig("input/output dims must be >= 1".to_string()));
        }
        if !(self.bn_epsilon.is_finite() && self.bn_epsilon > 0.0) {
            return Err(Error::InvalidConfig("bn_epsilon must be > 0".to_string()));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum < 1.0) {
            return Err(Error::InvalidConfig("bn_momentum must lie in (0, 1)".to_string()));
        }
        Ok(())
    }
}

/// Optimization hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// An epoch "improves" when loss drops below best-so-far minus this.
    pub plateau_min_delta: f64,
    /// Non-improving epochs before the learning rate is reduced.
    pub plateau_patience: usize,
    pub lr_reduce_factor: f64,
    /// Non-improving epochs before training stops.
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    /// Desktop defaults: published optimizer constants with a batch that
    /// fits a CPU run and a delta small enough to keep refining a loss
    /// that lives well below 1e-2.
    fn default() -> Self {
        TrainingConfig {
            batch_size: 1024,
            learning_rate: 1e-2,
            momentum: 0.9,
            plateau_min_delta: 0.0,
            plateau_patience: 5,
            lr_reduce_factor: 0.1,
            early_stop_patience: 15,
            max_epochs: 60,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    /// The published large-scale settings.
    pub fn paper() -> Self {
        TrainingConfig {
            batch_size: 8192,
            plateau_min_delta: 1e-2,
            early_stop_patience: 15,
            max_epochs: 1000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::InvalidConfig("batch_size and max_epochs must be >= 1".to_string()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be > 0".to_string()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig("momentum must lie in [0, 1)".to_string()));
        }
        if !(self.lr_reduce_factor > 0.0 && self.lr_reduce_factor < 1.0) {
            return Err(Error::InvalidConfig("lr_reduce_factor must lie in (0, 1)".to_string()));
        }
        if !(self.plateau_min_delta.is_finite() && self.plateau_min_delta >= 0.0) {
            return Err(Error::InvalidConfig("plateau_min_delta must be >= 0".to_string()));
        }
        if self.plateau_patience == 0 || self.early_stop_patience == 0 {
            return Err(Error::InvalidConfig("patience values must be >= 1".to_string()));
        }
        Ok(())
    }
}
