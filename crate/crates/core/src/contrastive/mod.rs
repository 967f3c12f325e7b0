//! Partitioned PointInfoNCE: each anchor's negatives are split by scene-context partition,
//! one InfoNCE loss is computed per partition and the partition losses are averaged.

mod loss;
mod rule;
mod train;

pub use loss::{
    loss_and_gradient, loss_gradient, partition_loss, point_info_nce, total_loss, total_loss_with_rule,
    PartitionLoss,
};
pub use rule::{GeometricRule, PartitionRule, PartitionTable};
pub use train::{
    separation_margin, train_embeddings, write_curve_csv, CurvePoint, Margin, ScenePair, TrainOutput,
};

use serde::{Deserialize, Serialize};

use crate::context::PartitionConfig;
use crate::error::{Error, Result};

pub const DEFAULT_TEMPERATURE: f64 = 0.4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub temperature: f64,
    pub partition: PartitionConfig,
    /// Matches sampled per pair and step.
    pub num_sampled_matches: usize,
    /// L2-normalize feature rows before taking dot products.
    pub normalize: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            partition: PartitionConfig::default(),
            num_sampled_matches: crate::mining::DEFAULT_SAMPLED_MATCHES,
            normalize: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.num_sampled_matches == 0 {
            return Err(Error::Config("number of sampled matches must be at least 1".into()));
        }
        self.partition.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub per_partition: Vec<PartitionLoss>,
    /// Mean of the per-partition losses.
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub lr_decay: f64,
    pub decay_every_steps: usize,
    pub steps: usize,
    pub seed: u64,
    pub dim: usize,
    /// Scene pairs per step.
    pub batch_size: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            lr_decay: 0.99,
            decay_every_steps: 1000,
            steps: 2000,
            seed: 0,
            dim: 16,
            batch_size: 32,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!("lr decay must lie in (0, 1], got {}", self.lr_decay)));
        }
        if self.decay_every_steps == 0 || self.batch_size == 0 {
            return Err(Error::Config("decay interval and batch size must be positive".into()));
        }
        if self.dim < 2 {
            return Err(Error::Config(format!("embedding dimension must be at least 2, got {}", self.dim)));
        }
        Ok(())
    }

    /// Step-decayed learning rate.
    pub fn lr_at(&self, step: usize) -> f64 {
        self.lr * self.lr_decay.powi((step / self.decay_every_steps) as i32)
    }
}
