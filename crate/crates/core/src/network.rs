//! Configuration and JSON persistence glue around the recurrent network engine.

use ono_nn::{LstmModel, LstmParams, LstmShape, Normalizer, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::Result;

/// Optimizer settings; the window length lives with each model's user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub clip_norm: f64,
    pub validation_fraction: f64,
    pub rng_seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSettings {
            batch_size: d.batch_size,
            learning_rate: d.learning_rate,
            max_epochs: d.max_epochs,
            patience: d.patience,
            clip_norm: d.clip_norm,
            validation_fraction: d.validation_fraction,
            rng_seed: d.rng_seed,
        }
    }
}

impl TrainSettings {
    pub fn to_config(&self, window_length: usize) -> TrainConfig {
        TrainConfig {
            window_length,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            max_epochs: self.max_epochs,
            patience: self.patience,
            clip_norm: self.clip_norm,
            validation_fraction: self.validation_fraction,
            rng_seed: self.rng_seed,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self, window_length: usize) -> Result<()> {
        Ok(self.to_config(window_length).validate()?)
    }
}

/// A trained network as plain arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkState {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub params: Vec<f64>,
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    pub output_mean: Vec<f64>,
    pub output_std: Vec<f64>,
}

impl From<&LstmModel> for NetworkState {
    fn from(m: &LstmModel) -> Self {
        let shape = m.shape();
        NetworkState {
            input_dim: shape.input_dim,
            hidden: shape.hidden.clone(),
            output_dim: shape.output_dim,
            params: m.params.data.clone(),
            input_mean: m.input_norm.mean.clone(),
            input_std: m.input_norm.std.clone(),
            output_mean: m.output_norm.mean.clone(),
            output_std: m.output_norm.std.clone(),
        }
    }
}

impl NetworkState {
    pub fn to_model(&self) -> Result<LstmModel> {
        let shape = LstmShape::new(self.input_dim, self.hidden.clone(), self.output_dim)?;
        let params = LstmParams::from_vec(shape, self.params.clone())?;
        let norm = |mean: &[f64], std: &[f64], dim: usize, what: &str| {
            if mean.len() != dim || std.len() != dim {
                return Err(crate::OnoError::InvalidValue(format!("{what} normalizer has wrong width")));
            }
            Ok(Normalizer {
                mean: mean.to_vec(),
                std: std.to_vec(),
            })
        };
        Ok(LstmModel {
            input_norm: norm(&self.input_mean, &self.input_std, self.input_dim, "input")?,
            output_norm: norm(&self.output_mean, &self.output_std, self.output_dim, "output")?,
            params,
        })
    }
}
