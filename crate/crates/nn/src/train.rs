use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::check_len;
use crate::{LossSpan, LstmParams, LstmShape, NnError, Normalizer, Result};

/// One supervised pair: a `T × input_dim` window and the target for its last step.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Vec<f64>,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub window_length: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub clip_norm: f64,
    /// Trailing fraction of the dataset held out for checkpoint selection.
    pub validation_fraction: f64,
    pub rng_seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            window_length: 24,
            batch_size: 32,
            learning_rate: 1e-3,
            max_epochs: 100,
            patience: 10,
            clip_norm: 5.0,
            validation_fraction: 0.1,
            rng_seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.window_length > 0
            && self.batch_size > 0
            && self.learning_rate > 0.0
            && self.max_epochs > 0
            && self.patience > 0
            && self.clip_norm > 0.0
            && self.epsilon > 0.0;
        if !positive {
            return Err(NnError::Config("training parameters must be positive".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(NnError::Config("validation fraction must lie in (0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(NnError::Config("moment decays must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub best_val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainReport {
    pub fn best_val_loss(&self) -> f64 {
        self.history
            .last()
            .map(|e| e.best_val_loss)
            .unwrap_or(f64::INFINITY)
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.step += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.step);
        let bc2 = 1.0 - cfg.beta2.powi(self.step);
        for k in 0..params.len() {
            self.m[k] = cfg.beta1 * self.m[k] + (1.0 - cfg.beta1) * grad[k];
            self.v[k] = cfg.beta2 * self.v[k] + (1.0 - cfg.beta2) * grad[k] * grad[k];
            let m_hat = self.m[k] / bc1;
            let v_hat = self.v[k] / bc2;
            params[k] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
}

fn mean_loss(params: &LstmParams, samples: &[Sample]) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        total += params.loss(&s.input, LossSpan::Last(&s.target))?;
    }
    Ok(total / samples.len() as f64)
}

/// Mini-batch Adam on the last-step MSE with global-norm gradient clipping.
/// The trailing `validation_fraction` of `samples` is held out; the returned
/// parameters are those with the lowest validation loss seen.
pub fn train(mut params: LstmParams, samples: &[Sample], cfg: &TrainConfig) -> Result<(LstmParams, TrainReport)> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let (train_set, val_set) = split_validation(samples, cfg.validation_fraction);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut adam = Adam::new(params.data.len());
    let mut grad = vec![0.0; params.data.len()];

    let mut best = params.clone();
    let mut report = TrainReport::default();
    let mut best_val = f64::INFINITY;
    let mut since_best = 0;

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let s = &train_set[i];
                epoch_loss += params.accumulate_gradient(&s.input, LossSpan::Last(&s.target), scale, &mut grad)?;
            }
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if !norm.is_finite() {
                return Err(NnError::NonFiniteLoss {
                    epoch,
                    learning_rate: cfg.learning_rate,
                });
            }
            if norm > cfg.clip_norm {
                let c = cfg.clip_norm / norm;
                grad.iter_mut().for_each(|g| *g *= c);
            }
            adam.update(&mut params.data, &grad, cfg);
        }
        let train_loss = epoch_loss / train_set.len() as f64;
        let val_loss = if val_set.is_empty() {
            mean_loss(&params, train_set)?
        } else {
            mean_loss(&params, val_set)?
        };
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(NnError::NonFiniteLoss {
                epoch,
                learning_rate: cfg.learning_rate,
            });
        }
        if val_loss < best_val {
            best_val = val_loss;
            best.data.copy_from_slice(&params.data);
            report.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
        }
        report.history.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
            best_val_loss: best_val,
        });
        if since_best >= cfg.patience {
            report.stopped_early = true;
            break;
        }
    }
    Ok((best, report))
}

fn split_validation(samples: &[Sample], fraction: f64) -> (&[Sample], &[Sample]) {
    if samples.len() < 2 {
        return (samples, &[]);
    }
    let n_val = ((samples.len() as f64 * fraction).ceil() as usize).clamp(1, samples.len() - 1);
    samples.split_at(samples.len() - n_val)
}

/// A trained network together with the input/output normalization fitted on
/// its training data.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmModel {
    pub params: LstmParams,
    pub input_norm: Normalizer,
    pub output_norm: Normalizer,
}

impl LstmModel {
    pub fn shape(&self) -> &LstmShape {
        &self.params.shape
    }

    /// Predicts the target for the last step of a raw (unnormalized) window.
    pub fn predict(&self, window: &[f64]) -> Result<Vec<f64>> {
        let mut x = window.to_vec();
        self.input_norm.apply(&mut x);
        let cache = self.params.forward(&x)?;
        let mut y = cache.last_output(self.params.shape.output_dim).to_vec();
        self.output_norm.invert(&mut y);
        Ok(y)
    }
}

/// Fits normalizers on the training portion, initializes from `cfg.rng_seed`,
/// and trains.
pub fn fit_model(shape: LstmShape, samples: &[Sample], cfg: &TrainConfig) -> Result<(LstmModel, TrainReport)> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    for s in samples {
        if s.input.is_empty() || s.input.len() % shape.input_dim != 0 {
            return Err(NnError::Shape {
                what: "sample window (multiple of input_dim)",
                expected: shape.input_dim,
                found: s.input.len(),
            });
        }
        check_len("sample target", shape.output_dim, s.target.len())?;
    }
    let (train_part, _) = split_validation(samples, cfg.validation_fraction);
    let input_norm = Normalizer::fit(shape.input_dim, train_part.iter().map(|s| s.input.as_slice()));
    let output_norm = Normalizer::fit(shape.output_dim, train_part.iter().map(|s| s.target.as_slice()));
    let normalized: Vec<Sample> = samples
        .iter()
        .map(|s| {
            let mut input = s.input.clone();
            let mut target = s.target.clone();
            input_norm.apply(&mut input);
            output_norm.apply(&mut target);
            Sample { input, target }
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed ^ 0x9e37_79b9_7f4a_7c15);
    let init = LstmParams::init(shape, &mut rng);
    let (params, report) = train(init, &normalized, cfg)?;
    Ok((
        LstmModel {
            params,
            input_norm,
            output_norm,
        },
        report,
    ))
}
