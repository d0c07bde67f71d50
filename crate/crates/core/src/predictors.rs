//! One-step-ahead demand forecasts with a per-location uncertainty estimate.
//!
//! Every predictor reads only frames strictly before the forecast slot,
//! except [`PredictorKind::Oracle`], which returns the true demand.

use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Axis, OnoError};
use crate::model::TrafficTrace;
use crate::network::{NetworkState, TrainSettings};
use crate::Result;
use ono_nn::{fit_model, LstmModel, LstmShape, Sample};

/// Version tag of the fitted-predictor JSON file.
pub const PREDICTOR_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Prediction {
    pub fn validate(&self) -> Result<()> {
        check_dim(Axis::Locations, "prediction std", self.mean.len(), self.std.len())?;
        let bad = self
            .mean
            .iter()
            .chain(&self.std)
            .find(|v| !(v.is_finite() && **v >= 0.0));
        match bad {
            Some(v) => Err(OnoError::InvalidValue(format!("prediction entry {v} is not finite and non-negative"))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LstmPredictorConfig {
    pub window: usize,
    pub hidden: Vec<usize>,
    /// Same-phase weeks averaged into the reference profile.
    pub ref_weeks: usize,
    /// Training pairs drawn from all (location, slot) combinations.
    pub max_samples: usize,
    /// Slot stride when estimating residual spread on the validation span.
    pub validation_stride: usize,
    pub train: TrainSettings,
}

impl Default for LstmPredictorConfig {
    fn default() -> Self {
        LstmPredictorConfig {
            window: 24,
            hidden: vec![64, 64],
            ref_weeks: 4,
            max_samples: 20_000,
            validation_stride: 3,
            train: TrainSettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredictorKind {
    SampleMean {
        /// Seasonal period in slots; the trace's season when absent.
        #[serde(default)]
        period: Option<usize>,
    },
    PreviousValue,
    SeasonalAr {
        #[serde(default)]
        period: Option<usize>,
        #[serde(default = "default_ar_order")]
        order: usize,
    },
    Lstm(LstmPredictorConfig),
    Oracle,
}

fn default_ar_order() -> usize {
    2
}

impl PredictorKind {
    pub fn name(&self) -> &'static str {
        match self {
            PredictorKind::SampleMean { .. } => "sample_mean",
            PredictorKind::PreviousValue => "previous_value",
            PredictorKind::SeasonalAr { .. } => "seasonal_ar",
            PredictorKind::Lstm(_) => "lstm",
            PredictorKind::Oracle => "oracle",
        }
    }

    pub fn sample_mean() -> Self {
        PredictorKind::SampleMean { period: None }
    }

    pub fn seasonal_ar() -> Self {
        PredictorKind::SeasonalAr {
            period: None,
            order: default_ar_order(),
        }
    }
}

/// Trained state. Coefficient arrays are indexed by location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FittedState {
    SampleMean {
        period: usize,
    },
    PreviousValue {
        std: Vec<f64>,
    },
    SeasonalAr {
        period: usize,
        order: usize,
        /// Per location: intercept, then lag-1..lag-p coefficients.
        coefficients: Vec<Vec<f64>>,
        residual_std: Vec<f64>,
    },
    Lstm {
        period: usize,
        window: usize,
        ref_weeks: usize,
        /// Per-location demand scale (training mean).
        scale: Vec<f64>,
        residual_std: Vec<f64>,
        network: NetworkState,
    },
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FittedPredictor {
    pub version: u32,
    pub num_locations: usize,
    pub state: FittedState,
    #[serde(skip)]
    model: Option<LstmModel>,
}

fn period_of(p: Option<usize>, trace: &TrafficTrace) -> Result<usize> {
    let p = p.unwrap_or(trace.season_length_slots);
    if p == 0 {
        return Err(OnoError::Config("seasonal period must be positive".into()));
    }
    Ok(p)
}

fn require_seasons(train: &TrafficTrace, period: usize) -> Result<()> {
    if train.len() < 2 * period {
        return Err(OnoError::InsufficientHistory(format!(
            "training trace has {} slots, fewer than two seasons of {period}",
            train.len()
        )));
    }
    Ok(())
}

/// Mean of the demand at up to `weeks` same-phase slots before `t`.
fn reference(trace: &TrafficTrace, x: usize, t: usize, period: usize, weeks: usize) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0;
    let mut tau = t;
    while n < weeks && tau >= period {
        tau -= period;
        sum += trace.frames[tau].demand[x];
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

/// Least squares `y ≈ X β` via SVD; returns coefficients and residual std.
fn ols(rows: usize, cols: usize, design: Vec<f64>, y: Vec<f64>) -> (Vec<f64>, f64) {
    use nalgebra::{DMatrix, DVector};
    let xm = DMatrix::from_row_slice(rows, cols, &design);
    let yv = DVector::from_vec(y);
    let svd = xm.clone().svd(true, true);
    let tol = 1e-12 * svd.singular_values.max().max(f64::MIN_POSITIVE);
    let beta = svd.solve(&yv, tol).unwrap_or_else(|_| DVector::zeros(cols));
    let resid = &yv - &xm * &beta;
    let dof = rows.saturating_sub(cols).max(1) as f64;
    (beta.as_slice().to_vec(), (resid.norm_squared() / dof).sqrt())
}

fn fit_seasonal_ar(train: &TrafficTrace, period: usize, order: usize) -> Result<FittedState> {
    require_seasons(train, period)?;
    let first = period + order;
    if train.len() <= first + order + 1 {
        return Err(OnoError::InsufficientHistory("too few slots for the AR order".into()));
    }
    let x_count = train.num_locations();
    let fits: Vec<(Vec<f64>, f64)> = (0..x_count)
        .into_par_iter()
        .map(|x| {
            let s = train.series(x);
            let y: Vec<f64> = (0..s.len())
                .map(|t| if t >= period { s[t] - s[t - period] } else { 0.0 })
                .collect();
            let rows = s.len() - first;
            let mut design = Vec::with_capacity(rows * (order + 1));
            let mut target = Vec::with_capacity(rows);
            for t in first..s.len() {
                design.push(1.0);
                for i in 1..=order {
                    design.push(y[t - i]);
                }
                target.push(y[t]);
            }
            ols(rows, order + 1, design, target)
        })
        .collect();
    let (coefficients, residual_std) = fits.into_iter().unzip();
    Ok(FittedState::SeasonalAr {
        period,
        order,
        coefficients,
        residual_std,
    })
}

fn lstm_features(trace: &TrafficTrace, x: usize, t: usize, window: usize, period: usize, weeks: usize, s: f64) -> Option<Vec<f64>> {
    let mut input = Vec::with_capacity(window * 3);
    for tau in t - window..t {
        let r0 = reference(trace, x, tau, period, weeks)?;
        let r1 = reference(trace, x, tau + 1, period, weeks)?;
        input.push(trace.frames[tau].demand[x] / s);
        input.push(r0 / s);
        input.push(r1 / s);
    }
    Some(input)
}

fn fit_lstm(train: &TrafficTrace, cfg: &LstmPredictorConfig) -> Result<(FittedState, LstmModel)> {
    let period = train.season_length_slots;
    require_seasons(train, period)?;
    if cfg.window == 0 || cfg.ref_weeks == 0 || cfg.max_samples == 0 || cfg.validation_stride == 0 {
        return Err(OnoError::Config("lstm window, ref_weeks, max_samples and stride must be positive".into()));
    }
    let tcfg = cfg.train.to_config(cfg.window);
    tcfg.validate()?;
    let x_count = train.num_locations();
    let scale: Vec<f64> = (0..x_count)
        .map(|x| {
            let m = train.frames.iter().map(|f| f.demand[x]).sum::<f64>() / train.len() as f64;
            if m > 0.0 {
                m
            } else {
                1.0
            }
        })
        .collect();
    let t_min = period + cfg.window;
    if train.len() <= t_min + 1 {
        return Err(OnoError::InsufficientHistory("training trace too short for the LSTM window".into()));
    }
    let span = train.len() - t_min;
    let total = span * x_count;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.rng_seed ^ 0x5eed_1557);
    let mut picks: Vec<usize> = if total <= cfg.max_samples {
        (0..total).collect()
    } else {
        sample(&mut rng, total, cfg.max_samples).into_vec()
    };
    // chronological order so that the trainer's trailing hold-out is the latest span
    picks.sort_unstable_by_key(|&i| (i / x_count, i % x_count));
    let samples: Vec<Sample> = picks
        .iter()
        .map(|&i| {
            let (t, x) = (t_min + i / x_count, i % x_count);
            let s = scale[x];
            let input = lstm_features(train, x, t, cfg.window, period, cfg.ref_weeks, s).expect("history checked");
            let r = reference(train, x, t, period, cfg.ref_weeks).expect("history checked");
            Sample {
                input,
                target: vec![(train.frames[t].demand[x] - r) / s],
            }
        })
        .collect();
    let shape = LstmShape::new(3, cfg.hidden.clone(), 1)?;
    let (model, report) = fit_model(shape, &samples, &tcfg)?;
    log::info!(
        "lstm predictor: {} samples, best epoch {}, validation loss {:.4e}",
        samples.len(),
        report.best_epoch,
        report.best_val_loss()
    );

    // residual spread on the trailing validation span of the training trace
    let val_start = (train.len() as f64 * (1.0 - cfg.train.validation_fraction)).floor() as usize;
    let val_start = val_start.max(t_min);
    let slots: Vec<usize> = (val_start..train.len()).step_by(cfg.validation_stride).collect();
    let residual_std: Vec<f64> = (0..x_count)
        .into_par_iter()
        .map(|x| {
            let mut sq = 0.0;
            for &t in &slots {
                let pred = lstm_point(&model, train, x, t, cfg.window, period, cfg.ref_weeks, scale[x]).unwrap_or(0.0);
                sq += (train.frames[t].demand[x] - pred).powi(2);
            }
            (sq / slots.len().max(1) as f64).sqrt()
        })
        .collect();
    let state = FittedState::Lstm {
        period,
        window: cfg.window,
        ref_weeks: cfg.ref_weeks,
        scale,
        residual_std,
        network: NetworkState::from(&model),
    };
    Ok((state, model))
}

#[allow(clippy::too_many_arguments)]
fn lstm_point(
    model: &LstmModel,
    trace: &TrafficTrace,
    x: usize,
    t: usize,
    window: usize,
    period: usize,
    weeks: usize,
    s: f64,
) -> Result<f64> {
    if t < period + window {
        return Err(OnoError::InsufficientHistory(format!(
            "lstm forecast at slot {t} needs {} slots of history",
            period + window
        )));
    }
    let input = lstm_features(trace, x, t, window, period, weeks, s).expect("checked above");
    let r = reference(trace, x, t, period, weeks).expect("checked above");
    let y = model.predict(&input)?;
    Ok((r + s * y[0]).max(0.0))
}

/// Fits a predictor on a training trace.
pub fn fit_predictor(kind: &PredictorKind, train: &TrafficTrace) -> Result<FittedPredictor> {
    train.validate()?;
    if train.is_empty() {
        return Err(OnoError::NoRows);
    }
    let x_count = train.num_locations();
    let mut model = None;
    let state = match kind {
        PredictorKind::SampleMean { period } => {
            let period = period_of(*period, train)?;
            require_seasons(train, period)?;
            FittedState::SampleMean { period }
        }
        PredictorKind::PreviousValue => {
            if train.len() < 2 {
                return Err(OnoError::InsufficientHistory("previous value needs two slots".into()));
            }
            let std = (0..x_count)
                .map(|x| {
                    let s = train.series(x);
                    let sq: f64 = s.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
                    (sq / (s.len() - 1) as f64).sqrt()
                })
                .collect();
            FittedState::PreviousValue { std }
        }
        PredictorKind::SeasonalAr { period, order } => fit_seasonal_ar(train, period_of(*period, train)?, *order)?,
        PredictorKind::Lstm(cfg) => {
            let (state, m) = fit_lstm(train, cfg)?;
            model = Some(m);
            state
        }
        PredictorKind::Oracle => FittedState::Oracle,
    };
    Ok(FittedPredictor {
        version: PREDICTOR_FORMAT_VERSION,
        num_locations: x_count,
        state,
        model,
    })
}

impl FittedPredictor {
    pub fn name(&self) -> &'static str {
        match self.state {
            FittedState::SampleMean { .. } => "sample_mean",
            FittedState::PreviousValue { .. } => "previous_value",
            FittedState::SeasonalAr { .. } => "seasonal_ar",
            FittedState::Lstm { .. } => "lstm",
            FittedState::Oracle => "oracle",
        }
    }

    /// Forecast for slot `t` of `trace` from frames `0..t`.
    pub fn predict(&self, trace: &TrafficTrace, t: usize) -> Result<Prediction> {
        check_dim(Axis::Locations, "predictor vs trace", self.num_locations, trace.num_locations())?;
        if t >= trace.len() {
            return Err(OnoError::InvalidValue(format!("slot {t} is beyond the trace ({} slots)", trace.len())));
        }
        let x_count = self.num_locations;
        let mut out = match &self.state {
            FittedState::SampleMean { period } => {
                let n = t / period;
                if n < 2 {
                    return Err(OnoError::InsufficientHistory(format!(
                        "sample mean at slot {t} has {n} past seasons, needs 2"
                    )));
                }
                let mut mean = vec![0.0; x_count];
                let mut sq = vec![0.0; x_count];
                for i in 1..=n {
                    for (x, d) in trace.frames[t - i * period].demand.iter().enumerate() {
                        mean[x] += d;
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n as f64);
                for i in 1..=n {
                    for (x, d) in trace.frames[t - i * period].demand.iter().enumerate() {
                        sq[x] += (d - mean[x]).powi(2);
                    }
                }
                let std = sq.iter().map(|s| (s / (n - 1) as f64).sqrt()).collect();
                Prediction { mean, std }
            }
            FittedState::PreviousValue { std } => {
                if t == 0 {
                    return Err(OnoError::InsufficientHistory("previous value at slot 0".into()));
                }
                Prediction {
                    mean: trace.frames[t - 1].demand.clone(),
                    std: std.clone(),
                }
            }
            FittedState::SeasonalAr {
                period,
                order,
                coefficients,
                residual_std,
            } => {
                if t < period + order {
                    return Err(OnoError::InsufficientHistory(format!(
                        "seasonal AR at slot {t} needs {} slots of history",
                        period + order
                    )));
                }
                let mean = (0..x_count)
                    .map(|x| {
                        let d = |tau: usize| trace.frames[tau].demand[x];
                        let beta = &coefficients[x];
                        let mut y = beta[0];
                        for i in 1..=*order {
                            y += beta[i] * (d(t - i) - d(t - i - period));
                        }
                        d(t - period) + y
                    })
                    .collect();
                Prediction {
                    mean,
                    std: residual_std.clone(),
                }
            }
            FittedState::Lstm {
                period,
                window,
                ref_weeks,
                scale,
                residual_std,
                network,
            } => {
                let owned;
                let model = match &self.model {
                    Some(m) => m,
                    None => {
                        owned = network.to_model()?;
                        &owned
                    }
                };
                let mean = (0..x_count)
                    .into_par_iter()
                    .map(|x| lstm_point(model, trace, x, t, *window, *period, *ref_weeks, scale[x]))
                    .collect::<Result<Vec<f64>>>()?;
                Prediction {
                    mean,
                    std: residual_std.clone(),
                }
            }
            FittedState::Oracle => Prediction {
                mean: trace.frames[t].demand.clone(),
                std: vec![0.0; x_count],
            },
        };
        out.mean.iter_mut().for_each(|m| *m = m.max(0.0));
        Ok(out)
    }

    /// Earliest slot this predictor can forecast.
    pub fn min_history(&self) -> usize {
        match &self.state {
            FittedState::SampleMean { period } => 2 * period,
            FittedState::PreviousValue { .. } => 1,
            FittedState::SeasonalAr { period, order, .. } => period + order,
            FittedState::Lstm { period, window, .. } => period + window,
            FittedState::Oracle => 0,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut fp: FittedPredictor = serde_json::from_str(text)?;
        if fp.version != PREDICTOR_FORMAT_VERSION {
            return Err(OnoError::InvalidValue(format!(
                "unsupported predictor file version {} (expected {PREDICTOR_FORMAT_VERSION})",
                fp.version
            )));
        }
        if let FittedState::Lstm { network, .. } = &fp.state {
            fp.model = Some(network.to_model()?);
        }
        Ok(fp)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| OnoError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| OnoError::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub mse: f64,
    /// Mean predicted std per location over the range.
    pub mean_std: Vec<f64>,
}

/// Mean squared forecast error over all locations and slots in `range`.
pub fn evaluate_predictor(
    fitted: &FittedPredictor,
    trace: &TrafficTrace,
    range: std::ops::Range<usize>,
) -> Result<Evaluation> {
    if range.is_empty() || range.end > trace.len() {
        return Err(OnoError::InvalidValue(format!(
            "evaluation range {range:?} must be non-empty and inside the trace"
        )));
    }
    let x_count = trace.num_locations();
    let mut sq = 0.0;
    let mut std_sum = vec![0.0; x_count];
    for t in range.clone() {
        let p = fitted.predict(trace, t)?;
        for x in 0..x_count {
            sq += (p.mean[x] - trace.frames[t].demand[x]).powi(2);
            std_sum[x] += p.std[x];
        }
    }
    let n = range.len() as f64;
    Ok(Evaluation {
        mse: sq / (n * x_count as f64),
        mean_std: std_sum.into_iter().map(|s| s / n).collect(),
    })
}
