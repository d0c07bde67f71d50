//! Learning optimal base-station loads instead of policies.
//!
//! Demand frames are reduced to the oracle's optimal loads (dimension `K`),
//! an LSTM forecasts next-slot optimal loads from a window of past ones, and
//! the forecast is expanded back into a policy by associating every location
//! with the base station maximizing `R_xj·(1 − ρ̂_j)`.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use ono_nn::{fit_model, LstmModel, LstmShape, Sample};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Axis, OnoError};
use crate::model::{compute_loads, LoadVector, RateMatrix, SteeringPolicy, TrafficFrame, TrafficTrace, RHO_CAP};
use crate::network::{NetworkState, TrainSettings};
use crate::solver::{solve_oracle, solve_oracle_range, SolveConfig, SolveResult};
use crate::Result;

pub const ADAPTED_FORMAT_VERSION: u32 = 1;

/// Per-step input width: `K` loads plus sin/cos of the next slot's phase.
pub fn input_width(num_bs: usize) -> usize {
    num_bs + 2
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedLoads {
    pub loads: LoadVector,
    /// False when the frame admits no feasible policy; `loads` then come from
    /// the min-max policy.
    pub feasible: bool,
}

impl From<&SolveResult> for ReducedLoads {
    fn from(r: &SolveResult) -> Self {
        ReducedLoads {
            loads: r.loads.clone(),
            feasible: r.feasible,
        }
    }
}

pub fn input_reduce(
    frame: &TrafficFrame,
    rates: &RateMatrix,
    slot_duration_s: f64,
    solve: &SolveConfig,
) -> Result<ReducedLoads> {
    let r = solve_oracle(frame, rates, slot_duration_s, solve, None)?;
    Ok(ReducedLoads::from(&r))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpansionMode {
    OneShot,
    FixedPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpansionConfig {
    pub mode: ExpansionMode,
    pub damping: f64,
    pub max_fp_iters: usize,
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        ExpansionConfig {
            mode: ExpansionMode::OneShot,
            damping: 0.5,
            max_fp_iters: 20,
        }
    }
}

impl ExpansionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(OnoError::Config(format!("damping {} must lie in (0, 1]", self.damping)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expansion {
    pub policy: SteeringPolicy,
    /// Load estimate the policy was derived from (after clamping and any
    /// fixed-point iterations).
    pub loads: Vec<f64>,
    /// Entries of the input clamped to `RHO_CAP`.
    pub clamped: usize,
    /// `‖ρ̂ − loads(one_shot(ρ̂))‖∞` per fixed-point iteration.
    pub residuals: Vec<f64>,
}

/// Per location, the base station maximizing `R_xj·(1 − ρ̂_j)`; ties go to
/// the lowest index.
pub fn associate(loads: &[f64], rates: &RateMatrix) -> Vec<usize> {
    (0..rates.num_locations())
        .map(|x| {
            let mut best = 0;
            let mut best_w = f64::NEG_INFINITY;
            for (j, r) in rates.row(x).iter().enumerate() {
                let w = r * (1.0 - loads[j]);
                if w > best_w {
                    best_w = w;
                    best = j;
                }
            }
            best
        })
        .collect()
}

pub fn output_expand(
    predicted: &LoadVector,
    rates: &RateMatrix,
    config: &ExpansionConfig,
    traffic_estimate: Option<&TrafficFrame>,
    slot_duration_s: f64,
) -> Result<Expansion> {
    config.validate()?;
    check_dim(Axis::BaseStations, "predicted loads", rates.num_bs(), predicted.len())?;
    let mut clamped = 0;
    let mut rho: Vec<f64> = predicted
        .0
        .iter()
        .map(|r| {
            if !r.is_finite() || *r >= RHO_CAP {
                clamped += 1;
                RHO_CAP
            } else {
                r.max(0.0)
            }
        })
        .collect();
    if clamped > 0 {
        log::warn!("output expansion: {clamped} predicted loads clamped to {RHO_CAP}");
    }
    let k = rates.num_bs();
    let mut assignment = associate(&rho, rates);
    let mut residuals = Vec::new();
    if config.mode == ExpansionMode::FixedPoint {
        let frame = traffic_estimate
            .ok_or_else(|| OnoError::Config("fixed-point expansion needs a traffic estimate".into()))?;
        check_dim(Axis::Locations, "traffic estimate", rates.num_locations(), frame.demand.len())?;
        for _ in 0..config.max_fp_iters {
            let policy = SteeringPolicy::from_assignment(k, &assignment)?;
            let realized = compute_loads(frame, &policy, rates, slot_duration_s)?;
            let res = rho
                .iter()
                .zip(&realized.0)
                .map(|(a, b)| (a - b.min(RHO_CAP)).abs())
                .fold(0.0, f64::max);
            if residuals.last().is_some_and(|prev| res >= *prev) {
                break;
            }
            residuals.push(res);
            if res == 0.0 {
                break;
            }
            for (r, new) in rho.iter_mut().zip(&realized.0) {
                *r = (1.0 - config.damping) * *r + config.damping * new.min(RHO_CAP);
            }
            assignment = associate(&rho, rates);
        }
    }
    Ok(Expansion {
        policy: SteeringPolicy::from_assignment(k, &assignment)?,
        loads: rho,
        clamped,
        residuals,
    })
}

/// Training pairs: the window of loads at slots `t−W..t` (each step carrying
/// the phase of the slot after it) maps to the loads at `t`.
/// `absolute_slots[i]` is the slot-of-trace counter of `loads[i]`.
pub fn training_pairs(loads: &[LoadVector], absolute_slots: &[usize], season: usize, window: usize) -> Result<Vec<Sample>> {
    check_dim(Axis::Slots, "absolute slot indices", loads.len(), absolute_slots.len())?;
    if window == 0 || loads.len() <= window {
        return Err(OnoError::InsufficientHistory(format!(
            "{} load vectors do not cover a window of {window} plus a target",
            loads.len()
        )));
    }
    Ok((window..loads.len())
        .map(|t| Sample {
            input: window_features(&loads[t - window..t], &absolute_slots[t - window + 1..=t], season),
            target: clamp_loads(&loads[t].0),
        })
        .collect())
}

fn clamp_loads(l: &[f64]) -> Vec<f64> {
    l.iter().map(|r| r.clamp(0.0, RHO_CAP)).collect()
}

/// `next_slots[i]` is the absolute slot following `history[i]`.
fn window_features(history: &[LoadVector], next_slots: &[usize], season: usize) -> Vec<f64> {
    let mut input = Vec::with_capacity(history.len() * (history[0].len() + 2));
    for (l, s) in history.iter().zip(next_slots) {
        input.extend(clamp_loads(&l.0));
        let phase = TAU * (s % season) as f64 / season as f64;
        input.push(phase.sin());
        input.push(phase.cos());
    }
    input
}

/// Oracle loads of every frame plus the supervised pairs built from them.
pub fn build_training_set(
    trace: &TrafficTrace,
    rates: &RateMatrix,
    window: usize,
    solve: &SolveConfig,
) -> Result<(Vec<ReducedLoads>, Vec<Sample>)> {
    if trace.len() <= window {
        return Err(OnoError::InsufficientHistory(format!(
            "trace of {} slots is too short for a window of {window}",
            trace.len()
        )));
    }
    let solved = solve_oracle_range(trace, rates, solve, 0..trace.len(), trace.slots_per_day())?;
    let reduced: Vec<ReducedLoads> = solved.iter().map(ReducedLoads::from).collect();
    let loads: Vec<LoadVector> = reduced.iter().map(|r| r.loads.clone()).collect();
    let abs: Vec<usize> = (0..trace.len()).map(|t| trace.absolute_slot(t)).collect();
    let pairs = training_pairs(&loads, &abs, trace.season_length_slots, window)?;
    Ok((reduced, pairs))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptedConfig {
    pub window: usize,
    pub hidden: Vec<usize>,
    pub train: TrainSettings,
    pub expansion: ExpansionConfig,
    /// Feed realized loads of the played policies instead of the optimal
    /// loads of past frames.
    pub realized_loads: bool,
}

impl Default for AdaptedConfig {
    fn default() -> Self {
        AdaptedConfig {
            window: 24,
            hidden: vec![32],
            train: TrainSettings::default(),
            expansion: ExpansionConfig::default(),
            realized_loads: false,
        }
    }
}

impl AdaptedConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(OnoError::Config("adapted-AI window must be positive".into()));
        }
        self.train.validate(self.window)?;
        self.expansion.validate()
    }
}

/// What the online loop sees when forecasting the loads of slot `t`.
pub struct ForecastInput<'a> {
    /// Loads of slots `t−W..t`.
    pub history: &'a [LoadVector],
    /// Trace index of the slot being forecast.
    pub t: usize,
    /// Absolute slot counters of `t−W+1..=t`.
    pub next_slots: &'a [usize],
}

pub trait LoadForecaster {
    fn window(&self) -> usize;
    fn num_bs(&self) -> usize;
    fn forecast(&self, input: &ForecastInput<'_>) -> Result<LoadVector>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptedModel {
    pub version: u32,
    pub num_bs: usize,
    pub window: usize,
    pub season: usize,
    pub network: NetworkState,
    #[serde(skip)]
    model: Option<LstmModel>,
}

impl AdaptedModel {
    /// Trains on supervised pairs from [`training_pairs`].
    pub fn train(samples: &[Sample], num_bs: usize, season: usize, config: &AdaptedConfig) -> Result<Self> {
        config.validate()?;
        let shape = LstmShape::new(input_width(num_bs), config.hidden.clone(), num_bs)?;
        let (model, report) = fit_model(shape, samples, &config.train.to_config(config.window))?;
        log::info!(
            "adapted-AI model: {} pairs, best epoch {}, validation loss {:.4e}",
            samples.len(),
            report.best_epoch,
            report.best_val_loss()
        );
        Ok(AdaptedModel {
            version: ADAPTED_FORMAT_VERSION,
            num_bs,
            window: config.window,
            season,
            network: NetworkState::from(&model),
            model: Some(model),
        })
    }

    fn model(&self) -> Result<LstmModel> {
        match &self.model {
            Some(m) => Ok(m.clone()),
            None => self.network.to_model(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut m: AdaptedModel = serde_json::from_str(text)?;
        if m.version != ADAPTED_FORMAT_VERSION {
            return Err(OnoError::Config(format!("unsupported adapted-AI model version {}", m.version)));
        }
        let net = m.network.to_model()?;
        if net.shape().input_dim != input_width(m.num_bs) || net.shape().output_dim != m.num_bs {
            return Err(OnoError::Config("adapted-AI network width does not match num_bs".into()));
        }
        m.model = Some(net);
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| OnoError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| OnoError::io(path, e))?;
        Self::from_json(&text)
    }
}

impl LoadForecaster for AdaptedModel {
    fn window(&self) -> usize {
        self.window
    }

    fn num_bs(&self) -> usize {
        self.num_bs
    }

    fn forecast(&self, input: &ForecastInput<'_>) -> Result<LoadVector> {
        check_dim(Axis::Slots, "load history", self.window, input.history.len())?;
        let feats = window_features(input.history, input.next_slots, self.season);
        let y = match &self.model {
            Some(m) => m.predict(&feats)?,
            None => self.model()?.predict(&feats)?,
        };
        Ok(LoadVector(y.into_iter().map(|v| v.max(0.0)).collect()))
    }
}

/// Stand-in that knows the true optimal loads of every slot.
pub struct OracleLoads {
    pub loads: Vec<LoadVector>,
    pub window: usize,
}

impl LoadForecaster for OracleLoads {
    fn window(&self) -> usize {
        self.window
    }

    fn num_bs(&self) -> usize {
        self.loads.first().map_or(0, |l| l.len())
    }

    fn forecast(&self, input: &ForecastInput<'_>) -> Result<LoadVector> {
        self.loads
            .get(input.t)
            .cloned()
            .ok_or_else(|| OnoError::InvalidValue(format!("no oracle loads for slot {}", input.t)))
    }
}

/// Stand-in that always forecasts idle base stations.
pub struct ZeroLoads {
    pub num_bs: usize,
    pub window: usize,
}

impl LoadForecaster for ZeroLoads {
    fn window(&self) -> usize {
        self.window
    }

    fn num_bs(&self) -> usize {
        self.num_bs
    }

    fn forecast(&self, _: &ForecastInput<'_>) -> Result<LoadVector> {
        Ok(LoadVector::zeros(self.num_bs))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedRun {
    pub policies: Vec<SteeringPolicy>,
    /// Forecast loads per slot; `None` for bootstrap slots.
    pub predicted: Vec<Option<LoadVector>>,
    pub bootstrap: Vec<bool>,
    pub clamped: usize,
}

/// Plays the technique on every slot of `range`. `reduced[τ]` must hold the
/// input reduction of frame `τ` for every `τ < range.end − 1`; only entries
/// before the current slot are read. Slots with fewer than `W` predecessors
/// use `bootstrap(t)`.
pub fn run_adapted_ai(
    trace: &TrafficTrace,
    rates: &RateMatrix,
    forecaster: &dyn LoadForecaster,
    reduced: &[ReducedLoads],
    range: std::ops::Range<usize>,
    config: &AdaptedConfig,
    bootstrap: &mut dyn FnMut(usize) -> Result<SteeringPolicy>,
) -> Result<AdaptedRun> {
    config.expansion.validate()?;
    check_dim(Axis::BaseStations, "forecaster", rates.num_bs(), forecaster.num_bs())?;
    if range.end > trace.len() || reduced.len() + 1 < range.end {
        return Err(OnoError::InvalidValue(format!("range {range:?} exceeds the trace or reduced loads")));
    }
    let w = forecaster.window();
    let mut history: Vec<LoadVector> = Vec::with_capacity(trace.len());
    for r in &reduced[..range.start.min(reduced.len())] {
        history.push(r.loads.clone());
    }
    let mut run = AdaptedRun {
        policies: Vec::with_capacity(range.len()),
        predicted: Vec::with_capacity(range.len()),
        bootstrap: Vec::with_capacity(range.len()),
        clamped: 0,
    };
    for t in range {
        let policy = if t < w {
            run.predicted.push(None);
            run.bootstrap.push(true);
            bootstrap(t)?
        } else {
            let next_slots: Vec<usize> = (t + 1 - w..=t).map(|s| trace.absolute_slot(s)).collect();
            let input = ForecastInput {
                history: &history[t - w..t],
                t,
                next_slots: &next_slots,
            };
            let rho_hat = forecaster.forecast(&input)?;
            let estimate = (t > 0).then(|| &trace.frames[t - 1]);
            let exp = output_expand(&rho_hat, rates, &config.expansion, estimate, trace.slot_duration_s)?;
            run.clamped += exp.clamped;
            run.predicted.push(Some(rho_hat));
            run.bootstrap.push(false);
            exp.policy
        };
        // the frame of slot t becomes observable only after playing
        let observed = if config.realized_loads {
            compute_loads(&trace.frames[t], &policy, rates, trace.slot_duration_s)?
        } else {
            match reduced.get(t) {
                Some(r) => r.loads.clone(),
                None => LoadVector::zeros(rates.num_bs()),
            }
        };
        history.push(observed);
        run.policies.push(policy);
    }
    Ok(run)
}
