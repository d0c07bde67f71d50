//! Chance-constrained steering on forecasts with Gaussian errors.
//!
//! Each base station's load under forecast errors is Gaussian with mean
//! `m_j = Σ_x π_xj λ̂_x / (R_xj·slot)` and std
//! `s_j = sqrt(Σ_x (π_xj σ_x / (R_xj·slot))²)`. The barrier cost is applied
//! to the `ε`-quantile load `m_j + z(ε)·s_j + headroom`.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{check_dim, Axis, OnoError};
use crate::model::{compute_loads, rejected_traffic, load_coefficients, RateMatrix, SteeringPolicy, TrafficTrace};
use crate::predictors::Prediction;
use crate::solver::{solve_with_fallback, LoadMap, SolveConfig, SolveResult};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustConfig {
    /// Per-BS probability that the load stays below capacity.
    pub epsilon: f64,
    pub headroom: f64,
    pub solve: SolveConfig,
}

impl Default for RobustConfig {
    fn default() -> Self {
        RobustConfig {
            epsilon: 0.999,
            headroom: 0.0,
            // forecasts are far coarser than the oracle's precision
            solve: SolveConfig {
                tolerance: 1e-6,
                ..SolveConfig::default()
            },
        }
    }
}

impl RobustConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.5 && self.epsilon < 1.0) {
            return Err(OnoError::Config(format!("epsilon {} must lie in (0.5, 1)", self.epsilon)));
        }
        if !(0.0..0.5).contains(&self.headroom) {
            return Err(OnoError::Config(format!("headroom {} must lie in [0, 0.5)", self.headroom)));
        }
        self.solve.validate()
    }

    /// Standard normal quantile `Φ⁻¹(ε)`.
    pub fn z(&self) -> f64 {
        Normal::standard().inverse_cdf(self.epsilon)
    }
}

/// Minimizes the barrier cost of quantile loads. The result's `loads` are
/// the predicted mean loads `m_j`. If the quantile problem has no feasible
/// point, the min-max policy for the mean forecast is returned with
/// `feasible = false`.
pub fn solve_robust(
    prediction: &Prediction,
    rates: &RateMatrix,
    slot_duration_s: f64,
    config: &RobustConfig,
    warm_start: Option<&SteeringPolicy>,
) -> Result<SolveResult> {
    config.validate()?;
    prediction.validate()?;
    check_dim(Axis::Locations, "prediction vs rates", rates.num_locations(), prediction.mean.len())?;
    if let Some(w) = warm_start {
        check_dim(Axis::Locations, "warm start", rates.num_locations(), w.num_locations())?;
        check_dim(Axis::BaseStations, "warm start", rates.num_bs(), w.num_bs())?;
    }
    let k = rates.num_bs();
    let a = load_coefficients(&prediction.mean, rates, slot_duration_s);
    let nominal = LoadMap::Linear { a: &a, k };
    if config.headroom == 0.0 && prediction.std.iter().all(|s| *s == 0.0) {
        return Ok(solve_with_fallback(&nominal, None, rates.num_locations(), &config.solve, warm_start));
    }
    let b2: Vec<f64> = load_coefficients(&prediction.std, rates, slot_duration_s)
        .into_iter()
        .map(|b| b * b)
        .collect();
    let map = LoadMap::Quantile {
        a: &a,
        b2: &b2,
        z: config.z(),
        headroom: config.headroom,
        k,
    };
    Ok(solve_with_fallback(&map, Some(&nominal), rates.num_locations(), &config.solve, warm_start))
}

/// Robust objective `(1/K) Σ −ln(1 − m_j − z s_j − headroom)` of a policy.
pub fn robust_objective(
    prediction: &Prediction,
    policy: &SteeringPolicy,
    rates: &RateMatrix,
    slot_duration_s: f64,
    config: &RobustConfig,
) -> Result<f64> {
    let eff = quantile_loads(prediction, policy, rates, slot_duration_s, config)?;
    Ok(crate::model::cost_of(&eff))
}

/// `m_j + z s_j + headroom` per base station.
pub fn quantile_loads(
    prediction: &Prediction,
    policy: &SteeringPolicy,
    rates: &RateMatrix,
    slot_duration_s: f64,
    config: &RobustConfig,
) -> Result<Vec<f64>> {
    prediction.validate()?;
    let mean = crate::model::TrafficFrame::new(0, prediction.mean.clone())?;
    let m = compute_loads(&mean, policy, rates, slot_duration_s)?;
    let k = rates.num_bs();
    let mut var = vec![0.0; k];
    for (x, s) in prediction.std.iter().enumerate() {
        for j in 0..k {
            var[j] += (policy.get(x, j) * s / (rates.get(x, j) * slot_duration_s)).powi(2);
        }
    }
    let z = config.z();
    Ok(m.0
        .iter()
        .zip(&var)
        .map(|(m, v)| m + z * v.sqrt() + config.headroom)
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violations {
    /// Fraction of slots with `ρ_j ≥ 1`, per base station.
    pub per_bs: Vec<f64>,
    /// Fraction of slots with any base station overloaded.
    pub network: f64,
    /// Rejected demand over total demand across the range.
    pub rejected_fraction: f64,
    pub slots: usize,
}

/// Empirical overload frequencies and rejected traffic of per-slot policies
/// played against the true demand; `policies[i]` is used at slot
/// `range.start + i`.
pub fn violation_rate(
    policies: &[SteeringPolicy],
    rates: &RateMatrix,
    trace: &TrafficTrace,
    range: std::ops::Range<usize>,
) -> Result<Violations> {
    check_dim(Axis::Slots, "policies vs range", range.len(), policies.len())?;
    if range.end > trace.len() {
        return Err(OnoError::InvalidValue(format!("range {range:?} exceeds the trace")));
    }
    let k = rates.num_bs();
    let mut over = vec![0usize; k];
    let mut any = 0usize;
    let mut rejected = 0.0;
    let mut total = 0.0;
    for (policy, t) in policies.iter().zip(range.clone()) {
        let frame = &trace.frames[t];
        let loads = compute_loads(frame, policy, rates, trace.slot_duration_s)?;
        let mut hit = false;
        for (j, r) in loads.0.iter().enumerate() {
            if *r >= 1.0 {
                over[j] += 1;
                hit = true;
            }
        }
        any += usize::from(hit);
        let rej = rejected_traffic(frame, policy, rates, trace.slot_duration_s)?;
        rejected += rej.per_bs.iter().sum::<f64>();
        total += frame.total();
    }
    let n = range.len().max(1) as f64;
    Ok(Violations {
        per_bs: over.iter().map(|c| *c as f64 / n).collect(),
        network: any as f64 / n,
        rejected_fraction: if total > 0.0 { rejected / total } else { 0.0 },
        slots: range.len(),
    })
}
