//! Online mirror descent with the entropic mirror map on the product of
//! per-location simplices.
//!
//! The per-slot loss is the barrier cost with each load clipped at
//! `grad_clip_load` and continued linearly beyond it, which keeps the loss
//! finite and convex during overloads; its gradient is
//! `(1/K)·(λ_x/slot) / (R_xj·(1 − min(ρ_j, clip)))`.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Axis, OnoError};
use crate::model::{
    compute_loads, cost, load_coefficients, loads_from_coefficients, RateMatrix, SteeringPolicy, TrafficFrame,
    TrafficTrace,
};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSchedule {
    Constant,
    InverseSqrtT,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OmdConfig {
    pub eta0: f64,
    pub schedule: StepSchedule,
    pub grad_clip_load: f64,
}

impl Default for OmdConfig {
    fn default() -> Self {
        OmdConfig {
            eta0: 1.0,
            schedule: StepSchedule::InverseSqrtT,
            grad_clip_load: 0.999,
        }
    }
}

impl OmdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta0 > 0.0 && self.eta0.is_finite()) {
            return Err(OnoError::Config(format!("eta0 {} must be positive", self.eta0)));
        }
        if !(self.grad_clip_load > 0.0 && self.grad_clip_load < 1.0) {
            return Err(OnoError::Config(format!(
                "grad_clip_load {} must lie in (0, 1)",
                self.grad_clip_load
            )));
        }
        Ok(())
    }

    /// Step size for the update after the `t`-th observed loss (`t ≥ 1`).
    pub fn eta(&self, t: usize) -> f64 {
        match self.schedule {
            StepSchedule::Constant => self.eta0,
            StepSchedule::InverseSqrtT => self.eta0 / (t.max(1) as f64).sqrt(),
        }
    }
}

/// Decision dimensionality `X·K`.
pub fn dimension(rates: &RateMatrix) -> usize {
    rates.num_locations() * rates.num_bs()
}

fn clipped_barrier(rho: f64, clip: f64) -> f64 {
    if rho <= clip {
        -(-rho).ln_1p()
    } else {
        -(-clip).ln_1p() + (rho - clip) / (1.0 - clip)
    }
}

/// Per-slot loss: mean over base stations of the clipped barrier.
pub fn omd_loss(loads: &[f64], clip: f64) -> f64 {
    loads.iter().map(|r| clipped_barrier(*r, clip)).sum::<f64>() / loads.len() as f64
}

pub fn loss_gradient(
    traffic: &TrafficFrame,
    policy: &SteeringPolicy,
    rates: &RateMatrix,
    slot_duration_s: f64,
    grad_clip_load: f64,
) -> Result<Vec<f64>> {
    let loads = compute_loads(traffic, policy, rates, slot_duration_s)?;
    let k = rates.num_bs();
    let kf = k as f64;
    let mut g = vec![0.0; traffic.demand.len() * k];
    for (x, d) in traffic.demand.iter().enumerate() {
        let per_s = d / slot_duration_s;
        for j in 0..k {
            g[x * k + j] = per_s / (kf * rates.get(x, j) * (1.0 - loads.0[j].min(grad_clip_load)));
        }
    }
    Ok(g)
}

/// Entropic update `π'_xj ∝ π_xj·exp(−η g_xj)`. Rows whose mass vanishes
/// entirely are reset to uniform; the number of such resets is returned.
pub fn omd_step(policy: &SteeringPolicy, gradient: &[f64], eta: f64) -> Result<(SteeringPolicy, usize)> {
    let k = policy.num_bs();
    check_dim(Axis::Locations, "gradient", policy.num_locations() * k, gradient.len())?;
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(OnoError::InvalidValue(format!("step size {eta} must be positive")));
    }
    if let Some(g) = gradient.iter().find(|g| !g.is_finite()) {
        return Err(OnoError::InvalidValue(format!("gradient entry {g} is not finite")));
    }
    let mut out = policy.as_slice().to_vec();
    let mut resets = 0;
    for (row, g_row) in out.chunks_exact_mut(k).zip(gradient.chunks_exact(k)) {
        let shift = row
            .iter()
            .zip(g_row)
            .filter(|(p, _)| **p > 0.0)
            .map(|(_, g)| -eta * g)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (p, g) in row.iter_mut().zip(g_row) {
            if *p > 0.0 {
                *p *= (-eta * g - shift).exp();
                sum += *p;
            }
        }
        if sum > 0.0 && sum.is_finite() {
            row.iter_mut().for_each(|p| *p /= sum);
        } else {
            row.iter_mut().for_each(|p| *p = 1.0 / k as f64);
            resets += 1;
        }
    }
    Ok((SteeringPolicy::from_raw_unchecked(policy.num_locations(), k, out), resets))
}

/// Euclidean projected-gradient step, kept as a comparator.
pub fn euclidean_step(policy: &SteeringPolicy, gradient: &[f64], eta: f64) -> Result<SteeringPolicy> {
    let k = policy.num_bs();
    check_dim(Axis::Locations, "gradient", policy.num_locations() * k, gradient.len())?;
    let mut out = Vec::with_capacity(gradient.len());
    for (row, g_row) in policy.as_slice().chunks_exact(k).zip(gradient.chunks_exact(k)) {
        let v: Vec<f64> = row.iter().zip(g_row).map(|(p, g)| p - eta * g).collect();
        out.extend(project_simplex(&v));
    }
    SteeringPolicy::new(policy.num_locations(), k, out)
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (i, ui) in u.iter().enumerate() {
        cum += ui;
        let t = (cum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|x| (x - theta).max(0.0)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OmdRun {
    /// Policy played at each slot of the range.
    pub policies: Vec<SteeringPolicy>,
    /// True barrier cost of the played policy (may be infinite).
    pub costs: Vec<f64>,
    /// Clipped loss of the played policy.
    pub losses: Vec<f64>,
    pub resets: usize,
    pub dimension: usize,
}

/// Plays `π_t` at every slot of `range`, then observes `λ_t` and updates.
/// The first slot plays `start` (uniform when `None`).
pub fn run_omd(
    trace: &TrafficTrace,
    rates: &RateMatrix,
    config: &OmdConfig,
    range: std::ops::Range<usize>,
    start: Option<SteeringPolicy>,
) -> Result<OmdRun> {
    config.validate()?;
    check_dim(Axis::Locations, "trace vs rates", rates.num_locations(), trace.num_locations())?;
    if range.end > trace.len() {
        return Err(OnoError::InvalidValue(format!("range {range:?} exceeds the trace")));
    }
    let mut policy = start.unwrap_or_else(|| SteeringPolicy::uniform(rates.num_locations(), rates.num_bs()));
    let mut run = OmdRun {
        policies: Vec::with_capacity(range.len()),
        costs: Vec::with_capacity(range.len()),
        losses: Vec::with_capacity(range.len()),
        resets: 0,
        dimension: dimension(rates),
    };
    for (i, t) in range.enumerate() {
        let frame = &trace.frames[t];
        let loads = compute_loads(frame, &policy, rates, trace.slot_duration_s)?;
        run.costs.push(cost(&loads));
        run.losses.push(omd_loss(&loads.0, config.grad_clip_load));
        let g = loss_gradient(frame, &policy, rates, trace.slot_duration_s, config.grad_clip_load)?;
        let (next, resets) = omd_step(&policy, &g, config.eta(i + 1))?;
        if resets > 0 {
            log::warn!("omd: {resets} rows reset to uniform at slot {t}");
        }
        run.resets += resets;
        run.policies.push(std::mem::replace(&mut policy, next));
    }
    Ok(run)
}

/// Best fixed policy in hindsight for the clipped losses of `frames`, by
/// entropic mirror descent on their sum. Returns the policy and
/// `Σ_t f_t(π)`.
pub fn best_fixed_policy(
    frames: &[TrafficFrame],
    rates: &RateMatrix,
    slot_duration_s: f64,
    clip: f64,
    iterations: usize,
) -> Result<(SteeringPolicy, f64)> {
    if frames.is_empty() {
        return Err(OnoError::NoRows);
    }
    let k = rates.num_bs();
    let x_count = rates.num_locations();
    let coef: Vec<Vec<f64>> = frames
        .iter()
        .map(|f| {
            check_dim(Axis::Locations, "frame vs rates", x_count, f.demand.len())?;
            Ok(load_coefficients(&f.demand, rates, slot_duration_s))
        })
        .collect::<Result<_>>()?;
    let kf = k as f64;
    let mut rho = vec![0.0; k];
    let total = |pi: &[f64], rho: &mut [f64]| -> f64 {
        coef.iter()
            .map(|a| {
                loads_from_coefficients(a, pi, rho);
                omd_loss(rho, clip)
            })
            .sum()
    };
    let mut pi = vec![1.0 / kf; x_count * k];
    let mut f = total(&pi, &mut rho);
    let mut g = vec![0.0; pi.len()];
    let mut cand = pi.clone();
    let mut eta = 1.0;
    for _ in 0..iterations {
        g.iter_mut().for_each(|v| *v = 0.0);
        for a in &coef {
            loads_from_coefficients(a, &pi, &mut rho);
            for (i, gi) in g.iter_mut().enumerate() {
                *gi += a[i] / (kf * (1.0 - rho[i % k].min(clip)));
            }
        }
        // normalized by each row's cheapest coordinate, as in the per-slot solver
        let mut improved = false;
        for _ in 0..50 {
            for ((c_row, p_row), g_row) in cand.chunks_exact_mut(k).zip(pi.chunks_exact(k)).zip(g.chunks_exact(k)) {
                let gmin = g_row.iter().copied().fold(f64::INFINITY, f64::min);
                if !(gmin > 0.0) {
                    c_row.copy_from_slice(p_row);
                    continue;
                }
                let mut s = 0.0;
                for j in 0..k {
                    c_row[j] = p_row[j] * (-eta * (g_row[j] / gmin - 1.0).min(40.0)).exp();
                    s += c_row[j];
                }
                c_row.iter_mut().for_each(|v| *v /= s);
            }
            let f_new = total(&cand, &mut rho);
            if f_new < f {
                f = f_new;
                pi.copy_from_slice(&cand);
                eta *= 1.5;
                improved = true;
                break;
            }
            eta *= 0.3;
        }
        if !improved {
            break;
        }
    }
    Ok((SteeringPolicy::from_raw_unchecked(x_count, k, pi), f))
}

/// Static regret `Σ_{t<T} f_t(π_t) − min_π Σ_{t<T} f_t(π)` for each prefix
/// length in `horizons`.
pub fn static_regret(
    trace: &TrafficTrace,
    rates: &RateMatrix,
    run: &OmdRun,
    config: &OmdConfig,
    horizons: &[usize],
    comparator_iterations: usize,
) -> Result<Vec<f64>> {
    horizons
        .iter()
        .map(|&h| {
            if h == 0 || h > run.losses.len() || h > trace.len() {
                return Err(OnoError::InvalidValue(format!("horizon {h} outside the run")));
            }
            let played: f64 = run.losses[..h].iter().sum();
            let (_, best) = best_fixed_policy(
                &trace.frames[..h],
                rates,
                trace.slot_duration_s,
                config.grad_clip_load,
                comparator_iterations,
            )?;
            Ok(played - best)
        })
        .collect()
}
