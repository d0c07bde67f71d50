//! Per-slot optimization over the product of per-location simplices.
//!
//! One entropic mirror-descent engine serves three objectives: the
//! barrier cost `(1/K) Σ −ln(1 − ρ_j)` on nominal loads (the oracle), the
//! same barrier on Gaussian quantile loads (robust), and a log-sum-exp
//! surrogate of `max_j ρ_j` (feasibility).
//!
//! Each row is updated with its gradient divided by the row minimum, which
//! makes the step dimensionless and insensitive to per-location demand
//! scale. Convergence is certified by the Frank-Wolfe gap
//! `Σ_x (Σ_j π_xj g_xj − min_j g_xj)`, an upper bound on the suboptimality.
//! After convergence a short active-set pass drops coordinates that are
//! priced out (tiny mass, strictly higher marginal cost) and brings back
//! zero coordinates that have become the cheapest, then re-solves.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Axis, OnoError};
use crate::model::{
    cost_of, load_coefficients, loads_from_coefficients, LoadVector, RateMatrix, SteeringPolicy, TrafficFrame,
    TrafficTrace, RHO_CAP,
};
use crate::Result;

/// Smoothing of the max-load surrogate.
pub const MIN_MAX_BETA: f64 = 200.0;

/// Cap on the normalized gradient excess `g/g_min − 1`, so that the step
/// size still controls rows whose minimum gradient underflows.
const MAX_DELTA: f64 = 40.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveConfig {
    /// Relative tolerance on the duality gap.
    pub tolerance: f64,
    pub max_iters: usize,
    pub barrier_cap: f64,
    pub initial_step: f64,
    pub step_growth: f64,
    pub step_shrink: f64,
    /// Before refinement, coordinates with mass below this and marginal
    /// cost above the row minimum by more than `prune_delta` (relative)
    /// hand their mass to the cheapest coordinate.
    pub prune_mass: f64,
    pub prune_delta: f64,
    pub max_polish_rounds: usize,
    /// Newton refinement of the oracle stops once marginal costs agree to
    /// this relative spread on every row.
    pub kkt_tolerance: f64,
    pub newton_iters: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            tolerance: 1e-8,
            max_iters: 20_000,
            barrier_cap: RHO_CAP,
            initial_step: 1.0,
            step_growth: 1.5,
            step_shrink: 0.3,
            prune_mass: 1e-3,
            prune_delta: 1e-6,
            max_polish_rounds: 6,
            kkt_tolerance: 1e-10,
            newton_iters: 500,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.tolerance > 0.0
            && self.kkt_tolerance > 0.0
            && self.max_iters > 0
            && self.barrier_cap > 0.0
            && self.barrier_cap < 1.0
            && self.initial_step > 0.0
            && self.step_growth >= 1.0
            && self.step_shrink > 0.0
            && self.step_shrink < 1.0
            && self.prune_mass >= 0.0
            && self.prune_delta >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(OnoError::Config(format!("invalid solver settings: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    pub policy: SteeringPolicy,
    pub loads: LoadVector,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub feasible: bool,
}

/// How the policy maps to the loads the objective sees.
pub(crate) enum LoadMap<'a> {
    /// `ρ_j = Σ_x π_xj a_xj`.
    Linear { a: &'a [f64], k: usize },
    /// `m_j + z·sqrt(Σ_x (π_xj b_xj)²) + headroom`, with `b2 = b²`.
    Quantile {
        a: &'a [f64],
        b2: &'a [f64],
        z: f64,
        headroom: f64,
        k: usize,
    },
}

impl LoadMap<'_> {
    fn k(&self) -> usize {
        match self {
            LoadMap::Linear { k, .. } | LoadMap::Quantile { k, .. } => *k,
        }
    }

    fn len(&self) -> usize {
        match self {
            LoadMap::Linear { a, .. } | LoadMap::Quantile { a, .. } => a.len(),
        }
    }

    /// Fills `eff` with effective loads and `std` with the per-BS std term.
    fn eval(&self, pi: &[f64], eff: &mut [f64], std: &mut [f64]) {
        match self {
            LoadMap::Linear { a, .. } => loads_from_coefficients(a, pi, eff),
            LoadMap::Quantile { a, b2, z, headroom, k } => {
                loads_from_coefficients(a, pi, eff);
                std.iter_mut().for_each(|v| *v = 0.0);
                for (b_row, p_row) in b2.chunks_exact(*k).zip(pi.chunks_exact(*k)) {
                    for j in 0..*k {
                        std[j] += p_row[j] * p_row[j] * b_row[j];
                    }
                }
                for j in 0..*k {
                    std[j] = std[j].sqrt();
                    eff[j] += z * std[j] + headroom;
                }
            }
        }
    }

    /// `∂eff_j / ∂π_xj` at flat index `i = x·K + j`.
    #[inline]
    fn partial(&self, i: usize, pi_i: f64, std: &[f64]) -> f64 {
        match self {
            LoadMap::Linear { a, .. } => a[i],
            LoadMap::Quantile { a, b2, z, k, .. } => {
                let s = std[i % k];
                if s > 0.0 {
                    a[i] + z * pi_i * b2[i] / s
                } else {
                    a[i]
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Shape {
    /// `(1/K) Σ −ln(1 − eff_j)`.
    Barrier { cap: f64 },
    /// `(1/β) ln Σ exp(β eff_j)`.
    LogSumExp { beta: f64 },
}

impl Shape {
    fn value(&self, eff: &[f64]) -> f64 {
        match self {
            Shape::Barrier { .. } => cost_of(eff),
            Shape::LogSumExp { beta } => {
                let m = eff.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let s: f64 = eff.iter().map(|e| (beta * (e - m)).exp()).sum();
                m + s.ln() / beta
            }
        }
    }

    /// `∂Φ/∂eff_j` into `w`.
    fn weights(&self, eff: &[f64], w: &mut [f64]) {
        match self {
            Shape::Barrier { cap } => {
                let k = eff.len() as f64;
                for (wj, e) in w.iter_mut().zip(eff) {
                    *wj = 1.0 / (k * (1.0 - e.min(*cap)));
                }
            }
            Shape::LogSumExp { beta } => {
                let m = eff.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut s = 0.0;
                for (wj, e) in w.iter_mut().zip(eff) {
                    *wj = (beta * (e - m)).exp();
                    s += *wj;
                }
                w.iter_mut().for_each(|v| *v /= s);
            }
        }
    }
}

pub(crate) struct Outcome {
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

struct Work {
    eff: Vec<f64>,
    std: Vec<f64>,
    w: Vec<f64>,
    g: Vec<f64>,
    cand: Vec<f64>,
}

impl Work {
    fn new(n: usize, k: usize) -> Self {
        Work {
            eff: vec![0.0; k],
            std: vec![0.0; k],
            w: vec![0.0; k],
            g: vec![0.0; n],
            cand: vec![0.0; n],
        }
    }
}

fn value(map: &LoadMap, shape: Shape, pi: &[f64], ws: &mut Work) -> f64 {
    map.eval(pi, &mut ws.eff, &mut ws.std);
    shape.value(&ws.eff)
}

/// Gradient into `ws.g`; assumes `ws.eff`/`ws.std` are current for `pi`.
fn gradient(map: &LoadMap, shape: Shape, pi: &[f64], ws: &mut Work) {
    let k = map.k();
    shape.weights(&ws.eff, &mut ws.w);
    for (i, gi) in ws.g.iter_mut().enumerate() {
        *gi = ws.w[i % k] * map.partial(i, pi[i], &ws.std);
    }
}

/// Row minimum of the gradient over the support (or over all coordinates).
fn row_min(g: &[f64], pi: &[f64], support_only: bool) -> f64 {
    g.iter()
        .zip(pi)
        .filter(|(_, p)| !support_only || **p > 0.0)
        .map(|(g, _)| *g)
        .fold(f64::INFINITY, f64::min)
}

struct Gaps {
    /// Frank-Wolfe gap restricted to the support.
    support: f64,
    /// Frank-Wolfe gap over the full product of simplices.
    full: f64,
}

fn gaps(g: &[f64], pi: &[f64], k: usize) -> Gaps {
    let mut support = 0.0;
    let mut full = 0.0;
    for (g_row, p_row) in g.chunks_exact(k).zip(pi.chunks_exact(k)) {
        let dot: f64 = g_row.iter().zip(p_row).map(|(g, p)| g * p).sum();
        support += dot - row_min(g_row, p_row, true);
        full += dot - row_min(g_row, p_row, false);
    }
    Gaps {
        support: support.max(0.0),
        full: full.max(0.0),
    }
}

/// Multiplicative step on the support: `π_xj ∝ π_xj · exp(−η (g_xj/g_min − 1))`.
fn step(pi: &[f64], g: &[f64], k: usize, eta: f64, out: &mut [f64]) {
    for ((p_row, g_row), o_row) in pi.chunks_exact(k).zip(g.chunks_exact(k)).zip(out.chunks_exact_mut(k)) {
        let gmin = row_min(g_row, p_row, true);
        if !(gmin.is_finite()) || g_row.iter().zip(p_row).all(|(g, p)| *p == 0.0 || *g == gmin) {
            o_row.copy_from_slice(p_row);
            continue;
        }
        let mut sum = 0.0;
        for j in 0..k {
            let p = p_row[j];
            let v = if p == 0.0 {
                0.0
            } else {
                let delta = if g_row[j] == gmin {
                    0.0
                } else if gmin > 0.0 {
                    g_row[j] / gmin - 1.0
                } else {
                    f64::INFINITY
                };
                let e = eta * delta.min(MAX_DELTA);
                if e > 0.0 {
                    p * (-e).exp()
                } else {
                    p
                }
            };
            o_row[j] = v;
            sum += v;
        }
        o_row.iter_mut().for_each(|v| *v /= sum);
    }
}

/// Gives zero coordinates that are cheaper than their row's support a
/// little mass. Returns whether anything changed.
fn revive(pi: &mut [f64], g: &[f64], k: usize, threshold: f64) -> bool {
    let mut changed = false;
    for (p_row, g_row) in pi.chunks_exact_mut(k).zip(g.chunks_exact(k)) {
        let gmin = row_min(g_row, p_row, true);
        if !(gmin > 0.0 && gmin.is_finite()) {
            continue;
        }
        let mut row_changed = false;
        for j in 0..k {
            if p_row[j] == 0.0 && g_row[j] < gmin * (1.0 - threshold) {
                p_row[j] = 1e-3;
                row_changed = true;
            }
        }
        if row_changed {
            let s: f64 = p_row.iter().sum();
            p_row.iter_mut().for_each(|v| *v /= s);
            changed = true;
        }
    }
    changed
}

/// Minimizes `shape(map(π))` from a start with finite objective. `pi` is
/// updated in place and always stays on the product of simplices.
pub(crate) fn mirror_descent(map: &LoadMap, shape: Shape, pi: &mut [f64], cfg: &SolveConfig) -> Outcome {
    let k = map.k();
    let n = map.len();
    let mut ws = Work::new(n, k);
    let mut f = value(map, shape, pi, &mut ws);
    if !f.is_finite() {
        return Outcome {
            objective: f,
            iterations: 0,
            converged: false,
        };
    }
    let mut eta = cfg.initial_step;
    let mut iterations = 0;
    let mut rounds = 0;
    loop {
        let mut converged = false;
        while iterations < cfg.max_iters {
            gradient(map, shape, pi, &mut ws);
            if gaps(&ws.g, pi, k).support <= cfg.tolerance * f.abs() {
                converged = true;
                break;
            }
            iterations += 1;
            let mut accepted = false;
            let mut cand = std::mem::take(&mut ws.cand);
            for _ in 0..60 {
                step(pi, &ws.g, k, eta, &mut cand);
                let slope: f64 = ws.g.iter().zip(cand.iter().zip(pi.iter())).map(|(g, (c, p))| g * (c - p)).sum();
                let f_new = value(map, shape, &cand, &mut ws);
                if f_new.is_finite() && f_new <= f + 1e-4 * slope.min(0.0) {
                    f = f_new;
                    accepted = true;
                    break;
                }
                eta *= cfg.step_shrink;
            }
            ws.cand = cand;
            if !accepted {
                // no descent at any step size: stationary up to round-off
                f = value(map, shape, pi, &mut ws);
                gradient(map, shape, pi, &mut ws);
                converged = true;
                break;
            }
            pi.copy_from_slice(&ws.cand);
            eta *= cfg.step_growth;
        }
        let full_ok = gaps(&ws.g, pi, k).full <= cfg.tolerance * f.abs();
        if !converged || full_ok || rounds >= cfg.max_polish_rounds || !revive(pi, &ws.g, k, 1e-9) {
            return Outcome {
                objective: f,
                iterations,
                converged: converged && (full_ok || revive_free(&ws.g, pi, k)),
            };
        }
        rounds += 1;
        f = value(map, shape, pi, &mut ws);
    }
}

/// No zero coordinate is strictly cheaper than its row's support.
fn revive_free(g: &[f64], pi: &[f64], k: usize) -> bool {
    g.chunks_exact(k).zip(pi.chunks_exact(k)).all(|(g_row, p_row)| {
        let gmin = row_min(g_row, p_row, true);
        g_row.iter().zip(p_row).all(|(g, p)| *p > 0.0 || *g >= gmin * (1.0 - 1e-9))
    })
}

/// Largest relative spread of `g` over each row's support, and largest
/// relative shortfall of a zero coordinate below the support minimum.
fn row_spread(g: &[f64], pi: &[f64], k: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for (g_row, p_row) in g.chunks_exact(k).zip(pi.chunks_exact(k)) {
        let lo = row_min(g_row, p_row, true);
        if !(lo > 0.0) {
            continue;
        }
        for (g, p) in g_row.iter().zip(p_row) {
            if *p > 0.0 {
                worst = worst.max(g / lo - 1.0);
            } else {
                worst = worst.max(1.0 - g / lo);
            }
        }
    }
    worst
}

/// Newton step for the free variables, `None` if the system is degenerate.
fn newton_direction(
    a: &[f64],
    k: usize,
    free: &[Free],
    w: &nalgebra::DVector<f64>,
    d: &nalgebra::DVector<f64>,
) -> Option<Vec<f64>> {
    use nalgebra::DMatrix;
    if free.is_empty() {
        return None;
    }
    let mut m = DMatrix::<f64>::zeros(k, k);
    for v in free {
        let (cj, cb) = (a[v.x * k + v.j], -a[v.x * k + v.b]);
        m[(v.j, v.j)] += cj * cj;
        m[(v.b, v.b)] += cb * cb;
        m[(v.j, v.b)] += cj * cb;
        m[(v.b, v.j)] += cj * cb;
    }
    let lhs = &m * DMatrix::from_diagonal(d) * &m;
    let rhs = -(&m * w);
    let svd = lhs.svd(true, true);
    let cutoff = 1e-13 * svd.singular_values.max();
    let y = svd.solve(&rhs, cutoff).ok()?;
    Some(
        free.iter()
            .map(|v| a[v.x * k + v.j] * y[v.j] - a[v.x * k + v.b] * y[v.b])
            .collect(),
    )
}

/// One free variable of the reduced problem: mass moved from the row's
/// base coordinate `b` to coordinate `j`.
struct Free {
    x: usize,
    j: usize,
    b: usize,
}

/// Active-set Newton refinement of the barrier objective on linear loads.
///
/// On the current support every row keeps its largest coordinate as the
/// base and the others as free variables. The objective depends on the
/// free variables only through the K loads, so the Newton system is solved
/// in load space: with `J` the Jacobian of loads, `w` the load gradient and
/// `D` the diagonal load Hessian, the step is `Δ = Jᵀy` where
/// `(M D M) y = −M w` and `M = J Jᵀ`. Coordinates that reach zero leave the
/// support; zero coordinates that become cheapest join it.
///
/// Returns the objective, Newton iterations, and whether the relative
/// spread of marginal costs fell below `cfg.kkt_tolerance`.
pub(crate) fn newton_refine(a: &[f64], k: usize, pi: &mut [f64], cfg: &SolveConfig) -> (f64, usize, bool) {
    use nalgebra::DVector;

    let x_count = a.len() / k;
    let kf = k as f64;
    let mut rho = vec![0.0; k];
    let mut g = vec![0.0; a.len()];
    let eval = |pi: &[f64], rho: &mut [f64]| {
        loads_from_coefficients(a, pi, rho);
        cost_of(rho)
    };
    let mut f = eval(pi, &mut rho);
    if !f.is_finite() {
        return (f, 0, false);
    }
    let grad = |rho: &[f64], g: &mut [f64]| {
        for (i, gi) in g.iter_mut().enumerate() {
            *gi = a[i] / (kf * (1.0 - rho[i % k]));
        }
    };

    // drop priced-out coordinates with little mass before the first solve
    grad(&rho, &mut g);
    for x in 0..x_count {
        let (p_row, g_row) = (&mut pi[x * k..(x + 1) * k], &g[x * k..(x + 1) * k]);
        let lo = row_min(g_row, p_row, true);
        if !(lo > 0.0) {
            continue;
        }
        let best = (0..k)
            .filter(|&j| p_row[j] > 0.0)
            .min_by(|&p, &q| g_row[p].total_cmp(&g_row[q]))
            .expect("row has support");
        for j in 0..k {
            if j != best && p_row[j] > 0.0 && p_row[j] < cfg.prune_mass && g_row[j] / lo - 1.0 > cfg.prune_delta {
                p_row[best] += p_row[j];
                p_row[j] = 0.0;
            }
        }
    }
    let f_pruned = eval(pi, &mut rho);
    if !f_pruned.is_finite() {
        return (f, 0, false);
    }
    f = f_pruned;

    let mut iterations = 0;
    let mut cand = pi.to_vec();
    let mut rho_c = vec![0.0; k];
    while iterations < cfg.newton_iters {
        grad(&rho, &mut g);
        if row_spread(&g, pi, k) <= cfg.kkt_tolerance {
            return (f, iterations, true);
        }
        iterations += 1;

        let mut free = Vec::new();
        let mut r = Vec::new();
        for x in 0..x_count {
            let (p_row, g_row) = (&pi[x * k..(x + 1) * k], &g[x * k..(x + 1) * k]);
            let lo = row_min(g_row, p_row, true);
            if !(lo > 0.0) {
                continue;
            }
            let b = (0..k)
                .max_by(|&p, &q| p_row[p].total_cmp(&p_row[q]).then(q.cmp(&p)))
                .expect("k > 0");
            for j in 0..k {
                if j != b && (p_row[j] > 0.0 || g_row[j] < lo) {
                    free.push(Free { x, j, b });
                    r.push(g_row[j] - g_row[b]);
                }
            }
        }
        if free.is_empty() {
            return (f, iterations, row_spread(&g, pi, k) <= cfg.kkt_tolerance);
        }

        let w = DVector::from_fn(k, |j, _| 1.0 / (kf * (1.0 - rho[j])));
        let d = DVector::from_fn(k, |j, _| 1.0 / (kf * (1.0 - rho[j]).powi(2)));
        let mut delta = Vec::new();
        // zero coordinates the step would push negative are taken out and the step recomputed
        for _ in 0..8 {
            delta = match newton_direction(a, k, &free, &w, &d) {
                Some(dv) => dv,
                None => break,
            };
            let before = free.len();
            let keep: Vec<bool> = delta
                .iter()
                .zip(&free)
                .map(|(dv, v)| !(pi[v.x * k + v.j] == 0.0 && *dv < 0.0))
                .collect();
            let mut it = keep.iter();
            free.retain(|_| *it.next().unwrap());
            let mut it = keep.iter();
            r.retain(|_| *it.next().unwrap());
            if free.len() == before {
                break;
            }
            delta.clear();
        }
        if delta.is_empty() || free.is_empty() {
            break;
        }
        let slope: f64 = r.iter().zip(&delta).map(|(r, d)| r * d).sum();
        if !(slope < 0.0) {
            break;
        }

        // largest step keeping every coordinate non-negative
        let mut alpha_max = f64::INFINITY;
        let mut base_out = vec![0.0; x_count * k];
        for (v, dv) in free.iter().zip(&delta) {
            if *dv < 0.0 {
                alpha_max = alpha_max.min(pi[v.x * k + v.j] / -dv);
            }
            base_out[v.x * k + v.b] += dv;
        }
        for (i, out) in base_out.iter().enumerate() {
            if *out > 0.0 {
                alpha_max = alpha_max.min(pi[i] / out);
            }
        }
        let mut alpha = alpha_max.min(1.0);
        let mut accepted = false;
        for _ in 0..40 {
            cand.copy_from_slice(pi);
            for (v, dv) in free.iter().zip(&delta) {
                cand[v.x * k + v.j] += alpha * dv;
                cand[v.x * k + v.b] -= alpha * dv;
            }
            for c in cand.iter_mut() {
                if *c < 1e-15 {
                    *c = 0.0;
                }
            }
            // exact row sums after clipping
            for x in 0..x_count {
                let row = &mut cand[x * k..(x + 1) * k];
                let s: f64 = row.iter().sum();
                if s > 0.0 {
                    row.iter_mut().for_each(|v| *v /= s);
                }
            }
            let f_new = eval(&cand, &mut rho_c);
            if f_new.is_finite() && f_new <= f + 1e-4 * alpha * slope {
                accepted = true;
                f = f_new;
                break;
            }
            if f_new.is_finite() && f_new <= f && alpha < 1e-6 {
                accepted = true;
                f = f_new;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
        pi.copy_from_slice(&cand);
        rho.copy_from_slice(&rho_c);
    }
    grad(&rho, &mut g);
    (f, iterations, row_spread(&g, pi, k) <= cfg.kkt_tolerance)
}

fn check_frame(demand: &[f64], rates: &RateMatrix, slot_duration_s: f64) -> Result<()> {
    check_dim(Axis::Locations, "demand vs rates", rates.num_locations(), demand.len())?;
    if let Some(d) = demand.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
        return Err(OnoError::InvalidValue(format!("demand {d} must be finite and non-negative")));
    }
    if !(slot_duration_s.is_finite() && slot_duration_s > 0.0) {
        return Err(OnoError::InvalidValue("slot duration must be positive".into()));
    }
    Ok(())
}

fn check_warm(warm: Option<&SteeringPolicy>, rates: &RateMatrix) -> Result<()> {
    if let Some(w) = warm {
        check_dim(Axis::Locations, "warm start", rates.num_locations(), w.num_locations())?;
        check_dim(Axis::BaseStations, "warm start", rates.num_bs(), w.num_bs())?;
    }
    Ok(())
}

/// Warm starts are mixed with a little uniform mass so that every
/// coordinate can still move.
fn start_point(warm: Option<&SteeringPolicy>, x: usize, k: usize) -> Vec<f64> {
    match warm {
        Some(w) => {
            let mix = 1e-6;
            w.as_slice().iter().map(|p| (1.0 - mix) * p + mix / k as f64).collect()
        }
        None => vec![1.0 / k as f64; x * k],
    }
}

/// Approximately minimizes `max_j ρ_j` through the log-sum-exp surrogate
/// with `β = 200`. Returns the policy and its true maximum load.
pub fn min_max_load(
    traffic: &TrafficFrame,
    rates: &RateMatrix,
    slot_duration_s: f64,
    config: &SolveConfig,
) -> Result<(SteeringPolicy, f64)> {
    config.validate()?;
    check_frame(&traffic.demand, rates, slot_duration_s)?;
    let a = load_coefficients(&traffic.demand, rates, slot_duration_s);
    let k = rates.num_bs();
    let map = LoadMap::Linear { a: &a, k };
    Ok(min_max_on(&map, rates.num_locations(), config))
}

pub(crate) fn min_max_on(map: &LoadMap, x: usize, config: &SolveConfig) -> (SteeringPolicy, f64) {
    let k = map.k();
    let mut pi = vec![1.0 / k as f64; x * k];
    // the surrogate is only a feasibility and fallback device
    let cfg = SolveConfig {
        tolerance: config.tolerance.max(1e-7),
        max_iters: config.max_iters.min(3000),
        ..config.clone()
    };
    mirror_descent(map, Shape::LogSumExp { beta: MIN_MAX_BETA }, &mut pi, &cfg);
    let mut eff = vec![0.0; k];
    let mut std = vec![0.0; k];
    map.eval(&pi, &mut eff, &mut std);
    let max = eff.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (SteeringPolicy::from_raw_unchecked(x, k, pi), max)
}

/// Minimizes the barrier objective for known demand.
pub fn solve_oracle(
    traffic: &TrafficFrame,
    rates: &RateMatrix,
    slot_duration_s: f64,
    config: &SolveConfig,
    warm_start: Option<&SteeringPolicy>,
) -> Result<SolveResult> {
    config.validate()?;
    check_frame(&traffic.demand, rates, slot_duration_s)?;
    check_warm(warm_start, rates)?;
    let a = load_coefficients(&traffic.demand, rates, slot_duration_s);
    let k = rates.num_bs();
    let map = LoadMap::Linear { a: &a, k };
    Ok(solve_with_fallback(&map, None, rates.num_locations(), config, warm_start))
}

/// Barrier solve on `map`; when no feasible start exists, the min-max
/// policy of `map` is tried, and failing that the min-max policy of
/// `fallback` (default `map`) is returned as infeasible. Reported loads are
/// the linear part of `map`.
pub(crate) fn solve_with_fallback(
    map: &LoadMap,
    fallback: Option<&LoadMap>,
    x: usize,
    config: &SolveConfig,
    warm_start: Option<&SteeringPolicy>,
) -> SolveResult {
    let k = map.k();
    let shape = Shape::Barrier {
        cap: config.barrier_cap,
    };
    let mut eff = vec![0.0; k];
    let mut std = vec![0.0; k];
    let mut pi = start_point(warm_start, x, k);
    map.eval(&pi, &mut eff, &mut std);
    let mut iterations = 0;
    if !shape.value(&eff).is_finite() && warm_start.is_some() {
        pi = start_point(None, x, k);
        map.eval(&pi, &mut eff, &mut std);
    }
    if !shape.value(&eff).is_finite() {
        let (mm, max) = min_max_on(map, x, config);
        if max < 1.0 {
            pi = mm.into_vec();
        } else {
            let policy = match fallback {
                Some(fb) => min_max_on(fb, x, config).0,
                None => mm,
            };
            return infeasible_result(map, policy);
        }
    }
    let out = mirror_descent(map, shape, &mut pi, config);
    iterations += out.iterations;
    let (mut objective, mut converged) = (out.objective, out.converged);
    if let LoadMap::Linear { a, .. } = map {
        if objective.is_finite() {
            let (f, it, kkt) = newton_refine(a, k, &mut pi, config);
            iterations += it;
            objective = f;
            converged = converged || kkt;
        }
    }
    let policy = SteeringPolicy::from_raw_unchecked(x, k, pi);
    let loads = linear_loads(map, &policy);
    SolveResult {
        policy,
        loads,
        objective,
        iterations,
        converged,
        feasible: objective.is_finite(),
    }
}

fn linear_loads(map: &LoadMap, policy: &SteeringPolicy) -> LoadVector {
    let (a, k) = match map {
        LoadMap::Linear { a, k } | LoadMap::Quantile { a, k, .. } => (a, *k),
    };
    let mut rho = vec![0.0; k];
    loads_from_coefficients(a, policy.as_slice(), &mut rho);
    LoadVector(rho)
}

fn infeasible_result(map: &LoadMap, policy: SteeringPolicy) -> SolveResult {
    let loads = linear_loads(map, &policy);
    SolveResult {
        policy,
        loads,
        objective: f64::INFINITY,
        iterations: 0,
        converged: false,
        feasible: false,
    }
}

/// Marginal cost `λ_x / (R_xj (1 − ρ_j))` of steering location `x` to `j`.
pub fn marginal_costs(demand: &[f64], rates: &RateMatrix, loads: &LoadVector) -> Vec<f64> {
    let k = rates.num_bs();
    let mut out = vec![0.0; demand.len() * k];
    for (x, d) in demand.iter().enumerate() {
        for j in 0..k {
            out[x * k + j] = d / (rates.get(x, j) * (1.0 - loads.0[j]));
        }
    }
    out
}

/// Largest relative violation of marginal-cost equalization: spread of
/// marginal costs over each location's support, and shortfall of
/// zero-mass coordinates below the support minimum. Locations without
/// demand are skipped.
pub fn kkt_violation(demand: &[f64], rates: &RateMatrix, policy: &SteeringPolicy, loads: &LoadVector) -> f64 {
    let k = rates.num_bs();
    let mc = marginal_costs(demand, rates, loads);
    let mut worst: f64 = 0.0;
    for (x, d) in demand.iter().enumerate() {
        if *d <= 0.0 {
            continue;
        }
        let row = &mc[x * k..(x + 1) * k];
        let p = policy.row(x);
        let lo = row_min(row, p, true);
        let hi = row
            .iter()
            .zip(p)
            .filter(|(_, p)| **p > 0.0)
            .map(|(c, _)| *c)
            .fold(f64::NEG_INFINITY, f64::max);
        worst = worst.max((hi - lo) / lo);
        for (c, pj) in row.iter().zip(p) {
            if *pj == 0.0 {
                worst = worst.max((lo - c) / lo);
            }
        }
    }
    worst
}

/// Oracle solutions for every slot of `range`. Slots are solved in
/// independent chunks of `chunk` consecutive slots, warm-started within a
/// chunk, so the result does not depend on the thread count.
pub fn solve_oracle_range(
    trace: &TrafficTrace,
    rates: &RateMatrix,
    config: &SolveConfig,
    range: std::ops::Range<usize>,
    chunk: usize,
) -> Result<Vec<SolveResult>> {
    use rayon::prelude::*;
    if range.end > trace.len() {
        return Err(OnoError::InvalidValue(format!("range {range:?} exceeds the trace")));
    }
    let starts: Vec<usize> = range.clone().step_by(chunk.max(1)).collect();
    let parts: Vec<Vec<SolveResult>> = starts
        .into_par_iter()
        .map(|s| {
            let end = (s + chunk.max(1)).min(range.end);
            let mut out: Vec<SolveResult> = Vec::with_capacity(end - s);
            for t in s..end {
                let warm = out.last().filter(|r| r.feasible).map(|r| &r.policy);
                let r = solve_oracle(&trace.frames[t], rates, trace.slot_duration_s, config, warm)?;
                out.push(r);
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(parts.into_iter().flatten().collect())
}
