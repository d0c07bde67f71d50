//! Reference oracles and random instances shared by the test suites.
//!
//! The oracles here are deliberately naive (grid search, closed forms) and
//! share no code with the solvers they check.

use ono_core::model::{RateMatrix, TrafficFrame};
use rand::Rng;

/// A single-slot problem with unit slot duration.
#[derive(Debug, Clone)]
pub struct Instance {
    pub demand: Vec<f64>,
    pub rates: RateMatrix,
}

impl Instance {
    pub fn frame(&self) -> TrafficFrame {
        TrafficFrame::new(0, self.demand.clone()).unwrap()
    }

    pub fn num_locations(&self) -> usize {
        self.demand.len()
    }

    pub fn num_bs(&self) -> usize {
        self.rates.num_bs()
    }

    /// `a_xj = λ_x / R_xj`.
    pub fn coefficients(&self) -> Vec<Vec<f64>> {
        (0..self.num_locations())
            .map(|x| self.rates.row(x).iter().map(|r| self.demand[x] / r).collect())
            .collect()
    }
}

/// Random rates in `[0.5, 2]` and demand scaled so that the uniform policy's
/// largest load equals `uniform_max_load` (a feasible instance when below 1).
pub fn random_instance<R: Rng>(rng: &mut R, x: usize, k: usize, uniform_max_load: f64) -> Instance {
    let rates: Vec<f64> = (0..x * k).map(|_| rng.random_range(0.5..2.0)).collect();
    let rates = RateMatrix::new(x, k, rates).unwrap();
    let raw: Vec<f64> = (0..x).map(|_| rng.random_range(0.05..1.0)).collect();
    let mut loads = vec![0.0; k];
    for (xi, d) in raw.iter().enumerate() {
        for (j, l) in loads.iter_mut().enumerate() {
            *l += d / (k as f64 * rates.get(xi, j));
        }
    }
    let max = loads.iter().copied().fold(0.0, f64::max);
    let demand = raw.iter().map(|d| d * uniform_max_load / max).collect();
    Instance { demand, rates }
}

fn barrier(loads: &[f64]) -> f64 {
    if loads.iter().any(|r| *r >= 1.0) {
        return f64::INFINITY;
    }
    loads.iter().map(|r| -(1.0 - r).ln()).sum::<f64>() / loads.len() as f64
}

/// Optimal share to BS 0 for one location with coefficients `(a1, a2)` given
/// background loads `(c1, c2)`.
fn best_share(a1: f64, a2: f64, c1: f64, c2: f64) -> f64 {
    match (a1 > 0.0, a2 > 0.0) {
        (false, _) => 1.0,
        (true, false) => 0.0,
        (true, true) => ((a2 * (1.0 - c1) - a1 * (1.0 - c2 - a2)) / (2.0 * a1 * a2)).clamp(0.0, 1.0),
    }
}

fn eval_two(a: &[Vec<f64>], p: &[f64]) -> f64 {
    let mut l = [0.0, 0.0];
    for (ax, px) in a.iter().zip(p) {
        l[0] += px * ax[0];
        l[1] += (1.0 - px) * ax[1];
    }
    barrier(&l)
}

/// Minimum barrier cost by grid search (step `1e-3`) over the BS-0 shares of
/// all locations but the last, the last solved in closed form, then local
/// pattern refinement around the best grid point. Supports `K ≤ 2`, `X ≤ 3`.
pub fn brute_force_cost(inst: &Instance) -> f64 {
    let k = inst.num_bs();
    let x = inst.num_locations();
    assert!(k <= 2 && x <= 3, "brute force supports K ≤ 2 and X ≤ 3");
    let a = inst.coefficients();
    if k == 1 {
        return barrier(&[a.iter().map(|r| r[0]).sum()]);
    }
    let complete = |p: &mut Vec<f64>| -> f64 {
        let (mut c1, mut c2) = (0.0, 0.0);
        for (ax, px) in a.iter().zip(p.iter()).take(x - 1) {
            c1 += px * ax[0];
            c2 += (1.0 - px) * ax[1];
        }
        p[x - 1] = best_share(a[x - 1][0], a[x - 1][1], c1, c2);
        eval_two(&a, p)
    };
    let steps = 1000;
    let free = x - 1;
    let mut best = f64::INFINITY;
    let mut best_p = vec![0.0; x];
    let combos = (steps + 1usize).pow(free as u32);
    let mut p = vec![0.0; x];
    for idx in 0..combos {
        let mut rem = idx;
        for v in p.iter_mut().take(free) {
            *v = (rem % (steps + 1)) as f64 / steps as f64;
            rem /= steps + 1;
        }
        let f = complete(&mut p);
        if f < best {
            best = f;
            best_p.clone_from(&p);
        }
    }
    let mut h = 1e-3;
    while h > 1e-9 {
        let mut moved = true;
        while moved {
            moved = false;
            for i in 0..free {
                for s in [-h, h] {
                    let mut q = best_p.clone();
                    q[i] = (q[i] + s).clamp(0.0, 1.0);
                    let f = complete(&mut q);
                    if f < best {
                        best = f;
                        best_p = q;
                        moved = true;
                    }
                }
            }
        }
        h /= 4.0;
    }
    best
}

/// Minimum over policies of the largest load, by grid search with the last
/// location's split balanced in closed form. Supports `K ≤ 2`, `X ≤ 3`.
pub fn brute_force_min_max(inst: &Instance) -> f64 {
    let k = inst.num_bs();
    let x = inst.num_locations();
    assert!(k <= 2 && x <= 3, "brute force supports K ≤ 2 and X ≤ 3");
    let a = inst.coefficients();
    if k == 1 {
        return a.iter().map(|r| r[0]).sum();
    }
    let free = x - 1;
    let steps = 1000usize;
    let mut best = f64::INFINITY;
    let mut p = vec![0.0; free];
    for idx in 0..(steps + 1).pow(free as u32) {
        let mut rem = idx;
        for v in p.iter_mut() {
            *v = (rem % (steps + 1)) as f64 / steps as f64;
            rem /= steps + 1;
        }
        let (mut c1, mut c2) = (0.0, 0.0);
        for (ax, px) in a.iter().zip(&p) {
            c1 += px * ax[0];
            c2 += (1.0 - px) * ax[1];
        }
        let (a1, a2) = (a[x - 1][0], a[x - 1][1]);
        let q = if a1 + a2 > 0.0 {
            ((c2 + a2 - c1) / (a1 + a2)).clamp(0.0, 1.0)
        } else {
            0.0
        };
        best = best.min((c1 + q * a1).max(c2 + (1.0 - q) * a2));
    }
    best
}

/// Barrier cost of explicit loads, `+∞` when any load reaches 1.
pub fn barrier_cost(loads: &[f64]) -> f64 {
    barrier(loads)
}
