use ono_core::model::{compute_loads, RateMatrix, SteeringPolicy, TrafficFrame, TrafficTrace};
use ono_core::predictors::Prediction;
use ono_core::robust::{quantile_loads, robust_objective, solve_robust, violation_rate, RobustConfig};
use ono_core::solver::{solve_oracle, SolveConfig};
use ono_testkit::random_instance;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[test]
fn zero_uncertainty_reduces_to_the_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..10 {
        let inst = random_instance(&mut rng, 25, 4, 0.7);
        let pred = Prediction {
            mean: inst.demand.clone(),
            std: vec![0.0; 25],
        };
        let r = solve_robust(&pred, &inst.rates, 1.0, &RobustConfig::default(), None).unwrap();
        let o = solve_oracle(&inst.frame(), &inst.rates, 1.0, &SolveConfig::default(), None).unwrap();
        assert!((r.objective - o.objective).abs() <= 1e-6);
    }
}

#[test]
fn symmetric_split_with_uncertainty() {
    let rates = RateMatrix::uniform(1, 2, 1.0).unwrap();
    let pred = Prediction {
        mean: vec![0.6],
        std: vec![0.1],
    };
    let cfg = RobustConfig::default();
    let r = solve_robust(&pred, &rates, 1.0, &cfg, None).unwrap();
    assert!((r.policy.get(0, 0) - 0.5).abs() < 1e-6);
    let q = quantile_loads(&pred, &r.policy, &rates, 1.0, &cfg).unwrap();
    let expect = 0.3 + cfg.z() * 0.05;
    assert!((q[0] - expect).abs() < 1e-6 && (q[1] - expect).abs() < 1e-6);
}

#[test]
fn objective_grows_with_epsilon() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..10 {
        let inst = random_instance(&mut rng, 20, 3, 0.5);
        let pred = Prediction {
            mean: inst.demand.clone(),
            std: inst.demand.iter().map(|d| 0.2 * d).collect(),
        };
        let solve = |eps: f64| {
            let cfg = RobustConfig {
                epsilon: eps,
                ..RobustConfig::default()
            };
            solve_robust(&pred, &inst.rates, 1.0, &cfg, None).unwrap().objective
        };
        assert!(solve(0.9) <= solve(0.99) + 1e-9);
    }
}

#[test]
fn robust_optimum_minimizes_its_own_objective() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let inst = random_instance(&mut rng, 30, 4, 0.6);
    let pred = Prediction {
        mean: inst.demand.clone(),
        std: inst.demand.iter().map(|d| 0.15 * d).collect(),
    };
    let cfg = RobustConfig::default();
    let r = solve_robust(&pred, &inst.rates, 1.0, &cfg, None).unwrap();
    let nominal = solve_oracle(&inst.frame(), &inst.rates, 1.0, &SolveConfig::default(), None).unwrap();
    let at_nominal = robust_objective(&pred, &nominal.policy, &inst.rates, 1.0, &cfg).unwrap();
    let at_robust = robust_objective(&pred, &r.policy, &inst.rates, 1.0, &cfg).unwrap();
    assert!((at_robust - r.objective).abs() <= 1e-9 * r.objective.abs().max(1.0));
    assert!(at_robust <= at_nominal + 1e-9);
}

#[test]
fn infeasible_quantile_problem_falls_back() {
    let rates = RateMatrix::uniform(1, 2, 1.0).unwrap();
    let pred = Prediction {
        mean: vec![1.9],
        std: vec![0.5],
    };
    let r = solve_robust(&pred, &rates, 1.0, &RobustConfig::default(), None).unwrap();
    assert!(!r.feasible);
    assert!((r.policy.get(0, 0) - 0.5).abs() < 1e-3);
}

#[test]
fn gaussian_errors_stay_within_the_rejection_budget() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let inst = random_instance(&mut rng, 40, 4, 0.55);
    let std: Vec<f64> = inst.demand.iter().map(|d| 0.2 * d).collect();
    let pred = Prediction {
        mean: inst.demand.clone(),
        std: std.clone(),
    };
    let r = solve_robust(&pred, &inst.rates, 1.0, &RobustConfig::default(), None).unwrap();
    assert!(r.feasible);
    let slots = 4000;
    let frames = (0..slots)
        .map(|t| {
            let d = inst
                .demand
                .iter()
                .zip(&std)
                .map(|(m, s)| Normal::new(*m, *s).unwrap().sample(&mut rng).max(0.0))
                .collect();
            TrafficFrame::new(t, d).unwrap()
        })
        .collect();
    let trace = TrafficTrace::new(1.0, slots, frames).unwrap();
    let v = violation_rate(&vec![r.policy.clone(); slots], &inst.rates, &trace, 0..slots).unwrap();
    assert!(v.rejected_fraction <= 1e-3, "rejected {}", v.rejected_fraction);
    assert!(v.per_bs.iter().all(|p| *p <= 5e-3), "per-BS overload {:?}", v.per_bs);
}

#[test]
fn violation_rate_extremes() {
    let rates = RateMatrix::new(2, 2, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
    let frames: Vec<TrafficFrame> = (0..5).map(|t| TrafficFrame::new(t, vec![0.6, 0.6]).unwrap()).collect();
    let trace = TrafficTrace::new(1.0, 5, frames).unwrap();
    let all_on_zero = SteeringPolicy::from_assignment(2, &[0, 0]).unwrap();
    let v = violation_rate(&vec![all_on_zero; 5], &rates, &trace, 0..5).unwrap();
    assert_eq!(v.per_bs, vec![1.0, 0.0]);
    assert_eq!(v.network, 1.0);
    let oracle: Vec<SteeringPolicy> = trace
        .frames
        .iter()
        .map(|f| solve_oracle(f, &rates, 1.0, &SolveConfig::default(), None).unwrap().policy)
        .collect();
    let v = violation_rate(&oracle, &rates, &trace, 0..5).unwrap();
    assert_eq!(v.per_bs, vec![0.0, 0.0]);
    assert_eq!(v.rejected_fraction, 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    // midpoint convexity of the robust objective along random segments
    #[test]
    fn robust_objective_is_convex(seed in 0u64..5000, t in 0.0f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, 6, 3, 0.4);
        let pred = Prediction {
            mean: inst.demand.clone(),
            std: inst.demand.iter().map(|d| 0.3 * d).collect(),
        };
        let cfg = RobustConfig { epsilon: 0.9, ..RobustConfig::default() };
        let draw = |rng: &mut ChaCha8Rng| {
            use rand::Rng;
            let raw: Vec<f64> = (0..18).map(|_| rng.random::<f64>() + 1e-3).collect();
            let pi: Vec<f64> = raw.chunks(3).flat_map(|c| { let s: f64 = c.iter().sum(); c.iter().map(move |v| v / s).collect::<Vec<_>>() }).collect();
            SteeringPolicy::new(6, 3, pi).unwrap()
        };
        let (a, b) = (draw(&mut rng), draw(&mut rng));
        let mid: Vec<f64> = a.as_slice().iter().zip(b.as_slice()).map(|(u, v)| t * u + (1.0 - t) * v).collect();
        let m = SteeringPolicy::new(6, 3, mid).unwrap();
        let fa = robust_objective(&pred, &a, &inst.rates, 1.0, &cfg).unwrap();
        let fb = robust_objective(&pred, &b, &inst.rates, 1.0, &cfg).unwrap();
        let fm = robust_objective(&pred, &m, &inst.rates, 1.0, &cfg).unwrap();
        prop_assume!(fa.is_finite() && fb.is_finite());
        prop_assert!(fm <= t * fa + (1.0 - t) * fb + 1e-9);
    }

    #[test]
    fn mean_loads_reported(seed in 0u64..5000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, 8, 2, 0.4);
        let pred = Prediction { mean: inst.demand.clone(), std: inst.demand.iter().map(|d| 0.1 * d).collect() };
        let r = solve_robust(&pred, &inst.rates, 1.0, &RobustConfig::default(), None).unwrap();
        let m = compute_loads(&inst.frame(), &r.policy, &inst.rates, 1.0).unwrap();
        for (a, b) in m.0.iter().zip(&r.loads.0) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }
}
