use ono_core::adapted::{
    build_training_set, input_reduce, output_expand, run_adapted_ai, AdaptedConfig, AdaptedModel, ExpansionConfig,
    ExpansionMode, OracleLoads, ReducedLoads,
};
use ono_core::model::{compute_loads, cost, LoadVector, SteeringPolicy, TrafficFrame, TrafficTrace};
use ono_core::solver::{solve_oracle, SolveConfig};
use ono_core::TrainSettings;
use ono_testkit::{random_instance, Instance};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 50 locations of comparable size, moderate load.
fn expansion_instance(rng: &mut ChaCha8Rng) -> Instance {
    let k = rng.random_range(2..=5);
    let target = rng.random_range(0.3..0.6);
    random_instance(rng, 50, k, target)
}

#[test]
fn true_optimal_loads_expand_to_near_optimal_policies() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let cfg = SolveConfig::default();
    for i in 0..100 {
        let inst = expansion_instance(&mut rng);
        let r = solve_oracle(&inst.frame(), &inst.rates, 1.0, &cfg, None).unwrap();
        let e = output_expand(&r.loads, &inst.rates, &ExpansionConfig::default(), None, 1.0).unwrap();
        let c = cost(&compute_loads(&inst.frame(), &e.policy, &inst.rates, 1.0).unwrap());
        assert!(c <= 1.01 * r.objective, "instance {i}: {c} vs oracle {}", r.objective);
    }
}

#[test]
fn reduced_loads_beat_random_policies() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for _ in 0..5 {
        let inst = random_instance(&mut rng, 25, 3, 0.7);
        let r = input_reduce(&inst.frame(), &inst.rates, 1.0, &SolveConfig::default()).unwrap();
        let best = cost(&r.loads);
        for _ in 0..50 {
            let assignment: Vec<usize> = (0..25).map(|_| rng.random_range(0..3)).collect();
            let p = SteeringPolicy::from_assignment(3, &assignment).unwrap();
            assert!(best <= cost(&compute_loads(&inst.frame(), &p, &inst.rates, 1.0).unwrap()) + 1e-12);
        }
    }
}

fn scaled_trace(base: &[f64], scales: &[f64], season: usize) -> TrafficTrace {
    let frames = scales
        .iter()
        .enumerate()
        .map(|(t, s)| TrafficFrame::new(t, base.iter().map(|d| d * s).collect()).unwrap())
        .collect();
    TrafficTrace::new(1.0, season, frames).unwrap()
}

fn reduce_all(trace: &TrafficTrace, inst: &Instance) -> Vec<ReducedLoads> {
    trace
        .frames
        .iter()
        .map(|f| input_reduce(f, &inst.rates, 1.0, &SolveConfig::default()).unwrap())
        .collect()
}

#[test]
fn oracle_stand_in_is_within_one_percent_per_slot() {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let inst = random_instance(&mut rng, 50, 4, 0.5);
    let scales: Vec<f64> = (0..40).map(|t| 0.8 + 0.4 * (t as f64 / 6.0).sin().abs()).collect();
    let trace = scaled_trace(&inst.demand, &scales, 12);
    let reduced = reduce_all(&trace, &inst);
    let oracle = OracleLoads {
        loads: reduced.iter().map(|r| r.loads.clone()).collect(),
        window: 4,
    };
    let mut boot = |_t: usize| Ok(SteeringPolicy::uniform(50, 4));
    let run = run_adapted_ai(&trace, &inst.rates, &oracle, &reduced, 0..40, &AdaptedConfig::default(), &mut boot).unwrap();
    for t in 4..40 {
        let c = cost(&compute_loads(&trace.frames[t], &run.policies[t], &inst.rates, 1.0).unwrap());
        let opt = cost(&reduced[t].loads);
        assert!(c <= 1.01 * opt, "slot {t}: {c} vs {opt}");
    }
}

#[test]
fn periodic_trace_gives_periodic_targets() {
    let mut rng = ChaCha8Rng::seed_from_u64(34);
    let inst = random_instance(&mut rng, 12, 3, 0.5);
    let scales: Vec<f64> = (0..30).map(|t| [0.6, 1.0, 1.3, 0.9, 0.7][t % 5]).collect();
    let trace = scaled_trace(&inst.demand, &scales, 5);
    let (reduced, pairs) = build_training_set(&trace, &inst.rates, 4, &SolveConfig::default()).unwrap();
    assert_eq!(pairs.len(), 26);
    for t in 5..30 {
        for (a, b) in reduced[t].loads.0.iter().zip(&reduced[t - 5].loads.0) {
            assert!((a - b).abs() < 1e-6);
        }
    }
    for i in 5..26 {
        for (a, b) in pairs[i].target.iter().zip(&pairs[i - 5].target) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}

fn quick_config(window: usize) -> AdaptedConfig {
    AdaptedConfig {
        window,
        hidden: vec![8],
        train: TrainSettings {
            max_epochs: 150,
            patience: 150,
            batch_size: 8,
            learning_rate: 5e-3,
            ..TrainSettings::default()
        },
        ..AdaptedConfig::default()
    }
}

#[test]
fn constant_trace_run_tracks_the_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(35);
    let inst = random_instance(&mut rng, 50, 3, 0.5);
    let trace = scaled_trace(&inst.demand, &[1.0; 60], 12);
    let cfg = quick_config(4);
    let (reduced, pairs) = build_training_set(&trace, &inst.rates, cfg.window, &SolveConfig::default()).unwrap();
    let model = AdaptedModel::train(&pairs, 3, 12, &cfg).unwrap();
    let mut boot = |_t: usize| Ok(SteeringPolicy::uniform(50, 3));
    let run = run_adapted_ai(&trace, &inst.rates, &model, &reduced, 0..60, &cfg, &mut boot).unwrap();
    let first: &LoadVector = run.predicted[4].as_ref().unwrap();
    let opt = cost(&reduced[0].loads);
    for t in 4..60 {
        let p = run.predicted[t].as_ref().unwrap();
        // phase features still vary on a constant trace
        for (a, b) in p.0.iter().zip(&first.0) {
            assert!((a - b).abs() < 0.02, "slot {t}: {p:?} vs {first:?}");
        }
        let c = cost(&compute_loads(&trace.frames[t], &run.policies[t], &inst.rates, 1.0).unwrap());
        assert!(c <= 1.01 * opt, "slot {t}: {c} vs {opt}");
    }
}

#[test]
fn model_json_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(36);
    let inst = random_instance(&mut rng, 10, 2, 0.5);
    let scales: Vec<f64> = (0..30).map(|t| 0.8 + 0.02 * t as f64).collect();
    let trace = scaled_trace(&inst.demand, &scales, 10);
    let mut cfg = quick_config(3);
    cfg.train.max_epochs = 3;
    let (_, pairs) = build_training_set(&trace, &inst.rates, 3, &SolveConfig::default()).unwrap();
    let model = AdaptedModel::train(&pairs, 2, 10, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("adapted.json");
    model.save(&path).unwrap();
    let back = AdaptedModel::load(&path).unwrap();
    assert_eq!(back.network, model.network);
    let hist: Vec<LoadVector> = (0..3).map(|i| LoadVector(vec![0.1 * i as f64, 0.3])).collect();
    let slots = [4, 5, 6];
    let input = ono_core::adapted::ForecastInput {
        history: &hist,
        t: 6,
        next_slots: &slots,
    };
    use ono_core::adapted::LoadForecaster;
    assert_eq!(model.forecast(&input).unwrap(), back.forecast(&input).unwrap());
    assert_eq!(back.network.input_dim, 4);
    assert_eq!(back.network.output_dim, 2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn expansion_is_deterministic(seed in 0u64..10_000, loads in prop::collection::vec(0.0f64..1.2, 3)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, 15, 3, 0.5);
        let cfg = ExpansionConfig::default();
        let a = output_expand(&LoadVector(loads.clone()), &inst.rates, &cfg, None, 1.0).unwrap();
        let b = output_expand(&LoadVector(loads), &inst.rates, &cfg, None, 1.0).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn fixed_point_residual_never_increases(seed in 0u64..10_000, damping in 0.1f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let inst = random_instance(&mut rng, 30, 4, 0.6);
        let cfg = ExpansionConfig { mode: ExpansionMode::FixedPoint, damping, max_fp_iters: 20 };
        let start = LoadVector(vec![0.5; 4]);
        let e = output_expand(&start, &inst.rates, &cfg, Some(&inst.frame()), 1.0).unwrap();
        prop_assert!(!e.residuals.is_empty());
        for w in e.residuals.windows(2) {
            prop_assert!(w[1] < w[0]);
        }
    }
}
