use ono_core::metrics::{
    average_cost, daytime_average_delay, emit_report, read_results_csv, read_summary, regret_curve, DaytimeWindow,
    ReportOptions, SlotRecord,
};
use ono_core::model::{RateMatrix, SteeringPolicy, TrafficFrame};
use ono_core::omd::{run_omd, OmdConfig};
use ono_core::solver::{solve_oracle, SolveConfig};
use ono_testkit::random_instance;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn options() -> ReportOptions {
    ReportOptions {
        slot_duration_s: 600.0,
        window: DaytimeWindow::default(),
        per_bs_mse: false,
        oracle: "oracle".into(),
        trace_digest: "abc".into(),
        seeds: serde_json::json!({"global": 42}),
        config: serde_json::json!({"name": "test"}),
    }
}

fn schema() -> jsonschema::Validator {
    let text = include_str!("../schema/summary.schema.json");
    jsonschema::validator_for(&serde_json::from_str(text).unwrap()).unwrap()
}

fn sample_records() -> Vec<SlotRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let inst = random_instance(&mut rng, 10, 3, 0.8);
    let mut out = Vec::new();
    for slot in 0..300 {
        let scale = rng.random_range(0.5..1.4);
        let frame = TrafficFrame::new(slot, inst.demand.iter().map(|d| d * scale * 600.0).collect()).unwrap();
        let o = solve_oracle(&frame, &inst.rates, 600.0, &SolveConfig::default(), None).unwrap();
        out.push(SlotRecord::realize(slot, "oracle", &frame, &o.policy, &inst.rates, 600.0, 8.0).unwrap());
        let u = SteeringPolicy::uniform(10, 3);
        out.push(
            SlotRecord::realize(slot, "uniform", &frame, &u, &inst.rates, 600.0, 8.0)
                .unwrap()
                .with_wall_time(1.234567e-4),
        );
    }
    out
}

#[test]
fn csv_round_trip_is_bit_exact() {
    let recs = sample_records();
    assert!(recs.iter().any(|r| r.cost.is_infinite()));
    let dir = tempfile::tempdir().unwrap();
    emit_report(&recs, &options(), dir.path()).unwrap();
    let rows = read_results_csv(&dir.path().join("results.csv")).unwrap();
    assert_eq!(rows.len(), recs.len());
    for (r, row) in recs.iter().zip(&rows) {
        assert_eq!(row.slot, r.slot);
        assert_eq!(row.technique, r.technique);
        assert_eq!(row.cost.to_bits(), r.cost.to_bits());
        assert_eq!(row.avg_delay_ms.to_bits(), r.avg_delay_ms.to_bits());
        assert_eq!(row.max_load.to_bits(), r.max_load.to_bits());
        assert_eq!(row.rejected_frac.to_bits(), r.rejected_frac.to_bits());
        assert_eq!(row.wall_time_s.to_bits(), r.wall_time_s.to_bits());
        assert_eq!(row.policy_digest, r.policy_digest);
    }
    let header = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert!(header.starts_with("slot,technique,cost,avg_delay_ms,max_load,rejected_frac,wall_time_s,policy_digest\n"));
}

#[test]
fn summary_validates_and_accounts_for_exclusions() {
    let recs = sample_records();
    let dir = tempfile::tempdir().unwrap();
    let summary = emit_report(&recs, &options(), dir.path()).unwrap();
    let text = std::fs::read_to_string(dir.path().join("summary.json")).unwrap();
    let value: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert!(schema().is_valid(&value), "{:?}", schema().iter_errors(&value).map(|e| e.to_string()).collect::<Vec<_>>());
    assert_eq!(read_summary(&dir.path().join("summary.json")).unwrap(), summary);
    let w = DaytimeWindow::default();
    for t in &summary.techniques {
        let c = &t.overall.average_cost;
        assert_eq!(c.included + c.excluded, t.overall.slots);
        let in_window = recs
            .iter()
            .filter(|r| r.technique == t.technique && w.contains(r.slot, 600.0))
            .count();
        let d = &t.overall.daytime_delay_ms;
        assert_eq!(d.included + d.excluded, in_window);
        assert_eq!(t.days.iter().map(|d| d.kpis.slots).sum::<usize>(), t.overall.slots);
    }
    let oracle = &summary.techniques[0];
    assert_eq!(oracle.technique, "oracle");
    assert_eq!(oracle.overall.rejected_percent, 0.0);
    assert_eq!(oracle.overall.delay_mse.unwrap().value, Some(0.0));
    let o: Vec<&SlotRecord> = recs.iter().filter(|r| r.technique == "oracle").collect();
    let u: Vec<&SlotRecord> = recs.iter().filter(|r| r.technique == "uniform").collect();
    assert!(regret_curve(u.iter().copied(), o.iter().copied()).windows(2).all(|w| w[1] >= w[0] - 1e-6));
    assert!(summary.techniques[1].overall.rejected_percent > 0.0);
}

#[test]
fn empty_report_is_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let summary = emit_report(&[], &options(), dir.path()).unwrap();
    assert!(summary.techniques.is_empty());
    let csv = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
    let value: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert!(schema().is_valid(&value));
}

#[test]
fn omd_regret_curve_flattens_on_iid_trace() {
    let mut rng = ChaCha8Rng::seed_from_u64(52);
    let inst = random_instance(&mut rng, 10, 3, 0.5);
    let frames: Vec<TrafficFrame> = (0..2000)
        .map(|t| TrafficFrame::new(t, inst.demand.iter().map(|d| d * rng.random_range(0.5..1.5)).collect()).unwrap())
        .collect();
    let trace = ono_core::model::TrafficTrace::new(1.0, 2000, frames).unwrap();
    let run = run_omd(&trace, &inst.rates, &OmdConfig { eta0: 20.0, ..OmdConfig::default() }, 0..2000, None).unwrap();
    let mut omd = Vec::new();
    let mut oracle = Vec::new();
    for t in 0..2000 {
        let f = &trace.frames[t];
        omd.push(SlotRecord::realize(t, "omd", f, &run.policies[t], &inst.rates, 1.0, 8.0).unwrap());
        let o = solve_oracle(f, &inst.rates, 1.0, &SolveConfig::default(), None).unwrap();
        oracle.push(SlotRecord::realize(t, "oracle", f, &o.policy, &inst.rates, 1.0, 8.0).unwrap());
    }
    let curve = regret_curve(&omd, &oracle);
    assert_eq!(curve.len(), 2000);
    // per-slot excess shrinks: compare early and late increments
    let early = curve[199] / 200.0;
    let late = (curve[1999] - curve[1799]) / 200.0;
    assert!(late < early, "early {early}, late {late}");
    assert!(curve.windows(2).all(|w| w[1] >= w[0] - 1e-6));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn reducers_are_permutation_invariant(costs in prop::collection::vec(prop_oneof![0.0f64..5.0, Just(f64::INFINITY)], 1..40), seed in 0u64..100) {
        let recs: Vec<SlotRecord> = costs.iter().enumerate().map(|(i, c)| {
            let frame = TrafficFrame::new(i, vec![0.0]).unwrap();
            let rates = RateMatrix::uniform(1, 1, 1.0).unwrap();
            let mut r = SlotRecord::realize(40 + i, "m", &frame, &SteeringPolicy::uniform(1, 1), &rates, 600.0, 8.0).unwrap();
            r.cost = *c;
            r.avg_delay_ms = *c;
            r
        }).collect();
        let mut shuffled = recs.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let a = average_cost(&recs, true);
        let b = average_cost(&shuffled, true);
        prop_assert_eq!(a.included, b.included);
        let same = match (a.value, b.value) {
            (Some(x), Some(y)) => (x - y).abs() <= 1e-12 * x.abs().max(1.0),
            (None, None) => true,
            _ => false,
        };
        prop_assert!(same);
        let w = DaytimeWindow::default();
        let da = daytime_average_delay(&recs, &w, 600.0);
        let db = daytime_average_delay(&shuffled, &w, 600.0);
        prop_assert_eq!(da.excluded, db.excluded);
        prop_assert_eq!(da.included + da.excluded, recs.iter().filter(|r| w.contains(r.slot, 600.0)).count());
    }
}
