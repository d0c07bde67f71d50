use ono_core::model::{TrafficFrame, TrafficTrace};
use ono_core::predictors::{evaluate_predictor, fit_predictor, FittedPredictor, LstmPredictorConfig, PredictorKind};
use ono_core::traffic::{generate_synthetic, SyntheticConfig};
use ono_core::{OnoError, TrainSettings};
use proptest::prelude::*;

fn trace_from(rows: &[Vec<f64>], season: usize) -> TrafficTrace {
    let frames = rows
        .iter()
        .enumerate()
        .map(|(t, d)| TrafficFrame::new(t, d.clone()).unwrap())
        .collect();
    TrafficTrace::new(600.0, season, frames).unwrap()
}

fn tiny_lstm() -> PredictorKind {
    PredictorKind::Lstm(LstmPredictorConfig {
        window: 3,
        hidden: vec![4],
        ref_weeks: 2,
        max_samples: 300,
        validation_stride: 1,
        train: TrainSettings {
            max_epochs: 40,
            patience: 40,
            batch_size: 16,
            learning_rate: 5e-3,
            ..TrainSettings::default()
        },
    })
}

fn all_kinds() -> Vec<PredictorKind> {
    vec![
        PredictorKind::sample_mean(),
        PredictorKind::PreviousValue,
        PredictorKind::seasonal_ar(),
        tiny_lstm(),
        PredictorKind::Oracle,
    ]
}

#[test]
fn constant_series_is_predicted_by_every_kind() {
    let trace = trace_from(&vec![vec![2.5, 0.7]; 48], 8);
    for kind in all_kinds() {
        let f = fit_predictor(&kind, &trace).unwrap();
        let p = f.predict(&trace, 40).unwrap();
        for (x, c) in [2.5, 0.7].iter().enumerate() {
            let tol = if matches!(kind, PredictorKind::Lstm(_)) { 0.05 * c } else { 1e-12 };
            assert!((p.mean[x] - c).abs() <= tol, "{}: {} vs {c}", kind.name(), p.mean[x]);
        }
        if matches!(kind, PredictorKind::SampleMean { .. } | PredictorKind::Oracle) {
            assert_eq!(p.std, vec![0.0, 0.0]);
        }
    }
}

#[test]
fn noiseless_periodic_series_is_exact_after_two_seasons() {
    let rows: Vec<Vec<f64>> = (0..40).map(|t| vec![[1.0, 3.0, 2.0, 5.0, 4.0][t % 5], 1.0 + (t % 5) as f64]).collect();
    let trace = trace_from(&rows, 5);
    for kind in [PredictorKind::sample_mean(), PredictorKind::seasonal_ar()] {
        let f = fit_predictor(&kind, &trace).unwrap();
        let e = evaluate_predictor(&f, &trace, 10..40).unwrap();
        assert_eq!(e.mse, 0.0, "{}", kind.name());
    }
}

#[test]
fn sample_mean_of_one_two_three() {
    let rows: Vec<Vec<f64>> = (0..7).map(|t| vec![[1.0, 9.0, 2.0, 9.0, 3.0, 9.0, 0.0][t]]).collect();
    let trace = trace_from(&rows, 2);
    let f = fit_predictor(&PredictorKind::sample_mean(), &trace).unwrap();
    let p = f.predict(&trace, 6).unwrap();
    assert_eq!(p.mean, vec![2.0]);
    assert_eq!(p.std, vec![1.0]);
}

#[test]
fn sample_mean_needs_two_seasons() {
    let trace = trace_from(&vec![vec![1.0]; 10], 4);
    let f = fit_predictor(&PredictorKind::sample_mean(), &trace).unwrap();
    assert!(matches!(f.predict(&trace, 7), Err(OnoError::InsufficientHistory(_))));
    assert!(f.predict(&trace, 8).is_ok());
    let short = trace_from(&vec![vec![1.0]; 6], 4);
    assert!(matches!(
        fit_predictor(&PredictorKind::seasonal_ar(), &short),
        Err(OnoError::InsufficientHistory(_))
    ));
}

#[test]
fn previous_value_on_alternating_series() {
    let (a, b) = (3.0, 1.25);
    let rows: Vec<Vec<f64>> = (0..20).map(|t| vec![if t % 2 == 0 { a } else { b }]).collect();
    let trace = trace_from(&rows, 4);
    let f = fit_predictor(&PredictorKind::PreviousValue, &trace).unwrap();
    let e = evaluate_predictor(&f, &trace, 1..20).unwrap();
    assert!((e.mse - (a - b) * (a - b)).abs() < 1e-12);
    assert!((e.mean_std[0] - (a - b)).abs() < 1e-12);
}

fn noisy_trace() -> TrafficTrace {
    let cfg = SyntheticConfig {
        grid_side: 4,
        num_bs: 4,
        weeks: 3,
        slot_duration_s: 3600.0,
        noise_cv: 0.2,
        ..SyntheticConfig::default()
    };
    generate_synthetic(&cfg).unwrap().0
}

#[test]
fn seasonal_ar_beats_previous_value_on_noisy_trace() {
    let trace = noisy_trace();
    let train = TrafficTrace::new(trace.slot_duration_s, trace.season_length_slots, trace.frames[..336].to_vec()).unwrap();
    let sar = fit_predictor(&PredictorKind::seasonal_ar(), &train).unwrap();
    let pv = fit_predictor(&PredictorKind::PreviousValue, &train).unwrap();
    let range = 336..trace.len();
    let e_sar = evaluate_predictor(&sar, &trace, range.clone()).unwrap();
    let e_pv = evaluate_predictor(&pv, &trace, range).unwrap();
    assert!(e_sar.mse < e_pv.mse, "SAR {} vs PV {}", e_sar.mse, e_pv.mse);
}

#[test]
fn oracle_has_zero_error() {
    let trace = noisy_trace();
    let f = fit_predictor(&PredictorKind::Oracle, &trace).unwrap();
    let e = evaluate_predictor(&f, &trace, 0..trace.len()).unwrap();
    assert_eq!(e.mse, 0.0);
}

#[test]
fn fitted_state_round_trips_through_json() {
    let trace = noisy_trace();
    let dir = tempfile::tempdir().unwrap();
    for kind in all_kinds() {
        let f = fit_predictor(&kind, &trace).unwrap();
        let path = dir.path().join(format!("{}.json", kind.name()));
        f.save(&path).unwrap();
        let back = FittedPredictor::load(&path).unwrap();
        let t = trace.len() - 1;
        assert_eq!(f.predict(&trace, t).unwrap(), back.predict(&trace, t).unwrap(), "{}", kind.name());
    }
    let mut v: serde_json::Value = serde_json::from_str(&fit_predictor(&PredictorKind::PreviousValue, &trace).unwrap().to_json().unwrap()).unwrap();
    v["version"] = serde_json::json!(99);
    assert!(FittedPredictor::from_json(&v.to_string()).is_err());
}

#[test]
fn forecasts_ignore_the_present_and_future() {
    let trace = noisy_trace();
    let t = 400;
    let mut perturbed = trace.clone();
    for f in &mut perturbed.frames[t..] {
        f.demand.iter_mut().for_each(|d| *d = *d * 5.0 + 1.0);
    }
    for kind in all_kinds() {
        let f = fit_predictor(&kind, &trace).unwrap();
        let same = f.predict(&trace, t).unwrap() == f.predict(&perturbed, t).unwrap();
        assert_eq!(same, !matches!(kind, PredictorKind::Oracle), "{}", kind.name());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn forecasts_are_non_negative(rows in prop::collection::vec(prop::collection::vec(0.0f64..10.0, 2), 30..40)) {
        let trace = trace_from(&rows, 6);
        for kind in [PredictorKind::sample_mean(), PredictorKind::PreviousValue, PredictorKind::seasonal_ar()] {
            let f = fit_predictor(&kind, &trace).unwrap();
            for t in f.min_history().max(12)..trace.len() {
                let p = f.predict(&trace, t).unwrap();
                prop_assert!(p.mean.iter().chain(&p.std).all(|v| v.is_finite() && *v >= 0.0));
            }
        }
    }
}
