mod common;

use ono_sim::{ScenarioConfig, SimError, TechniqueSpec, TraceSource};

fn rejected(text: &str) -> SimError {
    match ScenarioConfig::from_toml(text).and_then(|c| c.validate()) {
        Ok(()) => panic!("accepted:\n{text}"),
        Err(e) => e,
    }
}

#[test]
fn small_scenario_parses_with_defaults() {
    let cfg = common::small();
    assert_eq!(cfg.split.train_weeks, 2);
    assert_eq!(cfg.metrics.base_service_ms, 1.0);
    assert_eq!(cfg.max_incident_fraction, 0.01);
    assert!(!cfg.metrics.record_wall_time);
    let names: Vec<String> = cfg.techniques.iter().map(TechniqueSpec::name).collect();
    assert_eq!(
        names,
        ["oracle", "uniform", "robust_sample_mean", "robust_seasonal_ar", "robust_lstm", "omd", "adapted_ai"]
    );
    assert!(matches!(cfg.trace, TraceSource::Synthetic(ref s) if s.grid_side == 4));
}

#[test]
fn shipped_scenarios_are_valid() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            ScenarioConfig::load(&path).unwrap().validate().unwrap();
            seen += 1;
        }
    }
    assert!(seen > 0);
}

#[test]
fn invalid_configs_map_to_exit_code_two() {
    let cases = [
        common::SMALL.replace("train_weeks = 2", "train_weeks = 3"),
        common::SMALL.replace("train_weeks = 2", "train_weeks = 0"),
        common::SMALL.replace("eta0 = 20.0", "eta0 = -1.0"),
        common::SMALL.replace("noise_cv = 0.2", "noise_cv = -0.2"),
        common::SMALL.replace("slot_duration_s = 3600.0", "slot_duration_s = 7000.0"),
        common::SMALL.replace("kind = \"uniform\"", "kind = \"sample_mean\""),
        common::SMALL.replace("seed = 7", "seed = 7\nunknown = 1"),
        format!("{}\n[[technique]]\nkind = \"oracle\"\n", common::SMALL),
        "name = \"x\"\n[trace]\nsource = \"synthetic\"\n".to_string(),
    ];
    for text in &cases {
        let e = rejected(text);
        assert_eq!(e.exit_code(), 2, "{e}");
    }
}

#[test]
fn robust_epsilon_outside_its_range_is_rejected() {
    let text = common::SMALL.replace(
        "predictor = { kind = \"sample_mean\" }",
        "predictor = { kind = \"sample_mean\" }\nrobust = { epsilon = 0.4 }",
    );
    assert!(matches!(rejected(&text), SimError::Config(_)));
}

#[test]
fn select_keeps_config_order_and_rejects_unknown_names() {
    let mut cfg = common::small();
    cfg.select(&["omd".into(), "oracle".into()]).unwrap();
    let names: Vec<String> = cfg.techniques.iter().map(TechniqueSpec::name).collect();
    assert_eq!(names, ["oracle", "omd"]);
    assert!(cfg.select(&["nope".into()]).is_err());
}

#[test]
fn relative_paths_resolve_against_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.toml");
    std::fs::write(
        &path,
        "[trace]\nsource = \"file\"\npath = \"trace.txt\"\nrates = { kind = \"csv\", path = \"rates.csv\" }\n\
         [[technique]]\nkind = \"oracle\"\n",
    )
    .unwrap();
    let cfg = ScenarioConfig::load(&path).unwrap();
    match cfg.trace {
        TraceSource::File { path, rates } => {
            assert_eq!(path, dir.path().join("trace.txt"));
            assert!(matches!(rates, ono_sim::config::RatesSource::Csv { path } if path == dir.path().join("rates.csv")));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn config_round_trips_through_toml() {
    let cfg = common::small();
    let text = toml::to_string(&cfg).unwrap();
    assert_eq!(ScenarioConfig::from_toml(&text).unwrap(), cfg);
}
