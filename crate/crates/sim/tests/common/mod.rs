#![allow(dead_code)]

use ono_sim::ScenarioConfig;

/// 4x4 grid, two base stations, hourly slots, two training weeks and one
/// test week. Small enough to run every technique in seconds.
pub const SMALL: &str = r#"
name = "small"
seed = 7

[trace]
source = "synthetic"
grid_side = 4
num_bs = 2
weeks = 3
slot_duration_s = 3600.0
base_demand = 40.0
noise_cv = 0.2

[split]
train_weeks = 2

[[technique]]
kind = "oracle"

[[technique]]
kind = "uniform"

[[technique]]
kind = "robust"
predictor = { kind = "sample_mean" }

[[technique]]
kind = "robust"
predictor = { kind = "seasonal_ar" }

[[technique]]
kind = "robust"
predictor = { kind = "lstm", window = 6, hidden = [4], ref_weeks = 1, max_samples = 300, train = { max_epochs = 3 } }

[[technique]]
kind = "omd"
omd = { eta0 = 20.0 }

[[technique]]
kind = "adapted_ai"
adapted = { window = 6, hidden = [4], train = { max_epochs = 3 } }
"#;

pub fn small() -> ScenarioConfig {
    let cfg = ScenarioConfig::from_toml(SMALL).unwrap();
    cfg.validate().unwrap();
    cfg
}
