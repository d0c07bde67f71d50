//! Scenario configuration, read from TOML.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use ono_core::adapted::AdaptedConfig;
use ono_core::metrics::DaytimeWindow;
use ono_core::omd::OmdConfig;
use ono_core::predictors::PredictorKind;
use ono_core::robust::RobustConfig;
use ono_core::solver::SolveConfig;
use ono_core::traffic::{IngestSchema, SyntheticConfig};
use serde::{Deserialize, Serialize};

use crate::SimError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_name")]
    pub name: String,
    /// Global seed; every random component derives its own seed from it.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub trace: TraceSource,
    #[serde(default)]
    pub split: Split,
    #[serde(default)]
    pub oracle: SolveConfig,
    #[serde(rename = "technique")]
    pub techniques: Vec<TechniqueSpec>,
    #[serde(default)]
    pub metrics: MetricsOptions,
    /// Share of (technique, slot) pairs allowed to fall back to the uniform
    /// policy before the run reports failure.
    #[serde(default = "default_incident_fraction")]
    pub max_incident_fraction: f64,
}

fn default_name() -> String {
    "scenario".into()
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_incident_fraction() -> f64 {
    0.01
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum TraceSource {
    /// Generated in memory. `rng_seed` is replaced by the derived trace seed.
    Synthetic(SyntheticConfig),
    /// A trace in the text format written by `ono generate`.
    File { path: PathBuf, rates: RatesSource },
    /// A long-format CSV (location, epoch ms, demand).
    Ingest {
        path: PathBuf,
        #[serde(default)]
        schema: IngestSchema,
        rates: RatesSource,
        /// Sum demand over square blocks of a grid before simulating.
        #[serde(default)]
        aggregate: Option<Aggregate>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RatesSource {
    /// CSV with header `location,bs0,bs1,...`; rows keyed by location id.
    Csv { path: PathBuf },
    /// Square grid of locations with path-loss rates. Location ids must be
    /// integers; the i-th smallest id is grid cell i (row-major).
    Pathloss {
        grid_side: usize,
        num_bs: usize,
        #[serde(default = "one")]
        rate_max: f64,
        #[serde(default = "two")]
        exponent: f64,
    },
}

fn one() -> f64 {
    1.0
}

fn two() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Aggregate {
    pub grid_side: usize,
    pub factor: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Split {
    /// Leading weeks used for training; the rest of the trace is the test span.
    pub train_weeks: usize,
}

impl Default for Split {
    fn default() -> Self {
        Split { train_weeks: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsOptions {
    pub window: DaytimeWindow,
    pub base_service_ms: f64,
    pub per_bs_mse: bool,
    /// Record per-slot wall time. Off by default since timings differ
    /// between runs.
    pub record_wall_time: bool,
}

impl Default for MetricsOptions {
    fn default() -> Self {
        MetricsOptions {
            window: DaytimeWindow::default(),
            base_service_ms: 1.0,
            per_bs_mse: false,
            record_wall_time: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TechniqueSpec {
    /// Per-slot optimum on the true demand. Always simulated; listing it
    /// only fixes its position in the report.
    Oracle,
    Uniform,
    Robust {
        #[serde(default)]
        name: Option<String>,
        predictor: PredictorKind,
        #[serde(default)]
        robust: RobustConfig,
        /// Re-solve every `cadence` slots and hold the policy in between.
        #[serde(default = "one_usize")]
        cadence: usize,
    },
    Omd {
        #[serde(default)]
        name: Option<String>,
        #[serde(default)]
        omd: OmdConfig,
        /// Start learning at the first training slot instead of the first
        /// test slot.
        #[serde(default = "yes")]
        warm_up: bool,
    },
    AdaptedAi {
        #[serde(default)]
        name: Option<String>,
        #[serde(default)]
        adapted: AdaptedConfig,
        /// Robust settings of the sample-mean bootstrap policy.
        #[serde(default)]
        bootstrap: RobustConfig,
    },
}

fn one_usize() -> usize {
    1
}

fn yes() -> bool {
    true
}

impl TechniqueSpec {
    pub fn name(&self) -> String {
        match self {
            TechniqueSpec::Oracle => "oracle".into(),
            TechniqueSpec::Uniform => "uniform".into(),
            TechniqueSpec::Robust { name, predictor, .. } => {
                name.clone().unwrap_or_else(|| format!("robust_{}", predictor.name()))
            }
            TechniqueSpec::Omd { name, .. } => name.clone().unwrap_or_else(|| "omd".into()),
            TechniqueSpec::AdaptedAi { name, .. } => name.clone().unwrap_or_else(|| "adapted_ai".into()),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| SimError::Config(format!("{}: {e}", path.display())))?;
        // relative data paths are taken from the config file's directory
        if let Some(base) = path.parent() {
            cfg.rebase(base);
        }
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.trace {
            TraceSource::Synthetic(_) => {}
            TraceSource::File { path, rates } | TraceSource::Ingest { path, rates, .. } => {
                fix(path);
                if let RatesSource::Csv { path } = rates {
                    fix(path);
                }
            }
        }
    }

    /// Keeps only the named techniques, in config order.
    pub fn select(&mut self, names: &[String]) -> Result<(), SimError> {
        for n in names {
            if !self.techniques.iter().any(|t| &t.name() == n) {
                return Err(SimError::Config(format!("technique {n:?} is not in the configuration")));
            }
        }
        self.techniques.retain(|t| names.contains(&t.name()));
        Ok(())
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if self.techniques.is_empty() {
            return bad("at least one technique is required".into());
        }
        let mut seen = HashSet::new();
        for t in &self.techniques {
            if !seen.insert(t.name()) {
                return bad(format!("duplicate technique name {:?}", t.name()));
            }
            match t {
                TechniqueSpec::Robust { robust, cadence, .. } => {
                    robust.validate()?;
                    if *cadence == 0 {
                        return bad("robust cadence must be at least 1".into());
                    }
                }
                TechniqueSpec::Omd { omd, .. } => omd.validate()?,
                TechniqueSpec::AdaptedAi { adapted, bootstrap, .. } => {
                    adapted.validate()?;
                    bootstrap.validate()?;
                }
                TechniqueSpec::Oracle | TechniqueSpec::Uniform => {}
            }
        }
        if self.split.train_weeks == 0 {
            return bad("split.train_weeks must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.max_incident_fraction) {
            return bad("max_incident_fraction must lie in [0, 1]".into());
        }
        if !(self.metrics.base_service_ms > 0.0) {
            return bad("metrics.base_service_ms must be positive".into());
        }
        self.oracle.validate()?;
        match &self.trace {
            TraceSource::Synthetic(s) => {
                s.validate()?;
                if s.weeks <= self.split.train_weeks {
                    return bad(format!(
                        "trace has {} weeks, leaving no test span after {} training weeks",
                        s.weeks, self.split.train_weeks
                    ));
                }
                self.metrics.window.validate(s.slot_duration_s)?;
            }
            TraceSource::Ingest { schema, aggregate, .. } => {
                schema.validate()?;
                if let Some(a) = aggregate {
                    if a.factor == 0 || a.grid_side % a.factor != 0 {
                        return bad("aggregate.factor must divide aggregate.grid_side".into());
                    }
                }
                self.metrics.window.validate(schema.window_s)?;
            }
            TraceSource::File { .. } => {}
        }
        Ok(())
    }
}
