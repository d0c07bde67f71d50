//! The simulation loop.

use std::collections::BTreeMap;
use std::fs;
use std::ops::Range;
use std::path::Path;
use std::time::Instant;

use ono_core::adapted::{run_adapted_ai, training_pairs, AdaptedConfig, AdaptedModel, ReducedLoads};
use ono_core::metrics::{emit_report, ReportOptions, SlotRecord, Summary};
use ono_core::model::{LoadVector, SteeringPolicy, TrafficTrace};
use ono_core::omd::run_omd;
use ono_core::predictors::{fit_predictor, FittedPredictor, PredictorKind};
use ono_core::robust::{solve_robust, RobustConfig};
use ono_core::solver::{solve_oracle_range, SolveResult};
use ono_core::traffic::split_trace;
use ono_core::OnoError;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ScenarioConfig, TechniqueSpec};
use crate::data::{load_inputs, Inputs};
use crate::seeds::Seeds;
use crate::{Result, SimError};

/// A slot where a technique failed and the uniform policy was played.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Incident {
    pub technique: String,
    pub slot: usize,
    pub message: String,
}

/// What training produced for one technique.
pub enum Trained {
    Oracle,
    Uniform,
    Robust {
        predictor: FittedPredictor,
        config: RobustConfig,
        cadence: usize,
    },
    Omd(TechniqueSpec),
    Adapted {
        model: AdaptedModel,
        config: AdaptedConfig,
        bootstrap: FittedPredictor,
        bootstrap_config: RobustConfig,
    },
}

pub struct TrainedTechnique {
    pub name: String,
    pub trained: std::result::Result<Trained, String>,
}

impl TrainedTechnique {
    /// JSON of the fitted predictor or model, if the technique has one.
    pub fn model_json(&self) -> Option<Result<String>> {
        match &self.trained {
            Ok(Trained::Robust { predictor, .. }) => Some(predictor.to_json().map_err(SimError::from)),
            Ok(Trained::Adapted { model, .. }) => Some(model.to_json().map_err(SimError::from)),
            _ => None,
        }
    }
}

struct Played {
    policies: Vec<Option<SteeringPolicy>>,
    /// Slots played by a bootstrap policy.
    bootstrap: Vec<bool>,
    wall: Vec<f64>,
    incidents: Vec<Incident>,
}

impl Played {
    fn failed(name: &str, range: Range<usize>, message: &str) -> Self {
        Played {
            policies: vec![None; range.len()],
            bootstrap: vec![false; range.len()],
            wall: vec![0.0; range.len()],
            incidents: range
                .map(|slot| Incident {
                    technique: name.to_string(),
                    slot,
                    message: message.to_string(),
                })
                .collect(),
        }
    }
}

pub struct ScenarioRun {
    pub records: Vec<SlotRecord>,
    pub summary: Summary,
    /// Oracle solutions of the test slots.
    pub oracle: Vec<SolveResult>,
    pub test_range: Range<usize>,
    pub incidents: Vec<Incident>,
    pub seeds: Seeds,
    pub trace_digest: String,
    /// Fitted predictor or model JSON per technique name.
    pub models: BTreeMap<String, String>,
}

fn with_seed(kind: &PredictorKind, seed: u64) -> PredictorKind {
    match kind {
        PredictorKind::Lstm(c) => {
            let mut c = c.clone();
            c.train.rng_seed = seed;
            PredictorKind::Lstm(c)
        }
        other => other.clone(),
    }
}

fn oracle_reduced(
    trace: &TrafficTrace,
    cfg: &ScenarioConfig,
    inputs: &Inputs,
    range: Range<usize>,
) -> Result<Vec<SolveResult>> {
    Ok(solve_oracle_range(trace, &inputs.rates, &cfg.oracle, range, trace.slots_per_day())?)
}

/// Fits every technique on the training split only. `train_oracle` holds
/// the oracle solutions of the training slots, needed by the adapted-AI
/// technique.
pub fn train_techniques(
    cfg: &ScenarioConfig,
    inputs: &Inputs,
    train_oracle: Option<&[SolveResult]>,
    seeds: &mut Seeds,
) -> Result<Vec<TrainedTechnique>> {
    let (train, _) = split_trace(&inputs.trace, inputs.train_len)?;
    let labels: Vec<(String, u64)> = cfg
        .techniques
        .iter()
        .map(|t| {
            let n = t.name();
            let s = seeds.component(&n);
            (n, s)
        })
        .collect();
    let out = cfg
        .techniques
        .par_iter()
        .zip(labels.par_iter())
        .map(|(spec, (name, seed))| {
            let trained = train_one(spec, &train, inputs, train_oracle, *seed);
            if let Err(e) = &trained {
                log::error!("{name}: training failed: {e}");
            }
            TrainedTechnique {
                name: name.clone(),
                trained: trained.map_err(|e| e.to_string()),
            }
        })
        .collect();
    Ok(out)
}

fn train_one(
    spec: &TechniqueSpec,
    train: &TrafficTrace,
    inputs: &Inputs,
    train_oracle: Option<&[SolveResult]>,
    seed: u64,
) -> std::result::Result<Trained, OnoError> {
    Ok(match spec {
        TechniqueSpec::Oracle => Trained::Oracle,
        TechniqueSpec::Uniform => Trained::Uniform,
        TechniqueSpec::Omd { .. } => Trained::Omd(spec.clone()),
        TechniqueSpec::Robust {
            predictor,
            robust,
            cadence,
            ..
        } => Trained::Robust {
            predictor: fit_predictor(&with_seed(predictor, seed), train)?,
            config: robust.clone(),
            cadence: *cadence,
        },
        TechniqueSpec::AdaptedAi {
            adapted, bootstrap, ..
        } => {
            let solved = train_oracle.ok_or_else(|| OnoError::InvalidValue("missing training oracle loads".into()))?;
            let loads: Vec<LoadVector> = solved.iter().map(|r| r.loads.clone()).collect();
            let abs: Vec<usize> = (0..loads.len()).map(|t| train.absolute_slot(t)).collect();
            let pairs = training_pairs(&loads, &abs, train.season_length_slots, adapted.window)?;
            let mut config = adapted.clone();
            config.train.rng_seed = seed;
            let model = AdaptedModel::train(&pairs, inputs.rates.num_bs(), train.season_length_slots, &config)?;
            Trained::Adapted {
                model,
                config,
                bootstrap: fit_predictor(&PredictorKind::sample_mean(), train)?,
                bootstrap_config: bootstrap.clone(),
            }
        }
    })
}

fn play(
    name: &str,
    trained: &Trained,
    inputs: &Inputs,
    oracle_all: &[SolveResult],
    test_oracle: &[SolveResult],
) -> Played {
    let range = inputs.test_range();
    let trace = &inputs.trace;
    let rates = &inputs.rates;
    let slot_s = trace.slot_duration_s;
    let n = range.len();
    let mut played = Played {
        policies: Vec::with_capacity(n),
        bootstrap: vec![false; n],
        wall: vec![0.0; n],
        incidents: Vec::new(),
    };
    match trained {
        Trained::Oracle => {
            played.policies = test_oracle.iter().map(|r| Some(r.policy.clone())).collect();
        }
        Trained::Uniform => {
            played.policies = vec![Some(SteeringPolicy::uniform(rates.num_locations(), rates.num_bs())); n];
        }
        Trained::Robust {
            predictor,
            config,
            cadence,
        } => {
            let mut last: Option<SteeringPolicy> = None;
            for (i, t) in range.clone().enumerate() {
                let started = Instant::now();
                if i % cadence != 0 {
                    played.policies.push(last.clone());
                    continue;
                }
                let step = predictor
                    .predict(trace, t)
                    .and_then(|p| solve_robust(&p, rates, slot_s, config, last.as_ref()));
                match step {
                    Ok(r) => {
                        if !r.feasible {
                            log::debug!("{name}: slot {t} quantile problem infeasible, min-max fallback");
                        }
                        last = Some(r.policy);
                    }
                    Err(e) => {
                        played.incidents.push(Incident {
                            technique: name.to_string(),
                            slot: t,
                            message: e.to_string(),
                        });
                        last = None;
                    }
                }
                played.policies.push(last.clone());
                played.wall[i] = started.elapsed().as_secs_f64();
            }
        }
        Trained::Omd(TechniqueSpec::Omd { omd, warm_up, .. }) => {
            let start = if *warm_up { 0 } else { range.start };
            let started = Instant::now();
            match run_omd(trace, rates, omd, start..range.end, None) {
                Ok(run) => {
                    let per_slot = started.elapsed().as_secs_f64() / (range.end - start) as f64;
                    played.policies = run.policies.into_iter().skip(range.start - start).map(Some).collect();
                    played.wall = vec![per_slot; n];
                }
                Err(e) => return Played::failed(name, range, &e.to_string()),
            }
        }
        Trained::Omd(_) => unreachable!("omd entries carry their spec"),
        Trained::Adapted {
            model,
            config,
            bootstrap,
            bootstrap_config,
        } => {
            let reduced: Vec<ReducedLoads> = oracle_all.iter().map(ReducedLoads::from).collect();
            let mut boot = |t: usize| -> ono_core::Result<SteeringPolicy> {
                let p = bootstrap.predict(trace, t)?;
                Ok(solve_robust(&p, rates, slot_s, bootstrap_config, None)?.policy)
            };
            let started = Instant::now();
            match run_adapted_ai(trace, rates, model, &reduced, range.clone(), config, &mut boot) {
                Ok(run) => {
                    let per_slot = started.elapsed().as_secs_f64() / n as f64;
                    played.policies = run.policies.into_iter().map(Some).collect();
                    played.bootstrap = run.bootstrap;
                    played.wall = vec![per_slot; n];
                    if run.clamped > 0 {
                        log::info!("{name}: {} forecast loads clamped during expansion", run.clamped);
                    }
                }
                Err(e) => return Played::failed(name, range, &e.to_string()),
            }
        }
    }
    played
}

/// Runs a validated scenario on prepared inputs without writing files.
pub fn run_with_inputs(cfg: &ScenarioConfig, inputs: &Inputs, seeds: &mut Seeds) -> Result<ScenarioRun> {
    let range = inputs.test_range();
    let needs_train_oracle = cfg.techniques.iter().any(|t| matches!(t, TechniqueSpec::AdaptedAi { .. }));
    let started = Instant::now();
    let train_oracle = if needs_train_oracle {
        oracle_reduced(&inputs.trace, cfg, inputs, 0..inputs.train_len)?
    } else {
        Vec::new()
    };
    let test_oracle = oracle_reduced(&inputs.trace, cfg, inputs, range.clone())?;
    log::info!("oracle solved in {:.1} s", started.elapsed().as_secs_f64());
    let oracle_wall = started.elapsed().as_secs_f64() / (train_oracle.len() + test_oracle.len()) as f64;

    let started = Instant::now();
    let trained = train_techniques(cfg, inputs, needs_train_oracle.then_some(train_oracle.as_slice()), seeds)?;
    log::info!("training done in {:.1} s", started.elapsed().as_secs_f64());
    let mut models = BTreeMap::new();
    for t in &trained {
        if let Some(json) = t.model_json() {
            models.insert(t.name.clone(), json?);
        }
    }

    // the adapted technique reads past optimal loads from the full sequence
    let oracle_all: Vec<SolveResult> = if needs_train_oracle {
        train_oracle.iter().chain(&test_oracle).cloned().collect()
    } else {
        Vec::new()
    };
    let started = Instant::now();
    let played: Vec<Played> = trained
        .par_iter()
        .map(|t| match &t.trained {
            Ok(tr) => {
                let p = play(&t.name, tr, inputs, &oracle_all, &test_oracle);
                log::info!("{}: played {} slots", t.name, range.len());
                p
            }
            Err(e) => Played::failed(&t.name, range.clone(), &format!("training failed: {e}")),
        })
        .collect();
    log::info!("techniques played in {:.1} s", started.elapsed().as_secs_f64());

    // the oracle is always reported, first unless listed elsewhere
    let mut order: Vec<(String, Option<&Played>)> =
        trained.iter().zip(&played).map(|(t, p)| (t.name.clone(), Some(p))).collect();
    let oracle_listed = cfg.techniques.iter().any(|t| matches!(t, TechniqueSpec::Oracle));
    if !oracle_listed {
        order.insert(0, ("oracle".to_string(), None));
    }

    let trace = &inputs.trace;
    let rates = &inputs.rates;
    let (k, x) = (rates.num_bs(), rates.num_locations());
    let uniform = SteeringPolicy::uniform(x, k);
    let mut records = Vec::with_capacity(range.len() * order.len());
    let mut incidents = Vec::new();
    for (_, p) in &order {
        if let Some(p) = p {
            for inc in &p.incidents {
                log::warn!("{}: slot {}: {}", inc.technique, inc.slot, inc.message);
            }
            incidents.extend(p.incidents.iter().cloned());
        }
    }
    for (i, t) in range.clone().enumerate() {
        let frame = &trace.frames[t];
        for (name, p) in &order {
            let (policy, fallback, wall) = match p {
                None => (&test_oracle[i].policy, false, oracle_wall),
                Some(p) => match &p.policies[i] {
                    Some(pol) => (pol, p.bootstrap[i], p.wall[i]),
                    None => (&uniform, true, p.wall[i]),
                },
            };
            let mut r = SlotRecord::realize(t, name, frame, policy, rates, trace.slot_duration_s, cfg.metrics.base_service_ms)?;
            r.bootstrap = fallback;
            if cfg.metrics.record_wall_time {
                r = r.with_wall_time(wall);
            }
            records.push(r);
        }
    }

    let digest = inputs.digest();
    let opts = report_options(&digest, seeds, trace.slot_duration_s, cfg)?;
    let summary = ono_core::metrics::summarize(&records, &opts);
    Ok(ScenarioRun {
        records,
        summary,
        oracle: test_oracle,
        test_range: range,
        incidents,
        seeds: seeds.clone(),
        trace_digest: digest,
        models,
    })
}

fn report_options(digest: &str, seeds: &Seeds, slot_duration_s: f64, cfg: &ScenarioConfig) -> Result<ReportOptions> {
    Ok(ReportOptions {
        slot_duration_s,
        window: cfg.metrics.window,
        per_bs_mse: cfg.metrics.per_bs_mse,
        oracle: "oracle".into(),
        trace_digest: digest.to_string(),
        seeds: serde_json::to_value(seeds).map_err(OnoError::from)?,
        config: serde_json::to_value(cfg).map_err(OnoError::from)?,
    })
}

/// Writes trained models to `dir/<technique>.json`.
pub fn write_models(models: &BTreeMap<String, String>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| OnoError::io(dir, e))?;
    for (name, json) in models {
        let p = dir.join(format!("{name}.json"));
        fs::write(&p, json).map_err(|e| OnoError::io(&p, e))?;
    }
    Ok(())
}

fn write_incidents(incidents: &[Incident], path: &Path) -> Result<()> {
    let mut text = String::from("technique,slot,message\n");
    for i in incidents {
        text.push_str(&format!("{},{},\"{}\"\n", i.technique, i.slot, i.message.replace('"', "'")));
    }
    fs::write(path, text).map_err(|e| OnoError::io(path, e).into())
}

/// Validates, simulates and writes `results.csv`, `summary.json`,
/// `demand.csv`, `incidents.csv` and `models/` into the output directory.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioRun> {
    cfg.validate()?;
    let mut seeds = Seeds::new(cfg.seed);
    let inputs = load_inputs(cfg, seeds.trace)?;
    let run = run_with_inputs(cfg, &inputs, &mut seeds)?;
    let out = &cfg.out_dir;
    emit_report(
        &run.records,
        &report_options(&run.trace_digest, &run.seeds, inputs.trace.slot_duration_s, cfg)?,
        out,
    )?;
    write_models(&run.models, &out.join("models"))?;
    write_incidents(&run.incidents, &out.join("incidents.csv"))?;
    let total = run.test_range.len() * cfg.techniques.len();
    let limit = (cfg.max_incident_fraction * total as f64).floor() as usize;
    if run.incidents.len() > limit {
        return Err(SimError::Incidents {
            count: run.incidents.len(),
            total,
            limit,
        });
    }
    Ok(run)
}
