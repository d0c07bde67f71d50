//! Trace and rate loading for a scenario.

use std::collections::HashMap;
use std::path::Path;

use ono_core::model::{RateMatrix, TrafficFrame, TrafficTrace};
use ono_core::traffic::{
    generate_synthetic, grid_topology, ingest_csv, load_trace, pathloss_rates, spatial_aggregate, LocationIdMap,
};
use ono_core::OnoError;
use sha2::{Digest, Sha256};

use crate::config::{RatesSource, ScenarioConfig, TraceSource};
use crate::{Result, SimError};

#[derive(Debug, Clone)]
pub struct Inputs {
    pub trace: TrafficTrace,
    pub rates: RateMatrix,
    /// Slots `0..train_len` form the training split.
    pub train_len: usize,
}

impl Inputs {
    pub fn test_range(&self) -> std::ops::Range<usize> {
        self.train_len..self.trace.len()
    }

    pub fn digest(&self) -> String {
        trace_digest(&self.trace, &self.rates)
    }
}

/// SHA-256 over the slot layout, every demand and every rate, as hex.
pub fn trace_digest(trace: &TrafficTrace, rates: &RateMatrix) -> String {
    let mut h = Sha256::new();
    h.update(trace.slot_duration_s.to_bits().to_le_bytes());
    h.update((trace.season_length_slots as u64).to_le_bytes());
    h.update((trace.num_locations() as u64).to_le_bytes());
    for f in &trace.frames {
        for d in &f.demand {
            h.update(d.to_bits().to_le_bytes());
        }
    }
    h.update((rates.num_bs() as u64).to_le_bytes());
    for r in rates.as_slice() {
        h.update(r.to_bits().to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Builds the trace and rates named by the configuration. A synthetic trace
/// uses `trace_seed` in place of its configured seed.
pub fn load_inputs(cfg: &ScenarioConfig, trace_seed: u64) -> Result<Inputs> {
    let (trace, rates) = match &cfg.trace {
        TraceSource::Synthetic(s) => {
            let mut s = s.clone();
            s.rng_seed = trace_seed;
            let (trace, rates, _) = generate_synthetic(&s)?;
            (trace, rates)
        }
        TraceSource::File { path, rates } => {
            let trace = load_trace(path)?;
            let ids = LocationIdMap {
                external_ids: (0..trace.num_locations()).map(|x| x.to_string()).collect(),
            };
            attach_rates(trace, &ids, rates)?
        }
        TraceSource::Ingest {
            path,
            schema,
            rates,
            aggregate,
        } => {
            let (trace, ids) = ingest_csv(path, schema)?;
            let (trace, r) = attach_rates(trace, &ids, rates)?;
            match aggregate {
                Some(a) => {
                    let train = (cfg.split.train_weeks * trace.season_length_slots).min(trace.len());
                    spatial_aggregate(&trace, &r, a.grid_side, a.factor, train)?
                }
                None => (trace, r),
            }
        }
    };
    let train_len = cfg.split.train_weeks * trace.season_length_slots;
    if train_len >= trace.len() {
        return Err(SimError::Config(format!(
            "trace has {} slots, leaving no test span after {train_len} training slots",
            trace.len()
        )));
    }
    Ok(Inputs {
        trace,
        rates,
        train_len,
    })
}

/// Orders the trace's locations to match the rate source and returns both.
fn attach_rates(trace: TrafficTrace, ids: &LocationIdMap, source: &RatesSource) -> Result<(TrafficTrace, RateMatrix)> {
    match source {
        RatesSource::Csv { path } => {
            let (rate_ids, rates) = read_rates_csv(path)?;
            let row_of: HashMap<&str, usize> = rate_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
            let k = rates.num_bs();
            let mut data = Vec::with_capacity(ids.external_ids.len() * k);
            for id in &ids.external_ids {
                let row = row_of
                    .get(id.as_str())
                    .ok_or_else(|| SimError::Config(format!("{}: no rates for location {id:?}", path.display())))?;
                data.extend_from_slice(rates.row(*row));
            }
            let rates = RateMatrix::new(ids.external_ids.len(), k, data)?;
            Ok((trace, rates))
        }
        RatesSource::Pathloss {
            grid_side,
            num_bs,
            rate_max,
            exponent,
        } => {
            let n = grid_side * grid_side;
            if ids.external_ids.len() != n {
                return Err(SimError::Config(format!(
                    "trace has {} locations, grid has {n}",
                    ids.external_ids.len()
                )));
            }
            let mut numeric: Vec<(i64, usize)> = ids
                .external_ids
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    s.parse::<i64>()
                        .map(|v| (v, i))
                        .map_err(|_| SimError::Config(format!("location id {s:?} is not an integer")))
                })
                .collect::<Result<_>>()?;
            numeric.sort_unstable();
            let order: Vec<usize> = numeric.into_iter().map(|(_, i)| i).collect();
            let frames = trace
                .frames
                .iter()
                .map(|f| TrafficFrame::new(f.slot_index, order.iter().map(|&i| f.demand[i]).collect()))
                .collect::<std::result::Result<Vec<_>, OnoError>>()?;
            let trace = TrafficTrace::new(trace.slot_duration_s, trace.season_length_slots, frames)?;
            let topo = grid_topology(*grid_side, *num_bs)?;
            let rates = pathloss_rates(&topo, *rate_max, *exponent)?;
            Ok((trace, rates))
        }
    }
}

/// Writes `location,bs0,...` with location ids `0..X`.
pub fn write_rates_csv(rates: &RateMatrix, path: &Path) -> Result<()> {
    let err = |e: csv::Error| SimError::Core(OnoError::io(path, std::io::Error::other(e.to_string())));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    let mut header = vec!["location".to_string()];
    header.extend((0..rates.num_bs()).map(|j| format!("bs{j}")));
    w.write_record(&header).map_err(err)?;
    for x in 0..rates.num_locations() {
        let mut row = vec![x.to_string()];
        row.extend(rates.row(x).iter().map(|r| format!("{r:?}")));
        w.write_record(&row).map_err(err)?;
    }
    w.flush().map_err(|e| SimError::Core(OnoError::io(path, e)))
}

pub fn read_rates_csv(path: &Path) -> Result<(Vec<String>, RateMatrix)> {
    let parse = |line: u64, m: String| {
        SimError::Core(OnoError::Parse {
            path: path.to_path_buf(),
            line,
            message: m,
        })
    };
    let mut rd = csv::Reader::from_path(path).map_err(|e| parse(0, e.to_string()))?;
    let k = rd.headers().map_err(|e| parse(1, e.to_string()))?.len().saturating_sub(1);
    if k == 0 {
        return Err(parse(1, "rates header needs a location column and at least one base station".into()));
    }
    let mut ids = Vec::new();
    let mut data = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec.map_err(|e| parse(line, e.to_string()))?;
        if rec.len() != k + 1 {
            return Err(parse(line, format!("expected {} fields, found {}", k + 1, rec.len())));
        }
        ids.push(rec[0].to_string());
        for f in rec.iter().skip(1) {
            data.push(f.parse::<f64>().map_err(|_| parse(line, format!("rate {f:?} is not a number")))?);
        }
    }
    let rates = RateMatrix::new(ids.len(), k, data)?;
    Ok((ids, rates))
}
