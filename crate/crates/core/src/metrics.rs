//! KPI reducers over per-slot records and report files.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::OnoError;
use crate::model::{compute_loads, cost, delay, rejected_traffic, RateMatrix, SteeringPolicy, TrafficFrame};
use crate::Result;

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;
pub const RESULTS_HEADER: [&str; 8] = [
    "slot",
    "technique",
    "cost",
    "avg_delay_ms",
    "max_load",
    "rejected_frac",
    "wall_time_s",
    "policy_digest",
];

/// Rounds to the 12 significant digits written to CSV, so that stored
/// records and their CSV rows agree exactly.
pub fn quantize(v: f64) -> f64 {
    if v.is_finite() {
        format!("{v:.11e}").parse().expect("formatted float parses")
    } else {
        v
    }
}

fn fmt_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.11e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlotRecord {
    /// Absolute slot counter (slot-of-day arithmetic uses it).
    pub slot: usize,
    pub technique: String,
    pub policy_digest: u64,
    pub loads: Vec<f64>,
    pub cost: f64,
    pub delays_ms: Vec<f64>,
    pub avg_delay_ms: f64,
    pub max_load: f64,
    pub rejected_frac: f64,
    /// Offered traffic of the slot, used to weight rejection.
    pub offered: f64,
    pub wall_time_s: f64,
    /// Produced by a bootstrap or fallback policy rather than the technique.
    pub bootstrap: bool,
}

impl SlotRecord {
    /// Realizes `policy` against the true frame. KPI floats are quantized.
    pub fn realize(
        slot: usize,
        technique: &str,
        frame: &TrafficFrame,
        policy: &SteeringPolicy,
        rates: &RateMatrix,
        slot_duration_s: f64,
        base_service_ms: f64,
    ) -> Result<Self> {
        let loads = compute_loads(frame, policy, rates, slot_duration_s)?;
        let delays = delay(&loads, base_service_ms);
        let rej = rejected_traffic(frame, policy, rates, slot_duration_s)?;
        let avg = delays.iter().sum::<f64>() / delays.len() as f64;
        Ok(SlotRecord {
            slot,
            technique: technique.to_string(),
            policy_digest: policy.digest(),
            cost: quantize(cost(&loads)),
            max_load: quantize(loads.max()),
            delays_ms: delays.into_iter().map(quantize).collect(),
            avg_delay_ms: quantize(avg),
            loads: loads.0.into_iter().map(quantize).collect(),
            rejected_frac: quantize(rej.fraction),
            offered: quantize(frame.total()),
            wall_time_s: 0.0,
            bootstrap: false,
        })
    }

    pub fn with_wall_time(mut self, seconds: f64) -> Self {
        self.wall_time_s = quantize(seconds);
        self
    }
}

/// Mean of the finite values with exclusion accounting. `value` is `None`
/// when nothing was included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mean {
    pub value: Option<f64>,
    pub included: usize,
    pub excluded: usize,
}

impl Mean {
    fn of<I: IntoIterator<Item = f64>>(values: I) -> Self {
        let (mut sum, mut included, mut excluded) = (0.0, 0, 0);
        for v in values {
            if v.is_finite() {
                sum += v;
                included += 1;
            } else {
                excluded += 1;
            }
        }
        Mean {
            value: (included > 0).then(|| sum / included as f64),
            included,
            excluded,
        }
    }
}

pub fn average_cost<'a, I>(records: I, filter_infinite: bool) -> Mean
where
    I: IntoIterator<Item = &'a SlotRecord>,
{
    let m = Mean::of(records.into_iter().map(|r| r.cost));
    if !filter_infinite && m.excluded > 0 {
        return Mean {
            value: Some(f64::INFINITY),
            ..m
        };
    }
    m
}

/// Clock window within each day, in minutes after midnight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DaytimeWindow {
    pub start_minute: u32,
    pub end_minute: u32,
}

impl Default for DaytimeWindow {
    fn default() -> Self {
        DaytimeWindow {
            start_minute: 7 * 60 + 30,
            end_minute: 20 * 60 + 30,
        }
    }
}

impl DaytimeWindow {
    pub fn validate(&self, slot_duration_s: f64) -> Result<()> {
        if self.start_minute >= self.end_minute || self.end_minute > 24 * 60 {
            return Err(OnoError::Config(format!(
                "daytime window {}..{} minutes is not ordered within a day",
                self.start_minute, self.end_minute
            )));
        }
        let per_day = 86_400.0 / slot_duration_s;
        if per_day.fract() != 0.0 {
            return Err(OnoError::Config(format!("slot duration {slot_duration_s} s does not divide a day")));
        }
        Ok(())
    }

    /// Slot-of-day offsets `[start, end)`; a slot is inside when it starts
    /// within the window.
    pub fn slot_range(&self, slot_duration_s: f64) -> (usize, usize) {
        let to_slot = |m: u32| ((m as f64 * 60.0) / slot_duration_s).ceil() as usize;
        (to_slot(self.start_minute), to_slot(self.end_minute))
    }

    pub fn contains(&self, slot: usize, slot_duration_s: f64) -> bool {
        let per_day = (86_400.0 / slot_duration_s).round() as usize;
        let (s, e) = self.slot_range(slot_duration_s);
        (s..e).contains(&(slot % per_day))
    }
}

pub fn daytime_average_delay<'a, I>(records: I, window: &DaytimeWindow, slot_duration_s: f64) -> Mean
where
    I: IntoIterator<Item = &'a SlotRecord>,
{
    Mean::of(
        records
            .into_iter()
            .filter(|r| window.contains(r.slot, slot_duration_s))
            .map(|r| r.avg_delay_ms),
    )
}

fn by_slot<'a>(records: impl IntoIterator<Item = &'a SlotRecord>) -> BTreeMap<usize, &'a SlotRecord> {
    records.into_iter().map(|r| (r.slot, r)).collect()
}

/// Mean squared difference of BS-averaged delays (or of per-BS delays when
/// `per_bs`) against the oracle over in-window slots; slots infinite in
/// either are excluded.
pub fn delay_mse_vs_oracle<'a, I, J>(
    records: I,
    oracle: J,
    window: &DaytimeWindow,
    slot_duration_s: f64,
    per_bs: bool,
) -> Mean
where
    I: IntoIterator<Item = &'a SlotRecord>,
    J: IntoIterator<Item = &'a SlotRecord>,
{
    let oracle = by_slot(oracle);
    Mean::of(
        records
            .into_iter()
            .filter(|r| window.contains(r.slot, slot_duration_s))
            .filter_map(|r| oracle.get(&r.slot).map(|o| (r, *o)))
            .map(|(r, o)| {
                if per_bs {
                    let k = r.delays_ms.len().max(1) as f64;
                    r.delays_ms
                        .iter()
                        .zip(&o.delays_ms)
                        .map(|(a, b)| (a - b).powi(2))
                        .sum::<f64>()
                        / k
                } else {
                    (r.avg_delay_ms - o.avg_delay_ms).powi(2)
                }
            }),
    )
}

/// Partial sums of `cost_t − comparator_t` over slots where both are finite.
pub fn regret_curve<'a, I, J>(records: I, comparator: J) -> Vec<f64>
where
    I: IntoIterator<Item = &'a SlotRecord>,
    J: IntoIterator<Item = &'a SlotRecord>,
{
    let comp = by_slot(comparator);
    let mut acc = 0.0;
    let mut out = Vec::new();
    for r in records {
        if let Some(c) = comp.get(&r.slot) {
            if r.cost.is_finite() && c.cost.is_finite() {
                acc += r.cost - c.cost;
                out.push(acc);
            }
        }
    }
    out
}

/// Rejected share of offered traffic in percent.
pub fn rejected_percent<'a, I>(records: I) -> f64
where
    I: IntoIterator<Item = &'a SlotRecord>,
{
    let (rej, tot) = records
        .into_iter()
        .fold((0.0, 0.0), |(a, b), r| (a + r.rejected_frac * r.offered, b + r.offered));
    if tot > 0.0 {
        100.0 * rej / tot
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kpis {
    pub slots: usize,
    pub average_cost: Mean,
    pub daytime_delay_ms: Mean,
    /// Present when oracle records exist.
    pub delay_mse: Option<Mean>,
    pub rejected_percent: f64,
    pub bootstrap_slots: usize,
    pub mean_wall_time_s: f64,
}

fn kpis(recs: &[&SlotRecord], oracle: Option<&[&SlotRecord]>, opts: &ReportOptions) -> Kpis {
    Kpis {
        slots: recs.len(),
        average_cost: average_cost(recs.iter().copied(), true),
        daytime_delay_ms: daytime_average_delay(recs.iter().copied(), &opts.window, opts.slot_duration_s),
        delay_mse: oracle.map(|o| {
            delay_mse_vs_oracle(recs.iter().copied(), o.iter().copied(), &opts.window, opts.slot_duration_s, opts.per_bs_mse)
        }),
        rejected_percent: rejected_percent(recs.iter().copied()),
        bootstrap_slots: recs.iter().filter(|r| r.bootstrap).count(),
        mean_wall_time_s: if recs.is_empty() {
            0.0
        } else {
            recs.iter().map(|r| r.wall_time_s).sum::<f64>() / recs.len() as f64
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayKpis {
    pub day: usize,
    pub kpis: Kpis,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TechniqueSummary {
    pub technique: String,
    pub overall: Kpis,
    pub days: Vec<DayKpis>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub trace_digest: String,
    pub slot_duration_s: f64,
    pub window: DaytimeWindow,
    pub per_bs_mse: bool,
    pub seeds: serde_json::Value,
    pub config: serde_json::Value,
    pub techniques: Vec<TechniqueSummary>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOptions {
    pub slot_duration_s: f64,
    pub window: DaytimeWindow,
    pub per_bs_mse: bool,
    /// Name of the technique whose records serve as the oracle.
    pub oracle: String,
    pub trace_digest: String,
    pub seeds: serde_json::Value,
    pub config: serde_json::Value,
}

/// Per-technique overall and per-day KPIs, techniques in first-seen order.
pub fn summarize(records: &[SlotRecord], opts: &ReportOptions) -> Summary {
    let mut order: Vec<&str> = Vec::new();
    for r in records {
        if !order.contains(&r.technique.as_str()) {
            order.push(&r.technique);
        }
    }
    let per_day = (86_400.0 / opts.slot_duration_s).round() as usize;
    let oracle: Vec<&SlotRecord> = records.iter().filter(|r| r.technique == opts.oracle).collect();
    let have_oracle = !oracle.is_empty();
    let techniques = order
        .iter()
        .map(|name| {
            let recs: Vec<&SlotRecord> = records.iter().filter(|r| r.technique == *name).collect();
            let days: BTreeSet<usize> = recs.iter().map(|r| r.slot / per_day).collect();
            let days = days
                .into_iter()
                .map(|d| {
                    let dr: Vec<&SlotRecord> = recs.iter().copied().filter(|r| r.slot / per_day == d).collect();
                    DayKpis {
                        day: d,
                        kpis: kpis(&dr, have_oracle.then_some(oracle.as_slice()), opts),
                    }
                })
                .collect();
            TechniqueSummary {
                technique: name.to_string(),
                overall: kpis(&recs, have_oracle.then_some(oracle.as_slice()), opts),
                days,
            }
        })
        .collect();
    Summary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        trace_digest: opts.trace_digest.clone(),
        slot_duration_s: opts.slot_duration_s,
        window: opts.window,
        per_bs_mse: opts.per_bs_mse,
        seeds: opts.seeds.clone(),
        config: opts.config.clone(),
        techniques,
    }
}

pub fn write_results_csv(records: &[SlotRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(RESULTS_HEADER).map_err(|e| csv_err(path, e))?;
    for r in records {
        w.write_record([
            r.slot.to_string(),
            r.technique.clone(),
            fmt_float(r.cost),
            fmt_float(r.avg_delay_ms),
            fmt_float(r.max_load),
            fmt_float(r.rejected_frac),
            fmt_float(r.wall_time_s),
            format!("{:016x}", r.policy_digest),
        ])
        .map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| OnoError::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> OnoError {
    OnoError::Parse {
        path: path.to_path_buf(),
        line: e.position().map_or(0, |p| p.line()),
        message: e.to_string(),
    }
}

/// One parsed row of `results.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub slot: usize,
    pub technique: String,
    pub cost: f64,
    pub avg_delay_ms: f64,
    pub max_load: f64,
    pub rejected_frac: f64,
    pub wall_time_s: f64,
    pub policy_digest: u64,
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = rd.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().ne(RESULTS_HEADER) {
        return Err(OnoError::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("unexpected header {header:?}"),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = i as u64 + 2;
        let bad = |what: &str| OnoError::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("bad {what}"),
        };
        let f = |idx: usize, what: &str| rec[idx].parse::<f64>().map_err(|_| bad(what));
        out.push(ResultRow {
            slot: rec[0].parse().map_err(|_| bad("slot"))?,
            technique: rec[1].to_string(),
            cost: f(2, "cost")?,
            avg_delay_ms: f(3, "avg_delay_ms")?,
            max_load: f(4, "max_load")?,
            rejected_frac: f(5, "rejected_frac")?,
            wall_time_s: f(6, "wall_time_s")?,
            policy_digest: u64::from_str_radix(&rec[7], 16).map_err(|_| bad("policy_digest"))?,
        });
    }
    Ok(out)
}

/// Writes `results.csv`, `summary.json` and `demand.csv` (offered traffic
/// per slot) into `dir`.
pub fn emit_report(records: &[SlotRecord], opts: &ReportOptions, dir: &Path) -> Result<Summary> {
    fs::create_dir_all(dir).map_err(|e| OnoError::io(dir, e))?;
    write_results_csv(records, &dir.join("results.csv"))?;
    let demand: BTreeMap<usize, f64> = records.iter().map(|r| (r.slot, r.offered)).collect();
    let dpath = dir.join("demand.csv");
    let mut w = csv::Writer::from_path(&dpath).map_err(|e| csv_err(&dpath, e))?;
    w.write_record(["slot", "offered"]).map_err(|e| csv_err(&dpath, e))?;
    for (s, d) in demand {
        w.write_record([s.to_string(), fmt_float(d)]).map_err(|e| csv_err(&dpath, e))?;
    }
    w.flush().map_err(|e| OnoError::io(&dpath, e))?;
    let summary = summarize(records, opts);
    let spath = dir.join("summary.json");
    let text = serde_json::to_string_pretty(&summary)?;
    fs::write(&spath, text).map_err(|e| OnoError::io(&spath, e))?;
    Ok(summary)
}

pub fn read_summary(path: &Path) -> Result<Summary> {
    let text = fs::read_to_string(path).map_err(|e| OnoError::io(path, e))?;
    let s: Summary = serde_json::from_str(&text)?;
    if s.schema_version != SUMMARY_SCHEMA_VERSION {
        return Err(OnoError::Config(format!("unsupported summary schema version {}", s.schema_version)));
    }
    Ok(s)
}
