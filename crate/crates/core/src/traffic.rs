//! Traffic traces: synthetic cyclostationary generation, long-format CSV
//! ingestion, persistence, splitting and spatial aggregation.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Axis, OnoError};
use crate::model::{RateMatrix, Topology, TrafficFrame, TrafficTrace};
use crate::Result;

const WEEK_S: f64 = 7.0 * 86_400.0;

/// Parameters of the synthetic traffic and topology generator.
///
/// Demand at location `x` and slot `t` is
/// `base_x · s_x(t) · L_x(t) · ε_xt` where `s_x` is the daily profile,
/// `L_x` a slowly varying regional level factor (disabled when
/// `level_cv == 0`) and `ε` i.i.d. lognormal noise with mean one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub grid_side: usize,
    pub num_bs: usize,
    pub weeks: usize,
    pub slot_duration_s: f64,
    /// Mean demand per location and slot at profile level one.
    pub base_demand: f64,
    /// Coefficient of variation of the lognormal per-location scale.
    pub spatial_cv: f64,
    pub diurnal_amplitude: f64,
    pub weekend_factor: f64,
    pub commute_antiphase: bool,
    pub noise_cv: f64,
    /// Coefficient of variation of the regional level factor.
    pub level_cv: f64,
    /// Correlation time of the level factor, in slots.
    pub level_corr_slots: f64,
    /// The level field has `level_grid²` regional components.
    pub level_grid: usize,
    pub rng_seed: u64,
    pub pathloss_exponent: f64,
    pub rate_max: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            grid_side: 20,
            num_bs: 8,
            weeks: 5,
            slot_duration_s: 600.0,
            base_demand: 1.0,
            spatial_cv: 0.0,
            diurnal_amplitude: 0.6,
            weekend_factor: 0.8,
            commute_antiphase: true,
            noise_cv: 0.2,
            level_cv: 0.0,
            level_corr_slots: 144.0,
            level_grid: 2,
            rng_seed: 42,
            pathloss_exponent: 2.0,
            rate_max: 1.0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(OnoError::Config(format!("synthetic trace: {m}")));
        if self.grid_side == 0 || self.num_bs == 0 || self.weeks == 0 {
            return bad("grid_side, num_bs and weeks must be at least 1");
        }
        if !(self.slot_duration_s > 0.0) || (WEEK_S / self.slot_duration_s).fract() != 0.0 {
            return bad("slot duration must divide one week");
        }
        if !(86_400.0 / self.slot_duration_s).fract().eq(&0.0) {
            return bad("slot duration must divide one day");
        }
        if !(self.base_demand > 0.0) || !(self.rate_max > 0.0) || !(self.pathloss_exponent > 0.0) {
            return bad("base_demand, rate_max and pathloss_exponent must be positive");
        }
        if !(0.0..=1.0).contains(&self.diurnal_amplitude) {
            return bad("diurnal_amplitude must lie in [0, 1]");
        }
        if !(self.weekend_factor > 0.0 && self.weekend_factor <= 1.0) {
            return bad("weekend_factor must lie in (0, 1]");
        }
        if !(self.noise_cv >= 0.0) || !(self.level_cv >= 0.0) || !(self.spatial_cv >= 0.0) {
            return bad("coefficients of variation must be non-negative");
        }
        if self.level_cv > 0.0 && (!(self.level_corr_slots > 0.0) || self.level_grid == 0) {
            return bad("level field needs positive correlation time and grid");
        }
        Ok(())
    }

    pub fn num_locations(&self) -> usize {
        self.grid_side * self.grid_side
    }

    pub fn season_length_slots(&self) -> usize {
        (WEEK_S / self.slot_duration_s) as usize
    }

    pub fn total_slots(&self) -> usize {
        self.weeks * self.season_length_slots()
    }
}

/// Daily shape: a 24 h harmonic (sign flipped for outskirts under antiphase)
/// plus a 12 h harmonic, floored at 10% of its own daily peak.
#[derive(Debug, Clone)]
struct DailyProfile {
    amplitude: f64,
    floor: [f64; 2],
}

impl DailyProfile {
    fn new(amplitude: f64) -> Self {
        let mut floor = [0.0; 2];
        for (i, sign) in [1.0, -1.0].into_iter().enumerate() {
            let peak = (0..1440)
                .map(|m| Self::raw(amplitude, sign, m as f64 / 60.0))
                .fold(f64::MIN, f64::max);
            floor[i] = 0.1 * peak;
        }
        DailyProfile { amplitude, floor }
    }

    fn raw(amplitude: f64, sign: f64, hour: f64) -> f64 {
        let w = 2.0 * std::f64::consts::PI / 24.0;
        1.0 + amplitude * (sign * (w * (hour - 14.0)).cos() + 0.5 * (2.0 * w * (hour - 10.0)).cos())
    }

    fn value(&self, outskirt: bool, hour: f64) -> f64 {
        let (sign, floor) = if outskirt { (-1.0, self.floor[1]) } else { (1.0, self.floor[0]) };
        Self::raw(self.amplitude, sign, hour).max(floor)
    }
}

fn bs_subgrid(num_bs: usize) -> (usize, usize) {
    let mut rows = (num_bs as f64).sqrt().floor() as usize;
    while rows > 1 && num_bs % rows != 0 {
        rows -= 1;
    }
    (rows.max(1), num_bs / rows.max(1))
}

/// Grid coordinates of location centres and base stations placed on a
/// uniform sub-grid.
pub fn grid_topology(grid_side: usize, num_bs: usize) -> Result<Topology> {
    let g = grid_side as f64;
    let locations: Vec<[f64; 2]> = (0..grid_side * grid_side)
        .map(|x| [(x % grid_side) as f64 + 0.5, (x / grid_side) as f64 + 0.5])
        .collect();
    let (rows, cols) = bs_subgrid(num_bs);
    let bs: Vec<[f64; 2]> = (0..num_bs)
        .map(|j| {
            let (r, c) = (j / cols, j % cols);
            [(c as f64 + 0.5) * g / cols as f64, (r as f64 + 0.5) * g / rows as f64]
        })
        .collect();
    Topology::new(locations.len(), num_bs)?.with_coords(locations, bs)
}

/// `R_xj = rate_max / (1 + d_xj^α)` with distances in grid cells.
pub fn pathloss_rates(topology: &Topology, rate_max: f64, exponent: f64) -> Result<RateMatrix> {
    let (locs, bss) = match (&topology.location_coords, &topology.bs_coords) {
        (Some(l), Some(b)) => (l, b),
        _ => return Err(OnoError::InvalidValue("topology has no coordinates".into())),
    };
    let mut rates = Vec::with_capacity(locs.len() * bss.len());
    for l in locs {
        for b in bss {
            let d = ((l[0] - b[0]).powi(2) + (l[1] - b[1]).powi(2)).sqrt();
            rates.push(rate_max / (1.0 + d.powf(exponent)));
        }
    }
    RateMatrix::new(locs.len(), bss.len(), rates)
}

/// Locations in the inner half of the grid by distance to the centre.
pub fn center_mask(grid_side: usize) -> Vec<bool> {
    let c = grid_side as f64 / 2.0;
    let n = grid_side * grid_side;
    let dist = |x: usize| {
        let (col, row) = ((x % grid_side) as f64 + 0.5, (x / grid_side) as f64 + 0.5);
        (col - c).powi(2) + (row - c).powi(2)
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|a, b| dist(*a).total_cmp(&dist(*b)));
    let mut mask = vec![false; n];
    for &x in &order[..n.div_ceil(2)] {
        mask[x] = true;
    }
    mask
}

fn lognormal_sigma(cv: f64) -> f64 {
    (1.0 + cv * cv).ln().sqrt()
}

pub fn generate_synthetic(config: &SyntheticConfig) -> Result<(TrafficTrace, RateMatrix, Topology)> {
    config.validate()?;
    let topology = grid_topology(config.grid_side, config.num_bs)?;
    let rates = pathloss_rates(&topology, config.rate_max, config.pathloss_exponent)?;
    let n = config.num_locations();
    let slots = config.total_slots();
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);

    let s_sp = lognormal_sigma(config.spatial_cv);
    let base: Vec<f64> = (0..n)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            config.base_demand * (s_sp * z - 0.5 * s_sp * s_sp).exp()
        })
        .collect();

    let outskirt: Vec<bool> = if config.commute_antiphase {
        center_mask(config.grid_side).into_iter().map(|c| !c).collect()
    } else {
        vec![false; n]
    };
    let profile = DailyProfile::new(config.diurnal_amplitude);

    // regional level components and each location's normalized weights
    let regions = if config.level_cv > 0.0 {
        config.level_grid * config.level_grid
    } else {
        0
    };
    let s_lv = lognormal_sigma(config.level_cv);
    let weights: Vec<Vec<f64>> = (0..n)
        .map(|x| {
            let g = config.grid_side as f64;
            let (col, row) = ((x % config.grid_side) as f64 + 0.5, (x / config.grid_side) as f64 + 0.5);
            let cell = g / config.level_grid.max(1) as f64;
            let mut w: Vec<f64> = (0..regions)
                .map(|r| {
                    let rc = ((r % config.level_grid) as f64 + 0.5) * cell;
                    let rr = ((r / config.level_grid) as f64 + 0.5) * cell;
                    let d2 = (col - rc).powi(2) + (row - rr).powi(2);
                    (-d2 / (2.0 * cell * cell)).exp()
                })
                .collect();
            let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                w.iter_mut().for_each(|v| *v /= norm);
            }
            w
        })
        .collect();
    let phi = if regions > 0 {
        (-1.0 / config.level_corr_slots).exp()
    } else {
        0.0
    };
    let innovation = (1.0 - phi * phi).sqrt() * s_lv;
    let mut level: Vec<f64> = (0..regions)
        .map(|_| s_lv * rng.sample::<f64, _>(StandardNormal))
        .collect();

    let s_noise = lognormal_sigma(config.noise_cv);
    let slot_s = config.slot_duration_s;
    let mut frames = Vec::with_capacity(slots);
    for t in 0..slots {
        if t > 0 {
            for u in level.iter_mut() {
                *u = phi * *u + innovation * rng.sample::<f64, _>(StandardNormal);
            }
        }
        let seconds = t as f64 * slot_s;
        let hour = (seconds % 86_400.0) / 3600.0;
        let day = ((seconds / 86_400.0).floor() as usize) % 7;
        let week_factor = if day >= 5 { config.weekend_factor } else { 1.0 };
        let mut demand = Vec::with_capacity(n);
        for x in 0..n {
            let mut d = base[x] * profile.value(outskirt[x], hour) * week_factor;
            if regions > 0 {
                let u: f64 = weights[x].iter().zip(&level).map(|(w, u)| w * u).sum();
                d *= (u - 0.5 * s_lv * s_lv).exp();
            }
            if config.noise_cv > 0.0 {
                let z: f64 = rng.sample(StandardNormal);
                d *= (s_noise * z - 0.5 * s_noise * s_noise).exp();
            }
            demand.push(d);
        }
        frames.push(TrafficFrame { slot_index: t, demand });
    }
    let trace = TrafficTrace::new(slot_s, config.season_length_slots(), frames)?;
    Ok((trace, rates, topology))
}

/// A column either by zero-based position or by header name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSchema {
    pub location: ColumnRef,
    pub epoch_ms: ColumnRef,
    pub demand: ColumnRef,
    pub delimiter: char,
    pub has_header: bool,
    pub window_s: f64,
    pub source_granularity_s: f64,
}

impl Default for IngestSchema {
    fn default() -> Self {
        IngestSchema {
            location: ColumnRef::Index(0),
            epoch_ms: ColumnRef::Index(1),
            demand: ColumnRef::Index(2),
            delimiter: '\t',
            has_header: false,
            window_s: 600.0,
            source_granularity_s: 600.0,
        }
    }
}

impl IngestSchema {
    pub fn validate(&self) -> Result<()> {
        if !(self.source_granularity_s > 0.0 && self.window_s > 0.0) {
            return Err(OnoError::Config("ingest window and granularity must be positive".into()));
        }
        let ratio = self.window_s / self.source_granularity_s;
        if ratio.fract() != 0.0 || ratio < 1.0 {
            return Err(OnoError::Config(
                "ingest window must be a positive multiple of the source granularity".into(),
            ));
        }
        if (WEEK_S / self.window_s).fract() != 0.0 {
            return Err(OnoError::Config("ingest window must divide one week".into()));
        }
        if !self.delimiter.is_ascii() {
            return Err(OnoError::Config("delimiter must be a single ASCII character".into()));
        }
        let named = [&self.location, &self.epoch_ms, &self.demand]
            .iter()
            .any(|c| matches!(c, ColumnRef::Name(_)));
        if named && !self.has_header {
            return Err(OnoError::Config("named columns require has_header = true".into()));
        }
        Ok(())
    }
}

/// Dense location index → external identifier, in first-seen order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LocationIdMap {
    pub external_ids: Vec<String>,
}

impl LocationIdMap {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        w.write_record(["external_id", "dense_index"]).map_err(|e| csv_io(path, e))?;
        for (i, id) in self.external_ids.iter().enumerate() {
            w.write_record([id.as_str(), &i.to_string()]).map_err(|e| csv_io(path, e))?;
        }
        w.flush().map_err(|e| OnoError::io(path, e))?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
        let mut ids: Vec<(usize, String)> = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| csv_io(path, e))?;
            let line = i as u64 + 2;
            let parse_err = |m: &str| OnoError::Parse {
                path: path.to_path_buf(),
                line,
                message: m.to_string(),
            };
            let id = rec.get(0).ok_or_else(|| parse_err("missing external_id"))?;
            let idx: usize = rec
                .get(1)
                .ok_or_else(|| parse_err("missing dense_index"))?
                .trim()
                .parse()
                .map_err(|_| parse_err("dense_index is not an integer"))?;
            ids.push((idx, id.to_string()));
        }
        ids.sort_by_key(|(i, _)| *i);
        for (expect, (i, _)) in ids.iter().enumerate() {
            if *i != expect {
                return Err(OnoError::InvalidValue(format!("{}: dense indices are not 0..n", path.display())));
            }
        }
        Ok(LocationIdMap {
            external_ids: ids.into_iter().map(|(_, id)| id).collect(),
        })
    }
}

fn csv_io(path: &Path, e: csv::Error) -> OnoError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => OnoError::io(path, io),
        other => OnoError::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("{other:?}"),
        },
    }
}

fn resolve_column(col: &ColumnRef, header: Option<&csv::StringRecord>) -> Result<usize> {
    match col {
        ColumnRef::Index(i) => Ok(*i),
        ColumnRef::Name(name) => header
            .and_then(|h| h.iter().position(|c| c.trim() == name))
            .ok_or_else(|| OnoError::Config(format!("column {name:?} not found in header"))),
    }
}

/// Bins long-format `(location, epoch_ms, demand)` rows onto the slot grid.
///
/// Slots start at the earliest timestamp floored to the window; missing
/// pairs are zero and duplicate pairs are summed.
pub fn ingest_csv(path: &Path, schema: &IngestSchema) -> Result<(TrafficTrace, LocationIdMap)> {
    schema.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter as u8)
        .has_headers(schema.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_io(path, e))?;
    let header = if schema.has_header {
        Some(reader.headers().map_err(|e| csv_io(path, e))?.clone())
    } else {
        None
    };
    let loc_col = resolve_column(&schema.location, header.as_ref())?;
    let ts_col = resolve_column(&schema.epoch_ms, header.as_ref())?;
    let dem_col = resolve_column(&schema.demand, header.as_ref())?;

    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut map = LocationIdMap::default();
    let mut rows: Vec<(usize, i64, f64)> = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        match reader.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(csv_io(path, e)),
        }
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        let parse_err = |m: String| OnoError::Parse {
            path: path.to_path_buf(),
            line,
            message: m,
        };
        let field = |c: usize, what: &str| {
            record
                .get(c)
                .ok_or_else(|| parse_err(format!("missing {what} column {c}")))
        };
        let loc = field(loc_col, "location")?;
        let ts: i64 = field(ts_col, "timestamp")?
            .parse()
            .map_err(|_| parse_err(format!("timestamp {:?} is not an integer", record.get(ts_col))))?;
        let demand: f64 = field(dem_col, "demand")?
            .parse()
            .map_err(|_| parse_err(format!("demand {:?} is not a number", record.get(dem_col))))?;
        if !(demand.is_finite() && demand >= 0.0) {
            return Err(parse_err(format!("demand {demand} must be finite and non-negative")));
        }
        let idx = match ids.get(loc) {
            Some(&i) => i,
            None => {
                let i = map.external_ids.len();
                ids.insert(loc.to_string(), i);
                map.external_ids.push(loc.to_string());
                i
            }
        };
        rows.push((idx, ts, demand));
    }
    if rows.is_empty() {
        return Err(OnoError::NoRows);
    }
    let window_ms = (schema.window_s * 1000.0).round() as i64;
    let t0 = rows.iter().map(|r| r.1).min().expect("non-empty").div_euclid(window_ms) * window_ms;
    let slots = rows
        .iter()
        .map(|r| ((r.1 - t0) / window_ms) as usize)
        .max()
        .expect("non-empty")
        + 1;
    let n = map.external_ids.len();
    let mut frames: Vec<TrafficFrame> = (0..slots)
        .map(|t| TrafficFrame {
            slot_index: t,
            demand: vec![0.0; n],
        })
        .collect();
    for (idx, ts, demand) in rows {
        let t = ((ts - t0) / window_ms) as usize;
        frames[t].demand[idx] += demand;
    }
    let season = (WEEK_S / schema.window_s) as usize;
    Ok((TrafficTrace::new(schema.window_s, season, frames)?, map))
}

/// Writes a trace in long format (location, epoch_ms, demand) for [`ingest_csv`].
/// Slot 0 is placed at `epoch0_ms`; zero-demand entries are written too.
pub fn export_long_csv(trace: &TrafficTrace, path: &Path, delimiter: char, epoch0_ms: i64) -> Result<()> {
    let file = File::create(path).map_err(|e| OnoError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let step = (trace.slot_duration_s * 1000.0).round() as i64;
    for (t, frame) in trace.frames.iter().enumerate() {
        let ts = epoch0_ms + step * t as i64;
        for (x, d) in frame.demand.iter().enumerate() {
            writeln!(w, "{x}{delimiter}{ts}{delimiter}{d}").map_err(|e| OnoError::io(path, e))?;
        }
    }
    w.flush().map_err(|e| OnoError::io(path, e))
}

// Text format: a header line `X,slot_duration_s,season_length_slots[,slot_offset]`
// followed by one comma-separated row of X demands per frame. Numbers use the
// shortest representation that parses back to the same bits.

pub fn write_trace<W: Write>(trace: &TrafficTrace, mut w: W) -> std::io::Result<()> {
    write!(w, "{},{},{}", trace.num_locations(), trace.slot_duration_s, trace.season_length_slots)?;
    if trace.slot_offset != 0 {
        write!(w, ",{}", trace.slot_offset)?;
    }
    writeln!(w)?;
    let mut line = String::new();
    for frame in &trace.frames {
        line.clear();
        for (i, d) in frame.demand.iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            line.push_str(&d.to_string());
        }
        writeln!(w, "{line}")?;
    }
    w.flush()
}

pub fn save_trace(trace: &TrafficTrace, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| OnoError::io(path, e))?;
    write_trace(trace, BufWriter::new(file)).map_err(|e| OnoError::io(path, e))
}

pub fn load_trace(path: &Path) -> Result<TrafficTrace> {
    let file = File::open(path).map_err(|e| OnoError::io(path, e))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines();
    let parse_err = |line: u64, m: String| OnoError::Parse {
        path: path.to_path_buf(),
        line,
        message: m,
    };
    let header = lines
        .next()
        .ok_or(OnoError::NoRows)?
        .map_err(|e| OnoError::io(path, e))?;
    let fields: Vec<&str> = header.trim().split(',').collect();
    if !(3..=4).contains(&fields.len()) {
        return Err(parse_err(1, "header must be X,slot_duration_s,season_length_slots".into()));
    }
    let x: usize = fields[0].parse().map_err(|_| parse_err(1, "bad location count".into()))?;
    let slot: f64 = fields[1].parse().map_err(|_| parse_err(1, "bad slot duration".into()))?;
    let season: usize = fields[2].parse().map_err(|_| parse_err(1, "bad season length".into()))?;
    let offset: usize = match fields.get(3) {
        Some(f) => f.parse().map_err(|_| parse_err(1, "bad slot offset".into()))?,
        None => 0,
    };
    let mut frames = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i as u64 + 2;
        let line = line.map_err(|e| OnoError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let demand = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| parse_err(line_no, e.to_string()))?;
        if demand.len() != x {
            return Err(parse_err(line_no, format!("expected {x} values, found {}", demand.len())));
        }
        let frame = TrafficFrame::new(frames.len(), demand).map_err(|e| parse_err(line_no, e.to_string()))?;
        frames.push(frame);
    }
    let mut trace = TrafficTrace::new(slot, season, frames)?;
    trace.slot_offset = offset;
    Ok(trace)
}

/// Contiguous prefix/suffix split; the suffix is re-based to slot 0 and
/// records its absolute position in `slot_offset`.
pub fn split_trace(trace: &TrafficTrace, train_slots: usize) -> Result<(TrafficTrace, TrafficTrace)> {
    if train_slots == 0 || train_slots >= trace.len() {
        return Err(OnoError::InvalidValue(format!(
            "split point {train_slots} must lie strictly inside a trace of {} slots",
            trace.len()
        )));
    }
    let train = TrafficTrace {
        slot_duration_s: trace.slot_duration_s,
        season_length_slots: trace.season_length_slots,
        slot_offset: trace.slot_offset,
        frames: trace.frames[..train_slots].to_vec(),
    };
    let test = TrafficTrace {
        slot_duration_s: trace.slot_duration_s,
        season_length_slots: trace.season_length_slots,
        slot_offset: trace.slot_offset + train_slots,
        frames: trace.frames[train_slots..]
            .iter()
            .enumerate()
            .map(|(t, f)| TrafficFrame {
                slot_index: t,
                demand: f.demand.clone(),
            })
            .collect(),
    };
    Ok((train, test))
}

/// Sums demand over `factor × factor` blocks of a square grid. The block
/// rate to base station `j` is `Σλ̄ / Σ(λ̄/R_xj)` over the block, with `λ̄`
/// the mean demand over the first `mean_slots` frames, so that a block's
/// load equals the sum of its members' loads whenever demand within the
/// block is distributed like `λ̄`.
pub fn spatial_aggregate(
    trace: &TrafficTrace,
    rates: &RateMatrix,
    grid_side: usize,
    factor: usize,
    mean_slots: usize,
) -> Result<(TrafficTrace, RateMatrix)> {
    check_dim(Axis::Locations, "grid vs trace", grid_side * grid_side, trace.num_locations())?;
    check_dim(Axis::Locations, "rates vs trace", rates.num_locations(), trace.num_locations())?;
    if factor == 0 || grid_side % factor != 0 {
        return Err(OnoError::InvalidValue(format!(
            "grid side {grid_side} is not divisible by aggregation factor {factor}"
        )));
    }
    if mean_slots == 0 || mean_slots > trace.len() {
        return Err(OnoError::InvalidValue("mean window must lie within the trace".into()));
    }
    let side = grid_side / factor;
    let blocks = side * side;
    let block_of = |x: usize| ((x / grid_side) / factor) * side + (x % grid_side) / factor;
    let k = rates.num_bs();
    let n = trace.num_locations();

    let mut mean = vec![0.0; n];
    for frame in &trace.frames[..mean_slots] {
        for (m, d) in mean.iter_mut().zip(&frame.demand) {
            *m += d;
        }
    }
    mean.iter_mut().for_each(|m| *m /= mean_slots as f64);

    let mut num = vec![0.0; blocks];
    let mut den = vec![0.0; blocks * k];
    let mut members = vec![0usize; blocks];
    let mut inv_rate = vec![0.0; blocks * k];
    for x in 0..n {
        let b = block_of(x);
        num[b] += mean[x];
        members[b] += 1;
        for j in 0..k {
            den[b * k + j] += mean[x] / rates.get(x, j);
            inv_rate[b * k + j] += 1.0 / rates.get(x, j);
        }
    }
    let mut block_rates = vec![0.0; blocks * k];
    for b in 0..blocks {
        for j in 0..k {
            block_rates[b * k + j] = if num[b] > 0.0 {
                num[b] / den[b * k + j]
            } else {
                // no demand: plain harmonic mean
                members[b] as f64 / inv_rate[b * k + j]
            };
        }
    }

    let frames = trace
        .frames
        .iter()
        .map(|f| {
            let mut demand = vec![0.0; blocks];
            for (x, d) in f.demand.iter().enumerate() {
                demand[block_of(x)] += d;
            }
            TrafficFrame {
                slot_index: f.slot_index,
                demand,
            }
        })
        .collect();
    let out = TrafficTrace {
        slot_duration_s: trace.slot_duration_s,
        season_length_slots: trace.season_length_slots,
        slot_offset: trace.slot_offset,
        frames,
    };
    Ok((out, RateMatrix::new(blocks, k, block_rates)?))
}
