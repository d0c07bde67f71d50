//! Joins summaries of runs on the same trace into one table with the best
//! value of every row flagged.

use std::collections::BTreeSet;
use std::fmt::Write;

use ono_core::metrics::{Kpis, Summary};
use serde::{Deserialize, Serialize};

use crate::{Result, SimError};

/// KPI rows in table order; lower is better for all of them.
pub const METRICS: [&str; 4] = ["average_cost", "daytime_delay_ms", "delay_mse", "rejected_percent"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    /// `overall` or `day <n>`.
    pub scope: String,
    pub metric: String,
    pub values: Vec<Option<f64>>,
    pub best: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub trace_digest: String,
    pub columns: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

fn metric(k: &Kpis, name: &str) -> Option<f64> {
    match name {
        "average_cost" => k.average_cost.value,
        "daytime_delay_ms" => k.daytime_delay_ms.value,
        "delay_mse" => k.delay_mse.and_then(|m| m.value),
        "rejected_percent" => Some(k.rejected_percent),
        _ => None,
    }
}

/// Columns are technique names for a single report and `label/technique`
/// otherwise.
pub fn compare(reports: &[(String, Summary)]) -> Result<Comparison> {
    let Some((_, first)) = reports.first() else {
        return Err(SimError::Config("nothing to compare".into()));
    };
    for (_, s) in &reports[1..] {
        if s.trace_digest != first.trace_digest {
            return Err(SimError::DigestMismatch(first.trace_digest.clone(), s.trace_digest.clone()));
        }
    }
    let mut columns = Vec::new();
    let mut techniques = Vec::new();
    for (label, s) in reports {
        for t in &s.techniques {
            columns.push(if reports.len() == 1 {
                t.technique.clone()
            } else {
                format!("{label}/{}", t.technique)
            });
            techniques.push(t);
        }
    }
    let days: BTreeSet<usize> = techniques.iter().flat_map(|t| t.days.iter().map(|d| d.day)).collect();
    let mut scopes: Vec<(String, Vec<Option<&Kpis>>)> = vec![(
        "overall".into(),
        techniques.iter().map(|t| Some(&t.overall)).collect(),
    )];
    for d in days {
        scopes.push((
            format!("day {d}"),
            techniques
                .iter()
                .map(|t| t.days.iter().find(|x| x.day == d).map(|x| &x.kpis))
                .collect(),
        ));
    }
    let mut rows = Vec::new();
    for (scope, kpis) in &scopes {
        for m in METRICS {
            let values: Vec<Option<f64>> = kpis.iter().map(|k| k.and_then(|k| metric(k, m))).collect();
            let min = values.iter().flatten().copied().fold(f64::INFINITY, f64::min);
            let best = values.iter().map(|v| v.is_some_and(|v| v == min)).collect();
            rows.push(ComparisonRow {
                scope: scope.clone(),
                metric: m.to_string(),
                values,
                best,
            });
        }
    }
    Ok(Comparison {
        trace_digest: first.trace_digest.clone(),
        columns,
        rows,
    })
}

/// Plain-text table; the best value of each row carries a `*`.
pub fn render_table(c: &Comparison) -> String {
    let mut cells: Vec<Vec<String>> = vec![{
        let mut h = vec!["scope".to_string(), "metric".to_string()];
        h.extend(c.columns.iter().cloned());
        h
    }];
    for r in &c.rows {
        let mut line = vec![r.scope.clone(), r.metric.clone()];
        for (v, b) in r.values.iter().zip(&r.best) {
            let s = match v {
                Some(v) => format!("{v:.4}"),
                None => "-".into(),
            };
            line.push(if *b { format!("{s}*") } else { s });
        }
        cells.push(line);
    }
    let cols = cells[0].len();
    let width: Vec<usize> = (0..cols)
        .map(|i| cells.iter().map(|l| l[i].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for l in &cells {
        for (i, cell) in l.iter().enumerate() {
            if i < 2 {
                let _ = write!(out, "{cell:<w$}  ", w = width[i]);
            } else {
                let _ = write!(out, "{cell:>w$}  ", w = width[i]);
            }
        }
        out.truncate(out.trim_end().len());
        out.push('\n');
    }
    out
}
