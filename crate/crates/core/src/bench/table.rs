use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::experiment::Method;
use super::metrics::{EvalReport, Summary};
use crate::error::{Error, Result};

/// One `|LP|` x dataset row; cells hold the F1 summary over seeds per method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub lp_count: usize,
    pub dataset: String,
    pub cells: BTreeMap<String, Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    /// Method names in column order.
    pub columns: Vec<String>,
    pub rows: Vec<TableRow>,
}

fn cell_text(s: Option<&Summary>) -> String {
    match s {
        None => "-".into(),
        Some(s) if s.n == 1 => format!("{:.2}", s.median),
        Some(s) => format!("{:.2} ({:.2})", s.median, s.iqr),
    }
}

fn column_title(name: &str) -> &str {
    match name.parse::<Method>() {
        Ok(m) => m.title(),
        Err(_) => name,
    }
}

impl ComparisonTable {
    pub fn to_text(&self) -> String {
        let mut header = vec!["|LP|".to_string(), "dataset".to_string()];
        header.extend(self.columns.iter().map(|c| column_title(c).to_string()));
        let body: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let mut line = vec![r.lp_count.to_string(), r.dataset.clone()];
                line.extend(self.columns.iter().map(|c| cell_text(r.cells.get(c))));
                line
            })
            .collect();
        let widths: Vec<usize> = (0..header.len())
            .map(|j| body.iter().map(|l| l[j].len()).chain([header[j].len()]).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for line in std::iter::once(&header).chain(&body) {
            let cells: Vec<String> = line.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        }
        out
    }

    /// Columns `lp_count,dataset` then `<method>,<method>_iqr` per method.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::Validation(format!("writing CSV: {e}"));
        let mut header = vec!["lp_count".to_string(), "dataset".to_string()];
        for c in &self.columns {
            header.push(c.clone());
            header.push(format!("{c}_iqr"));
        }
        w.write_record(&header).map_err(err)?;
        for r in &self.rows {
            let mut rec = vec![r.lp_count.to_string(), r.dataset.clone()];
            for c in &self.columns {
                match r.cells.get(c) {
                    Some(s) => {
                        rec.push(format!("{:.2}", s.median));
                        rec.push(format!("{:.2}", s.iqr));
                    }
                    None => rec.extend([String::new(), String::new()]),
                }
            }
            w.write_record(&rec).map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Validation(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("CSV of UTF-8 fields"))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Group reports into `|LP|` x dataset rows (ascending) with one column per
/// method, known methods first in their usual order.
pub fn emit_table(reports: &[EvalReport]) -> ComparisonTable {
    let mut columns: Vec<String> = Method::ALL
        .iter()
        .map(|m| m.name().to_string())
        .filter(|name| reports.iter().any(|r| &r.method == name))
        .collect();
    for r in reports {
        if !columns.contains(&r.method) {
            columns.push(r.method.clone());
        }
    }
    let mut groups: BTreeMap<(usize, String), BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for r in reports {
        groups
            .entry((r.lp_count, r.dataset.clone()))
            .or_default()
            .entry(r.method.clone())
            .or_default()
            .push(r.f1);
    }
    let rows = groups
        .into_iter()
        .map(|((lp_count, dataset), cells)| TableRow {
            lp_count,
            dataset,
            cells: cells.into_iter().map(|(m, f1)| (m, Summary::of(&f1))).collect(),
        })
        .collect();
    ComparisonTable { columns, rows }
}
