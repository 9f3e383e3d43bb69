use serde::{Deserialize, Serialize};

use super::experiment::{derive_seed, prepare_data, DATA_STREAM, run_cell, ExperimentSpec, Method};
use super::metrics::{EvalReport, Summary};
use crate::error::{Error, Result};

/// One point of a ratio curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub ratio: f64,
    pub method: Method,
    pub lp_count: usize,
    pub f1_median: f64,
    pub f1_iqr: f64,
    pub f1: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub reports: Vec<EvalReport>,
    /// Ratios that could not run, with the reason.
    pub skipped: Vec<(f64, String)>,
}

impl SweepResult {
    /// Plot-ready CSV with columns `ratio,method,f1_median,f1_iqr`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Validation(format!("writing CSV: {e}"));
        w.write_record(["ratio", "method", "f1_median", "f1_iqr"]).map_err(io)?;
        for r in &self.rows {
            w.write_record([
                r.ratio.to_string(),
                r.method.name().to_string(),
                format!("{:.2}", r.f1_median),
                format!("{:.2}", r.f1_iqr),
            ])
            .map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Validation(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("CSV of ASCII fields"))
    }

    pub fn rows_for(&self, method: Method) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().filter(move |r| r.method == method)
    }
}

/// Ascending, in `(0, 1]`, duplicates dropped with a warning.
pub fn normalize_ratios(ratios: &[f64]) -> Result<Vec<f64>> {
    if ratios.is_empty() {
        return Err(Error::Config("no ratios to sweep".into()));
    }
    let mut out: Vec<f64> = Vec::with_capacity(ratios.len());
    for &r in ratios {
        if !(r > 0.0 && r <= 1.0) {
            return Err(Error::Config(format!("ratio {r} is outside (0, 1]")));
        }
        match out.last() {
            Some(&last) if r == last => log::warn!("dropping duplicate ratio {r}"),
            Some(&last) if r < last => {
                return Err(Error::Config(format!("ratios must be ascending; {r} follows {last}")))
            }
            _ => out.push(r),
        }
    }
    Ok(out)
}

/// Run every method at `|LP| = round(r * |U|)` for each ratio, over the
/// template's seeds. Each seed loads its data once.
pub fn sweep_ratio(template: &ExperimentSpec, ratios: &[f64], methods: &[Method]) -> Result<SweepResult> {
    let ratios = normalize_ratios(ratios)?;
    if methods.is_empty() {
        return Err(Error::Config("no methods to sweep".into()));
    }
    let mut result = SweepResult::default();
    // (ratio, method) -> reports, in seed order
    let mut cells: Vec<Vec<EvalReport>> = vec![Vec::new(); ratios.len() * methods.len()];
    let mut failed = vec![None; ratios.len()];
    for &seed in &template.seeds {
        let data = prepare_data(&template.data, derive_seed(seed, DATA_STREAM))?;
        for (ri, &ratio) in ratios.iter().enumerate() {
            if failed[ri].is_some() {
                continue;
            }
            let lp_count = data.lp_count_for_ratio(ratio);
            if lp_count == 0 {
                failed[ri] = Some(format!("ratio {ratio} gives |LP| = 0"));
                continue;
            }
            for (mi, &method) in methods.iter().enumerate() {
                let spec = ExperimentSpec {
                    method,
                    lp_count: Some(lp_count),
                    lp_ratio: None,
                    ..template.clone()
                };
                spec.validate()?;
                let report = run_cell(&spec, &data, seed).map_err(|e| {
                    e.context(format!("{method} at ratio {ratio} (seed {seed})"))
                })?;
                cells[ri * methods.len() + mi].push(report);
            }
        }
    }
    for (ri, &ratio) in ratios.iter().enumerate() {
        if let Some(reason) = failed[ri].take() {
            log::warn!("{reason}; skipped");
            result.skipped.push((ratio, reason));
            continue;
        }
        for (mi, &method) in methods.iter().enumerate() {
            let reports = std::mem::take(&mut cells[ri * methods.len() + mi]);
            let f1: Vec<f64> = reports.iter().map(|r| r.f1).collect();
            let s = Summary::of(&f1);
            result.rows.push(SweepRow {
                ratio,
                method,
                lp_count: reports[0].lp_count,
                f1_median: s.median,
                f1_iqr: s.iqr,
                f1,
            });
            result.reports.extend(reports);
        }
    }
    Ok(result)
}

/// Largest minus smallest median F1 of a method over the given ratios.
pub fn spread(rows: &[&SweepRow]) -> f64 {
    let max = rows.iter().map(|r| r.f1_median).fold(f64::NEG_INFINITY, f64::max);
    let min = rows.iter().map(|r| r.f1_median).fold(f64::INFINITY, f64::min);
    if rows.is_empty() {
        0.0
    } else {
        max - min
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_hygiene() {
        assert_eq!(normalize_ratios(&[0.1, 0.1, 0.5]).unwrap(), vec![0.1, 0.5]);
        assert!(normalize_ratios(&[0.5, 0.1]).is_err());
        assert!(normalize_ratios(&[0.0]).is_err());
        assert!(normalize_ratios(&[1.5]).is_err());
    }
}
