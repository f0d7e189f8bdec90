use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::basis::Period;
use crate::geom::Domain;

use super::{PipelineError, Result};

/// Join keys of the Census API geography columns, in geoid order.
pub const CENSUS_KEYS: [&str; 4] = ["state", "county", "tract", "block group"];

/// One record of an estimate table. `None` marks a missing value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateRow {
    pub geoid: String,
    pub year: Option<i32>,
    pub lookback: Option<u32>,
    pub est: Option<f64>,
    pub moe: Option<f64>,
}

/// `Φ⁻¹(1 − α/2)`.
pub fn normal_quantile_upper(alpha: f64) -> f64 {
    Normal::standard().inverse_cdf(1.0 - alpha / 2.0)
}

/// `(moe / Φ⁻¹(1 − α/2))²`.
pub fn moe_to_var(moe: f64, alpha: f64) -> Result<f64> {
    if !(moe >= 0.0) || !moe.is_finite() {
        return Err(PipelineError::Data(format!("margin of error must be finite and non-negative, got {moe}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(PipelineError::Config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let se = moe / normal_quantile_upper(alpha);
    Ok(se * se)
}

fn ingest_err(file: &Path, row: usize, reason: impl Into<String>) -> PipelineError {
    PipelineError::Ingest { file: file.display().to_string(), row, reason: reason.into() }
}

/// Reads `geoid,year,lookback,est,moe`. Empty fields are missing; `row` in
/// errors counts data rows from 1.
pub fn read_estimates_csv(path: impl AsRef<Path>) -> Result<Vec<EstimateRow>> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| ingest_err(path, 0, e.to_string()))?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| ingest_err(path, 0, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let expected = ["geoid", "year", "lookback", "est", "moe"];
    if header != expected {
        return Err(ingest_err(path, 0, format!("header {header:?}, expected {expected:?}")));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| ingest_err(path, row, e.to_string()))?;
        let field = |k: usize| rec.get(k).filter(|s| !s.is_empty());
        let geoid = field(0).ok_or_else(|| ingest_err(path, row, "empty geoid"))?.to_string();
        let year = field(1)
            .map(|s| s.parse::<i32>().map_err(|_| ingest_err(path, row, format!("bad year '{s}'"))))
            .transpose()?;
        let lookback = field(2)
            .map(|s| s.parse::<u32>().map_err(|_| ingest_err(path, row, format!("bad lookback '{s}'"))))
            .transpose()?;
        let num = |k: usize, what: &str| {
            field(k)
                .map(|s| match s.parse::<f64>() {
                    Ok(x) if x.is_finite() => Ok(x),
                    _ => Err(ingest_err(path, row, format!("bad {what} '{s}'"))),
                })
                .transpose()
        };
        let est = num(3, "est")?;
        let moe = num(4, "moe")?;
        if let Some(m) = moe {
            if m < 0.0 {
                return Err(ingest_err(path, row, format!("negative moe {m}")));
            }
        }
        rows.push(EstimateRow { geoid, year, lookback, est, moe });
    }
    Ok(rows)
}

pub fn write_estimates_csv(path: impl AsRef<Path>, rows: &[EstimateRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref()).map_err(|e| PipelineError::Io(e.into()))?;
    let fmt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
    w.write_record(["geoid", "year", "lookback", "est", "moe"]).map_err(|e| PipelineError::Io(e.into()))?;
    for r in rows {
        w.write_record([
            r.geoid.clone(),
            r.year.map(|y| y.to_string()).unwrap_or_default(),
            r.lookback.map(|l| l.to_string()).unwrap_or_default(),
            fmt(r.est),
            fmt(r.moe),
        ])
        .map_err(|e| PipelineError::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

struct CensusTable {
    /// Geography key to value (None for sentinels and nulls).
    values: HashMap<String, Option<f64>>,
    order: Vec<String>,
}

fn cell_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn read_census_table(path: &Path) -> Result<(Vec<String>, CensusTable)> {
    let text = std::fs::read_to_string(path)?;
    let json: Value = serde_json::from_str(&text).map_err(|e| ingest_err(path, 0, e.to_string()))?;
    let arrays = json.as_array().ok_or_else(|| ingest_err(path, 0, "top level is not an array"))?;
    let header: Vec<String> = arrays
        .first()
        .and_then(Value::as_array)
        .ok_or_else(|| ingest_err(path, 0, "missing header row"))?
        .iter()
        .map(|v| cell_text(v).ok_or_else(|| ingest_err(path, 0, "non-string header cell")))
        .collect::<Result<_>>()?;
    let key_cols: Vec<usize> = CENSUS_KEYS
        .iter()
        .filter_map(|k| header.iter().position(|h| h == k))
        .collect();
    if key_cols.is_empty() {
        return Err(ingest_err(path, 0, "header has none of the geography columns state/county/tract/block group"));
    }
    let value_col = header
        .iter()
        .position(|h| h != "NAME" && h != "GEO_ID" && !CENSUS_KEYS.contains(&h.as_str()))
        .ok_or_else(|| ingest_err(path, 0, "header has no value column"))?;

    let mut values = HashMap::new();
    let mut order = Vec::new();
    for (i, rec) in arrays.iter().enumerate().skip(1) {
        let rec = rec.as_array().ok_or_else(|| ingest_err(path, i, "record is not an array"))?;
        if rec.len() != header.len() {
            return Err(ingest_err(path, i, format!("{} cells, header has {}", rec.len(), header.len())));
        }
        let mut key = String::new();
        for &c in &key_cols {
            key.push_str(&cell_text(&rec[c]).ok_or_else(|| ingest_err(path, i, "missing geography key"))?);
        }
        let value = match &rec[value_col] {
            Value::Null => None,
            v => {
                let s = cell_text(v).ok_or_else(|| ingest_err(path, i, "value is not a number"))?;
                let x: f64 = s.trim().parse().map_err(|_| ingest_err(path, i, format!("bad number '{s}'")))?;
                // The API encodes suppressed and unavailable cells as large negatives.
                (x.is_finite() && x >= 0.0).then_some(x)
            }
        };
        if values.insert(key.clone(), value).is_some() {
            return Err(ingest_err(path, i, format!("duplicate geography {key}")));
        }
        order.push(key);
    }
    let keys = key_cols.iter().map(|&c| header[c].clone()).collect();
    Ok((keys, CensusTable { values, order }))
}

/// Joins a Census API estimate file with its margin-of-error file on the
/// geography columns. The geoid is the concatenation of those columns.
pub fn ingest_census_json(est_path: impl AsRef<Path>, moe_path: impl AsRef<Path>) -> Result<Vec<EstimateRow>> {
    let (est_keys, est) = read_census_table(est_path.as_ref())?;
    let (moe_keys, moe) = read_census_table(moe_path.as_ref())?;
    if est_keys != moe_keys {
        return Err(ingest_err(
            moe_path.as_ref(),
            0,
            format!("geography columns {moe_keys:?} differ from {est_keys:?}"),
        ));
    }
    Ok(est
        .order
        .iter()
        .map(|g| EstimateRow {
            geoid: g.clone(),
            year: None,
            lookback: None,
            est: est.values[g],
            moe: moe.values.get(g).copied().flatten(),
        })
        .collect())
}

/// Direct estimates attached to one source geography and period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceSupport {
    pub domain: Domain,
    pub year: i32,
    pub lookback: u32,
    pub est: Vec<Option<f64>>,
    pub moe: Vec<Option<f64>>,
    pub var: Vec<Option<f64>>,
}

impl SourceSupport {
    /// Matches rows to the domain's units by geoid. Rows carrying a year or
    /// lookback for a different period are ignored; units without a row are
    /// missing.
    pub fn from_rows(domain: Domain, year: i32, lookback: u32, rows: &[EstimateRow], alpha: f64) -> Result<Self> {
        let mut by_id: HashMap<&str, &EstimateRow> = HashMap::new();
        for r in rows {
            if r.year.is_some_and(|y| y != year) || r.lookback.is_some_and(|l| l != lookback) {
                continue;
            }
            if by_id.insert(r.geoid.as_str(), r).is_some() {
                return Err(PipelineError::Data(format!(
                    "duplicate estimate for {} in {year} ({lookback}-year)",
                    r.geoid
                )));
            }
        }
        let n = domain.len();
        let (mut est, mut moe, mut var) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        for id in domain.ids() {
            let row = by_id.get(id);
            let e = row.and_then(|r| r.est);
            let m = row.and_then(|r| r.moe);
            est.push(e);
            moe.push(m);
            var.push(m.map(|m| moe_to_var(m, alpha)).transpose()?);
        }
        Ok(SourceSupport { domain, year, lookback, est, moe, var })
    }

    pub fn period(&self) -> Period {
        Period::ending(self.year, self.lookback).expect("lookback validated at construction")
    }

    pub fn len(&self) -> usize {
        self.domain.len()
    }

    pub fn is_empty(&self) -> bool {
        self.domain.is_empty()
    }

    /// Keeps the units with a finite estimate and positive variance.
    pub fn na_filtered(&self) -> SourceSupport {
        let keep: Vec<bool> = (0..self.len())
            .map(|i| {
                self.est[i].is_some_and(f64::is_finite) && self.var[i].is_some_and(|v| v.is_finite() && v > 0.0)
            })
            .collect();
        let pick = |xs: &[Option<f64>]| xs.iter().zip(&keep).filter(|(_, k)| **k).map(|(x, _)| *x).collect();
        SourceSupport {
            domain: self.domain.retain_indices(|i| keep[i]),
            year: self.year,
            lookback: self.lookback,
            est: pick(&self.est),
            moe: pick(&self.moe),
            var: pick(&self.var),
        }
    }

    /// Estimates and variances of a filtered support.
    pub fn values(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let missing = || PipelineError::Data(format!("source {} ({}) has missing values", self.domain.label(), self.year));
        let est = self.est.iter().map(|x| x.ok_or_else(missing)).collect::<Result<_>>()?;
        let var = self.var.iter().map(|x| x.ok_or_else(missing)).collect::<Result<_>>()?;
        Ok((est, var))
    }
}
