//! Right-censored treatment datasets: CSV ingestion, validation,
//! standardization and seeded train/test splitting.
//!
//! The CSV layout is a mandatory header row with one column each for the
//! observed time, the event indicator and the treatment indicator. Every other
//! column is a numeric feature.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{CmheError, Result};
use crate::rng::{substream, Stream};

/// One subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub x: Vec<f64>,
    /// Time to event or censoring, strictly positive.
    pub time: f64,
    /// `true` when the event was observed, `false` when censored.
    pub event: bool,
    pub treated: bool,
}

impl SurvivalRecord {
    pub fn new(x: Vec<f64>, time: f64, event: bool, treated: bool) -> Result<Self> {
        if !(time.is_finite() && time > 0.0) {
            return Err(CmheError::invalid(format!("time must be finite and > 0, got {time}")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(CmheError::invalid("feature values must be finite"));
        }
        Ok(Self { x, time, event, treated })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SurvivalDataset {
    records: Vec<SurvivalRecord>,
    feature_names: Vec<String>,
}

impl SurvivalDataset {
    /// Validates that all records share the feature dimension, that there are
    /// at least two records and that at least one event is observed.
    pub fn new(records: Vec<SurvivalRecord>, feature_names: Vec<String>) -> Result<Self> {
        let d = feature_names.len();
        if records.len() < 2 {
            return Err(CmheError::Degenerate(format!(
                "dataset needs at least 2 records, got {}",
                records.len()
            )));
        }
        for (i, r) in records.iter().enumerate() {
            if r.x.len() != d {
                return Err(CmheError::shape(format!(
                    "record {i} has {} features, expected {d}",
                    r.x.len()
                )));
            }
            if !(r.time.is_finite() && r.time > 0.0) || r.x.iter().any(|v| !v.is_finite()) {
                return Err(CmheError::Sample {
                    sample: i,
                    message: "time must be finite and positive, features finite".into(),
                });
            }
        }
        if !records.iter().any(|r| r.event) {
            return Err(CmheError::Degenerate("dataset has no observed events".into()));
        }
        Ok(Self { records, feature_names })
    }

    pub fn records(&self) -> &[SurvivalRecord] {
        &self.records
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn n(&self) -> usize {
        self.records.len()
    }

    pub fn d(&self) -> usize {
        self.feature_names.len()
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.time).collect()
    }

    pub fn events(&self) -> Vec<bool> {
        self.records.iter().map(|r| r.event).collect()
    }

    pub fn n_events(&self) -> usize {
        self.records.iter().filter(|r| r.event).count()
    }

    /// Subset by row indices, in the order given.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let records = indices.iter().map(|&i| self.records[i].clone()).collect();
        Self::new(records, self.feature_names.clone())
    }

    pub fn into_records(self) -> Vec<SurvivalRecord> {
        self.records
    }
}

/// Names of the three required columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ColumnSchema {
    pub time: String,
    pub event: String,
    pub treatment: String,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        Self {
            time: "time".into(),
            event: "event".into(),
            treatment: "treatment".into(),
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &ColumnSchema) -> Result<SurvivalDataset> {
    let file = File::open(path.as_ref())?;
    read_csv(file, schema)
}

pub fn read_csv<R: Read>(reader: R, schema: &ColumnSchema) -> Result<SurvivalDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();

    let position = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CmheError::Schema(format!("missing required column `{name}`")))
    };
    let time_col = position(&schema.time)?;
    let event_col = position(&schema.event)?;
    let treat_col = position(&schema.treatment)?;

    let mut seen = HashMap::new();
    for (i, h) in headers.iter().enumerate() {
        if let Some(prev) = seen.insert(h.as_str(), i) {
            return Err(CmheError::Schema(format!("duplicate column `{h}` at positions {prev} and {i}")));
        }
    }

    let feature_cols: Vec<usize> =
        (0..headers.len()).filter(|&c| c != time_col && c != event_col && c != treat_col).collect();
    let feature_names: Vec<String> = feature_cols.iter().map(|&c| headers[c].clone()).collect();

    let mut records = Vec::new();
    for (row_idx, row) in rdr.records().enumerate() {
        let row = row?;
        let row_no = row_idx + 1;
        let cell = |c: usize| -> Result<f64> {
            let raw = row.get(c).unwrap_or("");
            raw.parse::<f64>().map_err(|_| CmheError::Validation {
                row: row_no,
                column: headers[c].clone(),
                message: format!("non-numeric value `{raw}`"),
            })
        };
        let indicator = |c: usize| -> Result<bool> {
            let v = cell(c)?;
            if v == 0.0 {
                Ok(false)
            } else if v == 1.0 {
                Ok(true)
            } else {
                Err(CmheError::Validation {
                    row: row_no,
                    column: headers[c].clone(),
                    message: format!("indicator must be 0 or 1, got {v}"),
                })
            }
        };

        let time = cell(time_col)?;
        if !(time.is_finite() && time > 0.0) {
            return Err(CmheError::Validation {
                row: row_no,
                column: headers[time_col].clone(),
                message: format!("time must be finite and > 0, got {time}"),
            });
        }
        let event = indicator(event_col)?;
        let treated = indicator(treat_col)?;
        let mut x = Vec::with_capacity(feature_cols.len());
        for &c in &feature_cols {
            let v = cell(c)?;
            if !v.is_finite() {
                return Err(CmheError::Validation {
                    row: row_no,
                    column: headers[c].clone(),
                    message: format!("feature must be finite, got {v}"),
                });
            }
            x.push(v);
        }
        records.push(SurvivalRecord { x, time, event, treated });
    }
    SurvivalDataset::new(records, feature_names)
}

/// Writes the dataset with the default column names. Floats use the shortest
/// representation that parses back to the identical value.
pub fn write_csv<W: Write>(dataset: &SurvivalDataset, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let schema = ColumnSchema::default();
    let mut header = vec![schema.time, schema.event, schema.treatment];
    header.extend(dataset.feature_names.iter().cloned());
    wtr.write_record(&header)?;
    for r in &dataset.records {
        let mut row = vec![
            r.time.to_string(),
            u8::from(r.event).to_string(),
            u8::from(r.treated).to_string(),
        ];
        row.extend(r.x.iter().map(f64::to_string));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_csv(dataset: &SurvivalDataset, path: impl AsRef<Path>) -> Result<()> {
    let file = File::create(path)?;
    write_csv(dataset, std::io::BufWriter::new(file))
}

/// Per-feature location and scale. Uses the population convention
/// (divide by n), so the column (1, 3) maps to (-1, 1) with sd = 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    /// Names of retained features, in output order.
    pub feature_names: Vec<String>,
    /// Column index of each retained feature in the raw input.
    pub source_columns: Vec<usize>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    /// Raw input dimension the stats were computed on.
    pub input_dim: usize,
}

const CONSTANT_FEATURE_SD: f64 = 1e-12;

impl StandardizationStats {
    /// Pass-through stats, used when standardization is switched off.
    pub fn identity(feature_names: &[String]) -> Self {
        let d = feature_names.len();
        Self {
            feature_names: feature_names.to_vec(),
            source_columns: (0..d).collect(),
            means: vec![0.0; d],
            sds: vec![1.0; d],
            input_dim: d,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.source_columns.len()
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(CmheError::shape(format!(
                "feature vector has length {}, expected {}",
                x.len(),
                self.input_dim
            )));
        }
        Ok(self
            .source_columns
            .iter()
            .zip(self.means.iter().zip(&self.sds))
            .map(|(&c, (m, s))| (x[c] - m) / s)
            .collect())
    }

    pub fn apply_dataset(&self, dataset: &SurvivalDataset) -> Result<SurvivalDataset> {
        let records = dataset
            .records
            .iter()
            .map(|r| {
                Ok(SurvivalRecord {
                    x: self.apply(&r.x)?,
                    ..r.clone()
                })
            })
            .collect::<Result<Vec<_>>>()?;
        SurvivalDataset::new(records, self.feature_names.clone())
    }
}

/// Centers and scales every feature; constant features are dropped with a
/// warning. Times and indicators are untouched.
pub fn standardize(dataset: &SurvivalDataset) -> Result<(SurvivalDataset, StandardizationStats)> {
    let n = dataset.n() as f64;
    let d = dataset.d();
    let mut stats = StandardizationStats {
        feature_names: Vec::new(),
        source_columns: Vec::new(),
        means: Vec::new(),
        sds: Vec::new(),
        input_dim: d,
    };
    for c in 0..d {
        let mean = dataset.records.iter().map(|r| r.x[c]).sum::<f64>() / n;
        let var = dataset.records.iter().map(|r| (r.x[c] - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        if sd <= CONSTANT_FEATURE_SD * mean.abs().max(1.0) {
            warn!("dropping constant feature `{}`", dataset.feature_names[c]);
            continue;
        }
        stats.feature_names.push(dataset.feature_names[c].clone());
        stats.source_columns.push(c);
        stats.means.push(mean);
        stats.sds.push(sd);
    }
    if stats.source_columns.is_empty() {
        return Err(CmheError::Degenerate("all features are constant".into()));
    }
    let out = stats.apply_dataset(dataset)?;
    Ok((out, stats))
}

/// Seeded shuffle split returning sorted row indices of (train, test).
pub fn split_indices(dataset: &SurvivalDataset, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(CmheError::invalid(format!("split fraction must lie in (0, 1), got {fraction}")));
    }
    let n = dataset.n();
    let n_train = (fraction * n as f64).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(CmheError::Degenerate(format!(
            "fraction {fraction} of {n} records leaves an empty split"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut substream(seed, Stream::Split));
    let mut train = idx[..n_train].to_vec();
    let mut test = idx[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    for (name, part) in [("train", &train), ("test", &test)] {
        if !part.iter().any(|&i| dataset.records[i].event) {
            return Err(CmheError::Degenerate(format!("{name} split contains no events")));
        }
    }
    Ok((train, test))
}

pub fn split(dataset: &SurvivalDataset, fraction: f64, seed: u64) -> Result<(SurvivalDataset, SurvivalDataset)> {
    let (train, test) = split_indices(dataset, fraction, seed)?;
    Ok((dataset.subset(&train)?, dataset.subset(&test)?))
}
