//! CSV tables and JSON summaries.
//!
//! CSV files are comma separated with a header row and LF line endings.
//! Floats are written in Rust's shortest round-trip form, so identical runs
//! produce identical bytes.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::risk::{RiskEstimate, SweepResult};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskRow {
    pub population: String,
    pub h: Option<f64>,
    pub mean_loss: f64,
    pub std_error: f64,
    pub replicates: u64,
    pub seed: u64,
}

impl RiskRow {
    pub fn new(population: impl Into<String>, h: Option<f64>, est: &RiskEstimate) -> Self {
        Self {
            population: population.into(),
            h,
            mean_loss: est.mean_loss,
            std_error: est.std_error,
            replicates: est.replicates,
            seed: est.seed,
        }
    }
}

pub fn csv_string(rows: &[RiskRow]) -> Result<String> {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    if rows.is_empty() {
        writer
            .write_record([
                "population",
                "h",
                "mean_loss",
                "std_error",
                "replicates",
                "seed",
            ])
            .map_err(|e| Error::Parse(e.to_string()))?;
    }
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| Error::Parse(e.to_string()))?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::Parse(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Total-risk rows, one per grid point, with population `all`.
pub fn sweep_total_rows(sweep: &SweepResult) -> Vec<RiskRow> {
    sweep
        .grid
        .iter()
        .zip(&sweep.total)
        .map(|(&h, est)| RiskRow::new("all", Some(h), est))
        .collect()
}

/// One row per (population, grid point), population-major.
pub fn sweep_population_rows(sweep: &SweepResult) -> Vec<RiskRow> {
    sweep
        .per_population
        .iter()
        .enumerate()
        .flat_map(|(j, ests)| {
            sweep
                .grid
                .iter()
                .zip(ests)
                .map(move |(&h, est)| RiskRow::new(j.to_string(), Some(h), est))
        })
        .collect()
}

pub fn write_csv(path: &Path, rows: &[RiskRow]) -> Result<()> {
    fs::write(path, csv_string(rows)?).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}
