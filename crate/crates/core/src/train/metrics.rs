//! Metrics rows and their CSV / JSON-lines serialization.

use super::EvalResult;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub split: String,
    pub acc_add: f64,
    pub acc_sub: f64,
    pub acc_mul: f64,
    pub acc_div: f64,
    pub overall: f64,
    pub aux_loss: f64,
    pub lm_loss: f64,
    pub mean_gate_distractor: f64,
    /// Informational only; excluded from reproducibility comparisons.
    pub wall_clock_s: f64,
}

impl MetricsRow {
    pub fn from_eval(
        epoch: usize,
        split: &str,
        ev: &EvalResult,
        aux_loss: f64,
        lm_loss: f64,
        wall_clock_s: f64,
    ) -> MetricsRow {
        MetricsRow {
            epoch,
            split: split.to_string(),
            acc_add: ev.op_accuracy(0),
            acc_sub: ev.op_accuracy(1),
            acc_mul: ev.op_accuracy(2),
            acc_div: ev.op_accuracy(3),
            overall: ev.accuracy(),
            aux_loss,
            lm_loss,
            mean_gate_distractor: ev.mean_gate_distractor,
            wall_clock_s,
        }
    }

    /// Equality up to the informational wall clock.
    pub fn same_results(&self, other: &MetricsRow) -> bool {
        self.epoch == other.epoch
            && self.split == other.split
            && self.acc_add == other.acc_add
            && self.acc_sub == other.acc_sub
            && self.acc_mul == other.acc_mul
            && self.acc_div == other.acc_div
            && self.overall == other.overall
            && self.aux_loss == other.aux_loss
            && self.lm_loss == other.lm_loss
            && self.mean_gate_distractor == other.mean_gate_distractor
    }

    pub const CSV_HEADER: &'static str = "epoch,split,acc_add,acc_sub,acc_mul,acc_div,overall,aux_loss,lm_loss,mean_gate_distractor,wall_clock_s";

    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.split,
            self.acc_add,
            self.acc_sub,
            self.acc_mul,
            self.acc_div,
            self.overall,
            self.aux_loss,
            self.lm_loss,
            self.mean_gate_distractor,
            self.wall_clock_s
        )
    }
}

fn io_err(path: &Path, source: std::io::Error) -> super::TrainError {
    super::TrainError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_csv(path: &Path, rows: &[MetricsRow]) -> Result<(), super::TrainError> {
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p).map_err(|e| io_err(path, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    writeln!(f, "{}", MetricsRow::CSV_HEADER).map_err(|e| io_err(path, e))?;
    for r in rows {
        writeln!(f, "{}", r.to_csv_line()).map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

pub fn write_jsonl(path: &Path, rows: &[MetricsRow]) -> Result<(), super::TrainError> {
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p).map_err(|e| io_err(path, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| io_err(path, e))?;
    for r in rows {
        let line = serde_json::to_string(r).expect("metrics row serializes");
        writeln!(f, "{line}").map_err(|e| io_err(path, e))?;
    }
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<MetricsRow>, super::TrainError> {
    let f = std::fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut rows = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|e| super::TrainError::Io {
            path: path.display().to_string(),
            source: std::io::Error::new(std::io::ErrorKind::InvalidData, e),
        })?);
    }
    Ok(rows)
}
