//! Dataset files: JSON lines, one record per line, preceded by a header
//! record carrying the generator config for provenance.

use super::{DataError, GenStats, SampleRecord};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub version: u32,
    pub config_hash: String,
    pub vocab_hash: String,
    pub seed: u64,
    pub stats: GenStats,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum Line {
    Header(DatasetHeader),
    Sample(SampleRecord),
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Write header + records to a JSONL file.
pub fn export(
    header: &DatasetHeader,
    records: &[SampleRecord],
    path: &Path,
) -> Result<(), DataError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_err(path, e))?;
    }
    let f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(f);
    let hline =
        serde_json::to_string(&Line::Header(header.clone())).expect("header serializes");
    writeln!(w, "{hline}").map_err(|e| io_err(path, e))?;
    for r in records {
        let line = serde_json::to_string(&Line::Sample(r.clone())).expect("record serializes");
        writeln!(w, "{line}").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Read a dataset file back: header plus records, structurally identical
/// to what was exported.
pub fn load(path: &Path) -> Result<(DatasetHeader, Vec<SampleRecord>), DataError> {
    let f = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(f);
    let mut header = None;
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: Line =
            serde_json::from_str(&line).map_err(|e| DataError::Parse { line: i + 1, source: e })?;
        match parsed {
            Line::Header(h) => header = Some(h),
            Line::Sample(s) => records.push(s),
        }
    }
    let header = header.ok_or_else(|| DataError::MissingHeader {
        path: path.display().to_string(),
    })?;
    Ok((header, records))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum PretrainLine {
    Header(DatasetHeader),
    Pretrain(super::PretrainRecord),
}

/// Write the pretraining corpus as JSONL with the same header scheme.
pub fn export_pretrain(
    header: &DatasetHeader,
    records: &[super::PretrainRecord],
    path: &Path,
) -> Result<(), DataError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_err(path, e))?;
    }
    let f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(f);
    let hline = serde_json::to_string(&PretrainLine::Header(header.clone())).unwrap();
    writeln!(w, "{hline}").map_err(|e| io_err(path, e))?;
    for r in records {
        let line = serde_json::to_string(&PretrainLine::Pretrain(r.clone())).unwrap();
        writeln!(w, "{line}").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

pub fn load_pretrain(
    path: &Path,
) -> Result<(DatasetHeader, Vec<super::PretrainRecord>), DataError> {
    let f = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let reader = BufReader::new(f);
    let mut header = None;
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: PretrainLine =
            serde_json::from_str(&line).map_err(|e| DataError::Parse { line: i + 1, source: e })?;
        match parsed {
            PretrainLine::Header(h) => header = Some(h),
            PretrainLine::Pretrain(r) => records.push(r),
        }
    }
    let header = header.ok_or_else(|| DataError::MissingHeader {
        path: path.display().to_string(),
    })?;
    Ok((header, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::Operator;
    use crate::data::{make_test_record, Split};
    use tempfile::tempdir;

    fn header() -> DatasetHeader {
        DatasetHeader {
            version: 1,
            config_hash: "abc".into(),
            vocab_hash: "def".into(),
            seed: 0,
            stats: GenStats {
                n_train_arith: 2,
                n_train_distractor: 0,
                n_eval_bigbench: 0,
                n_eval_alt: 0,
                n_eval_distractor: 0,
                dropped_by_filter: 0,
                topped_up: 0,
            },
        }
    }

    #[test]
    fn write_then_read_is_identity() {
        let records = vec![
            make_test_record(Operator::Add, 123, 456, Split::Train),
            make_test_record(Operator::Sub, 9, 17, Split::EvalBigbench),
        ];
        let dir = tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        export(&header(), &records, &path).unwrap();
        let (h, back) = load(&path).unwrap();
        assert_eq!(h.config_hash, "abc");
        assert_eq!(back, records);
        assert_eq!(back.len(), 2);
    }

    #[test]
    fn missing_header_detected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        let r = make_test_record(Operator::Mul, 3, 4, Split::Train);
        let line = serde_json::to_string(&super::Line::Sample(r)).unwrap();
        std::fs::write(&path, format!("{line}\n")).unwrap();
        assert!(matches!(load(&path), Err(DataError::MissingHeader { .. })));
    }

    #[test]
    fn io_failure_surfaces_path() {
        let err = load(Path::new("/nonexistent/nope.jsonl")).unwrap_err();
        assert!(err.to_string().contains("nope.jsonl"));
    }
}
