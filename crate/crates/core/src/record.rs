//! Per-sample evaluation records: the unit every run produces and every
//! statistic consumes. Records are serialized one-per-line (JSONL) so runs
//! are appendable and resumable; a failed sample is a typed failure row,
//! never a fabricated prediction.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Condition;
use crate::extract::ExtractionPath;
use crate::gate::Route;
use crate::intervene::InterventionKind;
use crate::prompts::MethodKind;

/// Outcome of one (sample, method) evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub sample_id: String,
    pub method: MethodKind,
    pub condition: Condition,
    /// Template actually rendered; differs from `method` only for the gated
    /// variant, where the router picks the deep or bypass rendering.
    pub rendered_method: MethodKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub route: Option<Route>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate_max_score: Option<f64>,
    /// Full raw completion; kept so traces can be re-parsed for
    /// interventions and per-example predictions can be released.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction_raw: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prediction_normalized: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extraction_path: Option<ExtractionPath>,
    pub correct: bool,
    pub intervention: InterventionKind,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub from_cache: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl EvalRecord {
    /// Group label used by per-cell statistics.
    pub fn group_label(&self) -> &'static str {
        self.condition.group_label()
    }

    /// Key identifying one unit of work inside a run.
    pub fn work_key(&self) -> (String, MethodKind) {
        (self.sample_id.clone(), self.method)
    }

    /// Minimal record for tests and synthetic statistics.
    pub fn synthetic(id: &str, method: MethodKind, condition: Condition, correct: bool) -> Self {
        Self {
            sample_id: id.to_string(),
            method,
            condition,
            rendered_method: method,
            route: None,
            gate_max_score: None,
            raw_text: None,
            prediction_raw: None,
            prediction_normalized: None,
            extraction_path: None,
            correct,
            intervention: InterventionKind::None,
            prompt_tokens: 0,
            completion_tokens: 0,
            from_cache: false,
            failure: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("i/o error on {0}: {1}")]
    Io(std::path::PathBuf, #[source] std::io::Error),
    #[error("bad record on line {line} of {path}: {message}")]
    Parse {
        path: std::path::PathBuf,
        line: usize,
        message: String,
    },
}

/// Read a JSONL record file; missing file reads as empty (fresh run).
pub fn read_records(path: &Path) -> Result<Vec<EvalRecord>, RecordError> {
    let file = match std::fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(RecordError::Io(path.to_path_buf(), e)),
    };
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| RecordError::Io(path.to_path_buf(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: EvalRecord =
            serde_json::from_str(&line).map_err(|e| RecordError::Parse {
                path: path.to_path_buf(),
                line: lineno + 1,
                message: e.to_string(),
            })?;
        records.push(record);
    }
    Ok(records)
}

/// Write records as JSONL atomically (temp file + rename), sorted by
/// (sample id, method) so artifacts are byte-reproducible.
pub fn write_records_sorted(path: &Path, records: &mut Vec<EvalRecord>) -> Result<(), RecordError> {
    records.sort_by(|a, b| {
        (a.sample_id.as_str(), a.method.label()).cmp(&(b.sample_id.as_str(), b.method.label()))
    });
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut file =
            std::fs::File::create(&tmp).map_err(|e| RecordError::Io(tmp.clone(), e))?;
        for record in records.iter() {
            let line = serde_json::to_string(record).expect("record serializes");
            writeln!(file, "{line}").map_err(|e| RecordError::Io(tmp.clone(), e))?;
        }
    }
    std::fs::rename(&tmp, path).map_err(|e| RecordError::Io(path.to_path_buf(), e))?;
    Ok(())
}

/// Append one record to an open JSONL sink.
pub fn append_record(file: &mut std::fs::File, record: &EvalRecord) -> std::io::Result<()> {
    let line = serde_json::to_string(record).expect("record serializes");
    writeln!(file, "{line}")
}
