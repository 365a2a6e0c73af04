//! Audit sampling for manual valid-conflict annotation.
//!
//! A fixed-size random subset of each perturbation group is exported as a
//! CSV sheet with a blank `valid` column; annotators fill it in and the
//! re-imported sheet yields a per-group valid-conflict rate.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Condition, DatasetError, PerturbationType, Sample};

/// One row of the audit sheet. `valid` is blank until annotated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRow {
    pub id: String,
    pub perturbation_type: PerturbationType,
    pub valid: Option<bool>,
}

/// Audit sheet grouped by perturbation type (group order is the enum order,
/// ids sorted within each group).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditSheet {
    pub rows: Vec<AuditRow>,
}

impl AuditSheet {
    pub fn ids_for(&self, ptype: PerturbationType) -> Vec<&str> {
        self.rows
            .iter()
            .filter(|r| r.perturbation_type == ptype)
            .map(|r| r.id.as_str())
            .collect()
    }
}

/// Per-group annotation summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditGroupSummary {
    pub total_rows: u64,
    pub annotated: u64,
    pub valid: u64,
    /// valid / annotated; `None` until at least one row is annotated.
    pub valid_conflict_rate: Option<f64>,
}

/// Draw up to `per_group` ids from every perturbation group, deterministically
/// under `seed`. Groups smaller than `per_group` are taken whole.
pub fn audit_sample(dataset: &[Sample], per_group: usize, seed: u64) -> AuditSheet {
    let mut groups: BTreeMap<PerturbationType, Vec<&str>> = BTreeMap::new();
    for sample in dataset {
        if let Condition::Perturbed { perturbation } = sample.condition {
            groups.entry(perturbation).or_default().push(&sample.id);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for ptype in PerturbationType::ALL {
        let Some(ids) = groups.get(&ptype) else { continue };
        let mut chosen: Vec<&str> = if ids.len() <= per_group {
            ids.clone()
        } else {
            rand::seq::index::sample(&mut rng, ids.len(), per_group)
                .into_iter()
                .map(|i| ids[i])
                .collect()
        };
        chosen.sort_unstable();
        rows.extend(chosen.into_iter().map(|id| AuditRow {
            id: id.to_string(),
            perturbation_type: ptype,
            valid: None,
        }));
    }
    AuditSheet { rows }
}

/// Write the sheet as CSV with columns {id, perturbation_type, valid}.
pub fn export_audit_csv(sheet: &AuditSheet, path: &Path) -> Result<(), DatasetError> {
    let mut writer = csv::Writer::from_path(path)
        .map_err(|e| DatasetError::Csv(path.to_path_buf(), e))?;
    writer
        .write_record(["id", "perturbation_type", "valid"])
        .map_err(|e| DatasetError::Csv(path.to_path_buf(), e))?;
    for row in &sheet.rows {
        let valid = match row.valid {
            Some(true) => "yes",
            Some(false) => "no",
            None => "",
        };
        writer
            .write_record([row.id.as_str(), row.perturbation_type.label(), valid])
            .map_err(|e| DatasetError::Csv(path.to_path_buf(), e))?;
    }
    writer
        .flush()
        .map_err(|e| DatasetError::Io(path.to_path_buf(), e))?;
    Ok(())
}

/// Re-import an annotated sheet. Accepts yes/no, true/false, y/n, 1/0
/// (case-insensitive); blank cells stay unannotated.
pub fn import_audit_csv(path: &Path) -> Result<AuditSheet, DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| DatasetError::Csv(path.to_path_buf(), e))?;
    let mut rows = Vec::new();
    for (idx, result) in reader.records().enumerate() {
        let record = result.map_err(|e| DatasetError::Csv(path.to_path_buf(), e))?;
        let id = record.get(0).unwrap_or("").trim().to_string();
        if id.is_empty() {
            continue;
        }
        let ptype_text = record.get(1).unwrap_or("").trim();
        let ptype: PerturbationType = ptype_text.parse().map_err(|_| DatasetError::Schema {
            path: path.to_path_buf(),
            errors: vec![super::LineError {
                line: idx + 2,
                field: Some("perturbation_type".to_string()),
                message: format!("unknown value `{ptype_text}`"),
            }],
        })?;
        let valid = match record.get(2).unwrap_or("").trim().to_lowercase().as_str() {
            "" => None,
            "yes" | "true" | "y" | "1" => Some(true),
            "no" | "false" | "n" | "0" => Some(false),
            other => {
                return Err(DatasetError::Schema {
                    path: path.to_path_buf(),
                    errors: vec![super::LineError {
                        line: idx + 2,
                        field: Some("valid".to_string()),
                        message: format!("unparseable annotation `{other}`"),
                    }],
                })
            }
        };
        rows.push(AuditRow {
            id,
            perturbation_type: ptype,
            valid,
        });
    }
    Ok(AuditSheet { rows })
}

/// Per-group valid-conflict rates from an annotated sheet.
pub fn audit_summary(sheet: &AuditSheet) -> BTreeMap<PerturbationType, AuditGroupSummary> {
    let mut out: BTreeMap<PerturbationType, AuditGroupSummary> = BTreeMap::new();
    for row in &sheet.rows {
        let entry = out.entry(row.perturbation_type).or_insert(AuditGroupSummary {
            total_rows: 0,
            annotated: 0,
            valid: 0,
            valid_conflict_rate: None,
        });
        entry.total_rows += 1;
        if let Some(v) = row.valid {
            entry.annotated += 1;
            if v {
                entry.valid += 1;
            }
        }
    }
    for summary in out.values_mut() {
        if summary.annotated > 0 {
            summary.valid_conflict_rate = Some(summary.valid as f64 / summary.annotated as f64);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Corpus, Sample};

    fn perturbed_dataset(per_type: usize) -> Vec<Sample> {
        let mut out = Vec::new();
        for ptype in PerturbationType::ALL {
            for i in 0..per_type {
                let mut s = Sample::new(
                    format!("{}-{i:04}", ptype.label()),
                    Corpus::Custom,
                    "Q?",
                    "C",
                    ["a"],
                    Condition::Perturbed { perturbation: ptype },
                );
                s.provenance.insert("k".into(), "v".into());
                out.push(s);
            }
        }
        out
    }

    #[test]
    fn draws_fifty_distinct_ids_per_group() {
        let data = perturbed_dataset(563);
        let sheet = audit_sample(&data, 50, 17);
        for ptype in PerturbationType::ALL {
            let ids = sheet.ids_for(ptype);
            assert_eq!(ids.len(), 50, "{ptype}");
            let unique: std::collections::BTreeSet<_> = ids.iter().collect();
            assert_eq!(unique.len(), 50);
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let data = perturbed_dataset(200);
        assert_eq!(audit_sample(&data, 50, 3), audit_sample(&data, 50, 3));
        assert_ne!(
            audit_sample(&data, 50, 3).rows,
            audit_sample(&data, 50, 4).rows
        );
    }

    #[test]
    fn small_group_taken_whole() {
        let data = perturbed_dataset(12);
        let sheet = audit_sample(&data, 50, 3);
        for ptype in PerturbationType::ALL {
            assert_eq!(sheet.ids_for(ptype).len(), 12);
        }
    }

    #[test]
    fn csv_roundtrip_and_rate() {
        let data = perturbed_dataset(60);
        let mut sheet = audit_sample(&data, 50, 5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("audit.csv");
        export_audit_csv(&sheet, &path).unwrap();
        let blank = import_audit_csv(&path).unwrap();
        assert_eq!(blank, sheet);

        // Annotate entity_swap rows: 46 valid out of 50.
        let mut marked = 0;
        for row in sheet.rows.iter_mut() {
            if row.perturbation_type == PerturbationType::EntitySwap {
                row.valid = Some(marked < 46);
                marked += 1;
            }
        }
        export_audit_csv(&sheet, &path).unwrap();
        let annotated = import_audit_csv(&path).unwrap();
        let summary = audit_summary(&annotated);
        let es = &summary[&PerturbationType::EntitySwap];
        assert_eq!(es.annotated, 50);
        assert_eq!(es.valid, 46);
        let rate = es.valid_conflict_rate.unwrap();
        assert!((rate - 0.92).abs() < 1e-12, "{rate}");
        assert!(summary[&PerturbationType::TemporalShift]
            .valid_conflict_rate
            .is_none());
    }
}
