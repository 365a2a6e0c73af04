//! Controlled-conflict dataset construction.
//!
//! Source corpora arrive as JSONL ({id, question, context, answers, corpus,
//! label}); fact-verification labels are mapped to boolean gold answers at
//! load time so matching stays corpus-agnostic. Conflict datasets keep a
//! configurable clean fraction and partition the remainder uniformly (±1)
//! across the four perturbation axes via a seeded shuffle followed by
//! round-robin assignment. Misconception sets supply a common false belief
//! as the sole retrieved context.

pub mod audit;
pub mod engine;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::extract::AliasMap;
use engine::{EngineError, PerturbationEngine};

/// Source corpus of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corpus {
    Hotpotqa,
    Nq,
    Fever,
    Truthfulqa,
    Custom,
}

impl Corpus {
    pub fn label(&self) -> &'static str {
        match self {
            Corpus::Hotpotqa => "hotpotqa",
            Corpus::Nq => "nq",
            Corpus::Fever => "fever",
            Corpus::Truthfulqa => "truthfulqa",
            Corpus::Custom => "custom",
        }
    }
}

impl fmt::Display for Corpus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Corpus {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            Corpus::Hotpotqa,
            Corpus::Nq,
            Corpus::Fever,
            Corpus::Truthfulqa,
            Corpus::Custom,
        ]
        .into_iter()
        .find(|c| c.label() == s)
        .ok_or_else(|| DatasetError::UnknownCorpus(s.to_string()))
    }
}

/// The four single-axis context corruptions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationType {
    EntitySwap,
    TemporalShift,
    LogicalContradiction,
    DistractorEvidence,
}

impl PerturbationType {
    pub const ALL: [PerturbationType; 4] = [
        PerturbationType::EntitySwap,
        PerturbationType::TemporalShift,
        PerturbationType::LogicalContradiction,
        PerturbationType::DistractorEvidence,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            PerturbationType::EntitySwap => "entity_swap",
            PerturbationType::TemporalShift => "temporal_shift",
            PerturbationType::LogicalContradiction => "logical_contradiction",
            PerturbationType::DistractorEvidence => "distractor_evidence",
        }
    }
}

impl fmt::Display for PerturbationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for PerturbationType {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PerturbationType::ALL
            .into_iter()
            .find(|p| p.label() == s)
            .ok_or_else(|| DatasetError::UnknownPerturbation(s.to_string()))
    }
}

/// Evaluation condition of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Condition {
    Clean,
    Perturbed { perturbation: PerturbationType },
    MisconceptionInjected,
}

impl Condition {
    pub fn group_label(&self) -> &'static str {
        match self {
            Condition::Clean => "clean",
            Condition::Perturbed { perturbation } => perturbation.label(),
            Condition::MisconceptionInjected => "misconception_injected",
        }
    }

    pub fn is_adversarial(&self) -> bool {
        !matches!(self, Condition::Clean)
    }

    pub fn perturbation(&self) -> Option<PerturbationType> {
        match self {
            Condition::Perturbed { perturbation } => Some(*perturbation),
            _ => None,
        }
    }
}

/// Coarse condition key used by per-(method, condition) configuration maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionKey {
    Clean,
    EntitySwap,
    TemporalShift,
    LogicalContradiction,
    DistractorEvidence,
    MisconceptionInjected,
}

impl From<&Condition> for ConditionKey {
    fn from(c: &Condition) -> Self {
        match c {
            Condition::Clean => ConditionKey::Clean,
            Condition::Perturbed { perturbation } => match perturbation {
                PerturbationType::EntitySwap => ConditionKey::EntitySwap,
                PerturbationType::TemporalShift => ConditionKey::TemporalShift,
                PerturbationType::LogicalContradiction => ConditionKey::LogicalContradiction,
                PerturbationType::DistractorEvidence => ConditionKey::DistractorEvidence,
            },
            Condition::MisconceptionInjected => ConditionKey::MisconceptionInjected,
        }
    }
}

/// Provenance key for the answer the (possibly corrupted) context implies.
pub const PROVENANCE_IMPLIED_ANSWER: &str = "context_implied_answer";
/// Provenance key for the hash of the pre-perturbation context.
pub const PROVENANCE_ORIGINAL_CONTEXT: &str = "original_context_sha256";
/// Provenance key for the generator that produced a perturbed context.
pub const PROVENANCE_GENERATOR: &str = "generator";
/// Provenance flag set when an injected misconception does not actually
/// conflict with the truthful answer.
pub const PROVENANCE_DEGENERATE: &str = "degenerate_non_conflict";
/// Provenance key recording how the misconception was selected.
pub const PROVENANCE_MISCONCEPTION_CHOICE: &str = "misconception_choice";

/// One evaluation unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub source_corpus: Corpus,
    pub question: String,
    pub context: String,
    pub gold_answers: BTreeSet<String>,
    pub condition: Condition,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub provenance: BTreeMap<String, String>,
}

impl Sample {
    pub fn new<I, S>(
        id: impl Into<String>,
        source_corpus: Corpus,
        question: impl Into<String>,
        context: impl Into<String>,
        gold_answers: I,
        condition: Condition,
    ) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            id: id.into(),
            source_corpus,
            question: question.into(),
            context: context.into(),
            gold_answers: gold_answers.into_iter().map(Into::into).collect(),
            condition,
            provenance: BTreeMap::new(),
        }
    }

    pub fn is_clean(&self) -> bool {
        matches!(self.condition, Condition::Clean)
    }

    /// First gold answer in set order; sets are non-empty by invariant.
    pub fn primary_gold(&self) -> &str {
        self.gold_answers
            .iter()
            .next()
            .map(String::as_str)
            .unwrap_or("")
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.id.trim().is_empty() {
            return Err(DatasetError::InvalidSample("empty id".to_string()));
        }
        if self.gold_answers.is_empty() || self.gold_answers.iter().all(|g| g.trim().is_empty()) {
            return Err(DatasetError::InvalidSample(format!(
                "sample {}: empty gold answer set",
                self.id
            )));
        }
        if self.context.trim().is_empty() {
            return Err(DatasetError::InvalidSample(format!(
                "sample {}: empty context",
                self.id
            )));
        }
        Ok(())
    }
}

/// Counts describing a built dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub total_count: u64,
    pub clean_count: u64,
    pub per_perturbation_counts: BTreeMap<PerturbationType, u64>,
    pub source_counts: BTreeMap<Corpus, u64>,
    pub seed: u64,
}

impl DatasetManifest {
    /// Recompute counts from samples; `seed` is carried through.
    pub fn from_samples(samples: &[Sample], seed: u64) -> Self {
        let mut clean = 0u64;
        let mut per: BTreeMap<PerturbationType, u64> = BTreeMap::new();
        let mut sources: BTreeMap<Corpus, u64> = BTreeMap::new();
        for s in samples {
            *sources.entry(s.source_corpus).or_insert(0) += 1;
            match s.condition {
                Condition::Clean => clean += 1,
                Condition::Perturbed { perturbation } => {
                    *per.entry(perturbation).or_insert(0) += 1
                }
                Condition::MisconceptionInjected => {}
            }
        }
        Self {
            total_count: samples.len() as u64,
            clean_count: clean,
            per_perturbation_counts: per,
            source_counts: sources,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        let perturbed: u64 = self.per_perturbation_counts.values().sum();
        let misconception = self
            .total_count
            .saturating_sub(self.clean_count + perturbed);
        if self.clean_count + perturbed + misconception != self.total_count {
            return Err(DatasetError::ManifestInconsistent(
                "counts do not sum to total".to_string(),
            ));
        }
        if !self.per_perturbation_counts.is_empty() {
            let min = self.per_perturbation_counts.values().min().copied().unwrap_or(0);
            let max = self.per_perturbation_counts.values().max().copied().unwrap_or(0);
            if max - min > 1 {
                return Err(DatasetError::ManifestInconsistent(format!(
                    "per-perturbation counts not uniform (min {min}, max {max})"
                )));
            }
        }
        Ok(())
    }
}

/// Line-level schema diagnostic for corpus loading.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineError {
    pub line: usize,
    pub field: Option<String>,
    pub message: String,
}

impl fmt::Display for LineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.field {
            Some(field) => write!(f, "line {}: field `{}`: {}", self.line, field, self.message),
            None => write!(f, "line {}: {}", self.line, self.message),
        }
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("i/o error on {0}: {1}")]
    Io(PathBuf, #[source] std::io::Error),
    #[error("schema violations in {path}: {}", format_line_errors(errors))]
    Schema { path: PathBuf, errors: Vec<LineError> },
    #[error("empty corpus: {0}")]
    EmptyCorpus(PathBuf),
    #[error("unknown corpus: {0}")]
    UnknownCorpus(String),
    #[error("unknown perturbation type: {0}")]
    UnknownPerturbation(String),
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("clean_fraction {0} outside [0, 1]")]
    InvalidCleanFraction(f64),
    #[error("pool must be all-clean but sample {0} is not")]
    PoolNotClean(String),
    #[error("pool too small: {adversarial} adversarial slots cannot cover all 4 perturbation types")]
    PoolTooSmall { adversarial: usize },
    #[error("sample {0} is not clean; only clean samples can be perturbed")]
    NotClean(String),
    #[error("perturbation engine returned an unchanged context for sample {sample_id} after {attempts} attempts")]
    NoOpPerturbation { sample_id: String, attempts: u32 },
    #[error("perturbation engine failed for sample {sample_id}: {source}")]
    Engine {
        sample_id: String,
        #[source]
        source: EngineError,
    },
    #[error("misconception text is empty")]
    EmptyMisconception,
    #[error("question text is empty")]
    EmptyQuestion,
    #[error("truthful answer set is empty")]
    EmptyTruthfulAnswers,
    #[error("manifest inconsistent: {0}")]
    ManifestInconsistent(String),
    #[error("duplicate sample id: {0}")]
    DuplicateId(String),
    #[error("csv error on {0}: {1}")]
    Csv(PathBuf, #[source] csv::Error),
}

fn format_line_errors(errors: &[LineError]) -> String {
    const SHOWN: usize = 10;
    let mut parts: Vec<String> = errors.iter().take(SHOWN).map(|e| e.to_string()).collect();
    if errors.len() > SHOWN {
        parts.push(format!("... and {} more", errors.len() - SHOWN));
    }
    parts.join("; ")
}

#[derive(Debug, Deserialize)]
struct CorpusRecord {
    id: Option<String>,
    question: Option<String>,
    context: Option<String>,
    answers: Option<Vec<String>>,
    corpus: Option<String>,
    label: Option<String>,
}

/// Load a source corpus file (JSONL). Every record becomes a clean sample;
/// fact-verification labels map to boolean gold answers; malformed lines are
/// reported with their line numbers rather than dropped.
pub fn load_corpus(path: &Path, corpus: Corpus) -> Result<Vec<Sample>, DatasetError> {
    let file = open_file(path)?;
    let reader = BufReader::new(file);
    let mut samples = Vec::new();
    let mut errors = Vec::new();
    let mut seen_ids: BTreeSet<String> = BTreeSet::new();

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| DatasetError::Io(path.to_path_buf(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CorpusRecord = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                errors.push(LineError {
                    line: lineno,
                    field: None,
                    message: format!("invalid JSON: {e}"),
                });
                continue;
            }
        };
        match record_to_sample(record, corpus, lineno, &mut seen_ids) {
            Ok(sample) => samples.push(sample),
            Err(le) => errors.push(le),
        }
    }

    if !errors.is_empty() {
        return Err(DatasetError::Schema {
            path: path.to_path_buf(),
            errors,
        });
    }
    if samples.is_empty() {
        return Err(DatasetError::EmptyCorpus(path.to_path_buf()));
    }
    Ok(samples)
}

fn record_to_sample(
    record: CorpusRecord,
    corpus: Corpus,
    lineno: usize,
    seen_ids: &mut BTreeSet<String>,
) -> Result<Sample, LineError> {
    let field_err = |field: &str, message: &str| LineError {
        line: lineno,
        field: Some(field.to_string()),
        message: message.to_string(),
    };

    let id = match record.id {
        Some(id) if !id.trim().is_empty() => id,
        _ => return Err(field_err("id", "missing or empty")),
    };
    if !seen_ids.insert(id.clone()) {
        return Err(field_err("id", &format!("duplicate id `{id}`")));
    }
    let question = match record.question {
        Some(q) if !q.trim().is_empty() => q,
        _ => return Err(field_err("question", "missing or empty")),
    };
    let context = match record.context {
        Some(c) if !c.trim().is_empty() => c,
        _ => return Err(field_err("context", "missing or empty")),
    };
    if let Some(file_corpus) = &record.corpus {
        match Corpus::from_str(file_corpus) {
            Ok(c) if c == corpus => {}
            Ok(c) => {
                return Err(field_err(
                    "corpus",
                    &format!("record says `{c}` but file was loaded as `{corpus}`"),
                ))
            }
            Err(_) => return Err(field_err("corpus", &format!("unknown corpus `{file_corpus}`"))),
        }
    }

    let gold_answers: BTreeSet<String> = if corpus == Corpus::Fever {
        let label = match record.label {
            Some(l) if !l.trim().is_empty() => l,
            _ => return Err(field_err("label", "missing or empty (required for fever)")),
        };
        match fever_label_to_gold(&label) {
            Some(g) => [g.to_string()].into_iter().collect(),
            None => return Err(field_err("label", &format!("unmapped label `{label}`"))),
        }
    } else {
        match record.answers {
            Some(answers) if answers.iter().any(|a| !a.trim().is_empty()) => answers
                .into_iter()
                .filter(|a| !a.trim().is_empty())
                .collect(),
            _ => return Err(field_err("answers", "missing or empty")),
        }
    };

    Ok(Sample {
        id,
        source_corpus: corpus,
        question,
        context,
        gold_answers,
        condition: Condition::Clean,
        provenance: BTreeMap::new(),
    })
}

/// Fact-verification label mapping: supports/true/yes → "true",
/// refutes/false/no/contradicts → "false". Case-insensitive.
pub fn fever_label_to_gold(label: &str) -> Option<&'static str> {
    match label.to_lowercase().as_str() {
        "supports" | "true" | "yes" => Some("true"),
        "refutes" | "false" | "no" | "contradicts" => Some("false"),
        _ => None,
    }
}

/// Number of no-op retries before a perturbation is rejected.
pub const DEFAULT_NOOP_RETRIES: u32 = 3;

/// Perturb a clean sample along one axis. The engine output is rejected and
/// retried when it leaves the context unchanged; gold answers are never
/// touched (the gold remains the true answer and the corrupted context now
/// conflicts with it).
pub fn perturb(
    sample: &Sample,
    ptype: PerturbationType,
    engine: &dyn PerturbationEngine,
) -> Result<Sample, DatasetError> {
    perturb_with_retries(sample, ptype, engine, DEFAULT_NOOP_RETRIES)
}

pub fn perturb_with_retries(
    sample: &Sample,
    ptype: PerturbationType,
    engine: &dyn PerturbationEngine,
    max_retries: u32,
) -> Result<Sample, DatasetError> {
    if !sample.is_clean() {
        return Err(DatasetError::NotClean(sample.id.clone()));
    }
    let attempts = max_retries.max(1);
    let mut produced = None;
    for _ in 0..attempts {
        let out = engine.perturb(sample, ptype).map_err(|source| DatasetError::Engine {
            sample_id: sample.id.clone(),
            source,
        })?;
        if out.context != sample.context {
            produced = Some(out);
            break;
        }
    }
    let out = produced.ok_or_else(|| DatasetError::NoOpPerturbation {
        sample_id: sample.id.clone(),
        attempts,
    })?;

    let mut perturbed = sample.clone();
    perturbed.condition = Condition::Perturbed { perturbation: ptype };
    perturbed.context = out.context;
    perturbed.provenance.insert(
        PROVENANCE_ORIGINAL_CONTEXT.to_string(),
        sha256_hex(sample.context.as_bytes()),
    );
    perturbed
        .provenance
        .insert(PROVENANCE_GENERATOR.to_string(), engine.id().to_string());
    if let Some(implied) = out.implied_answer {
        perturbed
            .provenance
            .insert(PROVENANCE_IMPLIED_ANSWER.to_string(), implied);
    }
    Ok(perturbed)
}

/// Build a controlled-conflict dataset from an all-clean pool.
///
/// `round(clean_fraction * N)` samples stay clean; the remainder is
/// partitioned uniformly (±1) across the four perturbation types by a seeded
/// shuffle followed by round-robin assignment, then transformed through the
/// engine. Output preserves pool order. Deterministic under a fixed seed
/// (given a deterministic engine).
pub fn build_conflict_dataset(
    pool: &[Sample],
    engine: &dyn PerturbationEngine,
    clean_fraction: f64,
    seed: u64,
) -> Result<(Vec<Sample>, DatasetManifest), DatasetError> {
    if !(0.0..=1.0).contains(&clean_fraction) {
        return Err(DatasetError::InvalidCleanFraction(clean_fraction));
    }
    for s in pool {
        if !s.is_clean() {
            return Err(DatasetError::PoolNotClean(s.id.clone()));
        }
    }
    let n = pool.len();
    let n_clean = ((clean_fraction * n as f64).round() as usize).min(n);
    let n_adv = n - n_clean;
    if n_adv > 0 && n_adv < PerturbationType::ALL.len() {
        return Err(DatasetError::PoolTooSmall { adversarial: n_adv });
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut assignment: Vec<Option<PerturbationType>> = vec![None; n];
    for (slot, &pool_idx) in order.iter().skip(n_clean).enumerate() {
        assignment[pool_idx] = Some(PerturbationType::ALL[slot % PerturbationType::ALL.len()]);
    }

    let mut out = Vec::with_capacity(n);
    for (idx, sample) in pool.iter().enumerate() {
        match assignment[idx] {
            Some(ptype) => out.push(perturb(sample, ptype, engine)?),
            None => out.push(sample.clone()),
        }
    }

    let manifest = DatasetManifest::from_samples(&out, seed);
    manifest.validate()?;
    Ok((out, manifest))
}

/// Build a worst-case compliance sample: the misconception becomes the sole
/// retrieved context while the gold set stays truthful.
pub fn inject_misconception(
    question: &str,
    misconception: &str,
    truthful_answers: &BTreeSet<String>,
) -> Result<Sample, DatasetError> {
    let id = format!("misconception-{}", &sha256_hex(question.as_bytes())[..12]);
    inject_misconception_with_id(&id, question, misconception, truthful_answers)
}

pub fn inject_misconception_with_id(
    id: &str,
    question: &str,
    misconception: &str,
    truthful_answers: &BTreeSet<String>,
) -> Result<Sample, DatasetError> {
    if misconception.trim().is_empty() {
        return Err(DatasetError::EmptyMisconception);
    }
    if question.trim().is_empty() {
        return Err(DatasetError::EmptyQuestion);
    }
    if truthful_answers.is_empty() || truthful_answers.iter().all(|a| a.trim().is_empty()) {
        return Err(DatasetError::EmptyTruthfulAnswers);
    }

    let mut sample = Sample::new(
        id,
        Corpus::Truthfulqa,
        question,
        misconception,
        truthful_answers.iter().cloned(),
        Condition::MisconceptionInjected,
    );
    sample.provenance.insert(
        PROVENANCE_IMPLIED_ANSWER.to_string(),
        misconception.to_string(),
    );

    // Degenerate non-conflict: the "misconception" normalizes to one of the
    // truthful answers. Still constructed, but flagged for downstream audit.
    let aliases = AliasMap::default_map();
    let norm_mis = crate::extract::normalize(misconception, &aliases);
    let degenerate = truthful_answers
        .iter()
        .any(|t| crate::extract::normalize(t, &aliases) == norm_mis);
    if degenerate {
        sample
            .provenance
            .insert(PROVENANCE_DEGENERATE.to_string(), "true".to_string());
    }
    Ok(sample)
}

#[derive(Debug, Deserialize)]
struct TruthfulQaRecord {
    id: Option<String>,
    question: Option<String>,
    #[serde(default)]
    best_answer: Option<String>,
    #[serde(default)]
    correct_answers: Vec<String>,
    #[serde(default)]
    incorrect_answers: Vec<String>,
}

/// Load a misconception-injection set from TruthfulQA-style JSONL rows
/// ({id?, question, best_answer?, correct_answers, incorrect_answers}).
///
/// When several incorrect answers exist the first one is taken as the
/// misconception; the choice is recorded in provenance.
pub fn load_truthfulqa_misconceptions(path: &Path) -> Result<Vec<Sample>, DatasetError> {
    let file = open_file(path)?;
    let reader = BufReader::new(file);
    let mut samples = Vec::new();
    let mut errors = Vec::new();

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| DatasetError::Io(path.to_path_buf(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TruthfulQaRecord = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                errors.push(LineError {
                    line: lineno,
                    field: None,
                    message: format!("invalid JSON: {e}"),
                });
                continue;
            }
        };
        let question = match record.question {
            Some(q) if !q.trim().is_empty() => q,
            _ => {
                errors.push(LineError {
                    line: lineno,
                    field: Some("question".to_string()),
                    message: "missing or empty".to_string(),
                });
                continue;
            }
        };
        let misconception = match record.incorrect_answers.iter().find(|a| !a.trim().is_empty()) {
            Some(m) => m.clone(),
            None => {
                errors.push(LineError {
                    line: lineno,
                    field: Some("incorrect_answers".to_string()),
                    message: "no usable incorrect answer".to_string(),
                });
                continue;
            }
        };
        let mut truthful: BTreeSet<String> = record
            .correct_answers
            .iter()
            .filter(|a| !a.trim().is_empty())
            .cloned()
            .collect();
        if let Some(best) = &record.best_answer {
            if !best.trim().is_empty() {
                truthful.insert(best.clone());
            }
        }
        if truthful.is_empty() {
            errors.push(LineError {
                line: lineno,
                field: Some("correct_answers".to_string()),
                message: "no usable truthful answer".to_string(),
            });
            continue;
        }
        let id = record
            .id
            .filter(|i| !i.trim().is_empty())
            .unwrap_or_else(|| format!("truthfulqa-{lineno}"));
        match inject_misconception_with_id(&id, &question, &misconception, &truthful) {
            Ok(mut sample) => {
                sample.provenance.insert(
                    PROVENANCE_MISCONCEPTION_CHOICE.to_string(),
                    "first_incorrect".to_string(),
                );
                samples.push(sample);
            }
            Err(e) => errors.push(LineError {
                line: lineno,
                field: None,
                message: e.to_string(),
            }),
        }
    }

    if !errors.is_empty() {
        return Err(DatasetError::Schema {
            path: path.to_path_buf(),
            errors,
        });
    }
    if samples.is_empty() {
        return Err(DatasetError::EmptyCorpus(path.to_path_buf()));
    }
    Ok(samples)
}

/// Write a dataset as JSONL plus a manifest JSON file alongside
/// (`<stem>.manifest.json`).
pub fn save_dataset(
    path: &Path,
    samples: &[Sample],
    manifest: &DatasetManifest,
) -> Result<(), DatasetError> {
    let mut file =
        std::fs::File::create(path).map_err(|e| DatasetError::Io(path.to_path_buf(), e))?;
    for sample in samples {
        let line = serde_json::to_string(sample).expect("sample serializes");
        writeln!(file, "{line}").map_err(|e| DatasetError::Io(path.to_path_buf(), e))?;
    }
    let manifest_path = manifest_path_for(path);
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    std::fs::write(&manifest_path, text).map_err(|e| DatasetError::Io(manifest_path.clone(), e))?;
    Ok(())
}

pub fn manifest_path_for(dataset_path: &Path) -> PathBuf {
    let stem = dataset_path
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_else(|| "dataset".to_string());
    dataset_path.with_file_name(format!("{stem}.manifest.json"))
}

/// Load a dataset written by [`save_dataset`], enforcing id uniqueness and
/// per-sample invariants.
pub fn load_dataset(path: &Path) -> Result<Vec<Sample>, DatasetError> {
    let file = open_file(path)?;
    let reader = BufReader::new(file);
    let mut samples = Vec::new();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| DatasetError::Io(path.to_path_buf(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let sample: Sample = serde_json::from_str(&line).map_err(|e| DatasetError::Schema {
            path: path.to_path_buf(),
            errors: vec![LineError {
                line: lineno + 1,
                field: None,
                message: e.to_string(),
            }],
        })?;
        sample.validate()?;
        if !seen.insert(sample.id.clone()) {
            return Err(DatasetError::DuplicateId(sample.id));
        }
        samples.push(sample);
    }
    if samples.is_empty() {
        return Err(DatasetError::EmptyCorpus(path.to_path_buf()));
    }
    Ok(samples)
}

fn open_file(path: &Path) -> Result<std::fs::File, DatasetError> {
    std::fs::File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            DatasetError::MissingFile(path.to_path_buf())
        } else {
            DatasetError::Io(path.to_path_buf(), e)
        }
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(64);
    for b in digest {
        hex.push_str(&format!("{b:02x}"));
    }
    hex
}
