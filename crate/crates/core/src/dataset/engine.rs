//! Perturbation generators.
//!
//! The engine is an abstract handle so dataset construction can run against
//! deterministic offline generators in tests and against a real generation
//! model in production. The model-backed engine uses per-type instruction
//! templates that are configuration, not a fixed protocol; the shipped
//! defaults are a starting point and should be tuned per generator model.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{PerturbationType, Sample};
use crate::model::{DecodeConfig, ModelClient, ModelError};
use crate::prompts::{MethodKind, PromptText};

/// Output of one perturbation attempt: the corrupted context and, when the
/// generator knows it, the answer that context now implies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PerturbedContext {
    pub context: String,
    pub implied_answer: Option<String>,
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("model error: {0}")]
    Model(#[from] ModelError),
    #[error("engine produced no usable output: {0}")]
    EmptyOutput(String),
}

/// Generates a single-axis corruption of a clean sample's context.
pub trait PerturbationEngine: Send + Sync {
    /// Short identifier recorded in sample provenance.
    fn id(&self) -> &str;

    fn perturb(&self, sample: &Sample, ptype: PerturbationType)
        -> Result<PerturbedContext, EngineError>;
}

const SWAP_ENTITIES: [&str; 8] = [
    "Marcus Webb",
    "the Meridian Institute",
    "Lake Vondra",
    "Elena Torres",
    "the Caldwell Group",
    "Port Halvern",
    "Ivo Brandt",
    "the Aurora Foundation",
];

const DISTRACTORS: [&str; 6] = [
    "The municipal library also houses a collection of antique maps.",
    "Annual rainfall in the region has remained stable for decades.",
    "A commemorative plaque was unveiled at the visitor center.",
    "Local historians continue to debate several unrelated events.",
    "The nearby station serves both express and regional lines.",
    "Several archived photographs show the site from the 1950s.",
];

/// Deterministic rule-based generator for offline runs and tests. Not a
/// substitute for a generation model: corruptions are shallow but always
/// single-axis, non-identical to the input, and reproducible.
#[derive(Debug, Clone)]
pub struct OfflineEngine {
    seed: u64,
}

impl OfflineEngine {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    fn rng_for(&self, sample: &Sample) -> ChaCha8Rng {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(sample.id.as_bytes());
        let digest = hasher.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        ChaCha8Rng::from_seed(seed)
    }
}

impl PerturbationEngine for OfflineEngine {
    fn id(&self) -> &str {
        "offline-rule-engine"
    }

    fn perturb(
        &self,
        sample: &Sample,
        ptype: PerturbationType,
    ) -> Result<PerturbedContext, EngineError> {
        let mut rng = self.rng_for(sample);
        let context = &sample.context;
        Ok(match ptype {
            PerturbationType::EntitySwap => {
                let replacement = SWAP_ENTITIES[rng.random_range(0..SWAP_ENTITIES.len())];
                let gold = sample.primary_gold();
                match replace_case_insensitive(context, gold, replacement) {
                    Some(swapped) if swapped != *context => PerturbedContext {
                        context: swapped,
                        implied_answer: Some(replacement.to_string()),
                    },
                    _ => PerturbedContext {
                        context: format!(
                            "{context} According to the corrected record, the answer is {replacement}."
                        ),
                        implied_answer: Some(replacement.to_string()),
                    },
                }
            }
            PerturbationType::TemporalShift => {
                let offset = 3 + rng.random_range(0..9) as i32;
                match shift_first_year(context, offset) {
                    Some((shifted, new_year)) => PerturbedContext {
                        context: shifted,
                        implied_answer: Some(new_year),
                    },
                    None => PerturbedContext {
                        context: format!("{context} By 1987, none of this was still the case."),
                        implied_answer: None,
                    },
                }
            }
            PerturbationType::LogicalContradiction => {
                let gold = sample.primary_gold().to_string();
                PerturbedContext {
                    context: format!(
                        "{context} However, contrary to the above, it is established that the answer is not {gold}."
                    ),
                    implied_answer: Some(format!("not {gold}")),
                }
            }
            PerturbationType::DistractorEvidence => {
                let distractor = DISTRACTORS[rng.random_range(0..DISTRACTORS.len())];
                PerturbedContext {
                    context: format!("{context} {distractor}"),
                    implied_answer: None,
                }
            }
        })
    }
}

/// Replace every case-insensitive occurrence of `needle`. Returns `None`
/// when the needle is empty or absent.
fn replace_case_insensitive(haystack: &str, needle: &str, replacement: &str) -> Option<String> {
    if needle.is_empty() {
        return None;
    }
    let lower_h = haystack.to_lowercase();
    let lower_n = needle.to_lowercase();
    if !lower_h.contains(&lower_n) {
        return None;
    }
    // Byte offsets from the lowercase scan are only safe when lowercasing
    // preserves lengths; fall back to no-match otherwise.
    if lower_h.len() != haystack.len() {
        return None;
    }
    let mut out = String::with_capacity(haystack.len());
    let mut pos = 0;
    while let Some(found) = lower_h[pos..].find(&lower_n) {
        let start = pos + found;
        out.push_str(&haystack[pos..start]);
        out.push_str(replacement);
        pos = start + lower_n.len();
    }
    out.push_str(&haystack[pos..]);
    Some(out)
}

/// Shift the first plausible year token (1000-2999) by `offset` years.
fn shift_first_year(context: &str, offset: i32) -> Option<(String, String)> {
    for (start, token) in split_tokens(context) {
        let digits: String = token.chars().take_while(|c| c.is_ascii_digit()).collect();
        if digits.len() == 4 {
            if let Ok(year) = digits.parse::<i32>() {
                if (1000..3000).contains(&year) {
                    let mut shifted = year + offset;
                    if shifted == year {
                        shifted += 1;
                    }
                    let mut out = String::with_capacity(context.len());
                    out.push_str(&context[..start]);
                    out.push_str(&shifted.to_string());
                    out.push_str(&context[start + digits.len()..]);
                    return Some((out, shifted.to_string()));
                }
            }
        }
    }
    None
}

fn split_tokens(text: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                out.push((s, &text[s..i]));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push((s, &text[s..]));
    }
    out
}

/// Engine that echoes the input context unchanged. Exists to exercise the
/// no-op rejection path.
#[derive(Debug, Clone, Copy)]
pub struct EchoEngine;

impl PerturbationEngine for EchoEngine {
    fn id(&self) -> &str {
        "echo-engine"
    }

    fn perturb(
        &self,
        sample: &Sample,
        _ptype: PerturbationType,
    ) -> Result<PerturbedContext, EngineError> {
        Ok(PerturbedContext {
            context: sample.context.clone(),
            implied_answer: None,
        })
    }
}

/// Per-type instruction templates for the model-backed engine. Placeholders:
/// `{context}`, `{question}`, `{answer}`.
pub type EngineTemplates = BTreeMap<PerturbationType, String>;

/// Default instruction templates. These are configuration defaults, not a
/// fixed protocol; override them per generator model.
pub fn default_engine_templates() -> EngineTemplates {
    let mut t = BTreeMap::new();
    t.insert(
        PerturbationType::EntitySwap,
        "Rewrite the passage so it supports a different answer to the question by changing exactly one entity. Keep every other fact identical.\nPassage: {context}\nQuestion: {question}\nCurrent answer: {answer}\nRewritten passage:".to_string(),
    );
    t.insert(
        PerturbationType::TemporalShift,
        "Rewrite the passage changing exactly one date or time reference so the passage now disagrees with the current answer. Keep every other fact identical.\nPassage: {context}\nQuestion: {question}\nCurrent answer: {answer}\nRewritten passage:".to_string(),
    );
    t.insert(
        PerturbationType::LogicalContradiction,
        "Rewrite the passage introducing exactly one internal logical contradiction that undermines the current answer. Keep every other fact identical.\nPassage: {context}\nQuestion: {question}\nCurrent answer: {answer}\nRewritten passage:".to_string(),
    );
    t.insert(
        PerturbationType::DistractorEvidence,
        "Rewrite the passage adding plausible but irrelevant distractor evidence that does not change any stated fact.\nPassage: {context}\nQuestion: {question}\nCurrent answer: {answer}\nRewritten passage:".to_string(),
    );
    t
}

/// Generation-model-backed engine: renders the per-type instruction and
/// takes the whole completion as the corrupted context.
pub struct ModelEngine {
    client: Arc<dyn ModelClient>,
    decode: DecodeConfig,
    templates: EngineTemplates,
    id: String,
}

impl ModelEngine {
    pub fn new(client: Arc<dyn ModelClient>, decode: DecodeConfig) -> Self {
        let id = format!("model-engine:{}", decode.model_id);
        Self {
            client,
            decode,
            templates: default_engine_templates(),
            id,
        }
    }

    pub fn with_templates(mut self, templates: EngineTemplates) -> Self {
        self.templates = templates;
        self
    }
}

impl PerturbationEngine for ModelEngine {
    fn id(&self) -> &str {
        &self.id
    }

    fn perturb(
        &self,
        sample: &Sample,
        ptype: PerturbationType,
    ) -> Result<PerturbedContext, EngineError> {
        let template = self
            .templates
            .get(&ptype)
            .ok_or_else(|| EngineError::EmptyOutput(format!("no template for {ptype}")))?;
        let text = template
            .replace("{context}", &sample.context)
            .replace("{question}", &sample.question)
            .replace("{answer}", sample.primary_gold());
        let prompt = PromptText {
            text,
            method: MethodKind::StandardRag,
            sample_id: format!("perturb:{}:{}", ptype, sample.id),
        };
        let response = self.client.complete(&prompt, &self.decode)?;
        let context = response.text.trim().to_string();
        if context.is_empty() {
            return Err(EngineError::EmptyOutput(format!(
                "blank completion for sample {}",
                sample.id
            )));
        }
        Ok(PerturbedContext {
            context,
            implied_answer: None,
        })
    }
}

/// Serializable engine selector used by run/build configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EngineKind {
    Offline { seed: u64 },
    Model,
}
