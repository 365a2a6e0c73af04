//! Contradiction-gated routing.
//!
//! The context is segmented into sentences, each sentence is scored for
//! contradiction against the model's parametric answer, and the sample is
//! routed to the deep decomposition path only when the maximum score
//! strictly exceeds the threshold tau. Scoring backends: a remote NLI
//! inference endpoint, or an offline token-overlap heuristic that exists so
//! the full pipeline is testable without an NLI service (it is not an NLI
//! model and is labeled accordingly).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::RetryPolicy;

/// Router configuration. Default tau is 0.7.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateConfig {
    pub tau: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self { tau: 0.7 }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<(), GateError> {
        if !(0.0..=1.0).contains(&self.tau) || !self.tau.is_finite() {
            return Err(GateError::InvalidTau(self.tau));
        }
        Ok(())
    }
}

/// Per-sentence contradiction probability against the parametric answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceScore {
    pub sentence: String,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    DeepCdd,
    BypassStandardRag,
}

impl Route {
    pub fn label(&self) -> &'static str {
        match self {
            Route::DeepCdd => "deep_cdd",
            Route::BypassStandardRag => "bypass_standard_rag",
        }
    }
}

/// Routing outcome for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteDecision {
    pub route: Route,
    pub max_score: f64,
    pub scores: Vec<SentenceScore>,
}

#[derive(Debug, Error)]
pub enum GateError {
    #[error("tau {0} outside [0, 1]")]
    InvalidTau(f64),
    #[error("scorer transport failure: {0}")]
    Transport(String),
    #[error("scorer response missing field `{0}`")]
    MalformedResponse(String),
}

/// Sentence splitter: terminal punctuation with an abbreviation guard list.
/// Non-empty input yields at least one sentence, and the concatenation of
/// the sentences reproduces the input modulo whitespace.
pub fn segment(context: &str) -> Vec<String> {
    if context.trim().is_empty() {
        return Vec::new();
    }
    let bytes: Vec<char> = context.chars().collect();
    let mut sentences = Vec::new();
    let mut start = 0usize;
    let mut i = 0usize;
    while i < bytes.len() {
        let c = bytes[i];
        if c == '.' || c == '!' || c == '?' {
            // Swallow a run of terminal punctuation plus closing quotes.
            let mut end = i + 1;
            while end < bytes.len() && matches!(bytes[end], '.' | '!' | '?' | '"' | '\'' | ')' | ']' | '\u{201d}' | '\u{2019}') {
                end += 1;
            }
            let followed_by_ws = end >= bytes.len() || bytes[end].is_whitespace();
            let guard = c == '.' && is_guarded_abbreviation(&bytes[start..i]);
            if followed_by_ws && !guard {
                let sentence: String = bytes[start..end].iter().collect();
                let trimmed = sentence.trim();
                if !trimmed.is_empty() {
                    sentences.push(trimmed.to_string());
                }
                start = end;
            }
            i = end;
        } else {
            i += 1;
        }
    }
    let tail: String = bytes[start..].iter().collect();
    let trimmed = tail.trim();
    if !trimmed.is_empty() {
        sentences.push(trimmed.to_string());
    }
    sentences
}

const ABBREVIATIONS: [&str; 24] = [
    "dr", "mr", "mrs", "ms", "prof", "st", "jr", "sr", "vs", "etc", "e.g", "i.e", "fig", "al",
    "inc", "ltd", "co", "u.s", "u.k", "d.c", "mt", "no", "dept", "approx",
];

/// The token ending at the period is an abbreviation or a single initial.
fn is_guarded_abbreviation(before: &[char]) -> bool {
    let word: String = before
        .iter()
        .rev()
        .take_while(|c| !c.is_whitespace())
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    let token = word.trim_matches(|c: char| c == '"' || c == '(' || c == '\'');
    if token.is_empty() {
        return false;
    }
    let lower = token.to_lowercase();
    let lower = lower.trim_end_matches('.');
    if lower.len() == 1 && lower.chars().all(|c| c.is_alphabetic()) {
        return true;
    }
    ABBREVIATIONS.contains(&lower)
}

/// Contradiction scorer handle: probability that `sentence` contradicts
/// `parametric_answer`, in [0, 1].
pub trait ContradictionScorer: Send + Sync {
    fn score(&self, sentence: &str, parametric_answer: &str) -> Result<f64, GateError>;
}

/// Offline token-overlap heuristic. Deterministic and dependency-free; a
/// stand-in for an NLI model, usable only for plumbing and tests.
///
/// Scoring table (content tokens = lowercase alphanumeric tokens minus
/// stopwords; `overlap` = fraction of answer content tokens present in the
/// sentence):
///
/// 1. negation differential (negation cue in exactly one side):
///    `0.5 + 0.5 * overlap`
/// 2. otherwise, numeric conflict (both sides contain numbers, sets
///    disjoint): `0.5 + 0.4 * overlap`
/// 3. otherwise: `0.2 * overlap`
#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicScorer;

const STOPWORDS: [&str; 24] = [
    "a", "an", "the", "is", "are", "was", "were", "be", "been", "being", "of", "in", "on", "at",
    "to", "and", "or", "it", "this", "that", "its", "by", "for", "with",
];

const NEGATION_CUES: [&str; 26] = [
    "not", "no", "never", "none", "neither", "nor", "cannot", "without", "false", "incorrect",
    "wrong", "refute", "refutes", "refuted", "deny", "denies", "denied", "contradict",
    "contradicts", "contradicted", "isn", "aren", "wasn", "weren", "doesn", "didn",
];

fn content_tokens(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty() && !STOPWORDS.contains(t))
        .map(str::to_string)
        .collect()
}

fn has_negation_cue(tokens: &[String]) -> bool {
    tokens.iter().any(|t| NEGATION_CUES.contains(&t.as_str()))
}

fn numeric_tokens(tokens: &[String]) -> Vec<&String> {
    tokens
        .iter()
        .filter(|t| t.chars().all(|c| c.is_ascii_digit()))
        .collect()
}

impl ContradictionScorer for HeuristicScorer {
    fn score(&self, sentence: &str, parametric_answer: &str) -> Result<f64, GateError> {
        let s_tokens = content_tokens(sentence);
        let a_tokens = content_tokens(parametric_answer);
        let overlap = if a_tokens.is_empty() {
            0.0
        } else {
            let hits = a_tokens.iter().filter(|t| s_tokens.contains(t)).count();
            hits as f64 / a_tokens.len() as f64
        };
        let negation_differential = has_negation_cue(&s_tokens) != has_negation_cue(&a_tokens);
        let s_nums = numeric_tokens(&s_tokens);
        let a_nums = numeric_tokens(&a_tokens);
        let numeric_conflict = !s_nums.is_empty()
            && !a_nums.is_empty()
            && s_nums.iter().all(|n| !a_nums.contains(n));

        let score = if negation_differential {
            0.5 + 0.5 * overlap
        } else if numeric_conflict {
            0.5 + 0.4 * overlap
        } else {
            0.2 * overlap
        };
        Ok(score.clamp(0.0, 1.0))
    }
}

/// Remote NLI endpoint configuration. The endpoint receives a JSON object
/// with the configured premise/hypothesis field names and must answer with
/// a JSON object containing an array of label probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteNliConfig {
    pub url: String,
    /// Environment variable holding the bearer credential; `None` for
    /// unauthenticated endpoints.
    pub api_key_env: Option<String>,
    pub auth_header: String,
    pub auth_prefix: String,
    pub premise_field: String,
    pub hypothesis_field: String,
    /// Response field holding the label probability array.
    pub scores_field: String,
    /// Index of the contradiction label inside the probability array.
    pub contradiction_index: usize,
    pub timeout_s: u64,
    pub retry: RetryPolicy,
}

impl Default for RemoteNliConfig {
    fn default() -> Self {
        Self {
            url: String::new(),
            api_key_env: None,
            auth_header: "Authorization".to_string(),
            auth_prefix: "Bearer ".to_string(),
            premise_field: "premise".to_string(),
            hypothesis_field: "hypothesis".to_string(),
            scores_field: "scores".to_string(),
            contradiction_index: 2,
            timeout_s: 60,
            retry: RetryPolicy::default(),
        }
    }
}

/// Remote NLI scorer. Out-of-range probabilities are clamped with a warning.
pub struct RemoteNliScorer {
    config: RemoteNliConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
}

impl RemoteNliScorer {
    pub fn new(config: RemoteNliConfig) -> Result<Self, GateError> {
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                GateError::Transport(format!("credential env var {var} is not set"))
            })?),
            None => None,
        };
        let agent_config = ureq::Agent::config_builder()
            .timeout_global(Some(std::time::Duration::from_secs(config.timeout_s)))
            .http_status_as_error(false)
            .build();
        Ok(Self {
            config,
            agent: agent_config.into(),
            api_key,
        })
    }
}

impl ContradictionScorer for RemoteNliScorer {
    fn score(&self, sentence: &str, parametric_answer: &str) -> Result<f64, GateError> {
        let payload = serde_json::json!({
            &self.config.premise_field: sentence,
            &self.config.hypothesis_field: parametric_answer,
        });
        let mut last_err = String::new();
        for attempt in 0..=self.config.retry.max_retries {
            if attempt > 0 {
                std::thread::sleep(self.config.retry.delay_for(attempt - 1));
            }
            let mut request = self.agent.post(&self.config.url);
            if let Some(key) = &self.api_key {
                request = request.header(
                    &self.config.auth_header,
                    &format!("{}{}", self.config.auth_prefix, key),
                );
            }
            let response = match request.send_json(&payload) {
                Ok(r) => r,
                Err(e) => {
                    last_err = e.to_string();
                    continue;
                }
            };
            let status = response.status().as_u16();
            if status >= 500 || status == 429 || status == 408 {
                last_err = format!("status {status}");
                continue;
            }
            if status >= 400 {
                return Err(GateError::Transport(format!("status {status}")));
            }
            let mut response = response;
            let body: serde_json::Value = response
                .body_mut()
                .read_json()
                .map_err(|e| GateError::Transport(e.to_string()))?;
            let scores = body
                .get(&self.config.scores_field)
                .and_then(|v| v.as_array())
                .ok_or_else(|| GateError::MalformedResponse(self.config.scores_field.clone()))?;
            let raw = scores
                .get(self.config.contradiction_index)
                .and_then(|v| v.as_f64())
                .ok_or_else(|| {
                    GateError::MalformedResponse(format!(
                        "{}[{}]",
                        self.config.scores_field, self.config.contradiction_index
                    ))
                })?;
            if !(0.0..=1.0).contains(&raw) {
                log::warn!("contradiction score {raw} outside [0,1]; clamping");
            }
            return Ok(raw.clamp(0.0, 1.0));
        }
        Err(GateError::Transport(format!(
            "retries exhausted: {last_err}"
        )))
    }
}

/// Route by the strict max-score rule; an empty score list bypasses.
pub fn route(scores: Vec<SentenceScore>, tau: f64) -> RouteDecision {
    let max_score = scores.iter().map(|s| s.score).fold(0.0f64, f64::max);
    let route = if !scores.is_empty() && max_score > tau {
        Route::DeepCdd
    } else {
        Route::BypassStandardRag
    };
    RouteDecision {
        route,
        max_score,
        scores,
    }
}

/// Full per-sample gate: segment, score every sentence, route.
pub fn gate_sample(
    context: &str,
    parametric_answer: &str,
    scorer: &dyn ContradictionScorer,
    config: &GateConfig,
) -> Result<RouteDecision, GateError> {
    config.validate()?;
    let mut scores = Vec::new();
    for sentence in segment(context) {
        let score = scorer.score(&sentence, parametric_answer)?;
        scores.push(SentenceScore { sentence, score });
    }
    Ok(route(scores, config.tau))
}
