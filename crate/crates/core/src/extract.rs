//! Completion parsing, answer extraction, normalization, and gold matching.
//!
//! Parsing is total: arbitrary text always yields a (possibly partial)
//! [`Trace`]; malformedness is recorded as data, never raised as an error.
//! Matching is exact set membership after normalization — no substring
//! containment, which inflates accuracy on boolean tasks. Hedged phrasings
//! are credited only through the alias map.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompts::MethodKind;

/// One recognized `Step k:` block of a reasoning trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    /// Step index, 1..=5.
    pub index: u8,
    /// Optional parenthesized step name, e.g. `Step 2 (Parametric): ...`.
    pub label: String,
    pub content: String,
}

impl TraceStep {
    pub fn new(index: u8, label: impl Into<String>, content: impl Into<String>) -> Self {
        Self {
            index,
            label: label.into(),
            content: content.into(),
        }
    }

    /// Serialize in the same line format the parser recognizes.
    pub fn serialize(&self) -> String {
        if self.label.is_empty() {
            format!("Step {}: {}", self.index, self.content)
        } else {
            format!("Step {} ({}): {}", self.index, self.label, self.content)
        }
    }
}

/// Parsed reasoning trace: ordered steps plus the tagged final answer when
/// present. `warnings` records duplicate or out-of-range step markers.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trace {
    pub steps: Vec<TraceStep>,
    pub final_raw: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl Trace {
    /// Indices in 1..=5 with no parsed step.
    pub fn missing_steps(&self) -> Vec<u8> {
        let present: BTreeSet<u8> = self.steps.iter().map(|s| s.index).collect();
        (1..=5).filter(|i| !present.contains(i)).collect()
    }

    pub fn max_index(&self) -> u8 {
        self.steps.last().map(|s| s.index).unwrap_or(0)
    }
}

const FINAL_OPEN: &str = "<final_answer>";
const FINAL_CLOSE: &str = "</final_answer>";

/// Parse a raw completion into a [`Trace`]. Total: never fails.
///
/// `Step k:` prefixed lines (k in 1..=5) open a step; following lines accrue
/// to that step until the next marker. Duplicate or non-increasing markers
/// keep the first occurrence and record a warning. The first
/// `<final_answer>...</final_answer>` pair is captured into `final_raw`; an
/// unclosed tag captures to end of text with a warning.
pub fn parse_trace(raw: &str) -> Trace {
    let mut warnings = Vec::new();

    // Lift the final-answer span out first so tag text never leaks into steps.
    let (body, final_raw) = match raw.find(FINAL_OPEN) {
        Some(open) => {
            let after = &raw[open + FINAL_OPEN.len()..];
            let (answer, tail) = match after.find(FINAL_CLOSE) {
                Some(close) => (&after[..close], &after[close + FINAL_CLOSE.len()..]),
                None => {
                    warnings.push("unclosed <final_answer> tag".to_string());
                    (after, "")
                }
            };
            let body = format!("{}{}", &raw[..open], tail);
            (body, Some(answer.trim().to_string()))
        }
        None => (raw.to_string(), None),
    };

    let mut steps: Vec<TraceStep> = Vec::new();
    let mut last_index = 0u8;
    for line in body.lines() {
        match parse_step_marker(line) {
            Some((index, label, content)) if (1..=5).contains(&index) => {
                if index <= last_index {
                    warnings.push(format!("duplicate or out-of-order Step {index} line ignored"));
                    append_continuation(&mut steps, line);
                } else {
                    steps.push(TraceStep::new(index, label, content));
                    last_index = index;
                }
            }
            Some((index, _, _)) => {
                warnings.push(format!("step marker out of range: Step {index}"));
                append_continuation(&mut steps, line);
            }
            None => append_continuation(&mut steps, line),
        }
    }
    for step in &mut steps {
        step.content = step.content.trim().to_string();
    }

    Trace {
        steps,
        final_raw,
        warnings,
    }
}

fn append_continuation(steps: &mut [TraceStep], line: &str) {
    if let Some(last) = steps.last_mut() {
        if !last.content.is_empty() {
            last.content.push('\n');
        }
        last.content.push_str(line);
    }
}

/// Recognize `Step k: content` or `Step k (Label): content`, tolerating
/// leading whitespace. Returns (index, label, content).
fn parse_step_marker(line: &str) -> Option<(u8, String, String)> {
    let trimmed = line.trim_start();
    let rest = trimmed.strip_prefix("Step ")?;
    let colon = rest.find(':')?;
    let head = rest[..colon].trim();
    let content = rest[colon + 1..].trim_start().to_string();
    if let Some(paren) = head.find('(') {
        let idx: u8 = head[..paren].trim().parse().ok()?;
        let label = head[paren + 1..].trim_end_matches(')').trim().to_string();
        Some((idx, label, content))
    } else {
        let idx: u8 = head.parse().ok()?;
        Some((idx, String::new(), content))
    }
}

/// How the raw answer text was obtained from the completion.
///
/// `WholeCompletion` covers the methods whose entire completion is the
/// answer (plain RAG and closed book); it is distinct from the fallback so
/// fallback rates stay a meaningful diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionPath {
    Tag,
    ReflectionLine,
    FallbackLastLine,
    WholeCompletion,
}

impl ExtractionPath {
    pub fn label(&self) -> &'static str {
        match self {
            ExtractionPath::Tag => "tag",
            ExtractionPath::ReflectionLine => "reflection_line",
            ExtractionPath::FallbackLastLine => "fallback_last_line",
            ExtractionPath::WholeCompletion => "whole_completion",
        }
    }
}

/// Raw extracted answer plus the path that produced it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Extracted {
    pub raw: String,
    pub path: ExtractionPath,
}

/// Extract the raw final answer from a completion for the given method.
/// Returns `None` only when the completion is entirely whitespace.
pub fn extract_final(raw: &str, method: MethodKind) -> Option<Extracted> {
    if raw.trim().is_empty() {
        return None;
    }
    if method.is_tag_instructed() {
        if let Some(answer) = extract_tag(raw) {
            return Some(Extracted {
                raw: answer,
                path: ExtractionPath::Tag,
            });
        }
        return fallback_last_line(raw);
    }
    if method == MethodKind::Reflection {
        if let Some(answer) = extract_reflection_line(raw) {
            return Some(Extracted {
                raw: answer,
                path: ExtractionPath::ReflectionLine,
            });
        }
        return fallback_last_line(raw);
    }
    // Plain RAG and closed book: the whole completion is the answer.
    Some(Extracted {
        raw: raw.trim().to_string(),
        path: ExtractionPath::WholeCompletion,
    })
}

fn extract_tag(raw: &str) -> Option<String> {
    let open = raw.find(FINAL_OPEN)?;
    let after = &raw[open + FINAL_OPEN.len()..];
    let answer = match after.find(FINAL_CLOSE) {
        Some(close) => &after[..close],
        None => after,
    };
    Some(answer.trim().to_string())
}

fn extract_reflection_line(raw: &str) -> Option<String> {
    raw.lines().rev().find_map(|line| {
        let t = line.trim_start();
        let lower = t.to_lowercase();
        lower
            .strip_prefix("final answer:")
            .map(|_| t["final answer:".len()..].trim().to_string())
    })
}

fn fallback_last_line(raw: &str) -> Option<Extracted> {
    raw.lines()
        .rev()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .map(|l| Extracted {
            raw: l.to_string(),
            path: ExtractionPath::FallbackLastLine,
        })
}

/// Alias map applied as the last normalization stage.
///
/// Keys and values are canonicalized through the base normalization chain at
/// construction, and transitive chains (a→b, b→c) are resolved to their
/// terminal value so that normalization stays idempotent for any user map.
/// Cycles resolve every member to the lexicographically smallest member.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AliasMap {
    entries: BTreeMap<String, String>,
}

impl AliasMap {
    /// Empty map (no aliasing).
    pub fn empty() -> Self {
        Self::default()
    }

    /// Default map: the boolean fact-verification families
    /// (supports/yes → true, refutes/no/contradicts → false).
    pub fn default_map() -> Self {
        Self::from_pairs([
            ("supports", "true"),
            ("yes", "true"),
            ("refutes", "false"),
            ("no", "false"),
            ("contradicts", "false"),
        ])
    }

    pub fn from_pairs<K, V>(pairs: impl IntoIterator<Item = (K, V)>) -> Self
    where
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let raw: BTreeMap<String, String> = pairs
            .into_iter()
            .map(|(k, v)| {
                (
                    base_normalize(k.as_ref(), true),
                    base_normalize(v.as_ref(), true),
                )
            })
            .filter(|(k, v)| k != v)
            .collect();
        Self {
            entries: resolve_chains(raw),
        }
    }

    /// Load from a JSON object of key → value strings.
    pub fn from_json_file(path: &Path) -> Result<Self, AliasMapError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AliasMapError::Io(path.to_path_buf(), e))?;
        let raw: BTreeMap<String, String> =
            serde_json::from_str(&text).map_err(|e| AliasMapError::Parse(path.to_path_buf(), e))?;
        Ok(Self::from_pairs(raw))
    }

    pub fn resolve(&self, normalized: &str) -> Option<&str> {
        self.entries.get(normalized).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Error)]
pub enum AliasMapError {
    #[error("cannot read alias map {0}: {1}")]
    Io(std::path::PathBuf, std::io::Error),
    #[error("alias map {0} is not a JSON string-to-string object: {1}")]
    Parse(std::path::PathBuf, serde_json::Error),
}

fn resolve_chains(raw: BTreeMap<String, String>) -> BTreeMap<String, String> {
    let mut resolved = BTreeMap::new();
    for key in raw.keys() {
        let mut seen = vec![key.clone()];
        let mut cur = key.clone();
        let terminal = loop {
            match raw.get(&cur) {
                Some(next) if seen.contains(next) => {
                    // Cycle: map every member to the smallest member.
                    let cycle_start = seen.iter().position(|s| s == next).unwrap();
                    break seen[cycle_start..].iter().min().unwrap().clone();
                }
                Some(next) => {
                    seen.push(next.clone());
                    cur = next.clone();
                }
                None => break cur,
            }
        };
        if *key != terminal {
            resolved.insert(key.clone(), terminal);
        }
    }
    resolved
}

/// Normalized answer and the extraction path that produced its raw form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizedAnswer {
    pub text: String,
    pub extraction_path: ExtractionPath,
}

impl NormalizedAnswer {
    pub fn from_extracted(extracted: &Extracted, matcher: &Matcher) -> Self {
        Self {
            text: matcher.normalize(&extracted.raw),
            extraction_path: extracted.path,
        }
    }
}

/// Normalization + matching engine: lowercase, punctuation stripping,
/// whitespace collapse, leading-article stripping (toggleable), alias map.
#[derive(Debug, Clone)]
pub struct Matcher {
    aliases: AliasMap,
    strip_articles: bool,
}

impl Default for Matcher {
    fn default() -> Self {
        Self {
            aliases: AliasMap::default_map(),
            strip_articles: true,
        }
    }
}

impl Matcher {
    pub fn new(aliases: AliasMap, strip_articles: bool) -> Self {
        Self {
            aliases,
            strip_articles,
        }
    }

    pub fn normalize(&self, raw: &str) -> String {
        let base = base_normalize(raw, self.strip_articles);
        match self.aliases.resolve(&base) {
            Some(v) => v.to_string(),
            None => base,
        }
    }

    /// Exact set membership after symmetric normalization of both sides.
    pub fn is_match(&self, pred: &str, gold: &BTreeSet<String>) -> bool {
        let p = self.normalize(pred);
        gold.iter().any(|g| self.normalize(g) == p)
    }
}

/// Base chain without aliasing: lowercase → strip ASCII punctuation →
/// collapse whitespace → (optionally) strip leading articles a/an/the.
/// Article stripping repeats until no leading article remains, which keeps
/// the chain idempotent.
pub fn base_normalize(raw: &str, strip_articles: bool) -> String {
    let lower = raw.to_lowercase();
    let stripped: String = lower.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    let mut words: Vec<&str> = stripped.split_whitespace().collect();
    if strip_articles {
        while matches!(words.first(), Some(&"a") | Some(&"an") | Some(&"the")) {
            words.remove(0);
        }
    }
    words.join(" ")
}

/// Normalize with the default alias map and article stripping; the raw-text
/// counterpart of `Matcher::normalize` for callers without a configured map.
pub fn normalize(raw: &str, aliases: &AliasMap) -> String {
    let base = base_normalize(raw, true);
    match aliases.resolve(&base) {
        Some(v) => v.to_string(),
        None => base,
    }
}

/// Convenience: match a raw prediction against gold with an explicit map.
pub fn is_match(pred: &str, gold: &BTreeSet<String>, aliases: &AliasMap) -> bool {
    let matcher = Matcher::new(aliases.clone(), true);
    matcher.is_match(pred, gold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gold(items: &[&str]) -> BTreeSet<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn parses_well_formed_five_step_trace() {
        let raw = "Step 1: ctx answer\nStep 2: param answer\nStep 3: they conflict\nStep 4: premise X\nStep 5: resolved\n<final_answer>Paris</final_answer>";
        let t = parse_trace(raw);
        assert_eq!(t.steps.len(), 5);
        assert_eq!(t.final_raw.as_deref(), Some("Paris"));
        assert!(t.warnings.is_empty());
        assert_eq!(t.steps[0].content, "ctx answer");
    }

    #[test]
    fn partial_trace_keeps_gaps_unfabricated() {
        let t = parse_trace("Step 1: a\nStep 2: b");
        assert_eq!(t.steps.len(), 2);
        assert!(t.final_raw.is_none());
        assert_eq!(t.missing_steps(), vec![3, 4, 5]);
    }

    #[test]
    fn duplicate_step_keeps_first_and_warns() {
        let t = parse_trace("Step 1: a\nStep 3: first\nStep 3: second\nStep 4: d");
        let s3 = t.steps.iter().find(|s| s.index == 3).unwrap();
        assert!(s3.content.starts_with("first"));
        assert!(t.warnings.iter().any(|w| w.contains("Step 3")));
        // The duplicate line folds into the preceding step's content.
        assert!(s3.content.contains("second"));
    }

    #[test]
    fn multiline_step_content_accrues() {
        let t = parse_trace("Step 1: line one\ncontinued here\nStep 2: b");
        assert_eq!(t.steps[0].content, "line one\ncontinued here");
    }

    #[test]
    fn labeled_step_marker_parses() {
        let t = parse_trace("Step 2 (Parametric): the internal answer");
        assert_eq!(t.steps[0].label, "Parametric");
        assert_eq!(t.steps[0].content, "the internal answer");
        assert_eq!(t.steps[0].serialize(), "Step 2 (Parametric): the internal answer");
    }

    #[test]
    fn unclosed_final_tag_captures_to_end_with_warning() {
        let t = parse_trace("Step 1: a\n<final_answer>Berlin");
        assert_eq!(t.final_raw.as_deref(), Some("Berlin"));
        assert!(t.warnings.iter().any(|w| w.contains("unclosed")));
    }

    #[test]
    fn tag_extraction_prefers_tag_pair() {
        let e = extract_final("reasoning...\n<final_answer>Paris</final_answer>", MethodKind::Cdd).unwrap();
        assert_eq!(e.raw, "Paris");
        assert_eq!(e.path, ExtractionPath::Tag);
    }

    #[test]
    fn reflection_line_extraction() {
        let raw = "[Relevant: Yes]\n[Supported: Fully]\n[Contradicts Prior: No]\nFinal Answer: yes";
        let e = extract_final(raw, MethodKind::Reflection).unwrap();
        assert_eq!(e.raw, "yes");
        assert_eq!(e.path, ExtractionPath::ReflectionLine);
    }

    #[test]
    fn fallback_takes_last_nonempty_line() {
        let e = extract_final("thinking...\nSo the answer is Berlin\n\n", MethodKind::VanillaCot).unwrap();
        assert_eq!(e.raw, "So the answer is Berlin");
        assert_eq!(e.path, ExtractionPath::FallbackLastLine);
    }

    #[test]
    fn whole_completion_for_plain_methods() {
        let e = extract_final("  Paris  ", MethodKind::StandardRag).unwrap();
        assert_eq!(e.raw, "Paris");
        assert_eq!(e.path, ExtractionPath::WholeCompletion);
    }

    #[test]
    fn whitespace_only_yields_absent() {
        assert!(extract_final("  \n  ", MethodKind::Cdd).is_none());
        assert!(extract_final("", MethodKind::StandardRag).is_none());
    }

    #[test]
    fn normalize_applies_fact_verification_aliases() {
        let m = Matcher::default();
        assert_eq!(m.normalize("Refutes."), "false");
        assert_eq!(m.normalize("SUPPORTS"), "true");
    }

    #[test]
    fn normalize_rule_chain() {
        let m = Matcher::default();
        assert_eq!(m.normalize("  The Moon!  "), "moon");
        assert_eq!(m.normalize("a an the  dog "), "dog");
    }

    #[test]
    fn alias_lookup_after_punctuation_strip() {
        let m = Matcher::new(AliasMap::from_pairs([("usa", "united states")]), true);
        assert_eq!(m.normalize("U.S.A."), "united states");
    }

    #[test]
    fn alias_chains_resolve_to_terminal() {
        let m = Matcher::new(AliasMap::from_pairs([("a1", "b2"), ("b2", "c3")]), true);
        assert_eq!(m.normalize("a1"), "c3");
        assert_eq!(m.normalize(&m.normalize("a1")), m.normalize("a1"));
    }

    #[test]
    fn alias_cycles_resolve_deterministically() {
        let m = Matcher::new(AliasMap::from_pairs([("x9", "y9"), ("y9", "x9")]), true);
        let nx = m.normalize("x9");
        assert_eq!(m.normalize("y9"), nx);
        assert_eq!(m.normalize(&nx), nx);
    }

    #[test]
    fn match_examples() {
        let m = Matcher::default();
        assert!(m.is_match("paris", &gold(&["Paris", "the city of Paris"])));
        assert!(m.is_match("yes", &gold(&["true"])));
        assert!(!m.is_match("london", &gold(&["paris"])));
    }

    #[test]
    fn no_substring_credit() {
        let m = Matcher::default();
        assert!(!m.is_match("paris is the capital", &gold(&["Paris"])));
    }

    proptest! {
        #[test]
        fn parse_trace_is_total(raw in ".*") {
            let _ = parse_trace(&raw);
        }

        #[test]
        fn normalize_is_idempotent(raw in ".*") {
            let m = Matcher::default();
            let once = m.normalize(&raw);
            prop_assert_eq!(m.normalize(&once), once);
        }

        #[test]
        fn match_is_symmetric(a in "[a-zA-Z .!?]{0,30}", b in "[a-zA-Z .!?]{0,30}") {
            let m = Matcher::default();
            let ga = gold(&[a.as_str()]);
            let gb = gold(&[b.as_str()]);
            prop_assert_eq!(m.is_match(&a, &gb), m.is_match(&b, &ga));
        }
    }
}
