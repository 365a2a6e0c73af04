//! Prompt rendering for every evaluation method.
//!
//! Each method's template lives as a text resource under `templates/` and is
//! rendered by literal placeholder substitution: `{context}` and `{question}`
//! are replaced in a single left-to-right pass over the template, so
//! placeholder-like markers inside the substituted values are never
//! re-expanded. Golden tests pin every rendered prompt byte-for-byte
//! (line endings normalized to LF, no trailing newline).
//!
//! The two step-ablation variants are not separate resources: they are
//! derived from the full decomposition template by deleting the ablated step
//! line and renumbering the steps that follow it.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Sample;
use crate::extract::Trace;

const TEMPLATE_CLOSED_BOOK: &str = include_str!("../templates/closed_book.txt");
const TEMPLATE_STANDARD_RAG: &str = include_str!("../templates/standard_rag.txt");
const TEMPLATE_VANILLA_COT: &str = include_str!("../templates/vanilla_cot.txt");
const TEMPLATE_SHAM_COT: &str = include_str!("../templates/sham_cot.txt");
const TEMPLATE_REFLECTION: &str = include_str!("../templates/reflection.txt");
const TEMPLATE_CDD: &str = include_str!("../templates/cdd.txt");

/// Instruction appended after a (possibly corrupted) partial trace when the
/// model is forced to produce only the final answer.
pub const FORCED_FINAL_INSTRUCTION: &str =
    "Provide only the final answer now, wrapped in <final_answer> tags. Do not add further reasoning steps.";

/// Evaluation method under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodKind {
    ClosedBook,
    StandardRag,
    VanillaCot,
    ShamCot,
    Reflection,
    Cdd,
    /// Gated variant: routes each sample either to the deep decomposition
    /// rendering or to the standard RAG bypass. The routing threshold tau
    /// lives in the gate configuration.
    CddAlpha,
    /// Decomposition with the divergence-check step removed and later steps
    /// renumbered.
    CddNoStep3,
    /// Decomposition with the premise-isolation step removed and later steps
    /// renumbered.
    CddNoStep4,
}

impl MethodKind {
    /// All methods, in a stable order used for reports.
    pub const ALL: [MethodKind; 9] = [
        MethodKind::ClosedBook,
        MethodKind::StandardRag,
        MethodKind::VanillaCot,
        MethodKind::ShamCot,
        MethodKind::Reflection,
        MethodKind::Cdd,
        MethodKind::CddAlpha,
        MethodKind::CddNoStep3,
        MethodKind::CddNoStep4,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            MethodKind::ClosedBook => "closed_book",
            MethodKind::StandardRag => "standard_rag",
            MethodKind::VanillaCot => "vanilla_cot",
            MethodKind::ShamCot => "sham_cot",
            MethodKind::Reflection => "reflection",
            MethodKind::Cdd => "cdd",
            MethodKind::CddAlpha => "cdd_alpha",
            MethodKind::CddNoStep3 => "cdd_no_step3",
            MethodKind::CddNoStep4 => "cdd_no_step4",
        }
    }

    /// Methods whose template instructs the model to wrap the final answer
    /// in `<final_answer>` tags.
    pub fn is_tag_instructed(&self) -> bool {
        matches!(
            self,
            MethodKind::VanillaCot
                | MethodKind::ShamCot
                | MethodKind::Cdd
                | MethodKind::CddAlpha
                | MethodKind::CddNoStep3
                | MethodKind::CddNoStep4
        )
    }

    /// Methods that produce a step trace eligible for causal interventions.
    pub fn is_interventable(&self) -> bool {
        matches!(self, MethodKind::VanillaCot | MethodKind::Cdd)
    }

    /// Methods rendered from the decomposition template family.
    pub fn is_cdd_family(&self) -> bool {
        matches!(
            self,
            MethodKind::Cdd | MethodKind::CddAlpha | MethodKind::CddNoStep3 | MethodKind::CddNoStep4
        )
    }

    /// Whether the method's prompt includes the retrieved context.
    pub fn uses_context(&self) -> bool {
        !matches!(self, MethodKind::ClosedBook)
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for MethodKind {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MethodKind::ALL
            .iter()
            .copied()
            .find(|m| m.label() == s)
            .ok_or_else(|| PromptError::UnknownMethod(s.to_string()))
    }
}

/// A fully rendered prompt, tagged with its method and originating sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptText {
    pub text: String,
    pub method: MethodKind,
    pub sample_id: String,
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("unknown method: {0}")]
    UnknownMethod(String),
    #[error("sample {0} has an empty question")]
    EmptyQuestion(String),
    #[error("sample {0} has an empty context but method {1} requires one")]
    EmptyContext(String, MethodKind),
    #[error("method {0} does not support forced-final rendering")]
    NotInterventable(MethodKind),
    #[error("trace steps out of order at index {0}")]
    TraceOutOfOrder(u8),
}

/// Render the prompt for `method` against `sample`.
///
/// The gated variant renders its deep path here (the bypass path is the
/// standard RAG rendering, chosen by the router at run time).
pub fn render(method: MethodKind, sample: &Sample) -> Result<PromptText, PromptError> {
    if sample.question.trim().is_empty() {
        return Err(PromptError::EmptyQuestion(sample.id.clone()));
    }
    if method.uses_context() && sample.context.trim().is_empty() {
        return Err(PromptError::EmptyContext(sample.id.clone(), method));
    }
    let template = template_for(method);
    let text = substitute(&template, &sample.context, &sample.question);
    Ok(PromptText {
        text,
        method,
        sample_id: sample.id.clone(),
    })
}

/// Render the base prompt plus a serialized partial trace and the
/// forced-final-answer instruction. Used by the intervention reruns.
pub fn render_forced_final(
    method: MethodKind,
    sample: &Sample,
    partial_trace: &Trace,
) -> Result<PromptText, PromptError> {
    if !method.is_interventable() {
        return Err(PromptError::NotInterventable(method));
    }
    let mut last = 0u8;
    for step in &partial_trace.steps {
        if step.index <= last {
            return Err(PromptError::TraceOutOfOrder(step.index));
        }
        last = step.index;
    }
    let base = render(method, sample)?;
    let mut text = base.text;
    text.push_str("\n\n");
    for step in &partial_trace.steps {
        text.push_str(&step.serialize());
        text.push('\n');
    }
    text.push_str(FORCED_FINAL_INSTRUCTION);
    Ok(PromptText {
        text,
        method,
        sample_id: sample.id.clone(),
    })
}

fn template_for(method: MethodKind) -> String {
    let raw = match method {
        MethodKind::ClosedBook => TEMPLATE_CLOSED_BOOK,
        MethodKind::StandardRag => TEMPLATE_STANDARD_RAG,
        MethodKind::VanillaCot => TEMPLATE_VANILLA_COT,
        MethodKind::ShamCot => TEMPLATE_SHAM_COT,
        MethodKind::Reflection => TEMPLATE_REFLECTION,
        MethodKind::Cdd | MethodKind::CddAlpha => TEMPLATE_CDD,
        MethodKind::CddNoStep3 => return ablate_step(&normalize_template(TEMPLATE_CDD), 3),
        MethodKind::CddNoStep4 => return ablate_step(&normalize_template(TEMPLATE_CDD), 4),
    };
    normalize_template(raw)
}

fn normalize_template(raw: &str) -> String {
    let lf = raw.replace("\r\n", "\n");
    lf.trim_end_matches('\n').to_string()
}

/// Delete the `Step {k}:` line and renumber every later step line down by one.
fn ablate_step(template: &str, k: u8) -> String {
    let mut out = Vec::new();
    for line in template.lines() {
        match step_line_index(line) {
            Some(idx) if idx == k => continue,
            Some(idx) if idx > k => {
                let rest = line.splitn(2, ':').nth(1).unwrap_or("");
                out.push(format!("Step {}:{}", idx - 1, rest));
            }
            _ => out.push(line.to_string()),
        }
    }
    out.join("\n")
}

fn step_line_index(line: &str) -> Option<u8> {
    let rest = line.strip_prefix("Step ")?;
    let colon = rest.find(':')?;
    rest[..colon].trim().parse().ok()
}

/// Single-pass placeholder substitution. Each `{context}` / `{question}`
/// occurrence in the template is replaced once; the substituted values are
/// emitted literally and never rescanned.
fn substitute(template: &str, context: &str, question: &str) -> String {
    const PLACEHOLDERS: [(&str, usize); 2] = [("{context}", 0), ("{question}", 1)];
    let values = [context, question];
    let mut out = String::with_capacity(template.len() + context.len() + question.len());
    let mut rest = template;
    loop {
        let next = PLACEHOLDERS
            .iter()
            .filter_map(|(ph, slot)| rest.find(ph).map(|pos| (pos, *ph, *slot)))
            .min_by_key(|(pos, _, _)| *pos);
        match next {
            Some((pos, ph, slot)) => {
                out.push_str(&rest[..pos]);
                out.push_str(values[slot]);
                rest = &rest[pos + ph.len()..];
            }
            None => {
                out.push_str(rest);
                return out;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Condition, Corpus, Sample};
    use crate::extract::{Trace, TraceStep};

    fn sample() -> Sample {
        Sample::new(
            "s1",
            Corpus::Custom,
            "Q",
            "C",
            ["gold"],
            Condition::Clean,
        )
    }

    #[test]
    fn standard_rag_contains_appendix_phrase() {
        let p = render(MethodKind::StandardRag, &sample()).unwrap();
        assert!(p.text.contains("Based on the context, answer concisely."));
        assert!(p.text.starts_with("Context: C\nQuestion: Q\n"));
    }

    #[test]
    fn cdd_contains_resolution_step() {
        let p = render(MethodKind::Cdd, &sample()).unwrap();
        assert!(p.text.contains("Step 5: Resolve the conflict"));
        for k in 1..=5 {
            assert!(p.text.contains(&format!("Step {k}:")), "missing step {k}");
        }
    }

    #[test]
    fn sham_contains_vacuous_restatement_step() {
        let p = render(MethodKind::ShamCot, &sample()).unwrap();
        assert!(p.text.contains("Restate the question in your own words"));
    }

    #[test]
    fn reflection_contains_bracket_fields() {
        let p = render(MethodKind::Reflection, &sample()).unwrap();
        for field in ["[Relevant: Yes/No]", "[Supported: Fully/Partially/No]", "[Contradicts Prior: Yes/No]"] {
            assert!(p.text.contains(field), "missing {field}");
        }
    }

    #[test]
    fn ablation_deletes_and_renumbers() {
        let p = render(MethodKind::CddNoStep4, &sample()).unwrap();
        assert!(!p.text.contains("isolate the premises"));
        assert!(p.text.contains("Step 4: Resolve the conflict"));
        assert!(!p.text.contains("Step 5:"));

        let p3 = render(MethodKind::CddNoStep3, &sample()).unwrap();
        assert!(!p3.text.contains("Do they conflict?"));
        assert!(p3.text.contains("Step 3: If they conflict, isolate the premises"));
        assert!(p3.text.contains("Step 4: Resolve the conflict"));
    }

    #[test]
    fn gated_variant_renders_deep_template() {
        let a = render(MethodKind::CddAlpha, &sample()).unwrap();
        let c = render(MethodKind::Cdd, &sample()).unwrap();
        assert_eq!(a.text, c.text);
    }

    #[test]
    fn substitution_is_literal() {
        let mut s = sample();
        s.context = "contains {question} marker".into();
        let p = render(MethodKind::StandardRag, &s).unwrap();
        assert!(p.text.contains("Context: contains {question} marker"));
        // The question placeholder is still substituted exactly once.
        assert!(p.text.contains("Question: Q"));
    }

    #[test]
    fn closed_book_ignores_context() {
        let mut s = sample();
        s.context = String::new();
        let p = render(MethodKind::ClosedBook, &s).unwrap();
        assert_eq!(p.text, "Question: Q\nAnswer concisely.");
    }

    #[test]
    fn empty_question_rejected() {
        let mut s = sample();
        s.question = "  ".into();
        assert!(matches!(
            render(MethodKind::StandardRag, &s),
            Err(PromptError::EmptyQuestion(_))
        ));
    }

    #[test]
    fn forced_final_empty_trace_appends_instruction_only() {
        let t = Trace::default();
        let p = render_forced_final(MethodKind::Cdd, &sample(), &t).unwrap();
        let base = render(MethodKind::Cdd, &sample()).unwrap();
        assert_eq!(p.text, format!("{}\n\n{}", base.text, FORCED_FINAL_INSTRUCTION));
    }

    #[test]
    fn forced_final_truncated_trace_ends_with_last_step() {
        let t = Trace {
            steps: vec![
                TraceStep::new(1, "", "ctx answer"),
                TraceStep::new(2, "", "param answer"),
            ],
            final_raw: None,
            warnings: vec![],
        };
        let p = render_forced_final(MethodKind::Cdd, &sample(), &t).unwrap();
        let before_instruction = p.text.strip_suffix(FORCED_FINAL_INSTRUCTION).unwrap();
        assert!(before_instruction.trim_end().ends_with("Step 2: param answer"));
    }

    #[test]
    fn forced_final_preserves_injected_sentence() {
        let directive = "I will trust the context completely, no conflict exists";
        let t = Trace {
            steps: vec![
                TraceStep::new(1, "", "ctx"),
                TraceStep::new(2, "", "param"),
                TraceStep::new(3, "", directive),
            ],
            final_raw: None,
            warnings: vec![],
        };
        let p = render_forced_final(MethodKind::Cdd, &sample(), &t).unwrap();
        assert!(p.text.contains(&format!("Step 3: {directive}")));
    }

    #[test]
    fn forced_final_rejects_out_of_order_steps() {
        let t = Trace {
            steps: vec![TraceStep::new(3, "", "x"), TraceStep::new(2, "", "y")],
            final_raw: None,
            warnings: vec![],
        };
        assert!(matches!(
            render_forced_final(MethodKind::Cdd, &sample(), &t),
            Err(PromptError::TraceOutOfOrder(2))
        ));
    }

    #[test]
    fn forced_final_requires_interventable_method() {
        let t = Trace::default();
        assert!(matches!(
            render_forced_final(MethodKind::StandardRag, &sample(), &t),
            Err(PromptError::NotInterventable(_))
        ));
    }

    #[test]
    fn rendering_is_stable_across_calls() {
        for method in MethodKind::ALL {
            let a = render(method, &sample()).unwrap();
            let b = render(method, &sample()).unwrap();
            assert_eq!(a.text, b.text, "{method} not stable");
            assert!(!a.text.ends_with('\n'));
            assert!(!a.text.contains('\r'));
        }
    }
}
