//! Harness for probing context-parametric knowledge conflict in
//! retrieval-augmented generation.
//!
//! The crate covers the full diagnostic loop:
//!
//! - [`dataset`] builds controlled-conflict QA datasets (clean/perturbed
//!   splits, misconception injection, audit sampling).
//! - [`prompts`] renders each evaluation method's prompt byte-exactly from
//!   versioned template resources.
//! - [`model`] is the uniform invocation layer: remote chat-completion
//!   endpoints, a deterministic simulated model, and a disk response cache.
//! - [`extract`] parses completions into step traces and answers, then
//!   normalizes and matches against gold.
//! - [`gate`] is the contradiction-gated router that decides between the
//!   deep decomposition path and the plain RAG bypass.
//! - [`intervene`] applies trace corruptions (truncation, mistake injection)
//!   and drives forced-final-answer reruns.
//! - [`metrics`] computes accuracies, binomial CIs, macro aggregates,
//!   causal sensitivity, and the paired bootstrap.
//! - [`runner`] orchestrates batch runs, tau sweeps, comparisons, and
//!   report emission with resumability.

pub mod dataset;
pub mod extract;
pub mod gate;
pub mod intervene;
pub mod metrics;
pub mod model;
pub mod prompts;
pub mod record;
pub mod runner;
