//! Accuracy, confidence intervals, macro aggregates, causal sensitivity,
//! and the paired bootstrap.
//!
//! Conventions pinned here so reports stay auditable:
//!
//! - Per-cell 95% CI: normal-approximation binomial half-width
//!   `z * sqrt(p (1 - p) / n)` with z = 1.96 by default.
//! - Macro aggregate: unweighted arithmetic mean of the four perturbation
//!   cells; its half-width propagates the per-cell variances under a
//!   cell-independence assumption: `z * (1/4) * sqrt(sum p_i (1-p_i) / n_i)`.
//! - Causal sensitivity: relative accuracy drop
//!   `(acc_clean - acc_corrupted) / acc_clean` (may be negative).
//! - Paired bootstrap p-value: `p = min(1, 2 * min(P(d* <= 0), P(d* >= 0)))`
//!   over resampled aggregate differences, ties counted in both tails. The
//!   convention string is embedded in every result.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompts::MethodKind;
use crate::record::EvalRecord;

/// Bootstrap p-value convention recorded in every report.
pub const BOOTSTRAP_CONVENTION: &str =
    "p = min(1, 2*min(P(delta<=0), P(delta>=0))), ties in both tails";

/// One accuracy cell (a perturbation or condition group).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellStat {
    pub group: String,
    pub correct: u64,
    pub total: u64,
    pub accuracy: f64,
    pub ci_halfwidth: f64,
}

/// Statistical configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsConfig {
    /// Two-sided 95% normal quantile. 1.96 reproduces the printed interval
    /// widths; configurable for other levels.
    pub z: f64,
    pub bootstrap_resamples: usize,
    pub bootstrap_seed: u64,
    /// Worker count for the bootstrap; the result is identical for any
    /// value because every resample derives its own seed.
    pub bootstrap_workers: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            z: 1.96,
            bootstrap_resamples: 10_000,
            bootstrap_seed: 0,
            bootstrap_workers: 1,
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<(), MetricsError> {
        if self.z <= 0.0 || !self.z.is_finite() {
            return Err(MetricsError::InvalidInput(format!("z must be > 0, got {}", self.z)));
        }
        if self.bootstrap_resamples < 1_000 {
            return Err(MetricsError::InvalidInput(format!(
                "bootstrap_resamples must be >= 1000 for reported p-values, got {}",
                self.bootstrap_resamples
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("empty group: {0}")]
    EmptyGroup(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("expected exactly 4 perturbation cells, got {0}")]
    WrongCellCount(usize),
    #[error("cell {0} has n = 0")]
    EmptyCell(String),
    #[error("clean accuracy is 0; sensitivity undefined")]
    ZeroCleanAccuracy,
    #[error("record id sets differ: {0}")]
    IdSetMismatch(String),
}

/// Exact integer counting over the records whose group label matches.
pub fn accuracy(records: &[EvalRecord], group: &str, z: f64) -> Result<CellStat, MetricsError> {
    let mut correct = 0u64;
    let mut total = 0u64;
    for r in records.iter().filter(|r| r.group_label() == group) {
        total += 1;
        if r.correct {
            correct += 1;
        }
    }
    if total == 0 {
        return Err(MetricsError::EmptyGroup(group.to_string()));
    }
    let p = correct as f64 / total as f64;
    Ok(CellStat {
        group: group.to_string(),
        correct,
        total,
        accuracy: p,
        ci_halfwidth: binomial_ci_halfwidth(p, total, z)?,
    })
}

/// Normal-approximation binomial half-width `z * sqrt(p (1-p) / n)`.
pub fn binomial_ci_halfwidth(p: f64, n: u64, z: f64) -> Result<f64, MetricsError> {
    if n == 0 {
        return Err(MetricsError::InvalidInput("n must be >= 1".to_string()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(MetricsError::InvalidInput(format!("p {p} outside [0, 1]")));
    }
    Ok(z * (p * (1.0 - p) / n as f64).sqrt())
}

/// Unweighted arithmetic mean of exactly the four perturbation cells.
pub fn macro_average(cells: &[CellStat]) -> Result<f64, MetricsError> {
    if cells.len() != 4 {
        return Err(MetricsError::WrongCellCount(cells.len()));
    }
    Ok(cells.iter().map(|c| c.accuracy).sum::<f64>() / 4.0)
}

/// Macro half-width: `z * (1/4) * sqrt(sum_i p_i (1 - p_i) / n_i)`, under
/// the assumption that the four cells are independent samples.
pub fn macro_ci_halfwidth(cells: &[CellStat], z: f64) -> Result<f64, MetricsError> {
    if cells.len() != 4 {
        return Err(MetricsError::WrongCellCount(cells.len()));
    }
    let mut variance_sum = 0.0;
    for c in cells {
        if c.total == 0 {
            return Err(MetricsError::EmptyCell(c.group.clone()));
        }
        variance_sum += c.accuracy * (1.0 - c.accuracy) / c.total as f64;
    }
    Ok(z * 0.25 * variance_sum.sqrt())
}

/// Relative accuracy drop `(clean - corrupted) / clean`; negative values
/// mean the corruption helped.
pub fn causal_sensitivity(acc_clean: f64, acc_corrupted: f64) -> Result<f64, MetricsError> {
    if acc_clean <= 0.0 {
        return Err(MetricsError::ZeroCleanAccuracy);
    }
    Ok((acc_clean - acc_corrupted) / acc_clean)
}

/// Harmonic mean `2ab / (a + b)`; 0 when either input is 0 (continuity
/// convention).
pub fn harmonic_mean(clean_acc: f64, adv_acc: f64) -> f64 {
    if clean_acc <= 0.0 || adv_acc <= 0.0 {
        return 0.0;
    }
    2.0 * clean_acc * adv_acc / (clean_acc + adv_acc)
}

/// Aggregate used inside each bootstrap resample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapAggregate {
    /// Harmonic mean of clean and adversarial accuracy (mixed runs).
    HarmonicMean,
    /// Plain accuracy (single-stratum runs).
    Accuracy,
}

/// Paired bootstrap outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub p_value: f64,
    pub observed_delta: f64,
    pub resamples: usize,
    pub seed: u64,
    pub aggregate: BootstrapAggregate,
    pub convention: String,
}

struct PairedOutcome {
    correct_a: bool,
    correct_b: bool,
    adversarial: bool,
}

/// Paired bootstrap over per-sample outcomes of two systems evaluated on the
/// identical sample id set. Sample ids are resampled with replacement; per
/// resample each system's aggregate (harmonic mean of clean and adversarial
/// accuracy when both strata exist, plain accuracy otherwise) is compared.
/// Deterministic under `bootstrap_seed` and independent of worker count.
pub fn paired_bootstrap(
    records_a: &[EvalRecord],
    records_b: &[EvalRecord],
    config: &MetricsConfig,
) -> Result<BootstrapResult, MetricsError> {
    config.validate()?;
    let map_a = outcomes_by_id(records_a)?;
    let map_b = outcomes_by_id(records_b)?;
    if map_a.len() != map_b.len() || map_a.keys().any(|k| !map_b.contains_key(k)) {
        let only_a: Vec<&String> = map_a.keys().filter(|k| !map_b.contains_key(*k)).collect();
        let only_b: Vec<&String> = map_b.keys().filter(|k| !map_a.contains_key(*k)).collect();
        return Err(MetricsError::IdSetMismatch(format!(
            "{} ids only in A, {} only in B",
            only_a.len(),
            only_b.len()
        )));
    }

    let mut outcomes: Vec<PairedOutcome> = Vec::with_capacity(map_a.len());
    for (id, (correct_a, adv_a)) in &map_a {
        let (correct_b, adv_b) = map_b[id];
        if *adv_a != adv_b {
            return Err(MetricsError::IdSetMismatch(format!(
                "sample {id} has different conditions in the two runs"
            )));
        }
        outcomes.push(PairedOutcome {
            correct_a: *correct_a,
            correct_b,
            adversarial: *adv_a,
        });
    }
    if outcomes.is_empty() {
        return Err(MetricsError::InvalidInput("no paired records".to_string()));
    }

    let has_clean = outcomes.iter().any(|o| !o.adversarial);
    let has_adv = outcomes.iter().any(|o| o.adversarial);
    let aggregate = if has_clean && has_adv {
        BootstrapAggregate::HarmonicMean
    } else {
        BootstrapAggregate::Accuracy
    };

    let observed_delta =
        aggregate_of(&outcomes, |o| o.correct_a, aggregate) - aggregate_of(&outcomes, |o| o.correct_b, aggregate);

    let resamples = config.bootstrap_resamples;
    let workers = config.bootstrap_workers.max(1);
    let chunk = resamples.div_ceil(workers);
    let seed = config.bootstrap_seed;
    let outcomes_ref = &outcomes;

    let (count_le, count_ge) = std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for w in 0..workers {
            let lo = w * chunk;
            let hi = ((w + 1) * chunk).min(resamples);
            if lo >= hi {
                continue;
            }
            handles.push(scope.spawn(move || {
                let mut le = 0u64;
                let mut ge = 0u64;
                for i in lo..hi {
                    let delta = resample_delta(outcomes_ref, seed, i as u64, aggregate);
                    if delta <= 0.0 {
                        le += 1;
                    }
                    if delta >= 0.0 {
                        ge += 1;
                    }
                }
                (le, ge)
            }));
        }
        let mut le = 0u64;
        let mut ge = 0u64;
        for h in handles {
            let (l, g) = h.join().expect("bootstrap worker panicked");
            le += l;
            ge += g;
        }
        (le, ge)
    });

    let tail = count_le.min(count_ge) as f64 / resamples as f64;
    Ok(BootstrapResult {
        p_value: (2.0 * tail).min(1.0),
        observed_delta,
        resamples,
        seed,
        aggregate,
        convention: BOOTSTRAP_CONVENTION.to_string(),
    })
}

fn resample_delta(
    outcomes: &[PairedOutcome],
    seed: u64,
    index: u64,
    aggregate: BootstrapAggregate,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, index));
    let n = outcomes.len();
    let mut clean_a = (0u64, 0u64);
    let mut adv_a = (0u64, 0u64);
    let mut clean_b = (0u64, 0u64);
    let mut adv_b = (0u64, 0u64);
    for _ in 0..n {
        let o = &outcomes[rng.random_range(0..n)];
        let (slot_a, slot_b) = if o.adversarial {
            (&mut adv_a, &mut adv_b)
        } else {
            (&mut clean_a, &mut clean_b)
        };
        slot_a.1 += 1;
        slot_b.1 += 1;
        if o.correct_a {
            slot_a.0 += 1;
        }
        if o.correct_b {
            slot_b.0 += 1;
        }
    }
    let acc = |(c, t): (u64, u64)| if t == 0 { 0.0 } else { c as f64 / t as f64 };
    match aggregate {
        BootstrapAggregate::HarmonicMean => {
            harmonic_mean(acc(clean_a), acc(adv_a)) - harmonic_mean(acc(clean_b), acc(adv_b))
        }
        BootstrapAggregate::Accuracy => {
            let pooled = |c: (u64, u64), a: (u64, u64)| acc((c.0 + a.0, c.1 + a.1));
            pooled(clean_a, adv_a) - pooled(clean_b, adv_b)
        }
    }
}

/// SplitMix64 finalizer: per-resample seeds independent of iteration order.
fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn aggregate_of(
    outcomes: &[PairedOutcome],
    correct: impl Fn(&PairedOutcome) -> bool,
    aggregate: BootstrapAggregate,
) -> f64 {
    let mut clean = (0u64, 0u64);
    let mut adv = (0u64, 0u64);
    for o in outcomes {
        let slot = if o.adversarial { &mut adv } else { &mut clean };
        slot.1 += 1;
        if correct(o) {
            slot.0 += 1;
        }
    }
    let acc = |(c, t): (u64, u64)| if t == 0 { 0.0 } else { c as f64 / t as f64 };
    match aggregate {
        BootstrapAggregate::HarmonicMean => harmonic_mean(acc(clean), acc(adv)),
        BootstrapAggregate::Accuracy => acc((clean.0 + adv.0, clean.1 + adv.1)),
    }
}

fn outcomes_by_id(records: &[EvalRecord]) -> Result<BTreeMap<String, (bool, bool)>, MetricsError> {
    let mut map = BTreeMap::new();
    for r in records {
        if map
            .insert(r.sample_id.clone(), (r.correct, r.condition.is_adversarial()))
            .is_some()
        {
            return Err(MetricsError::InvalidInput(format!(
                "duplicate sample id {} in record set",
                r.sample_id
            )));
        }
    }
    Ok(map)
}

/// Per-method metrics block of a run report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub method: MethodKind,
    /// One cell per group label present, in fixed group order.
    pub cells: Vec<CellStat>,
    /// Unweighted mean over the four perturbation cells; present only when
    /// all four are.
    pub macro_avg: Option<f64>,
    pub macro_ci_halfwidth: Option<f64>,
    /// Pooled micro accuracy over the four perturbation groups, reported
    /// alongside the macro aggregate and labeled distinctly.
    pub adversarial_micro: Option<CellStat>,
    /// Fraction of gated samples routed to the deep path.
    pub routed_fraction: Option<f64>,
    pub extraction_paths: BTreeMap<String, u64>,
    pub failures: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    /// (prompt + completion) tokens relative to the plain RAG method in the
    /// same run, when that method is present.
    pub relative_cost: Option<f64>,
}

/// Full metrics report for a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub methods: Vec<MethodMetrics>,
    pub z: f64,
    pub include_failures_as_incorrect: bool,
    pub bootstrap_convention: String,
}

/// Fixed group display order: clean, the four perturbations, misconception.
pub const GROUP_ORDER: [&str; 6] = [
    "clean",
    "entity_swap",
    "temporal_shift",
    "logical_contradiction",
    "distractor_evidence",
    "misconception_injected",
];

const PERTURBATION_GROUPS: [&str; 4] = [
    "entity_swap",
    "temporal_shift",
    "logical_contradiction",
    "distractor_evidence",
];

/// Compute the per-method report from eval records.
///
/// When `include_failures_as_incorrect` is false, failed records are dropped
/// from denominators instead of counting as wrong (worst-case accounting is
/// the default).
pub fn compute_report(
    records: &[EvalRecord],
    config: &MetricsConfig,
    include_failures_as_incorrect: bool,
) -> MetricsReport {
    let mut methods: Vec<MethodKind> = records.iter().map(|r| r.method).collect();
    methods.sort_unstable();
    methods.dedup();

    let mut blocks = Vec::new();
    for method in methods {
        let all: Vec<&EvalRecord> = records.iter().filter(|r| r.method == method).collect();
        let failures = all.iter().filter(|r| r.failure.is_some()).count() as u64;
        let scored: Vec<EvalRecord> = all
            .iter()
            .filter(|r| include_failures_as_incorrect || r.failure.is_none())
            .map(|r| (*r).clone())
            .collect();

        let mut cells = Vec::new();
        for group in GROUP_ORDER {
            if let Ok(cell) = accuracy(&scored, group, config.z) {
                cells.push(cell);
            }
        }
        let perturbation_cells: Vec<CellStat> = cells
            .iter()
            .filter(|c| PERTURBATION_GROUPS.contains(&c.group.as_str()))
            .cloned()
            .collect();
        let (macro_avg, macro_ci) = if perturbation_cells.len() == 4 {
            (
                macro_average(&perturbation_cells).ok(),
                macro_ci_halfwidth(&perturbation_cells, config.z).ok(),
            )
        } else {
            (None, None)
        };
        let adversarial_micro = if perturbation_cells.is_empty() {
            None
        } else {
            let correct: u64 = perturbation_cells.iter().map(|c| c.correct).sum();
            let total: u64 = perturbation_cells.iter().map(|c| c.total).sum();
            let p = correct as f64 / total as f64;
            Some(CellStat {
                group: "adversarial_micro".to_string(),
                correct,
                total,
                accuracy: p,
                ci_halfwidth: binomial_ci_halfwidth(p, total, config.z).unwrap_or(0.0),
            })
        };

        let gated: Vec<&EvalRecord> = scored.iter().filter(|r| r.route.is_some()).collect();
        let routed_fraction = if gated.is_empty() {
            None
        } else {
            let deep = gated
                .iter()
                .filter(|r| r.route == Some(crate::gate::Route::DeepCdd))
                .count();
            Some(deep as f64 / gated.len() as f64)
        };

        let mut extraction_paths: BTreeMap<String, u64> = BTreeMap::new();
        for r in &scored {
            if let Some(path) = r.extraction_path {
                *extraction_paths.entry(path.label().to_string()).or_insert(0) += 1;
            }
        }

        let prompt_tokens: u64 = all.iter().map(|r| r.prompt_tokens).sum();
        let completion_tokens: u64 = all.iter().map(|r| r.completion_tokens).sum();

        blocks.push(MethodMetrics {
            method,
            cells,
            macro_avg,
            macro_ci_halfwidth: macro_ci,
            adversarial_micro,
            routed_fraction,
            extraction_paths,
            failures,
            prompt_tokens,
            completion_tokens,
            relative_cost: None,
        });
    }

    // Relative compute is recomputed from measured token counts against the
    // plain RAG row of the same run, never hard-coded.
    let baseline: Option<f64> = blocks
        .iter()
        .find(|b| b.method == MethodKind::StandardRag)
        .map(|b| (b.prompt_tokens + b.completion_tokens) as f64);
    if let Some(base) = baseline {
        if base > 0.0 {
            for b in &mut blocks {
                b.relative_cost = Some((b.prompt_tokens + b.completion_tokens) as f64 / base);
            }
        }
    }

    MetricsReport {
        methods: blocks,
        z: config.z,
        include_failures_as_incorrect,
        bootstrap_convention: BOOTSTRAP_CONVENTION.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Condition, PerturbationType};
    use crate::record::EvalRecord;
    use proptest::prelude::*;

    fn record(id: &str, method: MethodKind, condition: Condition, correct: bool) -> EvalRecord {
        EvalRecord::synthetic(id, method, condition, correct)
    }

    fn group_records(group_correct: &[(Condition, usize, usize)]) -> Vec<EvalRecord> {
        let mut out = Vec::new();
        let mut counter = 0;
        for (condition, correct, total) in group_correct {
            for i in 0..*total {
                out.push(record(
                    &format!("s{counter}-{i}"),
                    MethodKind::Cdd,
                    *condition,
                    i < *correct,
                ));
            }
            counter += 1;
        }
        out
    }

    #[test]
    fn accuracy_counts_exactly() {
        let records = group_records(&[(Condition::Clean, 9, 10)]);
        let cell = accuracy(&records, "clean", 1.96).unwrap();
        assert_eq!(cell.correct, 9);
        assert_eq!(cell.total, 10);
        assert!((cell.accuracy - 0.9).abs() < 1e-12);
    }

    #[test]
    fn accuracy_zero_of_n_degenerate_ci() {
        let records = group_records(&[(Condition::Clean, 0, 25)]);
        let cell = accuracy(&records, "clean", 1.96).unwrap();
        assert_eq!(cell.accuracy, 0.0);
        assert_eq!(cell.ci_halfwidth, 0.0);
    }

    #[test]
    fn accuracy_integer_division_oracle() {
        let records = group_records(&[(
            Condition::Perturbed { perturbation: PerturbationType::EntitySwap },
            495,
            563,
        )]);
        let cell = accuracy(&records, "entity_swap", 1.96).unwrap();
        let oracle = 495.0 / 563.0;
        assert!((cell.accuracy - oracle).abs() < 1e-15);
        assert!((cell.accuracy - 0.8792).abs() < 5e-5);
    }

    #[test]
    fn empty_group_is_error() {
        let records = group_records(&[(Condition::Clean, 1, 1)]);
        assert!(matches!(
            accuracy(&records, "entity_swap", 1.96),
            Err(MetricsError::EmptyGroup(_))
        ));
    }

    #[test]
    fn ci_halfwidth_examples() {
        let hw = binomial_ci_halfwidth(0.88, 563, 1.96).unwrap();
        assert!((hw - 0.0268).abs() < 5e-4, "{hw}");
        let hw = binomial_ci_halfwidth(0.5, 100, 1.96).unwrap();
        assert!((hw - 0.098).abs() < 5e-4, "{hw}");
        assert_eq!(binomial_ci_halfwidth(1.0, 563, 1.96).unwrap(), 0.0);
        assert!(binomial_ci_halfwidth(0.5, 0, 1.96).is_err());
    }

    #[test]
    fn macro_average_examples() {
        let cells: Vec<CellStat> = [0.880, 0.832, 0.713, 0.699]
            .iter()
            .map(|&p| CellStat {
                group: "g".to_string(),
                correct: 0,
                total: 563,
                accuracy: p,
                ci_halfwidth: 0.0,
            })
            .collect();
        let m = macro_average(&cells).unwrap();
        assert!((m - 0.781).abs() < 5e-4, "{m}");

        let rag: Vec<CellStat> = [0.584, 0.560, 0.688, 0.688]
            .iter()
            .map(|&p| CellStat {
                group: "g".to_string(),
                correct: 0,
                total: 563,
                accuracy: p,
                ci_halfwidth: 0.0,
            })
            .collect();
        let m = macro_average(&rag).unwrap();
        assert!((m - 0.630).abs() < 5e-4, "{m}");

        assert!(macro_average(&cells[..3]).is_err());
    }

    #[test]
    fn macro_ci_examples() {
        let mk = |ps: [f64; 4]| -> Vec<CellStat> {
            ps.iter()
                .map(|&p| CellStat {
                    group: "g".to_string(),
                    correct: 0,
                    total: 563,
                    accuracy: p,
                    ci_halfwidth: 0.0,
                })
                .collect()
        };
        let hw = macro_ci_halfwidth(&mk([0.880, 0.832, 0.713, 0.699]), 1.96).unwrap();
        assert!((hw - 0.0168).abs() < 5e-4, "{hw}");
        let hw = macro_ci_halfwidth(&mk([0.584, 0.560, 0.688, 0.688]), 1.96).unwrap();
        assert!((hw - 0.0198).abs() < 5e-4, "{hw}");
        let hw = macro_ci_halfwidth(&mk([0.0, 1.0, 1.0, 0.0]), 1.96).unwrap();
        assert_eq!(hw, 0.0);
    }

    #[test]
    fn sensitivity_examples() {
        let s = causal_sensitivity(0.781, 0.280).unwrap();
        assert!((s - 0.641).abs() < 5e-4, "{s}");
        let s = causal_sensitivity(0.781, 0.326).unwrap();
        assert!((s - 0.583).abs() < 5e-4, "{s}");
        let s = causal_sensitivity(0.637, 0.611).unwrap();
        assert!((s - 0.041).abs() < 5e-4, "{s}");
        assert_eq!(causal_sensitivity(0.5, 0.5).unwrap(), 0.0);
        assert!(causal_sensitivity(0.5, 0.6).unwrap() < 0.0);
        assert!(causal_sensitivity(0.0, 0.5).is_err());
    }

    #[test]
    fn harmonic_mean_examples() {
        assert!((harmonic_mean(0.8, 0.4) - 2.0 * 0.8 * 0.4 / 1.2).abs() < 1e-15);
        assert_eq!(harmonic_mean(0.7, 0.7), 0.7);
        assert_eq!(harmonic_mean(0.9, 0.0), 0.0);
        assert_eq!(harmonic_mean(0.0, 0.9), 0.0);
    }

    fn paired_sets(
        n: usize,
        correct_a: impl Fn(usize) -> bool,
        correct_b: impl Fn(usize) -> bool,
    ) -> (Vec<EvalRecord>, Vec<EvalRecord>) {
        let condition = |i: usize| {
            if i % 2 == 0 {
                Condition::Clean
            } else {
                Condition::Perturbed { perturbation: PerturbationType::EntitySwap }
            }
        };
        let a = (0..n)
            .map(|i| record(&format!("s{i}"), MethodKind::Cdd, condition(i), correct_a(i)))
            .collect();
        let b = (0..n)
            .map(|i| record(&format!("s{i}"), MethodKind::StandardRag, condition(i), correct_b(i)))
            .collect();
        (a, b)
    }

    #[test]
    fn bootstrap_self_comparison_is_one() {
        let (a, _) = paired_sets(50, |i| i % 3 != 0, |_| false);
        let config = MetricsConfig { bootstrap_seed: 11, ..Default::default() };
        let result = paired_bootstrap(&a, &a, &config).unwrap();
        assert_eq!(result.p_value, 1.0);
        assert_eq!(result.observed_delta, 0.0);
        assert_eq!(result.aggregate, BootstrapAggregate::HarmonicMean);
    }

    #[test]
    fn bootstrap_dominated_system_is_significant() {
        // A correct everywhere, B wrong everywhere: every resample puts the
        // whole mass on one side, so the two-sided p collapses below 0.01.
        let (a, b) = paired_sets(50, |_| true, |_| false);
        let config = MetricsConfig { bootstrap_seed: 7, ..Default::default() };
        let result = paired_bootstrap(&a, &b, &config).unwrap();
        assert!(result.p_value < 0.01, "{}", result.p_value);
        assert!(result.observed_delta > 0.99);
    }

    #[test]
    fn bootstrap_deterministic_and_worker_independent() {
        let (a, b) = paired_sets(60, |i| i % 4 != 0, |i| i % 3 != 0);
        let base = MetricsConfig { bootstrap_seed: 99, bootstrap_resamples: 2_000, ..Default::default() };
        let r1 = paired_bootstrap(&a, &b, &base).unwrap();
        let r2 = paired_bootstrap(&a, &b, &base).unwrap();
        assert_eq!(r1.p_value.to_bits(), r2.p_value.to_bits());
        for workers in [2, 3, 8] {
            let config = MetricsConfig { bootstrap_workers: workers, ..base.clone() };
            let r = paired_bootstrap(&a, &b, &config).unwrap();
            assert_eq!(r.p_value.to_bits(), r1.p_value.to_bits(), "workers {workers}");
        }
    }

    #[test]
    fn bootstrap_rejects_mismatched_ids() {
        let (a, mut b) = paired_sets(10, |_| true, |_| true);
        b.pop();
        let config = MetricsConfig::default();
        assert!(matches!(
            paired_bootstrap(&a, &b, &config),
            Err(MetricsError::IdSetMismatch(_))
        ));
    }

    #[test]
    fn bootstrap_requires_enough_resamples() {
        let (a, b) = paired_sets(10, |_| true, |_| true);
        let config = MetricsConfig { bootstrap_resamples: 100, ..Default::default() };
        assert!(paired_bootstrap(&a, &b, &config).is_err());
    }

    #[test]
    fn report_relative_cost_uses_measured_tokens() {
        let mut records = Vec::new();
        for i in 0..10 {
            let mut r = record(&format!("s{i}"), MethodKind::StandardRag, Condition::Clean, true);
            r.prompt_tokens = 10;
            r.completion_tokens = 10;
            records.push(r);
            let mut r = record(&format!("s{i}"), MethodKind::Cdd, Condition::Clean, true);
            r.prompt_tokens = 20;
            r.completion_tokens = 40;
            records.push(r);
        }
        let report = compute_report(&records, &MetricsConfig::default(), true);
        let rag = report.methods.iter().find(|m| m.method == MethodKind::StandardRag).unwrap();
        let cdd = report.methods.iter().find(|m| m.method == MethodKind::Cdd).unwrap();
        assert_eq!(rag.relative_cost, Some(1.0));
        assert_eq!(cdd.relative_cost, Some(3.0));
    }

    proptest! {
        #[test]
        fn ci_decreasing_in_n_max_at_half(p in 0.0f64..=1.0, n in 1u64..10_000) {
            let hw_n = binomial_ci_halfwidth(p, n, 1.96).unwrap();
            let hw_2n = binomial_ci_halfwidth(p, 2 * n, 1.96).unwrap();
            prop_assert!(hw_2n <= hw_n + 1e-15);
            let hw_half = binomial_ci_halfwidth(0.5, n, 1.96).unwrap();
            prop_assert!(hw_n <= hw_half + 1e-15);
        }

        #[test]
        fn bootstrap_p_in_unit_interval(seed in 0u64..500) {
            let (a, b) = paired_sets(12, |i| (i + seed as usize) % 3 == 0, |i| i % 2 == 0);
            let config = MetricsConfig {
                bootstrap_seed: seed,
                bootstrap_resamples: 1_000,
                ..Default::default()
            };
            let r = paired_bootstrap(&a, &b, &config).unwrap();
            prop_assert!((0.0..=1.0).contains(&r.p_value));
        }
    }
}
