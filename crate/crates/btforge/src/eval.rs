//! Batch evaluation pipeline and controlled corpus mutations.
//!
//! For each dataset record the pipeline pairs a candidate document (the
//! record's own tree under `self`, or an external document keyed by
//! sample id), then runs parse -> lower -> validate -> tree metrics ->
//! execute. Execution is gated: a sample that failed to parse or carries
//! key errors never reaches the simulator.
//!
//! [`mutate_corpus`] produces negative corpora in which exactly
//! `round(rate * n)` samples (chosen by a seeded shuffle, so rates map
//! to exact percentages) are broken in one targeted way per mutation
//! kind.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use thiserror::Error;

use crate::metrics::{aggregate, tree_metrics, EmptyCorpus, MetricsReport, SampleOutcome};
use crate::model::{lower, parse_document};
use crate::oracle::DatasetRecord;
use crate::sim::{run, FinalStatus, RunOptions, SimParams};
use crate::validate::{validate_with, Severity, ValidateOptions};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("no candidate document for sample {0}")]
    MissingCandidate(String),
    #[error(transparent)]
    EmptyCorpus(#[from] EmptyCorpus),
    #[error("candidate file {0}: {1}")]
    BadCandidates(String, String),
}

/// Candidate documents keyed by sample id, or the dataset's own trees.
#[derive(Debug, Clone)]
pub enum Candidates {
    SelfTargets,
    Documents(Vec<(String, String)>),
}

impl Candidates {
    fn lookup(&self, id: &str) -> Option<String> {
        match self {
            Candidates::SelfTargets => None,
            Candidates::Documents(docs) => docs
                .iter()
                .find(|(doc_id, _)| doc_id == id)
                .map(|(_, doc)| doc.clone()),
        }
    }
}

/// Canonical id of the record at `index`: its zero-based position.
pub fn sample_id(index: usize) -> String {
    format!("{index:06}")
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    /// Promote offset findings to errors for the compliance metric.
    pub strict_offsets: bool,
    pub params: SimParams,
    pub stale_metadata: bool,
}

/// Per-sample result rows plus the corpus report.
#[derive(Debug, Clone)]
pub struct EvalOutput {
    pub report: MetricsReport,
    pub outcomes: Vec<SampleOutcome>,
}

/// Runs the full pipeline over every record, in id order.
pub fn evaluate(
    records: &[DatasetRecord],
    candidates: &Candidates,
    opts: &EvalOptions,
) -> Result<EvalOutput, EvalError> {
    let validate_opts = ValidateOptions {
        offset_severity: if opts.strict_offsets {
            Severity::Error
        } else {
            Severity::Warning
        },
    };
    let run_opts = RunOptions {
        stale_metadata: opts.stale_metadata,
    };
    let mut outcomes = Vec::with_capacity(records.len());
    for record in records {
        let id = sample_id(record.index);
        let doc = match candidates {
            Candidates::SelfTargets => {
                serde_json::to_string(&record.bt).expect("stored tree serializes")
            }
            external => external
                .lookup(&id)
                .ok_or_else(|| EvalError::MissingCandidate(id.clone()))?,
        };

        let mut outcome = SampleOutcome {
            id,
            parse_ok: false,
            key_errors: 0,
            validation: None,
            tree: None,
            task_success: None,
        };
        match parse_document(&doc) {
            Err(_) => {}
            Ok(raw) => {
                outcome.parse_ok = true;
                match lower(&raw, &record.spec) {
                    Err(report) => outcome.key_errors = report.len(),
                    Ok(bt) => {
                        outcome.validation =
                            Some(validate_with(&bt, &record.spec, validate_opts));
                        outcome.tree = Some(tree_metrics(&bt));
                        let result = run(
                            &bt,
                            &record.scene,
                            &record.spec,
                            &record.goals,
                            &opts.params,
                            &[],
                            &run_opts,
                        );
                        outcome.task_success =
                            Some(result.final_status == FinalStatus::Success);
                    }
                }
            }
        }
        outcomes.push(outcome);
    }
    let report = aggregate(&outcomes)?;
    Ok(EvalOutput { report, outcomes })
}

/// The targeted corpus mutations. Each breaks exactly one metric or
/// validator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MutationKind {
    /// Chop the document in half: a JSON validity failure.
    TruncateJson,
    /// Remove the root `type` key: a key error.
    DropKey,
    /// Add a `name` to the first composite: a key error.
    NameOnComposite,
    /// Wrap the root in a composite of the same kind: a flat-hierarchy
    /// violation.
    NestSameKind,
    /// Rename the first action to an out-of-vocabulary primitive: a
    /// vocabulary violation.
    UnknownPrimitive,
    /// Strip the first `+z=` offset: a spatial-offset violation (visible
    /// under strict offset checking).
    RemoveOffset,
}

impl MutationKind {
    pub const ALL: [MutationKind; 6] = [
        MutationKind::TruncateJson,
        MutationKind::DropKey,
        MutationKind::NameOnComposite,
        MutationKind::NestSameKind,
        MutationKind::UnknownPrimitive,
        MutationKind::RemoveOffset,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            MutationKind::TruncateJson => "truncate-json",
            MutationKind::DropKey => "drop-key",
            MutationKind::NameOnComposite => "name-on-composite",
            MutationKind::NestSameKind => "nest-same-kind",
            MutationKind::UnknownPrimitive => "unknown-primitive",
            MutationKind::RemoveOffset => "remove-offset",
        }
    }

    pub fn from_name(s: &str) -> Option<MutationKind> {
        MutationKind::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

/// Produces candidate documents in which `round(rate * n)` samples carry
/// the mutation. Selection is a seeded shuffle, so the same inputs mark
/// the same samples.
pub fn mutate_corpus(
    records: &[DatasetRecord],
    kind: MutationKind,
    rate: f64,
    seed: u64,
) -> Vec<(String, String)> {
    let n = records.len();
    let k = (rate.clamp(0.0, 1.0) * n as f64).round() as usize;
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let selected: std::collections::BTreeSet<usize> = indices.into_iter().take(k).collect();

    records
        .iter()
        .enumerate()
        .map(|(i, record)| {
            let doc = serde_json::to_string(&record.bt).expect("stored tree serializes");
            let doc = if selected.contains(&i) {
                apply_mutation(kind, &doc)
            } else {
                doc
            };
            (sample_id(record.index), doc)
        })
        .collect()
}

fn apply_mutation(kind: MutationKind, doc: &str) -> String {
    match kind {
        MutationKind::TruncateJson => {
            // A proper prefix of a JSON object is never valid JSON.
            let mut cut = doc.len() / 2;
            while cut > 0 && !doc.is_char_boundary(cut) {
                cut -= 1;
            }
            doc[..cut.max(1)].to_string()
        }
        MutationKind::DropKey => rewrite(doc, |root| {
            if let Value::Object(obj) = root {
                obj.shift_remove("type");
            }
        }),
        MutationKind::NameOnComposite => rewrite(doc, |root| {
            fn first_composite(v: &mut Value) -> Option<&mut serde_json::Map<String, Value>> {
                let obj = v.as_object()?;
                if obj.contains_key("children") {
                    return v.as_object_mut();
                }
                None
            }
            fn visit(v: &mut Value) -> bool {
                if first_composite(v).is_some() {
                    let obj = v.as_object_mut().unwrap();
                    obj.insert("name".into(), Value::String("plan".into()));
                    return true;
                }
                if let Value::Object(obj) = v {
                    if let Some(Value::Array(children)) = obj.get_mut("children") {
                        for child in children {
                            if visit(child) {
                                return true;
                            }
                        }
                    }
                }
                false
            }
            visit(root);
        }),
        MutationKind::NestSameKind => rewrite(doc, |root| {
            let kind = root
                .get("type")
                .and_then(Value::as_str)
                .unwrap_or("Sequence")
                .to_string();
            let inner = root.take();
            let mut obj = serde_json::Map::new();
            obj.insert("type".into(), Value::String(kind));
            obj.insert("children".into(), Value::Array(vec![inner]));
            *root = Value::Object(obj);
        }),
        MutationKind::UnknownPrimitive => rewrite(doc, |root| {
            fn visit(v: &mut Value) -> bool {
                if let Value::Object(obj) = v {
                    if obj.get("type").and_then(Value::as_str) == Some("Action") {
                        obj.insert("name".into(), Value::String("EngageVacuum".into()));
                        // Vocabulary-only mutation: unknown names carry no
                        // declared arity, so any args must go too.
                        obj.shift_remove("args");
                        return true;
                    }
                    if let Some(Value::Array(children)) = obj.get_mut("children") {
                        for child in children {
                            if visit(child) {
                                return true;
                            }
                        }
                    }
                }
                false
            }
            visit(root);
        }),
        MutationKind::RemoveOffset => rewrite(doc, |root| {
            // Strip the first offset approach: find the first MovePose
            // carrying an offset expression, then drop that exact
            // expression's offset everywhere (its paired pose check
            // included), so the label is only ever reached directly.
            fn first_offset_move(v: &Value) -> Option<String> {
                let obj = v.as_object()?;
                if obj.get("type").and_then(Value::as_str) == Some("Action")
                    && obj.get("name").and_then(Value::as_str) == Some("MovePose")
                {
                    if let Some(Value::Array(args)) = obj.get("args") {
                        for arg in args {
                            if let Some(s) = arg.as_str() {
                                if s.contains("+z=") {
                                    return Some(s.to_string());
                                }
                            }
                        }
                    }
                }
                if let Some(Value::Array(children)) = obj.get("children") {
                    for child in children {
                        if let Some(found) = first_offset_move(child) {
                            return Some(found);
                        }
                    }
                }
                None
            }
            fn strip(v: &mut Value, needle: &str, bare: &str) {
                match v {
                    Value::String(s) if s == needle => *s = bare.to_string(),
                    Value::Array(items) => items.iter_mut().for_each(|i| strip(i, needle, bare)),
                    Value::Object(obj) => obj.values_mut().for_each(|i| strip(i, needle, bare)),
                    _ => {}
                }
            }
            if let Some(needle) = first_offset_move(root) {
                let bare = needle[..needle.find("+z=").unwrap()].to_string();
                strip(root, &needle, &bare);
            }
        }),
    }
}

fn rewrite(doc: &str, f: impl FnOnce(&mut Value)) -> String {
    let mut value: Value = serde_json::from_str(doc).expect("mutations start from valid records");
    f(&mut value);
    serde_json::to_string(&value).expect("mutated value serializes")
}

/// Renders the per-sample outcomes as JSONL, in id order.
pub fn outcomes_to_jsonl(outcomes: &[SampleOutcome]) -> String {
    let mut ordered: Vec<&SampleOutcome> = outcomes.iter().collect();
    ordered.sort_by(|a, b| a.id.cmp(&b.id));
    let mut out = String::new();
    for outcome in ordered {
        out.push_str(&serde_json::to_string(outcome).expect("outcome serializes"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{build_dataset, dataset_to_jsonl, load_dataset_jsonl, DatasetConfig};

    fn small_dataset(n: usize) -> Vec<DatasetRecord> {
        let cfg = DatasetConfig::default();
        let samples = build_dataset(n, 1234, &cfg).unwrap();
        load_dataset_jsonl(&dataset_to_jsonl(&samples)).unwrap()
    }

    #[test]
    fn self_evaluation_is_a_fixed_point() {
        let records = small_dataset(12);
        let out = evaluate(&records, &Candidates::SelfTargets, &EvalOptions::default()).unwrap();
        assert_eq!(out.report.jvr, 100.0);
        assert_eq!(out.report.ker, 0.0);
        assert_eq!(out.report.sc, 100.0);
        assert_eq!(out.report.tsr, 100.0);
    }

    #[test]
    fn missing_candidate_is_an_error() {
        let records = small_dataset(3);
        let candidates = Candidates::Documents(vec![(sample_id(0), "{}".into())]);
        let err = evaluate(&records, &candidates, &EvalOptions::default()).unwrap_err();
        assert!(matches!(err, EvalError::MissingCandidate(_)));
    }

    #[test]
    fn gating_keeps_broken_samples_out_of_the_simulator() {
        let records = small_dataset(6);
        let candidates = Candidates::Documents(mutate_corpus(
            &records,
            MutationKind::DropKey,
            1.0,
            5,
        ));
        let out = evaluate(&records, &candidates, &EvalOptions::default()).unwrap();
        for outcome in &out.outcomes {
            assert!(outcome.key_errors > 0);
            assert_eq!(outcome.task_success, None);
        }
        assert_eq!(out.report.ker, 100.0);
        assert_eq!(out.report.tsr, 0.0);
    }

    #[test]
    fn one_named_composite_in_ten_costs_exactly_one_sample() {
        let records = small_dataset(10);
        let candidates = Candidates::Documents(mutate_corpus(
            &records,
            MutationKind::NameOnComposite,
            0.1,
            6,
        ));
        let out = evaluate(&records, &candidates, &EvalOptions::default()).unwrap();
        assert_eq!(out.report.jvr, 100.0);
        assert_eq!(out.report.ker, 10.0);
        assert_eq!(out.report.tsr, 90.0);
        // The broken sample was excluded from execution.
        let skipped = out
            .outcomes
            .iter()
            .filter(|o| o.task_success.is_none())
            .count();
        assert_eq!(skipped, 1);
    }

    #[test]
    fn truncation_rate_maps_to_exact_jvr() {
        let records = small_dataset(10);
        for (rate, expect) in [(0.1, 90.0), (0.5, 50.0), (1.0, 0.0)] {
            let candidates = Candidates::Documents(mutate_corpus(
                &records,
                MutationKind::TruncateJson,
                rate,
                9,
            ));
            let out = evaluate(&records, &candidates, &EvalOptions::default()).unwrap();
            assert_eq!(out.report.jvr, expect);
        }
    }

    #[test]
    fn nest_same_kind_collapses_schema_compliance() {
        let records = small_dataset(8);
        let candidates = Candidates::Documents(mutate_corpus(
            &records,
            MutationKind::NestSameKind,
            1.0,
            2,
        ));
        let out = evaluate(&records, &candidates, &EvalOptions::default()).unwrap();
        assert_eq!(out.report.sc, 0.0);
        assert_eq!(out.report.ker, 0.0);
        assert_eq!(out.report.jvr, 100.0);
    }

    #[test]
    fn unknown_primitive_hits_vocabulary_not_keys() {
        let records = small_dataset(5);
        let candidates = Candidates::Documents(mutate_corpus(
            &records,
            MutationKind::UnknownPrimitive,
            1.0,
            3,
        ));
        let out = evaluate(&records, &candidates, &EvalOptions::default()).unwrap();
        assert_eq!(out.report.ker, 0.0);
        assert_eq!(out.report.sc, 0.0);
    }

    #[test]
    fn removed_offsets_show_up_only_under_strict_checking() {
        let records = small_dataset(5);
        let candidates = Candidates::Documents(mutate_corpus(
            &records,
            MutationKind::RemoveOffset,
            1.0,
            4,
        ));
        let lenient = evaluate(&records, &candidates, &EvalOptions::default()).unwrap();
        assert_eq!(lenient.report.sc, 100.0);
        let strict = evaluate(
            &records,
            &candidates,
            &EvalOptions {
                strict_offsets: true,
                ..EvalOptions::default()
            },
        )
        .unwrap();
        assert_eq!(strict.report.sc, 0.0);
    }

    #[test]
    fn mutation_selection_is_deterministic() {
        let records = small_dataset(10);
        let a = mutate_corpus(&records, MutationKind::TruncateJson, 0.3, 7);
        let b = mutate_corpus(&records, MutationKind::TruncateJson, 0.3, 7);
        assert_eq!(a, b);
        let mutated = a
            .iter()
            .filter(|(_, doc)| parse_document(doc).is_err())
            .count();
        assert_eq!(mutated, 3);
    }

    #[test]
    fn mutation_rates_are_monotonic_in_damage() {
        let records = small_dataset(10);
        let mut last_jvr = 100.0;
        for rate in [0.0, 0.3, 0.6, 1.0] {
            let candidates = Candidates::Documents(mutate_corpus(
                &records,
                MutationKind::TruncateJson,
                rate,
                11,
            ));
            let out = evaluate(&records, &candidates, &EvalOptions::default()).unwrap();
            assert!(out.report.jvr <= last_jvr);
            last_jvr = out.report.jvr;
        }
    }
}
