//! Static structural analysis of lowered behavior trees.
//!
//! Four rule families are checked:
//!
//! - **flat hierarchy** — no composite child shares its parent
//!   composite's kind, forcing shallow, wide trees;
//! - **reactive guarding** — every `Action` sits under some `Selector`
//!   or `Parallel` ancestor that has a `Condition` among its direct
//!   children, so work is always paired with a perceptual check;
//! - **spatial offset** — a `MovePose` straight to an object label must
//!   be preceded (in leaf order) by a `MovePose` to the same label with
//!   a positive vertical offset: approach from above before touching;
//! - **vocabulary / grounding** — leaf names must exist in the primitive
//!   library with matching arity, and every argument label must resolve
//!   in the metadata map.
//!
//! Free-space waypoints (the home and temp labels) are exempt from the
//! offset rule. The offset rule's severity is configurable: under
//! [`Severity::Warning`] its findings are reported but do not affect
//! compliance, which is the right reading for externally produced trees;
//! generated ground-truth corpora are held to [`Severity::Error`].

use serde::Serialize;

use crate::model::{
    BTNode, CompositeKind, LeafKind, SystemSpecification, ACTION_MOVE_POSE,
};

/// Identifier of the rule a violation belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleId {
    FlatHierarchy,
    ReactiveGuarding,
    SpatialOffset,
    Vocabulary,
    Grounding,
}

impl RuleId {
    pub fn as_str(&self) -> &'static str {
        match self {
            RuleId::FlatHierarchy => "flat-hierarchy",
            RuleId::ReactiveGuarding => "reactive-guarding",
            RuleId::SpatialOffset => "spatial-offset",
            RuleId::Vocabulary => "vocabulary",
            RuleId::Grounding => "grounding",
        }
    }
}

/// One rule violation, addressed by the JSON path of the offending node.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub rule: RuleId,
    pub path: String,
    pub message: String,
}

/// How offset-rule findings are folded into the report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Severity {
    Error,
    #[default]
    Warning,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ValidateOptions {
    pub offset_severity: Severity,
}

impl ValidateOptions {
    pub fn strict() -> Self {
        ValidateOptions {
            offset_severity: Severity::Error,
        }
    }
}

/// Aggregated result of all rule checkers over one tree.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub flat_hierarchy_ok: bool,
    pub guarding_ok: bool,
    pub offset_ok: bool,
    pub vocabulary_ok: bool,
    pub grounding_ok: bool,
    /// Violations that count against compliance.
    pub violations: Vec<Violation>,
    /// Offset findings demoted to warnings under [`Severity::Warning`].
    pub warnings: Vec<Violation>,
}

impl ValidationReport {
    pub fn schema_compliant(&self) -> bool {
        self.flat_hierarchy_ok
            && self.guarding_ok
            && self.offset_ok
            && self.vocabulary_ok
            && self.grounding_ok
    }
}

/// Flags composite children that repeat their parent composite's kind.
pub fn check_flat_hierarchy(bt: &BTNode) -> Vec<Violation> {
    let mut violations = Vec::new();
    walk(bt, "$", &mut |node, path| {
        if let BTNode::Composite { kind, children } = node {
            for (i, child) in children.iter().enumerate() {
                if child.composite_kind() == Some(*kind) {
                    violations.push(Violation {
                        rule: RuleId::FlatHierarchy,
                        path: format!("{path}.children[{i}]"),
                        message: format!(
                            "{} nested directly inside {}",
                            kind.as_str(),
                            kind.as_str()
                        ),
                    });
                }
            }
        }
    });
    violations
}

/// Flags every `Action` leaf with no Selector/Parallel ancestor that has
/// a `Condition` among its direct children.
pub fn check_reactive_guarding(bt: &BTNode) -> Vec<Violation> {
    let mut violations = Vec::new();
    guard_walk(bt, "$", false, &mut violations);
    violations
}

fn guard_walk(node: &BTNode, path: &str, guarded: bool, out: &mut Vec<Violation>) {
    match node {
        BTNode::Composite { kind, children } => {
            let is_reactive =
                matches!(kind, CompositeKind::Selector | CompositeKind::Parallel);
            let has_condition_child = children
                .iter()
                .any(|c| c.leaf_kind() == Some(LeafKind::Condition));
            let guarded = guarded || (is_reactive && has_condition_child);
            for (i, child) in children.iter().enumerate() {
                guard_walk(child, &format!("{path}.children[{i}]"), guarded, out);
            }
        }
        BTNode::Leaf { kind, name, .. } => {
            if *kind == LeafKind::Action && !guarded {
                out.push(Violation {
                    rule: RuleId::ReactiveGuarding,
                    path: path.to_string(),
                    message: format!(
                        "Action {name:?} has no Selector or Parallel ancestor with a Condition child"
                    ),
                });
            }
        }
    }
}

/// Flags `MovePose` leaves that address an object label directly without
/// an earlier offset approach to the same label. Leaf order is
/// left-to-right document order. Waypoint labels are exempt.
pub fn check_offset_rule(bt: &BTNode, spec: &SystemSpecification) -> Vec<Violation> {
    let mut moves: Vec<(String, String, Option<f64>)> = Vec::new();
    walk(bt, "$", &mut |node, path| {
        if let BTNode::Leaf { kind, name, args } = node {
            if *kind == LeafKind::Action && name == ACTION_MOVE_POSE {
                for arg in args {
                    moves.push((path.to_string(), arg.base_label().to_string(), arg.dz()));
                }
            }
        }
    });
    let mut violations = Vec::new();
    for (i, (path, label, dz)) in moves.iter().enumerate() {
        if dz.is_some() || !spec.is_object_label(label) {
            continue;
        }
        let has_prior_offset = moves[..i]
            .iter()
            .any(|(_, l, d)| l == label && d.is_some_and(|v| v > 0.0));
        if !has_prior_offset {
            violations.push(Violation {
                rule: RuleId::SpatialOffset,
                path: path.clone(),
                message: format!(
                    "MovePose reaches object label {label:?} directly with no earlier offset approach"
                ),
            });
        }
    }
    violations
}

/// Flags unknown primitive names, argument counts that disagree with the
/// declared arity, and argument labels absent from the metadata.
pub fn check_vocabulary_and_grounding(
    bt: &BTNode,
    spec: &SystemSpecification,
) -> Vec<Violation> {
    let mut violations = Vec::new();
    walk(bt, "$", &mut |node, path| {
        let BTNode::Leaf { kind, name, args } = node else {
            return;
        };
        let declared = match kind {
            LeafKind::Action => spec.action_arity(name),
            LeafKind::Condition => spec.condition_arity(name),
        };
        match declared {
            None => violations.push(Violation {
                rule: RuleId::Vocabulary,
                path: path.to_string(),
                message: format!("{} {name:?} is not in the primitive library", kind.as_str()),
            }),
            Some(arity) if args.len() != arity => violations.push(Violation {
                rule: RuleId::Vocabulary,
                path: path.to_string(),
                message: format!(
                    "{name} expects {arity} argument(s), found {}",
                    args.len()
                ),
            }),
            Some(_) => {}
        }
        for arg in args {
            if !spec.metadata().contains_key(arg.base_label()) {
                violations.push(Violation {
                    rule: RuleId::Grounding,
                    path: path.to_string(),
                    message: format!(
                        "label {:?} is not grounded in the metadata",
                        arg.base_label()
                    ),
                });
            }
        }
    });
    violations
}

/// Runs all checkers with default options (offset findings demoted to
/// warnings, the appropriate posture for externally produced trees).
pub fn validate(bt: &BTNode, spec: &SystemSpecification) -> ValidationReport {
    validate_with(bt, spec, ValidateOptions::default())
}

/// Runs all checkers. The report's booleans reflect exactly the
/// violations recorded against each rule; `schema_compliant()` is their
/// conjunction.
pub fn validate_with(
    bt: &BTNode,
    spec: &SystemSpecification,
    opts: ValidateOptions,
) -> ValidationReport {
    let flat = check_flat_hierarchy(bt);
    let guard = check_reactive_guarding(bt);
    let offset = check_offset_rule(bt, spec);
    let vocab_ground = check_vocabulary_and_grounding(bt, spec);

    let mut violations = Vec::new();
    let mut warnings = Vec::new();
    violations.extend(flat);
    violations.extend(guard);
    match opts.offset_severity {
        Severity::Error => violations.extend(offset),
        Severity::Warning => warnings.extend(offset),
    }
    violations.extend(vocab_ground);

    let has = |rule: RuleId| violations.iter().any(|v| v.rule == rule);
    ValidationReport {
        flat_hierarchy_ok: !has(RuleId::FlatHierarchy),
        guarding_ok: !has(RuleId::ReactiveGuarding),
        offset_ok: !has(RuleId::SpatialOffset),
        vocabulary_ok: !has(RuleId::Vocabulary),
        grounding_ok: !has(RuleId::Grounding),
        violations,
        warnings,
    }
}

fn walk<'a>(node: &'a BTNode, path: &str, f: &mut impl FnMut(&'a BTNode, &str)) {
    f(node, path);
    for (i, child) in node.children().iter().enumerate() {
        walk(child, &format!("{path}.children[{i}]"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{parse_document, lower, ArgExpr, Pose};
    use std::collections::BTreeMap;

    fn test_spec() -> SystemSpecification {
        let metadata = BTreeMap::from([
            ("home".to_string(), Pose::at(0.5, 0.0, 0.75)),
            ("temp_pose".to_string(), Pose::at(0.3, 0.2, 0.4)),
            ("object_metadata".to_string(), Pose::at(0.4, 0.1, 0.42)),
            ("obj".to_string(), Pose::at(0.45, -0.1, 0.43)),
        ]);
        SystemSpecification::standard_library(metadata, 0.4).unwrap()
    }

    fn pick_example() -> BTNode {
        let text = r#"{"type":"Selector","children":[{"type":"Condition","name":"is_grasped"},{"type":"Sequence","children":[{"type":"Action","name":"MovePose","args":["object_metadata"]},{"type":"Action","name":"CloseGripper"}]}]}"#;
        lower(&parse_document(text).unwrap(), &test_spec()).unwrap()
    }

    fn move_to(label: &str) -> BTNode {
        BTNode::action(ACTION_MOVE_POSE, vec![ArgExpr::label(label).unwrap()])
    }

    fn move_above(label: &str, dz: f64) -> BTNode {
        BTNode::action(
            ACTION_MOVE_POSE,
            vec![ArgExpr::with_offset(label, dz).unwrap()],
        )
    }

    #[test]
    fn nested_same_kind_is_flagged_at_child_path() {
        let tree = BTNode::sequence(vec![BTNode::sequence(vec![BTNode::action(
            "OpenGripper",
            vec![],
        )])]);
        let v = check_flat_hierarchy(&tree);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].path, "$.children[0]");
    }

    #[test]
    fn pick_example_is_flat() {
        assert!(check_flat_hierarchy(&pick_example()).is_empty());
    }

    #[test]
    fn single_leaf_is_flat() {
        assert!(check_flat_hierarchy(&BTNode::action("OpenGripper", vec![])).is_empty());
    }

    #[test]
    fn guarded_parallel_passes() {
        let tree = BTNode::parallel(vec![
            BTNode::condition("is_at_pose", vec![ArgExpr::label("obj").unwrap()]),
            move_to("obj"),
        ]);
        assert!(check_reactive_guarding(&tree).is_empty());
    }

    #[test]
    fn bare_sequence_of_actions_is_unguarded() {
        let tree = BTNode::sequence(vec![move_to("obj"), BTNode::action("CloseGripper", vec![])]);
        let v = check_reactive_guarding(&tree);
        assert_eq!(v.len(), 2);
    }

    #[test]
    fn pick_example_is_guarded_by_root_selector() {
        assert!(check_reactive_guarding(&pick_example()).is_empty());
    }

    #[test]
    fn offset_rule_requires_prior_offset_approach() {
        let spec = test_spec();

        let ok = BTNode::sequence(vec![
            move_above("obj", 0.1),
            move_to("obj"),
            BTNode::action("CloseGripper", vec![]),
        ]);
        assert!(check_offset_rule(&ok, &spec).is_empty());

        let bad = BTNode::sequence(vec![move_to("obj"), BTNode::action("CloseGripper", vec![])]);
        let v = check_offset_rule(&bad, &spec);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].path, "$.children[0]");
    }

    #[test]
    fn waypoints_are_exempt_from_offset_rule() {
        let spec = test_spec();
        let tree = BTNode::sequence(vec![move_to("home"), move_to("temp_pose")]);
        assert!(check_offset_rule(&tree, &spec).is_empty());
    }

    #[test]
    fn offset_must_come_before_not_after() {
        let spec = test_spec();
        let tree = BTNode::sequence(vec![move_to("obj"), move_above("obj", 0.1)]);
        assert_eq!(check_offset_rule(&tree, &spec).len(), 1);
    }

    #[test]
    fn unknown_action_is_a_vocabulary_violation() {
        let spec = test_spec();
        let tree = BTNode::action("EngageVacuum", vec![]);
        let v = check_vocabulary_and_grounding(&tree, &spec);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, RuleId::Vocabulary);
    }

    #[test]
    fn known_condition_passes() {
        let spec = test_spec();
        let tree = BTNode::condition("is_grasped", vec![]);
        assert!(check_vocabulary_and_grounding(&tree, &spec).is_empty());
    }

    #[test]
    fn ungrounded_label_is_flagged() {
        let spec = test_spec();
        let tree = move_to("unknown_blob_9");
        let v = check_vocabulary_and_grounding(&tree, &spec);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, RuleId::Grounding);
    }

    #[test]
    fn leaf_kind_matters_for_vocabulary() {
        let spec = test_spec();
        // is_grasped exists, but only as a condition.
        let tree = BTNode::action("is_grasped", vec![]);
        assert_eq!(check_vocabulary_and_grounding(&tree, &spec).len(), 1);
    }

    #[test]
    fn arity_mismatch_is_flagged() {
        let spec = test_spec();
        let tree = BTNode::condition("is_grasped", vec![ArgExpr::label("obj").unwrap()]);
        let v = check_vocabulary_and_grounding(&tree, &spec);
        assert_eq!(v.len(), 1);
        assert!(v[0].message.contains("expects 0"));
    }

    #[test]
    fn pick_example_is_compliant_by_default() {
        let report = validate(&pick_example(), &test_spec());
        assert!(report.schema_compliant(), "{:?}", report.violations);
        // The direct approach is still surfaced, as a warning.
        assert_eq!(report.warnings.len(), 1);
        assert_eq!(report.warnings[0].rule, RuleId::SpatialOffset);
    }

    #[test]
    fn strict_mode_promotes_offset_findings() {
        let report = validate_with(&pick_example(), &test_spec(), ValidateOptions::strict());
        assert!(!report.schema_compliant());
        assert!(!report.offset_ok);
    }

    #[test]
    fn nested_sequence_is_not_compliant() {
        let tree = BTNode::sequence(vec![BTNode::sequence(vec![BTNode::condition(
            "is_grasped",
            vec![],
        )])]);
        let report = validate(&tree, &test_spec());
        assert!(!report.flat_hierarchy_ok);
        assert!(!report.schema_compliant());
    }

    #[test]
    fn booleans_match_recorded_violations() {
        let tree = BTNode::sequence(vec![move_to("obj"), BTNode::action("EngageVacuum", vec![])]);
        let report = validate_with(&tree, &test_spec(), ValidateOptions::strict());
        for rule in [
            RuleId::FlatHierarchy,
            RuleId::ReactiveGuarding,
            RuleId::SpatialOffset,
            RuleId::Vocabulary,
            RuleId::Grounding,
        ] {
            let ok = match rule {
                RuleId::FlatHierarchy => report.flat_hierarchy_ok,
                RuleId::ReactiveGuarding => report.guarding_ok,
                RuleId::SpatialOffset => report.offset_ok,
                RuleId::Vocabulary => report.vocabulary_ok,
                RuleId::Grounding => report.grounding_ok,
            };
            assert_eq!(ok, !report.violations.iter().any(|v| v.rule == rule));
        }
    }

    #[test]
    fn validate_is_deterministic() {
        let tree = pick_example();
        let spec = test_spec();
        assert_eq!(validate(&tree, &spec), validate(&tree, &spec));
    }
}
