//! Property tests: codec round trips and checker/oracle equivalences
//! over randomized trees.

use std::collections::BTreeMap;

use proptest::prelude::*;

use btforge::metrics::tree_metrics;
use btforge::model::{
    lower, parse_document, serialize_minified, ArgExpr, BTNode, CompositeKind, LeafKind, Pose,
    SystemSpecification,
};
use btforge::validate::{check_flat_hierarchy, validate, validate_with, ValidateOptions};

fn table_spec() -> SystemSpecification {
    let metadata = BTreeMap::from([
        ("home".to_string(), Pose::at(0.5, 0.0, 0.75)),
        ("temp_pose".to_string(), Pose::at(0.3, 0.2, 0.4)),
    ]);
    SystemSpecification::standard_library(metadata, 0.4).unwrap()
}

fn arg_strategy() -> impl Strategy<Value = ArgExpr> {
    (
        "[A-Za-z0-9_]{1,12}",
        proptest::option::of(0.001f64..10.0),
    )
        .prop_map(|(label, dz)| match dz {
            None => ArgExpr::label(label).unwrap(),
            Some(dz) => ArgExpr::with_offset(label, dz).unwrap(),
        })
}

/// Leaves mix library primitives (respecting their arity, so lowering
/// accepts them) with out-of-vocabulary names, which carry no declared
/// arity.
fn leaf_strategy() -> impl Strategy<Value = BTNode> {
    prop_oneof![
        Just(BTNode::action("OpenGripper", vec![])),
        Just(BTNode::action("CloseGripper", vec![])),
        Just(BTNode::action("MoveDown", vec![])),
        arg_strategy().prop_map(|a| BTNode::action("MovePose", vec![a])),
        arg_strategy().prop_map(|a| BTNode::condition("is_at_pose", vec![a])),
        Just(BTNode::condition("is_grasped", vec![])),
        Just(BTNode::condition("is_contact", vec![])),
        Just(BTNode::condition("is_at_home", vec![])),
        (
            prop_oneof![Just(LeafKind::Action), Just(LeafKind::Condition)],
            "x_[a-z0-9_]{1,10}",
            proptest::collection::vec(arg_strategy(), 0..3),
        )
            .prop_map(|(kind, name, args)| BTNode::leaf(kind, name, args)),
    ]
}

fn kind_strategy() -> impl Strategy<Value = CompositeKind> {
    prop_oneof![
        Just(CompositeKind::Sequence),
        Just(CompositeKind::Selector),
        Just(CompositeKind::Parallel),
    ]
}

fn tree_strategy() -> impl Strategy<Value = BTNode> {
    leaf_strategy().prop_recursive(6, 64, 5, |inner| {
        (kind_strategy(), proptest::collection::vec(inner, 1..=5))
            .prop_map(|(kind, children)| BTNode::composite(kind, children))
    })
}

/// Independent flat-hierarchy oracle: enumerate every (parent, child)
/// composite pair with an explicit worklist.
fn brute_force_same_kind_pairs(bt: &BTNode) -> usize {
    let mut pairs = 0;
    let mut worklist = vec![bt];
    while let Some(node) = worklist.pop() {
        if let Some(kind) = node.composite_kind() {
            for child in node.children() {
                if child.composite_kind() == Some(kind) {
                    pairs += 1;
                }
                worklist.push(child);
            }
        }
    }
    pairs
}

/// Independent structure oracle: depth with an explicit stack, counts by
/// full enumeration.
fn oracle_metrics(bt: &BTNode) -> (usize, usize, usize) {
    let mut depth = 0;
    let mut leaves = 0;
    let mut composites = 0;
    let mut stack = vec![(bt, 1usize)];
    while let Some((node, level)) = stack.pop() {
        depth = depth.max(level);
        if node.is_composite() {
            composites += 1;
            for child in node.children() {
                stack.push((child, level + 1));
            }
        } else {
            leaves += 1;
        }
    }
    (depth, leaves, composites)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn serialize_parse_lower_round_trips(tree in tree_strategy()) {
        let spec = table_spec();
        let text = serialize_minified(&tree);
        let raw = parse_document(&text).unwrap();
        let lowered = lower(&raw, &spec).unwrap();
        prop_assert_eq!(&lowered, &tree);
        prop_assert!(!text.contains("null"));
        // Minified form is a fixed point.
        prop_assert_eq!(serialize_minified(&lowered), text);
    }
}

proptest! {
    #[test]
    fn flat_hierarchy_checker_matches_brute_force(tree in tree_strategy()) {
        let violations = check_flat_hierarchy(&tree);
        prop_assert_eq!(violations.len(), brute_force_same_kind_pairs(&tree));
    }

    #[test]
    fn tree_metrics_match_independent_traversal(tree in tree_strategy()) {
        let m = tree_metrics(&tree);
        let (depth, leaves, composites) = oracle_metrics(&tree);
        prop_assert_eq!(m.depth, depth);
        prop_assert_eq!(m.leaf_count, leaves);
        prop_assert_eq!(m.composite_count, composites);
        prop_assert_eq!(m.total_nodes, leaves + composites);
        prop_assert_eq!(m.node_density, composites as f64 / leaves as f64);
    }

    #[test]
    fn nesting_a_compliant_tree_breaks_compliance(tree in tree_strategy()) {
        let spec = table_spec();
        // Wrapping any tree in a same-kind pair of composites introduces a
        // flat-hierarchy violation that no other structure can cancel.
        let wrapped = BTNode::sequence(vec![BTNode::sequence(vec![tree])]);
        let report = validate(&wrapped, &spec);
        prop_assert!(!report.flat_hierarchy_ok);
        prop_assert!(!report.schema_compliant());
    }

    #[test]
    fn violation_paths_address_nodes_of_the_named_kind(tree in tree_strategy()) {
        let spec = table_spec();
        let report = validate_with(&tree, &spec, ValidateOptions::strict());
        let doc = serde_json::from_str::<serde_json::Value>(&serialize_minified(&tree)).unwrap();
        for violation in report.violations.iter().chain(report.warnings.iter()) {
            let node = follow_path(&doc, &violation.path);
            prop_assert!(node.is_some(), "dangling path {}", violation.path);
            prop_assert!(node.unwrap().get("type").is_some());
        }
    }
}

/// Follows `$.children[i]...` paths through a serialized tree.
fn follow_path<'a>(doc: &'a serde_json::Value, path: &str) -> Option<&'a serde_json::Value> {
    let mut node = doc;
    let rest = path.strip_prefix('$')?;
    for segment in rest.split('.').filter(|s| !s.is_empty()) {
        let idx: usize = segment
            .strip_prefix("children[")?
            .strip_suffix(']')?
            .parse()
            .ok()?;
        node = node.get("children")?.get(idx)?;
    }
    Some(node)
}
