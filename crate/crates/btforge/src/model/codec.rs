//! Two-stage JSON-BT codec.
//!
//! Stage one, [`parse_document`], only asks whether the text is
//! well-formed JSON; its failures count against JSON validity. Stage
//! two, [`lower`], turns the raw tree into a typed [`BTNode`] and
//! reports every key-level defect — missing mandatory fields, forbidden
//! fields such as a `name` on a composite, unknown `type` values,
//! malformed argument expressions, arity mismatches — as a
//! [`KeyErrorReport`]. Keeping the stages separate is what makes JSON
//! validity and key errors measurable independently: key errors are
//! undefined for documents that never parsed.
//!
//! The wire format is fixed: composites are
//! `{"type": "Sequence|Selector|Parallel", "children": [...]}` and
//! leaves are `{"type": "Action|Condition", "name": "...", "args":
//! ["label", "label+z=0.1", ...]}` with `args` optional. The minified
//! serializer emits keys in the order `type, name, args, children`,
//! never emits `null`, and omits absent optional fields entirely.

use serde::Serialize;
use serde_json::{Map, Value};
use thiserror::Error;

use super::sysspec::SystemSpecification;
use super::{ArgExpr, BTNode, CompositeKind, LeafKind};

/// A parsed but untyped JSON document. Key order is preserved as
/// written.
pub type RawNode = Value;

/// A JSON well-formedness failure, with the position the parser
/// reported.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid JSON at line {line}, column {column}: {message}")]
pub struct JsonError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

/// One key-level defect found while lowering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct KeyError {
    /// JSON path of the node carrying the defect, e.g. `$.children[1]`.
    pub path: String,
    /// The missing or forbidden key.
    pub key: String,
    pub reason: String,
}

/// All key-level defects of one document. Empty reports never escape
/// [`lower`]: lowering either succeeds or returns a non-empty report.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
pub struct KeyErrorReport {
    pub entries: Vec<KeyError>,
}

impl KeyErrorReport {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    fn push(&mut self, path: &str, key: &str, reason: impl Into<String>) {
        self.entries.push(KeyError {
            path: path.to_string(),
            key: key.to_string(),
            reason: reason.into(),
        });
    }
}

impl std::fmt::Display for KeyErrorReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} key error(s)", self.entries.len())?;
        for e in &self.entries {
            write!(f, "\n  {} key {:?}: {}", e.path, e.key, e.reason)?;
        }
        Ok(())
    }
}

/// Parses a document into a raw JSON tree, preserving key order.
pub fn parse_document(text: &str) -> Result<RawNode, JsonError> {
    serde_json::from_str(text).map_err(|e| JsonError {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// Lowers a raw JSON tree into a typed behavior tree, collecting every
/// key defect instead of stopping at the first.
pub fn lower(raw: &RawNode, spec: &SystemSpecification) -> Result<BTNode, KeyErrorReport> {
    let mut report = KeyErrorReport::default();
    let node = lower_node(raw, "$", spec, &mut report);
    match node {
        Some(node) if report.is_empty() => Ok(node),
        _ => {
            if report.is_empty() {
                // Unreachable by construction, but never return an empty
                // failure report.
                report.push("$", "type", "node could not be lowered");
            }
            Err(report)
        }
    }
}

fn lower_node(
    raw: &RawNode,
    path: &str,
    spec: &SystemSpecification,
    report: &mut KeyErrorReport,
) -> Option<BTNode> {
    let obj = match raw.as_object() {
        Some(obj) => obj,
        None => {
            report.push(path, "type", "node must be a JSON object");
            return None;
        }
    };
    let type_value = match obj.get("type") {
        Some(v) => v,
        None => {
            report.push(path, "type", "missing mandatory key");
            recurse_children_if_present(obj, path, spec, report);
            return None;
        }
    };
    let type_str = match type_value.as_str() {
        Some(s) => s,
        None => {
            report.push(path, "type", "type must be a string");
            recurse_children_if_present(obj, path, spec, report);
            return None;
        }
    };

    if let Some(kind) = CompositeKind::from_name(type_str) {
        lower_composite(obj, kind, path, spec, report)
    } else if let Some(kind) = LeafKind::from_name(type_str) {
        lower_leaf(obj, kind, path, spec, report)
    } else {
        report.push(path, "type", format!("unknown node type {type_str:?}"));
        recurse_children_if_present(obj, path, spec, report);
        None
    }
}

fn lower_composite(
    obj: &Map<String, Value>,
    kind: CompositeKind,
    path: &str,
    spec: &SystemSpecification,
    report: &mut KeyErrorReport,
) -> Option<BTNode> {
    for key in obj.keys() {
        if key != "type" && key != "children" {
            report.push(
                path,
                key,
                format!("forbidden key on a {} node", kind.as_str()),
            );
        }
    }
    let children_value = match obj.get("children") {
        Some(v) => v,
        None => {
            report.push(path, "children", "missing mandatory key");
            return None;
        }
    };
    let items = match children_value.as_array() {
        Some(items) if !items.is_empty() => items,
        Some(_) => {
            report.push(path, "children", "children must be a non-empty array");
            return None;
        }
        None => {
            report.push(path, "children", "children must be a non-empty array");
            return None;
        }
    };
    let mut children = Vec::with_capacity(items.len());
    let mut all_ok = true;
    for (i, item) in items.iter().enumerate() {
        let child_path = format!("{path}.children[{i}]");
        match lower_node(item, &child_path, spec, report) {
            Some(child) => children.push(child),
            None => all_ok = false,
        }
    }
    if all_ok {
        Some(BTNode::composite(kind, children))
    } else {
        None
    }
}

fn lower_leaf(
    obj: &Map<String, Value>,
    kind: LeafKind,
    path: &str,
    spec: &SystemSpecification,
    report: &mut KeyErrorReport,
) -> Option<BTNode> {
    for key in obj.keys() {
        if key != "type" && key != "name" && key != "args" {
            report.push(
                path,
                key,
                format!("forbidden key on a {} node", kind.as_str()),
            );
        }
    }
    let name = match obj.get("name") {
        None => {
            report.push(path, "name", "missing mandatory key");
            None
        }
        Some(v) => match v.as_str() {
            Some(s) if !s.is_empty() => Some(s.to_string()),
            _ => {
                report.push(path, "name", "name must be a non-empty string");
                None
            }
        },
    };
    let mut args = Vec::new();
    let mut args_ok = true;
    if let Some(args_value) = obj.get("args") {
        match args_value.as_array() {
            None => {
                report.push(path, "args", "args must be an array of strings");
                args_ok = false;
            }
            Some(items) => {
                for (i, item) in items.iter().enumerate() {
                    match item.as_str() {
                        None => {
                            report.push(path, "args", format!("args[{i}] must be a string"));
                            args_ok = false;
                        }
                        Some(text) => match ArgExpr::parse(text) {
                            Ok(expr) => args.push(expr),
                            Err(e) => {
                                report.push(
                                    path,
                                    "args",
                                    format!("args[{i}] {text:?} is not a valid expression: {e}"),
                                );
                                args_ok = false;
                            }
                        },
                    }
                }
            }
        }
    }
    let name = name?;
    if !args_ok {
        return None;
    }
    // Arity is enforced here for names the specification declares, so
    // argument drift on known primitives surfaces as a key error rather
    // than slipping through to execution.
    let declared = match kind {
        LeafKind::Action => spec.action_arity(&name),
        LeafKind::Condition => spec.condition_arity(&name),
    };
    if let Some(arity) = declared {
        if args.len() != arity {
            report.push(
                path,
                "args",
                format!(
                    "{name} expects {arity} argument(s), found {}",
                    args.len()
                ),
            );
            return None;
        }
    }
    Some(BTNode::leaf(kind, name, args))
}

fn recurse_children_if_present(
    obj: &Map<String, Value>,
    path: &str,
    spec: &SystemSpecification,
    report: &mut KeyErrorReport,
) {
    if let Some(items) = obj.get("children").and_then(Value::as_array) {
        for (i, item) in items.iter().enumerate() {
            let child_path = format!("{path}.children[{i}]");
            lower_node(item, &child_path, spec, report);
        }
    }
}

/// Converts a typed tree to a JSON value with the canonical key order
/// `type, name, args, children`. Absent optional fields produce no key.
pub fn bt_to_json_value(bt: &BTNode) -> Value {
    let mut obj = Map::new();
    match bt {
        BTNode::Composite { kind, children } => {
            obj.insert("type".into(), Value::String(kind.as_str().into()));
            obj.insert(
                "children".into(),
                Value::Array(children.iter().map(bt_to_json_value).collect()),
            );
        }
        BTNode::Leaf { kind, name, args } => {
            obj.insert("type".into(), Value::String(kind.as_str().into()));
            obj.insert("name".into(), Value::String(name.clone()));
            if !args.is_empty() {
                obj.insert(
                    "args".into(),
                    Value::Array(args.iter().map(|a| Value::String(a.render())).collect()),
                );
            }
        }
    }
    Value::Object(obj)
}

/// Serializes a tree to single-line minified JSON. The output contains
/// no whitespace outside strings and no `null` tokens; re-parsing and
/// re-lowering it yields a structurally identical tree.
pub fn serialize_minified(bt: &BTNode) -> String {
    serde_json::to_string(&bt_to_json_value(bt)).expect("BT serialization cannot fail")
}
