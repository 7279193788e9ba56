//! Domain types for behavior trees: node kinds, argument expressions,
//! poses, and the system specification the trees are grounded in.
//!
//! A tree is a [`BTNode`] over five kinds. Composite nodes (`Sequence`,
//! `Selector`, `Parallel`) carry only ordered children; leaf nodes
//! (`Action`, `Condition`) carry a primitive name plus optional
//! [`ArgExpr`] arguments. Arguments are always symbolic labels, resolved
//! against the live metadata map at evaluation time, never hard-coded
//! coordinates.

mod codec;
mod pose;
mod sysspec;

pub use codec::{
    bt_to_json_value, lower, parse_document, serialize_minified, JsonError, KeyError,
    KeyErrorReport, RawNode,
};
pub use pose::{Pose, PoseError};
pub use sysspec::{
    SpecError, SystemSpecification, ACTION_CLOSE_GRIPPER, ACTION_MOVE_DOWN, ACTION_MOVE_POSE,
    ACTION_OPEN_GRIPPER, COND_IS_AT_HOME, COND_IS_AT_POSE, COND_IS_CONTACT, COND_IS_GRASPED,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Kinds of internal (composite) nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CompositeKind {
    Sequence,
    Selector,
    Parallel,
}

impl CompositeKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CompositeKind::Sequence => "Sequence",
            CompositeKind::Selector => "Selector",
            CompositeKind::Parallel => "Parallel",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "Sequence" => Some(CompositeKind::Sequence),
            "Selector" => Some(CompositeKind::Selector),
            "Parallel" => Some(CompositeKind::Parallel),
            _ => None,
        }
    }
}

/// Kinds of leaf nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LeafKind {
    Action,
    Condition,
}

impl LeafKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            LeafKind::Action => "Action",
            LeafKind::Condition => "Condition",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "Action" => Some(LeafKind::Action),
            "Condition" => Some(LeafKind::Condition),
            _ => None,
        }
    }
}

/// Errors raised when building an [`ArgExpr`].
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ArgError {
    #[error("empty label")]
    EmptyLabel,
    #[error("label {0:?} contains characters outside [A-Za-z0-9_]")]
    BadLabelChars(String),
    #[error("offset {0:?} is not a decimal number")]
    BadOffset(String),
    #[error("offset must be strictly positive, got {0}")]
    NonPositiveOffset(f64),
    #[error("malformed argument expression {0:?}")]
    Malformed(String),
}

/// A symbolic pose argument: a metadata label with an optional positive
/// vertical offset, written `label` or `label+z=0.1`.
///
/// Keeping arguments symbolic is what lets conditions and motions
/// re-resolve the referenced pose at every evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ArgExpr {
    base_label: String,
    dz: Option<f64>,
}

impl ArgExpr {
    pub fn label(label: impl Into<String>) -> Result<Self, ArgError> {
        let base_label = label.into();
        check_label(&base_label)?;
        Ok(ArgExpr {
            base_label,
            dz: None,
        })
    }

    pub fn with_offset(label: impl Into<String>, dz: f64) -> Result<Self, ArgError> {
        let base_label = label.into();
        check_label(&base_label)?;
        if !dz.is_finite() || dz <= 0.0 {
            return Err(ArgError::NonPositiveOffset(dz));
        }
        Ok(ArgExpr {
            base_label,
            dz: Some(dz),
        })
    }

    /// Parses the textual grammar `label` | `label+z=DECIMAL` with a
    /// strictly positive decimal offset.
    pub fn parse(text: &str) -> Result<Self, ArgError> {
        match text.split_once("+z=") {
            None => ArgExpr::label(text),
            Some((label, offset)) => {
                check_label(label)?;
                if offset.is_empty()
                    || !offset
                        .bytes()
                        .all(|b| b.is_ascii_digit() || b == b'.')
                {
                    return Err(ArgError::BadOffset(offset.to_string()));
                }
                let dz: f64 = offset
                    .parse()
                    .map_err(|_| ArgError::BadOffset(offset.to_string()))?;
                ArgExpr::with_offset(label, dz)
            }
        }
    }

    pub fn base_label(&self) -> &str {
        &self.base_label
    }

    pub fn dz(&self) -> Option<f64> {
        self.dz
    }

    /// Renders back to the textual grammar. Offsets use the shortest
    /// decimal form, so no trailing zeros appear.
    pub fn render(&self) -> String {
        match self.dz {
            None => self.base_label.clone(),
            Some(dz) => format!("{}+z={}", self.base_label, dz),
        }
    }
}

impl std::fmt::Display for ArgExpr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.render())
    }
}

impl TryFrom<String> for ArgExpr {
    type Error = ArgError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        ArgExpr::parse(&s)
    }
}

impl From<ArgExpr> for String {
    fn from(e: ArgExpr) -> String {
        e.render()
    }
}

fn check_label(label: &str) -> Result<(), ArgError> {
    if label.is_empty() {
        return Err(ArgError::EmptyLabel);
    }
    if !label
        .bytes()
        .all(|b| b.is_ascii_alphanumeric() || b == b'_')
    {
        return Err(ArgError::BadLabelChars(label.to_string()));
    }
    Ok(())
}

/// A typed behavior tree node.
///
/// Invariants enforced by the constructors: composites have at least one
/// child and no name or args; leaves have a non-empty name and no
/// children.
#[derive(Debug, Clone, PartialEq)]
pub enum BTNode {
    Composite {
        kind: CompositeKind,
        children: Vec<BTNode>,
    },
    Leaf {
        kind: LeafKind,
        name: String,
        args: Vec<ArgExpr>,
    },
}

impl BTNode {
    pub fn sequence(children: Vec<BTNode>) -> Self {
        Self::composite(CompositeKind::Sequence, children)
    }

    pub fn selector(children: Vec<BTNode>) -> Self {
        Self::composite(CompositeKind::Selector, children)
    }

    pub fn parallel(children: Vec<BTNode>) -> Self {
        Self::composite(CompositeKind::Parallel, children)
    }

    /// Panics if `children` is empty; composites must have at least one child.
    pub fn composite(kind: CompositeKind, children: Vec<BTNode>) -> Self {
        assert!(
            !children.is_empty(),
            "composite {} requires at least one child",
            kind.as_str()
        );
        BTNode::Composite { kind, children }
    }

    /// Panics if `name` is empty.
    pub fn leaf(kind: LeafKind, name: impl Into<String>, args: Vec<ArgExpr>) -> Self {
        let name = name.into();
        assert!(!name.is_empty(), "leaf name must be non-empty");
        BTNode::Leaf { kind, name, args }
    }

    pub fn action(name: impl Into<String>, args: Vec<ArgExpr>) -> Self {
        Self::leaf(LeafKind::Action, name, args)
    }

    pub fn condition(name: impl Into<String>, args: Vec<ArgExpr>) -> Self {
        Self::leaf(LeafKind::Condition, name, args)
    }

    pub fn is_composite(&self) -> bool {
        matches!(self, BTNode::Composite { .. })
    }

    pub fn composite_kind(&self) -> Option<CompositeKind> {
        match self {
            BTNode::Composite { kind, .. } => Some(*kind),
            BTNode::Leaf { .. } => None,
        }
    }

    pub fn leaf_kind(&self) -> Option<LeafKind> {
        match self {
            BTNode::Composite { .. } => None,
            BTNode::Leaf { kind, .. } => Some(*kind),
        }
    }

    /// Children of a composite; empty slice for leaves.
    pub fn children(&self) -> &[BTNode] {
        match self {
            BTNode::Composite { children, .. } => children,
            BTNode::Leaf { .. } => &[],
        }
    }

    pub fn name(&self) -> Option<&str> {
        match self {
            BTNode::Composite { .. } => None,
            BTNode::Leaf { name, .. } => Some(name),
        }
    }

    pub fn args(&self) -> &[ArgExpr] {
        match self {
            BTNode::Composite { .. } => &[],
            BTNode::Leaf { args, .. } => args,
        }
    }

    /// Display label: the composite kind or the leaf primitive name.
    pub fn describe(&self) -> &str {
        match self {
            BTNode::Composite { kind, .. } => kind.as_str(),
            BTNode::Leaf { name, .. } => name,
        }
    }
}

/// Error returned when an argument references a label absent from the
/// metadata map.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("unknown metadata label {0:?}")]
pub struct UnknownLabel(pub String);

/// Resolves an argument expression against the specification's current
/// metadata. The label is looked up now, never cached, so a metadata
/// update between two calls is visible to the second call. The optional
/// offset is added to z; rotation is untouched.
pub fn resolve_arg(expr: &ArgExpr, spec: &SystemSpecification) -> Result<Pose, UnknownLabel> {
    let base = spec
        .metadata()
        .get(expr.base_label())
        .ok_or_else(|| UnknownLabel(expr.base_label().to_string()))?;
    Ok(match expr.dz() {
        None => *base,
        Some(dz) => base.offset_z(dz),
    })
}
