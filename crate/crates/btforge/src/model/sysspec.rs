//! The system specification: primitive vocabulary with arities, dynamic
//! metadata (label -> pose), waypoint labels, and safety parameters.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::pose::Pose;

pub const ACTION_MOVE_POSE: &str = "MovePose";
pub const ACTION_OPEN_GRIPPER: &str = "OpenGripper";
pub const ACTION_CLOSE_GRIPPER: &str = "CloseGripper";
pub const ACTION_MOVE_DOWN: &str = "MoveDown";
pub const COND_IS_AT_POSE: &str = "is_at_pose";
pub const COND_IS_GRASPED: &str = "is_grasped";
pub const COND_IS_CONTACT: &str = "is_contact";
pub const COND_IS_AT_HOME: &str = "is_at_home";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecError {
    #[error("home label {0:?} is missing from metadata")]
    HomeNotInMetadata(String),
    #[error("temp label {0:?} is missing from metadata")]
    TempNotInMetadata(String),
    #[error("z_offset_default must be strictly positive, got {0}")]
    NonPositiveOffset(f64),
    #[error("primitive {0:?} is declared both as an action and a condition")]
    OverlappingVocabulary(String),
    #[error("primitive {0:?} declares arity {1}; only 0 or 1 are supported")]
    BadArity(String, usize),
}

/// The structured context a tree is validated and executed against:
/// which primitives exist (and how many pose arguments each takes),
/// which labels are grounded, and the safety offset defaults.
///
/// `metadata` is the one mutable part; the simulator updates it when an
/// object is displaced so label resolution stays current.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec")]
pub struct SystemSpecification {
    actions: BTreeMap<String, usize>,
    conditions: BTreeMap<String, usize>,
    metadata: BTreeMap<String, Pose>,
    home_label: String,
    temp_label: String,
    z_offset_default: f64,
    table_height: f64,
}

#[derive(Deserialize)]
struct RawSpec {
    actions: BTreeMap<String, usize>,
    conditions: BTreeMap<String, usize>,
    metadata: BTreeMap<String, Pose>,
    home_label: String,
    temp_label: String,
    z_offset_default: f64,
    table_height: f64,
}

impl TryFrom<RawSpec> for SystemSpecification {
    type Error = SpecError;

    fn try_from(raw: RawSpec) -> Result<Self, Self::Error> {
        SystemSpecification::new(
            raw.actions,
            raw.conditions,
            raw.metadata,
            raw.home_label,
            raw.temp_label,
            raw.z_offset_default,
            raw.table_height,
        )
    }
}

impl SystemSpecification {
    pub fn new(
        actions: BTreeMap<String, usize>,
        conditions: BTreeMap<String, usize>,
        metadata: BTreeMap<String, Pose>,
        home_label: String,
        temp_label: String,
        z_offset_default: f64,
        table_height: f64,
    ) -> Result<Self, SpecError> {
        if !metadata.contains_key(&home_label) {
            return Err(SpecError::HomeNotInMetadata(home_label));
        }
        if !metadata.contains_key(&temp_label) {
            return Err(SpecError::TempNotInMetadata(temp_label));
        }
        if !(z_offset_default.is_finite() && z_offset_default > 0.0) {
            return Err(SpecError::NonPositiveOffset(z_offset_default));
        }
        for (name, arity) in actions.iter().chain(conditions.iter()) {
            if *arity > 1 {
                return Err(SpecError::BadArity(name.clone(), *arity));
            }
        }
        if let Some(name) = actions.keys().find(|n| conditions.contains_key(*n)) {
            return Err(SpecError::OverlappingVocabulary(name.clone()));
        }
        Ok(SystemSpecification {
            actions,
            conditions,
            metadata,
            home_label,
            temp_label,
            z_offset_default,
            table_height,
        })
    }

    /// Specification with the standard tabletop primitive library:
    /// MovePose/1, OpenGripper/0, CloseGripper/0, MoveDown/0 and
    /// is_at_pose/1, is_grasped/0, is_contact/0, is_at_home/0.
    ///
    /// `metadata` must already contain the `home` and `temp_pose`
    /// waypoints.
    pub fn standard_library(
        metadata: BTreeMap<String, Pose>,
        table_height: f64,
    ) -> Result<Self, SpecError> {
        let actions = BTreeMap::from([
            (ACTION_MOVE_POSE.to_string(), 1),
            (ACTION_OPEN_GRIPPER.to_string(), 0),
            (ACTION_CLOSE_GRIPPER.to_string(), 0),
            (ACTION_MOVE_DOWN.to_string(), 0),
        ]);
        let conditions = BTreeMap::from([
            (COND_IS_AT_POSE.to_string(), 1),
            (COND_IS_GRASPED.to_string(), 0),
            (COND_IS_CONTACT.to_string(), 0),
            (COND_IS_AT_HOME.to_string(), 0),
        ]);
        SystemSpecification::new(
            actions,
            conditions,
            metadata,
            "home".to_string(),
            "temp_pose".to_string(),
            0.1,
            table_height,
        )
    }

    pub fn actions(&self) -> &BTreeMap<String, usize> {
        &self.actions
    }

    pub fn conditions(&self) -> &BTreeMap<String, usize> {
        &self.conditions
    }

    pub fn action_arity(&self, name: &str) -> Option<usize> {
        self.actions.get(name).copied()
    }

    pub fn condition_arity(&self, name: &str) -> Option<usize> {
        self.conditions.get(name).copied()
    }

    pub fn metadata(&self) -> &BTreeMap<String, Pose> {
        &self.metadata
    }

    /// Mutable metadata access for the simulator's displacement updates.
    pub fn metadata_mut(&mut self) -> &mut BTreeMap<String, Pose> {
        &mut self.metadata
    }

    pub fn home_label(&self) -> &str {
        &self.home_label
    }

    pub fn temp_label(&self) -> &str {
        &self.temp_label
    }

    /// True for labels that name scene objects rather than free-space
    /// waypoints.
    pub fn is_object_label(&self, label: &str) -> bool {
        self.metadata.contains_key(label) && label != self.home_label && label != self.temp_label
    }

    pub fn z_offset_default(&self) -> f64 {
        self.z_offset_default
    }

    pub fn table_height(&self) -> f64 {
        self.table_height
    }
}
