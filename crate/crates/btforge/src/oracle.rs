//! Rule-based ground-truth generation: given a scene, deterministically
//! sample a task, render an instruction, synthesize a behavior tree that
//! satisfies every structural rule, and derive machine-checkable goal
//! predicates.
//!
//! Synthesized trees follow one layout. Every motion is the guarded pair
//! `Parallel[is_at_pose(p), MovePose(p)]`; every grasp is the selector
//! `Selector[is_grasped, Sequence[approach(L+z), descend(L), close]]`;
//! multi-phase tasks flatten their phases into one memory sequence with
//! `is_grasped` checkpoints between carries. The root is a selector over
//! the main plan, an `is_at_home` check, and a retreat-home motion: when
//! a checkpoint trips (say the object slipped out mid-carry), the plan
//! sequence fails and resets, the root absorbs the failure by stepping
//! toward home, and the next tick restarts the plan from the fetch — whose
//! re-resolved label now points at wherever the object actually is.
//!
//! Swaps decompose into three transport phases through the `temp_pose`
//! buffer: first object to the buffer, second object into the first's
//! vacated position, first object from the buffer into the second's
//! vacated position. Vacated positions stay addressable by their labels
//! because commanded placements never rewrite metadata.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::model::{
    bt_to_json_value, ArgExpr, BTNode, Pose, SystemSpecification, ACTION_CLOSE_GRIPPER,
    ACTION_MOVE_DOWN, ACTION_MOVE_POSE, ACTION_OPEN_GRIPPER, COND_IS_AT_HOME, COND_IS_AT_POSE,
    COND_IS_CONTACT, COND_IS_GRASPED,
};
use crate::scene::{generate_scene, Scene, SceneConfig, SceneError, SceneObject, Shape};
use crate::validate::{validate_with, ValidateOptions};

/// Horizontal tolerance for position goals, meters.
pub const DEFAULT_GOAL_TOL: f64 = 0.01;

/// Scene regenerations allowed per sample before giving up on a kind.
const SCENE_RETRY_BUDGET: u64 = 64;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TaskError {
    #[error("no task kind is feasible for this scene")]
    InfeasibleScene,
    #[error("task is infeasible: {0}")]
    InfeasibleTask(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DatasetError {
    #[error("sample {index}: {source}")]
    Scene { index: usize, source: SceneError },
    #[error("sample {index}: {source}")]
    Task { index: usize, source: TaskError },
    #[error("sample {index}: no feasible scene found for kind {kind:?}")]
    NoFeasibleScene { index: usize, kind: TaskKind },
    #[error("sample {index}: synthesized tree failed validation: {detail}")]
    InvalidSample { index: usize, detail: String },
    #[error("record {line}: {detail}")]
    Parse { line: usize, detail: String },
}

/// The seven task families the oracle can pose.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Pick,
    Lift,
    PlaceOn,
    StackOn,
    MoveToTemp,
    StackAllColor,
    Swap,
}

impl TaskKind {
    pub const ALL: [TaskKind; 7] = [
        TaskKind::Pick,
        TaskKind::Lift,
        TaskKind::PlaceOn,
        TaskKind::StackOn,
        TaskKind::MoveToTemp,
        TaskKind::StackAllColor,
        TaskKind::Swap,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TaskKind::Pick => "pick",
            TaskKind::Lift => "lift",
            TaskKind::PlaceOn => "place_on",
            TaskKind::StackOn => "stack_on",
            TaskKind::MoveToTemp => "move_to_temp",
            TaskKind::StackAllColor => "stack_all_color",
            TaskKind::Swap => "swap",
        }
    }
}

/// A sampled task: what to do, to which objects, phrased how.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub kind: TaskKind,
    pub referents: Vec<String>,
    pub instruction: String,
    pub seed: u64,
}

/// A machine-checkable goal over the final world state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GoalPredicate {
    Grasped {
        object: String,
    },
    On {
        top: String,
        bottom: String,
    },
    /// Object must rest horizontally within `tol` of `pose`, which is a
    /// snapshot of `label`'s pose at task creation — live metadata may
    /// have moved on by the time the goal is checked.
    AtLabelPose {
        object: String,
        label: String,
        pose: Pose,
        tol: f64,
    },
    AtHome,
    GripperOpen,
}

/// How grasp descents are synthesized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DescendMode {
    /// Descend with a guarded MovePose straight to the object label.
    #[default]
    MovePose,
    /// Descend with MoveDown until force contact.
    MoveDownContact,
}

/// Relative sampling weights of the task kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindWeights {
    pub pick: f64,
    pub lift: f64,
    pub place_on: f64,
    pub stack_on: f64,
    pub move_to_temp: f64,
    pub stack_all_color: f64,
    pub swap: f64,
}

impl Default for KindWeights {
    fn default() -> Self {
        KindWeights {
            pick: 1.0,
            lift: 1.0,
            place_on: 1.0,
            stack_on: 1.0,
            move_to_temp: 1.0,
            stack_all_color: 1.0,
            swap: 1.0,
        }
    }
}

impl KindWeights {
    pub fn get(&self, kind: TaskKind) -> f64 {
        match kind {
            TaskKind::Pick => self.pick,
            TaskKind::Lift => self.lift,
            TaskKind::PlaceOn => self.place_on,
            TaskKind::StackOn => self.stack_on,
            TaskKind::MoveToTemp => self.move_to_temp,
            TaskKind::StackAllColor => self.stack_all_color,
            TaskKind::Swap => self.swap,
        }
    }

    /// Normalized weight of each kind.
    pub fn normalized(&self) -> Vec<(TaskKind, f64)> {
        let total: f64 = TaskKind::ALL.iter().map(|k| self.get(*k)).sum();
        TaskKind::ALL
            .iter()
            .map(|k| (*k, self.get(*k) / total))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OracleConfig {
    #[serde(default)]
    pub descend: DescendMode,
    #[serde(default)]
    pub weights: KindWeights,
}

/// Everything generated for one dataset entry.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSample {
    pub scene: Scene,
    pub spec: SystemSpecification,
    pub task: TaskInstance,
    pub target_bt: BTNode,
    pub goals: Vec<GoalPredicate>,
}

/// A dataset entry as read back from JSONL. The task phrasing survives;
/// the structured task description does not (the goals carry the
/// checkable semantics).
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub index: usize,
    pub scene: Scene,
    pub instruction: String,
    pub spec: SystemSpecification,
    pub bt: Value,
    pub goals: Vec<GoalPredicate>,
    pub seed: u64,
}

/// SplitMix64-style derivation of per-sample seeds from a master seed.
pub fn mix_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn kind_feasible(kind: TaskKind, scene: &Scene) -> bool {
    match kind {
        TaskKind::Pick | TaskKind::Lift | TaskKind::MoveToTemp => !scene.objects.is_empty(),
        TaskKind::PlaceOn | TaskKind::StackOn | TaskKind::Swap => scene.objects.len() >= 2,
        TaskKind::StackAllColor => {
            let mut counts = std::collections::BTreeMap::new();
            for obj in &scene.objects {
                *counts.entry(&obj.color).or_insert(0usize) += 1;
            }
            counts.values().any(|c| *c >= 2)
        }
    }
}

fn weighted_kind(
    candidates: &[TaskKind],
    weights: &KindWeights,
    rng: &mut ChaCha8Rng,
) -> Option<TaskKind> {
    let total: f64 = candidates.iter().map(|k| weights.get(*k)).sum();
    if total <= 0.0 {
        return None;
    }
    let mut roll = rng.gen_range(0.0..total);
    for kind in candidates {
        let w = weights.get(*kind);
        if roll < w {
            return Some(*kind);
        }
        roll -= w;
    }
    candidates.last().copied()
}

/// Samples a task uniformly over the kinds feasible for this scene.
pub fn sample_task(seed: u64, scene: &Scene) -> Result<TaskInstance, TaskError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let feasible: Vec<TaskKind> = TaskKind::ALL
        .into_iter()
        .filter(|k| kind_feasible(*k, scene))
        .collect();
    if feasible.is_empty() {
        return Err(TaskError::InfeasibleScene);
    }
    let kind = weighted_kind(&feasible, &KindWeights::default(), &mut rng)
        .ok_or(TaskError::InfeasibleScene)?;
    sample_task_of_kind(kind, seed, scene, &mut rng)
}

fn sample_task_of_kind(
    kind: TaskKind,
    seed: u64,
    scene: &Scene,
    rng: &mut ChaCha8Rng,
) -> Result<TaskInstance, TaskError> {
    if !kind_feasible(kind, scene) {
        return Err(TaskError::InfeasibleTask(format!(
            "{} is not feasible here",
            kind.as_str()
        )));
    }
    let referents: Vec<String> = match kind {
        TaskKind::Pick | TaskKind::Lift | TaskKind::MoveToTemp => {
            vec![scene.objects.choose(rng).unwrap().id.clone()]
        }
        TaskKind::PlaceOn | TaskKind::StackOn | TaskKind::Swap => {
            let mut indices: Vec<usize> = (0..scene.objects.len()).collect();
            indices.shuffle(rng);
            vec![
                scene.objects[indices[0]].id.clone(),
                scene.objects[indices[1]].id.clone(),
            ]
        }
        TaskKind::StackAllColor => {
            let mut counts = std::collections::BTreeMap::new();
            for obj in &scene.objects {
                *counts.entry(obj.color.clone()).or_insert(0usize) += 1;
            }
            let eligible: Vec<String> = counts
                .into_iter()
                .filter(|(_, c)| *c >= 2)
                .map(|(color, _)| color)
                .collect();
            let color = eligible.choose(rng).unwrap().clone();
            scene
                .objects
                .iter()
                .filter(|o| o.color == color)
                .map(|o| o.id.clone())
                .collect()
        }
    };
    let instruction = render_instruction(kind, &referents, scene, rng);
    Ok(TaskInstance {
        kind,
        referents,
        instruction,
        seed,
    })
}

// ---------------------------------------------------------------------
// Instruction rendering
// ---------------------------------------------------------------------

/// Which side of the table a deictic phrase names.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// Resolves "the left/right `shape`" to an object id: the strict
/// extreme of x among shape-matched objects, smaller x being left.
/// `None` when fewer than two such objects exist or the extreme is tied.
pub fn resolve_deictic(scene: &Scene, shape: Shape, side: Side) -> Option<String> {
    let matched: Vec<&SceneObject> =
        scene.objects.iter().filter(|o| o.shape == shape).collect();
    if matched.len() < 2 {
        return None;
    }
    strict_extreme(&matched, side).map(|o| o.id.clone())
}

fn strict_extreme<'a>(objects: &[&'a SceneObject], side: Side) -> Option<&'a SceneObject> {
    let better = |a: f64, b: f64| match side {
        Side::Left => a < b,
        Side::Right => a > b,
    };
    let mut best: Option<&SceneObject> = None;
    let mut tied = false;
    for obj in objects {
        match best {
            None => best = Some(obj),
            Some(b) => {
                if better(obj.pose.x(), b.pose.x()) {
                    best = Some(obj);
                    tied = false;
                } else if obj.pose.x() == b.pose.x() {
                    tied = true;
                }
            }
        }
    }
    if tied {
        None
    } else {
        best
    }
}

const PICK_TEMPLATES: [&str; 8] = [
    "Pick up {a}.",
    "Grab {a}.",
    "Please pick up {a}.",
    "Take hold of {a}.",
    "Grasp {a}.",
    "Go grab {a}.",
    "Get a grip on {a}.",
    "Could you pick up {a}?",
];

const LIFT_TEMPLATES: [&str; 8] = [
    "Lift {a}.",
    "Lift {a} off the table.",
    "Raise {a}.",
    "Pick {a} up and hold it in the air.",
    "Hoist {a} up.",
    "Please lift {a}.",
    "Lift up {a}.",
    "Raise {a} above the table.",
];

const PLACE_ON_TEMPLATES: [&str; 8] = [
    "Place {a} on {b}.",
    "Put {a} on top of {b}.",
    "Set {a} onto {b}.",
    "Please place {a} on {b}.",
    "Move {a} onto {b}.",
    "Put {a} down on top of {b}.",
    "Place {a} carefully on {b}.",
    "Could you put {a} on {b}?",
];

const STACK_ON_TEMPLATES: [&str; 8] = [
    "Stack {a} on {b}.",
    "Stack {a} on top of {b}.",
    "Pile {a} onto {b}.",
    "Make a stack by putting {a} on {b}.",
    "Stack {a} over {b}.",
    "Please stack {a} on {b}.",
    "Put {a} and {b} in a stack, with {a} on top.",
    "Build a two-level stack with {a} above {b}.",
];

const MOVE_TO_TEMP_TEMPLATES: [&str; 8] = [
    "Move {a} to the temporary pose.",
    "Park {a} at the buffer spot.",
    "Carry {a} to the staging area.",
    "Relocate {a} to the temporary waypoint.",
    "Put {a} down at the temp pose.",
    "Move {a} over to the free spot.",
    "Take {a} to the buffer position.",
    "Please move {a} to the temporary location.",
];

const STACK_ALL_TEMPLATES: [&str; 8] = [
    "Stack all the {color} objects.",
    "Make a single stack out of every {color} object.",
    "Pile up all the {color} pieces.",
    "Stack every {color} object into one tower.",
    "Gather the {color} objects into a stack.",
    "Build a tower from all the {color} objects.",
    "Please stack all the {color} items.",
    "Put all the {color} objects into one stack.",
];

const SWAP_TEMPLATES: [&str; 8] = [
    "Switch the positions of {a} and {b}.",
    "Swap {a} and {b}.",
    "Exchange the places of {a} and {b}.",
    "Swap the locations of {a} and {b}.",
    "Trade places between {a} and {b}.",
    "Make {a} and {b} switch spots.",
    "Please swap {a} with {b}.",
    "Invert the positions of {a} and {b}.",
];

fn render_instruction(
    kind: TaskKind,
    referents: &[String],
    scene: &Scene,
    rng: &mut ChaCha8Rng,
) -> String {
    let template = match kind {
        TaskKind::Pick => PICK_TEMPLATES.choose(rng),
        TaskKind::Lift => LIFT_TEMPLATES.choose(rng),
        TaskKind::PlaceOn => PLACE_ON_TEMPLATES.choose(rng),
        TaskKind::StackOn => STACK_ON_TEMPLATES.choose(rng),
        TaskKind::MoveToTemp => MOVE_TO_TEMP_TEMPLATES.choose(rng),
        TaskKind::StackAllColor => STACK_ALL_TEMPLATES.choose(rng),
        TaskKind::Swap => SWAP_TEMPLATES.choose(rng),
    }
    .unwrap()
    .to_string();
    match kind {
        TaskKind::StackAllColor => {
            let color = &scene.object(&referents[0]).unwrap().color;
            template.replace("{color}", color)
        }
        _ => {
            let mut text = template.replace("{a}", &describe_referent(scene, &referents[0], rng));
            if let Some(b) = referents.get(1) {
                text = text.replace("{b}", &describe_referent(scene, b, rng));
            }
            text
        }
    }
}

/// Phrases a referent. Plain "the {color} {shape}" when that is unique;
/// a deictic phrase when the object is the strict x-extreme among its
/// shape-mates (requires at least two of the shape); otherwise a
/// color-qualified deictic or the plain form.
fn describe_referent(scene: &Scene, id: &str, rng: &mut ChaCha8Rng) -> String {
    let obj = scene.object(id).expect("referent exists in scene");
    let shape_mates: Vec<&SceneObject> = scene
        .objects
        .iter()
        .filter(|o| o.shape == obj.shape)
        .collect();
    let color_shape_mates: Vec<&SceneObject> = shape_mates
        .iter()
        .filter(|o| o.color == obj.color)
        .copied()
        .collect();
    let plain = format!("the {} {}", obj.color, obj.shape.as_str());
    if shape_mates.len() < 2 {
        return plain;
    }
    let ambiguous = color_shape_mates.len() > 1;
    let want_deictic = ambiguous || rng.gen_bool(0.3);
    if want_deictic {
        for (side, word, superlative) in [
            (Side::Left, "left", "leftmost"),
            (Side::Right, "right", "rightmost"),
        ] {
            if strict_extreme(&shape_mates, side).map(|o| o.id.as_str()) == Some(id) {
                let adjective = if rng.gen_bool(0.5) { word } else { superlative };
                return format!("the {} {}", adjective, obj.shape.as_str());
            }
        }
        if ambiguous {
            for (side, word) in [(Side::Left, "left"), (Side::Right, "right")] {
                if strict_extreme(&color_shape_mates, side).map(|o| o.id.as_str()) == Some(id) {
                    return format!("the {} {} {}", word, obj.color, obj.shape.as_str());
                }
            }
        }
    }
    plain
}

// ---------------------------------------------------------------------
// Tree synthesis
// ---------------------------------------------------------------------

fn label(text: &str) -> ArgExpr {
    ArgExpr::label(text).expect("object ids and waypoint labels are valid labels")
}

fn above(text: &str, dz: f64) -> ArgExpr {
    ArgExpr::with_offset(text, dz).expect("synthesized offsets are positive")
}

/// `Parallel[is_at_pose(e), MovePose(e)]` — motion that succeeds the
/// moment the pose check holds.
fn motion(expr: ArgExpr) -> BTNode {
    BTNode::parallel(vec![
        BTNode::condition(COND_IS_AT_POSE, vec![expr.clone()]),
        BTNode::action(ACTION_MOVE_POSE, vec![expr]),
    ])
}

fn contact_descend() -> BTNode {
    BTNode::parallel(vec![
        BTNode::condition(COND_IS_CONTACT, vec![]),
        BTNode::action(ACTION_MOVE_DOWN, vec![]),
    ])
}

/// `Selector[is_grasped, Sequence[approach, descend, close]]`.
fn fetch(approach_expr: ArgExpr, descend_expr: ArgExpr, mode: DescendMode) -> BTNode {
    let descend = match mode {
        DescendMode::MovePose => motion(descend_expr),
        DescendMode::MoveDownContact => contact_descend(),
    };
    BTNode::selector(vec![
        BTNode::condition(COND_IS_GRASPED, vec![]),
        BTNode::sequence(vec![
            motion(approach_expr),
            descend,
            BTNode::action(ACTION_CLOSE_GRIPPER, vec![]),
        ]),
    ])
}

/// One full transport: fetch, lift, carry, descend, release, retreat —
/// with `is_grasped` checkpoints after every carrying motion. A tripped
/// checkpoint fails (and resets) the enclosing plan sequence.
struct Transport {
    approach: ArgExpr,
    descend: ArgExpr,
    lift: ArgExpr,
    carry: ArgExpr,
    place: ArgExpr,
    retreat: ArgExpr,
}

impl Transport {
    fn push_onto(self, children: &mut Vec<BTNode>, mode: DescendMode) {
        children.push(fetch(self.approach, self.descend, mode));
        children.push(motion(self.lift));
        children.push(BTNode::condition(COND_IS_GRASPED, vec![]));
        children.push(motion(self.carry));
        children.push(BTNode::condition(COND_IS_GRASPED, vec![]));
        children.push(motion(self.place));
        children.push(BTNode::condition(COND_IS_GRASPED, vec![]));
        children.push(BTNode::action(ACTION_OPEN_GRIPPER, vec![]));
        children.push(motion(self.retreat));
    }
}

/// `Selector[plan, is_at_home, MovePose(home)]`: the root guard makes
/// every action in the tree reactively guarded, and the trailing
/// retreat-home absorbs plan failures so the selector can retry the
/// plan on the next tick.
fn guarded_root(plan_children: Vec<BTNode>, home: &str) -> BTNode {
    BTNode::selector(vec![
        BTNode::sequence(plan_children),
        BTNode::condition(COND_IS_AT_HOME, vec![]),
        BTNode::action(ACTION_MOVE_POSE, vec![label(home)]),
    ])
}

fn object_height(scene: &Scene, id: &str) -> Result<f64, TaskError> {
    scene
        .object(id)
        .map(|o| o.dims.height())
        .ok_or_else(|| TaskError::InfeasibleTask(format!("referent {id:?} is not in the scene")))
}

/// Synthesizes the ground-truth tree for a task with default settings.
pub fn synthesize_bt(
    task: &TaskInstance,
    scene: &Scene,
    spec: &SystemSpecification,
) -> Result<BTNode, TaskError> {
    synthesize_bt_with(task, scene, spec, &OracleConfig::default())
}

pub fn synthesize_bt_with(
    task: &TaskInstance,
    scene: &Scene,
    spec: &SystemSpecification,
    cfg: &OracleConfig,
) -> Result<BTNode, TaskError> {
    let dz = spec.z_offset_default();
    let mode = cfg.descend;
    let home = spec.home_label();
    let temp = spec.temp_label();
    let need = |n: usize| {
        if task.referents.len() < n {
            Err(TaskError::InfeasibleTask(format!(
                "{} needs {} referent(s), got {}",
                task.kind.as_str(),
                n,
                task.referents.len()
            )))
        } else {
            Ok(())
        }
    };

    match task.kind {
        TaskKind::Pick => {
            need(1)?;
            let obj = &task.referents[0];
            object_height(scene, obj)?;
            Ok(fetch(above(obj, dz), label(obj), mode))
        }
        TaskKind::Lift => {
            need(1)?;
            let obj = &task.referents[0];
            object_height(scene, obj)?;
            let plan = vec![
                fetch(above(obj, dz), label(obj), mode),
                motion(above(obj, dz)),
                BTNode::condition(COND_IS_GRASPED, vec![]),
            ];
            Ok(guarded_root(plan, home))
        }
        TaskKind::PlaceOn | TaskKind::StackOn => {
            need(2)?;
            let (top, bottom) = (&task.referents[0], &task.referents[1]);
            let h_top = object_height(scene, top)?;
            let h_bottom = object_height(scene, bottom)?;
            let place_dz = (h_top + h_bottom) / 2.0;
            let mut plan = Vec::new();
            Transport {
                approach: above(top, dz),
                descend: label(top),
                lift: above(top, dz),
                carry: above(bottom, place_dz + dz),
                place: above(bottom, place_dz),
                retreat: above(bottom, place_dz + dz),
            }
            .push_onto(&mut plan, mode);
            plan.push(motion(label(home)));
            Ok(guarded_root(plan, home))
        }
        TaskKind::MoveToTemp => {
            need(1)?;
            let obj = &task.referents[0];
            let h = object_height(scene, obj)?;
            let mut plan = Vec::new();
            Transport {
                approach: above(obj, dz),
                descend: label(obj),
                lift: above(obj, dz),
                carry: above(temp, h / 2.0 + dz),
                place: above(temp, h / 2.0),
                retreat: above(temp, h / 2.0 + dz),
            }
            .push_onto(&mut plan, mode);
            plan.push(motion(label(home)));
            Ok(guarded_root(plan, home))
        }
        TaskKind::StackAllColor => {
            need(2)?;
            let base = &task.referents[0];
            let h_base = object_height(scene, base)?;
            let mut plan = Vec::new();
            // Every level is placed relative to the base object's label,
            // which never moves during the task.
            let mut stack_top = h_base;
            for obj in &task.referents[1..] {
                let h = object_height(scene, obj)?;
                let place_dz = stack_top - h_base / 2.0 + h / 2.0;
                Transport {
                    approach: above(obj, dz),
                    descend: label(obj),
                    lift: above(obj, dz),
                    carry: above(base, place_dz + dz),
                    place: above(base, place_dz),
                    retreat: above(base, place_dz + dz),
                }
                .push_onto(&mut plan, mode);
                stack_top += h;
            }
            plan.push(motion(label(home)));
            Ok(guarded_root(plan, home))
        }
        TaskKind::Swap => {
            need(2)?;
            let (a, b) = (&task.referents[0], &task.referents[1]);
            let h_a = object_height(scene, a)?;
            let h_b = object_height(scene, b)?;
            let mut plan = Vec::new();
            // a to the buffer.
            Transport {
                approach: above(a, dz),
                descend: label(a),
                lift: above(a, dz),
                carry: above(temp, h_a / 2.0 + dz),
                place: above(temp, h_a / 2.0),
                retreat: above(temp, h_a / 2.0 + dz),
            }
            .push_onto(&mut plan, mode);
            // b into a's vacated position.
            Transport {
                approach: above(b, dz),
                descend: label(b),
                lift: above(b, dz),
                carry: above(a, (h_a + h_b) / 2.0 + dz),
                place: above(a, (h_a + h_b) / 2.0),
                retreat: above(a, (h_a + h_b) / 2.0 + dz),
            }
            .push_onto(&mut plan, mode);
            // a from the buffer into b's vacated position.
            Transport {
                approach: above(temp, h_a / 2.0 + dz),
                descend: above(temp, h_a / 2.0),
                lift: above(temp, h_a / 2.0 + dz),
                carry: above(b, (h_a + h_b) / 2.0 + dz),
                place: above(b, (h_a + h_b) / 2.0),
                retreat: above(b, (h_a + h_b) / 2.0 + dz),
            }
            .push_onto(&mut plan, mode);
            plan.push(motion(label(home)));
            Ok(guarded_root(plan, home))
        }
    }
}

/// Derives the goal predicates for a task. Pose goals snapshot the
/// relevant metadata poses now, at task creation.
pub fn goal_of(task: &TaskInstance, scene: &Scene) -> Vec<GoalPredicate> {
    let snapshot = |id: &str| scene.object(id).map(|o| o.pose);
    match task.kind {
        TaskKind::Pick | TaskKind::Lift => vec![GoalPredicate::Grasped {
            object: task.referents[0].clone(),
        }],
        TaskKind::PlaceOn | TaskKind::StackOn => vec![
            GoalPredicate::On {
                top: task.referents[0].clone(),
                bottom: task.referents[1].clone(),
            },
            GoalPredicate::GripperOpen,
        ],
        TaskKind::MoveToTemp => vec![GoalPredicate::AtLabelPose {
            object: task.referents[0].clone(),
            label: "temp_pose".to_string(),
            pose: scene.temp_pose,
            tol: DEFAULT_GOAL_TOL,
        }],
        TaskKind::StackAllColor => {
            let mut goals: Vec<GoalPredicate> = task
                .referents
                .windows(2)
                .map(|pair| GoalPredicate::On {
                    top: pair[1].clone(),
                    bottom: pair[0].clone(),
                })
                .collect();
            goals.push(GoalPredicate::GripperOpen);
            goals
        }
        TaskKind::Swap => {
            let (a, b) = (&task.referents[0], &task.referents[1]);
            let a_original = snapshot(a).expect("task referents exist");
            let b_original = snapshot(b).expect("task referents exist");
            vec![
                GoalPredicate::AtLabelPose {
                    object: a.clone(),
                    label: b.clone(),
                    pose: b_original,
                    tol: DEFAULT_GOAL_TOL,
                },
                GoalPredicate::AtLabelPose {
                    object: b.clone(),
                    label: a.clone(),
                    pose: a_original,
                    tol: DEFAULT_GOAL_TOL,
                },
            ]
        }
    }
}

// ---------------------------------------------------------------------
// Dataset building and (de)serialization
// ---------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetConfig {
    #[serde(default)]
    pub scene: SceneConfigDefaulted,
    #[serde(default)]
    pub oracle: OracleConfig,
}

/// Newtype so dataset configs deserialize with scene defaults filled in.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SceneConfigDefaulted(pub SceneConfig);

/// Builds `n` samples. Sample `i` is seeded by `mix_seed(master_seed,
/// i)`: the task kind is drawn unconditionally from the configured
/// weights, then scenes are regenerated (deterministically) until the
/// kind is feasible. Every synthesized tree must validate clean under
/// strict offset checking or the build aborts with the failing index.
pub fn build_dataset(
    n: usize,
    master_seed: u64,
    cfg: &DatasetConfig,
) -> Result<Vec<DatasetSample>, DatasetError> {
    let mut samples = Vec::with_capacity(n);
    for index in 0..n {
        let sample_seed = mix_seed(master_seed, index as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
        let kind = weighted_kind(&TaskKind::ALL, &cfg.oracle.weights, &mut rng)
            .ok_or(DatasetError::Task {
                index,
                source: TaskError::InfeasibleScene,
            })?;
        let mut scene = None;
        for attempt in 0..SCENE_RETRY_BUDGET {
            let candidate = generate_scene(mix_seed(sample_seed, 1 + attempt), &cfg.scene.0)
                .map_err(|source| DatasetError::Scene { index, source })?;
            if kind_feasible(kind, &candidate) {
                scene = Some(candidate);
                break;
            }
        }
        let scene = scene.ok_or(DatasetError::NoFeasibleScene { index, kind })?;
        let task = sample_task_of_kind(kind, sample_seed, &scene, &mut rng)
            .map_err(|source| DatasetError::Task { index, source })?;
        let spec = scene.system_spec();
        let target_bt = synthesize_bt_with(&task, &scene, &spec, &cfg.oracle)
            .map_err(|source| DatasetError::Task { index, source })?;
        let report = validate_with(&target_bt, &spec, ValidateOptions::strict());
        if !report.schema_compliant() {
            return Err(DatasetError::InvalidSample {
                index,
                detail: format!("{:?}", report.violations),
            });
        }
        let goals = goal_of(&task, &scene);
        samples.push(DatasetSample {
            scene,
            spec,
            task,
            target_bt,
            goals,
        });
    }
    Ok(samples)
}

/// Serializes one sample to its JSONL record value.
pub fn sample_to_record(sample: &DatasetSample) -> Value {
    let mut record = serde_json::Map::new();
    record.insert(
        "scene".into(),
        serde_json::to_value(&sample.scene).expect("scene serializes"),
    );
    record.insert(
        "instruction".into(),
        Value::String(sample.task.instruction.clone()),
    );
    record.insert(
        "spec".into(),
        serde_json::to_value(&sample.spec).expect("spec serializes"),
    );
    record.insert("bt".into(), bt_to_json_value(&sample.target_bt));
    record.insert(
        "goals".into(),
        serde_json::to_value(&sample.goals).expect("goals serialize"),
    );
    record.insert("seed".into(), Value::from(sample.task.seed));
    Value::Object(record)
}

/// One minified record per line, trailing newline included. Byte-stable
/// across runs for identical samples.
pub fn dataset_to_jsonl(samples: &[DatasetSample]) -> String {
    let mut out = String::new();
    for sample in samples {
        out.push_str(
            &serde_json::to_string(&sample_to_record(sample)).expect("record serializes"),
        );
        out.push('\n');
    }
    out
}

/// Parses a JSONL dataset back into records. Corrupt records abort with
/// their line index.
pub fn load_dataset_jsonl(text: &str) -> Result<Vec<DatasetRecord>, DatasetError> {
    let mut records = Vec::new();
    for (index, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse = |detail: String| DatasetError::Parse {
            line: index,
            detail,
        };
        let value: Value =
            serde_json::from_str(line).map_err(|e| parse(format!("invalid JSON: {e}")))?;
        let field = |name: &str| {
            value
                .get(name)
                .cloned()
                .ok_or_else(|| parse(format!("missing field {name:?}")))
        };
        let scene: Scene = serde_json::from_value(field("scene")?)
            .map_err(|e| parse(format!("bad scene: {e}")))?;
        let instruction = field("instruction")?
            .as_str()
            .ok_or_else(|| parse("instruction must be a string".into()))?
            .to_string();
        let spec: SystemSpecification = serde_json::from_value(field("spec")?)
            .map_err(|e| parse(format!("bad spec: {e}")))?;
        let bt = field("bt")?;
        let goals: Vec<GoalPredicate> = serde_json::from_value(field("goals")?)
            .map_err(|e| parse(format!("bad goals: {e}")))?;
        let seed = field("seed")?
            .as_u64()
            .ok_or_else(|| parse("seed must be an unsigned integer".into()))?;
        records.push(DatasetRecord {
            index,
            scene,
            instruction,
            spec,
            bt,
            goals,
            seed,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::tree_metrics;
    use crate::model::{lower, parse_document, serialize_minified};

    fn scene_with(seed: u64, n: usize) -> Scene {
        let cfg = SceneConfig {
            n_objects: (n, n),
            ..SceneConfig::default()
        };
        generate_scene(seed, &cfg).unwrap()
    }

    #[test]
    fn sample_task_is_deterministic() {
        let scene = scene_with(3, 3);
        let a = sample_task(17, &scene).unwrap();
        let b = sample_task(17, &scene).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_object_scene_restricts_kinds() {
        let scene = scene_with(5, 1);
        for seed in 0..200 {
            let task = sample_task(seed, &scene).unwrap();
            assert!(matches!(
                task.kind,
                TaskKind::Pick | TaskKind::Lift | TaskKind::MoveToTemp
            ));
        }
    }

    #[test]
    fn deictic_resolution_is_argmin_x() {
        for seed in 0..300u64 {
            let scene = scene_with(seed, 4);
            for shape in [Shape::Prism, Shape::Parallelepiped, Shape::Cylinder, Shape::Cube] {
                let matched: Vec<&SceneObject> =
                    scene.objects.iter().filter(|o| o.shape == shape).collect();
                let resolved = resolve_deictic(&scene, shape, Side::Left);
                if matched.len() < 2 {
                    assert_eq!(resolved, None);
                } else {
                    let expected = matched
                        .iter()
                        .min_by(|a, b| a.pose.x().total_cmp(&b.pose.x()))
                        .unwrap();
                    assert_eq!(resolved, Some(expected.id.clone()));
                }
            }
        }
    }

    #[test]
    fn left_phrases_name_the_leftmost_shape_mate() {
        let mut checked = 0;
        for seed in 0..600u64 {
            let scene = scene_with(seed, 4);
            let Ok(task) = sample_task(seed, &scene) else {
                continue;
            };
            for shape in [Shape::Prism, Shape::Parallelepiped, Shape::Cylinder, Shape::Cube] {
                for (phrase, side) in [
                    (format!("the left {}", shape.as_str()), Side::Left),
                    (format!("the leftmost {}", shape.as_str()), Side::Left),
                    (format!("the right {}", shape.as_str()), Side::Right),
                    (format!("the rightmost {}", shape.as_str()), Side::Right),
                ] {
                    // Skip color-qualified phrases; they resolve within a
                    // color group rather than the whole shape class.
                    if task.instruction.contains(&phrase) {
                        let resolved = resolve_deictic(&scene, shape, side).unwrap();
                        assert!(
                            task.referents.contains(&resolved),
                            "{:?} does not name {}",
                            task.instruction,
                            resolved
                        );
                        checked += 1;
                    }
                }
            }
        }
        assert!(checked > 5, "too few deictic instructions sampled: {checked}");
    }

    #[test]
    fn pick_tree_matches_the_grasp_pattern() {
        let scene = scene_with(7, 2);
        let spec = scene.system_spec();
        let obj = scene.objects[0].id.clone();
        let task = TaskInstance {
            kind: TaskKind::Pick,
            referents: vec![obj.clone()],
            instruction: "Pick it up.".into(),
            seed: 0,
        };
        let bt = synthesize_bt(&task, &scene, &spec).unwrap();
        let text = serialize_minified(&bt);
        assert!(text.starts_with(r#"{"type":"Selector","children":[{"type":"Condition","name":"is_grasped"}"#));
        assert!(text.contains(&format!("{obj}+z=0.1")));
        // Round trip through the codec.
        let again = lower(&parse_document(&text).unwrap(), &spec).unwrap();
        assert_eq!(again, bt);
    }

    #[test]
    fn place_tree_has_expected_shape_statistics() {
        let scene = scene_with(11, 3);
        let spec = scene.system_spec();
        let task = TaskInstance {
            kind: TaskKind::PlaceOn,
            referents: vec![scene.objects[0].id.clone(), scene.objects[1].id.clone()],
            instruction: "Place.".into(),
            seed: 0,
        };
        let bt = synthesize_bt(&task, &scene, &spec).unwrap();
        let m = tree_metrics(&bt);
        assert_eq!(m.depth, 6);
        assert_eq!(m.leaf_count, 22);
        assert_eq!(m.composite_count, 11);
    }

    #[test]
    fn swap_tree_uses_the_buffer_in_three_transports() {
        let scene = scene_with(13, 2);
        let spec = scene.system_spec();
        let (a, b) = (scene.objects[0].id.clone(), scene.objects[1].id.clone());
        let task = TaskInstance {
            kind: TaskKind::Swap,
            referents: vec![a, b],
            instruction: "Swap.".into(),
            seed: 0,
        };
        let bt = synthesize_bt(&task, &scene, &spec).unwrap();
        let text = serialize_minified(&bt);
        let opens = text.matches("OpenGripper").count();
        assert_eq!(opens, 3, "exactly three release phases");
        assert!(text.contains("temp_pose+z="));
    }

    #[test]
    fn oracle_trees_validate_clean_across_seeds() {
        let cfg = DatasetConfig::default();
        let samples = build_dataset(100, 99, &cfg).unwrap();
        for sample in &samples {
            let report = validate_with(&sample.target_bt, &sample.spec, ValidateOptions::strict());
            assert!(report.schema_compliant(), "{:?}", report.violations);
            for goal in &sample.goals {
                match goal {
                    GoalPredicate::Grasped { object } => {
                        assert!(sample.scene.object(object).is_some())
                    }
                    GoalPredicate::On { top, bottom } => {
                        assert!(sample.scene.object(top).is_some());
                        assert!(sample.scene.object(bottom).is_some());
                    }
                    GoalPredicate::AtLabelPose { object, label, .. } => {
                        assert!(sample.scene.object(object).is_some());
                        assert!(sample.spec.metadata().contains_key(label));
                    }
                    _ => {}
                }
            }
        }
    }

    #[test]
    fn goals_follow_task_kind() {
        let scene = scene_with(8, 3);
        let (a, b) = (scene.objects[0].id.clone(), scene.objects[1].id.clone());
        let task = |kind, referents: Vec<String>| TaskInstance {
            kind,
            referents,
            instruction: String::new(),
            seed: 0,
        };
        assert_eq!(
            goal_of(&task(TaskKind::Pick, vec![a.clone()]), &scene),
            vec![GoalPredicate::Grasped { object: a.clone() }]
        );
        assert_eq!(
            goal_of(&task(TaskKind::StackOn, vec![a.clone(), b.clone()]), &scene),
            vec![
                GoalPredicate::On {
                    top: a.clone(),
                    bottom: b.clone()
                },
                GoalPredicate::GripperOpen,
            ]
        );
        let temp_goals = goal_of(&task(TaskKind::MoveToTemp, vec![a.clone()]), &scene);
        assert!(matches!(
            &temp_goals[0],
            GoalPredicate::AtLabelPose { label, .. } if label == "temp_pose"
        ));
    }

    #[test]
    fn goal_snapshots_do_not_track_live_metadata() {
        let scene = scene_with(21, 2);
        let (a, b) = (scene.objects[0].id.clone(), scene.objects[1].id.clone());
        let task = TaskInstance {
            kind: TaskKind::Swap,
            referents: vec![a.clone(), b.clone()],
            instruction: "Swap.".into(),
            seed: 0,
        };
        let goals = goal_of(&task, &scene);
        let GoalPredicate::AtLabelPose { pose, .. } = &goals[0] else {
            panic!("swap goal shape");
        };
        assert_eq!(*pose, scene.object(&b).unwrap().pose);
    }

    #[test]
    fn dataset_build_is_byte_deterministic() {
        let cfg = DatasetConfig::default();
        let a = dataset_to_jsonl(&build_dataset(25, 42, &cfg).unwrap());
        let b = dataset_to_jsonl(&build_dataset(25, 42, &cfg).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn dataset_round_trips_through_jsonl() {
        let cfg = DatasetConfig::default();
        let samples = build_dataset(10, 7, &cfg).unwrap();
        let text = dataset_to_jsonl(&samples);
        let records = load_dataset_jsonl(&text).unwrap();
        assert_eq!(records.len(), samples.len());
        for (record, sample) in records.iter().zip(&samples) {
            assert_eq!(record.scene, sample.scene);
            assert_eq!(record.spec, sample.spec);
            assert_eq!(record.goals, sample.goals);
            assert_eq!(record.bt, sample_to_record(sample)["bt"]);
            let bt = lower(&record.bt, &record.spec).unwrap();
            assert_eq!(bt, sample.target_bt);
        }
    }

    #[test]
    fn corrupt_record_reports_line() {
        let err = load_dataset_jsonl("{\"scene\": 1}\n").unwrap_err();
        assert!(matches!(err, DatasetError::Parse { line: 0, .. }));
    }
}
