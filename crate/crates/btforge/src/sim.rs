//! Deterministic kinematic tabletop simulator and reactive tick engine.
//!
//! Composite semantics, fixed here for the whole toolkit:
//!
//! - **Sequence** has memory: each tick resumes at the first child that
//!   has not yet succeeded. A child failure fails the sequence and
//!   resets its memory.
//! - **Selector** is reactive: every tick it re-ticks children from the
//!   left and returns the first non-failure, so earlier guard
//!   conditions are re-evaluated while later children run.
//! - **Parallel** ticks all children every tick; it succeeds as soon as
//!   any child succeeds and fails only when all children fail.
//!
//! Any node that completes (success or failure) has the state of its
//! whole subtree cleared, so abandoned children never resume from stale
//! progress.
//!
//! Actions command the world and return `Running` until their own
//! completion predicate holds against the current world; conditions are
//! instantaneous reads of the current world and metadata. Each
//! simulation step follows the same order: apply due perturbations,
//! tick the tree (evaluation), then integrate the commanded primitives.
//!
//! The world model is kinematic: the gripper translates at a bounded
//! speed (landing exactly on its target), a grasped object is rigidly
//! attached, and a released object settles straight down onto the table
//! or the highest object whose footprint overlaps its own.
//!
//! Metadata stays in sync with *uncommanded* displacements: a scripted
//! `displace` perturbation and the drop after a `force_release` both
//! update the displaced object's label (unless the stale-metadata flag
//! is set, which exists to demonstrate exactly why that update rule
//! matters). Commanded placements do not rewrite labels, so a label
//! keeps its plan-time meaning for the rest of the task.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    resolve_arg, ArgExpr, BTNode, CompositeKind, LeafKind, Pose, SystemSpecification,
    ACTION_CLOSE_GRIPPER, ACTION_MOVE_DOWN, ACTION_MOVE_POSE, ACTION_OPEN_GRIPPER,
    COND_IS_AT_HOME, COND_IS_AT_POSE, COND_IS_CONTACT, COND_IS_GRASPED,
};
use crate::oracle::GoalPredicate;
use crate::scene::Scene;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("unknown {kind} primitive {name:?}")]
    UnknownPrimitive { kind: &'static str, name: String },
    #[error("unknown metadata label {0:?}")]
    UnknownLabel(String),
    #[error("{name} invoked with {found} argument(s), expected {expected}")]
    BadArity {
        name: String,
        expected: usize,
        found: usize,
    },
}

impl From<crate::model::UnknownLabel> for SimError {
    fn from(e: crate::model::UnknownLabel) -> Self {
        SimError::UnknownLabel(e.0)
    }
}

/// Simulator tolerances and limits. All strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimParams {
    /// Gripper translation per tick, meters.
    pub step_speed: f64,
    /// Position tolerance for pose completion checks, meters.
    pub pos_tol: f64,
    /// Rotation tolerance for pose completion checks, radians.
    pub rot_tol: f64,
    /// Capture radius of the gripper on close, meters.
    pub grasp_radius: f64,
    /// Horizontal tolerance of the on-top goal, meters.
    pub on_radius: f64,
    /// Vertical tolerance for contact detection, meters.
    pub contact_tol: f64,
    pub max_ticks: usize,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            step_speed: 0.05,
            pos_tol: 0.005,
            rot_tol: 0.05,
            grasp_radius: 0.03,
            on_radius: 0.03,
            contact_tol: 0.002,
            max_ticks: 2000,
        }
    }
}

/// Status of one node after a tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TickStatus {
    Success,
    Failure,
    Running,
}

/// Final verdict of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FinalStatus {
    Success,
    Failure,
    Timeout,
}

/// Fixed geometry the settle and grasp logic needs per object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObjectGeometry {
    pub footprint_radius: f64,
    pub height: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
struct GraspOffset {
    /// Object position in the gripper frame at capture time.
    local: [f64; 3],
    /// Object rotation relative to the gripper at capture time.
    rel_quat: [f64; 4],
}

/// Simulated gripper and object state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorldState {
    pub gripper_pose: Pose,
    pub gripper_open: bool,
    pub grasped: Option<String>,
    pub object_poses: BTreeMap<String, Pose>,
    pub tick_index: usize,
    pub contact: bool,
    pub geometry: BTreeMap<String, ObjectGeometry>,
    table_height: f64,
    grasp_offset: Option<GraspOffset>,
}

impl WorldState {
    /// Initial world: gripper open at the home pose, objects as placed
    /// in the scene.
    pub fn from_scene(scene: &Scene) -> Self {
        let mut object_poses = BTreeMap::new();
        let mut geometry = BTreeMap::new();
        for obj in &scene.objects {
            object_poses.insert(obj.id.clone(), obj.pose);
            geometry.insert(
                obj.id.clone(),
                ObjectGeometry {
                    footprint_radius: obj.dims.footprint_radius(),
                    height: obj.dims.height(),
                },
            );
        }
        WorldState {
            gripper_pose: scene.home_pose,
            gripper_open: true,
            grasped: None,
            object_poses,
            tick_index: 0,
            contact: false,
            geometry,
            table_height: scene.table.height,
            grasp_offset: None,
        }
    }

    fn set_gripper_pose(&mut self, pose: Pose) {
        if pose != self.gripper_pose {
            self.contact = false;
        }
        self.gripper_pose = pose;
        if let (Some(id), Some(offset)) = (&self.grasped, &self.grasp_offset) {
            let carried = compose(&self.gripper_pose, offset);
            self.object_poses.insert(id.clone(), carried);
        }
    }

    /// Resting height of the table or the highest overlapping object top
    /// under `(x, y)`. `query_radius` is the footprint of whatever is
    /// settling (0 for the point-like gripper); `exclude` skips the
    /// settling object itself. Grasped objects never act as support.
    pub fn support_height(&self, x: f64, y: f64, query_radius: f64, exclude: Option<&str>) -> f64 {
        let mut support = self.table_height;
        for (id, pose) in &self.object_poses {
            if Some(id.as_str()) == exclude || Some(id.as_str()) == self.grasped.as_deref() {
                continue;
            }
            let geom = &self.geometry[id];
            let dx = pose.x() - x;
            let dy = pose.y() - y;
            if (dx * dx + dy * dy).sqrt() < query_radius + geom.footprint_radius {
                support = support.max(pose.z() + geom.height / 2.0);
            }
        }
        support
    }

    /// Drops `id` straight down to rest on its support at its current
    /// horizontal position.
    fn settle_object(&mut self, id: &str) {
        let pose = self.object_poses[id];
        let geom = self.geometry[id];
        let support = self.support_height(pose.x(), pose.y(), geom.footprint_radius, Some(id));
        let settled = pose.with_position(pose.x(), pose.y(), support + geom.height / 2.0);
        self.object_poses.insert(id.to_string(), settled);
    }
}

fn quat_mul(a: [f64; 4], b: [f64; 4]) -> [f64; 4] {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

fn quat_conj(q: [f64; 4]) -> [f64; 4] {
    [q[0], -q[1], -q[2], -q[3]]
}

fn quat_rotate(q: [f64; 4], v: [f64; 3]) -> [f64; 3] {
    let p = [0.0, v[0], v[1], v[2]];
    let r = quat_mul(quat_mul(q, p), quat_conj(q));
    [r[1], r[2], r[3]]
}

fn capture_offset(gripper: &Pose, object: &Pose) -> GraspOffset {
    let delta = [
        object.x() - gripper.x(),
        object.y() - gripper.y(),
        object.z() - gripper.z(),
    ];
    let inv = quat_conj(gripper.quat());
    GraspOffset {
        local: quat_rotate(inv, delta),
        rel_quat: quat_mul(inv, object.quat()),
    }
}

fn compose(gripper: &Pose, offset: &GraspOffset) -> Pose {
    let world_delta = quat_rotate(gripper.quat(), offset.local);
    let q = quat_mul(gripper.quat(), offset.rel_quat);
    Pose::new(
        gripper.x() + world_delta[0],
        gripper.y() + world_delta[1],
        gripper.z() + world_delta[2],
        q[0],
        q[1],
        q[2],
        q[3],
    )
    .expect("rigid composition of finite poses")
}

/// A primitive commanded during a tick, integrated by
/// [`step_primitives`].
#[derive(Debug, Clone, PartialEq)]
pub enum PrimitiveCommand {
    MoveToward(Pose),
    MoveDown,
    Open,
    Close,
}

/// One scripted disturbance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub at_tick: usize,
    pub action: PerturbAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PerturbAction {
    Displace { object: String, pose: Pose },
    ForceRelease,
}

/// Per-run node state: sequence cursors, action activation flags, the
/// node index (paths and subtree sizes), and the per-tick command and
/// trace buffers.
#[derive(Debug)]
pub struct TickMemory {
    paths: Vec<String>,
    labels: Vec<String>,
    subtree_sizes: Vec<usize>,
    states: Vec<NodeState>,
    commands: Vec<PrimitiveCommand>,
    tick_trace: Vec<(usize, TickStatus)>,
}

#[derive(Debug, Default, Clone, Copy)]
struct NodeState {
    cursor: usize,
    commanded: bool,
}

impl TickMemory {
    pub fn new(bt: &BTNode) -> Self {
        let mut paths = Vec::new();
        let mut labels = Vec::new();
        let mut subtree_sizes = Vec::new();
        index_tree(bt, "$", &mut paths, &mut labels, &mut subtree_sizes);
        let states = vec![NodeState::default(); paths.len()];
        TickMemory {
            paths,
            labels,
            subtree_sizes,
            states,
            commands: Vec::new(),
            tick_trace: Vec::new(),
        }
    }

    fn reset_subtree(&mut self, id: usize) {
        let end = id + self.subtree_sizes[id];
        for state in &mut self.states[id..end] {
            *state = NodeState::default();
        }
    }

    pub fn take_commands(&mut self) -> Vec<PrimitiveCommand> {
        std::mem::take(&mut self.commands)
    }

    pub fn path_of(&self, id: usize) -> &str {
        &self.paths[id]
    }
}

fn index_tree(
    node: &BTNode,
    path: &str,
    paths: &mut Vec<String>,
    labels: &mut Vec<String>,
    sizes: &mut Vec<usize>,
) -> usize {
    let id = paths.len();
    paths.push(path.to_string());
    labels.push(node.describe().to_string());
    sizes.push(0);
    let mut size = 1;
    for (i, child) in node.children().iter().enumerate() {
        size += index_tree(child, &format!("{path}.children[{i}]"), paths, labels, sizes);
    }
    sizes[id] = size;
    size
}

/// Evaluates one tick of the tree against the current world; commands
/// issued by running actions accumulate in `mem` for the following
/// [`step_primitives`] call.
pub fn tick(
    bt: &BTNode,
    world: &WorldState,
    spec: &SystemSpecification,
    params: &SimParams,
    mem: &mut TickMemory,
) -> Result<TickStatus, SimError> {
    mem.commands.clear();
    mem.tick_trace.clear();
    tick_node(bt, 0, world, spec, params, mem)
}

fn tick_node(
    node: &BTNode,
    id: usize,
    world: &WorldState,
    spec: &SystemSpecification,
    params: &SimParams,
    mem: &mut TickMemory,
) -> Result<TickStatus, SimError> {
    let status = match node {
        BTNode::Composite { kind, children } => match kind {
            CompositeKind::Sequence => {
                let mut cursor = mem.states[id].cursor;
                // Child ids are preorder: walk forward to the cursor.
                let mut status = TickStatus::Success;
                let mut child_id = id + 1;
                for (i, child) in children.iter().enumerate() {
                    if i < cursor {
                        child_id += mem.subtree_sizes[child_id];
                        continue;
                    }
                    match tick_node(child, child_id, world, spec, params, mem)? {
                        TickStatus::Success => {
                            cursor += 1;
                            child_id += mem.subtree_sizes[child_id];
                        }
                        TickStatus::Running => {
                            status = TickStatus::Running;
                            break;
                        }
                        TickStatus::Failure => {
                            status = TickStatus::Failure;
                            break;
                        }
                    }
                }
                mem.states[id].cursor = cursor;
                status
            }
            CompositeKind::Selector => {
                let mut status = TickStatus::Failure;
                let mut child_id = id + 1;
                for child in children {
                    match tick_node(child, child_id, world, spec, params, mem)? {
                        TickStatus::Failure => child_id += mem.subtree_sizes[child_id],
                        other => {
                            status = other;
                            break;
                        }
                    }
                }
                status
            }
            CompositeKind::Parallel => {
                let mut any_success = false;
                let mut all_failure = true;
                let mut child_id = id + 1;
                for child in children {
                    let s = tick_node(child, child_id, world, spec, params, mem)?;
                    child_id += mem.subtree_sizes[child_id];
                    match s {
                        TickStatus::Success => {
                            any_success = true;
                            all_failure = false;
                        }
                        TickStatus::Running => all_failure = false,
                        TickStatus::Failure => {}
                    }
                }
                if any_success {
                    TickStatus::Success
                } else if all_failure {
                    TickStatus::Failure
                } else {
                    TickStatus::Running
                }
            }
        },
        BTNode::Leaf { kind, name, args } => match kind {
            LeafKind::Condition => {
                if eval_condition(name, args, world, spec, params)? {
                    TickStatus::Success
                } else {
                    TickStatus::Failure
                }
            }
            LeafKind::Action => tick_action(name, args, id, world, spec, params, mem)?,
        },
    };
    if status != TickStatus::Running {
        // Completion clears the subtree so a later reactivation starts fresh.
        mem.reset_subtree(id);
    }
    mem.tick_trace.push((id, status));
    Ok(status)
}

fn tick_action(
    name: &str,
    args: &[ArgExpr],
    id: usize,
    world: &WorldState,
    spec: &SystemSpecification,
    params: &SimParams,
    mem: &mut TickMemory,
) -> Result<TickStatus, SimError> {
    match name {
        ACTION_MOVE_POSE => {
            let expr = one_arg(name, args)?;
            // Re-resolved every tick: a displaced label redirects the
            // motion mid-flight.
            let target = resolve_arg(expr, spec)?;
            if at_pose(&world.gripper_pose, &target, params) {
                Ok(TickStatus::Success)
            } else {
                mem.commands.push(PrimitiveCommand::MoveToward(target));
                Ok(TickStatus::Running)
            }
        }
        ACTION_MOVE_DOWN => {
            no_args(name, args)?;
            let g = &world.gripper_pose;
            let support = world.support_height(g.x(), g.y(), 0.0, None);
            if (g.z() - support).abs() <= params.contact_tol {
                Ok(TickStatus::Success)
            } else {
                mem.commands.push(PrimitiveCommand::MoveDown);
                Ok(TickStatus::Running)
            }
        }
        ACTION_OPEN_GRIPPER | ACTION_CLOSE_GRIPPER => {
            no_args(name, args)?;
            let desired_open = name == ACTION_OPEN_GRIPPER;
            // A fresh activation always executes one step, even if the
            // fingers are already in position: closing is what captures,
            // opening is what releases.
            if mem.states[id].commanded && world.gripper_open == desired_open {
                Ok(TickStatus::Success)
            } else {
                mem.commands.push(if desired_open {
                    PrimitiveCommand::Open
                } else {
                    PrimitiveCommand::Close
                });
                mem.states[id].commanded = true;
                Ok(TickStatus::Running)
            }
        }
        _ => Err(SimError::UnknownPrimitive {
            kind: "action",
            name: name.to_string(),
        }),
    }
}

fn one_arg<'a>(name: &str, args: &'a [ArgExpr]) -> Result<&'a ArgExpr, SimError> {
    match args {
        [expr] => Ok(expr),
        _ => Err(SimError::BadArity {
            name: name.to_string(),
            expected: 1,
            found: args.len(),
        }),
    }
}

fn no_args(name: &str, args: &[ArgExpr]) -> Result<(), SimError> {
    if args.is_empty() {
        Ok(())
    } else {
        Err(SimError::BadArity {
            name: name.to_string(),
            expected: 0,
            found: args.len(),
        })
    }
}

fn at_pose(gripper: &Pose, target: &Pose, params: &SimParams) -> bool {
    gripper.distance_to(target) <= params.pos_tol
        && gripper.rotation_angle_to(target) <= params.rot_tol
}

/// Evaluates a condition primitive against the current world and
/// metadata. Labels are resolved now, never cached.
pub fn eval_condition(
    name: &str,
    args: &[ArgExpr],
    world: &WorldState,
    spec: &SystemSpecification,
    params: &SimParams,
) -> Result<bool, SimError> {
    match name {
        COND_IS_AT_POSE => {
            let target = resolve_arg(one_arg(name, args)?, spec)?;
            Ok(at_pose(&world.gripper_pose, &target, params))
        }
        COND_IS_GRASPED => {
            no_args(name, args)?;
            Ok(world.grasped.is_some())
        }
        COND_IS_CONTACT => {
            no_args(name, args)?;
            Ok(world.contact)
        }
        COND_IS_AT_HOME => {
            no_args(name, args)?;
            let home = spec
                .metadata()
                .get(spec.home_label())
                .ok_or_else(|| SimError::UnknownLabel(spec.home_label().to_string()))?;
            Ok(at_pose(&world.gripper_pose, home, params))
        }
        _ => Err(SimError::UnknownPrimitive {
            kind: "condition",
            name: name.to_string(),
        }),
    }
}

/// Integrates the commanded primitives into the world, in command order.
pub fn step_primitives(world: &mut WorldState, commands: &[PrimitiveCommand], params: &SimParams) {
    for command in commands {
        match command {
            PrimitiveCommand::MoveToward(target) => {
                let d = world.gripper_pose.distance_to(target);
                // The ulp slack keeps accumulated lerp error from turning
                // an exact N-step path into N+1 steps.
                let next = if d <= params.step_speed * (1.0 + 1e-9) {
                    *target
                } else {
                    world
                        .gripper_pose
                        .interpolate_toward(target, params.step_speed / d)
                };
                world.set_gripper_pose(next);
            }
            PrimitiveCommand::MoveDown => {
                let g = world.gripper_pose;
                let support = world.support_height(g.x(), g.y(), 0.0, None);
                let gap = g.z() - support;
                let nz = if gap <= params.step_speed {
                    support
                } else {
                    g.z() - params.step_speed
                };
                world.set_gripper_pose(g.with_position(g.x(), g.y(), nz));
                if (world.gripper_pose.z() - support).abs() <= params.contact_tol {
                    world.contact = true;
                }
            }
            PrimitiveCommand::Open => {
                world.gripper_open = true;
                if let Some(id) = world.grasped.take() {
                    world.grasp_offset = None;
                    world.settle_object(&id);
                }
            }
            PrimitiveCommand::Close => {
                world.gripper_open = false;
                if world.grasped.is_none() {
                    let gripper = world.gripper_pose;
                    let candidate = world
                        .object_poses
                        .iter()
                        .map(|(id, pose)| (pose.distance_to(&gripper), id.clone()))
                        .filter(|(d, _)| *d <= params.grasp_radius)
                        .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
                    if let Some((_, id)) = candidate {
                        world.grasp_offset =
                            Some(capture_offset(&world.gripper_pose, &world.object_poses[&id]));
                        world.grasped = Some(id);
                    }
                }
            }
        }
    }
}

/// One trace record: which node returned which status at which tick.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEntry {
    pub tick: usize,
    pub path: String,
    pub node: String,
    pub status: TickStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExecutionResult {
    pub final_status: FinalStatus,
    pub ticks_used: usize,
    pub goals_met: Vec<bool>,
    pub trace: Vec<TraceEntry>,
    pub final_world: WorldState,
}

impl ExecutionResult {
    pub fn all_goals_met(&self) -> bool {
        self.goals_met.iter().all(|m| *m)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Suppress metadata updates on uncommanded displacements. Runs with
    /// this flag show how plans degrade when labels go stale.
    pub stale_metadata: bool,
}

/// Runs a validated tree to completion: perturb, tick, step, until the
/// root succeeds, the root fails, or the tick budget runs out. The
/// success verdict additionally requires every goal to hold in the
/// final world. Engine errors (unknown primitives, unresolvable labels)
/// are folded into a failure verdict.
pub fn run(
    bt: &BTNode,
    scene: &Scene,
    spec: &SystemSpecification,
    goals: &[GoalPredicate],
    params: &SimParams,
    perturbations: &[Perturbation],
    opts: &RunOptions,
) -> ExecutionResult {
    let mut world = WorldState::from_scene(scene);
    let mut live_spec = spec.clone();
    let mut mem = TickMemory::new(bt);
    let mut trace: Vec<TraceEntry> = Vec::new();
    let object_count = world.object_poses.len();

    let mut final_status = FinalStatus::Timeout;
    let mut ticks_used = params.max_ticks;

    for t in 0..params.max_ticks {
        world.tick_index = t;
        apply_perturbations(&mut world, &mut live_spec, perturbations, t, opts);

        let status = tick(bt, &world, &live_spec, params, &mut mem);
        for (id, s) in &mem.tick_trace {
            trace.push(TraceEntry {
                tick: t,
                path: mem.paths[*id].clone(),
                node: mem.labels[*id].clone(),
                status: *s,
            });
        }
        match status {
            Err(_) => {
                final_status = FinalStatus::Failure;
                ticks_used = t + 1;
                break;
            }
            Ok(TickStatus::Success) => {
                final_status = FinalStatus::Success;
                ticks_used = t + 1;
                break;
            }
            Ok(TickStatus::Failure) => {
                final_status = FinalStatus::Failure;
                ticks_used = t + 1;
                break;
            }
            Ok(TickStatus::Running) => {
                let commands = mem.take_commands();
                step_primitives(&mut world, &commands, params);
                debug_assert_eq!(world.object_poses.len(), object_count);
                debug_assert!(world_is_sound(&world), "world invariants violated at tick {t}");
            }
        }
    }

    let goals_met: Vec<bool> = goals
        .iter()
        .map(|g| eval_goal(g, &world, &live_spec, params))
        .collect();
    if final_status == FinalStatus::Success && !goals_met.iter().all(|m| *m) {
        final_status = FinalStatus::Failure;
    }
    ExecutionResult {
        final_status,
        ticks_used,
        goals_met,
        trace,
        final_world: world,
    }
}

fn apply_perturbations(
    world: &mut WorldState,
    spec: &mut SystemSpecification,
    perturbations: &[Perturbation],
    tick: usize,
    opts: &RunOptions,
) {
    for p in perturbations.iter().filter(|p| p.at_tick == tick) {
        match &p.action {
            PerturbAction::Displace { object, pose } => {
                if world.grasped.as_deref() == Some(object.as_str())
                    || !world.object_poses.contains_key(object)
                {
                    continue;
                }
                world.object_poses.insert(object.clone(), *pose);
                world.settle_object(object);
                if !opts.stale_metadata {
                    spec.metadata_mut()
                        .insert(object.clone(), world.object_poses[object]);
                }
            }
            PerturbAction::ForceRelease => {
                if let Some(id) = world.grasped.take() {
                    world.grasp_offset = None;
                    world.settle_object(&id);
                    if !opts.stale_metadata {
                        spec.metadata_mut()
                            .insert(id.clone(), world.object_poses[&id]);
                    }
                }
            }
        }
    }
}

/// Evaluates one goal predicate against the final world.
pub fn eval_goal(
    goal: &GoalPredicate,
    world: &WorldState,
    spec: &SystemSpecification,
    params: &SimParams,
) -> bool {
    match goal {
        GoalPredicate::Grasped { object } => world.grasped.as_deref() == Some(object.as_str()),
        GoalPredicate::On { top, bottom } => {
            let (Some(tp), Some(bp)) = (world.object_poses.get(top), world.object_poses.get(bottom))
            else {
                return false;
            };
            let (Some(tg), Some(bg)) = (world.geometry.get(top), world.geometry.get(bottom))
            else {
                return false;
            };
            let planar = tp.planar_distance_to(bp) <= params.on_radius;
            let resting =
                ((tp.z() - tg.height / 2.0) - (bp.z() + bg.height / 2.0)).abs()
                    <= params.contact_tol;
            planar && resting
        }
        GoalPredicate::AtLabelPose { object, pose, tol, .. } => {
            // Horizontal match only: the resting height is a consequence
            // of the object's own geometry.
            world
                .object_poses
                .get(object)
                .is_some_and(|p| p.planar_distance_to(pose) <= *tol)
        }
        GoalPredicate::AtHome => spec
            .metadata()
            .get(spec.home_label())
            .is_some_and(|home| at_pose(&world.gripper_pose, home, params)),
        GoalPredicate::GripperOpen => world.gripper_open,
    }
}

/// Structural soundness of a world snapshot: no two resting objects
/// strictly interpenetrate, and a carried object tracks the gripper.
fn world_is_sound(world: &WorldState) -> bool {
    let ids: Vec<&String> = world.object_poses.keys().collect();
    for (i, a) in ids.iter().enumerate() {
        if Some(a.as_str()) == world.grasped.as_deref() {
            continue;
        }
        for b in &ids[i + 1..] {
            if Some(b.as_str()) == world.grasped.as_deref() {
                continue;
            }
            let (pa, pb) = (&world.object_poses[*a], &world.object_poses[*b]);
            let (ga, gb) = (&world.geometry[*a], &world.geometry[*b]);
            let xy_overlap =
                pa.planar_distance_to(pb) < ga.footprint_radius + gb.footprint_radius - 1e-9;
            let a_lo = pa.z() - ga.height / 2.0;
            let a_hi = pa.z() + ga.height / 2.0;
            let b_lo = pb.z() - gb.height / 2.0;
            let b_hi = pb.z() + gb.height / 2.0;
            let z_overlap = a_lo < b_hi - 1e-9 && b_lo < a_hi - 1e-9;
            if xy_overlap && z_overlap {
                return false;
            }
        }
    }
    if let (Some(id), Some(offset)) = (&world.grasped, &world.grasp_offset) {
        let expected = compose(&world.gripper_pose, offset);
        if world.object_poses[id].distance_to(&expected) > 1e-9 {
            return false;
        }
    }
    true
}
