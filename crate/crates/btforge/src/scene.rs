//! Seeded procedural generation of domain-randomized tabletop scenes.
//!
//! A scene is a set of colored geometric objects placed on a table by
//! rejection sampling, plus two free-space waypoints: `home` (where the
//! gripper parks, above the table center) and `temp_pose` (a cleared
//! patch of table surface usable as a buffer during manipulation).
//! Generation is a pure function of `(seed, config)`; identical inputs
//! produce byte-identical serialized scenes.

use std::collections::BTreeMap;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Pose, SystemSpecification};

/// Attempt budget for rejection sampling, per scene.
const PLACEMENT_ATTEMPT_BUDGET: usize = 10_000;

/// Height of the home waypoint above the table surface.
const HOME_CLEARANCE: f64 = 0.35;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SceneError {
    #[error("placement exhausted after {0} attempts; the configuration is over-dense")]
    PlacementExhausted(usize),
    #[error("invalid scene config: {0}")]
    BadConfig(String),
}

/// Object shape classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Prism,
    Parallelepiped,
    Cylinder,
    Cube,
}

impl Shape {
    pub fn as_str(&self) -> &'static str {
        match self {
            Shape::Prism => "prism",
            Shape::Parallelepiped => "parallelepiped",
            Shape::Cylinder => "cylinder",
            Shape::Cube => "cube",
        }
    }

    pub fn from_name(s: &str) -> Option<Shape> {
        match s {
            "prism" => Some(Shape::Prism),
            "parallelepiped" => Some(Shape::Parallelepiped),
            "cylinder" => Some(Shape::Cylinder),
            "cube" => Some(Shape::Cube),
            _ => None,
        }
    }
}

/// Physical extents of an object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dims {
    Box { width: f64, depth: f64, height: f64 },
    Cylinder { radius: f64, height: f64 },
}

impl Dims {
    pub fn height(&self) -> f64 {
        match self {
            Dims::Box { height, .. } | Dims::Cylinder { height, .. } => *height,
        }
    }

    /// Radius of the circle circumscribing the footprint. Conservative
    /// for boxes and prisms, exact for cylinders; guarantees separation
    /// checks cover every orientation.
    pub fn footprint_radius(&self) -> f64 {
        match self {
            Dims::Box { width, depth, .. } => {
                ((width / 2.0).powi(2) + (depth / 2.0).powi(2)).sqrt()
            }
            Dims::Cylinder { radius, .. } => *radius,
        }
    }
}

/// Inclusive sampling range in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeM {
    pub min: f64,
    pub max: f64,
}

impl RangeM {
    pub fn new(min: f64, max: f64) -> Self {
        RangeM { min, max }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.min == self.max {
            self.min
        } else {
            rng.gen_range(self.min..=self.max)
        }
    }
}

/// Per-shape dimension ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionRanges {
    pub box_width: RangeM,
    pub box_depth: RangeM,
    pub box_height: RangeM,
    pub cylinder_radius: RangeM,
    pub cylinder_height: RangeM,
    pub cube_side: RangeM,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableBounds {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl TableBounds {
    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn depth(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.x_min + self.x_max) / 2.0,
            (self.y_min + self.y_max) / 2.0,
        )
    }
}

/// Knobs of the scene generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub n_objects: (usize, usize),
    pub table_bounds: TableBounds,
    pub table_height: f64,
    pub shape_set: Vec<Shape>,
    pub color_set: Vec<String>,
    pub min_separation: f64,
    pub dimension_ranges: DimensionRanges,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            n_objects: (2, 5),
            table_bounds: TableBounds {
                x_min: 0.2,
                x_max: 0.8,
                y_min: -0.3,
                y_max: 0.3,
            },
            table_height: 0.4,
            shape_set: vec![Shape::Prism, Shape::Parallelepiped, Shape::Cylinder, Shape::Cube],
            color_set: vec![
                "red".into(),
                "green".into(),
                "blue".into(),
                "yellow".into(),
                "pink".into(),
            ],
            // Large enough that any object fits into any other object's
            // vacated footprint without touching neighbors.
            min_separation: 0.04,
            dimension_ranges: DimensionRanges {
                box_width: RangeM::new(0.03, 0.07),
                box_depth: RangeM::new(0.03, 0.07),
                box_height: RangeM::new(0.02, 0.05),
                cylinder_radius: RangeM::new(0.015, 0.035),
                cylinder_height: RangeM::new(0.02, 0.05),
                cube_side: RangeM::new(0.03, 0.05),
            },
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SceneError> {
        let bad = |msg: &str| Err(SceneError::BadConfig(msg.to_string()));
        if self.n_objects.0 > self.n_objects.1 {
            return bad("n_objects min exceeds max");
        }
        if self.shape_set.is_empty() || self.color_set.is_empty() {
            return bad("shape_set and color_set must be non-empty");
        }
        if !(self.min_separation.is_finite() && self.min_separation > 0.0) {
            return bad("min_separation must be positive");
        }
        if self.table_bounds.width() <= 0.0 || self.table_bounds.depth() <= 0.0 {
            return bad("table bounds are degenerate");
        }
        let r = &self.dimension_ranges;
        for range in [
            r.box_width,
            r.box_depth,
            r.box_height,
            r.cylinder_radius,
            r.cylinder_height,
            r.cube_side,
        ] {
            if !(range.min.is_finite() && range.min > 0.0) || range.min > range.max {
                return bad("dimension ranges must be positive with min <= max");
            }
        }
        Ok(())
    }

    /// Largest footprint radius any object from this config can have.
    pub fn max_footprint_radius(&self) -> f64 {
        let r = &self.dimension_ranges;
        let mut max_r: f64 = 0.0;
        for shape in &self.shape_set {
            let candidate = match shape {
                Shape::Cylinder => r.cylinder_radius.max,
                Shape::Cube => {
                    Dims::Box {
                        width: r.cube_side.max,
                        depth: r.cube_side.max,
                        height: r.cube_side.max,
                    }
                    .footprint_radius()
                }
                Shape::Prism | Shape::Parallelepiped => Dims::Box {
                    width: r.box_width.max,
                    depth: r.box_depth.max,
                    height: r.box_height.max,
                }
                .footprint_radius(),
            };
            max_r = max_r.max(candidate);
        }
        max_r
    }
}

/// One placed object. The pose is the object center; its z is the table
/// surface plus half the object height.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: String,
    pub shape: Shape,
    pub color: String,
    pub dims: Dims,
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub seed: u64,
    pub table: Table,
    pub objects: Vec<SceneObject>,
    pub home_pose: Pose,
    pub temp_pose: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub height: f64,
}

impl Scene {
    pub fn object(&self, id: &str) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    /// The dynamic metadata map: one label per object plus the two
    /// waypoints.
    pub fn metadata(&self) -> BTreeMap<String, Pose> {
        scene_metadata(self)
    }

    /// System specification with the standard primitive library grounded
    /// in this scene's metadata.
    pub fn system_spec(&self) -> SystemSpecification {
        SystemSpecification::standard_library(self.metadata(), self.table.height)
            .expect("scene metadata always contains the waypoints")
    }
}

/// Splits an id back into its (color, shape, index) parts. Inverse of
/// the naming grammar `<color>_<shape>_<index>`.
pub fn parse_object_id(id: &str) -> Option<(String, Shape, usize)> {
    let mut parts = id.rsplitn(3, '_');
    let index: usize = parts.next()?.parse().ok()?;
    let shape = Shape::from_name(parts.next()?)?;
    let color = parts.next()?.to_string();
    if color.is_empty() {
        return None;
    }
    Some((color, shape, index))
}

/// Generates a scene deterministically from `(seed, cfg)`.
pub fn generate_scene(seed: u64, cfg: &SceneConfig) -> Result<Scene, SceneError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = if cfg.n_objects.0 == cfg.n_objects.1 {
        cfg.n_objects.0
    } else {
        rng.gen_range(cfg.n_objects.0..=cfg.n_objects.1)
    };

    let mut attempts = 0usize;
    let mut objects: Vec<SceneObject> = Vec::with_capacity(n);
    let mut shape_counters: BTreeMap<Shape, usize> = BTreeMap::new();

    for _ in 0..n {
        let shape = *cfg.shape_set.choose(&mut rng).expect("non-empty");
        let color = cfg.color_set.choose(&mut rng).expect("non-empty").clone();
        let dims = sample_dims(shape, &cfg.dimension_ranges, &mut rng);
        let yaw = rng.gen_range(0.0..std::f64::consts::TAU);
        let r = dims.footprint_radius();

        let (x, y) = place_xy(&mut rng, cfg, r, &objects, &mut attempts)?;
        let z = cfg.table_height + dims.height() / 2.0;
        let index = shape_counters.entry(shape).or_insert(0);
        let id = format!("{}_{}_{}", color, shape.as_str(), *index);
        *index += 1;
        objects.push(SceneObject {
            id,
            shape,
            color,
            dims,
            pose: Pose::with_yaw(x, y, z, yaw).expect("finite placement"),
        });
    }

    // The temp waypoint sits on the table surface, cleared widely enough
    // that any object of this config can be parked there.
    let temp_clear = cfg.max_footprint_radius();
    let (tx, ty) = loop {
        attempts += 1;
        if attempts > PLACEMENT_ATTEMPT_BUDGET {
            return Err(SceneError::PlacementExhausted(attempts - 1));
        }
        let x = rng.gen_range(
            cfg.table_bounds.x_min + temp_clear..=cfg.table_bounds.x_max - temp_clear,
        );
        let y = rng.gen_range(
            cfg.table_bounds.y_min + temp_clear..=cfg.table_bounds.y_max - temp_clear,
        );
        let clear = objects.iter().all(|o| {
            let dx = o.pose.x() - x;
            let dy = o.pose.y() - y;
            (dx * dx + dy * dy).sqrt()
                >= temp_clear + o.dims.footprint_radius() + cfg.min_separation
        });
        if clear {
            break (x, y);
        }
    };

    let (cx, cy) = cfg.table_bounds.center();
    Ok(Scene {
        seed,
        table: Table {
            x_min: cfg.table_bounds.x_min,
            x_max: cfg.table_bounds.x_max,
            y_min: cfg.table_bounds.y_min,
            y_max: cfg.table_bounds.y_max,
            height: cfg.table_height,
        },
        objects,
        home_pose: Pose::at(cx, cy, cfg.table_height + HOME_CLEARANCE),
        temp_pose: Pose::at(tx, ty, cfg.table_height),
    })
}

fn sample_dims(shape: Shape, ranges: &DimensionRanges, rng: &mut ChaCha8Rng) -> Dims {
    match shape {
        Shape::Cylinder => Dims::Cylinder {
            radius: ranges.cylinder_radius.sample(rng),
            height: ranges.cylinder_height.sample(rng),
        },
        Shape::Cube => {
            let side = ranges.cube_side.sample(rng);
            Dims::Box {
                width: side,
                depth: side,
                height: side,
            }
        }
        Shape::Prism | Shape::Parallelepiped => Dims::Box {
            width: ranges.box_width.sample(rng),
            depth: ranges.box_depth.sample(rng),
            height: ranges.box_height.sample(rng),
        },
    }
}

fn place_xy(
    rng: &mut ChaCha8Rng,
    cfg: &SceneConfig,
    radius: f64,
    placed: &[SceneObject],
    attempts: &mut usize,
) -> Result<(f64, f64), SceneError> {
    let b = &cfg.table_bounds;
    if b.x_min + radius > b.x_max - radius || b.y_min + radius > b.y_max - radius {
        return Err(SceneError::PlacementExhausted(*attempts));
    }
    loop {
        *attempts += 1;
        if *attempts > PLACEMENT_ATTEMPT_BUDGET {
            return Err(SceneError::PlacementExhausted(*attempts - 1));
        }
        let x = rng.gen_range(b.x_min + radius..=b.x_max - radius);
        let y = rng.gen_range(b.y_min + radius..=b.y_max - radius);
        let separated = placed.iter().all(|o| {
            let dx = o.pose.x() - x;
            let dy = o.pose.y() - y;
            (dx * dx + dy * dy).sqrt()
                >= cfg.min_separation + radius + o.dims.footprint_radius()
        });
        if separated {
            return Ok((x, y));
        }
    }
}

/// Projects a scene into its label -> pose metadata map.
pub fn scene_metadata(scene: &Scene) -> BTreeMap<String, Pose> {
    let mut metadata = BTreeMap::new();
    for obj in &scene.objects {
        metadata.insert(obj.id.clone(), obj.pose);
    }
    metadata.insert("home".to_string(), scene.home_pose);
    metadata.insert("temp_pose".to_string(), scene.temp_pose);
    metadata
}
