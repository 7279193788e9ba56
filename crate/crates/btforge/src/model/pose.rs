//! 6D poses: a translation in meters plus a unit quaternion orientation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Maximum drift from unit norm tolerated after construction.
const UNIT_NORM_TOL: f64 = 1e-9;

/// Errors raised when constructing a [`Pose`] from raw components.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum PoseError {
    #[error("pose component {0} is not finite")]
    NonFinite(&'static str),
    #[error("quaternion norm {0} is too small to normalize")]
    DegenerateQuaternion(f64),
}

/// A 6D end-effector or object pose.
///
/// The quaternion is normalized on construction, so every `Pose` in the
/// system carries a unit rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPose")]
pub struct Pose {
    x: f64,
    y: f64,
    z: f64,
    qw: f64,
    qx: f64,
    qy: f64,
    qz: f64,
}

#[derive(Deserialize)]
struct RawPose {
    x: f64,
    y: f64,
    z: f64,
    qw: f64,
    qx: f64,
    qy: f64,
    qz: f64,
}

impl TryFrom<RawPose> for Pose {
    type Error = PoseError;

    fn try_from(raw: RawPose) -> Result<Self, Self::Error> {
        Pose::new(raw.x, raw.y, raw.z, raw.qw, raw.qx, raw.qy, raw.qz)
    }
}

impl Pose {
    /// Builds a pose, normalizing the quaternion. Rejects non-finite
    /// components and near-zero quaternions.
    pub fn new(
        x: f64,
        y: f64,
        z: f64,
        qw: f64,
        qx: f64,
        qy: f64,
        qz: f64,
    ) -> Result<Self, PoseError> {
        for (value, name) in [
            (x, "x"),
            (y, "y"),
            (z, "z"),
            (qw, "qw"),
            (qx, "qx"),
            (qy, "qy"),
            (qz, "qz"),
        ] {
            if !value.is_finite() {
                return Err(PoseError::NonFinite(name));
            }
        }
        let norm = (qw * qw + qx * qx + qy * qy + qz * qz).sqrt();
        if norm < 1e-12 {
            return Err(PoseError::DegenerateQuaternion(norm));
        }
        // Already-unit quaternions pass through bit-identically, so
        // construction is idempotent and serialization round-trips
        // exactly.
        let pose = if (norm - 1.0).abs() <= UNIT_NORM_TOL {
            Pose {
                x,
                y,
                z,
                qw,
                qx,
                qy,
                qz,
            }
        } else {
            Pose {
                x,
                y,
                z,
                qw: qw / norm,
                qx: qx / norm,
                qy: qy / norm,
                qz: qz / norm,
            }
        };
        debug_assert!((pose.quat_norm() - 1.0).abs() <= 2.0 * UNIT_NORM_TOL);
        Ok(pose)
    }

    /// Pose at a position with identity orientation.
    pub fn at(x: f64, y: f64, z: f64) -> Self {
        Pose::new(x, y, z, 1.0, 0.0, 0.0, 0.0).expect("finite components")
    }

    /// Pose at a position, rotated by `yaw` radians about the vertical axis.
    pub fn with_yaw(x: f64, y: f64, z: f64, yaw: f64) -> Result<Self, PoseError> {
        let half = yaw / 2.0;
        Pose::new(x, y, z, half.cos(), 0.0, 0.0, half.sin())
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn quat(&self) -> [f64; 4] {
        [self.qw, self.qx, self.qy, self.qz]
    }

    fn quat_norm(&self) -> f64 {
        (self.qw * self.qw + self.qx * self.qx + self.qy * self.qy + self.qz * self.qz).sqrt()
    }

    /// Same pose shifted vertically; rotation is untouched.
    pub fn offset_z(&self, dz: f64) -> Pose {
        Pose {
            z: self.z + dz,
            ..*self
        }
    }

    /// Same rotation at a new position.
    pub fn with_position(&self, x: f64, y: f64, z: f64) -> Pose {
        Pose { x, y, z, ..*self }
    }

    /// Euclidean distance between positions.
    pub fn distance_to(&self, other: &Pose) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    /// Distance between positions projected on the table plane.
    pub fn planar_distance_to(&self, other: &Pose) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        (dx * dx + dy * dy).sqrt()
    }

    /// Rotation angle (radians) between the two orientations.
    pub fn rotation_angle_to(&self, other: &Pose) -> f64 {
        let dot = (self.qw * other.qw
            + self.qx * other.qx
            + self.qy * other.qy
            + self.qz * other.qz)
            .abs()
            .min(1.0);
        2.0 * dot.acos()
    }

    /// Interpolates `t` of the way toward `target`: linear in position,
    /// spherical in rotation. `t` is clamped to [0, 1]; `t = 1` lands
    /// exactly on the target.
    pub fn interpolate_toward(&self, target: &Pose, t: f64) -> Pose {
        let t = t.clamp(0.0, 1.0);
        if t >= 1.0 {
            return *target;
        }
        let x = self.x + (target.x - self.x) * t;
        let y = self.y + (target.y - self.y) * t;
        let z = self.z + (target.z - self.z) * t;
        let [qw, qx, qy, qz] = slerp(self.quat(), target.quat(), t);
        Pose::new(x, y, z, qw, qx, qy, qz).expect("interpolation of finite poses is finite")
    }
}

fn slerp(a: [f64; 4], b: [f64; 4], t: f64) -> [f64; 4] {
    let mut b = b;
    let mut dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3];
    // Take the short arc.
    if dot < 0.0 {
        for c in &mut b {
            *c = -*c;
        }
        dot = -dot;
    }
    if dot > 1.0 - 1e-10 {
        // Nearly parallel: linear blend, renormalized by Pose::new.
        return [
            a[0] + (b[0] - a[0]) * t,
            a[1] + (b[1] - a[1]) * t,
            a[2] + (b[2] - a[2]) * t,
            a[3] + (b[3] - a[3]) * t,
        ];
    }
    let theta = dot.clamp(-1.0, 1.0).acos();
    let sin_theta = theta.sin();
    let wa = ((1.0 - t) * theta).sin() / sin_theta;
    let wb = (t * theta).sin() / sin_theta;
    [
        a[0] * wa + b[0] * wb,
        a[1] * wa + b[1] * wb,
        a[2] * wa + b[2] * wb,
        a[3] * wa + b[3] * wb,
    ]
}
