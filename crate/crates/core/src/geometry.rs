//! Rigid transforms, axis-aligned boxes and spheres.
//!
//! Quaternions are exchanged as `[w, x, y, z]` everywhere outside this module.
//! Euler triples are intrinsic X-Y-Z rotations in degrees.

use std::fmt;

use nalgebra::{Quaternion, Unit, UnitQuaternion, Vector3};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub type Vec3 = Vector3<f64>;

/// A rigid transform: rotation followed by translation.
#[derive(Clone, Copy, PartialEq)]
pub struct Pose {
    pub translation: Vec3,
    pub rotation: UnitQuaternion<f64>,
}

impl fmt::Debug for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = self.translation;
        let q = self.wxyz();
        write!(
            f,
            "Pose(t=[{:.6}, {:.6}, {:.6}], q=[{:.6}, {:.6}, {:.6}, {:.6}])",
            t.x, t.y, t.z, q[0], q[1], q[2], q[3]
        )
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            translation: Vec3::zeros(),
            rotation: UnitQuaternion::identity(),
        }
    }

    pub fn new(translation: Vec3, rotation: UnitQuaternion<f64>) -> Self {
        Self {
            translation,
            rotation,
        }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self::new(translation, UnitQuaternion::identity())
    }

    pub fn from_rotation(rotation: UnitQuaternion<f64>) -> Self {
        Self::new(Vec3::zeros(), rotation)
    }

    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    /// `self ∘ other`: express `other` (given in this pose's frame) in the parent frame.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            translation: self.translation + self.rotation * other.translation,
            rotation: self.rotation * other.rotation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose {
            translation: -(inv * self.translation),
            rotation: inv,
        }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.translation + self.rotation * p
    }

    pub fn transform_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// Position distance and rotation angle (radians) between two poses.
    pub fn error_to(&self, other: &Pose) -> (f64, f64) {
        let dp = (other.translation - self.translation).norm();
        let dr = self.rotation.angle_to(&other.rotation);
        (dp, dr)
    }

    /// Column `i` of the rotation matrix (the frame's local axis in the parent frame).
    pub fn axis(&self, i: usize) -> Vec3 {
        let mut e = Vec3::zeros();
        e[i] = 1.0;
        self.rotation * e
    }
}

/// Builds a unit quaternion from `[w, x, y, z]`, normalizing unless the input
/// is already unit to 1e-12 (so serialized rotations read back bit-exact).
/// `None` for a zero vector.
pub fn quat_from_wxyz(q: [f64; 4]) -> Option<UnitQuaternion<f64>> {
    let raw = Quaternion::new(q[0], q[1], q[2], q[3]);
    let n = raw.norm();
    if !n.is_finite() || n < 1e-12 {
        return None;
    }
    if (n - 1.0).abs() < 1e-12 {
        return Some(UnitQuaternion::new_unchecked(raw));
    }
    Some(UnitQuaternion::from_quaternion(raw))
}

pub fn quat_norm(q: [f64; 4]) -> f64 {
    q.iter().map(|c| c * c).sum::<f64>().sqrt()
}

/// Intrinsic X-Y-Z Euler angles in degrees: `R = Rx(a) * Ry(b) * Rz(c)`.
pub fn euler_xyz_deg(e: [f64; 3]) -> UnitQuaternion<f64> {
    let rx = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), e[0].to_radians());
    let ry = UnitQuaternion::from_axis_angle(&Vector3::y_axis(), e[1].to_radians());
    let rz = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), e[2].to_radians());
    rx * ry * rz
}

pub fn yaw_deg(yaw: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw.to_radians())
}

pub fn axis_angle(axis: &Vec3, angle: f64) -> UnitQuaternion<f64> {
    match Unit::try_new(*axis, 1e-12) {
        Some(a) => UnitQuaternion::from_axis_angle(&a, angle),
        None => UnitQuaternion::identity(),
    }
}

/// Smallest rotation taking unit vector `from` onto unit vector `to`.
pub fn rotation_between(from: &Vec3, to: &Vec3) -> UnitQuaternion<f64> {
    let a = from.normalize();
    let b = to.normalize();
    if let Some(q) = UnitQuaternion::rotation_between(&a, &b) {
        return q;
    }
    // Antiparallel: rotate by pi about any axis orthogonal to `a`.
    let helper = if a.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let axis = a.cross(&helper).normalize();
    UnitQuaternion::from_axis_angle(&Unit::new_unchecked(axis), std::f64::consts::PI)
}

/// Angle in degrees between two vectors.
pub fn angle_between_deg(a: &Vec3, b: &Vec3) -> f64 {
    let c = a.normalize().dot(&b.normalize()).clamp(-1.0, 1.0);
    c.acos().to_degrees()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    #[serde(with = "vec3_serde")]
    pub min: Vec3,
    #[serde(with = "vec3_serde")]
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self { min, max }
    }

    pub fn from_center_extents(center: Vec3, extents: Vec3) -> Self {
        Self {
            min: center - extents / 2.0,
            max: center + extents / 2.0,
        }
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) / 2.0
    }

    pub fn extents(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let (a, b) = (self.min, self.max);
        [
            Vec3::new(a.x, a.y, a.z),
            Vec3::new(b.x, a.y, a.z),
            Vec3::new(a.x, b.y, a.z),
            Vec3::new(b.x, b.y, a.z),
            Vec3::new(a.x, a.y, b.z),
            Vec3::new(b.x, a.y, b.z),
            Vec3::new(a.x, b.y, b.z),
            Vec3::new(b.x, b.y, b.z),
        ]
    }

    /// World-axis-aligned bounds of this (local) box after applying `pose`.
    pub fn transformed(&self, pose: &Pose) -> Aabb {
        let mut min = Vec3::repeat(f64::INFINITY);
        let mut max = Vec3::repeat(f64::NEG_INFINITY);
        for c in self.corners() {
            let w = pose.transform_point(&c);
            min = min.inf(&w);
            max = max.sup(&w);
        }
        Aabb { min, max }
    }

    pub fn contains_xy(&self, p: &Vec3) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    /// Signed distance from a point to the box surface; negative inside.
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        let c = self.center();
        let h = self.extents() / 2.0;
        let d = (p - c).abs() - h;
        let outside = d.sup(&Vec3::zeros()).norm();
        let inside = d.x.max(d.y).max(d.z).min(0.0);
        outside + inside
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sphere {
    #[serde(with = "vec3_serde")]
    pub center: Vec3,
    pub radius: f64,
}

impl Sphere {
    pub fn new(center: Vec3, radius: f64) -> Self {
        Self { center, radius }
    }

    pub fn distance_to_aabb(&self, b: &Aabb) -> f64 {
        b.signed_distance(&self.center) - self.radius
    }

    pub fn distance_to_sphere(&self, o: &Sphere) -> f64 {
        (self.center - o.center).norm() - self.radius - o.radius
    }
}

/// Named world directions used by grasp filters and hints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    Upward,
    Downward,
    Forward,
    Backward,
    Left,
    Right,
}

impl Direction {
    pub const ALL: [Direction; 6] = [
        Direction::Upward,
        Direction::Downward,
        Direction::Forward,
        Direction::Backward,
        Direction::Left,
        Direction::Right,
    ];

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "upward" | "up" => Direction::Upward,
            "downward" | "down" => Direction::Downward,
            "forward" => Direction::Forward,
            "backward" => Direction::Backward,
            "left" => Direction::Left,
            "right" => Direction::Right,
            _ => return None,
        })
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::Upward => "upward",
            Direction::Downward => "downward",
            Direction::Forward => "forward",
            Direction::Backward => "backward",
            Direction::Left => "left",
            Direction::Right => "right",
        }
    }

    /// upward=+Z, downward=-Z, forward=+X, backward=-X, left=+Y, right=-Y.
    pub fn vector(&self) -> Vec3 {
        match self {
            Direction::Upward => Vec3::z(),
            Direction::Downward => -Vec3::z(),
            Direction::Forward => Vec3::x(),
            Direction::Backward => -Vec3::x(),
            Direction::Left => Vec3::y(),
            Direction::Right => -Vec3::y(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    translation: [f64; 3],
    rotation: [f64; 4],
}

impl Serialize for Pose {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let t = self.translation;
        PoseRepr {
            translation: [t.x, t.y, t.z],
            rotation: self.wxyz(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let r = PoseRepr::deserialize(d)?;
        let rotation = quat_from_wxyz(r.rotation)
            .ok_or_else(|| D::Error::custom("rotation quaternion has zero norm"))?;
        Ok(Pose::new(Vec3::from(r.translation), rotation))
    }
}

/// `[x, y, z]` array encoding for `Vector3<f64>` fields.
pub mod vec3_serde {
    use super::Vec3;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Vec3, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq([v.x, v.y, v.z])
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec3, D::Error> {
        let a = <[f64; 3]>::deserialize(d)?;
        Ok(Vec3::from(a))
    }
}

/// Unit-length `[x, y, z]` encoding; normalizes on read and rejects zero vectors.
pub mod unit_vec3_serde {
    use super::Vec3;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Vec3, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq([v.x, v.y, v.z])
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec3, D::Error> {
        let a = Vec3::from(<[f64; 3]>::deserialize(d)?);
        let n = a.norm();
        if n < 1e-12 {
            return Err(D::Error::custom("axis has zero length"));
        }
        Ok(a / n)
    }
}
