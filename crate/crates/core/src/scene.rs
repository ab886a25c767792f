//! Predicted scene state shared by skill compilation and planning.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::assets::{ArticulatedPart, AssetKind, JointAnnotation};
use crate::config::{ArmSide, GripperCommand};
use crate::geometry::{Aabb, Pose, Vec3};
use crate::kinematics::{Arm, CollisionWorld, Obstacle, Shape};

pub const TABLE: &str = "table";

/// Identifies one arm of one robot, e.g. `split_aloha.left`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ArmKey {
    pub robot: String,
    pub arm: ArmSide,
}

impl ArmKey {
    pub fn new(robot: &str, arm: ArmSide) -> Self {
        ArmKey {
            robot: robot.to_string(),
            arm,
        }
    }
}

impl fmt::Display for ArmKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.robot, self.arm)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectState {
    pub name: String,
    /// Registry name of the asset standing in for this object.
    pub asset: String,
    pub kind: AssetKind,
    pub pose: Pose,
    /// Scaled bounding box in the object frame.
    pub bbox: Aabb,
    /// Per-axis scale applied to the asset's geometry and grasp positions.
    pub scale: Vec3,
    pub joints: Vec<JointAnnotation>,
    pub parts: Vec<ArticulatedPart>,
    pub joint_values: BTreeMap<String, f64>,
}

impl ObjectState {
    pub fn world_aabb(&self) -> Aabb {
        self.bbox.transformed(&self.pose)
    }

    pub fn joint(&self, id: &str) -> Option<&JointAnnotation> {
        self.joints.iter().find(|j| j.joint_id == id)
    }

    pub fn joint_value(&self, id: &str) -> f64 {
        self.joint_values
            .get(id)
            .copied()
            .or_else(|| self.joint(id).map(|j| j.initial))
            .unwrap_or(0.0)
    }

    /// World pose of the part moved by joint `id` at its current value.
    pub fn part_pose(&self, id: &str) -> Pose {
        match self.joint(id) {
            Some(j) => self.pose.compose(&j.part_transform(self.joint_value(id))),
            None => self.pose,
        }
    }

    /// Boxes for collision checks and rendering: the body plus moving parts.
    pub fn boxes(&self) -> Vec<(String, Aabb)> {
        let mut out = vec![(self.name.clone(), self.world_aabb())];
        for p in &self.parts {
            out.push((self.name.clone(), p.bounding_box.transformed(&self.part_pose(&p.joint))));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attachment {
    pub object: String,
    /// End effector → object transform, fixed while held.
    pub ee_to_object: Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmState {
    pub key: ArmKey,
    pub model: Arm,
    pub home: Vec<f64>,
    pub q: Vec<f64>,
    pub ee: Pose,
    pub gripper_closed: bool,
    pub attached: Option<Attachment>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotState {
    pub name: String,
    pub embodiment: String,
    pub base: Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneState {
    pub objects: Vec<ObjectState>,
    pub robots: Vec<RobotState>,
    pub arms: Vec<ArmState>,
    pub table: Aabb,
}

impl SceneState {
    pub fn object(&self, name: &str) -> Option<&ObjectState> {
        self.objects.iter().find(|o| o.name == name)
    }

    pub fn object_mut(&mut self, name: &str) -> Option<&mut ObjectState> {
        self.objects.iter_mut().find(|o| o.name == name)
    }

    pub fn robot(&self, name: &str) -> Option<&RobotState> {
        self.robots.iter().find(|r| r.name == name)
    }

    pub fn arm(&self, key: &ArmKey) -> Option<&ArmState> {
        self.arms.iter().find(|a| a.key == *key)
    }

    pub fn arm_mut(&mut self, key: &ArmKey) -> Option<&mut ArmState> {
        self.arms.iter_mut().find(|a| a.key == *key)
    }

    /// The arm currently holding `object`, if any.
    pub fn holder(&self, object: &str) -> Option<&ArmKey> {
        self.arms
            .iter()
            .find(|a| a.attached.as_ref().is_some_and(|t| t.object == object))
            .map(|a| &a.key)
    }

    /// Static obstacles: the table slab and every object not held by an arm.
    pub fn collision_world(&self) -> CollisionWorld {
        let mut obstacles = vec![Obstacle {
            name: TABLE.into(),
            shape: Shape::Box(self.table),
        }];
        for o in &self.objects {
            if self.holder(&o.name).is_some() {
                continue;
            }
            for (name, b) in o.boxes() {
                obstacles.push(Obstacle {
                    name,
                    shape: Shape::Box(b),
                });
            }
        }
        CollisionWorld { obstacles }
    }

    /// Nearest unheld rigid object whose world box is within `tol` of `p`.
    pub fn nearest_graspable(&self, p: &Vec3, tol: f64) -> Option<&ObjectState> {
        self.objects
            .iter()
            .filter(|o| o.kind == AssetKind::Rigid && self.holder(&o.name).is_none())
            .map(|o| (o.world_aabb().signed_distance(p), o))
            .filter(|(d, _)| *d <= tol)
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, o)| o)
    }

    /// Moves an arm's end effector (and anything it holds) to `ee`.
    pub fn move_ee(&mut self, key: &ArmKey, ee: Pose, q: Option<Vec<f64>>) {
        let Some(arm) = self.arm_mut(key) else { return };
        arm.ee = ee;
        if let Some(q) = q {
            arm.q = q;
        }
        let held = arm.attached.clone();
        if let Some(t) = held {
            if let Some(o) = self.object_mut(&t.object) {
                o.pose = ee.compose(&t.ee_to_object);
            }
        }
    }

    /// Applies a gripper command. `object` names what to attach on close or
    /// release on open; a close that names an object held elsewhere grips
    /// without attaching.
    pub fn set_gripper(&mut self, key: &ArmKey, command: GripperCommand, object: Option<&str>) {
        match command {
            GripperCommand::Hold => {}
            GripperCommand::Open => {
                if let Some(arm) = self.arm_mut(key) {
                    arm.gripper_closed = false;
                    if object.is_none() || arm.attached.as_ref().map(|a| a.object.as_str()) == object {
                        arm.attached = None;
                    }
                }
            }
            GripperCommand::Close => {
                let target = object.and_then(|name| {
                    let held_elsewhere = self.holder(name).is_some_and(|h| h != key);
                    let pose = self.object(name)?.pose;
                    (!held_elsewhere).then_some((name.to_string(), pose))
                });
                if let Some(arm) = self.arm_mut(key) {
                    arm.gripper_closed = true;
                    if let Some((name, pose)) = target {
                        arm.attached = Some(Attachment {
                            object: name,
                            ee_to_object: arm.ee.inverse().compose(&pose),
                        });
                    }
                }
            }
        }
    }
}
