//! Skill compilation: expands each configured skill into end-effector
//! waypoints against a predicted scene state.

use std::f64::consts::TAU;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::assets::{grasp_candidates, select_grasp, AssetRegistry, GraspPose, JointType, DEFAULT_TOP_K};
use crate::config::{
    ArmSide, DirectionFilter, GotoSpec, GripperAction, GripperActionSpec, GripperCommand, PickSpec, PlaceSpec,
    PushSpec, SkillSpec, TaskConfig,
};
use crate::geometry::{angle_between_deg, axis_angle, quat_from_wxyz, rotation_between, Aabb, Pose, Vec3};
use crate::scene::{ArmKey, SceneState};

/// Distance of the pre-grasp pose behind the grasp, along the approach axis.
pub const PRE_GRASP_STANDOFF: f64 = 0.10;
/// Distance of the pre-contact pose off the surface, along the normal.
pub const PRE_CONTACT_STANDOFF: f64 = 0.10;
pub const DEFAULT_DWELL: u32 = 10;
pub const DEFAULT_T_EPS: f64 = 0.01;
pub const DEFAULT_O_EPS_DEG: f64 = 1.0;
/// Gap allowed on top of `place_z_offset` when checking support.
pub const SUPPORT_SLACK: f64 = 0.005;
/// Tolerance on the final joint value of a pushed articulation, radians or meters.
pub const JOINT_GOAL_TOL: f64 = 0.05;
const PLACE_PERTURB_TRIES: usize = 16;
const ARC_STEP_REVOLUTE: f64 = 0.1745;
const ARC_STEP_PRISMATIC: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    PreGrasp,
    Grasp,
    PostGrasp,
    PreContact,
    Contact,
    PostContact,
    PrePlace,
    Place,
    Free,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::PreGrasp => "pre_grasp",
            Phase::Grasp => "grasp",
            Phase::PostGrasp => "post_grasp",
            Phase::PreContact => "pre_contact",
            Phase::Contact => "contact",
            Phase::PostContact => "post_contact",
            Phase::PrePlace => "pre_place",
            Phase::Place => "place",
            Phase::Free => "free",
        }
    }
}

/// Drives an articulation joint while the arm moves to this waypoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointDrive {
    pub object: String,
    pub joint: String,
    pub from: f64,
    pub to: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Waypoint {
    pub arm: ArmSide,
    /// End-effector target, world frame.
    pub pose: Pose,
    pub gripper: GripperCommand,
    /// Frames to hold after arriving.
    pub dwell: u32,
    /// Object attached on close or released on open.
    pub attach: Option<String>,
    pub phase: Phase,
    /// Joint-space target; when set, `pose` is its forward kinematics.
    pub joint_target: Option<Vec<f64>>,
    pub t_eps: f64,
    /// Orientation tolerance, radians.
    pub o_eps: f64,
    pub drive: Option<JointDrive>,
}

/// Conditions the finished episode must satisfy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Goal {
    Placed { object: String, container: String, max_gap: f64 },
    JointAt { object: String, joint: String, value: f64, tol: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmProgram {
    pub arm: ArmSide,
    pub skills: Vec<&'static str>,
    /// Objects this arm's skills touch in the step.
    pub targets: Vec<String>,
    pub waypoints: Vec<Waypoint>,
}

/// Arms in one step run together and meet at a barrier when all finish.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanStep {
    pub robot: String,
    pub arms: Vec<ArmProgram>,
    pub barrier: bool,
}

impl PlanStep {
    pub fn key(&self, p: &ArmProgram) -> ArmKey {
        ArmKey::new(&self.robot, p.arm)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SkillPlan {
    pub steps: Vec<PlanStep>,
    pub goals: Vec<Goal>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SkillErrorKind {
    #[error("no feasible grasp for `{0}`")]
    NoFeasibleGrasp(String),
    #[error("`{0}` is not held by this arm")]
    NotHeld(String),
    #[error("placement ratio outside [0, 1]")]
    RatioOutOfRange,
    #[error("joint `{joint}` target {target:.3} outside [{lo:.3}, {hi:.3}]")]
    JointLimitExceeded { joint: String, target: f64, lo: f64, hi: f64 },
    #[error("no contact region on joint `{0}`")]
    NoContactRegion(String),
    #[error("unknown frame `{0}`")]
    UnknownFrame(String),
    #[error("unknown object `{0}`")]
    UnknownObject(String),
    #[error("unknown arm {0}")]
    UnknownArm(String),
    #[error("`{0}` cannot be used with this skill")]
    WrongKind(String),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("step {step}, arm {arm}: {kind}")]
pub struct SkillError {
    pub step: usize,
    pub arm: ArmSide,
    pub kind: SkillErrorKind,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn waypoint(arm: ArmSide, pose: Pose, gripper: GripperCommand, phase: Phase, t_eps: f64, o_eps_deg: f64) -> Waypoint {
    Waypoint {
        arm,
        pose,
        gripper,
        dwell: 0,
        attach: None,
        phase,
        joint_target: None,
        t_eps,
        o_eps: o_eps_deg.to_radians(),
        drive: None,
    }
}

fn filter_violation(rotation: &Pose, filters: &[DirectionFilter]) -> f64 {
    filters
        .iter()
        .map(|f| {
            let a = angle_between_deg(&rotation.axis(f.axis.index()), &f.direction.vector());
            let (lo, hi) = f.envelope();
            (lo - a).max(a - hi).max(0.0)
        })
        .sum()
}

pub fn pick_waypoints<R: Rng + ?Sized>(
    state: &SceneState,
    key: &ArmKey,
    spec: &PickSpec,
    registry: &AssetRegistry,
    rng: &mut R,
) -> Result<Vec<Waypoint>, SkillErrorKind> {
    let obj = state
        .object(&spec.object)
        .ok_or_else(|| SkillErrorKind::UnknownObject(spec.object.clone()))?;
    let asset = registry
        .get(&obj.asset)
        .ok_or_else(|| SkillErrorKind::UnknownObject(obj.asset.clone()))?;
    if state.holder(&obj.name) == Some(key) {
        return Err(SkillErrorKind::WrongKind(obj.name.clone()));
    }
    let mut candidates = grasp_candidates(asset, &obj.pose, &spec.filters)
        .map_err(|_| SkillErrorKind::NoFeasibleGrasp(obj.name.clone()))?;
    if let (Some(dir), Some(robot)) = (spec.direction_to_obj, state.robot(&key.robot)) {
        let side = robot.base.rotation * dir.vector();
        let center = obj.world_aabb().center();
        let on_side: Vec<GraspPose> = candidates
            .iter()
            .filter(|g| (obj.pose.transform_point(&g.pose.translation.component_mul(&obj.scale)) - center).dot(&side) > 1e-9)
            .cloned()
            .collect();
        if !on_side.is_empty() {
            candidates = on_side;
        }
    }
    let grasp = select_grasp(&candidates, DEFAULT_TOP_K, rng).map_err(|_| SkillErrorKind::NoFeasibleGrasp(obj.name.clone()))?;
    let scaled = Pose::new(grasp.pose.translation.component_mul(&obj.scale), grasp.pose.rotation);
    let grasp_world = obj.pose.compose(&scaled);
    let approach = obj.pose.rotation * grasp.approach_axis;
    let pre = Pose::new(grasp_world.translation - approach * PRE_GRASP_STANDOFF, grasp_world.rotation);
    let [lo, hi] = spec.post_grasp_offset;
    let lift = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    let post = Pose::new(grasp_world.translation + Vec3::z() * lift, grasp_world.rotation);
    let held_elsewhere = state.holder(&obj.name).is_some();
    let (t, o) = (spec.t_eps, spec.o_eps_deg);
    let mut g = waypoint(key.arm, grasp_world, GripperCommand::Close, Phase::Grasp, t, o);
    g.dwell = spec.close_wait_steps;
    g.attach = (!held_elsewhere).then(|| obj.name.clone());
    Ok(vec![
        waypoint(key.arm, pre, GripperCommand::Open, Phase::PreGrasp, t, o),
        g,
        waypoint(key.arm, post, GripperCommand::Hold, Phase::PostGrasp, t, o),
    ])
}

/// Object pose whose world box center sits over `(fx, fy)` of the container
/// footprint with its bottom `z_offset` above the container top.
pub fn footprint_pose(bbox: &Aabb, rotation: &Pose, container: &Aabb, fx: f64, fy: f64, z_offset: f64) -> Pose {
    let rotated = bbox.transformed(rotation);
    let c = rotated.center();
    let x = container.min.x + fx * (container.max.x - container.min.x);
    let y = container.min.y + fy * (container.max.y - container.min.y);
    let z = container.max.z + z_offset;
    Pose::new(Vec3::new(x - c.x, y - c.y, z - rotated.min.z), rotation.rotation)
}

pub fn place_waypoints<R: Rng + ?Sized>(
    state: &SceneState,
    key: &ArmKey,
    spec: &PlaceSpec,
    rng: &mut R,
) -> Result<Vec<Waypoint>, SkillErrorKind> {
    let arm = state.arm(key).ok_or_else(|| SkillErrorKind::UnknownArm(key.to_string()))?;
    let held = arm
        .attached
        .as_ref()
        .filter(|a| a.object == spec.object)
        .ok_or_else(|| SkillErrorKind::NotHeld(spec.object.clone()))?;
    let in_unit = |r: &[f64; 2]| r[0] >= 0.0 && r[1] <= 1.0 && r[0] <= r[1];
    if !in_unit(&spec.x_ratio_range) || !in_unit(&spec.y_ratio_range) {
        return Err(SkillErrorKind::RatioOutOfRange);
    }
    let obj = state
        .object(&spec.object)
        .ok_or_else(|| SkillErrorKind::UnknownObject(spec.object.clone()))?;
    let container = state
        .object(&spec.container)
        .ok_or_else(|| SkillErrorKind::UnknownObject(spec.container.clone()))?;
    let aligned = match (spec.align_pick_obj_axis, spec.align_place_obj_axis) {
        (Some(a), Some(b)) => {
            let from = obj.pose.rotation * Vec3::from(a).normalize();
            let to = container.pose.rotation * Vec3::from(b).normalize();
            rotation_between(&from, &to) * obj.pose.rotation
        }
        _ => obj.pose.rotation,
    };
    let ee_rel = held.ee_to_object.inverse();
    let mut best: Option<(f64, Pose)> = None;
    for _ in 0..PLACE_PERTURB_TRIES {
        let axis = Vec3::from(rand_distr::Distribution::<[f64; 3]>::sample(&rand_distr::UnitSphere, rng));
        let angle = if spec.align_obj_tol_deg > 0.0 {
            rng.random_range(0.0..=spec.align_obj_tol_deg).to_radians()
        } else {
            0.0
        };
        let rot = Pose::from_rotation(axis_angle(&axis, angle) * aligned);
        let v = filter_violation(&rot.compose(&ee_rel), &spec.filters);
        if best.as_ref().is_none_or(|(bv, _)| v < *bv) {
            best = Some((v, rot));
        }
        if v == 0.0 {
            break;
        }
    }
    let rot = best.expect("at least one try").1;
    let fx = uniform(rng, spec.x_ratio_range);
    let fy = uniform(rng, spec.y_ratio_range);
    let target = footprint_pose(&obj.bbox, &rot, &container.world_aabb(), fx, fy, spec.place_z_offset);
    let ee = target.compose(&ee_rel);
    let pre = Pose::new(ee.translation + Vec3::z() * spec.pre_place_z_offset, ee.rotation);
    let (t, o) = (spec.t_eps, spec.o_eps_deg);
    let mut place = waypoint(key.arm, ee, GripperCommand::Open, Phase::Place, t, o);
    place.attach = Some(spec.object.clone());
    Ok(vec![waypoint(key.arm, pre, GripperCommand::Hold, Phase::PrePlace, t, o), place])
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, r: [f64; 2]) -> f64 {
    if r[1] > r[0] {
        rng.random_range(r[0]..=r[1])
    } else {
        r[0]
    }
}

/// Any unit vector orthogonal to `n`.
fn orthogonal(n: &Vec3) -> Vec3 {
    let helper = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    n.cross(&helper).normalize()
}

/// End-effector rotation with approach `z` and closing axis as close to `y_hint` as possible.
fn frame_from(z: &Vec3, y_hint: &Vec3) -> Pose {
    let z = z.normalize();
    let mut y = y_hint - z * z.dot(y_hint);
    if y.norm() < 1e-6 {
        y = orthogonal(&z);
    }
    let y = y.normalize();
    let x = y.cross(&z);
    let m = nalgebra::Matrix3::from_columns(&[x, y, z]);
    Pose::from_rotation(nalgebra::UnitQuaternion::from_matrix(&m))
}

pub fn push_waypoints<R: Rng + ?Sized>(
    state: &SceneState,
    key: &ArmKey,
    spec: &PushSpec,
    registry: &AssetRegistry,
    rng: &mut R,
) -> Result<Vec<Waypoint>, SkillErrorKind> {
    let obj = state
        .object(&spec.object)
        .ok_or_else(|| SkillErrorKind::UnknownObject(spec.object.clone()))?;
    let joint = obj
        .joint(&spec.joint)
        .ok_or_else(|| SkillErrorKind::NoContactRegion(spec.joint.clone()))?;
    let region = registry
        .get(&obj.asset)
        .and_then(|a| a.contact_region(&spec.joint))
        .ok_or_else(|| SkillErrorKind::NoContactRegion(spec.joint.clone()))?;
    let q0 = obj.joint_value(&spec.joint);
    let q1 = q0 + spec.delta;
    let [lo, hi] = joint.limits;
    if q1 < lo - 1e-12 || q1 > hi + 1e-12 {
        return Err(SkillErrorKind::JointLimitExceeded {
            joint: spec.joint.clone(),
            target: q1,
            lo,
            hi,
        });
    }
    let n = region.normal.normalize();
    let e1 = orthogonal(&n);
    let e2 = n.cross(&e1);
    let radius = region.radius * spec.expansion;
    let r = radius * rng.random::<f64>().sqrt();
    let phi = TAU * rng.random::<f64>();
    let local = region.center + e1 * (r * phi.cos()) + e2 * (r * phi.sin());
    let part = obj.part_pose(&spec.joint);
    let point = part.transform_point(&local);
    let normal = part.rotation * n;
    let y_hint = obj.pose.rotation * joint.axis;
    let contact = Pose::new(point, frame_from(&-normal, &y_hint).rotation);
    let pre = Pose::new(point + normal * PRE_CONTACT_STANDOFF, contact.rotation);
    let (t, o) = (spec.t_eps, spec.o_eps_deg);
    let mut out = vec![
        waypoint(key.arm, pre, GripperCommand::Close, Phase::PreContact, t, o),
        waypoint(key.arm, contact, GripperCommand::Hold, Phase::Contact, t, o),
    ];
    let step = match joint.joint_type {
        JointType::Revolute => ARC_STEP_REVOLUTE,
        JointType::Prismatic => ARC_STEP_PRISMATIC,
    };
    let m = ((spec.delta.abs() / step).ceil() as usize).max(1);
    // The end effector rides on the part: carry the contact pose by the part motion.
    let part_inv = part.inverse();
    let mut prev = q0;
    for k in 1..=m {
        let qk = q0 + spec.delta * k as f64 / m as f64;
        let moved = obj.pose.compose(&joint.part_transform(qk)).compose(&part_inv.compose(&contact));
        let mut w = waypoint(key.arm, moved, GripperCommand::Hold, Phase::PostContact, t, o);
        w.drive = Some(JointDrive {
            object: obj.name.clone(),
            joint: spec.joint.clone(),
            from: prev,
            to: qk,
        });
        prev = qk;
        out.push(w);
    }
    Ok(out)
}

pub fn goto_pose_waypoint(state: &SceneState, key: &ArmKey, spec: &GotoSpec) -> Result<Waypoint, SkillErrorKind> {
    let rotation = quat_from_wxyz(spec.quaternion).unwrap_or_default();
    let local = Pose::new(Vec3::from(spec.translation), rotation);
    let pose = match spec.frame.as_str() {
        "world" => local,
        // Robot-frame targets are relative to the arm's mount on the robot.
        "robot" => state
            .arm(key)
            .ok_or_else(|| SkillErrorKind::UnknownArm(key.to_string()))?
            .model
            .base
            .compose(&local),
        other => return Err(SkillErrorKind::UnknownFrame(other.to_string())),
    };
    Ok(waypoint(key.arm, pose, spec.gripper, Phase::Free, DEFAULT_T_EPS, DEFAULT_O_EPS_DEG))
}

pub fn gripper_action_waypoint(state: &SceneState, key: &ArmKey, spec: &GripperActionSpec) -> Result<Waypoint, SkillErrorKind> {
    let arm = state.arm(key).ok_or_else(|| SkillErrorKind::UnknownArm(key.to_string()))?;
    let (gripper, attach) = match spec.action {
        GripperAction::Open => (GripperCommand::Open, arm.attached.as_ref().map(|a| a.object.clone())),
        GripperAction::Close => (
            GripperCommand::Close,
            match &arm.attached {
                Some(a) => Some(a.object.clone()),
                None => state
                    .nearest_graspable(&arm.ee.translation, DEFAULT_T_EPS)
                    .map(|o| o.name.clone()),
            },
        ),
    };
    let mut w = waypoint(key.arm, arm.ee, gripper, Phase::Free, DEFAULT_T_EPS, DEFAULT_O_EPS_DEG);
    w.attach = attach;
    w.dwell = spec.dwell_steps.unwrap_or(DEFAULT_DWELL);
    Ok(w)
}

pub fn home_waypoint(state: &SceneState, key: &ArmKey) -> Result<Waypoint, SkillErrorKind> {
    let arm = state.arm(key).ok_or_else(|| SkillErrorKind::UnknownArm(key.to_string()))?;
    let pose = arm
        .model
        .fk(&arm.home)
        .map_err(|_| SkillErrorKind::UnknownArm(key.to_string()))?;
    let mut w = waypoint(key.arm, pose, GripperCommand::Hold, Phase::Free, DEFAULT_T_EPS, DEFAULT_O_EPS_DEG);
    w.joint_target = Some(arm.home.clone());
    Ok(w)
}

/// Advances the predicted state through one waypoint: move, then gripper.
pub fn apply_waypoint(state: &mut SceneState, key: &ArmKey, w: &Waypoint) {
    if let Some(d) = &w.drive {
        if let Some(o) = state.object_mut(&d.object) {
            o.joint_values.insert(d.joint.clone(), d.to);
        }
    }
    state.move_ee(key, w.pose, w.joint_target.clone());
    state.set_gripper(key, w.gripper, w.attach.as_deref());
}

fn expand<R: Rng + ?Sized>(
    state: &SceneState,
    key: &ArmKey,
    skill: &SkillSpec,
    registry: &AssetRegistry,
    rng: &mut R,
) -> Result<(Vec<Waypoint>, Option<Goal>), SkillErrorKind> {
    Ok(match skill {
        SkillSpec::Pick(p) => (pick_waypoints(state, key, p, registry, rng)?, None),
        SkillSpec::Place(p) => (
            place_waypoints(state, key, p, rng)?,
            Some(Goal::Placed {
                object: p.object.clone(),
                container: p.container.clone(),
                max_gap: p.place_z_offset + SUPPORT_SLACK,
            }),
        ),
        SkillSpec::Push(p) => {
            let w = push_waypoints(state, key, p, registry, rng)?;
            let value = state.object(&p.object).map(|o| o.joint_value(&p.joint)).unwrap_or(0.0) + p.delta;
            let goal = Goal::JointAt {
                object: p.object.clone(),
                joint: p.joint.clone(),
                value,
                tol: JOINT_GOAL_TOL,
            };
            (w, Some(goal))
        }
        SkillSpec::GotoPose(g) => (vec![goto_pose_waypoint(state, key, g)?], None),
        SkillSpec::GripperAction(g) => (vec![gripper_action_waypoint(state, key, g)?], None),
        SkillSpec::Home { .. } => (vec![home_waypoint(state, key)?], None),
    })
}

fn opens_first(skills: &[SkillSpec]) -> bool {
    matches!(
        skills.first(),
        Some(SkillSpec::GripperAction(GripperActionSpec {
            action: GripperAction::Open,
            ..
        }))
    )
}

/// Compiles every skill block in document order. Within a parallel step, arms
/// that start by opening their gripper are expanded first so a handover
/// releases before the receiving arm attaches.
pub fn compile_skills<R: Rng + ?Sized>(
    cfg: &TaskConfig,
    state: &SceneState,
    registry: &AssetRegistry,
    rng: &mut R,
) -> Result<SkillPlan, SkillError> {
    let mut state = state.clone();
    let mut plan = SkillPlan::default();
    for block in &cfg.skills {
        for step in &block.steps {
            let index = plan.steps.len();
            let mut order: Vec<_> = step.arms.iter().collect();
            order.sort_by_key(|(_, skills)| !opens_first(skills));
            let mut arms = Vec::new();
            for (arm, skills) in order {
                let key = ArmKey::new(&block.robot, *arm);
                let err = |kind| SkillError {
                    step: index,
                    arm: *arm,
                    kind,
                };
                if state.arm(&key).is_none() {
                    return Err(err(SkillErrorKind::UnknownArm(key.to_string())));
                }
                let mut program = ArmProgram {
                    arm: *arm,
                    skills: Vec::new(),
                    targets: Vec::new(),
                    waypoints: Vec::new(),
                };
                for skill in skills {
                    let (wps, goal) = expand(&state, &key, skill, registry, rng).map_err(err)?;
                    for w in &wps {
                        apply_waypoint(&mut state, &key, w);
                        if let Some(o) = &w.attach {
                            push_unique(&mut program.targets, o);
                        }
                    }
                    for o in skill.objects() {
                        push_unique(&mut program.targets, o);
                    }
                    program.skills.push(skill.name());
                    program.waypoints.extend(wps);
                    plan.goals.extend(goal);
                }
                arms.push(program);
            }
            plan.steps.push(PlanStep {
                robot: block.robot.clone(),
                barrier: arms.len() > 1,
                arms,
            });
        }
    }
    Ok(plan)
}

fn push_unique(v: &mut Vec<String>, s: &str) {
    if !v.iter().any(|x| x == s) {
        v.push(s.to_string());
    }
}
