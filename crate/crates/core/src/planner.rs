//! Episode planning: IK at every waypoint, dense joint-space interpolation,
//! collision checking, and a kinematic replay that validates the result.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::assets::JointType;
use crate::geometry::{Pose, Vec3};
use crate::kinematics::{
    body_spheres, check_between, check_bodies, inverse_kinematics, segment, Arm, AttachedBody, BodySphere, CollisionPair,
    IkOptions, KinematicsError,
};
use crate::scene::{ArmKey, Attachment, SceneState};
use crate::skills::{Goal, Phase, SkillPlan, Waypoint};

pub const DEFAULT_DT: f64 = 1.0 / 30.0;
pub const DEFAULT_VMAX: f64 = 1.5;
/// Interpolation runs this fraction below `vmax` so rounding in stored data
/// never pushes a step over the limit.
const VMAX_MARGIN: f64 = 1e-5;
/// Retreat distance tried before a joint-space move that would collide, meters.
const RETREAT: f64 = 0.08;
/// Relative-pose drift tolerated while an object is held.
pub const GRIP_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerParams {
    pub dt: f64,
    /// Per-joint velocity limit, rad/s.
    pub vmax: f64,
    pub ik: IkOptions,
    /// Random IK seeds tried after the previous and home configurations.
    pub random_restarts: usize,
}

impl Default for PlannerParams {
    fn default() -> Self {
        PlannerParams {
            dt: DEFAULT_DT,
            vmax: DEFAULT_VMAX,
            ik: IkOptions::default(),
            random_restarts: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanStatus {
    Success,
    IkFailure,
    Collision,
    LimitViolation,
}

impl PlanStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            PlanStatus::Success => "success",
            PlanStatus::IkFailure => "ik_failure",
            PlanStatus::Collision => "collision",
            PlanStatus::LimitViolation => "limit_violation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanFailure {
    pub step: usize,
    pub arm: ArmKey,
    pub waypoint: usize,
    pub detail: String,
}

/// Dense samples for one arm over the whole episode.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTrajectory {
    pub arm: ArmKey,
    pub dt: f64,
    pub samples: Vec<Vec<f64>>,
    pub gripper_closed: Vec<bool>,
    pub attached: Vec<Option<String>>,
}

impl JointTrajectory {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// World pose and joint values of one object at every sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectTrack {
    pub name: String,
    pub poses: Vec<Pose>,
    pub joints: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointLog {
    pub step: usize,
    pub arm: ArmKey,
    pub phase: Phase,
    /// Sample index at which the waypoint is reached.
    pub sample: usize,
    pub pos_residual: f64,
    pub ori_residual: f64,
    pub t_eps: f64,
    pub o_eps: f64,
}

/// Sample range of one step and the objects each arm may touch during it.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSpan {
    pub start: usize,
    pub end: usize,
    pub allowed: BTreeMap<ArmKey, Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub status: PlanStatus,
    pub failure: Option<PlanFailure>,
    pub dt: f64,
    pub arms: Vec<JointTrajectory>,
    pub objects: Vec<ObjectTrack>,
    pub waypoints: Vec<WaypointLog>,
    pub spans: Vec<StepSpan>,
    pub goals: Vec<Goal>,
}

impl PlanResult {
    pub fn is_success(&self) -> bool {
        self.status == PlanStatus::Success
    }

    /// Number of samples on the shared timeline.
    pub fn len(&self) -> usize {
        self.arms.first().map_or(0, |a| a.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn arm(&self, key: &ArmKey) -> Option<&JointTrajectory> {
        self.arms.iter().find(|a| a.arm == *key)
    }

    pub fn object(&self, name: &str) -> Option<&ObjectTrack> {
        self.objects.iter().find(|o| o.name == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Sample {
    q: Vec<f64>,
    closed: bool,
    held: Option<Attachment>,
    drive: Option<(String, String, f64)>,
}

struct Failure {
    status: PlanStatus,
    waypoint: usize,
    detail: String,
}

fn describe(pairs: &[CollisionPair]) -> String {
    let p = &pairs[0];
    format!("{} hits {} ({:.4} m)", p.body, p.obstacle, p.distance)
}

/// Held object of an arm as proxy spheres in its end-effector frame.
fn attached_body(state: &SceneState, key: &ArmKey) -> Option<AttachedBody> {
    let arm = state.arm(key)?;
    let a = arm.attached.as_ref()?;
    let obj = state.object(&a.object)?;
    Some(AttachedBody::from_box(&a.object, &obj.bbox, &a.ee_to_object))
}

/// Another arm's bodies over time, for inter-arm checks.
struct MovingBody {
    key: ArmKey,
    samples: Vec<Vec<BodySphere>>,
    targets: Vec<String>,
}

impl MovingBody {
    fn at(&self, k: usize) -> &[BodySphere] {
        let i = k.min(self.samples.len().saturating_sub(1));
        self.samples.get(i).map_or(&[], |v| v.as_slice())
    }
}

fn object_of(link: &str) -> Option<&str> {
    link.strip_prefix("object:")
}

/// Grippers may touch objects that either arm is manipulating in this step.
fn inter_arm_skip(shared: &[String]) -> impl Fn(&BodySphere, &BodySphere) -> bool + '_ {
    move |a, b| {
        let touches = |x: &BodySphere, y: &BodySphere| {
            x.gripper && object_of(&y.link).is_some_and(|o| shared.iter().any(|s| s == o))
        };
        touches(a, b) || touches(b, a)
    }
}

fn union(a: &[String], b: &[String]) -> Vec<String> {
    let mut out = a.to_vec();
    for s in b {
        if !out.contains(s) {
            out.push(s.clone());
        }
    }
    out
}

/// Joint value reached when the end effector has moved from `start` to `p`
/// along the joint's motion, measured from `from`.
fn projected_joint_value(state: &SceneState, object: &str, joint: &str, from: f64, start: &Vec3, p: &Vec3) -> f64 {
    let Some(obj) = state.object(object) else { return from };
    let Some(j) = obj.joint(joint) else { return from };
    let axis = obj.pose.rotation * j.axis;
    match j.joint_type {
        JointType::Prismatic => from + (p - start).dot(&axis),
        JointType::Revolute => {
            let o = obj.pose.transform_point(&j.origin);
            let flat = |v: Vec3| v - axis * axis.dot(&v);
            let a = flat(start - o);
            let b = flat(p - o);
            if a.norm() < 1e-9 || b.norm() < 1e-9 {
                return from;
            }
            from + a.cross(&b).dot(&axis).atan2(a.dot(&b))
        }
    }
}

struct ArmPlanner<'a, R: Rng + ?Sized> {
    params: &'a PlannerParams,
    rng: &'a mut R,
}

impl<R: Rng + ?Sized> ArmPlanner<'_, R> {
    fn seeds(&mut self, state: &SceneState, key: &ArmKey) -> Vec<Vec<f64>> {
        let arm = state.arm(key).expect("arm exists");
        let mut seeds = vec![arm.q.clone(), arm.home.clone()];
        for _ in 0..self.params.random_restarts {
            seeds.push(
                arm.model
                    .chain
                    .limits()
                    .iter()
                    .map(|[lo, hi]| self.rng.random_range(*lo..=*hi))
                    .collect(),
            );
        }
        seeds
    }

    /// Joint-space path to `target` through a short Cartesian retreat, used
    /// when the direct segment collides.
    fn detour(
        &self,
        model: &Arm,
        q: &[f64],
        target: &[f64],
        vmax: &[f64],
        base: usize,
        check: &dyn Fn(&[f64], usize) -> Result<(), String>,
    ) -> Option<Vec<Vec<f64>>> {
        let ee = model.fk(q).ok()?;
        let approach = ee.rotation * Vec3::z();
        let up = Vec3::z();
        let offsets = [
            -RETREAT * approach,
            RETREAT * up,
            0.75 * RETREAT * (up - approach),
            2.0 * RETREAT * up,
        ];
        offsets.iter().find_map(|d| {
            let via = Pose::new(ee.translation + d, ee.rotation);
            let sol = inverse_kinematics(model, &via, q, &self.params.ik).ok()?;
            let mut path = segment(q, &sol.q, vmax, self.params.dt);
            path.extend(segment(&sol.q, target, vmax, self.params.dt));
            path.iter().enumerate().try_for_each(|(i, p)| check(p, base + i)).ok()?;
            Some(path)
        })
    }

    /// Plans one arm's program against the scene, the other arms already
    /// planned in this step, and idle arms.
    #[allow(clippy::too_many_arguments)]
    fn plan_arm(
        &mut self,
        state: &mut SceneState,
        key: &ArmKey,
        waypoints: &[Waypoint],
        allowed: &[String],
        others: &[MovingBody],
        step: usize,
        log: &mut Vec<WaypointLog>,
        offset: usize,
    ) -> Result<Vec<Sample>, Failure> {
        let vmax = vec![self.params.vmax * (1.0 - VMAX_MARGIN); state.arm(key).expect("arm exists").q.len()];
        let mut out: Vec<Sample> = Vec::new();
        for (wi, w) in waypoints.iter().enumerate() {
            let fail = |status, detail: String| Failure {
                status,
                waypoint: wi,
                detail,
            };
            let arm = state.arm(key).expect("arm exists").clone();
            let world = state.collision_world();
            let held = attached_body(state, key);
            let drive_from = w.drive.as_ref().map(|d| (d, arm.ee.translation));
            let check = |q: &[f64], k: usize| -> Result<(), String> {
                let bodies = body_spheres(&arm.model, q, held.as_ref()).map_err(|e| e.to_string())?;
                let r = check_bodies(&world, &bodies, allowed);
                if !r.is_free() {
                    return Err(describe(&r.pairs));
                }
                for o in others {
                    let shared = union(allowed, &o.targets);
                    let r = check_between(&bodies, o.at(k), inter_arm_skip(&shared));
                    if !r.is_free() {
                        return Err(format!("{} vs {}", describe(&r.pairs), o.key));
                    }
                }
                Ok(())
            };

            let mut chosen: Option<(Vec<f64>, f64, f64, Vec<Vec<f64>>)> = None;
            let mut last_err = String::from("no IK solution");
            let mut converged = false;
            if let Some(target) = &w.joint_target {
                if !arm.model.within_limits(target) {
                    return Err(fail(PlanStatus::LimitViolation, format!("joint target {target:?} outside limits")));
                }
                let seg = segment(&arm.q, target, &vmax, self.params.dt);
                let base = offset + out.len();
                let seg = match seg.iter().enumerate().try_for_each(|(i, q)| check(q, base + i)) {
                    Ok(()) => seg,
                    Err(e) => self
                        .detour(&arm.model, &arm.q, target, &vmax, base, &check)
                        .ok_or_else(|| fail(PlanStatus::Collision, e))?,
                };
                chosen = Some((target.clone(), 0.0, 0.0, seg));
            } else {
                let opts = IkOptions {
                    t_eps: self.params.ik.t_eps.min(w.t_eps),
                    o_eps: self.params.ik.o_eps.min(w.o_eps),
                    ..self.params.ik
                };
                for seed in self.seeds(state, key) {
                    let sol = match inverse_kinematics(&arm.model, &w.pose, &seed, &opts) {
                        Ok(s) => s,
                        Err(e @ KinematicsError::Unreachable { .. }) => {
                            last_err = e.to_string();
                            break;
                        }
                        Err(e) => {
                            last_err = e.to_string();
                            continue;
                        }
                    };
                    converged = true;
                    let seg = segment(&arm.q, &sol.q, &vmax, self.params.dt);
                    let base = offset + out.len();
                    match seg.iter().enumerate().try_for_each(|(i, q)| check(q, base + i)) {
                        Ok(()) => {
                            chosen = Some((sol.q, sol.pos_err, sol.ori_err, seg));
                            break;
                        }
                        Err(e) => last_err = e,
                    }
                }
            }
            let Some((q_target, pos_err, ori_err, seg)) = chosen else {
                let status = if converged { PlanStatus::Collision } else { PlanStatus::IkFailure };
                return Err(fail(status, last_err));
            };
            if pos_err > w.t_eps || ori_err > w.o_eps {
                return Err(fail(PlanStatus::IkFailure, format!("residual {pos_err:.2e} m, {ori_err:.2e} rad")));
            }

            let closed = arm.gripper_closed;
            let attached = arm.attached.clone();
            let n = seg.len();
            for (i, q) in seg.into_iter().enumerate() {
                let drive = drive_from.as_ref().map(|(d, start)| {
                    let value = if i + 1 == n {
                        d.to
                    } else {
                        let p = arm.model.fk(&q).map(|p| p.translation).unwrap_or(*start);
                        let v = projected_joint_value(state, &d.object, &d.joint, d.from, start, &p);
                        v.clamp(d.from.min(d.to), d.from.max(d.to))
                    };
                    (d.object.clone(), d.joint.clone(), value)
                });
                out.push(Sample {
                    q,
                    closed,
                    held: attached.clone(),
                    drive,
                });
            }

            if let Some(d) = &w.drive {
                if let Some(o) = state.object_mut(&d.object) {
                    o.joint_values.insert(d.joint.clone(), d.to);
                }
            }
            let ee = arm.model.fk(&q_target).expect("dimension checked");
            state.move_ee(key, ee, Some(q_target.clone()));
            state.set_gripper(key, w.gripper, w.attach.as_deref());
            let after = state.arm(key).expect("arm exists");
            let changed = after.gripper_closed != closed || after.attached != attached;
            let hold = if changed { w.dwell.max(1) } else { w.dwell };
            let last = Sample {
                q: q_target,
                closed: after.gripper_closed,
                held: after.attached.clone(),
                drive: None,
            };
            // A gripper change must be visible, and must not collide once the held set changes.
            if changed {
                let held = attached_body(state, key);
                let bodies = body_spheres(&after.model, &last.q, held.as_ref()).map_err(|e| fail(PlanStatus::IkFailure, e.to_string()))?;
                let world = state.collision_world();
                let r = check_bodies(&world, &bodies, allowed);
                if !r.is_free() {
                    return Err(fail(PlanStatus::Collision, describe(&r.pairs)));
                }
            }
            for _ in 0..hold {
                out.push(last.clone());
            }
            log.push(WaypointLog {
                step,
                arm: key.clone(),
                phase: w.phase,
                sample: offset + out.len(),
                pos_residual: pos_err,
                ori_residual: ori_err,
                t_eps: w.t_eps,
                o_eps: w.o_eps,
            });
        }
        Ok(out)
    }
}

fn bodies_over(state: &SceneState, key: &ArmKey, samples: &[Sample]) -> Vec<Vec<BodySphere>> {
    let arm = state.arm(key).expect("arm exists");
    samples
        .iter()
        .map(|s| {
            let held = s.held.as_ref().and_then(|a| {
                let obj = state.object(&a.object)?;
                Some(AttachedBody::from_box(&a.object, &obj.bbox, &a.ee_to_object))
            });
            body_spheres(&arm.model, &s.q, held.as_ref()).unwrap_or_default()
        })
        .collect()
}

/// Plans every step of `plan` from `state`. Failures are reported in the
/// returned status, never as errors.
pub fn plan_episode<R: Rng + ?Sized>(plan: &SkillPlan, initial: &SceneState, params: &PlannerParams, rng: &mut R) -> PlanResult {
    let mut state = initial.clone();
    let keys: Vec<ArmKey> = state.arms.iter().map(|a| a.key.clone()).collect();
    let mut tracks: BTreeMap<ArmKey, Vec<Sample>> = BTreeMap::new();
    for a in &state.arms {
        tracks.insert(
            a.key.clone(),
            vec![Sample {
                q: a.q.clone(),
                closed: a.gripper_closed,
                held: a.attached.clone(),
                drive: None,
            }],
        );
    }
    let mut log = Vec::new();
    let mut spans = Vec::new();
    let mut released_prev: Vec<String> = Vec::new();
    let mut failure = None;
    let mut status = PlanStatus::Success;
    let mut planner = ArmPlanner { params, rng };

    'steps: for (si, step) in plan.steps.iter().enumerate() {
        let start = tracks.values().next().map_or(0, |t| t.len());
        let before = state.clone();
        let step_keys: Vec<ArmKey> = step.arms.iter().map(|p| step.key(p)).collect();
        let mut others: Vec<MovingBody> = keys
            .iter()
            .filter(|k| !step_keys.contains(k))
            .map(|k| {
                let a = state.arm(k).expect("arm exists");
                let held = attached_body(&state, k);
                MovingBody {
                    key: k.clone(),
                    samples: vec![body_spheres(&a.model, &a.q, held.as_ref()).unwrap_or_default()],
                    targets: Vec::new(),
                }
            })
            .collect();
        let mut allowed_map = BTreeMap::new();
        let mut planned: Vec<(ArmKey, Vec<Sample>)> = Vec::new();
        for program in &step.arms {
            let key = step.key(program);
            let allowed = union(&program.targets, &released_prev);
            match planner.plan_arm(&mut state, &key, &program.waypoints, &allowed, &others, si, &mut log, start) {
                Ok(samples) => {
                    others.push(MovingBody {
                        key: key.clone(),
                        samples: bodies_over(&state, &key, &samples),
                        targets: program.targets.clone(),
                    });
                    planned.push((key.clone(), samples));
                }
                Err(f) => {
                    status = f.status;
                    failure = Some(PlanFailure {
                        step: si,
                        arm: key,
                        waypoint: f.waypoint,
                        detail: f.detail,
                    });
                    break 'steps;
                }
            }
            allowed_map.insert(key, allowed);
        }
        let len = planned.iter().map(|(_, s)| s.len()).max().unwrap_or(0);
        for k in &keys {
            let samples = planned.iter().find(|(pk, _)| pk == k).map(|(_, s)| s.clone()).unwrap_or_default();
            let track = tracks.get_mut(k).expect("track exists");
            let mut last = samples.last().cloned().unwrap_or_else(|| track.last().expect("non-empty").clone());
            last.drive = None;
            track.extend(samples);
            while track.len() < start + len {
                track.push(last.clone());
            }
        }
        let released: Vec<String> = before
            .arms
            .iter()
            .filter_map(|a| {
                let o = &a.attached.as_ref()?.object;
                (state.holder(o) != Some(&a.key)).then(|| o.clone())
            })
            .collect();
        released_prev = step
            .arms
            .iter()
            .fold(released, |acc, p| union(&acc, &p.targets))
            .into_iter()
            .collect();
        spans.push(StepSpan {
            start,
            end: start + len,
            allowed: allowed_map,
        });
    }

    let arms: Vec<JointTrajectory> = keys
        .iter()
        .map(|k| {
            let t = &tracks[k];
            JointTrajectory {
                arm: k.clone(),
                dt: params.dt,
                samples: t.iter().map(|s| s.q.clone()).collect(),
                gripper_closed: t.iter().map(|s| s.closed).collect(),
                attached: t.iter().map(|s| s.held.as_ref().map(|a| a.object.clone())).collect(),
            }
        })
        .collect();
    let drives: Vec<Vec<(String, String, f64)>> = (0..arms.first().map_or(0, |a| a.len()))
        .map(|i| keys.iter().filter_map(|k| tracks[k][i].drive.clone()).collect())
        .collect();
    let objects = replay_objects(initial, &arms, &drives);
    PlanResult {
        status,
        failure,
        dt: params.dt,
        arms,
        objects,
        waypoints: log,
        spans,
        goals: plan.goals.clone(),
    }
}


/// Object poses and joint values implied by the arm tracks: a held object
/// follows its gripper rigidly from the sample it is attached.
pub fn replay_objects(initial: &SceneState, arms: &[JointTrajectory], drives: &[Vec<(String, String, f64)>]) -> Vec<ObjectTrack> {
    let n = arms.first().map_or(0, |a| a.len());
    let mut poses: BTreeMap<&str, Pose> = initial.objects.iter().map(|o| (o.name.as_str(), o.pose)).collect();
    let mut joints: BTreeMap<&str, BTreeMap<String, f64>> = initial
        .objects
        .iter()
        .map(|o| {
            let v = o.joints.iter().map(|j| (j.joint_id.clone(), o.joint_value(&j.joint_id))).collect();
            (o.name.as_str(), v)
        })
        .collect();
    let mut holds: Vec<Option<(String, Pose)>> = arms
        .iter()
        .map(|t| {
            initial
                .arm(&t.arm)
                .and_then(|a| a.attached.as_ref())
                .map(|a| (a.object.clone(), a.ee_to_object))
        })
        .collect();
    let models: Vec<_> = arms.iter().map(|t| initial.arm(&t.arm).map(|a| a.model.clone())).collect();
    let mut tracks: Vec<ObjectTrack> = initial
        .objects
        .iter()
        .map(|o| ObjectTrack {
            name: o.name.clone(),
            poses: Vec::with_capacity(n),
            joints: o.joints.iter().map(|j| (j.joint_id.clone(), Vec::with_capacity(n))).collect(),
        })
        .collect();
    for k in 0..n {
        let ees: Vec<Option<Pose>> = arms
            .iter()
            .zip(&models)
            .map(|(t, m)| m.as_ref().and_then(|m| m.fk(&t.samples[k]).ok()))
            .collect();
        for (i, t) in arms.iter().enumerate() {
            if holds[i].as_ref().map(|h| &h.0) != t.attached[k].as_ref() {
                holds[i] = None;
            }
        }
        for (i, t) in arms.iter().enumerate() {
            if let (Some(o), None, Some(ee)) = (&t.attached[k], &holds[i], ees[i]) {
                if let Some(p) = poses.get(o.as_str()) {
                    holds[i] = Some((o.clone(), ee.inverse().compose(p)));
                }
            }
        }
        for (h, ee) in holds.iter().zip(&ees) {
            if let (Some((o, rel)), Some(ee)) = (h, ee) {
                if let Some(p) = poses.get_mut(o.as_str()) {
                    *p = ee.compose(rel);
                }
            }
        }
        for (o, j, v) in drives.get(k).into_iter().flatten() {
            if let Some(m) = joints.get_mut(o.as_str()) {
                m.insert(j.clone(), *v);
            }
        }
        for t in &mut tracks {
            t.poses.push(poses[t.name.as_str()]);
            for (j, values) in t.joints.iter_mut() {
                values.push(joints[t.name.as_str()][j]);
            }
        }
    }
    tracks
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueKind {
    Grip,
    Support,
    Collision,
    Goal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub kind: IssueKind,
    pub sample: Option<usize>,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationOutcome {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationOutcome {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn has(&self, kind: IssueKind) -> bool {
        self.issues.iter().any(|i| i.kind == kind)
    }
}

/// Scene at sample `k` as recorded in the result's tracks.
pub fn scene_at(result: &PlanResult, initial: &SceneState, k: usize) -> SceneState {
    let mut s = initial.clone();
    for o in &mut s.objects {
        if let Some(t) = result.object(&o.name) {
            if let Some(p) = t.poses.get(k) {
                o.pose = *p;
            }
            for (j, v) in &t.joints {
                if let Some(v) = v.get(k) {
                    o.joint_values.insert(j.clone(), *v);
                }
            }
        }
    }
    for a in &mut s.arms {
        let Some(t) = result.arm(&a.key) else { continue };
        let Some(q) = t.samples.get(k) else { continue };
        a.q = q.clone();
        a.ee = a.model.fk(q).unwrap_or(a.ee);
        a.gripper_closed = t.gripper_closed[k];
        a.attached = t.attached[k].as_ref().and_then(|o| {
            let p = result.object(o)?.poses.get(k)?;
            Some(Attachment {
                object: o.clone(),
                ee_to_object: a.ee.inverse().compose(p),
            })
        });
    }
    s
}

/// Replays a result kinematically and checks that held objects stay fixed in
/// the gripper, nothing collides, placed objects rest on their containers and
/// every goal holds at the end.
pub fn simulate_validation(result: &PlanResult, initial: &SceneState) -> ValidationOutcome {
    let mut issues = Vec::new();
    let n = result.len();
    let issue = |kind, sample, detail: String| ValidationIssue { kind, sample, detail };

    for t in &result.arms {
        let Some(model) = initial.arm(&t.arm).map(|a| &a.model) else { continue };
        let mut reference: Option<(&str, Pose)> = None;
        for k in 0..n {
            let Some(o) = t.attached[k].as_deref() else {
                reference = None;
                continue;
            };
            let (Ok(ee), Some(p)) = (model.fk(&t.samples[k]), result.object(o).and_then(|x| x.poses.get(k))) else {
                continue;
            };
            let rel = ee.inverse().compose(p);
            match reference {
                Some((name, r)) if name == o => {
                    let (dt, dr) = r.error_to(&rel);
                    if dt > GRIP_TOL || dr > GRIP_TOL {
                        issues.push(issue(IssueKind::Grip, Some(k), format!("{o} slipped in {} ({dt:.2e} m)", t.arm)));
                        break;
                    }
                }
                _ => reference = Some((o, rel)),
            }
        }
    }

    'samples: for k in 0..n {
        let span = result.spans.iter().find(|s| k >= s.start && k < s.end);
        let scene = scene_at(result, initial, k);
        let world = scene.collision_world();
        let mut bodies = Vec::new();
        for a in &scene.arms {
            let held = attached_body(&scene, &a.key);
            let b = body_spheres(&a.model, &a.q, held.as_ref()).unwrap_or_default();
            let allowed = span.and_then(|s| s.allowed.get(&a.key)).cloned().unwrap_or_default();
            let r = check_bodies(&world, &b, &allowed);
            if !r.is_free() {
                issues.push(issue(IssueKind::Collision, Some(k), describe(&r.pairs)));
                break 'samples;
            }
            bodies.push((b, allowed));
        }
        for i in 0..bodies.len() {
            for j in i + 1..bodies.len() {
                let shared = union(&bodies[i].1, &bodies[j].1);
                let r = check_between(&bodies[i].0, &bodies[j].0, inter_arm_skip(&shared));
                if !r.is_free() {
                    issues.push(issue(IssueKind::Collision, Some(k), describe(&r.pairs)));
                    break 'samples;
                }
            }
        }
    }

    let last = n.saturating_sub(1);
    let end = scene_at(result, initial, last);
    for g in &result.goals {
        match g {
            Goal::Placed {
                object,
                container,
                max_gap,
            } => {
                let (Some(o), Some(c)) = (end.object(object), end.object(container)) else {
                    issues.push(issue(IssueKind::Goal, None, format!("unknown object in goal {object} on {container}")));
                    continue;
                };
                if end.holder(object).is_some() {
                    issues.push(issue(IssueKind::Support, Some(last), format!("{object} still held")));
                    continue;
                }
                let ob = o.world_aabb();
                let cb = c.world_aabb();
                if !cb.contains_xy(&ob.center()) {
                    issues.push(issue(IssueKind::Support, Some(last), format!("{object} footprint center outside {container}")));
                }
                let gap = ob.min.z - cb.max.z;
                if gap < -GRIP_TOL || gap > *max_gap + GRIP_TOL {
                    issues.push(issue(IssueKind::Support, Some(last), format!("{object} rests {gap:.4} m above {container}")));
                }
            }
            Goal::JointAt { object, joint, value, tol } => {
                let v = end.object(object).map(|o| o.joint_value(joint));
                if v.is_none_or(|v| (v - value).abs() > *tol) {
                    issues.push(issue(IssueKind::Goal, Some(last), format!("{object}.{joint} at {v:?}, wanted {value:.3}")));
                }
            }
        }
    }
    ValidationOutcome { issues }
}
