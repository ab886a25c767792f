//! Serial-chain kinematics: forward kinematics, Jacobians, damped
//! least-squares IK, joint-space interpolation and sphere collision checks.

use nalgebra::{DMatrix, DVector, Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use crate::assets::KinematicChain;
use crate::geometry::{axis_angle, Aabb, Pose, Sphere, Vec3};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KinematicsError {
    #[error("expected {expected} joint values, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("target is {distance:.3} m from the mount, beyond reach {reach:.3} m")]
    Unreachable { distance: f64, reach: f64 },
    #[error("IK did not converge (position {pos_err:.2e} m, orientation {ori_err:.2e} rad)")]
    IkNotConverged { pos_err: f64, ori_err: f64 },
}

/// A chain placed in the world: `base` is the world pose of the arm mount.
#[derive(Debug, Clone, PartialEq)]
pub struct Arm {
    pub chain: KinematicChain,
    pub base: Pose,
}

impl Arm {
    /// Places `chain` on a robot whose base sits at `robot_base` in the world.
    pub fn new(chain: KinematicChain, robot_base: &Pose) -> Self {
        let base = robot_base.compose(&chain.base_offset);
        Arm { chain, base }
    }

    pub fn dof(&self) -> usize {
        self.chain.dof()
    }

    fn check_dim(&self, q: &[f64]) -> Result<(), KinematicsError> {
        if q.len() != self.dof() {
            return Err(KinematicsError::DimensionMismatch {
                expected: self.dof(),
                found: q.len(),
            });
        }
        Ok(())
    }

    /// World frames: index 0 is the mount, index `i` the frame after joint `i`.
    pub fn frames(&self, q: &[f64]) -> Result<Vec<Pose>, KinematicsError> {
        self.check_dim(q)?;
        let mut out = Vec::with_capacity(q.len() + 1);
        let mut cur = self.base;
        out.push(cur);
        for (j, qi) in self.chain.joints.iter().zip(q) {
            cur = cur.compose(&Pose::new(j.origin, axis_angle(&j.axis, *qi)));
            out.push(cur);
        }
        Ok(out)
    }

    pub fn fk(&self, q: &[f64]) -> Result<Pose, KinematicsError> {
        let f = self.frames(q)?;
        Ok(f[f.len() - 1].compose(&self.chain.ee_offset))
    }

    /// Geometric Jacobian in the world frame; rows are (linear; angular).
    pub fn jacobian(&self, q: &[f64]) -> Result<DMatrix<f64>, KinematicsError> {
        let frames = self.frames(q)?;
        let ee = frames[frames.len() - 1].compose(&self.chain.ee_offset).translation;
        let mut j = DMatrix::zeros(6, q.len());
        for (i, joint) in self.chain.joints.iter().enumerate() {
            let f = &frames[i + 1];
            let a = f.rotation * joint.axis;
            let lin = a.cross(&(ee - f.translation));
            for r in 0..3 {
                j[(r, i)] = lin[r];
                j[(r + 3, i)] = a[r];
            }
        }
        Ok(j)
    }

    pub fn project_to_limits(&self, q: &mut [f64]) {
        for (qi, j) in q.iter_mut().zip(&self.chain.joints) {
            *qi = qi.clamp(j.limits[0], j.limits[1]);
        }
    }

    pub fn within_limits(&self, q: &[f64]) -> bool {
        q.iter()
            .zip(&self.chain.joints)
            .all(|(qi, j)| *qi >= j.limits[0] && *qi <= j.limits[1])
    }

    /// Link spheres (per joint) and finger spheres in the world frame.
    pub fn spheres(&self, q: &[f64]) -> Result<Vec<BodySphere>, KinematicsError> {
        let frames = self.frames(q)?;
        let mut out = Vec::new();
        for (i, joint) in self.chain.joints.iter().enumerate() {
            for s in &joint.spheres {
                out.push(BodySphere {
                    link: format!("{}.link{}", self.chain.arm_id, i + 1),
                    gripper: false,
                    sphere: Sphere::new(frames[i + 1].transform_point(&s.center), s.radius),
                });
            }
        }
        let ee = frames[frames.len() - 1].compose(&self.chain.ee_offset);
        for s in &self.chain.gripper_spheres {
            out.push(BodySphere {
                link: format!("{}.gripper", self.chain.arm_id),
                gripper: true,
                sphere: Sphere::new(ee.transform_point(&s.center), s.radius),
            });
        }
        Ok(out)
    }
}

/// Planar/serial FK without a world placement (identity base).
pub fn forward_kinematics(chain: &KinematicChain, q: &[f64]) -> Result<Pose, KinematicsError> {
    Arm {
        chain: chain.clone(),
        base: chain.base_offset,
    }
    .fk(q)
}

/// Position delta and rotation vector taking `from` to `to`, both world frame.
pub fn pose_error(from: &Pose, to: &Pose) -> (Vec3, Vec3) {
    let dp = to.translation - from.translation;
    let dr = (to.rotation * from.rotation.inverse()).scaled_axis();
    (dp, dr)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkOptions {
    pub t_eps: f64,
    /// Orientation tolerance, radians.
    pub o_eps: f64,
    pub max_iters: usize,
    pub damping: f64,
    /// Meters per radian of orientation error in the objective; 0 solves for position only.
    pub orientation_weight: f64,
    /// Largest per-joint change in one iteration, radians.
    pub max_step: f64,
}

impl Default for IkOptions {
    fn default() -> Self {
        IkOptions {
            t_eps: 1e-3,
            o_eps: 0.5f64.to_radians(),
            max_iters: 60,
            damping: 0.05,
            orientation_weight: 0.5,
            max_step: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkSolution {
    pub q: Vec<f64>,
    pub pos_err: f64,
    pub ori_err: f64,
    pub iterations: usize,
}

fn residuals(arm: &Arm, q: &[f64], target: &Pose) -> Result<(Vec3, Vec3), KinematicsError> {
    Ok(pose_error(&arm.fk(q)?, target))
}

/// Damped least-squares IK with Levenberg-Marquardt damping: a step is kept
/// only when it lowers the weighted error, otherwise the damping grows. Each
/// iterate is projected onto the joint limits.
pub fn inverse_kinematics(
    arm: &Arm,
    target: &Pose,
    seed: &[f64],
    opts: &IkOptions,
) -> Result<IkSolution, KinematicsError> {
    arm.check_dim(seed)?;
    let first = arm.chain.joints.first().map(|j| j.origin).unwrap_or_default();
    let distance = (target.translation - arm.base.transform_point(&first)).norm();
    let reach = arm.chain.reach() - first.norm();
    if distance > reach + opts.t_eps {
        return Err(KinematicsError::Unreachable { distance, reach });
    }
    let w = opts.orientation_weight;
    let position_only = w == 0.0;
    let done = |dp: &Vec3, dr: &Vec3| dp.norm() <= opts.t_eps && (position_only || dr.norm() <= opts.o_eps);
    let cost = |dp: &Vec3, dr: &Vec3| dp.norm_squared() + w * w * dr.norm_squared();
    let mut q = seed.to_vec();
    let (mut dp, mut dr) = residuals(arm, &q, target)?;
    let mut lambda2 = opts.damping * opts.damping;
    let mut candidate = q.clone();
    for it in 0..=opts.max_iters {
        if done(&dp, &dr) {
            return Ok(IkSolution {
                pos_err: dp.norm(),
                ori_err: if position_only { 0.0 } else { dr.norm() },
                q,
                iterations: it,
            });
        }
        if it == opts.max_iters {
            break;
        }
        let mut j = arm.jacobian(&q)?;
        for c in 0..j.ncols() {
            for r in 3..6 {
                j[(r, c)] *= w;
            }
        }
        let e = Vector6::new(dp.x, dp.y, dp.z, w * dr.x, w * dr.y, w * dr.z);
        let jjt: Matrix6<f64> = Matrix6::from_iterator((&j * j.transpose()).iter().copied());
        let a = jjt + Matrix6::identity() * lambda2;
        let y = a.cholesky().map(|c| c.solve(&e)).unwrap_or_else(Vector6::zeros);
        let dq: DVector<f64> = j.transpose() * DVector::from_column_slice(y.as_slice());
        let scale = dq.amax().max(opts.max_step) / opts.max_step;
        for ((c, qi), d) in candidate.iter_mut().zip(&q).zip(dq.iter()) {
            *c = qi + d / scale;
        }
        arm.project_to_limits(&mut candidate);
        let (cp, cr) = residuals(arm, &candidate, target)?;
        if cost(&cp, &cr) < cost(&dp, &dr) {
            q.copy_from_slice(&candidate);
            (dp, dr) = (cp, cr);
            lambda2 = (lambda2 * 0.25).max(1e-10);
        } else {
            lambda2 = (lambda2 * 4.0).min(1e4);
            if lambda2 >= 1e4 {
                break;
            }
        }
    }
    Err(KinematicsError::IkNotConverged {
        pos_err: dp.norm(),
        ori_err: dr.norm(),
    })
}

/// Tries `seed` first, then up to `restarts` seeds drawn uniformly within the
/// joint limits. Stops early when the target is out of reach.
pub fn solve_ik<R: rand::Rng + ?Sized>(
    arm: &Arm,
    target: &Pose,
    seed: &[f64],
    opts: &IkOptions,
    restarts: usize,
    rng: &mut R,
) -> Result<IkSolution, KinematicsError> {
    let mut last = inverse_kinematics(arm, target, seed, opts);
    for _ in 0..restarts {
        match last {
            Ok(_) | Err(KinematicsError::Unreachable { .. }) | Err(KinematicsError::DimensionMismatch { .. }) => break,
            Err(_) => {}
        }
        let s: Vec<f64> = arm.chain.limits().iter().map(|[lo, hi]| rng.random_range(*lo..=*hi)).collect();
        last = inverse_kinematics(arm, target, &s, opts);
    }
    last
}

/// Dense straight-line joint trajectory through `waypoints`.
///
/// Each segment takes `max_j |Δq_j| / vmax_j` seconds and is sampled every
/// `dt`, endpoints included; junction samples are not repeated.
pub fn interpolate_trajectory(waypoints: &[Vec<f64>], vmax: &[f64], dt: f64) -> Vec<Vec<f64>> {
    let Some(first) = waypoints.first() else {
        return Vec::new();
    };
    let mut out = vec![first.clone()];
    for pair in waypoints.windows(2) {
        out.extend(segment(&pair[0], &pair[1], vmax, dt));
    }
    out
}

/// Samples after `from` up to and including `to`; empty when they coincide.
pub fn segment(from: &[f64], to: &[f64], vmax: &[f64], dt: f64) -> Vec<Vec<f64>> {
    let duration = from
        .iter()
        .zip(to)
        .zip(vmax)
        .map(|((a, b), v)| (b - a).abs() / v)
        .fold(0.0, f64::max);
    let n = (duration / dt - 1e-9).ceil().max(0.0) as usize;
    (1..=n)
        .map(|k| {
            if k == n {
                return to.to_vec();
            }
            let s = k as f64 / n as f64;
            from.iter().zip(to).map(|(a, b)| a + (b - a) * s).collect()
        })
        .collect()
}

/// A collision sphere on a moving body (arm link, finger or held object).
#[derive(Debug, Clone, PartialEq)]
pub struct BodySphere {
    pub link: String,
    pub gripper: bool,
    pub sphere: Sphere,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    Box(Aabb),
    Sphere(Sphere),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub name: String,
    pub shape: Shape,
}

impl Obstacle {
    pub fn distance(&self, s: &Sphere) -> f64 {
        match &self.shape {
            Shape::Box(b) => s.distance_to_aabb(b),
            Shape::Sphere(o) => s.distance_to_sphere(o),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CollisionWorld {
    pub obstacles: Vec<Obstacle>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionPair {
    pub body: String,
    pub obstacle: String,
    /// Signed distance; negative means penetration.
    pub distance: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CollisionReport {
    pub pairs: Vec<CollisionPair>,
}

impl CollisionReport {
    pub fn is_free(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// A held object's proxy spheres in the end-effector frame.
#[derive(Debug, Clone, PartialEq)]
pub struct AttachedBody {
    pub object: String,
    pub spheres: Vec<Sphere>,
}

impl AttachedBody {
    /// Grid of spheres covering `bbox` (object frame) for an object held with
    /// `ee_to_object` as the end-effector→object transform.
    pub fn from_box(object: &str, bbox: &Aabb, ee_to_object: &Pose) -> Self {
        let spheres = proxy_spheres(bbox)
            .into_iter()
            .map(|s| Sphere::new(ee_to_object.transform_point(&s.center), s.radius))
            .collect();
        AttachedBody {
            object: object.to_string(),
            spheres,
        }
    }
}

/// Inscribed spheres on a grid through the box, radius half the smallest extent.
pub fn proxy_spheres(bbox: &Aabb) -> Vec<Sphere> {
    let ext = bbox.extents();
    let r = 0.5 * ext.min();
    let counts: Vec<usize> = ext
        .iter()
        .map(|e| (((e - 2.0 * r) / (2.0 * r)).max(0.0) - 1e-9).ceil() as usize + 1)
        .collect();
    let coord = |axis: usize, k: usize| {
        let lo = bbox.min[axis] + r;
        let hi = bbox.max[axis] - r;
        if counts[axis] == 1 {
            0.5 * (lo + hi)
        } else {
            lo + (hi - lo) * k as f64 / (counts[axis] - 1) as f64
        }
    };
    let mut out = Vec::with_capacity(counts.iter().product());
    for i in 0..counts[0] {
        for j in 0..counts[1] {
            for k in 0..counts[2] {
                out.push(Sphere::new(Vec3::new(coord(0, i), coord(1, j), coord(2, k)), r));
            }
        }
    }
    out
}

/// Bodies of one arm at `q`: link and finger spheres plus any held object.
pub fn body_spheres(arm: &Arm, q: &[f64], attached: Option<&AttachedBody>) -> Result<Vec<BodySphere>, KinematicsError> {
    let mut out = arm.spheres(q)?;
    if let Some(a) = attached {
        let ee = arm.fk(q)?;
        for s in &a.spheres {
            out.push(BodySphere {
                link: format!("object:{}", a.object),
                gripper: true,
                sphere: Sphere::new(ee.transform_point(&s.center), s.radius),
            });
        }
    }
    Ok(out)
}

/// Penetration depth below which touching bodies count as separated.
pub const CONTACT_SLACK: f64 = 1e-6;

/// Every (body sphere, obstacle) pair penetrating deeper than [`CONTACT_SLACK`]. Finger and
/// held-object spheres ignore obstacles named in `allowed`.
pub fn check_bodies(world: &CollisionWorld, bodies: &[BodySphere], allowed: &[String]) -> CollisionReport {
    let mut pairs = Vec::new();
    for b in bodies {
        for o in &world.obstacles {
            if b.gripper && allowed.iter().any(|a| *a == o.name) {
                continue;
            }
            let d = o.distance(&b.sphere);
            if d < -CONTACT_SLACK {
                pairs.push(CollisionPair {
                    body: b.link.clone(),
                    obstacle: o.name.clone(),
                    distance: d,
                });
            }
        }
    }
    CollisionReport { pairs }
}

pub fn check_collision(
    world: &CollisionWorld,
    arm: &Arm,
    q: &[f64],
    attached: Option<&AttachedBody>,
    allowed: &[String],
) -> Result<CollisionReport, KinematicsError> {
    Ok(check_bodies(world, &body_spheres(arm, q, attached)?, allowed))
}

/// Sphere pairs between two bodies that interpenetrate. `skip` decides which
/// (a, b) pairs are exempt.
pub fn check_between(
    a: &[BodySphere],
    b: &[BodySphere],
    skip: impl Fn(&BodySphere, &BodySphere) -> bool,
) -> CollisionReport {
    let mut pairs = Vec::new();
    for x in a {
        for y in b {
            if skip(x, y) {
                continue;
            }
            let d = x.sphere.distance_to_sphere(&y.sphere);
            if d < -CONTACT_SLACK {
                pairs.push(CollisionPair {
                    body: x.link.clone(),
                    obstacle: y.link.clone(),
                    distance: d,
                });
            }
        }
    }
    CollisionReport { pairs }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::assets::ChainJoint;
    use crate::config::ArmSide;
    use std::f64::consts::FRAC_PI_2;

    pub(crate) fn planar_two_link() -> KinematicChain {
        let joint = |origin: Vec3| ChainJoint {
            axis: Vec3::z(),
            origin,
            limits: [-3.0, 3.0],
            spheres: vec![],
        };
        KinematicChain {
            arm_id: ArmSide::Right,
            base_offset: Pose::identity(),
            joints: vec![joint(Vec3::zeros()), joint(Vec3::x())],
            ee_offset: Pose::from_translation(Vec3::x()),
            gripper_spheres: vec![],
        }
    }

    #[test]
    fn planar_fk() {
        let p = forward_kinematics(&planar_two_link(), &[0.0, FRAC_PI_2]).unwrap();
        assert!((p.translation - Vec3::new(1.0, 1.0, 0.0)).norm() < 1e-12);
        assert!(forward_kinematics(&planar_two_link(), &[0.0]).is_err());
    }

    #[test]
    fn ik_at_seed_takes_zero_iterations() {
        let arm = Arm::new(planar_two_link(), &Pose::identity());
        let seed = [0.3, 0.4];
        let target = arm.fk(&seed).unwrap();
        let s = inverse_kinematics(&arm, &target, &seed, &IkOptions::default()).unwrap();
        assert_eq!(s.iterations, 0);
        assert_eq!(s.q, seed.to_vec());
    }

    #[test]
    fn far_target_is_unreachable() {
        let arm = Arm::new(planar_two_link(), &Pose::identity());
        let target = Pose::from_translation(Vec3::new(3.0, 0.0, 0.0));
        let r = inverse_kinematics(&arm, &target, &[0.1, 0.1], &IkOptions::default());
        assert!(matches!(r, Err(KinematicsError::Unreachable { .. })));
    }

    #[test]
    fn linear_ramp() {
        let s = interpolate_trajectory(&[vec![0.0], vec![1.0]], &[1.0], 0.1);
        assert_eq!(s.len(), 11);
        for (k, q) in s.iter().enumerate() {
            assert!((q[0] - k as f64 * 0.1).abs() < 1e-12);
        }
        assert_eq!(interpolate_trajectory(&[vec![0.5]], &[1.0], 0.1).len(), 1);
    }

    #[test]
    fn synchronized_segments() {
        let s = interpolate_trajectory(&[vec![0.0, 0.0], vec![1.0, 0.5]], &[1.0, 1.0], 0.1);
        assert_eq!(s.len(), 11);
        for w in s.windows(2) {
            assert!(((w[1][1] - w[0][1]) - 0.05).abs() < 1e-12);
        }
    }

    #[test]
    fn sphere_on_box_face() {
        let world = CollisionWorld {
            obstacles: vec![Obstacle {
                name: "box".into(),
                shape: Shape::Box(Aabb::new(Vec3::new(-1.0, -1.0, -1.0), Vec3::new(1.0, 1.0, 0.0))),
            }],
        };
        let bodies = vec![BodySphere {
            link: "l".into(),
            gripper: false,
            sphere: Sphere::new(Vec3::zeros(), 0.05),
        }];
        let r = check_bodies(&world, &bodies, &[]);
        assert_eq!(r.pairs.len(), 1);
        assert!((r.pairs[0].distance + 0.05).abs() < 1e-12);
        let above = vec![BodySphere {
            sphere: Sphere::new(Vec3::new(0.0, 0.0, 1.0), 0.05),
            ..bodies[0].clone()
        }];
        assert!(check_bodies(&world, &above, &[]).is_free());
    }

    #[test]
    fn proxy_spheres_stay_inside_box() {
        let b = Aabb::new(Vec3::new(-0.1, 0.0, -0.1), Vec3::new(0.1, 0.02, 0.1));
        let s = proxy_spheres(&b);
        assert!(s.len() > 1);
        for sp in &s {
            assert!(b.signed_distance(&sp.center) <= -sp.radius + 1e-12);
        }
    }
}
