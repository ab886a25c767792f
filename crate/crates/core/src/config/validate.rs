use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;

use super::*;
use crate::assets::{AssetKind, AssetRegistry};
use crate::geometry::quat_norm;

/// Largest camera translation noise the randomizer library supports, meters.
pub const MAX_TRANSLATION_NOISE: f64 = 0.05;
/// Largest camera orientation noise the randomizer library supports, degrees.
pub const MAX_ORIENTATION_NOISE: f64 = 5.0;
/// Raw quaternions in documents are rounded; this is how far from unit norm
/// they may be before normalization.
pub const QUATERNION_NORM_TOL: f64 = 1e-2;

pub const TABLE: &str = "table";

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Finding {
    MissingAsset { object: String, key: String },
    UnknownCategory { object: String, category: String },
    WrongAssetKind { name: String, expected: String },
    UnknownReference { path: String, name: String },
    ArmUnavailable { robot: String, arm: ArmSide },
    DuplicateSkillBlock { robot: String },
    JointDimension { path: String, expected: usize, found: usize },
    NegativeStd { path: String },
    InvalidRange { path: String },
    NonPositive { path: String },
    BadQuaternion { path: String, norm: f64 },
    NoiseAboveLibraryMax { camera: String },
    UnknownFrame { camera: String, parent: String },
    UnknownJoint { object: String, joint: String },
    UnresolvedPlaceholder { path: String },
    UnsupportedSampler { path: String, random_type: String },
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::MissingAsset { object, key } => write!(f, "MissingAsset({key:?}) for object {object}"),
            Finding::UnknownCategory { object, category } => {
                write!(f, "UnknownCategory({category:?}) for object {object}")
            }
            Finding::WrongAssetKind { name, expected } => write!(f, "WrongAssetKind: {name} is not {expected}"),
            Finding::UnknownReference { path, name } => write!(f, "UnknownReference({name:?}) at {path}"),
            Finding::ArmUnavailable { robot, arm } => write!(f, "ArmUnavailable: {robot} has no {arm} arm"),
            Finding::DuplicateSkillBlock { robot } => write!(f, "DuplicateSkillBlock for {robot}"),
            Finding::JointDimension { path, expected, found } => {
                write!(f, "JointDimension at {path}: expected {expected}, found {found}")
            }
            Finding::NegativeStd { path } => write!(f, "NegativeStd at {path}"),
            Finding::InvalidRange { path } => write!(f, "InvalidRange at {path}"),
            Finding::NonPositive { path } => write!(f, "NonPositive at {path}"),
            Finding::BadQuaternion { path, norm } => write!(f, "BadQuaternion at {path} (norm {norm})"),
            Finding::NoiseAboveLibraryMax { camera } => write!(f, "NoiseAboveLibraryMax for camera {camera}"),
            Finding::UnknownFrame { camera, parent } => write!(f, "UnknownFrame {parent:?} for camera {camera}"),
            Finding::UnknownJoint { object, joint } => write!(f, "UnknownJoint {joint:?} on {object}"),
            Finding::UnresolvedPlaceholder { path } => write!(f, "UnresolvedPlaceholder at {path}"),
            Finding::UnsupportedSampler { path, random_type } => {
                write!(f, "UnsupportedSampler {random_type:?} at {path}")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.findings.is_empty()
    }
}

/// Checks every document invariant plus registry membership of assets.
pub fn validate_config(cfg: &TaskConfig, registry: &AssetRegistry) -> ValidationReport {
    let mut out = Vec::new();
    placeholders(&to_value(cfg), "", &mut out);

    let mut known: BTreeSet<&str> = BTreeSet::new();
    known.insert(TABLE);
    known.extend(cfg.robots.iter().map(|r| r.name.as_str()));
    known.extend(cfg.objects.iter().map(|o| o.name.as_str()));

    check_range(&cfg.env_map.intensity_range, "env_map.intensity_range", &mut out);
    check_range(&cfg.env_map.rotation_range, "env_map.rotation_range", &mut out);
    if cfg.data.max_episode_length == 0 {
        out.push(Finding::NonPositive {
            path: "data.max_episode_length".into(),
        });
    }

    for (i, r) in cfg.robots.iter().enumerate() {
        let emb = registry.resolve(&r.embodiment_id);
        match emb {
            None => out.push(Finding::MissingAsset {
                object: r.name.clone(),
                key: r.embodiment_id.clone(),
            }),
            Some(a) if a.kind != AssetKind::Embodiment => out.push(Finding::WrongAssetKind {
                name: r.name.clone(),
                expected: "an embodiment".into(),
            }),
            Some(a) => {
                for h in &r.homes {
                    let path = format!("robots[{i}].{}_joint_home", h.arm);
                    let Some(chain) = a.chain(h.arm) else {
                        out.push(Finding::ArmUnavailable {
                            robot: r.name.clone(),
                            arm: h.arm,
                        });
                        continue;
                    };
                    for (v, p) in [(&h.mean, path.clone()), (&h.std, format!("{path}_std"))] {
                        if v.len() != chain.dof() {
                            out.push(Finding::JointDimension {
                                path: p,
                                expected: chain.dof(),
                                found: v.len(),
                            });
                        }
                    }
                    if h.std.iter().any(|s| !(*s >= 0.0)) {
                        out.push(Finding::NegativeStd { path: format!("{path}_std") });
                    }
                }
            }
        }
    }

    for (i, o) in cfg.objects.iter().enumerate() {
        let wanted = match o.target_class {
            TargetClass::Rigid => AssetKind::Rigid,
            TargetClass::Articulated => AssetKind::Articulated,
        };
        if let Some(key) = &o.asset_path {
            match registry.resolve(key) {
                None => out.push(Finding::MissingAsset {
                    object: o.name.clone(),
                    key: key.clone(),
                }),
                Some(a) if a.kind != wanted => out.push(Finding::WrongAssetKind {
                    name: o.name.clone(),
                    expected: o.target_class.as_str().into(),
                }),
                Some(_) => {}
            }
        }
        if let Some(cat) = &o.category {
            if !registry.has_category(cat) {
                out.push(Finding::UnknownCategory {
                    object: o.name.clone(),
                    category: cat.clone(),
                });
            }
        }
        if o.scale.iter().any(|s| !(*s > 0.0)) {
            out.push(Finding::NonPositive {
                path: format!("objects[{i}].scale"),
            });
        }
        if o.euler_deg.iter().chain(&o.translation).any(|x| !x.is_finite()) {
            out.push(Finding::InvalidRange {
                path: format!("objects[{i}]"),
            });
        }
    }

    for (i, r) in cfg.regions.iter().enumerate() {
        for (name, field) in [(&r.object, "object"), (&r.target, "target")] {
            if !known.contains(name.as_str()) {
                out.push(Finding::UnknownReference {
                    path: format!("regions[{i}].{field}"),
                    name: name.clone(),
                });
            }
        }
        if r.random_type != A_ON_B_SAMPLER {
            out.push(Finding::UnsupportedSampler {
                path: format!("regions[{i}].random_type"),
                random_type: r.random_type.clone(),
            });
        }
        if (0..3).any(|k| r.pos_range[0][k] > r.pos_range[1][k]) {
            out.push(Finding::InvalidRange {
                path: format!("regions[{i}].random_config.pos_range"),
            });
        }
        check_range(&r.yaw_range, &format!("regions[{i}].random_config.yaw_rotation"), &mut out);
    }

    for (i, c) in cfg.cameras.iter().enumerate() {
        let path = format!("cameras[{i}]");
        let owner = c.parent.split('/').next().unwrap_or("");
        if !known.contains(owner) {
            out.push(Finding::UnknownReference {
                path: format!("{path}.parent"),
                name: owner.to_string(),
            });
        } else if let Some(robot) = cfg.robot(owner) {
            let frame_ok = c.parent == owner
                || registry
                    .resolve(&robot.embodiment_id)
                    .is_some_and(|a| a.frame(&c.parent).is_some());
            if !frame_ok {
                out.push(Finding::UnknownFrame {
                    camera: c.name.clone(),
                    parent: c.parent.clone(),
                });
            }
        }
        let norm = quat_norm(c.orientation);
        if !((norm - 1.0).abs() <= QUATERNION_NORM_TOL) {
            out.push(Finding::BadQuaternion {
                path: format!("{path}.orientation"),
                norm,
            });
        }
        match &c.params {
            CameraParams::Inline(p) => {
                if p.width == 0 || p.height == 0 || !(p.focal > 0.0) {
                    out.push(Finding::NonPositive {
                        path: format!("{path}.params"),
                    });
                }
            }
            CameraParams::Reference(_) => {}
        }
        if !(c.max_translation_noise >= 0.0) || !(c.max_orientation_noise >= 0.0) {
            out.push(Finding::InvalidRange {
                path: format!("{path}.max_translation_noise"),
            });
        } else if c.max_translation_noise > MAX_TRANSLATION_NOISE || c.max_orientation_noise > MAX_ORIENTATION_NOISE {
            out.push(Finding::NoiseAboveLibraryMax { camera: c.name.clone() });
        }
    }

    let mut seen_blocks = BTreeSet::new();
    for (b, block) in cfg.skills.iter().enumerate() {
        if !seen_blocks.insert(block.robot.as_str()) {
            out.push(Finding::DuplicateSkillBlock {
                robot: block.robot.clone(),
            });
        }
        let Some(robot) = cfg.robot(&block.robot) else {
            out.push(Finding::UnknownReference {
                path: format!("skills[{b}]"),
                name: block.robot.clone(),
            });
            continue;
        };
        let emb = registry.resolve(&robot.embodiment_id);
        for (s, step) in block.steps.iter().enumerate() {
            for (arm, skills) in &step.arms {
                if let Some(a) = emb {
                    if a.kind == AssetKind::Embodiment && a.chain(*arm).is_none() {
                        out.push(Finding::ArmUnavailable {
                            robot: robot.name.clone(),
                            arm: *arm,
                        });
                    }
                }
                for (k, skill) in skills.iter().enumerate() {
                    let path = format!("skills[{b}].{}[{s}].{arm}[{k}]", block.robot);
                    check_skill(cfg, registry, skill, &path, &mut out);
                }
            }
        }
    }

    ValidationReport { findings: out }
}

fn check_skill(cfg: &TaskConfig, registry: &AssetRegistry, skill: &SkillSpec, path: &str, out: &mut Vec<Finding>) {
    for name in skill.objects() {
        if name != TABLE && cfg.object(name).is_none() {
            out.push(Finding::UnknownReference {
                path: format!("{path}.objects"),
                name: name.to_string(),
            });
        }
    }
    match skill {
        SkillSpec::Pick(p) => {
            if p.post_grasp_offset[0] > p.post_grasp_offset[1] {
                out.push(Finding::InvalidRange {
                    path: format!("{path}.post_grasp_offset"),
                });
            }
            check_tolerances(p.t_eps, p.o_eps_deg, path, out);
        }
        SkillSpec::Place(p) => {
            for (r, key) in [(&p.x_ratio_range, "x_ratio_range"), (&p.y_ratio_range, "y_ratio_range")] {
                if r[0] > r[1] || r[0] < 0.0 || r[1] > 1.0 {
                    out.push(Finding::InvalidRange {
                        path: format!("{path}.{key}"),
                    });
                }
            }
            for (a, key) in [
                (&p.align_pick_obj_axis, "align_pick_obj_axis"),
                (&p.align_place_obj_axis, "align_place_obj_axis"),
            ] {
                if a.is_some_and(|v| v.iter().map(|x| x * x).sum::<f64>() < 1e-12) {
                    out.push(Finding::NonPositive {
                        path: format!("{path}.{key}"),
                    });
                }
            }
            if !(p.align_obj_tol_deg >= 0.0) {
                out.push(Finding::InvalidRange {
                    path: format!("{path}.align_obj_tol"),
                });
            }
            check_tolerances(p.t_eps, p.o_eps_deg, path, out);
        }
        SkillSpec::Push(p) => {
            let asset = cfg
                .object(&p.object)
                .and_then(|o| o.asset_path.as_deref())
                .and_then(|k| registry.resolve(k));
            if let Some(a) = asset {
                if a.joint(&p.joint).is_none() {
                    out.push(Finding::UnknownJoint {
                        object: p.object.clone(),
                        joint: p.joint.clone(),
                    });
                }
            }
            if !(p.expansion > 0.0) {
                out.push(Finding::NonPositive {
                    path: format!("{path}.contact_expansion"),
                });
            }
            check_tolerances(p.t_eps, p.o_eps_deg, path, out);
        }
        SkillSpec::GotoPose(g) => {
            if g.frame != "world" && g.frame != "robot" {
                out.push(Finding::UnknownReference {
                    path: format!("{path}.frame"),
                    name: g.frame.clone(),
                });
            }
            let norm = quat_norm(g.quaternion);
            if !((norm - 1.0).abs() <= QUATERNION_NORM_TOL) {
                out.push(Finding::BadQuaternion {
                    path: format!("{path}.quaternion"),
                    norm,
                });
            }
        }
        SkillSpec::GripperAction(_) | SkillSpec::Home { .. } => {}
    }
}

fn check_tolerances(t_eps: f64, o_eps: f64, path: &str, out: &mut Vec<Finding>) {
    if !(t_eps > 0.0) || !(o_eps > 0.0) {
        out.push(Finding::NonPositive {
            path: format!("{path}.t_eps"),
        });
    }
}

fn check_range(r: &[f64; 2], path: &str, out: &mut Vec<Finding>) {
    if !(r[0] <= r[1]) {
        out.push(Finding::InvalidRange { path: path.to_string() });
    }
}

fn placeholders(v: &Value, path: &str, out: &mut Vec<Finding>) {
    match v {
        Value::String(s) if s.contains("${") => out.push(Finding::UnresolvedPlaceholder { path: path.to_string() }),
        Value::Sequence(items) => {
            for (i, x) in items.iter().enumerate() {
                placeholders(x, &format!("{path}[{i}]"), out);
            }
        }
        Value::Mapping(m) => {
            for (k, x) in m {
                let key = k.as_str().unwrap_or("?");
                let p = if path.is_empty() { key.to_string() } else { format!("{path}.{key}") };
                placeholders(x, &p, out);
            }
        }
        _ => {}
    }
}
