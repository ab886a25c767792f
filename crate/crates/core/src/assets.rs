//! Annotated asset registry: rigid objects with grasp candidates, articulated
//! objects with joints and contact regions, scenes, and robot embodiments.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ArmSide, DirectionFilter};
use crate::geometry::{angle_between_deg, vec3_serde, Aabb, Pose, Sphere, Vec3};

pub const MANIFEST_SUFFIX: &str = ".asset.json";
pub const DEFAULT_TOP_K: usize = 40;
const UNIT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AssetError {
    #[error("duplicate asset `{0}`")]
    DuplicateAsset(String),
    #[error("manifest {path}: {detail}")]
    ManifestError { path: String, detail: String },
    #[error("no grasp candidates")]
    NoCandidates,
    #[error("asset `{0}` is not a rigid object")]
    NotRigid(String),
    #[error("unknown category `{0}`")]
    UnknownCategory(String),
    #[error("unknown asset `{0}`")]
    UnknownAsset(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssetKind {
    Rigid,
    Articulated,
    Scene,
    Embodiment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraspPose {
    /// End-effector pose in the object frame.
    pub pose: Pose,
    #[serde(with = "vec3_serde")]
    pub approach_axis: Vec3,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointType {
    Revolute,
    Prismatic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointAnnotation {
    pub joint_id: String,
    #[serde(rename = "type")]
    pub joint_type: JointType,
    #[serde(with = "vec3_serde")]
    pub axis: Vec3,
    #[serde(with = "vec3_serde")]
    pub origin: Vec3,
    pub limits: [f64; 2],
    #[serde(default)]
    pub damping: f64,
    #[serde(default)]
    pub stiffness: f64,
    /// Joint value in the asset's rest configuration.
    #[serde(default)]
    pub initial: f64,
}

impl JointAnnotation {
    /// Transform of the moving part at joint value `q`, in the object frame.
    pub fn part_transform(&self, q: f64) -> Pose {
        match self.joint_type {
            JointType::Revolute => {
                let r = crate::geometry::axis_angle(&self.axis, q);
                Pose::new(self.origin - r * self.origin, r)
            }
            JointType::Prismatic => Pose::from_translation(self.axis * q),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactRegion {
    /// Center in the part frame (equal to the object frame at the rest value).
    #[serde(with = "vec3_serde")]
    pub center: Vec3,
    pub radius: f64,
    pub attached_joint: String,
    /// Outward surface normal at the region, part frame.
    #[serde(with = "vec3_serde")]
    pub normal: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainJoint {
    #[serde(with = "vec3_serde")]
    pub axis: Vec3,
    /// Offset of this joint from the previous joint frame.
    #[serde(with = "vec3_serde")]
    pub origin: Vec3,
    pub limits: [f64; 2],
    #[serde(default)]
    pub spheres: Vec<Sphere>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinematicChain {
    pub arm_id: ArmSide,
    /// Arm mount in the robot base frame.
    pub base_offset: Pose,
    pub joints: Vec<ChainJoint>,
    pub ee_offset: Pose,
    /// Finger collision spheres in the end-effector frame.
    #[serde(default)]
    pub gripper_spheres: Vec<Sphere>,
}

impl KinematicChain {
    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn limits(&self) -> Vec<[f64; 2]> {
        self.joints.iter().map(|j| j.limits).collect()
    }

    /// Upper bound on the distance from the mount to the end effector.
    pub fn reach(&self) -> f64 {
        self.joints.iter().map(|j| j.origin.norm()).sum::<f64>() + self.ee_offset.translation.norm()
    }
}

/// A named frame on an embodiment. With an `arm`, `offset` is relative to the
/// frame after joint `link` (1-based; 0 is the arm mount); otherwise to the base.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRef {
    #[serde(default)]
    pub arm: Option<ArmSide>,
    #[serde(default)]
    pub link: usize,
    #[serde(default)]
    pub offset: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArticulatedPart {
    pub name: String,
    pub joint: String,
    pub bounding_box: Aabb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetRecord {
    pub name: String,
    pub category: String,
    pub kind: AssetKind,
    /// Alternate lookup keys such as the document paths of the asset.
    #[serde(default)]
    pub aliases: Vec<String>,
    #[serde(default)]
    pub canonical_pose: Pose,
    /// Axis-aligned box in the object frame.
    pub bounding_box: Aabb,
    pub mass: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grasp_candidates: Option<Vec<GraspPose>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub joints: Option<Vec<JointAnnotation>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contact_regions: Option<Vec<ContactRegion>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parts: Option<Vec<ArticulatedPart>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chains: Option<Vec<KinematicChain>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<BTreeMap<String, FrameRef>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manipulation_area: Option<Aabb>,
}

impl AssetRecord {
    pub fn grasps(&self) -> &[GraspPose] {
        self.grasp_candidates.as_deref().unwrap_or(&[])
    }

    pub fn joint(&self, id: &str) -> Option<&JointAnnotation> {
        self.joints.as_deref().unwrap_or(&[]).iter().find(|j| j.joint_id == id)
    }

    pub fn contact_region(&self, joint: &str) -> Option<&ContactRegion> {
        self.contact_regions
            .as_deref()
            .unwrap_or(&[])
            .iter()
            .find(|c| c.attached_joint == joint)
    }

    pub fn chains(&self) -> &[KinematicChain] {
        self.chains.as_deref().unwrap_or(&[])
    }

    pub fn chain(&self, arm: ArmSide) -> Option<&KinematicChain> {
        self.chains().iter().find(|c| c.arm_id == arm)
    }

    /// Resolves a frame path by its longest matching suffix in `frames`.
    pub fn frame(&self, path: &str) -> Option<&FrameRef> {
        let frames = self.frames.as_ref()?;
        frames
            .iter()
            .filter(|(k, _)| path == k.as_str() || path.ends_with(&format!("/{k}")))
            .max_by_key(|(k, _)| k.len())
            .map(|(_, f)| f)
    }

    pub fn extents(&self) -> Vec3 {
        self.bounding_box.extents()
    }

    fn check(&self) -> Result<(), String> {
        if self.name.is_empty() {
            return Err("empty name".into());
        }
        if self.extents().iter().any(|e| !(*e > 0.0)) {
            return Err("bounding box extents must be positive".into());
        }
        if !(self.mass > 0.0) {
            return Err("mass must be positive".into());
        }
        let present = |b: bool, field: &str, kind: AssetKind| -> Result<(), String> {
            let wanted = match field {
                "grasp_candidates" => kind == AssetKind::Rigid,
                "joints" | "contact_regions" | "parts" => kind == AssetKind::Articulated,
                "chains" | "frames" => kind == AssetKind::Embodiment,
                "manipulation_area" => kind == AssetKind::Scene,
                _ => false,
            };
            let required = matches!(field, "grasp_candidates" | "joints" | "chains");
            if b && !wanted {
                return Err(format!("`{field}` is not allowed on {kind:?} assets"));
            }
            if !b && wanted && required {
                return Err(format!("`{field}` is required on {kind:?} assets"));
            }
            Ok(())
        };
        let k = self.kind;
        present(self.grasp_candidates.is_some(), "grasp_candidates", k)?;
        present(self.joints.is_some(), "joints", k)?;
        present(self.contact_regions.is_some(), "contact_regions", k)?;
        present(self.parts.is_some(), "parts", k)?;
        present(self.chains.is_some(), "chains", k)?;
        present(self.frames.is_some(), "frames", k)?;
        present(self.manipulation_area.is_some(), "manipulation_area", k)?;
        for (i, g) in self.grasps().iter().enumerate() {
            if (g.approach_axis.norm() - 1.0).abs() > UNIT_TOL {
                return Err(format!("grasp_candidates[{i}].approach_axis is not unit length"));
            }
            if !(0.0..=1.0).contains(&g.score) {
                return Err(format!("grasp_candidates[{i}].score outside [0, 1]"));
            }
        }
        for j in self.joints.as_deref().unwrap_or(&[]) {
            if (j.axis.norm() - 1.0).abs() > UNIT_TOL {
                return Err(format!("joint `{}` axis is not unit length", j.joint_id));
            }
            if j.limits[0] > j.limits[1] {
                return Err(format!("joint `{}` limits inverted", j.joint_id));
            }
        }
        for c in self.contact_regions.as_deref().unwrap_or(&[]) {
            if !(c.radius > 0.0) {
                return Err("contact region radius must be positive".into());
            }
            if self.joint(&c.attached_joint).is_none() {
                return Err(format!("contact region on unknown joint `{}`", c.attached_joint));
            }
        }
        for c in self.chains() {
            if c.joints.is_empty() {
                return Err(format!("{} chain has no joints", c.arm_id));
            }
            for (i, j) in c.joints.iter().enumerate() {
                if !(j.limits[0] < j.limits[1]) {
                    return Err(format!("{} joint {i} limits must satisfy lo < hi", c.arm_id));
                }
                if (j.axis.norm() - 1.0).abs() > UNIT_TOL {
                    return Err(format!("{} joint {i} axis is not unit length", c.arm_id));
                }
                if j.spheres.iter().any(|s| !(s.radius > 0.0)) {
                    return Err(format!("{} joint {i} has a non-positive sphere radius", c.arm_id));
                }
            }
            if c.gripper_spheres.iter().any(|s| !(s.radius > 0.0)) {
                return Err(format!("{} gripper sphere radius must be positive", c.arm_id));
            }
        }
        Ok(())
    }
}

/// Immutable name → record map, with alias lookup.
#[derive(Debug, Clone, Default)]
pub struct AssetRegistry {
    records: BTreeMap<String, AssetRecord>,
    aliases: BTreeMap<String, String>,
}

impl AssetRegistry {
    pub fn from_records(records: Vec<AssetRecord>) -> Result<Self, AssetError> {
        let mut reg = AssetRegistry::default();
        for r in records {
            reg.insert(r, "<memory>")?;
        }
        Ok(reg)
    }

    fn insert(&mut self, r: AssetRecord, path: &str) -> Result<(), AssetError> {
        r.check().map_err(|detail| AssetError::ManifestError {
            path: path.to_string(),
            detail,
        })?;
        if self.records.contains_key(&r.name) {
            return Err(AssetError::DuplicateAsset(r.name));
        }
        for a in &r.aliases {
            self.aliases.insert(a.clone(), r.name.clone());
        }
        self.records.insert(r.name.clone(), r);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&AssetRecord> {
        self.records.get(name)
    }

    /// Looks up by record name first, then by alias.
    pub fn resolve(&self, key: &str) -> Option<&AssetRecord> {
        self.records
            .get(key)
            .or_else(|| self.aliases.get(key).and_then(|n| self.records.get(n)))
    }

    pub fn records(&self) -> impl Iterator<Item = &AssetRecord> {
        self.records.values()
    }

    pub fn has_category(&self, category: &str) -> bool {
        self.records.values().any(|r| r.category == category)
    }

    /// Rigid members of `category`, sorted by name.
    pub fn category_members(&self, category: &str) -> Vec<&AssetRecord> {
        self.records
            .values()
            .filter(|r| r.category == category && r.kind == AssetKind::Rigid)
            .collect()
    }
}

/// Loads every `*.asset.json` manifest in `root`, in file-name order.
pub fn load_registry(root: &Path) -> Result<AssetRegistry, AssetError> {
    let io_err = |p: &Path, e: std::io::Error| AssetError::ManifestError {
        path: p.display().to_string(),
        detail: e.to_string(),
    };
    let mut files: Vec<_> = std::fs::read_dir(root)
        .map_err(|e| io_err(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(MANIFEST_SUFFIX)))
        .collect();
    files.sort();
    let mut reg = AssetRegistry::default();
    for path in files {
        let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        let record: AssetRecord = serde_json::from_str(&text).map_err(|e| AssetError::ManifestError {
            path: path.display().to_string(),
            detail: e.to_string(),
        })?;
        reg.insert(record, &path.display().to_string())?;
    }
    Ok(reg)
}

/// Angle between a gripper axis, taken through the grasp and object poses into
/// the world, and the filter's world direction.
pub fn filter_angle_deg(object_pose: &Pose, grasp: &GraspPose, filter: &DirectionFilter) -> f64 {
    let world = object_pose.compose(&grasp.pose);
    angle_between_deg(&world.axis(filter.axis.index()), &filter.direction.vector())
}

/// Candidates passing every filter for an object at `object_pose`, best score first.
pub fn grasp_candidates(
    asset: &AssetRecord,
    object_pose: &Pose,
    filters: &[DirectionFilter],
) -> Result<Vec<GraspPose>, AssetError> {
    if asset.kind != AssetKind::Rigid {
        return Err(AssetError::NotRigid(asset.name.clone()));
    }
    let all = asset.grasps();
    if all.is_empty() {
        return Err(AssetError::NoCandidates);
    }
    let mut out: Vec<GraspPose> = all
        .iter()
        .filter(|g| filters.iter().all(|f| f.accepts_angle(filter_angle_deg(object_pose, g, f))))
        .cloned()
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score));
    Ok(out)
}

/// Uniform draw from the first `min(k, len)` candidates.
pub fn select_grasp<R: Rng + ?Sized>(candidates: &[GraspPose], k: usize, rng: &mut R) -> Result<GraspPose, AssetError> {
    let n = k.min(candidates.len());
    if n == 0 {
        return Err(AssetError::NoCandidates);
    }
    Ok(candidates[rng.random_range(0..n)].clone())
}

/// Uniform draw over the other rigid members of `category`; `exclude` itself
/// when it is the only member.
pub fn sample_category_replacement<'a, R: Rng + ?Sized>(
    registry: &'a AssetRegistry,
    category: &str,
    exclude: &str,
    rng: &mut R,
) -> Result<&'a AssetRecord, AssetError> {
    let members = registry.category_members(category);
    if members.is_empty() {
        return Err(AssetError::UnknownCategory(category.to_string()));
    }
    let others: Vec<_> = members.iter().filter(|r| r.name != exclude).collect();
    if others.is_empty() {
        return registry
            .get(exclude)
            .ok_or_else(|| AssetError::UnknownAsset(exclude.to_string()));
    }
    Ok(others[rng.random_range(0..others.len())])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::GripperAxis;
    use crate::geometry::{rotation_between, Direction};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn box_record(name: &str, category: &str) -> AssetRecord {
        AssetRecord {
            name: name.into(),
            category: category.into(),
            kind: AssetKind::Rigid,
            aliases: vec![],
            canonical_pose: Pose::identity(),
            bounding_box: Aabb::from_center_extents(Vec3::zeros(), Vec3::new(0.1, 0.1, 0.1)),
            mass: 0.2,
            grasp_candidates: Some(vec![]),
            joints: None,
            contact_regions: None,
            parts: None,
            chains: None,
            frames: None,
            manipulation_area: None,
        }
    }

    fn grasp_along(z: Vec3, score: f64) -> GraspPose {
        let r = rotation_between(&Vec3::z(), &z);
        GraspPose {
            pose: Pose::from_rotation(r),
            approach_axis: z.normalize(),
            score,
        }
    }

    #[test]
    fn filter_envelope_includes_antiparallel_axis() {
        let mut rec = box_record("b", "box");
        rec.grasp_candidates = Some(vec![grasp_along(Vec3::z(), 0.5)]);
        let f = DirectionFilter {
            axis: GripperAxis::Z,
            direction: Direction::Downward,
            center_deg: 110.0,
            tolerance_deg: Some(140.0),
        };
        let out = grasp_candidates(&rec, &Pose::identity(), &[f]).unwrap();
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn zero_tolerance_off_center_is_empty() {
        let mut rec = box_record("b", "box");
        rec.grasp_candidates = Some(vec![grasp_along(Vec3::new(1.0, 0.0, 1.0), 0.5)]);
        let f = DirectionFilter {
            axis: GripperAxis::Z,
            direction: Direction::Upward,
            center_deg: 30.0,
            tolerance_deg: Some(0.0),
        };
        assert!(grasp_candidates(&rec, &Pose::identity(), &[f]).unwrap().is_empty());
    }

    #[test]
    fn no_filters_sorts_by_score_stably() {
        let mut rec = box_record("b", "box");
        rec.grasp_candidates = Some(vec![
            grasp_along(Vec3::x(), 0.2),
            grasp_along(Vec3::y(), 0.9),
            grasp_along(Vec3::z(), 0.2),
        ]);
        let out = grasp_candidates(&rec, &Pose::identity(), &[]).unwrap();
        let scores: Vec<f64> = out.iter().map(|g| g.score).collect();
        assert_eq!(scores, vec![0.9, 0.2, 0.2]);
        assert_eq!(out[1].approach_axis, Vec3::x());
    }

    #[test]
    fn empty_annotations_are_an_error() {
        let rec = box_record("b", "box");
        assert_eq!(grasp_candidates(&rec, &Pose::identity(), &[]), Err(AssetError::NoCandidates));
    }

    #[test]
    fn select_single_candidate() {
        let c = vec![grasp_along(Vec3::z(), 1.0)];
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            assert_eq!(select_grasp(&c, 40, &mut rng).unwrap(), c[0]);
        }
    }

    #[test]
    fn replacement_excludes_and_falls_back() {
        let reg = AssetRegistry::from_records(vec![
            box_record("a", "plate"),
            box_record("b", "plate"),
            box_record("c", "plate"),
            box_record("solo", "cup"),
        ])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let r = sample_category_replacement(&reg, "plate", "a", &mut rng).unwrap();
            assert_ne!(r.name, "a");
        }
        assert_eq!(sample_category_replacement(&reg, "cup", "solo", &mut rng).unwrap().name, "solo");
        assert!(matches!(
            sample_category_replacement(&reg, "bowl", "x", &mut rng),
            Err(AssetError::UnknownCategory(_))
        ));
    }

    #[test]
    fn kind_specific_fields_are_enforced() {
        let mut rec = box_record("b", "box");
        rec.chains = Some(vec![]);
        assert!(matches!(
            AssetRegistry::from_records(vec![rec]),
            Err(AssetError::ManifestError { .. })
        ));
        let mut rec = box_record("b", "box");
        rec.grasp_candidates = None;
        assert!(AssetRegistry::from_records(vec![rec]).is_err());
    }

    #[test]
    fn duplicates_rejected() {
        let r = AssetRegistry::from_records(vec![box_record("p", "x"), box_record("p", "x")]);
        assert_eq!(r.unwrap_err(), AssetError::DuplicateAsset("p".into()));
    }

    #[test]
    fn revolute_part_transform_rotates_about_origin() {
        let j = JointAnnotation {
            joint_id: "door".into(),
            joint_type: JointType::Revolute,
            axis: Vec3::z(),
            origin: Vec3::new(1.0, 0.0, 0.0),
            limits: [0.0, 2.0],
            damping: 0.0,
            stiffness: 0.0,
            initial: 0.0,
        };
        let p = j.part_transform(std::f64::consts::FRAC_PI_2).transform_point(&Vec3::new(2.0, 0.0, 0.0));
        assert!((p - Vec3::new(1.0, 1.0, 0.0)).norm() < 1e-12);
    }
}
