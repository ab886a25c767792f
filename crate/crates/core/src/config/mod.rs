//! Task configuration documents.
//!
//! A task document is a strict YAML subset (maps, sequences, scalars). Parsing
//! produces a [`TaskConfig`] with `${path}` placeholders left in place; keys the
//! schema does not know are kept in per-level `extras` maps so that a document
//! survives a parse/serialize round trip.

mod emit;
mod include;
mod parse;
mod resolve;
mod validate;

use std::fmt;

pub use emit::{serialize_config, to_value};
pub use include::{expand_defaults, expand_defaults_with, load_task_config};
pub use parse::{from_value, parse_task_config};
pub use resolve::resolve_references;
pub use validate::{validate_config, Finding, ValidationReport};

use serde::{Deserialize, Serialize};

use crate::geometry::Direction;

pub type Mapping = serde_yaml::Mapping;
pub type Value = serde_yaml::Value;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema error at {path}: expected {expected}, found {found}")]
    Schema {
        path: String,
        expected: String,
        found: String,
    },
    #[error("unresolved reference ${{{0}}}")]
    UnresolvedReference(String),
    #[error("include `{entry}`: {detail}")]
    Include { entry: String, detail: String },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
}

impl ConfigError {
    pub(crate) fn schema(path: impl Into<String>, expected: impl Into<String>, found: impl Into<String>) -> Self {
        ConfigError::Schema {
            path: path.into(),
            expected: expected.into(),
            found: found.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArmSide {
    Left,
    Right,
}

impl ArmSide {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "left" => Some(ArmSide::Left),
            "right" => Some(ArmSide::Right),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ArmSide::Left => "left",
            ArmSide::Right => "right",
        }
    }
}

impl fmt::Display for ArmSide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskConfig {
    pub name: String,
    pub task_id: u64,
    pub env_map: EnvMapSpec,
    pub robots: Vec<RobotSpec>,
    pub objects: Vec<ObjectSpec>,
    pub regions: Vec<RegionSpec>,
    pub cameras: Vec<CameraSpec>,
    pub skills: Vec<SkillBlock>,
    pub data: DataSpec,
    pub extras: Mapping,
}

impl TaskConfig {
    pub fn robot(&self, name: &str) -> Option<&RobotSpec> {
        self.robots.iter().find(|r| r.name == name)
    }

    pub fn object(&self, name: &str) -> Option<&ObjectSpec> {
        self.objects.iter().find(|o| o.name == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvMapSpec {
    pub library_id: String,
    pub apply_randomization: bool,
    pub intensity_range: [f64; 2],
    pub rotation_range: [f64; 2],
    pub extras: Mapping,
}

impl Default for EnvMapSpec {
    fn default() -> Self {
        Self {
            library_id: "envmap_lib".into(),
            apply_randomization: false,
            intensity_range: [5000.0, 5000.0],
            rotation_range: [0.0, 0.0],
            extras: Mapping::new(),
        }
    }
}

/// Per-arm home configuration: mean joint vector and per-joint sampling std-dev.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmHome {
    pub arm: ArmSide,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotSpec {
    pub name: String,
    /// Opaque registry key of the embodiment (the `path` key in documents).
    pub embodiment_id: String,
    pub euler_deg: [f64; 3],
    pub homes: Vec<ArmHome>,
    pub extras: Mapping,
}

impl RobotSpec {
    pub fn home(&self, arm: ArmSide) -> Option<&ArmHome> {
        self.homes.iter().find(|h| h.arm == arm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetClass {
    Rigid,
    Articulated,
}

impl TargetClass {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "RigidObject" | "rigid" => Some(TargetClass::Rigid),
            "ArticulatedObject" | "articulated" => Some(TargetClass::Articulated),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            TargetClass::Rigid => "RigidObject",
            TargetClass::Articulated => "ArticulatedObject",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectSpec {
    pub name: String,
    pub asset_path: Option<String>,
    pub category: Option<String>,
    pub target_class: TargetClass,
    pub translation: [f64; 3],
    pub euler_deg: [f64; 3],
    pub scale: [f64; 3],
    pub apply_randomization: bool,
    pub extras: Mapping,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionSpec {
    pub object: String,
    pub target: String,
    pub random_type: String,
    pub pos_range: [[f64; 3]; 2],
    pub yaw_range: [f64; 2],
    pub extras: Mapping,
    pub random_config_extras: Mapping,
}

pub const A_ON_B_SAMPLER: &str = "A_on_B_region_sampler";

#[derive(Debug, Clone, PartialEq)]
pub struct Intrinsics {
    pub width: u32,
    pub height: u32,
    pub focal: f64,
    pub extras: Mapping,
}

/// Camera intrinsics, either inline or as an unresolved `${...}` reference.
#[derive(Debug, Clone, PartialEq)]
pub enum CameraParams {
    Reference(String),
    Inline(Intrinsics),
}

impl CameraParams {
    pub fn intrinsics(&self) -> Option<&Intrinsics> {
        match self {
            CameraParams::Inline(i) => Some(i),
            CameraParams::Reference(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraSpec {
    pub name: String,
    pub translation: [f64; 3],
    /// Raw `[w, x, y, z]` as written; normalized when turned into a rotation.
    pub orientation: [f64; 4],
    pub parent: String,
    pub params: CameraParams,
    pub apply_randomization: bool,
    pub max_translation_noise: f64,
    pub max_orientation_noise: f64,
    pub extras: Mapping,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSpec {
    pub save_root_path: String,
    pub task_dir: String,
    pub language_instruction: String,
    pub detailed_language_instruction: String,
    pub version: String,
    pub max_episode_length: u32,
    pub extras: Mapping,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self {
            save_root_path: String::new(),
            task_dir: String::new(),
            language_instruction: String::new(),
            detailed_language_instruction: String::new(),
            version: String::new(),
            max_episode_length: 4000,
            extras: Mapping::new(),
        }
    }
}

/// One robot's skill program: ordered steps, each mapping arms to skill lists.
#[derive(Debug, Clone, PartialEq)]
pub struct SkillBlock {
    pub robot: String,
    pub steps: Vec<SkillStep>,
}

/// Arms listed in one step run in parallel and meet at a barrier afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct SkillStep {
    pub arms: Vec<(ArmSide, Vec<SkillSpec>)>,
}

impl SkillStep {
    pub fn is_parallel(&self) -> bool {
        self.arms.len() > 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GripperAxis {
    X,
    Y,
    Z,
}

impl GripperAxis {
    pub fn index(&self) -> usize {
        match self {
            GripperAxis::X => 0,
            GripperAxis::Y => 1,
            GripperAxis::Z => 2,
        }
    }

    pub fn key(&self) -> &'static str {
        match self {
            GripperAxis::X => "filter_x_dir",
            GripperAxis::Y => "filter_y_dir",
            GripperAxis::Z => "filter_z_dir",
        }
    }
}

/// Cone constraint on one gripper axis against a named world direction.
///
/// `[dir, c]` accepts angles in `[0, c]`; `[dir, c, t]` accepts `[c - t, c + t] ∩ [0, 180]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectionFilter {
    pub axis: GripperAxis,
    pub direction: Direction,
    pub center_deg: f64,
    pub tolerance_deg: Option<f64>,
}

impl DirectionFilter {
    pub fn envelope(&self) -> (f64, f64) {
        match self.tolerance_deg {
            None => (0.0, self.center_deg.min(180.0)),
            Some(t) => (
                (self.center_deg - t).max(0.0),
                (self.center_deg + t).min(180.0),
            ),
        }
    }

    pub fn accepts_angle(&self, angle_deg: f64) -> bool {
        let (lo, hi) = self.envelope();
        angle_deg >= lo && angle_deg <= hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GripperCommand {
    Open,
    Close,
    Hold,
}

impl GripperCommand {
    pub fn as_str(&self) -> &'static str {
        match self {
            GripperCommand::Open => "open",
            GripperCommand::Close => "close",
            GripperCommand::Hold => "hold",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PickSpec {
    pub object: String,
    pub filters: Vec<DirectionFilter>,
    pub t_eps: f64,
    pub o_eps_deg: f64,
    pub close_wait_steps: u32,
    pub post_grasp_offset: [f64; 2],
    pub direction_to_obj: Option<Direction>,
    pub extras: Mapping,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlaceSpec {
    pub object: String,
    pub container: String,
    pub place_direction: Option<String>,
    pub filters: Vec<DirectionFilter>,
    pub position_constraint: Option<String>,
    pub x_ratio_range: [f64; 2],
    pub y_ratio_range: [f64; 2],
    pub align_pick_obj_axis: Option<[f64; 3]>,
    pub align_place_obj_axis: Option<[f64; 3]>,
    pub align_obj_tol_deg: f64,
    pub pre_place_z_offset: f64,
    pub place_z_offset: f64,
    pub t_eps: f64,
    pub o_eps_deg: f64,
    pub extras: Mapping,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PushSpec {
    pub object: String,
    pub joint: String,
    /// Goal joint displacement (radians for revolute, meters for prismatic).
    pub delta: f64,
    /// Sampling-radius multiplier applied to the annotated contact region.
    pub expansion: f64,
    pub t_eps: f64,
    pub o_eps_deg: f64,
    pub extras: Mapping,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GotoSpec {
    pub frame: String,
    pub gripper: GripperCommand,
    pub translation: [f64; 3],
    pub quaternion: [f64; 4],
    pub extras: Mapping,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GripperAction {
    Open,
    Close,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GripperActionSpec {
    pub action: GripperAction,
    pub dwell_steps: Option<u32>,
    pub extras: Mapping,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SkillSpec {
    Pick(PickSpec),
    Place(PlaceSpec),
    Push(PushSpec),
    GotoPose(GotoSpec),
    GripperAction(GripperActionSpec),
    Home { extras: Mapping },
}

impl SkillSpec {
    pub const NAMES: [&'static str; 6] = ["pick", "place", "push", "goto__pose", "gripper__action", "home"];

    pub fn name(&self) -> &'static str {
        match self {
            SkillSpec::Pick(_) => "pick",
            SkillSpec::Place(_) => "place",
            SkillSpec::Push(_) => "push",
            SkillSpec::GotoPose(_) => "goto__pose",
            SkillSpec::GripperAction(_) => "gripper__action",
            SkillSpec::Home { .. } => "home",
        }
    }

    /// Objects this skill refers to by name.
    pub fn objects(&self) -> Vec<&str> {
        match self {
            SkillSpec::Pick(p) => vec![p.object.as_str()],
            SkillSpec::Place(p) => vec![p.object.as_str(), p.container.as_str()],
            SkillSpec::Push(p) => vec![p.object.as_str()],
            _ => vec![],
        }
    }
}
