//! One episode end to end: randomized scene construction, skill compilation,
//! planning and validation for a task loaded from disk.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::assets::{load_registry, sample_category_replacement, AssetError, AssetKind, AssetRecord, AssetRegistry, FrameRef};
use crate::config::{
    load_task_config, resolve_references, validate_config, CameraSpec, ConfigError, Finding, Intrinsics, TaskConfig,
    TargetClass, Value,
};
use crate::geometry::{euler_xyz_deg, Aabb, Pose, Vec3};
use crate::kinematics::Arm;
use crate::planner::{plan_episode, simulate_validation, PlanResult, PlannerParams, ValidationOutcome};
use crate::randomize::{perturb_camera, sample_env_map, sample_home_config, sample_region_pose, substream, Lighting, LIBRARY_SIZE};
use crate::scene::{ArmKey, ArmState, ObjectState, RobotState, SceneState, TABLE};
use crate::skills::{compile_skills, SkillError, SkillPlan};

/// Table slab used when the arena does not define `table`.
pub fn default_table() -> Aabb {
    Aabb::new(Vec3::new(-0.6, -0.45, -0.04), Vec3::new(0.6, 0.45, 0.0))
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EpisodeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Asset(#[from] AssetError),
    #[error("invalid config: {}", .0.iter().map(|f| f.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Finding>),
    #[error("scene: {0}")]
    Scene(String),
}

/// Where a camera is mounted.
#[derive(Debug, Clone, PartialEq)]
pub enum Mount {
    World,
    Object(String),
    Robot { robot: String, frame: FrameRef },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraRig {
    pub name: String,
    pub mount: Mount,
    /// Camera pose in the mount frame after randomization.
    pub local: Pose,
    pub intrinsics: Intrinsics,
}

impl CameraRig {
    /// World pose of the camera in `scene` (looking along -Z, +Y up).
    pub fn world_pose(&self, scene: &SceneState) -> Pose {
        let mount = match &self.mount {
            Mount::World => Pose::identity(),
            Mount::Object(name) => scene.object(name).map_or(Pose::identity(), |o| o.pose),
            Mount::Robot { robot, frame } => {
                let base = scene.robot(robot).map_or(Pose::identity(), |r| r.base);
                match frame.arm {
                    None => base.compose(&frame.offset),
                    Some(side) => scene
                        .arm(&ArmKey::new(robot, side))
                        .and_then(|a| a.model.frames(&a.q).ok())
                        .and_then(|f| f.get(frame.link).copied())
                        .map_or(base, |f| f.compose(&frame.offset)),
                }
            }
        };
        mount.compose(&self.local)
    }
}

/// Everything drawn at random for one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    pub state: SceneState,
    pub lighting: Lighting,
    pub cameras: Vec<CameraRig>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlannedEpisode {
    pub index: u64,
    pub seed: u64,
    pub scene: SceneSample,
    pub plan: Result<PlanResult, SkillError>,
    pub validation: Option<ValidationOutcome>,
    /// Skill and plan samplings tried, the last one being kept.
    pub attempts: usize,
}

impl PlannedEpisode {
    pub fn plan_ok(&self) -> bool {
        self.plan.as_ref().is_ok_and(|p| p.is_success())
    }

    pub fn is_valid(&self) -> bool {
        self.plan_ok() && self.validation.as_ref().is_some_and(|v| v.is_valid())
    }

    /// Short failure reason, or `None` for a valid episode.
    pub fn failure(&self) -> Option<String> {
        match &self.plan {
            Err(e) => Some(format!("compile: {e}")),
            Ok(p) if !p.is_success() => Some(match &p.failure {
                Some(f) => format!("{}: step {} {} waypoint {}: {}", p.status.as_str(), f.step, f.arm, f.waypoint, f.detail),
                None => p.status.as_str().to_string(),
            }),
            Ok(_) => match &self.validation {
                Some(v) if !v.is_valid() => Some(format!("validation: {}", v.issues[0].detail)),
                _ => None,
            },
        }
    }
}

/// Summary of the draws that made an episode, stored with its metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub objects: Vec<ObjectMeta>,
    pub robots: Vec<RobotMeta>,
    pub lighting: Lighting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectMeta {
    pub name: String,
    pub asset: String,
    pub pose: Pose,
    pub joint_values: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotMeta {
    pub name: String,
    pub embodiment: String,
    pub base: Pose,
    pub home: BTreeMap<String, Vec<f64>>,
}

impl SceneSample {
    pub fn meta(&self) -> SceneMeta {
        SceneMeta {
            objects: self
                .state
                .objects
                .iter()
                .map(|o| ObjectMeta {
                    name: o.name.clone(),
                    asset: o.asset.clone(),
                    pose: o.pose,
                    joint_values: o.joints.iter().map(|j| (j.joint_id.clone(), o.joint_value(&j.joint_id))).collect(),
                })
                .collect(),
            robots: self
                .state
                .robots
                .iter()
                .map(|r| RobotMeta {
                    name: r.name.clone(),
                    embodiment: r.embodiment.clone(),
                    base: r.base,
                    home: self
                        .state
                        .arms
                        .iter()
                        .filter(|a| a.key.robot == r.name)
                        .map(|a| (a.key.arm.to_string(), a.home.clone()))
                        .collect(),
                })
                .collect(),
            lighting: self.lighting,
        }
    }
}

/// A validated task with its registry, ready to produce episodes.
pub const DEFAULT_ATTEMPTS: usize = 8;

#[derive(Debug, Clone)]
pub struct TaskContext {
    pub cfg: TaskConfig,
    pub registry: Arc<AssetRegistry>,
    pub table: Aabb,
    pub params: PlannerParams,
    /// Grasp and IK resamplings per episode before it counts as failed.
    pub attempts: usize,
}

impl TaskContext {
    /// Loads, resolves and validates a task document against an asset directory.
    pub fn load(config: &Path, config_root: Option<&Path>, assets: &Path) -> Result<Self, EpisodeError> {
        let registry = load_registry(assets)?;
        let root: Option<PathBuf> = config_root.map(Path::to_path_buf);
        let cfg = load_task_config(config, root.as_deref())?;
        Self::new(cfg, Arc::new(registry))
    }

    pub fn new(cfg: TaskConfig, registry: Arc<AssetRegistry>) -> Result<Self, EpisodeError> {
        let cfg = resolve_references(&cfg)?;
        let report = validate_config(&cfg, &registry);
        if !report.is_valid() {
            return Err(EpisodeError::Invalid(report.findings));
        }
        let table = arena_table(&cfg).unwrap_or_else(default_table);
        Ok(TaskContext {
            cfg,
            registry,
            table,
            params: PlannerParams::default(),
            attempts: DEFAULT_ATTEMPTS,
        })
    }

    pub fn fps(&self) -> f64 {
        1.0 / self.params.dt
    }

    /// Draws the scene for `(seed, episode)`.
    pub fn sample_scene(&self, seed: u64, episode: u64) -> Result<SceneSample, EpisodeError> {
        let cfg = &self.cfg;
        let reg = &self.registry;
        let mut placed: BTreeMap<String, Pose> = BTreeMap::new();
        let mut state = SceneState {
            objects: Vec::new(),
            robots: Vec::new(),
            arms: Vec::new(),
            table: self.table,
        };

        let region_pose = |name: &str, placed: &BTreeMap<String, Pose>, state: &SceneState| -> Result<Pose, EpisodeError> {
            let Some((i, region)) = cfg.regions.iter().enumerate().find(|(_, r)| r.object == name) else {
                return Ok(Pose::identity());
            };
            let target = if region.target == TABLE || region.target == "world" {
                Pose::identity()
            } else if let Some(o) = state.object(&region.target) {
                let b = o.world_aabb();
                let c = b.center();
                Pose::from_translation(Vec3::new(c.x, c.y, b.max.z))
            } else if let Some(p) = placed.get(&region.target) {
                *p
            } else {
                return Err(EpisodeError::Scene(format!("region target `{}` is not placed before `{name}`", region.target)));
            };
            let mut rng = substream(seed, episode, &format!("region/{i}"));
            Ok(target.compose(&sample_region_pose(region, &mut rng)))
        };

        for r in &cfg.robots {
            let asset = reg
                .resolve(&r.embodiment_id)
                .ok_or_else(|| AssetError::UnknownAsset(r.embodiment_id.clone()))?;
            let base = region_pose(&r.name, &placed, &state)?.compose(&Pose::from_rotation(euler_xyz_deg(r.euler_deg)));
            placed.insert(r.name.clone(), base);
            state.robots.push(RobotState {
                name: r.name.clone(),
                embodiment: asset.name.clone(),
                base,
            });
            for chain in asset.chains() {
                let side = chain.arm_id;
                let limits = chain.limits();
                let home = match r.home(side) {
                    Some(h) => {
                        let mut rng = substream(seed, episode, &format!("home/{}/{}", r.name, side));
                        sample_home_config(&h.mean, &h.std, &limits, &mut rng).map_err(|e| EpisodeError::Scene(e.to_string()))?
                    }
                    None => limits.iter().map(|[lo, hi]| 0.0f64.clamp(*lo, *hi)).collect(),
                };
                let model = Arm::new(chain.clone(), &base);
                let ee = model.fk(&home).map_err(|e| EpisodeError::Scene(e.to_string()))?;
                state.arms.push(ArmState {
                    key: ArmKey::new(&r.name, side),
                    model,
                    q: home.clone(),
                    home,
                    ee,
                    gripper_closed: false,
                    attached: None,
                });
            }
        }

        for o in &cfg.objects {
            let nominal = o
                .asset_path
                .as_deref()
                .and_then(|p| reg.resolve(p))
                .or_else(|| o.category.as_deref().and_then(|c| reg.category_members(c).into_iter().next()))
                .ok_or_else(|| AssetError::UnknownAsset(o.asset_path.clone().unwrap_or_default()))?;
            let asset: &AssetRecord = match (&o.category, o.apply_randomization, o.target_class) {
                (Some(cat), true, TargetClass::Rigid) if nominal.kind == AssetKind::Rigid => {
                    let mut rng = substream(seed, episode, &format!("replace/{}", o.name));
                    sample_category_replacement(reg, cat, &nominal.name, &mut rng).unwrap_or(nominal)
                }
                _ => nominal,
            };
            let local = Pose::new(Vec3::from(o.translation), euler_xyz_deg(o.euler_deg));
            let pose = region_pose(&o.name, &placed, &state)?.compose(&local);
            placed.insert(o.name.clone(), pose);
            let scale = Vec3::from(o.scale);
            let b = asset.bounding_box;
            let bbox = Aabb::new(b.min.component_mul(&scale), b.max.component_mul(&scale));
            let mut joint_values = BTreeMap::new();
            if let Some(Value::Mapping(m)) = o.extras.get("joint_positions") {
                for (k, v) in m {
                    if let (Some(k), Some(v)) = (k.as_str(), v.as_f64()) {
                        joint_values.insert(k.to_string(), v);
                    }
                }
            }
            state.objects.push(ObjectState {
                name: o.name.clone(),
                asset: asset.name.clone(),
                kind: asset.kind,
                pose,
                bbox,
                scale,
                joints: asset.joints.clone().unwrap_or_default(),
                parts: asset.parts.clone().unwrap_or_default(),
                joint_values,
            });
        }

        let lighting = sample_env_map(&cfg.env_map, LIBRARY_SIZE, &mut substream(seed, episode, "env_map"));
        let cameras = cfg
            .cameras
            .iter()
            .map(|c| self.rig(c, &state, seed, episode))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(SceneSample {
            state,
            lighting,
            cameras,
        })
    }

    fn rig(&self, c: &CameraSpec, state: &SceneState, seed: u64, episode: u64) -> Result<CameraRig, EpisodeError> {
        let intrinsics = c
            .params
            .intrinsics()
            .cloned()
            .ok_or_else(|| EpisodeError::Scene(format!("camera `{}` has unresolved intrinsics", c.name)))?;
        let mount = if c.parent == TABLE || c.parent == "world" {
            Mount::World
        } else if state.object(&c.parent).is_some() {
            Mount::Object(c.parent.clone())
        } else {
            let robot = c.parent.split('/').next().unwrap_or_default();
            let r = state
                .robot(robot)
                .ok_or_else(|| EpisodeError::Scene(format!("camera `{}` parent `{}` not found", c.name, c.parent)))?;
            let frame = self
                .registry
                .get(&r.embodiment)
                .and_then(|a| a.frame(&c.parent))
                .cloned()
                .ok_or_else(|| EpisodeError::Scene(format!("camera `{}` frame `{}` not found", c.name, c.parent)))?;
            Mount::Robot {
                robot: robot.to_string(),
                frame,
            }
        };
        let local = perturb_camera(c, &mut substream(seed, episode, &format!("camera/{}", c.name)));
        Ok(CameraRig {
            name: c.name.clone(),
            mount,
            local,
            intrinsics,
        })
    }

    /// Compiles the skill program against a sampled scene.
    pub fn compile(&self, scene: &SceneSample, seed: u64, episode: u64, attempt: usize) -> Result<SkillPlan, SkillError> {
        compile_skills(&self.cfg, &scene.state, &self.registry, &mut substream(seed, episode, &attempt_tag("skills", attempt)))
    }

    /// Samples, compiles, plans and validates episode `episode`. Skills and
    /// IK are resampled until a plan validates or the attempts run out.
    pub fn plan(&self, seed: u64, episode: u64) -> Result<PlannedEpisode, EpisodeError> {
        let scene = self.sample_scene(seed, episode)?;
        let mut attempt = 0;
        loop {
            let plan = self.compile(&scene, seed, episode, attempt).map(|p| {
                let mut rng = substream(seed, episode, &attempt_tag("ik", attempt));
                plan_episode(&p, &scene.state, &self.params, &mut rng)
            });
            let validation = match &plan {
                Ok(p) if p.is_success() => Some(self.validate(p, &scene)),
                _ => None,
            };
            attempt += 1;
            let done = validation.as_ref().is_some_and(|v| v.is_valid());
            if done || attempt >= self.attempts.max(1) {
                return Ok(PlannedEpisode {
                    index: episode,
                    seed,
                    scene,
                    plan,
                    validation,
                    attempts: attempt,
                });
            }
        }
    }

    fn validate(&self, p: &PlanResult, scene: &SceneSample) -> ValidationOutcome {
        let mut v = simulate_validation(p, &scene.state);
        let max = self.cfg.data.max_episode_length as usize;
        if p.len() > max {
            v.issues.push(crate::planner::ValidationIssue {
                kind: crate::planner::IssueKind::Goal,
                sample: None,
                detail: format!("{} frames exceed max_episode_length {max}", p.len()),
            });
        }
        v
    }
}

fn attempt_tag(base: &str, attempt: usize) -> String {
    if attempt == 0 {
        base.to_string()
    } else {
        format!("{base}/{attempt}")
    }
}

fn arena_table(cfg: &TaskConfig) -> Option<Aabb> {
    let t = cfg.extras.get("arena")?.get("table")?;
    let v = |k: &str| -> Option<Vec3> {
        let s = t.get(k)?.as_sequence()?;
        if s.len() != 3 {
            return None;
        }
        Some(Vec3::new(s[0].as_f64()?, s[1].as_f64()?, s[2].as_f64()?))
    };
    Some(Aabb::new(v("min")?, v("max")?))
}
