//! Browser demo: scene sampling, inverse kinematics and frame previews on
//! the bundled fixture tasks.

use std::sync::Arc;

use nalgebra::{UnitQuaternion, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use synthline::assets::{AssetRecord, AssetRegistry};
use synthline::config::{expand_defaults_with, from_value};
use synthline::episode::TaskContext;
use synthline::geometry::Pose;
use synthline::kinematics::{solve_ik, IkOptions};
use synthline::planner::scene_at;
use synthline::render::{render_frame, Snapshot};
use wasm_bindgen::prelude::*;

const CONFIGS: &[(&str, &str)] = &[
    ("world.yaml", include_str!("../../../fixtures/configs/world.yaml")),
    ("logger.yaml", include_str!("../../../fixtures/configs/logger.yaml")),
    ("arenas/scene_arena.yaml", include_str!("../../../fixtures/configs/arenas/scene_arena.yaml")),
    ("cameras/astra.yaml", include_str!("../../../fixtures/configs/cameras/astra.yaml")),
    (
        "cameras/realsense_d455_v3.yaml",
        include_str!("../../../fixtures/configs/cameras/realsense_d455_v3.yaml"),
    ),
];

const TASKS: &[(&str, &str)] = &[
    ("sort_tray", include_str!("../../../fixtures/configs/tasks/sort_tray.yaml")),
    ("bench_reach", include_str!("../../../fixtures/configs/tasks/bench_reach.yaml")),
    ("close_microwave", include_str!("../../../fixtures/configs/tasks/close_microwave.yaml")),
];

const ASSETS: &[&str] = &[
    include_str!("../../../fixtures/assets/franka.asset.json"),
    include_str!("../../../fixtures/assets/microwave.asset.json"),
    include_str!("../../../fixtures/assets/plate_blue.asset.json"),
    include_str!("../../../fixtures/assets/plate_shelf.asset.json"),
    include_str!("../../../fixtures/assets/split_aloha.asset.json"),
];

/// Restarts allowed when the first IK seed does not converge.
const IK_RESTARTS: usize = 16;

/// Names of the bundled tasks.
#[wasm_bindgen]
pub fn task_names() -> Vec<String> {
    TASKS.iter().map(|(name, _)| name.to_string()).collect()
}

fn read_config(file: &str) -> Result<String, String> {
    let file = file.trim_start_matches("../");
    CONFIGS
        .iter()
        .find(|(name, _)| *name == file)
        .map(|(_, text)| text.to_string())
        .ok_or_else(|| format!("{file} is not bundled"))
}

fn registry() -> Result<AssetRegistry, String> {
    let records = ASSETS
        .iter()
        .map(|text| serde_json::from_str::<AssetRecord>(text).map_err(|e| e.to_string()))
        .collect::<Result<Vec<_>, _>>()?;
    AssetRegistry::from_records(records).map_err(|e| e.to_string())
}

/// Loads one of the bundled tasks with its includes resolved in memory.
pub fn load_task(name: &str) -> Result<TaskContext, String> {
    let (_, text) = TASKS.iter().find(|(n, _)| *n == name).ok_or_else(|| format!("unknown task {name:?}"))?;
    let doc: serde_yaml::Value = serde_yaml::from_str(text).map_err(|e| e.to_string())?;
    let expanded = expand_defaults_with(&doc, &read_config).map_err(|e| e.to_string())?;
    let cfg = from_value(&expanded).map_err(|e| e.to_string())?;
    TaskContext::new(cfg, Arc::new(registry()?)).map_err(|e| e.to_string())
}

/// RGBA pixels of one rendered frame.
#[wasm_bindgen]
pub struct Preview {
    width: u32,
    height: u32,
    rgba: Vec<u8>,
    frames: u32,
}

#[wasm_bindgen]
impl Preview {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> u32 {
        self.height
    }

    /// Frames in the planned episode.
    #[wasm_bindgen(getter)]
    pub fn frames(&self) -> u32 {
        self.frames
    }

    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }
}

#[wasm_bindgen]
pub struct Demo {
    ctx: TaskContext,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(task: &str) -> Result<Demo, String> {
        Ok(Demo { ctx: load_task(task)? })
    }

    /// Object positions of `count` sampled scenes, as JSON:
    /// `{table: {min, max}, episodes: [{episode, objects: [{name, asset, x, y, z, yaw_deg}]}]}`.
    pub fn layouts(&self, seed: u32, count: u32) -> Result<String, String> {
        let mut episodes = Vec::new();
        for episode in 0..count as u64 {
            let sample = self.ctx.sample_scene(seed as u64, episode).map_err(|e| e.to_string())?;
            let objects: Vec<Value> = sample
                .state
                .objects
                .iter()
                .map(|o| {
                    let t = o.pose.translation;
                    let (_, _, yaw) = o.pose.rotation.euler_angles();
                    json!({"name": o.name, "asset": o.asset, "x": t.x, "y": t.y, "z": t.z, "yaw_deg": yaw.to_degrees()})
                })
                .collect();
            episodes.push(json!({"episode": episode, "objects": objects}));
        }
        let table = &self.ctx.table;
        Ok(json!({
            "table": {"min": [table.min.x, table.min.y], "max": [table.max.x, table.max.y]},
            "episodes": episodes,
        })
        .to_string())
    }

    /// Arms in scene order with their home gripper positions, as JSON:
    /// `[{name, home: [x, y, z]}]`.
    pub fn arms(&self) -> Result<String, String> {
        let sample = self.ctx.sample_scene(0, 0).map_err(|e| e.to_string())?;
        let arms: Vec<Value> = sample
            .state
            .arms
            .iter()
            .map(|a| {
                let t = a.ee.translation;
                json!({"name": a.key.to_string(), "home": [t.x, t.y, t.z]})
            })
            .collect();
        Ok(json!(arms).to_string())
    }

    /// Solves for a world-frame gripper position with the gripper pointing
    /// down, starting from the arm's home pose. Returns JSON with the joint
    /// values and residuals, or the failure reason.
    pub fn solve_ik(&self, arm: usize, x: f64, y: f64, z: f64, position_only: bool) -> Result<String, String> {
        let sample = self.ctx.sample_scene(0, 0).map_err(|e| e.to_string())?;
        let state = sample.state.arms.get(arm).ok_or_else(|| format!("no arm {arm}"))?;
        let down = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI);
        let target = Pose::new(Vector3::new(x, y, z), down);
        let mut opts = IkOptions::default();
        if position_only {
            opts.orientation_weight = 0.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = match solve_ik(&state.model, &target, &state.home, &opts, IK_RESTARTS, &mut rng) {
            Ok(sol) => {
                let ee = state.model.fk(&sol.q).map_err(|e| e.to_string())?;
                json!({
                    "ok": true,
                    "q": sol.q,
                    "position_error": sol.pos_err,
                    "orientation_error_deg": sol.ori_err.to_degrees(),
                    "iterations": sol.iterations,
                    "ee": [ee.translation.x, ee.translation.y, ee.translation.z],
                })
            }
            Err(e) => json!({"ok": false, "error": e.to_string()}),
        };
        Ok(out.to_string())
    }

    /// Plans episode `episode` and renders camera `camera` at fraction `t`
    /// (0 to 1) of the trajectory.
    pub fn preview(&self, seed: u32, episode: u32, camera: usize, t: f64) -> Result<Preview, String> {
        let planned = self.ctx.plan(seed as u64, episode as u64).map_err(|e| e.to_string())?;
        let plan = planned.plan.as_ref().map_err(|e| e.to_string())?;
        let rig = planned.scene.cameras.get(camera).ok_or_else(|| format!("no camera {camera}"))?;
        let frames = plan.len();
        let k = ((t.clamp(0.0, 1.0) * frames.saturating_sub(1) as f64).round() as usize).min(frames.saturating_sub(1));
        let state = scene_at(plan, &planned.scene.state, k);
        let image = render_frame(&Snapshot::of(&state), &rig.world_pose(&state), &rig.intrinsics, &planned.scene.lighting);
        let rgba = image.pixels.chunks(3).flat_map(|p| [p[0], p[1], p[2], 255]).collect();
        Ok(Preview {
            width: image.width,
            height: image.height,
            rgba,
            frames: frames as u32,
        })
    }

    /// Camera names of the task, as a JSON array.
    pub fn cameras(&self) -> String {
        json!(self.ctx.cfg.cameras.iter().map(|c| c.name.clone()).collect::<Vec<_>>()).to_string()
    }
}
