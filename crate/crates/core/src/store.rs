//! Episode store: one directory per episode holding a frame table, metadata
//! and PNG frames per camera, plus store-level info, statistics and checks.
//!
//! Layout:
//! `meta/info.json`, `episodes/ep_<index:06>/{frames.csv, meta.json}` and
//! `episodes/ep_<index:06>/<camera>/frame_<t:06>.png`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::episode::{PlannedEpisode, SceneMeta, TaskContext};
use crate::geometry::Pose;
use crate::render::RenderedEpisode;

pub const INFO_FILE: &str = "meta/info.json";
pub const EPISODES_DIR: &str = "episodes";
pub const FRAMES_FILE: &str = "frames.csv";
pub const META_FILE: &str = "meta.json";
pub const CODEBASE_VERSION: &str = "synthline/1";
/// Feature names kept free for channels this store never writes.
pub const RESERVED_FEATURES: [&str; 2] = ["depth", "bbox"];
const TMP_PREFIX: &str = ".tmp-";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("episode {0} already exists")]
    AlreadyExists(u64),
    #[error("episode {0} not found")]
    NotFound(u64),
    #[error("episode {episode} is corrupt: {detail}")]
    CorruptEpisode { episode: u64, detail: String },
    #[error("{path}: {detail}")]
    Io { path: String, detail: String },
    #[error("invalid episode: {0}")]
    Invalid(String),
}

fn io_err(path: &Path, e: impl fmt::Display) -> StoreError {
    StoreError::Io {
        path: path.display().to_string(),
        detail: e.to_string(),
    }
}

/// Rounds to the 9 significant digits the frame table keeps.
pub fn quantize(v: f64) -> f64 {
    fmt_float(v).parse().expect("formatted float parses")
}

fn fmt_float(v: f64) -> String {
    format!("{v:.8e}")
}

fn pose7(p: &Pose) -> [f64; 7] {
    let t = p.translation;
    let [w, x, y, z] = p.wxyz();
    [t.x, t.y, t.z, w, x, y, z].map(quantize)
}

/// JSON with keys sorted at every level.
fn sorted_json<T: Serialize>(v: &T) -> String {
    let value = serde_json::to_value(v).expect("serializable");
    let mut s = serde_json::to_string_pretty(&value).expect("serializable");
    s.push('\n');
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmColumns {
    pub name: String,
    pub joints: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraMeta {
    pub name: String,
    pub width: u32,
    pub height: u32,
    pub focal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub episode_index: u64,
    pub task: String,
    pub language_instruction: String,
    pub detailed_language_instruction: String,
    pub fps: f64,
    pub seed: u64,
    pub length: usize,
    pub max_episode_length: usize,
    pub arms: Vec<ArmColumns>,
    pub cameras: Vec<CameraMeta>,
    pub scene: SceneMeta,
    pub attempts: usize,
    pub valid: bool,
}

impl EpisodeMeta {
    /// Frame table header, in column order.
    pub fn columns(&self) -> Vec<String> {
        let mut c = vec!["frame_index".to_string(), "timestamp".to_string()];
        for a in &self.arms {
            c.extend((0..a.joints).map(|j| format!("{}.q{j}", a.name)));
        }
        for a in &self.arms {
            c.extend((0..a.joints).map(|j| format!("{}.action{j}", a.name)));
        }
        for a in &self.arms {
            c.push(format!("{}.gripper", a.name));
        }
        let pose = ["tx", "ty", "tz", "qw", "qx", "qy", "qz"];
        for a in &self.arms {
            c.extend(pose.iter().map(|k| format!("{}.ee.{k}", a.name)));
        }
        for cam in &self.cameras {
            c.extend(pose.iter().map(|k| format!("camera.{}.{k}", cam.name)));
        }
        c
    }
}

/// One row of the frame table. Poses are `[tx, ty, tz, qw, qx, qy, qz]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRow {
    pub timestamp: f64,
    pub state: Vec<Vec<f64>>,
    /// Joint target for the next step.
    pub action: Vec<Vec<f64>>,
    /// 1 closed, 0 open.
    pub gripper: Vec<f64>,
    pub ee: Vec<[f64; 7]>,
    pub cameras: Vec<[f64; 7]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub meta: EpisodeMeta,
    pub frames: Vec<FrameRow>,
    /// Encoded PNG frames, `[camera][t]` in `meta.cameras` order.
    pub images: Vec<Vec<Vec<u8>>>,
}

fn task_name(ctx: &TaskContext) -> String {
    if ctx.cfg.data.task_dir.is_empty() {
        ctx.cfg.name.clone()
    } else {
        ctx.cfg.data.task_dir.clone()
    }
}

impl EpisodeRecord {
    /// Assembles the record for a planned and rendered episode. Every float is
    /// rounded to the stored precision, so writing and reading it back is exact.
    pub fn build(ctx: &TaskContext, ep: &PlannedEpisode, rendered: &RenderedEpisode) -> Result<Self, StoreError> {
        let plan = match &ep.plan {
            Ok(p) if p.is_success() => p,
            _ => return Err(StoreError::Invalid(format!("episode {} has no successful plan", ep.index))),
        };
        let t_len = plan.len();
        if t_len == 0 {
            return Err(StoreError::Invalid("episode has no frames".into()));
        }
        let fps = quantize(ctx.fps());
        let arms: Vec<ArmColumns> = plan
            .arms
            .iter()
            .map(|a| ArmColumns {
                name: a.arm.to_string(),
                joints: a.samples.first().map_or(0, |q| q.len()),
            })
            .collect();
        let cameras: Vec<CameraMeta> = rendered
            .cameras
            .iter()
            .map(|c| CameraMeta {
                name: c.name.clone(),
                width: c.intrinsics.width,
                height: c.intrinsics.height,
                focal: quantize(c.intrinsics.focal),
            })
            .collect();
        let models: Vec<_> = plan.arms.iter().map(|a| ep.scene.state.arm(&a.arm).map(|s| &s.model)).collect();
        let state_at = |k: usize| -> Vec<Vec<f64>> {
            plan.arms.iter().map(|a| a.samples[k].iter().map(|v| quantize(*v)).collect()).collect()
        };
        let mut frames = Vec::with_capacity(t_len);
        for k in 0..t_len {
            let ee = plan
                .arms
                .iter()
                .zip(&models)
                .map(|(a, m)| m.and_then(|m| m.fk(&a.samples[k]).ok()).map_or([0.0; 7], |p| pose7(&p)))
                .collect();
            frames.push(FrameRow {
                timestamp: quantize(k as f64 / fps),
                state: state_at(k),
                action: state_at((k + 1).min(t_len - 1)),
                gripper: plan.arms.iter().map(|a| if a.gripper_closed[k] { 1.0 } else { 0.0 }).collect(),
                ee,
                cameras: rendered.cameras.iter().map(|c| pose7(&c.poses[k])).collect(),
            });
        }
        let images = rendered
            .cameras
            .iter()
            .map(|c| c.frames.iter().map(|f| f.encode_png()).collect())
            .collect();
        Ok(EpisodeRecord {
            meta: EpisodeMeta {
                episode_index: ep.index,
                task: task_name(ctx),
                language_instruction: ctx.cfg.data.language_instruction.clone(),
                detailed_language_instruction: ctx.cfg.data.detailed_language_instruction.clone(),
                fps,
                seed: ep.seed,
                length: t_len,
                max_episode_length: ctx.cfg.data.max_episode_length as usize,
                arms,
                cameras,
                scene: ep.scene.meta(),
                attempts: ep.attempts,
                valid: ep.is_valid(),
            },
            frames,
            images,
        })
    }

    /// Checks the record's own invariants before it is written.
    pub fn check(&self) -> Result<(), StoreError> {
        let m = &self.meta;
        if self.frames.is_empty() {
            return Err(StoreError::Invalid("episode has no frames".into()));
        }
        if self.frames.len() != m.length {
            return Err(StoreError::Invalid(format!("{} frames, meta says {}", self.frames.len(), m.length)));
        }
        if m.length > m.max_episode_length {
            return Err(StoreError::Invalid(format!("{} frames exceed {}", m.length, m.max_episode_length)));
        }
        if self.images.len() != m.cameras.len() || self.images.iter().any(|c| c.len() != m.length) {
            return Err(StoreError::Invalid("image count does not match cameras × frames".into()));
        }
        for pair in self.frames.windows(2) {
            if pair[0].action != pair[1].state {
                return Err(StoreError::Invalid("action is not the next state".into()));
            }
        }
        Ok(())
    }

    fn csv(&self) -> String {
        let mut out = self.meta.columns().join(",");
        out.push('\n');
        for (t, f) in self.frames.iter().enumerate() {
            let mut row = vec![t.to_string(), fmt_float(f.timestamp)];
            row.extend(f.state.iter().flatten().map(|v| fmt_float(*v)));
            row.extend(f.action.iter().flatten().map(|v| fmt_float(*v)));
            row.extend(f.gripper.iter().map(|v| fmt_float(*v)));
            row.extend(f.ee.iter().flatten().map(|v| fmt_float(*v)));
            row.extend(f.cameras.iter().flatten().map(|v| fmt_float(*v)));
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

pub fn episode_dir(root: &Path, index: u64) -> PathBuf {
    root.join(EPISODES_DIR).join(format!("ep_{index:06}"))
}

pub fn frame_path(root: &Path, index: u64, camera: &str, t: usize) -> PathBuf {
    episode_dir(root, index).join(camera).join(format!("frame_{t:06}.png"))
}

fn parse_episode_dir(name: &str) -> Option<u64> {
    let digits = name.strip_prefix("ep_")?;
    (digits.len() == 6 && digits.bytes().all(|b| b.is_ascii_digit()))
        .then(|| digits.parse().ok())
        .flatten()
}

/// Creates the store directories and an empty info file if absent.
pub fn init_store(root: &Path) -> Result<(), StoreError> {
    fs::create_dir_all(root.join(EPISODES_DIR)).map_err(|e| io_err(root, e))?;
    fs::create_dir_all(root.join("meta")).map_err(|e| io_err(root, e))?;
    if !root.join(INFO_FILE).exists() {
        write_atomic(&root.join(INFO_FILE), sorted_json(&StoreInfo::empty()).as_bytes())?;
    }
    Ok(())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension(format!("tmp{}", unique_suffix()));
    fs::write(&tmp, bytes).map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

fn unique_suffix() -> String {
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    format!("{}-{}", std::process::id(), COUNTER.fetch_add(1, Ordering::Relaxed))
}

/// Writes one episode into a temporary directory and renames it into place.
/// An existing episode with the same index is never touched.
pub fn write_episode(record: &EpisodeRecord, root: &Path) -> Result<PathBuf, StoreError> {
    record.check()?;
    let index = record.meta.episode_index;
    let dest = episode_dir(root, index);
    if dest.exists() {
        return Err(StoreError::AlreadyExists(index));
    }
    let episodes = root.join(EPISODES_DIR);
    fs::create_dir_all(&episodes).map_err(|e| io_err(&episodes, e))?;
    let tmp = episodes.join(format!("{TMP_PREFIX}ep_{index:06}-{}", unique_suffix()));
    let result = (|| {
        fs::create_dir(&tmp).map_err(|e| io_err(&tmp, e))?;
        fs::write(tmp.join(FRAMES_FILE), record.csv()).map_err(|e| io_err(&tmp, e))?;
        fs::write(tmp.join(META_FILE), sorted_json(&record.meta)).map_err(|e| io_err(&tmp, e))?;
        for (cam, frames) in record.meta.cameras.iter().zip(&record.images) {
            let dir = tmp.join(&cam.name);
            fs::create_dir(&dir).map_err(|e| io_err(&dir, e))?;
            for (t, png) in frames.iter().enumerate() {
                let path = dir.join(format!("frame_{t:06}.png"));
                let mut f = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
                f.write_all(png).map_err(|e| io_err(&path, e))?;
            }
        }
        match fs::rename(&tmp, &dest) {
            Ok(()) => Ok(dest.clone()),
            Err(_) if dest.exists() => Err(StoreError::AlreadyExists(index)),
            Err(e) => Err(io_err(&dest, e)),
        }
    })();
    if result.is_err() {
        let _ = fs::remove_dir_all(&tmp);
    }
    result
}

fn corrupt(episode: u64, detail: impl fmt::Display) -> StoreError {
    StoreError::CorruptEpisode {
        episode,
        detail: detail.to_string(),
    }
}

fn read_meta(root: &Path, index: u64) -> Result<EpisodeMeta, StoreError> {
    let dir = episode_dir(root, index);
    if !dir.is_dir() {
        return Err(StoreError::NotFound(index));
    }
    let text = fs::read_to_string(dir.join(META_FILE)).map_err(|e| corrupt(index, format!("meta.json: {e}")))?;
    let meta: EpisodeMeta = serde_json::from_str(&text).map_err(|e| corrupt(index, format!("meta.json: {e}")))?;
    if meta.episode_index != index {
        return Err(corrupt(index, format!("meta.json names episode {}", meta.episode_index)));
    }
    Ok(meta)
}

fn parse_frames(meta: &EpisodeMeta, text: &str) -> Result<Vec<FrameRow>, String> {
    let mut lines = text.split('\n');
    let header = lines.next().ok_or("empty frame table")?;
    let columns = meta.columns();
    if header != columns.join(",") {
        return Err("frame table header does not match metadata".into());
    }
    let mut rows = Vec::new();
    for (t, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != columns.len() {
            return Err(format!("row {t} has {} cells, expected {}", cells.len(), columns.len()));
        }
        if cells[0].parse::<usize>().ok() != Some(t) {
            return Err(format!("row {t} has frame_index {}", cells[0]));
        }
        let mut vals = cells[1..].iter().map(|c| c.parse::<f64>().map_err(|e| format!("row {t}: {e}")));
        let mut take = |n: usize| -> Result<Vec<f64>, String> { (0..n).map(|_| vals.next().expect("cell count checked")).collect() };
        let timestamp = take(1)?[0];
        let state = meta.arms.iter().map(|a| take(a.joints)).collect::<Result<Vec<_>, _>>()?;
        let action = meta.arms.iter().map(|a| take(a.joints)).collect::<Result<Vec<_>, _>>()?;
        let gripper = take(meta.arms.len())?;
        let mut pose = || -> Result<[f64; 7], String> { Ok(take(7)?.try_into().expect("seven values")) };
        let ee = meta.arms.iter().map(|_| pose()).collect::<Result<Vec<_>, _>>()?;
        let cameras = meta.cameras.iter().map(|_| pose()).collect::<Result<Vec<_>, _>>()?;
        rows.push(FrameRow {
            timestamp,
            state,
            action,
            gripper,
            ee,
            cameras,
        });
    }
    if !text.ends_with('\n') {
        return Err("frame table is truncated".into());
    }
    if rows.len() != meta.length {
        return Err(format!("{} rows, metadata says {}", rows.len(), meta.length));
    }
    Ok(rows)
}

pub fn read_episode(root: &Path, index: u64) -> Result<EpisodeRecord, StoreError> {
    let meta = read_meta(root, index)?;
    let dir = episode_dir(root, index);
    let text = fs::read_to_string(dir.join(FRAMES_FILE)).map_err(|e| corrupt(index, format!("frames.csv: {e}")))?;
    let frames = parse_frames(&meta, &text).map_err(|e| corrupt(index, e))?;
    let images = meta
        .cameras
        .iter()
        .map(|c| {
            (0..meta.length)
                .map(|t| fs::read(frame_path(root, index, &c.name, t)).map_err(|e| corrupt(index, format!("{} frame {t}: {e}", c.name))))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EpisodeRecord { meta, frames, images })
}

/// Episode indices present in the store, ascending.
pub fn list_episodes(root: &Path) -> Result<Vec<u64>, StoreError> {
    let dir = root.join(EPISODES_DIR);
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut out: Vec<u64> = fs::read_dir(&dir)
        .map_err(|e| io_err(&dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| parse_episode_dir(e.file_name().to_str()?))
        .collect();
    out.sort_unstable();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreInfo {
    pub codebase_version: String,
    pub fps: Option<f64>,
    pub total_episodes: usize,
    pub total_frames: usize,
    pub tasks: Vec<String>,
    /// Frame table columns of the first episode.
    pub features: Vec<String>,
    pub cameras: Vec<CameraMeta>,
    pub reserved_features: Vec<String>,
}

impl StoreInfo {
    fn empty() -> Self {
        StoreInfo {
            codebase_version: CODEBASE_VERSION.into(),
            fps: None,
            total_episodes: 0,
            total_frames: 0,
            tasks: Vec::new(),
            features: Vec::new(),
            cameras: Vec::new(),
            reserved_features: RESERVED_FEATURES.map(String::from).to_vec(),
        }
    }
}

fn scan_info(root: &Path) -> Result<StoreInfo, StoreError> {
    let mut info = StoreInfo::empty();
    let mut tasks = std::collections::BTreeSet::new();
    for index in list_episodes(root)? {
        let meta = read_meta(root, index)?;
        if info.total_episodes == 0 {
            info.fps = Some(meta.fps);
            info.features = meta.columns();
            info.cameras = meta.cameras.clone();
        }
        info.total_episodes += 1;
        info.total_frames += meta.length;
        tasks.insert(meta.task);
    }
    info.tasks = tasks.into_iter().collect();
    Ok(info)
}

/// Rewrites `meta/info.json` from the episodes on disk.
pub fn finalize_store(root: &Path) -> Result<StoreInfo, StoreError> {
    init_store(root)?;
    let info = scan_info(root)?;
    write_atomic(&root.join(INFO_FILE), sorted_json(&info).as_bytes())?;
    Ok(info)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StoreFinding {
    MissingInfo,
    InfoMismatch { field: String, expected: String, found: String },
    UnexpectedEntry { name: String },
    CorruptEpisode { episode: u64, detail: String },
    MissingFrame { episode: u64, camera: String, t: usize },
    FrameSizeMismatch { episode: u64, camera: String, t: usize },
    ActionStateMismatch { episode: u64, t: usize },
    TimestampMismatch { episode: u64, t: usize },
    BadIntrinsics { episode: u64, camera: String },
    TooLong { episode: u64, length: usize, max: usize },
}

impl fmt::Display for StoreFinding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StoreFinding::MissingInfo => write!(f, "meta/info.json missing or unreadable"),
            StoreFinding::InfoMismatch { field, expected, found } => {
                write!(f, "info.json {field}: expected {expected}, found {found}")
            }
            StoreFinding::UnexpectedEntry { name } => write!(f, "unexpected entry episodes/{name}"),
            StoreFinding::CorruptEpisode { episode, detail } => write!(f, "episode {episode}: {detail}"),
            StoreFinding::MissingFrame { episode, camera, t } => write!(f, "episode {episode}: {camera} frame {t} missing"),
            StoreFinding::FrameSizeMismatch { episode, camera, t } => {
                write!(f, "episode {episode}: {camera} frame {t} has the wrong size")
            }
            StoreFinding::ActionStateMismatch { episode, t } => write!(f, "episode {episode}: action[{t}] != state[{}]", t + 1),
            StoreFinding::TimestampMismatch { episode, t } => write!(f, "episode {episode}: timestamp {t} off the frame clock"),
            StoreFinding::BadIntrinsics { episode, camera } => write!(f, "episode {episode}: camera {camera} intrinsics"),
            StoreFinding::TooLong { episode, length, max } => write!(f, "episode {episode}: {length} frames > {max}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StoreReport {
    pub episodes: usize,
    pub findings: Vec<StoreFinding>,
}

impl StoreReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }
}

fn png_size(path: &Path) -> Option<(u32, u32)> {
    let f = fs::File::open(path).ok()?;
    let reader = png::Decoder::new(std::io::BufReader::new(f)).read_info().ok()?;
    let info = reader.info();
    (info.color_type == png::ColorType::Rgb && info.bit_depth == png::BitDepth::Eight).then_some((info.width, info.height))
}

fn check_episode(root: &Path, index: u64, findings: &mut Vec<StoreFinding>) -> Option<EpisodeMeta> {
    let bad = |detail: String| StoreFinding::CorruptEpisode { episode: index, detail };
    let meta = match read_meta(root, index) {
        Ok(m) => m,
        Err(e) => {
            findings.push(bad(e.to_string()));
            return None;
        }
    };
    let text = match fs::read_to_string(episode_dir(root, index).join(FRAMES_FILE)) {
        Ok(t) => t,
        Err(e) => {
            findings.push(bad(format!("frames.csv: {e}")));
            return Some(meta);
        }
    };
    let rows = match parse_frames(&meta, &text) {
        Ok(r) => r,
        Err(e) => {
            findings.push(bad(e));
            return Some(meta);
        }
    };
    if rows.is_empty() {
        findings.push(bad("no frames".into()));
    }
    if meta.length > meta.max_episode_length {
        findings.push(StoreFinding::TooLong {
            episode: index,
            length: meta.length,
            max: meta.max_episode_length,
        });
    }
    for (t, r) in rows.iter().enumerate() {
        if r.timestamp != quantize(t as f64 / meta.fps) {
            findings.push(StoreFinding::TimestampMismatch { episode: index, t });
            break;
        }
    }
    for (t, pair) in rows.windows(2).enumerate() {
        if pair[0].action != pair[1].state {
            findings.push(StoreFinding::ActionStateMismatch { episode: index, t });
            break;
        }
    }
    for c in &meta.cameras {
        if c.width == 0 || c.height == 0 || !(c.focal > 0.0) {
            findings.push(StoreFinding::BadIntrinsics {
                episode: index,
                camera: c.name.clone(),
            });
        }
        for t in 0..meta.length {
            let path = frame_path(root, index, &c.name, t);
            if !path.is_file() {
                findings.push(StoreFinding::MissingFrame {
                    episode: index,
                    camera: c.name.clone(),
                    t,
                });
            } else if png_size(&path) != Some((c.width, c.height)) {
                findings.push(StoreFinding::FrameSizeMismatch {
                    episode: index,
                    camera: c.name.clone(),
                    t,
                });
            }
        }
    }
    Some(meta)
}

/// Checks every episode's invariants and the store index.
pub fn validate_store(root: &Path) -> StoreReport {
    let mut findings = Vec::new();
    let episodes_dir = root.join(EPISODES_DIR);
    let mut indices = Vec::new();
    if let Ok(entries) = fs::read_dir(&episodes_dir) {
        let mut names: Vec<String> = entries.filter_map(|e| e.ok()?.file_name().into_string().ok()).collect();
        names.sort();
        for name in names {
            match parse_episode_dir(&name) {
                Some(i) => indices.push(i),
                None => findings.push(StoreFinding::UnexpectedEntry { name }),
            }
        }
    }
    let mut frames = 0;
    for &i in &indices {
        if let Some(m) = check_episode(root, i, &mut findings) {
            frames += m.length;
        }
    }
    let info: Option<StoreInfo> = fs::read_to_string(root.join(INFO_FILE))
        .ok()
        .and_then(|t| serde_json::from_str(&t).ok());
    match info {
        None => findings.push(StoreFinding::MissingInfo),
        Some(info) => {
            let mut expect = |field: &str, expected: usize, found: usize| {
                if expected != found {
                    findings.push(StoreFinding::InfoMismatch {
                        field: field.into(),
                        expected: expected.to_string(),
                        found: found.to_string(),
                    });
                }
            };
            expect("total_episodes", indices.len(), info.total_episodes);
            expect("total_frames", frames, info.total_frames);
        }
    }
    StoreReport {
        episodes: indices.len(),
        findings,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub task: String,
    pub embodiment: String,
    pub trajectories: usize,
    pub frames: usize,
    pub hours: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub rows: Vec<StatsRow>,
    pub total_trajectories: usize,
    pub total_frames: usize,
    pub total_hours: f64,
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w = self.rows.iter().map(|r| r.task.len()).chain([7]).max().unwrap_or(7);
        let e = self.rows.iter().map(|r| r.embodiment.len()).chain([10]).max().unwrap_or(10);
        writeln!(f, "{:<w$}  {:<e$}  {:>12}  {:>12}  {:>10}", "Task", "Embodiment", "Trajectories", "Frames", "Hours")?;
        for r in &self.rows {
            writeln!(f, "{:<w$}  {:<e$}  {:>12}  {:>12}  {:>10.4}", r.task, r.embodiment, r.trajectories, r.frames, r.hours)?;
        }
        writeln!(
            f,
            "{:<w$}  {:<e$}  {:>12}  {:>12}  {:>10.4}",
            "Overall", "", self.total_trajectories, self.total_frames, self.total_hours
        )
    }
}

/// Counts trajectories and frames per (task, embodiment) by reading every
/// frame table.
pub fn compute_stats(root: &Path) -> Result<DatasetStats, StoreError> {
    let mut rows: BTreeMap<(String, String), (usize, usize, f64)> = BTreeMap::new();
    for index in list_episodes(root)? {
        let meta = read_meta(root, index)?;
        let text = fs::read_to_string(episode_dir(root, index).join(FRAMES_FILE)).map_err(|e| corrupt(index, e))?;
        let frames = text.lines().count().saturating_sub(1);
        let embodiment = meta.scene.robots.iter().map(|r| r.embodiment.as_str()).collect::<Vec<_>>().join("+");
        let row = rows.entry((meta.task.clone(), embodiment)).or_default();
        row.0 += 1;
        row.1 += frames;
        row.2 += frames as f64 / meta.fps / 3600.0;
    }
    let rows: Vec<StatsRow> = rows
        .into_iter()
        .map(|((task, embodiment), (trajectories, frames, hours))| StatsRow {
            task,
            embodiment,
            trajectories,
            frames,
            hours,
        })
        .collect();
    Ok(DatasetStats {
        total_trajectories: rows.iter().map(|r| r.trajectories).sum(),
        total_frames: rows.iter().map(|r| r.frames).sum(),
        total_hours: rows.iter().fold(0.0, |acc, r| acc + r.hours),
        rows,
    })
}

fn collect_files(dir: &Path, base: &Path, out: &mut Vec<(String, PathBuf)>) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(&path, base, out)?;
        } else {
            let rel = path.strip_prefix(base).expect("under base").to_string_lossy().replace('\\', "/");
            out.push((rel, path));
        }
    }
    Ok(())
}

/// SHA-256 over the relative path and bytes of every file under `meta/` and
/// `episodes/`, in path order.
pub fn digest(root: &Path) -> Result<String, StoreError> {
    let mut files = Vec::new();
    for sub in ["meta", EPISODES_DIR] {
        let dir = root.join(sub);
        if dir.exists() {
            collect_files(&dir, root, &mut files).map_err(|e| io_err(&dir, e))?;
        }
    }
    files.sort();
    let mut h = Sha256::new();
    for (rel, path) in files {
        let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
        h.update(rel.as_bytes());
        h.update([0]);
        h.update((bytes.len() as u64).to_be_bytes());
        h.update(&bytes);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn synthetic(index: u64, frames: usize, cameras: usize) -> EpisodeRecord {
        let fps = 30.0;
        let q = |t: usize| vec![vec![quantize(0.01 * t as f64), quantize(-0.02 * t as f64 + 0.5)]];
        let meta = EpisodeMeta {
            episode_index: index,
            task: "synthetic".into(),
            language_instruction: "do it".into(),
            detailed_language_instruction: "do it carefully".into(),
            fps,
            seed: 1,
            length: frames,
            max_episode_length: 4000,
            arms: vec![ArmColumns {
                name: "bot.right".into(),
                joints: 2,
            }],
            cameras: (0..cameras)
                .map(|c| CameraMeta {
                    name: format!("cam{c}"),
                    width: 4,
                    height: 3,
                    focal: 3.0,
                })
                .collect(),
            scene: SceneMeta {
                objects: Vec::new(),
                robots: vec![crate::episode::RobotMeta {
                    name: "bot".into(),
                    embodiment: "arm".into(),
                    base: Pose::identity(),
                    home: BTreeMap::new(),
                }],
                lighting: crate::randomize::Lighting {
                    env_map_id: 0,
                    intensity: 5500.0,
                    rotation_deg: 0.0,
                },
            },
            attempts: 1,
            valid: true,
        };
        let rows = (0..frames)
            .map(|t| FrameRow {
                timestamp: quantize(t as f64 / fps),
                state: q(t),
                action: q((t + 1).min(frames - 1)),
                gripper: vec![(t % 2) as f64],
                ee: vec![[quantize(0.1 * t as f64), 0.0, 0.5, 1.0, 0.0, 0.0, 0.0]],
                cameras: (0..cameras).map(|_| [0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0]).collect(),
            })
            .collect();
        let img = crate::render::Image::filled(4, 3, [10, 20, 30]).encode_png();
        EpisodeRecord {
            meta,
            frames: rows,
            images: vec![vec![img; frames]; cameras],
        }
    }

    #[test]
    fn quantize_keeps_nine_digits() {
        assert_eq!(quantize(1.0 / 3.0), 0.333333333);
        assert_eq!(fmt_float(-0.0), "-0.00000000e0");
        assert_eq!(quantize(quantize(2.0f64.sqrt())), quantize(2.0f64.sqrt()));
    }

    #[test]
    fn write_read_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rec = synthetic(3, 25, 3);
        init_store(dir.path()).unwrap();
        let path = write_episode(&rec, dir.path()).unwrap();
        let pngs: usize = (0..3).map(|c| fs::read_dir(path.join(format!("cam{c}"))).unwrap().count()).sum();
        assert_eq!(pngs, 75);
        assert_eq!(fs::read_dir(&path).unwrap().filter(|e| e.as_ref().unwrap().path().is_file()).count(), 2);
        assert_eq!(read_episode(dir.path(), 3).unwrap(), rec);
        assert!(matches!(write_episode(&rec, dir.path()), Err(StoreError::AlreadyExists(3))));
        assert!(matches!(read_episode(dir.path(), 4), Err(StoreError::NotFound(4))));
    }

    #[test]
    fn zero_frames_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut rec = synthetic(0, 1, 1);
        rec.frames.clear();
        rec.images = vec![Vec::new()];
        rec.meta.length = 0;
        assert!(matches!(write_episode(&rec, dir.path()), Err(StoreError::Invalid(_))));
    }

    #[test]
    fn csv_uses_lf_and_fixed_format() {
        let rec = synthetic(0, 2, 1);
        let csv = rec.csv();
        assert!(!csv.contains('\r'));
        let row: Vec<&str> = csv.lines().nth(2).unwrap().split(',').collect();
        assert_eq!(row[0], "1");
        assert_eq!(row[1], "3.33333333e-2");
    }

    #[test]
    fn validation_and_stats() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        for i in 0..10 {
            write_episode(&synthetic(i, 30, 1), root).unwrap();
        }
        finalize_store(root).unwrap();
        assert!(validate_store(root).is_clean());
        let stats = compute_stats(root).unwrap();
        assert_eq!(stats.total_trajectories, 10);
        assert_eq!(stats.total_frames, 300);
        assert!((stats.total_hours - 300.0 / 30.0 / 3600.0).abs() < 1e-15);

        fs::remove_file(frame_path(root, 4, "cam0", 7)).unwrap();
        let csv = episode_dir(root, 6).join(FRAMES_FILE);
        let text = fs::read_to_string(&csv).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let mut cells: Vec<String> = lines[3].split(',').map(String::from).collect();
        cells[4] = fmt_float(9.0);
        lines[3] = cells.join(",");
        fs::write(&csv, lines.join("\n") + "\n").unwrap();
        let report = validate_store(root);
        assert!(report.findings.contains(&StoreFinding::MissingFrame {
            episode: 4,
            camera: "cam0".into(),
            t: 7
        }));
        assert!(report.findings.contains(&StoreFinding::ActionStateMismatch { episode: 6, t: 2 }));
    }

    #[test]
    fn truncated_table_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        write_episode(&synthetic(0, 5, 1), dir.path()).unwrap();
        let csv = episode_dir(dir.path(), 0).join(FRAMES_FILE);
        let text = fs::read_to_string(&csv).unwrap();
        fs::write(&csv, &text[..text.len() - 20]).unwrap();
        assert!(matches!(read_episode(dir.path(), 0), Err(StoreError::CorruptEpisode { .. })));
    }

    #[test]
    fn empty_store_stats_are_zero() {
        let dir = tempfile::tempdir().unwrap();
        init_store(dir.path()).unwrap();
        assert_eq!(compute_stats(dir.path()).unwrap(), DatasetStats::default());
        assert!(validate_store(dir.path()).is_clean());
    }

    #[test]
    fn digest_tracks_content() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        for root in [a.path(), b.path()] {
            write_episode(&synthetic(1, 4, 1), root).unwrap();
            finalize_store(root).unwrap();
        }
        assert_eq!(digest(a.path()).unwrap(), digest(b.path()).unwrap());
        fs::write(frame_path(b.path(), 1, "cam0", 0), b"x").unwrap();
        assert_ne!(digest(a.path()).unwrap(), digest(b.path()).unwrap());
    }
}
