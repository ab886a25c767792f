//! Planner/renderer orchestration: a pipelined runtime with bounded queues,
//! class-aware scheduling, stacked rendering and a heartbeat supervisor, plus
//! the single-stage serial baseline it is measured against.

use std::collections::{BTreeSet, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, unbounded, Receiver, RecvTimeoutError, Sender, TrySendError};
use serde::{Deserialize, Serialize};

use crate::episode::{PlannedEpisode, TaskContext};
use crate::render::render_episode;
use crate::store::{self, EpisodeRecord, StoreError};

pub const DEFAULT_SPILL_SLOWDOWN: f64 = 4.0;
pub const DEFAULT_HEARTBEAT_TIMEOUT: Duration = Duration::from_secs(5);
pub const DEFAULT_RETRY_LIMIT: u32 = 2;
pub const REPORT_FILE: &str = "run_report.json";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid job: {0}")]
    ConfigInvalid(String),
    #[error("store not writable: {0}")]
    StoreUnwritable(String),
    #[error("run aborted: {0}")]
    Unrecoverable(String),
}

impl From<StoreError> for PipelineError {
    fn from(e: StoreError) -> Self {
        PipelineError::StoreUnwritable(e.to_string())
    }
}

/// Synthetic stage costs. A stage never finishes faster than its modeled
/// cost; real work that takes longer is not padded.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub plan: Duration,
    /// Fixed cost paid once per render call, whatever the batch size.
    pub render_setup: Duration,
    pub render_frame: Duration,
}

impl CostModel {
    pub fn render(&self, frames: usize) -> Duration {
        self.render_setup + self.render_frame * frames as u32
    }

    /// Modeled cost of rendering one batch of jobs with the given frame counts.
    pub fn render_batch(&self, frames: &[usize]) -> Duration {
        self.render(frames.iter().sum())
    }

    /// Bottleneck-throughput prediction of serial over pipelined wall time for
    /// `n` episodes of which `successes` reach the renderer.
    pub fn predicted_speedup(&self, n: usize, successes: usize, frames: usize, planners: usize, renderers: usize, batch: usize) -> f64 {
        let plan = self.plan.as_secs_f64();
        let per_job = self.render(frames).as_secs_f64();
        let serial = n as f64 * (plan + per_job);
        let batches = successes.div_ceil(batch.max(1));
        let batch_cost = self.render(frames * batch.min(successes.max(1))).as_secs_f64();
        let pipelined = (n as f64 * plan / planners as f64).max(batches as f64 * batch_cost / renderers as f64);
        serial / pipelined
    }
}

/// Faults injected for experiments and tests.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FaultPlan {
    /// Fraction of otherwise valid episodes kept as plan successes; the rest
    /// are reported as plan failures. Successes are spread evenly by index.
    pub plan_success: Option<f64>,
    /// A planner that stops (without reporting or heartbeating) when it
    /// receives its `after_jobs`-th job.
    pub kill_planner: Option<KillSpec>,
    /// Upper bound of an extra per-job delay derived from the episode index.
    pub jitter: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KillSpec {
    pub worker: usize,
    pub after_jobs: usize,
}

#[derive(Clone)]
pub struct JobSpec {
    pub ctx: Arc<TaskContext>,
    pub episodes: usize,
    /// Index of the first episode; episodes are `first..first + episodes`.
    pub first: u64,
    pub seed: u64,
    pub out: PathBuf,
    pub planner_workers: usize,
    pub renderer_workers: usize,
    pub queue_cap: usize,
    pub retry_limit: u32,
    pub render_batch: usize,
    pub costs: CostModel,
    /// Slowdown of render jobs run by CPU workers; `None` disables spillover.
    pub spill_slowdown: Option<f64>,
    /// Render queue length above which idle CPU workers take render jobs.
    /// Defaults to twice the renderer capacity per round.
    pub spill_threshold: Option<usize>,
    pub heartbeat_timeout: Duration,
    pub faults: FaultPlan,
}

impl JobSpec {
    pub fn new(ctx: Arc<TaskContext>, episodes: usize, seed: u64, out: impl Into<PathBuf>) -> Self {
        JobSpec {
            ctx,
            episodes,
            first: 0,
            seed,
            out: out.into(),
            planner_workers: 4,
            renderer_workers: 1,
            queue_cap: 8,
            retry_limit: DEFAULT_RETRY_LIMIT,
            render_batch: 1,
            costs: CostModel::default(),
            spill_slowdown: Some(DEFAULT_SPILL_SLOWDOWN),
            spill_threshold: None,
            heartbeat_timeout: DEFAULT_HEARTBEAT_TIMEOUT,
            faults: FaultPlan::default(),
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::ConfigInvalid(m.to_string()));
        if self.planner_workers == 0 || self.renderer_workers == 0 {
            return bad("worker counts must be at least 1");
        }
        if self.queue_cap == 0 {
            return bad("queue capacity must be at least 1");
        }
        if self.render_batch == 0 {
            return bad("render batch must be at least 1");
        }
        if self.spill_slowdown.is_some_and(|s| !(s >= 1.0)) {
            return bad("spill slowdown must be at least 1");
        }
        if self.faults.plan_success.is_some_and(|p| !(0.0..=1.0).contains(&p)) {
            return bad("plan success rate must lie in [0, 1]");
        }
        if self.heartbeat_timeout.is_zero() {
            return bad("heartbeat timeout must be positive");
        }
        Ok(())
    }

    fn indices(&self) -> std::ops::Range<u64> {
        self.first..self.first + self.episodes as u64
    }

    fn schedule_policy(&self) -> SchedulePolicy {
        SchedulePolicy {
            render_batch: self.render_batch,
            spillover: self.spill_slowdown.is_some(),
            spill_threshold: self.spill_threshold.unwrap_or(2 * self.renderer_workers * self.render_batch),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Plan,
    Render,
    Write,
}

/// Bookkeeping for one unit of stage work. Timestamps are seconds since the
/// run started.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageJob {
    pub episode_index: u64,
    pub phase: Phase,
    pub attempt: u32,
    pub enqueued_s: f64,
    pub started_s: Option<f64>,
    pub finished_s: Option<f64>,
}

impl StageJob {
    pub fn new(episode_index: u64, phase: Phase, now: f64) -> Self {
        StageJob {
            episode_index,
            phase,
            attempt: 0,
            enqueued_s: now,
            started_s: None,
            finished_s: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkerClass {
    Cpu,
    Gpu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkerStatus {
    Idle,
    Busy,
    SuspectedDead,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerState {
    pub worker_id: usize,
    pub class: WorkerClass,
    pub status: WorkerStatus,
    /// Jobs in flight; a render batch holds several.
    pub current: Vec<StageJob>,
    pub heartbeat_s: f64,
}

impl WorkerState {
    pub fn new(worker_id: usize, class: WorkerClass) -> Self {
        WorkerState {
            worker_id,
            class,
            status: WorkerStatus::Idle,
            current: Vec::new(),
            heartbeat_s: 0.0,
        }
    }

    fn alive(&self) -> bool {
        self.status != WorkerStatus::SuspectedDead
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SchedulePolicy {
    pub render_batch: usize,
    pub spillover: bool,
    pub spill_threshold: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueueView {
    pub plan: usize,
    pub render: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assignment {
    Plan { worker: usize },
    Render { worker: usize, jobs: usize, spill: bool },
}

/// Assigns waiting jobs to idle workers for one scheduling round.
///
/// GPU workers take render batches of up to `render_batch` jobs and CPU
/// workers take plan jobs. Once the plan queue is empty and more than
/// `spill_threshold` render jobs wait, idle CPU workers take single render
/// jobs. With no live GPU worker left every render job is open to CPUs.
pub fn schedule(queues: QueueView, workers: &[WorkerState], policy: &SchedulePolicy) -> Vec<Assignment> {
    let mut out = Vec::new();
    let idle = |class| {
        workers
            .iter()
            .filter(move |w| w.class == class && w.status == WorkerStatus::Idle)
            .map(|w| w.worker_id)
    };
    let mut render = queues.render;
    let mut plan = queues.plan;
    for worker in idle(WorkerClass::Gpu) {
        if render == 0 {
            break;
        }
        let jobs = render.min(policy.render_batch.max(1));
        render -= jobs;
        out.push(Assignment::Render { worker, jobs, spill: false });
    }
    let gpu_alive = workers.iter().any(|w| w.class == WorkerClass::Gpu && w.alive());
    let threshold = if gpu_alive { policy.spill_threshold } else { 0 };
    for worker in idle(WorkerClass::Cpu) {
        if plan > 0 {
            plan -= 1;
            out.push(Assignment::Plan { worker });
        } else if policy.spillover && render > threshold {
            render -= 1;
            out.push(Assignment::Render { worker, jobs: 1, spill: true });
        } else {
            break;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupervisorPolicy {
    pub heartbeat_timeout: Duration,
    pub retry_limit: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SupervisorAction {
    MarkDead { worker: usize },
    Requeue { job: StageJob },
    PermanentlyFail { job: StageJob },
}

/// Requeues a failed job with its attempt counter raised, or gives it up
/// once the retry limit is spent.
pub fn retry_or_fail(job: &StageJob, retry_limit: u32) -> SupervisorAction {
    if job.attempt >= retry_limit {
        SupervisorAction::PermanentlyFail { job: job.clone() }
    } else {
        SupervisorAction::Requeue {
            job: StageJob {
                attempt: job.attempt + 1,
                started_s: None,
                finished_s: None,
                ..job.clone()
            },
        }
    }
}

/// Marks workers whose heartbeat is older than the timeout as suspected dead
/// and decides the fate of their in-flight jobs.
pub fn supervise(workers: &[WorkerState], now: Duration, policy: &SupervisorPolicy) -> Vec<SupervisorAction> {
    let now = now.as_secs_f64();
    let timeout = policy.heartbeat_timeout.as_secs_f64();
    let mut out = Vec::new();
    for w in workers {
        if w.alive() && now - w.heartbeat_s > timeout {
            out.push(SupervisorAction::MarkDead { worker: w.worker_id });
            out.extend(w.current.iter().map(|j| retry_or_fail(j, policy.retry_limit)));
        }
    }
    out
}

/// Applies the worker-side effects of supervisor actions.
pub fn apply_actions(workers: &mut [WorkerState], actions: &[SupervisorAction]) {
    for a in actions {
        if let SupervisorAction::MarkDead { worker } = a {
            if let Some(w) = workers.iter_mut().find(|w| w.worker_id == *worker) {
                w.status = WorkerStatus::SuspectedDead;
                w.current.clear();
            }
        }
    }
}

/// Splits `pending` into consecutive runs sized in proportion to `capacities`.
///
/// Each node gets the floor of its share; leftover items go one each to the
/// nodes with the largest fractional remainders, ties to the lower index.
pub fn balance<T: Clone>(pending: &[T], capacities: &[f64]) -> Vec<Vec<T>> {
    let total: f64 = capacities.iter().sum();
    if capacities.is_empty() || !(total > 0.0) {
        return vec![Vec::new(); capacities.len()];
    }
    let n = pending.len();
    let shares: Vec<f64> = capacities.iter().map(|c| n as f64 * c / total).collect();
    let mut counts: Vec<usize> = shares.iter().map(|s| s.floor() as usize).collect();
    let mut left = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..capacities.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = shares[a] - shares[a].floor();
        let fb = shares[b] - shares[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for i in order {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    let mut out = Vec::with_capacity(counts.len());
    let mut start = 0;
    for c in counts {
        out.push(pending[start..start + c].to_vec());
        start += c;
    }
    out
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Whether the injected success pattern keeps episode `index`. Over any run
/// of `n` consecutive indices starting at 0 exactly `floor(n·p)` are kept.
pub fn injected_success(p: f64, index: u64) -> bool {
    ((index + 1) as f64 * p).floor() > (index as f64 * p).floor()
}

fn jitter(faults: &FaultPlan, seed: u64, index: u64, phase: Phase) -> Duration {
    if faults.jitter.is_zero() {
        return Duration::ZERO;
    }
    let h = splitmix(seed ^ splitmix(index ^ ((phase as u64) << 56)));
    faults.jitter.mul_f64((h >> 11) as f64 / (1u64 << 53) as f64)
}

fn pad(start: Instant, floor: Duration) {
    let spent = start.elapsed();
    if spent < floor {
        thread::sleep(floor - spent);
    }
}

#[derive(Debug, Clone)]
pub enum PlanOutcome {
    Valid(Arc<PlannedEpisode>),
    PlanFailed(String),
    ValidationFailed(String),
}

/// Plans one episode and classifies the result, applying any injected
/// success pattern. Returns the outcome and the trajectory length planned.
pub fn plan_episode(job: &JobSpec, index: u64) -> (PlanOutcome, usize) {
    let started = Instant::now();
    let outcome = match job.ctx.plan(job.seed, index) {
        Err(e) => (PlanOutcome::PlanFailed(e.to_string()), 0),
        Ok(ep) => {
            let frames = ep.plan.as_ref().map_or(0, |p| p.len());
            let forced = job.faults.plan_success.is_some_and(|p| !injected_success(p, index));
            let outcome = if !ep.plan_ok() {
                PlanOutcome::PlanFailed(ep.failure().unwrap_or_default())
            } else if forced {
                PlanOutcome::PlanFailed("injected plan failure".into())
            } else if !ep.is_valid() {
                PlanOutcome::ValidationFailed(ep.failure().unwrap_or_default())
            } else {
                PlanOutcome::Valid(Arc::new(ep))
            };
            (outcome, frames)
        }
    };
    pad(started, job.costs.plan + jitter(&job.faults, job.seed, index, Phase::Plan));
    outcome
}

/// Renders a batch of planned episodes in one call and encodes their
/// records. The call costs one setup plus every frame of the batch, scaled
/// by `slowdown`. Frames are identical to rendering each job alone.
pub fn stack_render(ctx: &TaskContext, batch: &[Arc<PlannedEpisode>], costs: &CostModel, slowdown: f64) -> Vec<Result<EpisodeRecord, StoreError>> {
    if batch.is_empty() {
        return Vec::new();
    }
    let started = Instant::now();
    let mut frames = Vec::with_capacity(batch.len());
    let out = batch
        .iter()
        .map(|ep| {
            let plan = ep.plan.as_ref().map_err(|e| StoreError::Invalid(e.to_string()))?;
            frames.push(plan.len());
            let rendered = render_episode(&ep.scene, plan);
            EpisodeRecord::build(ctx, ep, &rendered)
        })
        .collect();
    pad(started, costs.render_batch(&frames).mul_f64(slowdown));
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WorkerReport {
    pub worker_id: usize,
    pub class: Option<WorkerClass>,
    pub jobs: usize,
    pub busy_s: f64,
    pub utilization: f64,
    pub suspected_dead: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeFailure {
    pub episode_index: u64,
    pub stage: String,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub mode: String,
    pub task: String,
    pub seed: u64,
    pub attempted: usize,
    pub planned_ok: usize,
    pub validated_ok: usize,
    pub rendered: usize,
    pub written: usize,
    pub plan_failed: usize,
    pub validation_failed: usize,
    pub permanently_failed: usize,
    pub retries: usize,
    /// Results discarded because their episode was already settled.
    pub duplicates_dropped: usize,
    pub frames_written: usize,
    pub wall_time_s: f64,
    pub plan_busy_s: f64,
    pub render_busy_s: f64,
    pub write_busy_s: f64,
    pub workers: Vec<WorkerReport>,
    pub episodes_per_s: f64,
    pub frames_per_s: f64,
    pub render_queue_high_water: usize,
    pub write_queue_high_water: usize,
    pub spilled_render_jobs: usize,
    pub speedup: Option<f64>,
    pub written_episodes: Vec<u64>,
    pub failures: Vec<EpisodeFailure>,
}

impl RunReport {
    /// attempted = written + plan-failed + validation-failed + permanently-failed,
    /// and the stage counts never grow downstream.
    pub fn is_consistent(&self) -> bool {
        self.attempted == self.written + self.plan_failed + self.validation_failed + self.permanently_failed
            && self.written <= self.rendered
            && self.rendered <= self.validated_ok
            && self.validated_ok <= self.planned_ok
            && self.planned_ok <= self.attempted
            && self.written == self.written_episodes.len()
    }

    fn finish(&mut self, wall: Duration) {
        self.wall_time_s = wall.as_secs_f64();
        if self.wall_time_s > 0.0 {
            self.episodes_per_s = self.written as f64 / self.wall_time_s;
            self.frames_per_s = self.frames_written as f64 / self.wall_time_s;
            for w in &mut self.workers {
                w.utilization = (w.busy_s / self.wall_time_s).clamp(0.0, 1.0);
            }
        }
        self.written_episodes.sort_unstable();
        self.failures.sort_by_key(|f| f.episode_index);
    }

    pub fn summary(&self) -> String {
        format!(
            "{mode}: attempted {a}, planned {p}, validated {v}, rendered {r}, written {w} ({f} frames); \
             failed plan {pf} / validation {vf} / permanently {xf}; retries {rt}; {t:.2} s, {eps:.2} episodes/s",
            mode = self.mode,
            a = self.attempted,
            p = self.planned_ok,
            v = self.validated_ok,
            r = self.rendered,
            w = self.written,
            f = self.frames_written,
            pf = self.plan_failed,
            vf = self.validation_failed,
            xf = self.permanently_failed,
            rt = self.retries,
            t = self.wall_time_s,
            eps = self.episodes_per_s,
        )
    }

    pub fn write_to(&self, root: &Path) -> Result<(), PipelineError> {
        let value = serde_json::to_value(self).expect("serializable");
        let mut text = serde_json::to_string_pretty(&value).expect("serializable");
        text.push('\n');
        std::fs::write(root.join(REPORT_FILE), text).map_err(|e| PipelineError::StoreUnwritable(e.to_string()))
    }
}

fn prepare_store(job: &JobSpec) -> Result<(), PipelineError> {
    job.validate()?;
    store::init_store(&job.out)?;
    let existing: BTreeSet<u64> = store::list_episodes(&job.out)?.into_iter().collect();
    if let Some(i) = job.indices().find(|i| existing.contains(i)) {
        return Err(StoreError::AlreadyExists(i).into());
    }
    Ok(())
}

fn finish_store(job: &JobSpec, report: &mut RunReport, started: Instant) -> Result<(), PipelineError> {
    store::finalize_store(&job.out)?;
    report.finish(started.elapsed());
    report.write_to(&job.out)
}

fn new_report(job: &JobSpec, mode: &str) -> RunReport {
    RunReport {
        mode: mode.into(),
        task: job.ctx.cfg.name.clone(),
        seed: job.seed,
        attempted: job.episodes,
        ..RunReport::default()
    }
}

fn failure(index: u64, stage: &str, detail: impl Into<String>) -> EpisodeFailure {
    EpisodeFailure {
        episode_index: index,
        stage: stage.into(),
        detail: detail.into(),
    }
}


/// One worker plans and renders each episode in turn. Failed plans still pay
/// the full modeled render cost of their trajectory.
pub fn run_serial_baseline(job: &JobSpec) -> Result<RunReport, PipelineError> {
    prepare_store(job)?;
    let started = Instant::now();
    let mut report = new_report(job, "serial");
    for index in job.indices() {
        let t = Instant::now();
        let (outcome, frames) = plan_episode(job, index);
        report.plan_busy_s += t.elapsed().as_secs_f64();
        let t = Instant::now();
        match outcome {
            PlanOutcome::PlanFailed(d) => {
                pad(t, job.costs.render(frames));
                report.render_busy_s += t.elapsed().as_secs_f64();
                report.plan_failed += 1;
                report.failures.push(failure(index, "plan", d));
            }
            PlanOutcome::ValidationFailed(d) => {
                pad(t, job.costs.render(frames));
                report.render_busy_s += t.elapsed().as_secs_f64();
                report.planned_ok += 1;
                report.validation_failed += 1;
                report.failures.push(failure(index, "validation", d));
            }
            PlanOutcome::Valid(ep) => {
                report.planned_ok += 1;
                report.validated_ok += 1;
                let rendered = stack_render(&job.ctx, &[ep], &job.costs, 1.0).pop().expect("one result");
                report.render_busy_s += t.elapsed().as_secs_f64();
                match rendered {
                    Err(e) => {
                        report.permanently_failed += 1;
                        report.failures.push(failure(index, "render", e.to_string()));
                    }
                    Ok(rec) => {
                        report.rendered += 1;
                        let t = Instant::now();
                        store::write_episode(&rec, &job.out)?;
                        report.write_busy_s += t.elapsed().as_secs_f64();
                        report.written += 1;
                        report.frames_written += rec.meta.length;
                        report.written_episodes.push(index);
                    }
                }
            }
        }
    }
    let busy = report.plan_busy_s + report.render_busy_s + report.write_busy_s;
    report.workers.push(WorkerReport {
        worker_id: 0,
        class: None,
        jobs: job.episodes,
        busy_s: busy,
        ..WorkerReport::default()
    });
    finish_store(job, &mut report, started)?;
    Ok(report)
}

enum Task {
    Plan(StageJob),
    Render { jobs: Vec<(StageJob, Arc<PlannedEpisode>)>, spill: bool },
}

enum Event {
    Planned {
        worker: usize,
        job: StageJob,
        outcome: PlanOutcome,
        busy: f64,
    },
    Rendered {
        worker: usize,
        results: Vec<(StageJob, Result<usize, String>)>,
        busy: f64,
    },
    Written {
        index: u64,
        frames: usize,
        busy: f64,
    },
    WriteFailed {
        index: u64,
        detail: String,
    },
}

type WriteItem = (StageJob, EpisodeRecord);

struct WorkerCtx<'a> {
    id: usize,
    job: &'a JobSpec,
    epoch: Instant,
    tasks: Receiver<Task>,
    events: Sender<Event>,
    writes: Sender<WriteItem>,
    write_high_water: &'a AtomicU64,
}

fn beat_interval(timeout: Duration) -> Duration {
    (timeout / 5).clamp(Duration::from_millis(1), Duration::from_millis(250))
}

fn now_s(epoch: Instant) -> f64 {
    epoch.elapsed().as_secs_f64()
}

fn worker_loop(w: WorkerCtx<'_>) {
    let kill = w.job.faults.kill_planner.filter(|k| k.worker == w.id);
    let mut received = 0;
    for task in w.tasks.iter() {
        if kill.is_some_and(|k| k.after_jobs == received) {
            log::warn!("worker {} stops without reporting (injected fault)", w.id);
            return;
        }
        received += 1;
        let t = Instant::now();
        match task {
            Task::Plan(mut job) => {
                let (outcome, _) = plan_episode(w.job, job.episode_index);
                job.finished_s = Some(now_s(w.epoch));
                let busy = t.elapsed().as_secs_f64();
                let _ = w.events.send(Event::Planned {
                    worker: w.id,
                    job,
                    outcome,
                    busy,
                });
            }
            Task::Render { jobs, spill } => {
                let slowdown = if spill { w.job.spill_slowdown.unwrap_or(1.0) } else { 1.0 };
                let episodes: Vec<_> = jobs.iter().map(|(_, ep)| ep.clone()).collect();
                let extra = jobs
                    .iter()
                    .map(|(j, _)| jitter(&w.job.faults, w.job.seed, j.episode_index, Phase::Render))
                    .sum::<Duration>();
                let records = stack_render(&w.job.ctx, &episodes, &w.job.costs, slowdown);
                pad(t, t.elapsed() + extra);
                let finished = now_s(w.epoch);
                let mut results = Vec::with_capacity(jobs.len());
                let mut writes = Vec::new();
                for ((mut job, _), rec) in jobs.into_iter().zip(records) {
                    job.finished_s = Some(finished);
                    match rec {
                        Ok(rec) => {
                            results.push((job.clone(), Ok(rec.meta.length)));
                            writes.push((StageJob::new(job.episode_index, Phase::Write, finished), rec));
                        }
                        Err(e) => results.push((job, Err(e.to_string()))),
                    }
                }
                let busy = t.elapsed().as_secs_f64();
                let _ = w.events.send(Event::Rendered {
                    worker: w.id,
                    results,
                    busy,
                });
                for item in writes {
                    if w.writes.send(item).is_err() {
                        return;
                    }
                    w.write_high_water.fetch_max(w.writes.len() as u64, Ordering::Relaxed);
                }
            }
        }
    }
}

fn writer_loop(out: &Path, items: Receiver<WriteItem>, events: Sender<Event>) {
    let mut seen = BTreeSet::new();
    for (job, rec) in items.iter() {
        if !seen.insert(job.episode_index) {
            continue;
        }
        let t = Instant::now();
        let event = match store::write_episode(&rec, out) {
            Ok(_) => Event::Written {
                index: job.episode_index,
                frames: rec.meta.length,
                busy: t.elapsed().as_secs_f64(),
            },
            Err(e) => Event::WriteFailed {
                index: job.episode_index,
                detail: e.to_string(),
            },
        };
        if events.send(event).is_err() {
            return;
        }
    }
}

struct Coordinator<'a> {
    job: &'a JobSpec,
    epoch: Instant,
    workers: Vec<WorkerState>,
    tasks: Vec<Sender<Task>>,
    plan_q: VecDeque<StageJob>,
    render_q: VecDeque<StageJob>,
    /// Planners holding a result while the render queue is full.
    blocked: VecDeque<(usize, StageJob)>,
    payloads: Vec<Option<Arc<PlannedEpisode>>>,
    planned: Vec<bool>,
    rendered: Vec<bool>,
    settled: Vec<bool>,
    remaining: usize,
    report: RunReport,
}

impl Coordinator<'_> {
    fn offset(&self, index: u64) -> usize {
        (index - self.job.first) as usize
    }

    fn settle(&mut self, index: u64) -> bool {
        let off = self.offset(index);
        if self.settled[off] {
            return false;
        }
        self.settled[off] = true;
        self.remaining -= 1;
        true
    }

    fn release(&mut self, worker: usize, busy: f64) {
        let w = &mut self.workers[worker];
        w.status = WorkerStatus::Idle;
        w.current.clear();
        let r = &mut self.report.workers[worker];
        r.jobs += 1;
        r.busy_s += busy;
    }

    fn fail(&mut self, index: u64, stage: &str, detail: String) {
        if self.settle(index) {
            self.report.permanently_failed += 1;
            self.report.failures.push(failure(index, stage, detail));
        }
    }

    fn requeue(&mut self, job: StageJob) {
        let off = self.offset(job.episode_index);
        if self.settled[off] {
            return;
        }
        match job.phase {
            Phase::Plan if !self.planned[off] => {
                self.report.retries += 1;
                self.plan_q.push_front(job);
            }
            Phase::Render if !self.rendered[off] => {
                self.report.retries += 1;
                self.render_q.push_front(job);
            }
            _ => {}
        }
    }

    fn handle(&mut self, event: Event) -> Result<(), PipelineError> {
        match event {
            Event::Planned { worker, job, outcome, busy } => {
                self.report.plan_busy_s += busy;
                let index = job.episode_index;
                let off = self.offset(index);
                if self.planned[off] || self.settled[off] {
                    self.release(worker, busy);
                    self.report.duplicates_dropped += 1;
                    return Ok(());
                }
                self.planned[off] = true;
                self.plan_q.retain(|j| j.episode_index != index);
                match outcome {
                    PlanOutcome::PlanFailed(d) => {
                        self.release(worker, busy);
                        self.settle(index);
                        self.report.plan_failed += 1;
                        self.report.failures.push(failure(index, "plan", d));
                    }
                    PlanOutcome::ValidationFailed(d) => {
                        self.release(worker, busy);
                        self.settle(index);
                        self.report.planned_ok += 1;
                        self.report.validation_failed += 1;
                        self.report.failures.push(failure(index, "validation", d));
                    }
                    PlanOutcome::Valid(ep) => {
                        self.report.planned_ok += 1;
                        self.report.validated_ok += 1;
                        self.payloads[off] = Some(ep);
                        let render = StageJob::new(index, Phase::Render, now_s(self.epoch));
                        if self.render_q.len() < self.job.queue_cap {
                            self.release(worker, busy);
                            self.push_render(render);
                        } else {
                            let r = &mut self.report.workers[worker];
                            r.jobs += 1;
                            r.busy_s += busy;
                            self.blocked.push_back((worker, render));
                        }
                    }
                }
            }
            Event::Rendered { worker, results, busy } => {
                self.report.render_busy_s += busy;
                self.release(worker, busy);
                for (job, result) in results {
                    let off = self.offset(job.episode_index);
                    if self.rendered[off] || self.settled[off] {
                        self.report.duplicates_dropped += 1;
                        continue;
                    }
                    match result {
                        Ok(_) => {
                            self.rendered[off] = true;
                            self.report.rendered += 1;
                            self.render_q.retain(|j| j.episode_index != job.episode_index);
                        }
                        Err(detail) => match retry_or_fail(&job, self.job.retry_limit) {
                            SupervisorAction::Requeue { job } => self.requeue(job),
                            _ => self.fail(job.episode_index, "render", detail),
                        },
                    }
                }
            }
            Event::Written { index, frames, busy } => {
                self.report.write_busy_s += busy;
                if self.settle(index) {
                    self.report.written += 1;
                    self.report.frames_written += frames;
                    self.report.written_episodes.push(index);
                    let off = self.offset(index);
                    self.payloads[off] = None;
                }
            }
            Event::WriteFailed { index, detail } => {
                return Err(PipelineError::StoreUnwritable(format!("episode {index}: {detail}")));
            }
        }
        Ok(())
    }

    fn push_render(&mut self, job: StageJob) {
        self.render_q.push_back(job);
        self.report.render_queue_high_water = self.report.render_queue_high_water.max(self.render_q.len());
    }

    fn unblock(&mut self) {
        while self.render_q.len() < self.job.queue_cap {
            let Some((worker, job)) = self.blocked.pop_front() else { break };
            let w = &mut self.workers[worker];
            if w.status == WorkerStatus::Busy {
                w.status = WorkerStatus::Idle;
                w.current.clear();
            }
            self.push_render(job);
        }
    }

    fn supervise(&mut self, beats: &[AtomicU64]) {
        for (w, b) in self.workers.iter_mut().zip(beats) {
            w.heartbeat_s = b.load(Ordering::Acquire) as f64 * 1e-9;
        }
        let policy = SupervisorPolicy {
            heartbeat_timeout: self.job.heartbeat_timeout,
            retry_limit: self.job.retry_limit,
        };
        let actions = supervise(&self.workers, self.epoch.elapsed(), &policy);
        apply_actions(&mut self.workers, &actions);
        for a in actions {
            match a {
                SupervisorAction::MarkDead { worker } => {
                    log::warn!("worker {worker} missed its heartbeat; marked dead");
                    self.report.workers[worker].suspected_dead = true;
                }
                SupervisorAction::Requeue { job } => self.requeue(job),
                SupervisorAction::PermanentlyFail { job } => {
                    self.fail(job.episode_index, "supervisor", format!("retry limit reached in {:?}", job.phase))
                }
            }
        }
    }

    fn lost_worker(&mut self, worker: usize) {
        let jobs = std::mem::take(&mut self.workers[worker].current);
        self.workers[worker].status = WorkerStatus::SuspectedDead;
        self.report.workers[worker].suspected_dead = true;
        for j in jobs {
            match retry_or_fail(&j, self.job.retry_limit) {
                SupervisorAction::Requeue { job } => self.requeue(job),
                _ => self.fail(j.episode_index, "supervisor", "worker disconnected".into()),
            }
        }
    }

    fn dispatch(&mut self) {
        let policy = self.job.schedule_policy();
        loop {
            self.unblock();
            let view = QueueView {
                plan: self.plan_q.len(),
                render: self.render_q.len(),
            };
            let assignments = schedule(view, &self.workers, &policy);
            if assignments.is_empty() {
                return;
            }
            let now = now_s(self.epoch);
            for a in assignments {
                let (worker, jobs, task) = match a {
                    Assignment::Plan { worker } => {
                        let mut job = self.plan_q.pop_front().expect("scheduled from queue length");
                        job.started_s = Some(now);
                        (worker, vec![job.clone()], Task::Plan(job))
                    }
                    Assignment::Render { worker, jobs, spill } => {
                        let mut batch = Vec::with_capacity(jobs);
                        for _ in 0..jobs {
                            let mut job = self.render_q.pop_front().expect("scheduled from queue length");
                            job.started_s = Some(now);
                            let ep = self.payloads[self.offset(job.episode_index)].clone().expect("valid plan kept");
                            batch.push((job, ep));
                        }
                        if spill {
                            self.report.spilled_render_jobs += jobs;
                        }
                        let heads = batch.iter().map(|(j, _)| j.clone()).collect();
                        (worker, heads, Task::Render { jobs: batch, spill })
                    }
                };
                let w = &mut self.workers[worker];
                w.status = WorkerStatus::Busy;
                w.current = jobs;
                if let Err(TrySendError::Disconnected(_) | TrySendError::Full(_)) = self.tasks[worker].try_send(task) {
                    self.lost_worker(worker);
                }
            }
        }
    }

    fn check_live(&self) -> Result<(), PipelineError> {
        let alive = |class| self.workers.iter().any(|w| w.class == class && w.alive());
        let busy = self.workers.iter().any(|w| w.status == WorkerStatus::Busy);
        if !self.plan_q.is_empty() && !alive(WorkerClass::Cpu) {
            return Err(PipelineError::Unrecoverable("no live planner worker".into()));
        }
        let spill = self.job.spill_slowdown.is_some() && alive(WorkerClass::Cpu);
        if (!self.render_q.is_empty() || !self.blocked.is_empty()) && !alive(WorkerClass::Gpu) && !spill {
            return Err(PipelineError::Unrecoverable("no live renderer worker".into()));
        }
        let pending_writes = self.report.rendered > self.report.written;
        let queued = !self.plan_q.is_empty() || !self.render_q.is_empty() || !self.blocked.is_empty();
        if self.remaining > 0 && !busy && !queued && !pending_writes {
            return Err(PipelineError::Unrecoverable(format!("{} episodes lost track of", self.remaining)));
        }
        Ok(())
    }
}

/// Runs planning and rendering as separate worker pools joined by bounded
/// queues, writing each successful episode exactly once.
pub fn run_pipeline(job: &JobSpec) -> Result<RunReport, PipelineError> {
    prepare_store(job)?;
    let epoch = Instant::now();
    let n_workers = job.planner_workers + job.renderer_workers;
    let beats: Vec<AtomicU64> = (0..n_workers).map(|_| AtomicU64::new(0)).collect();
    let write_high_water = AtomicU64::new(0);
    let (event_tx, event_rx) = unbounded();
    let (write_tx, write_rx) = bounded::<WriteItem>(job.queue_cap);
    let interval = beat_interval(job.heartbeat_timeout);
    let tick = (job.heartbeat_timeout / 4).clamp(Duration::from_millis(1), Duration::from_millis(50));

    let mut report = new_report(job, "pipelined");
    report.workers = (0..n_workers)
        .map(|id| WorkerReport {
            worker_id: id,
            class: Some(if id < job.planner_workers { WorkerClass::Cpu } else { WorkerClass::Gpu }),
            ..WorkerReport::default()
        })
        .collect();

    let result = thread::scope(|s| {
        let events = event_tx.clone();
        let out = job.out.as_path();
        s.spawn(move || writer_loop(out, write_rx, events));
        let mut tasks = Vec::with_capacity(n_workers);
        let mut workers = Vec::with_capacity(n_workers);
        for id in 0..n_workers {
            let class = if id < job.planner_workers { WorkerClass::Cpu } else { WorkerClass::Gpu };
            let (task_tx, task_rx) = bounded::<Task>(1);
            tasks.push(task_tx);
            workers.push(WorkerState::new(id, class));
            // The beater stops as soon as the worker thread drops `stop`.
            let beat = &beats[id];
            let (stop, stopped) = bounded::<()>(0);
            s.spawn(move || loop {
                beat.store(epoch.elapsed().as_nanos() as u64, Ordering::Release);
                if !matches!(stopped.recv_timeout(interval), Err(RecvTimeoutError::Timeout)) {
                    break;
                }
            });
            let ctx = WorkerCtx {
                id,
                job,
                epoch,
                tasks: task_rx,
                events: event_tx.clone(),
                writes: write_tx.clone(),
                write_high_water: &write_high_water,
            };
            s.spawn(move || {
                let _stop = stop;
                worker_loop(ctx);
            });
        }
        drop(write_tx);
        drop(event_tx);

        let n = job.episodes;
        let mut c = Coordinator {
            job,
            epoch,
            workers,
            tasks,
            plan_q: job.indices().map(|i| StageJob::new(i, Phase::Plan, 0.0)).collect(),
            render_q: VecDeque::new(),
            blocked: VecDeque::new(),
            payloads: vec![None; n],
            planned: vec![false; n],
            rendered: vec![false; n],
            settled: vec![false; n],
            remaining: n,
            report,
        };
        let outcome = (|| {
            while c.remaining > 0 {
                match event_rx.recv_timeout(tick) {
                    Ok(ev) => c.handle(ev)?,
                    Err(RecvTimeoutError::Timeout) => {}
                    Err(RecvTimeoutError::Disconnected) => {
                        return Err(PipelineError::Unrecoverable("all workers exited".into()));
                    }
                }
                while let Ok(ev) = event_rx.try_recv() {
                    c.handle(ev)?;
                }
                if c.remaining == 0 {
                    break;
                }
                c.supervise(&beats);
                c.dispatch();
                c.check_live()?;
            }
            Ok(())
        })();
        // Closing the task channels lets every worker drain and exit.
        c.tasks.clear();
        outcome.map(|()| c.report)
    });
    let mut report = result?;
    report.write_queue_high_water = write_high_water.load(Ordering::Relaxed) as usize;
    finish_store(job, &mut report, epoch)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn workers(cpu: usize, gpu: usize) -> Vec<WorkerState> {
        (0..cpu)
            .map(|i| WorkerState::new(i, WorkerClass::Cpu))
            .chain((0..gpu).map(|i| WorkerState::new(cpu + i, WorkerClass::Gpu)))
            .collect()
    }

    const POLICY: SchedulePolicy = SchedulePolicy {
        render_batch: 1,
        spillover: true,
        spill_threshold: 2,
    };

    #[test]
    fn plan_jobs_go_to_cpus() {
        let a = schedule(QueueView { plan: 1, render: 0 }, &workers(1, 1), &POLICY);
        assert_eq!(a, vec![Assignment::Plan { worker: 0 }]);
    }

    #[test]
    fn no_jobs_no_assignments() {
        assert!(schedule(QueueView { plan: 0, render: 0 }, &workers(4, 2), &POLICY).is_empty());
    }

    #[test]
    fn idle_cpus_spill_onto_render_backlog() {
        let mut ws = workers(4, 1);
        ws[4].status = WorkerStatus::Busy;
        let a = schedule(QueueView { plan: 0, render: 10 }, &ws, &POLICY);
        assert_eq!(a.len(), 4);
        assert!(a.iter().all(|x| matches!(x, Assignment::Render { jobs: 1, spill: true, .. })));
        let off = SchedulePolicy { spillover: false, ..POLICY };
        assert!(schedule(QueueView { plan: 0, render: 10 }, &ws, &off).is_empty());
        // at or under the threshold only the renderer may take them
        assert!(schedule(QueueView { plan: 0, render: 2 }, &ws, &POLICY).is_empty());
    }

    #[test]
    fn gpus_take_batches() {
        let policy = SchedulePolicy { render_batch: 4, ..POLICY };
        let a = schedule(QueueView { plan: 3, render: 6 }, &workers(2, 2), &policy);
        assert_eq!(
            a,
            vec![
                Assignment::Render { worker: 2, jobs: 4, spill: false },
                Assignment::Render { worker: 3, jobs: 2, spill: false },
                Assignment::Plan { worker: 0 },
                Assignment::Plan { worker: 1 },
            ]
        );
    }

    #[test]
    fn cpus_take_all_render_work_without_live_gpu() {
        let mut ws = workers(2, 1);
        ws[2].status = WorkerStatus::SuspectedDead;
        let a = schedule(QueueView { plan: 0, render: 1 }, &ws, &POLICY);
        assert_eq!(a, vec![Assignment::Render { worker: 0, jobs: 1, spill: true }]);
    }

    fn policy() -> SupervisorPolicy {
        SupervisorPolicy {
            heartbeat_timeout: Duration::from_secs(5),
            retry_limit: 2,
        }
    }

    #[test]
    fn fresh_heartbeats_need_nothing() {
        let mut ws = workers(2, 1);
        for w in &mut ws {
            w.heartbeat_s = 9.0;
        }
        assert!(supervise(&ws, Duration::from_secs(10), &policy()).is_empty());
    }

    #[test]
    fn silent_worker_is_marked_and_its_job_requeued() {
        let mut ws = workers(2, 1);
        for w in &mut ws {
            w.heartbeat_s = 9.0;
        }
        ws[1].heartbeat_s = 1.0;
        ws[1].status = WorkerStatus::Busy;
        ws[1].current = vec![StageJob::new(7, Phase::Plan, 0.5)];
        let actions = supervise(&ws, Duration::from_secs(10), &policy());
        let mut requeued = StageJob::new(7, Phase::Plan, 0.5);
        requeued.attempt = 1;
        assert_eq!(
            actions,
            vec![SupervisorAction::MarkDead { worker: 1 }, SupervisorAction::Requeue { job: requeued }]
        );
        apply_actions(&mut ws, &actions);
        assert_eq!(ws[1].status, WorkerStatus::SuspectedDead);
        assert!(supervise(&ws, Duration::from_secs(10), &policy()).is_empty());
        let before = ws.clone();
        apply_actions(&mut ws, &actions);
        assert_eq!(ws, before);
    }

    #[test]
    fn job_at_limit_fails_permanently() {
        let mut job = StageJob::new(3, Phase::Render, 0.0);
        job.attempt = 2;
        assert_eq!(retry_or_fail(&job, 2), SupervisorAction::PermanentlyFail { job: job.clone() });
        job.attempt = 1;
        assert!(matches!(retry_or_fail(&job, 2), SupervisorAction::Requeue { job } if job.attempt == 2));
    }

    #[test]
    fn balance_is_proportional() {
        let items: Vec<u32> = (0..100).collect();
        let sizes = |caps: &[f64], n: usize| balance(&items[..n], caps).iter().map(Vec::len).collect::<Vec<_>>();
        assert_eq!(sizes(&[1.0, 1.0], 100), vec![50, 50]);
        assert_eq!(sizes(&[3.0, 1.0], 100), vec![75, 25]);
        let odd: Vec<u32> = (0..101).collect();
        let parts = balance(&odd, &[1.0, 1.0]);
        assert_eq!(parts.iter().map(Vec::len).collect::<Vec<_>>(), vec![51, 50]);
        assert_eq!(parts.concat(), odd);
        assert_eq!(balance(&odd, &[1.0, 1.0]), parts);
    }

    #[test]
    fn injected_pattern_keeps_exact_fraction() {
        for (p, n) in [(0.5, 200), (0.3, 100), (1.0, 7), (0.0, 9)] {
            let kept = (0..n).filter(|&i| injected_success(p, i)).count();
            assert_eq!(kept, (n as f64 * p).floor() as usize);
        }
    }

    #[test]
    fn cost_model_prediction() {
        let costs = CostModel {
            plan: Duration::from_millis(40),
            render_setup: Duration::from_millis(120),
            render_frame: Duration::ZERO,
        };
        let s = costs.predicted_speedup(200, 100, 60, 4, 1, 1);
        assert!((s - 160.0 / 60.0).abs() < 1e-9);
        let stack = CostModel {
            plan: Duration::ZERO,
            render_setup: Duration::from_millis(8),
            render_frame: Duration::from_millis(1),
        };
        assert_eq!(stack.render_batch(&[25; 4]), Duration::from_millis(108));
        assert_eq!(stack.render(25) * 4, Duration::from_millis(132));
    }

    #[test]
    fn report_consistency() {
        let mut r = RunReport {
            attempted: 10,
            planned_ok: 6,
            validated_ok: 5,
            rendered: 5,
            written: 5,
            plan_failed: 4,
            validation_failed: 1,
            written_episodes: vec![0, 1, 2, 3, 4],
            ..RunReport::default()
        };
        assert!(r.is_consistent());
        r.written = 4;
        assert!(!r.is_consistent());
    }
}
