//! Multi-process mode: node processes serve episode jobs over local stream
//! sockets and a coordinator spreads episodes across them by capacity.
//!
//! Every message is a 4-byte big-endian length followed by that many bytes of
//! JSON.

use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::Arc;
use std::thread;
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::pipeline::{
    balance, plan_episode, stack_render, EpisodeFailure, JobSpec, Phase, PipelineError, PlanOutcome, RunReport, StageJob,
    WorkerReport,
};
use crate::store::{self, StoreError};

/// Largest accepted message body.
pub const MAX_FRAME: u32 = 64 << 20;

pub fn write_frame<W: Write, T: Serialize>(w: &mut W, msg: &T) -> io::Result<()> {
    let body = serde_json::to_vec(msg).map_err(io::Error::other)?;
    let len = u32::try_from(body.len()).ok().filter(|&n| n <= MAX_FRAME).ok_or_else(|| io::Error::other("message too large"))?;
    w.write_all(&len.to_be_bytes())?;
    w.write_all(&body)?;
    w.flush()
}

/// Reads one message; `None` on a clean end of stream.
pub fn read_frame<R: Read, T: DeserializeOwned>(r: &mut R) -> io::Result<Option<T>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_be_bytes(len);
    if len > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidData, format!("frame of {len} bytes")));
    }
    let mut body = vec![0; len as usize];
    r.read_exact(&mut body)?;
    serde_json::from_slice(&body).map(Some).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Request {
    Job { job: StageJob },
    Shutdown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeStatus {
    Written,
    PlanFailed,
    ValidationFailed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reply {
    pub job: StageJob,
    pub status: NodeStatus,
    pub frames: usize,
    pub detail: String,
    pub busy_s: f64,
}

/// Plans, renders and writes one episode into the node's store. An episode
/// already on disk counts as written, so a resent job is harmless.
pub fn run_episode(spec: &JobSpec, job: StageJob) -> Reply {
    let started = Instant::now();
    let index = job.episode_index;
    let reply = |job: StageJob, status, frames, detail: String| Reply {
        job,
        status,
        frames,
        detail,
        busy_s: started.elapsed().as_secs_f64(),
    };
    if let Ok(rec) = store::read_episode(&spec.out, index) {
        return reply(job, NodeStatus::Written, rec.meta.length, String::new());
    }
    match plan_episode(spec, index).0 {
        PlanOutcome::PlanFailed(d) => reply(job, NodeStatus::PlanFailed, 0, d),
        PlanOutcome::ValidationFailed(d) => reply(job, NodeStatus::ValidationFailed, 0, d),
        PlanOutcome::Valid(ep) => {
            let rec = stack_render(&spec.ctx, &[ep], &spec.costs, 1.0).pop().expect("one result");
            match rec.and_then(|rec| store::write_episode(&rec, &spec.out).map(|_| rec.meta.length)) {
                Ok(frames) => reply(job, NodeStatus::Written, frames, String::new()),
                Err(StoreError::AlreadyExists(_)) => {
                    let frames = store::read_episode(&spec.out, index).map_or(0, |r| r.meta.length);
                    reply(job, NodeStatus::Written, frames, String::new())
                }
                Err(e) => reply(job, NodeStatus::Failed, 0, e.to_string()),
            }
        }
    }
}

/// Answers requests on one connection until the peer closes it or asks the
/// node to shut down. Returns `true` on a shutdown request.
pub fn serve_connection(spec: &JobSpec, stream: TcpStream) -> io::Result<bool> {
    let mut reader = io::BufReader::new(stream.try_clone()?);
    let mut writer = io::BufWriter::new(stream);
    while let Some(req) = read_frame::<_, Request>(&mut reader)? {
        match req {
            Request::Shutdown => return Ok(true),
            Request::Job { job } => write_frame(&mut writer, &run_episode(spec, job))?,
        }
    }
    Ok(false)
}

/// Serves connections one after another until a shutdown request.
pub fn serve(spec: &JobSpec, listener: TcpListener) -> io::Result<()> {
    store::init_store(&spec.out).map_err(io::Error::other)?;
    for stream in listener.incoming() {
        let stream = stream?;
        match serve_connection(spec, stream) {
            Ok(true) => return Ok(()),
            Ok(false) => {}
            Err(e) => log::warn!("connection dropped: {e}"),
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub addr: SocketAddr,
    pub capacity: f64,
}

struct NodeRun {
    replies: Vec<Reply>,
    unfinished: Vec<StageJob>,
}

fn drive(node: &Node, jobs: Vec<StageJob>) -> NodeRun {
    let mut run = NodeRun {
        replies: Vec::new(),
        unfinished: Vec::new(),
    };
    let stream = match TcpStream::connect(node.addr) {
        Ok(s) => s,
        Err(e) => {
            log::warn!("node {} unreachable: {e}", node.addr);
            run.unfinished = jobs;
            return run;
        }
    };
    let mut io = match stream.try_clone() {
        Ok(r) => (io::BufReader::new(r), io::BufWriter::new(stream)),
        Err(_) => {
            run.unfinished = jobs;
            return run;
        }
    };
    let mut pending = jobs.into_iter();
    while let Some(job) = pending.next() {
        let answer = write_frame(&mut io.1, &Request::Job { job: job.clone() }).and_then(|()| read_frame::<_, Reply>(&mut io.0));
        match answer {
            Ok(Some(reply)) => run.replies.push(reply),
            _ => {
                log::warn!("node {} lost during episode {}", node.addr, job.episode_index);
                run.unfinished.push(job);
                run.unfinished.extend(pending);
                break;
            }
        }
    }
    run
}

/// Spreads the job's episodes over `nodes` in proportion to capacity. Jobs
/// left unfinished by a lost node are retried on the remaining nodes.
pub fn run_cluster(spec: &JobSpec, nodes: &[Node]) -> Result<RunReport, PipelineError> {
    spec.validate()?;
    if nodes.is_empty() {
        return Err(PipelineError::ConfigInvalid("no nodes given".into()));
    }
    store::init_store(&spec.out)?;
    let started = Instant::now();
    let mut report = RunReport {
        mode: "cluster".into(),
        task: spec.ctx.cfg.name.clone(),
        seed: spec.seed,
        attempted: spec.episodes,
        workers: (0..nodes.len())
            .map(|i| WorkerReport {
                worker_id: i,
                ..WorkerReport::default()
            })
            .collect(),
        ..RunReport::default()
    };
    let mut live: Vec<usize> = (0..nodes.len()).collect();
    let mut pending: Vec<StageJob> = (spec.first..spec.first + spec.episodes as u64).map(|i| StageJob::new(i, Phase::Plan, 0.0)).collect();
    while !pending.is_empty() {
        if live.is_empty() {
            return Err(PipelineError::Unrecoverable("every node was lost".into()));
        }
        let caps: Vec<f64> = live.iter().map(|&i| nodes[i].capacity).collect();
        let parts = balance(&pending, &caps);
        let runs: Vec<NodeRun> = thread::scope(|s| {
            let handles: Vec<_> = live.iter().zip(parts).map(|(&i, part)| s.spawn(move || drive(&nodes[i], part))).collect();
            handles.into_iter().map(|h| h.join().expect("node driver")).collect()
        });
        pending.clear();
        let mut still_live = Vec::new();
        for (&i, run) in live.iter().zip(runs) {
            let w = &mut report.workers[i];
            w.jobs += run.replies.len();
            w.busy_s += run.replies.iter().map(|r| r.busy_s).sum::<f64>();
            for r in run.replies {
                tally(&mut report, r);
            }
            if run.unfinished.is_empty() {
                still_live.push(i);
            } else {
                report.workers[i].suspected_dead = true;
            }
            for job in run.unfinished {
                if job.attempt >= spec.retry_limit {
                    report.permanently_failed += 1;
                    report.failures.push(EpisodeFailure {
                        episode_index: job.episode_index,
                        stage: "supervisor".into(),
                        detail: "retry limit reached".into(),
                    });
                } else {
                    report.retries += 1;
                    pending.push(StageJob {
                        attempt: job.attempt + 1,
                        ..job
                    });
                }
            }
        }
        live = still_live;
        pending.sort_by_key(|j| j.episode_index);
    }
    store::finalize_store(&spec.out)?;
    report.wall_time_s = started.elapsed().as_secs_f64();
    report.written_episodes.sort_unstable();
    report.failures.sort_by_key(|f| f.episode_index);
    if report.wall_time_s > 0.0 {
        report.episodes_per_s = report.written as f64 / report.wall_time_s;
        report.frames_per_s = report.frames_written as f64 / report.wall_time_s;
        for w in &mut report.workers {
            w.utilization = (w.busy_s / report.wall_time_s).clamp(0.0, 1.0);
        }
    }
    report.write_to(&spec.out)?;
    Ok(report)
}

fn tally(report: &mut RunReport, r: Reply) {
    let index = r.job.episode_index;
    let fail = |stage: &str| EpisodeFailure {
        episode_index: index,
        stage: stage.into(),
        detail: r.detail.clone(),
    };
    match r.status {
        NodeStatus::Written => {
            report.planned_ok += 1;
            report.validated_ok += 1;
            report.rendered += 1;
            report.written += 1;
            report.frames_written += r.frames;
            report.written_episodes.push(index);
        }
        NodeStatus::PlanFailed => {
            report.plan_failed += 1;
            report.failures.push(fail("plan"));
        }
        NodeStatus::ValidationFailed => {
            report.planned_ok += 1;
            report.validation_failed += 1;
            report.failures.push(fail("validation"));
        }
        NodeStatus::Failed => {
            report.planned_ok += 1;
            report.validated_ok += 1;
            report.permanently_failed += 1;
            report.failures.push(fail("render"));
        }
    }
}

/// Starts `count` in-process nodes on loopback ports, for tests and demos.
pub fn spawn_local_nodes(spec: &JobSpec, count: usize) -> io::Result<Vec<(Node, thread::JoinHandle<()>)>> {
    (0..count)
        .map(|_| {
            let listener = TcpListener::bind("127.0.0.1:0")?;
            let addr = listener.local_addr()?;
            let spec = Arc::new(spec.clone());
            let handle = thread::spawn(move || {
                if let Err(e) = serve(&spec, listener) {
                    log::warn!("node stopped: {e}");
                }
            });
            Ok((Node { addr, capacity: 1.0 }, handle))
        })
        .collect()
}

/// Asks a node to stop serving.
pub fn shutdown(node: &Node) -> io::Result<()> {
    let mut s = TcpStream::connect(node.addr)?;
    write_frame(&mut s, &Request::Shutdown)
}
