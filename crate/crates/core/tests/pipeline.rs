mod common;

use std::time::Duration;

use synthline::pipeline::{
    run_pipeline, run_serial_baseline, stack_render, CostModel, FaultPlan, JobSpec, KillSpec, PipelineError, PlanOutcome,
};
use synthline::store::{compute_stats, digest, list_episodes, validate_store};

fn job(n: usize, out: &std::path::Path) -> JobSpec {
    JobSpec::new(common::load("bench_reach.yaml"), n, 11, out)
}

#[test]
fn lossless_flow() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_pipeline(&job(10, dir.path())).unwrap();
    assert!(report.is_consistent());
    assert_eq!((report.written, report.rendered, report.attempted), (10, 10, 10));
    assert!(validate_store(dir.path()).is_clean());
    let stats = compute_stats(dir.path()).unwrap();
    assert_eq!(stats.total_trajectories, report.written);
    assert_eq!(stats.total_frames, report.frames_written);
    assert!(dir.path().join("run_report.json").is_file());
}

#[test]
fn failed_plans_never_render() {
    let dir = tempfile::tempdir().unwrap();
    let mut j = job(10, dir.path());
    j.faults.plan_success = Some(0.5);
    let report = run_pipeline(&j).unwrap();
    assert!(report.is_consistent());
    assert_eq!(report.attempted, 10);
    assert_eq!(report.plan_failed, 5);
    assert_eq!(report.rendered, report.planned_ok);
    assert_eq!(report.written, 5);
    assert_eq!(list_episodes(dir.path()).unwrap(), vec![1, 3, 5, 7, 9]);
}

#[test]
fn full_render_queue_blocks_planners() {
    let dir = tempfile::tempdir().unwrap();
    let mut j = job(8, dir.path());
    j.queue_cap = 1;
    j.spill_slowdown = None;
    j.costs.render_setup = Duration::from_millis(30);
    let report = run_pipeline(&j).unwrap();
    assert_eq!(report.render_queue_high_water, 1);
    assert_eq!(report.written, 8);
}

#[test]
fn random_delays_terminate() {
    for (planners, renderers, cap, batch) in [(1, 1, 1, 1), (3, 2, 2, 2), (2, 1, 1, 3), (4, 2, 3, 1)] {
        let dir = tempfile::tempdir().unwrap();
        let mut j = job(12, dir.path());
        j.planner_workers = planners;
        j.renderer_workers = renderers;
        j.queue_cap = cap;
        j.render_batch = batch;
        j.faults = FaultPlan {
            plan_success: Some(0.75),
            jitter: Duration::from_millis(15),
            ..FaultPlan::default()
        };
        let report = run_pipeline(&j).unwrap();
        assert!(report.is_consistent(), "{planners}x{renderers} cap {cap} batch {batch}");
        assert_eq!(report.written, 9);
    }
}

#[test]
fn dead_planner_jobs_are_retried() {
    let dir = tempfile::tempdir().unwrap();
    let mut j = job(16, dir.path());
    j.planner_workers = 3;
    j.heartbeat_timeout = Duration::from_millis(150);
    j.costs.plan = Duration::from_millis(10);
    j.faults.kill_planner = Some(KillSpec { worker: 1, after_jobs: 2 });
    let report = run_pipeline(&j).unwrap();
    assert!(report.is_consistent());
    assert_eq!(report.retries, 1);
    assert!(report.workers[1].suspected_dead);
    assert_eq!(report.written, 16);
    assert_eq!(list_episodes(dir.path()).unwrap(), (0..16).collect::<Vec<_>>());
}

#[test]
fn every_planner_dead_aborts() {
    let dir = tempfile::tempdir().unwrap();
    let mut j = job(6, dir.path());
    j.planner_workers = 1;
    j.heartbeat_timeout = Duration::from_millis(100);
    j.faults.kill_planner = Some(KillSpec { worker: 0, after_jobs: 1 });
    assert!(matches!(run_pipeline(&j), Err(PipelineError::Unrecoverable(_))));
}

#[test]
fn serial_and_pipelined_stores_match() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut ja = job(6, a.path());
    ja.faults.plan_success = Some(0.5);
    let mut jb = ja.clone();
    jb.out = b.path().to_path_buf();
    jb.render_batch = 2;
    let ra = run_serial_baseline(&ja).unwrap();
    let rb = run_pipeline(&jb).unwrap();
    assert_eq!(ra.written_episodes, rb.written_episodes);
    assert_eq!(digest(a.path()).unwrap(), digest(b.path()).unwrap());
}

#[test]
fn existing_episode_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    run_pipeline(&job(2, dir.path())).unwrap();
    assert!(matches!(run_pipeline(&job(2, dir.path())), Err(PipelineError::StoreUnwritable(_))));
    let mut next = job(2, dir.path());
    next.first = 2;
    assert_eq!(run_pipeline(&next).unwrap().written, 2);
    assert!(validate_store(dir.path()).is_clean());
}

#[test]
fn invalid_jobs_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    for edit in [|j: &mut JobSpec| j.queue_cap = 0, |j: &mut JobSpec| j.render_batch = 0, |j: &mut JobSpec| j.planner_workers = 0] {
        let mut j = job(1, dir.path());
        edit(&mut j);
        assert!(matches!(run_pipeline(&j), Err(PipelineError::ConfigInvalid(_))));
    }
}

#[test]
fn stacked_frames_match_single_renders() {
    let j = job(3, std::path::Path::new("unused"));
    let eps: Vec<_> = (0..3)
        .map(|i| match synthline::pipeline::plan_episode(&j, i).0 {
            PlanOutcome::Valid(ep) => ep,
            other => panic!("{other:?}"),
        })
        .collect();
    let costs = CostModel::default();
    let stacked = stack_render(&j.ctx, &eps, &costs, 1.0);
    for (ep, rec) in eps.iter().zip(stacked) {
        let single = stack_render(&j.ctx, std::slice::from_ref(ep), &costs, 1.0).pop().unwrap().unwrap();
        assert_eq!(rec.unwrap(), single);
    }
}

#[test]
fn cluster_nodes_match_serial_store() {
    use synthline::cluster::{run_cluster, shutdown, spawn_local_nodes};
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut ja = job(7, a.path());
    ja.faults.plan_success = Some(0.5);
    let mut jb = ja.clone();
    jb.out = b.path().to_path_buf();
    run_serial_baseline(&ja).unwrap();
    let nodes = spawn_local_nodes(&jb, 2).unwrap();
    let list: Vec<_> = nodes.iter().map(|(n, _)| n.clone()).collect();
    let report = run_cluster(&jb, &list).unwrap();
    for (n, h) in nodes {
        shutdown(&n).unwrap();
        h.join().unwrap();
    }
    assert!(report.is_consistent());
    assert_eq!(report.written, 3);
    assert_eq!(digest(a.path()).unwrap(), digest(b.path()).unwrap());
}

#[test]
fn lost_node_work_moves_to_survivors() {
    use synthline::cluster::{run_cluster, shutdown, spawn_local_nodes, Node};
    let dir = tempfile::tempdir().unwrap();
    let j = job(6, dir.path());
    let nodes = spawn_local_nodes(&j, 1).unwrap();
    let dead = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let dead_addr = dead.local_addr().unwrap();
    drop(dead);
    let list = vec![nodes[0].0.clone(), Node { addr: dead_addr, capacity: 1.0 }];
    let report = run_cluster(&j, &list).unwrap();
    for (n, h) in nodes {
        shutdown(&n).unwrap();
        h.join().unwrap();
    }
    assert!(report.is_consistent());
    assert_eq!(report.written, 6);
    assert_eq!(report.retries, 3);
    assert!(validate_store(dir.path()).is_clean());
}
