mod common;

use std::sync::OnceLock;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use synthline::config::ArmSide;
use synthline::episode::TaskContext;
use synthline::geometry::Pose;
use synthline::kinematics::{interpolate_trajectory, pose_error, solve_ik, Arm, IkOptions};
use synthline::render::render_episode;
use synthline::scene::ArmKey;

fn arm(side: ArmSide) -> &'static Arm {
    static ARMS: OnceLock<(Arm, Arm)> = OnceLock::new();
    let arms = ARMS.get_or_init(|| {
        let ctx = common::load("sort_tray.yaml");
        let scene = ctx.sample_scene(0, 0).unwrap();
        let get = |s| scene.state.arm(&ArmKey::new("split_aloha", s)).unwrap().model.clone();
        (get(ArmSide::Left), get(ArmSide::Right))
    });
    match side {
        ArmSide::Left => &arms.0,
        ArmSide::Right => &arms.1,
    }
}

fn config_in_limits(arm: &Arm, unit: &[f64]) -> Vec<f64> {
    arm.chain.limits().iter().zip(unit).map(|([lo, hi], u)| lo + u * (hi - lo)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ik_solutions_reproduce_the_target(unit in prop::collection::vec(0.05..0.95f64, 6), seed in any::<u64>(), left in any::<bool>()) {
        let arm = arm(if left { ArmSide::Left } else { ArmSide::Right });
        let target = arm.fk(&config_in_limits(arm, &unit)).unwrap();
        let opts = IkOptions::default();
        let home = vec![0.0; arm.dof()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if let Ok(sol) = solve_ik(arm, &target, &home, &opts, 64, &mut rng) {
            let (dp, dr) = pose_error(&arm.fk(&sol.q).unwrap(), &target);
            prop_assert!(dp.norm() <= opts.t_eps, "position residual {}", dp.norm());
            prop_assert!(dr.norm() <= opts.o_eps, "orientation residual {}", dr.norm());
            prop_assert!(arm.within_limits(&sol.q));
        }
    }

    #[test]
    fn jacobian_matches_finite_differences(unit in prop::collection::vec(0.05..0.95f64, 6)) {
        let arm = arm(ArmSide::Right);
        let q = config_in_limits(arm, &unit);
        let j = arm.jacobian(&q).unwrap();
        let h = 1e-6;
        let base = arm.fk(&q).unwrap();
        for c in 0..q.len() {
            let (mut plus, mut minus) = (q.clone(), q.clone());
            plus[c] += h;
            minus[c] -= h;
            let (p, m) = (arm.fk(&plus).unwrap(), arm.fk(&minus).unwrap());
            let dp = (p.translation - m.translation) / (2.0 * h);
            let (_, rp) = pose_error(&base, &p);
            let (_, rm) = pose_error(&base, &m);
            let dr = (rp - rm) / (2.0 * h);
            for r in 0..3 {
                prop_assert!((j[(r, c)] - dp[r]).abs() < 1e-5);
                prop_assert!((j[(r + 3, c)] - dr[r]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn interpolation_respects_velocity_limit(
        points in prop::collection::vec(prop::collection::vec(-3.0..3.0f64, 3), 2..6),
        vmax in 0.2..3.0f64,
    ) {
        let dt = 1.0 / 30.0;
        let samples = interpolate_trajectory(&points, &[vmax; 3], dt);
        prop_assert_eq!(samples.first(), points.first());
        prop_assert_eq!(samples.last(), points.last());
        for w in samples.windows(2) {
            for (a, b) in w[0].iter().zip(&w[1]) {
                prop_assert!((b - a).abs() <= vmax * dt + 1e-12);
            }
        }
    }
}

fn check_plans(ctx: &TaskContext, seeds: u64) -> usize {
    let bound = ctx.params.vmax * ctx.params.dt;
    let mut valid = 0;
    for seed in 0..seeds {
        let ep = ctx.plan(seed, 1).unwrap();
        assert_eq!(ep, ctx.plan(seed, 1).unwrap(), "seed {seed}: planning is not deterministic");
        let Ok(plan) = &ep.plan else { continue };
        for a in &plan.arms {
            for w in a.samples.windows(2) {
                for (x, y) in w[0].iter().zip(&w[1]) {
                    assert!((y - x).abs() <= bound + 1e-12, "seed {seed}: joint step {}", (y - x).abs());
                }
            }
        }
        if ep.is_valid() {
            valid += 1;
            for w in &plan.waypoints {
                assert!(w.pos_residual <= w.t_eps && w.ori_residual <= w.o_eps, "seed {seed}: waypoint {w:?}");
            }
        }
    }
    valid
}

#[test]
fn fixture_plans_are_smooth_deterministic_and_on_target() {
    for (task, seeds) in [("sort_tray.yaml", 6), ("close_microwave.yaml", 6), ("bench_reach.yaml", 10)] {
        let ctx = common::load(task);
        let valid = check_plans(&ctx, seeds);
        assert!(valid > 0, "{task}: no valid plans");
    }
}

#[test]
fn rendering_is_deterministic() {
    let ctx = common::load("bench_reach.yaml");
    let ep = ctx.plan(5, 0).unwrap();
    let plan = ep.plan.as_ref().unwrap();
    let a = render_episode(&ep.scene, plan);
    let b = render_episode(&ep.scene, plan);
    assert!(!a.cameras.is_empty());
    for (x, y) in a.cameras.iter().zip(&b.cameras) {
        assert_eq!(x.frames, y.frames);
        assert_eq!(x.poses, y.poses);
        assert_eq!(x.frames.len(), plan.len());
    }
}

#[test]
fn arm_poses_follow_the_robot_base() {
    let ctx = common::load("sort_tray.yaml");
    let scene = ctx.sample_scene(0, 0).unwrap();
    for a in &scene.state.arms {
        let fk: Pose = a.model.fk(&a.q).unwrap();
        let (dp, dr) = pose_error(&fk, &a.ee);
        assert!(dp.norm() < 1e-9 && dr.norm() < 1e-9);
    }
}
