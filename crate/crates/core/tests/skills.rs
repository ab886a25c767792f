mod common;

use std::collections::BTreeMap;
use std::sync::Arc;

use synthline::config::SkillSpec;
use synthline::episode::TaskContext;
use synthline::geometry::Vec3;
use synthline::planner::PlanResult;
use synthline::scene::ArmKey;
use synthline::skills::{apply_waypoint, Phase, SkillPlan};

const SEEDS: u64 = 12;

fn compiled(ctx: &TaskContext, seed: u64) -> Option<(synthline::episode::SceneSample, SkillPlan)> {
    let scene = ctx.sample_scene(seed, 0).unwrap();
    let plan = ctx.compile(&scene, seed, 0, 0).ok()?;
    Some((scene, plan))
}

fn phase_pairs_hold(phases: &[Phase]) -> bool {
    let after = |i: usize, p: Phase| phases.get(i + 1) == Some(&p);
    phases.iter().enumerate().all(|(i, p)| match p {
        Phase::PreGrasp => after(i, Phase::Grasp) && after(i + 1, Phase::PostGrasp),
        Phase::Grasp => i > 0 && phases[i - 1] == Phase::PreGrasp,
        Phase::PostGrasp => i > 0 && phases[i - 1] == Phase::Grasp,
        Phase::PreContact => after(i, Phase::Contact),
        Phase::Contact => i > 0 && matches!(phases[i - 1], Phase::PreContact | Phase::Contact),
        Phase::PostContact => i > 0 && matches!(phases[i - 1], Phase::Contact | Phase::PostContact),
        _ => true,
    })
}

#[test]
fn expansions_emit_phases_in_order() {
    for task in ["sort_tray.yaml", "close_microwave.yaml"] {
        let ctx = common::load(task);
        let mut checked = 0;
        for seed in 0..SEEDS {
            let Some((_, plan)) = compiled(&ctx, seed) else { continue };
            for step in &plan.steps {
                for arm in &step.arms {
                    let phases: Vec<Phase> = arm.waypoints.iter().map(|w| w.phase).collect();
                    assert!(phase_pairs_hold(&phases), "{task} seed {seed}: {phases:?}");
                }
            }
            checked += 1;
        }
        assert!(checked > SEEDS / 2, "{task}: only {checked} plans compiled");
    }
}

#[test]
fn compilation_is_deterministic() {
    let ctx = common::load("sort_tray.yaml");
    for seed in 0..4 {
        let scene = ctx.sample_scene(seed, 2).unwrap();
        assert_eq!(ctx.compile(&scene, seed, 2, 0), ctx.compile(&scene, seed, 2, 0));
    }
}

#[test]
fn zero_tolerance_placement_aligns_axes() {
    let base = common::load("sort_tray.yaml");
    let mut cfg = base.cfg.clone();
    let mut axes = None;
    for block in &mut cfg.skills {
        for step in &mut block.steps {
            for (_, skills) in &mut step.arms {
                for s in skills.iter_mut() {
                    if let SkillSpec::Place(p) = s {
                        p.align_obj_tol_deg = 0.0;
                        axes = Some((p.object.clone(), p.container.clone(), p.align_pick_obj_axis.unwrap(), p.align_place_obj_axis.unwrap()));
                    }
                }
            }
        }
    }
    let (object, container, pick_axis, place_axis) = axes.expect("fixture has a place skill with alignment axes");
    let ctx = TaskContext::new(cfg, Arc::clone(&base.registry)).unwrap();
    let mut checked = 0;
    for seed in 0..SEEDS {
        let Some((scene, plan)) = compiled(&ctx, seed) else { continue };
        let mut state = scene.state.clone();
        for step in &plan.steps {
            for arm in &step.arms {
                let key = step.key(arm);
                for w in &arm.waypoints {
                    apply_waypoint(&mut state, &key, w);
                    if w.phase == Phase::Place && w.attach.as_deref() == Some(object.as_str()) {
                        let o = state.object(&object).unwrap();
                        let c = state.object(&container).unwrap();
                        let a = o.pose.rotation * Vec3::from(pick_axis).normalize();
                        let b = c.pose.rotation * Vec3::from(place_axis).normalize();
                        let angle = a.angle(&b);
                        assert!(angle <= 1e-6, "seed {seed}: axes {angle:e} rad apart");
                        checked += 1;
                    }
                }
            }
        }
    }
    assert!(checked > 0);
}

/// Every sample's attachments, by arm.
fn attachments(plan: &PlanResult) -> BTreeMap<ArmKey, (&[bool], &[Option<String>])> {
    plan.arms.iter().map(|a| (a.arm.clone(), (a.gripper_closed.as_slice(), a.attached.as_slice()))).collect()
}

#[test]
fn attachment_timeline_is_consistent() {
    for task in ["sort_tray.yaml", "close_microwave.yaml"] {
        let ctx = common::load(task);
        for seed in 0..SEEDS / 2 {
            let ep = ctx.plan(seed, 0).unwrap();
            let Ok(plan) = &ep.plan else { continue };
            let arms = attachments(plan);
            for (key, (closed, attached)) in &arms {
                assert_eq!(closed.len(), attached.len());
                for k in 0..attached.len() {
                    if attached[k].is_some() {
                        assert!(closed[k], "{task} seed {seed} {key}: holding with an open gripper at {k}");
                    }
                    if k > 0 && attached[k] != attached[k - 1] {
                        if attached[k].is_some() {
                            // A close that grips an object still held by the other arm
                            // attaches when that arm lets go, at the grasp waypoint.
                            let closing = closed[k] && !closed[k - 1];
                            let grasp_done = plan.waypoints.iter().any(|w| &w.arm == key && w.phase == Phase::Grasp && w.sample == k);
                            assert!(closing || grasp_done, "{task} {key}: attach without close at {k}");
                        } else {
                            assert!(!closed[k], "{task} {key}: detach without open at {k}");
                        }
                    }
                }
            }
            for k in 0..plan.len() {
                let mut held: Vec<&String> = arms.values().filter_map(|(_, a)| a.get(k).and_then(|o| o.as_ref())).collect();
                let n = held.len();
                held.sort();
                held.dedup();
                assert_eq!(held.len(), n, "{task} seed {seed}: object held by two arms at {k}");
            }
        }
    }
}
