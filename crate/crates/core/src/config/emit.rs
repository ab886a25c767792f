use super::*;

/// Writes a config back to document text. `parse_task_config` of the result
/// is structurally equal to `cfg`.
pub fn serialize_config(cfg: &TaskConfig) -> String {
    serde_yaml::to_string(&to_value(cfg)).expect("config trees always serialize")
}

fn s(v: &str) -> Value {
    Value::String(v.to_string())
}

fn n(v: f64) -> Value {
    Value::Number(v.into())
}

fn list(v: &[f64]) -> Value {
    Value::Sequence(v.iter().map(|x| n(*x)).collect())
}

struct Out(Mapping);

impl Out {
    fn new() -> Self {
        Out(Mapping::new())
    }

    fn put(&mut self, k: &str, v: Value) -> &mut Self {
        self.0.insert(s(k), v);
        self
    }

    fn opt(&mut self, k: &str, v: Option<Value>) -> &mut Self {
        if let Some(v) = v {
            self.put(k, v);
        }
        self
    }

    fn finish(&mut self, extras: &Mapping) -> Value {
        let mut m = std::mem::take(&mut self.0);
        for (k, v) in extras {
            m.insert(k.clone(), v.clone());
        }
        Value::Mapping(m)
    }
}

/// Typed config to YAML tree (the inverse of [`from_value`]).
pub fn to_value(cfg: &TaskConfig) -> Value {
    let mut o = Out::new();
    o.put("name", s(&cfg.name))
        .put("task_id", Value::Number(cfg.task_id.into()))
        .put("env_map", env_map(&cfg.env_map))
        .put("robots", Value::Sequence(cfg.robots.iter().map(robot).collect()))
        .put("objects", Value::Sequence(cfg.objects.iter().map(object).collect()))
        .put("regions", Value::Sequence(cfg.regions.iter().map(region).collect()))
        .put("cameras", Value::Sequence(cfg.cameras.iter().map(camera).collect()))
        .put("data", data(&cfg.data))
        .put("skills", Value::Sequence(cfg.skills.iter().map(skill_block).collect()));
    o.finish(&cfg.extras)
}

fn env_map(e: &EnvMapSpec) -> Value {
    Out::new()
        .put("envmap_lib", s(&e.library_id))
        .put("apply_randomization", Value::Bool(e.apply_randomization))
        .put("intensity_range", list(&e.intensity_range))
        .put("rotation_range", list(&e.rotation_range))
        .finish(&e.extras)
}

fn robot(r: &RobotSpec) -> Value {
    let mut o = Out::new();
    o.put("name", s(&r.name))
        .put("path", s(&r.embodiment_id))
        .put("euler", list(&r.euler_deg));
    for h in &r.homes {
        o.put(&format!("{}_joint_home", h.arm), list(&h.mean))
            .put(&format!("{}_joint_home_std", h.arm), list(&h.std));
    }
    o.finish(&r.extras)
}

fn object(ob: &ObjectSpec) -> Value {
    Out::new()
        .put("name", s(&ob.name))
        .opt("path", ob.asset_path.as_deref().map(s))
        .opt("category", ob.category.as_deref().map(s))
        .put("target_class", s(ob.target_class.as_str()))
        .put("translation", list(&ob.translation))
        .put("euler", list(&ob.euler_deg))
        .put("scale", list(&ob.scale))
        .put("apply_randomization", Value::Bool(ob.apply_randomization))
        .finish(&ob.extras)
}

fn region(r: &RegionSpec) -> Value {
    let rc = Out::new()
        .put(
            "pos_range",
            Value::Sequence(vec![list(&r.pos_range[0]), list(&r.pos_range[1])]),
        )
        .put("yaw_rotation", list(&r.yaw_range))
        .finish(&r.random_config_extras);
    Out::new()
        .put("object", s(&r.object))
        .put("target", s(&r.target))
        .put("random_type", s(&r.random_type))
        .put("random_config", rc)
        .finish(&r.extras)
}

fn intrinsics(i: &Intrinsics) -> Value {
    Out::new()
        .put("width", Value::Number(i.width.into()))
        .put("height", Value::Number(i.height.into()))
        .put("focal", n(i.focal))
        .finish(&i.extras)
}

fn camera(c: &CameraSpec) -> Value {
    let params = match &c.params {
        CameraParams::Reference(r) => s(r),
        CameraParams::Inline(i) => intrinsics(i),
    };
    Out::new()
        .put("name", s(&c.name))
        .put("translation", list(&c.translation))
        .put("orientation", list(&c.orientation))
        .put("parent", s(&c.parent))
        .put("params", params)
        .put("apply_randomization", Value::Bool(c.apply_randomization))
        .put("max_translation_noise", n(c.max_translation_noise))
        .put("max_orientation_noise", n(c.max_orientation_noise))
        .finish(&c.extras)
}

fn data(d: &DataSpec) -> Value {
    Out::new()
        .put("save_root_path", s(&d.save_root_path))
        .put("task_dir", s(&d.task_dir))
        .put("language_instruction", s(&d.language_instruction))
        .put("detailed_language_instruction", s(&d.detailed_language_instruction))
        .put("version", s(&d.version))
        .put("max_episode_length", Value::Number(d.max_episode_length.into()))
        .finish(&d.extras)
}

fn skill_block(b: &SkillBlock) -> Value {
    let steps = b
        .steps
        .iter()
        .map(|step| {
            let mut m = Mapping::new();
            for (arm, skills) in &step.arms {
                m.insert(s(arm.as_str()), Value::Sequence(skills.iter().map(skill).collect()));
            }
            Value::Mapping(m)
        })
        .collect();
    let mut m = Mapping::new();
    m.insert(s(&b.robot), Value::Sequence(steps));
    Value::Mapping(m)
}

fn filters(o: &mut Out, fs: &[DirectionFilter]) {
    for f in fs {
        let mut items = vec![s(f.direction.as_str()), n(f.center_deg)];
        if let Some(t) = f.tolerance_deg {
            items.push(n(t));
        }
        o.put(f.axis.key(), Value::Sequence(items));
    }
}

fn names(v: &[&str]) -> Value {
    Value::Sequence(v.iter().map(|x| s(x)).collect())
}

fn skill(spec: &SkillSpec) -> Value {
    let mut o = Out::new();
    o.put("name", s(spec.name()));
    match spec {
        SkillSpec::Pick(p) => {
            o.put("objects", names(&[&p.object]));
            filters(&mut o, &p.filters);
            o.put("t_eps", n(p.t_eps))
                .put("o_eps", n(p.o_eps_deg))
                .put("close_wait_steps", Value::Number(p.close_wait_steps.into()))
                .put("post_grasp_offset_min", n(p.post_grasp_offset[0]))
                .put("post_grasp_offset_max", n(p.post_grasp_offset[1]))
                .opt("direction_to_obj", p.direction_to_obj.map(|d| s(d.as_str())));
            o.finish(&p.extras)
        }
        SkillSpec::Place(p) => {
            o.put("objects", names(&[&p.object, &p.container]))
                .opt("place_direction", p.place_direction.as_deref().map(s));
            filters(&mut o, &p.filters);
            o.opt("position_constraint", p.position_constraint.as_deref().map(s))
                .put("x_ratio_range", list(&p.x_ratio_range))
                .put("y_ratio_range", list(&p.y_ratio_range))
                .opt("align_pick_obj_axis", p.align_pick_obj_axis.map(|a| list(&a)))
                .opt("align_place_obj_axis", p.align_place_obj_axis.map(|a| list(&a)))
                .put("align_obj_tol", n(p.align_obj_tol_deg))
                .put("pre_place_z_offset", n(p.pre_place_z_offset))
                .put("place_z_offset", n(p.place_z_offset))
                .put("t_eps", n(p.t_eps))
                .put("o_eps", n(p.o_eps_deg));
            o.finish(&p.extras)
        }
        SkillSpec::Push(p) => {
            o.put("objects", names(&[&p.object]))
                .put("joint", s(&p.joint))
                .put("delta", n(p.delta))
                .put("contact_expansion", n(p.expansion))
                .put("t_eps", n(p.t_eps))
                .put("o_eps", n(p.o_eps_deg));
            o.finish(&p.extras)
        }
        SkillSpec::GotoPose(g) => {
            let gripper = match g.gripper {
                GripperCommand::Open => "open_gripper",
                GripperCommand::Close => "close_gripper",
                GripperCommand::Hold => "hold",
            };
            o.put("frame", s(&g.frame))
                .put("gripper_action", s(gripper))
                .put("translation", list(&g.translation))
                .put("quaternion", list(&g.quaternion));
            o.finish(&g.extras)
        }
        SkillSpec::GripperAction(g) => {
            let action = match g.action {
                GripperAction::Open => "open",
                GripperAction::Close => "close",
            };
            o.put("action_type", s(action))
                .opt("dwell_steps", g.dwell_steps.map(|d| Value::Number(d.into())));
            o.finish(&g.extras)
        }
        SkillSpec::Home { extras } => o.finish(extras),
    }
}
