use super::*;

const UNSUPPORTED_SKILLS: [&str; 6] = ["fold", "unfold", "pour", "water", "wipe", "hang_garment"];

/// Parses a task document. Placeholders are kept verbatim.
pub fn parse_task_config(text: &str) -> Result<TaskConfig, ConfigError> {
    let value = parse_yaml(text)?;
    from_value(&value)
}

pub(crate) fn parse_yaml(text: &str) -> Result<Value, ConfigError> {
    check_subset(text)?;
    let value: Value = serde_yaml::from_str(text).map_err(|e| {
        let (line, column) = e.location().map(|l| (l.line(), l.column())).unwrap_or((0, 0));
        ConfigError::Syntax {
            line,
            column,
            message: e.to_string(),
        }
    })?;
    reject_tags(&value, "")?;
    Ok(value)
}

/// Rejects anchors, aliases and tags, which the document format excludes.
fn check_subset(text: &str) -> Result<(), ConfigError> {
    for (ln, line) in text.lines().enumerate() {
        let chars: Vec<(usize, char)> = line.char_indices().collect();
        let mut quote: Option<char> = None;
        let mut value_start = true;
        let mut prev_space = true;
        let mut flow = 0usize;
        for (i, &(col, ch)) in chars.iter().enumerate() {
            if let Some(q) = quote {
                if ch == q {
                    quote = None;
                }
                continue;
            }
            if ch.is_whitespace() {
                prev_space = true;
                continue;
            }
            if ch == '#' && prev_space {
                break;
            }
            if value_start {
                match ch {
                    '&' | '*' | '!' => {
                        return Err(ConfigError::Syntax {
                            line: ln + 1,
                            column: col + 1,
                            message: format!("`{ch}`: anchors, aliases and tags are not supported"),
                        })
                    }
                    '"' | '\'' => {
                        quote = Some(ch);
                        value_start = false;
                        prev_space = false;
                        continue;
                    }
                    _ => {}
                }
            }
            let next_is_space = chars.get(i + 1).is_none_or(|&(_, c)| c.is_whitespace());
            let flow_open = matches!(ch, '[' | '{') && (value_start || flow > 0);
            if flow_open {
                flow += 1;
            } else if matches!(ch, ']' | '}') && flow > 0 {
                flow -= 1;
            }
            value_start = flow_open
                || (flow > 0 && ch == ',')
                || (ch == ':' && (next_is_space || flow > 0))
                || (value_start && matches!(ch, '-' | '?') && next_is_space);
            prev_space = false;
        }
    }
    Ok(())
}

fn reject_tags(v: &Value, path: &str) -> Result<(), ConfigError> {
    match v {
        Value::Tagged(t) => Err(ConfigError::schema(path, "untagged value", format!("tag {}", t.tag))),
        Value::Sequence(s) => {
            for (i, x) in s.iter().enumerate() {
                reject_tags(x, &format!("{path}[{i}]"))?;
            }
            Ok(())
        }
        Value::Mapping(m) => {
            for (k, x) in m {
                reject_tags(x, &join(path, &key_str(k)))?;
            }
            Ok(())
        }
        _ => Ok(()),
    }
}

pub(crate) fn describe(v: &Value) -> String {
    match v {
        Value::Null => "null".into(),
        Value::Bool(b) => format!("bool {b}"),
        Value::Number(n) => format!("number {n}"),
        Value::String(s) => format!("string {s:?}"),
        Value::Sequence(s) => format!("sequence of {}", s.len()),
        Value::Mapping(_) => "mapping".into(),
        Value::Tagged(t) => format!("tag {}", t.tag),
    }
}

fn key_str(k: &Value) -> String {
    match k {
        Value::String(s) => s.clone(),
        other => describe(other),
    }
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

/// Typed view over one mapping that remembers which keys were consumed.
struct Fields<'a> {
    map: &'a Mapping,
    path: String,
    seen: Vec<&'static str>,
}

impl<'a> Fields<'a> {
    fn new(v: &'a Value, path: impl Into<String>) -> Result<Self, ConfigError> {
        let path = path.into();
        match v {
            Value::Mapping(map) => Ok(Self {
                map,
                path,
                seen: Vec::new(),
            }),
            other => Err(ConfigError::schema(path, "mapping", describe(other))),
        }
    }

    fn at(&self, key: &str) -> String {
        join(&self.path, key)
    }

    fn get(&mut self, key: &'static str) -> Option<&'a Value> {
        self.seen.push(key);
        match self.map.get(key) {
            None | Some(Value::Null) => None,
            Some(v) => Some(v),
        }
    }

    fn req(&mut self, key: &'static str) -> Result<&'a Value, ConfigError> {
        let path = self.at(key);
        self.get(key)
            .ok_or_else(|| ConfigError::schema(path, format!("key `{key}`"), "nothing"))
    }

    fn string(&mut self, key: &'static str) -> Result<String, ConfigError> {
        let v = self.req(key)?;
        as_string(v, &self.at(key))
    }

    fn opt_string(&mut self, key: &'static str) -> Result<Option<String>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => as_string(v, &self.at(key)).map(Some),
        }
    }

    fn f64_or(&mut self, key: &'static str, default: f64) -> Result<f64, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => as_f64(v, &self.at(key)),
        }
    }

    fn bool_or(&mut self, key: &'static str, default: bool) -> Result<bool, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(Value::Bool(b)) => Ok(*b),
            Some(other) => Err(ConfigError::schema(self.at(key), "bool", describe(other))),
        }
    }

    fn u64_or(&mut self, key: &'static str, default: u64) -> Result<u64, ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_u64()
                .ok_or_else(|| ConfigError::schema(self.at(key), "nonnegative integer", describe(v))),
        }
    }

    fn vec3_or(&mut self, key: &'static str, default: [f64; 3]) -> Result<[f64; 3], ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => fixed::<3>(v, &self.at(key)),
        }
    }

    fn range_or(&mut self, key: &'static str, default: [f64; 2]) -> Result<[f64; 2], ConfigError> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => {
                let path = self.at(key);
                let r = fixed::<2>(v, &path)?;
                if r[0] > r[1] {
                    return Err(ConfigError::schema(path, "[min, max] with min <= max", format!("[{}, {}]", r[0], r[1])));
                }
                Ok(r)
            }
        }
    }

    fn extras(&self) -> Mapping {
        self.map
            .iter()
            .filter(|(k, _)| match k {
                Value::String(s) => !self.seen.contains(&s.as_str()),
                _ => true,
            })
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }
}

fn as_string(v: &Value, path: &str) -> Result<String, ConfigError> {
    match v {
        Value::String(s) => Ok(s.clone()),
        other => Err(ConfigError::schema(path, "string", describe(other))),
    }
}

fn as_f64(v: &Value, path: &str) -> Result<f64, ConfigError> {
    match v {
        Value::Number(n) => n
            .as_f64()
            .filter(|x| x.is_finite())
            .ok_or_else(|| ConfigError::schema(path, "finite number", describe(v))),
        other => Err(ConfigError::schema(path, "number", describe(other))),
    }
}

fn seq<'a>(v: &'a Value, path: &str) -> Result<&'a Vec<Value>, ConfigError> {
    match v {
        Value::Sequence(s) => Ok(s),
        other => Err(ConfigError::schema(path, "sequence", describe(other))),
    }
}

fn f64_list(v: &Value, path: &str) -> Result<Vec<f64>, ConfigError> {
    seq(v, path)?
        .iter()
        .enumerate()
        .map(|(i, x)| as_f64(x, &format!("{path}[{i}]")))
        .collect()
}

fn fixed<const N: usize>(v: &Value, path: &str) -> Result<[f64; N], ConfigError> {
    let list = f64_list(v, path)?;
    list.as_slice()
        .try_into()
        .map_err(|_| ConfigError::schema(path, format!("{N} numbers"), format!("{} numbers", list.len())))
}

fn list_of<T>(
    v: Option<&Value>,
    path: &str,
    mut f: impl FnMut(&Value, String) -> Result<T, ConfigError>,
) -> Result<Vec<T>, ConfigError> {
    match v {
        None => Ok(Vec::new()),
        Some(v) => seq(v, path)?
            .iter()
            .enumerate()
            .map(|(i, x)| f(x, format!("{path}[{i}]")))
            .collect(),
    }
}

/// Maps a YAML tree onto a [`TaskConfig`].
pub fn from_value(root: &Value) -> Result<TaskConfig, ConfigError> {
    let mut f = Fields::new(root, "")?;
    let name = f.string("name")?;
    let task_id = f.u64_or("task_id", 0)?;
    let env_map = match f.get("env_map") {
        None => EnvMapSpec::default(),
        Some(v) => env_map(v, "env_map")?,
    };
    let robots = list_of(f.get("robots"), "robots", |v, p| robot(v, p))?;
    let objects = list_of(f.get("objects"), "objects", |v, p| object(v, p))?;
    let regions = list_of(f.get("regions"), "regions", |v, p| region(v, p))?;
    let cameras = list_of(f.get("cameras"), "cameras", |v, p| camera(v, p))?;
    let skills = list_of(f.get("skills"), "skills", |v, p| skill_block(v, p))?;
    let data = match f.get("data") {
        None => DataSpec::default(),
        Some(v) => data(v, "data")?,
    };
    Ok(TaskConfig {
        name,
        task_id,
        env_map,
        robots,
        objects,
        regions,
        cameras,
        skills,
        data,
        extras: f.extras(),
    })
}

fn env_map(v: &Value, path: &str) -> Result<EnvMapSpec, ConfigError> {
    let mut f = Fields::new(v, path)?;
    let d = EnvMapSpec::default();
    Ok(EnvMapSpec {
        library_id: f.opt_string("envmap_lib")?.unwrap_or(d.library_id),
        apply_randomization: f.bool_or("apply_randomization", false)?,
        intensity_range: f.range_or("intensity_range", d.intensity_range)?,
        rotation_range: f.range_or("rotation_range", d.rotation_range)?,
        extras: f.extras(),
    })
}

fn robot(v: &Value, path: String) -> Result<RobotSpec, ConfigError> {
    let mut f = Fields::new(v, path)?;
    let name = f.string("name")?;
    let embodiment_id = f.string("path")?;
    let euler_deg = f.vec3_or("euler", [0.0; 3])?;
    let mut homes = Vec::new();
    for (arm, mean_key, std_key) in [
        (ArmSide::Left, "left_joint_home", "left_joint_home_std"),
        (ArmSide::Right, "right_joint_home", "right_joint_home_std"),
    ] {
        let Some(mean_v) = f.get(mean_key) else {
            if f.get(std_key).is_some() {
                return Err(ConfigError::schema(f.at(mean_key), "home vector next to its std", "nothing"));
            }
            continue;
        };
        let mean = f64_list(mean_v, &f.at(mean_key))?;
        let std = match f.get(std_key) {
            None => vec![0.0; mean.len()],
            Some(s) => f64_list(s, &f.at(std_key))?,
        };
        homes.push(ArmHome { arm, mean, std });
    }
    Ok(RobotSpec {
        name,
        embodiment_id,
        euler_deg,
        homes,
        extras: f.extras(),
    })
}

fn object(v: &Value, path: String) -> Result<ObjectSpec, ConfigError> {
    let mut f = Fields::new(v, path)?;
    let name = f.string("name")?;
    let asset_path = f.opt_string("path")?;
    let category = f.opt_string("category")?;
    if asset_path.is_none() && category.is_none() {
        return Err(ConfigError::schema(f.at("path"), "`path` or `category`", "neither"));
    }
    let target_class = match f.opt_string("target_class")? {
        None => TargetClass::Rigid,
        Some(s) => TargetClass::parse(&s).ok_or_else(|| {
            ConfigError::schema(f.at("target_class"), "RigidObject or ArticulatedObject", s.clone())
        })?,
    };
    Ok(ObjectSpec {
        name,
        asset_path,
        category,
        target_class,
        translation: f.vec3_or("translation", [0.0; 3])?,
        euler_deg: f.vec3_or("euler", [0.0; 3])?,
        scale: f.vec3_or("scale", [1.0; 3])?,
        apply_randomization: f.bool_or("apply_randomization", false)?,
        extras: f.extras(),
    })
}

fn region(v: &Value, path: String) -> Result<RegionSpec, ConfigError> {
    let mut f = Fields::new(v, path)?;
    let object = f.string("object")?;
    let target = f.string("target")?;
    let random_type = f.opt_string("random_type")?.unwrap_or_else(|| A_ON_B_SAMPLER.to_string());
    let rc_path = f.at("random_config");
    let rc = f.req("random_config")?;
    let mut c = Fields::new(rc, rc_path)?;
    let pos_path = c.at("pos_range");
    let pos_v = c.req("pos_range")?;
    let rows = seq(pos_v, &pos_path)?;
    if rows.len() != 2 {
        return Err(ConfigError::schema(pos_path, "[min, max] 3-vectors", format!("{} rows", rows.len())));
    }
    let lo = fixed::<3>(&rows[0], &format!("{pos_path}[0]"))?;
    let hi = fixed::<3>(&rows[1], &format!("{pos_path}[1]"))?;
    if (0..3).any(|i| lo[i] > hi[i]) {
        return Err(ConfigError::schema(pos_path, "min <= max componentwise", format!("{lo:?} > {hi:?}")));
    }
    let yaw_range = c.range_or("yaw_rotation", [0.0, 0.0])?;
    Ok(RegionSpec {
        object,
        target,
        random_type,
        pos_range: [lo, hi],
        yaw_range,
        random_config_extras: c.extras(),
        extras: f.extras(),
    })
}

fn intrinsics(v: &Value, path: &str) -> Result<Intrinsics, ConfigError> {
    let mut f = Fields::new(v, path)?;
    let dim = |f: &mut Fields, key: &'static str| -> Result<u32, ConfigError> {
        let v = f.req(key)?;
        v.as_u64()
            .and_then(|x| u32::try_from(x).ok())
            .ok_or_else(|| ConfigError::schema(f.at(key), "pixel count", describe(v)))
    };
    let width = dim(&mut f, "width")?;
    let height = dim(&mut f, "height")?;
    let focal = {
        let v = f.req("focal")?;
        as_f64(v, &f.at("focal"))?
    };
    Ok(Intrinsics {
        width,
        height,
        focal,
        extras: f.extras(),
    })
}

fn camera(v: &Value, path: String) -> Result<CameraSpec, ConfigError> {
    let mut f = Fields::new(v, path)?;
    let name = f.string("name")?;
    let translation = f.vec3_or("translation", [0.0; 3])?;
    let orientation = match f.get("orientation") {
        None => [1.0, 0.0, 0.0, 0.0],
        Some(v) => fixed::<4>(v, &f.at("orientation"))?,
    };
    let parent = f.opt_string("parent")?.unwrap_or_default();
    let params_path = f.at("params");
    let params = match f.req("params")? {
        Value::String(s) => CameraParams::Reference(s.clone()),
        other => CameraParams::Inline(intrinsics(other, &params_path)?),
    };
    Ok(CameraSpec {
        name,
        translation,
        orientation,
        parent,
        params,
        apply_randomization: f.bool_or("apply_randomization", false)?,
        max_translation_noise: f.f64_or("max_translation_noise", 0.0)?,
        max_orientation_noise: f.f64_or("max_orientation_noise", 0.0)?,
        extras: f.extras(),
    })
}

fn data(v: &Value, path: &str) -> Result<DataSpec, ConfigError> {
    let mut f = Fields::new(v, path)?;
    let d = DataSpec::default();
    let max_episode_length = f.u64_or("max_episode_length", d.max_episode_length as u64)?;
    if max_episode_length == 0 || max_episode_length > u32::MAX as u64 {
        return Err(ConfigError::schema(f.at("max_episode_length"), "positive frame count", max_episode_length.to_string()));
    }
    Ok(DataSpec {
        save_root_path: f.opt_string("save_root_path")?.unwrap_or_default(),
        task_dir: f.opt_string("task_dir")?.unwrap_or_default(),
        language_instruction: f.opt_string("language_instruction")?.unwrap_or_default(),
        detailed_language_instruction: f.opt_string("detailed_language_instruction")?.unwrap_or_default(),
        version: f.opt_string("version")?.unwrap_or_default(),
        max_episode_length: max_episode_length as u32,
        extras: f.extras(),
    })
}

fn skill_block(v: &Value, path: String) -> Result<SkillBlock, ConfigError> {
    let map = match v {
        Value::Mapping(m) if m.len() == 1 => m,
        other => return Err(ConfigError::schema(path, "single-key mapping {robot: steps}", describe(other))),
    };
    let (k, steps_v) = map.iter().next().expect("len checked");
    let robot = as_string(k, &path)?;
    let steps_path = join(&path, &robot);
    let steps = seq(steps_v, &steps_path)?
        .iter()
        .enumerate()
        .map(|(i, s)| skill_step(s, format!("{steps_path}[{i}]")))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SkillBlock { robot, steps })
}

fn skill_step(v: &Value, path: String) -> Result<SkillStep, ConfigError> {
    let map = match v {
        Value::Mapping(m) if !m.is_empty() => m,
        other => return Err(ConfigError::schema(path, "mapping {arm: skills}", describe(other))),
    };
    let mut arms = Vec::new();
    for (k, list) in map {
        let key = as_string(k, &path)?;
        let arm = ArmSide::parse(&key)
            .ok_or_else(|| ConfigError::schema(path.clone(), "arm `left` or `right`", key.clone()))?;
        let arm_path = join(&path, &key);
        let skills = seq(list, &arm_path)?
            .iter()
            .enumerate()
            .map(|(i, s)| skill(s, format!("{arm_path}[{i}]")))
            .collect::<Result<Vec<_>, _>>()?;
        arms.push((arm, skills));
    }
    Ok(SkillStep { arms })
}

fn filters(f: &mut Fields) -> Result<Vec<DirectionFilter>, ConfigError> {
    let mut out = Vec::new();
    for axis in [GripperAxis::X, GripperAxis::Y, GripperAxis::Z] {
        let key = axis.key();
        let Some(v) = f.get(key) else { continue };
        let path = f.at(key);
        let items = seq(v, &path)?;
        if !(2..=3).contains(&items.len()) {
            return Err(ConfigError::schema(path, "[direction, angle] or [direction, angle, tolerance]", describe(v)));
        }
        let dir_s = as_string(&items[0], &format!("{path}[0]"))?;
        let direction = Direction::parse(&dir_s).ok_or_else(|| {
            ConfigError::schema(format!("{path}[0]"), "upward|downward|forward|backward|left|right", dir_s.clone())
        })?;
        let center_deg = as_f64(&items[1], &format!("{path}[1]"))?;
        let tolerance_deg = match items.get(2) {
            None => None,
            Some(t) => Some(as_f64(t, &format!("{path}[2]"))?),
        };
        if center_deg < 0.0 || tolerance_deg.is_some_and(|t| t < 0.0) {
            return Err(ConfigError::schema(path, "nonnegative angles", describe(v)));
        }
        out.push(DirectionFilter {
            axis,
            direction,
            center_deg,
            tolerance_deg,
        });
    }
    Ok(out)
}

fn object_names(f: &mut Fields, count: usize) -> Result<Vec<String>, ConfigError> {
    let path = f.at("objects");
    let v = f.req("objects")?;
    let names = seq(v, &path)?
        .iter()
        .enumerate()
        .map(|(i, x)| as_string(x, &format!("{path}[{i}]")))
        .collect::<Result<Vec<_>, _>>()?;
    if names.len() != count {
        return Err(ConfigError::schema(path, format!("{count} object names"), format!("{}", names.len())));
    }
    Ok(names)
}

fn opt_axis(f: &mut Fields, key: &'static str) -> Result<Option<[f64; 3]>, ConfigError> {
    match f.get(key) {
        None => Ok(None),
        Some(v) => {
            let a = fixed::<3>(v, &f.at(key))?;
            if a.iter().map(|c| c * c).sum::<f64>() < 1e-18 {
                return Err(ConfigError::schema(f.at(key), "nonzero axis", "zero vector"));
            }
            Ok(Some(a))
        }
    }
}

fn skill(v: &Value, path: String) -> Result<SkillSpec, ConfigError> {
    let mut f = Fields::new(v, path)?;
    let name = f.string("name")?;
    let spec = match name.as_str() {
        "pick" => {
            let object = object_names(&mut f, 1)?.remove(0);
            let filters = filters(&mut f)?;
            let lo = f.f64_or("post_grasp_offset_min", 0.1)?;
            let hi = f.f64_or("post_grasp_offset_max", lo)?;
            if lo > hi || lo < 0.0 {
                return Err(ConfigError::schema(f.at("post_grasp_offset_min"), "0 <= min <= max", format!("[{lo}, {hi}]")));
            }
            let direction_to_obj = match f.opt_string("direction_to_obj")? {
                None => None,
                Some(s) => Some(Direction::parse(&s).ok_or_else(|| {
                    ConfigError::schema(f.at("direction_to_obj"), "direction keyword", s.clone())
                })?),
            };
            SkillSpec::Pick(PickSpec {
                object,
                filters,
                t_eps: f.f64_or("t_eps", 0.01)?,
                o_eps_deg: f.f64_or("o_eps", 1.0)?,
                close_wait_steps: f.u64_or("close_wait_steps", 10)? as u32,
                post_grasp_offset: [lo, hi],
                direction_to_obj,
                extras: f.extras(),
            })
        }
        "place" => {
            let mut names = object_names(&mut f, 2)?;
            let container = names.pop().expect("two names");
            let object = names.pop().expect("two names");
            SkillSpec::Place(PlaceSpec {
                object,
                container,
                place_direction: f.opt_string("place_direction")?,
                filters: filters(&mut f)?,
                position_constraint: f.opt_string("position_constraint")?,
                x_ratio_range: f.range_or("x_ratio_range", [0.5, 0.5])?,
                y_ratio_range: f.range_or("y_ratio_range", [0.5, 0.5])?,
                align_pick_obj_axis: opt_axis(&mut f, "align_pick_obj_axis")?,
                align_place_obj_axis: opt_axis(&mut f, "align_place_obj_axis")?,
                align_obj_tol_deg: f.f64_or("align_obj_tol", 0.0)?,
                pre_place_z_offset: f.f64_or("pre_place_z_offset", 0.1)?,
                place_z_offset: f.f64_or("place_z_offset", 0.01)?,
                t_eps: f.f64_or("t_eps", 0.01)?,
                o_eps_deg: f.f64_or("o_eps", 1.0)?,
                extras: f.extras(),
            })
        }
        "push" => {
            let object = object_names(&mut f, 1)?.remove(0);
            SkillSpec::Push(PushSpec {
                object,
                joint: f.string("joint")?,
                delta: {
                    let v = f.req("delta")?;
                    as_f64(v, &f.at("delta"))?
                },
                expansion: f.f64_or("contact_expansion", 1.5)?,
                t_eps: f.f64_or("t_eps", 0.01)?,
                o_eps_deg: f.f64_or("o_eps", 1.0)?,
                extras: f.extras(),
            })
        }
        "goto__pose" => {
            let gripper = match f.opt_string("gripper_action")?.as_deref() {
                None | Some("hold") | Some("keep") => GripperCommand::Hold,
                Some("close_gripper") | Some("close") => GripperCommand::Close,
                Some("open_gripper") | Some("open") => GripperCommand::Open,
                Some(other) => {
                    return Err(ConfigError::schema(f.at("gripper_action"), "close_gripper|open_gripper|hold", other))
                }
            };
            let translation = {
                let v = f.req("translation")?;
                fixed::<3>(v, &f.at("translation"))?
            };
            let quaternion = {
                let v = f.req("quaternion")?;
                fixed::<4>(v, &f.at("quaternion"))?
            };
            SkillSpec::GotoPose(GotoSpec {
                frame: f.opt_string("frame")?.unwrap_or_else(|| "world".into()),
                gripper,
                translation,
                quaternion,
                extras: f.extras(),
            })
        }
        "gripper__action" => {
            let action = match f.string("action_type")?.as_str() {
                "open" => GripperAction::Open,
                "close" => GripperAction::Close,
                other => return Err(ConfigError::schema(f.at("action_type"), "open|close", other)),
            };
            let dwell_steps = match f.get("dwell_steps") {
                None => None,
                Some(v) => Some(
                    v.as_u64()
                        .ok_or_else(|| ConfigError::schema(f.at("dwell_steps"), "frame count", describe(v)))?
                        as u32,
                ),
            };
            SkillSpec::GripperAction(GripperActionSpec {
                action,
                dwell_steps,
                extras: f.extras(),
            })
        }
        "home" => SkillSpec::Home { extras: f.extras() },
        other => {
            let found = if UNSUPPORTED_SKILLS.contains(&other) {
                format!("{other} (deformable and fluid skills are not supported)")
            } else {
                other.to_string()
            };
            return Err(ConfigError::schema(f.at("name"), SkillSpec::NAMES.join("|"), found));
        }
    };
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "name: minimal\nrobots:\n  - name: arm\n    path: single_arm\nobjects: []\n";

    #[test]
    fn minimal_document() {
        let cfg = parse_task_config(MINIMAL).unwrap();
        assert_eq!(cfg.robots.len(), 1);
        assert!(cfg.objects.is_empty());
        assert!(cfg.skills.is_empty());
        assert_eq!(cfg.data.max_episode_length, 4000);
    }

    #[test]
    fn syntax_error_has_location() {
        let err = parse_task_config("name: [unclosed\nrobots: []\n").unwrap_err();
        match err {
            ConfigError::Syntax { line, .. } => assert!(line >= 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn anchors_and_tags_rejected() {
        assert!(matches!(
            parse_task_config("name: &a x\nrobots: []\n"),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            parse_task_config("name: !custom x\nrobots: []\n"),
            Err(ConfigError::Syntax { .. })
        ));
        // Inside quotes these characters are ordinary text.
        assert!(parse_task_config("name: \"&not_an_anchor\"\nrobots: []\n").is_ok());
        assert!(parse_task_config("name: a - &b *c\nrobots: []\n").is_ok());
        assert!(matches!(parse_task_config("name: t\nrobots: [*r]\n"), Err(ConfigError::Syntax { line: 2, .. })));
    }

    #[test]
    fn inverted_pos_range_is_schema_error() {
        let doc = "name: t\nrobots: []\nregions:\n  - object: a\n    target: table\n    random_config:\n      pos_range: [[0.2, 0, 0], [0.1, 0, 0]]\n";
        match parse_task_config(doc).unwrap_err() {
            ConfigError::Schema { path, .. } => assert_eq!(path, "regions[0].random_config.pos_range"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unsupported_skill_names_are_rejected() {
        let doc = "name: t\nrobots: []\nskills:\n  - r:\n      - left:\n          - name: pour\n";
        match parse_task_config(doc).unwrap_err() {
            ConfigError::Schema { path, found, .. } => {
                assert_eq!(path, "skills[0].r[0].left[0].name");
                assert!(found.contains("not supported"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn filter_arity() {
        let doc = "name: t\nrobots: []\nskills:\n  - r:\n      - right:\n          - name: pick\n            objects: [p]\n            filter_y_dir: [\"forward\", 40]\n            filter_z_dir: [\"downward\", 110, 140]\n";
        let cfg = parse_task_config(doc).unwrap();
        let SkillSpec::Pick(p) = &cfg.skills[0].steps[0].arms[0].1[0] else { panic!() };
        assert_eq!(p.filters[0].envelope(), (0.0, 40.0));
        assert_eq!(p.filters[1].envelope(), (0.0, 180.0));
    }

    #[test]
    fn unknown_keys_go_to_extras() {
        let doc = "name: t\nrender: true\nrobots:\n  - name: r\n    path: p\n    target_class: SplitAloha\n";
        let cfg = parse_task_config(doc).unwrap();
        assert_eq!(cfg.extras.get("render"), Some(&Value::Bool(true)));
        assert!(cfg.robots[0].extras.contains_key("target_class"));
    }
}
