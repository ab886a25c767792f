use std::path::{Path, PathBuf};

use super::parse::{describe, parse_yaml};
use super::*;

const SELF_ENTRY: &str = "_self_";

/// Reads a task document from disk and expands its `defaults` list.
///
/// Include entries are looked up first next to the task file, then under
/// `config_root`. Expansion is one level deep: `defaults` inside included files
/// are dropped.
pub fn load_task_config(path: &Path, config_root: Option<&Path>) -> Result<TaskConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let doc = parse_yaml(&text)?;
    let mut search = Vec::new();
    if let Some(dir) = path.parent() {
        search.push(dir.to_path_buf());
    }
    if let Some(root) = config_root {
        search.push(root.to_path_buf());
    }
    let expanded = expand_defaults(&doc, &search)?;
    from_value(&expanded)
}

/// Merges the documents named by `doc.defaults` into `doc`.
///
/// Entries are applied in list order with later entries overriding earlier
/// ones; `_self_` marks where the document itself applies (appended last when
/// absent). `name` merges a file at the root; `group@key: option` (or
/// `group: option`) places `group/option.yaml` under `key`.
pub fn expand_defaults(doc: &Value, search: &[PathBuf]) -> Result<Value, ConfigError> {
    expand_defaults_with(doc, &|file| read_from_dirs(file, search))
}

/// Like [`expand_defaults`] but reads include files through `read`, which
/// maps a relative file name such as `cameras/astra.yaml` to its text or to a
/// reason it could not be read.
pub fn expand_defaults_with(doc: &Value, read: &dyn Fn(&str) -> Result<String, String>) -> Result<Value, ConfigError> {
    let Some(Value::Sequence(entries)) = doc.get("defaults") else {
        if let Some(other) = doc.get("defaults") {
            return Err(ConfigError::schema("defaults", "sequence", describe(other)));
        }
        return Ok(doc.clone());
    };
    let mut layers: Vec<Value> = Vec::new();
    let mut saw_self = false;
    for entry in entries {
        match entry {
            Value::String(s) if s == SELF_ENTRY => {
                saw_self = true;
                layers.push(doc.clone());
            }
            Value::String(name) => layers.push(read_include(name, name, read)?),
            Value::Mapping(m) if m.len() == 1 => {
                let (k, opt) = m.iter().next().expect("len checked");
                let (Value::String(group), Value::String(option)) = (k, opt) else {
                    return Err(ConfigError::schema("defaults", "group: option", describe(entry)));
                };
                let (group_path, package) = match group.split_once('@') {
                    Some((g, p)) => (g.to_string(), p.to_string()),
                    None => {
                        let last = group.rsplit('/').next().unwrap_or(group).to_string();
                        (group.clone(), last)
                    }
                };
                let label = format!("{group}: {option}");
                let content = read_include(&format!("{group_path}/{option}"), &label, read)?;
                let mut m = Mapping::new();
                m.insert(Value::String(package), content);
                layers.push(Value::Mapping(m));
            }
            other => return Err(ConfigError::schema("defaults", "include entry", describe(other))),
        }
    }
    if !saw_self {
        layers.push(doc.clone());
    }
    let mut merged = Value::Mapping(Mapping::new());
    for layer in layers {
        merge(&mut merged, layer);
    }
    Ok(merged)
}

fn read_from_dirs(file: &str, search: &[PathBuf]) -> Result<String, String> {
    let found = search.iter().map(|d| d.join(file)).find(|p| p.is_file());
    let Some(path) = found else {
        let dirs: Vec<String> = search.iter().map(|d| d.display().to_string()).collect();
        return Err(format!("{file} not found under [{}]", dirs.join(", ")));
    };
    std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))
}

fn read_include(rel: &str, label: &str, read: &dyn Fn(&str) -> Result<String, String>) -> Result<Value, ConfigError> {
    let text = read(&format!("{rel}.yaml")).map_err(|detail| ConfigError::Include {
        entry: label.to_string(),
        detail,
    })?;
    let mut v = parse_yaml(&text).map_err(|e| ConfigError::Include {
        entry: label.to_string(),
        detail: e.to_string(),
    })?;
    if let Value::Mapping(m) = &mut v {
        m.remove("defaults");
    }
    Ok(v)
}

fn merge(into: &mut Value, layer: Value) {
    match (into, layer) {
        (Value::Mapping(dst), Value::Mapping(src)) => {
            for (k, v) in src {
                match dst.get_mut(&k) {
                    Some(existing @ Value::Mapping(_)) if v.is_mapping() => merge(existing, v),
                    _ => {
                        dst.insert(k, v);
                    }
                }
            }
        }
        (dst, src) => *dst = src,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    #[test]
    fn group_package_and_root_includes() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        fs::create_dir_all(root.join("tasks")).unwrap();
        fs::create_dir_all(root.join("cameras")).unwrap();
        fs::write(root.join("cameras/astra.yaml"), "width: 64\nheight: 48\nfocal: 50.0\n").unwrap();
        fs::write(root.join("world.yaml"), "world:\n  gravity: -9.81\nname: overridden\n").unwrap();
        fs::write(
            root.join("tasks/t.yaml"),
            "defaults:\n  - world\n  - ../cameras@astra: astra\n  - _self_\nname: t\nrobots: []\n",
        )
        .unwrap();
        let cfg = load_task_config(&root.join("tasks/t.yaml"), Some(root)).unwrap();
        // `_self_` last: the document wins over `world`.
        assert_eq!(cfg.name, "t");
        assert!(cfg.extras.contains_key("world"));
        assert_eq!(cfg.extras["astra"]["width"], Value::Number(64.into()));
    }

    #[test]
    fn missing_include_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.yaml");
        fs::write(&p, "defaults:\n  - nowhere\nname: t\nrobots: []\n").unwrap();
        assert!(matches!(load_task_config(&p, None), Err(ConfigError::Include { .. })));
    }
}
