use super::*;

const MAX_DEPTH: usize = 32;

/// Substitutes every `${dotted.path}` placeholder with the value it names.
///
/// A string that is exactly one placeholder takes the referenced value whole
/// (so `params: ${astra}` becomes a mapping); placeholders embedded in longer
/// strings must name scalars. Paths index mappings by key and sequences by
/// position, e.g. `robots.0.name`.
pub fn resolve_references(cfg: &TaskConfig) -> Result<TaskConfig, ConfigError> {
    let tree = to_value(cfg);
    let resolved = resolve_value(&tree, &tree, 0)?;
    from_value(&resolved)
}

fn resolve_value(v: &Value, root: &Value, depth: usize) -> Result<Value, ConfigError> {
    match v {
        Value::String(s) if s.contains("${") => substitute(s, root, depth),
        Value::Sequence(items) => items
            .iter()
            .map(|x| resolve_value(x, root, depth))
            .collect::<Result<Vec<_>, _>>()
            .map(Value::Sequence),
        Value::Mapping(m) => {
            let mut out = Mapping::new();
            for (k, x) in m {
                out.insert(k.clone(), resolve_value(x, root, depth)?);
            }
            Ok(Value::Mapping(out))
        }
        other => Ok(other.clone()),
    }
}

fn substitute(s: &str, root: &Value, depth: usize) -> Result<Value, ConfigError> {
    if depth > MAX_DEPTH {
        return Err(ConfigError::UnresolvedReference(format!("{s} (reference cycle)")));
    }
    if let Some(path) = whole_placeholder(s) {
        let target = lookup(root, path).ok_or_else(|| ConfigError::UnresolvedReference(path.to_string()))?;
        return resolve_value(target, root, depth + 1);
    }
    let mut out = String::new();
    let mut rest = s;
    while let Some(start) = rest.find("${") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let end = after
            .find('}')
            .ok_or_else(|| ConfigError::UnresolvedReference(after.to_string()))?;
        let path = &after[..end];
        let target = lookup(root, path).ok_or_else(|| ConfigError::UnresolvedReference(path.to_string()))?;
        match resolve_value(target, root, depth + 1)? {
            Value::String(x) => out.push_str(&x),
            Value::Number(x) => out.push_str(&x.to_string()),
            Value::Bool(x) => out.push_str(&x.to_string()),
            _ => return Err(ConfigError::UnresolvedReference(format!("{path} (not a scalar)"))),
        }
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    Ok(Value::String(out))
}

fn whole_placeholder(s: &str) -> Option<&str> {
    let inner = s.strip_prefix("${")?.strip_suffix('}')?;
    (!inner.contains('}') && !inner.contains("${")).then_some(inner)
}

fn lookup<'a>(root: &'a Value, path: &str) -> Option<&'a Value> {
    let mut cur = root;
    for part in path.split('.') {
        cur = match cur {
            Value::Mapping(m) => m.get(part)?,
            Value::Sequence(items) => items.get(part.parse::<usize>().ok()?)?,
            _ => return None,
        };
    }
    Some(cur)
}

#[cfg(test)]
mod tests {
    use super::*;

    const DOC: &str = r#"
name: t
robots:
  - name: split_aloha
    path: emb
cameras:
  - name: ${robots.0.name}_head
    parent: "${robots.0.name}/top"
    params: ${astra}
astra:
  width: 64
  height: 48
  focal: 50.0
"#;

    #[test]
    fn substitutes_scalars_and_subtrees() {
        let cfg = parse_task_config(DOC).unwrap();
        let r = resolve_references(&cfg).unwrap();
        assert_eq!(r.cameras[0].name, "split_aloha_head");
        assert_eq!(r.cameras[0].parent, "split_aloha/top");
        let i = r.cameras[0].params.intrinsics().unwrap();
        assert_eq!((i.width, i.height), (64, 48));
    }

    #[test]
    fn resolution_is_idempotent() {
        let cfg = parse_task_config(DOC).unwrap();
        let once = resolve_references(&cfg).unwrap();
        assert_eq!(resolve_references(&once).unwrap(), once);
    }

    #[test]
    fn no_placeholders_is_identity() {
        let cfg = parse_task_config("name: t\nrobots: []\n").unwrap();
        assert_eq!(resolve_references(&cfg).unwrap(), cfg);
    }

    #[test]
    fn out_of_range_index_is_unresolved() {
        let doc = "name: ${robots.3.name}\nrobots:\n  - name: a\n    path: p\n";
        let cfg = parse_task_config(doc).unwrap();
        assert_eq!(
            resolve_references(&cfg).unwrap_err(),
            ConfigError::UnresolvedReference("robots.3.name".into())
        );
    }

    #[test]
    fn cycles_are_reported() {
        let doc = "name: t\na: ${b}\nb: ${a}\nrobots: []\n";
        let cfg = parse_task_config(doc).unwrap();
        assert!(matches!(resolve_references(&cfg), Err(ConfigError::UnresolvedReference(_))));
    }
}
