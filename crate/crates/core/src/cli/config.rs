//! Config resolution: defaults, then a JSON file, then flags and `--set`
//! overrides. Every key must exist in the defaults, so typos are usage
//! errors rather than silently ignored.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use super::CliError;

fn merge(base: &mut Value, patch: &Value, path: &str) -> Result<(), CliError> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let sub = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                let slot = b.get_mut(k).ok_or_else(|| CliError::Usage(format!("unknown config key {sub:?}")))?;
                // null means "unset" for optional keys; objects merge key by key
                if slot.is_object() && v.is_object() {
                    merge(slot, v, &sub)?;
                } else {
                    *slot = v.clone();
                }
            }
            Ok(())
        }
        (b, p) => {
            *b = p.clone();
            Ok(())
        }
    }
}

/// Sets `a.b.c` in `root`; the path must already exist.
fn set_path(root: &mut Value, dotted: &str, value: Value) -> Result<(), CliError> {
    let mut patch = value;
    for part in dotted.rsplit('.') {
        let mut m = Map::new();
        m.insert(part.to_string(), patch);
        patch = Value::Object(m);
    }
    merge(root, &patch, "")
}

/// Parses a `--set key=value` pair; the value is JSON, or a bare string.
pub fn parse_set(s: &str) -> Result<(String, Value), CliError> {
    let (k, v) = s.split_once('=').ok_or_else(|| CliError::Usage(format!("--set expects key=value, got {s:?}")))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

/// Resolves a config of type `T`. `flags` holds `(dotted key, value)` for
/// each flag given on the command line.
pub fn resolve<T: Serialize + DeserializeOwned + Default>(
    file: Option<&Path>,
    flags: Vec<(&str, Value)>,
    sets: &[String],
) -> Result<T, CliError> {
    let mut v = serde_json::to_value(T::default()).expect("config serializes");
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Domain(format!("cannot read config {}: {e}", path.display())))?;
        let patch: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {} is not valid JSON: {e}", path.display())))?;
        if !patch.is_object() {
            return Err(CliError::Usage("config file must hold a JSON object".into()));
        }
        merge(&mut v, &patch, "")?;
    }
    for (k, value) in flags {
        set_path(&mut v, k, value)?;
    }
    for s in sets {
        let (k, value) = parse_set(s)?;
        set_path(&mut v, &k, value)?;
    }
    serde_json::from_value(v).map_err(|e| CliError::Usage(format!("invalid config: {e}")))
}

/// Collects the flags that were actually given.
#[derive(Default)]
pub struct Flags(pub Vec<(&'static str, Value)>);

impl Flags {
    pub fn opt<V: Serialize>(mut self, key: &'static str, v: &Option<V>) -> Self {
        if let Some(v) = v {
            self.0.push((key, serde_json::to_value(v).expect("flag serializes")));
        }
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    #[serde(default)]
    struct Inner {
        lr: f64,
        steps: usize,
    }

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    #[serde(default)]
    struct Cfg {
        seed: u64,
        name: Option<String>,
        inner: Inner,
    }

    #[test]
    fn later_sources_win() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"seed": 3, "inner": {"lr": 0.5, "steps": 7}}"#).unwrap();
        let c: Cfg = resolve(Some(&p), vec![("inner.steps", Value::from(9))], &["name=abc".into()]).unwrap();
        assert_eq!(c, Cfg { seed: 3, name: Some("abc".into()), inner: Inner { lr: 0.5, steps: 9 } });
        let d: Cfg = resolve(None, vec![], &[]).unwrap();
        assert_eq!(d, Cfg::default());
    }

    #[test]
    fn unknown_keys_and_bad_types_are_usage_errors() {
        assert!(matches!(resolve::<Cfg>(None, vec![("inner.rate", Value::from(1))], &[]), Err(CliError::Usage(_))));
        assert!(matches!(resolve::<Cfg>(None, vec![], &["seed=-4".into()]), Err(CliError::Usage(_))));
        assert!(matches!(resolve::<Cfg>(None, vec![], &["seed".into()]), Err(CliError::Usage(_))));
    }
}
