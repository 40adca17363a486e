//! Layered configuration: built-in defaults, then a JSON file, then flags.
//! Layers are merged as JSON values and deserialized once at the end, so the
//! materialized result can be echoed into the manifest verbatim.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::CliError;

/// Recursive object merge; non-object values in `overlay` replace `base`.
pub fn merge(base: &mut Value, overlay: Value) {
    match (base, overlay) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, o) => *b = o,
    }
}

pub fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("config types serialize to JSON")
}

/// Reads a config file. A run manifest is accepted too; its `config` echo
/// is used, which makes every manifest a replayable config.
pub fn load(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let value: Value =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    match value {
        Value::Object(mut map) if map.contains_key("command") && map.contains_key("config") => {
            Ok(map.remove("config").unwrap_or(Value::Null))
        }
        v @ Value::Object(_) => Ok(v),
        _ => Err(CliError::Usage(format!("{}: config must be a JSON object", path.display()))),
    }
}

/// Deserializes with the offending field path in the error message.
pub fn materialize<T: DeserializeOwned>(value: &Value, what: &str) -> Result<T, CliError> {
    serde_path_to_error::deserialize(value.clone())
        .map_err(|e| CliError::Usage(format!("invalid {what}: field `{}`: {}", e.path(), e.inner())))
}

/// Builds a JSON object from the flags that were actually given.
#[derive(Default)]
pub struct Flags(Map<String, Value>);

impl Flags {
    pub fn set<T: Serialize>(&mut self, key: &str, v: Option<T>) -> &mut Self {
        if let Some(v) = v {
            self.0.insert(key.to_string(), to_value(&v));
        }
        self
    }

    pub fn into_value(self) -> Value {
        Value::Object(self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn later_layers_win_and_nested_keys_survive() {
        let mut v = json!({"a": 1, "b": {"c": 2, "d": 3}});
        merge(&mut v, json!({"b": {"c": 5}}));
        merge(&mut v, json!({"a": 7}));
        assert_eq!(v, json!({"a": 7, "b": {"c": 5, "d": 3}}));
    }

    #[test]
    fn manifests_are_accepted_as_configs() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        std::fs::write(&p, r#"{"command": "train", "config": {"train": {"epochs": 3}}}"#).unwrap();
        assert_eq!(load(&p).unwrap(), json!({"train": {"epochs": 3}}));
    }

    #[test]
    fn errors_name_the_field() {
        #[derive(serde::Deserialize, Debug)]
        #[allow(dead_code)]
        struct Inner {
            sigma: f64,
        }
        #[derive(serde::Deserialize, Debug)]
        #[allow(dead_code)]
        struct Outer {
            corruption: Inner,
        }
        let err = materialize::<Outer>(&json!({"corruption": {"sigma": "x"}}), "spec").unwrap_err();
        assert!(err.to_string().contains("corruption.sigma"), "{err}");
    }
}
