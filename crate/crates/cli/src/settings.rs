//! JSON run configuration. Each section is a partial object merged over the
//! built-in defaults; command-line flags are applied afterwards.

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    pub evolution: Option<Value>,
    pub material: Option<Value>,
    pub energy: Option<Value>,
    pub dram: Option<Value>,
    pub design_space: Option<Value>,
    pub grammar: Option<Value>,
    pub costs: Option<Value>,
    pub mem_trace: Option<Value>,
    pub alloc_trace: Option<Value>,
}

impl RunSettings {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Recursively overlays `patch` onto `base`; objects merge key by key and
/// anything else replaces.
pub fn merge_value(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge_value(b.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p.clone(),
    }
}

/// `defaults` with an optional partial override applied.
pub fn overlay<T: Serialize + DeserializeOwned>(defaults: T, patch: Option<&Value>, section: &str) -> Result<T> {
    let Some(patch) = patch else {
        return Ok(defaults);
    };
    let mut v = serde_json::to_value(&defaults)?;
    merge_value(&mut v, patch);
    serde_json::from_value(v).with_context(|| format!("config section `{section}`"))
}
