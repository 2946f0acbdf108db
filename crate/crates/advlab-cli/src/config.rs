//! Config-file merging: flag values override config-file values, and the
//! merged effective config is what gets snapshotted into the run directory.

use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Fills `null` fields of the CLI-provided params from a JSON config file.
/// CLI flags always win because unset flags serialize as `null`.
pub fn merge_config<T>(cli: &T, config_path: Option<&Path>) -> Result<T>
where
    T: Serialize + DeserializeOwned,
{
    let mut merged = serde_json::to_value(cli)?;
    if let Some(path) = config_path {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        let file_value: serde_json::Value = serde_json::from_str(&text)
            .with_context(|| format!("parsing config file {}", path.display()))?;
        fill_nulls(&mut merged, &file_value);
    }
    Ok(serde_json::from_value(merged)?)
}

fn fill_nulls(base: &mut serde_json::Value, from: &serde_json::Value) {
    use serde_json::Value;
    let (Value::Object(base_map), Value::Object(from_map)) = (base, from) else {
        return;
    };
    for (key, from_val) in from_map {
        match base_map.get_mut(key) {
            None | Some(Value::Null) => {
                base_map.insert(key.clone(), from_val.clone());
            }
            Some(existing) if existing.is_object() && from_val.is_object() => {
                fill_nulls(existing, from_val);
            }
            Some(_) => {}
        }
    }
}
