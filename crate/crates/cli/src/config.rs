//! Settings resolution: built-in defaults, then an optional JSON file,
//! then command-line flags.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{CliError, Result};

fn merge(base: &mut Map<String, Value>, over: Map<String, Value>, origin: &str) -> Result<()> {
    for (k, v) in over {
        match base.get_mut(&k) {
            None => return Err(CliError::Usage(format!("unknown setting {k:?} in {origin}"))),
            Some(Value::Object(b)) if v.is_object() => {
                let Value::Object(o) = v else { unreachable!() };
                merge(b, o, origin)?;
            }
            Some(slot) => *slot = v,
        }
    }
    Ok(())
}

fn strip_nulls(v: Value) -> Map<String, Value> {
    match v {
        Value::Object(m) => m.into_iter().filter(|(_, v)| !v.is_null()).collect(),
        _ => Map::new(),
    }
}

/// Layer `file` and `flags` over `S::default()`. Flag fields that are
/// `None` serialize to null and are skipped.
pub fn resolve<S, F>(file: Option<&Path>, flags: &F) -> Result<S>
where
    S: Default + Serialize + DeserializeOwned,
    F: Serialize,
{
    let Value::Object(mut base) = serde_json::to_value(S::default())? else {
        unreachable!("settings serialize to an object")
    };
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let Value::Object(over) = serde_json::from_str(&text)? else {
            return Err(CliError::Usage(format!("{} must hold a JSON object", path.display())));
        };
        merge(&mut base, over, &path.display().to_string())?;
    }
    merge(&mut base, strip_nulls(serde_json::to_value(flags)?), "flags")?;
    serde_json::from_value(Value::Object(base)).map_err(|e| CliError::Usage(format!("bad setting: {e}")))
}

/// One-line header naming the command and its resolved settings.
pub fn header<S: Serialize>(command: &str, settings: &S) -> String {
    let v = serde_json::to_string(settings).unwrap_or_else(|_| "{}".into());
    format!("# slotaug {command} {v}")
}
