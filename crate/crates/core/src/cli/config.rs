use std::path::Path;

use capalign::{Error, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

const SECTIONS: [&str; 8] = [
    "fit",
    "store_build",
    "caption",
    "eval_tau",
    "eval_recall",
    "eval_scores",
    "eval_pearson",
    "dal",
];

/// Parsed settings file.
pub struct ConfigFile {
    root: Map<String, Value>,
}

impl ConfigFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: Value = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
        };
        match value {
            Value::Object(root) => Ok(ConfigFile { root }),
            _ => Err(Error::Format(format!("{}: expected a table at the top level", path.display()))),
        }
    }

    /// The table for `section`, or the whole file when it has no command tables.
    pub fn section(&self, section: &str) -> Result<Map<String, Value>> {
        if !self.root.keys().any(|k| SECTIONS.contains(&k.as_str())) {
            return Ok(self.root.clone());
        }
        match self.root.get(section) {
            None => Ok(Map::new()),
            Some(Value::Object(m)) => Ok(m.clone()),
            Some(_) => Err(Error::Format(format!("config section {section:?} must be a table"))),
        }
    }
}

/// Overlays the flags given on the command line onto `base` and rebuilds
/// the argument struct. Keys must be long flag names in snake case.
pub fn merge<T>(base: Map<String, Value>, flags: &T) -> Result<T>
where
    T: Serialize + DeserializeOwned + clap::Args,
{
    let known: Vec<String> = T::augment_args(clap::Command::new("config"))
        .get_arguments()
        .map(|a| a.get_id().to_string())
        .filter(|id| id != "resume")
        .collect();
    if let Some(bad) = base.keys().find(|k| !known.contains(k)) {
        return Err(Error::InvalidArgument(format!(
            "unknown config key {bad:?}; expected one of {}",
            known.join(", ")
        )));
    }
    let mut merged = base;
    if let Value::Object(given) = serde_json::to_value(flags)? {
        merged.extend(given);
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| Error::InvalidArgument(format!("config: {e}")))
}
