//! Flat key-value configuration: defaults, then the `--config` file, then
//! command-line flags.

use std::collections::BTreeSet;
use std::fs;

use serde::de::DeserializeOwned;
use serde::Serialize;
use slp_core::checkpoint::CheckpointError;
use slp_core::config::{CorpusConfig, ModelConfig, TrainConfig};
use slp_core::data::DataError;
use slp_core::TensorError;
use toml::Table;

use crate::args::Common;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 1,
            Self::Data(_) => 2,
            Self::Numeric(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Usage(m) => write!(f, "usage error: {m}"),
            Self::Data(m) => write!(f, "data error: {m}"),
            Self::Numeric(m) => write!(f, "numeric failure: {m}"),
        }
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        match e {
            TensorError::NonFinite { .. } | TensorError::Degenerate { .. } => Self::Numeric(e.to_string()),
            TensorError::Contract(_) => Self::Usage(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::InvalidConfig(_) => Self::Usage(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        Self::Data(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn to_table<T: Serialize>(value: &T) -> CliResult<Table> {
    Table::try_from(value).map_err(|e| CliError::Usage(format!("cannot encode settings: {e}")))
}

fn known_keys() -> BTreeSet<String> {
    let mut keys = BTreeSet::new();
    for t in [
        to_table(&CorpusConfig::default()),
        to_table(&ModelConfig::default()),
        to_table(&TrainConfig::default()),
    ]
    .into_iter()
    .flatten()
    {
        keys.extend(t.keys().cloned());
    }
    keys
}

/// Explicitly chosen settings; anything absent falls back to the base value
/// a command starts from (defaults, or a checkpoint's recorded config).
#[derive(Clone, Debug, Default)]
pub struct Settings {
    pub table: Table,
}

impl Settings {
    pub fn load(common: &Common) -> CliResult<Self> {
        let mut table = Table::new();
        if let Some(path) = &common.config {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Data(format!("cannot read config {}: {e}", path.display())))?;
            let file: Table = text
                .parse()
                .map_err(|e| CliError::Usage(format!("config {} is not flat TOML: {e}", path.display())))?;
            let known = known_keys();
            if let Some(bad) = file.keys().find(|k| !known.contains(*k)) {
                return Err(CliError::Usage(format!("unknown config key {bad:?} in {}", path.display())));
            }
            table.extend(file);
        }
        if let Some(seed) = common.seed {
            table.insert("seed".into(), toml::Value::Integer(seed as i64));
        }
        Ok(Self { table })
    }

    pub fn merge<F: Serialize>(mut self, flags: &F) -> CliResult<Self> {
        self.table.extend(to_table(flags)?);
        Ok(self)
    }

    /// `base` with every explicitly chosen key applied.
    pub fn apply<T: Serialize + DeserializeOwned>(&self, base: &T) -> CliResult<T> {
        let mut t = to_table(base)?;
        for (k, v) in &self.table {
            if t.contains_key(k) {
                t.insert(k.clone(), v.clone());
            }
        }
        t.try_into().map_err(|e| CliError::Usage(format!("invalid setting: {e}")))
    }
}

/// Resolved configuration as one flat table, suitable for `--config`.
pub fn flat_config(corpus: Option<&CorpusConfig>, model: Option<&ModelConfig>, train: Option<&TrainConfig>) -> CliResult<Table> {
    let mut t = Table::new();
    if let Some(c) = corpus {
        t.extend(to_table(c)?);
    }
    if let Some(m) = model {
        t.extend(to_table(m)?);
    }
    if let Some(tr) = train {
        t.extend(to_table(tr)?);
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::args::InferFlags;

    #[test]
    fn flags_override_file_and_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "theta = 0.5\nk = 7\nframes = 20\n").unwrap();
        let common = Common {
            config: Some(path),
            seed: Some(3),
            out_dir: ".".into(),
            threads: None,
        };
        let flags = InferFlags {
            k: Some(9),
            direction: Some("right-then-left".into()),
            ..Default::default()
        };
        let s = Settings::load(&common).unwrap().merge(&flags).unwrap();
        let t = s.apply(&TrainConfig::default()).unwrap();
        assert_eq!((t.theta, t.k, t.seed), (0.5, 9, 3));
        assert_eq!(t.direction.to_string(), "right-then-left");
        let c = s.apply(&CorpusConfig::default()).unwrap();
        assert_eq!((c.frames, c.seed), (20, 3));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        fs::write(&path, "thetta = 0.5\n").unwrap();
        let common = Common {
            config: Some(path.clone()),
            seed: None,
            out_dir: ".".into(),
            threads: None,
        };
        assert!(matches!(Settings::load(&common), Err(CliError::Usage(_))));
        fs::write(&path, "direction = \"up\"\n").unwrap();
        let s = Settings::load(&common).unwrap();
        assert!(matches!(s.apply(&TrainConfig::default()), Err(CliError::Usage(_))));
    }
}
