use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use slp_core::data::write_atomic;
use toml::Table;

use crate::settings::{CliError, CliResult};

#[derive(Debug, Serialize)]
pub struct Phase {
    pub name: String,
    pub seconds: f64,
}

/// Record of one command invocation, written next to its outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub build: String,
    pub seed: Option<u64>,
    /// Flat resolved configuration; the same file is written as `<command>.config.toml`.
    pub config: Table,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub phases: Vec<Phase>,
    #[serde(skip)]
    clock: Option<(String, Instant)>,
}

pub fn build_id() -> String {
    let profile = if cfg!(debug_assertions) { "debug" } else { "release" };
    format!("{} {} ({profile})", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"))
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.into(),
            build: build_id(),
            seed: None,
            config: Table::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            phases: Vec::new(),
            clock: None,
        }
    }

    /// Closes the running phase, if any, and starts `name`.
    pub fn phase(&mut self, name: &str) {
        self.stop();
        self.clock = Some((name.into(), Instant::now()));
    }

    fn stop(&mut self) {
        if let Some((name, t)) = self.clock.take() {
            self.phases.push(Phase {
                name,
                seconds: t.elapsed().as_secs_f64(),
            });
        }
    }

    pub fn write(mut self, out_dir: &Path) -> CliResult<PathBuf> {
        self.stop();
        let config_path = out_dir.join(format!("{}.config.toml", self.command));
        let text = toml::to_string(&self.config).map_err(|e| CliError::Data(format!("cannot encode config: {e}")))?;
        write_file(&config_path, text.as_bytes())?;
        self.outputs.push(config_path);
        let path = out_dir.join(format!("{}.manifest.json", self.command));
        let json = serde_json::to_vec_pretty(&self).map_err(|e| CliError::Data(format!("cannot encode manifest: {e}")))?;
        write_file(&path, &json)?;
        Ok(path)
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    write_atomic(path, bytes).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}
