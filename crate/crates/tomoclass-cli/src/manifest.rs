//! JSON run manifests: inputs, outputs, parameters, seeds, crate version,
//! and wall time for every subcommand.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::CliError;

#[derive(Serialize)]
pub(crate) struct Manifest {
    command: String,
    version: String,
    threads: usize,
    seeds: BTreeMap<String, u64>,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    params: BTreeMap<String, serde_json::Value>,
    wall_time_s: f64,
}

impl Manifest {
    pub fn new(command: &str, threads: usize) -> Self {
        Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            threads,
            seeds: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            params: BTreeMap::new(),
            wall_time_s: 0.0,
        }
    }

    pub fn seed(mut self, name: &str, value: u64) -> Self {
        self.seeds.insert(name.to_string(), value);
        self
    }

    pub fn input(mut self, name: &str, path: impl AsRef<Path>) -> Self {
        self.inputs
            .insert(name.to_string(), path.as_ref().display().to_string());
        self
    }

    pub fn output(mut self, name: &str, path: impl AsRef<Path>) -> Self {
        self.outputs
            .insert(name.to_string(), path.as_ref().display().to_string());
        self
    }

    pub fn param(mut self, name: &str, value: impl Into<serde_json::Value>) -> Self {
        self.params.insert(name.to_string(), value.into());
        self
    }

    pub fn write(mut self, path: &Path, start: Instant) -> Result<(), CliError> {
        self.wall_time_s = start.elapsed().as_secs_f64();
        let json = serde_json::to_string_pretty(&self)
            .map_err(|e| CliError::usage(format!("manifest serialization failed: {e}")))?;
        std::fs::write(path, json)?;
        Ok(())
    }
}
