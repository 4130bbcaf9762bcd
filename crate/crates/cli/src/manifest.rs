//! Run manifest written next to each run's primary output.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

/// What a subcommand read and wrote.
#[derive(Clone, Debug, Default)]
pub struct RunRecord {
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub tool_version: String,
    pub wall_clock_secs: f64,
}

/// `<output>.manifest.json`.
pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

/// Writes the manifest beside the first output; runs without outputs
/// write none.
pub fn write(subcommand: &str, config: serde_json::Value, record: RunRecord, elapsed: Duration) -> anyhow::Result<()> {
    let Some(primary) = record.outputs.first() else {
        return Ok(());
    };
    let path = manifest_path(primary);
    let manifest = RunManifest {
        subcommand: subcommand.into(),
        config,
        seed: record.seed,
        inputs: record.inputs,
        outputs: record.outputs,
        tool_version: env!("CARGO_PKG_VERSION").into(),
        wall_clock_secs: elapsed.as_secs_f64(),
    };
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
        .map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
    Ok(())
}
