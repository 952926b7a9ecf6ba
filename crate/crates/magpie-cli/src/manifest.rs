//! Run manifests: one per output directory, written atomically at the end
//! of a run. A directory holding a manifest is considered owned by a
//! previous run and is only reused under `--force`.

use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::{CliError, CliResult};

#[derive(Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<String>,
    pub dataset: Option<String>,
    pub out_dir: String,
    pub started_at_unix: u64,
    pub finished_at_unix: u64,
    pub config_digest: Option<String>,
}

pub fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Claims an output directory: refuses when a previous run's manifest is
/// present and `--force` was not given.
pub fn claim_out_dir(out: &Path, force: bool) -> CliResult<()> {
    let manifest = out.join("manifest.json");
    if manifest.exists() && !force {
        return Err(CliError::Usage(format!(
            "{} already holds a run (manifest.json present); pass --force to overwrite",
            out.display()
        )));
    }
    fs::create_dir_all(out).map_err(CliError::usage)?;
    Ok(())
}

/// Writes the manifest via a temp file + rename so a torn run never leaves
/// a half-written manifest behind.
pub fn write_manifest(out: &Path, manifest: &RunManifest) -> CliResult<()> {
    let json = serde_json::to_string_pretty(manifest).map_err(CliError::runtime)?;
    let tmp = out.join("manifest.json.tmp");
    fs::write(&tmp, json).map_err(CliError::runtime)?;
    fs::rename(&tmp, out.join("manifest.json")).map_err(CliError::runtime)?;
    Ok(())
}
