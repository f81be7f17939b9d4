//! Run manifests: everything needed to re-run a stage, and nothing that
//! varies between identical runs (no timestamps, no absolute paths).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    /// Relative to the output root when the file lies inside it.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub core_version: String,
    pub stage: String,
    pub seed: u64,
    pub field_b_tesla: Option<f64>,
    pub config_hash: String,
    /// Re-run command, executed from the output root.
    pub command: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io("manifest", path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn display_path(root: &Path, path: &Path) -> String {
    path.strip_prefix(root)
        .unwrap_or(path)
        .to_string_lossy()
        .replace('\\', "/")
}

pub fn digest(root: &Path, path: &Path) -> CliResult<FileDigest> {
    Ok(FileDigest {
        path: display_path(root, path),
        sha256: sha256_file(path)?,
    })
}

/// Writes `config.toml` and `manifest.json` into `dir`.
#[allow(clippy::too_many_arguments)]
pub fn write_manifest(
    root: &Path,
    dir: &Path,
    stage: &str,
    config: &ExperimentConfig,
    field_b: Option<f64>,
    inputs: &[PathBuf],
    outputs: &[PathBuf],
    extra_flags: &str,
) -> CliResult<PathBuf> {
    let config_path = dir.join(CONFIG_FILE);
    let mut run_config = config.clone();
    if let Some(b) = field_b {
        run_config.b_tesla = vec![b];
    }
    write_text(&config_path, &run_config.to_canonical_toml())?;
    let command = format!(
        "dotspec {stage} --config {} --out .{extra_flags}",
        display_path(root, &config_path)
    );
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        core_version: dotspec::VERSION.to_string(),
        stage: stage.to_string(),
        seed: config.seed,
        field_b_tesla: field_b,
        config_hash: run_config.hash(),
        command,
        inputs: inputs.iter().map(|p| digest(root, p)).collect::<CliResult<_>>()?,
        outputs: outputs
            .iter()
            .chain(std::iter::once(&config_path))
            .map(|p| digest(root, p))
            .collect::<CliResult<_>>()?,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_text(&path, &(text + "\n"))?;
    Ok(path)
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io("output", dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| CliError::io("output", path, e))
}
