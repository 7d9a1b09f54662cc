use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

/// Provenance record written next to every results file.
#[derive(Debug, Serialize)]
pub struct RunManifest<'a, P: Serialize> {
    pub subcommand: &'a str,
    pub params: &'a P,
    pub seed: u64,
    pub version: &'a str,
    pub outputs: Vec<String>,
    pub duration_seconds: f64,
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

/// Writes one copy of the manifest beside each output.
pub fn write_manifests<P: Serialize>(manifest: &RunManifest<'_, P>, outputs: &[PathBuf]) -> Result<()> {
    let json = serde_json::to_string_pretty(manifest)?;
    for out in outputs {
        let path = manifest_path(out);
        fs::write(&path, format!("{json}\n")).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

pub fn write_output(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}
