use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use serde::Serialize;

/// Provenance written next to every output file. Timestamps and timings
/// live here only, so data files stay byte-identical across runs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command_line: Vec<String>,
    pub subcommand: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub started_at: String,
    pub elapsed_seconds: f64,
    pub scene_timings_ms: BTreeMap<String, f64>,
    pub outputs: Vec<PathBuf>,
    #[serde(skip_serializing_if = "serde_json::Value::is_null")]
    pub extra: serde_json::Value,
}

pub struct ManifestBuilder {
    start: Instant,
    manifest: RunManifest,
}

impl ManifestBuilder {
    pub fn new(subcommand: &str, seed: Option<u64>, config: impl Serialize) -> Self {
        ManifestBuilder {
            start: Instant::now(),
            manifest: RunManifest {
                tool: env!("CARGO_PKG_NAME"),
                version: env!("CARGO_PKG_VERSION"),
                command_line: std::env::args().collect(),
                subcommand: subcommand.to_string(),
                seed,
                config: serde_json::to_value(config).unwrap_or(serde_json::Value::Null),
                started_at: chrono::Local::now().to_rfc3339(),
                elapsed_seconds: 0.0,
                scene_timings_ms: BTreeMap::new(),
                outputs: Vec::new(),
                extra: serde_json::Value::Null,
            },
        }
    }

    pub fn timing(&mut self, scene_id: &str, ms: f64) {
        self.manifest.scene_timings_ms.insert(scene_id.to_string(), ms);
    }

    pub fn output(&mut self, path: &Path) {
        self.manifest.outputs.push(path.to_path_buf());
    }

    pub fn extra(&mut self, value: serde_json::Value) {
        self.manifest.extra = value;
    }

    pub fn write(mut self, path: &Path) -> anyhow::Result<()> {
        self.manifest.elapsed_seconds = self.start.elapsed().as_secs_f64();
        let text = serde_json::to_string_pretty(&self.manifest)?;
        refkit::dataset_io::write_bytes(path, text.as_bytes())
            .with_context(|| format!("writing manifest {}", path.display()))
    }
}

/// `refs.csv` → `refs.csv.manifest.json`.
pub fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    path.with_file_name(name)
}
