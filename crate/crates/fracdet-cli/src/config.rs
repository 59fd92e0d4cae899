//! Versioned run-configuration documents for `fracdet run`.
//!
//! A config is a JSON file carrying the pipeline parameters, input
//! paths, backend commands, seed, and split fraction. Relative paths are
//! resolved against the config file's directory, and every referenced
//! path must exist when the config is loaded. Command-line flags
//! override config values field by field.

use std::path::{Path, PathBuf};

use anyhow::anyhow;
use fracdet_core::PipelineConfig;
use serde::{Deserialize, Serialize};

use crate::failure::{read_input, CmdResult, Failure};

pub const CONFIG_VERSION: u32 = 1;

/// Input locations and backend commands. Paths may be relative to the
/// config file; `detector_cmd` / `classifier_cmd` are shell command
/// templates with `{input}` and `{output}` placeholders.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunPaths {
    pub manifest: Option<PathBuf>,
    pub images_dir: Option<PathBuf>,
    pub gt: Option<PathBuf>,
    pub detections: Option<PathBuf>,
    pub crop_labels: Option<PathBuf>,
    pub detector_cmd: Option<String>,
    pub classifier_cmd: Option<String>,
    pub merge_map: Option<PathBuf>,
}

/// The run-configuration document. `version` must be 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub paths: RunPaths,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub split_fraction: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            pipeline: PipelineConfig::default(),
            paths: RunPaths::default(),
            seed: None,
            split_fraction: None,
        }
    }
}

impl RunConfig {
    /// Loads and validates a config document: parse, version check,
    /// resolution of relative paths against the config directory, and an
    /// existence check on every referenced path. All failures are input
    /// errors (exit 2).
    pub fn load(path: &Path) -> CmdResult<RunConfig> {
        let text = read_input(path)?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Failure::input(anyhow!("config {}: {e}", path.display())))?;
        if cfg.version != CONFIG_VERSION {
            return Err(Failure::input(anyhow!(
                "config {}: unsupported version {} (expected {CONFIG_VERSION})",
                path.display(),
                cfg.version
            )));
        }
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for slot in [
            &mut cfg.paths.manifest,
            &mut cfg.paths.images_dir,
            &mut cfg.paths.gt,
            &mut cfg.paths.detections,
            &mut cfg.paths.crop_labels,
            &mut cfg.paths.merge_map,
        ] {
            if let Some(p) = slot {
                if p.is_relative() {
                    *p = base.join(&p);
                }
                if !p.exists() {
                    return Err(Failure::input(anyhow!(
                        "config {}: referenced path {} does not exist",
                        path.display(),
                        p.display()
                    )));
                }
            }
        }
        if let Some(f) = cfg.split_fraction {
            if !(f.is_finite() && (0.0..=1.0).contains(&f)) {
                return Err(Failure::input(anyhow!(
                    "config {}: split_fraction must be in [0, 1], got {f}",
                    path.display()
                )));
            }
        }
        Ok(cfg)
    }
}
