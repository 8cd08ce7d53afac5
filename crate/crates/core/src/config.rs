//! Run configuration files.
//!
//! TOML with three optional sections. Anything omitted takes its default.
//!
//! ```toml
//! [data]
//! meshes = ["a.off", "b.off"]
//! cache_dir = "cache"
//!
//! [output]
//! checkpoint = "net.smnet"
//! loss_csv = "loss.csv"
//!
//! [matching]
//! k = 200
//! tau = 0.07
//! epochs = 100
//! mode = "near_isometric"
//! solver = { lambda = 100.0, mask_kind = "resolvent", resolvent_gamma = 0.5 }
//! weights = { bij = 1.0, orth = 1.0, couple = 1.0, dirichlet = 0.0 }
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::MatchConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub meshes: Vec<PathBuf>,
    pub cache_dir: PathBuf,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            meshes: Vec::new(),
            cache_dir: PathBuf::from("cache"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub checkpoint: PathBuf,
    pub loss_csv: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            checkpoint: PathBuf::from("net.smnet"),
            loss_csv: PathBuf::from("loss.csv"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataConfig,
    pub output: OutputConfig,
    pub matching: MatchConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str, location: Option<&Path>) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::parse(location, e.to_string()))?;
        cfg.matching.validate()?;
        Ok(cfg)
    }

    /// Reads `path`; relative data and output paths are resolved against
    /// the directory holding the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml(&text, Some(path))?;
        if let Some(base) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            let resolve = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            };
            cfg.data.meshes.iter_mut().for_each(resolve);
            resolve(&mut cfg.data.cache_dir);
            resolve(&mut cfg.output.checkpoint);
            resolve(&mut cfg.output.loss_csv);
        }
        Ok(cfg)
    }
}

impl MatchConfig {
    /// Canonical TOML rendering, embedded in checkpoints.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("match config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::parse(None, e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
