//! Session configuration: a JSON file whose fields mirror the command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use hdmon::limitlaw::TableKey;
use hdmon::{BoundaryKind, Error};

/// Cache directory used when neither `--cache-dir` nor `HDMON_CACHE_DIR` is set.
pub const DEFAULT_CACHE_DIR: &str = ".hdmon-cache";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<u32>>,
    #[serde(default, rename = "T", skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary: Option<Vec<BoundaryKind>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub incomplete_n: Option<usize>,
}

impl SessionConfig {
    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Fields set in `other` win.
    pub fn overridden_by(self, other: &SessionConfig) -> SessionConfig {
        SessionConfig {
            n: other.n.or(self.n),
            p: other.p.or(self.p),
            q: other.q.clone().or(self.q),
            horizon: other.horizon.or(self.horizon),
            alpha: other.alpha.or(self.alpha),
            boundary: other.boundary.clone().or(self.boundary),
            grid: other.grid.or(self.grid),
            reps: other.reps.or(self.reps),
            seed: other.seed.or(self.seed),
            cache_dir: other.cache_dir.clone().or(self.cache_dir),
            input: other.input.clone().or(self.input),
            output: other.output.clone().or(self.output),
            incomplete_n: other.incomplete_n.or(self.incomplete_n),
        }
    }

    pub fn q_set(&self) -> Vec<u32> {
        let mut q = self.q.clone().unwrap_or_else(|| vec![2, 6]);
        q.sort_unstable();
        q.dedup();
        q
    }

    pub fn horizon(&self) -> f64 {
        self.horizon.unwrap_or(2.0)
    }

    pub fn alpha(&self) -> f64 {
        self.alpha.unwrap_or(0.1)
    }

    pub fn boundaries(&self) -> Vec<BoundaryKind> {
        match &self.boundary {
            Some(b) if !b.is_empty() => b.clone(),
            _ => vec![BoundaryKind::T1],
        }
    }

    pub fn grid_for(&self, q: u32) -> usize {
        self.grid.unwrap_or_else(|| TableKey::default_grid(q))
    }

    pub fn reps(&self) -> Option<usize> {
        self.reps
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(1)
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_CACHE_DIR))
    }
}
