use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{RunConfig, Seeds, SEED_SCHEME};
use crate::CliError;

/// Stage order of a full pipeline.
pub const STAGES: [&str; 6] = ["gen", "build", "sample", "train", "eval", "raster"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pending,
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub scheme: String,
    #[serde(flatten)]
    pub seeds: Seeds,
}

/// Completeness record kept next to the artifacts. Rewritten after every
/// stage so that a failed run still says what is usable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: Value,
    pub seeds: SeedRecord,
    pub stages: Vec<StageRecord>,
}

impl Manifest {
    pub fn fresh(cfg: &RunConfig) -> Self {
        Self {
            config: cfg.to_value(),
            seeds: SeedRecord {
                scheme: SEED_SCHEME.to_string(),
                seeds: cfg.seeds(),
            },
            stages: STAGES
                .iter()
                .map(|s| StageRecord {
                    name: s.to_string(),
                    status: Status::Pending,
                    error: None,
                })
                .collect(),
        }
    }

    /// Loads the manifest of `dir` when it belongs to the same configuration,
    /// otherwise starts over.
    pub fn open(dir: &Path, cfg: &RunConfig) -> Self {
        let fresh = Self::fresh(cfg);
        std::fs::read_to_string(dir.join("MANIFEST.json"))
            .ok()
            .and_then(|t| serde_json::from_str::<Manifest>(&t).ok())
            .filter(|m| m.config == fresh.config && m.stages.len() == STAGES.len())
            .unwrap_or(fresh)
    }

    pub fn status(&self, stage: &str) -> Status {
        self.stages
            .iter()
            .find(|s| s.name == stage)
            .map_or(Status::Pending, |s| s.status)
    }

    /// Records the outcome of `stage`. Completing a stage marks every later
    /// stage pending, since its inputs changed.
    pub fn record(&mut self, stage: &str, outcome: Result<(), &CliError>) {
        let pos = self
            .stages
            .iter()
            .position(|s| s.name == stage)
            .expect("known stage");
        let rec = &mut self.stages[pos];
        match outcome {
            Ok(()) => {
                rec.status = Status::Complete;
                rec.error = None;
                for later in &mut self.stages[pos + 1..] {
                    later.status = Status::Pending;
                    later.error = None;
                }
            }
            Err(e) => {
                rec.status = Status::Failed;
                rec.error = Some(e.to_string());
            }
        }
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        std::fs::write(dir.join("MANIFEST.json"), text)
    }
}
