//! Training shard files and the `plan.json` manifest.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use ladder_core::{HierarchyError, PromptTemplate, ShardRecord, StagePlan, Strategy};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus_io::{read_jsonl, write_jsonl, CorpusIoError};

pub const PLAN_MANIFEST: &str = "plan.json";

#[derive(Debug, Error)]
pub enum ShardError {
    #[error("the plan holds no triplets")]
    EmptyPlan,
    #[error(transparent)]
    Hierarchy(#[from] HierarchyError),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Read(#[from] CorpusIoError),
    #[error("{}: {message}", path.display())]
    Manifest { path: PathBuf, message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    /// 1-based, matching the shard file name.
    pub index: usize,
    pub name: String,
    pub shard: String,
    pub count: usize,
    /// Examples seen in this stage when training cumulatively.
    pub cumulative_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketSizes {
    pub easy: usize,
    pub medium: usize,
    pub hard: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanManifest {
    pub strategy: Strategy,
    pub seed: Option<u64>,
    pub mu: f64,
    pub nu: f64,
    /// Whether the trainer should union shards 1..=k at stage k. Shards
    /// themselves always hold only their own stage.
    pub cumulative: bool,
    pub buckets: BucketSizes,
    pub stages: Vec<StageEntry>,
    #[serde(default)]
    pub scorer: Option<String>,
}

impl PlanManifest {
    pub fn read(path: &Path) -> Result<Self, ShardError> {
        let text = fs::read_to_string(path).map_err(|source| ShardError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| ShardError::Manifest {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn shard_paths(&self, dir: &Path) -> Vec<PathBuf> {
        self.stages.iter().map(|s| dir.join(&s.shard)).collect()
    }
}

/// Writes one `stage{k}_{name}.jsonl` per stage, empty stages included,
/// and returns their paths in stage order.
pub fn emit_shards(
    plan: &StagePlan,
    refine: &PromptTemplate,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, ShardError> {
    if plan.is_empty() {
        return Err(ShardError::EmptyPlan);
    }
    let records = plan.shard_records(refine)?;
    let mut paths = Vec::with_capacity(records.len());
    for (k, stage_records) in records.iter().enumerate() {
        let path = out_dir.join(plan.shard_name(k + 1));
        write_jsonl(&path, stage_records).map_err(|source| ShardError::Io {
            path: path.clone(),
            source,
        })?;
        paths.push(path);
    }
    Ok(paths)
}

/// Manifest for a sequential `plan`; `cumulative` tells the trainer to
/// union earlier shards itself.
pub fn plan_manifest(
    plan: &StagePlan,
    cumulative: bool,
    bucket_sizes: BucketSizes,
    scorer: Option<String>,
) -> PlanManifest {
    let mut seen = 0;
    let stages = plan
        .stages
        .iter()
        .enumerate()
        .map(|(k, stage)| {
            seen += stage.triplets.len();
            StageEntry {
                index: k + 1,
                name: stage.name.clone(),
                shard: plan.shard_name(k + 1),
                count: stage.triplets.len(),
                cumulative_count: seen,
            }
        })
        .collect();
    PlanManifest {
        strategy: plan.strategy,
        seed: plan.seed,
        mu: plan.thresholds.mu(),
        nu: plan.thresholds.nu(),
        cumulative,
        buckets: bucket_sizes,
        stages,
        scorer,
    }
}

pub fn read_shard(path: &Path) -> Result<Vec<ShardRecord>, ShardError> {
    Ok(read_jsonl(path)?)
}
