//! Drives the external trainer adapter one stage at a time.
//!
//! For each stage the driver writes `stage{k}.json`, runs
//! `{adapter} train --config stage{k}.json` and checks
//! `{checkpoint_dir}/receipt_stage{k}.json`. Here `k` is the 0-based
//! `stage_index`; shard files keep their 1-based names.

use std::env;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::TrainSettings;
use crate::shards::PlanManifest;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(
        "trainer adapter `{0}` not found; install the trainer adapter package so that it is on PATH, \
         or point `train.adapter` at it"
    )]
    AdapterMissing(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("stage {stage}: adapter exited with {status}; later stages were not run")]
    StageFailed { stage: usize, status: String },
    #[error("stage {stage}: bad receipt {}: {message}", path.display())]
    BadReceipt {
        stage: usize,
        path: PathBuf,
        message: String,
    },
    #[error("the plan has no stages")]
    EmptyPlan,
}

/// Contents of `stage{k}.json`, the adapter's input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub base_model_id: String,
    pub lora_rank: u32,
    pub learning_rate: f64,
    pub epochs_per_stage: u32,
    pub batch_size: u32,
    pub max_seq_len: u32,
    /// Every shard of the plan, in stage order.
    pub stage_shard_paths: Vec<PathBuf>,
    pub checkpoint_dir: PathBuf,
    pub cumulative: bool,
    pub stage_index: usize,
    /// Shard trained in this stage (before any cumulative union).
    pub shard_path: PathBuf,
    pub init_checkpoint: Option<PathBuf>,
    /// Where this stage's adapter weights must be written.
    pub output_checkpoint: PathBuf,
    pub seed: Option<u64>,
}

/// `receipt_stage{k}.json` as written by the adapter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Receipt {
    pub stage: usize,
    pub shard_sha256: String,
    pub config_sha256: String,
    pub init_checkpoint: Option<String>,
    pub final_loss: f64,
    pub steps: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum StageOutcome {
    Trained {
        stage_index: usize,
        checkpoint: PathBuf,
        receipt: Receipt,
    },
    /// No training data for this stage; the previous checkpoint carries over.
    Skipped { stage_index: usize },
}

pub fn sha256_file(path: &Path) -> Result<String, TrainError> {
    let bytes = fs::read(path).map_err(|source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// Finds `program` on PATH, or checks it directly when it has a directory
/// part.
pub fn locate_program(program: &str) -> Option<PathBuf> {
    let p = Path::new(program);
    if p.components().count() > 1 {
        return p.is_file().then(|| p.to_path_buf());
    }
    env::split_paths(&env::var_os("PATH")?)
        .map(|dir| dir.join(program))
        .find(|c| c.is_file())
}

/// Runs every stage in plan order, failing fast.
pub fn run_training(
    manifest: &PlanManifest,
    plan_dir: &Path,
    settings: &TrainSettings,
    work_dir: &Path,
    seed: Option<u64>,
) -> Result<Vec<StageOutcome>, TrainError> {
    if manifest.stages.is_empty() {
        return Err(TrainError::EmptyPlan);
    }
    let argv = settings.adapter.argv();
    let program = locate_program(&argv[0]).ok_or_else(|| TrainError::AdapterMissing(argv[0].clone()))?;
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| TrainError::Io { path, source }
    };
    let checkpoint_dir = work_dir.join("checkpoints");
    fs::create_dir_all(&checkpoint_dir).map_err(io(&checkpoint_dir))?;
    let shard_paths = manifest.shard_paths(plan_dir);
    let mut outcomes = Vec::new();
    let mut init: Option<PathBuf> = None;
    for (k, stage) in manifest.stages.iter().enumerate() {
        let data = if manifest.cumulative {
            stage.cumulative_count
        } else {
            stage.count
        };
        if data == 0 {
            log::info!("stage {k} ({}) has no data, skipping", stage.name);
            outcomes.push(StageOutcome::Skipped { stage_index: k });
            continue;
        }
        let output_checkpoint = checkpoint_dir.join(format!("stage{k}"));
        let config = StageConfig {
            base_model_id: settings.base_model.clone(),
            lora_rank: settings.lora_rank,
            learning_rate: settings.learning_rate,
            epochs_per_stage: settings.epochs_per_stage,
            batch_size: settings.batch_size,
            max_seq_len: settings.max_seq_len,
            stage_shard_paths: shard_paths.clone(),
            checkpoint_dir: checkpoint_dir.clone(),
            cumulative: manifest.cumulative,
            stage_index: k,
            shard_path: shard_paths[k].clone(),
            init_checkpoint: init.clone(),
            output_checkpoint: output_checkpoint.clone(),
            seed,
        };
        let config_path = work_dir.join(format!("stage{k}.json"));
        let bytes = serde_json::to_vec_pretty(&config).expect("stage config serializes");
        fs::write(&config_path, &bytes).map_err(io(&config_path))?;
        log::info!("stage {k} ({}): running {}", stage.name, program.display());
        let status = Command::new(&program)
            .args(&argv[1..])
            .arg("train")
            .arg("--config")
            .arg(&config_path)
            .status()
            .map_err(io(&program))?;
        if !status.success() {
            return Err(TrainError::StageFailed {
                stage: k,
                status: status.to_string(),
            });
        }
        let receipt = check_receipt(&config, &hex::encode(Sha256::digest(&bytes)))?;
        outcomes.push(StageOutcome::Trained {
            stage_index: k,
            checkpoint: output_checkpoint.clone(),
            receipt,
        });
        init = Some(output_checkpoint);
    }
    Ok(outcomes)
}

fn check_receipt(config: &StageConfig, config_sha256: &str) -> Result<Receipt, TrainError> {
    let k = config.stage_index;
    let path = config.checkpoint_dir.join(format!("receipt_stage{k}.json"));
    let bad = |message: String| TrainError::BadReceipt {
        stage: k,
        path: path.clone(),
        message,
    };
    let text = fs::read_to_string(&path).map_err(|e| bad(e.to_string()))?;
    let receipt: Receipt = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    if receipt.stage != k {
        return Err(bad(format!("stage {} != {k}", receipt.stage)));
    }
    let shard_sha256 = sha256_file(&config.shard_path)?;
    if receipt.shard_sha256 != shard_sha256 {
        return Err(bad("shard_sha256 does not match the stage shard".into()));
    }
    if receipt.config_sha256 != config_sha256 {
        return Err(bad("config_sha256 does not match the stage config".into()));
    }
    let expected_init = config
        .init_checkpoint
        .as_ref()
        .map(|p| p.to_string_lossy().into_owned());
    if receipt.init_checkpoint != expected_init {
        return Err(bad(format!(
            "init_checkpoint {:?} != {:?}",
            receipt.init_checkpoint, expected_init
        )));
    }
    if !receipt.final_loss.is_finite() {
        return Err(bad("final_loss is not finite".into()));
    }
    if !config.output_checkpoint.exists() {
        return Err(bad(format!(
            "checkpoint {} was not written",
            config.output_checkpoint.display()
        )));
    }
    Ok(receipt)
}
