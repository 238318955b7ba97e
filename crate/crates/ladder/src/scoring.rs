//! Scorer selection, the remote neural scorer and its on-disk cache.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use futures::future::join_all;
use ladder_core::{
    bleu_sentence, chrf_sentence, Metric, MetricError, QualityScore, RefinementTriplet,
    Tokenization,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::client::{CallError, ClientError, HttpCaller};
use crate::ItemFailure;

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error(transparent)]
    Call(#[from] CallError),
    #[error("scorer returned an invalid score: {0}")]
    Invalid(#[from] MetricError),
    #[error("{metric} needs a reference")]
    MissingReference { metric: Metric },
    #[error("score cache {}: {source}", path.display())]
    Cache { path: PathBuf, source: io::Error },
    #[error("score cache {}:{line}: {message}", path.display())]
    CacheFormat {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{} triplet(s) already scored (first: {}); pass --rescore to overwrite", .0.len(), .0[0])]
    AlreadyScored(Vec<String>),
    #[error("neural scorer needs `scorer.endpoint`")]
    MissingEndpoint,
    #[error(transparent)]
    Client(#[from] ClientError),
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    metric: Metric,
    key: String,
    value: f64,
}

/// Append-only JSONL cache of scores keyed by metric and content hash.
#[derive(Debug)]
pub struct ScoreCache {
    path: PathBuf,
    entries: Mutex<HashMap<(Metric, String), f64>>,
    file: Mutex<File>,
}

impl ScoreCache {
    pub fn open(path: &Path) -> Result<Self, ScoreError> {
        let cache_err = |source| ScoreError::Cache {
            path: path.to_path_buf(),
            source,
        };
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path).map_err(cache_err)?);
            for (k, line) in reader.lines().enumerate() {
                let line = line.map_err(cache_err)?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: CacheLine =
                    serde_json::from_str(&line).map_err(|e| ScoreError::CacheFormat {
                        path: path.to_path_buf(),
                        line: k + 1,
                        message: e.to_string(),
                    })?;
                entries.insert((entry.metric, entry.key), entry.value);
            }
        } else if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(cache_err)?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(cache_err)?;
        Ok(Self {
            path: path.to_path_buf(),
            entries: Mutex::new(entries),
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Content hash of a scoring request; a missing reference differs from
    /// an empty one.
    pub fn key(source: &str, hypothesis: &str, reference: Option<&str>) -> String {
        let mut h = Sha256::new();
        h.update(source.as_bytes());
        h.update([0]);
        h.update(hypothesis.as_bytes());
        h.update([0]);
        match reference {
            Some(r) => {
                h.update([1]);
                h.update(r.as_bytes());
            }
            None => h.update([2]),
        }
        hex::encode(h.finalize())
    }

    pub fn get(&self, metric: Metric, key: &str) -> Option<f64> {
        self.entries
            .lock()
            .unwrap()
            .get(&(metric, key.to_string()))
            .copied()
    }

    pub fn put(&self, metric: Metric, key: &str, value: f64) -> Result<(), ScoreError> {
        let line = serde_json::to_string(&CacheLine {
            metric,
            key: key.to_string(),
            value,
        })
        .expect("cache line serializes");
        {
            let mut file = self.file.lock().unwrap();
            writeln!(file, "{line}")
                .and_then(|_| file.flush())
                .map_err(|source| ScoreError::Cache {
                    path: self.path.clone(),
                    source,
                })?;
        }
        self.entries
            .lock()
            .unwrap()
            .insert((metric, key.to_string()), value);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `[scorer]` section of a run config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScorerConfig {
    pub kind: Metric,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub cache: Option<PathBuf>,
    /// Send `reference: null` (quality-estimation mode).
    #[serde(default)]
    pub reference_free: bool,
    #[serde(default, skip_serializing)]
    pub api_key: Option<String>,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub retries: u32,
    #[serde(default = "default_backoff_base_ms")]
    pub backoff_base_ms: u64,
}

fn default_max_in_flight() -> usize {
    4
}
fn default_timeout_secs() -> f64 {
    120.0
}
fn default_retries() -> u32 {
    3
}
fn default_backoff_base_ms() -> u64 {
    500
}

impl ScorerConfig {
    pub fn lexical(kind: Metric) -> Self {
        Self {
            kind,
            endpoint: None,
            cache: None,
            reference_free: false,
            api_key: None,
            max_in_flight: default_max_in_flight(),
            timeout_secs: default_timeout_secs(),
            retries: default_retries(),
            backoff_base_ms: default_backoff_base_ms(),
        }
    }

    pub fn neural(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: Some(endpoint.into()),
            ..Self::lexical(Metric::Neural)
        }
    }
}

/// Client for a `POST {endpoint}/score` quality service.
#[derive(Debug)]
pub struct RemoteScorer {
    caller: HttpCaller,
    endpoint: String,
    url: String,
    cache: Option<ScoreCache>,
    reference_free: bool,
}

impl RemoteScorer {
    pub fn new(config: &ScorerConfig) -> Result<Self, ScoreError> {
        let endpoint = config.endpoint.clone().ok_or(ScoreError::MissingEndpoint)?;
        if reqwest::Url::parse(&endpoint).is_err() {
            return Err(ClientError::InvalidConfig(format!("scorer endpoint `{endpoint}` is not a URL")).into());
        }
        if config.max_in_flight == 0 || config.timeout_secs.is_nan() || config.timeout_secs <= 0.0 {
            return Err(ClientError::InvalidConfig(
                "scorer max_in_flight and timeout_secs must be positive".into(),
            )
            .into());
        }
        let caller = HttpCaller::new(
            config.api_key.clone(),
            config.max_in_flight,
            config.timeout_secs,
            config.retries,
            config.backoff_base_ms,
        )?;
        let cache = config.cache.as_deref().map(ScoreCache::open).transpose()?;
        Ok(Self {
            caller,
            url: format!("{}/score", endpoint.trim_end_matches('/')),
            endpoint,
            cache,
            reference_free: config.reference_free,
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn cache(&self) -> Option<&ScoreCache> {
        self.cache.as_ref()
    }

    pub fn reference_free(&self) -> bool {
        self.reference_free
    }

    pub async fn remote_score(
        &self,
        source: &str,
        hypothesis: &str,
        reference: Option<&str>,
    ) -> Result<QualityScore, ScoreError> {
        if hypothesis.trim().is_empty() {
            return Err(CallError::EmptyInput {
                field: "hypothesis".into(),
            }
            .into());
        }
        let reference = if self.reference_free { None } else { reference };
        let key = ScoreCache::key(source, hypothesis, reference);
        if let Some(v) = self.cache.as_ref().and_then(|c| c.get(Metric::Neural, &key)) {
            return Ok(QualityScore::new(Metric::Neural, v)?);
        }
        let body = json!({"source": source, "hypothesis": hypothesis, "reference": reference});
        let (response, _) = self.caller.post_json(&self.url, &body).await;
        let value = response?
            .get("score")
            .and_then(Value::as_f64)
            .ok_or_else(|| CallError::Malformed {
                message: "missing numeric `score`".into(),
            })?;
        let score = QualityScore::new(Metric::Neural, value)?;
        if let Some(cache) = &self.cache {
            cache.put(Metric::Neural, &key, value)?;
        }
        Ok(score)
    }
}

/// The metric used to score translations against references.
#[derive(Debug)]
#[allow(clippy::large_enum_variant)]
pub enum Scorer {
    /// Sentence BLEU, tokenized for the target language.
    Bleu,
    Chrf,
    Neural(RemoteScorer),
}

impl Scorer {
    pub fn from_config(config: &ScorerConfig) -> Result<Self, ScoreError> {
        Ok(match config.kind {
            Metric::Bleu => Scorer::Bleu,
            Metric::Chrf => Scorer::Chrf,
            Metric::Neural => Scorer::Neural(RemoteScorer::new(config)?),
        })
    }

    pub fn metric(&self) -> Metric {
        match self {
            Scorer::Bleu => Metric::Bleu,
            Scorer::Chrf => Metric::Chrf,
            Scorer::Neural(_) => Metric::Neural,
        }
    }

    /// Human-readable scorer identity for manifests and reports.
    pub fn describe(&self) -> String {
        match self {
            Scorer::Bleu => "bleu: native sentence BLEU, add-one smoothing, 13a or zh tokens".into(),
            Scorer::Chrf => "chrf: native chrF, char order 6, beta 2".into(),
            Scorer::Neural(r) => format!(
                "neural: {}{}",
                r.endpoint(),
                if r.reference_free() { " (reference-free)" } else { "" }
            ),
        }
    }

    pub async fn score(
        &self,
        source: &str,
        hypothesis: &str,
        reference: Option<&str>,
        tgt_lang: &str,
    ) -> Result<QualityScore, ScoreError> {
        match self {
            Scorer::Bleu => {
                let r = reference.ok_or(ScoreError::MissingReference { metric: Metric::Bleu })?;
                Ok(bleu_sentence(hypothesis, r, Tokenization::for_language(tgt_lang)))
            }
            Scorer::Chrf => {
                let r = reference.ok_or(ScoreError::MissingReference { metric: Metric::Chrf })?;
                Ok(chrf_sentence(hypothesis, r)?)
            }
            Scorer::Neural(remote) => remote.remote_score(source, hypothesis, reference).await,
        }
    }
}

pub struct ScoredTriplets {
    /// Input order; failed items keep no score.
    pub triplets: Vec<RefinementTriplet>,
    pub failures: Vec<ItemFailure>,
}

/// Scores each triplet's intermediate against its reference.
///
/// Already scored triplets are a precondition error unless `rescore`.
pub async fn score_triplets(
    triplets: Vec<RefinementTriplet>,
    scorer: &Scorer,
    rescore: bool,
) -> Result<ScoredTriplets, ScoreError> {
    if !rescore {
        let scored: Vec<String> = triplets
            .iter()
            .filter(|t| t.score().is_some())
            .map(|t| t.id().to_string())
            .collect();
        if !scored.is_empty() {
            return Err(ScoreError::AlreadyScored(scored));
        }
    }
    let results = join_all(triplets.iter().map(|t| {
        scorer.score(
            t.source(),
            t.intermediate(),
            Some(t.reference()),
            t.direction().tgt_lang(),
        )
    }))
    .await;
    let mut failures = Vec::new();
    let mut out = Vec::with_capacity(triplets.len());
    for (index, (t, r)) in triplets.into_iter().zip(results).enumerate() {
        match r {
            Ok(score) => out.push(t.with_score(Some(score))),
            Err(e) => {
                failures.push(ItemFailure::new(index, t.id(), "score", e.to_string()));
                out.push(t.with_score(None));
            }
        }
    }
    Ok(ScoredTriplets {
        triplets: out,
        failures,
    })
}
