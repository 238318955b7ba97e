//! Translation quality metrics and score values.

mod bleu;
mod chrf;
mod tokenize;

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bleu::{bleu_corpus, bleu_sentence, BleuStats};
pub use chrf::{chrf_corpus, chrf_sentence, ChrfStats};
pub use tokenize::Tokenization;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("hypothesis count {hypotheses} does not match reference count {references}")]
    LengthMismatch { hypotheses: usize, references: usize },
    #[error("cannot score an empty corpus")]
    EmptyCorpus,
    #[error("reference is empty")]
    EmptyReference,
    #[error("{metric} score {value} outside [0, {max}]")]
    OutOfRange { metric: Metric, value: f64, max: f64 },
    #[error("{metric} score is NaN")]
    NotANumber { metric: Metric },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Bleu,
    Chrf,
    /// Score returned by a remote neural scorer such as COMET.
    Neural,
}

impl Metric {
    /// Upper end of the metric's native scale.
    pub fn scale_max(self) -> f64 {
        match self {
            Metric::Bleu | Metric::Chrf => 100.0,
            Metric::Neural => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Bleu => "bleu",
            Metric::Chrf => "chrf",
            Metric::Neural => "neural",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "bleu" => Some(Metric::Bleu),
            "chrf" => Some(Metric::Chrf),
            "neural" => Some(Metric::Neural),
            _ => None,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A score on its metric's native scale: 0-100 for BLEU and chrF, 0-1 for
/// neural scorers.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawScore")]
pub struct QualityScore {
    metric: Metric,
    value: f64,
}

#[derive(Deserialize)]
struct RawScore {
    metric: Metric,
    value: f64,
}

impl TryFrom<RawScore> for QualityScore {
    type Error = MetricError;

    fn try_from(raw: RawScore) -> Result<Self, Self::Error> {
        QualityScore::new(raw.metric, raw.value)
    }
}

impl QualityScore {
    pub fn new(metric: Metric, value: f64) -> Result<Self, MetricError> {
        if value.is_nan() {
            return Err(MetricError::NotANumber { metric });
        }
        let max = metric.scale_max();
        if !(0.0..=max).contains(&value) {
            return Err(MetricError::OutOfRange { metric, value, max });
        }
        Ok(Self { metric, value })
    }

    /// Builds a score from a computed value, absorbing rounding noise at the
    /// ends of the scale.
    pub(crate) fn clamped(metric: Metric, value: f64) -> Self {
        Self {
            metric,
            value: value.clamp(0.0, metric.scale_max()),
        }
    }

    pub fn metric(&self) -> Metric {
        self.metric
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    /// The value mapped onto [0, 1].
    pub fn normalized(&self) -> f64 {
        self.value / self.metric.scale_max()
    }
}

/// Scores of one text under several metrics, at most one per metric.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<Metric, f64>", into = "BTreeMap<Metric, f64>")]
pub struct ScoreSet {
    scores: BTreeMap<Metric, f64>,
}

impl TryFrom<BTreeMap<Metric, f64>> for ScoreSet {
    type Error = MetricError;

    fn try_from(map: BTreeMap<Metric, f64>) -> Result<Self, Self::Error> {
        for (&metric, &value) in &map {
            QualityScore::new(metric, value)?;
        }
        Ok(Self { scores: map })
    }
}

impl From<ScoreSet> for BTreeMap<Metric, f64> {
    fn from(set: ScoreSet) -> Self {
        set.scores
    }
}

impl ScoreSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, score: QualityScore) {
        self.scores.insert(score.metric, score.value);
    }

    pub fn get(&self, metric: Metric) -> Option<QualityScore> {
        self.scores
            .get(&metric)
            .map(|&value| QualityScore { metric, value })
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn metrics(&self) -> impl Iterator<Item = Metric> + '_ {
        self.scores.keys().copied()
    }
}

/// Corpus- and segment-level scores for one system output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub tokenization: Tokenization,
    pub corpus_bleu: f64,
    pub corpus_chrf: f64,
    pub mean_neural: Option<f64>,
    pub per_segment: Vec<ScoreSet>,
}

impl MetricReport {
    /// Lexical scores of `hypotheses` against aligned `references`.
    pub fn evaluate<H: AsRef<str>, R: AsRef<str>>(
        hypotheses: &[H],
        references: &[R],
        tokenization: Tokenization,
    ) -> Result<Self, MetricError> {
        let corpus_bleu = bleu_corpus(hypotheses, references, tokenization)?;
        let corpus_chrf = chrf_corpus(hypotheses, references)?;
        let per_segment = hypotheses
            .iter()
            .zip(references)
            .map(|(h, r)| {
                let mut set = ScoreSet::new();
                set.insert(bleu_sentence(h.as_ref(), r.as_ref(), tokenization));
                if let Ok(chrf) = chrf_sentence(h.as_ref(), r.as_ref()) {
                    set.insert(chrf);
                }
                set
            })
            .collect();
        Ok(Self {
            tokenization,
            corpus_bleu: corpus_bleu.value(),
            corpus_chrf: corpus_chrf.value(),
            mean_neural: None,
            per_segment,
        })
    }

    /// Attaches per-segment neural scores and their mean.
    pub fn with_neural(mut self, scores: &[QualityScore]) -> Result<Self, MetricError> {
        if scores.len() != self.per_segment.len() {
            return Err(MetricError::LengthMismatch {
                hypotheses: self.per_segment.len(),
                references: scores.len(),
            });
        }
        if scores.is_empty() {
            return Err(MetricError::EmptyCorpus);
        }
        let mut sum = 0.0;
        for (set, score) in self.per_segment.iter_mut().zip(scores) {
            set.insert(*score);
            sum += score.value();
        }
        self.mean_neural = Some(sum / scores.len() as f64);
        Ok(self)
    }
}

pub(crate) fn check_aligned<H, R>(hypotheses: &[H], references: &[R]) -> Result<(), MetricError> {
    if hypotheses.len() != references.len() {
        return Err(MetricError::LengthMismatch {
            hypotheses: hypotheses.len(),
            references: references.len(),
        });
    }
    if hypotheses.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    Ok(())
}
