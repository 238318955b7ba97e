//! Scoring refinement records and turning them into report artifacts.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use futures::future::join_all;
use ladder_core::{
    bleu_corpus, chrf_corpus, improvement_stats, scatter_rows, BreakdownRow, DeltaStats, Metric,
    MetricCell, ReportError, ScatterRow, Tokenization,
};
use serde::{Deserialize, Serialize};

use crate::refine::{score_set, RefinementRecord};
use crate::scoring::RemoteScorer;
use crate::ItemFailure;

/// Fills `scores.intermediate` and `scores.refined` for every record that
/// has the texts and a reference. Existing scores are replaced.
pub async fn score_records(
    records: &mut [RefinementRecord],
    neural: Option<&RemoteScorer>,
) -> Vec<ItemFailure> {
    let jobs = records.iter().map(|r| async move {
        let Some(reference) = r.reference.as_deref() else {
            return (None, None);
        };
        let mut out = (None, None);
        if let Some(t) = r.intermediate.as_deref() {
            out.0 = Some(score_set(&r.source, t, reference, &r.tgt_lang, neural).await);
        }
        if let Some(t) = r.refined.as_deref() {
            out.1 = Some(score_set(&r.source, t, reference, &r.tgt_lang, neural).await);
        }
        out
    });
    let results = join_all(jobs).await;
    let mut failures = Vec::new();
    for (index, (record, (inter, refined))) in records.iter_mut().zip(results).enumerate() {
        record.scores = Default::default();
        for (which, result, slot) in [
            ("intermediate", inter, &mut record.scores.intermediate),
            ("refined", refined, &mut record.scores.refined),
        ] {
            match result {
                Some(Ok(set)) => *slot = set,
                Some(Err(e)) => failures.push(ItemFailure::new(
                    index,
                    &record.id,
                    "eval",
                    format!("{which}: {e}"),
                )),
                None => {}
            }
        }
    }
    failures
}

/// Records that went all the way through refinement with a reference.
pub fn complete_records(records: &[RefinementRecord]) -> (Vec<&RefinementRecord>, Vec<String>) {
    let (ok, gaps): (Vec<&RefinementRecord>, Vec<&RefinementRecord>) = records.iter().partition(|r| {
        r.error.is_none() && r.intermediate.is_some() && r.refined.is_some() && r.reference.is_some()
    });
    (ok, gaps.into_iter().map(|r| r.id.clone()).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusScores {
    pub bleu: f64,
    pub chrf: f64,
    /// Mean neural score on its 0-1 scale.
    pub neural: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub target_tag: String,
    pub ladder_tag: String,
    pub direction: String,
    pub tokenization: Tokenization,
    pub n: usize,
    pub intermediate: CorpusScores,
    pub refined: CorpusScores,
}

fn corpus_scores(
    texts: &[&str],
    refs: &[&str],
    neural: Option<Vec<f64>>,
    tokenization: Tokenization,
) -> Result<CorpusScores, ladder_core::MetricError> {
    Ok(CorpusScores {
        bleu: bleu_corpus(texts, refs, tokenization)?.value(),
        chrf: chrf_corpus(texts, refs)?.value(),
        neural: neural.map(|v| v.iter().sum::<f64>() / v.len() as f64),
    })
}

/// Corpus-level original and refined scores per (target, ladder,
/// direction), over complete records only.
pub fn group_metrics(
    records: &[&RefinementRecord],
) -> Result<Vec<GroupMetrics>, ladder_core::MetricError> {
    let mut groups: BTreeMap<(String, String, String), Vec<&RefinementRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.target_tag.clone(), r.ladder_tag.clone(), r.direction_label()))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((target_tag, ladder_tag, direction), rs)| {
            let tokenization = Tokenization::for_language(&rs[0].tgt_lang);
            let refs: Vec<&str> = rs.iter().map(|r| r.reference.as_deref().unwrap_or("")).collect();
            let inter: Vec<&str> = rs.iter().map(|r| r.intermediate.as_deref().unwrap_or("")).collect();
            let refined: Vec<&str> = rs.iter().map(|r| r.refined.as_deref().unwrap_or("")).collect();
            let neural = |pick: fn(&RefinementRecord) -> &ladder_core::ScoreSet| {
                rs.iter()
                    .map(|r| pick(r).get(Metric::Neural).map(|s| s.value()))
                    .collect::<Option<Vec<f64>>>()
            };
            Ok(GroupMetrics {
                n: rs.len(),
                intermediate: corpus_scores(&inter, &refs, neural(|r| &r.scores.intermediate), tokenization)?,
                refined: corpus_scores(&refined, &refs, neural(|r| &r.scores.refined), tokenization)?,
                target_tag,
                ladder_tag,
                direction,
                tokenization,
            })
        })
        .collect()
}

/// Table rows; neural means are shown on the 0-100 scale.
pub fn breakdown_rows(groups: &[GroupMetrics]) -> Vec<BreakdownRow> {
    let with_neural = groups
        .iter()
        .all(|g| g.intermediate.neural.is_some() && g.refined.neural.is_some());
    groups
        .iter()
        .map(|g| {
            let mut cells = vec![
                MetricCell {
                    metric: "bleu".into(),
                    original: g.intermediate.bleu,
                    refined: g.refined.bleu,
                },
                MetricCell {
                    metric: "chrf".into(),
                    original: g.intermediate.chrf,
                    refined: g.refined.chrf,
                },
            ];
            if with_neural {
                cells.push(MetricCell {
                    metric: "neural".into(),
                    original: g.intermediate.neural.unwrap_or_default() * 100.0,
                    refined: g.refined.neural.unwrap_or_default() * 100.0,
                });
            }
            let model = if groups.iter().any(|o| o.target_tag == g.target_tag && o.ladder_tag != g.ladder_tag) {
                format!("{} via {}", g.target_tag, g.ladder_tag)
            } else {
                g.target_tag.clone()
            };
            BreakdownRow {
                model,
                direction: g.direction.clone(),
                cells,
            }
        })
        .collect()
}

/// Per-metric improvement stats and scatter rows over complete records.
pub struct Analytics {
    pub deltas: BTreeMap<Metric, DeltaStats>,
    pub scatter: BTreeMap<Metric, Vec<ScatterRow>>,
}

pub fn analyze(records: &[&RefinementRecord], tie_epsilon: f64) -> Result<Analytics, ReportError> {
    if records.is_empty() {
        return Err(ReportError::Empty);
    }
    let metrics: BTreeSet<Metric> = records
        .iter()
        .flat_map(|r| r.scores.intermediate.metrics().chain(r.scores.refined.metrics()))
        .collect();
    if metrics.is_empty() {
        return Err(ReportError::MissingScore {
            id: records[0].id.clone(),
            which: "original",
        });
    }
    let mut out = Analytics {
        deltas: BTreeMap::new(),
        scatter: BTreeMap::new(),
    };
    for metric in metrics {
        let rows = scatter_rows(
            records.iter().map(|r| {
                (
                    r.id.as_str(),
                    r.scores.intermediate.get(metric).map(|s| s.value()),
                    r.scores.refined.get(metric).map(|s| s.value()),
                )
            }),
            tie_epsilon,
        )?;
        let original: Vec<f64> = rows.iter().map(|r| r.original).collect();
        let refined: Vec<f64> = rows.iter().map(|r| r.refined).collect();
        out.deltas
            .insert(metric, improvement_stats(&original, &refined, tie_epsilon, metric.name())?);
        out.scatter.insert(metric, rows);
    }
    Ok(out)
}

pub fn write_scatter_csv(rows: &[ScatterRow], path: &Path) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scatter_csv(path: &Path) -> Result<Vec<ScatterRow>, csv::Error> {
    csv::Reader::from_path(path)?.deserialize().collect()
}
