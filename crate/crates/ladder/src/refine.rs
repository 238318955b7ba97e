//! Sampling intermediates, refining them, self-refinement and weak-label
//! triplet construction.

use std::collections::BTreeMap;

use ladder_core::{
    attach_intermediates, bleu_sentence, chrf_sentence, improvement_stats, parse_completion,
    DatasetSplit, DeltaStats, Direction, Metric, ParallelPair, PromptTemplate, RefinementTriplet,
    ReportError, ScoreSet, Tokenization,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::client::LlmClient;
use crate::corpus_io::PrecomputedItem;
use crate::scoring::{RemoteScorer, ScoreError};
use crate::ItemFailure;

#[derive(Debug, Error)]
pub enum RefineError {
    #[error("self-refinement needs at least one iteration")]
    ZeroIterations,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Templates {
    pub direct: PromptTemplate,
    pub refine: PromptTemplate,
}

impl Default for Templates {
    fn default() -> Self {
        Self {
            direct: PromptTemplate::default_direct(),
            refine: PromptTemplate::default_refine(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RecordScores {
    #[serde(default)]
    pub intermediate: ScoreSet,
    #[serde(default)]
    pub refined: ScoreSet,
}

/// One source sentence through translation and refinement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementRecord {
    pub id: String,
    pub src_lang: String,
    pub tgt_lang: String,
    pub source: String,
    pub intermediate: Option<String>,
    pub refined: Option<String>,
    pub reference: Option<String>,
    #[serde(default)]
    pub scores: RecordScores,
    pub target_tag: String,
    pub ladder_tag: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RefinementRecord {
    pub fn direction_label(&self) -> String {
        format!("{}-{}", self.src_lang, self.tgt_lang)
    }
}

/// Translations of one source across self-refinement rounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub id: String,
    pub src_lang: String,
    pub tgt_lang: String,
    /// `texts[0]` is the direct translation, `texts[k]` the k-th refinement.
    pub texts: Vec<String>,
    /// Parallel to `texts` when a reference was available.
    #[serde(default)]
    pub scores: Vec<ScoreSet>,
    /// Set when an iteration failed and the trace stops early.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl IterationTrace {
    pub fn is_complete(&self, iterations: usize) -> bool {
        self.error.is_none() && self.texts.len() == iterations + 1
    }
}

/// Generates for every `Some` prompt; `None` slots pass their error through.
async fn generate_parsed(
    client: &LlmClient,
    prompts: Vec<Result<String, String>>,
) -> Vec<Result<String, String>> {
    let live: Vec<(usize, String)> = prompts
        .iter()
        .enumerate()
        .filter_map(|(k, p)| p.as_ref().ok().map(|p| (k, p.clone())))
        .collect();
    let texts: Vec<&str> = live.iter().map(|(_, p)| p.as_str()).collect();
    let results = client.generate_batch(&texts).await;
    let mut out = prompts;
    for ((k, _), result) in live.into_iter().zip(results) {
        out[k] = match result.outcome {
            Ok(raw) => parse_completion(&raw, client.extraction())
                .map_err(|e| format!("{}: {e}", client.tag())),
            Err(e) => Err(format!("{}: {e}", client.tag())),
        };
    }
    out
}

fn direct_prompts(pairs: &[ParallelPair], templates: &Templates) -> Vec<Result<String, String>> {
    pairs
        .iter()
        .map(|p| {
            templates
                .direct
                .render_direct(p.source(), p.direction())
                .map(|r| r.into_text())
                .map_err(|e| e.to_string())
        })
        .collect()
}

fn refine_prompts<'a>(
    items: impl Iterator<Item = (&'a str, Result<&'a str, &'a str>, &'a Direction)>,
    templates: &Templates,
) -> Vec<Result<String, String>> {
    items
        .map(|(source, intermediate, direction)| {
            let intermediate = intermediate.map_err(str::to_string)?;
            templates
                .refine
                .render_refine(source, intermediate, direction)
                .map(|r| r.into_text())
                .map_err(|e| e.to_string())
        })
        .collect()
}

/// Translates each pair with `target`, then refines the result with
/// `ladder`. The reference never reaches either endpoint.
pub async fn refine_corpus(
    pairs: &[ParallelPair],
    target: &LlmClient,
    ladder: &LlmClient,
    templates: &Templates,
) -> Vec<RefinementRecord> {
    let intermediates = generate_parsed(target, direct_prompts(pairs, templates)).await;
    let prompts = refine_prompts(
        pairs
            .iter()
            .zip(&intermediates)
            .map(|(p, i)| (p.source(), i.as_deref().map_err(String::as_str), p.direction())),
        templates,
    );
    let refined = generate_parsed(ladder, prompts).await;
    pairs
        .iter()
        .zip(intermediates)
        .zip(refined)
        .map(|((p, intermediate), refined)| {
            let error = refined.as_ref().err().cloned();
            RefinementRecord {
                id: p.id().to_string(),
                src_lang: p.direction().src_lang().to_string(),
                tgt_lang: p.direction().tgt_lang().to_string(),
                source: p.source().to_string(),
                intermediate: intermediate.ok(),
                refined: refined.ok(),
                reference: Some(p.reference().to_string()),
                scores: RecordScores::default(),
                target_tag: target.tag().to_string(),
                ladder_tag: ladder.tag().to_string(),
                error,
            }
        })
        .collect()
}

/// Refines externally supplied intermediates; no target model is called.
pub async fn precomputed_refine(
    items: &[PrecomputedItem],
    direction: &Direction,
    target_tag: &str,
    ladder: &LlmClient,
    templates: &Templates,
) -> Vec<RefinementRecord> {
    let prompts = refine_prompts(
        items.iter().map(|item| {
            (
                item.source.as_str(),
                item.intermediate.as_deref().ok_or("missing intermediate"),
                direction,
            )
        }),
        templates,
    );
    let refined = generate_parsed(ladder, prompts).await;
    items
        .iter()
        .zip(refined)
        .map(|(item, refined)| RefinementRecord {
            id: item.id.clone(),
            src_lang: direction.src_lang().to_string(),
            tgt_lang: direction.tgt_lang().to_string(),
            source: item.source.clone(),
            intermediate: item.intermediate.clone(),
            error: refined.as_ref().err().cloned(),
            refined: refined.ok(),
            reference: item.reference.clone(),
            scores: RecordScores::default(),
            target_tag: target_tag.to_string(),
            ladder_tag: ladder.tag().to_string(),
        })
        .collect()
}

/// Lexical scores of `hypothesis`, plus the neural score when a remote
/// scorer is given.
pub async fn score_set(
    source: &str,
    hypothesis: &str,
    reference: &str,
    tgt_lang: &str,
    neural: Option<&RemoteScorer>,
) -> Result<ScoreSet, ScoreError> {
    let mut set = ScoreSet::new();
    set.insert(bleu_sentence(hypothesis, reference, Tokenization::for_language(tgt_lang)));
    set.insert(chrf_sentence(hypothesis, reference)?);
    if let Some(remote) = neural {
        set.insert(remote.remote_score(source, hypothesis, Some(reference)).await?);
    }
    Ok(set)
}

/// Direct translation followed by `iterations` rounds of the same model
/// refining its own previous output.
pub async fn self_refine(
    pairs: &[ParallelPair],
    model: &LlmClient,
    iterations: usize,
    templates: &Templates,
    neural: Option<&RemoteScorer>,
) -> Result<Vec<IterationTrace>, RefineError> {
    if iterations == 0 {
        return Err(RefineError::ZeroIterations);
    }
    let mut traces: Vec<IterationTrace> = pairs
        .iter()
        .map(|p| IterationTrace {
            id: p.id().to_string(),
            src_lang: p.direction().src_lang().to_string(),
            tgt_lang: p.direction().tgt_lang().to_string(),
            texts: Vec::new(),
            scores: Vec::new(),
            error: None,
        })
        .collect();
    let mut prompts = direct_prompts(pairs, templates);
    for round in 0..=iterations {
        let outputs = generate_parsed(model, prompts).await;
        for (trace, out) in traces.iter_mut().zip(&outputs) {
            if trace.error.is_some() {
                continue;
            }
            match out {
                Ok(text) => trace.texts.push(text.clone()),
                Err(e) => trace.error = Some(format!("iteration {round}: {e}")),
            }
        }
        if round == iterations {
            break;
        }
        prompts = refine_prompts(
            pairs.iter().zip(&traces).map(|(p, t)| {
                let previous = match (&t.error, t.texts.last()) {
                    (None, Some(text)) => Ok(text.as_str()),
                    _ => Err("stopped"),
                };
                (p.source(), previous, p.direction())
            }),
            templates,
        );
    }
    for (pair, trace) in pairs.iter().zip(traces.iter_mut()) {
        for text in &trace.texts {
            match score_set(pair.source(), text, pair.reference(), &trace.tgt_lang, neural).await {
                Ok(set) => trace.scores.push(set),
                Err(e) => {
                    trace.error.get_or_insert(format!("scoring: {e}"));
                    break;
                }
            }
        }
    }
    Ok(traces)
}

/// Stats of iteration k against iteration k-1 over complete traces.
pub fn iteration_stats(
    traces: &[IterationTrace],
    iterations: usize,
    metric: Metric,
    tie_epsilon: f64,
) -> Result<Vec<DeltaStats>, ReportError> {
    let complete: Vec<&IterationTrace> = traces
        .iter()
        .filter(|t| t.is_complete(iterations) && t.scores.len() == iterations + 1)
        .collect();
    (1..=iterations)
        .map(|k| {
            let column = |i: usize| -> Result<Vec<f64>, ReportError> {
                complete
                    .iter()
                    .map(|t| {
                        t.scores[i]
                            .get(metric)
                            .map(|s| s.value())
                            .ok_or_else(|| ReportError::MissingScore {
                                id: t.id.clone(),
                                which: "iteration",
                            })
                    })
                    .collect()
            };
            improvement_stats(
                &column(k - 1)?,
                &column(k)?,
                tie_epsilon,
                &format!("{} iter{}->iter{}", metric, k - 1, k),
            )
        })
        .collect()
}

/// Samples an intermediate for every pair and builds triplets from the
/// successful ones.
pub async fn sample_triplets(
    split: &DatasetSplit,
    sampler: &LlmClient,
    templates: &Templates,
) -> (Vec<RefinementTriplet>, Vec<ItemFailure>) {
    let outputs = generate_parsed(sampler, direct_prompts(split.pairs(), templates)).await;
    let mut intermediates = BTreeMap::new();
    let mut ok_pairs = Vec::new();
    let mut failures = Vec::new();
    for (index, (pair, out)) in split.pairs().iter().zip(outputs).enumerate() {
        match out {
            Ok(text) => {
                intermediates.insert(pair.id().to_string(), text);
                ok_pairs.push(pair.clone());
            }
            Err(e) => failures.push(ItemFailure::new(index, pair.id(), "sample", e)),
        }
    }
    let built = DatasetSplit::new(split.name(), ok_pairs)
        .and_then(|s| attach_intermediates(&s, &intermediates, sampler.tag()));
    match built {
        Ok(triplets) => (triplets, failures),
        Err(e) => unreachable!("subset of a valid split with every intermediate present: {e}"),
    }
}

/// Endpoints for weak-label triplets: `weak_reference` supplies the label,
/// `intermediate` the text to refine.
pub struct WeakSupervision<'a> {
    pub weak_reference: &'a LlmClient,
    pub intermediate: &'a LlmClient,
}

pub struct WeakTriplets {
    pub triplets: Vec<RefinementTriplet>,
    /// Gold references by id, kept for evaluation only.
    pub gold: BTreeMap<String, String>,
    pub failures: Vec<ItemFailure>,
}

/// Builds (source, intermediate, weak reference) triplets. Items where
/// either endpoint failed are dropped and reported.
pub async fn build_weak_triplets(
    pairs: &[ParallelPair],
    cfg: &WeakSupervision<'_>,
    templates: &Templates,
) -> WeakTriplets {
    let prompts = direct_prompts(pairs, templates);
    let (weak, inter) = futures::join!(
        generate_parsed(cfg.weak_reference, prompts.clone()),
        generate_parsed(cfg.intermediate, prompts),
    );
    let mut out = WeakTriplets {
        triplets: Vec::new(),
        gold: BTreeMap::new(),
        failures: Vec::new(),
    };
    for (index, ((pair, w), i)) in pairs.iter().zip(weak).zip(inter).enumerate() {
        let built = w.and_then(|w| {
            i.and_then(|i| {
                RefinementTriplet::new(
                    pair.id(),
                    pair.source(),
                    i,
                    w,
                    pair.direction().clone(),
                    cfg.intermediate.tag(),
                )
                .map_err(|e| e.to_string())
            })
        });
        match built {
            Ok(t) => {
                out.gold.insert(pair.id().to_string(), pair.reference().to_string());
                out.triplets.push(t);
            }
            Err(e) => out.failures.push(ItemFailure::new(index, pair.id(), "weak", e)),
        }
    }
    out
}
