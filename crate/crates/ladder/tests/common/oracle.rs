//! The committed metric fixture and its sacrebleu outputs.

use serde::Deserialize;

#[derive(Deserialize)]
pub struct Pair {
    pub lang: String,
    pub hyp: String,
    #[serde(rename = "ref")]
    pub reference: String,
}

#[derive(Deserialize)]
pub struct CorpusScore {
    pub bleu: f64,
    pub chrf: f64,
}

#[derive(Deserialize)]
pub struct Segment {
    pub sentence_bleu: f64,
    pub sentence_chrf: f64,
    pub hyp_tokens: String,
}

#[derive(Deserialize)]
pub struct Oracle {
    pub corpus: std::collections::BTreeMap<String, CorpusScore>,
    pub segments: Vec<Segment>,
}

pub fn pairs() -> Vec<Pair> {
    serde_json::from_str(include_str!("../fixtures/metric_pairs.json")).unwrap()
}

pub fn oracle() -> Oracle {
    serde_json::from_str(include_str!("../fixtures/metric_oracle.json")).unwrap()
}

/// Hypotheses and references of one language, in fixture order.
pub fn group<'a>(pairs: &'a [Pair], lang: &str) -> (Vec<&'a str>, Vec<&'a str>) {
    pairs
        .iter()
        .filter(|p| p.lang == lang)
        .map(|p| (p.hyp.as_str(), p.reference.as_str()))
        .unzip()
}
