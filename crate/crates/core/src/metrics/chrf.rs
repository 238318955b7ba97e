//! Character n-gram F-score (chrF, n = 1..6, beta = 2).

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use super::tokenize::is_py_whitespace;
use super::{check_aligned, Metric, MetricError, QualityScore};

const CHAR_ORDER: usize = 6;
const BETA: f64 = 2.0;

/// Per-order `[hypothesis n-grams, reference n-grams, matches]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ChrfStats {
    pub orders: [[u64; 3]; CHAR_ORDER],
}

fn strip_whitespace(s: &str) -> Vec<char> {
    s.chars().filter(|&c| !is_py_whitespace(c)).collect()
}

fn char_ngrams(chars: &[char], n: usize) -> BTreeMap<&[char], u64> {
    let mut counts = BTreeMap::new();
    for gram in chars.windows(n) {
        *counts.entry(gram).or_insert(0) += 1;
    }
    counts
}

impl ChrfStats {
    pub fn from_segment(hypothesis: &str, reference: &str) -> Self {
        let hyp = strip_whitespace(hypothesis);
        let reference = strip_whitespace(reference);
        let mut stats = ChrfStats::default();
        for n in 1..=CHAR_ORDER {
            let h = char_ngrams(&hyp, n);
            let r = char_ngrams(&reference, n);
            let mut hyp_count = 0;
            let mut matches = 0;
            for (gram, &count) in &h {
                hyp_count += count;
                if let Some(&rc) = r.get(gram) {
                    matches += count.min(rc);
                }
            }
            // hypothesis n-grams only count when the reference has any
            let hyp_count = if r.is_empty() { 0 } else { hyp_count };
            stats.orders[n - 1] = [hyp_count, r.values().sum(), matches];
        }
        stats
    }

    fn accumulate(&mut self, other: &ChrfStats) {
        for (a, b) in self.orders.iter_mut().zip(&other.orders) {
            for k in 0..3 {
                a[k] += b[k];
            }
        }
    }

    /// F-score over the orders where both sides have n-grams.
    pub fn f_score(&self) -> f64 {
        let factor = BETA * BETA;
        let mut avg_prec = 0.0;
        let mut avg_rec = 0.0;
        let mut effective_order = 0usize;
        for &[n_hyp, n_ref, n_match] in &self.orders {
            if n_hyp > 0 && n_ref > 0 {
                avg_prec += n_match as f64 / n_hyp as f64;
                avg_rec += n_match as f64 / n_ref as f64;
                effective_order += 1;
            }
        }
        if effective_order == 0 {
            return 0.0;
        }
        avg_prec /= effective_order as f64;
        avg_rec /= effective_order as f64;
        if avg_prec + avg_rec == 0.0 {
            return 0.0;
        }
        100.0 * (1.0 + factor) * avg_prec * avg_rec / (factor * avg_prec + avg_rec)
    }
}

pub fn chrf_sentence(hypothesis: &str, reference: &str) -> Result<QualityScore, MetricError> {
    if reference.trim().is_empty() {
        return Err(MetricError::EmptyReference);
    }
    let stats = ChrfStats::from_segment(hypothesis, reference);
    Ok(QualityScore::clamped(Metric::Chrf, stats.f_score()))
}

/// Corpus chrF from summed per-segment statistics.
pub fn chrf_corpus<H: AsRef<str>, R: AsRef<str>>(
    hypotheses: &[H],
    references: &[R],
) -> Result<QualityScore, MetricError> {
    check_aligned(hypotheses, references)?;
    let mut stats = ChrfStats::default();
    for (h, r) in hypotheses.iter().zip(references) {
        stats.accumulate(&ChrfStats::from_segment(h.as_ref(), r.as_ref()));
    }
    Ok(QualityScore::clamped(Metric::Chrf, stats.f_score()))
}
