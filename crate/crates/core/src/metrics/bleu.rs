//! Corpus and sentence BLEU with the reference scorer's smoothing rules.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use super::tokenize::split_py_whitespace;
use super::{check_aligned, Metric, MetricError, QualityScore, Tokenization};

const MAX_ORDER: usize = 4;

/// Sufficient statistics for BLEU; sum them to aggregate a corpus.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub hyp_len: u64,
    pub ref_len: u64,
    pub correct: [u64; MAX_ORDER],
    pub total: [u64; MAX_ORDER],
}

impl BleuStats {
    pub fn from_segment(hypothesis: &str, reference: &str, tokenization: Tokenization) -> Self {
        let hyp = tokenization.tokenize(hypothesis);
        let reference = tokenization.tokenize(reference);
        let hyp: Vec<&str> = split_py_whitespace(&hyp).collect();
        let reference: Vec<&str> = split_py_whitespace(&reference).collect();

        let ref_counts = ngram_counts(&reference);
        let mut stats = BleuStats {
            hyp_len: hyp.len() as u64,
            ref_len: reference.len() as u64,
            ..Default::default()
        };
        for (ngram, count) in ngram_counts(&hyp) {
            let n = ngram.len() - 1;
            stats.total[n] += count;
            if let Some(&r) = ref_counts.get(ngram) {
                stats.correct[n] += count.min(r);
            }
        }
        stats
    }

    fn accumulate(&mut self, other: &BleuStats) {
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
        for n in 0..MAX_ORDER {
            self.correct[n] += other.correct[n];
            self.total[n] += other.total[n];
        }
    }
}

fn ngram_counts<'a>(tokens: &'a [&'a str]) -> BTreeMap<&'a [&'a str], u64> {
    let mut counts = BTreeMap::new();
    for n in 1..=MAX_ORDER {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum Smoothing {
    /// NIST geometric halving for zero-match orders.
    Exp,
    /// Adds k to matches and totals of orders above 1.
    AddK(f64),
}

/// Floored log, matching the reference scorer.
fn floored_log(x: f64) -> f64 {
    if x == 0.0 {
        -9_999_999_999.0
    } else {
        libm::log(x)
    }
}

pub(crate) fn compute_bleu(stats: &BleuStats, smoothing: Smoothing, effective_order: bool) -> f64 {
    let sys_len = stats.hyp_len as f64;
    let ref_len = stats.ref_len as f64;
    let bp = if stats.hyp_len < stats.ref_len {
        if stats.hyp_len > 0 {
            libm::exp(1.0 - ref_len / sys_len)
        } else {
            0.0
        }
    } else {
        1.0
    };

    if stats.correct.iter().all(|&c| c == 0) {
        return 0.0;
    }

    let mut correct = stats.correct.map(|c| c as f64);
    let mut total = stats.total.map(|t| t as f64);
    let mut precisions = [0.0f64; MAX_ORDER];
    let mut smooth_mteval = 1.0;
    let mut eff_order = MAX_ORDER;
    for n in 0..MAX_ORDER {
        if let Smoothing::AddK(k) = smoothing {
            if n > 0 {
                correct[n] += k;
                total[n] += k;
            }
        }
        if total[n] == 0.0 {
            break;
        }
        if effective_order {
            eff_order = n + 1;
        }
        if correct[n] == 0.0 {
            if smoothing == Smoothing::Exp {
                smooth_mteval *= 2.0;
                precisions[n] = 100.0 / (smooth_mteval * total[n]);
            }
        } else {
            precisions[n] = 100.0 * correct[n] / total[n];
        }
    }

    let log_sum: f64 = precisions[..eff_order].iter().map(|&p| floored_log(p)).sum();
    bp * libm::exp(log_sum / eff_order as f64)
}

/// Corpus BLEU (0-100) with exponential smoothing and full 4-gram order.
pub fn bleu_corpus<H: AsRef<str>, R: AsRef<str>>(
    hypotheses: &[H],
    references: &[R],
    tokenization: Tokenization,
) -> Result<QualityScore, MetricError> {
    check_aligned(hypotheses, references)?;
    let mut stats = BleuStats::default();
    for (h, r) in hypotheses.iter().zip(references) {
        stats.accumulate(&BleuStats::from_segment(h.as_ref(), r.as_ref(), tokenization));
    }
    Ok(QualityScore::clamped(
        Metric::Bleu,
        compute_bleu(&stats, Smoothing::Exp, false),
    ))
}

/// Sentence BLEU (0-100) with add-one smoothing on orders above 1 and
/// effective n-gram order.
pub fn bleu_sentence(hypothesis: &str, reference: &str, tokenization: Tokenization) -> QualityScore {
    let stats = BleuStats::from_segment(hypothesis, reference, tokenization);
    QualityScore::clamped(
        Metric::Bleu,
        compute_bleu(&stats, Smoothing::AddK(1.0), true),
    )
}
