//! Improvement analytics: score deltas, change classes and result tables.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReportError {
    #[error("{original} original scores but {refined} refined scores")]
    LengthMismatch { original: usize, refined: usize },
    #[error("no scores to summarize")]
    Empty,
    #[error("record `{id}` has no {which} score")]
    MissingScore { id: String, which: &'static str },
    #[error("row {model}/{direction} reports metrics {found:?}, expected {expected:?}")]
    InconsistentMetrics {
        model: String,
        direction: String,
        expected: Vec<String>,
        found: Vec<String>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChangeClass {
    Improved,
    Degraded,
    Unchanged,
}

impl ChangeClass {
    /// Classifies `delta`; magnitudes up to `tie_epsilon` count as unchanged.
    pub fn of(delta: f64, tie_epsilon: f64) -> Self {
        if delta.abs() <= tie_epsilon {
            ChangeClass::Unchanged
        } else if delta > 0.0 {
            ChangeClass::Improved
        } else {
            ChangeClass::Degraded
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ChangeClass::Improved => "improved",
            ChangeClass::Degraded => "degraded",
            ChangeClass::Unchanged => "unchanged",
        }
    }
}

impl fmt::Display for ChangeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Mean and spread of per-segment improvements, with class proportions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaStats {
    pub metric: String,
    pub n: usize,
    pub delta_mean: f64,
    /// Population standard deviation of the deltas.
    pub delta_std: f64,
    pub improved_frac: f64,
    pub degraded_frac: f64,
    pub unchanged_frac: f64,
}

impl DeltaStats {
    pub fn fraction(&self, class: ChangeClass) -> f64 {
        match class {
            ChangeClass::Improved => self.improved_frac,
            ChangeClass::Degraded => self.degraded_frac,
            ChangeClass::Unchanged => self.unchanged_frac,
        }
    }
}

pub fn improvement_stats(
    original: &[f64],
    refined: &[f64],
    tie_epsilon: f64,
    metric: &str,
) -> Result<DeltaStats, ReportError> {
    if original.len() != refined.len() {
        return Err(ReportError::LengthMismatch {
            original: original.len(),
            refined: refined.len(),
        });
    }
    if original.is_empty() {
        return Err(ReportError::Empty);
    }
    let n = original.len();
    let deltas: Vec<f64> = refined.iter().zip(original).map(|(r, o)| r - o).collect();
    let mean = deltas.iter().sum::<f64>() / n as f64;
    let var = deltas.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n as f64;
    let counts = class_counts(deltas.iter().map(|&d| ChangeClass::of(d, tie_epsilon)));
    Ok(DeltaStats {
        metric: metric.to_string(),
        n,
        delta_mean: mean,
        delta_std: libm::sqrt(var),
        improved_frac: counts[0] as f64 / n as f64,
        degraded_frac: counts[1] as f64 / n as f64,
        unchanged_frac: counts[2] as f64 / n as f64,
    })
}

fn class_counts(classes: impl Iterator<Item = ChangeClass>) -> [usize; 3] {
    let mut counts = [0usize; 3];
    for c in classes {
        counts[match c {
            ChangeClass::Improved => 0,
            ChangeClass::Degraded => 1,
            ChangeClass::Unchanged => 2,
        }] += 1;
    }
    counts
}

/// One point of an original-vs-refined scatter plot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub id: String,
    pub original: f64,
    pub refined: f64,
    pub class: ChangeClass,
}

/// Builds scatter rows from `(id, original, refined)` scores.
pub fn scatter_rows<'a>(
    points: impl IntoIterator<Item = (&'a str, Option<f64>, Option<f64>)>,
    tie_epsilon: f64,
) -> Result<Vec<ScatterRow>, ReportError> {
    let rows: Vec<ScatterRow> = points
        .into_iter()
        .map(|(id, original, refined)| {
            let original = original.ok_or_else(|| ReportError::MissingScore {
                id: id.to_string(),
                which: "original",
            })?;
            let refined = refined.ok_or_else(|| ReportError::MissingScore {
                id: id.to_string(),
                which: "refined",
            })?;
            Ok(ScatterRow {
                id: id.to_string(),
                original,
                refined,
                class: ChangeClass::of(refined - original, tie_epsilon),
            })
        })
        .collect::<Result<_, _>>()?;
    if rows.is_empty() {
        return Err(ReportError::Empty);
    }
    Ok(rows)
}

/// `[improved, degraded, unchanged]` proportions of scatter rows.
pub fn class_fractions(rows: &[ScatterRow]) -> [f64; 3] {
    let counts = class_counts(rows.iter().map(|r| r.class));
    let n = rows.len().max(1) as f64;
    counts.map(|c| c as f64 / n)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricCell {
    pub metric: String,
    pub original: f64,
    pub refined: f64,
}

impl MetricCell {
    pub fn delta(&self) -> f64 {
        self.refined - self.original
    }

    pub fn class(&self) -> ChangeClass {
        ChangeClass::of(self.delta(), 0.0)
    }
}

/// Original vs refined scores of one model on one direction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BreakdownRow {
    pub model: String,
    pub direction: String,
    pub cells: Vec<MetricCell>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableFormat {
    Text,
    Markdown,
    Csv,
}

fn signed(delta: f64) -> String {
    // keep "+0.00" for exact ties
    let delta = if delta == 0.0 { 0.0 } else { delta };
    format!("{delta:+.2}")
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Renders rows ordered by (model, direction), one line per row.
pub fn render_table(rows: &[BreakdownRow], format: TableFormat) -> Result<String, ReportError> {
    let first = rows.first().ok_or(ReportError::Empty)?;
    let metrics: Vec<String> = first.cells.iter().map(|c| c.metric.clone()).collect();
    for row in rows {
        let found: Vec<String> = row.cells.iter().map(|c| c.metric.clone()).collect();
        if found != metrics {
            return Err(ReportError::InconsistentMetrics {
                model: row.model.clone(),
                direction: row.direction.clone(),
                expected: metrics,
                found,
            });
        }
    }
    let mut sorted: Vec<&BreakdownRow> = rows.iter().collect();
    sorted.sort_by(|a, b| (&a.model, &a.direction).cmp(&(&b.model, &b.direction)));

    let mut out = String::new();
    match format {
        TableFormat::Csv => {
            out.push_str("model,direction");
            for m in &metrics {
                let m = csv_field(m);
                write!(out, ",{m}_original,{m}_refined,{m}_delta,{m}_class").unwrap();
            }
            out.push('\n');
            for row in sorted {
                write!(out, "{},{}", csv_field(&row.model), csv_field(&row.direction)).unwrap();
                for c in &row.cells {
                    write!(
                        out,
                        ",{:.2},{:.2},{},{}",
                        c.original,
                        c.refined,
                        signed(c.delta()),
                        c.class()
                    )
                    .unwrap();
                }
                out.push('\n');
            }
        }
        TableFormat::Markdown => {
            out.push_str("| model | direction |");
            for m in &metrics {
                write!(out, " {m} |").unwrap();
            }
            out.push_str("\n|---|---|");
            for _ in &metrics {
                out.push_str("---|");
            }
            out.push('\n');
            for row in sorted {
                write!(out, "| {} | {} |", row.model, row.direction).unwrap();
                for c in &row.cells {
                    write!(
                        out,
                        " {:.2} → {:.2} ({}, {}) |",
                        c.original,
                        c.refined,
                        signed(c.delta()),
                        c.class()
                    )
                    .unwrap();
                }
                out.push('\n');
            }
        }
        TableFormat::Text => {
            let model_w = sorted.iter().map(|r| r.model.chars().count()).max().unwrap_or(0).max(5);
            let dir_w = sorted
                .iter()
                .map(|r| r.direction.chars().count())
                .max()
                .unwrap_or(0)
                .max(9);
            write!(out, "{:model_w$}  {:dir_w$}", "model", "direction").unwrap();
            for m in &metrics {
                write!(out, "  {m:<32}").unwrap();
            }
            let header_end = out.trim_end().len();
            out.truncate(header_end);
            out.push('\n');
            for row in sorted {
                let mut line = String::new();
                write!(line, "{:model_w$}  {:dir_w$}", row.model, row.direction).unwrap();
                for c in &row.cells {
                    let cell = format!(
                        "{:.2} -> {:.2} ({}) {}",
                        c.original,
                        c.refined,
                        signed(c.delta()),
                        c.class()
                    );
                    write!(line, "  {cell:<32}").unwrap();
                }
                out.push_str(line.trim_end());
                out.push('\n');
            }
        }
    }
    Ok(out)
}

/// Metric labels present in any row, sorted.
pub fn metric_labels(rows: &[BreakdownRow]) -> BTreeSet<&str> {
    rows.iter()
        .flat_map(|r| r.cells.iter().map(|c| c.metric.as_str()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn uniform_improvement() {
        let s = improvement_stats(&[0.70, 0.80], &[0.75, 0.85], 0.0, "neural").unwrap();
        assert!((s.delta_mean - 0.05).abs() < 1e-12);
        assert!(s.delta_std.abs() < 1e-12);
        assert_eq!(s.improved_frac, 1.0);
    }

    #[test]
    fn identity_is_unchanged() {
        let s = improvement_stats(&[0.3, 0.9, 0.5], &[0.3, 0.9, 0.5], 0.0, "x").unwrap();
        assert_eq!(s.delta_mean, 0.0);
        assert_eq!(s.delta_std, 0.0);
        assert_eq!(s.unchanged_frac, 1.0);
    }

    #[test]
    fn single_degradation() {
        let s = improvement_stats(&[0.5], &[0.4], 0.0, "x").unwrap();
        assert!((s.delta_mean + 0.1).abs() < 1e-12);
        assert_eq!(s.degraded_frac, 1.0);
    }

    #[test]
    fn closed_form_mean_and_population_std() {
        // deltas 1, 2, 3, 6: mean 3, variance (4 + 1 + 0 + 9) / 4 = 3.5
        let s = improvement_stats(&[0.0; 4], &[1.0, 2.0, 3.0, 6.0], 0.0, "x").unwrap();
        assert_eq!(s.delta_mean, 3.0);
        assert!((s.delta_std - libm::sqrt(3.5)).abs() < 1e-12);
    }

    #[test]
    fn tie_epsilon_widens_unchanged() {
        let s = improvement_stats(&[0.5, 0.5], &[0.505, 0.6], 0.01, "x").unwrap();
        assert_eq!(s.unchanged_frac, 0.5);
        assert_eq!(s.improved_frac, 0.5);
    }

    #[test]
    fn errors() {
        assert_eq!(improvement_stats(&[], &[], 0.0, "x"), Err(ReportError::Empty));
        assert!(matches!(
            improvement_stats(&[1.0], &[1.0, 2.0], 0.0, "x"),
            Err(ReportError::LengthMismatch { .. })
        ));
        assert!(matches!(
            scatter_rows([("a", Some(0.1), None)], 0.0),
            Err(ReportError::MissingScore { which: "refined", .. })
        ));
        assert_eq!(scatter_rows([], 0.0), Err(ReportError::Empty));
    }

    fn row(model: &str, dir: &str, o: f64, r: f64) -> BreakdownRow {
        BreakdownRow {
            model: model.into(),
            direction: dir.into(),
            cells: vec![MetricCell {
                metric: "BLEU".into(),
                original: o,
                refined: r,
            }],
        }
    }

    #[test]
    fn table_delta_formatting() {
        let rows = [row("BigTranslate-13B", "zh-en", 14.32, 22.58), row("A", "de-en", 30.0, 30.0)];
        let md = render_table(&rows, TableFormat::Markdown).unwrap();
        assert!(md.contains("14.32 → 22.58 (+8.26, improved)"));
        assert!(md.contains("(+0.00, unchanged)"));
        let csv = render_table(&rows, TableFormat::Csv).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "model,direction,BLEU_original,BLEU_refined,BLEU_delta,BLEU_class");
        assert_eq!(lines[1], "A,de-en,30.00,30.00,+0.00,unchanged");
        assert_eq!(lines[2], "BigTranslate-13B,zh-en,14.32,22.58,+8.26,improved");
        let text = render_table(&rows, TableFormat::Text).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.contains("(+8.26) improved"));
    }

    #[test]
    fn table_rejects_mixed_metric_sets() {
        let mut b = row("B", "de-en", 1.0, 2.0);
        b.cells[0].metric = "COMET".into();
        assert!(render_table(&[row("A", "de-en", 1.0, 2.0), b], TableFormat::Text).is_err());
        assert_eq!(render_table(&[], TableFormat::Csv), Err(ReportError::Empty));
    }

    // Dyadic values keep the shifted arithmetic exact.
    fn dyadic() -> impl Strategy<Value = f64> {
        (0i32..1024).prop_map(|k| k as f64 / 1024.0)
    }

    proptest! {
        #[test]
        fn translation_invariance(
            pairs in proptest::collection::vec((dyadic(), dyadic()), 1..50),
            shift in -64i32..64,
        ) {
            let c = shift as f64 / 8.0;
            let (o, r): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
            let o2: Vec<f64> = o.iter().map(|x| x + c).collect();
            let r2: Vec<f64> = r.iter().map(|x| x + c).collect();
            let a = improvement_stats(&o, &r, 0.0, "m").unwrap();
            let b = improvement_stats(&o2, &r2, 0.0, "m").unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn fractions_sum_to_one_and_match_scatter(
            pairs in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..60),
            eps in 0.0f64..0.1,
        ) {
            let (o, r): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
            let s = improvement_stats(&o, &r, eps, "m").unwrap();
            prop_assert!((s.improved_frac + s.degraded_frac + s.unchanged_frac - 1.0).abs() < 1e-9);
            prop_assert!(s.delta_std >= 0.0);
            let ids: Vec<String> = (0..o.len()).map(|i| format!("{i}")).collect();
            let rows = scatter_rows(
                ids.iter().zip(&pairs).map(|(id, &(a, b))| (id.as_str(), Some(a), Some(b))),
                eps,
            ).unwrap();
            prop_assert_eq!(class_fractions(&rows), [s.improved_frac, s.degraded_frac, s.unchanged_frac]);
        }

        #[test]
        fn concatenation_mean_is_weighted(
            a in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..30),
            b in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..30),
        ) {
            let stats = |v: &[(f64, f64)]| {
                let (o, r): (Vec<f64>, Vec<f64>) = v.iter().copied().unzip();
                improvement_stats(&o, &r, 0.0, "m").unwrap()
            };
            let joined: Vec<(f64, f64)> = a.iter().chain(&b).copied().collect();
            let (sa, sb, sj) = (stats(&a), stats(&b), stats(&joined));
            let weighted = (sa.delta_mean * a.len() as f64 + sb.delta_mean * b.len() as f64)
                / joined.len() as f64;
            prop_assert!((sj.delta_mean - weighted).abs() < 1e-12);
        }
    }
}
