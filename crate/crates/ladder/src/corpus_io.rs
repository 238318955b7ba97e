//! Reading parallel corpora and reading/writing triplet JSONL files.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use ladder_core::{
    CorpusError, DatasetSplit, Direction, Metric, ParallelPair, QualityScore, RefinementTriplet,
    SplitName,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusIoError {
    #[error("corpus file not found: {}", .0.display())]
    NotFound(PathBuf),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}:{line}: {message}", path.display())]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{}: corpus is empty", .0.display())]
    Empty(PathBuf),
    #[error("{}: {source}", path.display())]
    Invalid { path: PathBuf, source: CorpusError },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CorpusFormat {
    /// `source<TAB>reference`, no header.
    Tsv,
    /// One `{"source", "reference", "id"?}` object per line.
    Jsonl,
    /// Line-aligned source and reference files.
    PairedText { reference: PathBuf },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CorpusIoError + '_ {
    move |source| {
        if source.kind() == io::ErrorKind::NotFound {
            CorpusIoError::NotFound(path.to_path_buf())
        } else {
            CorpusIoError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>, CorpusIoError> {
    let file = File::open(path).map_err(io_err(path))?;
    BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(io_err(path))
}

fn format_err(path: &Path, line: usize, message: impl Into<String>) -> CorpusIoError {
    CorpusIoError::Format {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".to_string())
}

#[derive(Deserialize)]
struct JsonPair {
    id: Option<String>,
    source: String,
    reference: String,
}

/// Loads a parallel corpus in file order.
///
/// Ids default to `{file stem}:{line number}`. Malformed or blank lines are
/// errors reported with their 1-based line number.
pub fn load_parallel_corpus(
    path: &Path,
    format: &CorpusFormat,
    direction: &Direction,
    split: SplitName,
) -> Result<DatasetSplit, CorpusIoError> {
    let name = dataset_name(path);
    let mut pairs = Vec::new();
    let make = |id: String, source: String, reference: String, line: usize| {
        ParallelPair::new(id, source, reference, direction.clone())
            .map_err(|e| format_err(path, line, e.to_string()))
    };
    match format {
        CorpusFormat::Tsv => {
            for (k, line) in read_lines(path)?.into_iter().enumerate() {
                let n = k + 1;
                let cols: Vec<&str> = line.split('\t').collect();
                if cols.len() != 2 {
                    return Err(format_err(
                        path,
                        n,
                        format!("expected 2 tab-separated columns, found {}", cols.len()),
                    ));
                }
                pairs.push(make(format!("{name}:{n}"), cols[0].into(), cols[1].into(), n)?);
            }
        }
        CorpusFormat::Jsonl => {
            for (k, line) in read_lines(path)?.into_iter().enumerate() {
                let n = k + 1;
                let rec: JsonPair = serde_json::from_str(&line)
                    .map_err(|e| format_err(path, n, e.to_string()))?;
                let id = rec.id.unwrap_or_else(|| format!("{name}:{n}"));
                pairs.push(make(id, rec.source, rec.reference, n)?);
            }
        }
        CorpusFormat::PairedText { reference } => {
            let sources = read_lines(path)?;
            let references = read_lines(reference)?;
            if sources.len() != references.len() {
                return Err(format_err(
                    reference,
                    sources.len().min(references.len()) + 1,
                    format!(
                        "{} source lines but {} reference lines",
                        sources.len(),
                        references.len()
                    ),
                ));
            }
            for (k, (s, r)) in sources.into_iter().zip(references).enumerate() {
                pairs.push(make(format!("{name}:{}", k + 1), s, r, k + 1)?);
            }
        }
    }
    if pairs.is_empty() {
        return Err(CorpusIoError::Empty(path.to_path_buf()));
    }
    DatasetSplit::new(split, pairs).map_err(|source| CorpusIoError::Invalid {
        path: path.to_path_buf(),
        source,
    })
}

/// One line of a triplet JSONL file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TripletLine {
    pub id: String,
    pub src_lang: String,
    pub tgt_lang: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub src_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tgt_name: Option<String>,
    pub source: String,
    pub intermediate: String,
    /// Absent in precomputed-intermediate inputs.
    #[serde(default)]
    pub reference: Option<String>,
    #[serde(default)]
    pub score: Option<f64>,
    /// Metric that produced `score`; neural when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score_metric: Option<Metric>,
    #[serde(default)]
    pub sampler_tag: String,
}

impl TripletLine {
    fn from_triplet(t: &RefinementTriplet) -> Self {
        let d = t.direction();
        let default_names = Direction::from_codes(d.src_lang(), d.tgt_lang()).ok();
        let custom_names = default_names.as_ref() != Some(d);
        Self {
            id: t.id().to_string(),
            src_lang: d.src_lang().to_string(),
            tgt_lang: d.tgt_lang().to_string(),
            src_name: custom_names.then(|| d.src_name().to_string()),
            tgt_name: custom_names.then(|| d.tgt_name().to_string()),
            source: t.source().to_string(),
            intermediate: t.intermediate().to_string(),
            reference: Some(t.reference().to_string()),
            score: t.score().map(|s| s.value()),
            score_metric: t.score().map(|s| s.metric()),
            sampler_tag: t.sampler_tag().to_string(),
        }
    }

    pub fn direction(&self) -> Result<Direction, CorpusError> {
        match (&self.src_name, &self.tgt_name) {
            (Some(s), Some(t)) => Direction::new(&self.src_lang, &self.tgt_lang, s, t),
            _ => Direction::from_codes(&self.src_lang, &self.tgt_lang),
        }
    }

    fn into_triplet(self) -> Result<RefinementTriplet, String> {
        let direction = self.direction().map_err(|e| e.to_string())?;
        let score = match self.score {
            Some(v) => Some(
                QualityScore::new(self.score_metric.unwrap_or(Metric::Neural), v)
                    .map_err(|e| e.to_string())?,
            ),
            None => None,
        };
        let reference = self.reference.ok_or("missing field `reference`")?;
        RefinementTriplet::new(
            self.id,
            self.source,
            self.intermediate,
            reference,
            direction,
            self.sampler_tag,
        )
        .map(|t| t.with_score(score))
        .map_err(|e| e.to_string())
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut out, &item)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn write_triplets(triplets: &[RefinementTriplet], path: &Path) -> Result<(), CorpusIoError> {
    write_jsonl(path, triplets.iter().map(TripletLine::from_triplet)).map_err(io_err(path))
}

/// Parses one JSON value per nonblank line, failing on the first bad line.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CorpusIoError> {
    let mut items = Vec::new();
    for (k, line) in read_lines(path)?.into_iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        items.push(serde_json::from_str(&line).map_err(|e| format_err(path, k + 1, e.to_string()))?);
    }
    Ok(items)
}

pub fn read_triplets(path: &Path) -> Result<Vec<RefinementTriplet>, CorpusIoError> {
    let mut seen = HashSet::new();
    let mut triplets = Vec::new();
    for (k, line) in read_lines(path)?.into_iter().enumerate() {
        let n = k + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TripletLine =
            serde_json::from_str(&line).map_err(|e| format_err(path, n, e.to_string()))?;
        if !seen.insert(rec.id.clone()) {
            return Err(format_err(path, n, format!("duplicate id `{}`", rec.id)));
        }
        triplets.push(rec.into_triplet().map_err(|m| format_err(path, n, m))?);
    }
    Ok(triplets)
}

/// A source sentence with an externally produced translation to refine.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecomputedItem {
    pub id: String,
    pub source: String,
    pub intermediate: Option<String>,
    pub reference: Option<String>,
}

/// Reads `source<TAB>intermediate[<TAB>reference]` TSV or triplet-style
/// JSONL with the reference optional. Rows with an empty intermediate are
/// kept with `intermediate: None` so callers can report them per item.
pub fn read_precomputed(path: &Path) -> Result<Vec<PrecomputedItem>, CorpusIoError> {
    let name = dataset_name(path);
    let is_jsonl = path
        .extension()
        .is_some_and(|e| e == "jsonl" || e == "json");
    let non_empty = |s: String| (!s.trim().is_empty()).then_some(s);
    let mut items = Vec::new();
    if is_jsonl {
        for (k, line) in read_lines(path)?.into_iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: TripletLine = serde_json::from_str(&line)
                .map_err(|e| format_err(path, k + 1, e.to_string()))?;
            items.push(PrecomputedItem {
                id: rec.id,
                source: rec.source,
                intermediate: non_empty(rec.intermediate),
                reference: rec.reference.and_then(non_empty),
            });
        }
    } else {
        for (k, line) in read_lines(path)?.into_iter().enumerate() {
            let n = k + 1;
            let mut cols = line.split('\t');
            let source = cols.next().unwrap_or_default().to_string();
            let intermediate = cols.next().map(str::to_string);
            let reference = cols.next().map(str::to_string);
            if cols.next().is_some() || source.trim().is_empty() {
                return Err(format_err(path, n, "expected source<TAB>intermediate[<TAB>reference]"));
            }
            items.push(PrecomputedItem {
                id: format!("{name}:{n}"),
                source,
                intermediate: intermediate.and_then(non_empty),
                reference: reference.and_then(non_empty),
            });
        }
    }
    if items.is_empty() {
        return Err(CorpusIoError::Empty(path.to_path_buf()));
    }
    Ok(items)
}

/// Reads one segment per line, e.g. hypothesis or reference files.
pub fn read_segments(path: &Path) -> Result<Vec<String>, CorpusIoError> {
    read_lines(path)
}

pub fn ensure_dir(path: &Path) -> Result<(), CorpusIoError> {
    fs::create_dir_all(path).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use tempfile::TempDir;

    fn zh_en() -> Direction {
        Direction::from_codes("zh", "en").unwrap()
    }

    fn write(dir: &TempDir, name: &str, body: &str) -> PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn tsv_with_15406_rows() {
        let dir = TempDir::new().unwrap();
        let body: String = (0..15406).map(|i| format!("源句 {i}\tsource {i}\n")).collect();
        let p = write(&dir, "zh-en.train.tsv", &body);
        let split = load_parallel_corpus(&p, &CorpusFormat::Tsv, &zh_en(), SplitName::Train).unwrap();
        assert_eq!(split.len(), 15406);
        assert_eq!(split.pairs()[0].id(), "zh-en.train:1");
        assert_eq!(split.pairs()[15405].reference(), "source 15405");
    }

    #[test]
    fn empty_file_is_an_error() {
        let dir = TempDir::new().unwrap();
        let p = write(&dir, "e.tsv", "");
        assert!(matches!(
            load_parallel_corpus(&p, &CorpusFormat::Tsv, &zh_en(), SplitName::Test),
            Err(CorpusIoError::Empty(_))
        ));
    }

    #[test]
    fn missing_file_is_reported() {
        let err = load_parallel_corpus(
            Path::new("/nonexistent/x.tsv"),
            &CorpusFormat::Tsv,
            &zh_en(),
            SplitName::Test,
        )
        .unwrap_err();
        assert!(matches!(err, CorpusIoError::NotFound(_)));
    }

    #[test]
    fn jsonl_missing_reference_names_the_line() {
        let dir = TempDir::new().unwrap();
        let p = write(
            &dir,
            "d.jsonl",
            "{\"source\":\"a\",\"reference\":\"b\"}\n{\"source\":\"c\"}\n",
        );
        match load_parallel_corpus(&p, &CorpusFormat::Jsonl, &zh_en(), SplitName::Dev) {
            Err(CorpusIoError::Format { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("reference"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tsv_rejects_whitespace_text_and_bad_columns() {
        let dir = TempDir::new().unwrap();
        let p = write(&dir, "a.tsv", "a\tb\n  \tc\n");
        assert!(matches!(
            load_parallel_corpus(&p, &CorpusFormat::Tsv, &zh_en(), SplitName::Dev),
            Err(CorpusIoError::Format { line: 2, .. })
        ));
        let p = write(&dir, "b.tsv", "a\tb\nno tab here\n");
        assert!(matches!(
            load_parallel_corpus(&p, &CorpusFormat::Tsv, &zh_en(), SplitName::Dev),
            Err(CorpusIoError::Format { line: 2, .. })
        ));
    }

    #[test]
    fn paired_text_files() {
        let dir = TempDir::new().unwrap();
        let src = write(&dir, "test.zh", "一\n二\n");
        let reference = write(&dir, "test.en", "one\ntwo\n");
        let fmt = CorpusFormat::PairedText { reference };
        let split = load_parallel_corpus(&src, &fmt, &zh_en(), SplitName::Test).unwrap();
        assert_eq!(split.pairs()[1].reference(), "two");
        let short = write(&dir, "short.en", "one\n");
        let fmt = CorpusFormat::PairedText { reference: short };
        assert!(load_parallel_corpus(&src, &fmt, &zh_en(), SplitName::Test).is_err());
    }

    #[test]
    fn duplicate_ids_in_triplet_file() {
        let dir = TempDir::new().unwrap();
        let line = r#"{"id":"x","src_lang":"zh","tgt_lang":"en","source":"s","intermediate":"i","reference":"r","score":null,"sampler_tag":"m"}"#;
        let p = write(&dir, "t.jsonl", &format!("{line}\n{line}\n"));
        assert!(matches!(
            read_triplets(&p),
            Err(CorpusIoError::Format { line: 2, .. })
        ));
    }

    #[test]
    fn score_precision_survives() {
        let dir = TempDir::new().unwrap();
        let t = RefinementTriplet::new("a", "s", "i", "r", zh_en(), "m")
            .unwrap()
            .with_score(Some(QualityScore::new(Metric::Neural, 0.8321).unwrap()));
        let p = dir.path().join("t.jsonl");
        write_triplets(std::slice::from_ref(&t), &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.contains("\"score\":0.8321"));
        assert_eq!(read_triplets(&p).unwrap(), vec![t]);
    }

    #[test]
    fn precomputed_tsv_keeps_gaps() {
        let dir = TempDir::new().unwrap();
        let p = write(&dir, "pre.tsv", "s1\ti1\ns2\t\ns3\ts3\n");
        let items = read_precomputed(&p).unwrap();
        assert_eq!(items.len(), 3);
        assert_eq!(items[1].intermediate, None);
        assert_eq!(items[2].intermediate.as_deref(), Some("s3"));
    }

    fn text() -> impl Strategy<Value = String> {
        "[^\\s]\\PC{0,20}"
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn triplet_round_trip(
            rows in proptest::collection::vec((text(), text(), text(), proptest::option::of(0.0f64..=1.0), any::<bool>()), 1..20),
        ) {
            let dir = TempDir::new().unwrap();
            let custom = Direction::new("xx", "en", "Klingon", "English").unwrap();
            let triplets: Vec<RefinementTriplet> = rows
                .iter()
                .enumerate()
                .map(|(k, (s, i, r, score, chrf))| {
                    let d = if k % 2 == 0 { zh_en() } else { custom.clone() };
                    let score = score.map(|v| if *chrf {
                        QualityScore::new(Metric::Chrf, v * 100.0).unwrap()
                    } else {
                        QualityScore::new(Metric::Neural, v).unwrap()
                    });
                    RefinementTriplet::new(format!("id{k}"), s.clone(), i.clone(), r.clone(), d, "tag")
                        .unwrap()
                        .with_score(score)
                })
                .collect();
            let p = dir.path().join("rt.jsonl");
            write_triplets(&triplets, &p).unwrap();
            prop_assert_eq!(read_triplets(&p).unwrap(), triplets);
        }
    }
}
