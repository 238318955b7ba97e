//! Parallel pairs, dataset splits and pseudo-refinement triplets.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::QualityScore;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorpusError {
    #[error("source and target language are both `{0}`")]
    SameLanguage(String),
    #[error("unknown language code `{0}`; give the full language name explicitly")]
    UnknownLanguage(String),
    #[error("invalid direction `{0}`, expected `src-tgt`")]
    BadDirection(String),
    #[error("language name for `{0}` is empty")]
    EmptyLanguageName(String),
    #[error("pair `{id}`: {field} is empty or whitespace-only")]
    EmptyText { id: String, field: &'static str },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("id `{id}` appears in both {first} and {second} splits")]
    SplitOverlap {
        id: String,
        first: SplitName,
        second: SplitName,
    },
    #[error("cannot sample {requested} pairs from a split of {available}")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("missing intermediate translations for ids: {}", .0.join(", "))]
    MissingIntermediates(Vec<String>),
}

const LANGUAGE_NAMES: &[(&str, &str)] = &[
    ("ar", "Arabic"),
    ("cs", "Czech"),
    ("de", "German"),
    ("en", "English"),
    ("es", "Spanish"),
    ("fr", "French"),
    ("ha", "Hausa"),
    ("is", "Icelandic"),
    ("it", "Italian"),
    ("ja", "Japanese"),
    ("ko", "Korean"),
    ("pt", "Portuguese"),
    ("ru", "Russian"),
    ("uk", "Ukrainian"),
    ("zh", "Chinese"),
];

/// Full English name of an ISO-639-1 code, when known.
pub fn language_name(code: &str) -> Option<&'static str> {
    LANGUAGE_NAMES
        .iter()
        .find(|(c, _)| c.eq_ignore_ascii_case(code))
        .map(|(_, name)| *name)
}

/// A translation direction with the full language names used in prompts.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Direction {
    src_lang: String,
    tgt_lang: String,
    src_name: String,
    tgt_name: String,
}

impl Direction {
    pub fn new(
        src_lang: impl Into<String>,
        tgt_lang: impl Into<String>,
        src_name: impl Into<String>,
        tgt_name: impl Into<String>,
    ) -> Result<Self, CorpusError> {
        let src_lang = src_lang.into().to_ascii_lowercase();
        let tgt_lang = tgt_lang.into().to_ascii_lowercase();
        if src_lang == tgt_lang {
            return Err(CorpusError::SameLanguage(src_lang));
        }
        let src_name = src_name.into();
        let tgt_name = tgt_name.into();
        if src_name.trim().is_empty() {
            return Err(CorpusError::EmptyLanguageName(src_lang));
        }
        if tgt_name.trim().is_empty() {
            return Err(CorpusError::EmptyLanguageName(tgt_lang));
        }
        Ok(Self {
            src_lang,
            tgt_lang,
            src_name,
            tgt_name,
        })
    }

    /// Builds a direction from two codes with built-in language names.
    pub fn from_codes(src: &str, tgt: &str) -> Result<Self, CorpusError> {
        let src_name =
            language_name(src).ok_or_else(|| CorpusError::UnknownLanguage(src.to_string()))?;
        let tgt_name =
            language_name(tgt).ok_or_else(|| CorpusError::UnknownLanguage(tgt.to_string()))?;
        Self::new(src, tgt, src_name, tgt_name)
    }

    /// Parses `zh-en` style labels.
    pub fn parse(label: &str) -> Result<Self, CorpusError> {
        let (src, tgt) = label
            .split_once('-')
            .ok_or_else(|| CorpusError::BadDirection(label.to_string()))?;
        if src.is_empty() || tgt.is_empty() {
            return Err(CorpusError::BadDirection(label.to_string()));
        }
        Self::from_codes(src, tgt)
    }

    pub fn src_lang(&self) -> &str {
        &self.src_lang
    }

    pub fn tgt_lang(&self) -> &str {
        &self.tgt_lang
    }

    pub fn src_name(&self) -> &str {
        &self.src_name
    }

    pub fn tgt_name(&self) -> &str {
        &self.tgt_name
    }

    pub fn label(&self) -> String {
        format!("{}-{}", self.src_lang, self.tgt_lang)
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.src_lang, self.tgt_lang)
    }
}

fn require_text(id: &str, field: &'static str, text: &str) -> Result<(), CorpusError> {
    if text.trim().is_empty() {
        Err(CorpusError::EmptyText {
            id: id.to_string(),
            field,
        })
    } else {
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelPair {
    id: String,
    source: String,
    reference: String,
    direction: Direction,
}

impl ParallelPair {
    pub fn new(
        id: impl Into<String>,
        source: impl Into<String>,
        reference: impl Into<String>,
        direction: Direction,
    ) -> Result<Self, CorpusError> {
        let id = id.into();
        let source = source.into();
        let reference = reference.into();
        require_text(&id, "source", &source)?;
        require_text(&id, "reference", &reference)?;
        Ok(Self {
            id,
            source,
            reference,
            direction,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn reference(&self) -> &str {
        &self.reference
    }

    pub fn direction(&self) -> &Direction {
        &self.direction
    }
}

/// A (source, intermediate translation, reference) training example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefinementTriplet {
    id: String,
    source: String,
    intermediate: String,
    reference: String,
    direction: Direction,
    score: Option<QualityScore>,
    sampler_tag: String,
}

impl RefinementTriplet {
    pub fn new(
        id: impl Into<String>,
        source: impl Into<String>,
        intermediate: impl Into<String>,
        reference: impl Into<String>,
        direction: Direction,
        sampler_tag: impl Into<String>,
    ) -> Result<Self, CorpusError> {
        let id = id.into();
        let source = source.into();
        let intermediate = intermediate.into();
        let reference = reference.into();
        require_text(&id, "source", &source)?;
        require_text(&id, "intermediate", &intermediate)?;
        require_text(&id, "reference", &reference)?;
        Ok(Self {
            id,
            source,
            intermediate,
            reference,
            direction,
            score: None,
            sampler_tag: sampler_tag.into(),
        })
    }

    pub fn with_score(mut self, score: Option<QualityScore>) -> Self {
        self.score = score;
        self
    }

    pub fn set_score(&mut self, score: QualityScore) {
        self.score = Some(score);
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn intermediate(&self) -> &str {
        &self.intermediate
    }

    pub fn reference(&self) -> &str {
        &self.reference
    }

    pub fn direction(&self) -> &Direction {
        &self.direction
    }

    pub fn score(&self) -> Option<QualityScore> {
        self.score
    }

    pub fn sampler_tag(&self) -> &str {
        &self.sampler_tag
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Dev,
    Test,
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitName::Train => "train",
            SplitName::Dev => "dev",
            SplitName::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetSplit {
    name: SplitName,
    pairs: Vec<ParallelPair>,
}

impl DatasetSplit {
    /// Rejects duplicate ids.
    pub fn new(name: SplitName, pairs: Vec<ParallelPair>) -> Result<Self, CorpusError> {
        let mut seen = BTreeSet::new();
        for p in &pairs {
            if !seen.insert(p.id.as_str()) {
                return Err(CorpusError::DuplicateId(p.id.clone()));
            }
        }
        Ok(Self { name, pairs })
    }

    pub fn name(&self) -> SplitName {
        self.name
    }

    pub fn pairs(&self) -> &[ParallelPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.pairs.iter().map(|p| p.id.as_str())
    }
}

/// Splits of one dataset; no id may appear in two of them.
#[derive(Clone, Debug, Default)]
pub struct Dataset {
    splits: Vec<DatasetSplit>,
}

impl Dataset {
    pub fn new(splits: Vec<DatasetSplit>) -> Result<Self, CorpusError> {
        let mut owner: BTreeMap<&str, SplitName> = BTreeMap::new();
        for split in &splits {
            for id in split.ids() {
                if let Some(&first) = owner.get(id) {
                    return Err(CorpusError::SplitOverlap {
                        id: id.to_string(),
                        first,
                        second: split.name,
                    });
                }
                owner.insert(id, split.name);
            }
        }
        Ok(Self { splits })
    }

    pub fn split(&self, name: SplitName) -> Option<&DatasetSplit> {
        self.splits.iter().find(|s| s.name == name)
    }
}

/// Draws `n` pairs without replacement, deterministically from `seed`.
///
/// The sample keeps the original file order of the chosen pairs.
pub fn sample_dev_split(
    split: &DatasetSplit,
    n: usize,
    seed: u64,
) -> Result<DatasetSplit, CorpusError> {
    if n > split.len() {
        return Err(CorpusError::SampleTooLarge {
            requested: n,
            available: split.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, split.len(), n).into_vec();
    picked.sort_unstable();
    let pairs = picked.into_iter().map(|i| split.pairs[i].clone()).collect();
    Ok(DatasetSplit {
        name: SplitName::Dev,
        pairs,
    })
}

/// Joins sampled intermediate translations onto their parallel pairs.
pub fn attach_intermediates(
    split: &DatasetSplit,
    intermediates: &BTreeMap<String, String>,
    sampler_tag: &str,
) -> Result<Vec<RefinementTriplet>, CorpusError> {
    let missing: Vec<String> = split
        .ids()
        .filter(|id| !intermediates.contains_key(*id))
        .map(String::from)
        .collect();
    if !missing.is_empty() {
        return Err(CorpusError::MissingIntermediates(missing));
    }
    split
        .pairs
        .iter()
        .map(|p| {
            RefinementTriplet::new(
                p.id.clone(),
                p.source.clone(),
                intermediates[&p.id].clone(),
                p.reference.clone(),
                p.direction.clone(),
                sampler_tag,
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn de_en() -> Direction {
        Direction::from_codes("de", "en").unwrap()
    }

    fn split(n: usize) -> DatasetSplit {
        let pairs = (0..n)
            .map(|i| {
                ParallelPair::new(format!("dev:{i}"), format!("s{i}"), format!("r{i}"), de_en())
                    .unwrap()
            })
            .collect();
        DatasetSplit::new(SplitName::Dev, pairs).unwrap()
    }

    #[test]
    fn direction_invariants() {
        assert_eq!(de_en().src_name(), "German");
        assert_eq!(Direction::parse("zh-en").unwrap().tgt_name(), "English");
        assert!(matches!(
            Direction::parse("en-en"),
            Err(CorpusError::SameLanguage(_))
        ));
        assert!(Direction::parse("xx-en").is_err());
        assert!(Direction::new("xx", "en", "Klingon", "English").is_ok());
        assert!(Direction::new("xx", "en", " ", "English").is_err());
    }

    #[test]
    fn whitespace_only_text_rejected() {
        assert!(ParallelPair::new("a", "  \t", "ref", de_en()).is_err());
        assert!(RefinementTriplet::new("a", "s", "", "r", de_en(), "m").is_err());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let p = ParallelPair::new("x", "s", "r", de_en()).unwrap();
        assert_eq!(
            DatasetSplit::new(SplitName::Train, alloc::vec![p.clone(), p]),
            Err(CorpusError::DuplicateId("x".into()))
        );
    }

    #[test]
    fn splits_must_be_disjoint() {
        let a = split(3);
        let b = DatasetSplit::new(SplitName::Test, a.pairs().to_vec()).unwrap();
        assert!(matches!(
            Dataset::new(alloc::vec![a, b]),
            Err(CorpusError::SplitOverlap { .. })
        ));
    }

    #[test]
    fn sampling_100_of_1002_is_reproducible() {
        let s = split(1002);
        let a = sample_dev_split(&s, 100, 7).unwrap();
        let b = sample_dev_split(&s, 100, 7).unwrap();
        assert_eq!(a.len(), 100);
        assert_eq!(a, b);
        assert_eq!(s.len(), 1002);
    }

    #[test]
    fn sampling_edge_cases() {
        let s = split(10);
        let full = sample_dev_split(&s, 10, 3).unwrap();
        let ids: BTreeSet<&str> = full.ids().collect();
        assert_eq!(ids, s.ids().collect());
        assert!(sample_dev_split(&s, 0, 3).unwrap().is_empty());
        assert_eq!(
            sample_dev_split(&s, 11, 3),
            Err(CorpusError::SampleTooLarge {
                requested: 11,
                available: 10
            })
        );
    }

    #[test]
    fn attach_bijection_and_missing_ids() {
        let s = split(3);
        let mut inter: BTreeMap<String, String> =
            s.ids().map(|id| (id.to_string(), format!("i-{id}"))).collect();
        let t = attach_intermediates(&s, &inter, "sampler").unwrap();
        assert_eq!(t.len(), 3);
        assert!(t.iter().zip(s.ids()).all(|(t, id)| t.id() == id));
        assert!(t.iter().all(|t| t.score().is_none()));

        inter.remove("dev:1");
        assert_eq!(
            attach_intermediates(&s, &inter, "sampler"),
            Err(CorpusError::MissingIntermediates(alloc::vec!["dev:1".into()]))
        );
    }

    #[test]
    fn intermediate_equal_to_reference_is_valid() {
        let s = split(1);
        let inter: BTreeMap<String, String> = [("dev:0".to_string(), "r0".to_string())].into();
        let t = attach_intermediates(&s, &inter, "m").unwrap();
        assert_eq!(t[0].intermediate(), t[0].reference());
    }

    proptest! {
        #[test]
        fn sample_is_deterministic_subset(len in 0usize..200, frac in 0.0f64..=1.0, seed: u64) {
            let s = split(len);
            let n = (len as f64 * frac) as usize;
            let a = sample_dev_split(&s, n, seed).unwrap();
            prop_assert_eq!(&a, &sample_dev_split(&s, n, seed).unwrap());
            prop_assert_eq!(a.len(), n);
            let all: BTreeSet<&str> = s.ids().collect();
            let picked: BTreeSet<&str> = a.ids().collect();
            prop_assert_eq!(picked.len(), n);
            prop_assert!(picked.is_subset(&all));
        }
    }
}
