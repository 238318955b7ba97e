//! Quality hierarchies and easy-to-hard training schedules.
//!
//! Triplets are bucketed by the normalized score of their intermediate
//! translation: `score < mu` is Easy (far from the reference, most to fix),
//! `mu <= score < nu` is Medium and `score >= nu` is Hard (nearly perfect).

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::RefinementTriplet;
use crate::prompting::{PromptError, PromptTemplate};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HierarchyError {
    #[error("thresholds must satisfy 0 < mu < nu < 1, got mu={mu}, nu={nu}")]
    BadThresholds { mu: f64, nu: f64 },
    #[error("unknown threshold preset `{0}` (expected hft1, hft2 or hft3)")]
    UnknownPreset(String),
    #[error("triplets without a score: {}", .0.join(", "))]
    Unscored(Vec<String>),
    #[error("every hierarchy bucket is empty")]
    EmptyPartition,
    #[error("the mixed strategy needs a shuffle seed")]
    MissingSeed,
    #[error("triplet `{id}`: {source}")]
    Prompt { id: String, source: PromptError },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawThresholds")]
pub struct ThresholdConfig {
    mu: f64,
    nu: f64,
}

#[derive(Deserialize)]
struct RawThresholds {
    mu: f64,
    nu: f64,
}

impl TryFrom<RawThresholds> for ThresholdConfig {
    type Error = HierarchyError;

    fn try_from(raw: RawThresholds) -> Result<Self, Self::Error> {
        ThresholdConfig::new(raw.mu, raw.nu)
    }
}

impl ThresholdConfig {
    pub const HFT1: ThresholdConfig = ThresholdConfig { mu: 0.70, nu: 0.80 };
    pub const HFT2: ThresholdConfig = ThresholdConfig { mu: 0.75, nu: 0.85 };
    pub const HFT3: ThresholdConfig = ThresholdConfig { mu: 0.80, nu: 0.90 };

    pub fn new(mu: f64, nu: f64) -> Result<Self, HierarchyError> {
        if mu > 0.0 && mu < nu && nu < 1.0 {
            Ok(Self { mu, nu })
        } else {
            Err(HierarchyError::BadThresholds { mu, nu })
        }
    }

    /// Named presets used for threshold-robustness runs.
    pub fn preset(name: &str) -> Result<Self, HierarchyError> {
        match name.to_ascii_lowercase().as_str() {
            "hft1" => Ok(Self::HFT1),
            "hft2" => Ok(Self::HFT2),
            "hft3" => Ok(Self::HFT3),
            _ => Err(HierarchyError::UnknownPreset(name.to_string())),
        }
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn classify(&self, normalized_score: f64) -> HierarchyLevel {
        if normalized_score < self.mu {
            HierarchyLevel::Easy
        } else if normalized_score < self.nu {
            HierarchyLevel::Medium
        } else {
            HierarchyLevel::Hard
        }
    }
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self::HFT2
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HierarchyLevel {
    Easy,
    Medium,
    Hard,
}

impl HierarchyLevel {
    pub fn name(self) -> &'static str {
        match self {
            HierarchyLevel::Easy => "easy",
            HierarchyLevel::Medium => "medium",
            HierarchyLevel::Hard => "hard",
        }
    }
}

impl fmt::Display for HierarchyLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    pub easy: Vec<RefinementTriplet>,
    pub medium: Vec<RefinementTriplet>,
    pub hard: Vec<RefinementTriplet>,
    pub thresholds: ThresholdConfig,
}

impl Partition {
    pub fn bucket(&self, level: HierarchyLevel) -> &[RefinementTriplet] {
        match level {
            HierarchyLevel::Easy => &self.easy,
            HierarchyLevel::Medium => &self.medium,
            HierarchyLevel::Hard => &self.hard,
        }
    }

    pub fn len(&self) -> usize {
        self.easy.len() + self.medium.len() + self.hard.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Splits scored triplets into Easy/Medium/Hard, keeping input order
/// within each bucket.
pub fn partition(
    triplets: impl IntoIterator<Item = RefinementTriplet>,
    thresholds: ThresholdConfig,
) -> Result<Partition, HierarchyError> {
    let mut p = Partition {
        easy: Vec::new(),
        medium: Vec::new(),
        hard: Vec::new(),
        thresholds,
    };
    let mut unscored = Vec::new();
    for t in triplets {
        let Some(score) = t.score() else {
            unscored.push(t.id().to_string());
            continue;
        };
        match thresholds.classify(score.normalized()) {
            HierarchyLevel::Easy => p.easy.push(t),
            HierarchyLevel::Medium => p.medium.push(t),
            HierarchyLevel::Hard => p.hard.push(t),
        }
    }
    if unscored.is_empty() {
        Ok(p)
    } else {
        Err(HierarchyError::Unscored(unscored))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Easy, then Medium, then Hard.
    Hft,
    /// Hard, then Medium, then Easy.
    AntiHft,
    /// One stage holding a seeded shuffle of every bucket.
    Mixed,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Hft => "hft",
            Strategy::AntiHft => "anti_hft",
            Strategy::Mixed => "mixed",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stage {
    pub name: String,
    pub triplets: Vec<RefinementTriplet>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StagePlan {
    pub strategy: Strategy,
    pub stages: Vec<Stage>,
    pub seed: Option<u64>,
    pub thresholds: ThresholdConfig,
    pub cumulative: bool,
}

/// Orders a partition into training stages.
///
/// Empty buckets still produce (empty) stages so that stage numbers mean
/// the same level across datasets.
pub fn plan_schedule(
    partition: &Partition,
    strategy: Strategy,
    seed: Option<u64>,
) -> Result<StagePlan, HierarchyError> {
    if partition.is_empty() {
        return Err(HierarchyError::EmptyPartition);
    }
    let level_stage = |level: HierarchyLevel| Stage {
        name: level.name().to_string(),
        triplets: partition.bucket(level).to_vec(),
    };
    let (stages, seed) = match strategy {
        Strategy::Hft => (
            [HierarchyLevel::Easy, HierarchyLevel::Medium, HierarchyLevel::Hard]
                .map(level_stage)
                .to_vec(),
            None,
        ),
        Strategy::AntiHft => (
            [HierarchyLevel::Hard, HierarchyLevel::Medium, HierarchyLevel::Easy]
                .map(level_stage)
                .to_vec(),
            None,
        ),
        Strategy::Mixed => {
            let seed = seed.ok_or(HierarchyError::MissingSeed)?;
            let mut all: Vec<RefinementTriplet> = partition
                .easy
                .iter()
                .chain(&partition.medium)
                .chain(&partition.hard)
                .cloned()
                .collect();
            all.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            (
                alloc::vec![Stage {
                    name: "mixed".to_string(),
                    triplets: all,
                }],
                Some(seed),
            )
        }
    };
    Ok(StagePlan {
        strategy,
        stages,
        seed,
        thresholds: partition.thresholds,
        cumulative: false,
    })
}

/// One instruction-tuning example: refinement prompt in, reference out.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardRecord {
    pub id: String,
    pub stage: usize,
    pub level: HierarchyLevel,
    pub prompt: String,
    pub completion: String,
}

impl StagePlan {
    /// Rewrites stage k to hold the data of stages 1..=k.
    pub fn into_cumulative(mut self) -> Self {
        if self.cumulative {
            return self;
        }
        let mut acc: Vec<RefinementTriplet> = Vec::new();
        for stage in &mut self.stages {
            acc.extend(stage.triplets.iter().cloned());
            stage.triplets = acc.clone();
        }
        self.cumulative = true;
        self
    }

    pub fn len(&self) -> usize {
        self.stages.iter().map(|s| s.triplets.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn level_of(&self, triplet: &RefinementTriplet) -> Option<HierarchyLevel> {
        triplet
            .score()
            .map(|s| self.thresholds.classify(s.normalized()))
    }

    /// File name of stage `k` (1-based).
    pub fn shard_name(&self, k: usize) -> String {
        format!("stage{}_{}.jsonl", k, self.stages[k - 1].name)
    }

    /// Renders every stage into shard records, stage numbers starting at 1.
    pub fn shard_records(
        &self,
        refine: &PromptTemplate,
    ) -> Result<Vec<Vec<ShardRecord>>, HierarchyError> {
        self.stages
            .iter()
            .enumerate()
            .map(|(k, stage)| {
                stage
                    .triplets
                    .iter()
                    .map(|t| {
                        let level = self
                            .level_of(t)
                            .ok_or_else(|| HierarchyError::Unscored(alloc::vec![t.id().into()]))?;
                        let prompt = refine
                            .render_refine(t.source(), t.intermediate(), t.direction())
                            .map_err(|source| HierarchyError::Prompt {
                                id: t.id().to_string(),
                                source,
                            })?;
                        Ok(ShardRecord {
                            id: t.id().to_string(),
                            stage: k + 1,
                            level,
                            prompt: prompt.into_text(),
                            completion: t.reference().to_string(),
                        })
                    })
                    .collect()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Direction;
    use crate::metrics::{Metric, QualityScore};
    use alloc::collections::BTreeSet;
    use alloc::vec;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};

    fn triplet(i: usize, score: Option<f64>) -> RefinementTriplet {
        RefinementTriplet::new(
            format!("t{i}"),
            format!("source {i}"),
            format!("inter {i}"),
            format!("ref {i}"),
            Direction::from_codes("de", "en").unwrap(),
            "sampler",
        )
        .unwrap()
        .with_score(score.map(|s| QualityScore::new(Metric::Neural, s).unwrap()))
    }

    fn scored(scores: &[f64]) -> Vec<RefinementTriplet> {
        scores.iter().enumerate().map(|(i, &s)| triplet(i, Some(s))).collect()
    }

    fn ids(ts: &[RefinementTriplet]) -> Vec<&str> {
        ts.iter().map(|t| t.id()).collect()
    }

    #[test]
    fn presets() {
        assert_eq!(ThresholdConfig::preset("HFT2").unwrap(), ThresholdConfig::new(0.75, 0.85).unwrap());
        assert_eq!(ThresholdConfig::HFT1.mu(), 0.70);
        assert_eq!(ThresholdConfig::HFT3.nu(), 0.90);
        assert!(ThresholdConfig::new(0.85, 0.75).is_err());
        assert!(ThresholdConfig::new(0.0, 0.5).is_err());
        assert!(ThresholdConfig::preset("hft4").is_err());
    }

    #[test]
    fn three_way_split_at_default_thresholds() {
        let p = partition(scored(&[0.50, 0.80, 0.90]), ThresholdConfig::HFT2).unwrap();
        assert_eq!(ids(&p.easy), ["t0"]);
        assert_eq!(ids(&p.medium), ["t1"]);
        assert_eq!(ids(&p.hard), ["t2"]);
    }

    #[test]
    fn boundaries_are_half_open() {
        let p = partition(scored(&[0.75, 0.85]), ThresholdConfig::HFT2).unwrap();
        assert_eq!(ids(&p.medium), ["t0"]);
        assert_eq!(ids(&p.hard), ["t1"]);
    }

    #[test]
    fn all_perfect_scores_are_hard() {
        let p = partition(scored(&[1.0, 1.0, 1.0]), ThresholdConfig::HFT2).unwrap();
        assert!(p.easy.is_empty() && p.medium.is_empty());
        assert_eq!(p.hard.len(), 3);
    }

    #[test]
    fn lexical_scores_are_normalized() {
        let t = triplet(0, None).with_score(Some(QualityScore::new(Metric::Chrf, 80.0).unwrap()));
        let p = partition([t], ThresholdConfig::HFT2).unwrap();
        assert_eq!(p.medium.len(), 1);
    }

    #[test]
    fn unscored_triplets_are_reported() {
        let ts = vec![triplet(0, Some(0.5)), triplet(1, None), triplet(2, None)];
        assert_eq!(
            partition(ts, ThresholdConfig::HFT2),
            Err(HierarchyError::Unscored(vec!["t1".into(), "t2".into()]))
        );
    }

    #[test]
    fn schedules() {
        let p = partition(scored(&[0.5, 0.8, 0.9, 0.6]), ThresholdConfig::HFT2).unwrap();
        let hft = plan_schedule(&p, Strategy::Hft, None).unwrap();
        let names: Vec<&str> = hft.stages.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["easy", "medium", "hard"]);
        assert_eq!(ids(&hft.stages[0].triplets), ["t0", "t3"]);

        let anti = plan_schedule(&p, Strategy::AntiHft, None).unwrap();
        let mut reversed = hft.stages.clone();
        reversed.reverse();
        assert_eq!(anti.stages, reversed);

        assert_eq!(
            plan_schedule(&p, Strategy::Mixed, None),
            Err(HierarchyError::MissingSeed)
        );
        let m1 = plan_schedule(&p, Strategy::Mixed, Some(42)).unwrap();
        let m2 = plan_schedule(&p, Strategy::Mixed, Some(42)).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(m1.stages.len(), 1);
        assert_eq!(m1.seed, Some(42));
    }

    #[test]
    fn empty_buckets_keep_their_stage() {
        let p = partition(scored(&[0.5, 0.9]), ThresholdConfig::HFT2).unwrap();
        let plan = plan_schedule(&p, Strategy::Hft, None).unwrap();
        assert_eq!(plan.stages.len(), 3);
        assert!(plan.stages[1].triplets.is_empty());
        assert_eq!(plan.shard_name(2), "stage2_medium.jsonl");
        let empty = partition(Vec::new(), ThresholdConfig::HFT2).unwrap();
        assert_eq!(
            plan_schedule(&empty, Strategy::Hft, None),
            Err(HierarchyError::EmptyPartition)
        );
    }

    #[test]
    fn cumulative_stage_sizes() {
        let mut scores = vec![0.1; 5];
        scores.extend([0.8; 3]);
        scores.extend([0.95; 2]);
        let p = partition(scored(&scores), ThresholdConfig::HFT2).unwrap();
        let plan = plan_schedule(&p, Strategy::Hft, None).unwrap().into_cumulative();
        let sizes: Vec<usize> = plan.stages.iter().map(|s| s.triplets.len()).collect();
        assert_eq!(sizes, [5, 8, 10]);
    }

    #[test]
    fn shard_records_target_the_reference() {
        let p = partition(scored(&[0.5, 0.8, 0.9]), ThresholdConfig::HFT2).unwrap();
        let plan = plan_schedule(&p, Strategy::Mixed, Some(1)).unwrap();
        let shards = plan.shard_records(&PromptTemplate::default_refine()).unwrap();
        assert_eq!(shards.len(), 1);
        for r in &shards[0] {
            let i: usize = r.id[1..].parse().unwrap();
            assert_eq!(r.completion, format!("ref {i}"));
            assert!(r.prompt.contains(&format!("inter {i}")));
            assert!(!r.prompt.contains(&format!("ref {i}")));
            assert_eq!(r.stage, 1);
        }
        let levels: BTreeSet<HierarchyLevel> = shards[0].iter().map(|r| r.level).collect();
        assert_eq!(levels.len(), 3);
    }

    proptest! {
        #[test]
        fn partition_matches_naive_oracle(
            scores in proptest::collection::vec(0.0f64..=1.0, 0..400),
            preset in 0usize..3,
        ) {
            let cfg = [ThresholdConfig::HFT1, ThresholdConfig::HFT2, ThresholdConfig::HFT3][preset];
            let p = partition(scored(&scores), cfg).unwrap();
            prop_assert_eq!(p.len(), scores.len());
            for (i, &s) in scores.iter().enumerate() {
                let id = format!("t{i}");
                let expect = if s < cfg.mu() { 0 } else if s < cfg.nu() { 1 } else { 2 };
                let found: Vec<usize> = [&p.easy, &p.medium, &p.hard]
                    .iter()
                    .enumerate()
                    .filter(|(_, b)| b.iter().any(|t| t.id() == id))
                    .map(|(k, _)| k)
                    .collect();
                prop_assert_eq!(found, vec![expect]);
            }
        }

        #[test]
        fn lowering_mu_only_shrinks_easy(
            scores in proptest::collection::vec(0.0f64..=1.0, 0..200),
            mu in 0.05f64..0.6,
            drop in 0.0f64..0.04,
        ) {
            let hi = ThresholdConfig::new(mu, 0.9).unwrap();
            let lo = ThresholdConfig::new(mu - drop, 0.9).unwrap();
            let a = partition(scored(&scores), hi).unwrap();
            let b = partition(scored(&scores), lo).unwrap();
            let easy_hi: BTreeSet<&str> = a.easy.iter().map(|t| t.id()).collect();
            let easy_lo: BTreeSet<&str> = b.easy.iter().map(|t| t.id()).collect();
            prop_assert!(easy_lo.is_subset(&easy_hi));
        }

        #[test]
        fn mixed_is_a_seeded_permutation(
            scores in proptest::collection::vec(0.0f64..=1.0, 1..100),
            seed: u64,
        ) {
            let p = partition(scored(&scores), ThresholdConfig::HFT2).unwrap();
            let m = plan_schedule(&p, Strategy::Mixed, Some(seed)).unwrap();
            prop_assert_eq!(&m, &plan_schedule(&p, Strategy::Mixed, Some(seed)).unwrap());
            let mut got: Vec<&str> = ids(&m.stages[0].triplets);
            got.sort_unstable();
            let mut want: Vec<String> = (0..scores.len()).map(|i| format!("t{i}")).collect();
            want.sort_unstable();
            prop_assert_eq!(got, want.iter().map(String::as_str).collect::<Vec<_>>());
        }
    }
}
