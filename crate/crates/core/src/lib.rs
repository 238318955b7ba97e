//! Allocation-only building blocks for translation refinement pipelines.
//!
//! Everything here is pure computation over in-memory values: lexical MT
//! metrics, prompt templates, quality hierarchies and training schedules,
//! and improvement analytics. File formats, HTTP endpoints and the command
//! line live in the `ladder` crate.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod corpus;
pub mod hierarchy;
pub mod metrics;
pub mod prompting;
pub mod report;

pub use corpus::{
    attach_intermediates, sample_dev_split, CorpusError, Dataset, DatasetSplit, Direction,
    ParallelPair, RefinementTriplet, SplitName,
};
pub use hierarchy::{
    partition, plan_schedule, HierarchyError, HierarchyLevel, Partition, ShardRecord, Stage,
    StagePlan, Strategy, ThresholdConfig,
};
pub use metrics::{
    bleu_corpus, bleu_sentence, chrf_corpus, chrf_sentence, Metric, MetricError, MetricReport,
    QualityScore, ScoreSet, Tokenization,
};
pub use prompting::{
    parse_completion, ExtractionPolicy, PromptError, PromptTemplate, RenderedPrompt, Slot,
    TemplateKind,
};
pub use report::{
    class_fractions, improvement_stats, render_table, scatter_rows, BreakdownRow, ChangeClass,
    DeltaStats, MetricCell, ReportError, ScatterRow, TableFormat,
};
