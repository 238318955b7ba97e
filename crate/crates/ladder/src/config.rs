//! The TOML run config and its validation.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ladder_core::corpus::language_name;
use ladder_core::{Direction, Metric, PromptTemplate, Strategy, TemplateKind, ThresholdConfig};
use serde::{Deserialize, Serialize};

use crate::client::EndpointConfig;
use crate::corpus_io::CorpusFormat;
use crate::refine::Templates;
use crate::scoring::ScorerConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub endpoints: Endpoints,
    #[serde(default)]
    pub scorer: Option<ScorerConfig>,
    #[serde(default)]
    pub prompt: PromptConfig,
    #[serde(default)]
    pub corpus: Vec<CorpusConfig>,
    #[serde(default)]
    pub build: BuildConfig,
    #[serde(default)]
    pub score: ScoreStepConfig,
    #[serde(default)]
    pub plan: PlanConfig,
    #[serde(default)]
    pub refine: RefineConfig,
    #[serde(default)]
    pub train: Option<TrainSettings>,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub report: ReportConfig,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Endpoints {
    pub sampler: Option<EndpointConfig>,
    pub target: Option<EndpointConfig>,
    pub ladder: Option<EndpointConfig>,
    pub weak_reference: Option<EndpointConfig>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptConfig {
    pub direct: Option<PathBuf>,
    pub refine: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FormatName {
    Tsv,
    Jsonl,
    PairedText,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFile {
    pub path: PathBuf,
    pub format: FormatName,
    /// Reference side for `paired-text`.
    #[serde(default)]
    pub reference_path: Option<PathBuf>,
}

impl SplitFile {
    pub fn format(&self) -> Result<CorpusFormat> {
        Ok(match (self.format, &self.reference_path) {
            (FormatName::Tsv, _) => CorpusFormat::Tsv,
            (FormatName::Jsonl, _) => CorpusFormat::Jsonl,
            (FormatName::PairedText, Some(r)) => CorpusFormat::PairedText { reference: r.clone() },
            (FormatName::PairedText, None) => {
                bail!("{}: paired-text needs reference_path", self.path.display())
            }
        })
    }
}

/// Externally produced intermediates to refine instead of calling the
/// target endpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrecomputedConfig {
    pub path: PathBuf,
    pub target_tag: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    /// `src-tgt` language codes, e.g. `zh-en`.
    pub direction: String,
    #[serde(default)]
    pub src_name: Option<String>,
    #[serde(default)]
    pub tgt_name: Option<String>,
    #[serde(default)]
    pub train: Option<SplitFile>,
    #[serde(default)]
    pub test: Option<SplitFile>,
    #[serde(default)]
    pub precomputed: Option<PrecomputedConfig>,
}

impl CorpusConfig {
    pub fn direction(&self) -> Result<Direction> {
        let (src, tgt) = self
            .direction
            .split_once('-')
            .with_context(|| format!("corpus direction `{}` is not `src-tgt`", self.direction))?;
        let name = |given: &Option<String>, code: &str| -> Result<String> {
            given
                .clone()
                .or_else(|| language_name(code).map(str::to_string))
                .with_context(|| {
                    format!("no built-in name for language `{code}`; set src_name/tgt_name")
                })
        };
        Ok(Direction::new(src, tgt, &name(&self.src_name, src)?, &name(&self.tgt_name, tgt)?)?)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildConfig {
    /// Sample this many training pairs (needs a seed).
    #[serde(default)]
    pub sample: Option<usize>,
    /// Label with `endpoints.weak_reference` instead of gold references.
    #[serde(default)]
    pub weak: bool,
    /// Score triplets right away with `[scorer]`.
    #[serde(default)]
    pub score: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreStepConfig {
    #[serde(default)]
    pub inputs: Option<Vec<PathBuf>>,
    #[serde(default)]
    pub rescore: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    /// `hft1`, `hft2` or `hft3`; ignored when `mu`/`nu` are set.
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub mu: Option<f64>,
    #[serde(default)]
    pub nu: Option<f64>,
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub cumulative: bool,
    #[serde(default)]
    pub inputs: Option<Vec<PathBuf>>,
}

fn default_strategy() -> Strategy {
    Strategy::Hft
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            preset: None,
            mu: None,
            nu: None,
            strategy: default_strategy(),
            seed: None,
            cumulative: false,
            inputs: None,
        }
    }
}

impl PlanConfig {
    pub fn thresholds(&self) -> Result<ThresholdConfig> {
        Ok(match (self.mu, self.nu, &self.preset) {
            (Some(mu), Some(nu), _) => ThresholdConfig::new(mu, nu)?,
            (None, None, Some(p)) => ThresholdConfig::preset(p)?,
            (None, None, None) => ThresholdConfig::default(),
            _ => bail!("plan.mu and plan.nu must be given together"),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineConfig {
    /// Self-refinement rounds after the direct translation.
    #[serde(default = "default_iterations")]
    pub iterations: usize,
}

fn default_iterations() -> usize {
    2
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            iterations: default_iterations(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AdapterCommand {
    Program(String),
    Argv(Vec<String>),
}

impl AdapterCommand {
    pub fn argv(&self) -> Vec<String> {
        match self {
            AdapterCommand::Program(p) => vec![p.clone()],
            AdapterCommand::Argv(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSettings {
    #[serde(default = "default_adapter")]
    pub adapter: AdapterCommand,
    pub base_model: String,
    #[serde(default = "default_lora_rank")]
    pub lora_rank: u32,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs_per_stage: u32,
    #[serde(default = "default_batch_size")]
    pub batch_size: u32,
    #[serde(default = "default_max_seq_len")]
    pub max_seq_len: u32,
    /// Directory holding `plan.json` and shards; defaults to `{out}/plan`.
    #[serde(default)]
    pub plan_dir: Option<PathBuf>,
}

fn default_adapter() -> AdapterCommand {
    AdapterCommand::Program("ladder-trainer".into())
}
fn default_lora_rank() -> u32 {
    16
}
fn default_learning_rate() -> f64 {
    1e-4
}
fn default_epochs() -> u32 {
    1
}
fn default_batch_size() -> u32 {
    16
}
fn default_max_seq_len() -> u32 {
    512
}

impl TrainSettings {
    pub fn new(base_model: impl Into<String>) -> Self {
        Self {
            adapter: default_adapter(),
            base_model: base_model.into(),
            lora_rank: default_lora_rank(),
            learning_rate: default_learning_rate(),
            epochs_per_stage: default_epochs(),
            batch_size: default_batch_size(),
            max_seq_len: default_max_seq_len(),
            plan_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_model.trim().is_empty() {
            bail!("train.base_model must be nonempty");
        }
        if self.lora_rank == 0 || self.epochs_per_stage == 0 || self.batch_size == 0 || self.max_seq_len == 0 {
            bail!("train.lora_rank, epochs_per_stage, batch_size and max_seq_len must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            bail!("train.learning_rate must be positive");
        }
        if self.adapter.argv().is_empty() {
            bail!("train.adapter is empty");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Plain hypothesis file, scored against `references`.
    #[serde(default)]
    pub hypotheses: Option<PathBuf>,
    #[serde(default)]
    pub references: Option<PathBuf>,
    /// Target language of the plain files; picks the BLEU tokenizer.
    #[serde(default)]
    pub tgt_lang: Option<String>,
    /// Records to score; defaults to `{out}/refine/records.jsonl`.
    #[serde(default)]
    pub records: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    #[serde(default)]
    pub tie_epsilon: f64,
    /// Scored records; defaults to `{out}/eval/records.jsonl`.
    #[serde(default)]
    pub records: Option<PathBuf>,
}

impl RunConfig {
    /// Reads a TOML config, or the `config` object of a `run.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut config: RunConfig = if path.extension().is_some_and(|e| e == "json") {
            let value: serde_json::Value = serde_json::from_str(&text)
                .with_context(|| format!("{} is not JSON", path.display()))?;
            let inner = value
                .get("config")
                .with_context(|| format!("{} has no `config` object", path.display()))?;
            serde_json::from_value(inner.clone())
                .with_context(|| format!("invalid config in {}", path.display()))?
        } else {
            toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?
        };
        let base = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        config.resolve_paths(&std::path::absolute(&base).unwrap_or(base));
        Ok(config)
    }

    /// Makes every relative path absolute against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let fix_opt = |p: &mut Option<PathBuf>| {
            if let Some(p) = p {
                fix(p)
            }
        };
        fix_opt(&mut self.out);
        fix_opt(&mut self.prompt.direct);
        fix_opt(&mut self.prompt.refine);
        if let Some(s) = &mut self.scorer {
            fix_opt(&mut s.cache);
        }
        for c in &mut self.corpus {
            for split in [&mut c.train, &mut c.test].into_iter().flatten() {
                fix(&mut split.path);
                fix_opt(&mut split.reference_path);
            }
            if let Some(p) = &mut c.precomputed {
                fix(&mut p.path);
            }
        }
        for list in [&mut self.score.inputs, &mut self.plan.inputs].into_iter().flatten() {
            list.iter_mut().for_each(fix);
        }
        if let Some(t) = &mut self.train {
            fix_opt(&mut t.plan_dir);
            if let Some(p) = relative_script(program_of(&t.adapter), base) {
                t.adapter = replace_program(&t.adapter, p);
            }
        }
        fix_opt(&mut self.eval.hypotheses);
        fix_opt(&mut self.eval.references);
        fix_opt(&mut self.eval.records);
        fix_opt(&mut self.report.records);
    }

    pub fn templates(&self) -> Result<Templates> {
        let load = |path: &Option<PathBuf>, kind: TemplateKind| -> Result<Option<PromptTemplate>> {
            path.as_ref()
                .map(|p| {
                    let text = fs::read_to_string(p)
                        .with_context(|| format!("cannot read template {}", p.display()))?;
                    let text = text.strip_suffix('\n').unwrap_or(&text).to_string();
                    PromptTemplate::new(kind, text)
                        .with_context(|| format!("invalid template {}", p.display()))
                })
                .transpose()
        };
        let defaults = Templates::default();
        Ok(Templates {
            direct: load(&self.prompt.direct, TemplateKind::Direct)?.unwrap_or(defaults.direct),
            refine: load(&self.prompt.refine, TemplateKind::Refine)?.unwrap_or(defaults.refine),
        })
    }

    pub fn endpoint(&self, role: &str) -> Result<&EndpointConfig> {
        let e = match role {
            "sampler" => &self.endpoints.sampler,
            "target" => &self.endpoints.target,
            "ladder" => &self.endpoints.ladder,
            "weak_reference" => &self.endpoints.weak_reference,
            _ => unreachable!("unknown endpoint role {role}"),
        };
        e.as_ref()
            .with_context(|| format!("config has no [endpoints.{role}] section"))
    }

    pub fn scorer_config(&self) -> Result<&ScorerConfig> {
        self.scorer
            .as_ref()
            .context("config has no [scorer] section")
    }

    /// Checks the parts every command relies on: directions, files and
    /// thresholds.
    pub fn validate(&self) -> Result<()> {
        let mut labels = std::collections::BTreeSet::new();
        for c in &self.corpus {
            let d = c.direction()?;
            if !labels.insert(d.label()) {
                bail!("direction {} is configured twice", d.label());
            }
            for split in [&c.train, &c.test].into_iter().flatten() {
                split.format()?;
                must_exist(&split.path)?;
                if let Some(r) = &split.reference_path {
                    must_exist(r)?;
                }
            }
            if let Some(p) = &c.precomputed {
                must_exist(&p.path)?;
            }
        }
        for p in [&self.prompt.direct, &self.prompt.refine].into_iter().flatten() {
            must_exist(p)?;
        }
        self.templates()?;
        self.plan.thresholds()?;
        for e in [
            &self.endpoints.sampler,
            &self.endpoints.target,
            &self.endpoints.ladder,
            &self.endpoints.weak_reference,
        ]
        .into_iter()
        .flatten()
        {
            e.validate()?;
        }
        if let Some(s) = &self.scorer {
            if s.kind == Metric::Neural && s.endpoint.is_none() {
                bail!("scorer.kind = \"neural\" needs scorer.endpoint");
            }
        }
        if let Some(t) = &self.train {
            t.validate()?;
        }
        if !(self.report.tie_epsilon.is_finite() && self.report.tie_epsilon >= 0.0) {
            bail!("report.tie_epsilon must be >= 0");
        }
        Ok(())
    }
}

fn program_of(adapter: &AdapterCommand) -> &str {
    match adapter {
        AdapterCommand::Program(p) => p,
        AdapterCommand::Argv(v) => v.first().map(String::as_str).unwrap_or(""),
    }
}

/// An adapter given as a relative path (not a bare program name) resolves
/// against the config directory.
fn relative_script(program: &str, base: &Path) -> Option<PathBuf> {
    let p = Path::new(program);
    (p.is_relative() && p.components().count() > 1).then(|| base.join(p))
}

fn replace_program(adapter: &AdapterCommand, program: PathBuf) -> AdapterCommand {
    let program = program.to_string_lossy().into_owned();
    match adapter {
        AdapterCommand::Program(_) => AdapterCommand::Program(program),
        AdapterCommand::Argv(v) => {
            let mut v = v.clone();
            v[0] = program;
            AdapterCommand::Argv(v)
        }
    }
}

fn must_exist(path: &Path) -> Result<()> {
    if !path.exists() {
        bail!("file not found: {}", path.display());
    }
    Ok(())
}
