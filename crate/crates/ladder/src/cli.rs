//! Subcommands, output directories and exit codes.
//!
//! Each command writes into `{out}/{command}/` and always leaves a
//! `run.json` there. Exit codes: 0 success, 1 configuration or input
//! error, 2 some items failed (see `failures.json`).

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use ladder_core::{
    partition, plan_schedule, sample_dev_split, HierarchyError, Metric, MetricReport, SplitName,
    Tokenization,
};
use serde::Serialize;
use serde_json::json;

use crate::client::LlmClient;
use crate::config::RunConfig;
use crate::corpus_io::{
    load_parallel_corpus, read_jsonl, read_precomputed, read_segments, read_triplets, write_jsonl,
    write_triplets,
};
use crate::refine::{
    build_weak_triplets, iteration_stats, precomputed_refine, refine_corpus, sample_triplets,
    self_refine, RefinementRecord, WeakSupervision,
};
use crate::reporting::{
    analyze, breakdown_rows, complete_records, group_metrics, score_records, write_scatter_csv,
};
use crate::scoring::{score_triplets, Scorer};
use crate::shards::{emit_shards, plan_manifest, BucketSizes, PlanManifest, PLAN_MANIFEST};
use crate::train::{run_training, sha256_file};
use crate::ItemFailure;

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_PARTIAL: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "ladder", version, about = "Build, schedule, run and evaluate translation refinement")]
pub struct Cli {
    /// Run config (TOML), or a previous run.json to replay.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output root; each command writes `{out}/{command}/`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Replace an existing `{out}/{command}/`.
    #[arg(long, global = true)]
    pub force: bool,
    /// Seed for sampling and the mixed schedule.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Sample intermediate translations and write triplet files.
    BuildTriplets,
    /// Score triplets with the configured scorer.
    Score {
        /// Overwrite existing scores.
        #[arg(long)]
        rescore: bool,
    },
    /// Partition scored triplets and write training shards.
    Plan,
    /// Run the trainer adapter over the planned stages.
    Train,
    /// Translate with the target model and refine with the ladder model.
    Refine,
    /// Let the ladder model refine its own translations.
    SelfRefine,
    /// Score refinement records, or plain hypothesis/reference files.
    Eval,
    /// Improvement statistics, scatter data and result tables.
    Report,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::BuildTriplets => "build-triplets",
            Command::Score { .. } => "score",
            Command::Plan => "plan",
            Command::Train => "train",
            Command::Refine => "refine",
            Command::SelfRefine => "self-refine",
            Command::Eval => "eval",
            Command::Report => "report",
        }
    }
}

/// Parses arguments, runs the command and returns the exit code.
pub fn run_from_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    run(cli)
}

pub fn run(cli: Cli) -> u8 {
    let mut ctx = match Run::prepare(&cli) {
        Ok(ctx) => ctx,
        Err(e) => {
            eprintln!("error: {e:#}");
            return EXIT_CONFIG;
        }
    };
    let result = ctx.dispatch(&cli.command);
    let code = match &result {
        Ok(()) if ctx.failures.is_empty() => EXIT_OK,
        Ok(()) => EXIT_PARTIAL,
        Err(_) => EXIT_CONFIG,
    };
    let error = result.as_ref().err().map(|e| format!("{e:#}"));
    if let Err(e) = ctx.finish(code, error.clone()) {
        eprintln!("error: cannot write run manifest: {e:#}");
        return EXIT_CONFIG;
    }
    match code {
        EXIT_CONFIG => eprintln!("error: {}", error.unwrap_or_default()),
        EXIT_PARTIAL => eprintln!(
            "{} item(s) failed; see {}",
            ctx.failures.len(),
            ctx.dir.join("failures.json").display()
        ),
        _ => {}
    }
    code
}

#[derive(Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct EndpointSummary {
    base_url: String,
    model: String,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    version: &'a str,
    status: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    seed: Option<u64>,
    scorer: Option<String>,
    endpoints: BTreeMap<&'a str, EndpointSummary>,
    inputs: Vec<FileDigest>,
    outputs: Vec<FileDigest>,
    failures: usize,
    config: &'a RunConfig,
}

struct Run {
    command: &'static str,
    config: RunConfig,
    out: PathBuf,
    dir: PathBuf,
    inputs: BTreeSet<PathBuf>,
    failures: Vec<ItemFailure>,
    scorer: Option<String>,
    runtime: tokio::runtime::Runtime,
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

/// Files in `dir` named `{prefix}*{suffix}`, sorted.
fn matching_files(dir: &Path, prefix: &str, suffix: &str) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .into_iter()
        .flatten()
        .flatten()
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with(prefix) && n.ends_with(suffix))
        })
        .collect();
    files.sort();
    files
}

impl Run {
    fn prepare(cli: &Cli) -> Result<Self> {
        let config_path = cli
            .config
            .as_ref()
            .context("--config is required (a TOML run config or a run.json)")?;
        let mut config = RunConfig::load(config_path)?;
        if let Some(out) = &cli.out {
            config.out = Some(std::path::absolute(out)?);
        }
        if cli.seed.is_some() {
            config.seed = cli.seed;
        }
        if let Command::Score { rescore: true } = cli.command {
            config.score.rescore = true;
        }
        config.validate()?;
        let out = config
            .out
            .clone()
            .context("no output directory: pass --out or set `out` in the config")?;
        let command = cli.command.name();
        let dir = out.join(command);
        if dir.exists() {
            if !cli.force {
                bail!(
                    "{} already exists; pass --force to overwrite it",
                    dir.display()
                );
            }
            fs::remove_dir_all(&dir).with_context(|| format!("cannot clear {}", dir.display()))?;
        }
        fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .enable_all()
            .build()
            .context("cannot start async runtime")?;
        Ok(Self {
            command,
            config,
            out,
            dir,
            inputs: BTreeSet::new(),
            failures: Vec::new(),
            scorer: None,
            runtime,
        })
    }

    fn dispatch(&mut self, command: &Command) -> Result<()> {
        match command {
            Command::BuildTriplets => self.build_triplets(),
            Command::Score { .. } => self.score(),
            Command::Plan => self.plan(),
            Command::Train => self.train(),
            Command::Refine => self.refine(),
            Command::SelfRefine => self.self_refine(),
            Command::Eval => self.eval(),
            Command::Report => self.report(),
        }
    }

    fn finish(&self, code: u8, error: Option<String>) -> Result<()> {
        if !self.failures.is_empty() {
            write_json(&self.dir.join("failures.json"), &self.failures)?;
        }
        let digest = |p: &Path, shown: String| -> Result<FileDigest> {
            Ok(FileDigest {
                path: shown,
                sha256: sha256_file(p)?,
            })
        };
        let inputs = self
            .inputs
            .iter()
            .filter(|p| p.is_file())
            .map(|p| digest(p, p.display().to_string()))
            .collect::<Result<_>>()?;
        let mut outputs = Vec::new();
        let mut stack = vec![self.dir.clone()];
        while let Some(d) = stack.pop() {
            for entry in fs::read_dir(&d)? {
                let p = entry?.path();
                if p.is_dir() {
                    stack.push(p);
                } else if p.file_name().is_some_and(|n| n != "run.json") {
                    let rel = p.strip_prefix(&self.dir).unwrap_or(&p).display().to_string();
                    outputs.push(digest(&p, rel)?);
                }
            }
        }
        outputs.sort_by(|a, b| a.path.cmp(&b.path));
        let e = &self.config.endpoints;
        let endpoints = [
            ("sampler", &e.sampler),
            ("target", &e.target),
            ("ladder", &e.ladder),
            ("weak_reference", &e.weak_reference),
        ]
        .into_iter()
        .filter_map(|(role, cfg)| {
            cfg.as_ref().map(|c| {
                (
                    role,
                    EndpointSummary {
                        base_url: c.base_url.clone(),
                        model: c.model.clone(),
                    },
                )
            })
        })
        .collect();
        let manifest = RunManifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION"),
            status: match code {
                EXIT_OK => "ok",
                EXIT_PARTIAL => "partial",
                _ => "error",
            },
            error,
            seed: self.config.seed,
            scorer: self.scorer.clone(),
            endpoints,
            inputs,
            outputs,
            failures: self.failures.len(),
            config: &self.config,
        };
        write_json(&self.dir.join("run.json"), &manifest)
    }

    fn client(&self, role: &str) -> Result<LlmClient> {
        LlmClient::new(self.config.endpoint(role)?.clone())
            .with_context(|| format!("endpoints.{role}"))
    }

    fn scorer(&mut self) -> Result<Scorer> {
        let scorer = Scorer::from_config(self.config.scorer_config()?)?;
        self.scorer = Some(scorer.describe());
        Ok(scorer)
    }

    /// The remote scorer when `[scorer]` is neural; lexical metrics are
    /// always computed natively.
    fn neural_scorer(&mut self) -> Result<Option<Scorer>> {
        match &self.config.scorer {
            Some(s) if s.kind == Metric::Neural => Ok(Some(self.scorer()?)),
            _ => {
                self.scorer = Some("bleu and chrf: native".into());
                Ok(None)
            }
        }
    }

    fn step_inputs(&mut self, given: Option<Vec<PathBuf>>, step: &str, hint: &str) -> Result<Vec<PathBuf>> {
        let files = match given {
            Some(files) => files,
            None => matching_files(&self.out.join(step), "triplets_", ".jsonl"),
        };
        if files.is_empty() {
            bail!("no triplet files found in {}; {hint}", self.out.join(step).display());
        }
        self.inputs.extend(files.iter().cloned());
        Ok(files)
    }

    fn build_triplets(&mut self) -> Result<()> {
        let templates = self.config.templates()?;
        let corpora: Vec<_> = self
            .config
            .corpus
            .iter()
            .filter_map(|c| c.train.as_ref().map(|t| (c.clone(), t.clone())))
            .collect();
        if corpora.is_empty() {
            bail!("no [[corpus]] entry has a train split");
        }
        let build = self.config.build.clone();
        let scorer = if build.score { Some(self.scorer()?) } else { None };
        let (sampler, weak) = if build.weak {
            (self.client("sampler")?, Some(self.client("weak_reference")?))
        } else {
            (self.client("sampler")?, None)
        };
        for (corpus, train) in corpora {
            let direction = corpus.direction()?;
            let mut split = load_parallel_corpus(&train.path, &train.format()?, &direction, SplitName::Train)?;
            self.inputs.insert(train.path.clone());
            if let Some(n) = build.sample {
                let seed = self
                    .config
                    .seed
                    .context("build.sample needs a seed (`seed` in the config or --seed)")?;
                split = sample_dev_split(&split, n, seed)?;
            }
            let label = direction.label();
            let (triplets, failures) = match &weak {
                Some(weak) => {
                    let built = self.runtime.block_on(build_weak_triplets(
                        split.pairs(),
                        &WeakSupervision {
                            weak_reference: weak,
                            intermediate: &sampler,
                        },
                        &templates,
                    ));
                    let gold = built.gold.iter().map(|(id, r)| json!({"id": id, "reference": r}));
                    write_jsonl(&self.dir.join(format!("gold_{label}.jsonl")), gold)?;
                    (built.triplets, built.failures)
                }
                None => self.runtime.block_on(sample_triplets(&split, &sampler, &templates)),
            };
            self.failures.extend(failures);
            let triplets = match &scorer {
                Some(s) => {
                    let scored = self.runtime.block_on(score_triplets(triplets, s, false))?;
                    self.failures.extend(scored.failures);
                    scored.triplets
                }
                None => triplets,
            };
            log::info!("{label}: {} triplets", triplets.len());
            write_triplets(&triplets, &self.dir.join(format!("triplets_{label}.jsonl")))?;
        }
        Ok(())
    }

    fn score(&mut self) -> Result<()> {
        let files = self.step_inputs(
            self.config.score.inputs.clone(),
            "build-triplets",
            "run build-triplets first or set score.inputs",
        )?;
        let scorer = self.scorer()?;
        let mut names = HashSet::new();
        for file in files {
            let name = file.file_name().context("input without a file name")?.to_owned();
            if !names.insert(name.clone()) {
                bail!("two score inputs share the file name {}", name.to_string_lossy());
            }
            let triplets = read_triplets(&file)?;
            let scored = self
                .runtime
                .block_on(score_triplets(triplets, &scorer, self.config.score.rescore))?;
            self.failures.extend(scored.failures);
            write_triplets(&scored.triplets, &self.dir.join(name))?;
        }
        Ok(())
    }

    fn plan(&mut self) -> Result<()> {
        let files = self.step_inputs(
            self.config.plan.inputs.clone(),
            "score",
            "run score first or set plan.inputs",
        )?;
        let mut triplets = Vec::new();
        let mut seen = HashSet::new();
        for file in &files {
            for t in read_triplets(file)? {
                if !seen.insert(t.id().to_string()) {
                    bail!("triplet id `{}` appears in more than one input", t.id());
                }
                triplets.push(t);
            }
        }
        let metrics: BTreeSet<&'static str> = triplets
            .iter()
            .filter_map(|t| t.score().map(|s| s.metric().name()))
            .collect();
        let scorer = (!metrics.is_empty()).then(|| metrics.into_iter().collect::<Vec<_>>().join(","));
        self.scorer = scorer.clone();
        let plan_cfg = self.config.plan.clone();
        let p = partition(triplets, plan_cfg.thresholds()?).map_err(|e| match e {
            HierarchyError::Unscored(ids) => anyhow!(
                "{} triplet(s) have no score (first: {}); run `ladder score` first",
                ids.len(),
                ids[0]
            ),
            e => e.into(),
        })?;
        let buckets = BucketSizes {
            easy: p.easy.len(),
            medium: p.medium.len(),
            hard: p.hard.len(),
        };
        let seed = plan_cfg.seed.or(self.config.seed);
        let plan = plan_schedule(&p, plan_cfg.strategy, seed).map_err(|e| match e {
            HierarchyError::MissingSeed => {
                anyhow!("strategy `mixed` needs a seed (plan.seed, `seed` or --seed)")
            }
            e => e.into(),
        })?;
        let templates = self.config.templates()?;
        emit_shards(&plan, &templates.refine, &self.dir)?;
        let manifest = plan_manifest(&plan, plan_cfg.cumulative, buckets, scorer);
        log::info!(
            "easy {} / medium {} / hard {} at mu={} nu={}",
            manifest.buckets.easy,
            manifest.buckets.medium,
            manifest.buckets.hard,
            manifest.mu,
            manifest.nu
        );
        write_json(&self.dir.join(PLAN_MANIFEST), &manifest)
    }

    fn train(&mut self) -> Result<()> {
        let settings = self
            .config
            .train
            .clone()
            .context("config has no [train] section")?;
        let plan_dir = settings.plan_dir.clone().unwrap_or_else(|| self.out.join("plan"));
        let manifest_path = plan_dir.join(PLAN_MANIFEST);
        let manifest = PlanManifest::read(&manifest_path)?;
        self.inputs.insert(manifest_path);
        self.inputs.extend(manifest.shard_paths(&plan_dir));
        let result = run_training(&manifest, &plan_dir, &settings, &self.dir, self.config.seed);
        let outcomes = result?;
        write_json(&self.dir.join("train_summary.json"), &outcomes)
    }

    fn refine(&mut self) -> Result<()> {
        let templates = self.config.templates()?;
        let ladder = self.client("ladder")?;
        let mut target = None;
        let mut records: Vec<RefinementRecord> = Vec::new();
        let corpora = self.config.corpus.clone();
        for corpus in &corpora {
            let direction = corpus.direction()?;
            if let Some(pre) = &corpus.precomputed {
                let items = read_precomputed(&pre.path)?;
                self.inputs.insert(pre.path.clone());
                records.extend(self.runtime.block_on(precomputed_refine(
                    &items,
                    &direction,
                    &pre.target_tag,
                    &ladder,
                    &templates,
                )));
            } else if let Some(test) = &corpus.test {
                let split = load_parallel_corpus(&test.path, &test.format()?, &direction, SplitName::Test)?;
                self.inputs.insert(test.path.clone());
                if target.is_none() {
                    target = Some(self.client("target")?);
                }
                let target = target.as_ref().expect("just set");
                records.extend(self.runtime.block_on(refine_corpus(split.pairs(), target, &ladder, &templates)));
            }
        }
        if records.is_empty() {
            bail!("no [[corpus]] entry has a test split or precomputed intermediates");
        }
        for (index, r) in records.iter().enumerate() {
            if let Some(e) = &r.error {
                self.failures.push(ItemFailure::new(index, &r.id, "refine", e.clone()));
            }
        }
        write_jsonl(&self.dir.join("records.jsonl"), &records)?;
        Ok(())
    }

    fn self_refine(&mut self) -> Result<()> {
        let templates = self.config.templates()?;
        let model = self.client("ladder")?;
        let iterations = self.config.refine.iterations;
        let neural = self.neural_scorer()?;
        let remote = match &neural {
            Some(Scorer::Neural(r)) => Some(r),
            _ => None,
        };
        let mut traces = Vec::new();
        for corpus in self.config.corpus.clone() {
            let Some(test) = &corpus.test else { continue };
            let direction = corpus.direction()?;
            let split = load_parallel_corpus(&test.path, &test.format()?, &direction, SplitName::Test)?;
            self.inputs.insert(test.path.clone());
            traces.extend(
                self.runtime
                    .block_on(self_refine(split.pairs(), &model, iterations, &templates, remote))?,
            );
        }
        if traces.is_empty() {
            bail!("no [[corpus]] entry has a test split");
        }
        for (index, t) in traces.iter().enumerate() {
            if let Some(e) = &t.error {
                self.failures.push(ItemFailure::new(index, &t.id, "self-refine", e.clone()));
            }
        }
        let mut stats = BTreeMap::new();
        let metrics = [Metric::Bleu, Metric::Chrf]
            .into_iter()
            .chain(remote.map(|_| Metric::Neural));
        let complete = traces.iter().filter(|t| t.is_complete(iterations)).count();
        if complete > 0 {
            for metric in metrics {
                stats.insert(
                    metric,
                    iteration_stats(&traces, iterations, metric, self.config.report.tie_epsilon)?,
                );
            }
        }
        write_jsonl(&self.dir.join("traces.jsonl"), &traces)?;
        write_json(&self.dir.join("iteration_stats.json"), &stats)
    }

    fn eval(&mut self) -> Result<()> {
        let eval = self.config.eval.clone();
        if let Some(hyp_path) = &eval.hypotheses {
            let ref_path = eval
                .references
                .as_ref()
                .context("eval.hypotheses needs eval.references")?;
            let hyps = read_segments(hyp_path)?;
            let refs = read_segments(ref_path)?;
            self.inputs.extend([hyp_path.clone(), ref_path.clone()]);
            let tokenization = Tokenization::for_language(eval.tgt_lang.as_deref().unwrap_or("en"));
            self.scorer = Some("bleu and chrf: native".into());
            let report = MetricReport::evaluate(&hyps, &refs, tokenization).with_context(|| {
                format!("{} vs {}", hyp_path.display(), ref_path.display())
            })?;
            return write_json(&self.dir.join("metrics.json"), &report);
        }
        let path = eval
            .records
            .clone()
            .unwrap_or_else(|| self.out.join("refine").join("records.jsonl"));
        let mut records: Vec<RefinementRecord> = read_jsonl(&path)?;
        self.inputs.insert(path);
        let neural = self.neural_scorer()?;
        let remote = match &neural {
            Some(Scorer::Neural(r)) => Some(r),
            _ => None,
        };
        let failures = self.runtime.block_on(score_records(&mut records, remote));
        self.failures.extend(failures);
        let (complete, excluded) = complete_records(&records);
        let groups = group_metrics(&complete)?;
        write_jsonl(&self.dir.join("records.jsonl"), &records)?;
        write_json(
            &self.dir.join("metrics.json"),
            &json!({"scorer": self.scorer, "groups": groups, "excluded": excluded}),
        )
    }

    fn report(&mut self) -> Result<()> {
        let path = self
            .config
            .report
            .records
            .clone()
            .unwrap_or_else(|| self.out.join("eval").join("records.jsonl"));
        let records: Vec<RefinementRecord> = read_jsonl(&path)?;
        self.inputs.insert(path);
        let (complete, excluded) = complete_records(&records);
        let eps = self.config.report.tie_epsilon;
        let analytics = analyze(&complete, eps).context("run `ladder eval` on the records first")?;
        self.scorer = Some(
            analytics
                .deltas
                .keys()
                .map(|m| m.name())
                .collect::<Vec<_>>()
                .join(","),
        );
        for (metric, rows) in &analytics.scatter {
            write_scatter_csv(rows, &self.dir.join(format!("scatter_{metric}.csv")))?;
        }
        write_json(
            &self.dir.join("deltas.json"),
            &json!({"tie_epsilon": eps, "excluded": excluded, "stats": analytics.deltas}),
        )?;
        let rows = breakdown_rows(&group_metrics(&complete)?);
        for (format, ext) in [
            (ladder_core::TableFormat::Text, "txt"),
            (ladder_core::TableFormat::Markdown, "md"),
            (ladder_core::TableFormat::Csv, "csv"),
        ] {
            let table = ladder_core::render_table(&rows, format)?;
            fs::write(self.dir.join(format!("table.{ext}")), table)?;
        }
        Ok(())
    }
}
