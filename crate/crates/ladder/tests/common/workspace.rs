//! A temporary project directory with a run config pointing at mocks.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;
use tempfile::TempDir;

use super::{degrade, intermediate_of, is_refine_prompt, item_index, line_value, Corpus, MockServer, Reply};

/// What the ladder mock does with a refine prompt.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Refiner {
    Identity,
    Perfect,
}

/// Sampler, target, ladder and scorer mocks over one synthetic corpus.
pub struct Mocks {
    pub sampler: MockServer,
    pub target: MockServer,
    pub ladder: MockServer,
    pub scorer: MockServer,
}

/// Intermediate quality by item: exact items score high, the two
/// degraded kinds land in different buckets.
pub fn mock_score(i: usize) -> f64 {
    match i % 3 {
        0 => 0.93,
        1 => 0.62,
        _ => 0.81,
    }
}

impl Mocks {
    pub fn new(corpus: &Corpus, refiner: Refiner) -> Self {
        let translate = |corpus: &Corpus| {
            let lookup = corpus.lookup();
            move |p: &str, _| {
                let src = line_value(p, "German").unwrap_or_default();
                match lookup.get(src) {
                    Some(r) => Reply::Text(degrade(r, item_index(src))),
                    None => Reply::Status(400),
                }
            }
        };
        let lookup = corpus.lookup();
        let ladder = move |p: &str, _: usize| {
            if !is_refine_prompt(p) {
                return Reply::Status(400);
            }
            match refiner {
                Refiner::Identity => Reply::Text(intermediate_of(p, "English").unwrap_or_default()),
                Refiner::Perfect => {
                    let src = line_value(p, "German").unwrap_or_default();
                    Reply::Text(lookup.get(src).cloned().unwrap_or_default())
                }
            }
        };
        Self {
            sampler: MockServer::chat(translate(corpus)),
            target: MockServer::chat(translate(corpus)),
            ladder: MockServer::chat(ladder),
            scorer: MockServer::scorer(|s, _, _| Reply::Score(mock_score(item_index(s)))),
        }
    }

    /// Endpoint and scorer sections of a run config.
    pub fn toml(&self) -> String {
        let endpoint = |role: &str, server: &MockServer| {
            format!(
                "[endpoints.{role}]\nbase_url = \"{}\"\nmodel = \"{role}-mock\"\nretries = 1\nbackoff_base_ms = 1\nmax_in_flight = 8\n\n",
                server.base_url()
            )
        };
        let mut out = String::new();
        out += &endpoint("sampler", &self.sampler);
        out += &endpoint("target", &self.target);
        out += &endpoint("ladder", &self.ladder);
        out += &format!(
            "[scorer]\nkind = \"neural\"\nendpoint = \"{}\"\ncache = \"score_cache.jsonl\"\nretries = 1\nbackoff_base_ms = 1\n\n",
            self.scorer.url
        );
        out
    }
}

pub struct Workspace {
    pub dir: TempDir,
    pub config: PathBuf,
    pub out: PathBuf,
}

impl Workspace {
    /// Writes `config.toml` (with `body` appended to `seed = 7`) into a
    /// fresh directory.
    pub fn new(body: &str) -> Self {
        let dir = TempDir::new().unwrap();
        let config = dir.path().join("config.toml");
        fs::write(&config, format!("seed = 7\n\n{body}")).unwrap();
        let out = dir.path().join("out");
        Self { dir, config, out }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    pub fn write(&self, rel: &str, text: &str) -> PathBuf {
        let p = self.path(rel);
        fs::write(&p, text).unwrap();
        p
    }

    /// Runs `ladder --config config.toml --out out {args}`.
    pub fn run(&self, args: &[&str]) -> u8 {
        self.run_with(&self.config, args)
    }

    pub fn run_with(&self, config: &Path, args: &[&str]) -> u8 {
        let mut argv = vec![
            "ladder".to_string(),
            "--config".into(),
            config.display().to_string(),
            "--out".into(),
            self.out.display().to_string(),
        ];
        argv.extend(args.iter().map(|a| a.to_string()));
        ladder::cli::run_from_args(argv)
    }

    pub fn out_path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    pub fn json(&self, rel: &str) -> Value {
        let text = fs::read_to_string(self.out_path(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"));
        serde_json::from_str(&text).unwrap()
    }

    pub fn jsonl(&self, rel: &str) -> Vec<Value> {
        fs::read_to_string(self.out_path(rel))
            .unwrap_or_else(|e| panic!("{rel}: {e}"))
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect()
    }
}

/// A `[[corpus]]` block with German-English train and test TSVs written
/// next to the config.
pub fn corpus_block(ws: &Workspace, train: &Corpus, test: &Corpus) -> String {
    ws.write("train.tsv", &train.tsv());
    ws.write("test.tsv", &test.tsv());
    "[[corpus]]\ndirection = \"de-en\"\ntrain = { path = \"train.tsv\", format = \"tsv\" }\ntest = { path = \"test.tsv\", format = \"tsv\" }\n\n"
        .into()
}

/// An executable stand-in for the trainer adapter. It logs each call to
/// `log`, exits 3 at stage `fail_at`, and otherwise writes a checkpoint
/// directory and a matching receipt.
pub fn fake_trainer(dir: &Path, log: &Path, fail_at: Option<usize>) -> PathBuf {
    let script = format!(
        r#"#!/usr/bin/env python3
import hashlib, json, os, sys

FAIL_AT = {fail}
LOG = {log:?}

args = sys.argv[1:]
if args[:2] != ["train", "--config"]:
    sys.exit(64)
raw = open(args[2], "rb").read()
cfg = json.loads(raw)
k = cfg["stage_index"]
with open(LOG, "a") as f:
    f.write(json.dumps({{"stage": k, "init": cfg["init_checkpoint"], "shard": cfg["shard_path"]}}) + "\n")
if k == FAIL_AT:
    sys.exit(3)
shard = open(cfg["shard_path"], "rb").read()
rows = [json.loads(l) for l in shard.splitlines() if l.strip()]
os.makedirs(cfg["output_checkpoint"], exist_ok=True)
with open(os.path.join(cfg["output_checkpoint"], "adapter.txt"), "w") as f:
    f.write(str(len(rows)))
receipt = {{
    "stage": k,
    "shard_sha256": hashlib.sha256(shard).hexdigest(),
    "config_sha256": hashlib.sha256(raw).hexdigest(),
    "init_checkpoint": cfg["init_checkpoint"],
    "final_loss": 1.0 / (k + 1),
    "steps": len(rows),
}}
with open(os.path.join(cfg["checkpoint_dir"], "receipt_stage%d.json" % k), "w") as f:
    json.dump(receipt, f)
"#,
        fail = fail_at.map_or("None".to_string(), |k| k.to_string()),
        log = log.display().to_string(),
    );
    let path = dir.join("fake_trainer.py");
    fs::write(&path, script).unwrap();
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        fs::set_permissions(&path, fs::Permissions::from_mode(0o755)).unwrap();
    }
    path
}
