//! Run configuration: defaults, then a TOML or JSON file, then flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};
use typeforge_core::llm::ModelConfig;
use typeforge_core::pipeline::PipelineConfig;
use typeforge_core::project::DEFAULT_MAX_DEPTH;
use typeforge_core::testgen::DEFAULT_CONTEXT_BUDGET;

use crate::gateway::{GatewayMode, RetryPolicy, ENV_MODEL};

pub const DEFAULT_TIMEOUT_S: u64 = 60;
pub const DEFAULT_RUNNER: &str = "typeforge-runner";
pub const DEFAULT_OUT: &str = "typeforge-out";

/// Keys accepted in a config file. Every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub project: Option<PathBuf>,
    pub mode: Option<GatewayMode>,
    pub cassette: Option<PathBuf>,
    pub model: Option<String>,
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
    pub request_timeout: Option<u64>,
    pub max_attempts: Option<u32>,
    pub max_depth: Option<usize>,
    pub refine_budget: Option<u32>,
    pub timeout: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub runner: Option<PathBuf>,
    pub dry_run: Option<bool>,
    pub always_arbitrate: Option<bool>,
    pub context_budget: Option<usize>,
    pub include: Option<Vec<String>>,
    pub exclude: Option<Vec<String>>,
    pub assert_calls: Option<Vec<String>>,
    pub assert_contexts: Option<Vec<String>>,
}

impl FileConfig {
    /// `.json` files are JSON; anything else is read as TOML.
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        } else {
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        };
        Ok(cfg)
    }

    /// Fields set in `over` win.
    pub fn overlay(self, over: FileConfig) -> FileConfig {
        macro_rules! pick {
            ($($f:ident),*) => { FileConfig { $($f: over.$f.or(self.$f)),* } };
        }
        pick!(
            project, mode, cassette, model, temperature, max_tokens, request_timeout, max_attempts, max_depth,
            refine_budget, timeout, workers, out, runner, dry_run, always_arbitrate, context_budget, include,
            exclude, assert_calls, assert_contexts
        )
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub project_root: PathBuf,
    pub mode: GatewayMode,
    pub cassette: Option<PathBuf>,
    pub retry: RetryPolicy,
    pub timeout_s: u64,
    pub workers: usize,
    pub out: PathBuf,
    pub runner: PathBuf,
    pub include: Vec<String>,
    pub exclude: Vec<String>,
    pub pipeline: PipelineConfig,
}

impl RunConfig {
    /// Fills defaults. `TYPEFORGE_MODEL` sits between the defaults and the
    /// file.
    pub fn resolve(file: FileConfig) -> anyhow::Result<Self> {
        let mut model = ModelConfig::default();
        if let Ok(m) = std::env::var(ENV_MODEL) {
            if !m.trim().is_empty() {
                model.model_id = m;
            }
        }
        if let Some(m) = file.model {
            model.model_id = m;
        }
        if let Some(t) = file.temperature {
            model.temperature = t;
        }
        if let Some(t) = file.max_tokens {
            model.max_tokens = t;
        }
        if let Some(t) = file.request_timeout {
            model.timeout_secs = t;
        }
        model.validate().map_err(anyhow::Error::new)?;

        let mut pipeline = PipelineConfig { model, ..Default::default() };
        pipeline.max_depth = file.max_depth.unwrap_or(DEFAULT_MAX_DEPTH);
        pipeline.refine_budget = file.refine_budget.unwrap_or(1);
        pipeline.dry_run = file.dry_run.unwrap_or(false);
        pipeline.always_arbitrate = file.always_arbitrate.unwrap_or(false);
        pipeline.context_budget = file.context_budget.unwrap_or(DEFAULT_CONTEXT_BUDGET);
        if let Some(c) = file.assert_calls {
            pipeline.assert_names.calls = c.into_iter().collect();
        }
        if let Some(c) = file.assert_contexts {
            pipeline.assert_names.contexts = c.into_iter().collect();
        }

        let cfg = RunConfig {
            project_root: file.project.unwrap_or_else(|| PathBuf::from(".")),
            mode: file.mode.unwrap_or_default(),
            cassette: file.cassette,
            retry: RetryPolicy { max_attempts: file.max_attempts.unwrap_or(3), ..Default::default() },
            timeout_s: file.timeout.unwrap_or(DEFAULT_TIMEOUT_S),
            workers: file.workers.unwrap_or(1),
            out: file.out.unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
            runner: file.runner.unwrap_or_else(|| PathBuf::from(DEFAULT_RUNNER)),
            include: file.include.unwrap_or_else(|| vec!["**/*.py".into()]),
            exclude: file.exclude.unwrap_or_default(),
            pipeline,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.workers == 0 {
            bail!("workers must be at least 1");
        }
        if self.timeout_s == 0 {
            bail!("timeout must be positive");
        }
        if self.pipeline.max_depth == 0 {
            bail!("max depth must be at least 1");
        }
        if self.retry.max_attempts == 0 {
            bail!("max_attempts must be at least 1");
        }
        match (self.mode, &self.cassette) {
            (GatewayMode::Replay, None) => bail!("replay mode needs a cassette"),
            (GatewayMode::Replay, Some(p)) if !p.is_file() => bail!("cassette {} does not exist", p.display()),
            (GatewayMode::Record, None) => bail!("record mode needs a cassette"),
            _ => Ok(()),
        }
    }
}
