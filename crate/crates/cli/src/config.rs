//! Run configuration: a JSON file merged with command-line flags.

use std::path::{Path, PathBuf};

use anyhow::Context;
use juris_core::eval::ExperimentConfig;
use juris_core::inference::GeneratorConfig;
use juris_core::lexical::{Bm25Params, TokenizerConfig};
use juris_core::scorer::TrainConfig;
use serde::Deserialize;

use crate::UsageError;

pub const DEFAULT_SEED: u64 = 42;
pub const SEED_ENV: &str = "JURIS_SEED";
pub const DEFAULT_POSITIVE_THRESHOLD: u32 = 2;

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub queries: Option<PathBuf>,
    pub train_queries: Option<PathBuf>,
    pub test_queries: Option<PathBuf>,
    pub qrels: Option<PathBuf>,
    pub taxonomy: Option<PathBuf>,
    pub indicators: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub generator: Option<PathBuf>,
    pub scorer: Option<PathBuf>,
    pub features: Option<PathBuf>,
}

impl Paths {
    fn rebase(&mut self, dir: &Path) {
        for p in [
            &mut self.corpus,
            &mut self.queries,
            &mut self.train_queries,
            &mut self.test_queries,
            &mut self.qrels,
            &mut self.taxonomy,
            &mut self.indicators,
            &mut self.index,
            &mut self.generator,
            &mut self.scorer,
            &mut self.features,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Relative paths are resolved against the config file's directory.
    pub paths: Paths,
    pub tokenizer: TokenizerConfig,
    pub bm25: Bm25Params,
    pub generator: GeneratorConfig,
    pub train: TrainConfig,
    pub epsilon: Option<f64>,
    pub fallback_top_k: Option<usize>,
    pub positive_threshold: Option<u32>,
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        if let Some(dir) = path.parent() {
            cfg.paths.rebase(dir);
        }
        Ok(cfg)
    }

    /// Seed precedence: `--seed`, then the config file, then `JURIS_SEED`,
    /// then the built-in default.
    pub fn resolve_seed(&mut self, flag: Option<u64>) -> anyhow::Result<u64> {
        let seed = match flag.or(self.seed) {
            Some(s) => s,
            None => match std::env::var(SEED_ENV) {
                Ok(v) => v
                    .trim()
                    .parse()
                    .map_err(|_| UsageError(format!("{SEED_ENV}=`{v}` is not an unsigned 64-bit integer")))?,
                Err(_) => DEFAULT_SEED,
            },
        };
        self.seed = Some(seed);
        self.train.seed = seed;
        Ok(seed)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn experiment(&self) -> ExperimentConfig {
        let defaults = ExperimentConfig::default();
        ExperimentConfig {
            tokenizer: self.tokenizer,
            bm25: self.bm25,
            generator: GeneratorConfig { tokenizer: self.tokenizer, ..self.generator },
            train: self.train,
            epsilon: self.epsilon.unwrap_or(defaults.epsilon),
            fallback_top_k: self.fallback_top_k,
        }
    }

    pub fn positive_threshold(&self, flag: Option<u32>) -> u32 {
        flag.or(self.positive_threshold).unwrap_or(DEFAULT_POSITIVE_THRESHOLD)
    }
}

/// A required input path: the flag wins over the config file. Missing
/// entirely is a usage error; missing on disk is a data error.
pub fn input(flag: &Option<PathBuf>, from_config: &Option<PathBuf>, name: &str) -> anyhow::Result<PathBuf> {
    let path = flag
        .clone()
        .or_else(|| from_config.clone())
        .ok_or_else(|| UsageError(format!("missing --{name} (flag or config `paths.{}`)", name.replace('-', "_"))))?;
    if !path.exists() {
        anyhow::bail!("{name} path {} does not exist", path.display());
    }
    Ok(path)
}

pub fn optional_input(
    flag: &Option<PathBuf>,
    from_config: &Option<PathBuf>,
    name: &str,
) -> anyhow::Result<Option<PathBuf>> {
    match flag.clone().or_else(|| from_config.clone()) {
        Some(p) if !p.exists() => anyhow::bail!("{name} path {} does not exist", p.display()),
        other => Ok(other),
    }
}
