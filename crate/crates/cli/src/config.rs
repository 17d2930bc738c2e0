//! Run configuration: JSON file plus command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chronolink::dynamics::Init;
use chronolink::pipeline::RunConfig;
use clap::Args;
use sha2::{Digest, Sha256};

use crate::UsageError;

#[derive(Debug, Clone, Default, Args)]
pub struct LinkArgs {
    /// JSON run configuration; flags override its fields
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Entity records, one JSON object per line
    #[arg(long)]
    pub entities: Option<PathBuf>,
    /// Binary entity embedding file
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Type taxonomy JSON (defaults to the builtin one)
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    /// Binary mention embedding file, one row per mention in corpus order
    #[arg(long)]
    pub mention_embeddings: Option<PathBuf>,
    /// Sense inventory JSONL for context players
    #[arg(long)]
    pub senses: Option<PathBuf>,
    /// Trained or swept NIL rule JSON (for --nil logistic or a bare KIND)
    #[arg(long)]
    pub nil_rule: Option<PathBuf>,
    /// Comma-separated subset of phi_d,phi_t, or "none"
    #[arg(long)]
    pub constraints: Option<String>,
    /// NIL rule: none, always, KIND:TAU, KIND (with --nil-rule) or logistic
    #[arg(long)]
    pub nil: Option<String>,
    /// eld or eld-static
    #[arg(long)]
    pub linker: Option<String>,
    /// Retrieval depth
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Initial mixed strategies: uniform or prior
    #[arg(long, value_parser = parse_init)]
    pub init: Option<Init>,
    /// Offer a NIL strategy inside the game
    #[arg(long)]
    pub nil_strategy: bool,
    /// Also write the per-iteration dynamics trace
    #[arg(long)]
    pub trace: bool,
}

fn parse_init(s: &str) -> std::result::Result<Init, String> {
    match s {
        "uniform" => Ok(Init::Uniform),
        "prior" => Ok(Init::Prior),
        _ => Err(format!("`{s}` is not uniform or prior")),
    }
}

fn rebase(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl LinkArgs {
    /// Config file (paths relative to its directory) with flags applied on top.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
                let mut cfg = RunConfig::from_json(&text)?;
                let base = path.parent().unwrap_or(Path::new(""));
                for p in [
                    &mut cfg.corpus,
                    &mut cfg.entities,
                    &mut cfg.embeddings,
                    &mut cfg.taxonomy,
                    &mut cfg.mention_embeddings,
                    &mut cfg.senses,
                    &mut cfg.nil_rule,
                    &mut cfg.out,
                ] {
                    rebase(base, p);
                }
                cfg
            }
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    cfg.$field = v.clone().into();
                }
            )*};
        }
        set!(corpus, entities, embeddings, taxonomy, mention_embeddings, senses, nil_rule);
        set!(constraints, nil, linker);
        if let Some(k) = self.k {
            cfg.k = k;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if self.jobs.is_some() {
            cfg.jobs = self.jobs;
        }
        if let Some(init) = self.init {
            cfg.dynamics.init = init;
        }
        if self.nil_strategy {
            cfg.dynamics.nil_strategy = true;
        }
        if self.trace {
            cfg.trace = true;
        }
        Ok(cfg)
    }
}

/// SHA-256 of the canonical JSON form of a configuration.
pub fn config_hash(cfg: &RunConfig) -> Result<String> {
    let json = serde_json::to_string(cfg).context("serializing config")?;
    Ok(hex::encode(Sha256::digest(json.as_bytes())))
}
