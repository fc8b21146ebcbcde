//! Layered configuration: command-line flags over environment over
//! `cam.toml` over built-in defaults.

use std::path::{Path, PathBuf};
use std::time::Duration;

use cam_core::config::EngineConfig;
use cam_core::error::ConfigError;
use cam_core::providers::remote::{API_BASE_ENV, API_KEY_ENV};
use cam_core::providers::ProviderConfig;
use clap::Args;
use serde::Deserialize;

pub const DEFAULT_CONFIG_FILE: &str = "cam.toml";

/// Flags shared by every command.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Configuration file; `cam.toml` in the working directory is read when present.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub theta: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long = "top-s")]
    pub top_s: Option<usize>,
    #[arg(long = "max-hops")]
    pub max_hops: Option<usize>,
    #[arg(long = "chunk-size")]
    pub chunk_size: Option<usize>,
    /// Use the offline embedder and language model instead of the HTTP API.
    #[arg(long = "stub-providers")]
    pub stub_providers: bool,
    /// Seed for generated corpora.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    engine: toml::Table,
    provider: ProviderFile,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ProviderFile {
    endpoint_url: Option<String>,
    api_key_env: Option<String>,
    embed_model: Option<String>,
    chat_model: Option<String>,
    timeout_s: Option<f64>,
    max_retries: Option<u32>,
    retry_backoff_ms: Option<u64>,
    temperature: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub engine: EngineConfig,
    pub provider: ProviderConfig,
}

fn read_file(path: Option<&Path>) -> Result<FileConfig, ConfigError> {
    let (path, required) = match path {
        Some(p) => (p.to_path_buf(), true),
        None => (PathBuf::from(DEFAULT_CONFIG_FILE), false),
    };
    if !required && !path.exists() {
        return Ok(FileConfig::default());
    }
    let raw = std::fs::read_to_string(&path)
        .map_err(|e| ConfigError::new("config", format!("{}: {e}", path.display())))?;
    toml::from_str(&raw).map_err(|e| ConfigError::new("config", format!("{}: {e}", path.display())))
}

fn overlay_engine(base: &EngineConfig, table: &toml::Table) -> Result<EngineConfig, ConfigError> {
    let mut merged = toml::Table::try_from(base).map_err(|e| ConfigError::new("engine", e.to_string()))?;
    for (k, v) in table {
        merged.insert(k.clone(), v.clone());
    }
    toml::Value::Table(merged).try_into().map_err(|e| ConfigError::new("engine", format!("in [engine]: {e}")))
}

fn overlay_provider(file: ProviderFile) -> Result<ProviderConfig, ConfigError> {
    let mut p = ProviderConfig::default();
    if let Some(v) = file.endpoint_url {
        p.endpoint_url = v;
    }
    if let Some(v) = file.api_key_env {
        p.api_key_env_name = v;
    }
    if let Some(v) = file.embed_model {
        p.embed_model_name = v;
    }
    if let Some(v) = file.chat_model {
        p.chat_model_name = v;
    }
    if let Some(v) = file.timeout_s {
        p.timeout = Duration::try_from_secs_f64(v)
            .map_err(|_| ConfigError::new("timeout_s", format!("must be a non-negative number of seconds, got {v}")))?;
    }
    if let Some(v) = file.max_retries {
        p.max_retries = v;
    }
    if let Some(v) = file.retry_backoff_ms {
        p.retry_backoff = Duration::from_millis(v);
    }
    if let Some(v) = file.temperature {
        p.temperature = v;
    }
    if let Ok(base) = std::env::var(API_BASE_ENV) {
        if !base.trim().is_empty() {
            p.endpoint_url = base;
        }
    }
    if p.api_key_env_name.is_empty() {
        p.api_key_env_name = API_KEY_ENV.to_string();
    }
    Ok(p)
}

impl CommonArgs {
    /// Resolves settings on top of `base`, which is either the defaults or
    /// the configuration stored in a snapshot.
    pub fn resolve(&self, base: &EngineConfig) -> Result<Settings, ConfigError> {
        let file = read_file(self.config.as_deref())?;
        let mut engine = overlay_engine(base, &file.engine)?;
        if let Some(v) = self.alpha {
            engine.alpha = v;
        }
        if let Some(v) = self.sigma {
            engine.sigma = v;
        }
        if let Some(v) = self.theta {
            engine.theta = v;
        }
        if let Some(v) = self.k {
            engine.k = v;
        }
        if let Some(v) = self.top_s {
            engine.s = v;
        }
        if let Some(v) = self.max_hops {
            engine.max_hops = v;
        }
        if let Some(v) = self.chunk_size {
            engine.chunk_size = v;
        }
        engine.validate()?;
        Ok(Settings { engine, provider: overlay_provider(file.provider)? })
    }
}

/// Rejects changes to parameters that shape an existing memory.
pub fn check_compatible(stored: &EngineConfig, requested: &EngineConfig) -> Result<(), ConfigError> {
    let fields: [(&'static str, bool); 6] = [
        ("alpha", stored.alpha == requested.alpha),
        ("sigma", stored.sigma == requested.sigma),
        ("theta", stored.theta == requested.theta),
        ("k", stored.k == requested.k),
        ("max_lp_iters", stored.max_lp_iters == requested.max_lp_iters),
        ("min_level_size", stored.min_level_size == requested.min_level_size),
    ];
    match fields.iter().find(|(_, same)| !same) {
        Some((field, _)) => Err(ConfigError::new(field, "cannot differ from the value stored in the snapshot")),
        None => Ok(()),
    }
}
