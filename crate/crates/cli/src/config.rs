//! Layered application configuration: defaults, then the TOML file, then
//! environment variables, then command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ragway_core::eval::EvalConfig;
use ragway_core::gateway::http::GatewayConfig;
use ragway_core::pipeline::PipelineConfig;
use ragway_core::splitter::SplitterConfig;
use serde::{Deserialize, Serialize};

pub const ENV_CONFIG: &str = "RAGWAY_CONFIG";
pub const ENV_INDEX: &str = "RAGWAY_INDEX";
pub const ENV_PARTITION: &str = "RAGWAY_PARTITION";
pub const ENV_BIND: &str = "RAGWAY_BIND";
pub const ENV_MOCK: &str = "RAGWAY_MOCK";
pub const ENV_PROMPTS: &str = "RAGWAY_PROMPTS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockConfig {
    pub embedding_dim: usize,
    /// Artificial delay added to every scripted generator call.
    pub generator_latency_ms: u64,
}

impl Default for MockConfig {
    fn default() -> Self {
        Self {
            embedding_dim: ragway_core::gateway::mock::DEFAULT_MOCK_DIM,
            generator_latency_ms: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    /// Texts per embedding request.
    pub batch_size: usize,
    /// Files split and embedded at once.
    pub parallelism: usize,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            parallelism: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub index_path: PathBuf,
    pub prompt_catalog: Option<PathBuf>,
    pub bind: String,
    pub protocol_version: String,
    pub mock: bool,
    pub splitter: SplitterConfig,
    pub pipeline: PipelineConfig,
    pub gateway: GatewayConfig,
    pub eval: EvalConfig,
    pub ingest: IngestConfig,
    #[serde(rename = "mock_backend")]
    pub mock_backend: MockConfig,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            index_path: PathBuf::from("ragway-index.json"),
            prompt_catalog: None,
            bind: "127.0.0.1:8765".into(),
            protocol_version: ragway_mcp::DEFAULT_PROTOCOL_VERSION.into(),
            mock: false,
            splitter: SplitterConfig::default(),
            pipeline: PipelineConfig::default(),
            gateway: GatewayConfig::default(),
            eval: EvalConfig::default(),
            ingest: IngestConfig::default(),
            mock_backend: MockConfig::default(),
        }
    }
}

/// Values that may come from the environment or from flags.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Overrides {
    pub index_path: Option<PathBuf>,
    pub partition: Option<String>,
    pub bind: Option<String>,
    pub mock: Option<bool>,
    pub prompt_catalog: Option<PathBuf>,
}

fn parse_bool(var: &str, v: &str) -> Result<bool> {
    match v.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" | "" => Ok(false),
        other => bail!("{var} must be a boolean, got {other:?}"),
    }
}

impl Overrides {
    /// Read overrides through `lookup`, normally `std::env::var`.
    pub fn from_env(lookup: impl Fn(&str) -> Option<String>) -> Result<Self> {
        Ok(Self {
            index_path: lookup(ENV_INDEX).map(PathBuf::from),
            partition: lookup(ENV_PARTITION),
            bind: lookup(ENV_BIND),
            mock: lookup(ENV_MOCK)
                .map(|v| parse_bool(ENV_MOCK, &v))
                .transpose()?,
            prompt_catalog: lookup(ENV_PROMPTS).map(PathBuf::from),
        })
    }

    pub fn apply(&self, cfg: &mut AppConfig) {
        if let Some(v) = &self.index_path {
            cfg.index_path = v.clone();
        }
        if let Some(v) = &self.partition {
            cfg.pipeline.partition_key = v.clone();
        }
        if let Some(v) = &self.bind {
            cfg.bind = v.clone();
        }
        if let Some(v) = self.mock {
            cfg.mock = v;
        }
        if let Some(v) = &self.prompt_catalog {
            cfg.prompt_catalog = Some(v.clone());
        }
    }
}

impl AppConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).context("invalid configuration file")
    }

    pub fn load_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("in {}", path.display()))
    }

    /// Merge all layers and validate. `file` is the config path, if any.
    pub fn resolve(file: Option<&Path>, env: &Overrides, flags: &Overrides) -> Result<Self> {
        let mut cfg = match file {
            Some(p) => Self::load_file(p)?,
            None => Self::default(),
        };
        env.apply(&mut cfg);
        flags.apply(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.splitter.validate().map_err(anyhow::Error::msg)?;
        self.pipeline.validate().map_err(anyhow::Error::msg)?;
        if !self.mock {
            self.gateway.validate().map_err(anyhow::Error::msg)?;
        }
        if self.eval.parallelism == 0 {
            bail!("eval parallelism must be at least 1");
        }
        if self.ingest.batch_size == 0 || self.ingest.parallelism == 0 {
            bail!("ingest batch_size and parallelism must be at least 1");
        }
        if self.mock_backend.embedding_dim == 0 {
            bail!("mock embedding_dim must be at least 1");
        }
        Ok(())
    }
}
