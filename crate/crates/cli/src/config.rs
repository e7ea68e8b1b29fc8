//! Run configuration files.

use std::path::{Path, PathBuf};

use anyhow::Context;
use colav::agent::TrainConfig;
use colav::scenario::EnvConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable that overrides the output directory.
pub const OUT_DIR_ENV: &str = "COLAV_OUT_DIR";

/// Everything a run depends on. Missing fields take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub env: EnvConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            out_dir: None,
            env: EnvConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("cannot parse config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            anyhow::bail!(
                "invalid config field `schema_version`: expected {SCHEMA_VERSION}, found {}",
                self.schema_version
            );
        }
        self.env.validate()?;
        self.train.validate()?;
        Ok(())
    }

    /// SHA-256 over the environment and training sections. The seed and the
    /// output directory are not part of it: they are recorded separately.
    pub fn hash(&self) -> String {
        let body = serde_json::to_string(&(&self.env, &self.train)).expect("config serializes");
        hex::encode(Sha256::digest(body.as_bytes()))
    }

    /// `--out`, then the environment variable, then the config file, then `./colav-out`.
    pub fn resolve_out_dir(&self, cli: Option<&Path>) -> PathBuf {
        if let Some(p) = cli {
            return p.to_path_buf();
        }
        if let Some(p) = std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()) {
            return PathBuf::from(p);
        }
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("colav-out"))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
