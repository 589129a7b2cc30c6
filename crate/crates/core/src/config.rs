//! Daemon configuration, read from a JSON file. Every field has a default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::desk::{DeskConfig, InferenceConfig};
use crate::error::{Error, Result};
use crate::forgetting::ForgettingPolicy;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub http_port: u16,
    pub imap_port: u16,
    pub bind: String,
    pub user: String,
    pub password: String,
    pub data_dir: PathBuf,
    pub policy: ForgettingPolicy,
    pub inference: InferenceConfig,
    /// Hours between scheduled tidy-ups; 0 disables the scheduler.
    pub tidyup_interval_hours: f64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            http_port: 8686,
            imap_port: 1143,
            bind: "127.0.0.1".into(),
            user: "cspaces".into(),
            password: "cspaces".into(),
            data_dir: PathBuf::from("cspaces-data"),
            policy: ForgettingPolicy::default(),
            inference: InferenceConfig::default(),
            tidyup_interval_hours: 24.0,
        }
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)?;
        Config::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Config> {
        let c: Config = serde_json::from_str(text).map_err(|e| Error::InvalidArgument(format!("config: {e}")))?;
        c.policy.validate()?;
        if !(c.tidyup_interval_hours >= 0.0 && c.tidyup_interval_hours.is_finite()) {
            return Err(Error::InvalidArgument("config: tidyup_interval_hours must be >= 0".into()));
        }
        Ok(c)
    }

    pub fn desk_config(&self) -> DeskConfig {
        DeskConfig { policy: self.policy.clone(), inference: self.inference.clone() }
    }
}
