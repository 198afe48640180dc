//! Run configuration with layered precedence:
//! CLI flag > environment variable > config file > built-in default.
//!
//! The config file is TOML with sections {backend, tools, budgets, eapo,
//! sweep}; every key has a built-in default, so an empty file is valid.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eapo::{DEFAULT_EPSILON, DEFAULT_GAMMA};
use crate::mdp::{DEFAULT_REPORT_BUDGET, DEFAULT_RESPONSE_CAP};

pub const ENV_BACKEND_URL: &str = "ITERFLOW_BACKEND_URL";
pub const ENV_BACKEND_KEY: &str = "ITERFLOW_BACKEND_KEY";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("failed to read config file: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse config file: {0}")]
    Parse(#[from] toml::de::Error),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    /// Chat-completion endpoint for the policy backend.
    pub url: String,
    pub key: Option<String>,
    pub model: String,
    pub temperature: f64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            url: String::new(),
            key: None,
            model: "default".into(),
            temperature: 0.7,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ToolsConfig {
    /// "fixture" or "live".
    pub mode: String,
    pub fixture_dir: Option<String>,
    pub search_url: String,
    pub search_key: Option<String>,
    pub reader_url: String,
    pub reader_key: Option<String>,
    pub sandbox_url: String,
    pub deadline_ms: u64,
}

impl Default for ToolsConfig {
    fn default() -> Self {
        Self {
            mode: "fixture".into(),
            fixture_dir: None,
            search_url: String::new(),
            search_key: None,
            reader_url: String::new(),
            reader_key: None,
            sandbox_url: String::new(),
            deadline_ms: 60_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct BudgetsConfig {
    pub report_chars: usize,
    pub response_chars: usize,
    /// Mono-baseline context limit, in characters.
    pub context_limit: usize,
}

impl Default for BudgetsConfig {
    fn default() -> Self {
        Self {
            report_chars: DEFAULT_REPORT_BUDGET,
            response_chars: DEFAULT_RESPONSE_CAP,
            context_limit: 160_000,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EapoConfig {
    pub gamma: f64,
    pub epsilon: f64,
    pub dp_size: usize,
    pub g: u32,
    /// Keep failed-parse trajectories in the corpus with terminal reward 0.
    pub keep_failed: bool,
}

impl Default for EapoConfig {
    fn default() -> Self {
        Self { gamma: DEFAULT_GAMMA, epsilon: DEFAULT_EPSILON, dp_size: 8, g: 8, keep_failed: true }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub t_max_list: Vec<u32>,
    pub workers: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            t_max_list: vec![2, 4, 8, 16, 32, 64, 128, 256, 512, 1024, 2048],
            workers: 4,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub backend: BackendConfig,
    pub tools: ToolsConfig,
    pub budgets: BudgetsConfig,
    pub eapo: EapoConfig,
    pub sweep: SweepConfig,
}

impl Config {
    pub fn from_file(path: &std::path::Path) -> Result<Self, ConfigError> {
        Ok(toml::from_str(&std::fs::read_to_string(path)?)?)
    }

    /// Loads the optional file and layers environment variables on top.
    /// CLI flags are applied by the caller afterwards.
    pub fn load(path: Option<&std::path::Path>) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => Self::from_file(p)?,
            None => Self::default(),
        };
        cfg.apply_env();
        Ok(cfg)
    }

    pub fn apply_env(&mut self) {
        if let Ok(v) = std::env::var(ENV_BACKEND_URL) {
            self.backend.url = v;
        }
        if let Ok(v) = std::env::var(ENV_BACKEND_KEY) {
            self.backend.key = Some(v);
        }
        if let Ok(v) = std::env::var(crate::tools::live::ENV_SEARCH_KEY) {
            self.tools.search_key = Some(v);
        }
        if let Ok(v) = std::env::var(crate::tools::live::ENV_READER_KEY) {
            self.tools.reader_key = Some(v);
        }
        if let Ok(v) = std::env::var(crate::tools::live::ENV_SANDBOX_URL) {
            self.tools.sandbox_url = v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_yields_defaults() {
        let cfg: Config = toml::from_str("").unwrap();
        assert_eq!(cfg.eapo.gamma, DEFAULT_GAMMA);
        assert_eq!(cfg.budgets.report_chars, DEFAULT_REPORT_BUDGET);
        assert_eq!(cfg.tools.mode, "fixture");
    }

    #[test]
    fn file_values_override_defaults() {
        let cfg: Config = toml::from_str(
            "[eapo]\ngamma = 0.9\n\n[budgets]\nreport_chars = 100\n",
        )
        .unwrap();
        assert_eq!(cfg.eapo.gamma, 0.9);
        assert_eq!(cfg.budgets.report_chars, 100);
        assert_eq!(cfg.eapo.dp_size, 8); // untouched keys keep defaults
    }
}
