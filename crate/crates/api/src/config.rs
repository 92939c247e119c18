//! Service configuration file.
//!
//! ```toml
//! listen = "127.0.0.1:8080"
//! data_dir = "/var/lib/mooclet"
//! seed = 7
//! noise_test_mode = false
//! clock = "system"
//! pseudonym_key = "change-me"
//! snapshot_every = 1000
//!
//! [[principal]]
//! token = "lms-secret"
//! name = "course-platform"
//! role = "platform"
//!
//! [[principal]]
//! token = "res-secret"
//! name = "dr-lee"
//! role = "researcher"
//! epsilon_total = 2.0
//! ```

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use mooclet_core::{ClockKind, EngineConfig, NoiseMode, Role};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Parse(#[from] toml::de::Error),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrincipalConfig {
    pub token: String,
    pub name: String,
    pub role: Role,
    /// Privacy budget; researchers only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon_total: Option<f64>,
}

fn default_listen() -> String {
    "127.0.0.1:8080".into()
}

fn default_clock() -> ClockKind {
    ClockKind::System
}

fn default_key() -> String {
    EngineConfig::default().pseudonym_key
}

fn default_snapshot_every() -> u64 {
    EngineConfig::default().snapshot_every
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_listen")]
    pub listen: String,
    /// Journal and snapshot directory. Without one, state lives in memory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    /// Disables DP noise so aggregates are exact.
    #[serde(default)]
    pub noise_test_mode: bool,
    #[serde(default = "default_clock")]
    pub clock: ClockKind,
    #[serde(default = "default_key")]
    pub pseudonym_key: String,
    #[serde(default = "default_snapshot_every")]
    pub snapshot_every: u64,
    #[serde(default, rename = "principal")]
    pub principals: Vec<PrincipalConfig>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            listen: default_listen(),
            data_dir: None,
            seed: 0,
            noise_test_mode: false,
            clock: default_clock(),
            pseudonym_key: default_key(),
            snapshot_every: default_snapshot_every(),
            principals: Vec::new(),
        }
    }
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: ServiceConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut tokens = HashSet::new();
        let mut names = HashSet::new();
        for p in &self.principals {
            if p.token.is_empty() {
                return Err(ConfigError::Invalid(format!("principal {:?} has an empty token", p.name)));
            }
            if !tokens.insert(&p.token) {
                return Err(ConfigError::Invalid(format!("token of {:?} is not unique", p.name)));
            }
            if !names.insert(&p.name) {
                return Err(ConfigError::Invalid(format!("principal name {:?} is not unique", p.name)));
            }
            match (p.role, p.epsilon_total) {
                (Role::Researcher, Some(e)) if !(e > 0.0 && e.is_finite()) => {
                    return Err(ConfigError::Invalid(format!(
                        "principal {:?}: epsilon_total must be positive",
                        p.name
                    )))
                }
                (Role::Researcher, _) | (_, None) => {}
                (_, Some(_)) => {
                    return Err(ConfigError::Invalid(format!(
                        "principal {:?}: only researchers hold a privacy budget",
                        p.name
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            seed: self.seed,
            noise: if self.noise_test_mode {
                NoiseMode::Disabled
            } else {
                NoiseMode::Laplace
            },
            clock: self.clock,
            pseudonym_key: self.pseudonym_key.clone(),
            snapshot_every: self.snapshot_every,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_example() {
        let text = include_str!("config.rs")
            .lines()
            .skip_while(|l| !l.starts_with("//! ```toml"))
            .skip(1)
            .take_while(|l| !l.starts_with("//! ```"))
            .map(|l| l.trim_start_matches("//!").trim_start())
            .collect::<Vec<_>>()
            .join("\n");
        let cfg = ServiceConfig::from_toml(&text).unwrap();
        assert_eq!(cfg.principals.len(), 2);
        assert_eq!(cfg.principals[1].epsilon_total, Some(2.0));
        assert_eq!(cfg.engine_config().seed, 7);
    }

    #[test]
    fn rejects_bad_principals() {
        let dup = r#"
[[principal]]
token = "t"
name = "a"
role = "admin"
[[principal]]
token = "t"
name = "b"
role = "platform"
"#;
        assert!(matches!(ServiceConfig::from_toml(dup), Err(ConfigError::Invalid(_))));
        let budget = "[[principal]]\ntoken = \"t\"\nname = \"a\"\nrole = \"platform\"\nepsilon_total = 1.0\n";
        assert!(ServiceConfig::from_toml(budget).is_err());
        assert!(ServiceConfig::from_toml("lisen = \"x\"").is_err());
        let defaults = ServiceConfig::from_toml("").unwrap();
        assert_eq!(defaults, ServiceConfig::default());
    }
}
