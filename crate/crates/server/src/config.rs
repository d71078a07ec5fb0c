use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;
use storyloom::genai::config::{ProviderConfig, ProvidersFile};

use crate::error::ServerError;

fn default_host() -> String {
    "127.0.0.1".to_string()
}

fn default_port() -> u16 {
    8080
}

fn default_store() -> PathBuf {
    PathBuf::from("storyloom-data")
}

fn default_workers() -> usize {
    storyloom::genai::jobs::DEFAULT_WORKERS
}

fn default_backlog() -> usize {
    storyloom::genai::jobs::DEFAULT_BACKLOG
}

fn default_tick_ms() -> u64 {
    100
}

/// Service configuration, read from a TOML file.
///
/// Providers come from `providers_file` (relative to the config file) and
/// inline `[[providers]]` tables; kinds left unconfigured use the mock.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerConfig {
    #[serde(default = "default_host")]
    pub host: String,
    #[serde(default = "default_port")]
    pub port: u16,
    #[serde(default = "default_store")]
    pub store: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_backlog")]
    pub backlog: usize,
    #[serde(default)]
    pub providers_file: Option<PathBuf>,
    #[serde(default)]
    pub providers: Vec<ProviderConfig>,
    /// Name of the environment variable holding the shared API token.
    #[serde(default)]
    pub token_env: Option<String>,
    /// Period of the server clock that drives real-time playback.
    #[serde(default = "default_tick_ms")]
    pub tick_ms: u64,
    /// Fixes generation seeds and timestamps, for reproducible runs.
    #[serde(default)]
    pub deterministic: bool,
}

impl Default for ServerConfig {
    fn default() -> Self {
        toml::from_str("").expect("all fields have defaults")
    }
}

impl ServerConfig {
    pub fn parse(text: &str) -> Result<Self, ServerError> {
        let config: ServerConfig = toml::from_str(text).map_err(|e| ServerError::BadConfig(e.to_string()))?;
        config.check()?;
        Ok(config)
    }

    /// Reads `path`; relative paths inside it are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self, ServerError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ServerError::BadConfig(format!("cannot read {}: {e}", path.display())))?;
        let mut config = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if config.store.is_relative() {
            config.store = base.join(&config.store);
        }
        if let Some(file) = config.providers_file.take() {
            config.providers_file = Some(if file.is_relative() { base.join(file) } else { file });
        }
        Ok(config)
    }

    fn check(&self) -> Result<(), ServerError> {
        if self.workers == 0 {
            return Err(ServerError::BadConfig("workers must be at least 1".into()));
        }
        if self.backlog == 0 {
            return Err(ServerError::BadConfig("backlog must be at least 1".into()));
        }
        if self.tick_ms == 0 {
            return Err(ServerError::BadConfig("tick_ms must be positive".into()));
        }
        Ok(())
    }

    pub fn addr(&self) -> Result<SocketAddr, ServerError> {
        format!("{}:{}", self.host, self.port)
            .parse()
            .map_err(|_| ServerError::BadConfig(format!("{}:{} is not a socket address", self.host, self.port)))
    }

    pub fn tick(&self) -> Duration {
        Duration::from_millis(self.tick_ms)
    }

    /// Inline providers plus those from `providers_file`.
    pub fn provider_configs(&self) -> Result<Vec<ProviderConfig>, ServerError> {
        let mut all = self.providers.clone();
        if let Some(path) = &self.providers_file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ServerError::BadConfig(format!("cannot read {}: {e}", path.display())))?;
            let file = ProvidersFile::parse(&text).map_err(|e| ServerError::BadConfig(e.to_string()))?;
            all.extend(file.providers);
        }
        Ok(all)
    }

    /// The token clients must present, if one is configured.
    pub fn token(&self) -> Result<Option<String>, ServerError> {
        match &self.token_env {
            None => Ok(None),
            Some(var) => match std::env::var(var) {
                Ok(token) if !token.is_empty() => Ok(Some(token)),
                _ => Err(ServerError::BadConfig(format!("environment variable {var} is not set"))),
            },
        }
    }
}
