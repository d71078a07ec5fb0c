//! Provider configuration.
//!
//! ```toml
//! [[providers]]
//! name = "llm"
//! kind = "text"
//! api = "openai"
//! endpoint = "https://api.openai.com/v1"
//! credential_env = "OPENAI_API_KEY"
//! model = "gpt-4"
//! timeout_s = 60
//! ```
//!
//! Credentials are only ever read from the named environment variable.
//! Kinds without an entry use the offline mock.

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::http::{OpenAiChat, SdWebUi};
use super::studio::Providers;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Text,
    Image,
    SoundEffect,
    Music,
    Segmenter,
    Speech,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderApi {
    #[default]
    Mock,
    Openai,
    SdWebui,
}

fn default_timeout() -> u64 {
    60
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    pub name: String,
    pub kind: ProviderKind,
    #[serde(default)]
    pub api: ProviderApi,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub credential_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_s: u64,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub temperature: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProvidersFile {
    #[serde(default)]
    pub providers: Vec<ProviderConfig>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("cannot parse provider config: {0}")]
    Parse(String),
    #[error("provider {name}: {reason}")]
    Invalid { name: String, reason: String },
    #[error("more than one provider configured for {0:?}")]
    DuplicateKind(ProviderKind),
}

impl ProvidersFile {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }
}

/// Builds the provider set. Performs no network I/O; remote failures surface
/// as provider errors on first use.
pub fn build_providers(configs: &[ProviderConfig]) -> Result<Providers, ConfigError> {
    let mut providers = Providers::mock();
    let mut seen = BTreeSet::new();
    for c in configs {
        if !seen.insert(c.kind) {
            return Err(ConfigError::DuplicateKind(c.kind));
        }
        let invalid = |reason: &str| ConfigError::Invalid {
            name: c.name.clone(),
            reason: reason.to_string(),
        };
        if c.timeout_s == 0 {
            return Err(invalid("timeout_s must be positive"));
        }
        let timeout = Duration::from_secs(c.timeout_s);
        let credential = match &c.credential_env {
            Some(var) => {
                Some(std::env::var(var).map_err(|_| invalid(&format!("environment variable {var} is not set")))?)
            }
            None => None,
        };
        let endpoint = || c.endpoint.as_deref().ok_or_else(|| invalid("endpoint is required"));
        match (c.api, c.kind) {
            (ProviderApi::Mock, _) => {}
            (ProviderApi::Openai, ProviderKind::Text) => {
                let model = c.model.as_deref().ok_or_else(|| invalid("model is required"))?;
                let chat = OpenAiChat::new(&c.name, endpoint()?, model, credential, timeout)
                    .map_err(|e| invalid(&e.to_string()))?
                    .with_temperature(c.temperature);
                providers.text = Arc::new(chat);
            }
            (ProviderApi::SdWebui, ProviderKind::Image) => {
                let sd =
                    SdWebUi::new(&c.name, endpoint()?, credential, timeout).map_err(|e| invalid(&e.to_string()))?;
                providers.image = Arc::new(sd);
            }
            (api, kind) => {
                return Err(invalid(&format!("api {api:?} cannot serve {kind:?} providers")));
            }
        }
    }
    Ok(providers)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_builds() {
        let file = ProvidersFile::parse(
            r#"
            [[providers]]
            name = "llm"
            kind = "text"
            api = "openai"
            endpoint = "http://localhost:1"
            model = "gpt-4"

            [[providers]]
            name = "sd"
            kind = "image"
            api = "sd-webui"
            endpoint = "http://localhost:2"
            timeout_s = 5
            "#,
        )
        .unwrap();
        assert_eq!(file.providers[1].timeout_s, 5);
        let p = build_providers(&file.providers).unwrap();
        assert_eq!(p.text.name(), "llm");
        assert_eq!(p.image.name(), "sd");
        assert!(p.serial_only());
        assert_eq!(p.music.name(), "mock-musicgen");
    }

    #[test]
    fn empty_config_is_all_mock() {
        let p = build_providers(&ProvidersFile::parse("").unwrap().providers).unwrap();
        assert!(!p.serial_only());
        assert_eq!(p.text.name(), "mock-text");
    }

    #[test]
    fn rejects_bad_configs() {
        let base = ProviderConfig {
            name: "x".into(),
            kind: ProviderKind::Music,
            api: ProviderApi::Openai,
            endpoint: Some("http://h".into()),
            credential_env: None,
            timeout_s: 10,
            model: None,
            temperature: None,
        };
        assert!(matches!(
            build_providers(std::slice::from_ref(&base)),
            Err(ConfigError::Invalid { .. })
        ));
        let missing_env = ProviderConfig {
            kind: ProviderKind::Text,
            model: Some("m".into()),
            credential_env: Some("STORYLOOM_TEST_UNSET_VARIABLE".into()),
            ..base.clone()
        };
        assert!(build_providers(&[missing_env]).is_err());
        let mock = ProviderConfig {
            api: ProviderApi::Mock,
            ..base
        };
        assert_eq!(
            build_providers(&[mock.clone(), mock]).err(),
            Some(ConfigError::DuplicateKind(ProviderKind::Music))
        );
        assert!(ProvidersFile::parse("[[providers]]\nname='a'\nkind='text'\nbogus=1").is_err());
    }
}
