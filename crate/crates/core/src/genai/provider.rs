use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::request::{AudioRequest, ImageRequest, SegmentHint};
use crate::model::VoiceProfile;

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum ProviderError {
    #[error("provider timed out")]
    Timeout,
    #[error("provider rejected credentials: {0}")]
    Auth(String),
    #[error("provider rate limit reached")]
    RateLimited,
    #[error("provider unavailable: {0}")]
    Unavailable(String),
    #[error("unexpected provider response: {0}")]
    BadResponse(String),
}

pub type ProviderResult<T> = Result<T, ProviderError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// Bytes returned by a provider plus their media type.
#[derive(Clone, PartialEq, Eq)]
pub struct Media {
    pub bytes: Vec<u8>,
    pub media_type: String,
}

impl fmt::Debug for Media {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Media")
            .field("media_type", &self.media_type)
            .field("len", &self.bytes.len())
            .finish()
    }
}

/// Per-pixel opacity, row-major, 0 = transparent and 255 = opaque.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: u32,
    pub height: u32,
    pub alpha: Vec<u8>,
}

impl Mask {
    pub fn is_empty(&self) -> bool {
        self.alpha.iter().all(|a| *a == 0)
    }
}

// Every remote call goes through one of these traits. Implementations must be
// callable from several threads at once unless `serial_only` says otherwise.

pub trait TextGenerator: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, messages: &[ChatMessage]) -> ProviderResult<String>;
    fn serial_only(&self) -> bool {
        false
    }
}

pub trait ImageGenerator: Send + Sync {
    fn name(&self) -> &str;
    /// Must return exactly `request.samples` images.
    fn generate(&self, request: &ImageRequest, seed: u64) -> ProviderResult<Vec<Media>>;
    fn serial_only(&self) -> bool {
        false
    }
}

pub trait AudioGenerator: Send + Sync {
    fn name(&self) -> &str;
    fn generate(&self, request: &AudioRequest, seed: u64) -> ProviderResult<Media>;
    fn serial_only(&self) -> bool {
        false
    }
}

pub trait Segmenter: Send + Sync {
    fn name(&self) -> &str;
    /// Returns a mask with the same dimensions as `image`.
    fn segment(&self, image: &Media, hint: &SegmentHint) -> ProviderResult<Mask>;
    fn serial_only(&self) -> bool {
        false
    }
}

pub trait SpeechSynthesizer: Send + Sync {
    fn name(&self) -> &str;
    fn synthesize(&self, text: &str, profile: &VoiceProfile) -> ProviderResult<Media>;
    fn serial_only(&self) -> bool {
        false
    }
}
