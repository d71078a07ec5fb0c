//! Generative model access: provider traits, request bounds, prompts,
//! safety checks, the asset studio and the background job queue.

pub mod config;
pub mod http;
pub mod jobs;
pub mod library;
pub mod mock;
pub mod prompts;
pub mod provider;
pub mod request;
pub mod safety;
pub mod studio;

use thiserror::Error;

pub use provider::{
    AudioGenerator, ChatMessage, ImageGenerator, Mask, Media, ProviderError, Role, Segmenter, SpeechSynthesizer,
    TextGenerator,
};
pub use request::{AudioKind, AudioRequest, ImageRequest, JobRequest, SegmentHint, SegmentRequest, SpeechRequest};
pub use safety::{DenylistPolicy, SafetyPolicy, SafetyVerdict};
pub use studio::{GeneratedAsset, Providers, Studio};

use crate::model::AssetId;
use crate::store::StoreError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenError {
    #[error("{param} = {value} is outside [{min}, {max}]")]
    Range {
        param: &'static str,
        value: String,
        min: String,
        max: String,
    },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Provider(#[from] ProviderError),
    #[error("prompt blocked by safety policy ({})", categories.join(", "))]
    SafetyBlocked { categories: Vec<String> },
    #[error("unknown asset {0}")]
    UnknownAsset(AssetId),
    #[error("segmentation produced an empty mask")]
    EmptyMask,
    #[error("asset store: {0}")]
    Store(String),
}

impl GenError {
    pub fn code(&self) -> &'static str {
        match self {
            GenError::Range { .. } => "RangeError",
            GenError::InvalidRequest(_) => "InvalidRequest",
            GenError::Provider(_) => "ProviderError",
            GenError::SafetyBlocked { .. } => "SafetyBlocked",
            GenError::UnknownAsset(_) => "UnknownAsset",
            GenError::EmptyMask => "EmptyMask",
            GenError::Store(_) => "StoreError",
        }
    }
}

impl From<StoreError> for GenError {
    fn from(e: StoreError) -> Self {
        GenError::Store(e.to_string())
    }
}
