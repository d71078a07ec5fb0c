//! Generation requests and the bounds checked before any provider is called.

use serde::{Deserialize, Serialize};

use super::provider::ChatMessage;
use super::GenError;
use crate::model::{AssetId, VoiceProfile};

pub const MIN_SAMPLES: u32 = 1;
pub const MAX_SAMPLES: u32 = 4;
pub const MIN_AUDIO_SECONDS: f64 = 1.0;
pub const MAX_AUDIO_SECONDS: f64 = 10.0;

fn default_samples() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRequest {
    pub prompt: String,
    #[serde(default)]
    pub negative_prompt: Option<String>,
    #[serde(default = "default_samples")]
    pub samples: u32,
    #[serde(default)]
    pub denoise_steps: Option<u32>,
    #[serde(default)]
    pub panorama: bool,
    #[serde(default)]
    pub self_attention: bool,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl ImageRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            negative_prompt: None,
            samples: 1,
            denoise_steps: None,
            panorama: false,
            self_attention: false,
            seed: None,
        }
    }

    pub fn validate(&self) -> Result<(), GenError> {
        if !(MIN_SAMPLES..=MAX_SAMPLES).contains(&self.samples) {
            return Err(GenError::Range {
                param: "samples",
                value: self.samples.to_string(),
                min: MIN_SAMPLES.to_string(),
                max: MAX_SAMPLES.to_string(),
            });
        }
        if self.prompt.trim().is_empty() {
            return Err(GenError::InvalidRequest("prompt must not be empty".into()));
        }
        if self.denoise_steps == Some(0) {
            return Err(GenError::InvalidRequest("denoise_steps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AudioKind {
    SoundEffect,
    Music,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AudioRequest {
    pub kind: AudioKind,
    pub prompt: String,
    pub duration_s: f64,
    #[serde(default)]
    pub top_p: Option<f64>,
    #[serde(default)]
    pub guidance_scale: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl AudioRequest {
    pub fn new(kind: AudioKind, prompt: impl Into<String>, duration_s: f64) -> Self {
        Self {
            kind,
            prompt: prompt.into(),
            duration_s,
            top_p: None,
            guidance_scale: None,
            seed: None,
        }
    }

    pub fn validate(&self) -> Result<(), GenError> {
        // NaN fails the range check as well.
        if !(self.duration_s >= MIN_AUDIO_SECONDS && self.duration_s <= MAX_AUDIO_SECONDS) {
            return Err(GenError::Range {
                param: "duration_s",
                value: self.duration_s.to_string(),
                min: MIN_AUDIO_SECONDS.to_string(),
                max: MAX_AUDIO_SECONDS.to_string(),
            });
        }
        if let Some(p) = self.top_p {
            if !(p > 0.0 && p <= 1.0) {
                return Err(GenError::Range {
                    param: "top_p",
                    value: p.to_string(),
                    min: "0 (exclusive)".into(),
                    max: "1".into(),
                });
            }
        }
        if let Some(g) = self.guidance_scale {
            if !(g.is_finite() && g > 0.0) {
                return Err(GenError::InvalidRequest("guidance_scale must be positive".into()));
            }
        }
        if self.prompt.trim().is_empty() {
            return Err(GenError::InvalidRequest("prompt must not be empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeechRequest {
    pub text: String,
    pub profile: VoiceProfile,
}

impl SpeechRequest {
    pub fn validate(&self) -> Result<(), GenError> {
        if self.text.trim().is_empty() {
            return Err(GenError::InvalidRequest("speech text must not be empty".into()));
        }
        if let Some(reason) = self.profile.defect() {
            return Err(GenError::InvalidRequest(format!("voice profile: {reason}")));
        }
        Ok(())
    }
}

/// Where the subject is, in normalized image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SegmentHint {
    Point { x: f64, y: f64 },
    Box { x0: f64, y0: f64, x1: f64, y1: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRequest {
    pub image: AssetId,
    pub hint: SegmentHint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
}

/// Anything that can be queued as a generation job.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum JobRequest {
    Image(ImageRequest),
    Audio(AudioRequest),
    Speech(SpeechRequest),
    Segmentation(SegmentRequest),
    Chat(ChatRequest),
}

impl JobRequest {
    pub fn validate(&self) -> Result<(), GenError> {
        match self {
            JobRequest::Image(r) => r.validate(),
            JobRequest::Audio(r) => r.validate(),
            JobRequest::Speech(r) => r.validate(),
            JobRequest::Segmentation(_) => Ok(()),
            JobRequest::Chat(r) if r.messages.is_empty() => {
                Err(GenError::InvalidRequest("chat request has no messages".into()))
            }
            JobRequest::Chat(_) => Ok(()),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            JobRequest::Image(_) => "image",
            JobRequest::Audio(_) => "audio",
            JobRequest::Speech(_) => "speech",
            JobRequest::Segmentation(_) => "segmentation",
            JobRequest::Chat(_) => "chat",
        }
    }
}
