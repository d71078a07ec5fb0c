//! Fixed system prompts, field-based prompt templates and friendly labels
//! for advanced generation parameters.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::provider::{ChatMessage, TextGenerator};
use super::GenError;

/// System prompt for the storyline co-writing chat.
pub const STORYLINE_SYSTEM_PROMPT: &str = include_str!("../../resources/prompts/storyline_system.txt");
/// System prompt for the screenplay compiler model.
pub const SCREENPLAY_SYSTEM_PROMPT: &str = include_str!("../../resources/prompts/screenplay_system.txt");
/// User prompt for screenplay compilation; the storyline follows it.
pub const SCREENPLAY_REQUEST_TEMPLATE: &str = include_str!("../../resources/prompts/screenplay_request.txt");
/// System prompt for the prompt-writing assistant in the asset creator.
pub const PROMPT_REFINE_SYSTEM_PROMPT: &str = include_str!("../../resources/prompts/prompt_refine_system.txt");
/// Prefix for storyboard placeholder backgrounds.
pub const PLACEHOLDER_BACKGROUND_TEMPLATE: &str = include_str!("../../resources/prompts/placeholder_background.txt");

pub fn screenplay_request(storyline: &str) -> String {
    format!("{SCREENPLAY_REQUEST_TEMPLATE} {storyline}")
}

pub fn placeholder_background_prompt(description: &str) -> String {
    format!("{PLACEHOLDER_BACKGROUND_TEMPLATE} {}", description.trim())
}

/// Asks the text model for a more vivid version of `initial`.
pub fn refine_prompt(initial: &str, llm: &dyn TextGenerator) -> Result<String, GenError> {
    if initial.trim().is_empty() {
        return Err(GenError::InvalidRequest("initial prompt must not be empty".into()));
    }
    let messages = [
        ChatMessage::system(PROMPT_REFINE_SYSTEM_PROMPT),
        ChatMessage::user(initial),
    ];
    Ok(llm.complete(&messages)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("template {template} has no field {field}")]
    UnknownField { template: String, field: String },
    #[error("all fields of template {0} are empty")]
    EmptyPrompt(String),
    #[error("no template named {0}")]
    UnknownTemplate(String),
}

/// A prompt assembled from named fields, joined in field order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub name: String,
    pub fields: Vec<String>,
    pub separator: String,
}

impl PromptTemplate {
    pub fn new(name: &str, fields: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            fields: fields.iter().map(|f| f.to_string()).collect(),
            separator: ", ".to_string(),
        }
    }

    /// Joins the non-blank values in field order. Unknown keys are an error.
    pub fn render(&self, values: &BTreeMap<String, String>) -> Result<String, TemplateError> {
        if let Some(unknown) = values.keys().find(|k| !self.fields.contains(k)) {
            return Err(TemplateError::UnknownField {
                template: self.name.clone(),
                field: unknown.clone(),
            });
        }
        let parts: Vec<&str> = self
            .fields
            .iter()
            .filter_map(|f| values.get(f))
            .map(|v| v.trim())
            .filter(|v| !v.is_empty())
            .collect();
        if parts.is_empty() {
            return Err(TemplateError::EmptyPrompt(self.name.clone()));
        }
        Ok(parts.join(&self.separator))
    }
}

pub fn builtin_templates() -> Vec<PromptTemplate> {
    vec![
        PromptTemplate::new(
            "background",
            &["medium", "setting", "time_of_day", "artists", "details"],
        ),
        PromptTemplate::new("character", &["medium", "subject", "pose", "artists", "details"]),
        PromptTemplate::new("sound_effect", &["source", "action", "environment", "details"]),
        PromptTemplate::new("music", &["genre", "mood", "instruments", "tempo"]),
    ]
}

pub fn template(name: &str) -> Result<PromptTemplate, TemplateError> {
    builtin_templates()
        .into_iter()
        .find(|t| t.name == name)
        .ok_or_else(|| TemplateError::UnknownTemplate(name.to_string()))
}

/// Plain-language name and tooltip for an advanced generation parameter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParameterLabel {
    pub param: &'static str,
    pub label: &'static str,
    pub tooltip: &'static str,
}

pub const PARAMETER_LABELS: &[ParameterLabel] = &[
    ParameterLabel {
        param: "denoise_steps",
        label: "Boost clarity",
        tooltip: "More passes remove more noise, giving a cleaner and more focused picture. Each extra pass adds to the wait.",
    },
    ParameterLabel {
        param: "negative_prompt",
        label: "Things to leave out",
        tooltip: "Describe what should not appear in the picture.",
    },
    ParameterLabel {
        param: "samples",
        label: "Number of pictures",
        tooltip: "How many versions to make at once, from 1 to 4.",
    },
    ParameterLabel {
        param: "seed",
        label: "Variation number",
        tooltip: "Reusing a number with the same description gives the same result again.",
    },
    ParameterLabel {
        param: "panorama",
        label: "Wide view",
        tooltip: "Makes a wide picture suited to scrolling backgrounds.",
    },
    ParameterLabel {
        param: "self_attention",
        label: "Sharpen details",
        tooltip: "Asks the model to look harder at small details. Slower.",
    },
    ParameterLabel {
        param: "duration_s",
        label: "Length",
        tooltip: "Clip length in seconds, from 1 to 10.",
    },
    ParameterLabel {
        param: "top_p",
        label: "Surprise",
        tooltip: "Lower values keep the sound predictable, higher values allow more unusual results.",
    },
    ParameterLabel {
        param: "guidance_scale",
        label: "Stick to my description",
        tooltip: "Higher values follow the description more literally.",
    },
    ParameterLabel {
        param: "pitch",
        label: "Voice pitch",
        tooltip: "Raise or lower the voice.",
    },
    ParameterLabel {
        param: "speed",
        label: "Speaking speed",
        tooltip: "1 is normal speed; 2 is twice as fast.",
    },
];

pub fn parameter_label(param: &str) -> Option<&'static ParameterLabel> {
    PARAMETER_LABELS.iter().find(|l| l.param == param)
}
