//! Network providers: an OpenAI-compatible chat endpoint and a
//! Stable Diffusion WebUI txt2img endpoint.
//!
//! These use blocking I/O. Build them and call them off any async runtime
//! thread (the job queue workers are plain threads).

use std::time::Duration;

use base64::Engine;
use serde_json::{json, Value};

use super::provider::{ChatMessage, ImageGenerator, Media, ProviderError, ProviderResult, TextGenerator};
use super::request::ImageRequest;

fn client(timeout: Duration) -> Result<reqwest::blocking::Client, ProviderError> {
    reqwest::blocking::Client::builder()
        .timeout(timeout)
        .build()
        .map_err(|e| ProviderError::Unavailable(e.to_string()))
}

fn status_error(status: u16, body: &str) -> ProviderError {
    let snippet: String = body.chars().take(200).collect();
    match status {
        401 | 403 => ProviderError::Auth(snippet),
        429 => ProviderError::RateLimited,
        408 | 504 => ProviderError::Timeout,
        500..=599 => ProviderError::Unavailable(format!("HTTP {status}: {snippet}")),
        _ => ProviderError::BadResponse(format!("HTTP {status}: {snippet}")),
    }
}

fn transport_error(e: reqwest::Error) -> ProviderError {
    if e.is_timeout() {
        ProviderError::Timeout
    } else {
        ProviderError::Unavailable(e.to_string())
    }
}

fn post_json(
    client: &reqwest::blocking::Client,
    url: &str,
    bearer: Option<&str>,
    body: &Value,
) -> ProviderResult<Value> {
    let mut req = client.post(url).json(body);
    if let Some(token) = bearer {
        req = req.bearer_auth(token);
    }
    let resp = req.send().map_err(transport_error)?;
    let status = resp.status().as_u16();
    let text = resp.text().map_err(transport_error)?;
    if !(200..300).contains(&status) {
        return Err(status_error(status, &text));
    }
    serde_json::from_str(&text).map_err(|e| ProviderError::BadResponse(format!("invalid JSON: {e}")))
}

pub fn chat_request_body(model: &str, messages: &[ChatMessage], temperature: Option<f64>) -> Value {
    let mut body = json!({ "model": model, "messages": messages });
    if let Some(t) = temperature {
        body["temperature"] = json!(t);
    }
    body
}

pub fn parse_chat_response(body: &Value) -> ProviderResult<String> {
    body.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| ProviderError::BadResponse("missing choices[0].message.content".into()))
}

pub struct OpenAiChat {
    name: String,
    url: String,
    model: String,
    temperature: Option<f64>,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl OpenAiChat {
    /// `endpoint` is the API base, for example `https://api.openai.com/v1`.
    pub fn new(
        name: &str,
        endpoint: &str,
        model: &str,
        api_key: Option<String>,
        timeout: Duration,
    ) -> Result<Self, ProviderError> {
        Ok(Self {
            name: name.to_string(),
            url: format!("{}/chat/completions", endpoint.trim_end_matches('/')),
            model: model.to_string(),
            temperature: None,
            api_key,
            client: client(timeout)?,
        })
    }
}

impl OpenAiChat {
    pub fn with_temperature(mut self, temperature: Option<f64>) -> Self {
        self.temperature = temperature;
        self
    }
}

impl TextGenerator for OpenAiChat {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, messages: &[ChatMessage]) -> ProviderResult<String> {
        let body = chat_request_body(&self.model, messages, self.temperature);
        parse_chat_response(&post_json(&self.client, &self.url, self.api_key.as_deref(), &body)?)
    }
}

pub fn txt2img_request_body(request: &ImageRequest, seed: u64) -> Value {
    let mut body = json!({
        "prompt": request.prompt,
        "negative_prompt": request.negative_prompt.clone().unwrap_or_default(),
        "batch_size": request.samples,
        "n_iter": 1,
        "seed": seed,
    });
    if let Some(steps) = request.denoise_steps {
        body["steps"] = json!(steps);
    }
    if request.panorama {
        body["width"] = json!(1024);
        body["height"] = json!(512);
    }
    if request.self_attention {
        body["alwayson_scripts"] = json!({ "Self Attention Guidance": { "args": [true] } });
    }
    body
}

pub fn parse_txt2img_response(body: &Value) -> ProviderResult<Vec<Media>> {
    let images = body
        .get("images")
        .and_then(Value::as_array)
        .ok_or_else(|| ProviderError::BadResponse("missing images array".into()))?;
    images
        .iter()
        .map(|img| {
            let b64 = img
                .as_str()
                .ok_or_else(|| ProviderError::BadResponse("image entry is not a string".into()))?;
            // Some builds prefix a data URL header.
            let b64 = b64.split_once(',').map_or(b64, |(_, data)| data);
            let bytes = base64::engine::general_purpose::STANDARD
                .decode(b64)
                .map_err(|e| ProviderError::BadResponse(format!("bad base64 image: {e}")))?;
            Ok(Media {
                bytes,
                media_type: "image/png".into(),
            })
        })
        .collect()
}

pub struct SdWebUi {
    name: String,
    url: String,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
}

impl SdWebUi {
    pub fn new(name: &str, endpoint: &str, api_key: Option<String>, timeout: Duration) -> Result<Self, ProviderError> {
        Ok(Self {
            name: name.to_string(),
            url: format!("{}/sdapi/v1/txt2img", endpoint.trim_end_matches('/')),
            api_key,
            client: client(timeout)?,
        })
    }
}

impl ImageGenerator for SdWebUi {
    fn name(&self) -> &str {
        &self.name
    }

    fn generate(&self, request: &ImageRequest, seed: u64) -> ProviderResult<Vec<Media>> {
        let body = txt2img_request_body(request, seed);
        let mut images = parse_txt2img_response(&post_json(&self.client, &self.url, self.api_key.as_deref(), &body)?)?;
        // The WebUI may append extra images (grids, masks) after the batch.
        images.truncate(request.samples as usize);
        Ok(images)
    }

    // A single WebUI instance renders one batch at a time.
    fn serial_only(&self) -> bool {
        true
    }
}
