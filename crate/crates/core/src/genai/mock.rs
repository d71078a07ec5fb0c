//! Seeded offline stand-ins for every provider kind.
//!
//! Outputs are pure functions of the request and seed, so asset ids are
//! stable across runs. Each mock counts its calls and can be told to fail
//! or to sleep before answering.

use std::io::Cursor;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use image::{ImageFormat, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::prompts::{PROMPT_REFINE_SYSTEM_PROMPT, SCREENPLAY_REQUEST_TEMPLATE, SCREENPLAY_SYSTEM_PROMPT};
use super::provider::{
    AudioGenerator, ChatMessage, ImageGenerator, Mask, Media, ProviderError, ProviderResult, Role, Segmenter,
    SpeechSynthesizer, TextGenerator,
};
use super::request::{AudioRequest, ImageRequest, SegmentHint};
use crate::model::VoiceProfile;

pub const MOCK_IMAGE_SIDE: u32 = 64;
const MOCK_SAMPLE_RATE: u32 = 8_000;

/// Call counting, latency and fault injection shared by all mocks.
#[derive(Debug, Default)]
pub struct MockControl {
    calls: AtomicUsize,
    latency: Mutex<Duration>,
    failure: Mutex<Option<ProviderError>>,
}

impl MockControl {
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn set_latency(&self, latency: Duration) {
        *self.latency.lock().expect("mock lock poisoned") = latency;
    }

    /// Every following call fails with `error` until cleared with `None`.
    pub fn fail_with(&self, error: Option<ProviderError>) {
        *self.failure.lock().expect("mock lock poisoned") = error;
    }

    fn enter(&self) -> ProviderResult<()> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let latency = *self.latency.lock().expect("mock lock poisoned");
        if !latency.is_zero() {
            std::thread::sleep(latency);
        }
        match self.failure.lock().expect("mock lock poisoned").clone() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

fn seed_from(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

#[derive(Debug, Clone)]
pub enum MockReply {
    /// Screenplays built from the storyline, short questions in chat,
    /// and lightly embellished prompts for the refine assistant.
    Auto,
    /// Returns the last user message unchanged.
    Echo,
    /// Always returns this text.
    Fixed(String),
    /// Returns these replies in order, then repeats the last one.
    Script(Vec<String>),
}

pub struct MockText {
    pub control: MockControl,
    reply: MockReply,
    script_pos: AtomicUsize,
    requests: Mutex<Vec<Vec<ChatMessage>>>,
}

impl MockText {
    pub fn new(reply: MockReply) -> Self {
        Self {
            control: MockControl::default(),
            reply,
            script_pos: AtomicUsize::new(0),
            requests: Mutex::new(Vec::new()),
        }
    }

    pub fn auto() -> Self {
        Self::new(MockReply::Auto)
    }

    pub fn echo() -> Self {
        Self::new(MockReply::Echo)
    }

    pub fn fixed(reply: impl Into<String>) -> Self {
        Self::new(MockReply::Fixed(reply.into()))
    }

    /// Every message list this mock has received, oldest first.
    pub fn requests(&self) -> Vec<Vec<ChatMessage>> {
        self.requests.lock().expect("mock lock poisoned").clone()
    }

    pub fn last_request(&self) -> Option<Vec<ChatMessage>> {
        self.requests.lock().expect("mock lock poisoned").last().cloned()
    }
}

fn last_user(messages: &[ChatMessage]) -> &str {
    messages
        .iter()
        .rev()
        .find(|m| m.role == Role::User)
        .map_or("", |m| m.content.as_str())
}

fn quote_free(s: &str) -> String {
    s.replace(['\'', '"'], "")
}

/// One scene per paragraph, written the way the prompt asks: single quotes.
fn mock_screenplay(storyline: &str) -> String {
    let paragraphs: Vec<&str> = storyline
        .split("\n\n")
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .collect();
    let scenes: Vec<String> = paragraphs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let first_sentence = p.split(['.', '!', '?']).next().unwrap_or(p).trim();
            let name: String = first_sentence.split_whitespace().take(6).collect::<Vec<_>>().join(" ");
            let name = if name.is_empty() { format!("Scene {}", i + 1) } else { quote_free(&name) };
            let cast: Vec<String> = p
                .split_whitespace()
                .skip(1)
                .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()))
                .filter(|w| w.chars().next().is_some_and(char::is_uppercase) && w.len() > 1)
                .map(quote_free)
                .fold(Vec::new(), |mut acc, w| {
                    if !acc.contains(&w) {
                        acc.push(w);
                    }
                    acc
                });
            let dialogue = cast
                .first()
                .map(|speaker| format!("{{'speaker':'{speaker}','speech':'{}'}}", quote_free(first_sentence)))
                .unwrap_or_default();
            format!(
                "{{'sceneName':'{name}','backgroundDescription':'{}','narration':'{}','characters':[{}],'dialogue':[{dialogue}]}}",
                quote_free(&name.to_lowercase()),
                quote_free(p),
                cast.iter().map(|c| format!("'{c}'")).collect::<Vec<_>>().join(","),
            )
        })
        .collect();
    format!("[{}]", scenes.join(","))
}

impl TextGenerator for MockText {
    fn name(&self) -> &str {
        "mock-text"
    }

    fn complete(&self, messages: &[ChatMessage]) -> ProviderResult<String> {
        self.requests
            .lock()
            .expect("mock lock poisoned")
            .push(messages.to_vec());
        self.control.enter()?;
        let user = last_user(messages);
        Ok(match &self.reply {
            MockReply::Echo => user.to_string(),
            MockReply::Fixed(s) => s.clone(),
            MockReply::Script(replies) => {
                let i = self.script_pos.fetch_add(1, Ordering::SeqCst);
                replies.get(i).or(replies.last()).cloned().unwrap_or_default()
            }
            MockReply::Auto => {
                let system = messages
                    .first()
                    .filter(|m| m.role == Role::System)
                    .map(|m| m.content.as_str());
                match system {
                    Some(SCREENPLAY_SYSTEM_PROMPT) => {
                        let storyline = user.strip_prefix(SCREENPLAY_REQUEST_TEMPLATE).unwrap_or(user);
                        mock_screenplay(storyline)
                    }
                    Some(PROMPT_REFINE_SYSTEM_PROMPT) => {
                        format!("{}, soft warm light, rich texture, gentle colours", user.trim())
                    }
                    _ => {
                        let turns = messages.iter().filter(|m| m.role == Role::User).count();
                        format!("I like that. What should happen next? (turn {turns})")
                    }
                }
            }
        })
    }
}

fn encode_png(img: &RgbImage) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .expect("in-memory png encoding cannot fail");
    out.into_inner()
}

/// Draws a blocky pattern from the prompt, seed and sample index.
pub fn mock_image(prompt: &str, seed: u64, index: u32) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed_from(&[
        prompt.as_bytes(),
        &seed.to_le_bytes(),
        &index.to_le_bytes(),
    ]));
    let base = [rng.gen::<u8>(), rng.gen::<u8>(), rng.gen::<u8>()];
    let cells: Vec<[u8; 3]> = (0..64)
        .map(|_| {
            let j = rng.gen_range(0..48u8);
            [
                base[0].wrapping_add(j),
                base[1].wrapping_add(j),
                base[2].wrapping_add(j),
            ]
        })
        .collect();
    let img = RgbImage::from_fn(MOCK_IMAGE_SIDE, MOCK_IMAGE_SIDE, |x, y| {
        Rgb(cells[((y / 8) * 8 + x / 8) as usize])
    });
    encode_png(&img)
}

#[derive(Default)]
pub struct MockImage {
    pub control: MockControl,
}

impl MockImage {
    pub fn new() -> Self {
        Self::default()
    }
}

impl ImageGenerator for MockImage {
    fn name(&self) -> &str {
        "mock-diffusion"
    }

    fn generate(&self, request: &ImageRequest, seed: u64) -> ProviderResult<Vec<Media>> {
        self.control.enter()?;
        let mut key = request.prompt.clone();
        if let Some(neg) = &request.negative_prompt {
            key.push_str("\u{0}neg:");
            key.push_str(neg);
        }
        key.push_str(&format!(
            "\u{0}{:?}/{}/{}",
            request.denoise_steps, request.panorama, request.self_attention
        ));
        Ok((0..request.samples)
            .map(|i| Media {
                bytes: mock_image(&key, seed, i),
                media_type: "image/png".into(),
            })
            .collect())
    }
}

/// 16-bit mono PCM wrapped in a RIFF/WAVE header.
pub fn wav_bytes(samples: &[i16], sample_rate: u32) -> Vec<u8> {
    let data_len = (samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for s in samples {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

fn tone(seed: u64, seconds: f64, base_hz: f64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (seconds * f64::from(MOCK_SAMPLE_RATE)).round() as usize;
    let hz = base_hz * (1.0 + rng.gen_range(0.0..0.5));
    let samples: Vec<i16> = (0..n)
        .map(|i| {
            let t = i as f64 / f64::from(MOCK_SAMPLE_RATE);
            let noise: f64 = rng.gen_range(-0.05..0.05);
            (((2.0 * std::f64::consts::PI * hz * t).sin() * 0.5 + noise) * f64::from(i16::MAX)) as i16
        })
        .collect();
    wav_bytes(&samples, MOCK_SAMPLE_RATE)
}

pub struct MockAudio {
    pub control: MockControl,
    name: String,
    base_hz: f64,
}

impl MockAudio {
    pub fn sound_effects() -> Self {
        Self {
            control: MockControl::default(),
            name: "mock-audiogen".into(),
            base_hz: 220.0,
        }
    }

    pub fn music() -> Self {
        Self {
            control: MockControl::default(),
            name: "mock-musicgen".into(),
            base_hz: 440.0,
        }
    }
}

impl AudioGenerator for MockAudio {
    fn name(&self) -> &str {
        &self.name
    }

    fn generate(&self, request: &AudioRequest, seed: u64) -> ProviderResult<Media> {
        self.control.enter()?;
        let key = format!(
            "{}\u{0}{}\u{0}{:?}\u{0}{:?}",
            request.prompt, request.duration_s, request.top_p, request.guidance_scale
        );
        Ok(Media {
            bytes: tone(
                seed_from(&[key.as_bytes(), &seed.to_le_bytes()]),
                request.duration_s,
                self.base_hz,
            ),
            media_type: "audio/wav".into(),
        })
    }
}

/// Returns the hint itself as the mask: the box, or a box of side
/// `POINT_HALF_WIDTH * 2` around a point, clipped to the image.
#[derive(Default)]
pub struct MockSegmenter {
    pub control: MockControl,
}

impl MockSegmenter {
    pub const POINT_HALF_WIDTH: f64 = 0.15;

    pub fn new() -> Self {
        Self::default()
    }
}

impl Segmenter for MockSegmenter {
    fn name(&self) -> &str {
        "mock-segmenter"
    }

    fn segment(&self, image: &Media, hint: &SegmentHint) -> ProviderResult<Mask> {
        self.control.enter()?;
        let decoded = image::load_from_memory(&image.bytes)
            .map_err(|e| ProviderError::BadResponse(format!("cannot decode source image: {e}")))?;
        let (w, h) = (decoded.width(), decoded.height());
        let (x0, y0, x1, y1) = match *hint {
            SegmentHint::Box { x0, y0, x1, y1 } => (x0.min(x1), y0.min(y1), x0.max(x1), y0.max(y1)),
            SegmentHint::Point { x, y } => {
                let r = Self::POINT_HALF_WIDTH;
                (x - r, y - r, x + r, y + r)
            }
        };
        let alpha = (0..h)
            .flat_map(|py| (0..w).map(move |px| (px, py)))
            .map(|(px, py)| {
                let cx = (f64::from(px) + 0.5) / f64::from(w);
                let cy = (f64::from(py) + 0.5) / f64::from(h);
                if cx >= x0 && cx < x1 && cy >= y0 && cy < y1 {
                    255
                } else {
                    0
                }
            })
            .collect();
        Ok(Mask {
            width: w,
            height: h,
            alpha,
        })
    }
}

#[derive(Default)]
pub struct MockSpeech {
    pub control: MockControl,
}

impl MockSpeech {
    pub fn new() -> Self {
        Self::default()
    }
}

impl SpeechSynthesizer for MockSpeech {
    fn name(&self) -> &str {
        "mock-tts"
    }

    fn synthesize(&self, text: &str, profile: &VoiceProfile) -> ProviderResult<Media> {
        self.control.enter()?;
        let seed = seed_from(&[
            text.as_bytes(),
            profile.voice_id.as_bytes(),
            &profile.pitch.to_le_bytes(),
            &profile.speed.to_le_bytes(),
        ]);
        // Roughly 15 characters per second at normal speed.
        let seconds = (text.chars().count() as f64 / 15.0 / profile.speed).clamp(0.25, 30.0);
        Ok(Media {
            bytes: tone(seed, seconds, 180.0 * 2f64.powf(profile.pitch / 12.0)),
            media_type: "audio/wav".into(),
        })
    }
}
