//! The asset studio: validates requests, calls providers, stores the bytes
//! by content hash and records provenance for every produced asset.

use std::collections::BTreeMap;
use std::io::Cursor;
use std::sync::{Arc, Mutex, RwLock};

use image::{ImageFormat, RgbaImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::jobs::{JobExecutor, JobOutput};
use super::library::{ExampleLibrary, LibraryEntry};
use super::mock::{MockAudio, MockImage, MockSegmenter, MockSpeech, MockText};
use super::prompts::{self, placeholder_background_prompt};
use super::provider::{
    AudioGenerator, ChatMessage, ImageGenerator, Media, ProviderError, Segmenter, SpeechSynthesizer, TextGenerator,
};
use super::request::{AudioKind, AudioRequest, ImageRequest, JobRequest, SegmentRequest, SpeechRequest};
use super::safety::{DenylistPolicy, SafetyPolicy, SafetyVerdict};
use super::GenError;
use crate::clock::{Clock, SystemClock};
use crate::model::{AssetId, AssetKind, AssetRef, Provenance};
use crate::store::{AssetStore, MemoryAssetStore};
use crate::storyboard::BackgroundSource;

#[derive(Clone)]
pub struct Providers {
    pub text: Arc<dyn TextGenerator>,
    pub image: Arc<dyn ImageGenerator>,
    pub sound_effects: Arc<dyn AudioGenerator>,
    pub music: Arc<dyn AudioGenerator>,
    pub segmenter: Arc<dyn Segmenter>,
    pub speech: Arc<dyn SpeechSynthesizer>,
}

impl Providers {
    pub fn mock() -> Self {
        Self {
            text: Arc::new(MockText::auto()),
            image: Arc::new(MockImage::new()),
            sound_effects: Arc::new(MockAudio::sound_effects()),
            music: Arc::new(MockAudio::music()),
            segmenter: Arc::new(MockSegmenter::new()),
            speech: Arc::new(MockSpeech::new()),
        }
    }

    pub fn serial_only(&self) -> bool {
        self.text.serial_only()
            || self.image.serial_only()
            || self.sound_effects.serial_only()
            || self.music.serial_only()
            || self.segmenter.serial_only()
            || self.speech.serial_only()
    }

    fn audio(&self, kind: AudioKind) -> &Arc<dyn AudioGenerator> {
        match kind {
            AudioKind::SoundEffect => &self.sound_effects,
            AudioKind::Music => &self.music,
        }
    }
}

/// A stored asset plus the safety verdict shown next to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedAsset {
    pub asset: AssetRef,
    pub safety: SafetyVerdict,
}

pub struct Studio {
    providers: Providers,
    assets: Arc<dyn AssetStore>,
    refs: RwLock<BTreeMap<AssetId, AssetRef>>,
    library: ExampleLibrary,
    safety: Arc<dyn SafetyPolicy>,
    clock: Arc<dyn Clock>,
    rng: Mutex<ChaCha8Rng>,
}

impl Studio {
    pub fn new(providers: Providers, assets: Arc<dyn AssetStore>) -> Self {
        Self {
            providers,
            assets,
            refs: RwLock::new(BTreeMap::new()),
            library: ExampleLibrary::new(),
            safety: Arc::new(DenylistPolicy::default()),
            clock: Arc::new(SystemClock),
            rng: Mutex::new(ChaCha8Rng::from_entropy()),
        }
    }

    /// Mock providers, in-memory storage and a fixed clock and seed.
    pub fn mock() -> Self {
        Self::new(Providers::mock(), Arc::new(MemoryAssetStore::new()))
            .with_clock(Arc::new(crate::clock::FixedClock::epoch()))
            .with_seed(0)
    }

    pub fn with_safety(mut self, policy: Arc<dyn SafetyPolicy>) -> Self {
        self.safety = policy;
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    /// Seeds the generator used when a request does not carry its own seed.
    pub fn with_seed(self, seed: u64) -> Self {
        *self.rng.lock().expect("rng lock poisoned") = ChaCha8Rng::seed_from_u64(seed);
        self
    }

    pub fn providers(&self) -> &Providers {
        &self.providers
    }

    pub fn store(&self) -> &Arc<dyn AssetStore> {
        &self.assets
    }

    pub fn library(&self) -> &ExampleLibrary {
        &self.library
    }

    pub fn safety_policy(&self) -> &dyn SafetyPolicy {
        self.safety.as_ref()
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn asset(&self, id: &AssetId) -> Option<AssetRef> {
        self.refs.read().expect("asset refs lock poisoned").get(id).cloned()
    }

    pub fn assets(&self) -> Vec<AssetRef> {
        self.refs
            .read()
            .expect("asset refs lock poisoned")
            .values()
            .cloned()
            .collect()
    }

    pub fn asset_bytes(&self, id: &AssetId) -> Result<Vec<u8>, GenError> {
        self.assets.get(id)?.ok_or_else(|| GenError::UnknownAsset(id.clone()))
    }

    /// Makes an existing reference (for example one loaded from a package) known to the studio.
    pub fn register(&self, asset: AssetRef) {
        self.refs
            .write()
            .expect("asset refs lock poisoned")
            .insert(asset.asset_id.clone(), asset);
    }

    /// Stores bytes supplied by the user rather than a provider.
    pub fn import(&self, bytes: &[u8], kind: AssetKind, media_type: &str, label: &str) -> Result<AssetRef, GenError> {
        if !kind.accepts_media_type(media_type) {
            return Err(GenError::InvalidRequest(format!(
                "media type {media_type} does not fit asset kind {kind:?}"
            )));
        }
        self.store_media(
            Media {
                bytes: bytes.to_vec(),
                media_type: media_type.to_string(),
            },
            kind,
            self.provenance("upload", label, None, BTreeMap::new(), None),
        )
    }

    fn next_seed(&self, requested: Option<u64>) -> u64 {
        requested.unwrap_or_else(|| self.rng.lock().expect("rng lock poisoned").gen())
    }

    fn screen(&self, text: &str) -> Result<SafetyVerdict, GenError> {
        let verdict = self.safety.check_text(text);
        if verdict.allowed {
            Ok(verdict)
        } else {
            Err(GenError::SafetyBlocked {
                categories: verdict.categories,
            })
        }
    }

    fn provenance(
        &self,
        provider: &str,
        prompt: &str,
        negative_prompt: Option<String>,
        params: BTreeMap<String, Value>,
        seed: Option<u64>,
    ) -> Provenance {
        Provenance {
            provider_name: provider.to_string(),
            prompt: prompt.to_string(),
            negative_prompt,
            params,
            seed,
            created_at: self.clock.now(),
        }
    }

    fn store_media(&self, media: Media, kind: AssetKind, provenance: Provenance) -> Result<AssetRef, GenError> {
        if !kind.accepts_media_type(&media.media_type) {
            return Err(ProviderError::BadResponse(format!(
                "provider returned {} for a {kind:?} asset",
                media.media_type
            ))
            .into());
        }
        let asset_id = self.assets.put(&media.bytes)?;
        let mut refs = self.refs.write().expect("asset refs lock poisoned");
        // The first provenance recorded for identical bytes wins.
        let asset = refs
            .entry(asset_id.clone())
            .or_insert_with(|| AssetRef {
                asset_id,
                kind,
                media_type: media.media_type,
                byte_length: media.bytes.len() as u64,
                provenance,
            })
            .clone();
        Ok(asset)
    }

    fn finish(&self, asset: AssetRef, bytes_checked: &[u8], prompt_verdict: &SafetyVerdict) -> GeneratedAsset {
        self.library.record(LibraryEntry {
            prompt: asset.provenance.prompt.clone(),
            asset_id: asset.asset_id.clone(),
            kind: asset.kind,
        });
        let safety = prompt_verdict
            .clone()
            .merge(self.safety.check_asset(&asset, bytes_checked));
        GeneratedAsset { asset, safety }
    }

    pub fn generate_images(&self, request: &ImageRequest) -> Result<Vec<GeneratedAsset>, GenError> {
        request.validate()?;
        let mut verdict = self.screen(&request.prompt)?;
        if let Some(neg) = &request.negative_prompt {
            // Negative prompts name what to avoid, so they only contribute warnings.
            let mut v = self.safety.check_text(neg);
            v.allowed = true;
            verdict = verdict.merge(v);
        }
        let seed = self.next_seed(request.seed);
        let media = self.providers.image.generate(request, seed)?;
        if media.len() != request.samples as usize {
            return Err(ProviderError::BadResponse(format!(
                "asked for {} images, got {}",
                request.samples,
                media.len()
            ))
            .into());
        }
        media
            .into_iter()
            .enumerate()
            .map(|(i, m)| {
                let mut params = BTreeMap::new();
                params.insert("samples".into(), json!(request.samples));
                params.insert("sample_index".into(), json!(i));
                params.insert("denoise_steps".into(), json!(request.denoise_steps));
                params.insert("panorama".into(), json!(request.panorama));
                params.insert("self_attention".into(), json!(request.self_attention));
                let bytes = m.bytes.clone();
                let provenance = self.provenance(
                    self.providers.image.name(),
                    &request.prompt,
                    request.negative_prompt.clone(),
                    params,
                    Some(seed),
                );
                let asset = self.store_media(m, AssetKind::Image, provenance)?;
                Ok(self.finish(asset, &bytes, &verdict))
            })
            .collect()
    }

    pub fn generate_audio(&self, request: &AudioRequest) -> Result<GeneratedAsset, GenError> {
        request.validate()?;
        let verdict = self.screen(&request.prompt)?;
        let seed = self.next_seed(request.seed);
        let provider = self.providers.audio(request.kind);
        let media = provider.generate(request, seed)?;
        let bytes = media.bytes.clone();
        let mut params = BTreeMap::new();
        params.insert("duration_s".into(), json!(request.duration_s));
        params.insert("top_p".into(), json!(request.top_p));
        params.insert("guidance_scale".into(), json!(request.guidance_scale));
        let kind = match request.kind {
            AudioKind::SoundEffect => AssetKind::AudioEffect,
            AudioKind::Music => AssetKind::Music,
        };
        let provenance = self.provenance(provider.name(), &request.prompt, None, params, Some(seed));
        let asset = self.store_media(media, kind, provenance)?;
        Ok(self.finish(asset, &bytes, &verdict))
    }

    pub fn synthesize_speech(&self, request: &SpeechRequest) -> Result<GeneratedAsset, GenError> {
        request.validate()?;
        let verdict = self.screen(&request.text)?;
        let media = self.providers.speech.synthesize(&request.text, &request.profile)?;
        let bytes = media.bytes.clone();
        let mut params = BTreeMap::new();
        params.insert("voice_id".into(), json!(request.profile.voice_id));
        params.insert("voice_name".into(), json!(request.profile.name));
        params.insert("pitch".into(), json!(request.profile.pitch));
        params.insert("speed".into(), json!(request.profile.speed));
        let provenance = self.provenance(self.providers.speech.name(), &request.text, None, params, None);
        let asset = self.store_media(media, AssetKind::Speech, provenance)?;
        Ok(self.finish(asset, &bytes, &verdict))
    }

    /// Cuts the hinted subject out of a stored image as a transparent PNG
    /// cropped to the mask's bounding box.
    pub fn segment_character(&self, request: &SegmentRequest) -> Result<GeneratedAsset, GenError> {
        let source = self.asset_bytes(&request.image)?;
        let source_ref = self.asset(&request.image);
        let media_type = source_ref
            .as_ref()
            .map_or_else(|| "image/png".to_string(), |r| r.media_type.clone());
        let decoded = image::load_from_memory(&source)
            .map_err(|e| GenError::InvalidRequest(format!("asset {} is not a readable image: {e}", request.image)))?
            .to_rgba8();
        let mask = self.providers.segmenter.segment(
            &Media {
                bytes: source,
                media_type,
            },
            &request.hint,
        )?;
        if mask.width != decoded.width()
            || mask.height != decoded.height()
            || mask.alpha.len() != (mask.width as usize) * (mask.height as usize)
        {
            return Err(ProviderError::BadResponse(format!(
                "mask is {}x{}, image is {}x{}",
                mask.width,
                mask.height,
                decoded.width(),
                decoded.height()
            ))
            .into());
        }
        if mask.is_empty() {
            return Err(GenError::EmptyMask);
        }
        let cutout = compose_cutout(&decoded, &mask.alpha);
        let mut out = Cursor::new(Vec::new());
        cutout
            .write_to(&mut out, ImageFormat::Png)
            .map_err(|e| GenError::Store(format!("png encoding failed: {e}")))?;
        let bytes = out.into_inner();

        let prompt = source_ref
            .as_ref()
            .map(|r| r.provenance.prompt.clone())
            .unwrap_or_default();
        let mut params = BTreeMap::new();
        params.insert("source".into(), json!(request.image));
        params.insert("hint".into(), serde_json::to_value(request.hint).unwrap_or(Value::Null));
        let provenance = self.provenance(self.providers.segmenter.name(), &prompt, None, params, None);
        let asset = self.store_media(
            Media {
                bytes: bytes.clone(),
                media_type: "image/png".into(),
            },
            AssetKind::CharacterCutout,
            provenance,
        )?;
        let verdict = SafetyVerdict::allow();
        Ok(self.finish(asset, &bytes, &verdict))
    }

    pub fn refine_prompt(&self, initial: &str) -> Result<String, GenError> {
        self.screen(initial)?;
        prompts::refine_prompt(initial, self.providers.text.as_ref())
    }

    pub fn chat(&self, messages: &[ChatMessage]) -> Result<String, GenError> {
        if messages.is_empty() {
            return Err(GenError::InvalidRequest("chat request has no messages".into()));
        }
        Ok(self.providers.text.complete(messages)?)
    }
}

/// Applies `alpha` to `image` and crops to the smallest box holding every visible pixel.
fn compose_cutout(image: &RgbaImage, alpha: &[u8]) -> RgbaImage {
    let w = image.width();
    let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
    for (i, a) in alpha.iter().enumerate() {
        if *a > 0 {
            let (x, y) = (i as u32 % w, i as u32 / w);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
    }
    RgbaImage::from_fn(x1 - x0 + 1, y1 - y0 + 1, |x, y| {
        let (sx, sy) = (x + x0, y + y0);
        let mut px = *image.get_pixel(sx, sy);
        let a = alpha[(sy * w + sx) as usize];
        px[3] = ((u16::from(px[3]) * u16::from(a)) / 255) as u8;
        px
    })
}

impl JobExecutor for Studio {
    fn execute(&self, request: &JobRequest) -> Result<JobOutput, GenError> {
        Ok(match request {
            JobRequest::Image(r) => JobOutput::assets(self.generate_images(r)?),
            JobRequest::Audio(r) => JobOutput::assets(vec![self.generate_audio(r)?]),
            JobRequest::Speech(r) => JobOutput::assets(vec![self.synthesize_speech(r)?]),
            JobRequest::Segmentation(r) => JobOutput::assets(vec![self.segment_character(r)?]),
            JobRequest::Chat(r) => JobOutput::text(self.chat(&r.messages)?),
        })
    }

    fn serial_only(&self) -> bool {
        self.providers.serial_only()
    }
}

/// Seed for a placeholder background: the first 8 bytes of the description's digest.
pub fn placeholder_seed(description: &str) -> u64 {
    let digest = Sha256::digest(description.trim().as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

impl BackgroundSource for Studio {
    fn placeholder_background(&self, description: &str) -> Result<AssetRef, String> {
        let mut request = ImageRequest::new(placeholder_background_prompt(description));
        request.seed = Some(placeholder_seed(description));
        let mut out = self.generate_images(&request).map_err(|e| e.to_string())?;
        Ok(out.remove(0).asset)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genai::request::SegmentHint;
    use crate::model::VoiceProfile;

    #[test]
    fn same_seed_gives_same_asset_ids() {
        let a = Studio::mock();
        let b = Studio::mock();
        let mut req = ImageRequest::new("pelican sitting down");
        req.samples = 3;
        req.seed = Some(42);
        let ids = |s: &Studio| -> Vec<AssetId> {
            s.generate_images(&req)
                .unwrap()
                .into_iter()
                .map(|g| g.asset.asset_id)
                .collect()
        };
        let first = ids(&a);
        assert_eq!(first.len(), 3);
        assert_eq!(first, ids(&b));
        for id in &first {
            assert_eq!(a.asset(id).unwrap().provenance.seed, Some(42));
            assert!(a.store().contains(id).unwrap());
        }
    }

    #[test]
    fn missing_seed_comes_from_the_studio_rng() {
        let a = Studio::mock().with_seed(9);
        let b = Studio::mock().with_seed(9);
        let req = ImageRequest::new("a port");
        assert_eq!(
            a.generate_images(&req).unwrap()[0].asset.provenance.seed,
            b.generate_images(&req).unwrap()[0].asset.provenance.seed
        );
    }

    #[test]
    fn blocked_prompt_never_reaches_the_provider() {
        let image = Arc::new(MockImage::new());
        let providers = Providers {
            image: image.clone(),
            ..Providers::mock()
        };
        let studio = Studio::new(providers, Arc::new(MemoryAssetStore::new()));
        let err = studio.generate_images(&ImageRequest::new("nsfw portrait")).unwrap_err();
        assert_eq!(err.code(), "SafetyBlocked");
        assert_eq!(image.control.calls(), 0);
    }

    #[test]
    fn out_of_range_never_reaches_the_provider() {
        let audio = Arc::new(MockAudio::music());
        let providers = Providers {
            music: audio.clone(),
            ..Providers::mock()
        };
        let studio = Studio::new(providers, Arc::new(MemoryAssetStore::new()));
        let err = studio
            .generate_audio(&AudioRequest::new(AudioKind::Music, "calm harp", 11.0))
            .unwrap_err();
        assert_eq!(err.code(), "RangeError");
        assert_eq!(audio.control.calls(), 0);
    }

    #[test]
    fn audio_kinds_map_to_asset_kinds() {
        let studio = Studio::mock();
        let fx = studio
            .generate_audio(&AudioRequest::new(AudioKind::SoundEffect, "wolf howl", 2.0))
            .unwrap();
        assert_eq!(fx.asset.kind, AssetKind::AudioEffect);
        assert_eq!(fx.asset.media_type, "audio/wav");
        let music = studio
            .generate_audio(&AudioRequest::new(AudioKind::Music, "wolf howl", 2.0))
            .unwrap();
        assert_eq!(music.asset.kind, AssetKind::Music);
        assert_ne!(fx.asset.asset_id, music.asset.asset_id);
    }

    #[test]
    fn cutout_is_cropped_and_records_its_source() {
        let studio = Studio::mock();
        let mut req = ImageRequest::new("pelican");
        req.seed = Some(1);
        let source = studio.generate_images(&req).unwrap().remove(0).asset;
        let cut = studio
            .segment_character(&SegmentRequest {
                image: source.asset_id.clone(),
                hint: SegmentHint::Box {
                    x0: 0.25,
                    y0: 0.25,
                    x1: 0.75,
                    y1: 0.5,
                },
            })
            .unwrap();
        assert_eq!(cut.asset.kind, AssetKind::CharacterCutout);
        assert_eq!(cut.asset.provenance.params["source"], json!(source.asset_id));
        assert_eq!(cut.asset.provenance.prompt, "pelican");
        let img = image::load_from_memory(&studio.asset_bytes(&cut.asset.asset_id).unwrap()).unwrap();
        assert_eq!((img.width(), img.height()), (32, 16));
    }

    #[test]
    fn hint_outside_the_image_is_an_empty_mask() {
        let studio = Studio::mock();
        let source = studio.generate_images(&ImageRequest::new("x")).unwrap().remove(0).asset;
        let err = studio
            .segment_character(&SegmentRequest {
                image: source.asset_id,
                hint: SegmentHint::Box {
                    x0: 2.0,
                    y0: 2.0,
                    x1: 3.0,
                    y1: 3.0,
                },
            })
            .unwrap_err();
        assert_eq!(err, GenError::EmptyMask);
    }

    #[test]
    fn unknown_source_asset() {
        let err = Studio::mock()
            .segment_character(&SegmentRequest {
                image: AssetId::of_bytes(b"nothing"),
                hint: SegmentHint::Point { x: 0.5, y: 0.5 },
            })
            .unwrap_err();
        assert_eq!(err.code(), "UnknownAsset");
    }

    #[test]
    fn speech_is_deterministic_per_profile() {
        let studio = Studio::mock();
        let profile = VoiceProfile {
            name: "Narrator".into(),
            voice_id: "en-1".into(),
            pitch: 0.0,
            speed: 1.0,
        };
        let req = SpeechRequest {
            text: "Once upon a time".into(),
            profile: profile.clone(),
        };
        let a = studio.synthesize_speech(&req).unwrap();
        let b = studio.synthesize_speech(&req).unwrap();
        assert_eq!(a.asset.asset_id, b.asset.asset_id);
        let faster = SpeechRequest {
            profile: VoiceProfile { speed: 2.0, ..profile },
            ..req
        };
        assert_ne!(
            studio.synthesize_speech(&faster).unwrap().asset.asset_id,
            a.asset.asset_id
        );
    }

    #[test]
    fn warnings_travel_with_the_asset() {
        let studio = Studio::mock();
        let out = studio.generate_images(&ImageRequest::new("a spider web")).unwrap();
        assert!(out[0].safety.allowed);
        assert_eq!(out[0].safety.trigger_warning.as_deref(), Some("May contain: phobia"));
    }

    #[test]
    fn generated_assets_land_in_the_library() {
        let studio = Studio::mock();
        studio.generate_images(&ImageRequest::new("Pelican at dawn")).unwrap();
        studio.generate_images(&ImageRequest::new("harbour")).unwrap();
        assert_eq!(studio.library().query(Some("pelican")).len(), 1);
        assert_eq!(studio.library().len(), 2);
    }

    #[test]
    fn placeholder_backgrounds_are_stable() {
        let a = Studio::mock().placeholder_background("a quiet forest").unwrap();
        let b = Studio::mock().placeholder_background("a quiet forest").unwrap();
        assert_eq!(a.asset_id, b.asset_id);
        assert_eq!(
            a.provenance.prompt,
            "a simple monochromatic background of a quiet forest"
        );
    }
}
