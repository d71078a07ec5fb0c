//! Helpers shared by the integration tests and the acceptance target.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::TimeZone;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use storyloom::clock::FixedClock;
use storyloom::genai::mock::{MockAudio, MockImage, MockSegmenter, MockSpeech, MockText};
use storyloom::genai::{
    AudioKind, AudioRequest, ImageRequest, Providers, SegmentHint, SegmentRequest, SpeechRequest, Studio,
};
use storyloom::model::{
    AnimationPath, AssetId, AssetKind, AssetRef, ClipId, ClipTarget, DialogueLine, ElementId, InteractionSpec,
    ParticleEffect, Point, Provenance, Response, Scene, SceneElement, SceneId, ScreenplayScene, Size, Story,
    TimelineClip, Track, VoiceProfile,
};
use storyloom::playback::{to_ndjson, Player};
use storyloom::screenplay::compile_screenplay;
use storyloom::store::{AssetStore, MemoryAssetStore, PackageStore};
use storyloom::{storyboard, timeline};

pub fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/screenplay")
}

/// Fixture file names with their expectations, in file order.
pub fn screenplay_fixtures() -> Vec<(String, Vec<u8>, Value)> {
    let dir = fixture_dir();
    let expected: BTreeMap<String, Value> =
        serde_json::from_slice(&std::fs::read(dir.join("expected.json")).expect("expected.json")).expect("valid json");
    expected
        .into_iter()
        .map(|(name, exp)| {
            let raw = std::fs::read(dir.join(&name)).unwrap_or_else(|e| panic!("{name}: {e}"));
            (name, raw, exp)
        })
        .collect()
}

/// Differences between a parse report and its documented expectation.
pub fn fixture_mismatches(report: &storyloom::screenplay::ParseReport, exp: &Value) -> Vec<String> {
    let mut out = Vec::new();
    let names: Vec<&str> = report.scenes.iter().map(|s| s.scene_name.as_str()).collect();
    let strings = |v: &Value| -> Vec<String> {
        v.as_array()
            .map(|a| a.iter().filter_map(Value::as_str).map(str::to_string).collect())
            .unwrap_or_default()
    };
    if names != strings(&exp["scenes"]) {
        out.push(format!("scenes {names:?} != {:?}", strings(&exp["scenes"])));
    }
    if report.repairs != strings(&exp["repairs"]) {
        out.push(format!(
            "repairs {:?} != {:?}",
            report.repairs,
            strings(&exp["repairs"])
        ));
    }
    if report.warnings != strings(&exp["warnings"]) {
        out.push(format!(
            "warnings {:?} != {:?}",
            report.warnings,
            strings(&exp["warnings"])
        ));
    }
    if Some(report.rejected) != exp["rejected"].as_bool() {
        out.push(format!("rejected {} != {}", report.rejected, exp["rejected"]));
    }
    if exp.get("narration").is_some() {
        let got: Vec<String> = report.scenes.iter().map(|s| s.narration.clone()).collect();
        if got != strings(&exp["narration"]) {
            out.push(format!("narration {got:?} != {:?}", strings(&exp["narration"])));
        }
    }
    out
}

/// Mock providers whose call counters stay reachable from the test.
pub struct CountedMocks {
    pub text: Arc<MockText>,
    pub image: Arc<MockImage>,
    pub sound_effects: Arc<MockAudio>,
    pub music: Arc<MockAudio>,
    pub segmenter: Arc<MockSegmenter>,
    pub speech: Arc<MockSpeech>,
}

impl CountedMocks {
    pub fn new(text: MockText) -> Self {
        Self {
            text: Arc::new(text),
            image: Arc::new(MockImage::new()),
            sound_effects: Arc::new(MockAudio::sound_effects()),
            music: Arc::new(MockAudio::music()),
            segmenter: Arc::new(MockSegmenter::new()),
            speech: Arc::new(MockSpeech::new()),
        }
    }

    pub fn providers(&self) -> Providers {
        Providers {
            text: self.text.clone(),
            image: self.image.clone(),
            sound_effects: self.sound_effects.clone(),
            music: self.music.clone(),
            segmenter: self.segmenter.clone(),
            speech: self.speech.clone(),
        }
    }

    pub fn total_calls(&self) -> usize {
        self.text.control.calls()
            + self.image.control.calls()
            + self.sound_effects.control.calls()
            + self.music.control.calls()
            + self.segmenter.control.calls()
            + self.speech.control.calls()
    }

    pub fn studio(&self) -> Studio {
        Studio::new(self.providers(), Arc::new(MemoryAssetStore::new()))
            .with_clock(Arc::new(FixedClock::epoch()))
            .with_seed(7)
    }
}

pub const PIPELINE_STORYLINE: &str = "Jose comes home to the port town after ten years. \
Maria shows him the old lighthouse. At the crossroads he must pick the forest or the town.";

/// Builds a branching story from a storyline with mock providers, saves it
/// under `root`, loads it back and plays it with `responses`. Returns the
/// NDJSON event trace.
pub fn pipeline_trace(root: &Path, responses: &[&str]) -> Vec<u8> {
    let reply = std::fs::read_to_string(fixture_dir().join("01_strict.txt")).expect("fixture");
    let mocks = CountedMocks::new(MockText::fixed(reply));
    let studio = mocks.studio();

    let report = compile_screenplay(PIPELINE_STORYLINE, mocks.text.as_ref()).expect("compile");
    assert!(!report.rejected, "{report:?}");
    let story = Story::with_id("pipeline".into(), "Homecoming");
    let (story, warnings) = storyboard::populate_from_screenplay(&story, &report.scenes, &studio).expect("populate");
    assert!(warnings.is_empty(), "{warnings:?}");
    let first = story.start_scene.clone().expect("start");
    let lighthouse = story.outgoing(&first).next().expect("chained").to.clone();
    let (mut story, town) = storyboard::add_scene(&story, "The town square");

    // A cut-out character walking across the first scene.
    let portrait = studio
        .generate_images(&ImageRequest {
            samples: 2,
            ..ImageRequest::new("a fisherman with a blue cap, storybook style")
        })
        .expect("images");
    let cutout = studio
        .segment_character(&SegmentRequest {
            image: portrait[0].asset.asset_id.clone(),
            hint: SegmentHint::Box {
                x0: 0.2,
                y0: 0.1,
                x1: 0.8,
                y1: 0.9,
            },
        })
        .expect("cutout");
    let gulls = studio
        .generate_audio(&AudioRequest::new(
            AudioKind::SoundEffect,
            "seagulls over a harbour",
            3.0,
        ))
        .expect("audio");
    let theme = studio
        .generate_audio(&AudioRequest::new(AudioKind::Music, "calm accordion waltz", 4.0))
        .expect("music");
    let voice = VoiceProfile {
        name: "Maria".into(),
        voice_id: "alto-1".into(),
        pitch: 0.0,
        speed: 1.0,
    };
    let line = studio
        .synthesize_speech(&SpeechRequest {
            text: "Welcome home, Jose!".into(),
            profile: voice.clone(),
        })
        .expect("speech");
    let question = studio
        .synthesize_speech(&SpeechRequest {
            text: "Where should Jose go next?".into(),
            profile: voice.clone(),
        })
        .expect("speech");
    for a in [&portrait[0], &portrait[1], &cutout, &gulls, &theme, &line, &question] {
        story.register_asset(a.asset.clone());
    }
    story.voice_profiles.insert(voice.name.clone(), voice);

    let jose = storyboard::fresh_element_id(&story);
    let bubble: ElementId = "E2".into();
    assert_eq!(jose.as_str(), "E1");
    let assets = story.asset_index.clone();
    let [c1, c2, c3, c4]: [ClipId; 4] = ["C1", "C2", "C3", "C4"].map(ClipId::from);
    let cut_id = cutout.asset.asset_id.clone();
    let line_id = line.asset.asset_id.clone();
    let gulls_id = gulls.asset.asset_id.clone();
    let story2 = storyboard::edit_scene(&story, &first, |scene| {
        let s = timeline::upsert_element(
            scene,
            SceneElement::character(jose.clone(), cut_id, Size::new(0.25, 0.4)),
        )?;
        let s = timeline::set_path(&s, &jose, Point::new(0.1, 0.7), Point::new(0.6, 0.7))?;
        let s = timeline::upsert_element(
            &s,
            SceneElement::speech_bubble(bubble.clone(), "Welcome home, Jose!", Size::new(0.3, 0.1))
                .at(Point::new(0.5, 0.2)),
        )?;
        let s = timeline::upsert_clip(
            &s,
            clip(&c1, ClipTarget::Element(jose.clone()), Track::Visual, 0.0, 4.0),
            &assets,
        )?;
        let s = timeline::upsert_clip(
            &s,
            clip(&c2, ClipTarget::Element(bubble.clone()), Track::Visual, 0.5, 2.0),
            &assets,
        )?;
        let s = timeline::upsert_clip(
            &s,
            clip(&c3, ClipTarget::Asset(line_id), Track::Speech, 0.5, 1.25),
            &assets,
        )?;
        let s = timeline::upsert_clip(
            &s,
            clip(&c4, ClipTarget::Asset(gulls_id), Track::Audio, 0.0, 3.0),
            &assets,
        )?;
        Ok(timeline::set_particles(&s, ParticleEffect::Rain))
    })
    .expect("edit first scene");
    story = story2;

    let theme_id = theme.asset.asset_id.clone();
    let c5 = storyboard::fresh_clip_id(&story);
    story = storyboard::edit_scene(&story, &town, |scene| {
        timeline::upsert_clip(
            scene,
            clip(&c5, ClipTarget::Asset(theme_id), Track::Audio, 0.0, 4.0),
            &assets,
        )
    })
    .expect("edit town");

    // The first scene now ends with a question instead of running on.
    let mut forest = Response::new("Forest", Some(lighthouse));
    forest.feedback_audio = Some(gulls.asset.asset_id.clone());
    story = storyboard::set_interaction(
        &story,
        &first,
        Some(InteractionSpec {
            question: "Where should Jose go next?".into(),
            responses: vec![forest, Response::new("Town", Some(town))],
            question_speech: Some(question.asset.asset_id.clone()),
        }),
    )
    .expect("interaction");

    let packages = PackageStore::open(root).expect("store");
    let id = packages.save_story(&story, studio.store().as_ref()).expect("save");
    let loaded = packages.load_story(&id).expect("load");
    assert_eq!(loaded, story);

    let player = Player::new(loaded).expect("playable");
    let (_, events) = player.run(responses, 0.25).expect("play");
    to_ndjson(&events).into_bytes()
}

pub fn clip(id: &ClipId, target: ClipTarget, track: Track, start: f64, dur: f64) -> TimelineClip {
    TimelineClip {
        clip_id: id.clone(),
        target,
        track,
        start_s: start,
        duration_s: dur,
    }
}

fn random_text(rng: &mut ChaCha8Rng) -> String {
    const PIECES: &[&str] = &[
        "fox",
        "harbour",
        "Jose",
        "María",
        "naïve",
        "\"quoted\"",
        "it's",
        "line\nbreak",
        "tab\there",
        "\\",
        "🌧",
        "",
        " ",
        "{",
        "]",
        "null",
        "0.1",
    ];
    let n = rng.gen_range(0..5);
    (0..n)
        .map(|_| *PIECES.choose(rng).expect("non-empty"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn random_value(rng: &mut ChaCha8Rng) -> Value {
    match rng.gen_range(0..5) {
        0 => json!(rng.gen::<f64>() * 1e6 - 5e5),
        1 => json!(random_text(rng)),
        2 => json!(rng.gen::<bool>()),
        3 => json!([rng.gen::<u32>(), random_text(rng)]),
        _ => json!({ "nested": rng.gen::<i64>() }),
    }
}

fn random_point(rng: &mut ChaCha8Rng) -> Point {
    Point::new(rng.gen_range(0.0..=1.0), rng.gen_range(0.0..=1.0))
}

fn random_size(rng: &mut ChaCha8Rng) -> Size {
    Size::new(rng.gen_range(0.01..1.0), rng.gen_range(0.01..1.0))
}

fn random_asset(rng: &mut ChaCha8Rng, store: &dyn AssetStore) -> AssetRef {
    let kind = *[
        AssetKind::Image,
        AssetKind::CharacterCutout,
        AssetKind::AudioEffect,
        AssetKind::Music,
        AssetKind::Speech,
    ]
    .choose(rng)
    .expect("non-empty");
    let len = rng.gen_range(0..200);
    let bytes: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
    let asset_id = store.put(&bytes).expect("put");
    let mut params = BTreeMap::new();
    for i in 0..rng.gen_range(0..3) {
        params.insert(format!("p{i}"), random_value(rng));
    }
    AssetRef {
        asset_id,
        kind,
        media_type: if kind.accepts_media_type("audio/wav") {
            "audio/wav"
        } else {
            "image/png"
        }
        .into(),
        provenance: Provenance {
            provider_name: random_text(rng),
            prompt: random_text(rng),
            negative_prompt: rng.gen::<bool>().then(|| random_text(rng)),
            params,
            seed: rng.gen::<bool>().then(|| rng.gen()),
            created_at: chrono::Utc
                .timestamp_opt(rng.gen_range(0..4_000_000_000), rng.gen_range(0..1_000_000_000))
                .single()
                .expect("valid timestamp"),
        },
        byte_length: len as u64,
    }
}

/// Back-to-back random intervals starting at or after zero.
fn random_intervals(rng: &mut ChaCha8Rng, count: usize) -> Vec<(f64, f64)> {
    let mut t = 0.0;
    let mut out = Vec::new();
    for _ in 0..count {
        let start = t + if rng.gen::<bool>() {
            0.0
        } else {
            rng.gen_range(0.0..3.0)
        };
        let dur = rng.gen_range(0.01..5.0);
        out.push((start, dur));
        t = start + dur;
    }
    out
}

/// A random story without blocking violations. Every asset it references is
/// put into `store`.
pub fn random_story(rng: &mut ChaCha8Rng, store: &dyn AssetStore) -> Story {
    let mut story = Story::with_id(format!("story-{}", rng.gen::<u32>()).as_str().into(), random_text(rng));
    story.storyline = random_text(rng);
    for _ in 0..rng.gen_range(0..6) {
        let asset = random_asset(rng, store);
        story.register_asset(asset);
    }
    let assets: Vec<AssetRef> = story.asset_index.values().cloned().collect();
    let of_kind = |pred: &dyn Fn(AssetKind) -> bool| -> Vec<AssetId> {
        assets
            .iter()
            .filter(|a| pred(a.kind))
            .map(|a| a.asset_id.clone())
            .collect()
    };
    let images = of_kind(&|k| matches!(k, AssetKind::Image | AssetKind::CharacterCutout));
    let audio = of_kind(&|k| k.is_audio());
    let speech = of_kind(&|k| k == AssetKind::Speech);

    for i in 0..rng.gen_range(0..3) {
        let name = format!("voice{i}");
        story.voice_profiles.insert(
            name.clone(),
            VoiceProfile {
                name,
                voice_id: random_text(rng),
                pitch: rng.gen_range(-12.0..12.0),
                speed: rng.gen_range(0.5..2.0),
            },
        );
    }
    for _ in 0..rng.gen_range(0..3) {
        story.screenplay.push(ScreenplayScene {
            scene_name: format!("scene {}", rng.gen::<u16>()),
            background_description: random_text(rng),
            narration: random_text(rng),
            characters: vec!["Jose".into()],
            dialogue: vec![DialogueLine {
                speaker: "Jose".into(),
                speech: random_text(rng),
            }],
        });
    }
    if rng.gen_ratio(1, 4) {
        story.extra.insert("x_future".into(), random_value(rng));
    }

    let n = rng.gen_range(1..=6);
    let mut ids = Vec::new();
    for _ in 0..n {
        let (next, id) = storyboard::add_scene(&story, &random_text(rng));
        story = next;
        ids.push(id);
    }
    for id in &ids {
        let mut scene: Scene = story.scenes[id].clone();
        scene.background = images.choose(rng).cloned();
        scene.background_description = random_text(rng);
        scene.particle_effect = *[ParticleEffect::None, ParticleEffect::Rain, ParticleEffect::Snow]
            .choose(rng)
            .expect("non-empty");
        if rng.gen_ratio(1, 5) {
            scene.extra.insert("x_layer".into(), random_value(rng));
        }
        let mut used_elements = 0;
        for _ in 0..rng.gen_range(0..4) {
            used_elements += 1;
            let eid = format!("E{}-{used_elements}", id.as_str());
            let mut el = match (rng.gen_range(0..3), images.choose(rng)) {
                (0, Some(img)) => SceneElement::character(eid.as_str(), img.clone(), random_size(rng)),
                (1, Some(img)) => SceneElement::background(eid.as_str(), img.clone()),
                _ => SceneElement::speech_bubble(eid.as_str(), format!("say {}", random_text(rng)), random_size(rng)),
            };
            el.position = random_point(rng);
            if rng.gen::<bool>() {
                el.path = Some(AnimationPath {
                    start: random_point(rng),
                    end: random_point(rng),
                });
            }
            let count = rng.gen_range(0..3);
            for (k, (start, dur)) in random_intervals(rng, count).into_iter().enumerate() {
                scene.clips.push(clip(
                    &format!("V{}-{used_elements}-{k}", id.as_str()).as_str().into(),
                    ClipTarget::Element(el.element_id.clone()),
                    Track::Visual,
                    start,
                    dur,
                ));
            }
            scene.elements.push(el);
        }
        for (track, pool) in [(Track::Audio, &audio), (Track::Speech, &speech)] {
            let Some(target) = pool.choose(rng) else { continue };
            let count = rng.gen_range(0..3);
            for (k, (start, dur)) in random_intervals(rng, count).into_iter().enumerate() {
                scene.clips.push(clip(
                    &format!("A{}-{track:?}-{k}", id.as_str()).as_str().into(),
                    ClipTarget::Asset(target.clone()),
                    track,
                    start,
                    dur,
                ));
            }
        }
        story.scenes.insert(id.clone(), scene);
    }

    for id in &ids {
        match rng.gen_range(0..3) {
            0 => {}
            1 => {
                let to = ids.choose(rng).expect("non-empty").clone();
                story = storyboard::link_scenes(&story, id, &to, None).expect("link");
            }
            _ => {
                let responses = (0..rng.gen_range(2..=3))
                    .map(|k| {
                        let mut r = Response::new(
                            format!("choice {k} {}", random_text(rng)),
                            rng.gen_ratio(3, 4).then(|| ids.choose(rng).expect("non-empty").clone()),
                        );
                        r.feedback_audio = audio.choose(rng).cloned().filter(|_| rng.gen());
                        r
                    })
                    .collect();
                let spec = InteractionSpec {
                    question: format!("what next? {}", random_text(rng)),
                    responses,
                    question_speech: speech.choose(rng).cloned().filter(|_| rng.gen()),
                };
                story = storyboard::set_interaction(&story, id, Some(spec)).expect("interaction");
            }
        }
    }
    story = storyboard::set_start(&story, ids.choose(rng).expect("non-empty")).expect("start");
    story
}

/// Same scene path (by entered scene id) for a finished trace.
pub fn entered_scenes(trace: &[u8]) -> Vec<SceneId> {
    std::str::from_utf8(trace)
        .expect("utf-8")
        .lines()
        .filter_map(|l| {
            let v: Value = serde_json::from_str(l).ok()?;
            (v["kind"] == "scene_enter").then(|| v["scene"].as_str().unwrap_or_default().into())
        })
        .collect()
}
