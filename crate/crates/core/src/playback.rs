//! Deterministic story player.
//!
//! Time is scene-relative. A tick covers the half-open window `[t, t + dt)`;
//! when the window reaches the scene's end it also covers events at exactly
//! the end, then the scene either asks its question, moves on to its single
//! successor (carrying the rest of `dt` into it) or ends the story.
//!
//! Elements without a visual clip are shown for the whole scene. A path
//! animates over the clip that shows the element, or over the whole scene
//! for such always-visible elements.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    validate_story, AssetId, ClipId, ClipTarget, ElementKind, ParticleEffect, Point, Scene, SceneElement, SceneId,
    Size, Story, StoryId, TimelineClip, Track, Violation,
};

/// Upper bound on scene transitions inside one tick.
pub const MAX_TRANSITIONS_PER_TICK: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlaybackError {
    #[error("story cannot be played: {}", violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidStory { violations: Vec<Violation> },
    #[error("player is not playing")]
    NotPlaying,
    #[error("player is not waiting for a response")]
    NotAwaitingInput,
    #[error("no response labeled {0:?}")]
    UnknownResponse(String),
    #[error("tick length must be positive and finite, got {0}")]
    InvalidTick(f64),
}

impl PlaybackError {
    pub fn code(&self) -> &'static str {
        match self {
            PlaybackError::InvalidStory { .. } => "InvalidStory",
            PlaybackError::NotPlaying => "NotPlaying",
            PlaybackError::NotAwaitingInput => "NotAwaitingInput",
            PlaybackError::UnknownResponse(_) => "UnknownResponse",
            PlaybackError::InvalidTick(_) => "InvalidTick",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Playing,
    AwaitingInput,
    Finished,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    /// A scene without successor finished, or a terminal response was chosen.
    Completed,
    /// Scenes kept following each other without time passing.
    LoopGuard,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub scene: SceneId,
    /// The response chosen when leaving the scene, if it asked a question.
    pub choice: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaybackState {
    pub story_id: StoryId,
    pub current_scene: SceneId,
    pub t: f64,
    pub phase: Phase,
    /// Scenes already left, oldest first.
    pub history: Vec<HistoryEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    SceneEnter {
        title: String,
        background: Option<AssetId>,
    },
    SceneExit,
    Particles {
        effect: ParticleEffect,
    },
    ElementShow {
        element: String,
        element_kind: ElementKind,
        asset: Option<AssetId>,
        position: Point,
        size: Size,
    },
    BubbleShow {
        element: String,
        text: String,
        position: Point,
        size: Size,
    },
    ElementHide {
        element: String,
    },
    ElementMove {
        element: String,
        position: Point,
    },
    AudioStart {
        asset: AssetId,
        clip: Option<ClipId>,
        track: Track,
    },
    AudioStop {
        asset: AssetId,
        clip: Option<ClipId>,
        track: Track,
    },
    SpeechStart {
        asset: AssetId,
        clip: Option<ClipId>,
    },
    InteractionPrompt {
        question: String,
        responses: Vec<String>,
        speech: Option<AssetId>,
    },
    StoryEnd {
        reason: EndReason,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaybackEvent {
    pub scene: SceneId,
    /// Seconds since the scene started.
    pub t: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl PlaybackEvent {
    pub fn name(&self) -> &'static str {
        match self.kind {
            EventKind::SceneEnter { .. } => "scene_enter",
            EventKind::SceneExit => "scene_exit",
            EventKind::Particles { .. } => "particles",
            EventKind::ElementShow { .. } => "element_show",
            EventKind::BubbleShow { .. } => "bubble_show",
            EventKind::ElementHide { .. } => "element_hide",
            EventKind::ElementMove { .. } => "element_move",
            EventKind::AudioStart { .. } => "audio_start",
            EventKind::AudioStop { .. } => "audio_stop",
            EventKind::SpeechStart { .. } => "speech_start",
            EventKind::InteractionPrompt { .. } => "interaction_prompt",
            EventKind::StoryEnd { .. } => "story_end",
        }
    }
}

/// One JSON object per line, each line ending in `\n`.
pub fn to_ndjson(events: &[PlaybackEvent]) -> String {
    let mut out = String::new();
    for e in events {
        out.push_str(&serde_json::to_string(e).expect("events always serialize"));
        out.push('\n');
    }
    out
}

/// A validated story ready to play.
#[derive(Debug, Clone)]
pub struct Player {
    story: Story,
}

struct Timed {
    t: f64,
    rank: u8,
    group: u8,
    index: usize,
    kind: EventKind,
}

fn path_position(el: &SceneElement, progress: f64) -> Point {
    match el.path {
        Some(p) => p.start.lerp(p.end, progress),
        None => el.position,
    }
}

fn visual_clips<'a>(scene: &'a Scene, el: &'a SceneElement) -> impl Iterator<Item = &'a TimelineClip> + 'a {
    scene
        .clips
        .iter()
        .filter(move |c| c.track == Track::Visual && c.target == ClipTarget::Element(el.element_id.clone()))
}

fn show_event(el: &SceneElement, position: Point) -> EventKind {
    match (el.kind, &el.text) {
        (ElementKind::SpeechBubble, Some(text)) => EventKind::BubbleShow {
            element: el.element_id.0.clone(),
            text: text.clone(),
            position,
            size: el.size,
        },
        _ => EventKind::ElementShow {
            element: el.element_id.0.clone(),
            element_kind: el.kind,
            asset: el.asset.clone(),
            position,
            size: el.size,
        },
    }
}

/// Every clip boundary of a scene, in emission order.
fn boundary_events(scene: &Scene) -> Vec<Timed> {
    let mut out = Vec::new();
    for (i, el) in scene.elements.iter().enumerate() {
        let mut any = false;
        for clip in visual_clips(scene, el) {
            any = true;
            out.push(Timed {
                t: clip.start_s,
                rank: 1,
                group: 0,
                index: i,
                kind: show_event(el, path_position(el, 0.0)),
            });
            out.push(Timed {
                t: clip.end_s(),
                rank: 0,
                group: 0,
                index: i,
                kind: EventKind::ElementHide {
                    element: el.element_id.0.clone(),
                },
            });
        }
        if !any {
            out.push(Timed {
                t: 0.0,
                rank: 1,
                group: 0,
                index: i,
                kind: show_event(el, path_position(el, 0.0)),
            });
        }
    }
    for (j, clip) in scene.clips.iter().enumerate() {
        let ClipTarget::Asset(asset) = &clip.target else {
            continue;
        };
        let (start, stop) = match clip.track {
            Track::Audio => (
                EventKind::AudioStart {
                    asset: asset.clone(),
                    clip: Some(clip.clip_id.clone()),
                    track: Track::Audio,
                },
                EventKind::AudioStop {
                    asset: asset.clone(),
                    clip: Some(clip.clip_id.clone()),
                    track: Track::Audio,
                },
            ),
            Track::Speech => (
                EventKind::SpeechStart {
                    asset: asset.clone(),
                    clip: Some(clip.clip_id.clone()),
                },
                EventKind::AudioStop {
                    asset: asset.clone(),
                    clip: Some(clip.clip_id.clone()),
                    track: Track::Speech,
                },
            ),
            Track::Visual => continue,
        };
        out.push(Timed {
            t: clip.start_s,
            rank: 1,
            group: 1,
            index: j,
            kind: start,
        });
        out.push(Timed {
            t: clip.end_s(),
            rank: 0,
            group: 1,
            index: j,
            kind: stop,
        });
    }
    out.sort_by(|a, b| {
        a.t.total_cmp(&b.t)
            .then(a.rank.cmp(&b.rank))
            .then(a.group.cmp(&b.group))
            .then(a.index.cmp(&b.index))
    });
    out
}

/// Where `el` is drawn at scene time `t`, or `None` while it is hidden.
fn position_at(scene: &Scene, el: &SceneElement, t: f64) -> Option<Point> {
    let mut clips = visual_clips(scene, el).peekable();
    if clips.peek().is_none() {
        let d = scene.duration();
        let progress = if d > 0.0 { t / d } else { 0.0 };
        return Some(path_position(el, progress));
    }
    clips
        .find(|c| c.contains(t))
        .map(|c| path_position(el, (t - c.start_s) / c.duration_s))
}

impl Player {
    /// Refuses stories with blocking violations or without a start scene.
    pub fn new(story: Story) -> Result<Self, PlaybackError> {
        let violations: Vec<Violation> = validate_story(&story)
            .into_iter()
            .filter(|v| v.is_blocking() || *v == Violation::MissingStart)
            .collect();
        if violations.is_empty() {
            Ok(Self { story })
        } else {
            Err(PlaybackError::InvalidStory { violations })
        }
    }

    pub fn story(&self) -> &Story {
        &self.story
    }

    fn scene(&self, id: &SceneId) -> &Scene {
        &self.story.scenes[id]
    }

    fn enter(&self, id: &SceneId, events: &mut Vec<PlaybackEvent>) {
        let scene = self.scene(id);
        events.push(PlaybackEvent {
            scene: id.clone(),
            t: 0.0,
            kind: EventKind::SceneEnter {
                title: scene.title.clone(),
                background: scene.background.clone(),
            },
        });
        if scene.particle_effect != ParticleEffect::None {
            events.push(PlaybackEvent {
                scene: id.clone(),
                t: 0.0,
                kind: EventKind::Particles {
                    effect: scene.particle_effect,
                },
            });
        }
    }

    pub fn start(&self) -> (PlaybackState, Vec<PlaybackEvent>) {
        let start = self.story.start_scene.clone().expect("checked in Player::new");
        let mut events = Vec::new();
        self.enter(&start, &mut events);
        (
            PlaybackState {
                story_id: self.story.story_id.clone(),
                current_scene: start,
                t: 0.0,
                phase: Phase::Playing,
                history: Vec::new(),
            },
            events,
        )
    }

    fn finish(state: &mut PlaybackState, reason: EndReason, events: &mut Vec<PlaybackEvent>) {
        events.push(PlaybackEvent {
            scene: state.current_scene.clone(),
            t: state.t,
            kind: EventKind::StoryEnd { reason },
        });
        state.phase = Phase::Finished;
    }

    fn transition(
        &self,
        state: &mut PlaybackState,
        to: &SceneId,
        choice: Option<String>,
        events: &mut Vec<PlaybackEvent>,
    ) {
        events.push(PlaybackEvent {
            scene: state.current_scene.clone(),
            t: state.t,
            kind: EventKind::SceneExit,
        });
        state.history.push(HistoryEntry {
            scene: state.current_scene.clone(),
            choice,
        });
        state.current_scene = to.clone();
        state.t = 0.0;
        state.phase = Phase::Playing;
        self.enter(to, events);
    }

    pub fn tick(&self, state: &PlaybackState, dt: f64) -> Result<(PlaybackState, Vec<PlaybackEvent>), PlaybackError> {
        if state.phase != Phase::Playing {
            return Err(PlaybackError::NotPlaying);
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(PlaybackError::InvalidTick(dt));
        }
        let mut state = state.clone();
        let mut events = Vec::new();
        let mut remaining = dt;
        let mut instant: BTreeSet<SceneId> = BTreeSet::new();
        let mut transitions = 0usize;
        loop {
            let scene = self.scene(&state.current_scene);
            let d = scene.duration();
            let t0 = state.t;
            let t1 = t0 + remaining;
            let at_end = t1 >= d;
            for ev in boundary_events(scene) {
                let inside = ev.t >= t0 && (ev.t < t1 || (at_end && ev.t <= d));
                if inside {
                    events.push(PlaybackEvent {
                        scene: state.current_scene.clone(),
                        t: ev.t,
                        kind: ev.kind,
                    });
                }
            }
            if !at_end {
                state.t = t1;
                break;
            }
            remaining = t1 - d;
            if d > t0 {
                instant.clear();
            }
            state.t = d;

            if let Some(spec) = &scene.interaction {
                events.push(PlaybackEvent {
                    scene: state.current_scene.clone(),
                    t: d,
                    kind: EventKind::InteractionPrompt {
                        question: spec.question.clone(),
                        responses: spec.responses.iter().map(|r| r.label.clone()).collect(),
                        speech: spec.question_speech.clone(),
                    },
                });
                if let Some(speech) = &spec.question_speech {
                    events.push(PlaybackEvent {
                        scene: state.current_scene.clone(),
                        t: d,
                        kind: EventKind::SpeechStart {
                            asset: speech.clone(),
                            clip: None,
                        },
                    });
                }
                state.phase = Phase::AwaitingInput;
                return Ok((state, events));
            }
            let next = self.story.outgoing(&state.current_scene).next().map(|e| e.to.clone());
            let Some(next) = next else {
                state.history.push(HistoryEntry {
                    scene: state.current_scene.clone(),
                    choice: None,
                });
                Self::finish(&mut state, EndReason::Completed, &mut events);
                return Ok((state, events));
            };
            transitions += 1;
            if transitions > MAX_TRANSITIONS_PER_TICK || !instant.insert(state.current_scene.clone()) {
                Self::finish(&mut state, EndReason::LoopGuard, &mut events);
                return Ok((state, events));
            }
            self.transition(&mut state, &next, None, &mut events);
        }

        let scene = self.scene(&state.current_scene);
        for el in scene.elements.iter().filter(|e| e.path.is_some()) {
            if let Some(position) = position_at(scene, el, state.t) {
                events.push(PlaybackEvent {
                    scene: state.current_scene.clone(),
                    t: state.t,
                    kind: EventKind::ElementMove {
                        element: el.element_id.0.clone(),
                        position,
                    },
                });
            }
        }
        Ok((state, events))
    }

    pub fn submit_response(
        &self,
        state: &PlaybackState,
        label: &str,
    ) -> Result<(PlaybackState, Vec<PlaybackEvent>), PlaybackError> {
        if state.phase != Phase::AwaitingInput {
            return Err(PlaybackError::NotAwaitingInput);
        }
        let scene = self.scene(&state.current_scene);
        let spec = scene.interaction.as_ref().ok_or(PlaybackError::NotAwaitingInput)?;
        let response = spec
            .response(label)
            .ok_or_else(|| PlaybackError::UnknownResponse(label.to_string()))?;
        let mut state = state.clone();
        let mut events = Vec::new();
        if let Some(audio) = &response.feedback_audio {
            events.push(PlaybackEvent {
                scene: state.current_scene.clone(),
                t: state.t,
                kind: EventKind::AudioStart {
                    asset: audio.clone(),
                    clip: None,
                    track: Track::Audio,
                },
            });
        }
        match &response.next_scene {
            Some(next) => self.transition(&mut state, next, Some(label.to_string()), &mut events),
            None => {
                state.history.push(HistoryEntry {
                    scene: state.current_scene.clone(),
                    choice: Some(label.to_string()),
                });
                Self::finish(&mut state, EndReason::Completed, &mut events);
            }
        }
        Ok((state, events))
    }

    /// Current position of an element of the current scene; `None` while hidden or unknown.
    pub fn element_position(&self, state: &PlaybackState, element: &str) -> Option<Point> {
        let scene = self.scene(&state.current_scene);
        let el = scene.elements.iter().find(|e| e.element_id.as_str() == element)?;
        position_at(scene, el, state.t)
    }

    /// Plays to the end: ticks by `dt`, answering questions from `responses`
    /// in order. Stops early when a question has no answer left.
    pub fn run(&self, responses: &[&str], dt: f64) -> Result<(PlaybackState, Vec<PlaybackEvent>), PlaybackError> {
        let (mut state, mut events) = self.start();
        let mut answers = responses.iter();
        loop {
            let (next, evs) = match state.phase {
                Phase::Finished => return Ok((state, events)),
                Phase::Playing => self.tick(&state, dt)?,
                Phase::AwaitingInput => match answers.next() {
                    Some(label) => self.submit_response(&state, label)?,
                    None => return Ok((state, events)),
                },
            };
            state = next;
            events.extend(evs);
        }
    }
}

/// Orders events of one scene visit for multiset comparison: by time, then JSON text.
pub fn canonical_event_order(a: &PlaybackEvent, b: &PlaybackEvent) -> Ordering {
    a.t.total_cmp(&b.t).then_with(|| {
        serde_json::to_string(a)
            .unwrap_or_default()
            .cmp(&serde_json::to_string(b).unwrap_or_default())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AnimationPath, AssetKind, AssetRef, Edge, InteractionSpec, Provenance, Response, SceneElement};
    use crate::storyboard;
    use chrono::TimeZone;
    use std::collections::BTreeMap;

    fn asset(kind: AssetKind, tag: &str) -> AssetRef {
        let media_type = if kind.accepts_media_type("image/png") {
            "image/png"
        } else {
            "audio/wav"
        };
        AssetRef {
            asset_id: AssetId::of_bytes(tag.as_bytes()),
            kind,
            media_type: media_type.into(),
            provenance: Provenance {
                provider_name: "test".into(),
                prompt: tag.into(),
                negative_prompt: None,
                params: BTreeMap::new(),
                seed: None,
                created_at: chrono::Utc.timestamp_opt(0, 0).unwrap(),
            },
            byte_length: 1,
        }
    }

    fn clip(id: &str, target: ClipTarget, track: Track, start: f64, dur: f64) -> TimelineClip {
        TimelineClip {
            clip_id: id.into(),
            target,
            track,
            start_s: start,
            duration_s: dur,
        }
    }

    /// One scene: a walking character on [0,4) and speech on [0,3).
    fn walker() -> Story {
        let mut story = Story::with_id("w".into(), "walk");
        let pelican = asset(AssetKind::CharacterCutout, "pelican");
        let speech = asset(AssetKind::Speech, "hello");
        let mut scene = Scene::new("S1".into(), "Port");
        let mut el = SceneElement::character("E1", pelican.asset_id.clone(), Size::new(0.2, 0.2));
        el.path = Some(AnimationPath {
            start: Point::new(0.0, 0.0),
            end: Point::new(1.0, 1.0),
        });
        scene.elements.push(el);
        scene
            .clips
            .push(clip("C1", ClipTarget::Element("E1".into()), Track::Visual, 0.0, 4.0));
        scene.clips.push(clip(
            "C2",
            ClipTarget::Asset(speech.asset_id.clone()),
            Track::Speech,
            0.0,
            3.0,
        ));
        story.register_asset(pelican);
        story.register_asset(speech);
        story.scenes.insert("S1".into(), scene);
        story.start_scene = Some("S1".into());
        story
    }

    /// Intro asks Forest or Town; each branch is one 1-second scene.
    fn forest_town() -> Story {
        let mut story = Story::with_id("ft".into(), "Choices");
        let howl = asset(AssetKind::AudioEffect, "howl");
        story.register_asset(howl.clone());
        for (id, title) in [("S1", "Crossroads"), ("S2", "Forest"), ("S3", "Town")] {
            let mut s = Scene::new(id.into(), title);
            s.elements.push(SceneElement::speech_bubble(
                "E".to_string() + id,
                title,
                Size::new(0.3, 0.1),
            ));
            s.clips.push(clip(
                &format!("C{id}"),
                ClipTarget::Element(("E".to_string() + id).as_str().into()),
                Track::Visual,
                0.0,
                1.0,
            ));
            story.scenes.insert(id.into(), s);
        }
        story.start_scene = Some("S1".into());
        let mut forest = Response::new("Forest", Some("S2".into()));
        forest.feedback_audio = Some(howl.asset_id);
        let spec = InteractionSpec {
            question: "Where does Jose go?".into(),
            responses: vec![forest, Response::new("Town", Some("S3".into()))],
            question_speech: None,
        };
        storyboard::set_interaction(&story, &"S1".into(), Some(spec)).unwrap()
    }

    fn scenes_entered(events: &[PlaybackEvent]) -> Vec<String> {
        events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::SceneEnter { .. }))
            .map(|e| e.scene.0.clone())
            .collect()
    }

    #[test]
    fn start_enters_the_start_scene() {
        let player = Player::new(walker()).unwrap();
        let (state, events) = player.start();
        assert_eq!(state.current_scene, "S1".into());
        assert_eq!(state.phase, Phase::Playing);
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].name(), "scene_enter");
        assert_eq!(player.start(), (state, events));
    }

    #[test]
    fn invalid_stories_are_refused() {
        let mut story = forest_town();
        story
            .scenes
            .get_mut(&SceneId::from("S1"))
            .unwrap()
            .interaction
            .as_mut()
            .unwrap()
            .responses[1]
            .next_scene = Some("S9".into());
        let err = Player::new(story).unwrap_err();
        assert_eq!(err.code(), "InvalidStory");
        let mut no_start = walker();
        no_start.start_scene = None;
        assert!(matches!(Player::new(no_start), Err(PlaybackError::InvalidStory { .. })));
    }

    #[test]
    fn speech_starts_in_first_tick() {
        let player = Player::new(walker()).unwrap();
        let (state, _) = player.start();
        let (_, events) = player.tick(&state, 1.0).unwrap();
        let speech: Vec<_> = events.iter().filter(|e| e.name() == "speech_start").collect();
        assert_eq!(speech.len(), 1);
        assert!((0.0..1.0).contains(&speech[0].t));
    }

    #[test]
    fn halfway_along_the_path() {
        let player = Player::new(walker()).unwrap();
        let (mut state, _) = player.start();
        for _ in 0..4 {
            state = player.tick(&state, 0.5).unwrap().0;
        }
        assert_eq!(player.element_position(&state, "E1"), Some(Point::new(0.5, 0.5)));
        let (_, events) = player.tick(&state, 0.5).unwrap();
        let moved = events.iter().find(|e| e.name() == "element_move").unwrap();
        assert_eq!(
            moved.kind,
            EventKind::ElementMove {
                element: "E1".into(),
                position: Point::new(0.625, 0.625)
            }
        );
    }

    #[test]
    fn empty_scene_ends_immediately() {
        let mut story = Story::with_id("e".into(), "empty");
        story.scenes.insert("S1".into(), Scene::new("S1".into(), "Nothing"));
        story.start_scene = Some("S1".into());
        let player = Player::new(story).unwrap();
        let (state, _) = player.start();
        let (state, events) = player.tick(&state, 0.25).unwrap();
        assert_eq!(state.phase, Phase::Finished);
        assert_eq!(events.len(), 1);
        assert_eq!(
            events[0].kind,
            EventKind::StoryEnd {
                reason: EndReason::Completed
            }
        );
        assert_eq!(player.tick(&state, 1.0).unwrap_err(), PlaybackError::NotPlaying);
    }

    #[test]
    fn bad_ticks_are_rejected() {
        let player = Player::new(walker()).unwrap();
        let (state, _) = player.start();
        for dt in [0.0, -1.0, f64::NAN, f64::INFINITY] {
            assert_eq!(player.tick(&state, dt).unwrap_err().code(), "InvalidTick");
        }
    }

    #[test]
    fn forest_and_town_diverge_after_the_same_first_scene() {
        let player = Player::new(forest_town()).unwrap();
        let (_, forest) = player.run(&["Forest"], 0.25).unwrap();
        let (_, town) = player.run(&["Town"], 0.25).unwrap();
        assert_eq!(scenes_entered(&forest), ["S1", "S2"]);
        assert_eq!(scenes_entered(&town), ["S1", "S3"]);
        assert!(forest.iter().any(|e| e.name() == "audio_start"));
        assert!(!town.iter().any(|e| e.name() == "audio_start"));
    }

    #[test]
    fn responses_are_checked() {
        let player = Player::new(forest_town()).unwrap();
        let (state, _) = player.start();
        assert_eq!(
            player.submit_response(&state, "Forest").unwrap_err(),
            PlaybackError::NotAwaitingInput
        );
        let (state, events) = player.tick(&state, 2.0).unwrap();
        assert_eq!(state.phase, Phase::AwaitingInput);
        assert_eq!(events.last().unwrap().name(), "interaction_prompt");
        assert_eq!(state.t, 1.0);
        assert_eq!(
            player.submit_response(&state, "River").unwrap_err(),
            PlaybackError::UnknownResponse("River".into())
        );
    }

    #[test]
    fn replaying_history_labels_repeats_the_path() {
        let player = Player::new(forest_town()).unwrap();
        let (state, events) = player.run(&["Town"], 0.5).unwrap();
        assert_eq!(state.phase, Phase::Finished);
        let labels: Vec<&str> = state.history.iter().filter_map(|h| h.choice.as_deref()).collect();
        let (again, replay) = player.run(&labels, 0.5).unwrap();
        assert_eq!(again.history, state.history);
        assert_eq!(scenes_entered(&replay), scenes_entered(&events));
    }

    #[test]
    fn leftover_time_carries_into_the_next_scene() {
        let mut story = walker();
        let mut second = story.scenes[&SceneId::from("S1")].clone();
        second.scene_id = "S2".into();
        story.scenes.insert("S2".into(), second);
        story.edges.push(Edge {
            from: "S1".into(),
            to: "S2".into(),
            via: None,
        });
        let player = Player::new(story).unwrap();
        let (state, _) = player.start();
        let (state, events) = player.tick(&state, 5.0).unwrap();
        assert_eq!(state.current_scene, "S2".into());
        assert_eq!(state.t, 1.0);
        assert_eq!(state.history.len(), 1);
        let names: Vec<&str> = events.iter().map(PlaybackEvent::name).collect();
        assert_eq!(
            names,
            [
                "element_show",
                "speech_start",
                "audio_stop",
                "element_hide",
                "scene_exit",
                "scene_enter",
                "element_show",
                "speech_start",
                "element_move"
            ]
        );
    }

    #[test]
    fn zero_time_loops_are_cut() {
        let mut story = Story::with_id("l".into(), "loop");
        for id in ["S1", "S2"] {
            story.scenes.insert(id.into(), Scene::new(id.into(), id));
        }
        story.start_scene = Some("S1".into());
        story.edges.push(Edge {
            from: "S1".into(),
            to: "S2".into(),
            via: None,
        });
        story.edges.push(Edge {
            from: "S2".into(),
            to: "S1".into(),
            via: None,
        });
        let player = Player::new(story).unwrap();
        let (state, _) = player.start();
        let (state, events) = player.tick(&state, 1.0).unwrap();
        assert_eq!(state.phase, Phase::Finished);
        assert_eq!(
            events.last().unwrap().kind,
            EventKind::StoryEnd {
                reason: EndReason::LoopGuard
            }
        );
    }

    #[test]
    fn splitting_ticks_keeps_boundary_events() {
        let player = Player::new(forest_town()).unwrap();
        let strip = |events: Vec<PlaybackEvent>| -> Vec<PlaybackEvent> {
            let mut v: Vec<_> = events.into_iter().filter(|e| e.name() != "element_move").collect();
            v.sort_by(canonical_event_order);
            v
        };
        let (_, coarse) = player.run(&["Forest"], 4.0).unwrap();
        let (_, fine) = player.run(&["Forest"], 0.125).unwrap();
        assert_eq!(strip(coarse), strip(fine));
    }

    #[test]
    fn ndjson_lines_carry_the_kind() {
        let player = Player::new(forest_town()).unwrap();
        let (_, events) = player.run(&["Town"], 1.0).unwrap();
        let text = to_ndjson(&events);
        assert!(text.ends_with('\n'));
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["kind"], "scene_enter");
        assert_eq!(first["scene"], "S1");
        for line in text.lines() {
            let back: PlaybackEvent = serde_json::from_str(line).unwrap();
            assert!(events.contains(&back));
        }
    }
}
