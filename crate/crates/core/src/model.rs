//! Shared domain types for stories, scenes, assets and their structural checks.
//!
//! Everything here is a plain value type. Mutation goes through the
//! [`storyboard`](crate::storyboard) and [`timeline`](crate::timeline)
//! modules, which return new values, and [`validate_story`] reports every
//! broken invariant as data instead of failing.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

/// Story document schema understood by this build.
pub const SCHEMA_VERSION: u32 = 1;

macro_rules! id_type {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_string())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

id_type!(StoryId);
id_type!(SceneId);
id_type!(ElementId);
id_type!(ClipId);
id_type!(
    /// Lowercase hex SHA-256 of the asset bytes.
    AssetId
);

impl AssetId {
    pub fn of_bytes(bytes: &[u8]) -> Self {
        Self(hex::encode(Sha256::digest(bytes)))
    }

    /// True when the id has the shape of a content hash (64 lowercase hex chars).
    pub fn is_well_formed(&self) -> bool {
        self.0.len() == 64 && self.0.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
    }
}

/// Root aggregate: everything needed to edit, save and play one story.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Story {
    pub story_id: StoryId,
    pub title: String,
    #[serde(default)]
    pub storyline: String,
    #[serde(default)]
    pub screenplay: Vec<ScreenplayScene>,
    #[serde(default)]
    pub scenes: BTreeMap<SceneId, Scene>,
    #[serde(default)]
    pub start_scene: Option<SceneId>,
    #[serde(default)]
    pub edges: Vec<Edge>,
    #[serde(default)]
    pub voice_profiles: BTreeMap<String, VoiceProfile>,
    #[serde(default)]
    pub asset_index: BTreeMap<AssetId, AssetRef>,
    pub schema_version: u32,
    /// Fields written by newer schema revisions, kept verbatim.
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl Story {
    pub fn new(title: impl Into<String>) -> Self {
        Self::with_id(StoryId(uuid::Uuid::new_v4().to_string()), title)
    }

    pub fn with_id(story_id: StoryId, title: impl Into<String>) -> Self {
        Self {
            story_id,
            title: title.into(),
            storyline: String::new(),
            screenplay: Vec::new(),
            scenes: BTreeMap::new(),
            start_scene: None,
            edges: Vec::new(),
            voice_profiles: BTreeMap::new(),
            asset_index: BTreeMap::new(),
            schema_version: SCHEMA_VERSION,
            extra: BTreeMap::new(),
        }
    }

    pub fn scene(&self, id: &SceneId) -> Option<&Scene> {
        self.scenes.get(id)
    }

    pub fn outgoing<'a>(&'a self, from: &'a SceneId) -> impl Iterator<Item = &'a Edge> + 'a {
        self.edges.iter().filter(move |e| &e.from == from)
    }

    /// Registers an asset reference so scenes may point at it.
    pub fn register_asset(&mut self, asset: AssetRef) {
        self.asset_index.insert(asset.asset_id.clone(), asset);
    }

    /// Every asset id referenced from scenes, interactions and clips.
    pub fn referenced_assets(&self) -> BTreeSet<AssetId> {
        let mut out = BTreeSet::new();
        for scene in self.scenes.values() {
            out.extend(scene.referenced_assets());
        }
        out
    }
}

/// One scene of the structured script compiled from the storyline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ScreenplayScene {
    pub scene_name: String,
    pub background_description: String,
    pub narration: String,
    pub characters: Vec<String>,
    pub dialogue: Vec<DialogueLine>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueLine {
    pub speaker: String,
    pub speech: String,
}

impl ScreenplayScene {
    /// Dialogue speakers that are not listed in `characters`.
    pub fn uncast_speakers(&self) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        self.dialogue
            .iter()
            .map(|l| l.speaker.as_str())
            .filter(|s| !self.characters.iter().any(|c| c == s))
            .filter(|s| seen.insert(*s))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParticleEffect {
    #[default]
    None,
    Rain,
    Snow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub scene_id: SceneId,
    pub title: String,
    #[serde(default)]
    pub background: Option<AssetId>,
    #[serde(default)]
    pub background_description: String,
    #[serde(default)]
    pub elements: Vec<SceneElement>,
    #[serde(default)]
    pub clips: Vec<TimelineClip>,
    #[serde(default)]
    pub particle_effect: ParticleEffect,
    #[serde(default)]
    pub interaction: Option<InteractionSpec>,
    #[serde(flatten)]
    pub extra: BTreeMap<String, Value>,
}

impl Scene {
    pub fn new(scene_id: SceneId, title: impl Into<String>) -> Self {
        Self {
            scene_id,
            title: title.into(),
            background: None,
            background_description: String::new(),
            elements: Vec::new(),
            clips: Vec::new(),
            particle_effect: ParticleEffect::None,
            interaction: None,
            extra: BTreeMap::new(),
        }
    }

    pub fn element(&self, id: &ElementId) -> Option<&SceneElement> {
        self.elements.iter().find(|e| &e.element_id == id)
    }

    pub fn element_index(&self, id: &ElementId) -> Option<usize> {
        self.elements.iter().position(|e| &e.element_id == id)
    }

    pub fn clip(&self, id: &ClipId) -> Option<&TimelineClip> {
        self.clips.iter().find(|c| &c.clip_id == id)
    }

    /// End of the last clip, or zero for a scene without clips.
    pub fn duration(&self) -> f64 {
        self.clips.iter().map(TimelineClip::end_s).fold(0.0, f64::max)
    }

    pub fn referenced_assets(&self) -> BTreeSet<AssetId> {
        let mut out = BTreeSet::new();
        out.extend(self.background.iter().cloned());
        out.extend(self.elements.iter().filter_map(|e| e.asset.clone()));
        out.extend(self.clips.iter().filter_map(|c| match &c.target {
            ClipTarget::Asset(a) => Some(a.clone()),
            ClipTarget::Element(_) => None,
        }));
        if let Some(spec) = &self.interaction {
            out.extend(spec.question_speech.iter().cloned());
            out.extend(spec.responses.iter().filter_map(|r| r.feedback_audio.clone()));
        }
        out
    }
}

/// A position on the canvas as fractions of its width and height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const CENTER: Point = Point { x: 0.5, y: 0.5 };

    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn on_canvas(&self) -> bool {
        (0.0..=1.0).contains(&self.x) && (0.0..=1.0).contains(&self.y)
    }

    pub fn lerp(self, to: Point, progress: f64) -> Point {
        let p = progress.clamp(0.0, 1.0);
        Point {
            x: self.x + (to.x - self.x) * p,
            y: self.y + (to.y - self.y) * p,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Size {
    pub width: f64,
    pub height: f64,
}

impl Size {
    pub fn new(width: f64, height: f64) -> Self {
        Self { width, height }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnimationPath {
    pub start: Point,
    pub end: Point,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementKind {
    Character,
    SpeechBubble,
    Background,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneElement {
    pub element_id: ElementId,
    pub kind: ElementKind,
    #[serde(default)]
    pub asset: Option<AssetId>,
    #[serde(default)]
    pub text: Option<String>,
    pub size: Size,
    /// Resting position, used whenever the element has no path.
    #[serde(default = "default_position")]
    pub position: Point,
    #[serde(default)]
    pub path: Option<AnimationPath>,
}

fn default_position() -> Point {
    Point::CENTER
}

impl SceneElement {
    pub fn character(id: impl Into<ElementId>, asset: AssetId, size: Size) -> Self {
        Self {
            element_id: id.into(),
            kind: ElementKind::Character,
            asset: Some(asset),
            text: None,
            size,
            position: Point::CENTER,
            path: None,
        }
    }

    pub fn speech_bubble(id: impl Into<ElementId>, text: impl Into<String>, size: Size) -> Self {
        Self {
            element_id: id.into(),
            kind: ElementKind::SpeechBubble,
            asset: None,
            text: Some(text.into()),
            size,
            position: Point::CENTER,
            path: None,
        }
    }

    pub fn background(id: impl Into<ElementId>, asset: AssetId) -> Self {
        Self {
            element_id: id.into(),
            kind: ElementKind::Background,
            asset: Some(asset),
            text: None,
            size: Size::new(1.0, 1.0),
            position: Point::CENTER,
            path: None,
        }
    }

    pub fn at(mut self, position: Point) -> Self {
        self.position = position;
        self
    }

    /// First broken element invariant, if any.
    pub fn defect(&self) -> Option<String> {
        let Size { width, height } = self.size;
        if !(width.is_finite() && height.is_finite() && width > 0.0 && height > 0.0) {
            return Some(format!("size must be positive, got {width}x{height}"));
        }
        match self.kind {
            ElementKind::SpeechBubble if self.text.as_deref().is_none_or(str::is_empty) => {
                Some("speech bubble requires text".into())
            }
            ElementKind::Character if self.asset.is_none() => Some("character requires an asset".into()),
            _ => None,
        }
    }

    pub fn on_canvas(&self) -> bool {
        self.position.on_canvas() && self.path.is_none_or(|p| p.start.on_canvas() && p.end.on_canvas())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Track {
    Visual,
    Audio,
    Speech,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipTarget {
    Element(ElementId),
    Asset(AssetId),
}

/// Half-open interval `[start_s, start_s + duration_s)` on one track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineClip {
    pub clip_id: ClipId,
    pub target: ClipTarget,
    pub track: Track,
    pub start_s: f64,
    pub duration_s: f64,
}

impl TimelineClip {
    pub fn end_s(&self) -> f64 {
        self.start_s + self.duration_s
    }

    pub fn overlaps(&self, other: &TimelineClip) -> bool {
        self.track == other.track
            && self.target == other.target
            && self.start_s < other.end_s()
            && other.start_s < self.end_s()
    }

    pub fn contains(&self, t: f64) -> bool {
        self.start_s <= t && t < self.end_s()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractionSpec {
    pub question: String,
    pub responses: Vec<Response>,
    /// Pre-synthesized narration of the question.
    #[serde(default)]
    pub question_speech: Option<AssetId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Response {
    pub label: String,
    #[serde(default)]
    pub feedback_audio: Option<AssetId>,
    /// `None` ends the story when chosen.
    #[serde(default)]
    pub next_scene: Option<SceneId>,
}

impl Response {
    pub fn new(label: impl Into<String>, next_scene: Option<SceneId>) -> Self {
        Self {
            label: label.into(),
            feedback_audio: None,
            next_scene,
        }
    }
}

impl InteractionSpec {
    pub fn response(&self, label: &str) -> Option<&Response> {
        self.responses.iter().find(|r| r.label == label)
    }

    pub fn defect(&self) -> Option<String> {
        if self.responses.len() < 2 {
            return Some(format!("needs at least 2 responses, got {}", self.responses.len()));
        }
        let mut labels = BTreeSet::new();
        for r in &self.responses {
            if r.label.trim().is_empty() {
                return Some("response label is empty".into());
            }
            if !labels.insert(r.label.as_str()) {
                return Some(format!("duplicate response label {:?}", r.label));
            }
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub from: SceneId,
    pub to: SceneId,
    #[serde(default)]
    pub via: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssetKind {
    Image,
    CharacterCutout,
    AudioEffect,
    Music,
    Speech,
}

impl AssetKind {
    pub fn accepts_media_type(self, media_type: &str) -> bool {
        match self {
            AssetKind::Image | AssetKind::CharacterCutout => media_type.starts_with("image/"),
            AssetKind::AudioEffect | AssetKind::Music | AssetKind::Speech => media_type.starts_with("audio/"),
        }
    }

    pub fn is_audio(self) -> bool {
        matches!(self, AssetKind::AudioEffect | AssetKind::Music)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetRef {
    pub asset_id: AssetId,
    pub kind: AssetKind,
    pub media_type: String,
    pub provenance: Provenance,
    pub byte_length: u64,
}

/// Which provider produced an asset and with what inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub provider_name: String,
    pub prompt: String,
    #[serde(default)]
    pub negative_prompt: Option<String>,
    #[serde(default)]
    pub params: BTreeMap<String, Value>,
    #[serde(default)]
    pub seed: Option<u64>,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoiceProfile {
    pub name: String,
    pub voice_id: String,
    pub pitch: f64,
    pub speed: f64,
}

impl VoiceProfile {
    pub fn defect(&self) -> Option<String> {
        if self.name.trim().is_empty() {
            Some("name is empty".into())
        } else if !self.pitch.is_finite() {
            Some("pitch must be finite".into())
        } else if !(self.speed.is_finite() && self.speed > 0.0) {
            Some(format!("speed must be positive, got {}", self.speed))
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    /// Blocks playback and saving.
    Error,
    /// Normal mid-edit state (unlinked scenes, no start yet).
    Deferrable,
    Warning,
}

/// One broken invariant, named by a stable code.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "code")]
pub enum Violation {
    UnsupportedSchemaVersion {
        found: u32,
    },
    MissingStart,
    SceneKeyMismatch {
        key: SceneId,
        scene_id: SceneId,
    },
    DanglingEdge {
        from: SceneId,
        to: SceneId,
    },
    DanglingBranchTarget {
        scene: SceneId,
        label: String,
        target: SceneId,
    },
    AmbiguousSuccessor {
        scene: SceneId,
    },
    UnlabeledBranchEdge {
        from: SceneId,
        to: SceneId,
    },
    UnexpectedEdgeLabel {
        from: SceneId,
        label: String,
    },
    UnknownEdgeLabel {
        from: SceneId,
        label: String,
    },
    BranchEdgeMismatch {
        scene: SceneId,
        label: String,
    },
    DuplicateEdge {
        from: SceneId,
        to: SceneId,
    },
    DuplicateElementId {
        scene: SceneId,
        element: ElementId,
    },
    InvalidElement {
        scene: SceneId,
        element: ElementId,
        reason: String,
    },
    OutOfCanvas {
        scene: SceneId,
        element: ElementId,
    },
    DuplicateClipId {
        scene: SceneId,
        clip: ClipId,
    },
    InvalidClip {
        scene: SceneId,
        clip: ClipId,
        reason: String,
    },
    DanglingClipTarget {
        scene: SceneId,
        clip: ClipId,
    },
    ClipOverlap {
        scene: SceneId,
        first: ClipId,
        second: ClipId,
    },
    InvalidInteraction {
        scene: SceneId,
        reason: String,
    },
    UnknownAsset {
        scene: SceneId,
        asset: AssetId,
    },
    AssetKeyMismatch {
        key: AssetId,
        asset_id: AssetId,
    },
    AssetKindMismatch {
        asset: AssetId,
    },
    InvalidVoiceProfile {
        name: String,
        reason: String,
    },
    EmptySceneName {
        index: usize,
    },
    SpeakerNotInCast {
        scene_name: String,
        speaker: String,
    },
    UnreachableScene {
        scene: SceneId,
    },
    TerminalResponse {
        scene: SceneId,
        label: String,
    },
    NoReachableTerminal,
    ZeroDurationLoop {
        scene: SceneId,
    },
}

impl Violation {
    pub fn code(&self) -> &'static str {
        match self {
            Violation::UnsupportedSchemaVersion { .. } => "UnsupportedSchemaVersion",
            Violation::MissingStart => "MissingStart",
            Violation::SceneKeyMismatch { .. } => "SceneKeyMismatch",
            Violation::DanglingEdge { .. } => "DanglingEdge",
            Violation::DanglingBranchTarget { .. } => "DanglingBranchTarget",
            Violation::AmbiguousSuccessor { .. } => "AmbiguousSuccessor",
            Violation::UnlabeledBranchEdge { .. } => "UnlabeledBranchEdge",
            Violation::UnexpectedEdgeLabel { .. } => "UnexpectedEdgeLabel",
            Violation::UnknownEdgeLabel { .. } => "UnknownEdgeLabel",
            Violation::BranchEdgeMismatch { .. } => "BranchEdgeMismatch",
            Violation::DuplicateEdge { .. } => "DuplicateEdge",
            Violation::DuplicateElementId { .. } => "DuplicateElementId",
            Violation::InvalidElement { .. } => "InvalidElement",
            Violation::OutOfCanvas { .. } => "OutOfCanvas",
            Violation::DuplicateClipId { .. } => "DuplicateClipId",
            Violation::InvalidClip { .. } => "InvalidClip",
            Violation::DanglingClipTarget { .. } => "DanglingClipTarget",
            Violation::ClipOverlap { .. } => "ClipOverlap",
            Violation::InvalidInteraction { .. } => "InvalidInteraction",
            Violation::UnknownAsset { .. } => "UnknownAsset",
            Violation::AssetKeyMismatch { .. } => "AssetKeyMismatch",
            Violation::AssetKindMismatch { .. } => "AssetKindMismatch",
            Violation::InvalidVoiceProfile { .. } => "InvalidVoiceProfile",
            Violation::EmptySceneName { .. } => "EmptySceneName",
            Violation::SpeakerNotInCast { .. } => "SpeakerNotInCast",
            Violation::UnreachableScene { .. } => "UnreachableScene",
            Violation::TerminalResponse { .. } => "TerminalResponse",
            Violation::NoReachableTerminal => "NoReachableTerminal",
            Violation::ZeroDurationLoop { .. } => "ZeroDurationLoop",
        }
    }

    pub fn severity(&self) -> Severity {
        match self {
            Violation::MissingStart | Violation::UnreachableScene { .. } => Severity::Deferrable,
            Violation::SpeakerNotInCast { .. }
            | Violation::TerminalResponse { .. }
            | Violation::NoReachableTerminal
            | Violation::ZeroDurationLoop { .. } => Severity::Warning,
            _ => Severity::Error,
        }
    }

    pub fn is_blocking(&self) -> bool {
        self.severity() == Severity::Error
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let detail = serde_json::to_value(self).ok();
        match detail.as_ref().and_then(Value::as_object) {
            Some(map) if map.len() > 1 => {
                let fields: Vec<String> = map
                    .iter()
                    .filter(|(k, _)| k.as_str() != "code")
                    .map(|(k, v)| format!("{k}={v}"))
                    .collect();
                write!(f, "{}({})", self.code(), fields.join(", "))
            }
            _ => f.write_str(self.code()),
        }
    }
}

/// Lists every invariant violation of `story`, in a deterministic order.
///
/// Errors make the story unplayable; deferrable entries are ordinary
/// mid-edit states; warnings never block anything.
pub fn validate_story(story: &Story) -> Vec<Violation> {
    let mut out = Vec::new();

    if story.schema_version != SCHEMA_VERSION {
        out.push(Violation::UnsupportedSchemaVersion {
            found: story.schema_version,
        });
    }
    let start_ok = matches!(&story.start_scene, Some(s) if story.scenes.contains_key(s));
    if !start_ok {
        out.push(Violation::MissingStart);
    }

    for (key, scene) in &story.scenes {
        if key != &scene.scene_id {
            out.push(Violation::SceneKeyMismatch {
                key: key.clone(),
                scene_id: scene.scene_id.clone(),
            });
        }
        check_scene(story, key, scene, &mut out);
    }

    check_edges(story, &mut out);

    for (key, asset) in &story.asset_index {
        if key != &asset.asset_id {
            out.push(Violation::AssetKeyMismatch {
                key: key.clone(),
                asset_id: asset.asset_id.clone(),
            });
        }
        if !asset.kind.accepts_media_type(&asset.media_type) {
            out.push(Violation::AssetKindMismatch {
                asset: asset.asset_id.clone(),
            });
        }
    }

    for (key, profile) in &story.voice_profiles {
        let reason = if key != &profile.name {
            Some(format!("stored under {key:?} but named {:?}", profile.name))
        } else {
            profile.defect()
        };
        if let Some(reason) = reason {
            out.push(Violation::InvalidVoiceProfile {
                name: key.clone(),
                reason,
            });
        }
    }

    for (index, sp) in story.screenplay.iter().enumerate() {
        if sp.scene_name.trim().is_empty() {
            out.push(Violation::EmptySceneName { index });
        }
        for speaker in sp.uncast_speakers() {
            out.push(Violation::SpeakerNotInCast {
                scene_name: sp.scene_name.clone(),
                speaker: speaker.to_string(),
            });
        }
    }

    if start_ok {
        check_reachability(story, &mut out);
    }
    out
}

fn check_scene(story: &Story, key: &SceneId, scene: &Scene, out: &mut Vec<Violation>) {
    let mut element_ids = BTreeSet::new();
    for el in &scene.elements {
        if !element_ids.insert(&el.element_id) {
            out.push(Violation::DuplicateElementId {
                scene: key.clone(),
                element: el.element_id.clone(),
            });
        }
        if let Some(reason) = el.defect() {
            out.push(Violation::InvalidElement {
                scene: key.clone(),
                element: el.element_id.clone(),
                reason,
            });
        }
        if !el.on_canvas() {
            out.push(Violation::OutOfCanvas {
                scene: key.clone(),
                element: el.element_id.clone(),
            });
        }
    }

    let mut clip_ids = BTreeSet::new();
    for clip in &scene.clips {
        if !clip_ids.insert(&clip.clip_id) {
            out.push(Violation::DuplicateClipId {
                scene: key.clone(),
                clip: clip.clip_id.clone(),
            });
        }
        match clip_defect(clip, scene, &story.asset_index) {
            Some(ClipDefect::Target) => out.push(Violation::DanglingClipTarget {
                scene: key.clone(),
                clip: clip.clip_id.clone(),
            }),
            Some(ClipDefect::Other(reason)) => out.push(Violation::InvalidClip {
                scene: key.clone(),
                clip: clip.clip_id.clone(),
                reason,
            }),
            None => {}
        }
    }
    for (i, a) in scene.clips.iter().enumerate() {
        for b in &scene.clips[i + 1..] {
            if a.overlaps(b) {
                out.push(Violation::ClipOverlap {
                    scene: key.clone(),
                    first: a.clip_id.clone(),
                    second: b.clip_id.clone(),
                });
            }
        }
    }

    if let Some(spec) = &scene.interaction {
        if let Some(reason) = spec.defect() {
            out.push(Violation::InvalidInteraction {
                scene: key.clone(),
                reason,
            });
        }
        for r in &spec.responses {
            match &r.next_scene {
                Some(target) if !story.scenes.contains_key(target) => out.push(Violation::DanglingBranchTarget {
                    scene: key.clone(),
                    label: r.label.clone(),
                    target: target.clone(),
                }),
                None => out.push(Violation::TerminalResponse {
                    scene: key.clone(),
                    label: r.label.clone(),
                }),
                _ => {}
            }
        }
    }

    for asset in scene.referenced_assets() {
        if !story.asset_index.contains_key(&asset) {
            out.push(Violation::UnknownAsset {
                scene: key.clone(),
                asset,
            });
        }
    }
}

pub(crate) enum ClipDefect {
    Target,
    Other(String),
}

/// Clip checks that do not involve other clips.
pub(crate) fn clip_defect(
    clip: &TimelineClip,
    scene: &Scene,
    assets: &BTreeMap<AssetId, AssetRef>,
) -> Option<ClipDefect> {
    if !(clip.duration_s.is_finite() && clip.duration_s > 0.0) {
        return Some(ClipDefect::Other(format!(
            "duration must be positive, got {}",
            clip.duration_s
        )));
    }
    if !(clip.start_s.is_finite() && clip.start_s >= 0.0) {
        return Some(ClipDefect::Other(format!(
            "start must be non-negative, got {}",
            clip.start_s
        )));
    }
    match (&clip.target, clip.track) {
        (ClipTarget::Element(id), Track::Visual) => {
            if scene.element(id).is_none() {
                return Some(ClipDefect::Target);
            }
        }
        (ClipTarget::Element(_), track) => {
            return Some(ClipDefect::Other(format!("{track:?} track needs an asset target")));
        }
        (ClipTarget::Asset(_), Track::Visual) => {
            return Some(ClipDefect::Other("visual track needs an element target".into()));
        }
        (ClipTarget::Asset(id), track) => {
            let Some(asset) = assets.get(id) else {
                return Some(ClipDefect::Target);
            };
            let fits = match track {
                Track::Audio => asset.kind.is_audio(),
                _ => asset.kind == AssetKind::Speech,
            };
            if !fits {
                return Some(ClipDefect::Other(format!(
                    "{:?} asset cannot go on the {track:?} track",
                    asset.kind
                )));
            }
        }
    }
    None
}

fn check_edges(story: &Story, out: &mut Vec<Violation>) {
    let mut seen = BTreeSet::new();
    let mut unlabeled_targets: BTreeMap<&SceneId, BTreeSet<&SceneId>> = BTreeMap::new();

    for edge in &story.edges {
        if !seen.insert(edge) {
            out.push(Violation::DuplicateEdge {
                from: edge.from.clone(),
                to: edge.to.clone(),
            });
            continue;
        }
        let Some(from) = story.scenes.get(&edge.from) else {
            out.push(Violation::DanglingEdge {
                from: edge.from.clone(),
                to: edge.to.clone(),
            });
            continue;
        };
        if !story.scenes.contains_key(&edge.to) {
            out.push(Violation::DanglingEdge {
                from: edge.from.clone(),
                to: edge.to.clone(),
            });
            continue;
        }
        match (&from.interaction, &edge.via) {
            (Some(_), None) => out.push(Violation::UnlabeledBranchEdge {
                from: edge.from.clone(),
                to: edge.to.clone(),
            }),
            (Some(spec), Some(label)) => match spec.response(label) {
                None => out.push(Violation::UnknownEdgeLabel {
                    from: edge.from.clone(),
                    label: label.clone(),
                }),
                Some(r) if r.next_scene.as_ref() != Some(&edge.to) => out.push(Violation::BranchEdgeMismatch {
                    scene: edge.from.clone(),
                    label: label.clone(),
                }),
                Some(_) => {}
            },
            (None, Some(label)) => out.push(Violation::UnexpectedEdgeLabel {
                from: edge.from.clone(),
                label: label.clone(),
            }),
            (None, None) => {
                unlabeled_targets.entry(&edge.from).or_default().insert(&edge.to);
            }
        }
    }

    for (from, targets) in unlabeled_targets {
        if targets.len() > 1 {
            out.push(Violation::AmbiguousSuccessor { scene: from.clone() });
        }
    }

    // Every linked response needs its edge.
    for (id, scene) in &story.scenes {
        let Some(spec) = &scene.interaction else { continue };
        for r in &spec.responses {
            let Some(target) = &r.next_scene else { continue };
            if !story.scenes.contains_key(target) {
                continue;
            }
            let linked = story
                .outgoing(id)
                .any(|e| e.via.as_deref() == Some(r.label.as_str()) && &e.to == target);
            if !linked {
                out.push(Violation::BranchEdgeMismatch {
                    scene: id.clone(),
                    label: r.label.clone(),
                });
            }
        }
    }
}

/// Scenes the player can move to after `scene` finishes.
pub(crate) fn successors<'a>(story: &'a Story, scene: &'a Scene) -> Vec<&'a SceneId> {
    match &scene.interaction {
        Some(spec) => spec
            .responses
            .iter()
            .filter_map(|r| r.next_scene.as_ref())
            .filter(|t| story.scenes.contains_key(*t))
            .collect(),
        None => story
            .outgoing(&scene.scene_id)
            .filter(|e| story.scenes.contains_key(&e.to))
            .map(|e| &e.to)
            .collect(),
    }
}

fn is_terminal(story: &Story, scene: &Scene) -> bool {
    match &scene.interaction {
        Some(spec) => spec.responses.iter().any(|r| r.next_scene.is_none()),
        None => story.outgoing(&scene.scene_id).next().is_none(),
    }
}

fn check_reachability(story: &Story, out: &mut Vec<Violation>) {
    let Some(start) = &story.start_scene else { return };
    let mut reached = BTreeSet::new();
    let mut queue = VecDeque::from([start]);
    reached.insert(start);
    while let Some(id) = queue.pop_front() {
        let Some(scene) = story.scenes.get(id) else { continue };
        for next in successors(story, scene) {
            if reached.insert(next) {
                queue.push_back(next);
            }
        }
    }

    for id in story.scenes.keys() {
        if !reached.contains(id) {
            out.push(Violation::UnreachableScene { scene: id.clone() });
        }
    }
    if !reached.iter().any(|id| is_terminal(story, &story.scenes[*id])) {
        out.push(Violation::NoReachableTerminal);
    }

    // A chain of clipless, non-interactive scenes that loops back on itself
    // would transition forever without time passing.
    let mut reported = BTreeSet::new();
    for id in &reached {
        let mut path = Vec::new();
        let mut cursor = *id;
        loop {
            let scene = &story.scenes[cursor];
            if scene.interaction.is_some() || scene.duration() > 0.0 {
                break;
            }
            if let Some(pos) = path.iter().position(|p| *p == cursor) {
                let first = path[pos..].iter().min().copied().unwrap_or(cursor);
                if reported.insert(first) {
                    out.push(Violation::ZeroDurationLoop { scene: first.clone() });
                }
                break;
            }
            path.push(cursor);
            match successors(story, scene).as_slice() {
                [next] => cursor = next,
                _ => break,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_scene_story() -> Story {
        let mut story = Story::with_id("story".into(), "Port");
        story
            .scenes
            .insert("S1".into(), Scene::new("S1".into(), "A bustling port"));
        story.start_scene = Some("S1".into());
        story
    }

    fn interactive(targets: &[(&str, Option<&str>)]) -> InteractionSpec {
        InteractionSpec {
            question: "Where is Jose going now".into(),
            responses: targets
                .iter()
                .map(|(label, to)| Response::new(*label, to.map(SceneId::from)))
                .collect(),
            question_speech: None,
        }
    }

    /// Independent reference: linear scans over the raw data, no shared helpers.
    fn reference_dangling(story: &Story) -> Vec<String> {
        let ids: Vec<&String> = story.scenes.values().map(|s| &s.scene_id.0).collect();
        let mut out = Vec::new();
        for scene in story.scenes.values() {
            if let Some(spec) = &scene.interaction {
                for r in &spec.responses {
                    if let Some(t) = &r.next_scene {
                        if !ids.iter().any(|id| **id == t.0) {
                            out.push(t.0.clone());
                        }
                    }
                }
            }
        }
        out
    }

    fn reference_fanout(story: &Story) -> Vec<String> {
        let mut out = Vec::new();
        for scene in story.scenes.values() {
            if scene.interaction.is_some() {
                continue;
            }
            let mut targets: Vec<&String> = story
                .edges
                .iter()
                .filter(|e| e.from == scene.scene_id && e.via.is_none())
                .map(|e| &e.to.0)
                .collect();
            targets.sort();
            targets.dedup();
            if targets.len() > 1 {
                out.push(scene.scene_id.0.clone());
            }
        }
        out
    }

    #[test]
    fn minimal_story_is_clean() {
        assert_eq!(validate_story(&one_scene_story()), vec![]);
    }

    #[test]
    fn dangling_branch_target_is_reported() {
        let mut story = one_scene_story();
        story.scenes.insert("S2".into(), Scene::new("S2".into(), "Forest"));
        story.scenes.get_mut(&SceneId::from("S1")).unwrap().interaction =
            Some(interactive(&[("Forest", Some("S2")), ("Town", Some("S9"))]));
        story.edges.push(Edge {
            from: "S1".into(),
            to: "S2".into(),
            via: Some("Forest".into()),
        });

        let found: Vec<_> = validate_story(&story)
            .into_iter()
            .filter_map(|v| match v {
                Violation::DanglingBranchTarget { target, .. } => Some(target.0),
                _ => None,
            })
            .collect();
        assert_eq!(found, vec!["S9".to_string()]);
        assert_eq!(found, reference_dangling(&story));
    }

    #[test]
    fn ambiguous_successor_is_reported() {
        let mut story = one_scene_story();
        for id in ["S2", "S3"] {
            story.scenes.insert(id.into(), Scene::new(id.into(), id));
            story.edges.push(Edge {
                from: "S1".into(),
                to: id.into(),
                via: None,
            });
        }
        let codes: Vec<_> = validate_story(&story).iter().map(Violation::code).collect();
        assert_eq!(codes, vec!["AmbiguousSuccessor"]);
        assert_eq!(reference_fanout(&story), vec!["S1".to_string()]);
    }

    #[test]
    fn validation_is_pure() {
        let mut story = one_scene_story();
        story.start_scene = Some("nope".into());
        story.edges.push(Edge {
            from: "S1".into(),
            to: "S7".into(),
            via: None,
        });
        assert_eq!(validate_story(&story), validate_story(&story));
    }

    #[test]
    fn missing_start_is_deferrable() {
        let mut story = one_scene_story();
        story.start_scene = None;
        let v = validate_story(&story);
        assert_eq!(v, vec![Violation::MissingStart]);
        assert!(!v[0].is_blocking());
    }

    #[test]
    fn terminal_response_and_zero_loop_are_warnings() {
        let mut story = one_scene_story();
        story.scenes.insert("S2".into(), Scene::new("S2".into(), "Loop"));
        story.scenes.insert("S3".into(), Scene::new("S3".into(), "Loop back"));
        story.scenes.get_mut(&SceneId::from("S1")).unwrap().interaction =
            Some(interactive(&[("Loop", Some("S2")), ("Stop", None)]));
        story.edges.extend([
            Edge {
                from: "S1".into(),
                to: "S2".into(),
                via: Some("Loop".into()),
            },
            Edge {
                from: "S2".into(),
                to: "S3".into(),
                via: None,
            },
            Edge {
                from: "S3".into(),
                to: "S2".into(),
                via: None,
            },
        ]);
        let v = validate_story(&story);
        let codes: Vec<_> = v.iter().map(Violation::code).collect();
        assert_eq!(codes, vec!["TerminalResponse", "ZeroDurationLoop"]);
        assert!(v.iter().all(|v| !v.is_blocking()));
    }

    #[test]
    fn speaker_outside_cast_is_a_warning() {
        let mut story = one_scene_story();
        story.screenplay.push(ScreenplayScene {
            scene_name: "A bustling port".into(),
            background_description: "a port".into(),
            narration: String::new(),
            characters: vec!["Jose".into()],
            dialogue: vec![DialogueLine {
                speaker: "Maria".into(),
                speech: "Hola".into(),
            }],
        });
        let v = validate_story(&story);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].severity(), Severity::Warning);
    }

    #[test]
    fn unknown_assets_and_bad_clips_are_errors() {
        let mut story = one_scene_story();
        let scene = story.scenes.get_mut(&SceneId::from("S1")).unwrap();
        scene.elements.push(SceneElement::character(
            "E1",
            AssetId::of_bytes(b"x"),
            Size::new(0.2, 0.4),
        ));
        scene.clips.push(TimelineClip {
            clip_id: "C1".into(),
            target: ClipTarget::Element("E2".into()),
            track: Track::Visual,
            start_s: 0.0,
            duration_s: 1.0,
        });
        let codes: Vec<_> = validate_story(&story).iter().map(Violation::code).collect();
        assert_eq!(codes, vec!["DanglingClipTarget", "UnknownAsset"]);
    }

    #[test]
    fn asset_ids_are_sha256_hex() {
        let id = AssetId::of_bytes(b"abc");
        assert_eq!(id.0, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert!(id.is_well_formed());
        assert!(!AssetId::from("S1").is_well_formed());
    }

    #[test]
    fn violations_serialize_with_code_tag() {
        let v = Violation::DanglingBranchTarget {
            scene: "S1".into(),
            label: "Town".into(),
            target: "S9".into(),
        };
        let json = serde_json::to_value(&v).unwrap();
        assert_eq!(json["code"], "DanglingBranchTarget");
        assert_eq!(json["target"], "S9");
        assert_eq!(
            v.to_string(),
            r#"DanglingBranchTarget(label="Town", scene="S1", target="S9")"#
        );
    }
}
