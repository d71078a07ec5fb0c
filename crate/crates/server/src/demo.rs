//! Ready-made stories for the command line: a blank one, one laid out from a
//! storyline, and a small branching demo built entirely with the configured providers.

use storyloom::genai::{
    AudioKind, AudioRequest, GenError, ImageRequest, SegmentHint, SegmentRequest, SpeechRequest, Studio,
};
use storyloom::model::{
    ClipId, ClipTarget, ElementId, InteractionSpec, ParticleEffect, Point, Response, SceneElement, Size, Story,
    StoryId, TimelineClip, Track, VoiceProfile,
};
use storyloom::screenplay::{compile_screenplay, CompileError, ParseReport};
use storyloom::storyboard::{self, GraphError};
use storyloom::timeline::{self, TimelineError};
use thiserror::Error;

pub const DEMO_STORYLINE: &str = "A bustling port. Jose sails home after ten years and Maria waits on the pier.\n\n\
The quiet forest. Jose follows a fox between the tall pines.";

pub const DEMO_QUESTION: &str = "Where should Jose go next?";

#[derive(Debug, Error)]
pub enum DemoError {
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Timeline(#[from] TimelineError),
    #[error(transparent)]
    Generation(#[from] GenError),
    #[error("screenplay rejected: {}", .0.warnings.join("; "))]
    Rejected(ParseReport),
}

/// One empty scene, already the start.
pub fn blank_story(title: &str) -> Story {
    let (story, first) = storyboard::add_scene(&Story::new(title), "Scene 1");
    storyboard::set_start(&story, &first).expect("scene was just added")
}

/// Compiles `storyline` and lays the scenes out as a chain. Returns the
/// story and the layout warnings.
pub fn story_from_storyline(title: &str, storyline: &str, studio: &Studio) -> Result<(Story, Vec<String>), DemoError> {
    let report = compile_screenplay(storyline, studio.providers().text.as_ref())?;
    if report.rejected {
        return Err(DemoError::Rejected(report));
    }
    let mut story = Story::new(title);
    story.storyline = storyline.to_string();
    let (story, mut warnings) = storyboard::populate_from_screenplay(&story, &report.scenes, studio)?;
    warnings.extend(report.warnings);
    Ok((story, warnings))
}

fn clip(id: &str, target: ClipTarget, track: Track, start_s: f64, duration_s: f64) -> TimelineClip {
    TimelineClip {
        clip_id: ClipId::from(id),
        target,
        track,
        start_s,
        duration_s,
    }
}

/// A two-way branching story: the port scene ends with a question whose
/// answers lead to the forest or the town square.
pub fn demo_story(studio: &Studio) -> Result<Story, DemoError> {
    let (story, _) = story_from_storyline("Homecoming", DEMO_STORYLINE, studio)?;
    let mut story = Story {
        story_id: StoryId::from("demo"),
        ..story
    };
    let port = story.start_scene.clone().expect("populated stories have a start");
    let forest = story.outgoing(&port).next().expect("scenes are chained").to.clone();
    let (with_town, town) = storyboard::add_scene(&story, "The town square");
    story = with_town;

    let portrait = studio.generate_images(&ImageRequest::new("a fisherman with a blue cap, storybook style"))?;
    let cutout = studio.segment_character(&SegmentRequest {
        image: portrait[0].asset.asset_id.clone(),
        hint: SegmentHint::Box {
            x0: 0.2,
            y0: 0.1,
            x1: 0.8,
            y1: 0.9,
        },
    })?;
    let gulls = studio.generate_audio(&AudioRequest::new(
        AudioKind::SoundEffect,
        "seagulls over a harbour",
        3.0,
    ))?;
    let theme = studio.generate_audio(&AudioRequest::new(AudioKind::Music, "calm accordion waltz", 4.0))?;
    let voice = VoiceProfile {
        name: "Maria".into(),
        voice_id: "alto-1".into(),
        pitch: 0.0,
        speed: 1.0,
    };
    let greeting = studio.synthesize_speech(&SpeechRequest {
        text: "Welcome home, Jose!".into(),
        profile: voice.clone(),
    })?;
    let question = studio.synthesize_speech(&SpeechRequest {
        text: DEMO_QUESTION.into(),
        profile: voice.clone(),
    })?;
    for generated in [&cutout, &gulls, &theme, &greeting, &question] {
        story.register_asset(generated.asset.clone());
    }
    story.voice_profiles.insert(voice.name.clone(), voice);

    let assets = story.asset_index.clone();
    let jose = ElementId::from("E1");
    let bubble = ElementId::from("E2");
    story = storyboard::edit_scene(&story, &port, |scene| {
        let s = timeline::upsert_element(
            scene,
            SceneElement::character(jose.clone(), cutout.asset.asset_id.clone(), Size::new(0.25, 0.4)),
        )?;
        let s = timeline::set_path(&s, &jose, Point::new(0.1, 0.7), Point::new(0.6, 0.7))?;
        let s = timeline::upsert_element(
            &s,
            SceneElement::speech_bubble(bubble.clone(), "Welcome home, Jose!", Size::new(0.3, 0.1))
                .at(Point::new(0.5, 0.2)),
        )?;
        let s = timeline::upsert_clip(
            &s,
            clip("C1", ClipTarget::Element(jose.clone()), Track::Visual, 0.0, 4.0),
            &assets,
        )?;
        let s = timeline::upsert_clip(
            &s,
            clip("C2", ClipTarget::Element(bubble.clone()), Track::Visual, 0.5, 2.0),
            &assets,
        )?;
        let greeting_id = greeting.asset.asset_id.clone();
        let s = timeline::upsert_clip(
            &s,
            clip("C3", ClipTarget::Asset(greeting_id), Track::Speech, 0.5, 1.25),
            &assets,
        )?;
        timeline::upsert_clip(
            &s,
            clip(
                "C4",
                ClipTarget::Asset(gulls.asset.asset_id.clone()),
                Track::Audio,
                0.0,
                3.0,
            ),
            &assets,
        )
    })?;
    story = storyboard::edit_scene(&story, &forest, |scene| {
        Ok(timeline::set_particles(scene, ParticleEffect::Rain))
    })?;
    story = storyboard::edit_scene(&story, &town, |scene| {
        timeline::upsert_clip(
            scene,
            clip(
                "C5",
                ClipTarget::Asset(theme.asset.asset_id.clone()),
                Track::Audio,
                0.0,
                4.0,
            ),
            &assets,
        )
    })?;

    let mut to_forest = Response::new("Forest", Some(forest));
    to_forest.feedback_audio = Some(gulls.asset.asset_id.clone());
    story = storyboard::set_interaction(
        &story,
        &port,
        Some(InteractionSpec {
            question: DEMO_QUESTION.into(),
            responses: vec![to_forest, Response::new("Town", Some(town))],
            question_speech: Some(question.asset.asset_id.clone()),
        }),
    )?;
    Ok(story)
}
