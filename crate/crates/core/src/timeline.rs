//! Scene editing: canvas elements, animation paths, particles, timeline clips
//! and end-of-scene interactions.
//!
//! Every function takes a scene by reference and returns an edited copy, so
//! a failed edit leaves the caller's scene untouched.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::model::{
    clip_defect, AnimationPath, AssetId, AssetRef, ClipDefect, ClipId, ElementId, InteractionSpec, ParticleEffect,
    Point, Scene, SceneElement, TimelineClip,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TimelineError {
    #[error("invalid element {element}: {reason}")]
    InvalidElement { element: ElementId, reason: String },
    #[error("unknown element {0}")]
    UnknownElement(ElementId),
    #[error("position ({x}, {y}) is outside the canvas")]
    OutOfCanvas { x: f64, y: f64 },
    #[error("clip {0} targets nothing in this scene")]
    UnknownTarget(ClipId),
    #[error("clip {clip} overlaps clip {existing} on the same track and target")]
    OverlapConflict { clip: ClipId, existing: ClipId },
    #[error("clip {0} must have a positive duration")]
    NonPositiveDuration(ClipId),
    #[error("invalid clip {clip}: {reason}")]
    InvalidClip { clip: ClipId, reason: String },
    #[error("unknown clip {0}")]
    UnknownClip(ClipId),
    #[error("invalid interaction: {0}")]
    InvalidInteraction(String),
}

impl TimelineError {
    pub fn code(&self) -> &'static str {
        match self {
            TimelineError::InvalidElement { .. } => "InvalidElement",
            TimelineError::UnknownElement(_) => "UnknownElement",
            TimelineError::OutOfCanvas { .. } => "OutOfCanvas",
            TimelineError::UnknownTarget(_) => "UnknownTarget",
            TimelineError::OverlapConflict { .. } => "OverlapConflict",
            TimelineError::NonPositiveDuration(_) => "NonPositiveDuration",
            TimelineError::InvalidClip { .. } => "InvalidClip",
            TimelineError::UnknownClip(_) => "UnknownClip",
            TimelineError::InvalidInteraction(_) => "InvalidInteraction",
        }
    }
}

pub type Result<T> = std::result::Result<T, TimelineError>;

fn check_point(p: Point) -> Result<()> {
    if p.on_canvas() {
        Ok(())
    } else {
        Err(TimelineError::OutOfCanvas { x: p.x, y: p.y })
    }
}

/// Adds `element`, or replaces the element with the same id in place.
pub fn upsert_element(scene: &Scene, element: SceneElement) -> Result<Scene> {
    if let Some(reason) = element.defect() {
        return Err(TimelineError::InvalidElement {
            element: element.element_id,
            reason,
        });
    }
    check_point(element.position)?;
    if let Some(path) = element.path {
        check_point(path.start)?;
        check_point(path.end)?;
    }
    let mut next = scene.clone();
    match next.element_index(&element.element_id) {
        Some(i) => next.elements[i] = element,
        None => next.elements.push(element),
    }
    Ok(next)
}

/// Removes an element together with the clips that show it.
pub fn remove_element(scene: &Scene, element_id: &ElementId) -> Result<Scene> {
    let idx = scene
        .element_index(element_id)
        .ok_or_else(|| TimelineError::UnknownElement(element_id.clone()))?;
    let mut next = scene.clone();
    next.elements.remove(idx);
    next.clips
        .retain(|c| !matches!(&c.target, crate::model::ClipTarget::Element(e) if e == element_id));
    Ok(next)
}

pub fn set_path(scene: &Scene, element_id: &ElementId, start: Point, end: Point) -> Result<Scene> {
    let idx = scene
        .element_index(element_id)
        .ok_or_else(|| TimelineError::UnknownElement(element_id.clone()))?;
    check_point(start)?;
    check_point(end)?;
    let mut next = scene.clone();
    next.elements[idx].path = Some(AnimationPath { start, end });
    Ok(next)
}

pub fn clear_path(scene: &Scene, element_id: &ElementId) -> Result<Scene> {
    let idx = scene
        .element_index(element_id)
        .ok_or_else(|| TimelineError::UnknownElement(element_id.clone()))?;
    let mut next = scene.clone();
    next.elements[idx].path = None;
    Ok(next)
}

pub fn set_particles(scene: &Scene, effect: ParticleEffect) -> Scene {
    let mut next = scene.clone();
    next.particle_effect = effect;
    next
}

/// Adds `clip` or moves the clip with the same id.
///
/// `assets` resolves asset targets for the audio and speech tracks; visual
/// clips must target an element of this scene.
pub fn upsert_clip(scene: &Scene, clip: TimelineClip, assets: &BTreeMap<AssetId, AssetRef>) -> Result<Scene> {
    if clip.duration_s.is_nan() || clip.duration_s <= 0.0 {
        return Err(TimelineError::NonPositiveDuration(clip.clip_id));
    }
    match clip_defect(&clip, scene, assets) {
        Some(ClipDefect::Target) => return Err(TimelineError::UnknownTarget(clip.clip_id)),
        Some(ClipDefect::Other(reason)) => {
            return Err(TimelineError::InvalidClip {
                clip: clip.clip_id,
                reason,
            })
        }
        None => {}
    }
    if let Some(existing) = scene
        .clips
        .iter()
        .find(|c| c.clip_id != clip.clip_id && c.overlaps(&clip))
    {
        return Err(TimelineError::OverlapConflict {
            clip: clip.clip_id,
            existing: existing.clip_id.clone(),
        });
    }
    let mut next = scene.clone();
    match next.clips.iter().position(|c| c.clip_id == clip.clip_id) {
        Some(i) => next.clips[i] = clip,
        None => next.clips.push(clip),
    }
    Ok(next)
}

pub fn remove_clip(scene: &Scene, clip_id: &ClipId) -> Result<Scene> {
    let idx = scene
        .clips
        .iter()
        .position(|c| &c.clip_id == clip_id)
        .ok_or_else(|| TimelineError::UnknownClip(clip_id.clone()))?;
    let mut next = scene.clone();
    next.clips.remove(idx);
    Ok(next)
}

/// Seconds until the last clip ends; zero for a scene without clips.
pub fn scene_duration(scene: &Scene) -> f64 {
    scene.duration()
}

/// Records the question asked when the scene ends.
///
/// Branch targets are checked against the story graph by
/// [`storyboard::set_interaction`](crate::storyboard::set_interaction).
pub fn set_interaction(scene: &Scene, spec: InteractionSpec) -> Result<Scene> {
    if let Some(reason) = spec.defect() {
        return Err(TimelineError::InvalidInteraction(reason));
    }
    let mut next = scene.clone();
    next.interaction = Some(spec);
    Ok(next)
}

pub fn clear_interaction(scene: &Scene) -> Scene {
    let mut next = scene.clone();
    next.interaction = None;
    next
}
