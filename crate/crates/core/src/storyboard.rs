//! The story graph: scene lifecycle, links, branches and the start scene.
//!
//! Every operation returns a new [`Story`] and leaves its input untouched.
//! Links from a scene with an interaction are labeled with a response, and
//! the response's `next_scene` is kept equal to its edge target.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::genai::prompts::placeholder_background_prompt;
use crate::model::{
    AssetRef, ClipId, ClipTarget, Edge, ElementId, InteractionSpec, Scene, SceneId, ScreenplayScene, Story,
};
use crate::timeline::TimelineError;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("unknown scene {0}")]
    UnknownScene(SceneId),
    #[error("scene {0} is the start scene; choose another start first")]
    RemovingStartScene(SceneId),
    #[error("scene {scene} has an interaction; links from it need one of its response labels (got {label:?})")]
    MissingResponseLabel { scene: SceneId, label: Option<String> },
    #[error("scene {scene} has no interaction, so the link cannot carry label {label:?}")]
    UnexpectedResponseLabel { scene: SceneId, label: String },
    #[error("scene {scene} already continues to {existing}")]
    AmbiguousSuccessor { scene: SceneId, existing: SceneId },
    #[error("link {from} -> {to} already exists")]
    DuplicateEdge { from: SceneId, to: SceneId },
    #[error("no link {from} -> {to}")]
    UnknownEdge { from: SceneId, to: SceneId },
    #[error("screenplay has no scenes")]
    EmptyScreenplay,
    #[error(transparent)]
    Timeline(#[from] TimelineError),
}

impl GraphError {
    pub fn code(&self) -> &'static str {
        match self {
            GraphError::UnknownScene(_) => "UnknownScene",
            GraphError::RemovingStartScene(_) => "RemovingStartScene",
            GraphError::MissingResponseLabel { .. } => "MissingResponseLabel",
            GraphError::UnexpectedResponseLabel { .. } => "UnexpectedResponseLabel",
            GraphError::AmbiguousSuccessor { .. } => "AmbiguousSuccessor",
            GraphError::DuplicateEdge { .. } => "DuplicateEdge",
            GraphError::UnknownEdge { .. } => "UnknownEdge",
            GraphError::EmptyScreenplay => "EmptyScreenplay",
            GraphError::Timeline(e) => e.code(),
        }
    }
}

pub type Result<T> = std::result::Result<T, GraphError>;

/// Supplies placeholder backgrounds while a screenplay is laid out.
pub trait BackgroundSource {
    fn placeholder_background(&self, description: &str) -> std::result::Result<AssetRef, String>;
}

/// Leaves every background unset.
pub struct NoBackgrounds;

impl BackgroundSource for NoBackgrounds {
    fn placeholder_background(&self, _description: &str) -> std::result::Result<AssetRef, String> {
        Err("no image provider".into())
    }
}

fn require_scene(story: &Story, id: &SceneId) -> Result<()> {
    if story.scenes.contains_key(id) {
        Ok(())
    } else {
        Err(GraphError::UnknownScene(id.clone()))
    }
}

fn fresh(prefix: &str, start: usize, taken: impl Fn(&str) -> bool) -> String {
    (start..)
        .map(|n| format!("{prefix}{n}"))
        .find(|id| !taken(id))
        .expect("an unused id exists")
}

pub fn fresh_scene_id(story: &Story) -> SceneId {
    SceneId(fresh("S", story.scenes.len() + 1, |id| {
        story.scenes.contains_key(&SceneId::from(id))
    }))
}

/// An element id not used in any scene of the story.
pub fn fresh_element_id(story: &Story) -> ElementId {
    fresh_element_ids(story, 1).remove(0)
}

fn fresh_element_ids(story: &Story, count: usize) -> Vec<ElementId> {
    let used: BTreeSet<&str> = story
        .scenes
        .values()
        .flat_map(|s| s.elements.iter().map(|e| e.element_id.as_str()))
        .collect();
    let mut out: Vec<ElementId> = Vec::with_capacity(count);
    let mut n = used.len() + 1;
    while out.len() < count {
        let id = format!("E{n}");
        if !used.contains(id.as_str()) {
            out.push(ElementId(id));
        }
        n += 1;
    }
    out
}

/// A clip id not used in any scene of the story.
pub fn fresh_clip_id(story: &Story) -> ClipId {
    fresh_clip_ids(story, 1).remove(0)
}

fn fresh_clip_ids(story: &Story, count: usize) -> Vec<ClipId> {
    let used: BTreeSet<&str> = story
        .scenes
        .values()
        .flat_map(|s| s.clips.iter().map(|c| c.clip_id.as_str()))
        .collect();
    let mut out: Vec<ClipId> = Vec::with_capacity(count);
    let mut n = used.len() + 1;
    while out.len() < count {
        let id = format!("C{n}");
        if !used.contains(id.as_str()) {
            out.push(ClipId(id));
        }
        n += 1;
    }
    out
}

/// Adds an empty, unlinked scene.
pub fn add_scene(story: &Story, title: &str) -> (Story, SceneId) {
    let id = fresh_scene_id(story);
    let mut next = story.clone();
    next.scenes.insert(id.clone(), Scene::new(id.clone(), title));
    (next, id)
}

pub fn rename_scene(story: &Story, id: &SceneId, title: &str) -> Result<Story> {
    require_scene(story, id)?;
    let mut next = story.clone();
    next.scenes.get_mut(id).expect("checked").title = title.to_string();
    Ok(next)
}

/// Removes a scene and every link into or out of it. Responses elsewhere that
/// led to it are deleted; an interaction left with fewer than two responses
/// is removed and its remaining link becomes a plain one. Each such repair
/// is reported as a warning.
pub fn remove_scene(story: &Story, id: &SceneId) -> Result<(Story, Vec<String>)> {
    require_scene(story, id)?;
    if story.start_scene.as_ref() == Some(id) {
        return Err(GraphError::RemovingStartScene(id.clone()));
    }
    let mut next = story.clone();
    let mut warnings = Vec::new();
    next.scenes.remove(id);
    next.edges.retain(|e| &e.from != id && &e.to != id);

    let referring: Vec<SceneId> = next
        .scenes
        .values()
        .filter(|s| {
            s.interaction
                .as_ref()
                .is_some_and(|spec| spec.responses.iter().any(|r| r.next_scene.as_ref() == Some(id)))
        })
        .map(|s| s.scene_id.clone())
        .collect();
    for sid in referring {
        let scene = next.scenes.get_mut(&sid).expect("listed above");
        let spec = scene.interaction.as_mut().expect("filtered on interaction");
        let (gone, kept): (Vec<_>, Vec<_>) = spec
            .responses
            .drain(..)
            .partition(|r| r.next_scene.as_ref() == Some(id));
        spec.responses = kept;
        for r in &gone {
            warnings.push(format!(
                "scene {sid}: removed response {:?} because it led to the deleted scene {id}",
                r.label
            ));
        }
        if spec.responses.len() < 2 {
            let survivor = spec.responses.first().cloned();
            scene.interaction = None;
            warnings.push(format!(
                "scene {sid}: removed its interaction because fewer than two responses remain"
            ));
            next.edges.retain(|e| e.from != sid);
            if let Some(target) = survivor.and_then(|r| r.next_scene) {
                next.edges.push(Edge {
                    from: sid.clone(),
                    to: target.clone(),
                    via: None,
                });
                warnings.push(format!("scene {sid}: now continues straight to {target}"));
            }
        }
    }
    Ok((next, warnings))
}

/// Copies a scene with fresh scene, element and clip ids. The copy has no
/// links, so its responses (if any) end the story until relinked.
pub fn duplicate_scene(story: &Story, id: &SceneId) -> Result<(Story, SceneId)> {
    let original = story
        .scenes
        .get(id)
        .ok_or_else(|| GraphError::UnknownScene(id.clone()))?;
    let new_id = fresh_scene_id(story);
    let element_ids = fresh_element_ids(story, original.elements.len());
    let clip_ids = fresh_clip_ids(story, original.clips.len());

    let mut copy = original.clone();
    copy.scene_id = new_id.clone();
    let renames: Vec<(ElementId, ElementId)> = copy
        .elements
        .iter_mut()
        .zip(element_ids)
        .map(|(el, fresh)| (std::mem::replace(&mut el.element_id, fresh.clone()), fresh))
        .collect();
    for (clip, fresh) in copy.clips.iter_mut().zip(clip_ids) {
        clip.clip_id = fresh;
        if let ClipTarget::Element(target) = &mut clip.target {
            if let Some((_, renamed)) = renames.iter().find(|(old, _)| old == target) {
                *target = renamed.clone();
            }
        }
    }
    if let Some(spec) = &mut copy.interaction {
        for r in &mut spec.responses {
            r.next_scene = None;
        }
    }
    let mut next = story.clone();
    next.scenes.insert(new_id.clone(), copy);
    Ok((next, new_id))
}

/// Links `from` to `to`. Scenes with an interaction link through one of
/// their responses (`via`), replacing that response's previous link.
pub fn link_scenes(story: &Story, from: &SceneId, to: &SceneId, via: Option<&str>) -> Result<Story> {
    require_scene(story, from)?;
    require_scene(story, to)?;
    let scene = &story.scenes[from];
    let mut next = story.clone();
    match (&scene.interaction, via) {
        (Some(spec), Some(label)) if spec.response(label).is_some() => {
            if story
                .outgoing(from)
                .any(|e| &e.to == to && e.via.as_deref() == Some(label))
            {
                return Err(GraphError::DuplicateEdge {
                    from: from.clone(),
                    to: to.clone(),
                });
            }
            next.edges
                .retain(|e| !(&e.from == from && e.via.as_deref() == Some(label)));
            next.edges.push(Edge {
                from: from.clone(),
                to: to.clone(),
                via: Some(label.to_string()),
            });
            let spec = next
                .scenes
                .get_mut(from)
                .and_then(|s| s.interaction.as_mut())
                .expect("checked");
            for r in spec.responses.iter_mut().filter(|r| r.label == label) {
                r.next_scene = Some(to.clone());
            }
        }
        (Some(_), label) => {
            return Err(GraphError::MissingResponseLabel {
                scene: from.clone(),
                label: label.map(str::to_string),
            })
        }
        (None, Some(label)) => {
            return Err(GraphError::UnexpectedResponseLabel {
                scene: from.clone(),
                label: label.to_string(),
            })
        }
        (None, None) => {
            if let Some(existing) = story.outgoing(from).next() {
                return Err(if &existing.to == to {
                    GraphError::DuplicateEdge {
                        from: from.clone(),
                        to: to.clone(),
                    }
                } else {
                    GraphError::AmbiguousSuccessor {
                        scene: from.clone(),
                        existing: existing.to.clone(),
                    }
                });
            }
            next.edges.push(Edge {
                from: from.clone(),
                to: to.clone(),
                via: None,
            });
        }
    }
    Ok(next)
}

/// Removes one link. Unlinking a response makes it end the story.
pub fn unlink_scenes(story: &Story, from: &SceneId, to: &SceneId, via: Option<&str>) -> Result<Story> {
    require_scene(story, from)?;
    let pos = story
        .edges
        .iter()
        .position(|e| &e.from == from && &e.to == to && e.via.as_deref() == via)
        .ok_or_else(|| GraphError::UnknownEdge {
            from: from.clone(),
            to: to.clone(),
        })?;
    let mut next = story.clone();
    next.edges.remove(pos);
    if let (Some(label), Some(spec)) = (via, next.scenes.get_mut(from).and_then(|s| s.interaction.as_mut())) {
        for r in spec.responses.iter_mut().filter(|r| r.label == label) {
            r.next_scene = None;
        }
    }
    Ok(next)
}

pub fn set_start(story: &Story, id: &SceneId) -> Result<Story> {
    require_scene(story, id)?;
    let mut next = story.clone();
    next.start_scene = Some(id.clone());
    Ok(next)
}

/// Rebuilds the outgoing links of `id` from its interaction's responses.
fn sync_branch_edges(story: &mut Story, id: &SceneId) {
    let Some(spec) = story.scenes.get(id).and_then(|s| s.interaction.clone()) else {
        return;
    };
    story.edges.retain(|e| &e.from != id);
    for r in &spec.responses {
        if let Some(target) = &r.next_scene {
            story.edges.push(Edge {
                from: id.clone(),
                to: target.clone(),
                via: Some(r.label.clone()),
            });
        }
    }
}

fn check_targets(story: &Story, spec: &InteractionSpec) -> Result<()> {
    for r in &spec.responses {
        if let Some(target) = &r.next_scene {
            require_scene(story, target)?;
        }
    }
    Ok(())
}

/// Sets or clears the end-of-scene interaction. The scene's outgoing links
/// are replaced by one labeled link per response that has a target; clearing
/// the interaction removes them all.
pub fn set_interaction(story: &Story, id: &SceneId, spec: Option<InteractionSpec>) -> Result<Story> {
    require_scene(story, id)?;
    let mut next = story.clone();
    match spec {
        Some(spec) => {
            check_targets(story, &spec)?;
            let scene = crate::timeline::set_interaction(&story.scenes[id], spec)?;
            next.scenes.insert(id.clone(), scene);
            sync_branch_edges(&mut next, id);
        }
        None => {
            let scene = crate::timeline::clear_interaction(&story.scenes[id]);
            next.scenes.insert(id.clone(), scene);
            next.edges.retain(|e| &e.from != id);
        }
    }
    Ok(next)
}

/// Applies a scene edit (see [`crate::timeline`]). The scene keeps its id;
/// if the edit changes the interaction, links are updated as in [`set_interaction`].
pub fn edit_scene(
    story: &Story,
    id: &SceneId,
    edit: impl FnOnce(&Scene) -> std::result::Result<Scene, TimelineError>,
) -> Result<Story> {
    let before = story
        .scenes
        .get(id)
        .ok_or_else(|| GraphError::UnknownScene(id.clone()))?;
    let mut after = edit(before)?;
    after.scene_id = id.clone();
    if after.interaction != before.interaction {
        let spec = after.interaction.take();
        let mut next = story.clone();
        next.scenes.insert(id.clone(), after);
        return set_interaction(&next, id, spec);
    }
    let mut next = story.clone();
    next.scenes.insert(id.clone(), after);
    Ok(next)
}

/// Lays a screenplay out as a chain of new scenes, starting at the first.
/// Each scene asks `backgrounds` for a placeholder; failures only warn.
pub fn populate_from_screenplay(
    story: &Story,
    screenplay: &[ScreenplayScene],
    backgrounds: &dyn BackgroundSource,
) -> Result<(Story, Vec<String>)> {
    if screenplay.is_empty() {
        return Err(GraphError::EmptyScreenplay);
    }
    let mut next = story.clone();
    next.screenplay = screenplay.to_vec();
    let mut warnings = Vec::new();
    let mut previous: Option<SceneId> = None;
    for sp in screenplay {
        let (with_scene, id) = add_scene(&next, &sp.scene_name);
        next = with_scene;
        let scene = next.scenes.get_mut(&id).expect("just added");
        scene.background_description = sp.background_description.clone();
        if sp.background_description.trim().is_empty() {
            warnings.push(format!("scene {id}: no background description, background left unset"));
        } else {
            match backgrounds.placeholder_background(&sp.background_description) {
                Ok(asset) => {
                    scene.background = Some(asset.asset_id.clone());
                    next.register_asset(asset);
                }
                Err(reason) => warnings.push(format!(
                    "scene {id}: placeholder background for {:?} failed: {reason}",
                    placeholder_background_prompt(&sp.background_description)
                )),
            }
        }
        if let Some(prev) = &previous {
            next.edges.push(Edge {
                from: prev.clone(),
                to: id.clone(),
                via: None,
            });
        } else {
            next.start_scene = Some(id.clone());
        }
        previous = Some(id);
    }
    Ok((next, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genai::Studio;
    use crate::model::{validate_story, DialogueLine, Response, SceneElement, Size, TimelineClip, Track};
    use proptest::prelude::*;

    fn sp(name: &str) -> ScreenplayScene {
        ScreenplayScene {
            scene_name: name.into(),
            background_description: format!("{name} background"),
            narration: "n".into(),
            characters: vec!["Jose".into()],
            dialogue: vec![DialogueLine {
                speaker: "Jose".into(),
                speech: "hi".into(),
            }],
        }
    }

    fn blocking(story: &Story) -> Vec<String> {
        validate_story(story)
            .into_iter()
            .filter(|v| v.is_blocking())
            .map(|v| v.to_string())
            .collect()
    }

    fn choice(labels: &[(&str, Option<&SceneId>)]) -> InteractionSpec {
        InteractionSpec {
            question: "Where now".into(),
            responses: labels.iter().map(|(l, t)| Response::new(*l, t.cloned())).collect(),
            question_speech: None,
        }
    }

    fn three() -> (Story, [SceneId; 3]) {
        let (s, a) = add_scene(&Story::with_id("t".into(), "t"), "A");
        let (s, b) = add_scene(&s, "B");
        let (s, c) = add_scene(&s, "C");
        (set_start(&s, &a).unwrap(), [a, b, c])
    }

    #[test]
    fn populate_links_linearly() {
        let studio = Studio::mock();
        let story = Story::with_id("t".into(), "t");
        let (story, warnings) =
            populate_from_screenplay(&story, &[sp("Port"), sp("Sea"), sp("Island")], &studio).unwrap();
        assert!(warnings.is_empty());
        let ids: Vec<&str> = story.scenes.keys().map(SceneId::as_str).collect();
        assert_eq!(ids, ["S1", "S2", "S3"]);
        assert_eq!(story.start_scene, Some("S1".into()));
        let edges: Vec<(&str, &str)> = story.edges.iter().map(|e| (e.from.as_str(), e.to.as_str())).collect();
        assert_eq!(edges, [("S1", "S2"), ("S2", "S3")]);
        assert_eq!(story.scenes[&SceneId::from("S2")].title, "Sea");
        assert!(story.scenes.values().all(|s| s.background.is_some()));
        assert!(blocking(&story).is_empty(), "{:?}", blocking(&story));
        assert_eq!(story.screenplay.len(), 3);
    }

    #[test]
    fn populate_is_deterministic() {
        let story = Story::with_id("t".into(), "t");
        let run = || populate_from_screenplay(&story, &[sp("Port"), sp("Sea")], &Studio::mock()).unwrap();
        assert_eq!(run(), run());
    }

    #[test]
    fn populate_single_and_empty() {
        let story = Story::with_id("t".into(), "t");
        let (one, _) = populate_from_screenplay(&story, &[sp("Port")], &Studio::mock()).unwrap();
        assert_eq!(one.scenes.len(), 1);
        assert!(one.edges.is_empty());
        assert_eq!(
            populate_from_screenplay(&story, &[], &NoBackgrounds).unwrap_err(),
            GraphError::EmptyScreenplay
        );
    }

    #[test]
    fn failing_backgrounds_only_warn() {
        let story = Story::with_id("t".into(), "t");
        let (s, warnings) = populate_from_screenplay(&story, &[sp("Port"), sp("Sea")], &NoBackgrounds).unwrap();
        assert_eq!(warnings.len(), 2);
        assert!(s.scenes.values().all(|s| s.background.is_none()));
        assert!(blocking(&s).is_empty());
    }

    #[test]
    fn second_plain_link_is_ambiguous() {
        let (s, [a, b, c]) = three();
        let s = link_scenes(&s, &a, &b, None).unwrap();
        assert!(matches!(
            link_scenes(&s, &a, &c, None),
            Err(GraphError::AmbiguousSuccessor { .. })
        ));
        assert!(matches!(
            link_scenes(&s, &a, &b, None),
            Err(GraphError::DuplicateEdge { .. })
        ));
        assert!(matches!(
            link_scenes(&s, &a, &b, Some("Forest")),
            Err(GraphError::UnexpectedResponseLabel { .. })
        ));
    }

    #[test]
    fn branches_link_through_response_labels() {
        let (s, [a, b, c]) = three();
        let s = set_interaction(&s, &a, Some(choice(&[("Forest", None), ("Town", None)]))).unwrap();
        let s = link_scenes(&s, &a, &b, Some("Forest")).unwrap();
        let s = link_scenes(&s, &a, &c, Some("Town")).unwrap();
        let spec = s.scenes[&a].interaction.as_ref().unwrap();
        assert_eq!(spec.response("Forest").unwrap().next_scene, Some(b.clone()));
        assert_eq!(spec.response("Town").unwrap().next_scene, Some(c.clone()));
        assert!(blocking(&s).is_empty(), "{:?}", blocking(&s));
        assert!(matches!(
            link_scenes(&s, &a, &b, Some("River")),
            Err(GraphError::MissingResponseLabel { .. })
        ));
        assert!(matches!(
            link_scenes(&s, &a, &b, None),
            Err(GraphError::MissingResponseLabel { .. })
        ));
        // Relinking a response moves its edge.
        let s = link_scenes(&s, &a, &c, Some("Forest")).unwrap();
        assert_eq!(s.outgoing(&a).count(), 2);
        assert!(blocking(&s).is_empty());
    }

    #[test]
    fn removing_a_branch_target_repairs_the_interaction() {
        let (s, [a, b, c]) = three();
        let (s, d) = add_scene(&s, "D");
        let spec = choice(&[("Forest", Some(&b)), ("Town", Some(&c)), ("River", Some(&d))]);
        let s = set_interaction(&s, &a, Some(spec)).unwrap();
        let (s, warnings) = remove_scene(&s, &d).unwrap();
        assert_eq!(warnings.len(), 1);
        assert_eq!(s.scenes[&a].interaction.as_ref().unwrap().responses.len(), 2);
        assert!(blocking(&s).is_empty());

        let (s, warnings) = remove_scene(&s, &c).unwrap();
        assert_eq!(warnings.len(), 3, "{warnings:?}");
        assert!(s.scenes[&a].interaction.is_none());
        assert_eq!(
            s.edges,
            vec![Edge {
                from: a.clone(),
                to: b.clone(),
                via: None
            }]
        );
        assert!(blocking(&s).is_empty());
    }

    #[test]
    fn start_scene_cannot_be_removed() {
        let (s, [a, ..]) = three();
        assert_eq!(remove_scene(&s, &a).unwrap_err(), GraphError::RemovingStartScene(a));
        assert!(matches!(
            remove_scene(&s, &"S9".into()),
            Err(GraphError::UnknownScene(_))
        ));
    }

    #[test]
    fn remove_undoes_add() {
        let (s, [a, b, _]) = three();
        let s = link_scenes(&s, &a, &b, None).unwrap();
        let (added, id) = add_scene(&s, "X");
        let (removed, warnings) = remove_scene(&added, &id).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(removed, s);
    }

    #[test]
    fn duplicate_uses_fresh_ids_and_shares_assets() {
        let studio = Studio::mock();
        let story = Story::with_id("t".into(), "t");
        let (mut s, _) = populate_from_screenplay(&story, &[sp("Port")], &studio).unwrap();
        let a: SceneId = "S1".into();
        let bg = s.scenes[&a].background.clone().unwrap();
        for i in 0..4 {
            let el = SceneElement::character(format!("E{}", i + 1).as_str(), bg.clone(), Size::new(0.2, 0.2));
            s = edit_scene(&s, &a, |sc| crate::timeline::upsert_element(sc, el)).unwrap();
        }
        let clip = TimelineClip {
            clip_id: "C1".into(),
            target: ClipTarget::Element("E2".into()),
            track: Track::Visual,
            start_s: 0.0,
            duration_s: 2.0,
        };
        let assets = s.asset_index.clone();
        s = edit_scene(&s, &a, |sc| crate::timeline::upsert_clip(sc, clip, &assets)).unwrap();

        let (s2, copy) = duplicate_scene(&s, &a).unwrap();
        let orig = &s2.scenes[&a];
        let dup = &s2.scenes[&copy];
        assert_eq!(dup.elements.len(), 4);
        let orig_ids: BTreeSet<_> = orig.elements.iter().map(|e| &e.element_id).collect();
        assert!(dup.elements.iter().all(|e| !orig_ids.contains(&e.element_id)));
        assert!(dup.elements.iter().all(|e| e.asset == Some(bg.clone())));
        assert_ne!(dup.clips[0].clip_id, orig.clips[0].clip_id);
        assert_eq!(
            dup.clips[0].target,
            ClipTarget::Element(dup.elements[1].element_id.clone())
        );
        assert_eq!(s2.edges, s.edges);
        assert!(blocking(&s2).is_empty(), "{:?}", blocking(&s2));
    }

    #[test]
    fn duplicate_of_interactive_scene_drops_links() {
        let (s, [a, b, c]) = three();
        let s = set_interaction(&s, &a, Some(choice(&[("Forest", Some(&b)), ("Town", Some(&c))]))).unwrap();
        let (s, copy) = duplicate_scene(&s, &a).unwrap();
        assert!(s.outgoing(&copy).next().is_none());
        assert!(blocking(&s).is_empty(), "{:?}", blocking(&s));
    }

    #[test]
    fn set_start_and_unknown_scenes() {
        let (s, [_, b, _]) = three();
        let s = set_start(&s, &b).unwrap();
        assert_eq!(s.start_scene, Some(b));
        assert!(validate_story(&s).iter().all(|v| v.code() != "MissingStart"));
        assert!(matches!(
            set_start(&s, &"nope".into()),
            Err(GraphError::UnknownScene(_))
        ));
    }

    #[test]
    fn interaction_targets_must_exist() {
        let (s, [a, ..]) = three();
        let missing: SceneId = "S42".into();
        let err = set_interaction(&s, &a, Some(choice(&[("x", Some(&missing)), ("y", None)]))).unwrap_err();
        assert_eq!(err, GraphError::UnknownScene(missing));
        let err = set_interaction(&s, &a, Some(choice(&[("x", None)]))).unwrap_err();
        assert_eq!(err.code(), "InvalidInteraction");
    }

    #[test]
    fn unlink_clears_the_response() {
        let (s, [a, b, c]) = three();
        let s = set_interaction(&s, &a, Some(choice(&[("Forest", Some(&b)), ("Town", Some(&c))]))).unwrap();
        let s = unlink_scenes(&s, &a, &b, Some("Forest")).unwrap();
        assert_eq!(s.scenes[&a].interaction.as_ref().unwrap().responses[0].next_scene, None);
        assert!(blocking(&s).is_empty());
        assert!(matches!(
            unlink_scenes(&s, &a, &b, Some("Forest")),
            Err(GraphError::UnknownEdge { .. })
        ));
    }

    #[test]
    fn clearing_an_interaction_drops_its_links() {
        let (s, [a, b, c]) = three();
        let s = set_interaction(&s, &a, Some(choice(&[("Forest", Some(&b)), ("Town", Some(&c))]))).unwrap();
        let s = set_interaction(&s, &a, None).unwrap();
        assert!(s.outgoing(&a).next().is_none());
        assert!(blocking(&s).is_empty());
    }

    #[derive(Debug, Clone)]
    enum Op {
        Add,
        Remove(usize),
        Duplicate(usize),
        Link(usize, usize, Option<usize>),
        Unlink(usize),
        Start(usize),
        Interact(usize, Vec<Option<usize>>),
        Clear(usize),
        Element(usize),
        Clip(usize, u8, u8),
    }

    fn op() -> impl Strategy<Value = Op> {
        prop_oneof![
            Just(Op::Add),
            any::<usize>().prop_map(Op::Remove),
            any::<usize>().prop_map(Op::Duplicate),
            (any::<usize>(), any::<usize>(), proptest::option::of(0..3usize)).prop_map(|(a, b, l)| Op::Link(a, b, l)),
            any::<usize>().prop_map(Op::Unlink),
            any::<usize>().prop_map(Op::Start),
            (
                any::<usize>(),
                proptest::collection::vec(proptest::option::of(any::<usize>()), 0..4)
            )
                .prop_map(|(a, t)| Op::Interact(a, t)),
            any::<usize>().prop_map(Op::Clear),
            any::<usize>().prop_map(Op::Element),
            (any::<usize>(), 0..6u8, 1..4u8).prop_map(|(a, s, d)| Op::Clip(a, s, d)),
        ]
    }

    const LABELS: [&str; 3] = ["Forest", "Town", "River"];

    fn pick(story: &Story, i: usize) -> Option<SceneId> {
        let n = story.scenes.len();
        (n > 0).then(|| story.scenes.keys().nth(i % n).cloned().expect("in range"))
    }

    fn apply(story: &Story, op: &Op) -> Option<Story> {
        match op {
            Op::Add => Some(add_scene(story, "new").0),
            Op::Remove(i) => remove_scene(story, &pick(story, *i)?).ok().map(|(s, _)| s),
            Op::Duplicate(i) => duplicate_scene(story, &pick(story, *i)?).ok().map(|(s, _)| s),
            Op::Link(a, b, l) => link_scenes(story, &pick(story, *a)?, &pick(story, *b)?, l.map(|l| LABELS[l])).ok(),
            Op::Unlink(i) => {
                let n = story.edges.len();
                let e = story.edges.get(i % n.max(1))?.clone();
                unlink_scenes(story, &e.from, &e.to, e.via.as_deref()).ok()
            }
            Op::Start(i) => set_start(story, &pick(story, *i)?).ok(),
            Op::Interact(a, targets) => {
                let mut scenes = Vec::new();
                for t in targets {
                    scenes.push(match t {
                        Some(t) => Some(pick(story, *t)?),
                        None => None,
                    });
                }
                let spec = InteractionSpec {
                    question: "q".into(),
                    responses: scenes
                        .into_iter()
                        .enumerate()
                        .map(|(i, t)| Response::new(LABELS[i % 3], t))
                        .collect(),
                    question_speech: None,
                };
                set_interaction(story, &pick(story, *a)?, Some(spec)).ok()
            }
            Op::Clear(i) => set_interaction(story, &pick(story, *i)?, None).ok(),
            Op::Element(i) => {
                let id = fresh_element_id(story);
                let el = SceneElement::speech_bubble(id, "hello", Size::new(0.3, 0.1));
                edit_scene(story, &pick(story, *i)?, |s| crate::timeline::upsert_element(s, el)).ok()
            }
            Op::Clip(i, start, dur) => {
                let sid = pick(story, *i)?;
                let target = story.scenes[&sid].elements.first()?.element_id.clone();
                let clip = TimelineClip {
                    clip_id: fresh_clip_id(story),
                    target: ClipTarget::Element(target),
                    track: Track::Visual,
                    start_s: f64::from(*start),
                    duration_s: f64::from(*dur),
                };
                let assets = story.asset_index.clone();
                edit_scene(story, &sid, |s| crate::timeline::upsert_clip(s, clip, &assets)).ok()
            }
        }
    }

    proptest! {
        #[test]
        fn mutations_keep_the_story_structurally_sound(ops in proptest::collection::vec(op(), 1..40)) {
            let mut story = Story::with_id("p".into(), "p");
            for op in &ops {
                if let Some(next) = apply(&story, op) {
                    story = next;
                    let b = blocking(&story);
                    prop_assert!(b.is_empty(), "after {:?}: {:?}", op, b);
                }
            }
        }
    }
}
