use std::collections::BTreeMap;

use axum::body::Bytes;
use axum::extract::{Path, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};
use storyloom::genai::prompts::{builtin_templates, template, PARAMETER_LABELS};
use storyloom::genai::safety::{DenylistPolicy, SafetyPolicy};
use storyloom::genai::JobRequest;
use storyloom::model::{
    validate_story, AssetId, AssetKind, ClipId, ElementId, InteractionSpec, ParticleEffect, Point, SceneElement,
    SceneId, ScreenplayScene, Story, TimelineClip, VoiceProfile,
};
use storyloom::playback::{PlaybackError, Player};
use storyloom::screenplay::{chat_turn, compile_screenplay, new_storyline_session, parse_screenplay, ParseReport};
use storyloom::store::{export_package, import_archive};
use storyloom::{storyboard, timeline};

use crate::error::{ApiError, ApiResult, Body, Params};
use crate::live::{ndjson_stream, Filter};
use crate::state::{blocking, App, ClockMode, PlaySession};

pub fn router(app: App) -> Router {
    let api = Router::new()
        .route("/stories", get(list_stories).post(create_story))
        .route(
            "/stories/{story}",
            get(get_story).put(replace_story).delete(delete_story),
        )
        .route("/stories/{story}/violations", get(story_violations))
        .route("/stories/{story}/export", get(export_story))
        .route("/stories/{story}/screenplay", post(populate_story))
        .route("/stories/{story}/start", put(set_start))
        .route("/stories/{story}/edges", post(link).delete(unlink))
        .route("/stories/{story}/voices/{name}", put(put_voice).delete(delete_voice))
        .route("/stories/{story}/scenes", post(add_scene))
        .route(
            "/stories/{story}/scenes/{scene}",
            get(get_scene).patch(rename_scene).delete(remove_scene),
        )
        .route("/stories/{story}/scenes/{scene}/duplicate", post(duplicate_scene))
        .route(
            "/stories/{story}/scenes/{scene}/interaction",
            put(set_interaction).delete(clear_interaction),
        )
        .route("/stories/{story}/scenes/{scene}/background", put(set_background))
        .route("/stories/{story}/scenes/{scene}/particles", put(set_particles))
        .route("/stories/{story}/scenes/{scene}/elements", post(create_element))
        .route(
            "/stories/{story}/scenes/{scene}/elements/{element}",
            put(put_element).delete(delete_element),
        )
        .route(
            "/stories/{story}/scenes/{scene}/elements/{element}/path",
            put(set_path).delete(clear_path),
        )
        .route("/stories/{story}/scenes/{scene}/clips", post(create_clip))
        .route(
            "/stories/{story}/scenes/{scene}/clips/{clip}",
            put(put_clip).delete(delete_clip),
        )
        .route("/stories/{story}/playback", post(start_playback))
        .route("/packages", post(import_package))
        .route("/chats", post(new_chat))
        .route("/chats/{chat}", get(get_chat))
        .route("/chats/{chat}/turns", post(chat))
        .route("/screenplay/compile", post(compile))
        .route("/screenplay/parse", post(parse))
        .route("/jobs", get(list_jobs).post(submit_job))
        .route("/jobs/{job}", get(get_job).delete(cancel_job))
        .route("/assets", get(list_assets).post(upload_asset))
        .route("/assets/{asset}", get(asset_bytes))
        .route("/assets/{asset}/meta", get(asset_meta))
        .route("/library", get(library))
        .route("/prompts/templates", get(templates))
        .route("/prompts/templates/{name}/render", post(render_template))
        .route("/prompts/parameters", get(parameters))
        .route("/prompts/refine", post(refine))
        .route("/safety/policy", get(get_policy).put(put_policy))
        .route("/safety/check", post(check_text))
        .route("/playback/{session}", get(get_session).delete(end_session))
        .route("/playback/{session}/tick", post(tick))
        .route("/playback/{session}/respond", post(respond))
        .route("/playback/{session}/events", get(session_events))
        .route("/events", get(events))
        .route_layer(middleware::from_fn_with_state(app.clone(), require_token));
    Router::new()
        .route("/health", get(health))
        .merge(api)
        .fallback(|| async { ApiError::new("NotFound", "no such endpoint").with_status(StatusCode::NOT_FOUND) })
        .layer(middleware::from_fn(log_request))
        .with_state(app)
}

impl ApiError {
    fn with_status(mut self, status: StatusCode) -> Self {
        self.status = status;
        self
    }
}

async fn require_token(State(app): State<App>, req: Request, next: Next) -> Response {
    if let Some(token) = &app.token {
        let presented = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token.as_str()) {
            return ApiError::new("Unauthorized", "missing or wrong bearer token").into_response();
        }
    }
    next.run(req).await
}

async fn log_request(req: Request, next: Next) -> Response {
    let method = req.method().clone();
    let path = req.uri().path().to_string();
    let response = next.run(req).await;
    log::debug!("{method} {path} -> {}", response.status());
    response
}

type JsonResult = ApiResult<Json<Value>>;

fn to_json<T: serde::Serialize>(value: &T) -> Json<Value> {
    Json(serde_json::to_value(value).expect("api values always serialize"))
}

fn decode<T: serde::de::DeserializeOwned>(value: Value) -> ApiResult<T> {
    serde_json::from_value(value).map_err(|e| ApiError::bad_request(e.to_string()))
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok", "version": env!("CARGO_PKG_VERSION") }))
}

// Stories

async fn list_stories(State(app): State<App>) -> JsonResult {
    let mut out = Vec::new();
    for id in app.story_ids() {
        if let Ok(story) = app.story(id.as_str()).await {
            out.push(json!({
                "story_id": story.story_id,
                "title": story.title,
                "scenes": story.scenes.len(),
                "start_scene": story.start_scene,
            }));
        }
    }
    Ok(Json(Value::Array(out)))
}

#[derive(Deserialize)]
struct NewStory {
    title: String,
    #[serde(default)]
    storyline: String,
}

async fn create_story(State(app): State<App>, Body(req): Body<NewStory>) -> ApiResult<(StatusCode, Json<Value>)> {
    let mut story = Story::new(req.title);
    story.storyline = req.storyline;
    let story = app.create_story(story).await?;
    Ok((StatusCode::CREATED, to_json(&story)))
}

async fn get_story(State(app): State<App>, Path(id): Path<String>) -> JsonResult {
    Ok(to_json(&app.story(&id).await?))
}

/// Replaces the whole document. The new story must have no blocking violations.
async fn replace_story(State(app): State<App>, Path(id): Path<String>, Body(story): Body<Story>) -> JsonResult {
    if story.story_id.as_str() != id {
        return Err(ApiError::bad_request(format!(
            "body is story {}, path is {id}",
            story.story_id
        )));
    }
    let (story, ()) = app
        .mutate(&id, move |_, studio| {
            let ids: Vec<AssetId> = story.asset_index.keys().cloned().collect();
            for asset_id in &ids {
                if studio.asset(asset_id).is_none() {
                    return Err(storyloom::genai::GenError::UnknownAsset(asset_id.clone()).into());
                }
            }
            Ok((story, ()))
        })
        .await?;
    Ok(to_json(&story))
}

async fn delete_story(State(app): State<App>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    app.delete_story(&id).await?;
    Ok(StatusCode::NO_CONTENT)
}

async fn story_violations(State(app): State<App>, Path(id): Path<String>) -> JsonResult {
    let story = app.story(&id).await?;
    let violations: Vec<Value> = validate_story(&story)
        .into_iter()
        .map(|v| {
            let mut entry = serde_json::to_value(&v).expect("violations serialize");
            entry["severity"] = serde_json::to_value(v.severity()).expect("severities serialize");
            entry["message"] = Value::String(v.to_string());
            entry
        })
        .collect();
    Ok(Json(json!({ "violations": violations })))
}

async fn export_story(State(app): State<App>, Path(id): Path<String>) -> ApiResult<Response> {
    let story = app.story(&id).await?;
    let studio = app.studio.clone();
    let bytes = blocking(move || {
        let dir = tempfile::tempdir().map_err(|e| ApiError::internal(e.to_string()))?;
        let path = dir.path().join("package.tar");
        export_package(&story, studio.store().as_ref(), &path)?;
        std::fs::read(&path).map_err(|e| ApiError::internal(e.to_string()))
    })
    .await?;
    let disposition = format!("attachment; filename=\"{id}.storyloom.tar\"");
    Ok((
        [
            (header::CONTENT_TYPE, "application/x-tar".to_string()),
            (header::CONTENT_DISPOSITION, disposition),
        ],
        bytes,
    )
        .into_response())
}

async fn import_package(State(app): State<App>, bytes: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let package = blocking(move || {
        let dir = tempfile::tempdir().map_err(|e| ApiError::internal(e.to_string()))?;
        let path = dir.path().join("upload.tar");
        std::fs::write(&path, &bytes).map_err(|e| ApiError::internal(e.to_string()))?;
        Ok(import_archive(&path)?)
    })
    .await?;
    app.adopt_assets(&package)?;
    let story = app.create_story(package.story).await?;
    Ok((StatusCode::CREATED, to_json(&story)))
}

#[derive(Deserialize)]
struct PopulateReq {
    #[serde(default)]
    storyline: Option<String>,
    #[serde(default)]
    scenes: Option<Vec<ScreenplayScene>>,
}

/// Lays out scenes from a screenplay, compiling the storyline first if no scenes are given.
async fn populate_story(State(app): State<App>, Path(id): Path<String>, Body(req): Body<PopulateReq>) -> JsonResult {
    let (story, (warnings, report)) = app
        .mutate(&id, move |story, studio| {
            let mut base = story.clone();
            if let Some(storyline) = &req.storyline {
                base.storyline = storyline.clone();
            }
            let (scenes, report) = match req.scenes {
                Some(scenes) => (scenes, None),
                None => {
                    let report = compile_screenplay(&base.storyline, studio.providers().text.as_ref())?;
                    if report.rejected {
                        return Err(ApiError::new("ScreenplayRejected", "the reply held no usable scenes")
                            .with_details(serde_json::to_value(&report).expect("reports serialize")));
                    }
                    (report.scenes.clone(), Some(report))
                }
            };
            let (next, warnings) = storyboard::populate_from_screenplay(&base, &scenes, studio)?;
            Ok((next, (warnings, report)))
        })
        .await?;
    Ok(Json(json!({ "story": story, "warnings": warnings, "report": report })))
}

#[derive(Deserialize)]
struct SceneRef {
    scene_id: SceneId,
}

async fn set_start(State(app): State<App>, Path(id): Path<String>, Body(req): Body<SceneRef>) -> JsonResult {
    let (story, ()) = app
        .mutate(&id, move |story, _| {
            Ok((storyboard::set_start(story, &req.scene_id)?, ()))
        })
        .await?;
    Ok(to_json(&story))
}

#[derive(Deserialize)]
struct EdgeReq {
    from: SceneId,
    to: SceneId,
    #[serde(default)]
    via: Option<String>,
}

async fn link(State(app): State<App>, Path(id): Path<String>, Body(req): Body<EdgeReq>) -> JsonResult {
    let (story, ()) = app
        .mutate(&id, move |story, _| {
            Ok((
                storyboard::link_scenes(story, &req.from, &req.to, req.via.as_deref())?,
                (),
            ))
        })
        .await?;
    Ok(to_json(&story))
}

async fn unlink(State(app): State<App>, Path(id): Path<String>, Params(req): Params<EdgeReq>) -> JsonResult {
    let (story, ()) = app
        .mutate(&id, move |story, _| {
            Ok((
                storyboard::unlink_scenes(story, &req.from, &req.to, req.via.as_deref())?,
                (),
            ))
        })
        .await?;
    Ok(to_json(&story))
}

async fn put_voice(
    State(app): State<App>,
    Path((id, name)): Path<(String, String)>,
    Body(mut profile): Body<VoiceProfile>,
) -> JsonResult {
    profile.name = name;
    if let Some(defect) = profile.defect() {
        return Err(ApiError::new("InvalidVoiceProfile", defect));
    }
    let (story, ()) = app
        .mutate(&id, move |story, _| {
            let mut next = story.clone();
            next.voice_profiles.insert(profile.name.clone(), profile);
            Ok((next, ()))
        })
        .await?;
    Ok(to_json(&story))
}

async fn delete_voice(State(app): State<App>, Path((id, name)): Path<(String, String)>) -> JsonResult {
    let (story, ()) = app
        .mutate(&id, move |story, _| {
            let mut next = story.clone();
            next.voice_profiles
                .remove(&name)
                .ok_or_else(|| ApiError::new("UnknownVoice", format!("no voice profile named {name}")))?;
            Ok((next, ()))
        })
        .await?;
    Ok(to_json(&story))
}

// Scenes

#[derive(Deserialize)]
struct TitleReq {
    title: String,
}

async fn add_scene(
    State(app): State<App>,
    Path(id): Path<String>,
    Body(req): Body<TitleReq>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let (story, scene_id) = app
        .mutate(&id, move |story, _| Ok(storyboard::add_scene(story, &req.title)))
        .await?;
    Ok((
        StatusCode::CREATED,
        Json(json!({ "scene_id": scene_id, "story": story })),
    ))
}

async fn get_scene(State(app): State<App>, Path((id, scene)): Path<(String, SceneId)>) -> JsonResult {
    let story = app.story(&id).await?;
    let scene = story
        .scene(&scene)
        .ok_or_else(|| ApiError::from(storyboard::GraphError::UnknownScene(scene.clone())))?;
    Ok(Json(
        json!({ "scene": scene, "duration_s": timeline::scene_duration(scene) }),
    ))
}

async fn rename_scene(
    State(app): State<App>,
    Path((id, scene)): Path<(String, SceneId)>,
    Body(req): Body<TitleReq>,
) -> JsonResult {
    let (story, ()) = app
        .mutate(&id, move |story, _| {
            Ok((storyboard::rename_scene(story, &scene, &req.title)?, ()))
        })
        .await?;
    Ok(to_json(&story))
}

async fn remove_scene(State(app): State<App>, Path((id, scene)): Path<(String, SceneId)>) -> JsonResult {
    let (story, warnings) = app
        .mutate(&id, move |story, _| Ok(storyboard::remove_scene(story, &scene)?))
        .await?;
    Ok(Json(json!({ "story": story, "warnings": warnings })))
}

async fn duplicate_scene(
    State(app): State<App>,
    Path((id, scene)): Path<(String, SceneId)>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let (story, scene_id) = app
        .mutate(&id, move |story, _| Ok(storyboard::duplicate_scene(story, &scene)?))
        .await?;
    Ok((
        StatusCode::CREATED,
        Json(json!({ "scene_id": scene_id, "story": story })),
    ))
}

fn interaction_assets(spec: &InteractionSpec) -> Vec<AssetId> {
    spec.question_speech
        .iter()
        .chain(spec.responses.iter().filter_map(|r| r.feedback_audio.as_ref()))
        .cloned()
        .collect()
}

async fn set_interaction(
    State(app): State<App>,
    Path((id, scene)): Path<(String, SceneId)>,
    Body(spec): Body<InteractionSpec>,
) -> JsonResult {
    let helper = app.clone();
    let (story, ()) = app
        .mutate(&id, move |story, _| {
            let mut base = story.clone();
            helper.attach_assets(&mut base, &interaction_assets(&spec))?;
            Ok((storyboard::set_interaction(&base, &scene, Some(spec))?, ()))
        })
        .await?;
    Ok(to_json(&story))
}

async fn clear_interaction(State(app): State<App>, Path((id, scene)): Path<(String, SceneId)>) -> JsonResult {
    let (story, ()) = app
        .mutate(&id, move |story, _| {
            Ok((storyboard::set_interaction(story, &scene, None)?, ()))
        })
        .await?;
    Ok(to_json(&story))
}

#[derive(Deserialize)]
struct BackgroundReq {
    asset_id: Option<AssetId>,
    #[serde(default)]
    description: Option<String>,
}

async fn set_background(
    State(app): State<App>,
    Path((id, scene)): Path<(String, SceneId)>,
    Body(req): Body<BackgroundReq>,
) -> JsonResult {
    let helper = app.clone();
    let (story, ()) = app
        .mutate(&id, move |story, _| {
            let mut base = story.clone();
            helper.attach_assets(&mut base, &req.asset_id)?;
            let next = storyboard::edit_scene(&base, &scene, |s| {
                let mut s = s.clone();
                s.background = req.asset_id.clone();
                if let Some(d) = &req.description {
                    s.background_description = d.clone();
                }
                Ok(s)
            })?;
            Ok((next, ()))
        })
        .await?;
    Ok(to_json(&story))
}

#[derive(Deserialize)]
struct ParticlesReq {
    effect: ParticleEffect,
}

async fn set_particles(
    State(app): State<App>,
    Path((id, scene)): Path<(String, SceneId)>,
    Body(req): Body<ParticlesReq>,
) -> JsonResult {
    let (story, ()) = app
        .mutate(&id, move |story, _| {
            Ok((
                storyboard::edit_scene(story, &scene, |s| Ok(timeline::set_particles(s, req.effect)))?,
                (),
            ))
        })
        .await?;
    Ok(to_json(&story))
}

// Elements and clips

async fn upsert_element(app: &App, id: &str, scene: SceneId, mut body: Value, fixed: Option<ElementId>) -> JsonResult {
    if !body.is_object() {
        return Err(ApiError::bad_request("element must be a JSON object"));
    }
    let helper = app.clone();
    let (story, element_id) = app
        .mutate(id, move |story, _| {
            let element_id = fixed
                .or_else(|| body.get("element_id").and_then(Value::as_str).map(ElementId::from))
                .unwrap_or_else(|| storyboard::fresh_element_id(story));
            body["element_id"] = json!(element_id);
            let element: SceneElement = decode(body)?;
            let mut base = story.clone();
            helper.attach_assets(&mut base, &element.asset)?;
            let next = storyboard::edit_scene(&base, &scene, |s| timeline::upsert_element(s, element))?;
            Ok((next, element_id))
        })
        .await?;
    Ok(Json(json!({ "element_id": element_id, "story": story })))
}

async fn create_element(
    State(app): State<App>,
    Path((id, scene)): Path<(String, SceneId)>,
    Body(body): Body<Value>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    Ok((StatusCode::CREATED, upsert_element(&app, &id, scene, body, None).await?))
}

async fn put_element(
    State(app): State<App>,
    Path((id, scene, element)): Path<(String, SceneId, ElementId)>,
    Body(body): Body<Value>,
) -> JsonResult {
    upsert_element(&app, &id, scene, body, Some(element)).await
}

async fn delete_element(
    State(app): State<App>,
    Path((id, scene, element)): Path<(String, SceneId, ElementId)>,
) -> JsonResult {
    let (story, ()) = app
        .mutate(&id, move |story, _| {
            Ok((
                storyboard::edit_scene(story, &scene, |s| timeline::remove_element(s, &element))?,
                (),
            ))
        })
        .await?;
    Ok(to_json(&story))
}

#[derive(Deserialize)]
struct PathReq {
    start: Point,
    end: Point,
}

async fn set_path(
    State(app): State<App>,
    Path((id, scene, element)): Path<(String, SceneId, ElementId)>,
    Body(req): Body<PathReq>,
) -> JsonResult {
    let (story, ()) = app
        .mutate(&id, move |story, _| {
            let next = storyboard::edit_scene(story, &scene, |s| timeline::set_path(s, &element, req.start, req.end))?;
            Ok((next, ()))
        })
        .await?;
    Ok(to_json(&story))
}

async fn clear_path(
    State(app): State<App>,
    Path((id, scene, element)): Path<(String, SceneId, ElementId)>,
) -> JsonResult {
    let (story, ()) = app
        .mutate(&id, move |story, _| {
            Ok((
                storyboard::edit_scene(story, &scene, |s| timeline::clear_path(s, &element))?,
                (),
            ))
        })
        .await?;
    Ok(to_json(&story))
}

async fn upsert_clip(app: &App, id: &str, scene: SceneId, mut body: Value, fixed: Option<ClipId>) -> JsonResult {
    if !body.is_object() {
        return Err(ApiError::bad_request("clip must be a JSON object"));
    }
    let helper = app.clone();
    let (story, clip_id) = app
        .mutate(id, move |story, _| {
            let clip_id = fixed
                .or_else(|| body.get("clip_id").and_then(Value::as_str).map(ClipId::from))
                .unwrap_or_else(|| storyboard::fresh_clip_id(story));
            body["clip_id"] = json!(clip_id);
            let clip: TimelineClip = decode(body)?;
            let mut base = story.clone();
            if let storyloom::model::ClipTarget::Asset(asset) = &clip.target {
                helper.attach_assets(&mut base, [asset])?;
            }
            let assets = base.asset_index.clone();
            let next = storyboard::edit_scene(&base, &scene, |s| timeline::upsert_clip(s, clip, &assets))?;
            Ok((next, clip_id))
        })
        .await?;
    Ok(Json(json!({ "clip_id": clip_id, "story": story })))
}

async fn create_clip(
    State(app): State<App>,
    Path((id, scene)): Path<(String, SceneId)>,
    Body(body): Body<Value>,
) -> ApiResult<(StatusCode, Json<Value>)> {
    Ok((StatusCode::CREATED, upsert_clip(&app, &id, scene, body, None).await?))
}

async fn put_clip(
    State(app): State<App>,
    Path((id, scene, clip)): Path<(String, SceneId, ClipId)>,
    Body(body): Body<Value>,
) -> JsonResult {
    upsert_clip(&app, &id, scene, body, Some(clip)).await
}

async fn delete_clip(State(app): State<App>, Path((id, scene, clip)): Path<(String, SceneId, ClipId)>) -> JsonResult {
    let (story, ()) = app
        .mutate(&id, move |story, _| {
            Ok((
                storyboard::edit_scene(story, &scene, |s| timeline::remove_clip(s, &clip))?,
                (),
            ))
        })
        .await?;
    Ok(to_json(&story))
}

// Chat and screenplay

async fn new_chat(State(app): State<App>) -> ApiResult<(StatusCode, Json<Value>)> {
    let session = new_storyline_session();
    app.add_chat(session.clone());
    Ok((StatusCode::CREATED, to_json(&session)))
}

async fn get_chat(State(app): State<App>, Path(chat): Path<String>) -> JsonResult {
    let session = app.lock_chat(&chat).await?.clone();
    Ok(Json(json!({ "session": session, "transcript": session.transcript() })))
}

#[derive(Deserialize)]
struct TurnReq {
    text: String,
}

async fn chat(State(app): State<App>, Path(chat): Path<String>, Body(req): Body<TurnReq>) -> JsonResult {
    let mut guard = app.lock_chat(&chat).await?;
    let current = guard.clone();
    let studio = app.studio.clone();
    let (next, reply) = blocking(move || Ok(chat_turn(&current, &req.text, studio.providers().text.as_ref())?)).await?;
    *guard = next.clone();
    Ok(Json(json!({ "reply": reply, "session": next })))
}

#[derive(Deserialize)]
struct CompileReq {
    storyline: String,
}

async fn compile(State(app): State<App>, Body(req): Body<CompileReq>) -> ApiResult<Json<ParseReport>> {
    let studio = app.studio.clone();
    let report = blocking(move || Ok(compile_screenplay(&req.storyline, studio.providers().text.as_ref())?)).await?;
    Ok(Json(report))
}

#[derive(Deserialize)]
struct ParseReq {
    reply: String,
}

async fn parse(Body(req): Body<ParseReq>) -> Json<ParseReport> {
    Json(parse_screenplay(&req.reply))
}

// Jobs and assets

async fn list_jobs(State(app): State<App>) -> JsonResult {
    Ok(to_json(&app.jobs.list()))
}

async fn submit_job(State(app): State<App>, Body(req): Body<JobRequest>) -> ApiResult<(StatusCode, Json<Value>)> {
    let job = app.jobs.submit(req)?;
    Ok((StatusCode::ACCEPTED, to_json(&job)))
}

fn unknown_job(id: &str) -> ApiError {
    storyloom::genai::jobs::JobError::UnknownJob(id.to_string()).into()
}

async fn get_job(State(app): State<App>, Path(job): Path<String>) -> JsonResult {
    Ok(to_json(&app.jobs.get(&job).ok_or_else(|| unknown_job(&job))?))
}

async fn cancel_job(State(app): State<App>, Path(job): Path<String>) -> JsonResult {
    Ok(to_json(&app.jobs.cancel(&job)?))
}

async fn list_assets(State(app): State<App>) -> JsonResult {
    Ok(to_json(&app.studio.assets()))
}

#[derive(Deserialize)]
struct UploadQuery {
    kind: AssetKind,
    media_type: String,
    #[serde(default)]
    label: String,
}

async fn upload_asset(
    State(app): State<App>,
    Params(q): Params<UploadQuery>,
    bytes: Bytes,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let studio = app.studio.clone();
    let asset = blocking(move || Ok(studio.import(&bytes, q.kind, &q.media_type, &q.label)?)).await?;
    Ok((StatusCode::CREATED, to_json(&asset)))
}

fn known_asset(app: &App, id: &AssetId) -> ApiResult<storyloom::model::AssetRef> {
    app.studio
        .asset(id)
        .ok_or_else(|| storyloom::genai::GenError::UnknownAsset(id.clone()).into())
}

async fn asset_bytes(State(app): State<App>, Path(id): Path<AssetId>) -> ApiResult<Response> {
    let asset = known_asset(&app, &id)?;
    let studio = app.studio.clone();
    let bytes = blocking(move || Ok(studio.asset_bytes(&id)?)).await?;
    Ok(([(header::CONTENT_TYPE, asset.media_type)], bytes).into_response())
}

/// The reference plus the safety verdict recorded when it was generated.
async fn asset_meta(State(app): State<App>, Path(id): Path<AssetId>) -> JsonResult {
    let asset = known_asset(&app, &id)?;
    Ok(Json(json!({ "asset": asset, "safety": app.verdict(&id) })))
}

#[derive(Deserialize)]
struct LibraryQuery {
    #[serde(default)]
    q: Option<String>,
}

async fn library(State(app): State<App>, Params(q): Params<LibraryQuery>) -> JsonResult {
    Ok(to_json(&app.studio.library().query(q.q.as_deref())))
}

async fn templates() -> Json<Value> {
    to_json(&builtin_templates())
}

#[derive(Deserialize)]
struct RenderReq {
    values: BTreeMap<String, String>,
}

async fn render_template(Path(name): Path<String>, Body(req): Body<RenderReq>) -> JsonResult {
    let prompt = template(&name)?.render(&req.values)?;
    Ok(Json(json!({ "prompt": prompt })))
}

async fn parameters() -> Json<Value> {
    to_json(&PARAMETER_LABELS)
}

#[derive(Deserialize)]
struct RefineReq {
    prompt: String,
}

async fn refine(State(app): State<App>, Body(req): Body<RefineReq>) -> JsonResult {
    let studio = app.studio.clone();
    let prompt = blocking(move || Ok(studio.refine_prompt(&req.prompt)?)).await?;
    Ok(Json(json!({ "prompt": prompt })))
}

async fn get_policy(State(app): State<App>) -> Json<Value> {
    to_json(&app.policy.get())
}

async fn put_policy(State(app): State<App>, Body(policy): Body<DenylistPolicy>) -> JsonResult {
    if let Some(rule) = policy.rules.iter().find(|r| r.term.trim().is_empty()) {
        return Err(ApiError::new(
            "InvalidPolicy",
            format!("rule for category {:?} has an empty term", rule.category),
        ));
    }
    app.policy.set(policy);
    Ok(to_json(&app.policy.get()))
}

#[derive(Deserialize)]
struct CheckReq {
    text: String,
}

async fn check_text(State(app): State<App>, Body(req): Body<CheckReq>) -> Json<Value> {
    to_json(&app.policy.check_text(&req.text))
}

// Playback

#[derive(Deserialize)]
struct StartReq {
    #[serde(default)]
    mode: ClockMode,
}

async fn start_playback(
    State(app): State<App>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<Value>)> {
    let mode = if body.iter().all(u8::is_ascii_whitespace) {
        ClockMode::default()
    } else {
        serde_json::from_slice::<StartReq>(&body)
            .map_err(|e| ApiError::bad_request(e.to_string()))?
            .mode
    };
    let story = app.story(&id).await?;
    let story_id = story.story_id.clone();
    let player = Player::new(story)?;
    let (state, events) = player.start();
    let session_id = uuid::Uuid::new_v4().to_string();
    let session = PlaySession {
        session_id: session_id.clone(),
        story_id,
        mode,
        player,
        state,
    };
    let view = session.view(events.clone());
    app.add_session(session);
    app.publish(&session_id, &events);
    if mode == ClockMode::Realtime {
        app.spawn_clock(session_id);
    }
    Ok((StatusCode::CREATED, to_json(&view)))
}

async fn get_session(State(app): State<App>, Path(session): Path<String>) -> JsonResult {
    let cell = app.session_cell(&session)?;
    let session = cell.lock().await;
    Ok(to_json(&session.view(Vec::new())))
}

async fn end_session(State(app): State<App>, Path(session): Path<String>) -> ApiResult<StatusCode> {
    app.remove_session(&session)?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Deserialize)]
struct TickReq {
    dt: f64,
}

async fn tick(State(app): State<App>, Path(id): Path<String>, Body(req): Body<TickReq>) -> JsonResult {
    let cell = app.session_cell(&id)?;
    let mut session = cell.lock().await;
    if session.mode != ClockMode::Manual {
        return Err(ApiError::new("NotManual", "this session runs on the server clock"));
    }
    let (state, events) = session.player.tick(&session.state, req.dt)?;
    session.state = state;
    app.publish(&id, &events);
    Ok(to_json(&session.view(events)))
}

#[derive(Deserialize)]
struct RespondReq {
    label: String,
}

async fn respond(State(app): State<App>, Path(id): Path<String>, Body(req): Body<RespondReq>) -> JsonResult {
    let cell = app.session_cell(&id)?;
    let mut session = cell.lock().await;
    let (state, events) = session
        .player
        .submit_response(&session.state, &req.label)
        .map_err(|e: PlaybackError| ApiError::from(e))?;
    session.state = state;
    app.publish(&id, &events);
    Ok(to_json(&session.view(events)))
}

async fn session_events(State(app): State<App>, Path(id): Path<String>) -> ApiResult<Response> {
    app.session_cell(&id)?;
    let (rx, closing) = app.subscribe();
    Ok(ndjson_stream(rx, closing, Filter::session(&id)))
}

#[derive(Deserialize)]
struct EventsQuery {
    #[serde(default)]
    channel: Option<String>,
    #[serde(default)]
    session: Option<String>,
}

/// The live channel: job snapshots and playback events, one JSON object per line.
async fn events(State(app): State<App>, Params(q): Params<EventsQuery>) -> ApiResult<Response> {
    let mut filter = match q.channel.as_deref() {
        None => Filter::all(),
        Some("job") => Filter {
            jobs: true,
            ..Filter::default()
        },
        Some("playback") => Filter {
            playback: true,
            ..Filter::default()
        },
        Some(other) => return Err(ApiError::bad_request(format!("unknown channel {other}"))),
    };
    if q.session.is_some() {
        filter.session = q.session;
    }
    let (rx, closing) = app.subscribe();
    Ok(ndjson_stream(rx, closing, filter))
}
