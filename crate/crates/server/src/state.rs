use std::collections::BTreeMap;
use std::ops::Deref;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use storyloom::clock::{Clock, FixedClock, SystemClock};
use storyloom::genai::config::build_providers;
use storyloom::genai::jobs::{JobQueue, JobState, QueueConfig};
use storyloom::genai::safety::{DenylistPolicy, SafetyPolicy, SafetyVerdict};
use storyloom::genai::{GenError, Studio};
use storyloom::model::{AssetId, AssetRef, Story, StoryId};
use storyloom::playback::{Phase, PlaybackEvent, PlaybackState, Player};
use storyloom::screenplay::ChatSession;
use storyloom::store::{AssetStore, FsAssetStore, Package, PackageStore};
use tokio::sync::{broadcast, watch, Mutex as AsyncMutex, OwnedMutexGuard};

use crate::config::ServerConfig;
use crate::error::{ApiError, ApiResult, ServerError};
use crate::live::LiveEvent;

const LIVE_CAPACITY: usize = 4096;

/// The denylist in force, replaceable while the service runs.
#[derive(Debug, Default)]
pub struct SharedPolicy(RwLock<DenylistPolicy>);

impl SharedPolicy {
    pub fn get(&self) -> DenylistPolicy {
        self.0.read().expect("policy lock poisoned").clone()
    }

    pub fn set(&self, policy: DenylistPolicy) {
        *self.0.write().expect("policy lock poisoned") = policy;
    }
}

impl SafetyPolicy for SharedPolicy {
    fn check_text(&self, text: &str) -> SafetyVerdict {
        self.0.read().expect("policy lock poisoned").check_text(text)
    }

    fn check_asset(&self, asset: &AssetRef, bytes: &[u8]) -> SafetyVerdict {
        self.0.read().expect("policy lock poisoned").check_asset(asset, bytes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    /// The server advances the session on its own clock.
    #[default]
    Realtime,
    /// The session only moves on explicit tick requests.
    Manual,
}

pub struct PlaySession {
    pub session_id: String,
    pub story_id: StoryId,
    pub mode: ClockMode,
    pub player: Player,
    pub state: PlaybackState,
}

#[derive(Debug, Clone, Serialize)]
pub struct SessionView {
    pub session_id: String,
    pub story_id: StoryId,
    pub mode: ClockMode,
    pub state: PlaybackState,
    pub events: Vec<PlaybackEvent>,
}

impl PlaySession {
    pub fn view(&self, events: Vec<PlaybackEvent>) -> SessionView {
        SessionView {
            session_id: self.session_id.clone(),
            story_id: self.story_id.clone(),
            mode: self.mode,
            state: self.state.clone(),
            events,
        }
    }
}

type Cell<T> = Arc<AsyncMutex<T>>;

pub struct Inner {
    pub studio: Arc<Studio>,
    pub jobs: JobQueue,
    pub packages: PackageStore,
    pub policy: Arc<SharedPolicy>,
    pub token: Option<String>,
    pub tick: Duration,
    stories: RwLock<BTreeMap<StoryId, Cell<Story>>>,
    chats: RwLock<BTreeMap<String, Cell<ChatSession>>>,
    sessions: RwLock<BTreeMap<String, Cell<PlaySession>>>,
    verdicts: Arc<Mutex<BTreeMap<AssetId, SafetyVerdict>>>,
    live: broadcast::Sender<LiveEvent>,
    closing: watch::Sender<bool>,
}

/// Everything the handlers share. Cheap to clone.
#[derive(Clone)]
pub struct App(Arc<Inner>);

impl Deref for App {
    type Target = Inner;

    fn deref(&self) -> &Inner {
        &self.0
    }
}

fn lookup<T>(map: &RwLock<BTreeMap<impl Ord + for<'a> From<&'a str>, Cell<T>>>, key: &str) -> Option<Cell<T>> {
    map.read().expect("map lock poisoned").get(&key.into()).cloned()
}

impl App {
    /// Opens the store under `config.store`, loads every saved story and
    /// starts the generation workers.
    pub fn open(config: &ServerConfig) -> Result<Self, ServerError> {
        let providers =
            build_providers(&config.provider_configs()?).map_err(|e| ServerError::BadConfig(e.to_string()))?;
        let bad_store = |e: storyloom::store::StoreError| {
            ServerError::BadConfig(format!("cannot open store {}: {e}", config.store.display()))
        };
        let assets = Arc::new(FsAssetStore::open(config.store.join("assets")).map_err(bad_store)?);
        let packages = PackageStore::open(config.store.join("packages")).map_err(bad_store)?;
        let policy = Arc::new(SharedPolicy::default());
        let mut studio = Studio::new(providers, assets).with_safety(policy.clone());
        let clock: Arc<dyn Clock> = if config.deterministic {
            studio = studio.with_seed(0).with_clock(Arc::new(FixedClock::epoch()));
            Arc::new(FixedClock::epoch())
        } else {
            Arc::new(SystemClock)
        };
        let studio = Arc::new(studio);
        let jobs = JobQueue::new(
            studio.clone(),
            QueueConfig {
                workers: config.workers,
                backlog: config.backlog,
            },
            clock,
        );
        let (live, _) = broadcast::channel(LIVE_CAPACITY);
        let verdicts: Arc<Mutex<BTreeMap<AssetId, SafetyVerdict>>> = Arc::default();
        {
            let live = live.clone();
            let verdicts = verdicts.clone();
            jobs.subscribe(Box::new(move |job| {
                if let (JobState::Succeeded, Some(output)) = (job.state, &job.result) {
                    let mut map = verdicts.lock().expect("verdict lock poisoned");
                    for (asset, verdict) in output.assets.iter().zip(&output.safety) {
                        map.insert(asset.asset_id.clone(), verdict.clone());
                    }
                }
                let _ = live.send(LiveEvent::Job { job: job.clone() });
            }));
        }
        let app = App(Arc::new(Inner {
            studio,
            jobs,
            packages,
            policy,
            token: config.token()?,
            tick: config.tick(),
            stories: RwLock::default(),
            chats: RwLock::default(),
            sessions: RwLock::default(),
            verdicts,
            live,
            closing: watch::channel(false).0,
        }));
        app.load_saved();
        Ok(app)
    }

    fn load_saved(&self) {
        let ids = match self.packages.list() {
            Ok(ids) => ids,
            Err(e) => {
                log::warn!("cannot list saved stories: {e}");
                return;
            }
        };
        for id in ids {
            match self.packages.load_package(&id) {
                Ok(package) => match self.adopt_assets(&package) {
                    Ok(()) => {
                        self.insert_story(package.story);
                    }
                    Err(e) => log::warn!("skipping package {id}: {}", e.message),
                },
                Err(e) => log::warn!("skipping package {id}: {e}"),
            }
        }
        log::info!("loaded {} saved stories", self.story_ids().len());
    }

    /// Copies a package's assets into the studio so its story can be edited and saved.
    pub fn adopt_assets(&self, package: &Package) -> ApiResult<()> {
        for (id, asset) in &package.story.asset_index {
            let bytes = package
                .assets
                .get(id)?
                .ok_or_else(|| ApiError::from(storyloom::store::StoreError::MissingAsset(id.clone())))?;
            self.studio.store().put(&bytes)?;
            self.studio.register(asset.clone());
        }
        Ok(())
    }

    pub fn subscribe(&self) -> (broadcast::Receiver<LiveEvent>, watch::Receiver<bool>) {
        (self.live.subscribe(), self.closing.subscribe())
    }

    /// Ends every open live stream, so a graceful shutdown can finish.
    pub fn close_streams(&self) {
        self.closing.send_replace(true);
    }

    pub fn publish(&self, session_id: &str, events: &[PlaybackEvent]) {
        for event in events {
            let _ = self.live.send(LiveEvent::Playback {
                session_id: session_id.to_string(),
                event: event.clone(),
            });
        }
    }

    pub fn verdict(&self, id: &AssetId) -> Option<SafetyVerdict> {
        self.verdicts.lock().expect("verdict lock poisoned").get(id).cloned()
    }

    // Stories

    pub fn story_ids(&self) -> Vec<StoryId> {
        self.stories
            .read()
            .expect("story map lock poisoned")
            .keys()
            .cloned()
            .collect()
    }

    /// Adds a story without saving it. Returns false if the id is taken.
    fn insert_story(&self, story: Story) -> bool {
        let mut map = self.stories.write().expect("story map lock poisoned");
        if map.contains_key(&story.story_id) {
            return false;
        }
        map.insert(story.story_id.clone(), Arc::new(AsyncMutex::new(story)));
        true
    }

    fn story_cell(&self, id: &str) -> ApiResult<Cell<Story>> {
        lookup(&self.stories, id).ok_or_else(|| ApiError::new("UnknownStory", format!("unknown story {id}")))
    }

    /// Holds the story's write lock until the guard drops.
    pub async fn lock_story(&self, id: &str) -> ApiResult<OwnedMutexGuard<Story>> {
        Ok(self.story_cell(id)?.lock_owned().await)
    }

    pub async fn story(&self, id: &str) -> ApiResult<Story> {
        Ok(self.lock_story(id).await?.clone())
    }

    /// Saves a new story and makes it available.
    pub async fn create_story(&self, story: Story) -> ApiResult<Story> {
        let app = self.clone();
        let saved = story.clone();
        blocking(move || app.save(&saved)).await?;
        if !self.insert_story(story.clone()) {
            return Err(ApiError::new(
                "StoryExists",
                format!("story {} already exists", story.story_id),
            ));
        }
        Ok(story)
    }

    /// Runs `edit` on the current story under its write lock, saves the result
    /// and only then replaces the story. A failed edit or save changes nothing.
    ///
    /// `edit` runs on a blocking thread, so it may call providers.
    pub async fn mutate<T, F>(&self, id: &str, edit: F) -> ApiResult<(Story, T)>
    where
        T: Send + 'static,
        F: FnOnce(&Story, &Studio) -> ApiResult<(Story, T)> + Send + 'static,
    {
        let mut guard = self.lock_story(id).await?;
        let current = guard.clone();
        let app = self.clone();
        let (next, out) = blocking(move || {
            let (mut next, out) = edit(&current, &app.studio)?;
            next.story_id = current.story_id.clone();
            app.save(&next)?;
            Ok((next, out))
        })
        .await?;
        *guard = next.clone();
        Ok((next, out))
    }

    pub async fn delete_story(&self, id: &str) -> ApiResult<()> {
        let guard = self.lock_story(id).await?;
        let dir = self.packages.root().join(guard.story_id.as_str());
        blocking(move || match std::fs::remove_dir_all(&dir) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(storyloom::store::StoreError::Io(e).into()),
            _ => Ok(()),
        })
        .await?;
        self.stories
            .write()
            .expect("story map lock poisoned")
            .remove(&guard.story_id);
        Ok(())
    }

    fn save(&self, story: &Story) -> ApiResult<()> {
        self.packages.save_story(story, self.studio.store().as_ref())?;
        Ok(())
    }

    /// Makes every asset in `ids` part of the story's index, taking references from the studio.
    pub fn attach_assets<'a>(&self, story: &mut Story, ids: impl IntoIterator<Item = &'a AssetId>) -> ApiResult<()> {
        for id in ids {
            if !story.asset_index.contains_key(id) {
                let asset = self
                    .studio
                    .asset(id)
                    .ok_or_else(|| ApiError::from(GenError::UnknownAsset(id.clone())))?;
                story.register_asset(asset);
            }
        }
        Ok(())
    }

    // Chats

    pub fn add_chat(&self, session: ChatSession) {
        self.chats
            .write()
            .expect("chat map lock poisoned")
            .insert(session.session_id.clone(), Arc::new(AsyncMutex::new(session)));
    }

    pub async fn lock_chat(&self, id: &str) -> ApiResult<OwnedMutexGuard<ChatSession>> {
        let cell = lookup(&self.chats, id).ok_or_else(|| ApiError::new("UnknownChat", format!("unknown chat {id}")))?;
        Ok(cell.lock_owned().await)
    }

    // Playback

    pub fn add_session(&self, session: PlaySession) -> Cell<PlaySession> {
        let cell = Arc::new(AsyncMutex::new(session));
        let id = cell.try_lock().expect("new session is unlocked").session_id.clone();
        self.sessions
            .write()
            .expect("session map lock poisoned")
            .insert(id, cell.clone());
        cell
    }

    pub fn session_cell(&self, id: &str) -> ApiResult<Cell<PlaySession>> {
        lookup(&self.sessions, id)
            .ok_or_else(|| ApiError::new("UnknownSession", format!("unknown playback session {id}")))
    }

    pub fn remove_session(&self, id: &str) -> ApiResult<()> {
        self.sessions
            .write()
            .expect("session map lock poisoned")
            .remove(id)
            .map(|_| ())
            .ok_or_else(|| ApiError::new("UnknownSession", format!("unknown playback session {id}")))
    }

    /// Drives a real-time session from the server clock until it finishes or is removed.
    pub fn spawn_clock(&self, session_id: String) {
        let app = self.clone();
        tokio::spawn(async move {
            let mut interval = tokio::time::interval(app.tick);
            interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
            let mut last = Instant::now();
            loop {
                interval.tick().await;
                let now = Instant::now();
                let dt = now.duration_since(last).as_secs_f64();
                last = now;
                let Ok(cell) = app.session_cell(&session_id) else { break };
                let mut session = cell.lock().await;
                match session.state.phase {
                    Phase::Finished => break,
                    Phase::AwaitingInput => continue,
                    Phase::Playing if dt <= 0.0 => continue,
                    Phase::Playing => {}
                }
                match session.player.tick(&session.state, dt) {
                    Ok((state, events)) => {
                        session.state = state;
                        app.publish(&session_id, &events);
                    }
                    Err(e) => {
                        log::warn!("playback session {session_id} stopped: {e}");
                        break;
                    }
                }
            }
        });
    }
}

/// Runs blocking work (providers, file I/O) off the async threads.
pub async fn blocking<T: Send + 'static>(work: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(work)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}
