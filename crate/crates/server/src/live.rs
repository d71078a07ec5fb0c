use std::convert::Infallible;

use axum::body::{Body, Bytes};
use axum::http::header;
use axum::response::{IntoResponse, Response};
use futures::stream;
use serde::Serialize;
use storyloom::genai::jobs::GenerationJob;
use storyloom::playback::PlaybackEvent;
use tokio::sync::broadcast::{self, error::RecvError};
use tokio::sync::watch;

pub const NDJSON: &str = "application/x-ndjson";

/// One line of the live channel.
///
/// Playback lines are trace lines with `channel` and `session_id` added.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "channel", rename_all = "snake_case")]
pub enum LiveEvent {
    Job {
        job: GenerationJob,
    },
    Playback {
        session_id: String,
        #[serde(flatten)]
        event: PlaybackEvent,
    },
    /// The reader fell behind and `skipped` lines were dropped.
    Lagged {
        skipped: u64,
    },
}

impl LiveEvent {
    pub fn line(&self) -> String {
        let mut line = serde_json::to_string(self).expect("live events always serialize");
        line.push('\n');
        line
    }

    pub fn session(&self) -> Option<&str> {
        match self {
            LiveEvent::Playback { session_id, .. } => Some(session_id),
            _ => None,
        }
    }
}

/// Which lines a subscriber wants.
#[derive(Debug, Clone, Default)]
pub struct Filter {
    pub jobs: bool,
    pub playback: bool,
    pub session: Option<String>,
}

impl Filter {
    pub fn all() -> Self {
        Self {
            jobs: true,
            playback: true,
            session: None,
        }
    }

    pub fn session(id: &str) -> Self {
        Self {
            jobs: false,
            playback: true,
            session: Some(id.to_string()),
        }
    }

    fn accepts(&self, event: &LiveEvent) -> bool {
        match event {
            LiveEvent::Job { .. } => self.jobs,
            LiveEvent::Playback { session_id, .. } => {
                self.playback && self.session.as_deref().is_none_or(|s| s == session_id)
            }
            LiveEvent::Lagged { .. } => true,
        }
    }
}

/// A streaming NDJSON response that stays open until the channel closes
/// or `closing` turns true.
pub fn ndjson_stream(rx: broadcast::Receiver<LiveEvent>, closing: watch::Receiver<bool>, filter: Filter) -> Response {
    let lines = stream::unfold((rx, closing, filter), |(mut rx, mut closing, filter)| async move {
        loop {
            if *closing.borrow() {
                return None;
            }
            let received = tokio::select! {
                received = rx.recv() => received,
                _ = closing.changed() => continue,
            };
            let event = match received {
                Ok(event) if filter.accepts(&event) => event,
                Ok(_) => continue,
                Err(RecvError::Lagged(skipped)) => LiveEvent::Lagged { skipped },
                Err(RecvError::Closed) => return None,
            };
            return Some((Ok::<_, Infallible>(Bytes::from(event.line())), (rx, closing, filter)));
        }
    });
    ([(header::CONTENT_TYPE, NDJSON)], Body::from_stream(lines)).into_response()
}
