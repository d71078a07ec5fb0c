//! Authoring, storage and playback of branching, generated picture stories.

pub mod clock;
pub mod genai;
pub mod model;
pub mod playback;
pub mod screenplay;
pub mod store;
pub mod storyboard;
pub mod timeline;
