use std::sync::Arc;
use std::time::Duration;

use storyloom::clock::FixedClock;
use storyloom::genai::jobs::{JobQueue, JobState, QueueConfig};
use storyloom::genai::request::ChatRequest;
use storyloom::genai::{
    AudioKind, AudioRequest, ChatMessage, ImageRequest, JobRequest, SegmentHint, SegmentRequest, SpeechRequest, Studio,
};
use storyloom::model::{AssetKind, VoiceProfile};

#[test]
fn every_request_kind_runs_through_the_queue() {
    let studio = Arc::new(Studio::mock());
    let source = studio
        .generate_images(&ImageRequest::new("a red fox"))
        .unwrap()
        .remove(0);
    let queue = JobQueue::new(studio.clone(), QueueConfig::default(), Arc::new(FixedClock::epoch()));
    let requests = vec![
        JobRequest::Image(ImageRequest::new("a lighthouse")),
        JobRequest::Audio(AudioRequest::new(AudioKind::Music, "waltz", 2.0)),
        JobRequest::Speech(SpeechRequest {
            text: "Hello there".into(),
            profile: VoiceProfile {
                name: "Ana".into(),
                voice_id: "v1".into(),
                pitch: 0.0,
                speed: 1.0,
            },
        }),
        JobRequest::Segmentation(SegmentRequest {
            image: source.asset.asset_id.clone(),
            hint: SegmentHint::Point { x: 0.5, y: 0.5 },
        }),
        JobRequest::Chat(ChatRequest {
            messages: vec![ChatMessage::user("a fox")],
        }),
    ];
    let ids: Vec<String> = requests.into_iter().map(|r| queue.submit(r).unwrap().job_id).collect();
    let kinds = [
        Some(AssetKind::Image),
        Some(AssetKind::Music),
        Some(AssetKind::Speech),
        Some(AssetKind::CharacterCutout),
        None,
    ];
    for (id, kind) in ids.iter().zip(kinds) {
        let job = queue.wait(id, Duration::from_secs(10)).unwrap();
        assert_eq!(job.state, JobState::Succeeded, "{job:?}");
        let out = job.result.unwrap();
        match kind {
            Some(kind) => {
                assert_eq!(out.assets[0].kind, kind);
                assert!(studio.asset_bytes(&out.assets[0].asset_id).is_ok());
            }
            None => assert!(out.text.is_some()),
        }
    }
}

#[test]
fn provider_failures_mark_the_job_failed() {
    let studio = Arc::new(Studio::mock());
    let queue = JobQueue::new(studio, QueueConfig::default(), Arc::new(FixedClock::epoch()));
    let job = queue
        .submit(JobRequest::Segmentation(SegmentRequest {
            image: storyloom::model::AssetId::of_bytes(b"missing"),
            hint: SegmentHint::Point { x: 0.5, y: 0.5 },
        }))
        .unwrap();
    let done = queue.wait(&job.job_id, Duration::from_secs(10)).unwrap();
    assert_eq!(done.state, JobState::Failed);
    assert_eq!(done.error.unwrap().code, "UnknownAsset");
}
