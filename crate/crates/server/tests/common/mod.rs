#![allow(dead_code)]

use std::time::{Duration, Instant};

use reqwest::{Method, StatusCode};
use serde_json::{json, Value};
use storyloom_server::{Server, ServerConfig};
use tempfile::TempDir;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

pub struct TestServer {
    pub base: String,
    pub dir: TempDir,
    pub client: reqwest::Client,
    pub token: Option<String>,
    shutdown: Option<oneshot::Sender<()>>,
    handle: Option<JoinHandle<()>>,
}

pub fn config(dir: &TempDir, extra: &str) -> ServerConfig {
    let store = dir.path().join("store");
    ServerConfig::parse(&format!(
        "port = 0\nstore = {:?}\ntick_ms = 10\n{extra}",
        store.display().to_string()
    ))
    .expect("test config parses")
}

impl TestServer {
    pub async fn start() -> Self {
        Self::start_with("").await
    }

    pub async fn start_with(extra: &str) -> Self {
        Self::start_in(tempfile::tempdir().expect("temp dir"), extra).await
    }

    /// Starts on an existing directory, as a restart would.
    pub async fn start_in(dir: TempDir, extra: &str) -> Self {
        let server = Server::bind(&config(&dir, extra)).await.expect("server binds");
        let base = format!("http://{}", server.local_addr());
        let (tx, rx) = oneshot::channel::<()>();
        let handle = tokio::spawn(async move {
            server
                .run(async {
                    let _ = rx.await;
                })
                .await
                .expect("server runs");
        });
        Self {
            base,
            dir,
            client: reqwest::Client::new(),
            token: None,
            shutdown: Some(tx),
            handle: Some(handle),
        }
    }

    /// Stops the server and hands back its directory.
    pub async fn stop(mut self) -> TempDir {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(handle) = self.handle.take() {
            let _ = tokio::time::timeout(Duration::from_secs(5), handle).await;
        }
        let dir = tempfile::tempdir().expect("temp dir");
        std::mem::replace(&mut self.dir, dir)
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }

    pub fn request(&self, method: Method, path: &str) -> reqwest::RequestBuilder {
        let req = self.client.request(method, self.url(path));
        match &self.token {
            Some(t) => req.bearer_auth(t),
            None => req,
        }
    }

    pub async fn call(&self, method: Method, path: &str, body: Option<Value>) -> (StatusCode, Value) {
        let mut req = self.request(method, path);
        if let Some(body) = body {
            req = req.json(&body);
        }
        let resp = req.send().await.expect("request sent");
        let status = resp.status();
        let bytes = resp.bytes().await.expect("body read");
        let value = if bytes.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
        };
        (status, value)
    }

    pub async fn get(&self, path: &str) -> (StatusCode, Value) {
        self.call(Method::GET, path, None).await
    }

    pub async fn post(&self, path: &str, body: Value) -> (StatusCode, Value) {
        self.call(Method::POST, path, Some(body)).await
    }

    pub async fn put(&self, path: &str, body: Value) -> (StatusCode, Value) {
        self.call(Method::PUT, path, Some(body)).await
    }

    pub async fn patch(&self, path: &str, body: Value) -> (StatusCode, Value) {
        self.call(Method::PATCH, path, Some(body)).await
    }

    pub async fn delete(&self, path: &str) -> (StatusCode, Value) {
        self.call(Method::DELETE, path, None).await
    }

    /// Asserts success and returns the body.
    pub async fn ok(&self, method: Method, path: &str, body: Option<Value>) -> Value {
        let (status, value) = self.call(method.clone(), path, body).await;
        assert!(status.is_success(), "{method} {path} -> {status}: {value}");
        value
    }

    pub async fn new_story(&self, title: &str) -> String {
        let story = self.ok(Method::POST, "/stories", Some(json!({ "title": title }))).await;
        story["story_id"].as_str().expect("story id").to_string()
    }

    /// Polls a job until it reaches a terminal state.
    pub async fn wait_job(&self, job_id: &str) -> Value {
        let deadline = Instant::now() + Duration::from_secs(20);
        loop {
            let job = self.ok(Method::GET, &format!("/jobs/{job_id}"), None).await;
            if matches!(job["state"].as_str(), Some("succeeded" | "failed" | "cancelled")) {
                return job;
            }
            assert!(Instant::now() < deadline, "job {job_id} did not finish: {job}");
            tokio::time::sleep(Duration::from_millis(10)).await;
        }
    }

    /// Submits a job, waits for success and returns the produced asset ids.
    pub async fn generate(&self, request: Value) -> Vec<String> {
        let job = self.ok(Method::POST, "/jobs", Some(request)).await;
        let done = self.wait_job(job["job_id"].as_str().expect("job id")).await;
        assert_eq!(done["state"], "succeeded", "{done}");
        done["result"]["assets"]
            .as_array()
            .expect("assets")
            .iter()
            .map(|a| a["asset_id"].as_str().expect("asset id").to_string())
            .collect()
    }

    pub async fn lines(&self, path: &str) -> Lines {
        let resp = self.request(Method::GET, path).send().await.expect("stream opens");
        assert_eq!(resp.status(), StatusCode::OK);
        assert_eq!(resp.headers()["content-type"], "application/x-ndjson");
        Lines { resp, buf: Vec::new() }
    }
}

impl Drop for TestServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
    }
}

/// Reads an NDJSON response one parsed line at a time.
pub struct Lines {
    resp: reqwest::Response,
    buf: Vec<u8>,
}

impl Lines {
    pub async fn next(&mut self) -> Option<Value> {
        loop {
            if let Some(pos) = self.buf.iter().position(|&b| b == b'\n') {
                let line: Vec<u8> = self.buf.drain(..=pos).collect();
                return Some(serde_json::from_slice(&line).expect("each line is JSON"));
            }
            let chunk = tokio::time::timeout(Duration::from_secs(20), self.resp.chunk())
                .await
                .expect("stream stalled")
                .expect("stream readable")?;
            self.buf.extend_from_slice(&chunk);
        }
    }

    /// Reads until `stop` matches, returning every line read including that one.
    pub async fn until(&mut self, stop: impl Fn(&Value) -> bool) -> Vec<Value> {
        let mut out = Vec::new();
        while let Some(line) = self.next().await {
            let done = stop(&line);
            out.push(line);
            if done {
                return out;
            }
        }
        panic!("stream ended early after {} lines", out.len());
    }
}
