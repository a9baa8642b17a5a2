#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use tempfile::TempDir;
use topicview::api::router;
use topicview::config::Config;
use topicview::pipeline;
use topicview::state::AppState;
use topicview_core::corpus::{save_transcripts, Session, Speaker, Turn};
use topicview_core::synthetic::{planted_corpus, planted_word, PlantedSpec};

pub const REJECT_TOKEN: &str = "REJECTME";
pub const LONG_SESSION: &str = "long-01";

pub fn config_text(data_dir: &Path) -> String {
    format!(
        r#"
[embeddings]
dim = 16
epochs = 10
seed = 3

[etm]
num_topics = 10
seed = 5

[imagegen]
backend = "mock"
reject_token = "{REJECT_TOKEN}"

[server]
data_dir = "{}"
"#,
        data_dir.display()
    )
}

/// Ten planted word groups, four sessions each: every planted word sits in
/// a tenth of the documents, so the default vocabulary filters keep them.
pub fn planted_spec() -> PlantedSpec {
    PlantedSpec {
        groups: 10,
        sessions_per_group: 4,
        ..PlantedSpec::default()
    }
}

/// A ten-turn session of about 2,400 characters; turn 8 carries the mock
/// backend's rejection token and turn 3 is empty.
pub fn long_session() -> Session {
    let turns = (0..10)
        .map(|t| {
            let mut words: Vec<String> = (0..40).map(|i| planted_word(3, (i * 7 + t) % 12)).collect();
            if t == 8 {
                words[20] = REJECT_TOKEN.to_owned();
            }
            Turn {
                session_id: LONG_SESSION.into(),
                turn_index: t,
                speaker: if t % 2 == 0 { Speaker::Patient } else { Speaker::Therapist },
                text: if t == 3 { String::new() } else { words.join(" ") },
                timestamp: Some(t as f64 * 12.5),
            }
        })
        .collect();
    Session::new(LONG_SESSION, Some("group3".into()), turns).unwrap()
}

pub struct Fixture {
    pub dir: TempDir,
    pub config_path: PathBuf,
}

impl Fixture {
    pub fn root(&self) -> &Path {
        self.dir.path()
    }

    pub fn config(&self) -> Config {
        Config::load(&self.config_path).unwrap()
    }

    pub fn state(&self) -> AppState {
        AppState::load(self.config()).unwrap()
    }

    pub fn app(&self) -> Router {
        router(Arc::new(self.state()))
    }
}

/// Writes the two transcript files to `dir/incoming` and the config file.
pub fn write_inputs(dir: &Path) -> (PathBuf, Vec<PathBuf>) {
    let incoming = dir.join("incoming");
    std::fs::create_dir_all(&incoming).unwrap();
    let planted = incoming.join("planted.jsonl");
    save_transcripts(&planted_corpus(&planted_spec()).sessions, &planted).unwrap();
    let long = incoming.join("long.jsonl");
    save_transcripts(&[long_session()], &long).unwrap();
    let config_path = dir.join("topicview.toml");
    std::fs::write(&config_path, config_text(&dir.join("data"))).unwrap();
    (config_path, vec![planted, long])
}

/// A data directory with ingested transcripts and trained artifacts.
pub fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let (config_path, inputs) = write_inputs(dir.path());
    let config = Config::load(&config_path).unwrap();
    for file in &inputs {
        pipeline::ingest(&config.layout(), file).unwrap();
    }
    pipeline::train_embeddings(&config).unwrap();
    pipeline::train_topics(&config).unwrap();
    Fixture { dir, config_path }
}

pub async fn call(app: &Router, method: Method, uri: &str) -> (StatusCode, Vec<u8>) {
    use tower::ServiceExt;
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .body(Body::empty())
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, body)
}

pub async fn get_json(app: &Router, uri: &str) -> (StatusCode, serde_json::Value) {
    json(call(app, Method::GET, uri).await)
}

pub async fn post_json(app: &Router, uri: &str) -> (StatusCode, serde_json::Value) {
    json(call(app, Method::POST, uri).await)
}

fn json((status, body): (StatusCode, Vec<u8>)) -> (StatusCode, serde_json::Value) {
    let value = serde_json::from_slice(&body)
        .unwrap_or_else(|e| panic!("non-JSON body ({e}): {}", String::from_utf8_lossy(&body)));
    (status, value)
}

/// Checks the error body shape and returns its code.
pub fn error_code(status: StatusCode, body: &serde_json::Value) -> String {
    let obj = body.as_object().expect("error body is an object");
    assert_eq!(obj.len(), 3, "{body}");
    assert_eq!(obj["http_status"].as_u64(), Some(status.as_u16() as u64));
    assert!(obj["message"].as_str().is_some_and(|m| !m.is_empty()));
    obj["code"].as_str().unwrap().to_owned()
}

fn is_uint(v: &serde_json::Value) -> bool {
    v.as_u64().is_some()
}

pub fn check_scores_schema(v: &serde_json::Value) {
    let k = v["k"].as_u64().unwrap() as usize;
    let n = v["n"].as_u64().unwrap() as usize;
    assert!(v["session_id"].is_string());
    let turns = v["turns"].as_array().unwrap();
    let matrix = v["matrix"].as_array().unwrap();
    assert_eq!((turns.len(), matrix.len()), (n, n));
    for t in turns {
        assert!(is_uint(&t["turn_index"]));
        assert!(matches!(t["speaker"].as_str(), Some("patient" | "therapist")));
    }
    for row in matrix {
        let row = row.as_array().unwrap();
        assert_eq!(row.len(), k);
        for s in row {
            let s = s.as_f64().unwrap();
            assert!((-1.0..=1.0).contains(&s));
        }
    }
}

pub fn check_trajectory_schema(v: &serde_json::Value) {
    assert!(v["session_id"].is_string());
    assert_eq!(v["topics"].as_array().unwrap().len(), 3);
    for p in v["points"].as_array().unwrap() {
        assert!(is_uint(&p["turn_index"]));
        for axis in ["x", "y", "z"] {
            assert!(p[axis].is_f64() || p[axis].is_i64() || p[axis].is_u64());
        }
    }
}

pub fn check_transcript_schema(v: &serde_json::Value) {
    assert!(v["session_id"].is_string());
    assert!(v["condition_tag"].is_string() || v["condition_tag"].is_null());
    for t in v["turns"].as_array().unwrap() {
        assert_eq!(t["session_id"], v["session_id"]);
        assert!(is_uint(&t["turn_index"]));
        assert!(matches!(t["speaker"].as_str(), Some("patient" | "therapist")));
        assert!(t["text"].is_string());
    }
}

pub fn check_outcomes_schema(v: &serde_json::Value) {
    for o in v.as_array().unwrap() {
        assert!(is_uint(&o["ordinal"]) && is_uint(&o["char_start"]) && is_uint(&o["char_end"]));
        assert!(o["detail"].is_string());
        let generated = match o["status"].as_str().unwrap() {
            "generated" => true,
            "rejected_safety" | "failed" => false,
            other => panic!("unknown status {other}"),
        };
        assert_eq!(o["image_path"].is_string(), generated);
        assert_eq!(o["image_url"].is_string(), generated);
    }
}

pub fn check_topics_schema(v: &serde_json::Value) {
    for (i, t) in v.as_array().unwrap().iter().enumerate() {
        assert_eq!(t["index"].as_u64(), Some(i as u64));
        let words = t["words"].as_array().unwrap();
        let weights: Vec<f64> = words.iter().map(|w| w["weight"].as_f64().unwrap()).collect();
        assert!(words.iter().all(|w| w["word"].is_string()));
        assert!(weights.windows(2).all(|p| p[0] >= p[1]));
        assert!(weights.iter().sum::<f64>() <= 1.0 + 1e-12);
    }
}
