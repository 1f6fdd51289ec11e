mod common;

use std::path::PathBuf;
use std::sync::Arc;

use reqwest::StatusCode;
use serde_json::{json, Value};
use storybot_core::clue::{ClueCorpus, ClueFinder, TrigramEmbedder};
use storybot_gateway::{clue_router, serve, MatchResponse};

async fn start() -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/examples/catherine.clues.json");
    let corpus = ClueCorpus::from_json(&std::fs::read_to_string(path).unwrap(), Arc::new(TrigramEmbedder)).unwrap();
    let finder = Arc::new(ClueFinder::new(corpus, 0.6).unwrap());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(serve(listener, clue_router(finder), std::future::pending()));
    format!("http://{addr}")
}

#[tokio::test]
async fn match_miss_and_reload() {
    let base = start().await;
    let client = reqwest::Client::new();
    let ask = |sentence: &'static str| {
        client
            .post(format!("{base}/match"))
            .json(&json!({ "sentence": sentence }))
            .send()
    };

    let hit = ask("who is Scarlet?").await.unwrap();
    assert_eq!(hit.status(), StatusCode::OK);
    let found: MatchResponse = hit.json().await.unwrap();
    assert_eq!(found.id, "scarlet");
    assert!(found.score >= 0.6);
    assert_eq!(found.image_url.as_deref(), Some("img/clues/scarlet.png"));

    let miss = ask("zzzz qqqq").await.unwrap();
    assert_eq!(miss.status(), StatusCode::NO_CONTENT);

    let reload = client
        .put(format!("{base}/corpus"))
        .json(&json!([{"id": "zq", "keyword": "zzzz qqqq", "reply_text": "Static."}]))
        .send()
        .await
        .unwrap();
    assert_eq!(reload.status(), StatusCode::OK);
    let found: MatchResponse = ask("zzzz qqqq").await.unwrap().json().await.unwrap();
    assert_eq!(found.id, "zq");
    assert_eq!(ask("who is Scarlet?").await.unwrap().status(), StatusCode::NO_CONTENT);

    let health: Value = client
        .get(format!("{base}/healthz"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(health["entries"], 1);
}

#[tokio::test]
async fn bad_corpus_is_rejected_and_kept() {
    let base = start().await;
    let client = reqwest::Client::new();
    let bad = client
        .put(format!("{base}/corpus"))
        .json(&json!([{"id": "x", "keyword": " ", "reply_text": "r"}]))
        .send()
        .await
        .unwrap();
    assert_eq!(bad.status(), StatusCode::BAD_REQUEST);
    let body: Value = bad.json().await.unwrap();
    assert_eq!(body["code"], "invalid-entry");

    let empty = client
        .post(format!("{base}/match"))
        .json(&json!({"sentence": ""}))
        .send()
        .await
        .unwrap();
    assert_eq!(empty.status(), StatusCode::BAD_REQUEST);

    let health: Value = client
        .get(format!("{base}/healthz"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(health["entries"], 8);
}

#[tokio::test]
async fn match_body_matches_the_published_schema() {
    let base = start().await;
    let body: Value = reqwest::Client::new()
        .post(format!("{base}/match"))
        .json(&json!({"sentence": "information about Domain"}))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    common::assert_conforms("clue_match", &body);
    assert_eq!(body["id"], "domain");
}
