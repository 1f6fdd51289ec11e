use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

use storybot_core::clue::{ClueCorpus, ClueEntry, Embedder, HttpEmbedder};
use storybot_core::dialogue::{HttpProvider, HttpProviderConfig, LanguageModel, PromptBundle};

type Seen = Arc<Mutex<Vec<(Option<String>, Value)>>>;

fn serve(router: Router) -> SocketAddr {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Runtime::new().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, router).await.unwrap();
        });
    });
    rx.recv().unwrap()
}

fn mock_llm(seen: Seen) -> Router {
    Router::new()
        .route(
            "/v1/completions",
            post(move |headers: HeaderMap, Json(body): Json<Value>| {
                let seen = seen.clone();
                async move {
                    let auth = headers.get("authorization").map(|v| v.to_str().unwrap().to_owned());
                    seen.lock().unwrap().push((auth, body));
                    Json(json!({"choices": [{"text": " I'm hiding in the clinic.\n"}]}))
                }
            }),
        )
        .route("/broken", post(|| async { StatusCode::INTERNAL_SERVER_ERROR }))
        .route("/empty", post(|| async { Json(json!({"choices": []})) }))
}

fn bundle() -> PromptBundle {
    PromptBundle {
        character_name: "David".into(),
        character_prompt: "I'm David.".into(),
        live_story_prompt: "[Day 0]\n...".into(),
        history: vec![],
        new_message: "where are you?".into(),
        rendered: "### New message\nUser: where are you?\nDavid:".into(),
    }
}

fn provider(addr: SocketAddr, path: &str, key: Option<&str>) -> HttpProvider {
    let mut params = serde_json::Map::new();
    params.insert("temperature".into(), json!(0.7));
    HttpProvider::new(
        HttpProviderConfig {
            url: format!("http://{addr}{path}"),
            model: Some("text-davinci-003".into()),
            api_key_env: "UNUSED".into(),
            timeout_ms: 2_000,
            params,
        },
        key.map(String::from),
    )
    .unwrap()
}

#[test]
fn remote_provider_sends_rendered_prompt_and_key() {
    let seen: Seen = Arc::default();
    let addr = serve(mock_llm(seen.clone()));
    let reply = provider(addr, "/v1/completions", Some("sk-test"))
        .complete(&bundle())
        .unwrap();
    assert_eq!(reply, "I'm hiding in the clinic.");
    let seen = seen.lock().unwrap();
    let (auth, body) = &seen[0];
    assert_eq!(auth.as_deref(), Some("Bearer sk-test"));
    assert_eq!(body["prompt"], bundle().rendered);
    assert_eq!(body["model"], "text-davinci-003");
    assert_eq!(body["temperature"], 0.7);
    assert_eq!(body["stop"], json!(["\nUser:"]));
}

#[test]
fn remote_provider_failures_are_unavailable() {
    let addr = serve(mock_llm(Arc::default()));
    for path in ["/broken", "/empty", "/missing"] {
        let err = provider(addr, path, None).complete(&bundle()).unwrap_err();
        assert_eq!(err.code(), "provider-unavailable", "{path}");
    }
}

#[test]
fn remote_embedder_feeds_clue_corpus() {
    // A toy encoder: counts of a, b and c.
    let router = Router::new().route(
        "/embed",
        post(|Json(body): Json<Value>| async move {
            let text = body["input"].as_str().unwrap_or_default().to_lowercase();
            let v: Vec<f64> = ['a', 'b', 'c']
                .iter()
                .map(|ch| text.matches(*ch).count() as f64 + 0.01)
                .collect();
            Json(json!({"embedding": v}))
        }),
    );
    let addr = serve(router);
    let embedder = Arc::new(HttpEmbedder::new(format!("http://{addr}/embed"), None, Duration::from_secs(2)).unwrap());
    assert_eq!(embedder.embed("abc").unwrap().dim(), 3);
    let corpus = ClueCorpus::build(
        vec![
            ClueEntry {
                id: "a".into(),
                keyword: "aaaa".into(),
                reply_text: "A".into(),
                image_url: None,
            },
            ClueEntry {
                id: "c".into(),
                keyword: "cccc".into(),
                reply_text: "C".into(),
                image_url: None,
            },
        ],
        embedder,
    )
    .unwrap();
    assert_eq!(corpus.find("a cat", 0.6).unwrap().unwrap().entry.id, "a");
    assert_eq!(corpus.find("ccc", 0.6).unwrap().unwrap().entry.id, "c");
}

#[test]
fn unreachable_embedder_is_unavailable() {
    let embedder = HttpEmbedder::new("http://127.0.0.1:9/embed", None, Duration::from_millis(300)).unwrap();
    assert_eq!(embedder.embed("hello").unwrap_err().code(), "provider-unavailable");
}
