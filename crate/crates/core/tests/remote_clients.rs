//! Wire-format tests for the remote embedding and chat clients against a
//! local mock server.

use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use grounded_rag::embedder::{EmbedError, Embedder, EmbedderConfig, EmbedderMode};
use grounded_rag::llm_gateway::{
    ChatGateway, ChatMessage, ChatRequest, GatewayConfig, GatewayError, ProviderKind,
};
use serde_json::{json, Value};

#[derive(Clone, Default)]
struct Captured {
    bodies: Arc<Mutex<Vec<Value>>>,
    auth: Arc<Mutex<Vec<Option<String>>>>,
}

async fn spawn(router: Router) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, router).await.unwrap() });
    format!("http://{addr}")
}

fn record(captured: &Captured, headers: &HeaderMap, body: &Value) {
    captured.bodies.lock().unwrap().push(body.clone());
    captured.auth.lock().unwrap().push(
        headers
            .get("authorization")
            .map(|v| v.to_str().unwrap().to_owned()),
    );
}

fn embed_router(captured: Captured, dim: usize) -> Router {
    Router::new()
        .route(
            "/v1/embeddings",
            post(
                move |State(c): State<Captured>, headers: HeaderMap, Json(body): Json<Value>| async move {
                    record(&c, &headers, &body);
                    let inputs = body["input"].as_array().unwrap().clone();
                    let data: Vec<Value> = inputs
                        .iter()
                        .enumerate()
                        .map(|(i, _)| {
                            let mut v = vec![0.0; dim];
                            v[i % dim] = 3.0;
                            v[(i + 1) % dim] = 4.0;
                            json!({ "embedding": v })
                        })
                        .collect();
                    Json(json!({ "data": data }))
                },
            ),
        )
        .with_state(captured)
}

fn remote_embed_cfg(base: &str, dim: usize) -> EmbedderConfig {
    EmbedderConfig {
        mode: EmbedderMode::Remote,
        dim,
        endpoint: format!("{base}/v1/embeddings"),
        model: "embed-model".into(),
        api_key_env: "GROUNDED_RAG_TEST_EMBED_KEY".into(),
        max_in_flight: 2,
        timeout_secs: 5,
    }
}

#[tokio::test]
async fn remote_embedder_wire_shape_and_normalization() {
    std::env::set_var("GROUNDED_RAG_TEST_EMBED_KEY", "sekret");
    let captured = Captured::default();
    let base = spawn(embed_router(captured.clone(), 4)).await;
    let embedder = Embedder::from_config(&remote_embed_cfg(&base, 4)).unwrap();
    assert_eq!(embedder.mode(), EmbedderMode::Remote);

    let out = embedder
        .embed_batch(&["one".to_owned(), "two".to_owned()])
        .await
        .unwrap();
    assert_eq!(out.len(), 2);
    assert_eq!(out[0].values(), &[0.6, 0.8, 0.0, 0.0]);
    assert_eq!(out[1].values(), &[0.0, 0.6, 0.8, 0.0]);
    for e in &out {
        assert!((e.norm() - 1.0).abs() < 1e-9);
    }

    let single = embedder.embed("three").await.unwrap();
    assert_eq!(single.values(), &[0.6, 0.8, 0.0, 0.0]);

    let bodies = captured.bodies.lock().unwrap();
    assert_eq!(
        bodies[0],
        json!({"model": "embed-model", "input": ["one", "two"]})
    );
    assert_eq!(
        bodies[1],
        json!({"model": "embed-model", "input": ["three"]})
    );
    assert_eq!(
        captured.auth.lock().unwrap()[0].as_deref(),
        Some("Bearer sekret")
    );
}

#[tokio::test]
async fn remote_embedder_dimension_mismatch() {
    let base = spawn(embed_router(Captured::default(), 3)).await;
    let embedder = Embedder::from_config(&remote_embed_cfg(&base, 4)).unwrap();
    let err = embedder.embed("x").await.unwrap_err();
    assert_eq!(
        err,
        EmbedError::DimensionMismatch {
            expected: 4,
            actual: 3
        }
    );
}

#[tokio::test]
async fn remote_embedder_unavailable() {
    let embedder = Embedder::from_config(&remote_embed_cfg("http://127.0.0.1:9", 4)).unwrap();
    assert!(matches!(
        embedder.embed("x").await,
        Err(EmbedError::RemoteUnavailable(_))
    ));
    let base = spawn(Router::new().route(
        "/v1/embeddings",
        post(|| async { (StatusCode::INTERNAL_SERVER_ERROR, "boom") }),
    ))
    .await;
    let embedder = Embedder::from_config(&remote_embed_cfg(&base, 4)).unwrap();
    assert!(matches!(
        embedder.embed("x").await,
        Err(EmbedError::RemoteUnavailable(_))
    ));
}

#[tokio::test]
async fn remote_embedder_bounds_in_flight_requests() {
    let active = Arc::new(Mutex::new((0usize, 0usize)));
    let state = active.clone();
    let router = Router::new().route(
        "/v1/embeddings",
        post(move |Json(body): Json<Value>| {
            let state = state.clone();
            async move {
                {
                    let mut s = state.lock().unwrap();
                    s.0 += 1;
                    s.1 = s.1.max(s.0);
                }
                tokio::time::sleep(Duration::from_millis(50)).await;
                state.lock().unwrap().0 -= 1;
                let n = body["input"].as_array().unwrap().len();
                Json(json!({ "data": vec![json!({"embedding": [1.0, 0.0]}); n] }))
            }
        }),
    );
    let base = spawn(router).await;
    let embedder = Arc::new(Embedder::from_config(&remote_embed_cfg(&base, 2)).unwrap());
    let tasks: Vec<_> = (0..8)
        .map(|i| {
            let e = embedder.clone();
            tokio::spawn(async move { e.embed(&format!("t{i}")).await.unwrap() })
        })
        .collect();
    for t in tasks {
        t.await.unwrap();
    }
    let peak = active.lock().unwrap().1;
    assert!(peak <= 2, "peak concurrency {peak}");
}

fn chat_request() -> ChatRequest {
    ChatRequest {
        model: "chat-model".into(),
        messages: vec![
            ChatMessage::system("sys"),
            ChatMessage::user("CONTEXT:\nQUESTION:\nq"),
        ],
        temperature: 0.5,
        max_answer_tokens: 1000,
    }
}

fn chat_cfg(base: &str, timeout_secs: u64) -> GatewayConfig {
    GatewayConfig {
        mode: ProviderKind::Remote,
        base_url: format!("{base}/v1/"),
        api_key_env: "GROUNDED_RAG_TEST_CHAT_KEY".into(),
        timeout_secs,
    }
}

#[tokio::test]
async fn remote_chat_wire_shape() {
    std::env::set_var("GROUNDED_RAG_TEST_CHAT_KEY", "chat-key");
    let captured = Captured::default();
    let router = Router::new()
        .route(
            "/v1/chat/completions",
            post(
                |State(c): State<Captured>, headers: HeaderMap, Json(body): Json<Value>| async move {
                    record(&c, &headers, &body);
                    Json(json!({
                        "choices": [
                            {"message": {"role": "assistant", "content": "It is Xanadu [1]."}},
                            {"message": {"role": "assistant", "content": "ignored"}}
                        ]
                    }))
                },
            ),
        )
        .with_state(captured.clone());
    let base = spawn(router).await;
    let gateway = ChatGateway::from_config(&chat_cfg(&base, 5)).unwrap();
    let resp = gateway.complete(&chat_request()).await.unwrap();
    assert_eq!(resp.content, "It is Xanadu [1].");
    assert_eq!(resp.provider, ProviderKind::Remote);
    assert_eq!(
        captured.bodies.lock().unwrap()[0],
        json!({
            "model": "chat-model",
            "temperature": 0.5,
            "max_tokens": 1000,
            "messages": [
                {"role": "system", "content": "sys"},
                {"role": "user", "content": "CONTEXT:\nQUESTION:\nq"}
            ]
        })
    );
    assert_eq!(
        captured.auth.lock().unwrap()[0].as_deref(),
        Some("Bearer chat-key")
    );
    assert_eq!(gateway.call_log().count(), 1);
}

#[tokio::test]
async fn remote_chat_refusals() {
    let router = Router::new()
        .route(
            "/empty/chat/completions",
            post(|| async { Json(json!({"choices": [{"message": {"content": ""}}]})) }),
        )
        .route(
            "/error/chat/completions",
            post(|| async {
                (
                    StatusCode::BAD_REQUEST,
                    Json(json!({"error": {"message": "content policy"}})),
                )
            }),
        )
        .route(
            "/down/chat/completions",
            post(|| async { (StatusCode::BAD_GATEWAY, "upstream down") }),
        );
    let base = spawn(router).await;
    let gw = |path: &str| {
        ChatGateway::from_config(&GatewayConfig {
            base_url: format!("{base}/{path}"),
            ..chat_cfg(&base, 5)
        })
        .unwrap()
    };
    assert!(matches!(
        gw("empty").complete(&chat_request()).await,
        Err(GatewayError::RemoteRefusal(_))
    ));
    assert!(matches!(
        gw("error").complete(&chat_request()).await,
        Err(GatewayError::RemoteRefusal(m)) if m.contains("content policy")
    ));
    assert!(matches!(
        gw("down").complete(&chat_request()).await,
        Err(GatewayError::RemoteUnavailable(_))
    ));
}

#[tokio::test]
async fn remote_chat_timeout() {
    let router = Router::new().route(
        "/v1/chat/completions",
        post(|| async {
            tokio::time::sleep(Duration::from_secs(3)).await;
            Json(json!({"choices": [{"message": {"content": "late"}}]}))
        }),
    );
    let base = spawn(router).await;
    let gateway = ChatGateway::from_config(&chat_cfg(&base, 1)).unwrap();
    assert_eq!(
        gateway.complete(&chat_request()).await,
        Err(GatewayError::Timeout(1))
    );
}
