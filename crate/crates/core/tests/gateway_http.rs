mod common;

use std::collections::VecDeque;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

use omnilogic_core::gateway::{complete, EndpointConfig, GatewayError, HttpBackend};
use omnilogic_core::prompt::{build_with_order, PromptBundle, PromptMode};

#[derive(Default)]
struct Script {
    replies: Mutex<VecDeque<(u16, Value, u64)>>,
    bodies: Mutex<Vec<Value>>,
    in_flight: AtomicUsize,
    peak: AtomicUsize,
}

async fn handler(State(script): State<Arc<Script>>, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    let now = script.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    script.peak.fetch_max(now, Ordering::SeqCst);
    script.bodies.lock().unwrap().push(body);
    let next = script.replies.lock().unwrap().pop_front();
    let (status, reply, delay) = next.unwrap_or((200, json!({"text": "Answer: A"}), 0));
    if delay > 0 {
        tokio::time::sleep(Duration::from_millis(delay)).await;
    }
    script.in_flight.fetch_sub(1, Ordering::SeqCst);
    (StatusCode::from_u16(status).unwrap(), Json(reply))
}

fn serve(script: Arc<Script>) -> SocketAddr {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            let app = Router::new().route("/v1/chat/completions", post(handler)).with_state(script);
            axum::serve(listener, app).await.unwrap();
        });
    });
    rx.recv().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    backend: HttpBackend,
    script: Arc<Script>,
    bundles: Vec<PromptBundle>,
}

fn fixture(replies: Vec<(u16, Value, u64)>, tweak: impl FnOnce(&mut EndpointConfig)) -> Fixture {
    let script = Arc::new(Script::default());
    script.replies.lock().unwrap().extend(replies);
    let addr = serve(script.clone());
    let dir = tempfile::tempdir().unwrap();
    let assets = dir.path().join("assets");
    let mut bundles = Vec::new();
    for name in ["equivalence", "alternative", "entailment", "independence", "complementary", "contradictory"] {
        let inst = common::example_instance(name);
        let r = common::render_all(std::slice::from_ref(&inst), &assets).remove(0);
        bundles.push(build_with_order(&r, &inst, PromptMode::Reasoning, common::EXAMPLE_ORDER, None).unwrap());
    }
    let mut cfg = EndpointConfig {
        base_url: format!("http://{addr}/v1"),
        model_name: "test-model".into(),
        cache_dir: Some(dir.path().join("cache")),
        backoff_ms: 5,
        timeout_secs: 5,
        ..EndpointConfig::default()
    };
    tweak(&mut cfg);
    let backend = HttpBackend::new(cfg, &assets).unwrap();
    Fixture {
        _dir: dir,
        backend,
        script,
        bundles,
    }
}

#[test]
fn request_carries_model_and_multimodal_parts() {
    let f = fixture(vec![], |_| {});
    let resp = complete(&f.backend, &f.bundles[0]).unwrap();
    assert_eq!(resp.text, "Answer: A");
    assert!(!resp.cached);
    let bodies = f.script.bodies.lock().unwrap();
    let body = &bodies[0];
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["temperature"], 0);
    assert_eq!(body["do_sample"], false);
    let kinds: Vec<&str> = body["messages"][1]["content"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["type"].as_str().unwrap())
        .collect();
    assert_eq!(kinds, ["image", "text", "audio", "text"]);
    assert_eq!(body["messages"][0]["role"], "system");
}

#[test]
fn cache_hit_skips_the_network() {
    let f = fixture(vec![], |_| {});
    let first = complete(&f.backend, &f.bundles[1]).unwrap();
    assert_eq!(f.backend.network_calls(), 1);
    let second = complete(&f.backend, &f.bundles[1]).unwrap();
    assert_eq!(f.backend.network_calls(), 1);
    assert!(second.cached);
    assert_eq!(first.text, second.text);
}

#[test]
fn rate_limit_then_success_is_retried() {
    let f = fixture(
        vec![(429, json!({"error": "slow down"}), 0), (503, json!({}), 0), (200, json!({"choices": [{"message": {"content": "Answer: C"}, "finish_reason": "stop"}]}), 0)],
        |_| {},
    );
    let resp = complete(&f.backend, &f.bundles[2]).unwrap();
    assert_eq!(resp.text, "Answer: C");
    assert_eq!(resp.finish_reason.as_deref(), Some("stop"));
    assert_eq!(f.backend.network_calls(), 3);
}

#[test]
fn missing_text_is_a_protocol_error() {
    let f = fixture(vec![(200, json!({"choices": []}), 0)], |_| {});
    let err = complete(&f.backend, &f.bundles[3]).unwrap_err();
    assert!(matches!(err, GatewayError::ProtocolError(_)), "{err:?}");
    assert_eq!(f.backend.network_calls(), 1);
}

#[test]
fn client_errors_are_not_retried() {
    let f = fixture(vec![(400, json!({"error": "bad"}), 0)], |_| {});
    let err = complete(&f.backend, &f.bundles[3]).unwrap_err();
    assert!(matches!(err, GatewayError::HttpError { status: 400, .. }), "{err:?}");
    assert_eq!(f.backend.network_calls(), 1);
}

#[test]
fn persistent_failure_exhausts_retries() {
    let f = fixture(vec![(500, json!({}), 0); 4], |c| c.max_retries = 3);
    let err = complete(&f.backend, &f.bundles[4]).unwrap_err();
    match err {
        GatewayError::RetriesExhausted { attempts, last } => {
            assert_eq!(attempts, 4);
            assert!(matches!(*last, GatewayError::HttpError { status: 500, .. }));
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(f.backend.network_calls(), 4);
}

#[test]
fn failures_are_not_cached() {
    let f = fixture(vec![(500, json!({}), 0)], |c| c.max_retries = 0);
    assert!(complete(&f.backend, &f.bundles[4]).is_err());
    let ok = complete(&f.backend, &f.bundles[4]).unwrap();
    assert!(!ok.cached);
    assert_eq!(f.backend.network_calls(), 2);
}

#[test]
fn concurrency_is_capped() {
    let f = fixture(vec![(200, json!({"text": "Answer: B"}), 150); 6], |c| c.parallel_requests = 2);
    std::thread::scope(|s| {
        for b in &f.bundles {
            let backend = &f.backend;
            s.spawn(move || complete(backend, b).unwrap());
        }
    });
    assert_eq!(f.backend.network_calls(), 6);
    assert!(f.script.peak.load(Ordering::SeqCst) <= 2);
    assert!(f.script.peak.load(Ordering::SeqCst) >= 1);
}

#[test]
fn audio_refused_when_unsupported() {
    let f = fixture(vec![], |c| c.supports_audio = false);
    let err = complete(&f.backend, &f.bundles[0]).unwrap_err();
    assert!(matches!(err, GatewayError::AudioUnsupported));
    assert_eq!(f.backend.network_calls(), 0);
}

#[test]
fn slow_endpoint_times_out() {
    let f = fixture(vec![(200, json!({"text": "Answer: A"}), 3000); 2], |c| {
        c.timeout_secs = 1;
        c.max_retries = 1;
    });
    let err = complete(&f.backend, &f.bundles[5]).unwrap_err();
    match err {
        GatewayError::RetriesExhausted { last, .. } => assert!(matches!(*last, GatewayError::Timeout), "{last:?}"),
        other => panic!("{other:?}"),
    }
}
