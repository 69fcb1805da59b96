mod common;

use std::time::Duration;

use common::{mrpc_schema, Reply, StubServer};
use serde_json::{json, Value};
use supericl::core::{
    CompletionBackend, CompletionRequest, LabeledExample, LlmError, Plugin, PluginError,
};
use supericl::http::{HttpClassifier, HttpProvider};
use supericl::retry::{RetryPolicy, RetryingBackend};

fn example() -> LabeledExample {
    LabeledExample::new(
        "d1",
        [
            ("sentence1", "A cat sat."),
            ("sentence2", "A cat was sitting."),
        ],
        "equivalent",
    )
}

fn request() -> CompletionRequest {
    CompletionRequest {
        model_id: "text-model".into(),
        prompt: "Sentence 1: a\nSentence 2: b\nLabel:".into(),
        max_tokens: 16,
        temperature: 0.0,
        stop_sequences: vec!["\n\n".into()],
    }
}

const T: Duration = Duration::from_secs(5);

#[test]
fn classifier_posts_fields_and_reads_prediction() {
    let server =
        StubServer::start(|_| Reply::json(200, r#"{"label":"not_equivalent","confidence":0.64}"#));
    let plugin = HttpClassifier::new(&server.url, mrpc_schema(), 2, T);
    let pred = plugin.predict(&example()).unwrap();
    assert_eq!(pred.label, "not_equivalent");
    assert_eq!(pred.confidence, 0.64);
    let seen = server.requests();
    assert_eq!(seen.len(), 1);
    assert_eq!(seen[0].path, "/predict");
    let body: Value = serde_json::from_str(&seen[0].body).unwrap();
    assert_eq!(
        body,
        json!({"fields": {"sentence1": "A cat sat.", "sentence2": "A cat was sitting."}})
    );
}

#[test]
fn classifier_rejects_bad_replies() {
    for (status, body) in [
        (200, r#"{"label":"maybe","confidence":0.5}"#),
        (200, r#"{"label":"equivalent","confidence":1.5}"#),
        (200, "not json"),
        (503, r#"{"error":"down"}"#),
    ] {
        let server = StubServer::start(move |_| Reply::json(status, body));
        let plugin = HttpClassifier::new(&server.url, mrpc_schema(), 1, T);
        let err = plugin.predict(&example()).unwrap_err();
        assert!(
            matches!(err, PluginError::BadResponse(_)),
            "{status} {body}: {err:?}"
        );
    }
}

#[test]
fn provider_speaks_the_completion_contract() {
    let server = StubServer::start(|_| {
        Reply::json(
            200,
            r#"{"text":" equivalent\n\nSentence 1: more","usage":{"prompt_tokens":21,"completion_tokens":5}}"#,
        )
    });
    let provider = HttpProvider::new(&server.url, Some("sekret".into()), 2, T);
    let resp = provider.complete(&request()).unwrap();
    assert_eq!(resp.text, " equivalent");
    assert_eq!(resp.prompt_tokens, 21);
    assert_eq!(resp.completion_tokens, 5);
    assert!(!resp.from_cache);
    let seen = &server.requests()[0];
    assert_eq!(seen.header("authorization"), Some("Bearer sekret"));
    let body: Value = serde_json::from_str(&seen.body).unwrap();
    assert_eq!(
        body,
        json!({"model": "text-model", "prompt": request().prompt, "max_tokens": 16, "temperature": 0.0, "stop": ["\n\n"]})
    );
}

#[test]
fn provider_reads_token_from_environment_only() {
    let server = StubServer::start(|_| Reply::json(200, r#"{"text":" equivalent"}"#));
    let var = "SUPERICL_TEST_TOKEN_FOR_HTTP";
    std::env::set_var(var, "from-env");
    let provider = HttpProvider::from_env(&server.url, var, 1, T);
    provider.complete(&request()).unwrap();
    assert_eq!(
        server.requests()[0].header("authorization"),
        Some("Bearer from-env")
    );

    let anonymous = HttpProvider::from_env(&server.url, "SUPERICL_TEST_UNSET_VARIABLE", 1, T);
    anonymous.complete(&request()).unwrap();
    assert_eq!(server.requests()[1].header("authorization"), None);
}

#[test]
fn provider_status_mapping() {
    let server = StubServer::start(|_| Reply {
        status: 429,
        headers: vec![("retry-after", "2".into())],
        body: "slow down".into(),
    });
    let err = HttpProvider::new(&server.url, None, 1, T)
        .complete(&request())
        .unwrap_err();
    assert_eq!(
        err,
        LlmError::RateLimited {
            retry_after_ms: Some(2000)
        }
    );
    assert!(err.is_retryable());

    let server = StubServer::start(|_| Reply::json(502, "bad gateway"));
    let err = HttpProvider::new(&server.url, None, 1, T)
        .complete(&request())
        .unwrap_err();
    assert!(matches!(err, LlmError::Transport(_)) && err.is_retryable());

    let server = StubServer::start(|_| Reply::json(401, "no key"));
    let err = HttpProvider::new(&server.url, None, 1, T)
        .complete(&request())
        .unwrap_err();
    assert_eq!(
        err,
        LlmError::Provider {
            status: 401,
            body: "no key".into()
        }
    );
    assert!(!err.is_retryable());

    let server = StubServer::start(|_| Reply::json(200, r#"{"choices":[]}"#));
    let err = HttpProvider::new(&server.url, None, 1, T)
        .complete(&request())
        .unwrap_err();
    assert!(matches!(err, LlmError::BadResponse(_)));
}

#[test]
fn unreachable_endpoint_is_a_transport_error() {
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let err = HttpProvider::new(&format!("http://127.0.0.1:{port}"), None, 1, T)
        .complete(&request())
        .unwrap_err();
    assert!(err.is_retryable(), "{err:?}");
}

#[test]
fn retries_recover_from_transient_server_errors() {
    let calls = std::sync::Arc::new(std::sync::atomic::AtomicUsize::new(0));
    let c = calls.clone();
    let server = StubServer::start(move |_| {
        if c.fetch_add(1, std::sync::atomic::Ordering::SeqCst) < 2 {
            Reply::json(503, "busy")
        } else {
            Reply::json(200, r#"{"text":" not_equivalent"}"#)
        }
    });
    let policy = RetryPolicy {
        max_attempts: 4,
        base_delay_ms: 1,
        multiplier: 2.0,
    };
    let backend = RetryingBackend::new(HttpProvider::new(&server.url, None, 1, T), policy);
    assert_eq!(
        backend.complete(&request()).unwrap().text,
        " not_equivalent"
    );
    assert_eq!(server.requests().len(), 3);
}

#[test]
fn in_flight_limit_is_respected() {
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;
    let now = Arc::new(AtomicUsize::new(0));
    let peak = Arc::new(AtomicUsize::new(0));
    let (n, p) = (now.clone(), peak.clone());
    let server = StubServer::start(move |_| {
        let cur = n.fetch_add(1, Ordering::SeqCst) + 1;
        p.fetch_max(cur, Ordering::SeqCst);
        std::thread::sleep(Duration::from_millis(40));
        n.fetch_sub(1, Ordering::SeqCst);
        Reply::json(200, r#"{"text":" equivalent"}"#)
    });
    let provider = HttpProvider::new(&server.url, None, 2, T);
    std::thread::scope(|s| {
        for _ in 0..8 {
            s.spawn(|| provider.complete(&request()).unwrap());
        }
    });
    assert_eq!(server.requests().len(), 8);
    assert!(peak.load(Ordering::SeqCst) <= 2);
}
