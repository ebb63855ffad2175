mod common;

use std::sync::Arc;
use std::time::{Duration, Instant};

use common::{hashed_answer, synthetic_corpus, MockServer, Reply};
use scale_scribe::corpus::TranscriptKind;
use scale_scribe::gateway::{
    Backend, BackendKind, Gateway, GatewayError, LiveBackend, ModelConfig, ReplayBackend, ResponseCache,
};
use scale_scribe::{build_prompt, ContextStrategy, PatientTimeline, PromptBundle, ScaleDefinition, Selection};

fn bundles(n: usize) -> Vec<PromptBundle> {
    let corpus = synthetic_corpus(n, 1, 3, &[TranscriptKind::Open], &["en"]);
    let scale = ScaleDefinition::bprs_e();
    corpus
        .eval_cases(&Selection::default())
        .into_iter()
        .map(|c| build_prompt(&scale, &PatientTimeline::new(vec![c]).unwrap(), ContextStrategy::ZeroShot).unwrap())
        .collect()
}

fn config(url: &str) -> ModelConfig {
    ModelConfig {
        endpoint_url: url.into(),
        model_name: "test-model".into(),
        retry_base_delay_ms: 5,
        timeout_secs: 10,
        ..ModelConfig::default()
    }
}

fn live_gateway(config: ModelConfig, key: Option<&str>) -> (Gateway, Arc<LiveBackend>) {
    let backend = Arc::new(LiveBackend::new(&config, key.map(String::from)).unwrap());
    let gw = Gateway::new(config, Arc::new(ScaleDefinition::bprs_e()), backend.clone()).unwrap();
    (gw, backend)
}

#[test]
fn wire_body_and_bearer_token() {
    let server = MockServer::start(Duration::ZERO, |r, _| Reply::chat(&hashed_answer(r)));
    let (gw, backend) = live_gateway(config(&server.url), Some("sk-test"));
    let bundle = &bundles(1)[0];
    let result = gw.complete(bundle).unwrap();
    assert_eq!(result.backend, BackendKind::Live);
    assert_eq!(result.attempts, 1);
    assert_eq!(backend.requests_sent(), 1);

    let seen = server.requests.lock().unwrap()[0].clone();
    assert_eq!(seen.authorization.as_deref(), Some("Bearer sk-test"));
    let body = seen.body;
    assert_eq!(body["model"], "test-model");
    let messages = body["messages"].as_array().unwrap();
    assert_eq!(messages.len(), 2);
    assert_eq!(messages[0]["role"], "system");
    assert_eq!(messages[0]["content"], bundle.system_text.as_str());
    assert_eq!(messages[1]["role"], "user");
    assert_eq!(messages[1]["content"], bundle.messages[0].content.as_str());
    assert_eq!(body["response_format"]["type"], "json_schema");
    assert_eq!(body["response_format"]["json_schema"]["strict"], true);
    let keys: Vec<&String> = body.as_object().unwrap().keys().collect();
    assert_eq!(keys, ["messages", "model", "response_format"]);
}

#[test]
fn server_errors_are_retried() {
    let server = MockServer::start(Duration::ZERO, |r, n| {
        if n <= 2 {
            Reply::status(503)
        } else {
            Reply::chat(&hashed_answer(r))
        }
    });
    let (gw, _) = live_gateway(config(&server.url), None);
    let result = gw.complete(&bundles(1)[0]).unwrap();
    assert_eq!(result.attempts, 3);
    assert_eq!(server.count(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let server = MockServer::start(Duration::ZERO, |_, _| Reply::status(401));
    let (gw, _) = live_gateway(config(&server.url), None);
    let err = gw.complete(&bundles(1)[0]).unwrap_err();
    assert!(matches!(err, GatewayError::Transport { attempts: 1, .. }), "{err:?}");
    assert_eq!(server.count(), 1);
}

#[test]
fn rate_limit_honours_retry_after_then_surfaces() {
    let server = MockServer::start(Duration::ZERO, |_, _| Reply {
        status: 429,
        headers: vec![("Retry-After".into(), "0.05".into())],
        body: "{}".into(),
    });
    let (gw, _) = live_gateway(ModelConfig { max_retries: 2, ..config(&server.url) }, None);
    let started = Instant::now();
    let err = gw.complete(&bundles(1)[0]).unwrap_err();
    assert!(started.elapsed() >= Duration::from_millis(100));
    match err {
        GatewayError::RateLimited { retry_after, attempts } => {
            assert_eq!(retry_after, Some(Duration::from_millis(50)));
            assert_eq!(attempts, 3);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn invalid_output_is_retried_then_rejected() {
    let server = MockServer::start(Duration::ZERO, |_, _| Reply::chat("I cannot rate this."));
    let (gw, _) = live_gateway(ModelConfig { max_retries: 1, ..config(&server.url) }, None);
    let err = gw.complete(&bundles(1)[0]).unwrap_err();
    assert!(matches!(err, GatewayError::OutputRejected { attempts: 2, .. }), "{err:?}");
    assert_eq!(server.count(), 2);
}

#[test]
fn concurrency_is_capped() {
    let server = MockServer::start(Duration::from_millis(40), |r, _| Reply::chat(&hashed_answer(r)));
    let (gw, _) = live_gateway(ModelConfig { max_concurrent_requests: 3, ..config(&server.url) }, None);
    let all = bundles(12);
    std::thread::scope(|s| {
        for b in &all {
            let gw = &gw;
            s.spawn(move || gw.complete(b).unwrap());
        }
    });
    assert_eq!(server.count(), 12);
    assert!(gw.peak_in_flight() <= 3);
    assert!(server.peak_in_flight.load(std::sync::atomic::Ordering::SeqCst) <= 3);
    assert_eq!(gw.peak_in_flight(), 3);
}

#[test]
fn record_then_replay_without_network() {
    let server = MockServer::start(Duration::ZERO, |r, _| Reply::chat(&hashed_answer(r)));
    let dir = tempfile::tempdir().unwrap();
    let cache = ResponseCache::new(dir.path());
    let cfg = config(&server.url);
    let scale = Arc::new(ScaleDefinition::bprs_e());
    let live: Arc<dyn Backend> = Arc::new(LiveBackend::new(&cfg, None).unwrap());
    let recorder = Gateway::new(cfg.clone(), scale.clone(), Arc::new(ReplayBackend::recording(cache.clone(), live))).unwrap();
    let all = bundles(4);
    let recorded: Vec<_> = all.iter().map(|b| recorder.complete(b).unwrap()).collect();
    assert_eq!(server.count(), 4);
    assert_eq!(cache.len().unwrap(), 4);
    let entry = cache.get(&recorded[0].request_fingerprint).unwrap().unwrap();
    assert_eq!(entry.raw_text, recorded[0].raw_text);
    assert_eq!(entry.request["model"], "test-model");

    let replay = Arc::new(ReplayBackend::offline(cache.clone()));
    let player = Gateway::new(cfg, scale, replay.clone()).unwrap();
    for (b, r) in all.iter().zip(&recorded) {
        let again = player.complete(b).unwrap();
        assert_eq!(again.raw_text, r.raw_text);
        assert_eq!(again.request_fingerprint, r.request_fingerprint);
        assert_eq!(again.backend, BackendKind::Replay);
    }
    assert_eq!(server.count(), 4);
    assert_eq!(replay.hits(), 4);

    // a bundle never recorded
    let mut other = all[0].clone();
    other.messages[0].content.push_str(" (edited)");
    match player.complete(&other).unwrap_err() {
        GatewayError::Transport { message, attempts: 1 } => assert!(message.contains("no cached response")),
        e => panic!("unexpected {e:?}"),
    }
}

#[test]
fn fingerprints_unique_across_fixture_bundles() {
    let cfg = ModelConfig::default();
    let all = bundles(30);
    let prints: std::collections::BTreeSet<String> = all
        .iter()
        .map(|b| scale_scribe::gateway::fingerprint(b, &cfg.model_name, &cfg.extra_params))
        .collect();
    assert_eq!(prints.len(), all.len());
}
