use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use mmndb::bench::{run_benchmark, BenchSpec};
use mmndb::parallel::reason_all;
use mmndb::remote::{ReasonRequest, RemoteConfig, RemoteQueryEncoder, RemoteReasoner};
use mmndb_core::corpus::{Document, MultimodalDatabase};
use mmndb_core::eval::{IrSetting, SettingContext};
use mmndb_core::embedding::{EmbeddingError, QueryEncoder};
use mmndb_core::query::{Query, QueryType};
use mmndb_core::reasoner::{AnswerKind, OracleReasoner, Reasoner};
use tiny_http::{Response, Server};

struct Stub {
    url: String,
    requests: Arc<Mutex<Vec<ReasonRequest>>>,
    peak: Arc<AtomicUsize>,
}

/// Serves `/v1/reason` by echoing the number in the doc id, `/v1/embed_text` with a fixed vector.
fn stub(workers: usize, delay: Duration) -> Stub {
    let server = Arc::new(Server::http("127.0.0.1:0").unwrap());
    let url = format!("http://{}", server.server_addr().to_ip().unwrap());
    let requests = Arc::new(Mutex::new(Vec::new()));
    let active = Arc::new(AtomicUsize::new(0));
    let peak = Arc::new(AtomicUsize::new(0));
    for _ in 0..workers {
        let (server, requests, active, peak) =
            (server.clone(), requests.clone(), active.clone(), peak.clone());
        thread::spawn(move || {
            for mut req in server.incoming_requests() {
                let now = active.fetch_add(1, Ordering::SeqCst) + 1;
                peak.fetch_max(now, Ordering::SeqCst);
                let mut body = String::new();
                req.as_reader().read_to_string(&mut body).unwrap();
                thread::sleep(delay);
                let response = if req.url() == "/v1/embed_text" {
                    Response::from_string(r#"{"embedding": [1.0, 0.5]}"#).with_status_code(200)
                } else {
                    let parsed: ReasonRequest = serde_json::from_str(&body).unwrap();
                    let id = parsed.doc_id.clone();
                    requests.lock().unwrap().push(parsed);
                    if id == "broken" {
                        Response::from_string("boom").with_status_code(500)
                    } else if id == "garbled" {
                        Response::from_string("not json").with_status_code(200)
                    } else if id == "vague" {
                        Response::from_string(r#"{"text": "There are many."}"#).with_status_code(200)
                    } else {
                        let n = id.trim_start_matches('d');
                        Response::from_string(format!(r#"{{"text": "I count {n} of them."}}"#))
                            .with_status_code(200)
                    }
                };
                active.fetch_sub(1, Ordering::SeqCst);
                req.respond(response).unwrap();
            }
        });
    }
    Stub { url, requests, peak }
}

fn doc(id: &str) -> Document {
    Document::new(id).unwrap().with_count("cat", 1).unwrap()
}

#[test]
fn reason_request_shape_and_answer_parsing() {
    let s = stub(1, Duration::ZERO);
    let backend = RemoteReasoner::new(RemoteConfig::new(format!("{}/", s.url)));
    let q = Query::new(QueryType::Count, "dog").unwrap();
    let d = doc("d7").with_meta("image_uri", "file:///img/7.jpg");
    let answer = backend.reason(&q, &d);
    assert_eq!(answer.kind, AnswerKind::Number(7));
    assert_eq!(answer.doc_id, "d7");
    assert_eq!(answer.raw_text.as_deref(), Some("I count 7 of them."));
    let seen = s.requests.lock().unwrap();
    assert_eq!(seen[0].prompt, "How many dog are in this image? Answer with a number.");
    assert_eq!(seen[0].image_uri, "file:///img/7.jpg");
    assert_eq!(seen[0].doc_id, "d7");
    drop(seen);

    assert_eq!(backend.reason(&q, &doc("vague")).kind, AnswerKind::Indecisive("many".into()));
    match backend.reason(&q, &doc("broken")).kind {
        AnswerKind::Failed(reason) => assert!(reason.starts_with("transport"), "{reason}"),
        other => panic!("unexpected {other:?}"),
    }
    match backend.reason(&q, &doc("garbled")).kind {
        AnswerKind::Failed(reason) => assert!(reason.starts_with("transport"), "{reason}"),
        other => panic!("unexpected {other:?}"),
    }
    let missing_uri = s.requests.lock().unwrap().iter().any(|r| r.doc_id == "vague" && r.image_uri == "vague");
    assert!(missing_uri);
}

#[test]
fn unreachable_endpoint_and_timeout_fail_per_document() {
    let q = Query::new(QueryType::Count, "dog").unwrap();
    let dead = RemoteReasoner::new(RemoteConfig::new("http://127.0.0.1:1"));
    assert!(matches!(dead.reason(&q, &doc("d1")).kind, AnswerKind::Failed(r) if r.starts_with("transport")));

    let slow = stub(1, Duration::from_millis(1500));
    let mut config = RemoteConfig::new(slow.url.clone());
    config.timeout = Duration::from_millis(200);
    let start = std::time::Instant::now();
    let answer = RemoteReasoner::new(config).reason(&q, &doc("d1"));
    assert!(matches!(answer.kind, AnswerKind::Failed(_)));
    assert!(start.elapsed() < Duration::from_millis(1400));
}

#[test]
fn concurrent_requests_keep_doc_association() {
    let s = stub(64, Duration::from_millis(50));
    let mut config = RemoteConfig::new(s.url.clone());
    config.max_in_flight = 64;
    let backend = RemoteReasoner::new(config);
    let db = MultimodalDatabase::from_documents((0..64).map(|i| doc(&format!("d{i}")))).unwrap();
    let ids: Vec<String> = db.doc_ids().map(str::to_string).collect();
    let q = Query::new(QueryType::Count, "cat").unwrap();
    let answers = reason_all(&backend, &db, &q, &ids, 64);
    assert_eq!(answers.len(), 64);
    for (id, a) in &answers {
        assert_eq!(&a.doc_id, id);
        let n: u64 = id[1..].parse().unwrap();
        assert_eq!(a.kind, AnswerKind::Number(n), "{id}");
    }
    assert!(s.peak.load(Ordering::SeqCst) > 8, "requests were not concurrent");
}

#[test]
fn in_flight_bound_is_respected() {
    let s = stub(16, Duration::from_millis(30));
    let mut config = RemoteConfig::new(s.url.clone());
    config.max_in_flight = 3;
    let backend = RemoteReasoner::new(config);
    let db = MultimodalDatabase::from_documents((0..24).map(|i| doc(&format!("d{i}")))).unwrap();
    let ids: Vec<String> = db.doc_ids().map(str::to_string).collect();
    let q = Query::new(QueryType::Count, "cat").unwrap();
    let answers = reason_all(&backend, &db, &q, &ids, 16);
    assert!(answers.values().all(|a| a.as_number().is_some()));
    assert!(s.peak.load(Ordering::SeqCst) <= 3);
}

#[test]
fn remote_query_encoder() {
    let s = stub(1, Duration::ZERO);
    let encoder = RemoteQueryEncoder::new(RemoteConfig::new(s.url.clone()));
    let q = Query::new(QueryType::Count, "dog").unwrap();
    assert_eq!(encoder.encode(&q).unwrap(), vec![1.0, 0.5]);
    let dead = RemoteQueryEncoder::new(RemoteConfig::new("http://127.0.0.1:1"));
    assert!(matches!(dead.encode(&q), Err(EmbeddingError::Encoder(_))));
}

/// Answers every prompt from the TOY3 annotations, as the oracle would.
fn toy3_oracle_stub() -> String {
    let server = Arc::new(Server::http("127.0.0.1:0").unwrap());
    let url = format!("http://{}", server.server_addr().to_ip().unwrap());
    let counts = |doc: &str, object: &str| -> u64 {
        match (doc, object) {
            ("d1", "person") => 2,
            ("d1", "guitar") => 1,
            ("d2", "dog") => 3,
            ("d3", "person") | ("d3", "dog") => 1,
            _ => 0,
        }
    };
    for _ in 0..4 {
        let server = server.clone();
        thread::spawn(move || {
            for mut req in server.incoming_requests() {
                let mut body = String::new();
                req.as_reader().read_to_string(&mut body).unwrap();
                let r: ReasonRequest = serde_json::from_str(&body).unwrap();
                let object = r.prompt.trim_start_matches("How many ").split(" are in").next().unwrap();
                let text = format!(r#"{{"text": "{}"}}"#, counts(&r.doc_id, object));
                req.respond(Response::from_string(text)).unwrap();
            }
        });
    }
    url
}

#[test]
fn remote_benchmark_matches_oracle_on_toy3() {
    let db = MultimodalDatabase::from_documents([
        Document::new("d1").unwrap().with_count("person", 2).unwrap().with_count("guitar", 1).unwrap(),
        Document::new("d2").unwrap().with_count("dog", 3).unwrap(),
        Document::new("d3").unwrap().with_count("person", 1).unwrap().with_count("dog", 1).unwrap(),
    ])
    .unwrap();
    let ctx = SettingContext::new(&db);
    let spec = BenchSpec {
        settings: vec![IrSetting::Perfect, IrSetting::Noisy { n_random: 2, seed: 1 }],
        parallelism: 8,
        ..BenchSpec::default()
    };
    let remote = RemoteReasoner::new(RemoteConfig::new(toy3_oracle_stub()));
    let from_remote = run_benchmark(&ctx, &remote, &spec).unwrap();
    let from_oracle = run_benchmark(&ctx, &OracleReasoner, &spec).unwrap();
    assert_eq!(from_remote, from_oracle);
    assert_eq!(from_remote[0].mean.total_error, Some(0.0));
}

