use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};

use serde_json::{json, Value};
use skillmux::http::{embed_pool_concurrent, ChatClient, EmbeddingClient, HttpSettings, RerankClient};
use skillmux_core::dense::{embed_batch_with_retry, EmbedOptions, EmbeddingProvider, HashingEmbedder, TextKind};
use skillmux_core::rerank::{rerank_judge, rerank_scored, RerankProvider};
use skillmux_core::{FieldCaps, InputFormat, Ranking, ScoredHit, Skill, SkillPool, Tier};

#[derive(Debug, Clone)]
struct Seen {
    body: Value,
    auth: Option<String>,
}

type Handler = dyn Fn(usize, &Value) -> (u16, String) + Send + Sync;

/// One-request-per-connection HTTP stub. The handler gets the request
/// index and the parsed JSON body.
struct Mock {
    url: String,
    seen: Arc<Mutex<Vec<Seen>>>,
}

impl Mock {
    fn start(handler: impl Fn(usize, &Value) -> (u16, String) + Send + Sync + 'static) -> Mock {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1", listener.local_addr().unwrap());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&seen);
        let handler: Arc<Handler> = Arc::new(handler);
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { break };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let (mut len, mut auth) = (0usize, None);
                let mut line = String::new();
                loop {
                    line.clear();
                    if reader.read_line(&mut line).unwrap_or(0) == 0 {
                        break;
                    }
                    let l = line.trim_end();
                    if l.is_empty() {
                        break;
                    }
                    if let Some((k, v)) = l.split_once(':') {
                        match k.to_ascii_lowercase().as_str() {
                            "content-length" => len = v.trim().parse().unwrap(),
                            "authorization" => auth = Some(v.trim().to_string()),
                            _ => {}
                        }
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                let body: Value = serde_json::from_slice(&buf).unwrap_or(Value::Null);
                let n = {
                    let mut s = log.lock().unwrap();
                    s.push(Seen {
                        body: body.clone(),
                        auth,
                    });
                    s.len() - 1
                };
                let (status, payload) = handler(n, &body);
                let resp = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{payload}",
                    payload.len()
                );
                let _ = stream.write_all(resp.as_bytes());
            }
        });
        Mock { url, seen }
    }

    fn requests(&self) -> Vec<Seen> {
        self.seen.lock().unwrap().clone()
    }
}

fn settings(url: &str, retries: usize) -> HttpSettings {
    let mut s = HttpSettings::new(url);
    s.max_retries = retries;
    s.model = Some("m1".into());
    s
}

fn hashed(body: &Value) -> String {
    let e = HashingEmbedder::new(8);
    let vectors: Vec<Vec<f32>> = body["texts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|t| e.embed_text(t.as_str().unwrap()))
        .collect();
    json!({ "vectors": vectors }).to_string()
}

fn pool(n: usize) -> SkillPool {
    let skills = (0..n)
        .map(|i| {
            Skill::new(
                format!("s{i}"),
                format!("skill {i}"),
                format!("does thing {i}"),
                format!("body {i} text"),
                "c",
            )
        })
        .collect();
    SkillPool::new(skills, Tier::Custom).unwrap()
}

#[test]
fn embedding_batches_keep_pool_order() {
    let mock = Mock::start(|_, b| (200, hashed(b)));
    let client = EmbeddingClient::new(settings(&mock.url, 0), Some(8)).unwrap();
    let p = pool(10);
    let options = EmbedOptions {
        batch_size: 3,
        ..EmbedOptions::default()
    };
    let index = embed_pool_concurrent(&p, &client, &FieldCaps::ENCODER, InputFormat::Full, &options, 3).unwrap();
    let reqs = mock.requests();
    assert_eq!(reqs.len(), 4);
    let mut sizes: Vec<usize> = reqs.iter().map(|r| r.body["texts"].as_array().unwrap().len()).collect();
    sizes.sort_unstable();
    assert_eq!(sizes, [1, 3, 3, 3]);
    assert!(reqs
        .iter()
        .all(|r| r.body["kind"] == "document" && r.body["model"] == "m1"));
    let e = HashingEmbedder::new(8);
    let texts = skillmux_core::dense::pool_texts(&p, &FieldCaps::ENCODER, InputFormat::Full);
    for (i, t) in texts.iter().enumerate() {
        assert_eq!(index.row(i), e.embed_text(t).as_slice());
        assert_eq!(index.ids()[i], format!("s{i}"));
    }
}

#[test]
fn embedding_failures_are_retried_per_batch() {
    let mock = Mock::start(|n, b| if n < 2 { (503, "{}".into()) } else { (200, hashed(b)) });
    let client = EmbeddingClient::new(settings(&mock.url, 5), Some(8)).unwrap();
    let texts = vec!["a".to_string(), "b".to_string()];
    let v = embed_batch_with_retry(&client, &texts, TextKind::Query, 2).unwrap();
    assert_eq!(v.len(), 2);
    // transport retries are disabled for embeddings, so each attempt is one request
    assert_eq!(mock.requests().len(), 3);
    assert_eq!(mock.requests()[2].body["kind"], "query");

    let failing = Mock::start(|_, _| (500, "boom".into()));
    let client = EmbeddingClient::new(settings(&failing.url, 0), Some(8)).unwrap();
    let err = embed_batch_with_retry(&client, &texts, TextKind::Query, 1).unwrap_err();
    assert!(err.to_string().contains("500"), "{err}");
    assert_eq!(failing.requests().len(), 2);
}

#[test]
fn embedding_dimension_is_probed_lazily() {
    let mock = Mock::start(|_, b| (200, hashed(b)));
    let client = EmbeddingClient::new(settings(&mock.url, 0), None).unwrap();
    assert!(mock.requests().is_empty());
    assert_eq!(client.dimension(), 8);
    assert_eq!(client.dimension(), 8);
    assert_eq!(mock.requests().len(), 1);
}

#[test]
fn embedding_count_mismatch_is_an_error() {
    let mock = Mock::start(|_, _| (200, json!({"vectors": [[1.0, 0.0]]}).to_string()));
    let client = EmbeddingClient::new(settings(&mock.url, 0), Some(2)).unwrap();
    assert!(client.embed(&["a".into(), "b".into()], TextKind::Document).is_err());
}

#[test]
fn rerank_request_shape_and_scores() {
    let mock = Mock::start(|_, b| {
        let n = b["documents"].as_array().unwrap().len();
        (
            200,
            json!({ "scores": (0..n).map(|i| i as f64).collect::<Vec<_>>() }).to_string(),
        )
    });
    let caps = FieldCaps::new(5, 4, 3).unwrap();
    let mut s = settings(&mock.url, 0);
    s.api_key = Some("secret".into());
    let client = RerankClient::new(s, caps, InputFormat::Full).unwrap();
    let p = pool(3);
    let candidates = Ranking::new(vec![
        ScoredHit::new("s0", 3.0),
        ScoredHit::new("s1", 2.0),
        ScoredHit::new("s2", 1.0),
    ]);
    let out = rerank_scored("long query text", &candidates, &p, &client).unwrap();
    assert_eq!(out.ids().collect::<Vec<_>>(), ["s2", "s1", "s0"]);
    let req = &mock.requests()[0];
    assert_eq!(req.auth.as_deref(), Some("Bearer secret"));
    assert_eq!(req.body["query"], "long ");
    assert_eq!(req.body["documents"].as_array().unwrap().len(), 3);
    assert!(req.body["instruction"].as_str().is_some_and(|s| !s.is_empty()));
}

#[test]
fn rerank_retries_server_errors_but_not_client_errors() {
    let mock = Mock::start(|n, _| {
        if n == 0 {
            (502, "{}".into())
        } else {
            (200, json!({"scores": [0.5]}).to_string())
        }
    });
    let client = RerankClient::new(settings(&mock.url, 1), FieldCaps::RERANKER, InputFormat::Full).unwrap();
    let p = pool(1);
    let skills: Vec<&Skill> = p.iter().collect();
    assert_eq!(client.score("q", &skills).unwrap(), [0.5]);
    assert_eq!(mock.requests().len(), 2);

    let bad = Mock::start(|_, _| (400, "nope".into()));
    let client = RerankClient::new(settings(&bad.url, 3), FieldCaps::RERANKER, InputFormat::Full).unwrap();
    let err = client.score("q", &skills).unwrap_err();
    assert!(!err.retryable);
    assert_eq!(bad.requests().len(), 1);

    let short = Mock::start(|_, _| (200, json!({"scores": []}).to_string()));
    let client = RerankClient::new(settings(&short.url, 0), FieldCaps::RERANKER, InputFormat::Full).unwrap();
    assert!(client.score("q", &skills).is_err());
}

#[test]
fn chat_messages_and_judge_round_trip() {
    let mock = Mock::start(|_, _| {
        (
            200,
            json!({"choices": [{"message": {"role": "assistant", "content": "Answer: 2"}}]}).to_string(),
        )
    });
    let chat = ChatClient::new(settings(&mock.url, 0), 0.0).unwrap();
    assert_eq!(chat.complete(Some("sys"), "hello", 0.7).unwrap(), "Answer: 2");
    let req = &mock.requests()[0];
    assert_eq!(
        req.body["messages"],
        json!([{"role": "system", "content": "sys"}, {"role": "user", "content": "hello"}])
    );
    assert_eq!(req.body["temperature"], 0.7);

    let p = pool(3);
    let candidates = Ranking::new(p.iter().map(|s| ScoredHit::new(s.id.clone(), 1.0)).collect());
    let out = rerank_judge("q", &candidates, &p, &chat, &FieldCaps::RERANKER).unwrap();
    assert_eq!(out.ranking.ids().collect::<Vec<_>>(), ["s1", "s0", "s2"]);
    let judge_req = &mock.requests()[1];
    assert_eq!(judge_req.body["temperature"], 0.0);
    let user = judge_req.body["messages"][1]["content"].as_str().unwrap();
    assert!(user.contains("skill 0") && user.contains("skill 2"));
}

#[test]
fn chat_without_content_is_an_error_and_flags_the_judge() {
    let mock = Mock::start(|_, _| (200, json!({"choices": []}).to_string()));
    let chat = ChatClient::new(settings(&mock.url, 0), 0.0).unwrap();
    assert!(chat.complete(None, "hi", 0.0).is_err());
    let p = pool(2);
    let candidates = Ranking::new(p.iter().map(|s| ScoredHit::new(s.id.clone(), 1.0)).collect());
    let out = rerank_judge("q", &candidates, &p, &chat, &FieldCaps::RERANKER).unwrap();
    assert_eq!(out.ranking, candidates);
    assert!(out.flag.is_some());
}

#[test]
fn unreachable_endpoint_is_retryable() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let chat = ChatClient::new(settings(&format!("http://127.0.0.1:{port}/"), 0), 0.0).unwrap();
    let err = chat.complete(None, "hi", 0.0).unwrap_err();
    assert!(err.retryable, "{err}");
}
