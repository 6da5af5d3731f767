mod common;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use flowsmc::gateway::{
    completion_body, record_replay, CassetteMode, ChatRequest, Gateway, GatewayConfig, GatewayError, HttpTransport,
    RecordingSleeper, RetryPolicy,
};
use serde_json::Value;

struct Seen {
    path: String,
    auth: Option<String>,
    body: Value,
}

/// Serves `statuses` in order, one connection each, recording requests.
fn serve(statuses: Vec<u16>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for status in statuses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let (mut len, mut auth) = (0usize, None);
            loop {
                let mut h = String::new();
                reader.read_line(&mut h).unwrap();
                let h = h.trim_end();
                if h.is_empty() {
                    break;
                }
                let (k, v) = h.split_once(':').unwrap();
                match k.to_ascii_lowercase().as_str() {
                    "content-length" => len = v.trim().parse().unwrap(),
                    "authorization" => auth = Some(v.trim().to_string()),
                    _ => {}
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            log.lock().unwrap().push(Seen {
                path: request_line.split_whitespace().nth(1).unwrap().to_string(),
                auth,
                body: serde_json::from_slice(&body).unwrap(),
            });
            let payload = if status == 200 { completion_body(&["hello"], 7, 3) } else { "busy".to_string() };
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{payload}",
                payload.len()
            )
            .unwrap();
        }
    });
    (url, seen)
}

fn gateway(url: &str) -> (Gateway, Arc<RecordingSleeper>) {
    let transport = Arc::new(HttpTransport::new(url, Some("sk-test".into())).unwrap());
    let mut cfg = GatewayConfig::new("test-model");
    cfg.retry = RetryPolicy { max_attempts: 3, ..RetryPolicy::default() };
    let sleeper = Arc::new(RecordingSleeper::default());
    (Gateway::new(transport, cfg).with_sleeper(sleeper.clone()), sleeper)
}

#[test]
fn wire_format_and_retry_over_http() {
    let (url, seen) = serve(vec![503, 200]);
    let (gw, sleeper) = gateway(&url);
    let req = ChatRequest::new(vec!["hi".into()], 0.7, 1).role("solver").instructions("be brief");
    assert_eq!(gw.call_llm(&req).unwrap(), vec!["hello".to_string()]);
    assert_eq!(sleeper.delays().len(), 1);
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 2);
    let last = &seen[1];
    assert_eq!(last.path, "/v1/chat/completions");
    assert_eq!(last.auth.as_deref(), Some("Bearer sk-test"));
    assert_eq!(last.body["model"], "test-model");
    assert_eq!(last.body["n"], 1);
    assert_eq!(last.body["temperature"], 0.7);
    assert_eq!(last.body["messages"][0]["role"], "system");
    assert_eq!(last.body["messages"][0]["content"], "You are a solver.\n\nbe brief");
    assert_eq!(last.body["messages"][1]["role"], "user");
    let usage = gw.usage_summary();
    assert_eq!((usage.requests, usage.input_tokens, usage.output_tokens), (1, 7, 3));
}

#[test]
fn exhausted_retries_surface_an_error() {
    let (url, _) = serve(vec![500, 500, 500]);
    let (gw, sleeper) = gateway(&url);
    let err = gw.call_llm(&ChatRequest::new(vec!["hi".into()], 0.0, 1)).unwrap_err();
    assert!(matches!(err, GatewayError::Exhausted { attempts: 3, .. }), "{err}");
    assert_eq!(sleeper.delays().len(), 2);
    assert_eq!(gw.usage_summary().requests, 0);
}

#[test]
fn replay_miss_names_the_digest() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    let rec = record_replay(CassetteMode::Record, &path, Some(Arc::new(common::stub_llm(2)))).unwrap();
    let gw = Gateway::new(rec, GatewayConfig::new("m"));
    gw.call_llm(&ChatRequest::new(vec!["Complete this workflow, starting from `# Step 1:`".into()], 0.0, 1)).unwrap();

    let replay = record_replay(CassetteMode::Replay, &path, None).unwrap();
    let gw = Gateway::new(replay, GatewayConfig::new("m"));
    let hit = gw.call_llm(&ChatRequest::new(vec!["Complete this workflow, starting from `# Step 1:`".into()], 0.0, 1));
    assert!(hit.unwrap()[0].starts_with("# Step 1:"));
    let miss = gw.call_llm(&ChatRequest::new(vec!["something new".into()], 0.0, 1)).unwrap_err();
    assert!(matches!(miss, GatewayError::CassetteMiss(ref d) if d.len() == 64), "{miss}");
}
