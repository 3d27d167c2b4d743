mod common;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use common::*;
use promptrank::harness::{run_eval, RunConfig, EXIT_OK};
use promptrank::scoring::wire::{BatchRequest, BatchResponse, HealthStatus, ScoreRequest, TokenScores};
use promptrank::scoring::{HttpBackend, NgramModel, ScoreError, ScoringBackend};
use serde_json::json;

#[derive(Clone, Copy, PartialEq)]
enum Mode {
    Healthy,
    /// every request answers 500
    Broken,
    /// batch responses drop their last result
    ShortBatch,
}

struct MockServer {
    url: String,
    batch_calls: Arc<AtomicUsize>,
}

fn respond(stream: &mut TcpStream, status: &str, body: &str) {
    let head = format!(
        "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n",
        body.len()
    );
    stream.write_all(head.as_bytes()).unwrap();
    stream.write_all(body.as_bytes()).unwrap();
    stream.flush().unwrap();
}

fn serve_connection(stream: TcpStream, model: &NgramModel, mode: Mode, batch_calls: &AtomicUsize) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut stream = stream;
    loop {
        let mut request_line = String::new();
        if reader.read_line(&mut request_line).unwrap_or(0) == 0 {
            return;
        }
        let mut content_length = 0;
        loop {
            let mut header = String::new();
            reader.read_line(&mut header).unwrap();
            let header = header.trim_end();
            if header.is_empty() {
                break;
            }
            if let Some((name, value)) = header.split_once(':') {
                if name.eq_ignore_ascii_case("content-length") {
                    content_length = value.trim().parse().unwrap();
                }
            }
        }
        let mut body = vec![0; content_length];
        reader.read_exact(&mut body).unwrap();
        let mut parts = request_line.split_whitespace();
        let (method, path) = (parts.next().unwrap_or(""), parts.next().unwrap_or(""));

        if mode == Mode::Broken {
            respond(&mut stream, "500 Internal Server Error", r#"{"error":"model crashed"}"#);
            continue;
        }
        match (method, path) {
            ("GET", "/health") => {
                let health = HealthStatus {
                    status: "ok".into(),
                    model: "ngram-mock".into(),
                };
                respond(&mut stream, "200 OK", &serde_json::to_string(&health).unwrap());
            }
            ("POST", "/v1/score") => {
                let req: ScoreRequest = serde_json::from_slice(&body).unwrap();
                match model.score(&req.context, &req.continuation) {
                    Ok(scores) => respond(&mut stream, "200 OK", &serde_json::to_string(&scores).unwrap()),
                    Err(_) => respond(&mut stream, "400 Bad Request", r#"{"error":"empty continuation"}"#),
                }
            }
            ("POST", "/v1/score_batch") => {
                batch_calls.fetch_add(1, Ordering::SeqCst);
                let req: BatchRequest = serde_json::from_slice(&body).unwrap();
                let mut results: Vec<TokenScores> = req
                    .items
                    .iter()
                    .map(|r| model.score(&r.context, &r.continuation).unwrap())
                    .collect();
                if mode == Mode::ShortBatch {
                    results.pop();
                }
                respond(&mut stream, "200 OK", &serde_json::to_string(&BatchResponse { results }).unwrap());
            }
            _ => respond(&mut stream, "404 Not Found", r#"{"error":"no route"}"#),
        }
    }
}

fn start(mode: Mode) -> MockServer {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let batch_calls = Arc::new(AtomicUsize::new(0));
    let counter = batch_calls.clone();
    thread::spawn(move || {
        let model = Arc::new(NgramModel::seed());
        for stream in listener.incoming() {
            let Ok(stream) = stream else { continue };
            let model = model.clone();
            let counter = counter.clone();
            thread::spawn(move || serve_connection(stream, &model, mode, &counter));
        }
    });
    MockServer { url, batch_calls }
}

fn request(context: &str, continuation: &str) -> ScoreRequest {
    ScoreRequest {
        context: context.into(),
        continuation: continuation.into(),
    }
}

#[test]
fn health_reports_model() {
    let server = start(Mode::Healthy);
    let backend = HttpBackend::new(&server.url, 5000, 4).unwrap();
    let health = backend.health().unwrap();
    assert_eq!(health.status, "ok");
    assert_eq!(health.model, "ngram-mock");
}

#[test]
fn single_score_matches_local_model() {
    let server = start(Mode::Healthy);
    let backend = HttpBackend::new(&format!("{}/", server.url), 5000, 4).unwrap();
    let remote = backend.score("The weather is ", "sunny").unwrap();
    let local = NgramModel::seed().score("The weather is ", "sunny").unwrap();
    assert_eq!(remote, local);
    assert_eq!(remote.tokens.len(), 5);
}

#[test]
fn batch_preserves_order_and_chunks() {
    let server = start(Mode::Healthy);
    let backend = HttpBackend::new(&server.url, 5000, 2).unwrap();
    let items = vec![
        request("A ", "yes"),
        request("B ", "no"),
        request("C ", "maybe"),
        request("D ", "z"),
        request("E ", "longer answer"),
    ];
    let batch = backend.score_batch(&items).unwrap();
    let singles: Vec<TokenScores> = items
        .iter()
        .map(|r| backend.score(&r.context, &r.continuation).unwrap())
        .collect();
    assert_eq!(batch, singles);
    assert_eq!(server.batch_calls.load(Ordering::SeqCst), 3);
}

#[test]
fn non_200_maps_to_backend_unavailable() {
    let server = start(Mode::Broken);
    let backend = HttpBackend::new(&server.url, 5000, 4).unwrap();
    assert!(matches!(backend.score("x ", "y"), Err(ScoreError::BackendUnavailable(_))));
    assert!(matches!(backend.score_batch(&[request("x ", "y")]), Err(ScoreError::BackendUnavailable(_))));
    assert!(matches!(backend.health(), Err(ScoreError::BackendUnavailable(_))));
}

#[test]
fn short_batch_is_rejected() {
    let server = start(Mode::ShortBatch);
    let backend = HttpBackend::new(&server.url, 5000, 8).unwrap();
    let err = backend.score_batch(&[request("a ", "b"), request("a ", "c")]).unwrap_err();
    assert_eq!(err, ScoreError::BatchMismatch { expected: 2, got: 1 });
}

#[test]
fn empty_continuation_is_rejected_before_sending() {
    let backend = HttpBackend::new("http://127.0.0.1:1", 1000, 4).unwrap();
    assert_eq!(backend.score("x", ""), Err(ScoreError::EmptyContinuation));
}

#[test]
fn http_run_reproduces_toy_run_metrics() {
    let server = start(Mode::Healthy);
    let dir = tempfile::tempdir().unwrap();
    let tasks = write_inputs(dir.path());
    let local = run_eval(&RunConfig::load(&write_config(dir.path(), "local.json", &tasks, json!({}))).unwrap()).unwrap();
    let remote_config = write_config(
        dir.path(),
        "remote.json",
        &tasks,
        json!({"backend": {"kind": "http", "base_url": server.url, "batch_size": 3}, "parallelism": 4}),
    );
    let remote = run_eval(&RunConfig::load(&remote_config).unwrap()).unwrap();
    assert_eq!(remote.exit_code(), EXIT_OK);
    assert_ne!(remote.run_dir.path, local.run_dir.path);
    assert_eq!(
        std::fs::read(remote.run_dir.metrics_file()).unwrap(),
        std::fs::read(local.run_dir.metrics_file()).unwrap()
    );
}
