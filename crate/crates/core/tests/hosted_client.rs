//! The chat-completions client against a scripted local HTTP server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use vln_core::episode::ImagePayload;
use vln_core::model::{
    decode_data_uri, ChatCompletionsClient, HostedConfig, ModelClient, ModelError, ModelRequest, RetryPolicy,
};

const KEY: &str = "sk-test-9f8e7d6c5b4a";

#[derive(Clone)]
enum Reply {
    Status(u16, &'static str),
    Ok(&'static str),
    /// Accept the request and never answer.
    Hang,
}

struct Seen {
    headers: Vec<String>,
    body: String,
}

/// Serves one scripted reply per connection; returns the URL and the captured requests.
fn serve(replies: Vec<Reply>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for reply in replies {
            let Ok((stream, _)) = listener.accept() else { return };
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut headers = Vec::new();
            let mut length = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap_or(0);
                }
                headers.push(line.trim_end().to_string());
            }
            let mut body = vec![0u8; length];
            let _ = reader.read_exact(&mut body);
            log.lock().unwrap().push(Seen { headers, body: String::from_utf8_lossy(&body).into_owned() });
            let mut stream = stream;
            let (status, text) = match reply {
                Reply::Hang => {
                    thread::sleep(Duration::from_secs(3));
                    continue;
                }
                Reply::Status(code, text) => (code, text.to_string()),
                Reply::Ok(content) => (
                    200,
                    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string(),
                ),
            };
            let _ = write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                text.len()
            );
        }
    });
    (url, seen)
}

fn fast_retry(attempts: u32) -> RetryPolicy {
    RetryPolicy {
        max_attempts: attempts,
        base_backoff: Duration::from_millis(5),
        request_timeout: Duration::from_millis(500),
    }
}

fn client(url: &str, attempts: u32) -> ChatCompletionsClient {
    ChatCompletionsClient::new(HostedConfig::new(url, "test-model", KEY).with_retry(fast_retry(attempts))).unwrap()
}

fn request() -> ModelRequest {
    ModelRequest::new("system", "which way?").unwrap()
}

#[test]
fn retries_server_errors_then_succeeds() {
    let (url, seen) = serve(vec![
        Reply::Status(503, "busy"),
        Reply::Status(429, "slow down"),
        Reply::Ok("FORWARD"),
    ]);
    let reply = client(&url, 3).complete(&request()).unwrap();
    assert_eq!(reply.text, "FORWARD");
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn exhausts_after_max_attempts() {
    let (url, seen) = serve(vec![Reply::Status(500, "a"), Reply::Status(502, "b"), Reply::Status(503, "c")]);
    let err = client(&url, 3).complete(&request()).unwrap_err();
    assert!(matches!(err, ModelError::Exhausted { attempts: 3, last_status: Some(503), .. }), "{err:?}");
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn auth_failure_is_not_retried() {
    let (url, seen) = serve(vec![Reply::Status(401, "bad key"), Reply::Ok("unused")]);
    let err = client(&url, 3).complete(&request()).unwrap_err();
    assert_eq!(err, ModelError::Auth { status: 401 });
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn other_client_errors_are_not_retried() {
    let (url, seen) = serve(vec![Reply::Status(400, "bad body"), Reply::Ok("unused")]);
    let err = client(&url, 3).complete(&request()).unwrap_err();
    assert!(matches!(err, ModelError::Rejected { status: 400, .. }), "{err:?}");
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn hanging_server_respects_latency_bound() {
    let (url, _) = serve(vec![Reply::Hang, Reply::Hang]);
    let policy = fast_retry(2);
    let started = Instant::now();
    let err = client(&url, 2).complete(&request()).unwrap_err();
    assert!(matches!(err, ModelError::Exhausted { attempts: 2, last_status: None, .. }), "{err:?}");
    assert!(started.elapsed() <= policy.latency_bound() + Duration::from_millis(500));
}

#[test]
fn request_carries_bearer_and_image() {
    let (url, seen) = serve(vec![Reply::Ok("STOP")]);
    let image = ImagePayload { media_type: "image/jpeg".into(), bytes: vec![1, 2, 3, 250] };
    let req = request().with_image(Some(image.clone()));
    client(&url, 1).complete(&req).unwrap();
    let seen = seen.lock().unwrap();
    assert!(seen[0].headers.iter().any(|h| h == &format!("Authorization: Bearer {KEY}")
        || h == &format!("authorization: Bearer {KEY}")));
    let body: serde_json::Value = serde_json::from_str(&seen[0].body).unwrap();
    assert_eq!(body["model"], "test-model");
    let uri = body["messages"][1]["content"][1]["image_url"]["url"].as_str().unwrap();
    assert_eq!(decode_data_uri(uri).unwrap(), image);
}

#[test]
fn oversized_image_fails_before_sending() {
    let (url, seen) = serve(vec![Reply::Ok("unused")]);
    let mut config = HostedConfig::new(&url, "m", KEY).with_retry(fast_retry(1));
    config.max_image_bytes = 3;
    let c = ChatCompletionsClient::new(config).unwrap();
    let req = request().with_image(Some(ImagePayload { media_type: "image/png".into(), bytes: vec![0; 4] }));
    assert!(matches!(c.complete(&req), Err(ModelError::OversizedImage { size: 4, limit: 3 })));
    thread::sleep(Duration::from_millis(50));
    assert!(seen.lock().unwrap().is_empty());
}

#[test]
fn credential_never_appears_in_debug_or_errors() {
    let (url, _) = serve(vec![Reply::Status(401, "nope"), Reply::Status(500, "x")]);
    let c = client(&url, 1);
    assert!(!format!("{c:?}").contains(KEY));
    assert!(!format!("{:?}", c.config()).contains(KEY));
    let e1 = c.complete(&request()).unwrap_err();
    let e2 = c.complete(&request()).unwrap_err();
    for e in [e1, e2] {
        assert!(!e.to_string().contains(KEY));
        assert!(!format!("{e:?}").contains(KEY));
    }
}

#[test]
fn invalid_credentials_rejected_up_front() {
    for key in ["", "   ", "has space", "line\nbreak"] {
        let err = ChatCompletionsClient::new(HostedConfig::new("http://127.0.0.1:9", "m", key)).unwrap_err();
        assert_eq!(err, ModelError::InvalidCredential);
    }
}
