use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use pathmil::reasoner::{ChatClient, EndpointConfig, HttpChatClient};
use pathmil::Error;

/// Serves one canned `(status, body)` per connection, recording request bodies.
fn serve(replies: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<String>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    thread::spawn(move || {
        for (status, body) in replies {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(String::from_utf8(buf).unwrap());
            let reason = if status == 200 { "OK" } else { "Error" };
            write!(
                stream,
                "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (url, seen)
}

fn client(url: String) -> HttpChatClient {
    HttpChatClient::new(EndpointConfig {
        url,
        api_key_env: "PATHMIL_TEST_UNSET_KEY".into(),
        max_retries: 2,
        backoff_ms: 1,
        timeout_secs: 5,
        ..Default::default()
    })
}

const OK: &str = r#"{"choices":[{"message":{"role":"assistant","content":"Los Angeles Lakers"}}],"usage":{"prompt_tokens":42,"completion_tokens":3}}"#;

#[test]
fn retries_server_errors_then_succeeds() {
    let (url, seen) = serve(vec![(500, "{}".into()), (200, OK.into())]);
    let reply = client(url).complete("sys", "Which team?").unwrap();
    assert_eq!(reply.content, "Los Angeles Lakers");
    assert_eq!((reply.usage.calls, reply.usage.input_tokens, reply.usage.output_tokens), (1, 42, 3));
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 2);
    let body: serde_json::Value = serde_json::from_str(&seen[1]).unwrap();
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][1]["content"], "Which team?");
}

#[test]
fn missing_usage_falls_back_to_whitespace_counts() {
    let body = r#"{"choices":[{"message":{"content":"a b c"}}]}"#;
    let (url, _) = serve(vec![(200, body.into())]);
    let reply = client(url).complete("one two", "three").unwrap();
    assert_eq!((reply.usage.input_tokens, reply.usage.output_tokens), (3, 3));
}

#[test]
fn client_errors_are_not_retried() {
    let (url, seen) = serve(vec![(400, r#"{"error":"bad"}"#.into()), (200, OK.into())]);
    let err = client(url).complete("s", "u").unwrap_err();
    assert!(matches!(err, Error::Endpoint(_)), "{err}");
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn gives_up_after_retry_budget() {
    let (url, seen) = serve(vec![(503, "{}".into()), (502, "{}".into()), (500, "{}".into())]);
    let err = client(url).complete("s", "u").unwrap_err();
    assert!(err.to_string().contains("3 attempts"), "{err}");
    assert_eq!(seen.lock().unwrap().len(), 3);
}
