use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use larm::fm_gen::{FmClient, FmClientConfig, GenError, HttpClient, Role};

/// Serves one canned (status, body) per connection and forwards each raw
/// request (headers and body) to the returned channel.
fn mock(responses: Vec<(u16, String)>) -> (String, mpsc::Receiver<String>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, body) in responses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut head = String::new();
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                head.push_str(&line);
                if line == "\r\n" {
                    break;
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            tx.send(head + &String::from_utf8(buf).unwrap()).unwrap();
            let mut stream = reader.into_inner();
            write!(
                stream,
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (format!("http://{addr}/v1"), rx)
}

fn ok_body(content: &str) -> String {
    serde_json::json!({ "choices": [{ "message": { "role": "assistant", "content": content } }] })
        .to_string()
}

fn config(endpoint: String) -> FmClientConfig {
    FmClientConfig {
        endpoint,
        model: "test-model".into(),
        api_key_env: Some("LARM_TEST_FM_KEY".into()),
        ..FmClientConfig::default()
    }
}

#[test]
fn retries_server_errors_then_reads_first_choice() {
    std::env::set_var("LARM_TEST_FM_KEY", "secret-token");
    let (endpoint, rx) = mock(vec![
        (500, "{}".into()),
        (200, ok_body("NO CHANGES NEEDED")),
    ]);
    let client = HttpClient::new(&config(endpoint))
        .unwrap()
        .with_backoff(Duration::from_millis(1));
    let c = client.complete(Role::Critic, "hello").unwrap();
    assert_eq!(c.reply, "NO CHANGES NEEDED");

    let first = rx.recv().unwrap();
    let second = rx.recv().unwrap();
    assert_eq!(first, second);
    assert!(second.starts_with("POST /v1/chat/completions "));
    assert!(second.to_ascii_lowercase().contains("authorization: bearer secret-token"));
    let body: serde_json::Value =
        serde_json::from_str(second.split("\r\n\r\n").nth(1).unwrap()).unwrap();
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["temperature"], 0.2);
    assert_eq!(body["messages"][0]["content"], "hello");
}

#[test]
fn gives_up_after_max_retries() {
    let (endpoint, rx) = mock(vec![(503, "{}".into()); 3]);
    let cfg = FmClientConfig {
        api_key_env: None,
        ..config(endpoint)
    };
    let client = HttpClient::new(&cfg).unwrap().with_backoff(Duration::from_millis(1));
    let err = client.complete(Role::Generator, "x").unwrap_err();
    assert!(matches!(err, GenError::Transport(ref m) if m.contains("3 attempts")), "{err}");
    assert_eq!(rx.try_iter().count(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let (endpoint, rx) = mock(vec![(400, "{}".into()), (200, ok_body("late"))]);
    let cfg = FmClientConfig {
        api_key_env: None,
        ..config(endpoint)
    };
    let client = HttpClient::new(&cfg).unwrap().with_backoff(Duration::from_millis(1));
    assert!(client.complete(Role::Generator, "x").is_err());
    assert_eq!(rx.try_iter().count(), 1);
}

#[test]
fn missing_key_variable_is_a_config_error() {
    let cfg = FmClientConfig {
        api_key_env: Some("LARM_TEST_UNSET_VARIABLE".into()),
        ..FmClientConfig::default()
    };
    assert!(matches!(HttpClient::new(&cfg), Err(GenError::Config(_))));
}
