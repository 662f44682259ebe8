//! OpenAI-compatible `/chat/completions` client (whole-message, no streaming).

use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use tracing::trace;

use super::{Backend, BackendError, ChatRequest, Completion, Message, Usage};

pub struct HttpBackend {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    client: Client,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [Message],
    temperature: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    top_p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    top_k: Option<u32>,
    stream: bool,
}

#[derive(Deserialize)]
struct WireResponse {
    #[serde(default)]
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    prompt_tokens: Option<u64>,
    completion_tokens: Option<u64>,
    total_tokens: Option<u64>,
}

impl HttpBackend {
    /// `endpoint` is the API base, e.g. `https://api.example.com/v1`.
    pub fn new(
        endpoint: impl Into<String>,
        model: impl Into<String>,
        api_key: Option<String>,
        timeout: Duration,
    ) -> Result<HttpBackend, BackendError> {
        let client = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(HttpBackend {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            model: model.into(),
            api_key,
            client,
        })
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.endpoint)
    }
}

fn map_status(status: StatusCode, body: String) -> BackendError {
    match status.as_u16() {
        401 | 403 => BackendError::Auth(body),
        408 => BackendError::Timeout { attempts: 1 },
        429 => BackendError::RateLimited { attempts: 1 },
        s if s >= 500 => BackendError::Server { status: s, attempts: 1 },
        s => BackendError::Protocol(format!("HTTP {s}: {body}")),
    }
}

impl Backend for HttpBackend {
    fn model(&self) -> &str {
        &self.model
    }

    fn complete(&self, request: &ChatRequest) -> Result<Completion, BackendError> {
        let model = if request.model.is_empty() { &self.model } else { &request.model };
        let body = WireRequest {
            model,
            messages: &request.messages,
            temperature: request.temperature,
            max_tokens: request.max_tokens,
            seed: request.seed,
            top_p: request.top_p,
            top_k: request.top_k,
            stream: false,
        };
        let mut call = self.client.post(self.url()).json(&body);
        if let Some(key) = &self.api_key {
            call = call.bearer_auth(key);
        }
        let resp = call.send().map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout { attempts: 1 }
            } else {
                BackendError::Transport(e.to_string())
            }
        })?;
        let status = resp.status();
        let text = resp.text().map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout { attempts: 1 }
            } else {
                BackendError::Transport(e.to_string())
            }
        })?;
        trace!(%status, len = text.len(), "chat completion response");
        if !status.is_success() {
            return Err(map_status(status, text));
        }
        let wire: WireResponse =
            serde_json::from_str(&text).map_err(|e| BackendError::Protocol(e.to_string()))?;
        let content = wire
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendError::Protocol("response has no message content".into()))?;
        let usage = wire
            .usage
            .map(|u| Usage {
                prompt_tokens: u.prompt_tokens,
                completion_tokens: u.completion_tokens,
                total_tokens: u.total_tokens,
            })
            .unwrap_or_default();
        Ok(Completion { text: content, usage, attempts: 1 })
    }
}

#[cfg(test)]
mod tests {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::mpsc;
    use std::thread;

    use super::*;
    use crate::backend::{BackendPolicy, Governed, RetryPolicy};

    /// Serves the given (status, body) responses in order, one per connection,
    /// and forwards each request body to the returned channel.
    fn serve(responses: Vec<(u16, String)>) -> (String, mpsc::Receiver<(String, String)>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for (status, body) in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                let mut auth = String::new();
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    let l = line.trim_end();
                    if l.is_empty() {
                        break;
                    }
                    let lower = l.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    if lower.starts_with("authorization:") {
                        auth = l["authorization:".len()..].trim().to_string();
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                tx.send((String::from_utf8(buf).unwrap(), auth)).unwrap();
                let reply = format!(
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                );
                stream.write_all(reply.as_bytes()).unwrap();
            }
        });
        (format!("http://{addr}/v1"), rx)
    }

    fn ok_body(text: &str) -> String {
        serde_json::json!({
            "choices": [{"message": {"role": "assistant", "content": text}}],
            "usage": {"prompt_tokens": 5, "completion_tokens": 7, "total_tokens": 12}
        })
        .to_string()
    }

    #[test]
    fn sends_openai_shape_and_parses_reply() {
        let (url, rx) = serve(vec![(200, ok_body("Answer: B"))]);
        let b = HttpBackend::new(url, "served-model", Some("sk-test".into()), Duration::from_secs(5)).unwrap();
        let req = ChatRequest::new("", vec![Message::user("q")], 0.0).deterministic().with_seed(4);
        let c = b.complete(&req).unwrap();
        assert_eq!(c.text, "Answer: B");
        assert_eq!(c.usage.total_tokens, Some(12));
        let (sent, auth) = rx.recv().unwrap();
        let v: serde_json::Value = serde_json::from_str(&sent).unwrap();
        assert_eq!(v["model"], "served-model");
        assert_eq!(v["messages"][0]["role"], "user");
        assert_eq!(v["temperature"], 0.0);
        assert_eq!(v["top_p"], 0.1);
        assert_eq!(v["seed"], 4);
        assert_eq!(v["stream"], false);
        assert_eq!(auth, "Bearer sk-test");
    }

    #[test]
    fn retries_429_and_5xx_through_governor() {
        let (url, _rx) = serve(vec![
            (429, "{}".into()),
            (502, "bad gateway".into()),
            (200, ok_body("fine")),
        ]);
        let b = HttpBackend::new(url, "m", None, Duration::from_secs(5)).unwrap();
        let policy = BackendPolicy {
            retry: RetryPolicy { max_attempts: 3, backoff_base_ms: 1, jitter: 0.0 },
            ..BackendPolicy::default()
        };
        let g = Governed::new(b, policy);
        let c = g.complete(&ChatRequest::new("m", vec![Message::user("q")], 0.6)).unwrap();
        assert_eq!(c.text, "fine");
        assert_eq!(c.attempts, 3);
    }

    #[test]
    fn status_mapping() {
        let (url, _rx) = serve(vec![(401, "nope".into()), (200, "{\"choices\":[]}".into())]);
        let b = HttpBackend::new(url, "m", None, Duration::from_secs(5)).unwrap();
        let r = ChatRequest::new("m", vec![Message::user("q")], 0.6);
        assert!(matches!(b.complete(&r), Err(BackendError::Auth(_))));
        assert!(matches!(b.complete(&r), Err(BackendError::Protocol(_))));
    }

    #[test]
    fn times_out() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        thread::spawn(move || {
            let (_s, _) = listener.accept().unwrap();
            thread::sleep(Duration::from_millis(800));
        });
        let b = HttpBackend::new(format!("http://{addr}"), "m", None, Duration::from_millis(100)).unwrap();
        let r = ChatRequest::new("m", vec![Message::user("q")], 0.6);
        assert!(matches!(b.complete(&r), Err(BackendError::Timeout { .. })));
    }
}
