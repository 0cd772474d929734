//! JSON-over-HTTP providers.
//!
//! One base URL serves three routes, all `POST` with JSON bodies:
//!
//! | route     | request                                  | response                                  |
//! |-----------|------------------------------------------|-------------------------------------------|
//! | `/embed`  | `{"text": str}`                          | `{"embedding": [f64]}`                    |
//! | `/induce` | `{"prompt": str, "report_count": int}`   | `{"text": str}`                           |
//! | `/guard`  | `{"scenario": str, "prompt": str\|null}` | `{"label": str, "rationale": str?}`       |
//!
//! A `null` prompt asks for the model's plain decision without memory.

use std::time::Duration;

use serde_json::{json, Value};

use crate::error::ProviderError;
use crate::guardrail::{GuardModel, GuardQuery, GuardVerdict};
use crate::induction::{InductionRequest, PolicyInducer};
use crate::label::Label;
use crate::retrieval::{Embedder, EmbeddingVector};

pub const ENDPOINT_VAR: &str = "GUARDMEM_HTTP_ENDPOINT";
pub const TOKEN_VAR: &str = "GUARDMEM_HTTP_TOKEN";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpConfig {
    pub endpoint: String,
    pub token: Option<String>,
    pub timeout: Duration,
}

impl HttpConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            token: None,
            timeout: Duration::from_secs(60),
        }
    }

    /// Reads the endpoint and optional bearer token from the environment.
    pub fn from_env() -> Result<Self, ProviderError> {
        let endpoint = std::env::var(ENDPOINT_VAR)
            .ok()
            .filter(|v| !v.trim().is_empty())
            .ok_or_else(|| ProviderError::Config(format!("set {ENDPOINT_VAR} to the provider base URL")))?;
        Ok(Self {
            token: std::env::var(TOKEN_VAR).ok().filter(|v| !v.is_empty()),
            ..Self::new(endpoint)
        })
    }
}

/// Shared client for the three provider roles.
#[derive(Debug, Clone)]
pub struct HttpProvider {
    config: HttpConfig,
    agent: ureq::Agent,
}

impl HttpProvider {
    pub fn new(config: HttpConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        Self { config, agent }
    }

    fn post(&self, provider: &'static str, route: &str, body: &Value) -> Result<Value, ProviderError> {
        let url = format!("{}/{route}", self.config.endpoint);
        let mut request = self.agent.post(&url);
        if let Some(token) = &self.config.token {
            request = request.header("Authorization", &format!("Bearer {token}"));
        }
        let transport = |e: ureq::Error| ProviderError::Transport {
            provider,
            message: format!("{url}: {e}"),
        };
        let mut response = request.send_json(body).map_err(transport)?;
        response.body_mut().read_json::<Value>().map_err(|e| ProviderError::BadResponse {
            provider,
            message: e.to_string(),
        })
    }
}

fn field<'a>(provider: &'static str, value: &'a Value, key: &str) -> Result<&'a Value, ProviderError> {
    value.get(key).ok_or_else(|| ProviderError::BadResponse {
        provider,
        message: format!("missing `{key}`"),
    })
}

impl Embedder for HttpProvider {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        const P: &str = "embedder";
        if text.trim().is_empty() {
            return Err(ProviderError::EmptyText);
        }
        let reply = self.post(P, "embed", &json!({ "text": text }))?;
        let bad = |message: &str| ProviderError::BadResponse {
            provider: P,
            message: message.into(),
        };
        let values = field(P, &reply, "embedding")?
            .as_array()
            .ok_or_else(|| bad("`embedding` is not an array"))?
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| bad("non-numeric embedding entry")))
            .collect::<Result<Vec<f64>, _>>()?;
        EmbeddingVector::normalized(values).ok_or_else(|| bad("embedding is empty or zero"))
    }
}

impl PolicyInducer for HttpProvider {
    fn induce(&self, request: &InductionRequest<'_>) -> Result<String, ProviderError> {
        const P: &str = "inducer";
        let reply = self.post(
            P,
            "induce",
            &json!({ "prompt": request.prompt, "report_count": request.reports.len() }),
        )?;
        field(P, &reply, "text")?
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| ProviderError::BadResponse {
                provider: P,
                message: "`text` is not a string".into(),
            })
    }
}

impl GuardModel for HttpProvider {
    fn decide(&self, query: &GuardQuery<'_>) -> Result<GuardVerdict, ProviderError> {
        const P: &str = "guard model";
        let reply = self.post(
            P,
            "guard",
            &json!({ "scenario": query.case.scenario_text, "prompt": query.prompt }),
        )?;
        let raw = field(P, &reply, "label")?.as_str().unwrap_or_default();
        let label = Label::parse_loose(raw).ok_or_else(|| ProviderError::BadResponse {
            provider: P,
            message: format!("unrecognized label `{raw}`"),
        })?;
        let rationale = reply.get("rationale").and_then(Value::as_str).unwrap_or_default().to_string();
        Ok(GuardVerdict { label, rationale })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::fixtures::case;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::mpsc;
    use std::thread;

    /// Serves one canned response per entry and reports each request line,
    /// authorization header and body.
    fn serve(replies: Vec<(u16, &'static str)>) -> (String, mpsc::Receiver<(String, String, String)>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for (status, body) in replies {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let (mut len, mut auth) = (0usize, String::new());
                loop {
                    let mut h = String::new();
                    reader.read_line(&mut h).unwrap();
                    if h.trim().is_empty() {
                        break;
                    }
                    let lower = h.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    if lower.starts_with("authorization:") {
                        auth = h["authorization:".len()..].trim().to_string();
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                tx.send((line.trim().to_string(), auth, String::from_utf8(buf).unwrap())).unwrap();
                let mut out = stream;
                write!(
                    out,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
        });
        (format!("http://{addr}"), rx)
    }

    #[test]
    fn guard_round_trip_with_token() {
        let (url, rx) = serve(vec![(200, r#"{"label": "inappropriate", "rationale": "r"}"#)]);
        let provider = HttpProvider::new(HttpConfig {
            token: Some("t0k".into()),
            ..HttpConfig::new(url)
        });
        let c = case("c1", "text");
        let v = provider.decide(&GuardQuery { case: &c, prompt: Some("memory") }).unwrap();
        assert_eq!(v.label, Label::Refuse);
        let (line, auth, body) = rx.recv().unwrap();
        assert!(line.starts_with("POST /guard "), "{line}");
        assert_eq!(auth, "Bearer t0k");
        let sent: Value = serde_json::from_str(&body).unwrap();
        assert_eq!(sent["prompt"], "memory");
    }

    #[test]
    fn embed_and_induce() {
        let (url, rx) = serve(vec![(200, r#"{"embedding": [3.0, 4.0]}"#), (200, r#"{"text": "Title: x"}"#)]);
        let provider = HttpProvider::new(HttpConfig::new(url));
        let v = provider.embed("hello").unwrap();
        assert!((v.values()[0] - 0.6).abs() < 1e-12);
        assert_eq!(rx.recv().unwrap().0.split(' ').nth(1), Some("/embed"));
        let raw = provider.induce(&InductionRequest { prompt: "p", reports: &[] }).unwrap();
        assert_eq!(raw, "Title: x");
    }

    #[test]
    fn malformed_and_failed_replies_are_errors() {
        let (url, _rx) = serve(vec![
            (200, r#"{"label": "maybe"}"#),
            (500, r#"{"error": "boom"}"#),
            (200, r#"{"embedding": "no"}"#),
        ]);
        let provider = HttpProvider::new(HttpConfig::new(url));
        let c = case("c1", "text");
        let q = GuardQuery { case: &c, prompt: None };
        assert!(matches!(provider.decide(&q), Err(ProviderError::BadResponse { .. })));
        assert!(matches!(provider.decide(&q), Err(ProviderError::Transport { .. })));
        assert!(matches!(provider.embed("x"), Err(ProviderError::BadResponse { .. })));
    }

    #[test]
    fn unreachable_endpoint_is_a_transport_error() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let provider = HttpProvider::new(HttpConfig::new(format!("http://127.0.0.1:{port}")));
        assert!(matches!(provider.embed("x"), Err(ProviderError::Transport { .. })));
    }
}
