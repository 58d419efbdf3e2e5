//! OpenAI-compatible `/chat/completions` and `/embeddings` backend.

use std::time::Duration;

use serde::Deserialize;
use serde_json::{json, Value};

use super::{Backend, BackendError, ChatRequest, EmbedRequest};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

/// Minimal JSON-over-HTTP POST. An `Err` means no response was received.
pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, bearer: Option<&str>, body: &Value) -> Result<HttpResponse, String>;
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new(timeout: Duration) -> Result<Self, String> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| e.to_string())?;
        Ok(ReqwestTransport { client })
    }
}

impl Transport for ReqwestTransport {
    fn post_json(&self, url: &str, bearer: Option<&str>, body: &Value) -> Result<HttpResponse, String> {
        let mut req = self.client.post(url).json(body);
        if let Some(token) = bearer {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| e.to_string())?;
        Ok(HttpResponse { status, body })
    }
}

pub struct OpenAiBackend<T> {
    transport: T,
    base_url: String,
    api_key: Option<String>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    #[serde(default)]
    index: Option<usize>,
    embedding: Vec<f64>,
}

impl<T: Transport> OpenAiBackend<T> {
    pub fn new(transport: T, base_url: impl Into<String>, api_key: Option<String>) -> Self {
        OpenAiBackend {
            transport,
            base_url: base_url.into().trim_end_matches('/').to_string(),
            api_key,
        }
    }

    fn post(&self, path: &str, body: &Value) -> Result<String, BackendError> {
        let url = format!("{}/{}", self.base_url, path);
        let resp = self
            .transport
            .post_json(&url, self.api_key.as_deref(), body)
            .map_err(BackendError::Transient)?;
        match resp.status {
            200..=299 => Ok(resp.body),
            408 | 409 | 425 | 429 | 500..=599 => Err(BackendError::Transient(format!(
                "HTTP {}: {}",
                resp.status,
                truncate(&resp.body)
            ))),
            status => Err(BackendError::Fatal(format!("HTTP {status}: {}", truncate(&resp.body)))),
        }
    }
}

fn truncate(s: &str) -> &str {
    match s.char_indices().nth(200) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

impl<T: Transport> Backend for OpenAiBackend<T> {
    fn chat(&self, req: &ChatRequest) -> Result<String, BackendError> {
        let body = json!({
            "model": req.model,
            "messages": req.messages,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        });
        let text = self.post("chat/completions", &body)?;
        let parsed: ChatResponse =
            serde_json::from_str(&text).map_err(|e| BackendError::Fatal(format!("bad response body: {e}")))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::Refusal("no choices".into()))?;
        if choice.finish_reason.as_deref() == Some("content_filter") {
            return Err(BackendError::Refusal("content_filter".into()));
        }
        match choice.message.content {
            Some(c) if !c.trim().is_empty() => Ok(c),
            _ => Err(BackendError::Refusal("empty content".into())),
        }
    }

    fn embed(&self, req: &EmbedRequest) -> Result<Vec<Vec<f64>>, BackendError> {
        let inputs: Vec<String> = req.texts.iter().map(|t| req.formatted_input(t)).collect();
        let body = json!({ "model": req.model, "input": inputs });
        let text = self.post("embeddings", &body)?;
        let parsed: EmbeddingResponse =
            serde_json::from_str(&text).map_err(|e| BackendError::Fatal(format!("bad response body: {e}")))?;
        if parsed.data.len() != req.texts.len() {
            return Err(BackendError::Fatal(format!(
                "expected {} embeddings, got {}",
                req.texts.len(),
                parsed.data.len()
            )));
        }
        let mut data = parsed.data;
        if data.iter().all(|d| d.index.is_some()) {
            data.sort_by_key(|d| d.index);
        }
        Ok(data.into_iter().map(|d| d.embedding).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Gateway, ProviderConfig, RetryPolicy};
    use std::collections::VecDeque;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::{Arc, Mutex};

    struct ScriptedTransport {
        replies: Mutex<VecDeque<HttpResponse>>,
        calls: AtomicUsize,
        last_body: Mutex<Option<(String, Option<String>, Value)>>,
    }

    impl ScriptedTransport {
        fn new(replies: Vec<(u16, &str)>) -> Arc<Self> {
            Arc::new(ScriptedTransport {
                replies: Mutex::new(
                    replies
                        .into_iter()
                        .map(|(status, body)| HttpResponse { status, body: body.to_string() })
                        .collect(),
                ),
                calls: AtomicUsize::new(0),
                last_body: Mutex::new(None),
            })
        }
    }

    impl Transport for Arc<ScriptedTransport> {
        fn post_json(&self, url: &str, bearer: Option<&str>, body: &Value) -> Result<HttpResponse, String> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            *self.last_body.lock().unwrap() = Some((url.to_string(), bearer.map(str::to_string), body.clone()));
            self.replies.lock().unwrap().pop_front().ok_or_else(|| "connection refused".to_string())
        }
    }

    const OK_CHAT: &str = r#"{"choices":[{"message":{"role":"assistant","content":"Difficulty: Hard"},"finish_reason":"stop"}]}"#;

    #[test]
    fn retries_through_rate_limiting() {
        let transport = ScriptedTransport::new(vec![(429, "slow down"), (429, "slow down"), (200, OK_CHAT)]);
        let backend = OpenAiBackend::new(transport.clone(), "http://h/v1/", Some("k".into()));
        let config = ProviderConfig {
            retry: RetryPolicy { max_attempts: 3, backoff_ms: vec![5, 10] },
            ..ProviderConfig::default()
        };
        let gw = Gateway::new(Arc::new(backend), &config).unwrap().with_sleeper(|_| {});
        let out = gw
            .chat_complete(&ChatRequest::user("m", "q", 0.0, 8))
            .unwrap();
        assert_eq!(out, "Difficulty: Hard");
        assert_eq!(transport.calls.load(Ordering::SeqCst), 3);
        let (url, bearer, body) = transport.last_body.lock().unwrap().clone().unwrap();
        assert_eq!(url, "http://h/v1/chat/completions");
        assert_eq!(bearer.as_deref(), Some("k"));
        assert_eq!(body["messages"][0]["content"], "q");
    }

    #[test]
    fn client_errors_are_not_retried() {
        let transport = ScriptedTransport::new(vec![(400, "bad"), (200, OK_CHAT)]);
        let backend = OpenAiBackend::new(transport.clone(), "http://h", None);
        let gw = Gateway::new(Arc::new(backend), &ProviderConfig::default()).unwrap();
        assert!(gw.chat_complete(&ChatRequest::user("m", "q", 0.0, 8)).is_err());
        assert_eq!(transport.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn content_filter_is_a_refusal() {
        let body = r#"{"choices":[{"message":{"content":""},"finish_reason":"content_filter"}]}"#;
        let backend = OpenAiBackend::new(ScriptedTransport::new(vec![(200, body)]), "http://h", None);
        assert!(matches!(
            backend.chat(&ChatRequest::user("m", "q", 0.0, 8)),
            Err(BackendError::Refusal(_))
        ));
    }

    #[test]
    fn embeddings_are_reordered_by_index() {
        let body = r#"{"data":[{"index":1,"embedding":[0.0,1.0]},{"index":0,"embedding":[1.0,0.0]}]}"#;
        let transport = ScriptedTransport::new(vec![(200, body)]);
        let backend = OpenAiBackend::new(transport.clone(), "http://h", None);
        let req = EmbedRequest::new("e", Some("find logic"), vec!["a".into(), "b".into()]);
        let out = backend.embed(&req).unwrap();
        assert_eq!(out, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let (_, _, sent) = transport.last_body.lock().unwrap().clone().unwrap();
        assert_eq!(sent["input"][0], "Instruct: find logic\nQuery:a");
    }
}
