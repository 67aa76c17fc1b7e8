//! Blocking HTTP adapters for the engine's pluggable sources: the edge's
//! instant-data endpoint and chat-completions style language models.
//!
//! Both run async requests on a captured runtime handle and must be called
//! from a thread outside the runtime (e.g. `spawn_blocking`).

use std::sync::{Arc, OnceLock};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use remoni_core::edge::InstantData;
use remoni_core::nlp::llm::{ChatRequest, LlmError, TextModel, TokenBucket};
use remoni_core::nlp::{FetchError, InstantSource};
use reqwest::StatusCode;
use serde_json::{json, Value};
use tokio::runtime::Handle;

use crate::base_url;

pub const LLM_RATE_PER_S: f64 = 5.0;
pub const LLM_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_MODEL: &str = "gpt-4o";

pub struct HttpEdgeSource {
    base: String,
    client: reqwest::Client,
    handle: Handle,
}

impl HttpEdgeSource {
    /// Captures the current runtime; call from within it.
    pub fn new(base: &str) -> Self {
        Self {
            base: base_url(base),
            client: reqwest::Client::builder()
                .no_proxy()
                .timeout(Duration::from_secs(2))
                .build()
                .expect("http client"),
            handle: Handle::current(),
        }
    }

    pub async fn fetch(&self, patient_id: &str) -> Result<InstantData, FetchError> {
        let url = format!("{}/patients/{}/instant", self.base, encode_path(patient_id));
        let resp = self
            .client
            .get(&url)
            .send()
            .await
            .map_err(|e| FetchError::Unreachable(e.to_string()))?;
        match resp.status() {
            StatusCode::OK => resp
                .json::<InstantData>()
                .await
                .map_err(|e| FetchError::Unreachable(format!("bad instant reply: {e}"))),
            StatusCode::NOT_FOUND => Err(FetchError::UnknownPatient(patient_id.to_string())),
            s => Err(FetchError::Unreachable(format!("edge answered {s}"))),
        }
    }
}

impl InstantSource for HttpEdgeSource {
    fn instant(&self, patient_id: &str) -> Result<InstantData, FetchError> {
        self.handle.block_on(self.fetch(patient_id))
    }
}

/// Percent-encodes characters outside the unreserved set for a path segment.
pub fn encode_path(s: &str) -> String {
    s.bytes()
        .map(|b| match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'_' | b'.' | b'~' => (b as char).to_string(),
            _ => format!("%{b:02X}"),
        })
        .collect()
}

fn shared_bucket() -> Arc<TokenBucket> {
    static BUCKET: OnceLock<Arc<TokenBucket>> = OnceLock::new();
    BUCKET.get_or_init(|| Arc::new(TokenBucket::new(LLM_RATE_PER_S))).clone()
}

/// A chat-completions endpoint. Images are sent inline as data URLs.
pub struct HttpChatModel {
    url: String,
    key: Option<String>,
    model: String,
    client: reqwest::Client,
    handle: Handle,
    bucket: Arc<TokenBucket>,
}

impl HttpChatModel {
    pub fn new(url: &str, key: Option<String>, model: &str, handle: Handle) -> Self {
        Self {
            url: url.to_string(),
            key,
            model: model.to_string(),
            client: reqwest::Client::builder()
                .timeout(LLM_TIMEOUT)
                .build()
                .expect("http client"),
            handle,
            bucket: shared_bucket(),
        }
    }

    /// Reads `{prefix}_URL`, `{prefix}_KEY` and `{prefix}_MODEL`; `None`
    /// without a URL.
    pub fn from_env(prefix: &str, handle: Handle) -> Option<Self> {
        let url = std::env::var(format!("{prefix}_URL")).ok().filter(|u| !u.is_empty())?;
        let key = std::env::var(format!("{prefix}_KEY")).ok().filter(|k| !k.is_empty());
        let model = std::env::var(format!("{prefix}_MODEL")).unwrap_or_else(|_| DEFAULT_MODEL.into());
        Some(Self::new(&url, key, &model, handle))
    }

    fn body(&self, req: &ChatRequest) -> Value {
        let user = match &req.image {
            Some(img) => json!([
                { "type": "text", "text": req.user },
                { "type": "image_url", "image_url": {
                    "url": format!("data:{};base64,{}", img.mime, STANDARD.encode(&img.media))
                }},
            ]),
            None => json!(req.user),
        };
        json!({
            "model": self.model,
            "temperature": 0,
            "messages": [
                { "role": "system", "content": req.system },
                { "role": "user", "content": user },
            ],
        })
    }

    async fn call(&self, body: &Value) -> Result<String, LlmError> {
        let mut rb = self.client.post(&self.url).json(body);
        if let Some(k) = &self.key {
            rb = rb.bearer_auth(k);
        }
        let resp = rb.send().await.map_err(|e| LlmError::Unavailable(e.to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(LlmError::Unavailable(format!("model endpoint answered {status}")));
        }
        let v: Value = resp.json().await.map_err(|e| LlmError::BadReply(e.to_string()))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| LlmError::BadReply("no choices[0].message.content".into()))
    }
}

impl TextModel for HttpChatModel {
    fn complete(&self, req: &ChatRequest) -> Result<String, LlmError> {
        let body = self.body(req);
        let mut last = LlmError::Unavailable("not attempted".into());
        for attempt in 0..2 {
            if attempt > 0 {
                std::thread::sleep(Duration::from_millis(500));
            }
            self.bucket.acquire();
            match self.handle.block_on(self.call(&body)) {
                Ok(text) => return Ok(text),
                Err(e @ LlmError::BadReply(_)) => return Err(e),
                Err(e) => last = e,
            }
        }
        Err(last)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use remoni_core::domain::SnapshotRef;

    #[test]
    fn path_encoding() {
        assert_eq!(encode_path("p-1_x.y~"), "p-1_x.y~");
        assert_eq!(encode_path("a b/c"), "a%20b%2Fc");
    }

    #[tokio::test]
    async fn image_goes_inline_as_data_url() {
        let m = HttpChatModel::new("http://127.0.0.1:9/v1", None, "m", Handle::current());
        let img = SnapshotRef {
            t: 0,
            patient_id: "p".into(),
            mime: "image/png".into(),
            media: vec![1, 2, 3],
        };
        let body = m.body(&ChatRequest::text("sys", "what?").with_image(&img));
        assert_eq!(body["messages"][0]["content"], "sys");
        assert_eq!(body["messages"][1]["content"][1]["image_url"]["url"], "data:image/png;base64,AQID");
        let plain = m.body(&ChatRequest::text("sys", "hi"));
        assert_eq!(plain["messages"][1]["content"], "hi");
    }
}
