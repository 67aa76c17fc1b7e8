//! Abstraction over external chat models.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::domain::SnapshotRef;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LlmError {
    #[error("model unavailable: {0}")]
    Unavailable(String),
    #[error("unusable model reply: {0}")]
    BadReply(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub system: String,
    pub user: String,
    pub image: Option<SnapshotRef>,
}

impl ChatRequest {
    pub fn text(system: &str, user: &str) -> Self {
        Self {
            system: system.into(),
            user: user.into(),
            image: None,
        }
    }

    pub fn with_image(mut self, image: &SnapshotRef) -> Self {
        self.image = Some(image.clone());
        self
    }
}

/// One-shot chat completion. Implementations block.
pub trait TextModel: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, LlmError>;
}

/// First balanced `{...}` in a reply, skipping code fences and prose.
pub fn extract_json_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let mut depth = 0usize;
    let mut in_str = false;
    let mut escaped = false;
    for (i, c) in text[start..].char_indices() {
        if in_str {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_str = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_str = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..start + i + 1]);
                }
            }
            _ => {}
        }
    }
    None
}

/// Token bucket shared by the external clients.
#[derive(Debug)]
pub struct TokenBucket {
    rate_per_s: f64,
    capacity: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    pub fn new(rate_per_s: f64) -> Self {
        assert!(rate_per_s > 0.0);
        let capacity = rate_per_s.max(1.0);
        Self {
            rate_per_s,
            capacity,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    /// Takes a token if one is available, else reports the wait.
    pub fn try_acquire(&self) -> Result<(), Duration> {
        let mut s = self.state.lock().unwrap_or_else(|e| e.into_inner());
        let now = Instant::now();
        let refill = now.duration_since(s.1).as_secs_f64() * self.rate_per_s;
        s.0 = (s.0 + refill).min(self.capacity);
        s.1 = now;
        if s.0 >= 1.0 {
            s.0 -= 1.0;
            Ok(())
        } else {
            Err(Duration::from_secs_f64((1.0 - s.0) / self.rate_per_s))
        }
    }

    /// Blocks until a token is available.
    pub fn acquire(&self) {
        while let Err(wait) = self.try_acquire() {
            std::thread::sleep(wait);
        }
    }
}
