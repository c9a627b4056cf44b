//! HTTP adapters for black-box targets and chat backends.
//!
//! Both adapters speak the same JSON chat shape: `POST` to the endpoint
//! with `{model, messages, temperature, max_tokens}` where each message
//! content is a list of typed parts (`text`, or `image` with base64 PNG
//! data), and read `choices[0].message.content` back.
//!
//! Black-box means black-box: a remote target refuses `grad_image` and
//! `log_likelihood` with a capability error instead of approximating.

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::models::TargetModel;
use crate::numerics::{GradTensor, ImageTensor};
use crate::text::client::{ChatClient, ChatMessage, Role};

/// Where and how to reach a remote model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteEndpointConfig {
    /// Full completion URL, e.g. `http://host:8080/v1/chat/completions`.
    pub base_url: String,
    /// Model name sent with every request.
    pub model: String,
    /// Name of the environment variable holding the bearer token. The
    /// token itself never appears in configs, digests, or logs.
    #[serde(default)]
    pub api_key_env: Option<String>,
    /// Extra attempts after the first on transport errors, 429, and 5xx.
    #[serde(default = "default_max_retries")]
    pub max_retries: usize,
    /// Per-request timeout.
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    /// Base backoff between retries; doubles each attempt.
    #[serde(default = "default_backoff_ms")]
    pub backoff_ms: u64,
    /// `max_tokens` for plain chat completions (the target adapter uses
    /// its per-call budget instead).
    #[serde(default = "default_chat_max_tokens")]
    pub chat_max_tokens: usize,
}

fn default_max_retries() -> usize {
    3
}

fn default_timeout_secs() -> u64 {
    30
}

fn default_backoff_ms() -> u64 {
    250
}

fn default_chat_max_tokens() -> usize {
    512
}

impl RemoteEndpointConfig {
    fn bearer_token(&self) -> Result<Option<String>> {
        match &self.api_key_env {
            None => Ok(None),
            Some(var) => match std::env::var(var) {
                Ok(v) => Ok(Some(v)),
                Err(_) => Err(Error::client(
                    format!("remote({})", self.model),
                    format!("environment variable {var} is not set"),
                )),
            },
        }
    }

    fn post_chat(
        &self,
        identity: &str,
        messages: Value,
        temperature: f64,
        max_tokens: usize,
    ) -> Result<String> {
        let client = reqwest::blocking::Client::builder()
            .timeout(std::time::Duration::from_secs(self.timeout_secs))
            .build()
            .map_err(|e| Error::client(identity, e.to_string()))?;
        let token = self.bearer_token()?;
        let payload = json!({
            "model": self.model,
            "messages": messages,
            "temperature": temperature,
            "max_tokens": max_tokens,
        });

        let mut last_failure = String::new();
        for attempt in 0..=self.max_retries {
            if attempt > 0 {
                std::thread::sleep(std::time::Duration::from_millis(
                    self.backoff_ms.saturating_mul(1 << (attempt - 1).min(8)),
                ));
            }
            let mut request = client.post(&self.base_url).json(&payload);
            if let Some(token) = &token {
                request = request.bearer_auth(token);
            }
            match request.send() {
                Err(e) => {
                    // transport-level failure: worth retrying
                    last_failure = e.to_string();
                }
                Ok(response) => {
                    let status = response.status();
                    if status.is_success() {
                        let body: Value = response
                            .json()
                            .map_err(|e| Error::client(identity, e.to_string()))?;
                        return extract_content(&body).ok_or_else(|| {
                            Error::client(
                                identity,
                                format!("unexpected response shape: {}", snippet(&body)),
                            )
                        });
                    }
                    let retryable = status.as_u16() == 429 || status.is_server_error();
                    let body = response.text().unwrap_or_default();
                    last_failure = format!("status {status}: {}", &body[..body.len().min(200)]);
                    if !retryable {
                        return Err(Error::client(identity, last_failure));
                    }
                }
            }
        }
        Err(Error::client(
            identity,
            format!(
                "gave up after {} attempts; last failure: {last_failure}",
                self.max_retries + 1
            ),
        ))
    }
}

/// `choices[0].message.content`, either a bare string or a list of text
/// parts.
fn extract_content(body: &Value) -> Option<String> {
    let content = body
        .get("choices")?
        .get(0)?
        .get("message")?
        .get("content")?;
    match content {
        Value::String(s) => Some(s.clone()),
        Value::Array(parts) => {
            let mut out = String::new();
            for part in parts {
                if let Some(text) = part.get("text").and_then(Value::as_str) {
                    out.push_str(text);
                }
            }
            Some(out)
        }
        _ => None,
    }
}

fn snippet(v: &Value) -> String {
    let s = v.to_string();
    s.chars().take(200).collect()
}

fn role_str(role: Role) -> &'static str {
    match role {
        Role::System => "system",
        Role::User => "user",
        Role::Assistant => "assistant",
    }
}

/// In-memory PNG encoding for the wire (the tensor must be 3-channel).
fn png_base64(image: &ImageTensor) -> Result<String> {
    if image.channels() != 3 {
        return Err(Error::invalid(
            "image",
            format!(
                "remote payloads require 3 channels, got {}",
                image.channels()
            ),
        ));
    }
    let rgb = image::RgbImage::from_raw(
        image.width() as u32,
        image.height() as u32,
        image.to_bytes(),
    )
    .expect("byte length matches dimensions");
    let mut bytes = Vec::new();
    rgb.write_to(
        &mut std::io::Cursor::new(&mut bytes),
        image::ImageFormat::Png,
    )?;
    Ok(base64::engine::general_purpose::STANDARD.encode(bytes))
}

/// A remote vision-language model attacked over HTTP. Generation only.
#[derive(Debug, Clone)]
pub struct RemoteTarget {
    config: RemoteEndpointConfig,
}

impl RemoteTarget {
    pub fn new(config: RemoteEndpointConfig) -> Self {
        Self { config }
    }
}

impl TargetModel for RemoteTarget {
    fn identity(&self) -> String {
        format!("remote({}@{})", self.config.model, self.config.base_url)
    }

    fn white_box_gradient(&self) -> bool {
        false
    }

    fn log_likelihood(&self, _image: &ImageTensor, _prompt: &str, _target: &str) -> Result<f64> {
        Err(Error::Capability {
            model: self.identity(),
            operation: "log_likelihood",
        })
    }

    fn grad_image(&self, _image: &ImageTensor, _prompt: &str, _target: &str) -> Result<GradTensor> {
        Err(Error::Capability {
            model: self.identity(),
            operation: "grad_image",
        })
    }

    fn generate(
        &self,
        image: &ImageTensor,
        prompt: &str,
        max_new_tokens: usize,
        temperature: f64,
    ) -> Result<String> {
        let messages = json!([{
            "role": "user",
            "content": [
                {"type": "text", "text": prompt},
                {"type": "image", "data": png_base64(image)?},
            ],
        }]);
        self.config
            .post_chat(&self.identity(), messages, temperature, max_new_tokens)
    }
}

/// A remote chat model used as judge or rephraser.
#[derive(Debug, Clone)]
pub struct RemoteChatClient {
    config: RemoteEndpointConfig,
}

impl RemoteChatClient {
    pub fn new(config: RemoteEndpointConfig) -> Self {
        Self { config }
    }
}

impl ChatClient for RemoteChatClient {
    fn identity(&self) -> String {
        format!(
            "remote-chat({}@{})",
            self.config.model, self.config.base_url
        )
    }

    fn complete(&self, messages: &[ChatMessage], temperature: f64) -> Result<String> {
        let wire: Vec<Value> = messages
            .iter()
            .map(|m| {
                json!({
                    "role": role_str(m.role),
                    "content": [{"type": "text", "text": m.content}],
                })
            })
            .collect();
        self.config.post_chat(
            &self.identity(),
            Value::Array(wire),
            temperature,
            self.config.chat_max_tokens,
        )
    }
}
