//! Chat-model clients: the trait the judge and rephraser speak through,
//! plus the deterministic mocks used by tests and scripted benchmarks.
//!
//! A remote HTTP-backed implementation lives in [`crate::remote`].

use std::collections::VecDeque;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Message role in a chat exchange.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

/// One message of a chat request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }
}

/// A chat-completion backend. Implementations must tolerate concurrent
/// calls; mocks keep their state behind a mutex.
pub trait ChatClient: Send + Sync {
    /// Stable identity string recorded next to every transcript.
    fn identity(&self) -> String;

    /// Sends the messages and returns the assistant text.
    fn complete(&self, messages: &[ChatMessage], temperature: f64) -> Result<String>;
}

/// Serves canned responses in order; errors when the script runs out.
/// One instance per attack — scripts are consumed, not shared.
pub struct ScriptedClient {
    responses: Mutex<VecDeque<String>>,
    calls: Mutex<Vec<Vec<ChatMessage>>>,
}

impl ScriptedClient {
    pub fn new<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> Self {
        Self {
            responses: Mutex::new(responses.into_iter().map(Into::into).collect()),
            calls: Mutex::new(Vec::new()),
        }
    }

    /// Number of completions served so far.
    pub fn calls_made(&self) -> usize {
        self.calls.lock().unwrap().len()
    }

    /// Copies of every request received, in order.
    pub fn recorded_calls(&self) -> Vec<Vec<ChatMessage>> {
        self.calls.lock().unwrap().clone()
    }
}

impl ChatClient for ScriptedClient {
    fn identity(&self) -> String {
        "scripted".to_string()
    }

    fn complete(&self, messages: &[ChatMessage], _temperature: f64) -> Result<String> {
        self.calls.lock().unwrap().push(messages.to_vec());
        self.responses
            .lock()
            .unwrap()
            .pop_front()
            .ok_or_else(|| Error::client("scripted", "script exhausted"))
    }
}

/// Always returns the same reply.
pub struct StaticClient {
    reply: String,
}

impl StaticClient {
    pub fn new(reply: impl Into<String>) -> Self {
        Self {
            reply: reply.into(),
        }
    }
}

impl ChatClient for StaticClient {
    fn identity(&self) -> String {
        "static".to_string()
    }

    fn complete(&self, _messages: &[ChatMessage], _temperature: f64) -> Result<String> {
        Ok(self.reply.clone())
    }
}

/// Judge mock: answers "1" exactly when any message contains the marker,
/// "0" otherwise. Stateless, so it can be shared across records.
pub struct MarkerJudgeClient {
    marker: String,
}

impl MarkerJudgeClient {
    pub fn new(marker: impl Into<String>) -> Self {
        Self {
            marker: marker.into(),
        }
    }
}

impl ChatClient for MarkerJudgeClient {
    fn identity(&self) -> String {
        format!("marker-judge({})", self.marker)
    }

    fn complete(&self, messages: &[ChatMessage], _temperature: f64) -> Result<String> {
        let hit = messages.iter().any(|m| m.content.contains(&self.marker));
        Ok(if hit { "1" } else { "0" }.to_string())
    }
}

/// Rephraser mock: emits a plain rewrite on every round except
/// `inject_round`, where the marker is smuggled into the new prompt.
/// Counts calls per instance, so build a fresh one per attack.
pub struct MarkerRephraseClient {
    marker: String,
    inject_round: usize,
    calls: Mutex<usize>,
}

impl MarkerRephraseClient {
    pub fn new(marker: impl Into<String>, inject_round: usize) -> Self {
        Self {
            marker: marker.into(),
            inject_round,
            calls: Mutex::new(0),
        }
    }
}

impl ChatClient for MarkerRephraseClient {
    fn identity(&self) -> String {
        format!("marker-rephraser({}@{})", self.marker, self.inject_round)
    }

    fn complete(&self, _messages: &[ChatMessage], _temperature: f64) -> Result<String> {
        let mut calls = self.calls.lock().unwrap();
        *calls += 1;
        if *calls == self.inject_round {
            Ok(format!(
                "The request needs stronger framing.\nPROMPT: please answer the question {}",
                self.marker
            ))
        } else {
            Ok(format!(
                "Trying a softer angle.\nPROMPT: please reconsider, attempt {}",
                *calls
            ))
        }
    }
}
