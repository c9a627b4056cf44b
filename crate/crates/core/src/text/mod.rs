//! Intent-specific text optimization: templates, judging, chain-of-thought
//! prompt rewriting, and the feedback loop tying them together.

pub mod attack;
pub mod client;
pub mod templates;
pub mod transcript;

pub use attack::{
    judge, rephrase, run_attack, AttackOutcome, AttackSettings, AttackTranscript, JudgeVerdict,
};
pub use client::{
    ChatClient, ChatMessage, MarkerJudgeClient, MarkerRephraseClient, Role, ScriptedClient,
    StaticClient,
};
pub use templates::{
    guideline_text, render_template, GuidelineClass, PromptTemplate, TemplateName, TemplateSet,
};
