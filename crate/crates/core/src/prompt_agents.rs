//! Shot captioner, shot translator and render-prompt composition.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::backends::protocol::{ChatMessage, GenerateRequest, Role, SamplingParams};
use crate::backends::{tasks, Client};
use crate::error::{Error, Result};
use crate::frames::Frame;
use crate::style_tree::ModelCard;
use crate::templates::{fill, Templates};

pub const MAX_PROMPT_CHARS: usize = 300;
pub const MAX_KEYFRAMES: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotCaption {
    pub shot_index: usize,
    pub caption: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotPrompt {
    pub shot_index: usize,
    pub prompt: String,
}

/// One entry of `prompts.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub shot_index: usize,
    pub caption: String,
    pub prompt: String,
}

pub fn caption_shot(
    client: &Client,
    templates: &Templates,
    sampling: &SamplingParams,
    shot_index: usize,
    keyframes: &[Frame],
) -> Result<ShotCaption> {
    if keyframes.is_empty() || keyframes.len() > MAX_KEYFRAMES {
        return Err(Error::InvalidInput(format!(
            "captioning needs 1 to {MAX_KEYFRAMES} keyframes, got {}",
            keyframes.len()
        )));
    }
    let mut messages = vec![
        ChatMessage::system(templates.captioner_system.clone()),
        ChatMessage::user_with_images(templates.captioner_user.clone(), keyframes)?,
    ];
    for attempt in 1..=2 {
        let req = GenerateRequest::new(tasks::CAPTION, messages.clone(), *sampling)
            .with_meta("shot_index", shot_index)
            .with_meta("attempt", attempt);
        let reply = client.vision_generate(&req)?;
        let caption = reply.trim();
        if !caption.is_empty() {
            return Ok(ShotCaption {
                shot_index,
                caption: caption.to_string(),
            });
        }
        messages.push(ChatMessage::text(Role::Assistant, reply.clone()));
        messages.push(ChatMessage::user(templates.captioner_retry.clone()));
    }
    Err(Error::Unparseable {
        task: tasks::CAPTION.into(),
        reply: String::new(),
    })
}

pub fn translate_caption(
    client: &Client,
    templates: &Templates,
    sampling: &SamplingParams,
    caption: &ShotCaption,
) -> Result<ShotPrompt> {
    if caption.caption.trim().is_empty() {
        return Err(Error::InvalidInput(format!("shot {} has an empty caption", caption.shot_index)));
    }
    let mut messages = vec![
        ChatMessage::system(templates.translator_system.clone()),
        ChatMessage::user(fill(&templates.translator_user, &[("caption", &caption.caption)])),
    ];
    let mut last = String::new();
    for attempt in 1..=2 {
        let req = GenerateRequest::new(tasks::TRANSLATE, messages.clone(), *sampling)
            .with_meta("shot_index", caption.shot_index)
            .with_meta("caption", caption.caption.as_str())
            .with_meta("attempt", attempt);
        last = client.text_generate(&req)?;
        let prompt = clean_prompt(&last);
        if !prompt.is_empty() {
            return Ok(ShotPrompt {
                shot_index: caption.shot_index,
                prompt,
            });
        }
        messages.push(ChatMessage::text(Role::Assistant, last.clone()));
        messages.push(ChatMessage::user(templates.translator_retry.clone()));
    }
    Err(Error::Unparseable {
        task: tasks::TRANSLATE.into(),
        reply: last,
    })
}

/// Single line of trimmed, non-empty comma segments, at most
/// [`MAX_PROMPT_CHARS`] characters, cut at the last comma that fits.
pub fn clean_prompt(raw: &str) -> String {
    let segments: Vec<&str> = raw
        .split(['\n', '\r', ','])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect();
    let joined = segments.join(", ");
    if joined.chars().count() <= MAX_PROMPT_CHARS {
        return joined;
    }
    let head: String = joined.chars().take(MAX_PROMPT_CHARS).collect();
    match head.rfind(',') {
        Some(cut) => head[..cut].trim_end().to_string(),
        None => head.trim_end().to_string(),
    }
}

/// `trigger words, style, P_t` as comma tokens, keeping the first occurrence
/// of each token (case-insensitive).
pub fn compose_render_prompt(prompt: &ShotPrompt, card: Option<&ModelCard>, style: &str) -> String {
    let triggers = card.map(|c| c.trigger_words.as_slice()).unwrap_or_default();
    let tokens = triggers
        .iter()
        .map(String::as_str)
        .chain(std::iter::once(style))
        .chain(prompt.prompt.split(','))
        .map(str::trim)
        .filter(|t| !t.is_empty());
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for token in tokens {
        if seen.insert(token.to_lowercase()) {
            out.push(token);
        }
    }
    out.join(", ")
}
