//! Style identification and the expert-panel descent of the style tree.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::{info, warn};

use crate::backends::protocol::{ChatMessage, GenerateRequest, Role, SamplingParams};
use crate::backends::{tasks, Client};
use crate::error::{Error, Result};
use crate::style_tree::{ModelCard, StyleTree};
use crate::templates::{fill, Templates, EXPERTS};
use crate::util;

pub const MAX_STYLE_CHARS: usize = 64;
pub const LEVEL_NAMES: [&str; 3] = ["class", "style", "model"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryKind {
    Prompt,
    Inspiration,
    Instruction,
    Hypothesis,
}

impl QueryKind {
    fn parse(s: &str) -> Option<Self> {
        match s.trim().to_lowercase().as_str() {
            "prompt" => Some(QueryKind::Prompt),
            "inspiration" => Some(QueryKind::Inspiration),
            "instruction" => Some(QueryKind::Instruction),
            "hypothesis" => Some(QueryKind::Hypothesis),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StyleResolution {
    pub style: String,
    pub query_kind: QueryKind,
    #[serde(default)]
    pub retries_used: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Candidate {
    pub name: String,
    pub hint: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vote {
    pub expert_id: usize,
    pub reply: String,
    /// Matched candidate, `None` when the reply names no candidate.
    pub pick: Option<String>,
}

impl Vote {
    pub fn is_valid(&self) -> bool {
        self.pick.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecidedBy {
    Chairman,
    Majority,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelDecision {
    pub level: usize,
    pub candidates: Vec<String>,
    pub expert_votes: Vec<Vote>,
    pub chairman_replies: Vec<String>,
    pub chairman_pick: String,
    pub decided_by: DecidedBy,
    pub retries_used: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelFailure {
    pub level: usize,
    pub candidates: Vec<String>,
    pub expert_votes: Vec<Vote>,
    pub chairman_replies: Vec<String>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StyleDecision {
    pub resolution: StyleResolution,
    /// `[class, style]` on success; the levels decided before a failure
    /// otherwise.
    pub path: Vec<String>,
    pub card: Option<ModelCard>,
    pub base_model_fallback: bool,
    /// Completed levels only.
    pub trace: Vec<LevelDecision>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<LevelFailure>,
}

fn clean_reply(reply: &str) -> &str {
    reply.trim().trim_matches(|c: char| c == '"' || c == '\'' || c == '`' || c == '*' || c == '.' || c.is_whitespace())
}

/// Case-insensitive match of a reply against the candidate names. A reply
/// that is not a bare name still matches when it mentions exactly one name.
pub fn match_candidate(reply: &str, candidates: &[Candidate]) -> Option<String> {
    let cleaned = clean_reply(reply);
    if let Some(c) = candidates.iter().find(|c| c.name.eq_ignore_ascii_case(cleaned)) {
        return Some(c.name.clone());
    }
    let lower = reply.to_lowercase();
    let mentioned: Vec<&Candidate> = candidates
        .iter()
        .filter(|c| lower.contains(&c.name.to_lowercase()))
        .collect();
    match mentioned.as_slice() {
        [only] => Some(only.name.clone()),
        _ => None,
    }
}

/// Most frequent valid vote; ties go to the earlier candidate.
pub fn majority(votes: &[Vote], candidates: &[Candidate]) -> Option<String> {
    let mut best: Option<(&str, usize)> = None;
    for c in candidates {
        let n = votes.iter().filter(|v| v.pick.as_deref() == Some(c.name.as_str())).count();
        if n > 0 && best.map_or(true, |(_, b)| n > b) {
            best = Some((&c.name, n));
        }
    }
    best.map(|(name, _)| name.to_string())
}

fn candidate_block(candidates: &[Candidate]) -> String {
    candidates
        .iter()
        .map(|c| {
            if c.hint.is_empty() {
                format!("- {}", c.name)
            } else {
                format!("- {} ({})", c.name, c.hint)
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn candidate_meta(candidates: &[Candidate]) -> Value {
    json!(candidates
        .iter()
        .map(|c| json!({"name": c.name, "hint": c.hint}))
        .collect::<Vec<_>>())
}

fn base_seed(sampling: &SamplingParams) -> u64 {
    sampling.seed.unwrap_or(0)
}

fn parse_resolution(reply: &str) -> Option<(String, QueryKind)> {
    let obj = util::extract_json_object(reply)?;
    let style = obj.get("style")?.as_str()?.trim().to_lowercase();
    if style.is_empty() || style.chars().count() > MAX_STYLE_CHARS {
        return None;
    }
    let kind = obj
        .get("kind")
        .and_then(Value::as_str)
        .and_then(QueryKind::parse)
        .unwrap_or(QueryKind::Prompt);
    Some((style, kind))
}

pub fn identify_style(client: &Client, templates: &Templates, sampling: &SamplingParams, query: &str) -> Result<StyleResolution> {
    if query.trim().is_empty() {
        return Err(Error::InvalidInput("empty style query".into()));
    }
    let mut messages = vec![
        ChatMessage::system(templates.identifier_system.clone()),
        ChatMessage::user(fill(&templates.identifier_user, &[("query", query.trim())])),
    ];
    let mut last = String::new();
    for attempt in 0..2u32 {
        let req = GenerateRequest::new(tasks::IDENTIFY_STYLE, messages.clone(), *sampling)
            .with_meta("query", query.trim())
            .with_meta("attempt", attempt + 1);
        last = client.text_generate(&req)?;
        if let Some((style, query_kind)) = parse_resolution(&last) {
            return Ok(StyleResolution {
                style,
                query_kind,
                retries_used: attempt,
            });
        }
        warn!(attempt, "style identifier reply has no usable JSON");
        messages.push(ChatMessage::text(Role::Assistant, last.clone()));
        messages.push(ChatMessage::user(templates.identifier_retry.clone()));
    }
    Err(Error::Unparseable {
        task: tasks::IDENTIFY_STYLE.into(),
        reply: last,
    })
}

pub fn expert_vote(
    client: &Client,
    templates: &Templates,
    sampling: &SamplingParams,
    style: &str,
    level: usize,
    candidates: &[Candidate],
    expert_id: usize,
) -> Result<Vote> {
    if candidates.is_empty() {
        return Err(Error::InvalidInput("expert vote without candidates".into()));
    }
    let block = candidate_block(candidates);
    let messages = vec![
        ChatMessage::system(fill(&templates.expert_system, &[("persona", templates.persona(expert_id))])),
        ChatMessage::user(fill(
            &templates.expert_user,
            &[("style", style), ("level_name", LEVEL_NAMES[level - 1]), ("candidates", &block)],
        )),
    ];
    let seeded = sampling.with_seed(base_seed(sampling) + expert_id as u64);
    let req = GenerateRequest::new(tasks::EXPERT_VOTE, messages, seeded)
        .with_meta("style", style)
        .with_meta("level", level)
        .with_meta("expert_id", expert_id)
        .with_meta("candidates", candidate_meta(candidates));
    let reply = client.text_generate(&req)?;
    let pick = match_candidate(&reply, candidates);
    Ok(Vote { expert_id, reply, pick })
}

pub enum ChairmanOutcome {
    Decided {
        pick: String,
        by: DecidedBy,
        replies: Vec<String>,
    },
    Failed {
        replies: Vec<String>,
    },
}

pub fn chairman_decide(
    client: &Client,
    templates: &Templates,
    sampling: &SamplingParams,
    style: &str,
    level: usize,
    candidates: &[Candidate],
    votes: &[Vote],
) -> Result<ChairmanOutcome> {
    let block = candidate_block(candidates);
    let vote_lines = votes
        .iter()
        .filter_map(|v| v.pick.as_ref().map(|p| format!("- expert {}: {p}", v.expert_id)))
        .collect::<Vec<_>>();
    let vote_text = if vote_lines.is_empty() {
        "(no valid votes)".to_string()
    } else {
        vote_lines.join("\n")
    };
    let names = candidates.iter().map(|c| c.name.as_str()).collect::<Vec<_>>().join(", ");
    let mut messages = vec![
        ChatMessage::system(templates.chairman_system.clone()),
        ChatMessage::user(fill(
            &templates.chairman_user,
            &[
                ("style", style),
                ("level_name", LEVEL_NAMES[level - 1]),
                ("candidates", &block),
                ("votes", &vote_text),
            ],
        )),
    ];
    let seeded = sampling.with_seed(base_seed(sampling));
    let mut replies = Vec::new();
    for attempt in 1..=2 {
        let req = GenerateRequest::new(tasks::CHAIRMAN, messages.clone(), seeded)
            .with_meta("style", style)
            .with_meta("level", level)
            .with_meta("candidates", candidate_meta(candidates))
            .with_meta("votes", json!(votes.iter().map(|v| v.pick.clone()).collect::<Vec<_>>()))
            .with_meta("attempt", attempt);
        let reply = client.text_generate(&req)?;
        replies.push(reply.clone());
        if let Some(pick) = match_candidate(&reply, candidates) {
            return Ok(ChairmanOutcome::Decided {
                pick,
                by: DecidedBy::Chairman,
                replies,
            });
        }
        warn!(level, attempt, "chairman reply names no candidate");
        messages.push(ChatMessage::text(Role::Assistant, reply));
        messages.push(ChatMessage::user(fill(&templates.chairman_retry, &[("names", &names)])));
    }
    Ok(match majority(votes, candidates) {
        Some(pick) => ChairmanOutcome::Decided {
            pick,
            by: DecidedBy::Majority,
            replies,
        },
        None => ChairmanOutcome::Failed { replies },
    })
}

fn unique_join<'a>(items: impl Iterator<Item = &'a String>) -> String {
    let mut seen: Vec<&str> = Vec::new();
    for item in items {
        if !seen.iter().any(|s| s.eq_ignore_ascii_case(item)) {
            seen.push(item);
        }
    }
    seen.join(", ")
}

fn level_candidates(tree: &StyleTree, path: &[String]) -> Result<Vec<Candidate>> {
    let root = &tree.root;
    let out = match path {
        [] => root
            .children
            .iter()
            .map(|class| Candidate {
                name: class.name.clone(),
                hint: unique_join(class.children.iter().map(|s| &s.name)),
            })
            .collect(),
        [class] => tree
            .root
            .children
            .iter()
            .find(|c| &c.name == class)
            .ok_or_else(|| Error::Tree(vec![format!("unknown class {class:?}")]))?
            .children
            .iter()
            .map(|style| Candidate {
                name: style.name.clone(),
                hint: unique_join(style.cards.iter().flat_map(|c| c.tags.iter().chain(&c.trigger_words))),
            })
            .collect(),
        [class, style] => tree
            .style_node(class, style)
            .ok_or_else(|| Error::Tree(vec![format!("unknown style {class}/{style}")]))?
            .cards
            .iter()
            .map(|card| Candidate {
                name: card.name.clone(),
                hint: unique_join(card.tags.iter().chain(&card.trigger_words).chain([&card.model_type])),
            })
            .collect(),
        _ => return Err(Error::Tree(vec!["search path deeper than the tree".into()])),
    };
    Ok(out)
}

/// Descends class -> style -> card, five expert votes and one chairman
/// decision per level. A level without a decision ends the search with the
/// base-model fallback.
pub fn search_tree(
    resolution: &StyleResolution,
    tree: &StyleTree,
    client: &Client,
    templates: &Templates,
    sampling: &SamplingParams,
) -> Result<StyleDecision> {
    let style = resolution.style.as_str();
    let mut path: Vec<String> = Vec::new();
    let mut trace = Vec::new();
    for level in 1..=3 {
        let candidates = level_candidates(tree, &path)?;
        let votes = std::thread::scope(|s| {
            let handles: Vec<_> = (1..=EXPERTS)
                .map(|id| {
                    let candidates = &candidates;
                    s.spawn(move || expert_vote(client, templates, sampling, style, level, candidates, id))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("expert thread panicked"))
                .collect::<Result<Vec<_>>>()
        })?;
        let names: Vec<String> = candidates.iter().map(|c| c.name.clone()).collect();
        match chairman_decide(client, templates, sampling, style, level, &candidates, &votes)? {
            ChairmanOutcome::Decided { pick, by, replies } => {
                info!(level, %pick, ?by, "style level decided");
                path.push(pick.clone());
                trace.push(LevelDecision {
                    level,
                    candidates: names,
                    expert_votes: votes,
                    retries_used: replies.len() as u32 - 1,
                    chairman_replies: replies,
                    chairman_pick: pick,
                    decided_by: by,
                });
            }
            ChairmanOutcome::Failed { replies } => {
                warn!(level, "no decision at this level, using the base model");
                return Ok(StyleDecision {
                    resolution: resolution.clone(),
                    path,
                    card: None,
                    base_model_fallback: true,
                    trace,
                    failure: Some(LevelFailure {
                        level,
                        candidates: names,
                        expert_votes: votes,
                        chairman_replies: replies,
                        reason: "no valid expert vote and no valid chairman reply".into(),
                    }),
                });
            }
        }
    }
    let card_name = path.pop().expect("three levels decided");
    let card = tree
        .card(&path[0], &path[1], &card_name)
        .cloned()
        .ok_or_else(|| Error::Tree(vec![format!("card {card_name:?} not under {}/{}", path[0], path[1])]))?;
    Ok(StyleDecision {
        resolution: resolution.clone(),
        path,
        card: Some(card),
        base_model_fallback: false,
        trace,
        failure: None,
    })
}
