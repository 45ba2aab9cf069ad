//! Style taxonomy: root -> class -> style -> model card.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tracing::warn;

use crate::backends::protocol::{ChatMessage, GenerateRequest, SamplingParams};
use crate::backends::{tasks, Client};
use crate::error::{Error, Result};
use crate::templates::{fill, Templates};
use crate::util;

pub const SHIPPED: &str = include_str!("../assets/style_tree.json");
pub const ROOT_NAME: &str = "styles";
pub const CLASSES: [&str; 2] = ["Artistic", "Realistic"];
pub const PLACEHOLDER_PREFIX: &str = "placeholder:";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelCard {
    pub name: String,
    pub file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
    pub model_type: String,
    pub tags: Vec<String>,
    #[serde(default)]
    pub trigger_words: Vec<String>,
    pub base_model: String,
}

impl ModelCard {
    pub fn has_placeholder_url(&self) -> bool {
        self.url.as_deref().is_some_and(|u| u.starts_with(PLACEHOLDER_PREFIX))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StyleNode {
    pub name: String,
    pub level: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<StyleNode>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cards: Vec<ModelCard>,
}

impl StyleNode {
    fn internal(name: &str, level: usize) -> Self {
        Self {
            name: name.into(),
            level,
            children: Vec::new(),
            cards: Vec::new(),
        }
    }

    fn child(&self, name: &str) -> Option<&StyleNode> {
        self.children.iter().find(|c| c.name.eq_ignore_ascii_case(name))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StyleTree {
    pub version: String,
    pub root: StyleNode,
}

/// Card plus its class and style.
#[derive(Debug, Clone, Copy)]
pub struct CardEntry<'a> {
    pub class: &'a str,
    pub style: &'a str,
    pub card: &'a ModelCard,
}

impl StyleTree {
    pub fn shipped() -> Self {
        Self::from_json(SHIPPED).expect("shipped style tree is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let tree: StyleTree = serde_json::from_str(text).map_err(|e| Error::json("style tree", e))?;
        tree.check(false)?;
        Ok(tree)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        util::write_json(path, self)
    }

    /// Every invariant violation, in tree order. Strict mode also rejects
    /// placeholder URLs.
    pub fn violations(&self, strict: bool) -> Vec<String> {
        let mut out = Vec::new();
        let root = &self.root;
        if root.name != ROOT_NAME {
            out.push(format!("root is named {:?}, expected {ROOT_NAME:?}", root.name));
        }
        if root.level != 0 {
            out.push(format!("root has level {}, expected 0", root.level));
        }
        if !root.cards.is_empty() {
            out.push("root holds cards directly".into());
        }
        if root.children.is_empty() {
            out.push("tree has no classes".into());
        }
        duplicate_names(ROOT_NAME, root.children.iter().map(|c| c.name.as_str()), &mut out);
        let mut files = HashSet::new();
        for class in &root.children {
            let at = class.name.as_str();
            if !CLASSES.contains(&at) {
                out.push(format!("class {at:?} is not one of {CLASSES:?}"));
            }
            if class.level != 1 {
                out.push(format!("class {at:?} has level {}, expected 1", class.level));
            }
            if !class.cards.is_empty() {
                out.push(format!("class {at:?} holds cards directly"));
            }
            if class.children.is_empty() {
                out.push(format!("class {at:?} has no styles"));
            }
            duplicate_names(at, class.children.iter().map(|c| c.name.as_str()), &mut out);
            for style in &class.children {
                let at = format!("{}/{}", class.name, style.name);
                if style.name.trim().is_empty() {
                    out.push(format!("{at}: empty style name"));
                }
                if style.level != 2 {
                    out.push(format!("style {at:?} has level {}, expected 2", style.level));
                }
                if !style.children.is_empty() {
                    out.push(format!("style {at:?} has child nodes; the tree must have depth 3"));
                }
                if style.cards.is_empty() {
                    out.push(format!("style {at:?} has no model cards"));
                }
                duplicate_names(&at, style.cards.iter().map(|c| c.name.as_str()), &mut out);
                for card in &style.cards {
                    let at = format!("{at}/{}", card.name);
                    if card.name.trim().is_empty() {
                        out.push(format!("{at}: empty card name"));
                    }
                    if card.file.trim().is_empty() {
                        out.push(format!("{at}: empty file"));
                    } else if !files.insert(card.file.clone()) {
                        out.push(format!("{at}: file {:?} appears more than once", card.file));
                    }
                    if card.tags.is_empty() {
                        out.push(format!("{at}: no tags"));
                    }
                    if strict && card.has_placeholder_url() {
                        out.push(format!("{at}: placeholder URL {:?}", card.url.as_deref().unwrap_or_default()));
                    }
                }
            }
        }
        out
    }

    pub fn check(&self, strict: bool) -> Result<()> {
        let v = self.violations(strict);
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Tree(v))
        }
    }

    /// Child names of the node at `path`; card names at style level.
    pub fn children_of<S: AsRef<str>>(&self, path: &[S]) -> Result<Vec<String>> {
        if path.len() > 2 {
            return Err(Error::Tree(vec![format!("path {} goes below style level", join(path))]));
        }
        let mut node = &self.root;
        for name in path {
            node = node
                .child(name.as_ref())
                .ok_or_else(|| Error::Tree(vec![format!("path {} does not resolve", join(path))]))?;
        }
        Ok(if path.len() == 2 {
            node.cards.iter().map(|c| c.name.clone()).collect()
        } else {
            node.children.iter().map(|c| c.name.clone()).collect()
        })
    }

    pub fn style_node(&self, class: &str, style: &str) -> Option<&StyleNode> {
        self.root.child(class)?.child(style)
    }

    pub fn card(&self, class: &str, style: &str, name: &str) -> Option<&ModelCard> {
        self.style_node(class, style)?
            .cards
            .iter()
            .find(|c| c.name.eq_ignore_ascii_case(name))
    }

    pub fn entries(&self) -> Vec<CardEntry<'_>> {
        let mut out = Vec::new();
        for class in &self.root.children {
            for style in &class.children {
                for card in &style.cards {
                    out.push(CardEntry {
                        class: &class.name,
                        style: &style.name,
                        card,
                    });
                }
            }
        }
        out
    }

    pub fn style_count(&self) -> usize {
        self.root.children.iter().map(|c| c.children.len()).sum()
    }

    pub fn card_count(&self) -> usize {
        self.entries().len()
    }

    /// Returns a new tree with `card` appended under `class/style`, creating
    /// the style when absent.
    pub fn insert_model(&self, class: &str, style: &str, card: ModelCard) -> Result<StyleTree> {
        if self.entries().iter().any(|e| e.card.file == card.file) {
            return Err(Error::Tree(vec![format!("file {:?} is already in the tree", card.file)]));
        }
        let mut tree = self.clone();
        let class_node = tree
            .root
            .children
            .iter_mut()
            .find(|c| c.name.eq_ignore_ascii_case(class))
            .ok_or_else(|| Error::Tree(vec![format!("unknown class {class:?}")]))?;
        let style_node = match class_node
            .children
            .iter()
            .position(|s| s.name.eq_ignore_ascii_case(style))
        {
            Some(i) => &mut class_node.children[i],
            None => {
                class_node.children.push(StyleNode::internal(style, 2));
                class_node.children.last_mut().expect("just pushed")
            }
        };
        style_node.cards.push(card);
        tree.check(false)?;
        Ok(tree)
    }
}

fn join<S: AsRef<str>>(path: &[S]) -> String {
    let parts: Vec<&str> = path.iter().map(AsRef::as_ref).collect();
    format!("{:?}", parts)
}

fn duplicate_names<'a>(at: &str, names: impl Iterator<Item = &'a str>, out: &mut Vec<String>) {
    let mut seen = HashSet::new();
    for name in names {
        if !seen.insert(name.to_lowercase()) {
            out.push(format!("{at}: duplicate child name {name:?}"));
        }
    }
}

#[derive(Deserialize)]
struct Assignment {
    class: String,
    style: String,
}

fn parse_assignment(reply: &str) -> Option<Assignment> {
    let value = Value::Object(util::extract_json_object(reply)?);
    let a: Assignment = serde_json::from_value(value).ok()?;
    let style = a.style.trim().to_lowercase();
    (!style.is_empty()).then(|| Assignment {
        class: a.class.trim().to_string(),
        style,
    })
}

/// Asks the text model to place each card, then assembles and validates a
/// tree. Classes and styles keep the order in which they are first assigned.
pub fn build_tree_from_metadata(
    cards: &[ModelCard],
    client: &Client,
    templates: &Templates,
    sampling: &SamplingParams,
) -> Result<StyleTree> {
    if cards.is_empty() {
        return Err(Error::InvalidInput("no model cards to organize".into()));
    }
    let mut root = StyleNode::internal(ROOT_NAME, 0);
    for card in cards {
        let tags = card.tags.join(", ");
        let triggers = card.trigger_words.join(", ");
        let user = fill(
            &templates.classifier_user,
            &[
                ("name", &card.name),
                ("tags", &tags),
                ("trigger_words", &triggers),
                ("base_model", &card.base_model),
            ],
        );
        let mut messages = vec![ChatMessage::system(templates.classifier_system.clone()), ChatMessage::user(user)];
        let mut assignment = None;
        let mut last_reply = String::new();
        for attempt in 0..3 {
            if attempt > 0 {
                warn!(card = %card.name, attempt, "unparseable class assignment, asking again");
                messages.push(ChatMessage::text(crate::backends::protocol::Role::Assistant, last_reply.clone()));
                messages.push(ChatMessage::user(templates.classifier_retry.clone()));
            }
            let req = GenerateRequest::new(tasks::CLASSIFY_CARD, messages.clone(), *sampling)
                .with_meta("name", card.name.as_str())
                .with_meta("tags", card.tags.clone())
                .with_meta("attempt", attempt + 1);
            last_reply = client.text_generate(&req)?;
            if let Some(a) = parse_assignment(&last_reply) {
                assignment = Some(a);
                break;
            }
        }
        let a = assignment.ok_or_else(|| Error::Unparseable {
            task: tasks::CLASSIFY_CARD.into(),
            reply: last_reply,
        })?;
        let class = CLASSES
            .iter()
            .find(|c| c.eq_ignore_ascii_case(&a.class))
            .ok_or_else(|| Error::Tree(vec![format!("card {:?} assigned to unknown class {:?}", card.name, a.class)]))?;
        let class_node = match root.children.iter().position(|c| c.name == *class) {
            Some(i) => &mut root.children[i],
            None => {
                root.children.push(StyleNode::internal(class, 1));
                root.children.last_mut().expect("just pushed")
            }
        };
        let style_node = match class_node.children.iter().position(|s| s.name == a.style) {
            Some(i) => &mut class_node.children[i],
            None => {
                class_node.children.push(StyleNode::internal(&a.style, 2));
                class_node.children.last_mut().expect("just pushed")
            }
        };
        style_node.cards.push(card.clone());
    }
    let tree = StyleTree {
        version: "1".into(),
        root,
    };
    tree.check(false)?;
    Ok(tree)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_counts() {
        let tree = StyleTree::shipped();
        assert_eq!(tree.style_count(), 17);
        assert_eq!(tree.card_count(), 25);
        assert!(tree.violations(true).len() == 25);
    }

    #[test]
    fn children_lookup() {
        let tree = StyleTree::shipped();
        assert_eq!(tree.children_of::<&str>(&[]).unwrap(), ["Artistic", "Realistic"]);
        assert_eq!(tree.children_of(&["Artistic", "pixel art style"]).unwrap()[0], "pixel_f2.safetensors");
        assert!(tree.children_of(&["Nope"]).is_err());
    }
}
