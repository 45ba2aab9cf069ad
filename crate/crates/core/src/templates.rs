//! Prompt text for every model call. The shipped set lives in
//! `assets/prompts.toml`; a user file overrides it key by key.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SHIPPED: &str = include_str!("../assets/prompts.toml");

pub const EXPERTS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Templates {
    pub captioner_system: String,
    pub captioner_user: String,
    pub captioner_retry: String,
    pub translator_system: String,
    pub translator_user: String,
    pub translator_retry: String,
    pub identifier_system: String,
    pub identifier_user: String,
    pub identifier_retry: String,
    pub expert_system: String,
    pub expert_user: String,
    pub chairman_system: String,
    pub chairman_user: String,
    pub chairman_retry: String,
    pub classifier_system: String,
    pub classifier_user: String,
    pub classifier_retry: String,
    pub scorer_system: String,
    pub scorer_user: String,
    pub scorer_retry: String,
    pub refiner_system: String,
    pub refiner_user: String,
    pub refiner_retry: String,
    pub personas: Vec<String>,
}

impl Default for Templates {
    fn default() -> Self {
        Self::parse(SHIPPED).expect("shipped templates parse")
    }
}

impl Templates {
    fn parse(text: &str) -> Result<Self> {
        let t: Templates = toml::from_str(text).map_err(|e| Error::Config(format!("templates: {e}")))?;
        t.validate()?;
        Ok(t)
    }

    /// Reads a TOML file whose keys replace the shipped ones.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::overlay(&text)
    }

    pub fn overlay(text: &str) -> Result<Self> {
        let mut base: toml::Table = toml::from_str(SHIPPED).expect("shipped templates parse");
        let user: toml::Table = toml::from_str(text).map_err(|e| Error::Config(format!("templates: {e}")))?;
        base.extend(user);
        let t: Templates = toml::Value::Table(base)
            .try_into()
            .map_err(|e| Error::Config(format!("templates: {e}")))?;
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.personas.len() != EXPERTS {
            return Err(Error::Config(format!(
                "templates: expected {EXPERTS} expert personas, found {}",
                self.personas.len()
            )));
        }
        Ok(())
    }

    pub fn persona(&self, expert_id: usize) -> &str {
        &self.personas[(expert_id - 1) % self.personas.len()]
    }
}

/// Replaces each `{key}` with its value; other braces are left alone.
pub fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (key, value) in values {
        out = out.replace(&format!("{{{key}}}"), value);
    }
    out
}
