//! Layered configuration: built-in defaults, then a TOML file, then
//! `VSTYLIST_*_URL` environment variables; command-line flags are applied
//! last by the caller.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::backends::protocol::{Endpoint, SamplingParams};
use crate::backends::RetryPolicy;
use crate::error::{Error, Result};
use crate::metrics::EvalOptions;
use crate::shot_detector::DetectorParams;
use crate::style_artist::ReflectionParams;

pub const DEFAULT_BACKEND_URL: &str = "http://127.0.0.1:8000";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub text: String,
    pub vision: String,
    pub render: String,
    pub embed: String,
    pub score: String,
    pub timeout_secs: u64,
    pub retries: u32,
    pub backoff_ms: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bearer_token: Option<String>,
    /// Scenario file for `mock://` endpoints.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<PathBuf>,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            text: DEFAULT_BACKEND_URL.into(),
            vision: DEFAULT_BACKEND_URL.into(),
            render: DEFAULT_BACKEND_URL.into(),
            embed: DEFAULT_BACKEND_URL.into(),
            score: DEFAULT_BACKEND_URL.into(),
            timeout_secs: 120,
            retries: 2,
            backoff_ms: 200,
            bearer_token: None,
            scenario: None,
        }
    }
}

impl BackendConfig {
    pub fn url(&self, e: Endpoint) -> &str {
        match e {
            Endpoint::Text => &self.text,
            Endpoint::Vision => &self.vision,
            Endpoint::Render => &self.render,
            Endpoint::Embed => &self.embed,
            Endpoint::Score => &self.score,
        }
    }

    pub fn url_mut(&mut self, e: Endpoint) -> &mut String {
        match e {
            Endpoint::Text => &mut self.text,
            Endpoint::Vision => &mut self.vision,
            Endpoint::Render => &mut self.render,
            Endpoint::Embed => &mut self.embed,
            Endpoint::Score => &mut self.score,
        }
    }

    pub fn urls(&self) -> BTreeMap<Endpoint, String> {
        Endpoint::ALL.into_iter().map(|e| (e, self.url(e).to_string())).collect()
    }

    /// Points every endpoint at one base URL.
    pub fn set_all(&mut self, url: &str) {
        for e in Endpoint::ALL {
            *self.url_mut(e) = url.to_string();
        }
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            retries: self.retries,
            backoff_ms: self.backoff_ms,
        }
    }
}

pub fn env_var_name(e: Endpoint) -> String {
    format!("VSTYLIST_{}_URL", e.name().to_uppercase())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StyleConfig {
    /// Style tree JSON; the shipped tree when unset.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tree: Option<PathBuf>,
    /// Reject placeholder model URLs.
    pub strict: bool,
    pub base_model_file: String,
    pub base_model: String,
}

impl Default for StyleConfig {
    fn default() -> Self {
        Self {
            tree: None,
            strict: false,
            base_model_file: "v1-5-pruned-emaonly.safetensors".into(),
            base_model: "SD 1.5".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub max_parallel_shots: usize,
    pub evaluate: bool,
    pub caption_keyframes: usize,
    /// Command turning a video file into frames, with `{input}`, `{outdir}`
    /// and `{fps}` placeholders.
    pub decoder: String,
    /// Frame rate used when decoding a video file.
    pub fps: f64,
    /// Passed unchanged to the renderer.
    pub render_extras: BTreeMap<String, String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            max_parallel_shots: 2,
            evaluate: true,
            caption_keyframes: 3,
            decoder: "ffmpeg -loglevel error -i {input} -vf fps={fps} {outdir}/frame_%06d.png".into(),
            fps: 24.0,
            render_extras: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptsConfig {
    /// TOML file overriding the shipped prompt templates.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub templates: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub backends: BackendConfig,
    pub sampling: SamplingParams,
    pub detector: DetectorParams,
    pub reflection: ReflectionParams,
    pub style: StyleConfig,
    pub pipeline: PipelineConfig,
    pub metrics: EvalOptions,
    pub prompts: PromptsConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Defaults overlaid with `path` (when given) and the environment.
    /// Relative paths inside the file resolve against the file's directory.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                let mut c = Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                c.resolve_relative(p.parent().unwrap_or(Path::new(".")));
                c
            }
            None => Self::default(),
        };
        config.apply_env(|k| std::env::var(k).ok());
        Ok(config)
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) {
        for e in Endpoint::ALL {
            if let Some(url) = get(&env_var_name(e)).filter(|u| !u.trim().is_empty()) {
                *self.backends.url_mut(e) = url;
            }
        }
    }

    fn resolve_relative(&mut self, base: &Path) {
        for p in [
            &mut self.style.tree,
            &mut self.prompts.templates,
            &mut self.backends.scenario,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sampling.validate()?;
        self.detector.validate()?;
        self.reflection.validate()?;
        if self.backends.timeout_secs == 0 {
            return Err(Error::Config("backends.timeout_secs must be > 0".into()));
        }
        if self.pipeline.max_parallel_shots == 0 {
            return Err(Error::Config("pipeline.max_parallel_shots must be >= 1".into()));
        }
        if !(1..=3).contains(&self.pipeline.caption_keyframes) {
            return Err(Error::Config("pipeline.caption_keyframes must be 1 to 3".into()));
        }
        if self.metrics.frame_stride == 0 {
            return Err(Error::Config("metrics.frame_stride must be >= 1".into()));
        }
        if self.style.base_model_file.trim().is_empty() {
            return Err(Error::Config("style.base_model_file is empty".into()));
        }
        for (what, p) in [
            ("style.tree", &self.style.tree),
            ("prompts.templates", &self.prompts.templates),
            ("backends.scenario", &self.backends.scenario),
        ] {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(Error::Config(format!("{what}: {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}
