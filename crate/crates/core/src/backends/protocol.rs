//! JSON bodies of the five service endpoints. Images travel as base64 PNG.

use std::collections::BTreeMap;
use std::fmt;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::frames::Frame;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Endpoint {
    Text,
    Vision,
    Render,
    Embed,
    Score,
}

impl Endpoint {
    pub const ALL: [Endpoint; 5] = [
        Endpoint::Text,
        Endpoint::Vision,
        Endpoint::Render,
        Endpoint::Embed,
        Endpoint::Score,
    ];

    pub fn path(self) -> &'static str {
        match self {
            Endpoint::Text => "/v1/text/generate",
            Endpoint::Vision => "/v1/vision/generate",
            Endpoint::Render => "/v1/render",
            Endpoint::Embed => "/v1/embed",
            Endpoint::Score => "/v1/score",
        }
    }

    pub fn from_path(path: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.path() == path)
    }

    pub fn name(self) -> &'static str {
        match self {
            Endpoint::Text => "text",
            Endpoint::Vision => "vision",
            Endpoint::Render => "render",
            Endpoint::Embed => "embed",
            Endpoint::Score => "score",
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.path())
    }
}

pub fn encode_image(frame: &Frame) -> Result<String> {
    Ok(B64.encode(frame.encode_png()?))
}

pub fn decode_image(index: usize, data: &str) -> Result<Frame> {
    let bytes = B64
        .decode(data)
        .map_err(|e| Error::InvalidInput(format!("image {index}: bad base64: {e}")))?;
    if bytes.is_empty() {
        return Err(Error::InvalidInput(format!("image {index} is empty")));
    }
    Frame::decode_png(index, &bytes)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub top_k: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub max_tokens: u32,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            temperature: 0.7,
            top_p: 0.95,
            top_k: 10,
            seed: None,
            max_tokens: 512,
        }
    }
}

impl SamplingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0) {
            return Err(Error::Config("temperature must be >= 0".into()));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config("top_p must lie in (0, 1]".into()));
        }
        if self.top_k < 1 {
            return Err(Error::Config("top_k must be >= 1".into()));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Part {
    Text { text: String },
    Image { image: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub parts: Vec<Part>,
}

impl ChatMessage {
    pub fn text(role: Role, text: impl Into<String>) -> Self {
        Self {
            role,
            parts: vec![Part::Text { text: text.into() }],
        }
    }

    pub fn system(text: impl Into<String>) -> Self {
        Self::text(Role::System, text)
    }

    pub fn user(text: impl Into<String>) -> Self {
        Self::text(Role::User, text)
    }

    /// User turn with images first, then the instruction text.
    pub fn user_with_images(text: impl Into<String>, frames: &[Frame]) -> Result<Self> {
        let mut parts = frames
            .iter()
            .map(|f| Ok(Part::Image { image: encode_image(f)? }))
            .collect::<Result<Vec<_>>>()?;
        parts.push(Part::Text { text: text.into() });
        Ok(Self {
            role: Role::User,
            parts,
        })
    }

    pub fn has_images(&self) -> bool {
        self.parts.iter().any(|p| matches!(p, Part::Image { .. }))
    }
}

/// Shared body of `/v1/text/generate` and `/v1/vision/generate`.
///
/// `task` names the agent role issuing the call; `metadata` carries the
/// structured inputs the prompt was rendered from. Model servers may ignore
/// both; the mock uses them for its default behavior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub task: String,
    pub messages: Vec<ChatMessage>,
    pub sampling: SamplingParams,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, Value>,
}

impl GenerateRequest {
    pub fn new(task: impl Into<String>, messages: Vec<ChatMessage>, sampling: SamplingParams) -> Self {
        Self {
            task: task.into(),
            messages,
            sampling,
            metadata: BTreeMap::new(),
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.metadata.insert(key.to_string(), value.into());
        self
    }

    /// All text parts joined by newlines.
    pub fn flattened_text(&self) -> String {
        self.messages
            .iter()
            .flat_map(|m| &m.parts)
            .filter_map(|p| match p {
                Part::Text { text } => Some(text.as_str()),
                Part::Image { .. } => None,
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn images(&self) -> impl Iterator<Item = &str> {
        self.messages.iter().flat_map(|m| &m.parts).filter_map(|p| match p {
            Part::Image { image } => Some(image.as_str()),
            Part::Text { .. } => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlType {
    Tile,
    Depth,
    Softedge,
    Lineart,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlEntry {
    #[serde(rename = "type")]
    pub kind: ControlType,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderRequest {
    pub model_file: String,
    pub base_model: String,
    pub prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negative_prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames_uri: Option<String>,
    pub control: Vec<ControlEntry>,
    pub seed: u64,
    #[serde(default)]
    pub extras: BTreeMap<String, String>,
}

impl RenderRequest {
    pub fn validate(&self) -> Result<()> {
        if self.model_file.trim().is_empty() {
            return Err(Error::InvalidInput("render request without model_file".into()));
        }
        match (&self.frames, &self.frames_uri) {
            (Some(f), None) if !f.is_empty() => {}
            (None, Some(_)) => {}
            _ => {
                return Err(Error::InvalidInput(
                    "render request needs exactly one of non-empty inline frames or frames_uri".into(),
                ))
            }
        }
        let mut seen = Vec::new();
        for c in &self.control {
            if seen.contains(&c.kind) {
                return Err(Error::InvalidInput(format!("duplicate control type {:?}", c.kind)));
            }
            seen.push(c.kind);
            if !(0.0..=1.0).contains(&c.weight) {
                return Err(Error::InvalidInput(format!(
                    "control weight {} for {:?} outside [0, 1]",
                    c.weight, c.kind
                )));
            }
        }
        Ok(())
    }

    pub fn mean_weight(&self) -> f64 {
        if self.control.is_empty() {
            return 0.0;
        }
        let sum: f64 = self.control.iter().map(|c| c.weight).sum();
        (sum / self.control.len() as f64).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderResponse {
    pub frames: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Image,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub modality: Modality,
    pub items: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub vectors: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    AestheticI,
    DistortionI,
    AestheticV,
    DistortionV,
}

impl ScoreKind {
    /// Image-level kinds return one value per frame; video-level kinds one
    /// value for the whole sequence.
    pub fn is_image_level(self) -> bool {
        matches!(self, ScoreKind::AestheticI | ScoreKind::DistortionI)
    }

    pub fn name(self) -> &'static str {
        match self {
            ScoreKind::AestheticI => "aesthetic_i",
            ScoreKind::DistortionI => "distortion_i",
            ScoreKind::AestheticV => "aesthetic_v",
            ScoreKind::DistortionV => "distortion_v",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub kind: ScoreKind,
    pub frames: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
}
