use std::io::Cursor;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use tracing::warn;

use super::protocol::*;
use super::Transport;
use crate::error::{Error, Result};
use crate::frames::{self, Frame};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub retries: u32,
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            retries: 2,
            backoff_ms: 200,
        }
    }
}

/// Typed client over a [`Transport`]. Every call serializes its request once
/// and resubmits the same bytes on transient failures.
#[derive(Clone)]
pub struct Client {
    transport: Arc<dyn Transport>,
    retry: RetryPolicy,
}

impl Client {
    pub fn new(transport: Arc<dyn Transport>, retry: RetryPolicy) -> Self {
        Self { transport, retry }
    }

    pub fn transport(&self) -> &Arc<dyn Transport> {
        &self.transport
    }

    fn call<Req: Serialize, Resp: DeserializeOwned>(&self, endpoint: Endpoint, req: &Req) -> Result<Resp> {
        let body = serde_json::to_vec(req).map_err(|e| Error::json("request", e))?;
        let mut attempt = 0;
        let bytes = loop {
            match self.transport.post(endpoint, &body) {
                Ok(bytes) => break bytes,
                Err(e) if e.is_transient() && attempt < self.retry.retries => {
                    let delay = self.retry.backoff_ms.saturating_mul(1 << attempt.min(16));
                    warn!(%endpoint, attempt, error = %e, "transient backend failure, retrying in {delay} ms");
                    thread::sleep(Duration::from_millis(delay));
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        };
        serde_json::from_slice(&bytes).map_err(|e| Error::Protocol {
            endpoint: endpoint.to_string(),
            message: format!("malformed response body: {e}"),
        })
    }

    pub fn text_generate(&self, req: &GenerateRequest) -> Result<String> {
        if req.messages.is_empty() {
            return Err(Error::InvalidInput("text request without messages".into()));
        }
        if req.messages.iter().any(ChatMessage::has_images) {
            return Err(Error::InvalidInput("text endpoint does not accept image parts".into()));
        }
        req.sampling.validate()?;
        let resp: GenerateResponse = self.call(Endpoint::Text, req)?;
        Ok(resp.text)
    }

    pub fn vision_generate(&self, req: &GenerateRequest) -> Result<String> {
        if req.messages.is_empty() {
            return Err(Error::InvalidInput("vision request without messages".into()));
        }
        if req.images().any(str::is_empty) {
            return Err(Error::InvalidInput("vision request has a 0-byte image part".into()));
        }
        req.sampling.validate()?;
        let resp: GenerateResponse = self.call(Endpoint::Vision, req)?;
        Ok(resp.text)
    }

    /// Renders and checks that the server preserved frame count and size.
    pub fn render(&self, req: &RenderRequest) -> Result<Vec<Frame>> {
        req.validate()?;
        let (count, dims) = input_shape(req)?;
        let resp: RenderResponse = self.call(Endpoint::Render, req)?;
        let violation = |message: String| Error::Protocol {
            endpoint: Endpoint::Render.to_string(),
            message,
        };
        if resp.frames.len() != count {
            return Err(violation(format!(
                "sent {count} frames, received {}",
                resp.frames.len()
            )));
        }
        resp.frames
            .iter()
            .enumerate()
            .map(|(i, data)| {
                let frame = decode_image(i, data).map_err(|e| violation(e.to_string()))?;
                if (frame.width, frame.height) != dims {
                    return Err(violation(format!(
                        "frame {i} is {}x{}, expected {}x{}",
                        frame.width, frame.height, dims.0, dims.1
                    )));
                }
                Ok(frame)
            })
            .collect()
    }

    /// Unit-normalized embeddings, one per item.
    pub fn embed(&self, modality: Modality, items: Vec<String>) -> Result<Vec<Vec<f64>>> {
        if items.is_empty() {
            return Ok(Vec::new());
        }
        let n = items.len();
        let resp: EmbedResponse = self.call(Endpoint::Embed, &EmbedRequest { modality, items })?;
        let violation = |message: String| Error::Protocol {
            endpoint: Endpoint::Embed.to_string(),
            message,
        };
        if resp.vectors.len() != n {
            return Err(violation(format!("sent {n} items, received {} vectors", resp.vectors.len())));
        }
        let dim = resp.vectors[0].len();
        let mut out = Vec::with_capacity(n);
        for (i, v) in resp.vectors.into_iter().enumerate() {
            if v.len() != dim || dim == 0 {
                return Err(violation(format!("vector {i} has dimension {}, expected {dim}", v.len())));
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(norm > 0.0) || !norm.is_finite() {
                return Err(violation(format!("vector {i} cannot be normalized")));
            }
            out.push(v.into_iter().map(|x| x / norm).collect());
        }
        Ok(out)
    }

    pub fn embed_texts(&self, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        self.embed(Modality::Text, texts.to_vec())
    }

    pub fn embed_frames(&self, frames: &[Frame]) -> Result<Vec<Vec<f64>>> {
        let items = frames.iter().map(encode_image).collect::<Result<Vec<_>>>()?;
        self.embed(Modality::Image, items)
    }

    /// One score in `[0, 1]`; image-level kinds are averaged client-side
    /// over the per-frame values.
    pub fn score_frames(&self, kind: ScoreKind, frames: &[Frame]) -> Result<f64> {
        if frames.is_empty() {
            return Err(Error::InvalidInput("cannot score an empty frame list".into()));
        }
        let encoded = frames.iter().map(encode_image).collect::<Result<Vec<_>>>()?;
        let resp: ScoreResponse = self.call(Endpoint::Score, &ScoreRequest { kind, frames: encoded })?;
        let expected = if kind.is_image_level() { frames.len() } else { 1 };
        let violation = |message: String| Error::Protocol {
            endpoint: Endpoint::Score.to_string(),
            message,
        };
        if resp.values.len() != expected {
            return Err(violation(format!(
                "{} expects {expected} values, received {}",
                kind.name(),
                resp.values.len()
            )));
        }
        if let Some(bad) = resp.values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(violation(format!("{} value {bad} outside [0, 1]", kind.name())));
        }
        Ok(resp.values.iter().sum::<f64>() / resp.values.len() as f64)
    }
}

fn input_shape(req: &RenderRequest) -> Result<(usize, (u32, u32))> {
    if let Some(inline) = &req.frames {
        use base64::Engine;
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(&inline[0])
            .map_err(|e| Error::InvalidInput(format!("render frame 0: bad base64: {e}")))?;
        let dims = image::ImageReader::with_format(Cursor::new(bytes), image::ImageFormat::Png)
            .into_dimensions()?;
        return Ok((inline.len(), dims));
    }
    let uri = req.frames_uri.as_deref().unwrap_or_default();
    let manifest = frames::load_manifest(&manifest_dir_from_uri(uri)?)?;
    Ok((manifest.frame_count, (manifest.width, manifest.height)))
}

/// `file:///abs/dir` -> `/abs/dir`; only local manifests are supported.
pub fn manifest_dir_from_uri(uri: &str) -> Result<std::path::PathBuf> {
    uri.strip_prefix("file://")
        .map(std::path::PathBuf::from)
        .ok_or_else(|| Error::InvalidInput(format!("unsupported frames_uri {uri:?}")))
}
