//! Deterministic in-process model services driven by a scenario file.
//!
//! A scenario is an ordered rule list; the first rule matching a request
//! wins. Requests no rule matches get a default answer that is a pure
//! function of the request and the scenario seed:
//!
//! * render: `out = a*in + (1-a)*style_color`, `a` = mean control weight,
//!   `style_color` = first three bytes of sha256(model_file);
//! * style scorer: `100 - 200*|0.5 - mean(weights)|`;
//! * control refiner: every weight moved halfway toward 0.5;
//! * embed: text -> seeded hash vector, image -> 4x4 grid mean colors;
//! * score: mean BT.601 luma / 255.

use std::path::Path;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::protocol::*;
use super::{tasks, Transport};
use crate::error::{Error, Result};
use crate::frames::{self, Frame};
use crate::util;

pub const EMBED_DIM: usize = 48;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub rules: Vec<Rule>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Rule {
    pub endpoint: Endpoint,
    /// Matches `GenerateRequest::task`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    /// Regex over the flattened text parts (generate), the item text (embed)
    /// or the prompt (render).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
    /// [`Frame::content_hash`] of any image in the request.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_hash: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<ScoreKind>,
    /// Text for generate, number for score, vector for embed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<Value>,
    /// Answer with this HTTP status and an error body instead.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<u16>,
}

impl Default for Endpoint {
    fn default() -> Self {
        Endpoint::Text
    }
}

impl Rule {
    pub fn text(task: &str, pattern: Option<&str>, reply: &str) -> Self {
        Self {
            endpoint: Endpoint::Text,
            task: Some(task.into()),
            pattern: pattern.map(Into::into),
            response: Some(Value::String(reply.into())),
            ..Default::default()
        }
    }

    pub fn vision(task: &str, pattern: Option<&str>, reply: &str) -> Self {
        Self {
            endpoint: Endpoint::Vision,
            ..Self::text(task, pattern, reply)
        }
    }

    pub fn failing(endpoint: Endpoint, status: u16) -> Self {
        Self {
            endpoint,
            status: Some(status),
            ..Default::default()
        }
    }
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        util::read_json(path)
    }
}

struct CompiledRule {
    rule: Rule,
    pattern: Option<Regex>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoggedCall {
    pub endpoint: Endpoint,
    pub task: Option<String>,
    pub seed: Option<u64>,
    pub body_sha256: String,
}

pub struct MockBackend {
    seed: u64,
    rules: Vec<CompiledRule>,
    log: Mutex<Vec<LoggedCall>>,
}

type Reply = (u16, Vec<u8>);

fn error_reply(status: u16, code: &str, message: impl Into<String>) -> Reply {
    let body = ErrorBody {
        error: ErrorDetail {
            code: code.into(),
            message: message.into(),
        },
    };
    (status, serde_json::to_vec(&body).unwrap_or_default())
}

fn ok_reply<T: Serialize>(value: &T) -> Reply {
    match serde_json::to_vec(value) {
        Ok(body) => (200, body),
        Err(e) => error_reply(500, "internal", e.to_string()),
    }
}

impl MockBackend {
    pub fn new(scenario: Scenario) -> Result<Self> {
        let rules = scenario
            .rules
            .into_iter()
            .map(|rule| {
                let pattern = rule
                    .pattern
                    .as_deref()
                    .map(Regex::new)
                    .transpose()
                    .map_err(|e| Error::Config(format!("scenario rule pattern: {e}")))?;
                Ok(CompiledRule { rule, pattern })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            seed: scenario.seed,
            rules,
            log: Mutex::new(Vec::new()),
        })
    }

    pub fn with_defaults() -> Self {
        Self::new(Scenario::default()).expect("empty scenario compiles")
    }

    pub fn calls(&self) -> Vec<LoggedCall> {
        self.log.lock().unwrap().clone()
    }

    pub fn calls_to(&self, endpoint: Endpoint) -> Vec<LoggedCall> {
        self.calls().into_iter().filter(|c| c.endpoint == endpoint).collect()
    }

    pub fn clear_log(&self) {
        self.log.lock().unwrap().clear();
    }

    /// Handles one request body; returns the HTTP status and response body.
    pub fn handle(&self, endpoint: Endpoint, body: &[u8]) -> Reply {
        let mut entry = LoggedCall {
            endpoint,
            task: None,
            seed: None,
            body_sha256: util::sha256_hex(body),
        };
        let reply = match endpoint {
            Endpoint::Text | Endpoint::Vision => match serde_json::from_slice::<GenerateRequest>(body) {
                Ok(req) => {
                    entry.task = Some(req.task.clone());
                    entry.seed = req.sampling.seed;
                    self.generate(endpoint, &req, body)
                }
                Err(e) => error_reply(400, "bad_request", e.to_string()),
            },
            Endpoint::Render => match serde_json::from_slice::<RenderRequest>(body) {
                Ok(req) => {
                    entry.seed = Some(req.seed);
                    self.render(&req)
                }
                Err(e) => error_reply(400, "bad_request", e.to_string()),
            },
            Endpoint::Embed => match serde_json::from_slice::<EmbedRequest>(body) {
                Ok(req) => self.embed(&req),
                Err(e) => error_reply(400, "bad_request", e.to_string()),
            },
            Endpoint::Score => match serde_json::from_slice::<ScoreRequest>(body) {
                Ok(req) => self.score(&req),
                Err(e) => error_reply(400, "bad_request", e.to_string()),
            },
        };
        self.log.lock().unwrap().push(entry);
        reply
    }

    fn find_rule(&self, endpoint: Endpoint, task: Option<&str>, text: &str, hashes: &[String], kind: Option<ScoreKind>) -> Option<&Rule> {
        self.rules
            .iter()
            .find(|c| {
                let r = &c.rule;
                r.endpoint == endpoint
                    && r.task.as_deref().map_or(true, |t| Some(t) == task)
                    && c.pattern.as_ref().map_or(true, |p| p.is_match(text))
                    && r.image_hash.as_ref().map_or(true, |h| hashes.contains(h))
                    && r.kind.map_or(true, |k| Some(k) == kind)
            })
            .map(|c| &c.rule)
    }

    fn generate(&self, endpoint: Endpoint, req: &GenerateRequest, body: &[u8]) -> Reply {
        let mut images = Vec::new();
        for (i, data) in req.images().enumerate() {
            if endpoint == Endpoint::Text {
                return error_reply(400, "bad_request", "text endpoint does not accept images");
            }
            match decode_image(i, data) {
                Ok(f) => images.push(f),
                Err(e) => return error_reply(400, "bad_request", e.to_string()),
            }
        }
        let hashes: Vec<String> = images.iter().map(Frame::content_hash).collect();
        let text = req.flattened_text();
        if let Some(rule) = self.find_rule(endpoint, Some(&req.task), &text, &hashes, None) {
            if let Some(status) = rule.status {
                return error_reply(status, "scripted", "scripted failure");
            }
            let reply = match &rule.response {
                Some(Value::String(s)) => s.clone(),
                Some(Value::Object(o)) if o.get("text").is_some_and(Value::is_string) => {
                    o["text"].as_str().unwrap_or_default().to_string()
                }
                Some(other) => other.to_string(),
                None => String::new(),
            };
            return ok_reply(&GenerateResponse { text: reply });
        }
        let text = match (endpoint, req.task.as_str()) {
            (Endpoint::Text, tasks::IDENTIFY_STYLE) => default_identify(req),
            (Endpoint::Text, tasks::EXPERT_VOTE) | (Endpoint::Text, tasks::CHAIRMAN) => default_pick(req),
            (Endpoint::Text, tasks::TRANSLATE) => default_translate(req),
            (Endpoint::Text, tasks::CLASSIFY_CARD) => default_classify(req),
            (Endpoint::Vision, tasks::CAPTION) => default_caption(&images),
            (Endpoint::Vision, tasks::STYLE_SCORE) => default_score(req),
            (Endpoint::Vision, tasks::REFINE_WEIGHTS) => default_refine(req),
            _ => None,
        }
        .unwrap_or_else(|| {
            let mut seeded = self.seed.to_le_bytes().to_vec();
            seeded.extend_from_slice(body);
            format!("mock reply {}", &util::sha256_hex(&seeded)[..16])
        });
        ok_reply(&GenerateResponse { text })
    }

    fn render(&self, req: &RenderRequest) -> Reply {
        if let Err(e) = req.validate() {
            return error_reply(400, "bad_request", e.to_string());
        }
        let text = format!("{}\n{}", req.prompt, req.model_file);
        if let Some(rule) = self.find_rule(Endpoint::Render, None, &text, &[], None) {
            if let Some(status) = rule.status {
                return error_reply(status, "scripted", "scripted failure");
            }
        }
        let inputs = match load_render_inputs(req) {
            Ok(f) => f,
            Err(e) => return error_reply(400, "bad_request", e.to_string()),
        };
        let style = style_color(&req.model_file);
        let alpha = req.mean_weight();
        let mut out = Vec::with_capacity(inputs.len());
        for frame in &inputs {
            let pixels = frame
                .pixels
                .chunks_exact(3)
                .flat_map(|px| {
                    (0..3).map(move |c| {
                        (alpha * px[c] as f64 + (1.0 - alpha) * style[c] as f64)
                            .round()
                            .clamp(0.0, 255.0) as u8
                    })
                })
                .collect();
            let rendered = Frame {
                pixels,
                ..frame.clone()
            };
            match encode_image(&rendered) {
                Ok(s) => out.push(s),
                Err(e) => return error_reply(500, "internal", e.to_string()),
            }
        }
        ok_reply(&RenderResponse { frames: out })
    }

    fn embed(&self, req: &EmbedRequest) -> Reply {
        let mut vectors = Vec::with_capacity(req.items.len());
        for (i, item) in req.items.iter().enumerate() {
            let (text, hashes, frame) = match req.modality {
                Modality::Text => (item.as_str(), Vec::new(), None),
                Modality::Image => match decode_image(i, item) {
                    Ok(f) => ("", vec![f.content_hash()], Some(f)),
                    Err(e) => return error_reply(400, "bad_request", e.to_string()),
                },
            };
            if let Some(rule) = self.find_rule(Endpoint::Embed, None, text, &hashes, None) {
                if let Some(status) = rule.status {
                    return error_reply(status, "scripted", "scripted failure");
                }
                match rule.response.clone().map(serde_json::from_value::<Vec<f64>>) {
                    Some(Ok(v)) => {
                        vectors.push(normalize(v));
                        continue;
                    }
                    _ => return error_reply(500, "scenario", "embed rule response must be a number array"),
                }
            }
            vectors.push(match frame {
                Some(f) => image_embedding(&f),
                None => text_embedding(self.seed, text),
            });
        }
        ok_reply(&EmbedResponse { vectors })
    }

    fn score(&self, req: &ScoreRequest) -> Reply {
        if req.frames.is_empty() {
            return error_reply(400, "bad_request", "no frames to score");
        }
        let mut frames = Vec::with_capacity(req.frames.len());
        for (i, data) in req.frames.iter().enumerate() {
            match decode_image(i, data) {
                Ok(f) => frames.push(f),
                Err(e) => return error_reply(400, "bad_request", e.to_string()),
            }
        }
        let hashes: Vec<String> = frames.iter().map(Frame::content_hash).collect();
        let n_values = if req.kind.is_image_level() { frames.len() } else { 1 };
        if let Some(rule) = self.find_rule(Endpoint::Score, None, "", &hashes, Some(req.kind)) {
            if let Some(status) = rule.status {
                return error_reply(status, "scripted", "scripted failure");
            }
            return match rule.response.as_ref().and_then(Value::as_f64) {
                Some(v) => ok_reply(&ScoreResponse {
                    values: vec![v; n_values],
                }),
                None => error_reply(500, "scenario", "score rule response must be a number"),
            };
        }
        let per_frame: Vec<f64> = frames.iter().map(|f| mean(&f.luma()) / 255.0).collect();
        let values = if req.kind.is_image_level() {
            per_frame
        } else {
            vec![mean(&per_frame)]
        };
        ok_reply(&ScoreResponse { values })
    }
}

impl Transport for MockBackend {
    fn post(&self, endpoint: Endpoint, body: &[u8]) -> Result<Vec<u8>> {
        let (status, reply) = self.handle(endpoint, body);
        if (200..300).contains(&status) {
            Ok(reply)
        } else {
            Err(Error::Status {
                endpoint: endpoint.to_string(),
                status,
                body: String::from_utf8_lossy(&reply).into_owned(),
            })
        }
    }
}

fn load_render_inputs(req: &RenderRequest) -> Result<Vec<Frame>> {
    if let Some(inline) = &req.frames {
        return inline.iter().enumerate().map(|(i, d)| decode_image(i, d)).collect();
    }
    let dir = super::client::manifest_dir_from_uri(req.frames_uri.as_deref().unwrap_or_default())?;
    frames::load_manifest(&dir)?.read_all()
}

pub fn style_color(model_file: &str) -> [u8; 3] {
    let digest = util::sha256_hex(model_file.as_bytes());
    let bytes = hex::decode(&digest[..6]).expect("hex digest");
    [bytes[0], bytes[1], bytes[2]]
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn normalize(v: Vec<f64>) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.into_iter().map(|x| x / norm).collect()
    } else {
        v
    }
}

pub fn text_embedding(seed: u64, text: &str) -> Vec<f64> {
    let digest = util::sha256_hex(format!("{seed}:text:{text}").as_bytes());
    let mut key = [0u8; 32];
    key.copy_from_slice(&hex::decode(digest).expect("hex digest"));
    let mut rng = ChaCha8Rng::from_seed(key);
    normalize((0..EMBED_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

pub fn image_embedding(frame: &Frame) -> Vec<f64> {
    let (w, h) = (frame.width as usize, frame.height as usize);
    let mut sums = vec![0.0; EMBED_DIM];
    let mut counts = vec![0usize; 16];
    for y in 0..h {
        for x in 0..w {
            let cell = (y * 4 / h) * 4 + x * 4 / w;
            let px = frame.pixel(x as u32, y as u32);
            for c in 0..3 {
                sums[cell * 3 + c] += px[c] as f64 / 255.0;
            }
            counts[cell] += 1;
        }
    }
    let v: Vec<f64> = sums
        .iter()
        .enumerate()
        .map(|(i, s)| s / counts[i / 3].max(1) as f64)
        .collect();
    if v.iter().all(|x| *x == 0.0) {
        let mut unit = vec![0.0; EMBED_DIM];
        unit[0] = 1.0;
        return unit;
    }
    normalize(v)
}

const STOPWORDS: &[&str] = &["a", "an", "the", "of", "in", "and", "style", "to", "with", "on", "for"];

pub(crate) fn tokens(s: &str) -> Vec<String> {
    s.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty() && !STOPWORDS.contains(t))
        .map(String::from)
        .collect()
}

fn meta_str<'a>(req: &'a GenerateRequest, key: &str) -> Option<&'a str> {
    req.metadata.get(key).and_then(Value::as_str)
}

fn default_identify(req: &GenerateRequest) -> Option<String> {
    let query = meta_str(req, "query")?.to_lowercase();
    let cleaned: String = query
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '-' { c } else { ' ' })
        .collect();
    let words: Vec<&str> = cleaned.split_whitespace().collect();
    let style = match words.iter().position(|w| *w == "style") {
        Some(i) => {
            let start = i.saturating_sub(3);
            let mut phrase: Vec<&str> = words[start..i]
                .iter()
                .copied()
                .skip_while(|w| STOPWORDS.contains(w) || ["see", "like", "love", "would"].contains(w))
                .collect();
            phrase.push("style");
            phrase.join(" ")
        }
        None => {
            let mut phrase: Vec<&str> = words.iter().copied().filter(|w| !STOPWORDS.contains(w)).take(3).collect();
            phrase.push("style");
            phrase.join(" ")
        }
    };
    let kind = if ["perhaps", "maybe", "might"].iter().any(|w| words.contains(w)) {
        "hypothesis"
    } else if ["render", "make", "turn", "convert"].contains(words.first().unwrap_or(&"")) {
        "instruction"
    } else if query.contains("would love") || query.contains("inspired") {
        "inspiration"
    } else {
        "prompt"
    };
    Some(json!({ "style": style, "kind": kind }).to_string())
}

fn candidate_list(req: &GenerateRequest) -> Vec<(String, String)> {
    req.metadata
        .get("candidates")
        .and_then(Value::as_array)
        .map(|list| {
            list.iter()
                .filter_map(|c| {
                    let name = c.get("name")?.as_str()?.to_string();
                    let hint = c.get("hint").and_then(Value::as_str).unwrap_or_default().to_string();
                    Some((name, hint))
                })
                .collect()
        })
        .unwrap_or_default()
}

fn default_pick(req: &GenerateRequest) -> Option<String> {
    let candidates = candidate_list(req);
    if candidates.is_empty() {
        return None;
    }
    if let Some(votes) = req.metadata.get("votes").and_then(Value::as_array) {
        let valid: Vec<&str> = votes.iter().filter_map(Value::as_str).collect();
        let best = candidates
            .iter()
            .map(|(name, _)| (name, valid.iter().filter(|v| *v == name).count()))
            .fold(None::<(&String, usize)>, |acc, (n, c)| match acc {
                Some((_, best)) if best >= c => acc,
                _ => Some((n, c)),
            });
        if let Some((name, count)) = best {
            if count > 0 {
                return Some(name.clone());
            }
        }
    }
    let wanted = tokens(meta_str(req, "style").unwrap_or_default());
    let mut best = (&candidates[0].0, 0usize);
    for (name, hint) in &candidates {
        let have = tokens(&format!("{name} {hint}"));
        let overlap = wanted.iter().filter(|t| have.contains(t)).count();
        if overlap > best.1 {
            best = (name, overlap);
        }
    }
    Some(best.0.clone())
}

fn default_translate(req: &GenerateRequest) -> Option<String> {
    let caption = meta_str(req, "caption")?.to_lowercase();
    let splitter = Regex::new(r"\s+(?:on|with|and|in)\s+|[,.;]").expect("static regex");
    let mut tags: Vec<String> = splitter
        .split(&caption)
        .map(|s| {
            s.trim()
                .trim_start_matches("a ")
                .trim_start_matches("an ")
                .trim_start_matches("the ")
                .to_string()
        })
        .filter(|s| !s.is_empty())
        .collect();
    tags.push("high quality".into());
    Some(tags.join(", "))
}

fn default_classify(req: &GenerateRequest) -> Option<String> {
    let tags: Vec<String> = req
        .metadata
        .get("tags")?
        .as_array()?
        .iter()
        .filter_map(|t| t.as_str().map(str::to_lowercase))
        .collect();
    let class = if tags.iter().any(|t| t.contains("realistic")) {
        "Realistic"
    } else {
        "Artistic"
    };
    let style = tags
        .iter()
        .find(|t| *t != "artistic" && *t != "realistic")
        .map(|t| format!("{} style", t.trim_end_matches(" style")))
        .unwrap_or_else(|| format!("{} style", class.to_lowercase()));
    Some(json!({ "class": class, "style": style }).to_string())
}

fn default_caption(images: &[Frame]) -> Option<String> {
    if images.is_empty() {
        return None;
    }
    let mut sum = [0u64; 3];
    let mut n = 0u64;
    for f in images {
        for px in f.pixels.chunks_exact(3) {
            for c in 0..3 {
                sum[c] += px[c] as u64;
            }
            n += 1;
        }
    }
    let avg = sum.map(|s| s / n.max(1));
    Some(format!(
        "a scene dominated by rgb({}, {}, {}) tones across {} keyframes",
        avg[0],
        avg[1],
        avg[2],
        images.len()
    ))
}

fn weight_values(v: &Value) -> Option<[f64; 4]> {
    let get = |k: &str| v.get(k).and_then(Value::as_f64);
    Some([get("tile")?, get("depth")?, get("softedge")?, get("lineart")?])
}

fn default_score(req: &GenerateRequest) -> Option<String> {
    let w = weight_values(req.metadata.get("weights")?)?;
    let m = w.iter().sum::<f64>() / 4.0;
    let score = (100.0 - 200.0 * (0.5 - m).abs()).round().clamp(0.0, 100.0) as i64;
    Some(json!({ "score": score, "reasons": format!("mock scorer, mean control weight {m:.3}") }).to_string())
}

fn default_refine(req: &GenerateRequest) -> Option<String> {
    let history = req.metadata.get("history")?.as_array()?;
    let w = weight_values(history.last()?.get("weights")?)?;
    let nudged = w.map(|x| x + (0.5 - x) / 2.0);
    Some(
        json!({
            "tile": nudged[0],
            "depth": nudged[1],
            "softedge": nudged[2],
            "lineart": nudged[3],
        })
        .to_string(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn post(mock: &MockBackend, e: Endpoint, body: Value) -> (u16, Value) {
        let (status, bytes) = mock.handle(e, body.to_string().as_bytes());
        (status, serde_json::from_slice(&bytes).unwrap())
    }

    fn gen(task: &str, text: &str) -> Value {
        serde_json::to_value(GenerateRequest::new(task, vec![ChatMessage::user(text)], SamplingParams::default())).unwrap()
    }

    #[test]
    fn scripted_rule_wins() {
        let mock = MockBackend::new(Scenario {
            seed: 0,
            rules: vec![Rule::text("chat", Some("^ping$"), "pong")],
        })
        .unwrap();
        let (status, body) = post(&mock, Endpoint::Text, gen("chat", "ping"));
        assert_eq!(status, 200);
        assert_eq!(body["text"], "pong");
        let (_, body) = post(&mock, Endpoint::Text, gen("chat", "pingping"));
        assert_ne!(body["text"], "pong");
    }

    #[test]
    fn fallback_is_deterministic_and_seed_dependent() {
        let a = MockBackend::with_defaults();
        let b = MockBackend::new(Scenario { seed: 9, rules: vec![] }).unwrap();
        let r1 = post(&a, Endpoint::Text, gen("chat", "hello"));
        let r2 = post(&a, Endpoint::Text, gen("chat", "hello"));
        let r3 = post(&b, Endpoint::Text, gen("chat", "hello"));
        assert_eq!(r1, r2);
        assert_ne!(r1, r3);
    }

    #[test]
    fn text_endpoint_rejects_images() {
        let mock = MockBackend::with_defaults();
        let msg = ChatMessage::user_with_images("describe", &[Frame::filled(0, 4, 4, [1, 2, 3])]).unwrap();
        let req = GenerateRequest::new("chat", vec![msg], SamplingParams::default());
        let (status, _) = mock.handle(Endpoint::Text, &serde_json::to_vec(&req).unwrap());
        assert_eq!(status, 400);
    }

    #[test]
    fn render_blend_contract() {
        let mock = MockBackend::with_defaults();
        let input = Frame::filled(0, 4, 4, [200, 100, 0]);
        let style = style_color("m.safetensors");
        for (w, expect) in [(1.0, [200.0, 100.0, 0.0]), (0.0, style.map(f64::from)), (0.25, [0.0; 3])] {
            let req = RenderRequest {
                model_file: "m.safetensors".into(),
                base_model: "SD 1.5".into(),
                prompt: "p".into(),
                negative_prompt: None,
                frames: Some(vec![encode_image(&input).unwrap()]),
                frames_uri: None,
                control: [ControlType::Tile, ControlType::Depth, ControlType::Softedge, ControlType::Lineart]
                    .map(|kind| ControlEntry { kind, weight: w })
                    .to_vec(),
                seed: 0,
                extras: BTreeMap::new(),
            };
            let (status, body) = post(&mock, Endpoint::Render, serde_json::to_value(&req).unwrap());
            assert_eq!(status, 200);
            let out = decode_image(0, body["frames"][0].as_str().unwrap()).unwrap();
            let expect = if w == 0.25 {
                [0, 1, 2].map(|c| (0.25 * input.pixels[c] as f64 + 0.75 * style[c] as f64).round())
            } else {
                expect
            };
            assert_eq!(out.pixel(2, 2).map(f64::from), expect, "weight {w}");
        }
    }

    #[test]
    fn default_scorer_and_refiner() {
        let mock = MockBackend::with_defaults();
        let weights = json!({"tile": 0.2, "depth": 0.2, "softedge": 0.2, "lineart": 0.2});
        let mut req = gen(tasks::STYLE_SCORE, "score it");
        req["metadata"] = json!({ "weights": weights });
        let (_, body) = post(&mock, Endpoint::Vision, req);
        let parsed: Value = serde_json::from_str(body["text"].as_str().unwrap()).unwrap();
        assert_eq!(parsed["score"], 40);

        let mut req = gen(tasks::REFINE_WEIGHTS, "refine");
        req["metadata"] = json!({ "history": [{ "weights": weights, "score": 40 }] });
        let (_, body) = post(&mock, Endpoint::Vision, req);
        let parsed: Value = serde_json::from_str(body["text"].as_str().unwrap()).unwrap();
        assert!((parsed["tile"].as_f64().unwrap() - 0.35).abs() < 1e-12);
    }

    #[test]
    fn embeddings_are_unit_and_stable() {
        let a = text_embedding(0, "pixel art");
        assert_eq!(a, text_embedding(0, "pixel art"));
        assert!((a.iter().map(|x| x * x).sum::<f64>() - 1.0).abs() < 1e-9);
        let img = image_embedding(&Frame::filled(0, 8, 8, [0, 0, 0]));
        assert_eq!(img[0], 1.0);
    }

    #[test]
    fn score_default_is_luma() {
        let mock = MockBackend::with_defaults();
        let frames = vec![encode_image(&Frame::filled(0, 4, 4, [128; 3])).unwrap(); 2];
        let (_, body) = post(&mock, Endpoint::Score, json!({"kind": "aesthetic_i", "frames": frames}));
        let values: Vec<f64> = serde_json::from_value(body["values"].clone()).unwrap();
        assert_eq!(values.len(), 2);
        assert!((values[0] - 128.0 / 255.0).abs() < 1e-9);
    }

    #[test]
    fn default_pick_uses_hints() {
        let req = GenerateRequest::new(tasks::EXPERT_VOTE, vec![ChatMessage::user("x")], SamplingParams::default())
            .with_meta("style", "western realistic style")
            .with_meta(
                "candidates",
                json!([{"name": "Artistic", "hint": "oil painting style"}, {"name": "Realistic", "hint": "western realistic style"}]),
            );
        assert_eq!(default_pick(&req).unwrap(), "Realistic");
    }

    #[test]
    fn default_identify_extracts_phrase() {
        let req = |q: &str| {
            GenerateRequest::new(tasks::IDENTIFY_STYLE, vec![ChatMessage::user(q)], SamplingParams::default())
                .with_meta("query", q)
        };
        let v: Value = serde_json::from_str(&default_identify(&req("Pixel art style.")).unwrap()).unwrap();
        assert_eq!(v["style"], "pixel art style");
        assert_eq!(v["kind"], "prompt");
        let v: Value = serde_json::from_str(
            &default_identify(&req("I would love to see a western realistic style video set in a baseball game.")).unwrap(),
        )
        .unwrap();
        assert_eq!(v["style"], "western realistic style");
        assert_eq!(v["kind"], "inspiration");
    }
}
