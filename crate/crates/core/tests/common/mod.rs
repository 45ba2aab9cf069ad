#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::{Arc, Mutex};

use vstylist::backends::protocol::{Endpoint, GenerateRequest, GenerateResponse};
use vstylist::backends::{Client, MockBackend, RetryPolicy, Rule, Scenario, Transport};
use vstylist::config::Config;
use vstylist::frames::{self, FrameManifest, SceneKind, SceneSpec};
use vstylist::Result;

pub const NO_RETRY: RetryPolicy = RetryPolicy {
    retries: 0,
    backoff_ms: 0,
};

pub fn mock_client(rules: Vec<Rule>) -> (Client, Arc<MockBackend>) {
    let mock = Arc::new(MockBackend::new(Scenario { seed: 0, rules }).unwrap());
    (Client::new(mock.clone(), NO_RETRY), mock)
}

type Hook = dyn Fn(Endpoint, &GenerateRequest) -> Option<String> + Send + Sync;

/// Answers generate calls from a closure when it returns `Some`, and falls
/// through to the wrapped mock otherwise.
pub struct Hooked {
    pub inner: Arc<MockBackend>,
    hook: Box<Hook>,
}

impl Hooked {
    pub fn new(inner: Arc<MockBackend>, hook: impl Fn(Endpoint, &GenerateRequest) -> Option<String> + Send + Sync + 'static) -> Self {
        Self {
            inner,
            hook: Box::new(hook),
        }
    }
}

impl Transport for Hooked {
    fn post(&self, endpoint: Endpoint, body: &[u8]) -> Result<Vec<u8>> {
        if matches!(endpoint, Endpoint::Text | Endpoint::Vision) {
            let req: GenerateRequest = serde_json::from_slice(body).unwrap();
            if let Some(text) = (self.hook)(endpoint, &req) {
                return Ok(serde_json::to_vec(&GenerateResponse { text }).unwrap());
            }
        }
        self.inner.post(endpoint, body)
    }
}

/// Client whose style scorer replies with the given scores in order.
pub fn scripted_scores(scores: Vec<u32>) -> (Client, Arc<MockBackend>) {
    let mock = Arc::new(MockBackend::with_defaults());
    let queue = Mutex::new(scores.into_iter());
    let hooked = Hooked::new(mock.clone(), move |_, req| {
        (req.task == "style_score").then(|| {
            let s = queue.lock().unwrap().next().expect("more score calls than scripted scores");
            format!("{{\"score\": {s}, \"reasons\": \"scripted\"}}")
        })
    });
    (Client::new(Arc::new(hooked), NO_RETRY), mock)
}

pub fn three_scenes() -> Vec<SceneSpec> {
    vec![
        SceneSpec {
            duration_frames: 10,
            kind: SceneKind::MovingRectangle,
            palette: [20, 40, 200],
            motion: 1,
        },
        SceneSpec {
            duration_frames: 12,
            kind: SceneKind::HorizontalGradient,
            palette: [200, 160, 40],
            motion: 0,
        },
        SceneSpec {
            duration_frames: 9,
            kind: SceneKind::Solid,
            palette: [60, 230, 140],
            motion: 0,
        },
    ]
}

pub const FIXTURE_CUTS: [usize; 2] = [10, 22];
pub const FIXTURE_FRAMES: usize = 31;

pub fn fixture_video(dir: &Path) -> FrameManifest {
    frames::generate_synthetic(&three_scenes(), 12.0, 24, 16, 7, dir).unwrap()
}

pub fn pixel_art_rules() -> Vec<Rule> {
    vec![
        Rule::text(
            "identify_style",
            None,
            r#"{"style": "pixel art style", "kind": "prompt"}"#,
        ),
        Rule::text("expert_vote", Some("Current level: class"), "Artistic"),
        Rule::text("chairman", Some("Current level: class"), "Artistic"),
        Rule::text("expert_vote", Some("Current level: style"), "pixel art style"),
        Rule::text("chairman", Some("Current level: style"), "pixel art style"),
        Rule::text("expert_vote", Some("Current level: model"), "pixel_f2.safetensors"),
        Rule::text("chairman", Some("Current level: model"), "pixel_f2.safetensors"),
    ]
}

pub fn level3_failure_rules() -> Vec<Rule> {
    let mut rules = vec![
        Rule::text("expert_vote", Some("Current level: model"), "none of these fit"),
        Rule::text("chairman", Some("Current level: model"), "I cannot decide"),
    ];
    rules.extend(pixel_art_rules());
    rules
}

/// Fast job config: in-process mocks, no backoff.
pub fn test_config() -> Config {
    let mut c = Config::default();
    c.backends.set_all("mock://");
    c.backends.retries = 0;
    c.backends.backoff_ms = 0;
    c
}

/// Every file under `dir`, keyed by its path relative to `dir`.
pub fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().replace('\\', "/");
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

pub fn differing(a: &BTreeMap<String, Vec<u8>>, b: &BTreeMap<String, Vec<u8>>) -> Vec<String> {
    let mut keys: Vec<&String> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .filter(|k| a.get(*k) != b.get(*k))
        .cloned()
        .collect()
}
