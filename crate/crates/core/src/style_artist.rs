//! Shot rendering with the render -> score -> refine reflection loop.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::{info, warn};

use crate::backends::protocol::{
    encode_image, ChatMessage, ControlEntry, ControlType, GenerateRequest, RenderRequest, Role, SamplingParams,
};
use crate::backends::{tasks, Client};
use crate::error::{Error, Result};
use crate::frames::{self, Frame};
use crate::shot_detector::Shot;
use crate::templates::{fill, Templates};
use crate::util;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlWeights {
    pub tile: f64,
    pub depth: f64,
    pub softedge: f64,
    pub lineart: f64,
}

impl ControlWeights {
    pub fn uniform(v: f64) -> Self {
        Self {
            tile: v,
            depth: v,
            softedge: v,
            lineart: v,
        }
        .clamped()
    }

    pub fn clamped(self) -> Self {
        let c = |x: f64| if x.is_nan() { 0.0 } else { x.clamp(0.0, 1.0) };
        Self {
            tile: c(self.tile),
            depth: c(self.depth),
            softedge: c(self.softedge),
            lineart: c(self.lineart),
        }
    }

    pub fn values(&self) -> [f64; 4] {
        [self.tile, self.depth, self.softedge, self.lineart]
    }

    pub fn mean(&self) -> f64 {
        self.values().iter().sum::<f64>() / 4.0
    }

    /// Each weight moved halfway toward 0.5.
    pub fn nudged(&self) -> Self {
        let n = |x: f64| x + (0.5 - x) / 2.0;
        Self {
            tile: n(self.tile),
            depth: n(self.depth),
            softedge: n(self.softedge),
            lineart: n(self.lineart),
        }
    }

    pub fn control_entries(&self) -> Vec<ControlEntry> {
        [
            (ControlType::Tile, self.tile),
            (ControlType::Depth, self.depth),
            (ControlType::Softedge, self.softedge),
            (ControlType::Lineart, self.lineart),
        ]
        .into_iter()
        .map(|(kind, weight)| ControlEntry { kind, weight })
        .collect()
    }

    fn from_reply(obj: &serde_json::Map<String, Value>) -> Option<Self> {
        let get = |k: &str| obj.get(k).and_then(Value::as_f64);
        Some(
            Self {
                tile: get("tile")?,
                depth: get("depth")?,
                softedge: get("softedge")?,
                lineart: get("lineart")?,
            }
            .clamped(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReflectionParams {
    pub threshold: u32,
    pub max_rounds: usize,
    pub init_low: f64,
    pub init_high: f64,
    pub seed: u64,
    pub scorer_keyframes: usize,
}

impl Default for ReflectionParams {
    fn default() -> Self {
        Self {
            threshold: 60,
            max_rounds: 3,
            init_low: 0.1,
            init_high: 0.3,
            seed: 0,
            scorer_keyframes: 3,
        }
    }
}

impl ReflectionParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("reflection: {m}")));
        if self.threshold > 100 {
            return bad(format!("threshold {} above 100", self.threshold));
        }
        if self.max_rounds == 0 {
            return bad("max_rounds must be at least 1".into());
        }
        if !(0.0 <= self.init_low && self.init_low <= self.init_high && self.init_high <= 1.0) {
            return bad(format!("init range [{}, {}] not inside [0, 1]", self.init_low, self.init_high));
        }
        if self.scorer_keyframes == 0 {
            return bad("scorer_keyframes must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSource {
    Init,
    Refiner,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionRound {
    pub round: usize,
    pub weights: ControlWeights,
    pub weight_source: WeightSource,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub refiner_replies: Vec<String>,
    pub score: u32,
    pub scorer_reply: String,
    pub scorer_retries: u32,
    pub frames_ref: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionTrace {
    pub shot_index: usize,
    pub params: ReflectionParams,
    pub model_file: String,
    pub prompt: String,
    pub render_seed: u64,
    pub rounds: Vec<ReflectionRound>,
    pub best_round: usize,
    pub accepted_early: bool,
}

/// Everything needed to render one shot.
#[derive(Debug, Clone)]
pub struct ShotTask<'a> {
    pub shot: Shot,
    pub frames: &'a [Frame],
    pub prompt: &'a str,
    pub style: &'a str,
    pub model_file: &'a str,
    pub base_model: &'a str,
    pub extras: &'a BTreeMap<String, String>,
    /// Frame rate recorded with each round's frames.
    pub fps: f64,
}

pub fn init_weights(params: &ReflectionParams, rng: &mut impl Rng) -> ControlWeights {
    let v = if params.init_low == params.init_high {
        params.init_low
    } else {
        rng.gen_range(params.init_low..=params.init_high)
    };
    ControlWeights::uniform(v)
}

/// First, middle and last frame for k = 3.
pub fn keyframes_of(frames: &[Frame], k: usize) -> Vec<Frame> {
    if frames.is_empty() {
        return Vec::new();
    }
    let whole = Shot {
        index: 0,
        start_frame: 0,
        end_frame: frames.len(),
    };
    let mut idx = frames::keyframe_indices(&whole, k.max(1));
    idx.dedup();
    idx.into_iter().map(|i| frames[i].clone()).collect()
}

pub fn render_shot(client: &Client, task: &ShotTask<'_>, weights: &ControlWeights, seed: u64) -> Result<Vec<Frame>> {
    let req = RenderRequest {
        model_file: task.model_file.to_string(),
        base_model: task.base_model.to_string(),
        prompt: task.prompt.to_string(),
        negative_prompt: None,
        frames: Some(task.frames.iter().map(encode_image).collect::<Result<_>>()?),
        frames_uri: None,
        control: weights.control_entries(),
        seed,
        extras: task.extras.clone(),
    };
    let mut out = client.render(&req)?;
    for (i, f) in out.iter_mut().enumerate() {
        f.index = task.frames[i].index;
    }
    Ok(out)
}

fn parse_score(reply: &str) -> Option<u32> {
    let obj = util::extract_json_object(reply)?;
    let raw = match obj.get("score")? {
        Value::Number(n) => n.as_f64()?,
        Value::String(s) => s.trim().parse().ok()?,
        _ => return None,
    };
    raw.is_finite().then(|| raw.round().clamp(0.0, 100.0) as u32)
}

/// Returns (score, raw reply, retries used).
pub fn score_style(
    client: &Client,
    templates: &Templates,
    sampling: &SamplingParams,
    frames: &[Frame],
    style: &str,
    k: usize,
    weights: &ControlWeights,
) -> Result<(u32, String, u32)> {
    let keyframes = keyframes_of(frames, k);
    if keyframes.is_empty() {
        return Err(Error::InvalidInput("no frames to score".into()));
    }
    let mut messages = vec![
        ChatMessage::system(templates.scorer_system.clone()),
        ChatMessage::user_with_images(fill(&templates.scorer_user, &[("style", style)]), &keyframes)?,
    ];
    let mut last = String::new();
    for attempt in 0..2u32 {
        let req = GenerateRequest::new(tasks::STYLE_SCORE, messages.clone(), *sampling)
            .with_meta("style", style)
            .with_meta("weights", json!(weights))
            .with_meta("attempt", attempt + 1);
        last = client.vision_generate(&req)?;
        if let Some(score) = parse_score(&last) {
            return Ok((score, last, attempt));
        }
        warn!(attempt, "style score reply has no usable JSON");
        messages.push(ChatMessage::text(Role::Assistant, last.clone()));
        messages.push(ChatMessage::user(templates.scorer_retry.clone()));
    }
    Err(Error::Unparseable {
        task: tasks::STYLE_SCORE.into(),
        reply: last,
    })
}

/// New weights from the refiner, or the latest ones nudged toward 0.5 when
/// both replies are unusable.
pub fn refine_weights(
    client: &Client,
    templates: &Templates,
    sampling: &SamplingParams,
    history: &[ReflectionRound],
    latest_frames: &[Frame],
    style: &str,
    k: usize,
) -> Result<(ControlWeights, WeightSource, Vec<String>)> {
    let latest = history
        .last()
        .ok_or_else(|| Error::InvalidInput("refining weights needs at least one round".into()))?;
    let history_json: Vec<Value> = history
        .iter()
        .map(|r| json!({"round": r.round, "weights": r.weights, "score": r.score}))
        .collect();
    let history_text = history
        .iter()
        .map(|r| {
            format!(
                "round {}: tile {:.3}, depth {:.3}, softedge {:.3}, lineart {:.3} -> score {}",
                r.round, r.weights.tile, r.weights.depth, r.weights.softedge, r.weights.lineart, r.score
            )
        })
        .collect::<Vec<_>>()
        .join("\n");
    let user = fill(
        &templates.refiner_user,
        &[("style", style), ("score", &latest.score.to_string()), ("history", &history_text)],
    );
    let mut messages = vec![
        ChatMessage::system(templates.refiner_system.clone()),
        ChatMessage::user_with_images(user, &keyframes_of(latest_frames, k))?,
    ];
    let mut replies = Vec::new();
    for attempt in 1..=2 {
        let req = GenerateRequest::new(tasks::REFINE_WEIGHTS, messages.clone(), *sampling)
            .with_meta("style", style)
            .with_meta("history", json!(history_json))
            .with_meta("attempt", attempt);
        let reply = client.vision_generate(&req)?;
        replies.push(reply.clone());
        if let Some(w) = util::extract_json_object(&reply).as_ref().and_then(ControlWeights::from_reply) {
            return Ok((w, WeightSource::Refiner, replies));
        }
        warn!(attempt, "refiner reply has no usable weights");
        messages.push(ChatMessage::text(Role::Assistant, reply));
        messages.push(ChatMessage::user(templates.refiner_retry.clone()));
    }
    Ok((latest.weights.nudged().clamped(), WeightSource::Fallback, replies))
}

/// Index (1-based round number) of the highest score, earliest on ties.
pub fn best_round(rounds: &[ReflectionRound]) -> usize {
    let mut best = 0;
    for (i, r) in rounds.iter().enumerate() {
        if r.score > rounds[best].score {
            best = i;
        }
    }
    rounds[best].round
}

pub fn trace_file_name(shot_index: usize) -> String {
    format!("reflection_shot_{shot_index}.json")
}

pub fn partial_trace_file_name(shot_index: usize) -> String {
    format!("reflection_shot_{shot_index}.partial.json")
}

pub fn round_dir(shot_index: usize, round: usize) -> String {
    format!("renders/shot_{shot_index:03}/round_{round}")
}

pub struct StylizeOutcome {
    pub frames: Vec<Frame>,
    pub trace: ReflectionTrace,
}

/// Runs the reflection loop for one shot. With a job directory, every
/// round's frames are written under `renders/` and the trace so far is kept
/// in a partial file that is removed when the shot completes.
pub fn stylize_shot(
    client: &Client,
    templates: &Templates,
    sampling: &SamplingParams,
    params: &ReflectionParams,
    task: &ShotTask<'_>,
    job_dir: Option<&Path>,
) -> Result<StylizeOutcome> {
    params.validate()?;
    if task.frames.is_empty() {
        return Err(Error::InvalidInput(format!("shot {} has no frames", task.shot.index)));
    }
    let shot_index = task.shot.index;
    let shot_seed = params.seed.wrapping_add(shot_index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(shot_seed);
    let mut trace = ReflectionTrace {
        shot_index,
        params: *params,
        model_file: task.model_file.to_string(),
        prompt: task.prompt.to_string(),
        render_seed: shot_seed,
        rounds: Vec::new(),
        best_round: 0,
        accepted_early: false,
    };
    let mut rendered: Vec<Vec<Frame>> = Vec::new();
    let partial = job_dir.map(|d| d.join(partial_trace_file_name(shot_index)));
    for round in 1..=params.max_rounds {
        let (weights, source, refiner_replies) = if round == 1 {
            (init_weights(params, &mut rng), WeightSource::Init, Vec::new())
        } else {
            refine_weights(
                client,
                templates,
                sampling,
                &trace.rounds,
                rendered.last().expect("previous round rendered"),
                task.style,
                params.scorer_keyframes,
            )?
        };
        let frames = render_shot(client, task, &weights, shot_seed)?;
        let frames_ref = round_dir(shot_index, round);
        if let Some(dir) = job_dir {
            frames::write_sequence(&frames, task.fps, &dir.join(&frames_ref))?;
        }
        let (score, scorer_reply, scorer_retries) =
            score_style(client, templates, sampling, &frames, task.style, params.scorer_keyframes, &weights)?;
        info!(shot = shot_index, round, score, mean_weight = weights.mean(), "reflection round");
        trace.rounds.push(ReflectionRound {
            round,
            weights,
            weight_source: source,
            refiner_replies,
            score,
            scorer_reply,
            scorer_retries,
            frames_ref,
        });
        rendered.push(frames);
        if let Some(p) = &partial {
            util::write_json(p, &trace)?;
        }
        if score >= params.threshold {
            trace.accepted_early = true;
            break;
        }
    }
    trace.best_round = best_round(&trace.rounds);
    if let Some(p) = &partial {
        if p.exists() {
            fs::remove_file(p).map_err(|e| Error::io(p, e))?;
        }
    }
    let frames = rendered.swap_remove(trace.best_round - 1);
    Ok(StylizeOutcome { frames, trace })
}
