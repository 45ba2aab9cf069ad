//! The stylization job: ingest, shot detection, prompting, style
//! resolution, per-shot rendering, stitching and evaluation, with a
//! checkpoint after every stage.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use crate::backends::{self, Client};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::frames::{self, Frame, FrameManifest};
use crate::metrics::{self, MetricReport};
use crate::prompt_agents::{self, PromptRecord, ShotPrompt};
use crate::shot_detector::{self, Shot};
use crate::style_artist::{self, ReflectionTrace, ShotTask};
use crate::style_search::{self, StyleDecision};
use crate::style_tree::StyleTree;
use crate::templates::Templates;
use crate::util;

pub const JOB_FILE: &str = "job.json";
pub const STATE_FILE: &str = "state.json";
pub const SHOTS_FILE: &str = "shots.json";
pub const PROMPTS_FILE: &str = "prompts.json";
pub const DECISION_FILE: &str = "style_decision.json";
pub const REPORT_FILE: &str = "report.json";
pub const FINAL_DIR: &str = "final";
pub const INPUT_PATTERN: &str = "input/frame_%06d.png";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stage {
    Ingest,
    ShotDetection,
    Prompting,
    StyleResolution,
    Rendering,
    Stitching,
    Evaluation,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum JobState {
    Created,
    Ingested,
    ShotsDetected,
    Prompted,
    StyleResolved,
    Rendering {
        done: Vec<bool>,
    },
    Stitched,
    Evaluated,
    Done,
    Failed {
        stage: Stage,
        reason: String,
        /// State to continue from on resume.
        previous: Box<JobState>,
    },
}

impl JobState {
    pub fn name(&self) -> &'static str {
        match self {
            JobState::Created => "Created",
            JobState::Ingested => "Ingested",
            JobState::ShotsDetected => "ShotsDetected",
            JobState::Prompted => "Prompted",
            JobState::StyleResolved => "StyleResolved",
            JobState::Rendering { .. } => "Rendering",
            JobState::Stitched => "Stitched",
            JobState::Evaluated => "Evaluated",
            JobState::Done => "Done",
            JobState::Failed { .. } => "Failed",
        }
    }
}

/// Frozen copy of everything a job depends on; resume reads only this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobSnapshot {
    pub id: String,
    pub query: String,
    pub source: String,
    pub config: Config,
    pub templates: Templates,
    pub tree: StyleTree,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub job_id: String,
    #[serde(flatten)]
    pub state: JobState,
    /// sha256 of every stage artifact, by path relative to the job directory.
    pub checksums: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub job_id: Option<String>,
    pub backends: BTreeMap<String, String>,
    pub frame_stride: usize,
    pub exclude_boundaries: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    #[serde(flatten)]
    pub metrics: MetricReport,
    pub provenance: Provenance,
}

/// Where a run should stop early, leaving a resumable job behind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopPoint {
    After(Stage),
    /// Inside rendering, once this many shots are finished; no further
    /// shot is started.
    AfterShots(usize),
}

#[derive(Default)]
pub struct RunOptions<'a> {
    pub stop: Option<StopPoint>,
    pub progress: Option<&'a (dyn Fn(&str) + Sync)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub job_dir: PathBuf,
    pub state: JobState,
    pub stopped: bool,
    pub report: Option<MetricReport>,
}

pub struct Job {
    pub dir: PathBuf,
    pub snapshot: JobSnapshot,
    pub checkpoint: Checkpoint,
}

fn config_fingerprint(config: &Config) -> Result<String> {
    let mut c = config.clone();
    c.backends = Default::default();
    Ok(util::sha256_hex(&util::to_json_bytes(&c)?))
}

fn load_source(input: &Path, config: &Config, scratch: &Path) -> Result<(Vec<Frame>, f64)> {
    if input.is_dir() {
        let m = frames::load_manifest(input)?;
        return Ok((m.read_all()?, m.fps));
    }
    if !input.is_file() {
        return Err(Error::InvalidInput(format!("input {} does not exist", input.display())));
    }
    let m = frames::ingest_with_decoder(&config.pipeline.decoder, input, scratch, config.pipeline.fps)?;
    Ok((m.read_all()?, m.fps))
}

fn parallel_map<T: Sync, R: Send>(
    items: &[T],
    workers: usize,
    halt: &AtomicBool,
    f: impl Fn(&T) -> Result<R> + Sync,
) -> Vec<Option<Result<R>>> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<R>>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    thread::scope(|s| {
        for _ in 0..workers.clamp(1, items.len().max(1)) {
            s.spawn(|| loop {
                if halt.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                if r.is_err() {
                    halt.store(true, Ordering::SeqCst);
                }
                slots.lock().unwrap()[i] = Some(r);
            });
        }
    });
    slots.into_inner().unwrap()
}

fn first_error<R>(slots: Vec<Option<Result<R>>>) -> Result<Vec<Option<R>>> {
    slots.into_iter().map(|s| s.transpose()).collect()
}

impl Job {
    /// Creates the job directory and its snapshot. `dir` must be absent or
    /// empty.
    pub fn create(dir: &Path, input: &Path, query: &str, config: Config) -> Result<Job> {
        if query.trim().is_empty() {
            return Err(Error::InvalidInput("empty style query".into()));
        }
        config.validate()?;
        if dir.exists() && fs::read_dir(dir).map_err(|e| Error::io(dir, e))?.next().is_some() {
            return Err(Error::InvalidInput(format!(
                "job directory {} is not empty; use resume to continue a job",
                dir.display()
            )));
        }
        let templates = match &config.prompts.templates {
            Some(p) => Templates::load(p)?,
            None => Templates::default(),
        };
        let tree = match &config.style.tree {
            Some(p) => StyleTree::load(p)?,
            None => StyleTree::shipped(),
        };
        tree.check(config.style.strict)?;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let scratch = dir.join(".decode");
        let (source_frames, fps) = load_source(input, &config, &scratch)?;
        let mut hasher_input = Vec::new();
        for f in &source_frames {
            hasher_input.extend_from_slice(f.content_hash().as_bytes());
        }
        let id_material = format!(
            "{}\n{}\n{}",
            query.trim(),
            util::sha256_hex(&hasher_input),
            config_fingerprint(&config)?
        );
        let id = util::sha256_hex(id_material.as_bytes())[..16].to_string();
        let snapshot = JobSnapshot {
            id: id.clone(),
            query: query.trim().to_string(),
            source: input.display().to_string(),
            config,
            templates,
            tree,
        };
        util::write_json(&dir.join(JOB_FILE), &snapshot)?;
        let mut job = Job {
            dir: dir.to_path_buf(),
            snapshot,
            checkpoint: Checkpoint {
                job_id: id,
                state: JobState::Created,
                checksums: BTreeMap::new(),
            },
        };
        job.record(JOB_FILE)?;
        job.save_state()?;
        let renumbered: Vec<Frame> = source_frames
            .into_iter()
            .enumerate()
            .map(|(i, f)| Frame { index: i, ..f })
            .collect();
        frames::write_sequence_with_pattern(&renumbered, fps, dir, INPUT_PATTERN)?;
        if scratch.exists() {
            fs::remove_dir_all(&scratch).map_err(|e| Error::io(&scratch, e))?;
        }
        job.record(frames::MANIFEST_FILE)?;
        job.checkpoint.state = JobState::Ingested;
        job.save_state()?;
        Ok(job)
    }

    /// Opens an existing job, verifying every recorded checksum.
    pub fn open(dir: &Path) -> Result<Job> {
        let state_path = dir.join(STATE_FILE);
        if !state_path.is_file() {
            return Err(Error::Checkpoint(format!("{} has no {STATE_FILE}", dir.display())));
        }
        let checkpoint: Checkpoint = util::read_json(&state_path)?;
        for (rel, expected) in &checkpoint.checksums {
            let path = dir.join(rel);
            let actual = util::sha256_file(&path)
                .map_err(|_| Error::Checkpoint(format!("{rel} is missing")))?;
            if &actual != expected {
                return Err(Error::Checkpoint(format!("{rel} does not match its recorded checksum")));
            }
        }
        let snapshot: JobSnapshot = util::read_json(&dir.join(JOB_FILE))?;
        if snapshot.id != checkpoint.job_id {
            return Err(Error::Checkpoint("job.json and state.json disagree on the job id".into()));
        }
        Ok(Job {
            dir: dir.to_path_buf(),
            snapshot,
            checkpoint,
        })
    }

    pub fn state(&self) -> &JobState {
        &self.checkpoint.state
    }

    fn record(&mut self, rel: &str) -> Result<()> {
        let hash = util::sha256_file(&self.dir.join(rel))?;
        self.checkpoint.checksums.insert(rel.to_string(), hash);
        Ok(())
    }

    fn save_state(&self) -> Result<()> {
        util::write_json(&self.dir.join(STATE_FILE), &self.checkpoint)
    }

    fn manifest(&self) -> Result<FrameManifest> {
        frames::load_manifest(&self.dir)
    }

    fn read<T: serde::de::DeserializeOwned>(&self, rel: &str) -> Result<T> {
        util::read_json(&self.dir.join(rel))
    }

    fn write_artifact<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        util::write_json(&self.dir.join(rel), value)?;
        self.record(rel)
    }

    fn advance(&mut self, state: JobState) -> Result<()> {
        self.checkpoint.state = state;
        self.save_state()
    }

    fn fail(&mut self, stage: Stage, err: &Error) -> Result<()> {
        let previous = match &self.checkpoint.state {
            JobState::Failed { previous, .. } => previous.clone(),
            other => Box::new(other.clone()),
        };
        self.checkpoint.state = JobState::Failed {
            stage,
            reason: err.to_string(),
            previous,
        };
        self.save_state()
    }

    /// Runs the remaining stages. A stage error is persisted as `Failed`
    /// and returned as [`Error::Stage`].
    pub fn run(&mut self, client: &Client, opts: &RunOptions<'_>) -> Result<RunOutcome> {
        if let JobState::Failed { previous, .. } = &self.checkpoint.state {
            let previous = (**previous).clone();
            info!(resume_from = previous.name(), "retrying failed job");
            self.checkpoint.state = previous;
        }
        let say = |msg: &str| {
            info!("{msg}");
            if let Some(p) = opts.progress {
                p(msg);
            }
        };
        loop {
            let stage = match &self.checkpoint.state {
                JobState::Created => Stage::Ingest,
                JobState::Ingested => Stage::ShotDetection,
                JobState::ShotsDetected => Stage::Prompting,
                JobState::Prompted => Stage::StyleResolution,
                JobState::StyleResolved => Stage::Rendering,
                JobState::Rendering { done } if done.iter().all(|d| *d) => Stage::Stitching,
                JobState::Rendering { .. } => Stage::Rendering,
                JobState::Stitched if self.snapshot.config.pipeline.evaluate => Stage::Evaluation,
                JobState::Stitched | JobState::Evaluated => {
                    self.advance(JobState::Done)?;
                    say("job done");
                    break;
                }
                JobState::Done | JobState::Failed { .. } => break,
            };
            let result = match stage {
                Stage::Ingest => Err(Error::Checkpoint("job was never ingested; create it again".into())),
                Stage::ShotDetection => self.detect_shots(),
                Stage::Prompting => self.prompt(client),
                Stage::StyleResolution => self.resolve_style(client),
                Stage::Rendering => match self.render(client, opts) {
                    Ok(true) => Ok(()),
                    Ok(false) => {
                        say("stopped during rendering");
                        return Ok(self.outcome(true));
                    }
                    Err(e) => Err(e),
                },
                Stage::Stitching => self.stitch_stage(),
                Stage::Evaluation => self.evaluate(client),
            };
            if let Err(e) = result {
                warn!(%stage, error = %e, "stage failed");
                self.fail(stage, &e)?;
                return Err(Error::Stage {
                    stage: stage.to_string(),
                    reason: e.to_string(),
                });
            }
            say(&format!("{stage} complete, state {}", self.checkpoint.state.name()));
            if opts.stop == Some(StopPoint::After(stage)) {
                return Ok(self.outcome(true));
            }
        }
        Ok(self.outcome(false))
    }

    fn outcome(&self, stopped: bool) -> RunOutcome {
        let report = self
            .read::<ReportFile>(REPORT_FILE)
            .ok()
            .map(|r| r.metrics);
        RunOutcome {
            job_dir: self.dir.clone(),
            state: self.checkpoint.state.clone(),
            stopped,
            report,
        }
    }

    fn detect_shots(&mut self) -> Result<()> {
        let manifest = self.manifest()?;
        let shots = shot_detector::detect_shots(&manifest, &self.snapshot.config.detector)?;
        info!(shots = shots.len(), frames = manifest.frame_count, "shots detected");
        self.write_artifact(SHOTS_FILE, &shots)?;
        self.advance(JobState::ShotsDetected)
    }

    fn prompt(&mut self, client: &Client) -> Result<()> {
        let manifest = self.manifest()?;
        let shots: Vec<Shot> = self.read(SHOTS_FILE)?;
        let cfg = &self.snapshot.config;
        let templates = &self.snapshot.templates;
        let halt = AtomicBool::new(false);
        let slots = parallel_map(&shots, cfg.pipeline.max_parallel_shots, &halt, |shot| {
            let keyframes = frames::dedup_keyframes(frames::sample_keyframes(
                &manifest,
                shot,
                cfg.pipeline.caption_keyframes,
            )?);
            let caption = prompt_agents::caption_shot(client, templates, &cfg.sampling, shot.index, &keyframes)?;
            let prompt = prompt_agents::translate_caption(client, templates, &cfg.sampling, &caption)?;
            Ok(PromptRecord {
                shot_index: shot.index,
                caption: caption.caption,
                prompt: prompt.prompt,
            })
        });
        let records: Vec<PromptRecord> = first_error(slots)?.into_iter().flatten().collect();
        self.write_artifact(PROMPTS_FILE, &records)?;
        self.advance(JobState::Prompted)
    }

    fn resolve_style(&mut self, client: &Client) -> Result<()> {
        let cfg = &self.snapshot.config;
        let resolution = style_search::identify_style(client, &self.snapshot.templates, &cfg.sampling, &self.snapshot.query)?;
        let decision = style_search::search_tree(
            &resolution,
            &self.snapshot.tree,
            client,
            &self.snapshot.templates,
            &cfg.sampling,
        )?;
        match &decision.card {
            Some(card) => info!(style = %resolution.style, card = %card.file, "style resolved"),
            None => warn!(style = %resolution.style, "style search failed, using the base model"),
        }
        self.write_artifact(DECISION_FILE, &decision)?;
        self.advance(JobState::StyleResolved)
    }

    /// Returns `false` when a stop point interrupted the stage.
    fn render(&mut self, client: &Client, opts: &RunOptions<'_>) -> Result<bool> {
        let manifest = self.manifest()?;
        let shots: Vec<Shot> = self.read(SHOTS_FILE)?;
        let prompts: Vec<PromptRecord> = self.read(PROMPTS_FILE)?;
        let decision: StyleDecision = self.read(DECISION_FILE)?;
        if prompts.len() != shots.len() {
            return Err(Error::Checkpoint(format!(
                "{} shots but {} prompts",
                shots.len(),
                prompts.len()
            )));
        }
        let done = match &self.checkpoint.state {
            JobState::Rendering { done } if done.len() == shots.len() => done.clone(),
            _ => vec![false; shots.len()],
        };
        let finished = done.iter().filter(|d| **d).count();
        if let Some(StopPoint::AfterShots(k)) = opts.stop {
            if finished >= k && done.iter().any(|d| !d) {
                return Ok(false);
            }
        }
        self.checkpoint.state = JobState::Rendering { done: done.clone() };
        self.save_state()?;
        let cfg = self.snapshot.config.clone();
        let (model_file, base_model) = match &decision.card {
            Some(card) => (card.file.clone(), card.base_model.clone()),
            None => (cfg.style.base_model_file.clone(), cfg.style.base_model.clone()),
        };
        let style = decision.resolution.style.clone();
        let pending: Vec<usize> = (0..shots.len()).filter(|i| !done[*i]).collect();
        let started = AtomicUsize::new(finished);
        let completed = AtomicUsize::new(finished);
        let limit = match opts.stop {
            Some(StopPoint::AfterShots(k)) => k,
            _ => usize::MAX,
        };
        let templates = self.snapshot.templates.clone();
        let dir = self.dir.clone();
        let halt = AtomicBool::new(false);
        let job = Mutex::new(&mut *self);
        let slots = parallel_map(&pending, cfg.pipeline.max_parallel_shots, &halt, |&i| {
            if started.fetch_add(1, Ordering::SeqCst) >= limit {
                return Ok(false);
            }
            let shot = shots[i];
            let source = manifest.read_range(shot.start_frame, shot.end_frame)?;
            let shot_prompt = ShotPrompt {
                shot_index: i,
                prompt: prompts[i].prompt.clone(),
            };
            let composed = prompt_agents::compose_render_prompt(&shot_prompt, decision.card.as_ref(), &style);
            let task = ShotTask {
                shot,
                frames: &source,
                prompt: &composed,
                style: &style,
                model_file: &model_file,
                base_model: &base_model,
                extras: &cfg.pipeline.render_extras,
                fps: manifest.fps,
            };
            let outcome = style_artist::stylize_shot(
                client,
                &templates,
                &cfg.sampling,
                &cfg.reflection,
                &task,
                Some(&dir),
            )?;
            let mut j = job.lock().unwrap();
            j.write_artifact(&style_artist::trace_file_name(i), &outcome.trace)?;
            if let JobState::Rendering { done } = &mut j.checkpoint.state {
                done[i] = true;
            }
            j.save_state()?;
            let n = completed.fetch_add(1, Ordering::SeqCst) + 1;
            info!(shot = i, best_round = outcome.trace.best_round, rendered = n, "shot rendered");
            Ok(true)
        });
        first_error(slots)?;
        Ok(matches!(&self.checkpoint.state, JobState::Rendering { done } if done.iter().all(|d| *d)))
    }

    fn stitch_stage(&mut self) -> Result<()> {
        let manifest = self.manifest()?;
        let shots: Vec<Shot> = self.read(SHOTS_FILE)?;
        let mut outputs = Vec::with_capacity(shots.len());
        for shot in &shots {
            let trace: ReflectionTrace = self.read(&style_artist::trace_file_name(shot.index))?;
            let best = trace
                .rounds
                .iter()
                .find(|r| r.round == trace.best_round)
                .ok_or_else(|| Error::Checkpoint(format!("shot {} trace lacks its best round", shot.index)))?;
            outputs.push(frames::load_manifest(&self.dir.join(&best.frames_ref))?.read_all()?);
        }
        let out = stitch(&outputs, &shots, manifest.fps, &self.dir.join(FINAL_DIR))?;
        if out.frame_count != manifest.frame_count {
            return Err(Error::Stage {
                stage: Stage::Stitching.to_string(),
                reason: format!("{} output frames for {} input frames", out.frame_count, manifest.frame_count),
            });
        }
        self.record(&format!("{FINAL_DIR}/{}", frames::MANIFEST_FILE))?;
        self.advance(JobState::Stitched)
    }

    fn evaluate(&mut self, client: &Client) -> Result<()> {
        let stylized = frames::load_manifest(&self.dir.join(FINAL_DIR))?.read_all()?;
        let shots: Vec<Shot> = self.read(SHOTS_FILE)?;
        let prompts: Vec<PromptRecord> = self.read(PROMPTS_FILE)?;
        let decision: StyleDecision = self.read(DECISION_FILE)?;
        let cfg = &self.snapshot.config;
        let texts: Vec<String> = prompts.iter().map(|p| p.prompt.clone()).collect();
        let report = if stylized.len() < 2 {
            warn!("single-frame output, temporal metrics are undefined; skipping evaluation");
            None
        } else {
            Some(metrics::evaluate(
                &stylized,
                &shots,
                &texts,
                &decision.resolution.style,
                client,
                &cfg.metrics,
            )?)
        };
        if let Some(metrics) = report {
            let file = ReportFile {
                metrics,
                provenance: Provenance {
                    job_id: Some(self.snapshot.id.clone()),
                    backends: cfg
                        .backends
                        .urls()
                        .into_iter()
                        .map(|(e, u)| (e.name().to_string(), u))
                        .collect(),
                    frame_stride: cfg.metrics.frame_stride,
                    exclude_boundaries: cfg.metrics.exclude_boundaries,
                },
            };
            self.write_artifact(REPORT_FILE, &file)?;
        }
        self.advance(JobState::Evaluated)
    }
}

/// Concatenates per-shot outputs in shot order into `dir`.
pub fn stitch(outputs: &[Vec<Frame>], shots: &[Shot], fps: f64, dir: &Path) -> Result<FrameManifest> {
    if outputs.len() != shots.len() {
        return Err(Error::InvalidInput(format!(
            "{} shot outputs for {} shots",
            outputs.len(),
            shots.len()
        )));
    }
    let mut all = Vec::new();
    for (shot, frames) in shots.iter().zip(outputs) {
        if frames.len() != shot.len() {
            return Err(Error::InvalidInput(format!(
                "shot {} has {} rendered frames, expected {}",
                shot.index,
                frames.len(),
                shot.len()
            )));
        }
        for f in frames {
            all.push(Frame {
                index: all.len(),
                ..f.clone()
            });
        }
    }
    frames::write_sequence(&all, fps, dir)
}

/// Creates a job in `out` and runs it with the backends from `config`.
pub fn stylize(input: &Path, query: &str, config: Config, out: &Path, opts: &RunOptions<'_>) -> Result<RunOutcome> {
    let (client, _) = backends::connect(&config.backends)?;
    let mut job = Job::create(out, input, query, config)?;
    job.run(&client, opts)
}

/// Continues a job from its last checkpoint. Endpoint URLs may be
/// overridden through the environment; everything else comes from the
/// job's snapshot.
pub fn resume(dir: &Path, opts: &RunOptions<'_>) -> Result<RunOutcome> {
    let mut job = Job::open(dir)?;
    if job.checkpoint.state == JobState::Done {
        info!("job already done");
        return Ok(job.outcome(false));
    }
    let mut backends_cfg = job.snapshot.config.clone();
    backends_cfg.apply_env(|k| std::env::var(k).ok());
    let (client, _) = backends::connect(&backends_cfg.backends)?;
    job.run(&client, opts)
}
