use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use vstylist::backends::{self, MockBackend, MockHttpServer, Scenario};
use vstylist::config::Config;
use vstylist::frames;
use vstylist::metrics::{self, EvalOptions, MetricReport, METRIC_NAMES};
use vstylist::pipeline::{self, Provenance, ReportFile, RunOptions, Stage, StopPoint};
use vstylist::prompt_agents::PromptRecord;
use vstylist::shot_detector::{self, Shot};
use vstylist::style_search::{self, StyleDecision};
use vstylist::style_tree::StyleTree;
use vstylist::templates::Templates;
use vstylist::util;
use vstylist::Error;

/// Shot-level video stylization driven by an open-ended style query.
///
/// Configuration precedence: built-in defaults, then the `--config` TOML
/// file, then VSTYLIST_{TEXT,VISION,RENDER,EMBED,SCORE}_URL, then flags.
#[derive(Parser)]
#[command(name = "vstylist", version)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Point all five endpoints at this base URL (`mock://` for the
    /// in-process mock).
    #[arg(long, global = true)]
    backend: Option<String>,
    /// Scenario file for `mock://` endpoints.
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
    /// Seed for model sampling and control-weight initialization.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Print the fully resolved configuration and exit.
    #[arg(long)]
    print_config: bool,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Stylize a video (frame directory or video file) into a job directory.
    Stylize(StylizeArgs),
    /// Continue an interrupted or failed job.
    Resume {
        #[arg(long)]
        job: PathBuf,
    },
    /// Inspect the style tree.
    Tree {
        #[command(subcommand)]
        action: TreeAction,
    },
    /// Compute the evaluation metrics of a stylized video.
    Eval(EvalArgs),
    /// Generate test material.
    Fixtures {
        #[command(subcommand)]
        action: FixtureAction,
    },
    /// Serve the deterministic mock backend over HTTP.
    MockServer {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8000)]
        port: u16,
        #[arg(long, default_value_t = 4)]
        workers: usize,
        /// Require this bearer token on model endpoints.
        #[arg(long)]
        token: Option<String>,
    },
}

#[derive(Args)]
struct StylizeArgs {
    #[arg(long)]
    video: PathBuf,
    #[arg(long)]
    query: String,
    /// Job directory to create.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    max_parallel_shots: Option<usize>,
    /// Skip the evaluation stage.
    #[arg(long)]
    no_eval: bool,
    /// Stop after this stage (ingest, shot-detection, prompting,
    /// style-resolution, rendering, stitching).
    #[arg(long, value_parser = parse_stage)]
    stop_after: Option<Stage>,
}

#[derive(Subcommand)]
enum TreeAction {
    /// Check every invariant of a tree file (the shipped tree by default).
    Validate {
        #[arg(long)]
        tree: Option<PathBuf>,
        /// Also reject placeholder model URLs.
        #[arg(long)]
        strict: bool,
    },
    /// Print the taxonomy.
    List {
        #[arg(long)]
        tree: Option<PathBuf>,
    },
    /// Resolve a query to a model card through the configured backends.
    Search {
        #[arg(long)]
        query: String,
        #[arg(long)]
        tree: Option<PathBuf>,
    },
}

#[derive(Args)]
struct EvalArgs {
    /// Source frame directory.
    #[arg(long, required_unless_present = "values")]
    source: Option<PathBuf>,
    /// Stylized frame directory.
    #[arg(long, required_unless_present = "values")]
    stylized: Option<PathBuf>,
    /// prompts.json of the job.
    #[arg(long, required_unless_present = "values")]
    prompts: Option<PathBuf>,
    /// shots.json; detected on the source when absent.
    #[arg(long)]
    shots: Option<PathBuf>,
    /// Style phrase; read from style_decision.json next to the prompts
    /// file when absent.
    #[arg(long)]
    style: Option<String>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    frame_stride: Option<usize>,
    #[arg(long)]
    exclude_boundaries: bool,
    /// Aggregate eight precomputed values (clip_t, clip_w, structure,
    /// semantics, aesthetic_i, aesthetic_v, distortion_i, distortion_v)
    /// instead of measuring.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    values: Option<Vec<f64>>,
}

#[derive(Subcommand)]
enum FixtureAction {
    /// Write a synthetic multi-scene frame sequence.
    Synth {
        #[arg(long, default_value_t = 3)]
        scenes: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        width: u32,
        #[arg(long, default_value_t = 64)]
        height: u32,
        /// Every scene gets this many frames; random 24..=60 otherwise.
        #[arg(long)]
        scene_len: Option<usize>,
        #[arg(long, default_value_t = 24.0)]
        fps: f64,
    },
}

fn parse_stage(s: &str) -> Result<Stage, String> {
    Ok(match s.to_lowercase().replace('_', "-").as_str() {
        "ingest" => Stage::Ingest,
        "shot-detection" | "shots" => Stage::ShotDetection,
        "prompting" | "prompts" => Stage::Prompting,
        "style-resolution" | "style" => Stage::StyleResolution,
        "rendering" => Stage::Rendering,
        "stitching" => Stage::Stitching,
        "evaluation" => Stage::Evaluation,
        other => return Err(format!("unknown stage {other:?}")),
    })
}

/// Failure carrying its exit code: 1 runtime, 2 usage or configuration.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::InvalidInput(_) => 2,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn resolve_config(cli: &Cli) -> Result<Config, Failure> {
    let mut config = Config::load(cli.config.as_deref()).map_err(|e| usage(e.to_string()))?;
    if let Some(url) = &cli.backend {
        config.backends.set_all(url);
    }
    if let Some(s) = &cli.scenario {
        config.backends.scenario = Some(s.clone());
    }
    if let Some(seed) = cli.seed {
        config.sampling.seed = Some(seed);
        config.reflection.seed = seed;
    }
    Ok(config)
}

fn load_tree(path: Option<&Path>, config: &Config) -> Result<StyleTree, Failure> {
    match path.or(config.style.tree.as_deref()) {
        Some(p) => Ok(StyleTree::load(p)?),
        None => Ok(StyleTree::shipped()),
    }
}

fn print_progress(msg: &str) {
    println!("{msg}");
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut config = resolve_config(&cli)?;
    if cli.print_config {
        print!("{}", config.to_toml()?);
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(usage("no command given; see --help"));
    };
    match command {
        Command::Stylize(args) => {
            if let Some(n) = args.max_parallel_shots {
                config.pipeline.max_parallel_shots = n;
            }
            if args.no_eval {
                config.pipeline.evaluate = false;
            }
            config.validate().map_err(|e| usage(e.to_string()))?;
            if !args.video.exists() {
                return Err(usage(format!("--video {} does not exist", args.video.display())));
            }
            let opts = RunOptions {
                stop: args.stop_after.map(StopPoint::After),
                progress: Some(&print_progress),
            };
            let (client, _) = backends::connect(&config.backends).map_err(|e| usage(e.to_string()))?;
            let mut job = pipeline::Job::create(&args.out, &args.video, &args.query, config)?;
            println!("job {} in {}", job.snapshot.id, args.out.display());
            if args.stop_after == Some(Stage::Ingest) {
                println!("stopped after Ingest");
                return Ok(());
            }
            let outcome = job.run(&client, &opts)?;
            report_outcome(&outcome);
        }
        Command::Resume { job } => {
            let outcome = pipeline::resume(
                &job,
                &RunOptions {
                    stop: None,
                    progress: Some(&print_progress),
                },
            )?;
            report_outcome(&outcome);
        }
        Command::Tree { action } => tree_command(action, &config)?,
        Command::Eval(args) => eval_command(args, &config)?,
        Command::Fixtures {
            action:
                FixtureAction::Synth {
                    scenes,
                    out,
                    seed,
                    width,
                    height,
                    scene_len,
                    fps,
                },
        } => {
            if scenes == 0 {
                return Err(usage("--scenes must be at least 1"));
            }
            let (lo, hi) = scene_len.map_or((24, 60), |n| (n, n));
            let specs = frames::random_scenes(scenes, lo, hi, seed);
            let m = frames::generate_synthetic(&specs, fps, width, height, seed, &out)?;
            let mut start = 0;
            for (i, s) in specs.iter().enumerate() {
                println!("scene {i}: frames {start}..{} ({:?})", start + s.duration_frames, s.kind);
                start += s.duration_frames;
            }
            println!("wrote {} frames ({} scenes) to {}", m.frame_count, scenes, out.display());
        }
        Command::MockServer {
            host,
            port,
            workers,
            token,
        } => {
            let scenario = match &config.backends.scenario {
                Some(p) => Scenario::load(p)?,
                None => Scenario::default(),
            };
            let backend = Arc::new(MockBackend::new(scenario)?);
            let server = MockHttpServer::start(backend, &format!("{host}:{port}"), workers, token)?;
            println!("listening on {}", server.base_url());
            server.wait();
        }
    }
    Ok(())
}

fn report_outcome(outcome: &pipeline::RunOutcome) {
    if outcome.stopped {
        println!("stopped in state {}; continue with `vstylist resume --job {}`", outcome.state.name(), outcome.job_dir.display());
        return;
    }
    println!("final frames: {}", outcome.job_dir.join(pipeline::FINAL_DIR).display());
    if outcome.report.is_some() {
        println!("report: {}", outcome.job_dir.join(pipeline::REPORT_FILE).display());
    }
}

fn tree_command(action: TreeAction, config: &Config) -> Result<(), Failure> {
    match action {
        TreeAction::Validate { tree, strict } => {
            let text_path = tree.as_deref().or(config.style.tree.as_deref());
            let parsed: StyleTree = match text_path {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|e| Failure {
                        code: 1,
                        message: format!("{}: {e}", p.display()),
                    })?;
                    serde_json::from_str(&text).map_err(|e| Failure {
                        code: 1,
                        message: format!("{}: {e}", p.display()),
                    })?
                }
                None => StyleTree::shipped(),
            };
            let violations = parsed.violations(strict || config.style.strict);
            if !violations.is_empty() {
                for v in &violations {
                    eprintln!("violation: {v}");
                }
                return Err(Failure {
                    code: 1,
                    message: format!("{} violations", violations.len()),
                });
            }
            println!("{} styles, {} models, depth 3", parsed.style_count(), parsed.card_count());
        }
        TreeAction::List { tree } => {
            let tree = load_tree(tree.as_deref(), config)?;
            println!("{}", tree.root.name);
            for class in &tree.root.children {
                println!("  {}", class.name);
                for style in &class.children {
                    println!("    {}", style.name);
                    for card in &style.cards {
                        println!("      {} [{}]", card.file, card.tags.join(", "));
                    }
                }
            }
        }
        TreeAction::Search { query, tree } => {
            let tree = load_tree(tree.as_deref(), config)?;
            let templates = match &config.prompts.templates {
                Some(p) => Templates::load(p)?,
                None => Templates::default(),
            };
            let (client, _) = backends::connect(&config.backends).map_err(|e| usage(e.to_string()))?;
            let resolution = style_search::identify_style(&client, &templates, &config.sampling, &query)?;
            let decision = style_search::search_tree(&resolution, &tree, &client, &templates, &config.sampling)?;
            println!("style: {} ({:?})", resolution.style, resolution.query_kind);
            println!("path: {}", decision.path.join(" / "));
            match &decision.card {
                Some(card) => println!("model: {}", card.file),
                None => println!("model: {} (base-model fallback)", config.style.base_model_file),
            }
        }
    }
    Ok(())
}

fn eval_command(args: EvalArgs, config: &Config) -> Result<(), Failure> {
    let mut opts: EvalOptions = config.metrics;
    if let Some(s) = args.frame_stride {
        opts.frame_stride = s;
    }
    opts.exclude_boundaries |= args.exclude_boundaries;
    let provenance = Provenance {
        job_id: None,
        backends: config
            .backends
            .urls()
            .into_iter()
            .map(|(e, u)| (e.name().to_string(), u))
            .collect(),
        frame_stride: opts.frame_stride,
        exclude_boundaries: opts.exclude_boundaries,
    };
    let report = if let Some(values) = &args.values {
        if values.len() != 8 {
            return Err(usage(format!("--values takes 8 numbers, got {}", values.len())));
        }
        MetricReport::from_values(values)?
    } else {
        let (source, stylized, prompts) = match (&args.source, &args.stylized, &args.prompts) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => return Err(usage("--source, --stylized and --prompts are required")),
        };
        for (flag, p) in [("--source", source), ("--stylized", stylized), ("--prompts", prompts)] {
            if !p.exists() {
                return Err(usage(format!("{flag} {} does not exist", p.display())));
            }
        }
        let records: Vec<PromptRecord> = util::read_json(prompts)?;
        let source = frames::load_manifest(source)?;
        let stylized = frames::load_manifest(stylized)?.read_all()?;
        if stylized.len() != source.frame_count {
            return Err(usage(format!(
                "source has {} frames, stylized has {}",
                source.frame_count,
                stylized.len()
            )));
        }
        let shots: Vec<Shot> = match &args.shots {
            Some(p) => util::read_json(p)?,
            None => shot_detector::detect_shots(&source, &config.detector)?,
        };
        let style = match &args.style {
            Some(s) => s.clone(),
            None => {
                let decision_path = prompts.with_file_name(pipeline::DECISION_FILE);
                if !decision_path.is_file() {
                    return Err(usage("--style is required when no style_decision.json sits next to the prompts file"));
                }
                let decision: StyleDecision = util::read_json(&decision_path)?;
                decision.resolution.style
            }
        };
        let mut texts = vec![String::new(); shots.len()];
        for r in &records {
            if r.shot_index >= texts.len() {
                return Err(usage(format!("prompt for shot {} but only {} shots", r.shot_index, shots.len())));
            }
            texts[r.shot_index] = r.prompt.clone();
        }
        if let Some(i) = texts.iter().position(String::is_empty) {
            return Err(usage(format!("no prompt for shot {i}")));
        }
        let (client, _) = backends::connect(&config.backends).map_err(|e| usage(e.to_string()))?;
        metrics::evaluate(&stylized, &shots, &texts, &style, &client, &opts)?
    };
    util::write_json(
        &args.out,
        &ReportFile {
            metrics: report,
            provenance,
        },
    )?;
    for (name, v) in METRIC_NAMES.iter().zip(report.values()) {
        println!("{name:<13}{v:.4}");
    }
    println!("{:<13}{:.4}", "overall", report.overall);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(level)))
        .with_writer(std::io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
