mod common;

use std::collections::BTreeMap;

use common::*;
use proptest::prelude::*;
use vstylist::backends::protocol::SamplingParams;
use vstylist::backends::{Client, Endpoint, Rule};
use vstylist::frames::{self, Frame};
use vstylist::shot_detector::Shot;
use vstylist::style_artist::{
    best_round, keyframes_of, partial_trace_file_name, stylize_shot, ControlWeights, ReflectionParams, ShotTask,
    StylizeOutcome, WeightSource,
};
use vstylist::templates::Templates;

fn shot_frames() -> Vec<Frame> {
    (0..4).map(|i| Frame::filled(i, 8, 8, [40 * i as u8, 90, 200])).collect()
}

fn stylize(client: &Client, params: &ReflectionParams, job_dir: Option<&std::path::Path>) -> StylizeOutcome {
    let frames = shot_frames();
    let extras = BTreeMap::new();
    let task = ShotTask {
        shot: Shot {
            index: 0,
            start_frame: 0,
            end_frame: frames.len(),
        },
        frames: &frames,
        prompt: "a boat, pixel",
        style: "pixel art style",
        model_file: "pixel_f2.safetensors",
        base_model: "SD 1.5",
        extras: &extras,
        fps: 12.0,
    };
    stylize_shot(client, &Templates::default(), &SamplingParams::default(), params, &task, job_dir).unwrap()
}

/// Expected (rounds run, best round) for a score script.
fn oracle(scores: &[u32], threshold: u32, max_rounds: usize) -> (usize, usize) {
    let run = scores
        .iter()
        .take(max_rounds)
        .position(|s| *s >= threshold)
        .map_or(max_rounds.min(scores.len()), |i| i + 1);
    let used = &scores[..run];
    let max = *used.iter().max().unwrap();
    (run, used.iter().position(|s| *s == max).unwrap() + 1)
}

#[test]
fn immediate_acceptance() {
    let (client, mock) = scripted_scores(vec![75]);
    let out = stylize(&client, &ReflectionParams::default(), None);
    assert_eq!(out.trace.rounds.len(), 1);
    assert!(out.trace.accepted_early);
    assert_eq!(out.trace.best_round, 1);
    assert_eq!(mock.calls_to(Endpoint::Render).len(), 1);
}

#[test]
fn exhausted_rounds_keep_the_best() {
    let (client, mock) = scripted_scores(vec![40, 55, 50]);
    let out = stylize(&client, &ReflectionParams::default(), None);
    let scores: Vec<u32> = out.trace.rounds.iter().map(|r| r.score).collect();
    assert_eq!(scores, [40, 55, 50]);
    assert!(!out.trace.accepted_early);
    assert_eq!(out.trace.best_round, 2);
    assert_eq!(mock.calls_to(Endpoint::Render).len(), 3);
    // round 2 used the weights the refiner produced from round 1
    let w2 = out.trace.rounds[1].weights;
    assert_eq!(out.trace.rounds[1].weight_source, WeightSource::Refiner);
    let expected = render_with(&w2);
    assert_eq!(out.frames, expected);
}

/// Oracle for the default mock renderer: blend toward the model color.
fn render_with(w: &ControlWeights) -> Vec<Frame> {
    let color = vstylist::backends::mock::style_color("pixel_f2.safetensors");
    let alpha = w.mean();
    shot_frames()
        .into_iter()
        .map(|f| {
            let pixels = f
                .pixels
                .chunks_exact(3)
                .flat_map(|px| (0..3).map(move |c| (alpha * px[c] as f64 + (1.0 - alpha) * color[c] as f64).round() as u8))
                .collect();
            Frame { pixels, ..f }
        })
        .collect()
}

#[test]
fn closed_loop_converges_in_two_rounds() {
    let (client, _) = mock_client(Vec::new());
    let params = ReflectionParams {
        init_low: 0.2,
        init_high: 0.2,
        ..Default::default()
    };
    let out = stylize(&client, &params, None);
    let trace: Vec<(f64, u32)> = out.trace.rounds.iter().map(|r| (r.weights.mean(), r.score)).collect();
    assert_eq!(trace.len(), 2);
    assert!((trace[0].0 - 0.20).abs() < 1e-9 && trace[0].1 == 40);
    assert!((trace[1].0 - 0.35).abs() < 1e-9 && trace[1].1 == 70);
    assert!(out.trace.accepted_early);
    assert_eq!(out.trace.best_round, 2);
}

#[test]
fn unusable_refiner_falls_back_to_nudge() {
    let (client, mock) = mock_client(vec![
        Rule::vision("refine_weights", None, "try a bit more depth"),
        Rule::vision("style_score", None, r#"{"score": 10}"#),
    ]);
    let params = ReflectionParams {
        init_low: 0.1,
        init_high: 0.1,
        ..Default::default()
    };
    let out = stylize(&client, &params, None);
    let r = &out.trace.rounds;
    assert_eq!(r.len(), 3);
    assert_eq!(r[1].weight_source, WeightSource::Fallback);
    assert_eq!(r[1].refiner_replies.len(), 2);
    assert!((r[1].weights.tile - 0.3).abs() < 1e-12);
    assert!((r[2].weights.tile - 0.4).abs() < 1e-12);
    assert_eq!(mock.calls().iter().filter(|c| c.task.as_deref() == Some("refine_weights")).count(), 4);
}

#[test]
fn scorer_retry_then_unparseable_is_an_error() {
    let (client, _) = mock_client(vec![Rule::vision("style_score", None, "pretty good")]);
    let frames = shot_frames();
    let extras = BTreeMap::new();
    let task = ShotTask {
        shot: Shot {
            index: 0,
            start_frame: 0,
            end_frame: 4,
        },
        frames: &frames,
        prompt: "p",
        style: "s",
        model_file: "m",
        base_model: "SD 1.5",
        extras: &extras,
        fps: 12.0,
    };
    let r = stylize_shot(
        &client,
        &Templates::default(),
        &SamplingParams::default(),
        &ReflectionParams::default(),
        &task,
        None,
    );
    assert!(matches!(r, Err(vstylist::Error::Unparseable { .. })));
}

#[test]
fn rounds_are_written_and_partial_trace_removed() {
    let dir = tempfile::tempdir().unwrap();
    let (client, _) = scripted_scores(vec![30, 20, 10]);
    let out = stylize(&client, &ReflectionParams::default(), Some(dir.path()));
    for r in &out.trace.rounds {
        let m = frames::load_manifest(&dir.path().join(&r.frames_ref)).unwrap();
        assert_eq!(m.frame_count, 4);
    }
    assert!(!dir.path().join(partial_trace_file_name(0)).exists());
    let best = frames::load_manifest(&dir.path().join(&out.trace.rounds[0].frames_ref)).unwrap();
    assert_eq!(best.read_all().unwrap(), out.frames);
}

#[test]
fn same_seed_same_trace() {
    let params = ReflectionParams::default();
    let (a, _) = mock_client(Vec::new());
    let (b, _) = mock_client(Vec::new());
    let x = stylize(&a, &params, None);
    let y = stylize(&b, &params, None);
    assert_eq!(x.trace, y.trace);
    assert_eq!(x.frames, y.frames);
    let other = stylize(&a, &ReflectionParams { seed: 9, ..params }, None);
    assert_ne!(other.trace.rounds[0].weights, x.trace.rounds[0].weights);
}

#[test]
fn keyframes_first_middle_last() {
    let frames: Vec<Frame> = (0..7).map(|i| Frame::filled(i, 4, 4, [i as u8; 3])).collect();
    let idx: Vec<usize> = keyframes_of(&frames, 3).iter().map(|f| f.index).collect();
    assert_eq!(idx, [0, 3, 6]);
    let idx: Vec<usize> = keyframes_of(&frames[..1], 3).iter().map(|f| f.index).collect();
    assert_eq!(idx, [0]);
}

#[test]
fn params_validation() {
    let bad = [
        ReflectionParams { max_rounds: 0, ..Default::default() },
        ReflectionParams { threshold: 101, ..Default::default() },
        ReflectionParams { init_low: 0.5, init_high: 0.4, ..Default::default() },
        ReflectionParams { scorer_keyframes: 0, ..Default::default() },
    ];
    for p in bad {
        assert!(p.validate().is_err(), "{p:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn loop_follows_score_script(
        scores in prop::collection::vec(0u32..=100, 1..=4),
        threshold in 1u32..=100,
        max_rounds in 1usize..=4,
    ) {
        let mut script = scores.clone();
        script.resize(max_rounds.max(scores.len()), 0);
        let (client, _) = scripted_scores(script.clone());
        let params = ReflectionParams { threshold, max_rounds, ..Default::default() };
        let out = stylize(&client, &params, None);
        let (rounds, best) = oracle(&script, threshold, max_rounds);
        prop_assert_eq!(out.trace.rounds.len(), rounds);
        prop_assert_eq!(out.trace.best_round, best);
        prop_assert_eq!(out.trace.accepted_early, script[rounds - 1] >= threshold);
        prop_assert_eq!(best_round(&out.trace.rounds), best);
        let w = out.trace.rounds[best - 1].weights;
        prop_assert_eq!(out.frames, render_with(&w));
    }

    #[test]
    fn nudged_weights_stay_in_range_and_approach_half(v in 0.0f64..=1.0) {
        let w = ControlWeights::uniform(v).nudged();
        prop_assert!((0.0..=1.0).contains(&w.tile));
        prop_assert!((w.tile - 0.5).abs() <= (v - 0.5).abs());
    }
}
