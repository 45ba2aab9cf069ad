mod common;

use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use vstylist::backends::mock::{image_embedding, text_embedding};
use vstylist::backends::protocol::ScoreKind;
use vstylist::backends::{Endpoint, Rule};
use vstylist::frames::Frame;
use vstylist::metrics::{
    clip_t, clip_w, cosine, evaluate, overall, quality_scores, semantic_consistency, ssim, structure_consistency,
    EvalOptions, MetricReport, SsimParams, METRIC_NAMES,
};
use vstylist::shot_detector::Shot;

fn random_frame(rng: &mut ChaCha8Rng, w: u32, h: u32) -> Frame {
    let pixels = (0..w * h * 3).map(|_| rng.gen()).collect();
    Frame::new(0, w, h, pixels).unwrap()
}

/// Direct double sum over each 11x11 window with two-pass moments.
fn ssim_oracle(a: &Frame, b: &Frame) -> f64 {
    let luma = |f: &Frame| -> Vec<f64> {
        f.pixels
            .chunks(3)
            .map(|p| (299.0 * p[0] as f64 + 587.0 * p[1] as f64 + 114.0 * p[2] as f64) / 1000.0)
            .collect()
    };
    let (x, y) = (luma(a), luma(b));
    let (w, h) = (a.width as usize, a.height as usize);
    let n = 11usize;
    let sigma = 1.5f64;
    let mut g = vec![vec![0.0; n]; n];
    let mut total = 0.0;
    for (i, row) in g.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
            total += *v;
        }
    }
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let mut acc = 0.0;
    let mut count = 0;
    for oy in 0..=h - n {
        for ox in 0..=w - n {
            let at = |p: &[f64], i: usize, j: usize| p[(oy + i) * w + ox + j];
            let (mut mx, mut my) = (0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    let wt = g[i][j] / total;
                    mx += wt * at(&x, i, j);
                    my += wt * at(&y, i, j);
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    let wt = g[i][j] / total;
                    let (dx, dy) = (at(&x, i, j) - mx, at(&y, i, j) - my);
                    vx += wt * dx * dx;
                    vy += wt * dy * dy;
                    cxy += wt * dx * dy;
                }
            }
            acc += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    acc / count as f64
}

#[test]
fn ssim_matches_direct_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let p = SsimParams::default();
    for _ in 0..20 {
        let a = random_frame(&mut rng, 32, 32);
        let b = if rng.gen_bool(0.5) {
            random_frame(&mut rng, 32, 32)
        } else {
            // correlated pair: a plus small noise
            let pixels = a.pixels.iter().map(|v| v.saturating_add(rng.gen_range(0..20))).collect();
            Frame::new(0, 32, 32, pixels).unwrap()
        };
        let got = ssim(&a, &b, &p).unwrap();
        let want = ssim_oracle(&a, &b);
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    }
}

#[test]
fn ssim_of_identical_frames_is_exactly_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let a = random_frame(&mut rng, 20, 14);
        assert_eq!(ssim(&a, &a, &SsimParams::default()).unwrap(), 1.0);
    }
}

#[test]
fn ssim_constant_frames_closed_form() {
    let p = SsimParams::default();
    for (u, v) in [(0u8, 255u8), (100, 120), (30, 30), (200, 10)] {
        let a = Frame::filled(0, 16, 16, [u; 3]);
        let b = Frame::filled(0, 16, 16, [v; 3]);
        let (u, v) = (u as f64, v as f64);
        let want = (2.0 * u * v + p.c1()) / (u * u + v * v + p.c1());
        assert!((ssim(&a, &b, &p).unwrap() - want).abs() < 1e-9);
    }
}

#[test]
fn ssim_rejects_bad_inputs() {
    let p = SsimParams::default();
    let small = Frame::filled(0, 10, 10, [1; 3]);
    assert!(ssim(&small, &small, &p).is_err());
    let a = Frame::filled(0, 16, 16, [1; 3]);
    let b = Frame::filled(0, 16, 12, [1; 3]);
    assert!(ssim(&a, &b, &p).is_err());
    let even = SsimParams { window: 10, ..p };
    assert!(ssim(&a, &a, &even).is_err());
}

#[test]
fn structure_excludes_boundary_pairs_on_request() {
    let p = SsimParams::default();
    let frames: Vec<Frame> = [10u8, 10, 200, 200]
        .iter()
        .enumerate()
        .map(|(i, v)| Frame::filled(i, 16, 16, [*v; 3]))
        .collect();
    let shots = [
        Shot { index: 0, start_frame: 0, end_frame: 2 },
        Shot { index: 1, start_frame: 2, end_frame: 4 },
    ];
    let cross = ssim(&frames[1], &frames[2], &p).unwrap();
    let all = structure_consistency(&frames, &p, None).unwrap();
    assert!((all - (2.0 + cross) / 3.0).abs() < 1e-12);
    assert_eq!(structure_consistency(&frames, &p, Some(&shots)).unwrap(), 1.0);
    assert!(structure_consistency(&frames[..1], &p, None).is_err());
}

fn gradient_frames(n: usize) -> Vec<Frame> {
    (0..n)
        .map(|i| {
            let mut pixels = Vec::new();
            for y in 0..16u32 {
                for x in 0..16u32 {
                    pixels.extend_from_slice(&[(x * 16) as u8, (y * 16) as u8, (i * 40) as u8]);
                }
            }
            Frame::new(i, 16, 16, pixels).unwrap()
        })
        .collect()
}

#[test]
fn clip_scores_match_embedding_oracle() {
    let (client, _) = mock_client(Vec::new());
    let frames = gradient_frames(5);
    let prompts = vec!["a red car".to_string(), "a blue sky".to_string()];
    let shots = [
        Shot { index: 0, start_frame: 0, end_frame: 3 },
        Shot { index: 1, start_frame: 3, end_frame: 5 },
    ];
    let text: Vec<Vec<f64>> = prompts.iter().map(|p| text_embedding(0, p)).collect();
    let want: f64 = [0usize, 2, 4]
        .iter()
        .map(|&i| cosine(&image_embedding(&frames[i]), &text[if i < 3 { 0 } else { 1 }]))
        .sum::<f64>()
        / 3.0;
    let got = clip_t(&frames, &prompts, &shots, &client, 2).unwrap();
    assert!((got - want).abs() < 1e-12);

    let style = text_embedding(0, "oil painting style");
    let want: f64 = frames.iter().map(|f| cosine(&image_embedding(f), &style)).sum::<f64>() / 5.0;
    let got = clip_w(&frames, " oil painting style ", &client, 1).unwrap();
    assert!((got - want).abs() < 1e-12);
    assert!(clip_w(&frames, "  ", &client, 1).is_err());
    assert!(clip_t(&frames, &prompts[..1], &shots, &client, 1).is_err());
}

#[test]
fn semantic_consistency_examples() {
    let (client, _) = mock_client(Vec::new());
    let still = vec![Frame::filled(0, 8, 8, [9, 80, 150]); 4];
    assert!((semantic_consistency(&still, &client).unwrap() - 1.0).abs() < 1e-12);
    let frames = gradient_frames(3);
    let e: Vec<Vec<f64>> = frames.iter().map(image_embedding).collect();
    let want = (cosine(&e[0], &e[1]) + cosine(&e[1], &e[2])) / 2.0;
    assert!((semantic_consistency(&frames, &client).unwrap() - want).abs() < 1e-12);
}

#[test]
fn embeddings_are_batched() {
    let (client, mock) = mock_client(Vec::new());
    let frames: Vec<Frame> = (0..40).map(|i| Frame::filled(i, 4, 4, [i as u8; 3])).collect();
    semantic_consistency(&frames, &client).unwrap();
    assert_eq!(mock.calls_to(Endpoint::Embed).len(), 3);
}

fn score_rule(kind: ScoreKind, value: f64) -> Rule {
    Rule {
        endpoint: Endpoint::Score,
        kind: Some(kind),
        response: Some(json!(value)),
        ..Default::default()
    }
}

#[test]
fn quality_scores_pass_through_scripted_values() {
    let (client, _) = mock_client(vec![
        score_rule(ScoreKind::AestheticI, 0.5906),
        score_rule(ScoreKind::DistortionI, 0.5924),
        score_rule(ScoreKind::AestheticV, 0.5826),
        score_rule(ScoreKind::DistortionV, 0.7445),
    ]);
    let q = quality_scores(&gradient_frames(3), &client).unwrap();
    assert_eq!((q.aesthetic_i, q.distortion_i, q.aesthetic_v, q.distortion_v), (0.5906, 0.5924, 0.5826, 0.7445));
}

#[test]
fn default_quality_is_mean_luma() {
    let (client, _) = mock_client(Vec::new());
    let frames = vec![Frame::filled(0, 4, 4, [0; 3]), Frame::filled(1, 4, 4, [255; 3])];
    let q = quality_scores(&frames, &client).unwrap();
    assert!((q.aesthetic_i - 0.5).abs() < 1e-12 && (q.distortion_v - 0.5).abs() < 1e-12);
    assert!(quality_scores(&[], &client).is_err());
}

#[test]
fn out_of_range_scores_are_protocol_errors() {
    let (client, _) = mock_client(vec![score_rule(ScoreKind::AestheticI, 1.5)]);
    let err = quality_scores(&gradient_frames(2), &client).unwrap_err();
    assert!(matches!(err, vstylist::Error::Protocol { .. }), "{err}");
}

#[test]
fn overall_examples() {
    let row = [0.2669, 0.1528, 0.9020, 0.9772, 0.5906, 0.5826, 0.5924, 0.7445];
    assert!((overall(&row).unwrap() - 0.6011).abs() < 1e-4);
    assert!(overall(&row[..7]).is_err());
    let mut bad = row;
    bad[3] = f64::NAN;
    assert!(overall(&bad).is_err());
    let r = MetricReport::from_values(&row).unwrap();
    assert_eq!(r.values(), row);
    assert_eq!(METRIC_NAMES.len(), 8);
}

#[test]
fn evaluate_combines_all_metrics() {
    let (client, _) = mock_client(Vec::new());
    let frames = gradient_frames(4);
    let shots = [Shot { index: 0, start_frame: 0, end_frame: 4 }];
    let prompts = vec!["waves".to_string()];
    let r = evaluate(&frames, &shots, &prompts, "ink style", &client, &EvalOptions::default()).unwrap();
    let v = r.values();
    assert!((r.overall - v.iter().sum::<f64>() / 8.0).abs() < 1e-12);
    assert_eq!(r.structure, structure_consistency(&frames, &SsimParams::default(), None).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn overall_is_permutation_invariant(mut v in prop::collection::vec(0.0f64..1.0, 8), seed in any::<u64>()) {
        let a = overall(&v).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..v.len()).rev() {
            v.swap(i, rng.gen_range(0..=i));
        }
        prop_assert!((a - overall(&v).unwrap()).abs() < 1e-12);
        prop_assert!(a >= v.iter().cloned().fold(f64::INFINITY, f64::min) - 1e-12);
        prop_assert!(a <= v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 1e-12);
    }

    #[test]
    fn ssim_is_symmetric_and_bounded(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_frame(&mut rng, 16, 16);
        let b = random_frame(&mut rng, 16, 16);
        let p = SsimParams::default();
        let ab = ssim(&a, &b, &p).unwrap();
        prop_assert!((ab - ssim(&b, &a, &p).unwrap()).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&ab));
    }
}
