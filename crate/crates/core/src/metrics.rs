//! Evaluation metrics: SSIM structure consistency, embedding-based text
//! alignment and semantic consistency, backend quality scores, and their
//! mean.

use serde::{Deserialize, Serialize};

use crate::backends::protocol::ScoreKind;
use crate::backends::Client;
use crate::error::{Error, Result};
use crate::frames::Frame;
use crate::shot_detector::Shot;

const EMBED_BATCH: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 255.0,
        }
    }
}

impl SsimParams {
    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window % 2 == 0 || self.window == 0 {
            return Err(Error::Config(format!("SSIM window must be odd, got {}", self.window)));
        }
        if !(self.sigma > 0.0 && self.k1 > 0.0 && self.k2 > 0.0 && self.dynamic_range > 0.0) {
            return Err(Error::Config("SSIM constants must be positive".into()));
        }
        Ok(())
    }

    /// Normalized 1-D Gaussian; the 2-D window is its outer product.
    pub fn kernel(&self) -> Vec<f64> {
        let r = (self.window / 2) as f64;
        let raw: Vec<f64> = (0..self.window)
            .map(|i| {
                let d = i as f64 - r;
                (-(d * d) / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let sum: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / sum).collect()
    }
}

/// Valid-mode separable filtering of a `w x h` plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let line = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = k.iter().zip(&line[x..x + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = k.iter().enumerate().map(|(j, kj)| kj * rows[(y + j) * ow + x]).sum();
        }
    }
    out
}

/// Mean local SSIM over every valid window position of the luma planes.
pub fn ssim(a: &Frame, b: &Frame, params: &SsimParams) -> Result<f64> {
    params.validate()?;
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::InvalidInput(format!(
            "SSIM needs equal sizes, got {}x{} and {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    let (w, h) = (a.width as usize, a.height as usize);
    if w.min(h) < params.window {
        return Err(Error::InvalidInput(format!(
            "frame {w}x{h} is smaller than the {0}x{0} SSIM window",
            params.window
        )));
    }
    let x = a.luma();
    let y = b.luma();
    let k = params.kernel();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
    let mx = filter_valid(&x, w, h, &k);
    let my = filter_valid(&y, w, h, &k);
    let mxx = filter_valid(&prod(&x, &x), w, h, &k);
    let myy = filter_valid(&prod(&y, &y), w, h, &k);
    let mxy = filter_valid(&prod(&x, &y), w, h, &k);
    let (c1, c2) = (params.c1(), params.c2());
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = mxx[i] - ux * ux;
            let vy = myy[i] - uy * uy;
            let cxy = mxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / mx.len() as f64)
}

/// Mean SSIM of consecutive frames. With `cuts`, pairs whose second frame
/// starts a shot are skipped.
pub fn structure_consistency(frames: &[Frame], params: &SsimParams, cuts: Option<&[Shot]>) -> Result<f64> {
    if frames.len() < 2 {
        return Err(Error::InvalidInput("structure consistency needs at least 2 frames".into()));
    }
    let starts: Vec<usize> = cuts
        .map(|shots| shots.iter().skip(1).map(|s| s.start_frame).collect())
        .unwrap_or_default();
    let mut values = Vec::new();
    for i in 1..frames.len() {
        if starts.contains(&i) {
            continue;
        }
        values.push(ssim(&frames[i - 1], &frames[i], params)?);
    }
    if values.is_empty() {
        return Err(Error::InvalidInput("every frame pair straddles a shot boundary".into()));
    }
    Ok(mean(&values))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

fn strided(frames: &[Frame], stride: usize) -> Vec<(usize, &Frame)> {
    frames.iter().enumerate().step_by(stride.max(1)).collect()
}

fn embed_frames(client: &Client, frames: &[&Frame]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(frames.len());
    for chunk in frames.chunks(EMBED_BATCH) {
        let owned: Vec<Frame> = chunk.iter().map(|f| (*f).clone()).collect();
        out.extend(client.embed_frames(&owned)?);
    }
    Ok(out)
}

/// Mean cosine between each sampled frame and the prompt of its shot.
pub fn clip_t(frames: &[Frame], prompts: &[String], shots: &[Shot], client: &Client, stride: usize) -> Result<f64> {
    if frames.is_empty() {
        return Err(Error::InvalidInput("no frames to evaluate".into()));
    }
    if prompts.len() != shots.len() {
        return Err(Error::InvalidInput(format!(
            "{} shots but {} prompts",
            shots.len(),
            prompts.len()
        )));
    }
    let sampled = strided(frames, stride);
    let mut shot_of = Vec::with_capacity(sampled.len());
    for (i, _) in &sampled {
        let s = shots
            .iter()
            .position(|s| s.contains(*i))
            .ok_or_else(|| Error::InvalidInput(format!("frame {i} is not covered by any shot")))?;
        shot_of.push(s);
    }
    let text = client.embed_texts(prompts)?;
    let images = embed_frames(client, &sampled.iter().map(|(_, f)| *f).collect::<Vec<_>>())?;
    let values: Vec<f64> = images.iter().zip(&shot_of).map(|(v, s)| cosine(v, &text[*s])).collect();
    Ok(mean(&values))
}

/// Mean cosine between each sampled frame and the style phrase.
pub fn clip_w(frames: &[Frame], style_words: &str, client: &Client, stride: usize) -> Result<f64> {
    if style_words.trim().is_empty() {
        return Err(Error::InvalidInput("empty style words".into()));
    }
    if frames.is_empty() {
        return Err(Error::InvalidInput("no frames to evaluate".into()));
    }
    let text = client.embed_texts(&[style_words.trim().to_string()])?;
    let sampled = strided(frames, stride);
    let images = embed_frames(client, &sampled.iter().map(|(_, f)| *f).collect::<Vec<_>>())?;
    let values: Vec<f64> = images.iter().map(|v| cosine(v, &text[0])).collect();
    Ok(mean(&values))
}

/// Mean cosine between embeddings of consecutive frames.
pub fn semantic_consistency(frames: &[Frame], client: &Client) -> Result<f64> {
    if frames.len() < 2 {
        return Err(Error::InvalidInput("semantic consistency needs at least 2 frames".into()));
    }
    let v = embed_frames(client, &frames.iter().collect::<Vec<_>>())?;
    let values: Vec<f64> = v.windows(2).map(|p| cosine(&p[0], &p[1])).collect();
    Ok(mean(&values))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityScores {
    pub aesthetic_i: f64,
    pub distortion_i: f64,
    pub aesthetic_v: f64,
    pub distortion_v: f64,
}

pub fn quality_scores(frames: &[Frame], client: &Client) -> Result<QualityScores> {
    if frames.is_empty() {
        return Err(Error::InvalidInput("cannot score an empty video".into()));
    }
    Ok(QualityScores {
        aesthetic_i: client.score_frames(ScoreKind::AestheticI, frames)?,
        distortion_i: client.score_frames(ScoreKind::DistortionI, frames)?,
        aesthetic_v: client.score_frames(ScoreKind::AestheticV, frames)?,
        distortion_v: client.score_frames(ScoreKind::DistortionV, frames)?,
    })
}

pub const METRIC_NAMES: [&str; 8] = [
    "clip_t",
    "clip_w",
    "structure",
    "semantics",
    "aesthetic_i",
    "aesthetic_v",
    "distortion_i",
    "distortion_v",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub clip_t: f64,
    pub clip_w: f64,
    pub structure: f64,
    pub semantics: f64,
    pub aesthetic_i: f64,
    pub aesthetic_v: f64,
    pub distortion_i: f64,
    pub distortion_v: f64,
    pub overall: f64,
}

/// Arithmetic mean of the eight metric values.
pub fn overall(values: &[f64]) -> Result<f64> {
    if values.len() != METRIC_NAMES.len() {
        return Err(Error::InvalidInput(format!(
            "overall needs {} metric values, got {}",
            METRIC_NAMES.len(),
            values.len()
        )));
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("{} is not a finite number", METRIC_NAMES[i])));
    }
    Ok(mean(values))
}

impl MetricReport {
    /// Values in [`METRIC_NAMES`] order.
    pub fn from_values(values: &[f64]) -> Result<Self> {
        let overall = overall(values)?;
        Ok(Self {
            clip_t: values[0],
            clip_w: values[1],
            structure: values[2],
            semantics: values[3],
            aesthetic_i: values[4],
            aesthetic_v: values[5],
            distortion_i: values[6],
            distortion_v: values[7],
            overall,
        })
    }

    pub fn values(&self) -> [f64; 8] {
        [
            self.clip_t,
            self.clip_w,
            self.structure,
            self.semantics,
            self.aesthetic_i,
            self.aesthetic_v,
            self.distortion_i,
            self.distortion_v,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub frame_stride: usize,
    pub exclude_boundaries: bool,
    #[serde(skip)]
    pub ssim: SsimParams,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            frame_stride: 1,
            exclude_boundaries: false,
            ssim: SsimParams::default(),
        }
    }
}

/// All eight metrics of a stylized video. `prompts[i]` belongs to
/// `shots[i]`.
pub fn evaluate(
    stylized: &[Frame],
    shots: &[Shot],
    prompts: &[String],
    style_words: &str,
    client: &Client,
    opts: &EvalOptions,
) -> Result<MetricReport> {
    let cuts = opts.exclude_boundaries.then_some(shots);
    let q = quality_scores(stylized, client)?;
    MetricReport::from_values(&[
        clip_t(stylized, prompts, shots, client, opts.frame_stride)?,
        clip_w(stylized, style_words, client, opts.frame_stride)?,
        structure_consistency(stylized, &opts.ssim, cuts)?,
        semantic_consistency(stylized, client)?,
        q.aesthetic_i,
        q.aesthetic_v,
        q.distortion_i,
        q.distortion_v,
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        let k = SsimParams::default().kernel();
        assert_eq!(k.len(), 11);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(k[0], k[10]);
    }

    #[test]
    fn identical_is_exactly_one() {
        let f = Frame::filled(0, 16, 16, [10, 200, 30]);
        assert_eq!(ssim(&f, &f, &SsimParams::default()).unwrap(), 1.0);
    }

    #[test]
    fn rejects_small_and_mismatched() {
        let p = SsimParams::default();
        assert!(ssim(&Frame::filled(0, 8, 8, [0; 3]), &Frame::filled(0, 8, 8, [0; 3]), &p).is_err());
        assert!(ssim(&Frame::filled(0, 16, 16, [0; 3]), &Frame::filled(0, 16, 12, [0; 3]), &p).is_err());
    }

    #[test]
    fn overall_needs_eight() {
        assert!(overall(&[0.0; 7]).is_err());
        assert_eq!(overall(&[0.0; 8]).unwrap(), 0.0);
    }
}
