//! Hard-cut shot detection from per-channel color histograms with an
//! adaptive threshold over a trailing window of frame distances.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::{Frame, FrameManifest};

/// Contiguous frame range `[start_frame, end_frame)` of the source video.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shot {
    pub index: usize,
    pub start_frame: usize,
    pub end_frame: usize,
}

impl Shot {
    pub fn len(&self) -> usize {
        self.end_frame - self.start_frame
    }

    pub fn is_empty(&self) -> bool {
        self.start_frame >= self.end_frame
    }

    pub fn contains(&self, frame: usize) -> bool {
        frame >= self.start_frame && frame < self.end_frame
    }
}

/// Checks that `shots` partition `[0, frame_count)` in index order.
pub fn validate_partition(shots: &[Shot], frame_count: usize) -> Result<()> {
    let mut next = 0;
    for (i, s) in shots.iter().enumerate() {
        if s.index != i || s.start_frame != next || s.start_frame >= s.end_frame {
            return Err(Error::InvalidInput(format!(
                "shot list is not a partition at entry {i}: {s:?}"
            )));
        }
        next = s.end_frame;
    }
    if next != frame_count {
        return Err(Error::InvalidInput(format!(
            "shots cover [0, {next}) but the video has {frame_count} frames"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorParams {
    pub bins: usize,
    pub window: usize,
    pub k_sigma: f64,
    pub abs_threshold: f64,
    pub min_shot_len: usize,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            bins: 32,
            window: 60,
            k_sigma: 3.0,
            abs_threshold: 0.3,
            min_shot_len: 8,
        }
    }
}

impl DetectorParams {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.bins < 2 {
            problems.push("bins must be >= 2");
        }
        if self.window < 2 {
            problems.push("window must be >= 2");
        }
        if !(self.k_sigma > 0.0) {
            problems.push("k_sigma must be > 0");
        }
        if !(self.abs_threshold > 0.0 && self.abs_threshold < 1.0) {
            problems.push("abs_threshold must lie in (0, 1)");
        }
        if self.min_shot_len < 1 {
            problems.push("min_shot_len must be >= 1");
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join(", ")))
        }
    }
}

/// Concatenated R, G, B histograms, each normalized to sum to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub bins: usize,
    pub values: Vec<f64>,
}

pub fn frame_histogram(frame: &Frame, bins: usize) -> Result<Histogram> {
    if bins < 2 {
        return Err(Error::InvalidInput("histogram needs at least 2 bins".into()));
    }
    if frame.is_empty() {
        return Err(Error::InvalidInput(format!("frame {} is empty", frame.index)));
    }
    let mut counts = vec![0u64; 3 * bins];
    for px in frame.pixels.chunks_exact(3) {
        for (c, &v) in px.iter().enumerate() {
            counts[c * bins + v as usize * bins / 256] += 1;
        }
    }
    let n = (frame.pixels.len() / 3) as f64;
    Ok(Histogram {
        bins,
        values: counts.into_iter().map(|c| c as f64 / n).collect(),
    })
}

/// Mean over channels of the total-variation distance between histograms.
pub fn frame_distance(a: &Histogram, b: &Histogram) -> Result<f64> {
    if a.bins != b.bins || a.values.len() != b.values.len() {
        return Err(Error::InvalidInput(format!(
            "histogram length mismatch: {} vs {}",
            a.values.len(),
            b.values.len()
        )));
    }
    let l1: f64 = a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()).sum();
    Ok((l1 / 2.0 / 3.0).clamp(0.0, 1.0))
}

/// Anything that can split a frame sequence into shots. A network-served
/// detector plugs in here without touching the pipeline.
pub trait ShotDetector: Send + Sync {
    fn detect(&self, manifest: &FrameManifest) -> Result<Vec<Shot>>;
}

#[derive(Debug, Clone, Default)]
pub struct HistogramDetector {
    pub params: DetectorParams,
}

impl ShotDetector for HistogramDetector {
    fn detect(&self, manifest: &FrameManifest) -> Result<Vec<Shot>> {
        detect_shots(manifest, &self.params)
    }
}

pub fn detect_shots(manifest: &FrameManifest, params: &DetectorParams) -> Result<Vec<Shot>> {
    params.validate()?;
    if manifest.frame_count == 0 {
        return Err(Error::InvalidInput("video has no frames".into()));
    }
    let mut distances = Vec::with_capacity(manifest.frame_count.saturating_sub(1));
    let mut prev = frame_histogram(&manifest.read_frame(0)?, params.bins)?;
    for i in 1..manifest.frame_count {
        let hist = frame_histogram(&manifest.read_frame(i)?, params.bins)?;
        distances.push(frame_distance(&prev, &hist)?);
        prev = hist;
    }
    let cuts = boundaries_from_distances(&distances, params);
    Ok(shots_from_boundaries(&cuts, manifest.frame_count))
}

/// `distances[j]` is the distance between frames j and j+1. Returns the
/// frame indices that start a new shot.
///
/// Whether frame t is a candidate depends only on the distances and the
/// params, never on earlier decisions; candidates are then accepted greedily
/// subject to `min_shot_len`. Candidate sets shrink as `abs_threshold`
/// grows, so the shot count is monotone in it.
pub fn boundaries_from_distances(distances: &[f64], params: &DetectorParams) -> Vec<usize> {
    let mut cuts = Vec::new();
    let mut last_boundary = 0usize;
    for (j, &d) in distances.iter().enumerate() {
        let t = j + 1;
        let window = &distances[j.saturating_sub(params.window)..j];
        let (mean, std) = mean_std(window);
        let threshold = params.abs_threshold.max(mean + params.k_sigma * std);
        if d > threshold && t - last_boundary >= params.min_shot_len {
            cuts.push(t);
            last_boundary = t;
        }
    }
    cuts
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn shots_from_boundaries(cuts: &[usize], frame_count: usize) -> Vec<Shot> {
    let mut starts = vec![0];
    starts.extend(cuts.iter().copied().filter(|&c| c > 0 && c < frame_count));
    starts.dedup();
    starts
        .iter()
        .enumerate()
        .map(|(index, &start)| Shot {
            index,
            start_frame: start,
            end_frame: starts.get(index + 1).copied().unwrap_or(frame_count),
        })
        .collect()
}
