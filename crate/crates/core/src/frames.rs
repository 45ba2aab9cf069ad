//! Frame sequences on disk: a directory of lossless PNG files plus a
//! `manifest.json` descriptor.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::process::Command;

use image::codecs::png::PngEncoder;
use image::{ExtendedColorType, ImageEncoder};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::shot_detector::Shot;
use crate::util;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DEFAULT_PATTERN: &str = "frame_%06d.png";

/// One RGB8 raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub index: usize,
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl Frame {
    pub fn new(index: usize, width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(Error::InvalidInput(format!(
                "frame {index}: pixel buffer has {} bytes, expected {expected}",
                pixels.len()
            )));
        }
        Ok(Self {
            index,
            width,
            height,
            pixels,
        })
    }

    pub fn filled(index: usize, width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let pixels = rgb
            .iter()
            .copied()
            .cycle()
            .take(width as usize * height as usize * 3)
            .collect();
        Self {
            index,
            width,
            height,
            pixels,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Content hash over dimensions and raw pixels; independent of PNG
    /// encoder settings, so scenario files can key on it.
    pub fn content_hash(&self) -> String {
        let mut bytes = Vec::with_capacity(8 + self.pixels.len());
        bytes.extend_from_slice(&self.width.to_le_bytes());
        bytes.extend_from_slice(&self.height.to_le_bytes());
        bytes.extend_from_slice(&self.pixels);
        util::sha256_hex(&bytes)
    }

    /// BT.601 luma per pixel, as f64.
    pub fn luma(&self) -> Vec<f64> {
        self.pixels
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
            .collect()
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        PngEncoder::new(&mut out).write_image(
            &self.pixels,
            self.width,
            self.height,
            ExtendedColorType::Rgb8,
        )?;
        Ok(out)
    }

    pub fn decode_png(index: usize, bytes: &[u8]) -> Result<Self> {
        let img = image::load(Cursor::new(bytes), image::ImageFormat::Png)?.into_rgb8();
        let (width, height) = img.dimensions();
        Frame::new(index, width, height, img.into_raw())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestDescriptor {
    fps: f64,
    width: u32,
    height: u32,
    frame_count: usize,
    pattern: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameManifest {
    pub directory: PathBuf,
    pub fps: f64,
    pub width: u32,
    pub height: u32,
    pub frame_count: usize,
    /// Relative to `directory`; may include a subdirectory, e.g.
    /// `input/frame_%06d.png`.
    pub name_pattern: String,
}

/// Splits `frame_%06d.png` into (`frame_`, 6, `.png`).
fn parse_pattern(pattern: &str) -> Result<(&str, usize, &str)> {
    let bad = || Error::Manifest(format!("unsupported frame name pattern {pattern:?}"));
    let start = pattern.find("%0").ok_or_else(bad)?;
    let rest = &pattern[start + 2..];
    let d = rest.find('d').ok_or_else(bad)?;
    let width: usize = rest[..d].parse().map_err(|_| bad())?;
    let suffix = &rest[d + 1..];
    if suffix.contains('%') || width == 0 {
        return Err(bad());
    }
    Ok((&pattern[..start], width, suffix))
}

impl FrameManifest {
    pub fn frame_path(&self, index: usize) -> PathBuf {
        // pattern validated on construction
        let (prefix, width, suffix) = parse_pattern(&self.name_pattern).expect("validated pattern");
        self.directory
            .join(format!("{prefix}{index:0width$}{suffix}"))
    }

    pub fn read_frame(&self, index: usize) -> Result<Frame> {
        if index >= self.frame_count {
            return Err(Error::InvalidInput(format!(
                "frame {index} out of range (frame_count {})",
                self.frame_count
            )));
        }
        let path = self.frame_path(index);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let frame = Frame::decode_png(index, &bytes)
            .map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        if frame.width != self.width || frame.height != self.height {
            return Err(Error::Manifest(format!(
                "{}: {}x{} does not match manifest {}x{}",
                path.display(),
                frame.width,
                frame.height,
                self.width,
                self.height
            )));
        }
        Ok(frame)
    }

    pub fn read_range(&self, start: usize, end: usize) -> Result<Vec<Frame>> {
        (start..end).map(|i| self.read_frame(i)).collect()
    }

    pub fn read_all(&self) -> Result<Vec<Frame>> {
        self.read_range(0, self.frame_count)
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.directory.join(MANIFEST_FILE)
    }

    fn descriptor(&self) -> ManifestDescriptor {
        ManifestDescriptor {
            fps: self.fps,
            width: self.width,
            height: self.height,
            frame_count: self.frame_count,
            pattern: self.name_pattern.clone(),
        }
    }

    /// Number of files in the frame directory whose names match the pattern.
    fn count_matching_files(&self) -> Result<usize> {
        let (prefix, width, suffix) = parse_pattern(&self.name_pattern)?;
        let (sub, file_prefix) = match prefix.rfind('/') {
            Some(i) => (&prefix[..i], &prefix[i + 1..]),
            None => ("", prefix),
        };
        let dir = self.directory.join(sub);
        let entries = fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut count = 0;
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&dir, e))?;
            let name = entry.file_name();
            let Some(name) = name.to_str() else { continue };
            let digits = name
                .strip_prefix(file_prefix)
                .and_then(|s| s.strip_suffix(suffix));
            if let Some(digits) = digits {
                if digits.len() == width && digits.bytes().all(|b| b.is_ascii_digit()) {
                    count += 1;
                }
            }
        }
        Ok(count)
    }
}

/// Loads and fully validates the sequence described by `dir/manifest.json`.
pub fn load_manifest(dir: &Path) -> Result<FrameManifest> {
    let path = dir.join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(Error::Manifest(format!("missing descriptor {}", path.display())));
    }
    let desc: ManifestDescriptor = util::read_json(&path)?;
    if !(desc.fps > 0.0) || !desc.fps.is_finite() {
        return Err(Error::Manifest(format!("fps must be positive, got {}", desc.fps)));
    }
    parse_pattern(&desc.pattern)?;
    let manifest = FrameManifest {
        directory: dir.to_path_buf(),
        fps: desc.fps,
        width: desc.width,
        height: desc.height,
        frame_count: desc.frame_count,
        name_pattern: desc.pattern,
    };
    let present = manifest.count_matching_files()?;
    if present != manifest.frame_count {
        return Err(Error::Manifest(format!(
            "descriptor claims {} frames but {present} files match {:?}",
            manifest.frame_count, manifest.name_pattern
        )));
    }
    for i in 0..manifest.frame_count {
        manifest.read_frame(i)?;
    }
    Ok(manifest)
}

/// Writes frames as `frame_%06d.png` plus the descriptor into `dir`.
pub fn write_sequence(frames: &[Frame], fps: f64, dir: &Path) -> Result<FrameManifest> {
    write_sequence_with_pattern(frames, fps, dir, DEFAULT_PATTERN)
}

/// Like [`write_sequence`], with the frame files at `pattern` relative to
/// the descriptor directory.
pub fn write_sequence_with_pattern(
    frames: &[Frame],
    fps: f64,
    dir: &Path,
    pattern: &str,
) -> Result<FrameManifest> {
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidInput("cannot write an empty frame sequence".into()))?;
    if !(fps > 0.0) {
        return Err(Error::InvalidInput(format!("fps must be positive, got {fps}")));
    }
    if let Some(odd) = frames
        .iter()
        .find(|f| f.width != first.width || f.height != first.height)
    {
        return Err(Error::InvalidInput(format!(
            "heterogeneous dimensions: frame {} is {}x{}, expected {}x{}",
            odd.index, odd.width, odd.height, first.width, first.height
        )));
    }
    parse_pattern(pattern)?;
    let manifest = FrameManifest {
        directory: dir.to_path_buf(),
        fps,
        width: first.width,
        height: first.height,
        frame_count: frames.len(),
        name_pattern: pattern.to_string(),
    };
    for (i, frame) in frames.iter().enumerate() {
        let path = manifest.frame_path(i);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&path, frame.encode_png()?).map_err(|e| Error::io(&path, e))?;
    }
    util::write_json(&manifest.manifest_path(), &manifest.descriptor())?;
    Ok(manifest)
}

/// Decodes a compressed video into a PNG sequence through a user-supplied
/// command template with `{input}`, `{outdir}` and `{fps}` placeholders,
/// then loads it. The command must also write `manifest.json`, or produce
/// `frame_%06d.png` files, in which case a descriptor is synthesized.
pub fn ingest_with_decoder(template: &str, input: &Path, outdir: &Path, fps: f64) -> Result<FrameManifest> {
    fs::create_dir_all(outdir).map_err(|e| Error::io(outdir, e))?;
    let mut tokens = template.split_whitespace().map(|tok| {
        tok.replace("{input}", &input.display().to_string())
            .replace("{outdir}", &outdir.display().to_string())
            .replace("{fps}", &fps.to_string())
    });
    let program = tokens
        .next()
        .ok_or_else(|| Error::Config("empty decoder command template".into()))?;
    let status = Command::new(&program)
        .args(tokens)
        .status()
        .map_err(|e| Error::io(&program, e))?;
    if !status.success() {
        return Err(Error::InvalidInput(format!("decoder command exited with {status}")));
    }
    if !outdir.join(MANIFEST_FILE).is_file() {
        let mut frames = Vec::new();
        let probe = FrameManifest {
            directory: outdir.to_path_buf(),
            fps,
            width: 0,
            height: 0,
            frame_count: 0,
            name_pattern: DEFAULT_PATTERN.into(),
        };
        let count = probe.count_matching_files()?;
        for i in 0..count {
            let path = probe.frame_path(i);
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            frames.push(Frame::decode_png(i, &bytes)?);
        }
        write_sequence(&frames, fps, outdir)?;
    }
    load_manifest(outdir)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SceneKind {
    Solid,
    HorizontalGradient,
    MovingRectangle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub duration_frames: usize,
    pub kind: SceneKind,
    pub palette: [u8; 3],
    /// Horizontal rectangle displacement in pixels per frame.
    #[serde(default)]
    pub motion: i32,
}

/// Minimum per-channel difference between the base colors of adjacent scenes.
pub const PALETTE_SEPARATION: u8 = 64;

/// Folds an unbounded coordinate into `[0, span]`, bouncing at the ends.
fn ping_pong(pos: i64, span: i64) -> i64 {
    if span == 0 {
        return 0;
    }
    let period = 2 * span;
    let m = pos.rem_euclid(period);
    if m <= span {
        m
    } else {
        period - m
    }
}

/// Renders scene specs into frames with hard cuts exactly at the cumulative
/// scene boundaries.
pub fn synthesize_frames(scenes: &[SceneSpec], width: u32, height: u32, seed: u64) -> Result<Vec<Frame>> {
    if scenes.is_empty() {
        return Err(Error::InvalidInput("at least one scene is required".into()));
    }
    if width < 4 || height < 4 {
        return Err(Error::InvalidInput(format!("degenerate dimensions {width}x{height}")));
    }
    for (i, scene) in scenes.iter().enumerate() {
        if scene.duration_frames == 0 {
            return Err(Error::InvalidInput(format!("scene {i} has zero duration")));
        }
    }
    for (i, pair) in scenes.windows(2).enumerate() {
        let (a, b) = (pair[0].palette, pair[1].palette);
        if (0..3).any(|c| a[c].abs_diff(b[c]) < PALETTE_SEPARATION) {
            return Err(Error::InvalidInput(format!(
                "scenes {i} and {} have palettes {a:?} and {b:?}, closer than {PALETTE_SEPARATION} in some channel",
                i + 1
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (width as usize, height as usize);
    let mut frames = Vec::new();
    for scene in scenes {
        let base = scene.palette;
        let rect_w = (w / 3).max(1);
        let rect_h = (h / 3).max(1);
        let x0 = rng.gen_range(0..=(w - rect_w)) as i64;
        let y0 = rng.gen_range(0..=(h - rect_h));
        let rect_color = base.map(|c| c ^ 0x80);

        for f in 0..scene.duration_frames {
            let mut pixels = Vec::with_capacity(w * h * 3);
            let rect_x = ping_pong(x0 + scene.motion as i64 * f as i64, (w - rect_w) as i64) as usize;
            for y in 0..h {
                for x in 0..w {
                    let px = match scene.kind {
                        SceneKind::Solid => base,
                        SceneKind::HorizontalGradient => {
                            let offset = (x * 64 / w) as i32 - 32;
                            base.map(|c| (c as i32 + offset).clamp(0, 255) as u8)
                        }
                        SceneKind::MovingRectangle => {
                            let inside = x >= rect_x && x < rect_x + rect_w && y >= y0 && y < y0 + rect_h;
                            if inside {
                                rect_color
                            } else {
                                base
                            }
                        }
                    };
                    pixels.extend_from_slice(&px);
                }
            }
            frames.push(Frame {
                index: frames.len(),
                width,
                height,
                pixels,
            });
        }
    }
    Ok(frames)
}

/// Synthesizes a multi-scene fixture video and writes it to `dir`.
pub fn generate_synthetic(
    scenes: &[SceneSpec],
    fps: f64,
    width: u32,
    height: u32,
    seed: u64,
    dir: &Path,
) -> Result<FrameManifest> {
    let frames = synthesize_frames(scenes, width, height, seed)?;
    write_sequence(&frames, fps, dir)
}

/// Random palette-separated scene list, as used by the fixture generator.
pub fn random_scenes(count: usize, min_len: usize, max_len: usize, seed: u64) -> Vec<SceneSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scenes: Vec<SceneSpec> = Vec::with_capacity(count);
    for _ in 0..count {
        let palette = match scenes.last() {
            None => [rng.gen(), rng.gen(), rng.gen()],
            Some(prev) => prev.palette.map(|p| loop {
                let c: u8 = rng.gen();
                if c.abs_diff(p) >= PALETTE_SEPARATION {
                    break c;
                }
            }),
        };
        let kind = match rng.gen_range(0..3) {
            0 => SceneKind::Solid,
            1 => SceneKind::HorizontalGradient,
            _ => SceneKind::MovingRectangle,
        };
        scenes.push(SceneSpec {
            duration_frames: rng.gen_range(min_len..=max_len),
            kind,
            palette,
            motion: rng.gen_range(-3..=3),
        });
    }
    scenes
}

/// Evenly spaced frame indices over `[start, end)`, including both ends.
/// For k = 3 this is first, floor-midpoint, last.
pub fn keyframe_indices(shot: &Shot, k: usize) -> Vec<usize> {
    let span = shot.end_frame - shot.start_frame - 1;
    if k == 1 {
        return vec![shot.start_frame];
    }
    (0..k)
        .map(|j| shot.start_frame + j * span / (k - 1))
        .collect()
}

pub fn sample_keyframes(manifest: &FrameManifest, shot: &Shot, k: usize) -> Result<Vec<Frame>> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    if shot.start_frame >= shot.end_frame || shot.end_frame > manifest.frame_count {
        return Err(Error::InvalidInput(format!(
            "shot [{}, {}) out of range for {} frames",
            shot.start_frame, shot.end_frame, manifest.frame_count
        )));
    }
    keyframe_indices(shot, k)
        .into_iter()
        .map(|i| manifest.read_frame(i))
        .collect()
}

/// Drops repeated frames (same index) from a keyframe list, keeping order.
pub fn dedup_keyframes(mut frames: Vec<Frame>) -> Vec<Frame> {
    frames.dedup_by_key(|f| f.index);
    frames
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn shot(start: usize, end: usize) -> Shot {
        Shot {
            index: 0,
            start_frame: start,
            end_frame: end,
        }
    }

    fn solid(n: usize, palette: [u8; 3]) -> SceneSpec {
        SceneSpec {
            duration_frames: n,
            kind: SceneKind::Solid,
            palette,
            motion: 0,
        }
    }

    #[test]
    fn three_frames_load_back() {
        let dir = tempdir().unwrap();
        let frames: Vec<_> = (0..3).map(|i| Frame::filled(i, 64, 64, [i as u8, 0, 0])).collect();
        write_sequence(&frames, 30.0, dir.path()).unwrap();
        let m = load_manifest(dir.path()).unwrap();
        assert_eq!(m.frame_count, 3);
        assert_eq!((m.width, m.height), (64, 64));
        assert_eq!(m.fps, 30.0);
    }

    #[test]
    fn descriptor_count_mismatch_is_rejected() {
        let dir = tempdir().unwrap();
        let frames: Vec<_> = (0..3).map(|i| Frame::filled(i, 8, 8, [0, 0, 0])).collect();
        write_sequence(&frames, 30.0, dir.path()).unwrap();
        let desc = r#"{"fps":30.0,"width":8,"height":8,"frame_count":4,"pattern":"frame_%06d.png"}"#;
        fs::write(dir.path().join(MANIFEST_FILE), desc).unwrap();
        assert!(matches!(load_manifest(dir.path()), Err(Error::Manifest(_))));
    }

    #[test]
    fn missing_descriptor_and_bad_frames() {
        let dir = tempdir().unwrap();
        assert!(load_manifest(dir.path()).is_err());

        let frames: Vec<_> = (0..2).map(|i| Frame::filled(i, 8, 8, [1, 2, 3])).collect();
        write_sequence(&frames, 30.0, dir.path()).unwrap();
        fs::write(dir.path().join("frame_000001.png"), b"not a png").unwrap();
        assert!(load_manifest(dir.path()).is_err());

        write_sequence(&frames, 30.0, dir.path()).unwrap();
        let odd = Frame::filled(1, 4, 4, [0, 0, 0]);
        fs::write(dir.path().join("frame_000001.png"), odd.encode_png().unwrap()).unwrap();
        assert!(load_manifest(dir.path()).is_err());
    }

    #[test]
    fn write_rejects_empty_and_mixed_sizes() {
        let dir = tempdir().unwrap();
        assert!(write_sequence(&[], 30.0, dir.path()).is_err());
        let mixed = vec![Frame::filled(0, 8, 8, [0; 3]), Frame::filled(1, 8, 9, [0; 3])];
        assert!(write_sequence(&mixed, 30.0, dir.path()).is_err());
        let one = write_sequence(&[Frame::filled(0, 8, 8, [0; 3])], 30.0, dir.path()).unwrap();
        assert_eq!(one.frame_count, 1);
    }

    #[test]
    fn ninety_synthetic_frames_round_trip_exactly() {
        let dir = tempdir().unwrap();
        let scenes = [
            SceneSpec {
                duration_frames: 50,
                kind: SceneKind::MovingRectangle,
                palette: [20, 40, 60],
                motion: 2,
            },
            SceneSpec {
                duration_frames: 40,
                kind: SceneKind::HorizontalGradient,
                palette: [200, 180, 160],
                motion: 0,
            },
        ];
        let frames = synthesize_frames(&scenes, 32, 24, 7).unwrap();
        let m = write_sequence(&frames, 30.0, dir.path()).unwrap();
        assert_eq!(m.frame_count, 90);
        let loaded = load_manifest(dir.path()).unwrap().read_all().unwrap();
        assert_eq!(loaded, frames);
    }

    #[test]
    fn nested_pattern_round_trips() {
        let dir = tempdir().unwrap();
        let frames: Vec<_> = (0..2).map(|i| Frame::filled(i, 8, 8, [9, 9, i as u8])).collect();
        write_sequence_with_pattern(&frames, 25.0, dir.path(), "input/frame_%06d.png").unwrap();
        assert!(dir.path().join("input/frame_000001.png").is_file());
        assert_eq!(load_manifest(dir.path()).unwrap().read_all().unwrap(), frames);
    }

    #[test]
    fn single_solid_scene_is_constant() {
        let frames = synthesize_frames(&[solid(30, [10, 200, 30])], 16, 16, 1).unwrap();
        assert_eq!(frames.len(), 30);
        assert!(frames.iter().all(|f| f.pixels == frames[0].pixels));
    }

    #[test]
    fn cut_lands_on_scene_boundary() {
        let frames = synthesize_frames(&[solid(50, [0, 0, 0]), solid(40, [128, 128, 128])], 8, 8, 1).unwrap();
        assert_eq!(frames[49].pixel(0, 0), [0, 0, 0]);
        assert_eq!(frames[50].pixel(0, 0), [128, 128, 128]);
    }

    #[test]
    fn synthesis_is_seed_deterministic() {
        let scenes = random_scenes(4, 8, 20, 3);
        let a = synthesize_frames(&scenes, 24, 16, 99).unwrap();
        let b = synthesize_frames(&scenes, 24, 16, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn synthesis_preconditions() {
        assert!(synthesize_frames(&[], 8, 8, 0).is_err());
        assert!(synthesize_frames(&[solid(3, [0; 3])], 2, 8, 0).is_err());
        let close = [solid(3, [0, 0, 0]), solid(3, [100, 100, 10])];
        assert!(synthesize_frames(&close, 8, 8, 0).is_err());
    }

    #[test]
    fn rectangle_stays_in_bounds() {
        for pos in -50..50 {
            let p = ping_pong(pos, 7);
            assert!((0..=7).contains(&p));
        }
    }

    #[test]
    fn keyframe_index_rule() {
        assert_eq!(keyframe_indices(&shot(0, 90), 3), vec![0, 44, 89]);
        assert_eq!(keyframe_indices(&shot(5, 6), 3), vec![5, 5, 5]);
        assert_eq!(keyframe_indices(&shot(0, 2), 3), vec![0, 0, 1]);
        assert_eq!(keyframe_indices(&shot(10, 20), 1), vec![10]);
    }

    #[test]
    fn keyframes_dedup_and_range_check() {
        let dir = tempdir().unwrap();
        let frames: Vec<_> = (0..4).map(|i| Frame::filled(i, 8, 8, [i as u8; 3])).collect();
        let m = write_sequence(&frames, 30.0, dir.path()).unwrap();
        let keys = sample_keyframes(&m, &shot(0, 2), 3).unwrap();
        assert_eq!(keys.iter().map(|f| f.index).collect::<Vec<_>>(), vec![0, 0, 1]);
        let keys = dedup_keyframes(keys);
        assert_eq!(keys.iter().map(|f| f.index).collect::<Vec<_>>(), vec![0, 1]);
        assert!(sample_keyframes(&m, &shot(2, 5), 3).is_err());
    }

    proptest::proptest! {
        #[test]
        fn keyframes_sorted_and_in_range(start in 0usize..100, len in 1usize..200, k in 1usize..8) {
            let s = shot(start, start + len);
            let idx = keyframe_indices(&s, k);
            proptest::prop_assert_eq!(idx.len(), k);
            proptest::prop_assert!(idx.windows(2).all(|w| w[0] <= w[1]));
            proptest::prop_assert!(idx.iter().all(|&i| i >= s.start_frame && i < s.end_frame));
            proptest::prop_assert_eq!(idx[0], s.start_frame);
            if k > 1 {
                proptest::prop_assert_eq!(*idx.last().unwrap(), s.end_frame - 1);
            }
        }
    }
}
