use std::f32::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{clip_count, save_corpus, DatasetManifest, Video, CHANNELS};
use crate::error::{Error, Result};
use crate::seed::rng_for;

/// Number of distinct motion directions before a second speed tier is used.
const MAX_DIRECTIONS: usize = 8;
const MAX_SPEED_TIERS: usize = 2;
/// Base displacement per frame, in units of `frame_size / 16` pixels.
const BASE_SPEED: f32 = 1.0;
/// Weight of uniform noise blended over a corrupted frame.
const CORRUPTION_NOISE: f32 = 0.7;
/// Occluding rectangles per corrupted frame. They follow the motion of a
/// different class, so a corrupted clip carries misleading motion.
const OCCLUDERS: usize = 2;
/// Lowest per-clip contrast of the moving shape.
const MIN_CONTRAST: f32 = 0.5;
/// Largest per-clip rotation of the motion direction, in degrees.
const MAX_TURN_DEG: f32 = 15.0;
/// Amplitude of per-pixel background noise on every frame.
const PIXEL_NOISE: f32 = 0.08;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub num_videos: usize,
    pub num_classes: usize,
    pub frames_per_video: usize,
    pub frame_size: usize,
    pub clip_length: usize,
    pub corrupt_prob: f64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            num_videos: 500,
            num_classes: 6,
            frames_per_video: 64,
            frame_size: 32,
            clip_length: 8,
            corrupt_prob: 0.3,
            seed: 0,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_videos == 0 {
            return Err(Error::config("num_videos must be positive"));
        }
        if self.num_classes < 2 || self.num_classes > MAX_DIRECTIONS * MAX_SPEED_TIERS {
            return Err(Error::config(format!(
                "num_classes must be in 2..={}",
                MAX_DIRECTIONS * MAX_SPEED_TIERS
            )));
        }
        if !(0.0..1.0).contains(&self.corrupt_prob) {
            return Err(Error::config("corrupt_prob must lie in [0, 1)"));
        }
        if self.frame_size < 16 {
            return Err(Error::config("frame_size must be at least 16"));
        }
        if self.clip_length == 0 {
            return Err(Error::config("clip_length must be at least 1"));
        }
        if self.frames_per_video < self.clip_length {
            return Err(Error::config(format!(
                "frames_per_video ({}) is smaller than one clip ({})",
                self.frames_per_video, self.clip_length
            )));
        }
        Ok(())
    }

    pub fn clips_per_video(&self) -> usize {
        clip_count(self.frames_per_video, self.clip_length)
    }
}

/// Motion of class `class`: (direction in radians, speed in pixels/frame at 16px).
///
/// Classes enumerate a direction × speed grid; the first `min(C, 8)` classes
/// use the base speed, the rest move twice as fast.
pub fn class_motion(class: usize, num_classes: usize) -> (f32, f32) {
    let directions = num_classes.min(MAX_DIRECTIONS);
    let dir = class % directions;
    let tier = class / directions;
    (
        2.0 * PI * dir as f32 / directions as f32,
        BASE_SPEED * (1 + tier) as f32,
    )
}

#[derive(Debug, Clone, Copy)]
enum ShapeKind {
    Square,
    Disk,
    Diamond,
}

#[derive(Debug, Clone, Copy)]
struct Mover {
    x: f32,
    y: f32,
    vx: f32,
    vy: f32,
}

impl Mover {
    fn at(&self, t: usize, size: f32) -> (f32, f32) {
        (
            (self.x + self.vx * t as f32).rem_euclid(size),
            (self.y + self.vy * t as f32).rem_euclid(size),
        )
    }
}

fn random_mover(rng: &mut ChaCha8Rng, class: usize, num_classes: usize, size: f32) -> Mover {
    let (angle, speed) = class_motion(class, num_classes);
    let angle = angle + rng.gen_range(-0.1..0.1);
    let speed = speed * size / 16.0 * rng.gen_range(0.9..1.1);
    Mover {
        x: rng.gen_range(0.0..size),
        y: rng.gen_range(0.0..size),
        vx: speed * angle.cos(),
        vy: speed * angle.sin(),
    }
}

/// Signed offset from `a` to `b` on a ring of length `size`.
fn ring_delta(a: f32, b: f32, size: f32) -> f32 {
    let d = (b - a).rem_euclid(size);
    if d >= size / 2.0 {
        d - size
    } else {
        d
    }
}

fn coverage(kind: ShapeKind, cx: f32, cy: f32, radius: f32, px: usize, py: usize, size: f32) -> f32 {
    // 3x3 supersampling gives sub-pixel motion a visible footprint
    let mut hits = 0;
    for sy in 0..3 {
        for sx in 0..3 {
            let x = px as f32 + (sx as f32 + 0.5) / 3.0;
            let y = py as f32 + (sy as f32 + 0.5) / 3.0;
            let dx = ring_delta(cx, x, size);
            let dy = ring_delta(cy, y, size);
            let inside = match kind {
                ShapeKind::Square => dx.abs().max(dy.abs()) <= radius,
                ShapeKind::Disk => dx * dx + dy * dy <= radius * radius,
                ShapeKind::Diamond => dx.abs() + dy.abs() <= 1.3 * radius,
            };
            if inside {
                hits += 1;
            }
        }
    }
    hits as f32 / 9.0
}

fn quantize(v: f32) -> f32 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

/// Generates video `index` of a corpus. Pure in `(config, index)`.
pub fn generate_video(config: &CorpusConfig, index: usize) -> Video {
    let mut rng = rng_for(config.seed, index as u64);
    let s = config.frame_size;
    let size = s as f32;
    let c = config.num_classes;
    let label = index % c;
    let t_total = config.frames_per_video;
    let frame_len = CHANNELS * s * s;

    let blocks = config.clips_per_video();
    let block_corrupt: Vec<bool> = (0..blocks)
        .map(|_| rng.gen_bool(config.corrupt_prob))
        .collect();
    let mask: Vec<bool> = (0..t_total)
        .map(|t| block_corrupt[t / config.clip_length])
        .collect();

    let kind = match rng.gen_range(0..3) {
        0 => ShapeKind::Square,
        1 => ShapeKind::Disk,
        _ => ShapeKind::Diamond,
    };
    let radius = size * rng.gen_range(0.12..0.2);
    let color: [f32; 3] = std::array::from_fn(|_| rng.gen_range(0.6..1.0));
    let background: [f32; 3] = std::array::from_fn(|_| rng.gen_range(0.0..0.25));
    let gradient: [f32; 2] = [rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1)];
    let base = random_mover(&mut rng, label, c, size);

    let decoy_class = (label + rng.gen_range(1..c)) % c;
    let occluders: Vec<(Mover, f32, f32, [f32; 3])> = (0..OCCLUDERS)
        .map(|_| {
            let m = random_mover(&mut rng, decoy_class, c, size);
            let w = size * rng.gen_range(0.2..0.35);
            let h = size * rng.gen_range(0.2..0.35);
            let col = std::array::from_fn(|_| rng.gen_range(0.4..1.0));
            (m, w, h, col)
        })
        .collect();
    // per-block appearance
    let max_turn = MAX_TURN_DEG.to_radians();
    let block_style: Vec<(f32, f32)> = (0..blocks)
        .map(|_| (rng.gen_range(MIN_CONTRAST..=1.0), rng.gen_range(-max_turn..max_turn)))
        .collect();

    let mut frames = vec![0.0f32; t_total * frame_len];
    let mut pos = (base.x, base.y);
    for t in 0..t_total {
        let frame = &mut frames[t * frame_len..(t + 1) * frame_len];
        let b = t / config.clip_length;
        let (contrast, turn) = block_style[b];
        let corrupted = mask[t];
        if t > 0 {
            let (sn, cs) = turn.sin_cos();
            pos.0 = (pos.0 + base.vx * cs - base.vy * sn).rem_euclid(size);
            pos.1 = (pos.1 + base.vx * sn + base.vy * cs).rem_euclid(size);
        }
        for py in 0..s {
            for px in 0..s {
                let cov = coverage(kind, pos.0, pos.1, radius, px, py, size) * contrast;
                let shade = gradient[0] * (px as f32 / size - 0.5) + gradient[1] * (py as f32 / size - 0.5);
                for ch in 0..CHANNELS {
                    let bg = background[ch] + shade + rng.gen_range(-PIXEL_NOISE..=PIXEL_NOISE);
                    frame[(ch * s + py) * s + px] = bg * (1.0 - cov) + color[ch] * cov;
                }
            }
        }
        if corrupted {
            for v in frame.iter_mut() {
                *v = (1.0 - CORRUPTION_NOISE) * *v + CORRUPTION_NOISE * rng.gen::<f32>();
            }
            for (m, w, h, col) in &occluders {
                let (ox, oy) = m.at(t, size);
                for py in 0..s {
                    for px in 0..s {
                        let dx = ring_delta(ox, px as f32 + 0.5, size);
                        let dy = ring_delta(oy, py as f32 + 0.5, size);
                        if dx.abs() <= w / 2.0 && dy.abs() <= h / 2.0 {
                            for ch in 0..CHANNELS {
                                frame[(ch * s + py) * s + px] = col[ch];
                            }
                        }
                    }
                }
            }
        }
        for v in frame.iter_mut() {
            *v = quantize(*v);
        }
    }

    Video {
        id: format!("v{index:05}"),
        label,
        height: s,
        width: s,
        frames,
        corrupted_frame_mask: mask,
    }
}

pub fn generate_videos(config: &CorpusConfig) -> Result<Vec<Video>> {
    config.validate()?;
    Ok((0..config.num_videos)
        .into_par_iter()
        .map(|i| generate_video(config, i))
        .collect())
}

/// Generates the corpus and writes it to `dir`.
pub fn generate_corpus(config: &CorpusConfig, dir: &Path) -> Result<DatasetManifest> {
    let videos = generate_videos(config)?;
    save_corpus(&videos, config, dir)
}
