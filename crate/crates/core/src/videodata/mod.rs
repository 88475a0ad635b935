//! Synthetic moving-shape videos, clip segmentation, and corpus storage.

mod generate;
mod store;

pub use generate::{class_motion, generate_corpus, generate_video, generate_videos, CorpusConfig};
pub use store::{dataset_hash, load_corpus, load_video, save_corpus, ManifestEntry, DatasetManifest, MANIFEST_FILE};

use crate::error::{Error, Result};

pub const CHANNELS: usize = 3;

/// Borrowed view of one `3 × H × W` frame.
#[derive(Debug, Clone, Copy)]
pub struct Frame<'a> {
    pub pixels: &'a [f32],
    pub height: usize,
    pub width: usize,
}

/// A decoded video: `T` frames stored contiguously as `(T, 3, H, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Video {
    pub id: String,
    pub label: usize,
    pub height: usize,
    pub width: usize,
    pub frames: Vec<f32>,
    pub corrupted_frame_mask: Vec<bool>,
}

impl Video {
    pub fn new(
        id: impl Into<String>,
        label: usize,
        height: usize,
        width: usize,
        frames: Vec<f32>,
        corrupted_frame_mask: Vec<bool>,
    ) -> Result<Self> {
        let frame_len = CHANNELS * height * width;
        if frame_len == 0 || frames.is_empty() || frames.len() % frame_len != 0 {
            return Err(Error::ShapeMismatch {
                expected: vec![0, CHANNELS, height, width],
                got: vec![frames.len()],
            });
        }
        let t = frames.len() / frame_len;
        if corrupted_frame_mask.len() != t {
            return Err(Error::ShapeMismatch {
                expected: vec![t],
                got: vec![corrupted_frame_mask.len()],
            });
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("video contains non-finite pixels".into()));
        }
        Ok(Video {
            id: id.into(),
            label,
            height,
            width,
            frames,
            corrupted_frame_mask,
        })
    }

    pub fn frame_len(&self) -> usize {
        CHANNELS * self.height * self.width
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len() / self.frame_len()
    }

    pub fn frame(&self, t: usize) -> Frame<'_> {
        let n = self.frame_len();
        Frame {
            pixels: &self.frames[t * n..(t + 1) * n],
            height: self.height,
            width: self.width,
        }
    }
}

/// A fixed-length window of frames, shaped `(L, 3, H, W)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub volume: Vec<f32>,
    pub length: usize,
    pub height: usize,
    pub width: usize,
    pub source_video: String,
    pub index: usize,
    pub corrupted: bool,
    pub padded_frames: usize,
}

impl Clip {
    pub fn shape(&self) -> [usize; 4] {
        [self.length, CHANNELS, self.height, self.width]
    }
}

/// Number of clips a `num_frames`-long video splits into.
pub fn clip_count(num_frames: usize, clip_length: usize) -> usize {
    num_frames.div_ceil(clip_length)
}

/// Splits a video into `ceil(T / L)` non-overlapping clips. The last clip is
/// padded by repeating its final real frame.
pub fn segment(video: &Video, clip_length: usize) -> Result<Vec<Clip>> {
    if clip_length == 0 {
        return Err(Error::config("clip_length must be at least 1"));
    }
    let t = video.num_frames();
    let n = clip_count(t, clip_length);
    let frame_len = video.frame_len();
    let mut clips = Vec::with_capacity(n);
    for i in 0..n {
        let start = i * clip_length;
        let end = (start + clip_length).min(t);
        let mut volume = Vec::with_capacity(clip_length * frame_len);
        volume.extend_from_slice(&video.frames[start * frame_len..end * frame_len]);
        let last = video.frame(end - 1).pixels;
        let padded = clip_length - (end - start);
        for _ in 0..padded {
            volume.extend_from_slice(last);
        }
        clips.push(Clip {
            volume,
            length: clip_length,
            height: video.height,
            width: video.width,
            source_video: video.id.clone(),
            index: i,
            corrupted: video.corrupted_frame_mask[start..end].iter().any(|&c| c),
            padded_frames: padded,
        });
    }
    Ok(clips)
}
