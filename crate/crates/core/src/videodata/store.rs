use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{clip_count, CorpusConfig, Video, CHANNELS};
use crate::cdar::{self, Array, ArrayData};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

pub const MANIFEST_FILE: &str = "manifest.jsonl";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestHeader {
    format_version: u32,
    num_classes: usize,
    clip_length: usize,
    seed: u64,
    frames_per_video: usize,
    frame_size: usize,
    corrupt_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Relative to the corpus directory.
    pub path: PathBuf,
    pub label: usize,
    pub clip_corrupted: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub num_classes: usize,
    pub clip_length: usize,
    pub generator_seed: u64,
    pub frames_per_video: usize,
    pub frame_size: usize,
    pub corrupt_prob: f64,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn clips_per_video(&self) -> usize {
        clip_count(self.frames_per_video, self.clip_length)
    }

    pub fn total_clips(&self) -> usize {
        self.entries.iter().map(|e| e.clip_corrupted.len()).sum()
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.root.join(MANIFEST_FILE)
    }

    fn header(&self) -> ManifestHeader {
        ManifestHeader {
            format_version: FORMAT_VERSION,
            num_classes: self.num_classes,
            clip_length: self.clip_length,
            seed: self.generator_seed,
            frames_per_video: self.frames_per_video,
            frame_size: self.frame_size,
            corrupt_prob: self.corrupt_prob,
        }
    }

    fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&self.header()).expect("header serializes");
        out.push('\n');
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        out
    }
}

fn to_u8(frames: &[f32]) -> Vec<u8> {
    frames
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

/// Writes videos and the manifest. Frames are stored as 8-bit, so the
/// round trip is exact for frames already quantized to multiples of 1/255.
pub fn save_corpus(videos: &[Video], config: &CorpusConfig, dir: &Path) -> Result<DatasetManifest> {
    if videos.is_empty() {
        return Err(Error::config("cannot save an empty corpus"));
    }
    let video_dir = dir.join("videos");
    fs::create_dir_all(&video_dir).map_err(|e| Error::io(&video_dir, e))?;
    let mut entries = Vec::with_capacity(videos.len());
    for v in videos {
        let rel = PathBuf::from("videos").join(format!("{}.cdar", v.id));
        let t = v.num_frames();
        let arr = Array::u8(vec![t, CHANNELS, v.height, v.width], to_u8(&v.frames));
        arr.save(&dir.join(&rel))?;
        let clip_corrupted = v
            .corrupted_frame_mask
            .chunks(config.clip_length)
            .map(|b| b.iter().any(|&m| m))
            .collect();
        entries.push(ManifestEntry {
            id: v.id.clone(),
            path: rel,
            label: v.label,
            clip_corrupted,
        });
    }
    let manifest = DatasetManifest {
        root: dir.to_path_buf(),
        num_classes: config.num_classes,
        clip_length: config.clip_length,
        generator_seed: config.seed,
        frames_per_video: config.frames_per_video,
        frame_size: config.frame_size,
        corrupt_prob: config.corrupt_prob,
        entries,
    };
    write_atomic(&manifest.manifest_path(), manifest.to_jsonl().as_bytes())?;
    Ok(manifest)
}

/// Reads the manifest and checks every referenced file's header against it.
pub fn load_corpus(dir: &Path) -> Result<DatasetManifest> {
    let mpath = dir.join(MANIFEST_FILE);
    if !mpath.is_file() {
        return Err(Error::MissingManifest(dir.to_path_buf()));
    }
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let head_line = lines.next().ok_or_else(|| Error::ManifestMismatch {
        path: mpath.clone(),
        reason: "manifest is empty".into(),
    })?;
    let header: ManifestHeader = serde_json::from_str(head_line).map_err(|e| Error::ManifestMismatch {
        path: mpath.clone(),
        reason: format!("bad header line: {e}"),
    })?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::ManifestMismatch {
            path: mpath,
            reason: format!("unsupported format version {}", header.format_version),
        });
    }
    let mut entries = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let e: ManifestEntry = serde_json::from_str(line).map_err(|err| Error::ManifestMismatch {
            path: mpath.clone(),
            reason: format!("entry {}: {err}", lineno + 1),
        })?;
        entries.push(e);
    }
    if entries.is_empty() {
        return Err(Error::ManifestMismatch {
            path: mpath,
            reason: "manifest has no entries".into(),
        });
    }
    let manifest = DatasetManifest {
        root: dir.to_path_buf(),
        num_classes: header.num_classes,
        clip_length: header.clip_length,
        generator_seed: header.seed,
        frames_per_video: header.frames_per_video,
        frame_size: header.frame_size,
        corrupt_prob: header.corrupt_prob,
        entries,
    };
    for e in &manifest.entries {
        let path = dir.join(&e.path);
        if !path.is_file() {
            return Err(Error::ManifestMismatch {
                path,
                reason: "referenced file does not exist".into(),
            });
        }
        let h = cdar::peek_header(&path)?;
        check_video_shape(&manifest, e, &h.shape, &path)?;
    }
    Ok(manifest)
}

fn check_video_shape(m: &DatasetManifest, e: &ManifestEntry, shape: &[usize], path: &Path) -> Result<()> {
    let mismatch = |reason: String| Error::ManifestMismatch {
        path: path.to_path_buf(),
        reason,
    };
    if shape.len() != 4 || shape[1] != CHANNELS || shape[2] != m.frame_size || shape[3] != m.frame_size {
        return Err(mismatch(format!("unexpected array shape {shape:?}")));
    }
    if shape[0] == 0 || clip_count(shape[0], m.clip_length) != e.clip_corrupted.len() {
        return Err(mismatch(format!(
            "{} frames do not match {} clip flags",
            shape[0],
            e.clip_corrupted.len()
        )));
    }
    if e.label >= m.num_classes {
        return Err(mismatch(format!("label {} out of range", e.label)));
    }
    Ok(())
}

pub fn load_video(manifest: &DatasetManifest, entry: &ManifestEntry) -> Result<Video> {
    let path = manifest.root.join(&entry.path);
    let arr = Array::load(&path)?;
    check_video_shape(manifest, entry, &arr.shape, &path)?;
    let frames = match arr.data {
        ArrayData::U8(v) => v.into_iter().map(|b| b as f32 / 255.0).collect(),
        ArrayData::F32(v) => v,
    };
    let t = arr.shape[0];
    let mask = (0..t).map(|i| entry.clip_corrupted[i / manifest.clip_length]).collect();
    Video::new(entry.id.clone(), entry.label, arr.shape[2], arr.shape[3], frames, mask)
}

/// SHA-256 of the manifest bytes; identifies a corpus in metrics records.
pub fn dataset_hash(manifest: &DatasetManifest) -> String {
    let mut h = Sha256::new();
    h.update(manifest.to_jsonl().as_bytes());
    hex::encode(&h.finalize()[..8])
}
