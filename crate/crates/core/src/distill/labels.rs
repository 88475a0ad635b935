use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{softened_softmax, PseudoLabel};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::nets::{Logits, Teacher};
use crate::videodata::{load_video, segment, DatasetManifest};

/// One line of the pseudo-label table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelRow {
    pub video_id: String,
    pub clip_index: usize,
    /// 1 when the teacher's top class matches the video label.
    pub z: u8,
    pub teacher_top1: usize,
    pub teacher_prob_true_class: f64,
}

impl PseudoLabelRow {
    pub fn label(&self) -> PseudoLabel {
        PseudoLabel(self.z == 1)
    }
}

/// Per-clip pseudo labels keyed by `(video id, clip index)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PseudoLabelTable {
    rows: Vec<PseudoLabelRow>,
    index: HashMap<(String, usize), usize>,
}

impl PseudoLabelTable {
    pub fn from_rows(rows: Vec<PseudoLabelRow>) -> Result<Self> {
        let mut index = HashMap::with_capacity(rows.len());
        for (i, r) in rows.iter().enumerate() {
            if r.z > 1 {
                return Err(Error::Malformed(format!("pseudo label z={} for {}", r.z, r.video_id)));
            }
            if index.insert((r.video_id.clone(), r.clip_index), i).is_some() {
                return Err(Error::Malformed(format!(
                    "duplicate pseudo label for {} clip {}",
                    r.video_id, r.clip_index
                )));
            }
        }
        Ok(PseudoLabelTable { rows, index })
    }

    pub fn rows(&self) -> &[PseudoLabelRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn get(&self, video_id: &str, clip_index: usize) -> Result<&PseudoLabelRow> {
        self.index
            .get(&(video_id.to_string(), clip_index))
            .map(|&i| &self.rows[i])
            .ok_or_else(|| Error::MissingPseudoLabel {
                video_id: video_id.to_string(),
                clip_index,
            })
    }

    /// Fraction of clips the teacher got right.
    pub fn positive_rate(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().filter(|r| r.z == 1).count() as f64 / self.rows.len() as f64
    }
}

/// Teacher logits for every clip of every video, in manifest order.
pub fn teacher_clip_logits(teacher: &Teacher, manifest: &DatasetManifest) -> Result<Vec<Vec<Logits>>> {
    manifest
        .entries
        .par_iter()
        .map(|entry| {
            let video = load_video(manifest, entry)?;
            segment(&video, manifest.clip_length)?
                .iter()
                .map(|c| teacher.forward(c))
                .collect()
        })
        .collect()
}

/// Rows for one video from its per-clip teacher logits.
pub fn pseudo_labels_from_logits(video_id: &str, label: usize, logits: &[Logits]) -> Result<Vec<PseudoLabelRow>> {
    logits
        .iter()
        .enumerate()
        .map(|(i, l)| {
            if label >= l.len() {
                return Err(Error::Malformed(format!("label {label} out of range for {video_id}")));
            }
            let p = softened_softmax(l.as_slice(), 1.0)?;
            let top1 = p.argmax();
            Ok(PseudoLabelRow {
                video_id: video_id.to_string(),
                clip_index: i,
                z: PseudoLabel::from_probs(&p, label).0 as u8,
                teacher_top1: top1,
                teacher_prob_true_class: p.probs()[label],
            })
        })
        .collect()
}

pub fn make_pseudo_labels(teacher: &Teacher, manifest: &DatasetManifest) -> Result<PseudoLabelTable> {
    let logits = teacher_clip_logits(teacher, manifest)?;
    let mut rows = Vec::with_capacity(manifest.total_clips());
    for (entry, l) in manifest.entries.iter().zip(&logits) {
        rows.extend(pseudo_labels_from_logits(&entry.id, entry.label, l)?);
    }
    PseudoLabelTable::from_rows(rows)
}

pub fn save_pseudo_labels(table: &PseudoLabelTable, path: &Path) -> Result<()> {
    let mut out = String::new();
    for r in table.rows() {
        out.push_str(&serde_json::to_string(r).expect("row serializes"));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}

pub fn load_pseudo_labels(path: &Path) -> Result<PseudoLabelTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let rows = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::Malformed(format!("{} line {}: {e}", path.display(), n + 1)))
        })
        .collect::<Result<Vec<PseudoLabelRow>>>()?;
    PseudoLabelTable::from_rows(rows)
}
