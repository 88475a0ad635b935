//! Clip ranking and selection.
//!
//! Every ranking sorts by descending score and breaks ties by ascending clip
//! index, so the result depends only on the scores.

use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::distill::{entropy, softened_softmax, ConfidenceScore};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::nets::{Student, StudentOutput};
use crate::seed::rng_for;
use crate::videodata::Clip;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Confidence,
    NegEntropy,
    TrueClassProb,
    None,
}

/// Clip indices in selection order with their scores.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedClipList {
    indices: Vec<usize>,
    scores: Vec<f64>,
    kind: ScoreKind,
}

impl RankedClipList {
    /// Ranks all clips by `scores[i]`.
    pub fn from_scores(scores: &[f64], kind: ScoreKind) -> Self {
        let mut indices: Vec<usize> = (0..scores.len()).collect();
        indices.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let scores = indices.iter().map(|&i| scores[i]).collect();
        RankedClipList { indices, scores, kind }
    }

    /// An unscored list in the given order.
    pub fn unscored(indices: Vec<usize>) -> Self {
        let scores = vec![0.0; indices.len()];
        RankedClipList {
            indices,
            scores,
            kind: ScoreKind::None,
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn kind(&self) -> ScoreKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// The first `min(k, len)` indices.
    pub fn top(&self, k: usize) -> &[usize] {
        &self.indices[..k.min(self.indices.len())]
    }

    pub fn truncated(mut self, k: usize) -> Self {
        self.indices.truncate(k);
        self.scores.truncate(k);
        self
    }
}

/// `k` distinct clips drawn uniformly without replacement, ascending.
/// `k` is clamped to `n`.
pub fn sample_random(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = rng_for(seed, n as u64);
    let mut out = index::sample(&mut rng, n, k.min(n)).into_vec();
    out.sort_unstable();
    out
}

/// Clips `floor(i·n/k)` for `i < k`; `k` is clamped to `n`.
pub fn sample_equidistant(n: usize, k: usize) -> Vec<usize> {
    let k = k.min(n);
    (0..k).map(|i| i * n / k).collect()
}

/// The `k` clips with the highest true-class probability.
pub fn sample_oracle(true_class_probs: &[f64], k: usize) -> RankedClipList {
    RankedClipList::from_scores(true_class_probs, ScoreKind::TrueClassProb).truncated(k)
}

/// Ranking by `z̃` from precomputed student outputs.
pub fn confidence_ranking(outputs: &[StudentOutput]) -> RankedClipList {
    let scores: Vec<f64> = outputs
        .iter()
        .map(|o| ConfidenceScore::from_logit(o.confidence_logit).value())
        .collect();
    RankedClipList::from_scores(&scores, ScoreKind::Confidence)
}

/// Ranking by negative predictive entropy from precomputed student outputs.
pub fn entropy_ranking(outputs: &[StudentOutput]) -> Result<RankedClipList> {
    let scores = outputs
        .iter()
        .map(|o| Ok(-entropy(softened_softmax(o.class_logits.as_slice(), 1.0)?.probs())))
        .collect::<Result<Vec<f64>>>()?;
    Ok(RankedClipList::from_scores(&scores, ScoreKind::NegEntropy))
}

pub fn rank_by_confidence(student: &Student, clips: &[Clip]) -> Result<RankedClipList> {
    let outs = clips.iter().map(|c| student.forward(c)).collect::<Result<Vec<_>>>()?;
    Ok(confidence_ranking(&outs))
}

pub fn rank_by_entropy(student: &Student, clips: &[Clip]) -> Result<RankedClipList> {
    let outs = clips.iter().map(|c| student.forward(c)).collect::<Result<Vec<_>>>()?;
    entropy_ranking(&outs)
}

/// Which clips go to the teacher and which the student classifies itself.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionPlan {
    pub teacher_clips: Vec<usize>,
    pub student_clips: Vec<usize>,
}

impl SelectionPlan {
    pub fn all_to_teacher(clips: Vec<usize>) -> Self {
        SelectionPlan {
            teacher_clips: clips,
            student_clips: Vec::new(),
        }
    }

    pub fn k(&self) -> usize {
        self.teacher_clips.len() + self.student_clips.len()
    }
}

/// Takes the top `k` clips by confidence as candidates and hands the `ks`
/// candidates with the lowest student entropy to the student. The rest go
/// to the teacher, in confidence order.
pub fn make_selection_plan(
    confidence: &RankedClipList,
    entropy: &RankedClipList,
    k: usize,
    ks: usize,
) -> Result<SelectionPlan> {
    let n = confidence.len();
    if k > n {
        return Err(Error::config(format!("K={k} exceeds the {n} clips available")));
    }
    if ks > k {
        return Err(Error::config(format!("K_s={ks} exceeds K={k}")));
    }
    let candidates = confidence.top(k);
    let student_clips: Vec<usize> = entropy
        .indices()
        .iter()
        .copied()
        .filter(|i| candidates.contains(i))
        .take(ks)
        .collect();
    let teacher_clips = candidates
        .iter()
        .copied()
        .filter(|i| !student_clips.contains(i))
        .collect();
    Ok(SelectionPlan {
        teacher_clips,
        student_clips,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingRecord {
    pub video_id: String,
    pub indices: Vec<usize>,
    pub scores: Vec<f64>,
    pub score_kind: ScoreKind,
}

impl RankingRecord {
    pub fn new(video_id: &str, list: &RankedClipList) -> Self {
        RankingRecord {
            video_id: video_id.to_string(),
            indices: list.indices.clone(),
            scores: list.scores.clone(),
            score_kind: list.kind,
        }
    }
}

/// Writes one JSON line per ranking.
pub fn write_rankings(records: &[RankingRecord], path: &Path) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("ranking serializes"));
        out.push('\n');
    }
    write_atomic(path, out.as_bytes())
}
