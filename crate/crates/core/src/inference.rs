//! Video-level prediction under the dense, top-K and divided regimes.
//!
//! Each video's clips are run through the models once ([`score_video`]) and
//! every forward pass is timed. A prediction then only aggregates the clips
//! it selects, and its wall time is the sum of the forward times of the
//! passes it actually uses plus the time spent ranking and aggregating.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distill::{argmax, entropy, softened_softmax, ClassDistribution, ConfidenceScore};
use crate::error::{Error, Result};
use crate::nets::{ModelProfile, Student, StudentOutput, Teacher};
use crate::sampling::{
    confidence_ranking, entropy_ranking, make_selection_plan, sample_equidistant, sample_oracle, sample_random,
    SelectionPlan,
};
use crate::seed::derive_seed;
use crate::videodata::{load_video, segment, Clip, DatasetManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Dense,
    Topk,
    Divided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Random,
    Equidistant,
    Oracle,
    Confidence,
    Entropy,
}

impl SamplerKind {
    /// Whether the sampler runs the student over every clip.
    pub fn is_learned(self) -> bool {
        matches!(self, SamplerKind::Confidence | SamplerKind::Entropy)
    }
}

macro_rules! str_enum {
    ($ty:ty, $($var:ident => $s:literal),+) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(Self::$var => $s),+ })
            }
        }
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok(Self::$var),)+
                    _ => Err(Error::config(format!("unknown {} `{s}`", stringify!($ty)))),
                }
            }
        }
    };
}

str_enum!(Regime, Dense => "dense", Topk => "topk", Divided => "divided");
str_enum!(SamplerKind, Random => "random", Equidistant => "equidistant", Oracle => "oracle",
    Confidence => "confidence", Entropy => "entropy");

/// How the top-K regime averages teacher outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TopkWeighting {
    #[default]
    Mean,
    /// Weight each clip by the student's confidence.
    Confidence,
}

/// A model output and the seconds its forward pass took.
#[derive(Debug, Clone, PartialEq)]
pub struct Timed<T> {
    pub value: T,
    pub seconds: f64,
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<Timed<T>> {
    let start = Instant::now();
    let value = f()?;
    Ok(Timed {
        value,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Every clip of one video, scored by the teacher and optionally the student.
#[derive(Debug, Clone)]
pub struct VideoScores {
    pub video_id: String,
    pub label: usize,
    pub corrupted: Vec<bool>,
    pub teacher: Vec<Timed<ClassDistribution>>,
    pub student: Option<Vec<Timed<StudentOutput>>>,
}

impl VideoScores {
    pub fn num_clips(&self) -> usize {
        self.teacher.len()
    }

    /// Whether the teacher classifies each clip correctly.
    pub fn teacher_correct(&self) -> Vec<bool> {
        self.teacher.iter().map(|t| t.value.argmax() == self.label).collect()
    }

    fn student_outputs(&self) -> Result<Vec<StudentOutput>> {
        let s = self
            .student
            .as_ref()
            .ok_or_else(|| Error::config("a learned sampler needs student outputs"))?;
        Ok(s.iter().map(|t| t.value.clone()).collect())
    }
}

pub fn score_video(teacher: &Teacher, student: Option<&Student>, clips: &[Clip], label: usize) -> Result<VideoScores> {
    let t = clips
        .iter()
        .map(|c| timed(|| softened_softmax(teacher.forward(c)?.as_slice(), 1.0)))
        .collect::<Result<Vec<_>>>()?;
    let s = student
        .map(|s| clips.iter().map(|c| timed(|| s.forward(c))).collect::<Result<Vec<_>>>())
        .transpose()?;
    Ok(VideoScores {
        video_id: clips.first().map(|c| c.source_video.clone()).unwrap_or_default(),
        label,
        corrupted: clips.iter().map(|c| c.corrupted).collect(),
        teacher: t,
        student: s,
    })
}

/// Scores every video of a split, in manifest order.
pub fn score_split(teacher: &Teacher, student: Option<&Student>, manifest: &DatasetManifest) -> Result<Vec<VideoScores>> {
    manifest
        .entries
        .par_iter()
        .map(|e| {
            let video = load_video(manifest, e)?;
            let clips = segment(&video, manifest.clip_length)?;
            let mut s = score_video(teacher, student, &clips, e.label)?;
            s.video_id = e.id.clone();
            Ok(s)
        })
        .collect()
}

/// Per-clip FLOPs of the two models.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Costs {
    pub teacher: u64,
    pub student: u64,
}

impl Costs {
    pub fn new(teacher: &ModelProfile, student: &ModelProfile) -> Self {
        Costs {
            teacher: teacher.flops_per_clip,
            student: student.flops_per_clip,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoPrediction {
    pub class_probs: ClassDistribution,
    pub predicted_class: usize,
    pub clips_used: SelectionPlan,
    pub flops_spent: u64,
    pub wall_time: f64,
}

/// One evaluation setting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictRequest {
    pub regime: Regime,
    pub sampler: SamplerKind,
    pub k: usize,
    pub ks: usize,
    /// Seeds the random sampler; combined with the video's position.
    pub seed: u64,
    pub weighting: TopkWeighting,
}

impl PredictRequest {
    pub fn dense() -> Self {
        PredictRequest {
            regime: Regime::Dense,
            sampler: SamplerKind::Equidistant,
            k: 0,
            ks: 0,
            seed: 0,
            weighting: TopkWeighting::Mean,
        }
    }

    pub fn topk(sampler: SamplerKind, k: usize) -> Self {
        PredictRequest {
            regime: Regime::Topk,
            sampler,
            k,
            ..Self::dense()
        }
    }

    pub fn divided(k: usize, ks: usize) -> Self {
        PredictRequest {
            regime: Regime::Divided,
            sampler: SamplerKind::Confidence,
            k,
            ks,
            ..Self::dense()
        }
    }
}

fn weighted_mean(parts: &[(&[f64], f64)]) -> ClassDistribution {
    let c = parts[0].0.len();
    let total: f64 = parts.iter().map(|(_, w)| w).sum();
    let uniform = !(total > 0.0);
    let mut acc = vec![0.0; c];
    for (p, w) in parts {
        let w = if uniform { 1.0 / parts.len() as f64 } else { w / total };
        for (a, x) in acc.iter_mut().zip(p.iter()) {
            *a += w * x;
        }
    }
    ClassDistribution::new_unchecked(acc)
}

fn mean_of(parts: &[&[f64]]) -> ClassDistribution {
    let c = parts[0].len();
    let mut acc = vec![0.0; c];
    for p in parts {
        for (a, x) in acc.iter_mut().zip(p.iter()) {
            *a += x;
        }
    }
    let n = parts.len() as f64;
    ClassDistribution::new_unchecked(acc.into_iter().map(|a| a / n).collect())
}

fn finish(class_probs: ClassDistribution, plan: SelectionPlan, flops: u64, seconds: f64) -> Result<VideoPrediction> {
    if class_probs.probs().iter().any(|p| !p.is_finite()) {
        return Err(Error::Numeric("aggregated prediction is not finite".into()));
    }
    Ok(VideoPrediction {
        predicted_class: argmax(class_probs.probs()),
        class_probs,
        clips_used: plan,
        flops_spent: flops,
        wall_time: seconds,
    })
}

/// Predicts one video from its clip scores.
pub fn predict(scores: &VideoScores, req: &PredictRequest, costs: &Costs, position: u64) -> Result<VideoPrediction> {
    let started = Instant::now();
    let n = scores.num_clips();
    if n == 0 {
        return Err(Error::Malformed(format!("video {} has no clips", scores.video_id)));
    }
    let teacher_secs = |idx: &[usize]| idx.iter().map(|&i| scores.teacher[i].seconds).sum::<f64>();
    let student_secs = || {
        scores
            .student
            .as_ref()
            .map(|s| s.iter().map(|t| t.seconds).sum::<f64>())
            .unwrap_or(0.0)
    };

    if req.regime == Regime::Dense {
        let all: Vec<usize> = (0..n).collect();
        let probs: Vec<&[f64]> = scores.teacher.iter().map(|t| t.value.probs()).collect();
        let agg = mean_of(&probs);
        let secs = teacher_secs(&all) + started.elapsed().as_secs_f64();
        return finish(agg, SelectionPlan::all_to_teacher(all), n as u64 * costs.teacher, secs);
    }

    if req.k == 0 || req.k > n {
        return Err(Error::config(format!("K={} must be in 1..={n}", req.k)));
    }
    let k = req.k;
    let student = if req.sampler.is_learned() || req.regime == Regime::Divided {
        Some(scores.student_outputs()?)
    } else {
        None
    };

    let ranking = match req.sampler {
        SamplerKind::Random => sample_random(n, k, derive_seed(req.seed, position)),
        SamplerKind::Equidistant => sample_equidistant(n, k),
        SamplerKind::Oracle => {
            let p_y: Vec<f64> = scores.teacher.iter().map(|t| t.value.probs()[scores.label]).collect();
            sample_oracle(&p_y, n).indices().to_vec()
        }
        SamplerKind::Confidence => confidence_ranking(student.as_ref().unwrap()).indices().to_vec(),
        SamplerKind::Entropy => entropy_ranking(student.as_ref().unwrap())?.indices().to_vec(),
    };

    // Trivial samplers pay only for the selected teacher clips; the oracle
    // needs the teacher on every clip; learned samplers pay the student pass.
    let (scoring_flops, scoring_secs) = match req.sampler {
        SamplerKind::Random | SamplerKind::Equidistant => (0, 0.0),
        SamplerKind::Oracle => (n as u64 * costs.teacher, teacher_secs(&(0..n).collect::<Vec<_>>())),
        SamplerKind::Confidence | SamplerKind::Entropy => (n as u64 * costs.student, student_secs()),
    };
    let oracle = req.sampler == SamplerKind::Oracle;

    match req.regime {
        Regime::Topk => {
            let chosen = ranking[..k].to_vec();
            let agg = match (req.weighting, &student) {
                (TopkWeighting::Confidence, Some(s)) => {
                    let parts: Vec<(&[f64], f64)> = chosen
                        .iter()
                        .map(|&i| {
                            let w = ConfidenceScore::from_logit(s[i].confidence_logit).value();
                            (scores.teacher[i].value.probs(), w)
                        })
                        .collect();
                    weighted_mean(&parts)
                }
                _ => {
                    let parts: Vec<&[f64]> = chosen.iter().map(|&i| scores.teacher[i].value.probs()).collect();
                    mean_of(&parts)
                }
            };
            let teacher_cost = if oracle { 0 } else { k as u64 * costs.teacher };
            let teacher_time = if oracle { 0.0 } else { teacher_secs(&chosen) };
            let secs = scoring_secs + teacher_time + started.elapsed().as_secs_f64();
            finish(agg, SelectionPlan::all_to_teacher(chosen), scoring_flops + teacher_cost, secs)
        }
        Regime::Divided => {
            if !req.sampler.is_learned() {
                return Err(Error::config("the divided regime needs a learned sampler"));
            }
            let s = student.as_ref().unwrap();
            let candidates = crate::sampling::RankedClipList::unscored(ranking);
            let plan = make_selection_plan(&candidates, &entropy_ranking(s)?, k, req.ks)?;
            let c = scores.teacher[0].value.len();
            let h_max = (c as f64).ln();
            let student_probs: Vec<ClassDistribution> = plan
                .student_clips
                .iter()
                .map(|&i| softened_softmax(s[i].class_logits.as_slice(), 1.0))
                .collect::<Result<_>>()?;
            let mut parts: Vec<(&[f64], f64)> = plan
                .teacher_clips
                .iter()
                .map(|&i| {
                    let w = ConfidenceScore::from_logit(s[i].confidence_logit).value();
                    (scores.teacher[i].value.probs(), w)
                })
                .collect();
            for p in &student_probs {
                parts.push((p.probs(), (1.0 - entropy(p.probs()) / h_max).max(0.0)));
            }
            let agg = weighted_mean(&parts);
            let flops = scoring_flops + plan.teacher_clips.len() as u64 * costs.teacher;
            let secs = scoring_secs + teacher_secs(&plan.teacher_clips) + started.elapsed().as_secs_f64();
            finish(agg, plan, flops, secs)
        }
        Regime::Dense => unreachable!(),
    }
}

pub fn predict_dense(teacher: &Teacher, clips: &[Clip], label: usize) -> Result<VideoPrediction> {
    let scores = score_video(teacher, None, clips, label)?;
    let costs = Costs {
        teacher: teacher.profile().flops_per_clip,
        student: 0,
    };
    predict(&scores, &PredictRequest::dense(), &costs, 0)
}

pub fn predict_topk(teacher: &Teacher, student: &Student, clips: &[Clip], label: usize, k: usize) -> Result<VideoPrediction> {
    let scores = score_video(teacher, Some(student), clips, label)?;
    let costs = Costs::new(&teacher.profile(), &student.profile());
    predict(&scores, &PredictRequest::topk(SamplerKind::Confidence, k), &costs, 0)
}

pub fn predict_divided(
    teacher: &Teacher,
    student: &Student,
    clips: &[Clip],
    label: usize,
    k: usize,
    ks: usize,
) -> Result<VideoPrediction> {
    let scores = score_video(teacher, Some(student), clips, label)?;
    let costs = Costs::new(&teacher.profile(), &student.profile());
    predict(&scores, &PredictRequest::divided(k, ks), &costs, 0)
}

/// Area under the ROC curve of `scores` for the positive class, counting
/// tied pairs as one half. `None` when either class is absent.
pub fn auroc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    // Sum of midranks of the positives.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += idx[i..=j].iter().filter(|&&t| positive[t]).count() as f64 * mid;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// Clip-level AUROC of the student's confidence against teacher correctness.
pub fn confidence_auroc(videos: &[VideoScores]) -> Option<f64> {
    let mut z = Vec::new();
    let mut correct = Vec::new();
    for v in videos {
        let s = v.student.as_ref()?;
        z.extend(s.iter().map(|t| ConfidenceScore::from_logit(t.value.confidence_logit).value()));
        correct.extend(v.teacher_correct());
    }
    auroc(&z, &correct)
}

/// One row of the metrics table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub regime: Regime,
    pub sampler: String,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "K_s")]
    pub ks: usize,
    pub top1: f64,
    pub mean_flops: f64,
    pub mean_wall_s: f64,
    pub auroc: Option<f64>,
    /// A seed, or `mean` for rows averaged over seeds.
    pub seed: String,
    pub dataset_hash: String,
}

/// Accuracy and cost of one setting over a split.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitEvaluation {
    pub record: MetricsRecord,
    pub median_wall_s: f64,
    pub predictions: Vec<VideoPrediction>,
}

pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    if s.len() % 2 == 1 {
        s[m]
    } else {
        (s[m - 1] + s[m]) / 2.0
    }
}

/// Evaluates `req` on every video. `sampler_label` names the sampler in the
/// record (learned samplers usually carry the student's training method).
/// AUROC is reported for confidence-ranked settings.
pub fn evaluate_split(
    videos: &[VideoScores],
    req: &PredictRequest,
    costs: &Costs,
    sampler_label: &str,
    dataset_hash: &str,
) -> Result<SplitEvaluation> {
    if videos.is_empty() {
        return Err(Error::config("cannot evaluate an empty split"));
    }
    let predictions = videos
        .iter()
        .enumerate()
        .map(|(i, v)| predict(v, req, costs, i as u64))
        .collect::<Result<Vec<_>>>()?;
    let n = predictions.len() as f64;
    let correct = predictions
        .iter()
        .zip(videos)
        .filter(|(p, v)| p.predicted_class == v.label)
        .count();
    let walls: Vec<f64> = predictions.iter().map(|p| p.wall_time).collect();
    let auroc = if req.sampler == SamplerKind::Confidence && req.regime != Regime::Dense {
        confidence_auroc(videos)
    } else {
        None
    };
    let record = MetricsRecord {
        regime: req.regime,
        sampler: sampler_label.to_string(),
        k: if req.regime == Regime::Dense { videos[0].num_clips() } else { req.k },
        ks: if req.regime == Regime::Divided { req.ks } else { 0 },
        top1: correct as f64 / n,
        mean_flops: predictions.iter().map(|p| p.flops_spent as f64).sum::<f64>() / n,
        mean_wall_s: walls.iter().sum::<f64>() / n,
        auroc,
        seed: req.seed.to_string(),
        dataset_hash: dataset_hash.to_string(),
    };
    Ok(SplitEvaluation {
        median_wall_s: median(&walls),
        record,
        predictions,
    })
}
