//! End-to-end experiments: corpus generation, teacher training, pseudo
//! labels, student distillation and evaluation over a grid of samplers,
//! regimes and clip budgets.

mod cache;
mod report;

pub use cache::{stage_key, StageCache, StageDir};
pub use report::{ReportFormat, ReportTable, MEAN_SEED, METRICS_COLUMNS};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::distill::{load_pseudo_labels, make_pseudo_labels, save_pseudo_labels};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::inference::{
    evaluate_split, score_split, Costs, PredictRequest, Regime, SamplerKind, TopkWeighting, VideoScores,
};
use crate::nets::{load_checkpoint, reference_student, reference_teacher, Student, Teacher};
use crate::seed::derive_seed;
use crate::trainer::{distill_student, save_run, train_teacher, Method, TrainConfig};
use crate::videodata::{dataset_hash, generate_corpus, load_corpus, CorpusConfig, DatasetManifest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSpec {
    pub train_videos: usize,
    pub test_videos: usize,
    pub num_classes: usize,
    pub frames_per_video: usize,
    pub frame_size: usize,
    pub clip_length: usize,
    pub corrupt_prob: f64,
}

impl CorpusSpec {
    /// Generator settings of one split; the split's seed is derived from the
    /// pipeline seed.
    pub fn split(&self, test: bool, seed: u64) -> CorpusConfig {
        CorpusConfig {
            num_videos: if test { self.test_videos } else { self.train_videos },
            num_classes: self.num_classes,
            frames_per_video: self.frames_per_video,
            frame_size: self.frame_size,
            clip_length: self.clip_length,
            corrupt_prob: self.corrupt_prob,
            seed: derive_seed(seed, if test { 2 } else { 1 }),
        }
    }

    pub fn clips_per_video(&self) -> usize {
        self.split(false, 0).clips_per_video()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudentSpec {
    pub method: Method,
    /// Ranking used at inference; defaults to entropy for the entropy
    /// baseline and confidence otherwise.
    #[serde(default)]
    pub sampler: Option<SamplerKind>,
    /// Training settings; the preset for `method` when absent.
    #[serde(default)]
    pub config: Option<TrainConfig>,
}

impl StudentSpec {
    pub fn new(method: Method) -> Self {
        StudentSpec {
            method,
            sampler: None,
            config: None,
        }
    }

    pub fn sampler(&self) -> SamplerKind {
        self.sampler.unwrap_or(match self.method {
            Method::StEnt => SamplerKind::Entropy,
            _ => SamplerKind::Confidence,
        })
    }

    pub fn config(&self) -> TrainConfig {
        self.config.clone().unwrap_or_else(|| TrainConfig::student(self.method))
    }

    /// Sampler column label, e.g. `confidence[condi-sr]`.
    pub fn label(&self) -> String {
        format!("{}[{}]", self.sampler(), self.method)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DividedSpec {
    pub k: usize,
    /// Students whose confidence and entropy drive the split.
    pub students: Vec<Method>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSpec {
    /// Clip budgets of the top-K regime.
    pub k: Vec<usize>,
    /// Label-free or label-using baselines evaluated alongside the students.
    pub baselines: Vec<SamplerKind>,
    /// Draws averaged into each random-sampler row.
    pub random_draws: u64,
    #[serde(default)]
    pub divided: Option<DividedSpec>,
    #[serde(default)]
    pub weighting: TopkWeighting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub corpus: CorpusSpec,
    pub teacher: TrainConfig,
    pub students: Vec<StudentSpec>,
    pub seeds: Vec<u64>,
    pub eval: EvalSpec,
}

impl ExperimentSpec {
    /// Small setting that trains in minutes on one CPU core: 500/200
    /// videos of 32 frames at 16 px, six classes, eight 4-frame clips.
    pub fn desk_scale() -> Self {
        ExperimentSpec {
            corpus: CorpusSpec {
                train_videos: 500,
                test_videos: 200,
                num_classes: 6,
                frames_per_video: 32,
                frame_size: 16,
                clip_length: 4,
                corrupt_prob: 0.3,
            },
            teacher: TrainConfig::teacher(),
            students: Method::STUDENTS.into_iter().map(StudentSpec::new).collect(),
            seeds: vec![0, 1, 2],
            eval: EvalSpec {
                k: vec![1, 2, 3, 4, 6, 8],
                baselines: vec![SamplerKind::Random, SamplerKind::Equidistant, SamplerKind::Oracle],
                random_draws: 3,
                divided: Some(DividedSpec {
                    k: 4,
                    students: vec![Method::CondiSr],
                }),
                weighting: TopkWeighting::Mean,
            },
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: ExperimentSpec =
            serde_json::from_str(text).map_err(|e| Error::config(format!("experiment spec: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.split(false, 0).validate()?;
        if self.corpus.test_videos == 0 {
            return Err(Error::config("test_videos must be positive"));
        }
        if self.teacher.method != Method::Teacher {
            return Err(Error::config("teacher config must use method `teacher`"));
        }
        self.teacher.validate()?;
        for s in &self.students {
            if s.method == Method::Teacher {
                return Err(Error::config("a student cannot use method `teacher`"));
            }
            if s.config().method != s.method {
                return Err(Error::config(format!("student `{}` config names another method", s.method)));
            }
            if !s.sampler().is_learned() {
                return Err(Error::config(format!("student `{}` needs a learned sampler", s.method)));
            }
            s.config().validate()?;
        }
        if self.seeds.is_empty() {
            return Err(Error::config("at least one seed is required"));
        }
        if self.eval.k.iter().any(|&k| k == 0) {
            return Err(Error::config("K values must be positive"));
        }
        if self.eval.baselines.iter().any(|s| s.is_learned()) {
            return Err(Error::config("learned samplers are listed under students, not baselines"));
        }
        if self.eval.random_draws == 0 {
            return Err(Error::config("random_draws must be positive"));
        }
        if let Some(d) = &self.eval.divided {
            if d.k == 0 {
                return Err(Error::config("divided K must be positive"));
            }
            for m in &d.students {
                if !self.students.iter().any(|s| s.method == *m) {
                    return Err(Error::config(format!("divided regime names untrained student `{m}`")));
                }
            }
        }
        Ok(())
    }
}

/// Median per-video wall time of one row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub regime: Regime,
    pub sampler: String,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "K_s")]
    pub ks: usize,
    pub seed: String,
    pub median_wall_s: f64,
}

pub fn timing_csv(rows: &[TimingRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["regime", "sampler", "K", "K_s", "seed", "median_wall_s"])
        .expect("in-memory write");
    for r in rows {
        w.serialize(r).expect("row serializes");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

/// Where one seed's stage outputs live.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedArtifacts {
    pub seed: u64,
    pub train_corpus: PathBuf,
    pub test_corpus: PathBuf,
    pub teacher_dir: PathBuf,
    pub labels: PathBuf,
    /// Run directory of each student, in spec order.
    pub students: Vec<(Method, PathBuf)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub table: ReportTable,
    pub timing: Vec<TimingRow>,
    pub artifacts: Vec<SeedArtifacts>,
    pub stages_built: usize,
    pub stages_reused: usize,
}

struct Stages<'a> {
    cache: &'a StageCache,
    built: usize,
    reused: usize,
}

impl Stages<'_> {
    fn run<F>(&mut self, stage: &str, key: &str, build: F) -> Result<StageDir>
    where
        F: FnOnce(&Path) -> Result<()>,
    {
        let dir = self
            .cache
            .get_or_build(stage, key, |d| build(d).map_err(|e| e.in_stage(stage)))
            .map_err(|e| match e {
                Error::Stage { .. } => e,
                other => other.in_stage(stage),
            })?;
        if dir.reused {
            self.reused += 1;
        } else {
            self.built += 1;
        }
        Ok(dir)
    }
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("value serializes")
}

fn clamp_k(k: usize, n: usize) -> usize {
    if k > n {
        log::warn!("K={k} exceeds the {n} clips per video; clamped to {n}");
        n
    } else {
        k
    }
}

/// Runs every stage for every seed and evaluates the grid. Stage outputs
/// are cached under `cache_root`, keyed by their parameters and inputs;
/// evaluation always reruns.
pub fn run_experiment(spec: &ExperimentSpec, cache_root: &Path) -> Result<ExperimentOutcome> {
    spec.validate()?;
    let cache = StageCache::new(cache_root)?;
    let mut stages = Stages {
        cache: &cache,
        built: 0,
        reused: 0,
    };
    let mut table = ReportTable::default();
    let mut timing = Vec::new();
    let mut artifacts = Vec::new();

    for &seed in &spec.seeds {
        let train_cfg = spec.corpus.split(false, seed);
        let test_cfg = spec.corpus.split(true, seed);
        let train_dir = stages.run("corpus_train", &stage_key(&[&json(&train_cfg)]), |d| {
            generate_corpus(&train_cfg, d).map(|_| ())
        })?;
        let test_dir = stages.run("corpus_test", &stage_key(&[&json(&test_cfg)]), |d| {
            generate_corpus(&test_cfg, d).map(|_| ())
        })?;
        let train = load_corpus(&train_dir.path).map_err(|e| e.in_stage("corpus_train"))?;
        let test = load_corpus(&test_dir.path).map_err(|e| e.in_stage("corpus_test"))?;

        let teacher_cfg = TrainConfig {
            seed,
            ..spec.teacher.clone()
        };
        let teacher_dir = stages.run(
            "teacher",
            &stage_key(&[&train_dir.key, &json(&teacher_cfg)]),
            |d| {
                let (ckpt, log) = train_teacher(&teacher_cfg, &train)?;
                save_run(d, "teacher", &ckpt, &log, &teacher_cfg).map(|_| ())
            },
        )?;
        let teacher_ckpt = load_checkpoint(&teacher_dir.path.join("teacher.ckpt")).map_err(|e| e.in_stage("teacher"))?;
        let teacher_desc = reference_teacher(train.num_classes, train.clip_length, train.frame_size);
        let teacher = Teacher::new(teacher_ckpt.clone().into_network(&teacher_desc)?)?;

        let labels_dir = stages.run("labels", &stage_key(&[&teacher_dir.key, &train_dir.key]), |d| {
            let table = make_pseudo_labels(&teacher, &train)?;
            save_pseudo_labels(&table, &d.join("labels.jsonl"))
        })?;
        let labels = load_pseudo_labels(&labels_dir.path.join("labels.jsonl")).map_err(|e| e.in_stage("labels"))?;

        let student_desc = reference_student(train.num_classes, train.clip_length, train.frame_size);
        let mut students = Vec::new();
        let mut student_dirs = Vec::new();
        for s in &spec.students {
            let cfg = TrainConfig {
                seed,
                ..s.config()
            };
            let stage = format!("student_{}", s.method);
            let dir = stages.run(
                &stage,
                &stage_key(&[&teacher_dir.key, &labels_dir.key, &json(&cfg)]),
                |d| {
                    let (ckpt, log) = distill_student(&cfg, &teacher_ckpt, Some(&labels), &train)?;
                    save_run(d, s.method.as_str(), &ckpt, &log, &cfg).map(|_| ())
                },
            )?;
            let ckpt = load_checkpoint(&dir.path.join(format!("{}.ckpt", s.method))).map_err(|e| e.in_stage(&stage))?;
            students.push(Student::new(ckpt.into_network(&student_desc)?)?);
            student_dirs.push((s.method, dir.path));
        }

        let eval = evaluate_seed(spec, seed, &teacher, &students, &test).map_err(|e| e.in_stage("evaluate"))?;
        table.rows.extend(eval.0);
        timing.extend(eval.1);
        artifacts.push(SeedArtifacts {
            seed,
            train_corpus: train_dir.path,
            test_corpus: test_dir.path,
            teacher_dir: teacher_dir.path,
            labels: labels_dir.path.join("labels.jsonl"),
            students: student_dirs,
        });
    }
    table.add_means();
    Ok(ExperimentOutcome {
        table,
        timing,
        artifacts,
        stages_built: stages.built,
        stages_reused: stages.reused,
    })
}

fn evaluate_seed(
    spec: &ExperimentSpec,
    seed: u64,
    teacher: &Teacher,
    students: &[Student],
    test: &DatasetManifest,
) -> Result<(Vec<crate::inference::MetricsRecord>, Vec<TimingRow>)> {
    let hash = dataset_hash(test);
    let n = test.clips_per_video();
    let seed_str = seed.to_string();
    let mut rows = Vec::new();
    let mut timing = Vec::new();
    let baseline_costs = Costs {
        teacher: teacher.profile().flops_per_clip,
        student: students.first().map_or(0, |s| s.profile().flops_per_clip),
    };
    let mut push = |videos: &[VideoScores], req: PredictRequest, costs: &Costs, label: &str, draws: u64| -> Result<()> {
        let mut acc: Option<crate::inference::MetricsRecord> = None;
        let mut median = 0.0;
        for d in 0..draws {
            let r = PredictRequest {
                seed: derive_seed(seed, d),
                ..req
            };
            let ev = evaluate_split(videos, &r, costs, label, &hash)?;
            median += ev.median_wall_s / draws as f64;
            let w = 1.0 / draws as f64;
            acc = Some(match acc {
                None => crate::inference::MetricsRecord {
                    top1: ev.record.top1 * w,
                    mean_flops: ev.record.mean_flops * w,
                    mean_wall_s: ev.record.mean_wall_s * w,
                    ..ev.record
                },
                Some(a) => crate::inference::MetricsRecord {
                    top1: a.top1 + ev.record.top1 * w,
                    mean_flops: a.mean_flops + ev.record.mean_flops * w,
                    mean_wall_s: a.mean_wall_s + ev.record.mean_wall_s * w,
                    ..a
                },
            });
        }
        let mut rec = acc.expect("at least one draw");
        rec.seed = seed_str.clone();
        timing.push(TimingRow {
            regime: rec.regime,
            sampler: rec.sampler.clone(),
            k: rec.k,
            ks: rec.ks,
            seed: seed_str.clone(),
            median_wall_s: median,
        });
        rows.push(rec);
        Ok(())
    };

    let teacher_only = score_split(teacher, None, test)?;
    push(&teacher_only, PredictRequest::dense(), &baseline_costs, "all", 1)?;
    let ks: Vec<usize> = spec.eval.k.iter().map(|&k| clamp_k(k, n)).collect();
    for &k in &ks {
        for &b in &spec.eval.baselines {
            let draws = if b == SamplerKind::Random { spec.eval.random_draws } else { 1 };
            let req = PredictRequest {
                weighting: spec.eval.weighting,
                ..PredictRequest::topk(b, k)
            };
            push(&teacher_only, req, &baseline_costs, &b.to_string(), draws)?;
        }
    }
    for (s, student) in spec.students.iter().zip(students) {
        let scored = score_split(teacher, Some(student), test)?;
        let costs = Costs::new(&teacher.profile(), &student.profile());
        for &k in &ks {
            let req = PredictRequest {
                weighting: spec.eval.weighting,
                ..PredictRequest::topk(s.sampler(), k)
            };
            push(&scored, req, &costs, &s.label(), 1)?;
        }
        if let Some(d) = spec.eval.divided.as_ref().filter(|d| d.students.contains(&s.method)) {
            let k = clamp_k(d.k, n);
            for ks in 0..=k {
                push(&scored, PredictRequest::divided(k, ks), &costs, &s.label(), 1)?;
            }
        }
    }
    Ok((rows, timing))
}

/// Writes `metrics.csv`, `report.md`, `timing.csv` and the resolved spec
/// into `dir`.
pub fn write_outputs(spec: &ExperimentSpec, outcome: &ExperimentOutcome, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_atomic(&dir.join("metrics.csv"), outcome.table.to_csv().as_bytes())?;
    write_atomic(&dir.join("report.md"), outcome.table.to_markdown().as_bytes())?;
    write_atomic(&dir.join("timing.csv"), timing_csv(&outcome.timing).as_bytes())?;
    write_atomic(&dir.join("spec.resolved.json"), spec.to_json().as_bytes())?;
    Ok(())
}
