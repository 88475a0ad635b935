//! Training loops for the teacher and the student variants.
//!
//! Optimization is SGD with momentum. Per-sample gradients are computed in
//! parallel into separate buffers and summed in sample order, so results do
//! not depend on the number of threads.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distill::{
    condi_sr_grad, naive_bce_grad, softened_softmax, st_conf_grad, st_ent_grad, LossConfig, LossGrad, LossParts,
    PseudoLabel, PseudoLabelTable,
};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::nets::{
    clip_input, load_checkpoint, reference_student, reference_teacher, ArchDescriptor, Logits, Network,
    ParameterCheckpoint, Student, StudentOutput, Teacher, CLASS_HEAD, CONFIDENCE_HEAD,
};
use crate::seed::rng_for;
use crate::videodata::{load_video, segment, DatasetManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Teacher,
    CondiSr,
    StEnt,
    StConf,
    NaiveBce,
}

impl Method {
    pub const STUDENTS: [Method; 4] = [Method::CondiSr, Method::StEnt, Method::StConf, Method::NaiveBce];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Teacher => "teacher",
            Method::CondiSr => "condi-sr",
            Method::StEnt => "st-ent",
            Method::StConf => "st-conf",
            Method::NaiveBce => "naive-bce",
        }
    }

    pub fn needs_pseudo_labels(self) -> bool {
        matches!(self, Method::CondiSr | Method::NaiveBce)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [Method::Teacher, Method::CondiSr, Method::StEnt, Method::StConf, Method::NaiveBce]
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub method: Method,
    pub epochs: usize,
    pub base_lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    /// Weight of the `−log c` penalty in the self-confidence baseline.
    #[serde(default = "default_conf_weight")]
    pub conf_weight: f64,
    /// Start from these parameters instead of a fresh initialization.
    #[serde(default)]
    pub init_from: Option<PathBuf>,
}

fn default_momentum() -> f64 {
    0.9
}

fn default_conf_weight() -> f64 {
    0.5
}

impl TrainConfig {
    pub fn teacher() -> Self {
        TrainConfig {
            method: Method::Teacher,
            epochs: 15,
            base_lr: 0.01,
            batch_size: 16,
            seed: 0,
            loss: LossConfig::default(),
            momentum: default_momentum(),
            conf_weight: default_conf_weight(),
            init_from: None,
        }
    }

    pub fn student(method: Method) -> Self {
        TrainConfig {
            method,
            epochs: 10,
            ..Self::teacher()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: TrainConfig = serde_json::from_str(text).map_err(|e| Error::config(format!("train config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if !(self.base_lr > 0.0) || !self.base_lr.is_finite() {
            return Err(Error::config("base_lr must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum must be in [0, 1)"));
        }
        if !(self.conf_weight >= 0.0) {
            return Err(Error::config("conf_weight must be non-negative"));
        }
        self.loss.validate()
    }
}

/// Learning rates `(main, confidence head)` for 0-based `epoch`. Both start
/// at `base_lr`; after each epoch the confidence head is divided by 5 and
/// everything else by 1.25.
pub fn learning_rates(base_lr: f64, epoch: usize) -> (f64, f64) {
    let main = base_lr / 1.25f64.powi(epoch as i32);
    let conf = base_lr / 5f64.powi(epoch as i32);
    (main, conf)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total_loss: f64,
    pub kd_loss: f64,
    pub conf_loss: f64,
    pub clip_accuracy: f64,
    pub lr_main: f64,
    pub lr_conf: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

const LOG_COLUMNS: &str = "epoch,total_loss,kd_loss,conf_loss,clip_accuracy,lr_main,lr_conf";

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(LOG_COLUMNS);
        out.push('\n');
        for r in &self.epochs {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.epoch, r.total_loss, r.kd_loss, r.conf_loss, r.clip_accuracy, r.lr_main, r.lr_conf
            )
            .unwrap();
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(LOG_COLUMNS) {
            return Err(Error::Malformed("training log header".into()));
        }
        let epochs = lines
            .filter(|l| !l.is_empty())
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                let num = |i: usize| -> Result<f64> {
                    f.get(i)
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| Error::Malformed(format!("training log row `{l}`")))
                };
                Ok(EpochRecord {
                    epoch: num(0)? as usize,
                    total_loss: num(1)?,
                    kd_loss: num(2)?,
                    conf_loss: num(3)?,
                    clip_accuracy: num(4)?,
                    lr_main: num(5)?,
                    lr_conf: num(6)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(TrainLog { epochs })
    }
}

/// A training clip in network layout.
struct Sample {
    input: Vec<f32>,
    label: usize,
    video_id: String,
    clip_index: usize,
}

fn load_samples(manifest: &DatasetManifest) -> Result<Vec<Sample>> {
    let per_video = manifest
        .entries
        .par_iter()
        .map(|e| {
            let video = load_video(manifest, e)?;
            Ok(segment(&video, manifest.clip_length)?
                .iter()
                .map(|c| Sample {
                    input: clip_input(c),
                    label: e.label,
                    video_id: e.id.clone(),
                    clip_index: c.index,
                })
                .collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_video.into_iter().flatten().collect())
}

/// Shuffles within each class, then interleaves the classes evenly so every
/// batch sees roughly the class proportions of the whole set.
fn stratified_order(labels: &[usize], seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = rng_for(seed, 10_000 + epoch as u64);
    let classes = labels.iter().max().map(|m| m + 1).unwrap_or(0);
    let mut keyed: Vec<(f64, usize, usize)> = Vec::with_capacity(labels.len());
    for c in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(&mut rng);
        let n = members.len() as f64;
        keyed.extend(members.into_iter().enumerate().map(|(j, i)| ((j as f64 + 0.5) / n, c, i)));
    }
    let mut class_rank: Vec<usize> = (0..classes).collect();
    class_rank.shuffle(&mut rng);
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(class_rank[a.1].cmp(&class_rank[b.1])));
    keyed.into_iter().map(|(_, _, i)| i).collect()
}

struct Sgd {
    velocity: Vec<f32>,
    momentum: f32,
}

impl Sgd {
    fn new(n: usize, momentum: f64) -> Self {
        Sgd {
            velocity: vec![0.0; n],
            momentum: momentum as f32,
        }
    }

    /// `v ← μv + g; p ← p − lr·v`, with `lr_for(i)` per parameter group.
    fn step(&mut self, params: &mut [f32], grad: &[f32], lr_main: f64, conf: Option<(std::ops::Range<usize>, f64)>) {
        for (i, ((p, v), g)) in params.iter_mut().zip(&mut self.velocity).zip(grad).enumerate() {
            *v = self.momentum * *v + g;
            let lr = match &conf {
                Some((r, lr_c)) if r.contains(&i) => *lr_c,
                _ => lr_main,
            } as f32;
            *p -= lr * *v;
        }
    }
}

/// Per-sample loss, gradient and whether the class head got it right.
struct SampleStep {
    parts: LossParts,
    grad: Vec<f32>,
    correct: bool,
}

fn check_finite(parts: &LossParts, epoch: usize) -> Result<()> {
    if parts.total.is_finite() && parts.kd.is_finite() && parts.conf.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite loss in epoch {epoch}")))
    }
}

/// Runs the shared epoch loop. `step` computes one sample's loss and
/// gradient for the current parameters.
fn run_epochs<F>(net: &mut Network, samples: &[Sample], config: &TrainConfig, conf_head: bool, step: F) -> Result<TrainLog>
where
    F: Fn(&Network, usize) -> Result<SampleStep> + Sync,
{
    let conf_range = if conf_head { net.head_param_range(CONFIDENCE_HEAD) } else { None };
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let mut sgd = Sgd::new(net.param_count(), config.momentum);
    let mut log = TrainLog::default();
    for epoch in 0..config.epochs {
        let (lr_main, lr_conf) = learning_rates(config.base_lr, epoch);
        let order = stratified_order(&labels, config.seed, epoch);
        let mut sums = LossParts::default();
        let mut correct = 0usize;
        for batch in order.chunks(config.batch_size) {
            let steps = batch
                .par_iter()
                .map(|&i| step(net, i))
                .collect::<Result<Vec<SampleStep>>>()?;
            let mut grad = vec![0.0f32; net.param_count()];
            for s in &steps {
                check_finite(&s.parts, epoch)?;
                sums.total += s.parts.total;
                sums.kd += s.parts.kd;
                sums.conf += s.parts.conf;
                correct += s.correct as usize;
                for (g, x) in grad.iter_mut().zip(&s.grad) {
                    *g += x;
                }
            }
            let scale = 1.0 / batch.len() as f32;
            grad.iter_mut().for_each(|g| *g *= scale);
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient in epoch {epoch}")));
            }
            sgd.step(net.params_mut(), &grad, lr_main, conf_range.clone().map(|r| (r, lr_conf)));
        }
        let n = samples.len() as f64;
        log.epochs.push(EpochRecord {
            epoch,
            total_loss: sums.total / n,
            kd_loss: sums.kd / n,
            conf_loss: sums.conf / n,
            clip_accuracy: correct as f64 / n,
            lr_main,
            lr_conf: if conf_range.is_some() { lr_conf } else { lr_main },
        });
        log::info!(
            "{} epoch {epoch}: loss {:.4} (kd {:.4}, conf {:.4}) clip acc {:.3}",
            config.method,
            sums.total / n,
            sums.kd / n,
            sums.conf / n,
            correct as f64 / n
        );
    }
    Ok(log)
}

fn initial_network(config: &TrainConfig, desc: ArchDescriptor) -> Result<Network> {
    match &config.init_from {
        Some(p) => load_checkpoint(p)?.into_network(&desc),
        None => Network::new(desc, config.seed),
    }
}

/// Trains the reference teacher with cross-entropy on clip labels.
pub fn train_teacher(config: &TrainConfig, manifest: &DatasetManifest) -> Result<(ParameterCheckpoint, TrainLog)> {
    let desc = reference_teacher(manifest.num_classes, manifest.clip_length, manifest.frame_size);
    train_teacher_with(config, manifest, desc)
}

pub fn train_teacher_with(
    config: &TrainConfig,
    manifest: &DatasetManifest,
    desc: ArchDescriptor,
) -> Result<(ParameterCheckpoint, TrainLog)> {
    config.validate()?;
    if config.method != Method::Teacher {
        return Err(Error::config(format!("method {} is not the teacher", config.method)));
    }
    let class_head = desc
        .head_index(CLASS_HEAD)
        .ok_or_else(|| Error::Architecture("teacher needs a `class` head".into()))?;
    let mut net = initial_network(config, desc)?;
    let heads = net.descriptor().heads.len();
    let samples = load_samples(manifest)?;
    let log = run_epochs(&mut net, &samples, config, false, |net, i| {
        let s = &samples[i];
        let tape = net.forward_train(&s.input)?;
        let logits: Vec<f64> = tape.head_output(class_head).iter().map(|&x| x as f64).collect();
        let p = softened_softmax(&logits, 1.0)?;
        let loss = crate::distill::cross_entropy(&p, s.label);
        let d: Vec<f32> = p
            .probs()
            .iter()
            .enumerate()
            .map(|(k, &pk)| (pk - if k == s.label { 1.0 } else { 0.0 }) as f32)
            .collect();
        let mut hg: Vec<Option<&[f32]>> = vec![None; heads];
        hg[class_head] = Some(&d);
        let mut grad = vec![0.0f32; net.param_count()];
        net.backward(&tape, &hg, &mut grad);
        Ok(SampleStep {
            parts: LossParts {
                total: loss,
                kd: loss,
                conf: 0.0,
            },
            grad,
            correct: p.argmax() == s.label,
        })
    })?;
    Ok((ParameterCheckpoint::from_network(&net), log))
}

/// Trains a reference student with the loss selected by `config.method`.
/// The teacher is only read.
pub fn distill_student(
    config: &TrainConfig,
    teacher: &ParameterCheckpoint,
    labels: Option<&PseudoLabelTable>,
    manifest: &DatasetManifest,
) -> Result<(ParameterCheckpoint, TrainLog)> {
    let desc = reference_student(manifest.num_classes, manifest.clip_length, manifest.frame_size);
    distill_student_with(config, teacher, labels, manifest, desc)
}

pub fn distill_student_with(
    config: &TrainConfig,
    teacher: &ParameterCheckpoint,
    labels: Option<&PseudoLabelTable>,
    manifest: &DatasetManifest,
    desc: ArchDescriptor,
) -> Result<(ParameterCheckpoint, TrainLog)> {
    config.validate()?;
    let method = config.method;
    if method == Method::Teacher {
        return Err(Error::config("use train_teacher for the teacher"));
    }
    let teacher = Teacher::new(teacher.clone().into_network(&teacher.descriptor)?)?;
    if teacher.num_classes() != desc.head_output_len(CLASS_HEAD).unwrap_or(0) {
        return Err(Error::Architecture("teacher and student disagree on the number of classes".into()));
    }
    let student = Student::new(initial_network(config, desc)?)?;
    let (class_head, conf_head) = (student.class_head(), student.conf_head());
    let mut net = student.into_network();
    let heads = net.descriptor().heads.len();
    let samples = load_samples(manifest)?;

    let z: Vec<PseudoLabel> = if method.needs_pseudo_labels() {
        let table = labels.ok_or_else(|| Error::config(format!("method {method} needs pseudo labels")))?;
        samples
            .iter()
            .map(|s| table.get(&s.video_id, s.clip_index).map(|r| r.label()))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let teacher_logits: Vec<Logits> = if matches!(method, Method::CondiSr | Method::StEnt) {
        let tn = teacher.network();
        samples
            .par_iter()
            .map(|s| {
                let out = tn.forward(&s.input)?;
                let head = tn.descriptor().head_index(CLASS_HEAD).expect("teacher has a class head");
                Ok(Logits(out[head].iter().map(|&x| x as f64).collect()))
            })
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };

    let log = run_epochs(&mut net, &samples, config, true, |net, i| {
        let s = &samples[i];
        let tape = net.forward_train(&s.input)?;
        let out = StudentOutput {
            class_logits: Logits(tape.head_output(class_head).iter().map(|&x| x as f64).collect()),
            confidence_logit: tape.head_output(conf_head)[0] as f64,
        };
        let g: LossGrad = match method {
            Method::CondiSr => condi_sr_grad(&teacher_logits[i], &out, z[i], &config.loss)?,
            Method::StEnt => st_ent_grad(&teacher_logits[i], &out, config.loss.tau)?,
            Method::StConf => st_conf_grad(&out, s.label, config.conf_weight)?,
            Method::NaiveBce => naive_bce_grad(&out, z[i], config.loss.mu),
            Method::Teacher => unreachable!(),
        };
        let d_class: Vec<f32> = g.d_class_logits.iter().map(|&x| x as f32).collect();
        let d_conf = [g.d_conf_logit as f32];
        let mut hg: Vec<Option<&[f32]>> = vec![None; heads];
        if method != Method::NaiveBce {
            hg[class_head] = Some(&d_class);
        }
        if method != Method::StEnt {
            hg[conf_head] = Some(&d_conf);
        }
        let mut grad = vec![0.0f32; net.param_count()];
        net.backward(&tape, &hg, &mut grad);
        Ok(SampleStep {
            parts: g.parts,
            grad,
            correct: crate::distill::argmax(out.class_logits.as_slice()) == s.label,
        })
    })?;
    Ok((ParameterCheckpoint::from_network(&net), log))
}

/// Values to sweep; an empty list keeps the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub lambda: Vec<f64>,
    pub tau: Vec<f64>,
    pub mu: Vec<f64>,
    pub base_lr: Vec<f64>,
    pub seed: Vec<u64>,
}

/// Cartesian expansion of `grid` over `base`, varying seed slowest and
/// λ fastest.
pub fn hyperparameter_grid(base: &TrainConfig, grid: &GridSpec) -> Vec<TrainConfig> {
    fn or_base<T: Copy>(v: &[T], b: T) -> Vec<T> {
        if v.is_empty() {
            vec![b]
        } else {
            v.to_vec()
        }
    }
    let mut out = Vec::new();
    for &seed in &or_base(&grid.seed, base.seed) {
        for &lr in &or_base(&grid.base_lr, base.base_lr) {
            for &mu in &or_base(&grid.mu, base.loss.mu) {
                for &tau in &or_base(&grid.tau, base.loss.tau) {
                    for &lambda in &or_base(&grid.lambda, base.loss.lambda) {
                        out.push(TrainConfig {
                            seed,
                            base_lr: lr,
                            loss: LossConfig { tau, lambda, mu },
                            ..base.clone()
                        });
                    }
                }
            }
        }
    }
    out
}

/// Paths written by [`save_run`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunFiles {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub config: PathBuf,
}

/// Writes `<stem>.ckpt`, `<stem>.log.csv` and `<stem>.config.json` side by side.
pub fn save_run(
    dir: &Path,
    stem: &str,
    ckpt: &ParameterCheckpoint,
    log: &TrainLog,
    config: &TrainConfig,
) -> Result<RunFiles> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = RunFiles {
        checkpoint: dir.join(format!("{stem}.ckpt")),
        log: dir.join(format!("{stem}.log.csv")),
        config: dir.join(format!("{stem}.config.json")),
    };
    crate::nets::save_checkpoint(ckpt, &files.checkpoint)?;
    write_atomic(&files.log, log.to_csv().as_bytes())?;
    write_atomic(&files.config, config.to_json().as_bytes())?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distill::make_pseudo_labels;
    use crate::videodata::{generate_corpus, CorpusConfig};

    fn tiny_corpus(dir: &Path) -> DatasetManifest {
        let cfg = CorpusConfig {
            num_videos: 6,
            num_classes: 3,
            frames_per_video: 8,
            frame_size: 16,
            clip_length: 4,
            corrupt_prob: 0.3,
            seed: 4,
        };
        generate_corpus(&cfg, dir).unwrap()
    }

    #[test]
    fn learning_rate_traces() {
        let (m, c): (Vec<f64>, Vec<f64>) = (0..3).map(|e| learning_rates(0.01, e)).unzip();
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-15);
        assert!(close(&c, &[0.01, 0.002, 0.0004]));
        assert!(close(&m, &[0.01, 0.008, 0.0064]));
    }

    #[test]
    fn config_json_round_trip_and_validation() {
        let c = TrainConfig::student(Method::CondiSr);
        assert_eq!(TrainConfig::from_json(&c.to_json()).unwrap(), c);
        let text = r#"{"method":"st-conf","epochs":2,"base_lr":0.05,"batch_size":4,"seed":1}"#;
        let c = TrainConfig::from_json(text).unwrap();
        assert_eq!(c.loss, LossConfig::default());
        assert_eq!(c.momentum, 0.9);
        assert!(TrainConfig::from_json(r#"{"method":"st-conf","epochs":0,"base_lr":0.05,"batch_size":4,"seed":1}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"method":"lstm","epochs":1,"base_lr":0.05,"batch_size":4,"seed":1}"#).is_err());
    }

    #[test]
    fn grid_expansion() {
        let base = TrainConfig::student(Method::CondiSr);
        assert_eq!(hyperparameter_grid(&base, &GridSpec::default()), vec![base.clone()]);
        let g = GridSpec {
            lambda: vec![0.5, 1.5, 2.0],
            tau: vec![0.9],
            ..GridSpec::default()
        };
        let out = hyperparameter_grid(&base, &g);
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|c| c.seed == base.seed));
        assert_eq!(out[0].loss.lambda, 0.5);
    }

    #[test]
    fn stratified_order_is_a_balanced_permutation() {
        let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
        let o = stratified_order(&labels, 1, 0);
        let mut sorted = o.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..30).collect::<Vec<_>>());
        for chunk in o.chunks(3) {
            let mut cls: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            cls.sort_unstable();
            assert_eq!(cls, vec![0, 1, 2]);
        }
        assert_ne!(o, stratified_order(&labels, 1, 1));
    }

    #[test]
    fn training_log_csv_round_trip() {
        let log = TrainLog {
            epochs: vec![EpochRecord {
                epoch: 0,
                total_loss: 1.25,
                kd_loss: 1.0,
                conf_loss: 0.5,
                clip_accuracy: 0.3,
                lr_main: 0.01,
                lr_conf: 0.01,
            }],
        };
        assert_eq!(TrainLog::from_csv(&log.to_csv()).unwrap(), log);
    }

    #[test]
    fn vanishing_learning_rate_leaves_parameters_unchanged() {
        let dir = tempfile::tempdir().unwrap();
        let m = tiny_corpus(dir.path());
        let cfg = TrainConfig {
            epochs: 1,
            base_lr: f64::MIN_POSITIVE,
            batch_size: 4,
            ..TrainConfig::teacher()
        };
        let (ck, _) = train_teacher(&cfg, &m).unwrap();
        let fresh = Network::new(reference_teacher(3, 4, 16), cfg.seed).unwrap();
        assert_eq!(ck.content_hash(), ParameterCheckpoint::from_network(&fresh).content_hash());
    }

    #[test]
    fn student_training_is_deterministic_and_leaves_teacher_alone() {
        let dir = tempfile::tempdir().unwrap();
        let m = tiny_corpus(dir.path());
        let tcfg = TrainConfig {
            epochs: 1,
            batch_size: 4,
            ..TrainConfig::teacher()
        };
        let (teacher, log) = train_teacher(&tcfg, &m).unwrap();
        assert_eq!(log.epochs.len(), 1);
        let before = teacher.content_hash();
        let labels = make_pseudo_labels(&Teacher::new(teacher.clone().into_network(&teacher.descriptor).unwrap()).unwrap(), &m).unwrap();
        for method in Method::STUDENTS {
            let cfg = TrainConfig {
                epochs: 2,
                batch_size: 4,
                ..TrainConfig::student(method)
            };
            let (a, la) = distill_student(&cfg, &teacher, Some(&labels), &m).unwrap();
            let (b, _) = distill_student(&cfg, &teacher, Some(&labels), &m).unwrap();
            assert_eq!(a.content_hash(), b.content_hash(), "{method}");
            assert_eq!(la.epochs[1].lr_conf, 0.002);
            assert_eq!(la.epochs[1].lr_main, 0.008);
        }
        assert_eq!(teacher.content_hash(), before);
    }

    #[test]
    fn missing_pseudo_labels_are_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let m = tiny_corpus(dir.path());
        let teacher = ParameterCheckpoint::from_network(&Network::new(reference_teacher(3, 4, 16), 0).unwrap());
        let cfg = TrainConfig::student(Method::CondiSr);
        assert!(distill_student(&cfg, &teacher, None, &m).is_err());
        let empty = PseudoLabelTable::default();
        assert!(matches!(
            distill_student(&cfg, &teacher, Some(&empty), &m),
            Err(Error::MissingPseudoLabel { .. })
        ));
    }

    #[test]
    fn confidence_head_is_untouched_without_bce_weight() {
        let dir = tempfile::tempdir().unwrap();
        let m = tiny_corpus(dir.path());
        let teacher = ParameterCheckpoint::from_network(&Network::new(reference_teacher(3, 4, 16), 0).unwrap());
        let labels = make_pseudo_labels(&Teacher::new(teacher.clone().into_network(&teacher.descriptor).unwrap()).unwrap(), &m).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 4,
            loss: LossConfig {
                lambda: 0.0,
                ..LossConfig::default()
            },
            ..TrainConfig::student(Method::CondiSr)
        };
        let (ck, _) = distill_student(&cfg, &teacher, Some(&labels), &m).unwrap();
        let trained = ck.into_network(&reference_student(3, 4, 16)).unwrap();
        let fresh = Network::new(reference_student(3, 4, 16), cfg.seed).unwrap();
        let r = fresh.head_param_range(CONFIDENCE_HEAD).unwrap();
        assert_eq!(&trained.params()[r.clone()], &fresh.params()[r]);
        assert_ne!(trained.params(), fresh.params());
    }
}
