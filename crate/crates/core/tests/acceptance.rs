//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when a deterministic criterion fails.
//!
//! The efficacy run trains a teacher and four students for each of three
//! seeds, then repeats everything in a fresh cache for the determinism
//! check. Set `CONFDISTILL_ACCEPT_DIR` to keep the run directories.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use confdistill::bench::{run_experiment, ExperimentOutcome, ExperimentSpec, ReportTable, SeedArtifacts, METRICS_COLUMNS};
use confdistill::distill::*;
use confdistill::inference::*;
use confdistill::nets::*;
use confdistill::sampling::*;
use confdistill::trainer::*;
use confdistill::videodata::*;
use confdistill::Error;

const SCALAR_TOL: f64 = 1e-6;
const IDENTITY_TOL: f64 = 1e-9;
const FD_STEP: f64 = 1e-5;
const FD_REL_TOL: f64 = 1e-4;
const AUROC_MIN: f64 = 0.75;
const AUROC_GAP: f64 = 0.05;
const RANDOM_MARGIN: f64 = 0.05;
const DIVIDED_DROP: f64 = 0.06;
const FLOP_RATIO: f64 = 10.0;

type Check = std::result::Result<(), String>;

fn out(line: &str) {
    let mut o = std::io::stdout().lock();
    writeln!(o, "{line}").unwrap();
    o.flush().unwrap();
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(name: &str, got: f64, want: f64, tol: f64) -> Check {
    ensure((got - want).abs() <= tol, || format!("{name}: got {got}, want {want} (tol {tol})"))
}

fn close_vec(name: &str, got: &[f64], want: &[f64], tol: f64) -> Check {
    ensure(got.len() == want.len(), || format!("{name}: length {} vs {}", got.len(), want.len()))?;
    for (g, w) in got.iter().zip(want) {
        close(name, *g, *w, tol)?;
    }
    Ok(())
}

fn dist(p: &[f64]) -> ClassDistribution {
    ClassDistribution::new(p.to_vec()).unwrap()
}

fn sout(logits: &[f64], conf: f64) -> StudentOutput {
    StudentOutput {
        class_logits: Logits(logits.to_vec()),
        confidence_logit: conf,
    }
}

fn e<T: std::fmt::Debug>(r: confdistill::Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

struct Outcome {
    criterion: usize,
    title: &'static str,
    pass: bool,
    detail: String,
    /// Deterministic criteria make the suite fail; empirical ones are
    /// reported only.
    hard: bool,
}

fn report(o: &Outcome) {
    out(&format!(
        "{} criterion {}: {} | {}",
        if o.pass { "PASS" } else { "FAIL" },
        o.criterion,
        o.title,
        o.detail
    ));
}

fn small_corpus(dir: &Path, n: usize, p: f64, seed: u64) -> DatasetManifest {
    let cfg = CorpusConfig {
        num_videos: n,
        num_classes: 6,
        frames_per_video: 32,
        frame_size: 16,
        clip_length: 4,
        corrupt_prob: p,
        seed,
    };
    generate_corpus(&cfg, dir).unwrap()
}

fn video_of(t: usize, s: usize, fill: impl FnMut(usize) -> f32) -> Video {
    let len = t * 3 * s * s;
    Video::new("v", 0, s, s, (0..len).map(fill).collect(), vec![false; t]).unwrap()
}

fn read_files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut v = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                v.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    v.sort();
    v
}

fn load_log(dir: &Path, stem: &str) -> TrainLog {
    TrainLog::from_csv(&fs::read_to_string(dir.join(format!("{stem}.log.csv"))).unwrap()).unwrap()
}

fn load_models(a: &SeedArtifacts, test: &DatasetManifest, method: Method) -> (Teacher, Student) {
    let tdesc = reference_teacher(test.num_classes, test.clip_length, test.frame_size);
    let sdesc = reference_student(test.num_classes, test.clip_length, test.frame_size);
    let teacher = Teacher::new(
        load_checkpoint(&a.teacher_dir.join("teacher.ckpt"))
            .unwrap()
            .into_network(&tdesc)
            .unwrap(),
    )
    .unwrap();
    let dir = &a.students.iter().find(|(m, _)| *m == method).unwrap().1;
    let student = Student::new(
        load_checkpoint(&dir.join(format!("{method}.ckpt")))
            .unwrap()
            .into_network(&sdesc)
            .unwrap(),
    )
    .unwrap();
    (teacher, student)
}

/// Examples that need no trained model.
fn static_examples(scratch: &Path) -> Vec<(&'static str, Check)> {
    let mut v: Vec<(&'static str, Check)> = Vec::new();

    // videodata
    v.push(("corrupt_prob=0 leaves every clip clean", {
        let m = small_corpus(&scratch.join("p0"), 20, 0.0, 1);
        ensure(m.entries.iter().all(|e| e.clip_corrupted.iter().all(|c| !c)), || "corrupted clip found".into())
    }));
    v.push(("seed 7 twice gives byte-identical files", {
        small_corpus(&scratch.join("s7a"), 12, 0.3, 7);
        small_corpus(&scratch.join("s7b"), 12, 0.3, 7);
        let a = read_files(&scratch.join("s7a"));
        let b = read_files(&scratch.join("s7b"));
        ensure(a == b && !a.is_empty(), || "corpora differ".into())
    }));
    v.push(("500 videos at p=0.3 have 0.30 ± 0.02 corrupted clips", {
        let m = small_corpus(&scratch.join("p3"), 500, 0.3, 3);
        let frac = m.entries.iter().flat_map(|e| &e.clip_corrupted).filter(|c| **c).count() as f64
            / m.total_clips() as f64;
        close("corrupted fraction", frac, 0.30, 0.02)
    }));
    v.push(("T=32, L=16 gives 2 unpadded clips", {
        let c = e(segment(&video_of(32, 16, |i| (i % 7) as f32 / 7.0), 16));
        c.and_then(|c| {
            ensure(c.iter().map(|c| c.padded_frames).eq([0, 0]), || format!("{:?}", c.len()))
        })
    }));
    v.push(("T=35, L=16 gives padding [0,0,13]", {
        let c = e(segment(&video_of(35, 16, |i| (i % 7) as f32 / 7.0), 16));
        c.and_then(|c| {
            let pads: Vec<usize> = c.iter().map(|c| c.padded_frames).collect();
            ensure(pads == [0, 0, (35usize).div_ceil(16) * 16 - 35], || format!("{pads:?}"))
        })
    }));
    v.push(("T=16, L=16 gives one clip equal to the video", {
        let vid = video_of(16, 16, |i| (i % 5) as f32 / 5.0);
        let c = e(segment(&vid, 16));
        c.and_then(|c| ensure(c.len() == 1 && c[0].volume == vid.frames, || "clip differs".into()))
    }));
    v.push(("save then load gives an equal manifest", {
        let m = small_corpus(&scratch.join("rt"), 5, 0.3, 4);
        e(load_corpus(&scratch.join("rt"))).and_then(|l| ensure(l == m, || "manifests differ".into()))
    }));
    v.push(("empty directory reports a missing manifest", {
        fs::create_dir_all(scratch.join("empty")).unwrap();
        match load_corpus(&scratch.join("empty")) {
            Err(Error::MissingManifest(_)) => Ok(()),
            other => Err(format!("{other:?}")),
        }
    }));
    v.push(("damaged magic bytes name the file", {
        let m = small_corpus(&scratch.join("bad"), 3, 0.3, 5);
        let path = m.root.join(&m.entries[0].path);
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'X';
        fs::write(&path, bytes).unwrap();
        match load_video(&m, &m.entries[0]) {
            Err(err @ Error::MalformedHeader { .. }) => {
                ensure(err.to_string().contains(&path.display().to_string()), || err.to_string())
            }
            other => Err(format!("{other:?}")),
        }
    }));

    // nets
    let tdesc = reference_teacher(6, 4, 16);
    let sdesc = reference_student(6, 4, 16);
    let teacher = Teacher::new(Network::new(tdesc.clone(), 3).unwrap()).unwrap();
    let student = Student::new(Network::new(sdesc.clone(), 4).unwrap()).unwrap();
    let vid = video_of(4, 16, |i| ((i * 31) % 97) as f32 / 97.0);
    let clip = segment(&vid, 4).unwrap().remove(0);
    let zero = segment(&video_of(4, 16, |_| 0.0), 4).unwrap().remove(0);
    v.push(("identical clips give identical teacher logits", {
        ensure(teacher.forward(&clip).unwrap() == teacher.forward(&clip.clone()).unwrap(), || "differ".into())
    }));
    v.push(("all-zero clip gives finite logits", {
        let t = teacher.forward(&zero).unwrap();
        let s = student.forward(&zero).unwrap();
        ensure(
            t.0.iter().chain(&s.class_logits.0).all(|x| x.is_finite()) && s.confidence_logit.is_finite(),
            || "non-finite".into(),
        )
    }));
    v.push(("student forward repeats exactly", {
        ensure(student.forward(&clip).unwrap() == student.forward(&clip).unwrap(), || "differ".into())
    }));
    v.push(("student confidence lies in (0,1)", {
        let mut ok = true;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let vid = video_of(4, 16, |_| rng.gen_range(-3.0..3.0));
            let c = segment(&vid, 4).unwrap().remove(0);
            let z = ConfidenceScore::from_logit(student.forward(&c).unwrap().confidence_logit).value();
            ok &= z > 0.0 && z < 1.0;
        }
        ensure(ok, || "confidence outside (0,1)".into())
    }));
    v.push(("dense 10→5 costs 100 FLOPs", {
        let d = LayerSpec::Dense {
            in_features: 10,
            out_features: 5,
        };
        ensure(d.flops(Shape::Flat(10), Shape::Flat(5)) == 2 * 10 * 5, || "wrong count".into())
    }));
    v.push(("1→1 pointwise conv over 16×8×8 costs 2048 FLOPs", {
        let c = LayerSpec::Conv3d {
            in_channels: 1,
            out_channels: 1,
            kernel: [1, 1, 1],
        };
        // brute-force multiply-accumulate count: one MAC per output voxel
        let macs: u64 = (0..16).flat_map(|_| 0..8).flat_map(|_| 0..8).map(|_| 1u64).sum();
        ensure(
            c.flops(Shape::Volume([1, 16, 8, 8]), Shape::Volume([1, 16, 8, 8])) == 2 * macs,
            || "wrong count".into(),
        )
    }));
    v.push(("empty descriptor is rejected", {
        let d = ArchDescriptor {
            name: "empty".into(),
            input: [3, 4, 16, 16],
            trunk: vec![],
            heads: vec![],
        };
        ensure(profile(&d).is_err(), || "accepted".into())
    }));
    v.push(("checkpoint save→load→forward is bitwise equal", {
        let path = scratch.join("s.ckpt");
        save_checkpoint(&ParameterCheckpoint::from_network(student.network()), &path).unwrap();
        let back = Student::new(load_checkpoint(&path).unwrap().into_network(&sdesc).unwrap()).unwrap();
        ensure(back.forward(&clip).unwrap() == student.forward(&clip).unwrap(), || "differ".into())
    }));
    v.push(("teacher checkpoint into student descriptor is refused", {
        let path = scratch.join("t.ckpt");
        save_checkpoint(&ParameterCheckpoint::from_network(teacher.network()), &path).unwrap();
        match load_checkpoint(&path).unwrap().into_network(&sdesc) {
            Err(Error::DescriptorMismatch { .. }) => Ok(()),
            other => Err(format!("{:?}", other.map(|_| ()))),
        }
    }));
    v.push(("truncated checkpoint reports a payload error", {
        let path = scratch.join("s.ckpt");
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 2]).unwrap();
        match load_checkpoint(&path) {
            Err(Error::TruncatedPayload { .. }) => Ok(()),
            other => Err(format!("{:?}", other.map(|_| ()))),
        }
    }));

    // distill
    v.push(("pseudo label p=[.1,.8,.1], y=1 → 1", {
        ensure(PseudoLabel::from_probs(&dist(&[0.1, 0.8, 0.1]), 1).0, || "z=0".into())
    }));
    v.push(("pseudo label p=[.1,.8,.1], y=0 → 0", {
        ensure(!PseudoLabel::from_probs(&dist(&[0.1, 0.8, 0.1]), 0).0, || "z=1".into())
    }));
    v.push(("pseudo label tie p=[.5,.5], y=0 → 1", {
        ensure(PseudoLabel::from_probs(&dist(&[0.5, 0.5]), 0).0, || "z=0".into())
    }));
    v.push(("softened softmax of zeros is uniform", {
        close_vec("p", softened_softmax(&[0.0; 4], 0.7).unwrap().probs(), &[0.25; 4], IDENTITY_TOL)
    }));
    v.push(("softened softmax [2,0] at τ=1", {
        let e2 = 2f64.exp();
        close_vec("p", softened_softmax(&[2.0, 0.0], 1.0).unwrap().probs(), &[e2 / (e2 + 1.0), 1.0 / (e2 + 1.0)], SCALAR_TOL)
            .and(close("first", softened_softmax(&[2.0, 0.0], 1.0).unwrap().probs()[0], 0.880797, SCALAR_TOL))
    }));
    v.push(("softened softmax at τ=1e6 is uniform within 1e-5", {
        close_vec("p", softened_softmax(&[5.0, -3.0, 1.0], 1e6).unwrap().probs(), &[1.0 / 3.0; 3], 1e-5)
    }));
    let pt = dist(&[0.7, 0.3]);
    let mix = |zt: f64, z: bool| mix_teacher_targets(&pt, ConfidenceScore::new(zt).unwrap(), PseudoLabel(z));
    v.push(("mixing z=1, z̃=1 keeps the target", close_vec("mix", mix(1.0, true).probs(), &[0.7, 0.3], IDENTITY_TOL)));
    v.push(("mixing z=1, z̃=0 gives uniform", close_vec("mix", mix(0.0, true).probs(), &[0.5, 0.5], IDENTITY_TOL)));
    v.push(("mixing z=0, z̃=0 keeps the target", close_vec("mix", mix(0.0, false).probs(), &[0.7, 0.3], IDENTITY_TOL)));
    v.push(("mixing z=1, z̃=0.6", {
        let want = [0.6 * 0.7 + 0.4 * 0.5, 0.6 * 0.3 + 0.4 * 0.5];
        close_vec("mix", mix(0.6, true).probs(), &want, SCALAR_TOL).and(close_vec("mix", &want, &[0.62, 0.38], SCALAR_TOL))
    }));
    v.push(("KD of identical distributions is 0", {
        let p = dist(&[0.2, 0.5, 0.3]);
        close("kd", kd_loss(&p, &p, 0.9).unwrap(), 0.0, IDENTITY_TOL)
    }));
    v.push(("KD([1,0] ‖ [.5,.5]) at τ=1 is ln 2", {
        close("kd", kd_loss(&dist(&[1.0, 0.0]), &dist(&[0.5, 0.5]), 1.0).unwrap(), 2f64.ln(), SCALAR_TOL)
    }));
    v.push(("KD is non-negative on random inputs", {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut min = f64::INFINITY;
        for _ in 0..200 {
            let a: Vec<f64> = (0..5).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let b: Vec<f64> = (0..5).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let tau = rng.gen_range(0.3..3.0);
            let k = kd_loss(&softened_softmax(&a, tau).unwrap(), &softened_softmax(&b, tau).unwrap(), tau).unwrap();
            min = min.min(k);
        }
        ensure(min >= 0.0, || format!("min {min}"))
    }));
    v.push(("BCE z=1, z̃→1 is 0", {
        close("bce", confidence_bce(ConfidenceScore::new(1.0).unwrap(), PseudoLabel(true), 1.5), 0.0, SCALAR_TOL)
    }));
    v.push(("BCE z=0, z̃=0.5 is ln 2", {
        close("bce", confidence_bce(ConfidenceScore::new(0.5).unwrap(), PseudoLabel(false), 1.5), 2f64.ln(), SCALAR_TOL)
    }));
    v.push(("BCE z=1, z̃=0.5, μ=1.5", {
        let got = confidence_bce(ConfidenceScore::new(0.5).unwrap(), PseudoLabel(true), 1.5);
        close("bce", got, 1.5 * 2f64.ln(), SCALAR_TOL).and(close("bce", got, 1.039721, SCALAR_TOL))
    }));
    let cfg = LossConfig::default();
    v.push(("ConDi-SR with matching logits, z=1, z̃→1, λ=0 is 0", {
        let t = Logits(vec![1.0, -0.5, 2.0]);
        let s = sout(&t.0, 40.0);
        let c = LossConfig { lambda: 0.0, ..cfg };
        close("total", condi_sr_loss(&t, &s, PseudoLabel(true), &c).unwrap().total, 0.0, SCALAR_TOL)
    }));
    v.push(("ConDi-SR total from the component examples with λ=0.5", {
        let kd = kd_loss(&dist(&[1.0, 0.0]), &dist(&[0.5, 0.5]), 1.0).unwrap();
        let bce = confidence_bce(ConfidenceScore::new(0.5).unwrap(), PseudoLabel(true), 1.5);
        close("total", kd + 0.5 * bce, 1.213008, SCALAR_TOL)
    }));
    v.push(("ConDi-SR total is non-negative on random inputs", {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let mut min = f64::INFINITY;
        for _ in 0..200 {
            let t = Logits((0..4).map(|_| rng.gen_range(-4.0..4.0)).collect());
            let s = sout(&(0..4).map(|_| rng.gen_range(-4.0..4.0)).collect::<Vec<_>>(), rng.gen_range(-6.0..6.0));
            min = min.min(condi_sr_loss(&t, &s, PseudoLabel(rng.gen_bool(0.5)), &cfg).unwrap().total);
        }
        ensure(min >= 0.0, || format!("min {min}"))
    }));
    v.push(("naive BCE inherits the BCE examples", {
        let at = |zt: f64| (zt / (1.0 - zt)).ln();
        close("z=0", naive_bce_loss(&sout(&[0.0, 0.0], at(0.5)), PseudoLabel(false), 1.5).total, 2f64.ln(), SCALAR_TOL)
            .and(close("z=1", naive_bce_loss(&sout(&[0.0, 0.0], at(0.5)), PseudoLabel(true), 1.5).total, 1.039721, SCALAR_TOL))
            .and(close("z→1", naive_bce_loss(&sout(&[0.0, 0.0], 40.0), PseudoLabel(true), 1.5).total, 0.0, SCALAR_TOL))
    }));
    v.push(("entropy-student loss with student = teacher is 0", {
        let t = Logits(vec![0.3, -1.0, 2.0]);
        close("st-ent", st_ent_loss(&t, &sout(&t.0, 0.0), 0.9).unwrap(), 0.0, IDENTITY_TOL)
    }));
    v.push(("entropy-student loss with near one-hot teacher vs uniform student", {
        let t = Logits(vec![60.0, 0.0]);
        let got = st_ent_loss(&t, &sout(&[0.0, 0.0], 0.0), 1.0).unwrap();
        close("st-ent", got, kd_loss(&dist(&[1.0, 0.0]), &dist(&[0.5, 0.5]), 1.0).unwrap(), SCALAR_TOL)
            .and(ensure(got > 0.0, || "not positive".into()))
    }));
    v.push(("self-confidence at c=1 is cross entropy", {
        let s = sout(&[1.0, 0.2, -0.4], 40.0);
        let ce = cross_entropy(&softened_softmax(&s.class_logits.0, 1.0).unwrap(), 0);
        close("st-conf", st_conf_loss(&s, 0, 0.5).unwrap(), ce, SCALAR_TOL)
    }));
    v.push(("self-confidence at c→0: task term vanishes, penalty hits the log floor", {
        let s = sout(&[1.0, 0.2, -0.4], -40.0);
        let total = st_conf_loss(&s, 1, 1.0).unwrap();
        let clamped_penalty = -(1e-12f64).ln();
        ensure(total.is_finite(), || "not finite".into()).and(close("st-conf", total, clamped_penalty, SCALAR_TOL))
    }));
    v.push(("self-confidence p=[.5,.5], y=0, c=.5, weight 1", {
        let got = st_conf_loss(&sout(&[0.0, 0.0], 0.0), 0, 1.0).unwrap();
        close("st-conf", got, -(0.75f64).ln() - (0.5f64).ln(), SCALAR_TOL).and(close("st-conf", got, 0.980829, SCALAR_TOL))
    }));

    // sampling
    v.push(("random K=N returns every index", ensure(sample_random(6, 6, 3) == (0..6).collect::<Vec<_>>(), || "missing".into())));
    v.push(("random with equal seeds repeats", ensure(sample_random(8, 3, 5) == sample_random(8, 3, 5), || "differ".into())));
    v.push(("random K=1 of 8 is uniform over 10^4 draws", {
        let mut counts = [0usize; 8];
        for s in 0..10_000 {
            counts[sample_random(8, 1, s)[0]] += 1;
        }
        let p: f64 = 1.0 / 8.0;
        let sigma = (10_000.0 * p * (1.0 - p)).sqrt();
        ensure(counts.iter().all(|&c| (c as f64 - 1250.0).abs() <= 3.0 * sigma), || format!("{counts:?}"))
    }));
    v.push(("equidistant N=10, K=5", ensure(sample_equidistant(10, 5) == [0, 2, 4, 6, 8], || "wrong".into())));
    v.push(("equidistant K=N is the identity", ensure(sample_equidistant(7, 7) == (0..7).collect::<Vec<_>>(), || "wrong".into())));
    v.push(("equidistant N=7, K=3", {
        let want: Vec<usize> = (0..3).map(|i| (i as f64 * 7.0 / 3.0).floor() as usize).collect();
        ensure(sample_equidistant(7, 3) == want && want == [0, 2, 4], || format!("{:?}", sample_equidistant(7, 3)))
    }));
    v.push(("oracle p_y=[.9,.2,.7], K=2", ensure(sample_oracle(&[0.9, 0.2, 0.7], 2).indices() == [0, 2], || "wrong".into())));
    v.push(("oracle K=N is a full sort", {
        ensure(sample_oracle(&[0.1, 0.9, 0.5, 0.3], 4).indices() == [1, 2, 3, 0], || "wrong".into())
    }));
    v.push(("equal confidences keep index order", {
        let outs: Vec<StudentOutput> = (0..5).map(|_| sout(&[0.0, 0.0], 0.3)).collect();
        ensure(confidence_ranking(&outs).indices() == [0, 1, 2, 3, 4], || "reordered".into())
    }));
    v.push(("confidence scores [.1,.9,.5] order [1,2,0]", {
        let at = |z: f64| (z / (1.0 - z)).ln();
        let outs = vec![sout(&[0.0], at(0.1)), sout(&[0.0], at(0.9)), sout(&[0.0], at(0.5))];
        ensure(confidence_ranking(&outs).indices() == [1, 2, 0], || "wrong".into())
    }));
    v.push(("one-hot prediction has zero entropy and ranks first", {
        let outs = vec![sout(&[0.0, 0.0, 0.0], 0.0), sout(&[80.0, 0.0, 0.0], 0.0)];
        let r = entropy_ranking(&outs).unwrap();
        close("H", entropy(&[1.0, 0.0, 0.0]), 0.0, IDENTITY_TOL).and(ensure(r.indices()[0] == 1, || "not first".into()))
    }));
    v.push(("entropy of uniform over 4 is ln 4", close("H", entropy(&[0.25; 4]), 4f64.ln(), SCALAR_TOL)));
    v.push(("entropy of [.5,.25,.25]", {
        let want = -(0.5 * 0.5f64.ln() + 2.0 * 0.25 * 0.25f64.ln());
        close("H", entropy(&[0.5, 0.25, 0.25]), want, SCALAR_TOL).and(close("H", want, 1.039721, SCALAR_TOL))
    }));
    let conf = RankedClipList::from_scores(&[0.6, 0.8, 0.5, 0.7, 0.9], ScoreKind::Confidence);
    let ent = RankedClipList::from_scores(&[-0.2, -0.9, -0.1, -0.5, -0.3], ScoreKind::NegEntropy);
    v.push(("selection K_s=0 sends the top K to the teacher", {
        let p = make_selection_plan(&conf, &ent, 3, 0).unwrap();
        ensure(p.teacher_clips == [4, 1, 3] && p.student_clips.is_empty(), || format!("{p:?}"))
    }));
    v.push(("selection K_s=K sends every candidate to the student", {
        let p = make_selection_plan(&conf, &ent, 3, 3).unwrap();
        let mut s = p.student_clips.clone();
        s.sort();
        ensure(p.teacher_clips.is_empty() && s == [1, 3, 4], || format!("{p:?}"))
    }));
    v.push(("selection N=5, K=3, K_s=1 hand trace", {
        let p = make_selection_plan(&conf, &ent, 3, 1).unwrap();
        ensure(p.student_clips == [4] && p.teacher_clips == [1, 3], || format!("{p:?}"))
    }));

    // inference on stubbed scores
    let timed = |p: &[f64]| Timed {
        value: dist(p),
        seconds: 0.001,
    };
    let tstud = |o: StudentOutput| Timed { value: o, seconds: 0.0001 };
    let costs = Costs { teacher: 1000, student: 10 };
    let vs = |t: Vec<&[f64]>, s: Option<Vec<StudentOutput>>, y: usize| VideoScores {
        video_id: "v".into(),
        label: y,
        corrupted: vec![false; t.len()],
        teacher: t.into_iter().map(timed).collect(),
        student: s.map(|s| s.into_iter().map(tstud).collect()),
    };
    v.push(("dense over one clip equals that clip", {
        let p = predict(&vs(vec![&[0.2, 0.8]], None, 1), &PredictRequest::dense(), &costs, 0).unwrap();
        close_vec("dense", p.class_probs.probs(), &[0.2, 0.8], IDENTITY_TOL)
    }));
    v.push(("dense over repeated clips equals one clip", {
        let p = predict(&vs(vec![&[0.3, 0.7]; 5], None, 1), &PredictRequest::dense(), &costs, 0).unwrap();
        close_vec("dense", p.class_probs.probs(), &[0.3, 0.7], IDENTITY_TOL)
    }));
    v.push(("dense FLOPs are N teacher passes", {
        let p = predict(&vs(vec![&[0.3, 0.7]; 5], None, 1), &PredictRequest::dense(), &costs, 0).unwrap();
        ensure(p.flops_spent == 5 * costs.teacher, || format!("{}", p.flops_spent))
    }));
    let stud: Vec<StudentOutput> = [0.2, 1.5, -0.3, 0.9].iter().map(|&c| sout(&[0.0, 0.0], c)).collect();
    let four: Vec<&[f64]> = vec![&[0.9, 0.1], &[0.4, 0.6], &[0.5, 0.5], &[0.2, 0.8]];
    v.push(("top-K with K=1 is the most confident clip", {
        let p = predict(&vs(four.clone(), Some(stud.clone()), 1), &PredictRequest::topk(SamplerKind::Confidence, 1), &costs, 0).unwrap();
        close_vec("top1", p.class_probs.probs(), &[0.4, 0.6], IDENTITY_TOL)
    }));
    v.push(("top-K FLOPs grow by one teacher pass per clip", {
        let f: Vec<u64> = (1..=4)
            .map(|k| predict(&vs(four.clone(), Some(stud.clone()), 1), &PredictRequest::topk(SamplerKind::Confidence, k), &costs, 0).unwrap().flops_spent)
            .collect();
        ensure(f.windows(2).all(|w| w[1] - w[0] == costs.teacher), || format!("{f:?}"))
    }));
    v.push(("divided K_s=0 with equal z̃ equals top-K", {
        let eq: Vec<StudentOutput> = (0..4).map(|_| sout(&[0.0, 0.0], 0.4)).collect();
        let v4 = vs(four.clone(), Some(eq), 1);
        let a = predict(&v4, &PredictRequest::divided(3, 0), &costs, 0).unwrap();
        let b = predict(&v4, &PredictRequest::topk(SamplerKind::Confidence, 3), &costs, 0).unwrap();
        close_vec("divided", a.class_probs.probs(), b.class_probs.probs(), IDENTITY_TOL)
    }));
    v.push(("divided K_s=K spends no teacher FLOPs", {
        let p = predict(&vs(four.clone(), Some(stud.clone()), 1), &PredictRequest::divided(3, 3), &costs, 0).unwrap();
        ensure(p.flops_spent == 4 * costs.student, || format!("{}", p.flops_spent))
    }));
    v.push(("divided weights z̃=[.8,.2] on two teacher clips", {
        let at = |z: f64| (z / (1.0 - z)).ln();
        let s = vec![sout(&[0.0, 0.0], at(0.8)), sout(&[0.0, 0.0], at(0.2))];
        let p = predict(&vs(vec![&[1.0, 0.0], &[0.0, 1.0]], Some(s), 0), &PredictRequest::divided(2, 0), &costs, 0).unwrap();
        close_vec("weights", p.class_probs.probs(), &[0.8 / 1.0, 0.2 / 1.0], SCALAR_TOL)
    }));
    v.push(("a model that always predicts y scores 1.0", {
        let videos: Vec<VideoScores> = (0..6).map(|y| {
            let mut p = vec![0.0; 6];
            p[y] = 1.0;
            vs(vec![&p; 3], None, y)
        }).collect();
        let r = evaluate_split(&videos, &PredictRequest::dense(), &costs, "all", "h").unwrap();
        close("top1", r.record.top1, 1.0, IDENTITY_TOL)
    }));
    v.push(("AUROC of the clean-flag complement is 1.0 when corruption ⇔ error", {
        let corrupted = [true, false, false, true, false, true, false, false];
        let z: Vec<f64> = corrupted.iter().map(|&c| if c { 0.0 } else { 1.0 }).collect();
        let correct: Vec<bool> = corrupted.iter().map(|c| !c).collect();
        close("auroc", auroc(&z, &correct).unwrap(), 1.0, IDENTITY_TOL)
    }));

    // trainer
    v.push(("learning-rate trace from 0.01", {
        let (m, c): (Vec<f64>, Vec<f64>) = (0..3).map(|e| learning_rates(0.01, e)).unzip();
        close_vec("conf", &c, &[0.01, 0.002, 0.0004], 1e-15).and(close_vec("main", &m, &[0.01, 0.008, 0.0064], 1e-15))
    }));
    v.push(("empty grid is the base config", {
        let b = TrainConfig::student(Method::CondiSr);
        ensure(hyperparameter_grid(&b, &GridSpec::default()) == vec![b.clone()], || "differs".into())
    }));
    v.push(("3 λ × 1 τ gives 3 configs", {
        let g = GridSpec {
            lambda: vec![0.5, 1.5, 2.0],
            tau: vec![0.9],
            ..GridSpec::default()
        };
        ensure(hyperparameter_grid(&TrainConfig::student(Method::CondiSr), &g).len() == 3, || "count".into())
    }));
    v.push(("grid keeps the base seed", {
        let b = TrainConfig {
            seed: 41,
            ..TrainConfig::student(Method::CondiSr)
        };
        let g = GridSpec {
            lambda: vec![0.5, 2.0],
            ..GridSpec::default()
        };
        ensure(hyperparameter_grid(&b, &g).iter().all(|c| c.seed == 41), || "seed changed".into())
    }));
    let tiny = small_corpus(&scratch.join("tiny"), 6, 0.3, 8);
    let tcfg = TrainConfig {
        epochs: 2,
        batch_size: 4,
        ..TrainConfig::teacher()
    };
    let (tck, _) = train_teacher(&tcfg, &tiny).unwrap();
    v.push(("vanishing learning rate leaves parameters unchanged", {
        let cfg = TrainConfig {
            base_lr: f64::MIN_POSITIVE,
            ..tcfg.clone()
        };
        let fresh = ParameterCheckpoint::from_network(&Network::new(reference_teacher(6, 4, 16), cfg.seed).unwrap());
        let (ck, _) = train_teacher(&cfg, &tiny).unwrap();
        ensure(ck.content_hash() == fresh.content_hash(), || "changed".into())
    }));
    v.push(("same config and seed give the same checkpoint hash", {
        let (again, _) = train_teacher(&tcfg, &tiny).unwrap();
        ensure(again.content_hash() == tck.content_hash(), || "differ".into())
    }));
    v.push(("distillation leaves the teacher checkpoint unchanged", {
        let before = tck.content_hash();
        let labels = make_pseudo_labels(&Teacher::new(tck.clone().into_network(&tck.descriptor).unwrap()).unwrap(), &tiny).unwrap();
        let scfg = TrainConfig {
            epochs: 1,
            batch_size: 4,
            ..TrainConfig::student(Method::CondiSr)
        };
        distill_student(&scfg, &tck, Some(&labels), &tiny).unwrap();
        ensure(tck.content_hash() == before, || "teacher changed".into())
    }));
    v
}

/// Examples that use the models trained for the efficacy run.
fn trained_examples(run: &ExperimentOutcome, spec: &ExperimentSpec, cache: &Path) -> Vec<(&'static str, Check)> {
    let mut v: Vec<(&'static str, Check)> = Vec::new();
    let a = &run.artifacts[0];
    let test = load_corpus(&a.test_corpus).unwrap();

    v.push(("untrained teacher is at chance within 3 standard errors", {
        let t = Teacher::new(Network::new(reference_teacher(6, 4, 16), 123).unwrap()).unwrap();
        let scores = score_split(&t, None, &test).unwrap();
        let correct: Vec<bool> = scores.iter().flat_map(|v| v.teacher_correct()).collect();
        let n = correct.len() as f64;
        let acc = correct.iter().filter(|c| **c).count() as f64 / n;
        let p = 1.0 / 6.0;
        let se = (p * (1.0 - p) / n).sqrt();
        ensure((acc - p).abs() <= 3.0 * se, || format!("accuracy {acc:.4}, chance {p:.4} ± {:.4}", 3.0 * se))
    }));
    v.push(("teacher loss after epoch 1 never exceeds epoch 1", {
        let log = load_log(&a.teacher_dir, "teacher");
        let first = log.epochs[0].total_loss;
        ensure(log.epochs.iter().skip(1).all(|r| r.total_loss <= first), || format!("{:?}", log.epochs.iter().map(|r| r.total_loss).collect::<Vec<_>>()))
    }));
    v.push(("ConDi-SR confidence loss falls from the first to the last epoch", {
        let dir = &a.students.iter().find(|(m, _)| *m == Method::CondiSr).unwrap().1;
        let log = load_log(dir, "condi-sr");
        let (f, l) = (log.epochs[0].conf_loss, log.epochs.last().unwrap().conf_loss);
        ensure(l < f, || format!("first {f}, last {l}"))
    }));
    v.push(("trained ConDi-SR ranks clean clips ahead of corrupted ones", {
        let (teacher, student) = load_models(a, &test, Method::CondiSr);
        let scores = score_split(&teacher, Some(&student), &test).unwrap();
        let (mut clean, mut bad) = (Vec::new(), Vec::new());
        for vsc in &scores {
            let outs: Vec<StudentOutput> = vsc.student.as_ref().unwrap().iter().map(|t| t.value.clone()).collect();
            let r = confidence_ranking(&outs);
            for (rank, &i) in r.indices().iter().enumerate() {
                if vsc.corrupted[i] {
                    bad.push(rank as f64)
                } else {
                    clean.push(rank as f64)
                }
            }
        }
        let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
        ensure(mean(&clean) < mean(&bad), || format!("clean {:.3}, corrupted {:.3}", mean(&clean), mean(&bad)))
    }));
    v.push(("divided rows cover K_s = 0..=K", {
        let k = spec.eval.divided.as_ref().unwrap().k;
        let have: Vec<usize> = run.table.means().filter(|r| r.regime == Regime::Divided).map(|r| r.ks).collect();
        ensure(have == (0..=k).collect::<Vec<_>>(), || format!("{have:?}"))
    }));
    v.push(("warm-cache rerun only evaluates and reproduces the table", {
        let again = run_experiment(spec, cache).unwrap();
        ensure(again.stages_built == 0, || format!("{} stages rebuilt", again.stages_built))
            .and(ensure(again.table.without_timing() == run.table.without_timing(), || "table differs".into()))
    }));
    v.push(("K = N makes every sampler's accuracy equal", {
        let n = spec.corpus.clips_per_video();
        let mut s = spec.clone();
        s.seeds.truncate(1);
        s.eval.k = vec![n];
        s.eval.divided = None;
        let t = run_experiment(&s, cache).unwrap();
        let accs: Vec<(String, f64)> = t.table.per_seed().map(|r| (format!("{}/{}/{}", r.regime, r.sampler, r.seed), r.top1)).collect();
        let mut ok = t.stages_built == 0;
        for seed in &s.seeds {
            let rows: Vec<f64> = t.table.per_seed().filter(|r| r.seed == seed.to_string()).map(|r| r.top1).collect();
            ok &= rows.iter().all(|x| (x - rows[0]).abs() <= IDENTITY_TOL);
        }
        ensure(ok, || format!("{accs:?}"))
    }));
    v
}

fn fd_grad(s: &StudentOutput, f: &dyn Fn(&StudentOutput) -> f64) -> Vec<f64> {
    let mut g = Vec::new();
    for k in 0..=s.class_logits.len() {
        let bump = |d: f64| {
            let mut o = s.clone();
            if k < s.class_logits.len() {
                o.class_logits.0[k] += d;
            } else {
                o.confidence_logit += d;
            }
            f(&o)
        };
        g.push((bump(FD_STEP) - bump(-FD_STEP)) / (2.0 * FD_STEP));
    }
    g
}

/// ‖a − n‖ / max(‖a‖, ‖n‖), with both norms floored at 1e-8.
fn rel_err(g: &LossGrad, n: &[f64]) -> f64 {
    let mut a = g.d_class_logits.clone();
    a.push(g.d_conf_logit);
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(n).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(&a).max(norm(n)).max(1e-8)
}

fn criterion_gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = [0.0f64; 4];
    for _ in 0..100 {
        let c = rng.gen_range(2..=8);
        let t = Logits((0..c).map(|_| rng.gen_range(-3.0..3.0)).collect());
        let s = sout(&(0..c).map(|_| rng.gen_range(-3.0..3.0)).collect::<Vec<_>>(), rng.gen_range(-4.0..4.0));
        let z = PseudoLabel(rng.gen_bool(0.5));
        let y = rng.gen_range(0..c);
        let cfg = LossConfig {
            tau: rng.gen_range(0.5..2.0),
            lambda: rng.gen_range(0.0..2.0),
            mu: rng.gen_range(1.0..2.0),
        };
        // the mixed target is a stop-gradient constant, frozen at this point
        let frozen = mix_teacher_targets(
            &softened_softmax(&t.0, cfg.tau).unwrap(),
            ConfidenceScore::from_logit(s.confidence_logit),
            z,
        );
        let condi = |o: &StudentOutput| {
            kd_loss(&frozen, &softened_softmax(&o.class_logits.0, cfg.tau).unwrap(), cfg.tau).unwrap()
                + cfg.lambda * confidence_bce(ConfidenceScore::from_logit(o.confidence_logit), z, cfg.mu)
        };
        let errs = [
            rel_err(&condi_sr_grad(&t, &s, z, &cfg).unwrap(), &fd_grad(&s, &condi)),
            rel_err(&st_ent_grad(&t, &s, cfg.tau).unwrap(), &fd_grad(&s, &|o| st_ent_loss(&t, o, cfg.tau).unwrap())),
            rel_err(&st_conf_grad(&s, y, 0.5).unwrap(), &fd_grad(&s, &|o| st_conf_loss(o, y, 0.5).unwrap())),
            rel_err(&naive_bce_grad(&s, z, cfg.mu), &fd_grad(&s, &|o| naive_bce_loss(o, z, cfg.mu).total)),
        ];
        for (w, e) in worst.iter_mut().zip(errs) {
            *w = w.max(e);
        }
    }
    Outcome {
        criterion: 2,
        title: "analytic gradients match central differences",
        pass: worst.iter().all(|&w| w < FD_REL_TOL),
        detail: format!(
            "worst relative error over 100 instances: condi-sr {:.2e}, st-ent {:.2e}, st-conf {:.2e}, naive-bce {:.2e} (tol {FD_REL_TOL:.0e})",
            worst[0], worst[1], worst[2], worst[3]
        ),
        hard: true,
    }
}

fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    (0u32..1 << n)
        .filter(|m| m.count_ones() as usize == k)
        .map(|m| (0..n).filter(|i| m & (1 << i) != 0).collect())
        .collect()
}

fn mean_at(p: &[f64], idx: &[usize]) -> f64 {
    let mut s = idx.to_vec();
    s.sort_unstable();
    s.iter().map(|&i| p[i]).sum::<f64>() / s.len() as f64
}

fn criterion_oracle(videos: &[VideoScores]) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut failures = 0;
    let mut cases = 0;
    for v in videos.iter().take(50) {
        let n = rng.gen_range(1..=v.num_clips().min(8));
        let k = rng.gen_range(1..=n.min(4));
        let p: Vec<f64> = v.teacher[..n].iter().map(|t| t.value.probs()[v.label]).collect();
        let chosen = sample_oracle(&p, k);
        let best = subsets(n, k).iter().map(|s| mean_at(&p, s)).fold(f64::NEG_INFINITY, f64::max);
        cases += 1;
        if mean_at(&p, chosen.indices()) != best {
            failures += 1;
        }
    }
    Outcome {
        criterion: 3,
        title: "oracle attains the exhaustive best subset",
        pass: failures == 0 && cases == 50,
        detail: format!("{}/{cases} videos exact (N ≤ 8, K ≤ 4, trained teacher p_y)", cases - failures),
        hard: true,
    }
}

fn criterion_dense(run: &ExperimentOutcome) -> Outcome {
    let a = &run.artifacts[0];
    let test = load_corpus(&a.test_corpus).unwrap();
    let (teacher, condi) = load_models(a, &test, Method::CondiSr);
    let (_, stent) = load_models(a, &test, Method::StEnt);
    let mut worst = 0.0f64;
    let mut videos = 0;
    for entry in test.entries.iter().take(100) {
        let clips = segment(&load_video(&test, entry).unwrap(), test.clip_length).unwrap();
        let n = clips.len();
        let dense = predict_dense(&teacher, &clips, entry.label).unwrap();
        let topk = predict_topk(&teacher, &condi, &clips, entry.label, n).unwrap();
        let ent_scores = score_video(&teacher, Some(&stent), &clips, entry.label).unwrap();
        let costs = Costs::new(&teacher.profile(), &stent.profile());
        let ent = predict(&ent_scores, &PredictRequest::topk(SamplerKind::Entropy, n), &costs, 0).unwrap();
        let equi = predict(&ent_scores, &PredictRequest::topk(SamplerKind::Equidistant, n), &costs, 0).unwrap();
        for p in [&topk, &ent, &equi] {
            for (x, y) in p.class_probs.probs().iter().zip(dense.class_probs.probs()) {
                worst = worst.max((x - y).abs());
            }
        }
        videos += 1;
    }
    Outcome {
        criterion: 4,
        title: "top-K with K = N equals dense",
        pass: worst <= IDENTITY_TOL && videos == 100,
        detail: format!("{videos} videos, confidence/entropy/equidistant, max |Δp| = {worst:.2e} (tol {IDENTITY_TOL:.0e})"),
        hard: true,
    }
}

fn mean_top1(t: &ReportTable, regime: Regime, sampler: &str, k: usize, ks: usize) -> f64 {
    t.mean_row(regime, sampler, k, ks)
        .unwrap_or_else(|| panic!("missing row {regime}/{sampler}/{k}/{ks}"))
        .top1
}

fn criterion_efficacy(run: &ExperimentOutcome, n: usize, minutes: f64) -> Outcome {
    let t = &run.table;
    let condi = t.mean_row(Regime::Topk, "confidence[condi-sr]", 3, 0).unwrap();
    let naive = t.mean_row(Regime::Topk, "confidence[naive-bce]", 3, 0).unwrap();
    let (ac, an) = (condi.auroc.unwrap_or(f64::NAN), naive.auroc.unwrap_or(f64::NAN));
    let conf3 = condi.top1;
    let random3 = mean_top1(t, Regime::Topk, "random", 3, 0);
    let dense = mean_top1(t, Regime::Dense, "all", n, 0);
    let a = ac >= AUROC_MIN && an <= ac - AUROC_GAP;
    let b = conf3 - random3 >= RANDOM_MARGIN;
    let c = conf3 >= dense;
    Outcome {
        criterion: 5,
        title: "desk-scale efficacy (3-seed means)",
        pass: a && b && c,
        detail: format!(
            "(a) {} AUROC condi-sr {ac:.4} (≥ {AUROC_MIN}), naive-bce {an:.4} (≤ {:.4}); (b) {} top-1@3 confidence {:.2}% vs random {:.2}% (need +{:.0}); (c) {} vs dense {:.2}%; runtime {minutes:.1} min",
            if a { "ok" } else { "FAIL" },
            ac - AUROC_GAP,
            if b { "ok" } else { "FAIL" },
            100.0 * conf3,
            100.0 * random3,
            100.0 * RANDOM_MARGIN,
            if c { "ok" } else { "FAIL" },
            100.0 * dense,
        ),
        hard: false,
    }
}

fn criterion_divided(run: &ExperimentOutcome, k: usize) -> Outcome {
    let rows: Vec<_> = (0..=k)
        .map(|ks| run.table.mean_row(Regime::Divided, "confidence[condi-sr]", k, ks).unwrap())
        .collect();
    let flops: Vec<f64> = rows.iter().map(|r| r.mean_flops).collect();
    let top1: Vec<f64> = rows.iter().map(|r| r.top1).collect();
    let falling = flops.windows(2).all(|w| w[1] < w[0]);
    let drop = top1[0] - top1[k];
    let near = drop.abs() <= DIVIDED_DROP;
    Outcome {
        criterion: 6,
        title: "workload division trend at K = 4",
        pass: falling && near,
        detail: format!(
            "{} MFLOPs {:?}; {} top-1 {:?} (K_s=0 vs K_s={k} differ by {:.2} points, limit {:.0})",
            if falling { "ok" } else { "FAIL" },
            flops.iter().map(|f| (f / 1e4).round() / 1e2).collect::<Vec<_>>(),
            if near { "ok" } else { "FAIL" },
            top1.iter().map(|x| (x * 1e4).round() / 1e2).collect::<Vec<_>>(),
            100.0 * drop.abs(),
            100.0 * DIVIDED_DROP
        ),
        hard: false,
    }
}

fn criterion_flops() -> Outcome {
    let mut ratios = Vec::new();
    for &(c, l, s) in &[(6, 4, 16), (6, 8, 32), (101, 16, 112)] {
        let t = profile(&reference_teacher(c, l, s)).unwrap().flops_per_clip as f64;
        let st = profile(&reference_student(c, l, s)).unwrap().flops_per_clip as f64;
        ratios.push((format!("C={c} L={l} {s}px"), t / st));
    }
    Outcome {
        criterion: 7,
        title: "teacher/student FLOP ratio",
        pass: ratios.iter().all(|(_, r)| *r >= FLOP_RATIO),
        detail: ratios.iter().map(|(n, r)| format!("{n}: {r:.1}×")).collect::<Vec<_>>().join(", ") + &format!(" (need ≥ {FLOP_RATIO})"),
        hard: true,
    }
}

fn criterion_determinism(a: &ExperimentOutcome, b: &ExperimentOutcome) -> Outcome {
    let ta = a.table.without_timing();
    let tb = b.table.without_timing();
    let rows_equal = ta.rows.len() == tb.rows.len()
        && ta.rows.iter().zip(&tb.rows).all(|(x, y)| {
            x.regime == y.regime
                && x.sampler == y.sampler
                && x.k == y.k
                && x.ks == y.ks
                && x.top1.to_bits() == y.top1.to_bits()
                && x.mean_flops.to_bits() == y.mean_flops.to_bits()
                && x.auroc.map(f64::to_bits) == y.auroc.map(f64::to_bits)
                && x.seed == y.seed
                && x.dataset_hash == y.dataset_hash
        });
    let ckpt_hash = |o: &ExperimentOutcome| -> Vec<String> {
        o.artifacts
            .iter()
            .flat_map(|s| {
                std::iter::once(s.teacher_dir.join("teacher.ckpt"))
                    .chain(s.students.iter().map(|(m, d)| d.join(format!("{m}.ckpt"))))
            })
            .map(|p| load_checkpoint(&p).unwrap().content_hash())
            .collect()
    };
    let ckpts_equal = ckpt_hash(a) == ckpt_hash(b);
    Outcome {
        criterion: 8,
        title: "rerun reproduces every metric bit-identically",
        pass: rows_equal && ckpts_equal && b.stages_reused == 0,
        detail: format!(
            "{} rows compared ({} columns, wall time excluded), checkpoints {}, fresh cache rebuilt {} stages",
            ta.rows.len(),
            METRICS_COLUMNS.len() - 1,
            if ckpts_equal { "identical" } else { "differ" },
            b.stages_built
        ),
        hard: true,
    }
}

fn main() {
    // libtest passes flags such as --nocapture or a filter; only a filter
    // that excludes this suite stops it.
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with("--")).collect();
    if args.iter().any(|a| !"acceptance".contains(a.as_str())) {
        return;
    }
    if std::env::args().any(|a| a == "--list") {
        out("acceptance: test");
        return;
    }
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();

    let keep = std::env::var_os("CONFDISTILL_ACCEPT_DIR").map(PathBuf::from);
    let tmp = tempfile::tempdir().unwrap();
    let root = keep.clone().unwrap_or_else(|| tmp.path().to_path_buf());
    fs::create_dir_all(&root).unwrap();
    let scratch = root.join("scratch");
    let _ = fs::remove_dir_all(&scratch);
    fs::create_dir_all(&scratch).unwrap();

    let spec = ExperimentSpec::desk_scale();
    let n = spec.corpus.clips_per_video();
    let mut outcomes = Vec::new();

    let started = Instant::now();
    let ex_started = Instant::now();
    let mut examples = static_examples(&scratch);
    let static_secs = ex_started.elapsed().as_secs_f64();
    outcomes.push(criterion_gradients());
    outcomes.push(criterion_flops());

    out("running the efficacy pipeline (3 seeds, teacher + 4 students each)");
    let cache1 = root.join("run1");
    let t5 = Instant::now();
    let run1 = run_experiment(&spec, &cache1).expect("efficacy run");
    let minutes = t5.elapsed().as_secs_f64() / 60.0;
    fs::write(root.join("metrics.csv"), run1.table.to_csv()).unwrap();
    fs::write(root.join("report.md"), run1.table.to_markdown()).unwrap();

    let ex_started = Instant::now();
    examples.extend(trained_examples(&run1, &spec, &cache1));
    let trained_secs = ex_started.elapsed().as_secs_f64();
    let failed: Vec<String> = examples
        .iter()
        .filter_map(|(name, r)| r.as_ref().err().map(|e| format!("{name}: {e}")))
        .collect();
    for f in &failed {
        out(&format!("  example failed: {f}"));
    }
    outcomes.push(Outcome {
        criterion: 1,
        title: "worked examples",
        pass: failed.is_empty(),
        detail: format!(
            "{}/{} examples pass (tol {SCALAR_TOL:.0e} scalar, {IDENTITY_TOL:.0e} identity); {:.1} s excluding training",
            examples.len() - failed.len(),
            examples.len(),
            static_secs + trained_secs
        ),
        hard: true,
    });

    let a0 = &run1.artifacts[0];
    let test0 = load_corpus(&a0.test_corpus).unwrap();
    let (teacher0, _) = load_models(a0, &test0, Method::CondiSr);
    let teacher_scores = score_split(&teacher0, None, &test0).unwrap();
    outcomes.push(criterion_oracle(&teacher_scores));
    outcomes.push(criterion_dense(&run1));
    outcomes.push(criterion_efficacy(&run1, n, minutes));
    outcomes.push(criterion_divided(&run1, spec.eval.divided.as_ref().unwrap().k));

    out("repeating the efficacy pipeline in a fresh cache");
    let cache2 = root.join("run2");
    let _ = fs::remove_dir_all(&cache2);
    let run2 = run_experiment(&spec, &cache2).expect("determinism rerun");
    outcomes.push(criterion_determinism(&run1, &run2));

    outcomes.sort_by_key(|o| o.criterion);
    out("");
    for o in &outcomes {
        report(o);
    }
    let passed = outcomes.iter().filter(|o| o.pass).count();
    out(&format!(
        "{passed}/{} criteria pass; total {:.1} min; report in {}",
        outcomes.len(),
        started.elapsed().as_secs_f64() / 60.0,
        if keep.is_some() { root.display().to_string() } else { "a temporary directory".into() }
    ));
    if outcomes.iter().any(|o| o.hard && !o.pass) {
        std::process::exit(1);
    }
}
