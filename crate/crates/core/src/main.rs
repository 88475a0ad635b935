use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use confdistill::bench::{run_experiment, write_outputs, ExperimentSpec, ReportFormat, ReportTable};
use confdistill::distill::{load_pseudo_labels, make_pseudo_labels, save_pseudo_labels};
use confdistill::inference::{evaluate_split, score_split, Costs, PredictRequest, Regime, SamplerKind};
use confdistill::nets::{load_checkpoint, reference_student, reference_teacher, Student, Teacher};
use confdistill::trainer::{distill_student, save_run, train_teacher, Method, TrainConfig};
use confdistill::videodata::{dataset_hash, generate_corpus, load_corpus, CorpusConfig, DatasetManifest};
use confdistill::{Error, Result};

#[derive(Parser)]
#[command(name = "confdistill", version, about = "Confidence distillation for clip-based video classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Corpus directory.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output file or directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic moving-shape corpus.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        videos: Option<usize>,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        frame_size: Option<usize>,
        #[arg(long)]
        clip_length: Option<usize>,
        #[arg(long)]
        corrupt_prob: Option<f64>,
    },
    /// Train the teacher on a corpus.
    TrainTeacher {
        #[command(flatten)]
        common: Common,
    },
    /// Label every training clip with whether the teacher gets it right.
    MakeLabels {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        teacher: PathBuf,
    },
    /// Distill a student from a trained teacher.
    Distill {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        method: Method,
        #[arg(long)]
        teacher: PathBuf,
        /// Pseudo labels; computed from the teacher when absent.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Evaluate one regime and sampler on a corpus.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        student: Option<PathBuf>,
        #[arg(long)]
        regime: Regime,
        #[arg(long, default_value = "confidence")]
        sampler: SamplerKind,
        #[arg(long, default_value_t = 0)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        ks: usize,
    },
    /// Run a full experiment grid with stage caching.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        spec: PathBuf,
        /// Stage cache; defaults to `<out>/cache`.
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Re-render a metrics CSV.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "md")]
        format: ReportFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn need<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::config(format!("--{flag} is required")))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            fs::write(p, text).map_err(|e| Error::io(p, e))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn train_config(common: &Common, default: TrainConfig) -> Result<TrainConfig> {
    let mut cfg = match &common.config {
        Some(p) => TrainConfig::from_json(&read(p)?)?,
        None => default,
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn load_teacher(path: &Path, data: &DatasetManifest) -> Result<Teacher> {
    let desc = reference_teacher(data.num_classes, data.clip_length, data.frame_size);
    Teacher::new(load_checkpoint(path)?.into_network(&desc)?)
}

fn load_student(path: &Path, data: &DatasetManifest) -> Result<Student> {
    let desc = reference_student(data.num_classes, data.clip_length, data.frame_size);
    Student::new(load_checkpoint(path)?.into_network(&desc)?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            common,
            videos,
            classes,
            frames,
            frame_size,
            clip_length,
            corrupt_prob,
        } => {
            let mut cfg: CorpusConfig = match &common.config {
                Some(p) => serde_json::from_str(&read(p)?).map_err(|e| Error::config(format!("corpus config: {e}")))?,
                None => CorpusConfig::default(),
            };
            cfg.num_videos = videos.unwrap_or(cfg.num_videos);
            cfg.num_classes = classes.unwrap_or(cfg.num_classes);
            cfg.frames_per_video = frames.unwrap_or(cfg.frames_per_video);
            cfg.frame_size = frame_size.unwrap_or(cfg.frame_size);
            cfg.clip_length = clip_length.unwrap_or(cfg.clip_length);
            cfg.corrupt_prob = corrupt_prob.unwrap_or(cfg.corrupt_prob);
            cfg.seed = common.seed.unwrap_or(cfg.seed);
            let out = need(&common.out, "out")?;
            let m = generate_corpus(&cfg, out)?;
            println!("{} videos written to {} (hash {})", m.entries.len(), out.display(), dataset_hash(&m));
        }
        Command::TrainTeacher { common } => {
            let data = load_corpus(need(&common.data, "data")?)?;
            let cfg = train_config(&common, TrainConfig::teacher())?;
            if cfg.method != Method::Teacher {
                return Err(Error::config("train-teacher needs a config with method `teacher`"));
            }
            let (ckpt, log) = train_teacher(&cfg, &data)?;
            let files = save_run(need(&common.out, "out")?, "teacher", &ckpt, &log, &cfg)?;
            println!("{}", files.checkpoint.display());
        }
        Command::MakeLabels { common, teacher } => {
            let data = load_corpus(need(&common.data, "data")?)?;
            let t = load_teacher(&teacher, &data)?;
            let table = make_pseudo_labels(&t, &data)?;
            let out = need(&common.out, "out")?;
            save_pseudo_labels(&table, out)?;
            println!("{} labels, positive rate {:.4}", table.len(), table.positive_rate());
        }
        Command::Distill {
            common,
            method,
            teacher,
            labels,
        } => {
            if method == Method::Teacher {
                return Err(Error::config("use train-teacher for the teacher"));
            }
            let data = load_corpus(need(&common.data, "data")?)?;
            let cfg = train_config(&common, TrainConfig::student(method))?;
            if cfg.method != method {
                return Err(Error::config(format!("config method `{}` differs from --method {method}", cfg.method)));
            }
            let tck = load_checkpoint(&teacher)?;
            let table = match labels {
                Some(p) => Some(load_pseudo_labels(&p)?),
                None if method.needs_pseudo_labels() => Some(make_pseudo_labels(&load_teacher(&teacher, &data)?, &data)?),
                None => None,
            };
            let (ckpt, log) = distill_student(&cfg, &tck, table.as_ref(), &data)?;
            let files = save_run(need(&common.out, "out")?, method.as_str(), &ckpt, &log, &cfg)?;
            println!("{}", files.checkpoint.display());
        }
        Command::Evaluate {
            common,
            teacher,
            student,
            regime,
            sampler,
            k,
            ks,
        } => {
            let data = load_corpus(need(&common.data, "data")?)?;
            let t = load_teacher(&teacher, &data)?;
            let needs_student = regime == Regime::Divided || (regime == Regime::Topk && sampler.is_learned());
            let s = match (&student, needs_student) {
                (Some(p), _) => Some(load_student(p, &data)?),
                (None, true) => return Err(Error::config("--student is required for this regime and sampler")),
                (None, false) => None,
            };
            if regime != Regime::Dense && k == 0 {
                return Err(Error::config("--k is required for top-K and divided regimes"));
            }
            let req = PredictRequest {
                regime,
                sampler: if regime == Regime::Divided { SamplerKind::Confidence } else { sampler },
                k,
                ks,
                seed: common.seed.unwrap_or(0),
                ..PredictRequest::dense()
            };
            let videos = score_split(&t, s.as_ref(), &data)?;
            let costs = Costs {
                teacher: t.profile().flops_per_clip,
                student: s.as_ref().map_or(0, |s| s.profile().flops_per_clip),
            };
            let label = if regime == Regime::Dense { "all".to_string() } else { req.sampler.to_string() };
            let ev = evaluate_split(&videos, &req, &costs, &label, &dataset_hash(&data))?;
            emit(common.out.as_deref(), &ReportTable { rows: vec![ev.record] }.to_csv())?;
        }
        Command::Bench { common, spec, cache } => {
            let mut spec = ExperimentSpec::from_json(&read(&spec)?)?;
            if let Some(s) = common.seed {
                spec.seeds = vec![s];
            }
            let out = need(&common.out, "out")?;
            let cache = cache.unwrap_or_else(|| out.join("cache"));
            let outcome = run_experiment(&spec, &cache)?;
            write_outputs(&spec, &outcome, out)?;
            log::info!("stages built {}, reused {}", outcome.stages_built, outcome.stages_reused);
            print!("{}", outcome.table.to_markdown());
        }
        Command::Report { input, format, out } => {
            let table = ReportTable::from_csv(&read(&input)?)?;
            emit(out.as_deref(), &table.render(format))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
