//! Metrics tables and their CSV and Markdown renderings.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::inference::{MetricsRecord, Regime};

/// Exact CSV header of a metrics table.
pub const METRICS_COLUMNS: [&str; 10] = [
    "regime",
    "sampler",
    "K",
    "K_s",
    "top1",
    "mean_flops",
    "mean_wall_s",
    "auroc",
    "seed",
    "dataset_hash",
];

/// Seed value marking rows averaged over seeds.
pub const MEAN_SEED: &str = "mean";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            _ => Err(Error::config(format!("unknown report format `{s}`"))),
        }
    }
}

/// One row per (setting, seed), plus rows with seed `mean`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportTable {
    pub rows: Vec<MetricsRecord>,
}

fn setting_key(r: &MetricsRecord) -> (Regime, String, usize, usize) {
    (r.regime, r.sampler.clone(), r.k, r.ks)
}

impl ReportTable {
    pub fn per_seed(&self) -> impl Iterator<Item = &MetricsRecord> {
        self.rows.iter().filter(|r| r.seed != MEAN_SEED)
    }

    pub fn means(&self) -> impl Iterator<Item = &MetricsRecord> {
        self.rows.iter().filter(|r| r.seed == MEAN_SEED)
    }

    /// The aggregate row of a setting.
    pub fn mean_row(&self, regime: Regime, sampler: &str, k: usize, ks: usize) -> Option<&MetricsRecord> {
        self.means()
            .find(|r| r.regime == regime && r.sampler == sampler && r.k == k && r.ks == ks)
    }

    /// Appends a `mean` row for every setting that has per-seed rows.
    /// AUROC is averaged only when every seed has one.
    pub fn add_means(&mut self) {
        let mut settings: Vec<(Regime, String, usize, usize)> = Vec::new();
        for r in self.per_seed() {
            let k = setting_key(r);
            if !settings.contains(&k) {
                settings.push(k);
            }
        }
        let mut means = Vec::new();
        for key in settings {
            let group: Vec<&MetricsRecord> = self.per_seed().filter(|r| setting_key(r) == key).collect();
            let n = group.len() as f64;
            let avg = |f: &dyn Fn(&MetricsRecord) -> f64| group.iter().map(|r| f(r)).sum::<f64>() / n;
            let auroc = if group.iter().all(|r| r.auroc.is_some()) {
                Some(avg(&|r| r.auroc.unwrap()))
            } else {
                None
            };
            let hashes: BTreeSet<&str> = group.iter().map(|r| r.dataset_hash.as_str()).collect();
            means.push(MetricsRecord {
                regime: key.0,
                sampler: key.1,
                k: key.2,
                ks: key.3,
                top1: avg(&|r| r.top1),
                mean_flops: avg(&|r| r.mean_flops),
                mean_wall_s: avg(&|r| r.mean_wall_s),
                auroc,
                seed: MEAN_SEED.to_string(),
                dataset_hash: hashes.into_iter().collect::<Vec<_>>().join("+"),
            });
        }
        self.rows.extend(means);
    }

    /// A copy with wall times zeroed, for comparing reruns.
    pub fn without_timing(&self) -> ReportTable {
        ReportTable {
            rows: self
                .rows
                .iter()
                .map(|r| MetricsRecord {
                    mean_wall_s: 0.0,
                    ..r.clone()
                })
                .collect(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.write_record(METRICS_COLUMNS).expect("in-memory write");
        for r in &self.rows {
            w.serialize(r).expect("record serializes");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let header = r.headers().map_err(|e| Error::Malformed(format!("metrics csv: {e}")))?;
        if header.iter().ne(METRICS_COLUMNS.iter().copied()) {
            return Err(Error::Malformed(format!(
                "metrics csv header must be {}",
                METRICS_COLUMNS.join(",")
            )));
        }
        let rows = r
            .deserialize()
            .collect::<std::result::Result<Vec<MetricsRecord>, _>>()
            .map_err(|e| Error::Malformed(format!("metrics csv: {e}")))?;
        Ok(ReportTable { rows })
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Csv => self.to_csv(),
            ReportFormat::Markdown => self.to_markdown(),
        }
    }

    /// Accuracy and cost pivoted with one column per K. Uses the `mean`
    /// rows when present. The best accuracy in each column is bold, ties
    /// included.
    pub fn to_markdown(&self) -> String {
        let rows: Vec<&MetricsRecord> = if self.means().next().is_some() {
            self.means().collect()
        } else {
            self.rows.iter().collect()
        };
        let ks: Vec<usize> = rows.iter().map(|r| r.k).collect::<BTreeSet<_>>().into_iter().collect();
        let mut labels: Vec<(Regime, String, usize)> = Vec::new();
        for r in &rows {
            let l = (r.regime, r.sampler.clone(), r.ks);
            if !labels.contains(&l) {
                labels.push(l);
            }
        }
        let cell = |l: &(Regime, String, usize), k: usize| {
            rows.iter()
                .find(|r| r.regime == l.0 && r.sampler == l.1 && r.ks == l.2 && r.k == k)
                .copied()
        };
        let row_name = |l: &(Regime, String, usize)| match l.0 {
            Regime::Divided => format!("{} / {} (K_s={})", l.0, l.1, l.2),
            _ => format!("{} / {}", l.0, l.1),
        };
        let header = |title: &str| {
            let mut s = format!("| {title} |");
            for k in &ks {
                write!(s, " K={k} |").unwrap();
            }
            s.push_str("\n|---|");
            for _ in &ks {
                s.push_str("---:|");
            }
            s.push('\n');
            s
        };

        let mut out = String::from("## Top-1 accuracy (%)\n\n");
        out.push_str(&header("regime / sampler"));
        let best: Vec<Option<f64>> = ks
            .iter()
            .map(|&k| {
                rows.iter()
                    .filter(|r| r.k == k)
                    .map(|r| r.top1)
                    .fold(None, |m: Option<f64>, x| Some(m.map_or(x, |m| m.max(x))))
            })
            .collect();
        for l in &labels {
            write!(out, "| {} |", row_name(l)).unwrap();
            for (i, &k) in ks.iter().enumerate() {
                match cell(l, k) {
                    Some(r) if Some(r.top1) == best[i] => write!(out, " **{:.2}** |", 100.0 * r.top1).unwrap(),
                    Some(r) => write!(out, " {:.2} |", 100.0 * r.top1).unwrap(),
                    None => out.push_str(" – |"),
                }
            }
            out.push('\n');
        }

        out.push_str("\n## Mean MFLOPs per video\n\n");
        out.push_str(&header("regime / sampler"));
        for l in &labels {
            write!(out, "| {} |", row_name(l)).unwrap();
            for &k in &ks {
                match cell(l, k) {
                    Some(r) => write!(out, " {:.1} |", r.mean_flops / 1e6).unwrap(),
                    None => out.push_str(" – |"),
                }
            }
            out.push('\n');
        }

        let aurocs: Vec<&MetricsRecord> = rows.iter().filter(|r| r.auroc.is_some()).copied().collect();
        if !aurocs.is_empty() {
            out.push_str("\n## Confidence AUROC\n\n| sampler | AUROC |\n|---|---:|\n");
            let mut seen = BTreeSet::new();
            for r in aurocs {
                if seen.insert(r.sampler.clone()) {
                    writeln!(out, "| {} | {:.3} |", r.sampler, r.auroc.unwrap()).unwrap();
                }
            }
        }
        out
    }
}
