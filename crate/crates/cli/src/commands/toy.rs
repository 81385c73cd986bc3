use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use gconv_core::metrics::mode_coverage;
use gconv_core::nn::ConvKind;
use gconv_core::train::{generate_samples, train_gan, GmmSpec, TrainConfig};
use gconv_core::{Error, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::args::CommonArgs;
use crate::config::RunConfig;
use crate::error::Result;
use crate::output::{csv_table, json_report, write_file, Format, Meta};
use crate::threads::{parallel_map, worker_threads};
use crate::Outcome;

pub const DEFAULT_OUT: &str = "toy-gan-out";
pub const SUMMARY_FILE: &str = "summary.json";
/// Coverage radius in standard deviations.
pub const THRESHOLD_STD: f64 = 3.0;
const SAMPLE_STREAM: u64 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Completed,
    Diverged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub kind: ConvKind,
    pub seed: u64,
    pub iterations: usize,
    pub status: RunStatus,
    pub covered_modes: Option<usize>,
    pub high_quality_ratio: Option<f64>,
    /// Final samples within the coverage radius of each center.
    pub mode_counts: Vec<usize>,
    pub final_loss_d: Option<f64>,
    pub final_loss_g: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KindSummary {
    pub kind: ConvKind,
    pub runs: usize,
    pub mean_covered_modes: f64,
    pub full_coverage_runs: usize,
    /// Runs covering every mode with `high_quality_ratio >= 0.8`.
    pub high_quality_runs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToySummary {
    pub train: TrainConfig,
    pub gmm: GmmSpec,
    pub samples: usize,
    pub runs: Vec<RunSummary>,
    pub kinds: Vec<KindSummary>,
}

impl ToySummary {
    pub fn kind(&self, kind: ConvKind) -> Option<&KindSummary> {
        self.kinds.iter().find(|k| k.kind == kind)
    }
}

#[derive(Serialize)]
struct Row<'a> {
    kind: ConvKind,
    seed: u64,
    iterations: usize,
    status: RunStatus,
    covered_modes: Option<usize>,
    high_quality_ratio: Option<f64>,
    final_loss_d: Option<f64>,
    final_loss_g: Option<f64>,
    error: Option<&'a str>,
}

pub fn history_path(dir: &Path, kind: ConvKind, seed: u64) -> PathBuf {
    dir.join(format!("history_{kind}_{seed}.csv"))
}

pub fn samples_path(dir: &Path, kind: ConvKind, seed: u64) -> PathBuf {
    dir.join(format!("samples_{kind}_{seed}.csv"))
}

fn samples_csv(samples: &Tensor) -> String {
    let mut s = String::from("x,y\n");
    for p in samples.data().chunks(2) {
        writeln!(s, "{},{}", p[0], p[1]).expect("write to string");
    }
    s
}

fn run_one(cfg: &RunConfig, kind: ConvKind, seed: u64, out: Option<&Path>) -> Result<RunSummary> {
    let train = TrainConfig {
        seed,
        g_kind: kind,
        ..cfg.train.clone()
    };
    let mut summary = RunSummary {
        kind,
        seed,
        iterations: train.iterations,
        status: RunStatus::Completed,
        covered_modes: None,
        high_quality_ratio: None,
        mode_counts: Vec::new(),
        final_loss_d: None,
        final_loss_g: None,
        error: None,
    };
    let mut outcome = match train_gan(&train, &cfg.gmm, &train.toy_arch()) {
        Ok(o) => o,
        Err(e @ Error::Training { .. }) => {
            summary.status = RunStatus::Diverged;
            summary.error = Some(e.to_string());
            return Ok(summary);
        }
        Err(e) => return Err(e.into()),
    };
    if let Some(last) = outcome.history.last() {
        summary.final_loss_d = Some(last.loss_d);
        summary.final_loss_g = Some(last.loss_g);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SAMPLE_STREAM);
    let samples = generate_samples(&mut outcome.generator, cfg.samples, &mut rng)?;
    if let Some(dir) = out {
        write_file(&history_path(dir, kind, seed), &outcome.history.to_csv())?;
        write_file(&samples_path(dir, kind, seed), &samples_csv(&samples))?;
    }
    if samples.data().iter().any(|v| !v.is_finite()) {
        summary.status = RunStatus::Diverged;
        summary.error = Some("generator produced non-finite samples".into());
        return Ok(summary);
    }
    let report = mode_coverage(&samples, &cfg.gmm, THRESHOLD_STD)?;
    summary.covered_modes = Some(report.covered);
    summary.high_quality_ratio = Some(report.high_quality_ratio);
    summary.mode_counts = report.counts;
    Ok(summary)
}

fn per_kind(runs: &[RunSummary], kinds: &[ConvKind], modes: usize) -> Vec<KindSummary> {
    kinds
        .iter()
        .map(|&kind| {
            let mine: Vec<&RunSummary> = runs.iter().filter(|r| r.kind == kind).collect();
            let covered = |r: &&RunSummary| r.covered_modes.unwrap_or(0);
            let full = |r: &&&RunSummary| r.covered_modes == Some(modes);
            KindSummary {
                kind,
                runs: mine.len(),
                mean_covered_modes: mine.iter().map(covered).sum::<usize>() as f64
                    / mine.len().max(1) as f64,
                full_coverage_runs: mine.iter().filter(full).count(),
                high_quality_runs: mine
                    .iter()
                    .filter(full)
                    .filter(|r| r.high_quality_ratio.is_some_and(|q| q >= 0.8))
                    .count(),
            }
        })
        .collect()
}

/// Trains every (kind, seed) pair of `cfg` on up to `threads` workers and
/// writes per-run artifacts plus the summary into the output directory.
pub fn run_toy(cfg: &RunConfig, threads: usize) -> Result<ToySummary> {
    let out = cfg.out_dir()?;
    let kinds = cfg.kinds();
    let jobs: Vec<(ConvKind, u64)> = kinds
        .iter()
        .flat_map(|&k| cfg.seeds.iter().map(move |&s| (k, s)))
        .collect();
    let runs = parallel_map(&jobs, threads, |&(k, s)| run_one(cfg, k, s, out))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(ToySummary {
        train: cfg.train.clone(),
        gmm: cfg.gmm,
        samples: cfg.samples,
        kinds: per_kind(&runs, &kinds, cfg.gmm.modes),
        runs,
    })
}

pub fn cmd(args: &CommonArgs) -> Result<Outcome> {
    let mut cfg = RunConfig::resolve(args, RunConfig::default())?;
    if cfg.out.is_none() {
        cfg.out = Some(PathBuf::from(DEFAULT_OUT));
    }
    let threads = worker_threads()?;
    let summary = run_toy(&cfg, threads)?;
    let meta = Meta::new("toy-gan", threads);
    let json = json_report(&meta, &summary);
    if let Some(dir) = cfg.out_dir()? {
        write_file(&dir.join(SUMMARY_FILE), &json)?;
    }
    let stdout = match cfg.format {
        Format::Json => json,
        Format::Csv => csv_table(
            &summary
                .runs
                .iter()
                .map(|r| Row {
                    kind: r.kind,
                    seed: r.seed,
                    iterations: r.iterations,
                    status: r.status,
                    covered_modes: r.covered_modes,
                    high_quality_ratio: r.high_quality_ratio,
                    final_loss_d: r.final_loss_d,
                    final_loss_g: r.final_loss_g,
                    error: r.error.as_deref(),
                })
                .collect::<Vec<_>>(),
        ),
    };
    let failures = summary
        .runs
        .iter()
        .filter(|r| r.status == RunStatus::Diverged)
        .map(|r| {
            format!(
                "{} seed {}: {}",
                r.kind,
                r.seed,
                r.error.as_deref().unwrap_or("diverged")
            )
        })
        .collect();
    Ok(Outcome { stdout, failures })
}
