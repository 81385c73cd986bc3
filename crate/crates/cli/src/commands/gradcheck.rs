use gconv_core::gradcheck::suite::{check_layer, CaseReport, LAYERS};
use gconv_core::gradcheck::GradCheck;
use serde::Serialize;

use crate::args::CheckArgs;
use crate::config::RunConfig;
use crate::error::{LabError, Result};
use crate::output::{csv_table, json_report, write_file, Format, Meta};
use crate::threads::{parallel_map, worker_threads};
use crate::Outcome;

pub const DEFAULT_SEEDS: [u64; 1] = [2024];
pub const DEFAULT_CASES: usize = 20;
pub const THRESHOLD: f64 = 1e-5;

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckReport {
    pub threshold: f64,
    pub cases_per_layer: usize,
    pub cases: Vec<CaseReport>,
}

impl GradcheckReport {
    /// Largest error per layer, in [`LAYERS`] order.
    pub fn worst_per_layer(&self) -> Vec<(&'static str, f64)> {
        LAYERS
            .iter()
            .map(|&l| {
                let worst = self
                    .cases
                    .iter()
                    .filter(|c| c.layer == l)
                    .map(|c| c.max_rel_error)
                    .fold(0.0, f64::max);
                (l, worst)
            })
            .collect()
    }

    pub fn failures(&self) -> Vec<String> {
        self.cases
            .iter()
            .filter(|c| !(c.max_rel_error < self.threshold))
            .map(|c| {
                format!(
                    "{} seed {} case {} ({}): relative error {:e} at input {} index {} (analytic {:e}, numeric {:e})",
                    c.layer, c.seed, c.case, c.shape, c.max_rel_error, c.input, c.coordinate, c.analytic, c.numeric
                )
            })
            .collect()
    }
}

/// `cases` checks of every layer for each seed. `analytic_scale` other
/// than 1 corrupts the backward pass.
pub fn run_gradcheck(
    seeds: &[u64],
    cases: usize,
    analytic_scale: f64,
    threads: usize,
) -> Result<GradcheckReport> {
    let opts = GradCheck {
        analytic_scale,
        ..GradCheck::default()
    };
    let jobs: Vec<(u64, &str, usize)> = seeds
        .iter()
        .flat_map(|&s| {
            LAYERS
                .iter()
                .flat_map(move |&l| (0..cases).map(move |c| (s, l, c)))
        })
        .collect();
    let cases_out = parallel_map(&jobs, threads, |&(s, l, c)| check_layer(l, s, c, opts))
        .into_iter()
        .collect::<gconv_core::Result<Vec<_>>>()?;
    Ok(GradcheckReport {
        threshold: THRESHOLD,
        cases_per_layer: cases,
        cases: cases_out,
    })
}

pub fn cmd(args: &CheckArgs) -> Result<Outcome> {
    let cfg = RunConfig::resolve(&args.common, RunConfig::with_seeds(&DEFAULT_SEEDS))?;
    let cases = args.cases.or(cfg.cases).unwrap_or(DEFAULT_CASES);
    if cases == 0 {
        return Err(LabError::Config("cases must be positive".into()));
    }
    let scale = args.inject_fault.unwrap_or(1.0);
    let threads = worker_threads()?;
    let report = run_gradcheck(&cfg.seeds, cases, scale, threads)?;
    let json = json_report(&Meta::new("gradcheck", threads), &report);
    let stdout = match cfg.format {
        Format::Json => json.clone(),
        Format::Csv => csv_table(&report.cases),
    };
    if let Some(dir) = cfg.out_dir()? {
        write_file(&dir.join("gradcheck.json"), &json)?;
        write_file(&dir.join("gradcheck.csv"), &csv_table(&report.cases))?;
    }
    Ok(Outcome {
        stdout,
        failures: report.failures(),
    })
}
