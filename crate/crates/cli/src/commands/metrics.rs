use std::path::Path;

use gconv_core::metrics::{fit_gaussian_stats, frechet_distance, inception_score, ProbMatrix};
use gconv_core::Tensor;
use serde::Serialize;

use crate::args::MetricsArgs;
use crate::config::RunConfig;
use crate::error::{LabError, Result};
use crate::output::{csv_table, json_report, read_matrix, write_file, Format, Meta};
use crate::Outcome;

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MetricsReport {
    pub frechet_distance: Option<f64>,
    pub real_samples: Option<usize>,
    pub fake_samples: Option<usize>,
    pub dim: Option<usize>,
    pub inception_score: Option<f64>,
    pub prob_rows: Option<usize>,
    pub classes: Option<usize>,
}

fn load(path: &Path) -> Result<Tensor> {
    let (rows, cols, data) = read_matrix(path)?;
    Ok(Tensor::new(vec![rows, cols], data)?)
}

fn input_err(path: &Path, e: gconv_core::Error) -> LabError {
    LabError::Input {
        path: path.to_path_buf(),
        detail: e.to_string(),
    }
}

pub fn compute(
    real: Option<&Path>,
    fake: Option<&Path>,
    probs: Option<&Path>,
) -> Result<MetricsReport> {
    let mut report = MetricsReport::default();
    if let (Some(rp), Some(fp)) = (real, fake) {
        let r = load(rp)?;
        let f = load(fp)?;
        if r.shape()[1] != f.shape()[1] {
            return Err(LabError::Input {
                path: fp.to_path_buf(),
                detail: format!("{} columns, reference has {}", f.shape()[1], r.shape()[1]),
            });
        }
        let sr = fit_gaussian_stats(&r).map_err(|e| input_err(rp, e))?;
        let sf = fit_gaussian_stats(&f).map_err(|e| input_err(fp, e))?;
        report.frechet_distance = Some(frechet_distance(&sr, &sf)?);
        report.real_samples = Some(r.shape()[0]);
        report.fake_samples = Some(f.shape()[0]);
        report.dim = Some(r.shape()[1]);
    }
    if let Some(pp) = probs {
        let (rows, cols, data) = read_matrix(pp)?;
        let p = ProbMatrix::new(rows, cols, data).map_err(|e| input_err(pp, e))?;
        report.inception_score = Some(inception_score(&p));
        report.prob_rows = Some(rows);
        report.classes = Some(cols);
    }
    Ok(report)
}

pub fn cmd(args: &MetricsArgs) -> Result<Outcome> {
    let cfg = RunConfig::resolve(&args.common, RunConfig::default())?;
    if args.real.is_none() && args.probs.is_none() {
        return Err(LabError::Config(
            "nothing to compute: pass --real and --fake, or --probs".into(),
        ));
    }
    let report = compute(
        args.real.as_deref(),
        args.fake.as_deref(),
        args.probs.as_deref(),
    )?;
    let json = json_report(&Meta::new("metrics", 1), &report);
    let stdout = match cfg.format {
        Format::Json => json.clone(),
        Format::Csv => csv_table(std::slice::from_ref(&report)),
    };
    if let Some(dir) = cfg.out_dir()? {
        write_file(&dir.join("metrics.json"), &json)?;
    }
    Ok(Outcome {
        stdout,
        failures: Vec::new(),
    })
}
