use gconv_core::nn::GConvParams;
use gconv_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::args::CheckArgs;
use crate::config::RunConfig;
use crate::error::{LabError, Result};
use crate::output::{csv_table, json_report, write_file, Format, Meta};
use crate::threads::{parallel_map, worker_threads};
use crate::Outcome;

pub const DEFAULT_SEEDS: [u64; 1] = [7];
pub const DEFAULT_CASES: usize = 120;
pub const THRESHOLD: f64 = 1e-9;
pub const BATCHES: [usize; 3] = [1, 2, 4];
/// Every this many cases uses zero combination weights.
pub const ZERO_WL_EVERY: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EquivalenceCase {
    pub seed: u64,
    pub case: usize,
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub inputs: usize,
    pub outputs: usize,
    pub kernel: usize,
    pub latent_dim: usize,
    pub zero_wl: bool,
    /// `max |fused - direct| / max |direct|`.
    pub max_rel_deviation: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct EquivalenceReport {
    pub threshold: f64,
    pub max_rel_deviation: f64,
    pub cases: Vec<EquivalenceCase>,
}

impl EquivalenceReport {
    pub fn failures(&self) -> Vec<String> {
        self.cases
            .iter()
            .filter(|c| !c.passed)
            .map(|c| {
                format!(
                    "seed {} case {} (b={} {}x{} m={} n={} k={} d_z={} zero_wl={}): deviation {:e}",
                    c.seed,
                    c.case,
                    c.batch,
                    c.height,
                    c.width,
                    c.inputs,
                    c.outputs,
                    c.kernel,
                    c.latent_dim,
                    c.zero_wl,
                    c.max_rel_deviation
                )
            })
            .collect()
    }
}

pub fn relative_deviation(a: &Tensor, b: &Tensor) -> Result<f64> {
    let scale = b.max_abs();
    let diff = a.max_abs_diff(b)?;
    Ok(if scale > 0.0 { diff / scale } else { diff })
}

/// Compares both evaluation paths on case `case` of `seed`.
pub fn check_case(seed: u64, case: usize) -> Result<EquivalenceCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(case as u64);
    let batch = BATCHES[case % BATCHES.len()];
    let height = rng.random_range(3..=8);
    let width = rng.random_range(3..=8);
    let m = rng.random_range(2..=16);
    let n = rng.random_range(2..=16);
    let kernel = if rng.random_bool(0.5) { 3 } else { 1 };
    let d_z = rng.random_range(1..=8);
    let zero_wl = case % ZERO_WL_EVERY == ZERO_WL_EVERY - 1;
    let mut p = GConvParams::random(kernel, kernel, m, n, d_z, &mut rng);
    if zero_wl {
        p.wl = Tensor::zeros(vec![n, n]);
    }
    let x = Tensor::randn(vec![batch, height, width, m], &mut rng);
    let z = Tensor::randn(vec![batch, d_z], &mut rng);
    let direct = p.forward_direct(&x, &z)?;
    let fused = p.forward_fused(&x, &z)?;
    let dev = relative_deviation(&fused, &direct)?;
    let passed = if zero_wl { dev == 0.0 } else { dev < THRESHOLD };
    Ok(EquivalenceCase {
        seed,
        case,
        batch,
        height,
        width,
        inputs: m,
        outputs: n,
        kernel,
        latent_dim: d_z,
        zero_wl,
        max_rel_deviation: dev,
        passed,
    })
}

pub fn run_equivalence(seeds: &[u64], cases: usize, threads: usize) -> Result<EquivalenceReport> {
    let jobs: Vec<(u64, usize)> = seeds
        .iter()
        .flat_map(|&s| (0..cases).map(move |c| (s, c)))
        .collect();
    let cases = parallel_map(&jobs, threads, |&(s, c)| check_case(s, c))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(EquivalenceReport {
        threshold: THRESHOLD,
        max_rel_deviation: cases
            .iter()
            .map(|c| c.max_rel_deviation)
            .fold(0.0, f64::max),
        cases,
    })
}

pub fn cmd(args: &CheckArgs) -> Result<Outcome> {
    let cfg = RunConfig::resolve(&args.common, RunConfig::with_seeds(&DEFAULT_SEEDS))?;
    let cases = args.cases.or(cfg.cases).unwrap_or(DEFAULT_CASES);
    if cases == 0 {
        return Err(LabError::Config("cases must be positive".into()));
    }
    let threads = worker_threads()?;
    let report = run_equivalence(&cfg.seeds, cases, threads)?;
    let json = json_report(&Meta::new("equivalence", threads), &report);
    let stdout = match cfg.format {
        Format::Json => json.clone(),
        Format::Csv => csv_table(&report.cases),
    };
    if let Some(dir) = cfg.out_dir()? {
        write_file(&dir.join("equivalence.json"), &json)?;
        write_file(&dir.join("equivalence.csv"), &csv_table(&report.cases))?;
    }
    Ok(Outcome {
        stdout,
        failures: report.failures(),
    })
}
