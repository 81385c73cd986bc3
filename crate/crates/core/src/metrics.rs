//! Fréchet distance between Gaussian summaries, Inception score over a
//! class-probability matrix, and mode coverage on mixture data.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;
use crate::train::GmmSpec;

/// Eigenvalues below `-NEG_TOL` make a covariance invalid; smaller negative
/// values are roundoff and clamp to zero.
pub const NEG_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianStats {
    pub mu: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianStats {
    pub fn new(mu: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mu.len();
        if cov.nrows() != d || cov.ncols() != d {
            return dim_err(
                "gaussian_stats",
                format!(
                    "mean has {d} entries, covariance is {}x{}",
                    cov.nrows(),
                    cov.ncols()
                ),
            );
        }
        let cov = (&cov + cov.transpose()) * 0.5;
        Ok(GaussianStats { mu, cov })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Sample mean and unbiased covariance of the rows of `samples`.
pub fn fit_gaussian_stats(samples: &Tensor) -> Result<GaussianStats> {
    let (n, d) = match samples.shape() {
        [n, d] => (*n, *d),
        s => {
            return dim_err(
                "fit_gaussian_stats",
                format!("samples must be N x d, got {s:?}"),
            )
        }
    };
    if n < 2 {
        return Err(Error::Contract(format!(
            "fit_gaussian_stats needs N >= 2, got {n}"
        )));
    }
    let x = DMatrix::from_row_slice(n, d, samples.data());
    let mu = x.row_mean().transpose();
    let mut centered = x;
    for mut row in centered.row_iter_mut() {
        row -= mu.transpose();
    }
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    GaussianStats::new(mu, cov)
}

/// Symmetric eigendecomposition with negative roundoff clamped to zero.
fn psd_eigen(c: &DMatrix<f64>, what: &str) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let mut eig = SymmetricEigen::new(c.clone());
    for v in eig.eigenvalues.iter_mut() {
        if *v < -NEG_TOL {
            return Err(Error::Contract(format!(
                "{what} is not positive semi-definite (eigenvalue {v:e})"
            )));
        }
        *v = v.max(0.0);
    }
    Ok(eig)
}

/// `|mu_p - mu_q|^2 + tr(C_p + C_q - 2 (C_p C_q)^{1/2})`, with the trace of
/// the product root taken from the symmetric matrix `C_q^{1/2} C_p C_q^{1/2}`.
pub fn frechet_distance(p: &GaussianStats, q: &GaussianStats) -> Result<f64> {
    if p.dim() != q.dim() {
        return dim_err(
            "frechet_distance",
            format!("dimensions {} vs {}", p.dim(), q.dim()),
        );
    }
    psd_eigen(&p.cov, "first covariance")?;
    let eq = psd_eigen(&q.cov, "second covariance")?;
    let sq = &eq.eigenvectors
        * DMatrix::from_diagonal(&eq.eigenvalues.map(f64::sqrt))
        * eq.eigenvectors.transpose();
    let mid = &sq * &p.cov * &sq;
    let mid = (&mid + mid.transpose()) * 0.5;
    let root_trace: f64 = psd_eigen(&mid, "covariance product")?
        .eigenvalues
        .iter()
        .map(|v| v.sqrt())
        .sum();
    let diff = &p.mu - &q.mu;
    let f = diff.norm_squared() + p.cov.trace() + q.cov.trace() - 2.0 * root_trace;
    Ok(f.max(0.0))
}

/// `N x L` matrix of per-sample class distributions.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ProbMatrix {
    pub const ROW_TOL: f64 = 1e-9;

    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Contract(
                "probability matrix must be non-empty".into(),
            ));
        }
        if data.len() != rows * cols {
            return dim_err(
                "prob_matrix",
                format!("{} values for {rows}x{cols}", data.len()),
            );
        }
        for (i, row) in data.chunks(cols).enumerate() {
            if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
                return Err(Error::Contract(format!(
                    "row {i} has a negative or non-finite entry"
                )));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > Self::ROW_TOL {
                return Err(Error::Contract(format!("row {i} sums to {s}")));
            }
        }
        Ok(ProbMatrix { rows, cols, data })
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match t.shape() {
            [n, l] => Self::new(*n, *l, t.data().to_vec()),
            s => dim_err("prob_matrix", format!("expected N x L, got {s:?}")),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn marginal(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.cols];
        for row in self.data.chunks(self.cols) {
            for (a, p) in m.iter_mut().zip(row) {
                *a += p;
            }
        }
        m.iter_mut().for_each(|a| *a /= self.rows as f64);
        m
    }
}

/// `exp(mean_i KL(p(l|x_i) || p(l)))` over a single split.
pub fn inception_score(p: &ProbMatrix) -> f64 {
    let marginal = p.marginal();
    let mut total = 0.0;
    for i in 0..p.rows() {
        total += p
            .row(i)
            .iter()
            .zip(&marginal)
            .filter(|(&pi, _)| pi > 0.0)
            .map(|(&pi, &mi)| pi * (pi / mi).ln())
            .sum::<f64>();
    }
    (total / p.rows() as f64).exp()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeReport {
    pub covered: usize,
    /// Samples within the threshold of each center.
    pub counts: Vec<usize>,
    pub high_quality_ratio: f64,
}

/// Assigns each sample to its nearest center. A mode is covered when at
/// least `max(1, N / (10 * modes))` samples land within
/// `threshold_multiplier * std` of it.
pub fn mode_coverage(
    samples: &Tensor,
    spec: &GmmSpec,
    threshold_multiplier: f64,
) -> Result<ModeReport> {
    spec.validate()?;
    let n = match samples.shape() {
        [n, 2] => *n,
        s => return dim_err("mode_coverage", format!("samples must be N x 2, got {s:?}")),
    };
    if n == 0 {
        return Err(Error::Contract(
            "mode_coverage needs at least one sample".into(),
        ));
    }
    let centers = spec.centers();
    let radius = threshold_multiplier * spec.std;
    let mut counts = vec![0usize; centers.len()];
    let mut close = 0usize;
    for pt in samples.data().chunks(2) {
        let (best, d2) = centers
            .iter()
            .enumerate()
            .map(|(k, c)| (k, (pt[0] - c[0]).powi(2) + (pt[1] - c[1]).powi(2)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("at least one center");
        if d2.sqrt() <= radius {
            counts[best] += 1;
            close += 1;
        }
    }
    let min_count = (n as f64 / (10 * centers.len()) as f64).max(1.0);
    let covered = counts.iter().filter(|&&c| c as f64 >= min_count).count();
    Ok(ModeReport {
        covered,
        counts,
        high_quality_ratio: close as f64 / n as f64,
    })
}
