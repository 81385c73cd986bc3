use rand::Rng;

use super::init::{self, Init};
use super::params::{Forward, ParamId, ParamStore};
use crate::error::{dim_err, Error, Result};
use crate::tensor::{Tensor, Var};

/// Weight of the previous running statistic in each update.
pub const BN_MOMENTUM: f64 = 0.9;
pub const BN_EPS: f64 = 1e-5;

#[derive(Clone, Debug)]
struct RunningStats {
    mean: ParamId,
    var: ParamId,
}

impl RunningStats {
    fn register(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        RunningStats {
            mean: store.add_buffer(
                format!("{name}.running_mean"),
                Tensor::zeros(vec![channels]),
            ),
            var: store.add_buffer(format!("{name}.running_var"), Tensor::ones(vec![channels])),
        }
    }

    /// Batch statistics in training mode (updating the running averages),
    /// running statistics in eval mode.
    fn standardize(&self, fw: &mut Forward<'_>, x: Var, channels: usize) -> Result<Var> {
        let shape = fw.tape.shape(x).to_vec();
        if shape.last() != Some(&channels) {
            return dim_err(
                "batchnorm",
                format!("input {shape:?} does not end in {channels} channels"),
            );
        }
        if fw.is_train() {
            if shape[0] < 2 {
                return Err(Error::Contract(format!(
                    "batch normalization in training mode needs batch size >= 2, got {}",
                    shape[0]
                )));
            }
            let (xhat, mean, var) = fw.tape.standardize(x, BN_EPS)?;
            let rows = (fw.tape.value(x).len() / channels) as f64;
            let unbiased = rows / (rows - 1.0);
            let store = fw.store_mut();
            for (r, m) in store.get_mut(self.mean).data_mut().iter_mut().zip(&mean) {
                *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * m;
            }
            for (r, v) in store.get_mut(self.var).data_mut().iter_mut().zip(&var) {
                *r = BN_MOMENTUM * *r + (1.0 - BN_MOMENTUM) * v * unbiased;
            }
            Ok(xhat)
        } else {
            let neg_mean = fw.store().get(self.mean).scale(-1.0);
            let inv_std = fw.store().get(self.var).map(|v| 1.0 / (v + BN_EPS).sqrt());
            let neg_mean = fw.tape.constant(neg_mean);
            let inv_std = fw.tape.constant(inv_std);
            let centered = fw.tape.add_channel(x, neg_mean)?;
            fw.tape.mul_channel(centered, inv_std)
        }
    }
}

/// Batch normalization over every axis but the last, with a learned
/// per-channel affine. Running variance uses the unbiased batch estimate.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    stats: RunningStats,
    pub channels: usize,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::ones(vec![channels]));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(vec![channels]));
        let stats = RunningStats::register(store, name, channels);
        BatchNorm {
            gamma,
            beta,
            stats,
            channels,
        }
    }

    pub fn running_mean(&self) -> ParamId {
        self.stats.mean
    }

    pub fn running_var(&self) -> ParamId {
        self.stats.var
    }

    pub fn forward(&self, fw: &mut Forward<'_>, x: Var) -> Result<Var> {
        let xhat = self.stats.standardize(fw, x, self.channels)?;
        let gamma = fw.param(self.gamma);
        let beta = fw.param(self.beta);
        let y = fw.tape.mul_channel(xhat, gamma)?;
        fw.tape.add_channel(y, beta)
    }
}

/// Batch normalization whose per-sample gain and shift are linear in the
/// latent vector: `gamma = 1 + z W_gamma`, `beta = z W_beta`.
#[derive(Clone, Debug)]
pub struct LatentBatchNorm {
    pub w_gamma: ParamId,
    pub w_beta: ParamId,
    stats: RunningStats,
    pub channels: usize,
    pub latent_dim: usize,
}

impl LatentBatchNorm {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        latent_dim: usize,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let w_gamma = store.add(
            format!("{name}.w_gamma"),
            init::make(init, &[latent_dim, channels], rng),
        );
        let w_beta = store.add(
            format!("{name}.w_beta"),
            init::make(init, &[latent_dim, channels], rng),
        );
        let stats = RunningStats::register(store, name, channels);
        LatentBatchNorm {
            w_gamma,
            w_beta,
            stats,
            channels,
            latent_dim,
        }
    }

    pub fn running_mean(&self) -> ParamId {
        self.stats.mean
    }

    pub fn running_var(&self) -> ParamId {
        self.stats.var
    }

    pub fn forward(&self, fw: &mut Forward<'_>, x: Var, z: Var) -> Result<Var> {
        let zs = fw.tape.shape(z).to_vec();
        let xs = fw.tape.shape(x).to_vec();
        if zs.len() != 2 || zs[1] != self.latent_dim || xs.first() != zs.first() {
            return dim_err(
                "latent_batchnorm",
                format!(
                    "latent {zs:?} does not match input {xs:?} / d_z = {}",
                    self.latent_dim
                ),
            );
        }
        let xhat = self.stats.standardize(fw, x, self.channels)?;
        let wg = fw.param(self.w_gamma);
        let wb = fw.param(self.w_beta);
        let gain = fw.tape.matmul(z, wg)?;
        let gamma = fw.tape.add_scalar(gain, 1.0);
        let beta = fw.tape.matmul(z, wb)?;
        let y = fw.tape.mul_sample_channel(xhat, gamma)?;
        fw.tape.add_sample_channel(y, beta)
    }
}
