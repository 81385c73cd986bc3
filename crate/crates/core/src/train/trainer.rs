use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::gmm::{sample_gmm, GmmSpec};
use super::history::{HistoryRecord, TrainHistory};
use super::loss::{loss_d, loss_g, LossKind};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::metrics::mode_coverage;
use crate::nn::{Bindings, ConvKind, Mode};
use crate::tensor::{Gradients, Tape, Tensor};
use crate::zoo::{build_model, ArchSpec, Model, Resolution, Role};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub latent_dim: usize,
    pub batch_g: usize,
    pub batch_d: usize,
    pub n_dis: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    /// Generator iterations.
    pub iterations: usize,
    pub loss: LossKind,
    pub g_kind: ConvKind,
    pub d_kind: ConvKind,
    /// Learning rates fall linearly to zero over this many final iterations.
    pub decay_window: usize,
    /// Snapshot interval in generator iterations.
    pub eval_every: usize,
    /// Generated points per snapshot.
    pub eval_samples: usize,
    /// Spectral normalization on the toy discriminator.
    pub d_spectral_norm: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            latent_dim: 32,
            batch_g: 256,
            batch_d: 256,
            n_dis: 1,
            lr_g: 2e-4,
            lr_d: 2e-4,
            iterations: 15_000,
            loss: LossKind::Hinge,
            g_kind: ConvKind::GConv,
            d_kind: ConvKind::Conv,
            decay_window: 5_000,
            eval_every: 500,
            eval_samples: 2_000,
            d_spectral_norm: true,
        }
    }
}

impl TrainConfig {
    /// Two time-scale update rule: `lr_D = 4 lr_G = 4e-4`, one critic step.
    pub fn ttur() -> Self {
        TrainConfig {
            lr_g: 1e-4,
            lr_d: 4e-4,
            n_dis: 1,
            ..Self::default()
        }
    }

    /// Image regime: `lr = 2e-4`, five critic steps, generator batch twice the
    /// discriminator batch.
    pub fn cifar() -> Self {
        TrainConfig {
            lr_g: 2e-4,
            lr_d: 2e-4,
            n_dis: 5,
            batch_g: 128,
            batch_d: 64,
            iterations: 50_000,
            decay_window: 50_000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("{msg}: {self:?}")));
        if self.n_dis == 0 {
            return bad("n_dis must be at least 1");
        }
        if !(self.lr_g >= 0.0 && self.lr_d >= 0.0 && self.lr_g.is_finite() && self.lr_d.is_finite())
        {
            return bad("learning rates must be finite and non-negative");
        }
        if self.batch_g == 0 || self.batch_d == 0 || self.latent_dim == 0 {
            return bad("batch sizes and latent dim must be positive");
        }
        if self.eval_every == 0 || self.eval_samples == 0 {
            return bad("eval interval and sample count must be positive");
        }
        if self.d_kind == ConvKind::GConv {
            return bad("the discriminator uses standard layers only");
        }
        Ok(())
    }

    /// Learning-rate multiplier at generator iteration `it` (1-based).
    pub fn decay_factor(&self, it: usize) -> f64 {
        if self.decay_window == 0 {
            return 1.0;
        }
        let remaining = self.iterations.saturating_sub(it - 1);
        (remaining as f64 / self.decay_window as f64).min(1.0)
    }

    /// Toy generator and discriminator descriptions for this run.
    pub fn toy_arch(&self) -> (ArchSpec, ArchSpec) {
        let mut g = ArchSpec::new(Resolution::Toy, Role::Generator, self.g_kind);
        g.latent_dim = self.latent_dim;
        g.seed = self.seed;
        let mut d = ArchSpec::new(Resolution::Toy, Role::Discriminator, self.d_kind);
        d.spectral_norm = self.d_spectral_norm;
        d.seed = self.seed.wrapping_add(1);
        (g, d)
    }
}

pub struct TrainOutcome {
    pub history: TrainHistory,
    pub generator: Model,
    pub discriminator: Model,
}

impl TrainOutcome {
    /// Final parameters of the generator and the discriminator.
    pub fn checkpoints(&self) -> (Checkpoint, Checkpoint) {
        (
            Checkpoint::capture(&self.generator.params),
            Checkpoint::capture(&self.discriminator.params),
        )
    }
}

/// Gradients for every trainable entry of `model`, in store order.
fn collect_grads(model: &Model, bindings: &Bindings, grads: &Gradients) -> Vec<Option<Tensor>> {
    model
        .params
        .trainable_ids()
        .map(|id| bindings.var(id).and_then(|v| grads.get(v)).cloned())
        .collect()
}

fn check_loss(value: f64, iteration: usize, which: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Training {
            iteration,
            detail: format!("{which} loss diverged to {value}"),
        })
    }
}

/// `count` generator outputs, evaluated in chunks.
pub fn generate_samples(
    generator: &mut Model,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor> {
    const CHUNK: usize = 2_500;
    let d_z = generator.spec.latent_dim;
    let mut data = Vec::new();
    let mut shape = Vec::new();
    let mut left = count;
    while left > 0 {
        let b = left.min(CHUNK);
        let z = Tensor::randn(vec![b, d_z], rng);
        let y = generator.infer(&z, Mode::Eval)?;
        shape = y.shape().to_vec();
        data.extend_from_slice(y.data());
        left -= b;
    }
    shape[0] = count;
    Tensor::new(shape, data)
}

/// Alternating GAN training on Gaussian-mixture data with the toy networks
/// `arch = (generator, discriminator)`.
pub fn train_gan(
    config: &TrainConfig,
    data: &GmmSpec,
    arch: &(ArchSpec, ArchSpec),
) -> Result<TrainOutcome> {
    config.validate()?;
    data.validate()?;
    let (g_spec, d_spec) = arch;
    if g_spec.role != Role::Generator || d_spec.role != Role::Discriminator {
        return Err(Error::Config(
            "arch must be (generator, discriminator)".into(),
        ));
    }
    if g_spec.data_dim != 2 || d_spec.data_dim != 2 {
        return Err(Error::Config("mixture data is two-dimensional".into()));
    }
    let mut gen = build_model(g_spec)?;
    let mut dis = build_model(d_spec)?;
    let d_z = g_spec.latent_dim;
    let mut opt_g = AdamState::for_store(AdamConfig::new(config.lr_g), &gen.params);
    let mut opt_d = AdamState::for_store(AdamConfig::new(config.lr_d), &dis.params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut eval_rng = ChaCha8Rng::seed_from_u64(config.seed);
    eval_rng.set_stream(2);
    let mut history = TrainHistory::default();

    for it in 1..=config.iterations {
        let decay = config.decay_factor(it);
        let mut ld = 0.0;
        for _ in 0..config.n_dis {
            let b = config.batch_d;
            let real = sample_gmm(data, b, &mut rng)?;
            let z = Tensor::randn(vec![b, d_z], &mut rng);
            let mut tape = Tape::new();
            let zv = tape.constant(z);
            let (fake, _) = gen.run(&mut tape, zv, Mode::Train, true)?;
            let rv = tape.constant(real);
            let both = tape.concat_rows(&[rv, fake])?;
            let (scores, bind) = dis.run(&mut tape, both, Mode::Train, false)?;
            let sr = tape.slice_rows(scores, 0, b)?;
            let sf = tape.slice_rows(scores, b, b)?;
            let loss = loss_d(&mut tape, sr, sf, config.loss)?;
            ld = check_loss(tape.value(loss).item()?, it, "discriminator")?;
            let grads = tape.backward(loss)?;
            let g = collect_grads(&dis, &bind, &grads);
            opt_d
                .step_store(&mut dis.params, &g, config.lr_d * decay)
                .map_err(|e| at(e, it))?;
        }

        let z = Tensor::randn(vec![config.batch_g, d_z], &mut rng);
        let mut tape = Tape::new();
        let zv = tape.constant(z);
        let (fake, bind) = gen.run(&mut tape, zv, Mode::Train, false)?;
        // power iteration advances once per discriminator update
        let (scores, _) = dis.run(&mut tape, fake, Mode::Eval, true)?;
        let loss = loss_g(&mut tape, scores, config.loss)?;
        let lg = check_loss(tape.value(loss).item()?, it, "generator")?;
        let grads = tape.backward(loss)?;
        let g = collect_grads(&gen, &bind, &grads);
        opt_g
            .step_store(&mut gen.params, &g, config.lr_g * decay)
            .map_err(|e| at(e, it))?;

        if it % config.eval_every == 0 || it == config.iterations {
            let samples = generate_samples(&mut gen, config.eval_samples, &mut eval_rng)?;
            let report = mode_coverage(&samples, data, 3.0)?;
            history.records.push(HistoryRecord {
                iter: it,
                loss_d: ld,
                loss_g: lg,
                mode_coverage: report.covered,
                high_quality_ratio: report.high_quality_ratio,
            });
        }
    }
    Ok(TrainOutcome {
        history,
        generator: gen,
        discriminator: dis,
    })
}

fn at(e: Error, iteration: usize) -> Error {
    match e {
        Error::Training { detail, .. } => Error::Training { iteration, detail },
        other => other,
    }
}
