use rand::Rng;

use super::{ArchSpec, Resample, Trace};
use crate::error::Result;
use crate::nn::init::Init;
use crate::nn::{
    BatchNorm, Conv2d, ConvUnit, Dense, Forward, ParamId, ParamStore, ResBlockD, ResBlockG,
};
use crate::tensor::Var;

/// `FC -> 4x4xC -> residual up-blocks -> BN -> ReLU -> 3x3 conv -> tanh`.
#[derive(Clone, Debug)]
pub struct ImageGenerator {
    fc: Dense,
    base: usize,
    blocks: Vec<ResBlockG>,
    bn: BatchNorm,
    out: Conv2d,
}

pub(super) const BASE_SIZE: usize = 4;

impl ImageGenerator {
    pub(super) fn new<R: Rng + ?Sized>(
        spec: &ArchSpec,
        store: &mut ParamStore,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let base = spec.base_channels;
        let fc = Dense::new(
            store,
            "fc",
            spec.latent_dim,
            BASE_SIZE * BASE_SIZE * base,
            true,
            init,
            rng,
        );
        let mut width = base;
        let mut blocks = Vec::new();
        for (i, stage) in spec.stages.iter().enumerate() {
            blocks.push(ResBlockG::new(
                store,
                &format!("block{i}"),
                width,
                stage.channels,
                spec.latent_dim,
                stage.resample == Resample::Up,
                spec.conv_kind,
                init,
                rng,
            ));
            width = stage.channels;
        }
        let bn = BatchNorm::new(store, "bn", width);
        let out = Conv2d::new(store, "out", 3, width, spec.data_dim, true, init, rng);
        ImageGenerator {
            fc,
            base,
            blocks,
            bn,
            out,
        }
    }

    pub(super) fn forward(&self, fw: &mut Forward<'_>, z: Var, trace: &mut Trace) -> Result<Var> {
        let b = fw.tape.shape(z).first().copied().unwrap_or(0);
        let h = self.fc.forward(fw, z)?;
        let mut h = fw.tape.reshape(h, &[b, BASE_SIZE, BASE_SIZE, self.base])?;
        trace.record(fw.tape, "fc", h);
        for (i, block) in self.blocks.iter().enumerate() {
            h = block.forward(fw, h, z)?;
            trace.record(fw.tape, format!("block{i}"), h);
        }
        h = self.bn.forward(fw, h)?;
        h = fw.tape.relu(h);
        h = self.out.forward(fw, h)?;
        let y = fw.tape.tanh(h);
        trace.record(fw.tape, "out", y);
        Ok(y)
    }

    pub(super) fn counted(&self) -> Vec<(ParamId, bool)> {
        let mut out = Vec::new();
        for block in &self.blocks {
            for unit in [&block.conv1, &block.conv2] {
                match unit {
                    ConvUnit::Conv(c) => out.push((c.k, false)),
                    ConvUnit::GConv(g) => out.extend([(g.k, false), (g.ws, true), (g.wl, true)]),
                }
            }
        }
        out.push((self.out.k, false));
        out
    }
}

/// `residual down-blocks -> ReLU -> global sum -> dense 1`.
#[derive(Clone, Debug)]
pub struct ImageDiscriminator {
    blocks: Vec<ResBlockD>,
    fc: Dense,
}

impl ImageDiscriminator {
    pub(super) fn new<R: Rng + ?Sized>(
        spec: &ArchSpec,
        store: &mut ParamStore,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let mut width = spec.data_dim;
        let mut blocks = Vec::new();
        for (i, stage) in spec.stages.iter().enumerate() {
            blocks.push(ResBlockD::new(
                store,
                &format!("block{i}"),
                width,
                stage.channels,
                stage.resample == Resample::Down,
                i == 0,
                spec.spectral_norm,
                init,
                rng,
            ));
            width = stage.channels;
        }
        let fc = Dense::new(store, "fc", width, 1, true, init, rng);
        let fc = if spec.spectral_norm {
            fc.with_spectral_norm(store, "fc", rng)
        } else {
            fc
        };
        ImageDiscriminator { blocks, fc }
    }

    pub(super) fn forward(&self, fw: &mut Forward<'_>, x: Var, trace: &mut Trace) -> Result<Var> {
        let mut h = x;
        for (i, block) in self.blocks.iter().enumerate() {
            h = block.forward(fw, h)?;
            trace.record(fw.tape, format!("block{i}"), h);
        }
        h = fw.tape.relu(h);
        let shape = fw.tape.shape(h).to_vec();
        // global sum pooling = spatial mean scaled by h*w
        let pooled = fw.tape.gap(h)?;
        let pooled = fw.tape.scale(pooled, (shape[1] * shape[2]) as f64);
        trace.record(fw.tape, "sum", pooled);
        let y = self.fc.forward(fw, pooled)?;
        trace.record(fw.tape, "fc", y);
        Ok(y)
    }

    pub(super) fn counted(&self) -> Vec<(ParamId, bool)> {
        self.blocks
            .iter()
            .flat_map(|b| [(b.conv1.k, false), (b.conv2.k, false)])
            .collect()
    }
}
