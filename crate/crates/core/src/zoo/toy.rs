use rand::Rng;

use super::{ArchSpec, Trace};
use crate::error::Result;
use crate::nn::init::Init;
use crate::nn::{ConvKind, Dense, Forward, GDense, ParamId, ParamStore};
use crate::tensor::Var;

#[derive(Clone, Debug)]
enum Hidden {
    Dense(Dense),
    GDense(GDense),
}

/// Fully-connected generator `z -> hidden (ReLU) ... -> linear output`. The
/// generative variant feeds `z` to every hidden layer.
#[derive(Clone, Debug)]
pub struct ToyGenerator {
    hidden: Vec<Hidden>,
    out: Dense,
}

impl ToyGenerator {
    pub(super) fn new<R: Rng + ?Sized>(
        spec: &ArchSpec,
        store: &mut ParamStore,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let mut width = spec.latent_dim;
        let mut hidden = Vec::new();
        for (i, stage) in spec.stages.iter().enumerate() {
            let name = format!("fc{i}");
            hidden.push(match spec.conv_kind {
                ConvKind::Conv => Hidden::Dense(Dense::new(
                    store,
                    &name,
                    width,
                    stage.channels,
                    true,
                    init,
                    rng,
                )),
                ConvKind::GConv => Hidden::GDense(GDense::new(
                    store,
                    &name,
                    width,
                    stage.channels,
                    spec.latent_dim,
                    true,
                    init,
                    rng,
                )),
            });
            width = stage.channels;
        }
        let out = Dense::new(store, "out", width, spec.data_dim, true, init, rng);
        ToyGenerator { hidden, out }
    }

    pub(super) fn forward(&self, fw: &mut Forward<'_>, z: Var, trace: &mut Trace) -> Result<Var> {
        let mut h = z;
        for (i, layer) in self.hidden.iter().enumerate() {
            h = match layer {
                Hidden::Dense(d) => d.forward(fw, h)?,
                Hidden::GDense(g) => g.forward(fw, h, z)?,
            };
            h = fw.tape.relu(h);
            trace.record(fw.tape, format!("fc{i}"), h);
        }
        let y = self.out.forward(fw, h)?;
        trace.record(fw.tape, "out", y);
        Ok(y)
    }

    pub(super) fn counted(&self) -> Vec<(ParamId, bool)> {
        let mut out = Vec::new();
        for layer in &self.hidden {
            match layer {
                Hidden::Dense(d) => out.push((d.w, false)),
                Hidden::GDense(g) => {
                    let g = &g.inner;
                    out.extend([(g.k, false), (g.ws, true), (g.wl, true)]);
                }
            }
        }
        out.push((self.out.w, false));
        out
    }
}

/// Fully-connected critic `x -> hidden (ReLU) ... -> 1`.
#[derive(Clone, Debug)]
pub struct ToyDiscriminator {
    hidden: Vec<Dense>,
    out: Dense,
}

impl ToyDiscriminator {
    pub(super) fn new<R: Rng + ?Sized>(
        spec: &ArchSpec,
        store: &mut ParamStore,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let mut layer = |store: &mut ParamStore, name: &str, i: usize, o: usize| {
            let d = Dense::new(store, name, i, o, true, init, rng);
            if spec.spectral_norm {
                d.with_spectral_norm(store, name, rng)
            } else {
                d
            }
        };
        let mut width = spec.data_dim;
        let mut hidden = Vec::new();
        for (i, stage) in spec.stages.iter().enumerate() {
            hidden.push(layer(store, &format!("fc{i}"), width, stage.channels));
            width = stage.channels;
        }
        let out = layer(store, "out", width, 1);
        ToyDiscriminator { hidden, out }
    }

    pub(super) fn forward(&self, fw: &mut Forward<'_>, x: Var, trace: &mut Trace) -> Result<Var> {
        let mut h = x;
        for (i, d) in self.hidden.iter().enumerate() {
            h = d.forward(fw, h)?;
            h = fw.tape.relu(h);
            trace.record(fw.tape, format!("fc{i}"), h);
        }
        let y = self.out.forward(fw, h)?;
        trace.record(fw.tape, "out", y);
        Ok(y)
    }

    pub(super) fn counted(&self) -> Vec<(ParamId, bool)> {
        self.hidden
            .iter()
            .chain([&self.out])
            .map(|d| (d.w, false))
            .collect()
    }
}
