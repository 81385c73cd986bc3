use rand::Rng;

use super::init::{self, Init};
use super::params::{Forward, ParamId, ParamStore};
use crate::error::{dim_err, Result};
use crate::tensor::Var;

/// Channel reduction ratio of the gate's bottleneck.
pub const GATE_REDUCTION: usize = 8;

/// Channel attention applied after a convolution:
/// `Y = X * sigmoid(relu(gap(X) W1) W2)` per sample and channel.
#[derive(Clone, Debug)]
pub struct ChannelGate {
    pub w1: ParamId,
    pub w2: ParamId,
    pub channels: usize,
}

impl ChannelGate {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        init: Init,
        rng: &mut R,
    ) -> Result<Self> {
        if channels == 0 || channels % GATE_REDUCTION != 0 {
            return dim_err(
                "channel_gate",
                format!("{channels} channels not divisible by {GATE_REDUCTION}"),
            );
        }
        let hidden = channels / GATE_REDUCTION;
        let w1 = store.add(
            format!("{name}.w1"),
            init::make(init, &[channels, hidden], rng),
        );
        let w2 = store.add(
            format!("{name}.w2"),
            init::make(init, &[hidden, channels], rng),
        );
        Ok(ChannelGate { w1, w2, channels })
    }

    pub fn forward(&self, fw: &mut Forward<'_>, x: Var) -> Result<Var> {
        let pooled = fw.tape.gap(x)?;
        let w1 = fw.param(self.w1);
        let w2 = fw.param(self.w2);
        let h = fw.tape.matmul(pooled, w1)?;
        let h = fw.tape.relu(h);
        let a = fw.tape.matmul(h, w2)?;
        let gates = fw.tape.sigmoid(a);
        fw.tape.mul_sample_channel(x, gates)
    }
}
