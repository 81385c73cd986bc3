use rand::Rng;
use serde::{Deserialize, Serialize};

use super::conv::Conv2d;
use super::gate::ChannelGate;
use super::gconv::GConv;
use super::init::Init;
use super::norm::LatentBatchNorm;
use super::params::{Forward, ParamStore};
use crate::error::{dim_err, Error, Result};
use crate::tensor::{Activation, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvKind {
    Conv,
    GConv,
}

impl std::fmt::Display for ConvKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ConvKind::Conv => "conv",
            ConvKind::GConv => "gconv",
        })
    }
}

impl std::str::FromStr for ConvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conv" => Ok(ConvKind::Conv),
            "gconv" => Ok(ConvKind::GConv),
            other => Err(Error::Config(format!("unknown layer kind {other:?}"))),
        }
    }
}

/// A convolution slot that is either standard or generative.
#[derive(Clone, Debug)]
pub enum ConvUnit {
    Conv(Conv2d),
    GConv(GConv),
}

impl ConvUnit {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        kind: ConvKind,
        store: &mut ParamStore,
        name: &str,
        kernel: usize,
        inputs: usize,
        outputs: usize,
        latent_dim: usize,
        bias: bool,
        init: Init,
        rng: &mut R,
    ) -> Self {
        match kind {
            ConvKind::Conv => ConvUnit::Conv(Conv2d::new(
                store, name, kernel, inputs, outputs, bias, init, rng,
            )),
            ConvKind::GConv => ConvUnit::GConv(GConv::new(
                store, name, kernel, inputs, outputs, latent_dim, bias, init, rng,
            )),
        }
    }

    pub fn forward(&self, fw: &mut Forward<'_>, x: Var, z: Var) -> Result<Var> {
        match self {
            ConvUnit::Conv(c) => c.forward(fw, x),
            ConvUnit::GConv(g) => g.forward(fw, x, z),
        }
    }

    pub fn kernel_count(&self) -> usize {
        match self {
            ConvUnit::Conv(c) => c.weight_count(),
            ConvUnit::GConv(g) => g.kernel_count(),
        }
    }

    /// Kernel-converting weights; zero for a standard convolution.
    pub fn extra_count(&self) -> usize {
        match self {
            ConvUnit::Conv(_) => 0,
            ConvUnit::GConv(g) => g.extra_count(),
        }
    }

    pub fn shape(&self) -> [usize; 4] {
        match self {
            ConvUnit::Conv(c) => [c.kh, c.kw, c.inputs, c.outputs],
            ConvUnit::GConv(g) => [g.kh, g.kw, g.inputs, g.outputs],
        }
    }
}

/// Generator residual block:
/// `LBN -> act -> (up) -> conv -> LBN -> act -> conv [-> gate]` plus a skip
/// path `(up) -> 1x1 conv` whenever channels or resolution change.
#[derive(Clone, Debug)]
pub struct ResBlockG {
    pub bn1: LatentBatchNorm,
    pub conv1: ConvUnit,
    pub bn2: LatentBatchNorm,
    pub conv2: ConvUnit,
    pub skip: Option<Conv2d>,
    pub gate: Option<ChannelGate>,
    pub upsample: bool,
    pub activation: Activation,
    pub inputs: usize,
    pub outputs: usize,
}

impl ResBlockG {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        latent_dim: usize,
        upsample: bool,
        kind: ConvKind,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let bn1 =
            LatentBatchNorm::new(store, &format!("{name}.bn1"), inputs, latent_dim, init, rng);
        let conv1 = ConvUnit::new(
            kind,
            store,
            &format!("{name}.conv1"),
            3,
            inputs,
            outputs,
            latent_dim,
            // the following normalization cancels any bias
            false,
            init,
            rng,
        );
        let bn2 = LatentBatchNorm::new(
            store,
            &format!("{name}.bn2"),
            outputs,
            latent_dim,
            init,
            rng,
        );
        let conv2 = ConvUnit::new(
            kind,
            store,
            &format!("{name}.conv2"),
            3,
            outputs,
            outputs,
            latent_dim,
            true,
            init,
            rng,
        );
        let skip = (inputs != outputs || upsample).then(|| {
            Conv2d::new(
                store,
                &format!("{name}.skip"),
                1,
                inputs,
                outputs,
                true,
                init,
                rng,
            )
        });
        ResBlockG {
            bn1,
            conv1,
            bn2,
            conv2,
            skip,
            gate: None,
            upsample,
            activation: Activation::Relu,
            inputs,
            outputs,
        }
    }

    /// Appends channel attention after the second convolution.
    pub fn with_gate<R: Rng + ?Sized>(
        mut self,
        store: &mut ParamStore,
        name: &str,
        init: Init,
        rng: &mut R,
    ) -> Result<Self> {
        self.gate = Some(ChannelGate::new(
            store,
            &format!("{name}.gate"),
            self.outputs,
            init,
            rng,
        )?);
        Ok(self)
    }

    pub fn with_activation(mut self, activation: Activation) -> Result<Self> {
        if activation == Activation::Glu {
            return Err(Error::Config(
                "glu halves channels and cannot be used inside a residual block".into(),
            ));
        }
        self.activation = activation;
        Ok(self)
    }

    pub fn forward(&self, fw: &mut Forward<'_>, x: Var, z: Var) -> Result<Var> {
        let mut h = self.bn1.forward(fw, x, z)?;
        h = fw.tape.activation(h, self.activation)?;
        if self.upsample {
            h = fw.tape.upsample_nearest(h)?;
        }
        h = self.conv1.forward(fw, h, z)?;
        h = self.bn2.forward(fw, h, z)?;
        h = fw.tape.activation(h, self.activation)?;
        h = self.conv2.forward(fw, h, z)?;
        if let Some(gate) = &self.gate {
            h = gate.forward(fw, h)?;
        }
        let mut s = x;
        if self.upsample {
            s = fw.tape.upsample_nearest(s)?;
        }
        if let Some(skip) = &self.skip {
            s = skip.forward(fw, s)?;
        }
        if fw.tape.shape(h) != fw.tape.shape(s) {
            return dim_err(
                "resblock_g",
                format!(
                    "main path {:?} vs skip {:?}",
                    fw.tape.shape(h),
                    fw.tape.shape(s)
                ),
            );
        }
        fw.tape.add(h, s)
    }
}

/// Discriminator residual block:
/// `relu -> conv -> relu -> conv -> (avgpool)` plus a `1x1 conv -> (avgpool)`
/// skip when channels or resolution change. The first block of a
/// discriminator uses the optimized variant `conv -> relu -> conv -> avgpool`
/// with an `avgpool -> 1x1 conv` skip.
#[derive(Clone, Debug)]
pub struct ResBlockD {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub skip: Option<Conv2d>,
    pub downsample: bool,
    pub first: bool,
    pub inputs: usize,
    pub outputs: usize,
}

impl ResBlockD {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        downsample: bool,
        first: bool,
        spectral: bool,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let mut conv = |store: &mut ParamStore, suffix: &str, k: usize, i: usize, o: usize| {
            let cname = format!("{name}.{suffix}");
            let c = Conv2d::new(store, &cname, k, i, o, true, init, rng);
            if spectral {
                c.with_spectral_norm(store, &cname, rng)
            } else {
                c
            }
        };
        let conv1 = conv(store, "conv1", 3, inputs, outputs);
        let conv2 = conv(store, "conv2", 3, outputs, outputs);
        let skip = (first || inputs != outputs || downsample)
            .then(|| conv(store, "skip", 1, inputs, outputs));
        ResBlockD {
            conv1,
            conv2,
            skip,
            downsample,
            first,
            inputs,
            outputs,
        }
    }

    pub fn forward(&self, fw: &mut Forward<'_>, x: Var) -> Result<Var> {
        let mut h = if self.first { x } else { fw.tape.relu(x) };
        h = self.conv1.forward(fw, h)?;
        h = fw.tape.relu(h);
        h = self.conv2.forward(fw, h)?;
        if self.downsample {
            h = fw.tape.avgpool2(h)?;
        }
        let s = match (&self.skip, self.first) {
            (Some(skip), true) => {
                let p = if self.downsample {
                    fw.tape.avgpool2(x)?
                } else {
                    x
                };
                skip.forward(fw, p)?
            }
            (Some(skip), false) => {
                let c = skip.forward(fw, x)?;
                if self.downsample {
                    fw.tape.avgpool2(c)?
                } else {
                    c
                }
            }
            (None, _) => x,
        };
        if fw.tape.shape(h) != fw.tape.shape(s) {
            return dim_err(
                "resblock_d",
                format!(
                    "main path {:?} vs skip {:?}",
                    fw.tape.shape(h),
                    fw.tape.shape(s)
                ),
            );
        }
        fw.tape.add(h, s)
    }

    pub fn convs(&self) -> impl Iterator<Item = &Conv2d> {
        [Some(&self.conv1), Some(&self.conv2), self.skip.as_ref()]
            .into_iter()
            .flatten()
    }
}
