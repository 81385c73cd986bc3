use rand::Rng;

use super::init::{self, Init};
use super::params::{Forward, ParamId, ParamStore};
use super::spectral::SpectralNorm;
use crate::error::Result;
use crate::tensor::{Padding, Tensor, Var};

/// Standard stride-1 convolution layer with an optional per-channel bias.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub k: ParamId,
    pub bias: Option<ParamId>,
    pub sn: Option<SpectralNorm>,
    pub kh: usize,
    pub kw: usize,
    pub inputs: usize,
    pub outputs: usize,
    pub padding: Padding,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        kernel: usize,
        inputs: usize,
        outputs: usize,
        bias: bool,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let shape = [kernel, kernel, inputs, outputs];
        let k = store.add(format!("{name}.k"), init::make(init, &shape, rng));
        let bias = bias.then(|| store.add(format!("{name}.b"), Tensor::zeros(vec![outputs])));
        Conv2d {
            k,
            bias,
            sn: None,
            kh: kernel,
            kw: kernel,
            inputs,
            outputs,
            padding: Padding::Same,
        }
    }

    pub fn with_spectral_norm<R: Rng + ?Sized>(
        mut self,
        store: &mut ParamStore,
        name: &str,
        rng: &mut R,
    ) -> Self {
        let shape = [self.kh, self.kw, self.inputs, self.outputs];
        self.sn = Some(SpectralNorm::register(store, name, &shape, rng));
        self
    }

    pub fn kernel(&self, fw: &mut Forward<'_>) -> Result<Var> {
        let k = fw.param(self.k);
        match &self.sn {
            Some(sn) => sn.apply(fw, self.k, k),
            None => Ok(k),
        }
    }

    pub fn forward(&self, fw: &mut Forward<'_>, x: Var) -> Result<Var> {
        let k = self.kernel(fw)?;
        let y = fw.tape.conv2d(x, k, 1, self.padding)?;
        match self.bias {
            Some(b) => {
                let b = fw.param(b);
                fw.tape.add_channel(y, b)
            }
            None => Ok(y),
        }
    }

    /// `kh * kw * m * n`.
    pub fn weight_count(&self) -> usize {
        self.kh * self.kw * self.inputs * self.outputs
    }
}
