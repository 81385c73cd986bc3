use rand::Rng;

use super::init::{self, Init};
use super::params::{Forward, ParamId, ParamStore};
use super::spectral::SpectralNorm;
use crate::error::Result;
use crate::tensor::{Tensor, Var};

/// Fully-connected layer `y = x W + b` on `b x in` inputs.
#[derive(Clone, Debug)]
pub struct Dense {
    pub w: ParamId,
    pub bias: Option<ParamId>,
    pub sn: Option<SpectralNorm>,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        bias: bool,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let w = store.add(
            format!("{name}.w"),
            init::make(init, &[inputs, outputs], rng),
        );
        let bias = bias.then(|| store.add(format!("{name}.b"), Tensor::zeros(vec![outputs])));
        Dense {
            w,
            bias,
            sn: None,
            inputs,
            outputs,
        }
    }

    pub fn with_spectral_norm<R: Rng + ?Sized>(
        mut self,
        store: &mut ParamStore,
        name: &str,
        rng: &mut R,
    ) -> Self {
        self.sn = Some(SpectralNorm::register(
            store,
            name,
            &[self.inputs, self.outputs],
            rng,
        ));
        self
    }

    pub fn weight(&self, fw: &mut Forward<'_>) -> Result<Var> {
        let w = fw.param(self.w);
        match &self.sn {
            Some(sn) => sn.apply(fw, self.w, w),
            None => Ok(w),
        }
    }

    pub fn forward(&self, fw: &mut Forward<'_>, x: Var) -> Result<Var> {
        let w = self.weight(fw)?;
        let y = fw.tape.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = fw.param(b);
                fw.tape.add_channel(y, b)
            }
            None => Ok(y),
        }
    }

    pub fn weight_count(&self) -> usize {
        self.inputs * self.outputs
    }
}
