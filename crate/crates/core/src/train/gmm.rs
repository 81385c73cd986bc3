use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Equal-weight mixture of isotropic 2-D Gaussians with centers evenly
/// spaced on a circle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GmmSpec {
    pub modes: usize,
    pub radius: f64,
    pub std: f64,
}

impl Default for GmmSpec {
    fn default() -> Self {
        GmmSpec {
            modes: 8,
            radius: 2.0,
            std: 0.02,
        }
    }
}

impl GmmSpec {
    pub fn validate(&self) -> Result<()> {
        if self.modes == 0 {
            return Err(Error::Config("mixture needs at least one mode".into()));
        }
        if !(self.std > 0.0) || !self.radius.is_finite() || self.radius < 0.0 {
            return Err(Error::Config(format!(
                "mixture needs std > 0 and finite radius >= 0, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn centers(&self) -> Vec<[f64; 2]> {
        (0..self.modes)
            .map(|k| {
                let a = std::f64::consts::TAU * k as f64 / self.modes as f64;
                [self.radius * a.cos(), self.radius * a.sin()]
            })
            .collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        vec![1.0 / self.modes as f64; self.modes]
    }
}

/// `count x 2` i.i.d. draws: a uniformly chosen mode plus `N(0, std^2 I)`.
pub fn sample_gmm<R: Rng + ?Sized>(spec: &GmmSpec, count: usize, rng: &mut R) -> Result<Tensor> {
    spec.validate()?;
    if count == 0 {
        return Err(Error::Contract("sample_gmm needs count >= 1".into()));
    }
    let centers = spec.centers();
    let mut data = Vec::with_capacity(2 * count);
    for _ in 0..count {
        let c = centers[rng.random_range(0..spec.modes)];
        let dx: f64 = rng.sample(StandardNormal);
        let dy: f64 = rng.sample(StandardNormal);
        data.push(c[0] + spec.std * dx);
        data.push(c[1] + spec.std * dy);
    }
    Tensor::new(vec![count, 2], data)
}
