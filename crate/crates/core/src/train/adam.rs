use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::nn::ParamId;
use crate::nn::ParamStore;
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.0;
pub const BETA2: f64 = 0.9;
pub const EPSILON: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPSILON,
        }
    }
}

/// Moment estimates for a fixed list of parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, shapes: &[&[usize]]) -> Self {
        AdamState {
            config,
            m: shapes.iter().map(|s| Tensor::zeros(s.to_vec())).collect(),
            v: shapes.iter().map(|s| Tensor::zeros(s.to_vec())).collect(),
            t: 0,
        }
    }

    /// One slot per trainable entry of `store`, in store order.
    pub fn for_store(config: AdamConfig, store: &ParamStore) -> Self {
        let shapes: Vec<&[usize]> = store
            .trainable_ids()
            .map(|id| store.get(id).shape())
            .collect();
        Self::new(config, &shapes)
    }

    /// Bias-corrected first moment of slot `i`.
    pub fn m_hat(&self, i: usize) -> Tensor {
        let c = 1.0 - self.config.beta1.powi(self.t as i32);
        self.m[i].scale(1.0 / c)
    }

    pub fn v_hat(&self, i: usize) -> Tensor {
        let c = 1.0 - self.config.beta2.powi(self.t as i32);
        self.v[i].scale(1.0 / c)
    }

    /// Applies one step to every trainable entry of `store`. `grads` is
    /// indexed like the store's trainable entries; a missing gradient counts
    /// as zero. `lr` overrides the configured rate (for schedules).
    pub fn step_store(
        &mut self,
        store: &mut ParamStore,
        grads: &[Option<Tensor>],
        lr: f64,
    ) -> Result<()> {
        let ids: Vec<ParamId> = store.trainable_ids().collect();
        if ids.len() != self.m.len() || grads.len() != ids.len() {
            return dim_err(
                "adam",
                format!(
                    "{} parameters, {} gradients, {} optimizer slots",
                    ids.len(),
                    grads.len(),
                    self.m.len()
                ),
            );
        }
        for (g, &id) in grads.iter().zip(&ids) {
            if let Some(g) = g {
                if !g.all_finite() {
                    return Err(Error::Training {
                        iteration: self.t as usize + 1,
                        detail: format!("non-finite gradient for {}", store.entry(id).name),
                    });
                }
            }
        }
        self.t += 1;
        for (i, (g, &id)) in grads.iter().zip(&ids).enumerate() {
            let p = store.get_mut(id);
            match g {
                Some(g) => self.update_slot(i, p, g.data(), lr)?,
                None => {
                    let zeros = vec![0.0; p.len()];
                    self.update_slot(i, p, &zeros, lr)?
                }
            }
        }
        Ok(())
    }

    fn update_slot(&mut self, i: usize, p: &mut Tensor, g: &[f64], lr: f64) -> Result<()> {
        if p.len() != g.len() || self.m[i].len() != g.len() {
            return dim_err(
                "adam",
                format!(
                    "slot {i}: parameter {:?} vs gradient len {}",
                    p.shape(),
                    g.len()
                ),
            );
        }
        let AdamConfig {
            beta1, beta2, eps, ..
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        let m = self.m[i].data_mut();
        let v = self.v[i].data_mut();
        for (((pj, &gj), mj), vj) in p.data_mut().iter_mut().zip(g).zip(m).zip(v) {
            *mj = beta1 * *mj + (1.0 - beta1) * gj;
            *vj = beta2 * *vj + (1.0 - beta2) * gj * gj;
            let m_hat = *mj / c1;
            let v_hat = *vj / c2;
            *pj -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// One Adam step over parallel lists of parameters and gradients.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return dim_err(
            "adam",
            format!(
                "{} parameters, {} gradients, {} slots",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        );
    }
    if let Some(i) = grads.iter().position(|g| !g.all_finite()) {
        return Err(Error::Training {
            iteration: state.t as usize + 1,
            detail: format!("non-finite gradient for parameter {i}"),
        });
    }
    state.t += 1;
    let lr = state.config.lr;
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        state.update_slot(i, p, g.data(), lr)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = vec![Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap()];
        let before = p.clone();
        let mut st = AdamState::new(AdamConfig::new(0.1), &[&[3]]);
        adam_step(&mut p, &[Tensor::zeros(vec![3])], &mut st).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn first_step_hand_evaluated() {
        let mut p = vec![Tensor::scalar(0.0)];
        let mut st = AdamState::new(AdamConfig::new(0.1), &[&[]]);
        adam_step(&mut p, &[Tensor::scalar(4.0)], &mut st).unwrap();
        assert_eq!(st.m_hat(0).item().unwrap(), 4.0);
        assert!((st.v_hat(0).item().unwrap() - 16.0).abs() < 1e-12);
        let expected = -0.1 * 4.0 / (4.0 + 1e-8);
        assert!((p[0].item().unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn m_hat_equals_gradient_with_zero_beta1() {
        let mut p = vec![Tensor::zeros(vec![2])];
        let mut st = AdamState::new(AdamConfig::new(0.01), &[&[2]]);
        for g in [[1.0, -3.0], [0.25, 7.0], [-2.0, 0.0]] {
            let g = Tensor::new(vec![2], g.to_vec()).unwrap();
            adam_step(&mut p, &[g.clone()], &mut st).unwrap();
            assert_eq!(st.m_hat(0), g);
        }
    }

    #[test]
    fn nan_gradient_is_an_error() {
        let mut p = vec![Tensor::zeros(vec![1])];
        let mut st = AdamState::new(AdamConfig::new(0.01), &[&[1]]);
        let r = adam_step(&mut p, &[Tensor::full(vec![1], f64::NAN)], &mut st);
        assert!(matches!(r, Err(Error::Training { .. })));
        assert_eq!(st.t, 0);
    }
}
