//! Weight initialization.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    /// Orthogonal with gain 1 over the `(len / last) x last` matrix view.
    Orthogonal,
    /// i.i.d. `N(0, 1 / fan_in)` over the same matrix view; cheap.
    Scaled,
    /// All zeros; cheap, for parameter audits.
    Zeros,
}

/// Tensor of `shape` whose `(prod(shape[..-1])) x shape[-1]` view has
/// orthonormal columns (tall) or orthonormal rows (wide).
pub fn orthogonal<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor {
    let cols = *shape.last().expect("non-scalar shape");
    let rows: usize = shape[..shape.len() - 1].iter().product();
    let (tall_r, tall_c) = if rows >= cols {
        (rows, cols)
    } else {
        (cols, rows)
    };
    let a = DMatrix::<f64>::from_fn(tall_r, tall_c, |_, _| rng.sample(StandardNormal));
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    // sign fix makes the distribution uniform (Haar)
    for j in 0..tall_c {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    let mut data = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        for j in 0..cols {
            data.push(if rows >= cols { q[(i, j)] } else { q[(j, i)] });
        }
    }
    Tensor::new(shape.to_vec(), data).expect("shape")
}

pub fn make<R: Rng + ?Sized>(init: Init, shape: &[usize], rng: &mut R) -> Tensor {
    match init {
        Init::Orthogonal => orthogonal(shape, rng),
        Init::Scaled => {
            let rows: usize = shape[..shape.len().saturating_sub(1)].iter().product();
            let std = 1.0 / (rows.max(1) as f64).sqrt();
            Tensor::randn(shape.to_vec(), rng).scale(std)
        }
        Init::Zeros => Tensor::zeros(shape.to_vec()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gram_error(t: &Tensor, rows: usize, cols: usize) -> f64 {
        let m = t.clone().reshape(vec![rows, cols]).unwrap();
        let g = if rows >= cols {
            m.transpose().unwrap().matmul(&m).unwrap()
        } else {
            m.matmul(&m.transpose().unwrap()).unwrap()
        };
        let n = rows.min(cols);
        g.max_abs_diff(&Tensor::eye(n)).unwrap()
    }

    #[test]
    fn tall_and_wide_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = orthogonal(&[3, 3, 4, 5], &mut rng);
        assert!(gram_error(&t, 36, 5) < 1e-12);
        let w = orthogonal(&[4, 9], &mut rng);
        assert!(gram_error(&w, 4, 9) < 1e-12);
    }

    #[test]
    fn deterministic_for_seed() {
        let a = orthogonal(&[6, 4], &mut ChaCha8Rng::seed_from_u64(9));
        let b = orthogonal(&[6, 4], &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }
}
