//! Spectral normalization by power iteration.
//!
//! A weight tensor is viewed as the matrix `(len / cols) x cols`, `cols`
//! being its last axis (`(kh*kw*m) x n` for conv kernels, `in x out` for
//! dense weights). The persistent vectors satisfy `u ~ W v`, `v ~ W^T u`.

use rand::Rng;
use rand_distr::StandardNormal;

use super::params::{Forward, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct SpectralState {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

fn matrix_dims(w: &Tensor) -> Result<(usize, usize)> {
    let cols = *w.shape().last().unwrap_or(&0);
    if cols == 0 || w.is_empty() {
        return Err(Error::Normalization(format!(
            "empty weight {:?}",
            w.shape()
        )));
    }
    Ok((w.len() / cols, cols))
}

fn normalize(mut x: Vec<f64>, what: &str) -> Result<Vec<f64>> {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::Normalization(format!(
            "{what} vanished during power iteration (all-zero weight?)"
        )));
    }
    x.iter_mut().for_each(|v| *v /= norm);
    Ok(x)
}

fn mat_vec(w: &[f64], rows: usize, cols: usize, v: &[f64]) -> Vec<f64> {
    (0..rows)
        .map(|i| {
            w[i * cols..(i + 1) * cols]
                .iter()
                .zip(v)
                .map(|(a, b)| a * b)
                .sum()
        })
        .collect()
}

fn mat_t_vec(w: &[f64], rows: usize, cols: usize, u: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; cols];
    for i in 0..rows {
        let ui = u[i];
        for (o, a) in out.iter_mut().zip(&w[i * cols..(i + 1) * cols]) {
            *o += ui * a;
        }
    }
    out
}

impl SpectralState {
    /// Random unit `u` and the matching `v = W^T u / |W^T u|`.
    pub fn init<R: Rng + ?Sized>(w: &Tensor, rng: &mut R) -> Result<Self> {
        let (rows, cols) = matrix_dims(w)?;
        let u = normalize((0..rows).map(|_| rng.sample(StandardNormal)).collect(), "u")?;
        let v = normalize(mat_t_vec(w.data(), rows, cols, &u), "v")?;
        Ok(SpectralState { u, v })
    }

    /// A state with the right lengths that does not depend on `w`'s values.
    pub fn init_unchecked<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let mut draw = |n: usize| {
            let x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            normalize(x, "init").expect("gaussian draw is non-zero")
        };
        let u = draw(rows);
        let v = draw(cols);
        SpectralState { u, v }
    }
}

/// Runs `iters` power iterations, updating `state`, and returns the
/// estimate `u^T W v` of the largest singular value.
pub fn power_iteration(w: &Tensor, state: &mut SpectralState, iters: usize) -> Result<f64> {
    let (rows, cols) = matrix_dims(w)?;
    if state.u.len() != rows || state.v.len() != cols {
        return Err(Error::Dimension {
            op: "power_iteration",
            detail: format!(
                "state lengths {}/{} vs matrix {rows}x{cols}",
                state.u.len(),
                state.v.len()
            ),
        });
    }
    if w.data().iter().all(|&x| x == 0.0) {
        return Err(Error::Normalization("all-zero weight matrix".into()));
    }
    let d = w.data();
    for _ in 0..iters {
        state.v = normalize(mat_t_vec(d, rows, cols, &state.u), "v")?;
        state.u = normalize(mat_vec(d, rows, cols, &state.v), "u")?;
    }
    let wv = mat_vec(d, rows, cols, &state.v);
    Ok(state.u.iter().zip(&wv).map(|(a, b)| a * b).sum())
}

/// `W / sigma` with `sigma` the power-iteration estimate after `iters`
/// iterations.
pub fn spectral_normalize(w: &Tensor, state: &mut SpectralState, iters: usize) -> Result<Tensor> {
    let sigma = power_iteration(w, state, iters)?;
    if !(sigma > 0.0) {
        return Err(Error::Normalization(format!(
            "non-positive estimate {sigma}"
        )));
    }
    Ok(w.scale(1.0 / sigma))
}

/// Spectral normalization attached to one weight of a layer. The power
/// iteration vectors live in the parameter store as buffers.
#[derive(Clone, Debug)]
pub struct SpectralNorm {
    u: ParamId,
    v: ParamId,
    /// Power iterations per training forward pass.
    pub iters: usize,
}

impl SpectralNorm {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        weight_shape: &[usize],
        rng: &mut R,
    ) -> Self {
        let cols = *weight_shape.last().expect("weight rank");
        let rows = weight_shape.iter().product::<usize>() / cols;
        let st = SpectralState::init_unchecked(rows, cols, rng);
        let u = store.add_buffer(
            format!("{name}.sn_u"),
            Tensor::new(vec![rows], st.u).unwrap(),
        );
        let v = store.add_buffer(
            format!("{name}.sn_v"),
            Tensor::new(vec![cols], st.v).unwrap(),
        );
        SpectralNorm { u, v, iters: 1 }
    }

    pub fn state(&self, store: &ParamStore) -> SpectralState {
        SpectralState {
            u: store.get(self.u).data().to_vec(),
            v: store.get(self.v).data().to_vec(),
        }
    }

    /// Normalized weight on the tape. In training mode the stored vectors
    /// advance by `iters` iterations first.
    pub fn apply(&self, fw: &mut Forward<'_>, weight: ParamId, w: Var) -> Result<Var> {
        let mut st = self.state(fw.store());
        if fw.is_train() && self.iters > 0 {
            let wt = fw.store().get(weight).clone();
            power_iteration(&wt, &mut st, self.iters)?;
            let store = fw.store_mut();
            store.get_mut(self.u).data_mut().copy_from_slice(&st.u);
            store.get_mut(self.v).data_mut().copy_from_slice(&st.v);
        }
        fw.tape.spectral_normalize(w, &st.u, &st.v)
    }
}
