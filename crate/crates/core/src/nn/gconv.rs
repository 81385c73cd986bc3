//! Generative convolution.
//!
//! A base kernel bank `K` (viewed as `o x n`, `o = kh*kw*m`) is turned into
//! latent-specific kernels per sample:
//!
//! ```text
//! S  = sigmoid([gap(X), z] W_s)          b x n, entries in (0, 1)
//! K~ = K diag(S_i)                        kernels selected by S
//! K^ = K~ W_L                             kernels recombined
//! Y  = X * K + X * K^_i                   per sample i
//! ```
//!
//! Because convolution is linear in the kernel, the second term equals
//! `((X * K) diag(S_i)) W_L`, i.e. one shared convolution followed by a
//! per-sample channel scaling and a 1x1 convolution. That fused form is the
//! default; the direct form materializes `K^_i` per sample and is kept as an
//! independent route for testing.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::init::{self, Init};
use super::params::{Forward, ParamId, ParamStore};
use crate::error::{dim_err, Result};
use crate::tensor::{Padding, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GConvPath {
    #[default]
    Fused,
    Direct,
}

/// Value-level parameters of one generative convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct GConvParams {
    /// Base kernels, `kh x kw x m x n`.
    pub k: Tensor,
    /// Scaling weights, `(m + d_z) x n`.
    pub ws: Tensor,
    /// Combination weights, `n x n`.
    pub wl: Tensor,
}

impl GConvParams {
    pub fn new(k: Tensor, ws: Tensor, wl: Tensor) -> Result<Self> {
        let (m, n) = match k.shape() {
            [_, _, m, n] => (*m, *n),
            s => {
                return dim_err(
                    "gconv",
                    format!("kernel must be kh x kw x m x n, got {s:?}"),
                )
            }
        };
        match ws.shape() {
            [r, c] if *c == n && *r > m => {}
            s => {
                return dim_err(
                    "gconv",
                    format!("W_s must be (m + d_z) x {n} with m = {m}, d_z >= 1; got {s:?}"),
                )
            }
        }
        if wl.shape() != [n, n] {
            return dim_err(
                "gconv",
                format!("W_L must be {n} x {n}, got {:?}", wl.shape()),
            );
        }
        Ok(GConvParams { k, ws, wl })
    }

    pub fn random<R: Rng + ?Sized>(
        kh: usize,
        kw: usize,
        m: usize,
        n: usize,
        d_z: usize,
        rng: &mut R,
    ) -> Self {
        GConvParams {
            k: Tensor::randn(vec![kh, kw, m, n], rng),
            ws: Tensor::randn(vec![m + d_z, n], rng),
            wl: Tensor::randn(vec![n, n], rng),
        }
    }

    pub fn inputs(&self) -> usize {
        self.k.shape()[2]
    }

    pub fn outputs(&self) -> usize {
        self.k.shape()[3]
    }

    pub fn latent_dim(&self) -> usize {
        self.ws.shape()[0] - self.inputs()
    }

    /// Records the three tensors as differentiable leaves.
    pub fn record(&self, tape: &mut Tape) -> GConvVars {
        GConvVars {
            k: tape.leaf(self.k.clone()),
            ws: tape.leaf(self.ws.clone()),
            wl: tape.leaf(self.wl.clone()),
        }
    }

    /// Output of the direct (per-sample materialized kernel) form.
    pub fn forward_direct(&self, x: &Tensor, z: &Tensor) -> Result<Tensor> {
        self.eval(x, z, GConvPath::Direct)
    }

    /// Output of the fused (shared convolution, scale, 1x1 mix) form.
    pub fn forward_fused(&self, x: &Tensor, z: &Tensor) -> Result<Tensor> {
        self.eval(x, z, GConvPath::Fused)
    }

    fn eval(&self, x: &Tensor, z: &Tensor, path: GConvPath) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.record(&mut tape);
        let xv = tape.constant(x.clone());
        let zv = tape.constant(z.clone());
        let y = match path {
            GConvPath::Direct => gconv_forward_direct(&mut tape, xv, zv, p, Padding::Same)?,
            GConvPath::Fused => gconv_forward_fused(&mut tape, xv, zv, p, Padding::Same)?,
        };
        Ok(tape.value(y).clone())
    }
}

/// Tape handles for the parameters of one generative convolution.
#[derive(Clone, Copy, Debug)]
pub struct GConvVars {
    pub k: Var,
    pub ws: Var,
    pub wl: Var,
}

/// `S = sigmoid([x_m, z] W_s)`, one row per sample.
pub fn gconv_scaling(tape: &mut Tape, x_mean: Var, z: Var, ws: Var) -> Result<Var> {
    let joined = tape.concat(x_mean, z)?;
    let pre = tape.matmul(joined, ws)?;
    Ok(tape.sigmoid(pre))
}

/// `K~ = K diag(s)`: column `i` of the `o x n` bank scaled by `s_i`.
/// `s` may be `n` or `1 x n`.
pub fn gconv_select(tape: &mut Tape, bank: Var, s: Var) -> Result<Var> {
    let s = match tape.shape(s) {
        [_] => s,
        [1, n] => {
            let n = *n;
            tape.reshape(s, &[n])?
        }
        other => return dim_err("gconv_select", format!("scaling row has shape {other:?}")),
    };
    tape.mul_channel(bank, s)
}

/// `K^ = K~ W_L`.
pub fn gconv_combine(tape: &mut Tape, selected: Var, wl: Var) -> Result<Var> {
    let n = tape.shape(selected).last().copied().unwrap_or(0);
    if tape.shape(wl) != [n, n] {
        return dim_err(
            "gconv_combine",
            format!("W_L {:?} must be {n} x {n}", tape.shape(wl)),
        );
    }
    tape.matmul(selected, wl)
}

fn check_batch(tape: &Tape, x: Var, z: Var) -> Result<()> {
    let (xs, zs) = (tape.shape(x), tape.shape(z));
    if xs.len() != 4 || zs.len() != 2 || xs[0] != zs[0] {
        return dim_err(
            "gconv",
            format!("input {xs:?} and latent {zs:?} must share the batch size"),
        );
    }
    Ok(())
}

/// `Y_i = X_i * K + X_i * K^_i`, building each sample's kernels explicitly.
pub fn gconv_forward_direct(
    tape: &mut Tape,
    x: Var,
    z: Var,
    p: GConvVars,
    padding: Padding,
) -> Result<Var> {
    check_batch(tape, x, z)?;
    let kshape = tape.shape(p.k).to_vec();
    let (o, n) = (kshape[0] * kshape[1] * kshape[2], kshape[3]);
    let base = tape.conv2d(x, p.k, 1, padding)?;
    let xm = tape.gap(x)?;
    let s = gconv_scaling(tape, xm, z, p.ws)?;
    let bank = tape.reshape(p.k, &[o, n])?;
    let b = tape.shape(x)[0];
    let mut per_sample = Vec::with_capacity(b);
    for i in 0..b {
        let xi = tape.slice_rows(x, i, 1)?;
        let si = tape.slice_rows(s, i, 1)?;
        let selected = gconv_select(tape, bank, si)?;
        let combined = gconv_combine(tape, selected, p.wl)?;
        let ki = tape.reshape(combined, &kshape)?;
        per_sample.push(tape.conv2d(xi, ki, 1, padding)?);
    }
    let latent = tape.concat_rows(&per_sample)?;
    tape.add(base, latent)
}

/// `Y = X * K + ((X * K) diag(S)) W_L` with one shared convolution.
pub fn gconv_forward_fused(
    tape: &mut Tape,
    x: Var,
    z: Var,
    p: GConvVars,
    padding: Padding,
) -> Result<Var> {
    check_batch(tape, x, z)?;
    let base = tape.conv2d(x, p.k, 1, padding)?;
    let xm = tape.gap(x)?;
    let s = gconv_scaling(tape, xm, z, p.ws)?;
    let scaled = tape.mul_sample_channel(base, s)?;
    let shape = tape.shape(base).to_vec();
    let n = shape[3];
    let flat = tape.reshape(scaled, &[shape[0] * shape[1] * shape[2], n])?;
    let mixed = gconv_combine(tape, flat, p.wl)?;
    let mixed = tape.reshape(mixed, &shape)?;
    tape.add(base, mixed)
}

/// Generative convolution layer. The per-output-channel bias belongs to the
/// base path and is added once.
#[derive(Clone, Debug)]
pub struct GConv {
    pub k: ParamId,
    pub ws: ParamId,
    pub wl: ParamId,
    pub bias: Option<ParamId>,
    pub kh: usize,
    pub kw: usize,
    pub inputs: usize,
    pub outputs: usize,
    pub latent_dim: usize,
    pub padding: Padding,
    pub path: GConvPath,
}

impl GConv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
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
        let k = store.add(
            format!("{name}.k"),
            init::make(init, &[kernel, kernel, inputs, outputs], rng),
        );
        let ws = store.add(
            format!("{name}.ws"),
            init::make(init, &[inputs + latent_dim, outputs], rng),
        );
        let wl = store.add(
            format!("{name}.wl"),
            init::make(init, &[outputs, outputs], rng),
        );
        let bias = bias.then(|| store.add(format!("{name}.b"), Tensor::zeros(vec![outputs])));
        GConv {
            k,
            ws,
            wl,
            bias,
            kh: kernel,
            kw: kernel,
            inputs,
            outputs,
            latent_dim,
            padding: Padding::Same,
            path: GConvPath::Fused,
        }
    }

    pub fn params(&self, store: &ParamStore) -> GConvParams {
        GConvParams {
            k: store.get(self.k).clone(),
            ws: store.get(self.ws).clone(),
            wl: store.get(self.wl).clone(),
        }
    }

    pub fn forward(&self, fw: &mut Forward<'_>, x: Var, z: Var) -> Result<Var> {
        let p = GConvVars {
            k: fw.param(self.k),
            ws: fw.param(self.ws),
            wl: fw.param(self.wl),
        };
        let y = match self.path {
            GConvPath::Fused => gconv_forward_fused(fw.tape, x, z, p, self.padding)?,
            GConvPath::Direct => gconv_forward_direct(fw.tape, x, z, p, self.padding)?,
        };
        match self.bias {
            Some(b) => {
                let b = fw.param(b);
                fw.tape.add_channel(y, b)
            }
            None => Ok(y),
        }
    }

    /// `kh * kw * m * n`, the base bank alone.
    pub fn kernel_count(&self) -> usize {
        self.kh * self.kw * self.inputs * self.outputs
    }

    /// `(m + d_z) * n + n^2`, the kernel-converting weights.
    pub fn extra_count(&self) -> usize {
        (self.inputs + self.latent_dim) * self.outputs + self.outputs * self.outputs
    }
}

/// Fully-connected generative layer: a 1x1 generative convolution on a 1x1
/// grid, so the pooled input is the input vector itself.
#[derive(Clone, Debug)]
pub struct GDense {
    pub inner: GConv,
}

impl GDense {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        inputs: usize,
        outputs: usize,
        latent_dim: usize,
        bias: bool,
        init: Init,
        rng: &mut R,
    ) -> Self {
        GDense {
            inner: GConv::new(store, name, 1, inputs, outputs, latent_dim, bias, init, rng),
        }
    }

    pub fn forward(&self, fw: &mut Forward<'_>, x: Var, z: Var) -> Result<Var> {
        let (b, m) = match fw.tape.shape(x) {
            [b, m] => (*b, *m),
            s => return dim_err("gdense", format!("input must be b x m, got {s:?}")),
        };
        let x4 = fw.tape.reshape(x, &[b, 1, 1, m])?;
        let y = self.inner.forward(fw, x4, z)?;
        fw.tape.reshape(y, &[b, self.inner.outputs])
    }
}
