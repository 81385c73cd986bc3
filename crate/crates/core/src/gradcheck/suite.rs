//! Randomized gradient checks over every layer type.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{grad_check_with, GradCheck};
use crate::error::Result;
use crate::nn::init::Init;
use crate::nn::{
    BatchNorm, ChannelGate, Conv2d, ConvKind, Dense, Forward, GConv, GConvPath, GDense,
    LatentBatchNorm, Mode, ParamId, ParamStore, ResBlockD, ResBlockG, GATE_REDUCTION,
};
use crate::tensor::{Padding, Tape, Tensor, Var};

pub const LAYERS: [&str; 12] = [
    "conv2d",
    "conv2d_valid",
    "dense",
    "gconv_direct",
    "gconv_fused",
    "gdense",
    "batchnorm",
    "latent_batchnorm",
    "spectral_norm",
    "channel_gate",
    "resblock_g",
    "resblock_d",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub layer: String,
    pub seed: u64,
    pub case: usize,
    pub shape: String,
    pub max_rel_error: f64,
    /// Input index (0 = data, 1 = latent if present, then parameters) and
    /// coordinate of the worst error.
    pub input: usize,
    pub coordinate: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Training-mode passes run before checking layers evaluated with frozen
/// spectral normalization.
const SN_WARMUP: usize = 20;

type LayerFn = Box<dyn Fn(&mut Forward<'_>, Var, Option<Var>) -> Result<Var>>;

struct Case {
    shape: String,
    store: ParamStore,
    forward: LayerFn,
    mode: Mode,
    x: Tensor,
    z: Option<Tensor>,
}

fn nhwc(rng: &mut ChaCha8Rng, b: usize, h: usize, w: usize, m: usize) -> Tensor {
    Tensor::randn(vec![b, h, w, m], rng)
}

fn build_case(layer: &str, rng: &mut ChaCha8Rng) -> Case {
    let init = Init::Scaled;
    let mut store = ParamStore::new();
    let b = rng.random_range(2..=3);
    let h = rng.random_range(3..=5);
    let w = rng.random_range(3..=5);
    let m = rng.random_range(2..=4);
    let n = rng.random_range(2..=4);
    let d_z = rng.random_range(1..=3);
    let z = Some(Tensor::randn(vec![b, d_z], rng));
    let shape = format!("b={b} h={h} w={w} m={m} n={n} d_z={d_z}");
    let (forward, x, z, mode): (LayerFn, Tensor, Option<Tensor>, Mode) = match layer {
        "conv2d" | "conv2d_valid" => {
            let k = rng.random_range(1..=3);
            let mut c = Conv2d::new(&mut store, "conv", k, m, n, true, init, rng);
            if layer == "conv2d_valid" {
                c.padding = Padding::Valid;
            }
            (
                Box::new(move |fw, x, _| c.forward(fw, x)),
                nhwc(rng, b, h, w, m),
                None,
                Mode::Train,
            )
        }
        "dense" => {
            let d = Dense::new(&mut store, "dense", m, n, true, init, rng);
            (
                Box::new(move |fw, x, _| d.forward(fw, x)),
                Tensor::randn(vec![b, m], rng),
                None,
                Mode::Train,
            )
        }
        "gconv_direct" | "gconv_fused" => {
            let k = rng.random_range(1..=3);
            let mut g = GConv::new(&mut store, "gconv", k, m, n, d_z, true, init, rng);
            g.path = if layer == "gconv_direct" {
                GConvPath::Direct
            } else {
                GConvPath::Fused
            };
            (
                Box::new(move |fw, x, z| g.forward(fw, x, z.expect("latent"))),
                nhwc(rng, b, h, w, m),
                z,
                Mode::Train,
            )
        }
        "gdense" => {
            let g = GDense::new(&mut store, "gdense", m, n, d_z, true, init, rng);
            (
                Box::new(move |fw, x, z| g.forward(fw, x, z.expect("latent"))),
                Tensor::randn(vec![b, m], rng),
                z,
                Mode::Train,
            )
        }
        "batchnorm" => {
            let bn = BatchNorm::new(&mut store, "bn", m);
            (
                Box::new(move |fw, x, _| bn.forward(fw, x)),
                nhwc(rng, b, h, w, m),
                None,
                Mode::Train,
            )
        }
        "latent_batchnorm" => {
            let bn = LatentBatchNorm::new(&mut store, "lbn", m, d_z, init, rng);
            (
                Box::new(move |fw, x, z| bn.forward(fw, x, z.expect("latent"))),
                nhwc(rng, b, h, w, m),
                z,
                Mode::Train,
            )
        }
        "spectral_norm" => {
            // frozen power-iteration vectors: the normalization is then a
            // differentiable function of the weight alone
            let d = Dense::new(&mut store, "sn", m, n, true, init, rng)
                .with_spectral_norm(&mut store, "sn", rng);
            (
                Box::new(move |fw, x, _| d.forward(fw, x)),
                Tensor::randn(vec![b, m], rng),
                None,
                Mode::Eval,
            )
        }
        "channel_gate" => {
            let c = GATE_REDUCTION * rng.random_range(1..=2);
            let g = ChannelGate::new(&mut store, "gate", c, init, rng).expect("divisible");
            (
                Box::new(move |fw, x, _| g.forward(fw, x)),
                nhwc(rng, b, h, w, c),
                None,
                Mode::Train,
            )
        }
        "resblock_g" => {
            let kind = if rng.random_bool(0.5) {
                ConvKind::GConv
            } else {
                ConvKind::Conv
            };
            let up = rng.random_bool(0.5);
            let blk = ResBlockG::new(&mut store, "rb", m, n, d_z, up, kind, init, rng);
            (
                Box::new(move |fw, x, z| blk.forward(fw, x, z.expect("latent"))),
                nhwc(rng, b, h, w, m),
                z,
                Mode::Train,
            )
        }
        "resblock_d" => {
            let down = rng.random_bool(0.5);
            let first = rng.random_bool(0.5);
            let (h, w) = if down {
                (2 * (h / 2), 2 * (w / 2))
            } else {
                (h, w)
            };
            let blk = ResBlockD::new(&mut store, "rb", m, n, down, first, true, init, rng);
            (
                Box::new(move |fw, x, _| blk.forward(fw, x)),
                nhwc(rng, b, h, w, m),
                None,
                Mode::Eval,
            )
        }
        other => panic!("unknown layer {other}"),
    };
    randomize(&mut store, rng);
    Case {
        shape,
        store,
        forward,
        mode,
        x,
        z,
    }
}

/// Moves biases and normalization affines off their initialization so the
/// check runs at a generic point. A zero bias after a ReLU-clipped window
/// would otherwise sit exactly on the next ReLU's kink.
fn randomize(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    for e in store.entries_mut() {
        let generic = [".gamma", ".beta", ".b"]
            .iter()
            .any(|s| e.name.ends_with(s));
        if e.trainable && generic {
            let noise = Tensor::randn(e.value.shape().to_vec(), rng).scale(0.5);
            for (v, d) in e.value.data_mut().iter_mut().zip(noise.data()) {
                *v += d;
            }
        }
    }
}

/// Checks `layer` on one random configuration drawn from `seed`.
pub fn check_layer(layer: &str, seed: u64, case: usize, opts: GradCheck) -> Result<CaseReport> {
    let layer_index = LAYERS
        .iter()
        .position(|l| *l == layer)
        .unwrap_or(LAYERS.len()) as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((layer_index << 32) | case as u64);
    let mut c = build_case(layer, &mut rng);
    if c.mode == Mode::Eval {
        // bring the power-iteration vectors close to the top singular pair
        for _ in 0..SN_WARMUP {
            let mut tape = Tape::new();
            let mut fw = Forward::new(&mut tape, &mut c.store, Mode::Train).frozen();
            let x = fw.tape.constant(c.x.clone());
            let z = c.z.clone().map(|z| fw.tape.constant(z));
            (c.forward)(&mut fw, x, z)?;
        }
    }
    let ids: Vec<ParamId> = c.store.trainable_ids().collect();
    let mut inputs = vec![c.x.clone()];
    if let Some(z) = &c.z {
        inputs.push(z.clone());
    }
    let n_data = inputs.len();
    inputs.extend(ids.iter().map(|&id| c.store.get(id).clone()));

    // probe the output shape once to draw the random projection
    let mut probe_tape = Tape::new();
    let mut probe_store = c.store.clone();
    let out_shape = {
        let mut fw = Forward::new(&mut probe_tape, &mut probe_store, c.mode).frozen();
        let x = fw.tape.constant(c.x.clone());
        let z = c.z.clone().map(|z| fw.tape.constant(z));
        let y = (c.forward)(&mut fw, x, z)?;
        fw.tape.shape(y).to_vec()
    };
    let proj = Tensor::randn(out_shape, &mut rng);

    let f = |tape: &mut Tape, vars: &[Var]| -> Result<Var> {
        let mut store = c.store.clone();
        let mut fw = Forward::new(tape, &mut store, c.mode);
        for (i, &id) in ids.iter().enumerate() {
            fw.bind(id, vars[n_data + i]);
        }
        let z = (n_data == 2).then(|| vars[1]);
        let y = (c.forward)(&mut fw, vars[0], z)?;
        let r = fw.tape.constant(proj.clone());
        let p = fw.tape.mul(y, r)?;
        Ok(fw.tape.sum(p))
    };
    let res = grad_check_with(f, &inputs, opts)?;
    Ok(CaseReport {
        layer: layer.to_string(),
        seed,
        case,
        shape: c.shape,
        max_rel_error: res.max_rel_error,
        input: res.input,
        coordinate: res.coordinate,
        analytic: res.analytic,
        numeric: res.numeric,
    })
}

/// `cases` seeded checks of every layer in [`LAYERS`].
pub fn run_suite(seed: u64, cases: usize, opts: GradCheck) -> Result<Vec<CaseReport>> {
    let mut out = Vec::with_capacity(LAYERS.len() * cases);
    for layer in LAYERS {
        for case in 0..cases {
            out.push(check_layer(layer, seed, case, opts)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_layer_passes_a_few_cases() {
        for r in run_suite(11, 3, GradCheck::default()).unwrap() {
            assert!(r.max_rel_error < 1e-5, "{r:?}");
        }
    }
}
