//! Generator and discriminator builders for the toy and image settings, and
//! the convolution-weight auditor.

mod image;
mod toy;

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::init::Init;
use crate::nn::{Bindings, ConvKind, Forward, Mode, ParamId, ParamStore};
use crate::tensor::{Tape, Tensor, Var};

pub use image::{ImageDiscriminator, ImageGenerator};
pub use toy::{ToyDiscriminator, ToyGenerator};

pub const LATENT_DIM: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Resolution {
    #[serde(rename = "toy")]
    Toy,
    #[serde(rename = "32")]
    R32,
    #[serde(rename = "128")]
    R128,
    #[serde(rename = "256")]
    R256,
}

impl Resolution {
    pub const ALL: [Resolution; 4] = [
        Resolution::Toy,
        Resolution::R32,
        Resolution::R128,
        Resolution::R256,
    ];

    /// Image side length; `None` for the toy setting.
    pub fn size(self) -> Option<usize> {
        match self {
            Resolution::Toy => None,
            Resolution::R32 => Some(32),
            Resolution::R128 => Some(128),
            Resolution::R256 => Some(256),
        }
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.size() {
            Some(s) => write!(f, "{s}"),
            None => f.write_str("toy"),
        }
    }
}

impl std::str::FromStr for Resolution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(Resolution::Toy),
            "32" => Ok(Resolution::R32),
            "128" => Ok(Resolution::R128),
            "256" => Ok(Resolution::R256),
            other => Err(Error::Config(format!("unsupported resolution {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Generator,
    Discriminator,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resample {
    None,
    Up,
    Down,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    pub channels: usize,
    pub resample: Resample,
}

impl Stage {
    const fn new(channels: usize, resample: Resample) -> Self {
        Stage { channels, resample }
    }
}

/// Declarative network description. For image generators the stages are
/// residual up-blocks after a dense layer producing `4 x 4 x base_channels`;
/// for discriminators they are residual blocks on `data_dim`-channel input;
/// for the toy setting they are hidden fully-connected widths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub resolution: Resolution,
    pub role: Role,
    pub conv_kind: ConvKind,
    pub latent_dim: usize,
    /// Channels of an image, or coordinates of a toy sample.
    pub data_dim: usize,
    pub base_channels: usize,
    pub stages: Vec<Stage>,
    pub spectral_norm: bool,
    pub init: Init,
    pub seed: u64,
}

impl ArchSpec {
    pub fn new(resolution: Resolution, role: Role, conv_kind: ConvKind) -> Self {
        use Resample::{Down, None as Keep, Up};
        let up = |c: &[usize]| c.iter().map(|&c| Stage::new(c, Up)).collect::<Vec<_>>();
        let (data_dim, base_channels, stages) = match (resolution, role) {
            (Resolution::Toy, _) => (2, 0, vec![Stage::new(128, Keep); 3]),
            (Resolution::R32, Role::Generator) => (3, 256, up(&[256, 256, 256])),
            (Resolution::R128, Role::Generator) => (3, 512, up(&[512, 512, 256, 128, 64])),
            (Resolution::R256, Role::Generator) => (3, 512, up(&[512, 512, 256, 128, 64, 32])),
            (Resolution::R32, Role::Discriminator) => (
                3,
                0,
                vec![
                    Stage::new(128, Down),
                    Stage::new(128, Down),
                    Stage::new(128, Keep),
                    Stage::new(128, Keep),
                ],
            ),
            (Resolution::R128, Role::Discriminator) => {
                let mut s: Vec<_> = [64, 128, 256, 512, 512].map(|c| Stage::new(c, Down)).into();
                s.push(Stage::new(512, Keep));
                (3, 0, s)
            }
            (Resolution::R256, Role::Discriminator) => {
                let mut s: Vec<_> = [32, 64, 128, 256, 512, 512]
                    .map(|c| Stage::new(c, Down))
                    .into();
                s.push(Stage::new(512, Keep));
                (3, 0, s)
            }
        };
        ArchSpec {
            resolution,
            role,
            conv_kind,
            latent_dim: LATENT_DIM,
            data_dim,
            base_channels,
            stages,
            spectral_norm: role == Role::Discriminator && resolution != Resolution::Toy,
            init: Init::Orthogonal,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.latent_dim == 0 || self.data_dim == 0 {
            return bad(format!("latent and data dims must be positive: {self:?}"));
        }
        if self.stages.is_empty() || self.stages.iter().any(|s| s.channels == 0) {
            return bad("every architecture needs non-empty stages of positive width".into());
        }
        if self.role == Role::Discriminator && self.conv_kind == ConvKind::GConv {
            return bad("generative convolutions are used only in generators".into());
        }
        let ups = self
            .stages
            .iter()
            .filter(|s| s.resample == Resample::Up)
            .count();
        let downs = self
            .stages
            .iter()
            .filter(|s| s.resample == Resample::Down)
            .count();
        match (self.resolution.size(), self.role) {
            (None, _) if ups + downs > 0 => bad("toy stages cannot resample".into()),
            (Some(size), Role::Generator) => {
                if downs > 0 || self.base_channels == 0 {
                    return bad("image generators need up-blocks and a base width".into());
                }
                if image::BASE_SIZE << ups != size {
                    return bad(format!(
                        "{ups} up-blocks give {} pixels, resolution is {size}",
                        image::BASE_SIZE << ups
                    ));
                }
                Ok(())
            }
            (Some(size), Role::Discriminator) => {
                if ups > 0 || size >> downs == 0 || size % (1 << downs) != 0 {
                    return bad(format!("{downs} down-blocks do not fit resolution {size}"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug)]
enum Network {
    ToyGenerator(ToyGenerator),
    ToyDiscriminator(ToyDiscriminator),
    Generator(ImageGenerator),
    Discriminator(ImageDiscriminator),
}

/// One layer's output shape in a forward trace.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

pub(crate) struct Trace(Option<Vec<TraceEntry>>);

impl Trace {
    fn off() -> Self {
        Trace(None)
    }

    fn on() -> Self {
        Trace(Some(Vec::new()))
    }

    pub(crate) fn record(&mut self, tape: &Tape, name: impl Into<String>, v: Var) {
        if let Some(entries) = &mut self.0 {
            entries.push(TraceEntry {
                name: name.into(),
                shape: tape.shape(v).to_vec(),
            });
        }
    }
}

/// A built network together with its parameters and buffers.
#[derive(Clone, Debug)]
pub struct Model {
    pub spec: ArchSpec,
    pub params: ParamStore,
    net: Network,
}

impl Model {
    /// Records a forward pass on `tape`. Generators take `z: b x d_z`,
    /// discriminators take data. Frozen parameters receive no gradient.
    pub fn run(
        &mut self,
        tape: &mut Tape,
        input: Var,
        mode: Mode,
        frozen: bool,
    ) -> Result<(Var, Bindings)> {
        let mut fw = Forward::new(tape, &mut self.params, mode);
        if frozen {
            fw = fw.frozen();
        }
        let y = self.net.forward(&mut fw, input, &mut Trace::off())?;
        Ok((y, fw.finish()))
    }

    /// Plain evaluation of the network on `input`.
    pub fn infer(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.constant(input.clone());
        let (y, _) = self.run(&mut tape, x, mode, true)?;
        Ok(tape.value(y).clone())
    }

    /// Per-layer output shapes for `input`.
    pub fn trace(&mut self, input: &Tensor) -> Result<Vec<TraceEntry>> {
        let mut tape = Tape::new();
        let x = tape.constant(input.clone());
        let mut fw = Forward::new(&mut tape, &mut self.params, Mode::Train).frozen();
        let mut trace = Trace::on();
        let mut entries = vec![TraceEntry {
            name: "input".into(),
            shape: input.shape().to_vec(),
        }];
        match self.net.forward(&mut fw, x, &mut trace) {
            Ok(_) => {
                entries.extend(trace.0.unwrap_or_default());
                Ok(entries)
            }
            Err(e) => {
                let after = trace.0.unwrap_or_default().last().map(|t| t.name.clone());
                Err(Error::Contract(format!(
                    "shape audit failed after layer {}: {e}",
                    after.as_deref().unwrap_or("input")
                )))
            }
        }
    }

    /// `(parameter, is_kernel_converting)` pairs counted as convolution
    /// weights.
    fn counted(&self) -> Vec<(ParamId, bool)> {
        match &self.net {
            Network::ToyGenerator(n) => n.counted(),
            Network::ToyDiscriminator(n) => n.counted(),
            Network::Generator(n) => n.counted(),
            Network::Discriminator(n) => n.counted(),
        }
    }
}

impl Network {
    fn forward(&self, fw: &mut Forward<'_>, x: Var, trace: &mut Trace) -> Result<Var> {
        match self {
            Network::ToyGenerator(n) => n.forward(fw, x, trace),
            Network::ToyDiscriminator(n) => n.forward(fw, x, trace),
            Network::Generator(n) => n.forward(fw, x, trace),
            Network::Discriminator(n) => n.forward(fw, x, trace),
        }
    }
}

/// Builds and initializes the network described by `spec`, drawing all
/// initial values from a generator seeded with `spec.seed`.
pub fn build_model(spec: &ArchSpec) -> Result<Model> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut params = ParamStore::new();
    let init = spec.init;
    let net = match (spec.resolution, spec.role) {
        (Resolution::Toy, Role::Generator) => {
            Network::ToyGenerator(ToyGenerator::new(spec, &mut params, init, &mut rng))
        }
        (Resolution::Toy, Role::Discriminator) => {
            Network::ToyDiscriminator(ToyDiscriminator::new(spec, &mut params, init, &mut rng))
        }
        (_, Role::Generator) => {
            Network::Generator(ImageGenerator::new(spec, &mut params, init, &mut rng))
        }
        (_, Role::Discriminator) => {
            Network::Discriminator(ImageDiscriminator::new(spec, &mut params, init, &mut rng))
        }
    };
    Ok(Model {
        spec: spec.clone(),
        params,
        net,
    })
}

/// Dummy batch-2 input matching `spec`.
pub fn dummy_input(spec: &ArchSpec) -> Tensor {
    const B: usize = 2;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed);
    match (spec.role, spec.resolution.size()) {
        (Role::Generator, _) => Tensor::randn(vec![B, spec.latent_dim], &mut rng),
        (Role::Discriminator, None) => Tensor::randn(vec![B, spec.data_dim], &mut rng),
        (Role::Discriminator, Some(s)) => {
            Tensor::randn(vec![B, s, s, spec.data_dim], &mut rng).map(f64::tanh)
        }
    }
}

/// Forward trace of every layer's output shape on a batch-2 dummy input.
/// Weights are drawn with a cheap scaled Gaussian since only shapes matter.
pub fn shape_audit(spec: &ArchSpec) -> Result<Vec<TraceEntry>> {
    let spec = spec.clone().with_init(Init::Scaled);
    let mut model = build_model(&spec)?;
    let trace = model.trace(&dummy_input(&spec))?;
    if let (Role::Generator, Some(size)) = (spec.role, spec.resolution.size()) {
        let out = &trace.last().expect("non-empty trace").shape;
        if out[1..] != [size, size, spec.data_dim] {
            return Err(Error::Contract(format!(
                "generator output {out:?} does not match resolution {size}"
            )));
        }
    }
    Ok(trace)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountPolicy {
    /// Residual-block 3x3 convolutions and the final output convolution
    /// (fully-connected layers in the toy setting), with the
    /// kernel-converting weights of generative layers.
    #[default]
    ConvOnly,
    /// Every trainable parameter.
    All,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCount {
    pub name: String,
    pub shape: Vec<usize>,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamReport {
    pub resolution: Resolution,
    pub role: Role,
    pub conv_kind: ConvKind,
    pub total_weights: usize,
    pub conv_weights: usize,
    pub gconv_extra: usize,
    pub layers: Vec<LayerCount>,
}

/// Weight audit of `model`. `conv_weights` and `gconv_extra` always follow
/// the convolution-only convention; `policy` selects which entries are
/// listed in `layers`.
pub fn count_weights(model: &Model, policy: CountPolicy) -> ParamReport {
    let store = &model.params;
    let counted = model.counted();
    let conv_weights = counted.iter().map(|&(id, _)| store.get(id).len()).sum();
    let gconv_extra = counted
        .iter()
        .filter(|(_, extra)| *extra)
        .map(|&(id, _)| store.get(id).len())
        .sum();
    let row = |id: ParamId| {
        let e = store.entry(id);
        LayerCount {
            name: e.name.clone(),
            shape: e.value.shape().to_vec(),
            count: e.value.len(),
        }
    };
    let layers = match policy {
        CountPolicy::ConvOnly => counted.iter().map(|&(id, _)| row(id)).collect(),
        CountPolicy::All => store.trainable_ids().map(row).collect(),
    };
    ParamReport {
        resolution: model.spec.resolution,
        role: model.spec.role,
        conv_kind: model.spec.conv_kind,
        total_weights: store.num_trainable(),
        conv_weights,
        gconv_extra,
        layers,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn audit(res: Resolution, kind: ConvKind) -> ParamReport {
        let spec = ArchSpec::new(res, Role::Generator, kind).with_init(Init::Zeros);
        count_weights(&build_model(&spec).unwrap(), CountPolicy::ConvOnly)
    }

    #[test]
    fn generator_32_counts() {
        assert_eq!(
            audit(Resolution::R32, ConvKind::Conv).conv_weights,
            3_545_856
        );
        let g = audit(Resolution::R32, ConvKind::GConv);
        assert_eq!(g.conv_weights, 4_381_440);
        assert_eq!(g.gconv_extra, 6 * ((256 + 32) * 256 + 256 * 256));
    }

    #[test]
    fn toy_generator_trace() {
        let spec = ArchSpec::new(Resolution::Toy, Role::Generator, ConvKind::GConv);
        let widths: Vec<usize> = shape_audit(&spec)
            .unwrap()
            .iter()
            .map(|t| *t.shape.last().unwrap())
            .collect();
        assert_eq!(widths, [32, 128, 128, 128, 2]);
    }

    #[test]
    fn generator_32_trace() {
        let spec = ArchSpec::new(Resolution::R32, Role::Generator, ConvKind::Conv);
        let sizes: Vec<Vec<usize>> = shape_audit(&spec)
            .unwrap()
            .into_iter()
            .map(|t| t.shape)
            .collect();
        assert_eq!(sizes[1], [2, 4, 4, 256]);
        assert_eq!(sizes[2], [2, 8, 8, 256]);
        assert_eq!(sizes[3], [2, 16, 16, 256]);
        assert_eq!(sizes[4], [2, 32, 32, 256]);
        assert_eq!(sizes[5], [2, 32, 32, 3]);
    }

    #[test]
    fn bad_specs_are_rejected() {
        let mut spec = ArchSpec::new(Resolution::R32, Role::Generator, ConvKind::Conv);
        spec.stages.pop();
        assert!(matches!(build_model(&spec), Err(Error::Config(_))));
        let d = ArchSpec::new(Resolution::R32, Role::Discriminator, ConvKind::GConv);
        assert!(build_model(&d).is_err());
        assert!("64".parse::<Resolution>().is_err());
    }

    #[test]
    fn resolution_serializes_as_string() {
        assert_eq!(serde_json::to_string(&Resolution::R128).unwrap(), "\"128\"");
        assert_eq!(serde_json::to_string(&Resolution::Toy).unwrap(), "\"toy\"");
    }
}
