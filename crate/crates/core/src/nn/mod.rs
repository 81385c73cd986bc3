//! Layers: dense and convolutional layers, the generative convolution in
//! its direct and fused forms, normalizations, channel gating, and the
//! generator/discriminator residual blocks.

mod conv;
mod dense;
mod gate;
mod gconv;
pub mod init;
mod norm;
mod params;
mod resblock;
mod spectral;

pub use conv::Conv2d;
pub use dense::Dense;
pub use gate::{ChannelGate, GATE_REDUCTION};
pub use gconv::{
    gconv_combine, gconv_forward_direct, gconv_forward_fused, gconv_scaling, gconv_select, GConv,
    GConvParams, GConvPath, GConvVars, GDense,
};
pub use norm::{BatchNorm, LatentBatchNorm, BN_EPS, BN_MOMENTUM};
pub use params::{Bindings, Forward, Mode, ParamEntry, ParamId, ParamStore};
pub use resblock::{ConvKind, ConvUnit, ResBlockD, ResBlockG};
pub use spectral::{power_iteration, spectral_normalize, SpectralNorm, SpectralState};
