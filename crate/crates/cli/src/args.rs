use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use gconv_core::nn::ConvKind;
use gconv_core::train::LossKind;

use crate::output::Format;

#[derive(Debug, Parser)]
#[command(
    name = "gconv-lab",
    version,
    about = "Generative convolution experiments and checks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train toy GANs on the eight-mode Gaussian mixture.
    ToyGan(CommonArgs),
    /// Count generator weights at every image resolution.
    ParamAudit(CommonArgs),
    /// Finite-difference gradient checks of every layer.
    Gradcheck(CheckArgs),
    /// Compare the direct and fused generative convolution paths.
    Equivalence(CheckArgs),
    /// Frechet distance and inception score from CSV inputs.
    Metrics(MetricsArgs),
}

#[derive(Clone, Debug, Default, Args)]
pub struct CommonArgs {
    /// Comma-separated seed list.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Generator layer kind; both kinds when omitted.
    #[arg(long)]
    pub kind: Option<ConvKind>,
    /// Adversarial loss: ce, hinge or lsgan.
    #[arg(long)]
    pub loss: Option<LossKind>,
    /// Generator iterations.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Directory for reports and artifacts.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON configuration file; flags take precedence over its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Report format printed to stdout.
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Clone, Debug, Default, Args)]
pub struct CheckArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Cases per layer (gradcheck) or in total (equivalence).
    #[arg(long)]
    pub cases: Option<usize>,
    /// Scales every analytic gradient; anything but 1 must be caught.
    #[arg(long, hide = true)]
    pub inject_fault: Option<f64>,
}

#[derive(Clone, Debug, Default, Args)]
pub struct MetricsArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Reference samples, one row per sample.
    #[arg(long, requires = "fake")]
    pub real: Option<PathBuf>,
    /// Generated samples with the same columns as `--real`.
    #[arg(long, requires = "real")]
    pub fake: Option<PathBuf>,
    /// Class probabilities, one row per sample.
    #[arg(long)]
    pub probs: Option<PathBuf>,
}
