//! Experiment runner for generative convolution layers: toy GAN training,
//! weight audits, gradient checks, path equivalence and metric evaluation.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod output;
pub mod threads;

pub use args::{Cli, Command};
pub use error::{LabError, Result};

/// What a finished subcommand prints and which checks it failed.
#[derive(Debug, Default)]
pub struct Outcome {
    pub stdout: String,
    pub failures: Vec<String>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn exit_code(&self) -> u8 {
        if self.passed() {
            0
        } else {
            1
        }
    }
}

pub fn run(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::ToyGan(a) => commands::toy::cmd(a),
        Command::ParamAudit(a) => commands::audit::cmd(a),
        Command::Gradcheck(a) => commands::gradcheck::cmd(a),
        Command::Equivalence(a) => commands::equivalence::cmd(a),
        Command::Metrics(a) => commands::metrics::cmd(a),
    }
}
