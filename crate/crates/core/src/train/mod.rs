//! Adversarial losses, the Adam optimizer, the Gaussian-mixture toy data,
//! and the alternating GAN training loop.

mod adam;
mod gmm;
mod history;
mod loss;
mod trainer;

pub use adam::{adam_step, AdamConfig, AdamState, BETA1, BETA2, EPSILON};
pub use gmm::{sample_gmm, GmmSpec};
pub use history::{HistoryRecord, TrainHistory, HISTORY_HEADER};
pub use loss::{loss_d, loss_d_value, loss_g, loss_g_value, LossKind};
pub use trainer::{generate_samples, train_gan, TrainConfig, TrainOutcome};
