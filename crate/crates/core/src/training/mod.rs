//! Losses, R1 regularization, the optimizer and the joint training loop.

mod config;
mod losses;
mod optim;
mod r1;
mod run;
mod step;

pub use config::{LossWeights, TrainConfig};
pub use losses::{
    ensure_finite, image_adversarial_loss, image_d_loss, image_g_loss, image_recon_loss, structure_adversarial_loss,
    structure_d_loss, structure_g_loss, structure_recon_loss, style_loss,
};
pub use optim::{AdamState, AdamW};
pub use r1::{r1_penalty, r1_penalty_with_grads, Critic, R1};
pub use run::{train, RunSummary, CHECKPOINT_FILE, LOG_FILE};
pub use step::{is_discriminator_param, is_generator_param, StepRecord, Trainer};
