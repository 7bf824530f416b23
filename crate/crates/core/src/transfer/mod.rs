//! Multi-domain style-transfer GAN used as a training-time augmenter.

mod config;
mod loss;
mod model;
mod probe;
mod train;

pub use config::TransferConfig;
pub use loss::{
    adversarial_loss, classification_losses, cross_entropy, interpolate, penalty_from_gradient,
    reconstruction_loss, total_losses, Adversarial, Critic, LossPieces, StyleMap,
};
pub use model::{Critique, Discriminator, DiscriminatorTrace, Generator, GeneratorTrace};
pub use probe::StyleProbe;
pub use train::{
    critic_gradients, generator_gradients, init_models, train_transfer, train_transfer_with,
    DomainPatches, TransferLosses, TransferOutcome, TransferState,
};
