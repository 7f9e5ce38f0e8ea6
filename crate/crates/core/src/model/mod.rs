//! Toy-scale ensemble forecast model: perturbation models P and Q,
//! reparameterized sampling, a convolutional forecaster, per-step
//! perturbation injection, curriculum autoregressive training, and the
//! reverse-mode kernel driving it all.

pub mod checkpoint;
pub mod net;
pub mod rollout;
pub mod state;
pub mod tape;
pub mod train;

pub use net::{perturb_p, perturb_q, ArchDescriptor, ModelParams};
pub use rollout::{rollout, sample, PerturbMode, Perturbation};
pub use state::{ChannelStats, StateCube};
pub use train::{grad_check, train, LossKind, TrainConfig, TrainOutput};
